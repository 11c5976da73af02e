#![no_main]

use crl_core::wire::{decode_message, encode_message};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode_message(data) {
        // Anything accepted must re-encode to the same bytes.
        assert_eq!(encode_message(&msg), data);
    }
});
