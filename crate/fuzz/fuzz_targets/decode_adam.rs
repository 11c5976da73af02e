#![no_main]

use crl_core::checkpoint::{decode_adam, encode_adam};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_adam(data) {
        assert!(decode_adam(&encode_adam(&state)).is_ok());
    }
});
