#![no_main]

use crl_core::replay::ReplayBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = ReplayBuffer::read_from(data, 1024) {
        assert!(buf.len() <= 1024);
    }
});
