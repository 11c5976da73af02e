#![no_main]

use crl_core::checkpoint::{decode_params, encode_params};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_params(data) {
        assert_eq!(p.len(), p.layout().param_count());
        let again = decode_params(&encode_params(&p)).expect("re-encoded parameters decode");
        assert_eq!(again.layout(), p.layout());
    }
});
