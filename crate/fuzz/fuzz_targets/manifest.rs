#![no_main]

use crl_harness::snapshot::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = Manifest::from_text(text) {
        let again = Manifest::from_text(&m.to_text()).expect("serialized manifest parses");
        assert_eq!(again.to_text(), m.to_text());
    }
});
