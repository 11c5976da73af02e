#![no_main]

use crl_harness::load_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = load_config(text) {
        // A normalized dump must load back to the same configuration.
        let again = load_config(&cfg.dump()).expect("normalized dump reloads");
        assert_eq!(again.hash(), cfg.hash());
    }
});
