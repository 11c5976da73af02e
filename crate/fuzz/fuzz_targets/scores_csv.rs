#![no_main]

use crl_harness::{aggregate_scores, ScoreTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = ScoreTable::from_csv(data) {
        if let Ok(agg) = aggregate_scores(&table) {
            assert!(agg.values().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
