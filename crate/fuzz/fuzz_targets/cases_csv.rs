#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_cli::commands::read_case_rows;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = read_case_rows(data) {
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.score_pve_on.is_finite() && r.score_pve_off.is_finite()));
    }
});
