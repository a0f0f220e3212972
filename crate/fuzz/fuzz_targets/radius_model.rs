#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::pve::{estimate_radius, RadiusModel};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = RadiusModel::from_json_slice(data) {
        for ratio in [0.0, 0.5, 1.0] {
            let _ = estimate_radius(&model, ratio);
        }
    }
});
