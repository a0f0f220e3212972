#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::phantom::{spec_to_json, PhantomSpec};

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = PhantomSpec::from_json_slice(data) {
        let again = PhantomSpec::from_json_slice(&spec_to_json(&spec)).expect("written spec parses");
        assert_eq!(again, spec);
    }
});
