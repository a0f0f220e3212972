#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::flowsim::FfrDocument;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = FfrDocument::from_json_slice(data) {
        let _ = doc.to_json();
    }
});
