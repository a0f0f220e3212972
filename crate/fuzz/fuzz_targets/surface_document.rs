#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::graphcut::SurfaceDocument;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = SurfaceDocument::from_json_slice(data) {
        let again = SurfaceDocument::from_json_slice(&doc.to_json()).expect("written surface parses");
        assert_eq!(again.surface.planes.len(), doc.surface.planes.len());
    }
});
