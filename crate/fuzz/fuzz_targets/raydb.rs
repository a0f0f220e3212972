#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::likelihood::RayDatabase;

fuzz_target!(|data: &[u8]| {
    if let Ok(db) = RayDatabase::from_bytes(data) {
        let bytes = db.to_bytes();
        let again = RayDatabase::from_bytes(&bytes).expect("written database parses");
        assert_eq!(again.to_bytes(), bytes);
    }
});
