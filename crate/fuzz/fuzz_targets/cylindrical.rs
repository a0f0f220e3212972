#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::io::CylindricalHeader;

// header JSON, a NUL byte, then the raw payload
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (header, raw) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    if let Ok(h) = CylindricalHeader::from_json_slice(header) {
        if let Ok(grid) = h.decode(raw) {
            assert_eq!(grid.n_planes(), h.n_planes);
            assert_eq!(grid.len(), h.n_planes * h.n_angles * h.radii_mm.len());
        }
    }
});
