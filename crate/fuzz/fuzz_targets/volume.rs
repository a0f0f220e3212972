#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::io::VolumeHeader;

// header JSON, a NUL byte, then the raw payload
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (header, raw) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    if let Ok(h) = VolumeHeader::from_json_slice(header) {
        if let Ok(vol) = h.decode(raw) {
            assert_eq!(vol.values().len(), h.dims.iter().product::<usize>());
        }
    }
});
