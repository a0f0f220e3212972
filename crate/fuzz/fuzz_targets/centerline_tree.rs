#![no_main]

use libfuzzer_sys::fuzz_target;

use coropve_core::io::{CenterlineTree, DEFAULT_MAX_POINT_SPACING_MM};

fuzz_target!(|data: &[u8]| {
    if let Ok(tree) = CenterlineTree::from_json_slice(data, DEFAULT_MAX_POINT_SPACING_MM) {
        let again = CenterlineTree::from_json_slice(&tree.to_json(), DEFAULT_MAX_POINT_SPACING_MM)
            .expect("written tree parses");
        assert_eq!(again.branches.len(), tree.branches.len());
    }
});
