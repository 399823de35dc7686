#![no_main]

use figac::io::Sidecar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = Sidecar::from_json(data) {
        assert!(s.hu_offset.is_finite());
    }
});
