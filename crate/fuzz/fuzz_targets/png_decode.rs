#![no_main]

use figac::io::{decode_png, Sidecar};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let side = Sidecar { hu_offset: -1024.0, pixel_spacing: None };
    for s in [None, Some(&side)] {
        if let Ok(input) = decode_png(data, s) {
            let (w, h) = input.dims();
            assert!(w > 0 && h > 0);
        }
    }
});
