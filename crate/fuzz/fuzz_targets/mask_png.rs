#![no_main]

use figac::io::{decode_mask_png, encode_mask_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_mask_png(data) {
        let bytes = encode_mask_png(&m).expect("masks encode");
        assert_eq!(decode_mask_png(&bytes).expect("own output decodes"), m);
    }
});
