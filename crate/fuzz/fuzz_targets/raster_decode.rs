#![no_main]

use figac::io::{decode_raster, encode_raster, RasterType};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_raster(data) {
        let again = decode_raster(&encode_raster(&f, RasterType::F64)).expect("own output decodes");
        assert_eq!(again.dims(), f.dims());
    }
});
