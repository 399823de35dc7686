#![no_main]

use figac::config::{parse_override, PipelineConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if parse_override(s).is_ok() {
        let _ = PipelineConfig::default().with_overrides(&[s]);
    }
});
