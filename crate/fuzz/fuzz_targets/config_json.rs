#![no_main]

use figac::config::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = PipelineConfig::from_json(data) {
        let again = PipelineConfig::from_json(cfg.to_json().as_bytes()).expect("serialized config reparses");
        assert_eq!(again, cfg);
    }
});
