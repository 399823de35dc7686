#![no_main]

use figac::edges::PromptSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = PromptSet::from_json(data) {
        if p.validate(64, 64).is_ok() {
            let m = p.rasterize(64, 64).expect("validated prompts rasterize");
            assert!(p.is_empty() || m.count() > 0);
        }
    }
});
