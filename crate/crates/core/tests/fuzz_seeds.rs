//! Replays the checked-in fuzz seeds through the decoders they target.

use std::fs;
use std::path::PathBuf;

use figac::config::{parse_override, PipelineConfig};
use figac::edges::PromptSet;
use figac::io::{decode_mask_png, decode_png, decode_raster, Sidecar};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds for {target}");
    out.sort();
    out
}

#[test]
fn json_seeds_parse() {
    for s in seeds("prompt_json") {
        PromptSet::from_json(&s).unwrap();
    }
    for s in seeds("config_json") {
        PipelineConfig::from_json(&s).unwrap();
    }
    for s in seeds("sidecar_json") {
        Sidecar::from_json(&s).unwrap();
    }
}

#[test]
fn binary_seeds_decode() {
    let side = Sidecar { hu_offset: -1024.0, pixel_spacing: None };
    for s in seeds("png_decode") {
        decode_png(&s, Some(&side)).unwrap();
    }
    for s in seeds("mask_png") {
        assert!(decode_mask_png(&s).unwrap().count() > 0);
    }
    for s in seeds("raster_decode") {
        decode_raster(&s).unwrap();
    }
}

#[test]
fn override_seeds_apply() {
    for s in seeds("override_parse") {
        let s = String::from_utf8(s).unwrap();
        parse_override(&s).unwrap();
        PipelineConfig::default().with_overrides(&[s]).unwrap();
    }
}
