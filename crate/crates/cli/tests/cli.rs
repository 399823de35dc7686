use std::fs;
use std::path::Path;
use std::process::Command;

use figac::io::{decode_mask_png, decode_raster};
use figac::metrics::{dice, MaskPair};
use figac_cli::{main_with_args, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["figac"];
    v.extend_from_slice(args);
    main_with_args(v)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mask(path: &Path) -> figac::Mask {
    decode_mask_png(&fs::read(path).unwrap()).unwrap()
}

fn phantom(dir: &Path, kind: &str) {
    assert_eq!(run(&["phantom", "--kind", kind, "--out", p(dir)]), EXIT_OK);
}

#[test]
fn segment_ring_phantom() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring");
    let out = tmp.path().join("seg");
    assert_eq!(
        run(&["segment", "--image", p(&ph.join("image.png")), "--out", p(&out)]),
        EXIT_OK
    );
    let truth = mask(&ph.join("truth.png"));
    let pred = mask(&out.join("mask.png"));
    assert!(dice(MaskPair::new(&truth, &pred).unwrap()) >= 97.0);
    let contour: serde_json::Value = serde_json::from_slice(&fs::read(out.join("contour.json")).unwrap()).unwrap();
    assert_eq!(contour["iteration"], 3000);
    assert!(out.join("diagnostics.json").exists());

    // idempotent: a second run writes identical bytes
    let again = tmp.path().join("seg2");
    assert_eq!(
        run(&["segment", "--image", p(&ph.join("image.png")), "--out", p(&again)]),
        EXIT_OK
    );
    for f in ["mask.png", "contour.json", "diagnostics.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn hu_slices_with_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    assert_eq!(run(&["phantom", "--kind", "ring", "--hu", "--out", p(&ph)]), EXIT_OK);
    assert!(ph.join("image.png.json").exists());
    let out = tmp.path().join("seg");
    let code = run(&[
        "segment",
        "--image",
        p(&ph.join("image.png")),
        "--set",
        "evolution.n_iters=1500",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let d = dice(MaskPair::new(&mask(&ph.join("truth.png")), &mask(&out.join("mask.png"))).unwrap());
    assert!(d >= 97.0, "{d}");

    fs::remove_file(ph.join("image.png.json")).unwrap();
    assert_eq!(
        run(&["segment", "--image", p(&ph.join("image.png")), "--out", p(&out)]),
        EXIT_USAGE
    );
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring");
    let img = ph.join("image.png");
    let out = tmp.path().join("o");
    let missing = tmp.path().join("nope.json");
    assert_eq!(
        run(&["segment", "--image", p(&img), "--config", p(&missing), "--out", p(&out)]),
        EXIT_USAGE
    );
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"canny": {"low": 0.8, "high": 0.2}}"#).unwrap();
    assert_eq!(
        run(&["segment", "--image", p(&img), "--config", p(&bad), "--out", p(&out)]),
        EXIT_USAGE
    );
    assert_eq!(
        run(&["segment", "--image", p(&img), "--set", "evolution.h=-1", "--out", p(&out)]),
        EXIT_USAGE
    );
    assert_eq!(
        run(&["segment", "--image", p(&tmp.path().join("none.png")), "--out", p(&out)]),
        EXIT_USAGE
    );
    assert_eq!(run(&["evolve", "--image", p(&img), "--snapshot-every", "0", "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
}

#[test]
fn binary_names_the_field_and_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring");
    let bin = env!("CARGO_BIN_EXE_figac");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"canny": {"low": 0.8, "high": 0.2}}"#).unwrap();
    let o = Command::new(bin)
        .args(["segment", "--image", p(&ph.join("image.png")), "--config", p(&bad), "--out", p(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("canny.low"));

    // a dark image has no bone candidate: runtime failure in the initialization stage
    fs::write(
        tmp.path().join("dark.png"),
        figac::io::encode_gray_png(&figac::ScalarField::filled(32, 32, 5.0).unwrap()).unwrap(),
    )
    .unwrap();
    let o = Command::new(bin)
        .args(["segment", "--image", p(&tmp.path().join("dark.png")), "--out", p(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_RUNTIME));
    assert!(String::from_utf8_lossy(&o.stderr).contains("initialization"));
}

#[test]
fn evolve_writes_snapshots_at_cadence() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring");
    let out = tmp.path().join("ev");
    let code = run(&[
        "evolve",
        "--image",
        p(&ph.join("image.png")),
        "--snapshot-every",
        "1000",
        "--set",
        "evolution.n_iters=7000",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let count = |ext: &str| {
        fs::read_dir(&out)
            .unwrap()
            .filter(|e| {
                let name = e.as_ref().unwrap().file_name().into_string().unwrap();
                name.starts_with("snapshot_") && name.ends_with(ext)
            })
            .count()
    };
    assert_eq!(count(".json"), 7);
    assert_eq!(count(".png"), 7);
    assert!(out.join("snapshot_007000.json").exists());
}

fn interior_lost(dir: &Path, interior: &figac::Mask) -> f64 {
    let m = mask(dir);
    interior.and_not(&m).unwrap().count() as f64 / interior.count() as f64
}

#[test]
fn classical_leaks_where_prompted_flow_holds() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "fractured_ring");
    let img = ph.join("image.png");
    let interior = mask(&ph.join("ring_interior.png"));

    let classical = tmp.path().join("classical");
    let code = run(&[
        "evolve", "--image", p(&img), "--snapshot-every", "100", "--set", "mode=classical", "--set",
        "evolution.n_iters=2000", "--out", p(&classical),
    ]);
    // the classical contour collapses; snapshots up to the collapse remain
    assert_eq!(code, EXIT_RUNTIME);
    let last = (1..=20)
        .rev()
        .map(|k| classical.join(format!("snapshot_{:06}.json", k * 100)))
        .find(|f| f.exists())
        .unwrap();
    let doc: figac::io::ContourDoc = serde_json::from_slice(&fs::read(&last).unwrap()).unwrap();
    let inside = doc
        .polylines
        .iter()
        .flatten()
        .any(|pt| interior.get(pt[0].round() as usize, pt[1].round() as usize));
    assert!(inside, "late classical contour should lie inside the ring");

    let figac_out = tmp.path().join("figac");
    let code = run(&[
        "evolve", "--image", p(&img), "--prompts", p(&ph.join("prompts.json")), "--snapshot-every", "100", "--set",
        "evolution.n_iters=2000", "--out", p(&figac_out),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(interior_lost(&figac_out.join("mask.png"), &interior) == 0.0);
}

#[test]
fn fields_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring_with_blob");
    let out = tmp.path().join("f");
    assert_eq!(run(&["fields", "--image", p(&ph.join("image.png")), "--out", p(&out)]), EXIT_OK);
    let beta = decode_raster(&fs::read(out.join("beta.raster")).unwrap()).unwrap();
    let stopping = mask(&out.join("stopping.png"));
    assert!(!stopping.is_all_false());
    let beta_png = image_gray(&out.join("beta.png"));
    for r in 0..128 {
        for c in 0..128 {
            assert_eq!(beta.get(r, c) == 0.0, stopping.get(r, c));
            assert_eq!(beta_png[r * 128 + c] == 0, beta.get(r, c) < 0.5 / 255.0);
        }
    }
    // blob pixels sit at the detector maximum 1 + gamma
    let g = decode_raster(&fs::read(out.join("g.raster")).unwrap()).unwrap();
    let img = figac::io::read_image(&ph.join("image.png")).unwrap();
    let figac::pipeline::Input::Windowed(gray) = img else { panic!() };
    let is_blob = |i: usize| gray.as_slice()[i] == 60.0;
    let core: Vec<_> = (129..128 * 127)
        .filter(|&i| is_blob(i) && is_blob(i - 1) && is_blob(i + 1) && is_blob(i - 128) && is_blob(i + 128))
        .collect();
    assert!(core.len() > 50);
    for i in core {
        assert_eq!(g.as_slice()[i], 2.0);
    }

    // prompts join the zero set
    let out2 = tmp.path().join("f2");
    let prompts = tmp.path().join("prompts.json");
    fs::write(&prompts, r#"{"strokes": [[[64, 64], [64, 70]]]}"#).unwrap();
    assert_eq!(
        run(&["fields", "--image", p(&ph.join("image.png")), "--prompts", p(&prompts), "--out", p(&out2)]),
        EXIT_OK
    );
    let beta = decode_raster(&fs::read(out2.join("beta.raster")).unwrap()).unwrap();
    for c in 64..=70 {
        assert_eq!(beta.get(64, c), 0.0);
    }
}

fn image_gray(path: &Path) -> Vec<u8> {
    let bytes = fs::read(path).unwrap();
    // decode through the mask reader's PNG path, keeping raw gray values
    let m = figac::io::decode_png(&bytes, None).unwrap();
    let figac::pipeline::Input::Windowed(f) = m else { panic!() };
    f.as_slice().iter().map(|&v| v as u8).collect()
}

#[test]
fn evaluate_prints_report() {
    let tmp = tempfile::tempdir().unwrap();
    let ph = tmp.path().join("ph");
    phantom(&ph, "ring");
    let report = tmp.path().join("r.json");
    let truth = ph.join("truth.png");
    assert_eq!(
        run(&["evaluate", "--truth", p(&truth), "--pred", p(&truth), "--out", p(&report)]),
        EXIT_OK
    );
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["dice"], 100.0);
    assert_eq!(v["hd"], 0.0);
    assert_eq!(
        run(&["evaluate", "--truth", p(&truth), "--pred", p(&tmp.path().join("x.png"))]),
        EXIT_USAGE
    );
}

#[test]
fn phantom_is_reproducible_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            run(&["phantom", "--kind", "ring", "--noise-sigma", "3", "--seed", "9", "--out", p(d)]),
            EXIT_OK
        );
    }
    assert_eq!(fs::read(a.join("image.png")).unwrap(), fs::read(b.join("image.png")).unwrap());
    assert_eq!(
        run(&["phantom", "--kind", "ring", "--set", "outer_radius=90", "--out", p(&a)]),
        EXIT_USAGE
    );
    assert_eq!(run(&["phantom", "--kind", "hexagon", "--out", p(&a)]), EXIT_USAGE);
}
