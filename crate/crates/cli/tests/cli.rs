use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgba, RgbaImage};
use serde_json::Value;
use wildsieve_core::grabcut::{Trimap, TrimapLabel};
use wildsieve_core::io::{read_features, read_mask, write_image, write_mask, write_trimap};
use wildsieve_core::{Grid, ImageGrid};

fn wildsieve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wildsieve"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn write_fixture(dir: &Path) -> PathBuf {
    let fx = dir.join("fx");
    let out = wildsieve(&["fixture", "--out", s(&fx)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fx
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = wildsieve(&["evalmask", "--nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(wildsieve(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(wildsieve(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.json");
    let out = wildsieve(&[
        "evalmask",
        "--pred",
        "/definitely/missing",
        "--gt",
        "/also/missing",
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evalmask_identical_dirs_and_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let masks = tmp.path().join("m");
    fs::create_dir_all(&masks).unwrap();
    for i in 0..3 {
        let m = Grid::from_fn(16, 16, |y, x| (y + x + i) % 4 == 0);
        write_mask(&masks.join(format!("f{i}.png")), &m).unwrap();
    }
    let report = tmp.path().join("rep/eval.json");
    let out = wildsieve(&[
        "evalmask",
        "--pred",
        s(&masks),
        "--gt",
        s(&masks),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success());
    let r = json(&report);
    assert_eq!(r["summary"]["miou"], 1.0);
    assert_eq!(r["summary"]["recall"], 1.0);
    assert_eq!(r["per_frame"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("rep/config.echo.json").exists());

    let other = tmp.path().join("o");
    fs::create_dir_all(&other).unwrap();
    fs::copy(masks.join("f0.png"), other.join("f0.png")).unwrap();
    fs::copy(masks.join("f1.png"), other.join("g9.png")).unwrap();
    let out = wildsieve(&[
        "evalmask",
        "--pred",
        s(&masks),
        "--gt",
        s(&other),
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("f1") && err.contains("g9"), "{err}");
}

#[test]
fn metrics_identical_frames_saturate() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs, mask) = (tmp.path().join("obs"), tmp.path().join("mask"));
    fs::create_dir_all(&obs).unwrap();
    fs::create_dir_all(&mask).unwrap();
    let img = ImageGrid::new(
        32,
        32,
        3,
        (0..32 * 32 * 3)
            .map(|i| f64::from((i * 37 % 256) as u8) / 255.0)
            .collect(),
    )
    .unwrap();
    write_image(&obs.join("a.png"), &img).unwrap();
    write_mask(&mask.join("a.png"), &Grid::filled(32, 32, true)).unwrap();
    let report = tmp.path().join("metrics.json");
    let out = wildsieve(&[
        "metrics",
        "--observed",
        s(&obs),
        "--rendered",
        s(&obs),
        "--mask",
        s(&mask),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    let f = &r["per_frame"][0];
    assert_eq!(f["psnr_masked"], 100.0);
    assert_eq!(f["saturated"], true);
    assert!((f["ssim_masked"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(f["lpips_masked"].is_null());
    assert!(r["summary"]["miou"].is_null());

    // complement of a full mask is empty
    let out = wildsieve(&[
        "metrics",
        "--observed",
        s(&obs),
        "--rendered",
        s(&obs),
        "--mask",
        s(&mask),
        "--static",
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pseudomask_fixture_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = write_fixture(tmp.path());
    let out_dir = tmp.path().join("pm");
    let out = wildsieve(&[
        "pseudomask",
        "--observed",
        s(&fx.join("observed")),
        "--rendered",
        s(&fx.join("rendered")),
        "--features",
        s(&fx.join("features")),
        "--rendered-features",
        s(&fx.join("rendered_features")),
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = json(&out_dir.join("diagnostics.json"));
    assert_eq!(diag["frames"].as_array().unwrap().len(), 8);
    assert_eq!(diag["all_gated"], false);

    let mut ious = Vec::new();
    for f in 0..6 {
        let name = format!("frame_{f:03}.png");
        let pred = read_mask(&out_dir.join(&name)).unwrap();
        let gt = read_mask(&fx.join("gt").join(&name)).unwrap();
        ious.push(wildsieve_core::mask_iou_recall(&pred, &gt).unwrap().iou);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean >= 0.9, "{ious:?}");

    let echo = json(&out_dir.join("config.echo.json"));
    assert_eq!(echo["command"]["pseudomask"]["k"], 24);
    assert_eq!(echo["effective"]["refine_band"], 16);
    let before: Vec<u8> = fs::read(out_dir.join("frame_002.png")).unwrap();
    let before_diag = fs::read(out_dir.join("diagnostics.json")).unwrap();
    fs::remove_file(out_dir.join("frame_002.png")).unwrap();
    let saved_echo = tmp.path().join("echo.json");
    fs::copy(out_dir.join("config.echo.json"), &saved_echo).unwrap();
    let out = wildsieve(&["rerun", "--echo", s(&saved_echo)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(out_dir.join("frame_002.png")).unwrap(), before);
    assert_eq!(fs::read(out_dir.join("diagnostics.json")).unwrap(), before_diag);
    assert_eq!(
        fs::read(out_dir.join("config.echo.json")).unwrap(),
        fs::read(&saved_echo).unwrap()
    );
}

#[test]
fn raymap_writes_six_channel_features() {
    let tmp = tempfile::tempdir().unwrap();
    let cam = tmp.path().join("cam.json");
    fs::write(
        &cam,
        r#"{"intrinsics":{"fx":20,"fy":20,"cx":8,"cy":6},
            "frames":[{"rot6d":[1,0,0,0,1,0],"t":[0,0,0]},
                      {"R":[1,0,0,0,1,0,0,0,1],"t":[1,0,0]}]}"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("rays");
    let out = wildsieve(&[
        "raymap",
        "--camera",
        s(&cam),
        "--height",
        "12",
        "--width",
        "16",
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let map = read_features(&out_dir.join("frame_00001.wrzf")).unwrap();
    assert_eq!((map.grid_height(), map.grid_width(), map.dim()), (12, 16, 6));
    // pixel (6, 8) has its center at (8.5, 6.5); check the Plücker constraint there
    let f = map.feature(6 * 16 + 8);
    let dm: f32 = (0..3).map(|i| f[i] * f[3 + i]).sum();
    assert!(dm.abs() < 1e-6);

    fs::write(
        &cam,
        r#"{"intrinsics":{"fx":20,"fy":20,"cx":8,"cy":6},"frames":[{"rot6d":[1,0,0,2,0,0],"t":[0,0,0]}]}"#,
    )
    .unwrap();
    let out = wildsieve(&[
        "raymap",
        "--camera",
        s(&cam),
        "--height",
        "4",
        "--width",
        "4",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn segment_writes_segments() {
    let tmp = tempfile::tempdir().unwrap();
    let cam = tmp.path().join("cam.json");
    let frames: Vec<String> = (0..21)
        .map(|i| format!(r#"{{"rot6d":[1,0,0,0,1,0],"t":[{},0,0]}}"#, f64::from(i) * 0.1))
        .collect();
    fs::write(
        &cam,
        format!(
            r#"{{"intrinsics":{{"fx":1,"fy":1,"cx":0,"cy":0}},"frames":[{}]}}"#,
            frames.join(",")
        ),
    )
    .unwrap();
    let out_file = tmp.path().join("seg.json");
    let out = wildsieve(&["segment", "--camera", s(&cam), "--tau", "1.0", "--out", s(&out_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let segs = json(&out_file);
    assert_eq!(segs[0]["start_index"], 0);
    assert_eq!(segs[0]["end_index"], 10);
    assert_eq!(segs[1]["start_index"], 11);
    assert_eq!(segs[1]["end_index"], 20);
}

#[test]
fn tokenmask_writes_26_tokens() {
    let tmp = tempfile::tempdir().unwrap();
    let out_file = tmp.path().join("t.png");
    let out = wildsieve(&[
        "tokenmask",
        "--height",
        "16",
        "--width",
        "16",
        "--ratio",
        "0.1",
        "--seed",
        "3",
        "--out",
        s(&out_file),
    ]);
    assert!(out.status.success());
    assert_eq!(read_mask(&out_file).unwrap().count_ones(), 26);
    let out = wildsieve(&[
        "tokenmask",
        "--height",
        "4",
        "--width",
        "4",
        "--ratio",
        "2",
        "--out",
        s(&out_file),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grabcut_debug_reports_energies() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = Grid::from_fn(48, 48, |y, x| (16..32).contains(&y) && (16..32).contains(&x));
    let img = ImageGrid::new(
        48,
        48,
        3,
        truth
            .data()
            .iter()
            .flat_map(|&t| [if t { 0.9 } else { 0.1 }; 3])
            .collect(),
    )
    .unwrap();
    let trimap: Trimap = Grid::from_fn(48, 48, |y, x| {
        if (19..29).contains(&y) && (19..29).contains(&x) {
            TrimapLabel::ProbableForeground
        } else if (8..40).contains(&y) && (8..40).contains(&x) {
            TrimapLabel::ProbableBackground
        } else {
            TrimapLabel::Background
        }
    });
    let (ip, tp, op) = (
        tmp.path().join("i.png"),
        tmp.path().join("t.png"),
        tmp.path().join("o/m.png"),
    );
    write_image(&ip, &img).unwrap();
    write_trimap(&tp, &trimap).unwrap();
    let out = wildsieve(&["grabcut-debug", "--image", s(&ip), "--trimap", s(&tp), "--out", s(&op)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(trace["energies"].as_array().unwrap().len(), 5);
    assert_eq!(read_mask(&op).unwrap(), truth);
}

#[test]
fn augment_scene_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let bank = tmp.path().join("bank");
    fs::create_dir_all(&bank).unwrap();
    RgbaImage::from_fn(20, 30, |x, y| {
        Rgba([
            200,
            20,
            20,
            if (4..16).contains(&x) && (3..27).contains(&y) {
                255
            } else {
                0
            },
        ])
    })
    .save(bank.join("a.png"))
    .unwrap();
    fs::write(
        bank.join("manifest.json"),
        r#"{"objects":[{"file":"a.png","category":"box"}]}"#,
    )
    .unwrap();
    let scenes = tmp.path().join("scenes");
    for sc in ["s0", "s1", "s2", "s3"] {
        fs::create_dir_all(scenes.join(sc)).unwrap();
        for v in 0..2 {
            write_image(
                &scenes.join(sc).join(format!("v{v}.png")),
                &ImageGrid::filled(64, 64, 3, 0.5).unwrap(),
            )
            .unwrap();
        }
    }
    let run = |out: &Path| {
        let o = wildsieve(&[
            "augment",
            "--scenes",
            s(&scenes),
            "--objects",
            s(&bank),
            "--out",
            s(out),
            "--seed",
            "5",
            "--scene-probability",
            "1",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a);
    run(&b);
    for sc in ["s0", "s3"] {
        let report = json(&a.join(sc).join("paste.json"));
        assert_eq!(report["augmented"], true);
        assert_eq!(report["views"].as_array().unwrap().len(), 2);
        let mask = read_mask(&a.join(sc).join("paste_masks/v0.png")).unwrap();
        assert!(mask.count_ones() > 0);
        assert_eq!(
            fs::read(a.join(sc).join("v1.png")).unwrap(),
            fs::read(b.join(sc).join("v1.png")).unwrap()
        );
    }
    let echo = json(&a.join("config.echo.json"));
    assert_eq!(echo["effective"]["margin_fraction"], 0.15);
}
