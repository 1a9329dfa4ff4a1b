use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use b2n_core::io::{
    read_json, write_json, AnnotationFile, ClassifierScoresFile, DetectionFile, GeoSidecar, GridFile, Report,
    ScorePairFile, SCHEMA,
};
use b2n_core::{AffineGeoTransform, AnnotationSet, Detection, GeoBox, ImageBuffer, Point, ScorePair};
use tempfile::TempDir;

fn b2n(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_b2n")).args(args).output().expect("spawn b2n")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gt_file(dir: &Path, boxes: &[[f64; 4]]) -> PathBuf {
    let gt = boxes.iter().map(|b| GeoBox::from_array(*b, "ship").unwrap()).collect();
    let set = AnnotationSet::new("img", gt, Point::new(0.0, 0.0)).unwrap();
    let path = dir.join("gt.json");
    write_json(&path, &AnnotationFile::from_set(&set)).unwrap();
    path
}

fn det_file(path: &Path, dets: &[Detection]) {
    write_json(path, &DetectionFile::from_detections(dets)).unwrap();
}

fn det(b: [f64; 4], s_d: f64) -> Detection {
    Detection::new(GeoBox::from_array(b, "ship").unwrap(), s_d)
}

fn gradient(w: u32, h: u32) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, 3, |c, r| vec![(c % 256) as u8, (r % 256) as u8, ((c + r) % 256) as u8])
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&b2n(&["--help"])), 0);
    assert_eq!(code(&b2n(&["--version"])), 0);
    assert_eq!(code(&b2n(&["pipeline", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&b2n(&[])), 1);
    assert_eq!(code(&b2n(&["frobnicate"])), 1);
    assert_eq!(code(&b2n(&["evaluate", "--pred", "x.json"])), 1);
    assert_eq!(code(&b2n(&["evaluate", "--pred", "a", "--gt", "b", "--out", "c", "--score", "bogus"])), 1);
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_b2n"))
        .args(["mix", "--source", "R=x", "--counts", "1", "--manifest-out", "m.json"])
        .env("B2N_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("B2N_THREADS"));
}

#[test]
fn stage_failures_exit_two_with_stage_name() {
    let tmp = TempDir::new().unwrap();
    let out = b2n(&["evaluate", "--pred", &s(&tmp.path().join("missing.json")), "--gt", "gt.json", "--out", "r.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stage evaluate"), "{}", stderr(&out));
}

#[test]
fn wrong_schema_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let pred = tmp.path().join("pred.json");
    fs::write(&pred, r#"{"schema":"other/9","detections":[]}"#).unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0]]);
    let out = b2n(&["evaluate", "--pred", &s(&pred), "--gt", &s(&gt), "--out", &s(&tmp.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("schema"), "{}", stderr(&out));
}

#[test]
fn evaluate_writes_report_and_csv() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0], [20.0, 20.0, 30.0, 30.0]]);
    let pred = tmp.path().join("pred.json");
    det_file(&pred, &[det([0.0, 0.0, 10.0, 10.0], 0.9), det([0.5, 0.0, 10.5, 10.0], 0.8), det([50.0, 50.0, 60.0, 60.0], 0.1)]);
    let report = tmp.path().join("report.json");
    let out = b2n(&["evaluate", "--pred", &s(&pred), "--gt", &s(&gt), "--report", &s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Report = read_json(&report).unwrap();
    assert_eq!((r.n_gt, r.n_detections), (2, 3));
    assert!((r.ap50 - 0.5).abs() < 1e-12);
    assert!((r.max_recall_100 - 0.5).abs() < 1e-12);
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn evaluate_by_missing_score_fails() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0]]);
    let pred = tmp.path().join("pred.json");
    det_file(&pred, &[det([0.0, 0.0, 10.0, 10.0], 0.9)]);
    let out = b2n(&["evaluate", "--pred", &s(&pred), "--gt", &s(&gt), "--out", &s(&tmp.path().join("r.json")), "--score", "fused"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn chip_then_stitch_recovers_world_boxes() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("scene.png");
    gradient(300, 200).save_png(&img).unwrap();
    let geo = tmp.path().join("scene.geo.json");
    let transform = AffineGeoTransform::north_up(Point::new(1000.0, 2000.0), 0.5).unwrap();
    write_json(&geo, &GeoSidecar::new(transform)).unwrap();
    let chips = tmp.path().join("chips");
    let out = b2n(&["chip", "--image", &s(&img), "--geo", &s(&geo), "--chip-size", "128", "--overlap", "0.25", "--out-dir", &s(&chips)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let grid: GridFile = read_json(chips.join("grid.json")).unwrap();
    assert!(grid.grid.chips.len() >= 6);
    for c in &grid.grid.chips {
        let png = ImageBuffer::open(chips.join(format!("{}.png", c.id))).unwrap();
        assert_eq!(png.dims(), (128, 128));
        let side: GeoSidecar = read_json(chips.join(format!("{}.geo.json", c.id))).unwrap();
        assert_eq!(side.transform, c.transform);
    }

    // the same object seen from two overlapping chips
    let (a, b) = (&grid.grid.chips[0], &grid.grid.chips[1]);
    let px = [100.0, 20.0, 120.0, 40.0];
    let local = |c: &b2n_core::Chip, s_d: f64| {
        let mut d = det([px[0] - c.window.col0 as f64, px[1] - c.window.row0 as f64, px[2] - c.window.col0 as f64, px[3] - c.window.row0 as f64], s_d);
        d.source_chip = Some(c.id.clone());
        d
    };
    let (fa, fb) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    det_file(&fa, &[local(a, 0.9)]);
    det_file(&fb, &[local(b, 0.7)]);
    let stitched = tmp.path().join("stitched.json");
    let out = b2n(&["stitch", "--in", &s(&fa), &s(&fb), "--grid", &s(&chips.join("grid.json")), "--out", &s(&stitched)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let f: DetectionFile = read_json(&stitched).unwrap();
    let dets = f.to_detections().unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].s_d, 0.9);
    let world = transform.lift_box(&GeoBox::from_array(px, "ship").unwrap());
    for (x, y) in dets[0].bbox.to_array().iter().zip(world.to_array()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn stitch_rejects_unknown_chip() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("scene.png");
    gradient(100, 100).save_png(&img).unwrap();
    let chips = tmp.path().join("chips");
    assert_eq!(code(&b2n(&["chip", "--image", &s(&img), "--size", "64", "--out-dir", &s(&chips)])), 0);
    let f = tmp.path().join("d.json");
    let mut d = det([0.0, 0.0, 5.0, 5.0], 0.5);
    d.source_chip = Some("nope".into());
    det_file(&f, &[d]);
    let out = b2n(&["stitch", "--in", &s(&f), "--grid", &s(&chips.join("grid.json")), "--out", &s(&tmp.path().join("o.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope"));
}

fn score_pairs(path: &Path, pairs: &[(f64, f64)]) {
    let v: Vec<ScorePair> = pairs.iter().map(|&(a, b)| ScorePair::new(a, b)).collect();
    write_json(path, &ScorePairFile::new(&v)).unwrap();
}

#[test]
fn fuse_then_score_is_monotone() {
    let tmp = TempDir::new().unwrap();
    let (neg, pos, model) = (tmp.path().join("neg.json"), tmp.path().join("pos.json"), tmp.path().join("model.json"));
    score_pairs(&neg, &[(-1.0, -1.0), (-0.5, 0.0), (0.0, -0.5), (0.5, 0.5), (1.0, 1.0), (-1.0, 1.0), (1.0, -1.0)]);
    score_pairs(&pos, &[(1.0, 1.0), (1.5, 0.5), (0.8, 1.4), (2.0, 2.0)]);
    let out = b2n(&["fuse", "--neg-val", &s(&neg), "--pos-val", &s(&pos), "--grid", "64", "--bandwidth", "0.1,0.1", "--model-out", &s(&model)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dets = tmp.path().join("dets.json");
    let ladder: Vec<Detection> = (0..5).map(|k| det([0.0, 0.0, 1.0, 1.0], k as f64 * 0.5 - 1.0).with_classifier(k as f64 * 0.5 - 1.0)).collect();
    det_file(&dets, &ladder);
    let scored = tmp.path().join("scored.json");
    assert_eq!(code(&b2n(&["score", "--model", &s(&model), "--in", &s(&dets), "--out", &s(&scored)])), 0);
    let f: DetectionFile = read_json(&scored).unwrap();
    let fused: Vec<f64> = f.detections.iter().map(|d| d.fused.unwrap()).collect();
    assert!(fused.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{fused:?}");
}

#[test]
fn fuse_rejects_bad_domain() {
    let tmp = TempDir::new().unwrap();
    let neg = tmp.path().join("neg.json");
    score_pairs(&neg, &[(0.0, 0.0), (1.0, 1.0)]);
    let args = ["fuse", "--neg-val", &s(&neg), "--domain", "1:0", "--model-out", &s(&tmp.path().join("m.json"))];
    assert_eq!(code(&b2n(&args)), 2);
}

#[test]
fn score_needs_classifier_scores() {
    let tmp = TempDir::new().unwrap();
    let (neg, model, dets) = (tmp.path().join("neg.json"), tmp.path().join("m.json"), tmp.path().join("d.json"));
    score_pairs(&neg, &[(0.0, 0.0), (1.0, 1.0), (0.3, 0.6)]);
    assert_eq!(code(&b2n(&["fuse", "--neg-val", &s(&neg), "--grid", "32", "--model-out", &s(&model)])), 0);
    det_file(&dets, &[det([0.0, 0.0, 1.0, 1.0], 0.5)]);
    let out = b2n(&["score", "--model", &s(&model), "--in", &s(&dets), "--out", &s(&tmp.path().join("o.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn rep_modes_write_images() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("in.png");
    gradient(40, 30).save_png(&img).unwrap();
    for mode in ["laplacian", "canny", "identity"] {
        let out_path = tmp.path().join(format!("{mode}.png"));
        let out = b2n(&["rep", "--in", &s(&img), "--mode", mode, "--out", &s(&out_path)]);
        assert_eq!(code(&out), 0, "{mode}: {}", stderr(&out));
        assert_eq!(ImageBuffer::open(&out_path).unwrap().dims(), (40, 30));
    }
    let polys = tmp.path().join("polys.json");
    fs::write(&polys, "[[[5,5],[20,5],[20,15],[5,15]]]").unwrap();
    let mask = tmp.path().join("mask.png");
    assert_eq!(code(&b2n(&["rep", "--in", &s(&img), "--mode", "mask", "--polygons", &s(&polys), "--out", &s(&mask)])), 0);
    let m = ImageBuffer::open(&mask).unwrap();
    assert_eq!(m.pixel(10, 10)[0], 255);
    assert_eq!(m.pixel(30, 25)[0], 0);
    assert_eq!(code(&b2n(&["rep", "--in", &s(&img), "--mode", "mask", "--out", &s(&mask)])), 2);
}

#[test]
fn reskin_with_exec_generator_copies_annotations() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("scenes");
    fs::create_dir_all(&dir).unwrap();
    gradient(32, 24).save_png(dir.join("a.png")).unwrap();
    gradient(16, 16).save_png(dir.join("b.png")).unwrap();
    fs::write(dir.join("a.json"), "{\"note\": 1}").unwrap();
    let out_dir = tmp.path().join("out");
    let out = b2n(&["reskin", "--in", &s(&dir), "--rep", "laplacian", "--generator", "exec:cat", "--out", &s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = ImageBuffer::open(out_dir.join("a.png")).unwrap();
    assert_eq!(a.dims(), (32, 24));
    assert_eq!(fs::read_to_string(out_dir.join("a.json")).unwrap(), "{\"note\": 1}");
    assert!(out_dir.join("b.png").is_file());
}

#[test]
fn reskin_reports_failing_generator() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("a.png");
    gradient(8, 8).save_png(&img).unwrap();
    let out = b2n(&["reskin", "--in", &s(&img), "--generator", "exec:echo broken; exit 3", "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("stage reskin"));
    let out = b2n(&["reskin", "--in", &s(&img), "--generator", "exec:echo not-a-png", "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&b2n(&["reskin", "--in", &s(&img), "--generator", "magic", "--out", "o"])), 2);
}

fn synth_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let (bgs, sprites) = (dir.join("bgs"), dir.join("sprites"));
    fs::create_dir_all(&bgs).unwrap();
    fs::create_dir_all(&sprites).unwrap();
    gradient(120, 90).save_png(bgs.join("port.png")).unwrap();
    let set = AnnotationSet::new("port", vec![GeoBox::new(2.0, 2.0, 12.0, 8.0, "tanker").unwrap()], Point::new(0.0, 0.0)).unwrap();
    write_json(bgs.join("port.json"), &AnnotationFile::from_set(&set)).unwrap();
    gradient(120, 90).save_png(bgs.join("bay.png")).unwrap();
    ImageBuffer::filled(20, 10, &[200, 50, 50, 255]).save_png(sprites.join("hull.png")).unwrap();
    fs::write(sprites.join("hull.json"), r#"{"class": "tanker", "pose": {"off_nadir_deg": 10.0, "look_deg": 0.0, "sun_deg": 45.0}}"#).unwrap();
    (bgs, sprites)
}

#[test]
fn composite_excludes_target_backgrounds() {
    let tmp = TempDir::new().unwrap();
    let (bgs, sprites) = synth_inputs(tmp.path());
    let out_dir = tmp.path().join("scenes");
    let out = b2n(&[
        "composite", "--backgrounds", &s(&bgs), "--sprites", &s(&sprites), "--class", "tanker", "--count", "3", "--objects", "2",
        "--seed", "4", "--out", &s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for i in 0..3 {
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join(format!("scene_{i:04}.json"))).unwrap()).unwrap();
        assert_eq!(meta["schema"], SCHEMA);
        assert_eq!(meta["background"], "bay");
        let gt = meta["gt"].as_array().unwrap();
        assert_eq!(gt.len(), 2);
        assert!(gt.iter().all(|g| g["class"] == "tanker"));
        assert_eq!(meta["provenance"].as_array().unwrap().len(), 2);
        assert_eq!(ImageBuffer::open(out_dir.join(format!("scene_{i:04}.png"))).unwrap().dims(), (120, 90));
    }
}

#[test]
fn composite_without_eligible_background_fails() {
    let tmp = TempDir::new().unwrap();
    let (bgs, sprites) = synth_inputs(tmp.path());
    fs::remove_file(bgs.join("bay.png")).unwrap();
    let out = b2n(&["composite", "--backgrounds", &s(&bgs), "--sprites", &s(&sprites), "--class", "tanker", "--out", &s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn colormatch_single_and_batch() {
    let tmp = TempDir::new().unwrap();
    let content = tmp.path().join("content.png");
    gradient(30, 30).save_png(&content).unwrap();
    let styles = tmp.path().join("styles");
    fs::create_dir_all(&styles).unwrap();
    ImageBuffer::from_fn(20, 20, 3, |c, r| vec![(100 + c) as u8, (50 + 2 * r) as u8, (c * r % 90) as u8]).save_png(styles.join("warm.png")).unwrap();
    ImageBuffer::from_fn(20, 20, 3, |c, r| vec![(c * r % 60) as u8, (90 + r) as u8, (150 + c) as u8]).save_png(styles.join("cool.png")).unwrap();

    let single = tmp.path().join("single.png");
    let out = b2n(&["colormatch", "--content", &s(&content), "--style", &s(&styles.join("warm.png")), "--out", &s(&single)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(ImageBuffer::open(&single).unwrap().dims(), (30, 30));

    let batch = tmp.path().join("batch");
    assert_eq!(code(&b2n(&["colormatch", "--content", &s(&content), "--style-dir", &s(&styles), "--out", &s(&batch)])), 0);
    assert!(batch.join("content__warm.png").is_file());
    assert!(batch.join("content__cool.png").is_file());

    let flat = tmp.path().join("flat.png");
    ImageBuffer::filled(10, 10, &[9, 9, 9]).save_png(&flat).unwrap();
    let out = b2n(&["colormatch", "--content", &s(&flat), "--style", &s(&flat), "--ridge", "0", "--out", &s(&tmp.path().join("x.png"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_honours_seed_override() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0], [40.0, 40.0, 50.0, 50.0], [80.0, 0.0, 90.0, 10.0]]);
    let profile = tmp.path().join("profile.json");
    fs::write(
        &profile,
        r#"{"recall_ceiling": 1.0, "loc_jitter_sigma": 0.0, "tp_score": {"mean": 2.0, "std": 1.0},
            "fp_rate": 3.0, "fp_score": {"mean": 0.0, "std": 1.0}, "seed": 1}"#,
    )
    .unwrap();
    let run = |seed: &str, name: &str| {
        let p = tmp.path().join(name);
        let out = b2n(&["simulate", "--gt", &s(&gt), "--profile", &s(&profile), "--area-mpx", "1", "--seed", seed, "--out", &s(&p)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(p).unwrap()
    };
    assert_eq!(run("7", "a.json"), run("7", "b.json"));
    assert_ne!(run("7", "a.json"), run("8", "c.json"));
    let f: DetectionFile = read_json(tmp.path().join("a.json")).unwrap();
    assert!(f.detections.len() >= 3);
}

#[test]
fn mix_manifest_and_shortfall() {
    let tmp = TempDir::new().unwrap();
    let real = tmp.path().join("real");
    fs::create_dir_all(&real).unwrap();
    for i in 0..4 {
        fs::write(real.join(format!("r{i}.png")), b"").unwrap();
    }
    let list = tmp.path().join("cad.txt");
    fs::write(&list, "c0.png\nc1.png\n\nc2.png\n").unwrap();
    let manifest = tmp.path().join("manifest.json");
    let out = b2n(&[
        "mix", "--source", &format!("R={}", s(&real)), "--source", &format!("C.nnstx={}", s(&list)), "--counts", "3,2", "--seed", "1",
        "--manifest-out", &s(&manifest),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["schema"], SCHEMA);
    assert_eq!(m["mixture"], "R+C.nnstx");
    assert_eq!(m["entries"].as_array().unwrap().len(), 5);

    let short = b2n(&["mix", "--source", &format!("R={}", s(&real)), "--counts", "9", "--manifest-out", &s(&manifest)]);
    assert_eq!(code(&short), 2);
    let bad = b2n(&["mix", "--source", &format!("Q={}", s(&real)), "--counts", "1", "--manifest-out", &s(&manifest)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn pipeline_with_files_and_score_file() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0], [20.0, 0.0, 30.0, 10.0]]);
    let dets = tmp.path().join("dets.json");
    det_file(&dets, &[det([0.0, 0.0, 10.0, 10.0], 0.9), det([0.2, 0.0, 10.2, 10.0], 0.8), det([20.0, 0.0, 30.0, 10.0], 0.3), det([60.0, 0.0, 70.0, 10.0], 0.5)]);
    let scores = tmp.path().join("scores.json");
    // stitched order: 0.9, 0.5, 0.3
    write_json(&scores, &ClassifierScoresFile { schema: SCHEMA.into(), scores: vec![2.0, -3.0, 1.0] }).unwrap();
    let neg = tmp.path().join("neg.json");
    score_pairs(&neg, &[(0.0, -3.0), (0.5, -2.0), (0.2, -1.0), (0.6, 0.0)]);
    let model = tmp.path().join("model.json");
    assert_eq!(code(&b2n(&["fuse", "--neg-val", &s(&neg), "--grid", "64", "--model-out", &s(&model)])), 0);

    let report = tmp.path().join("report.json");
    let fused = tmp.path().join("fused.json");
    let out = b2n(&[
        "pipeline", "--detections", &s(&dets), "--classifier", &s(&scores), "--model", &s(&model), "--gt", &s(&gt), "--report",
        &s(&report), "--detections-out", &s(&fused),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Report = read_json(&report).unwrap();
    assert_eq!(r.score, "fused");
    assert_eq!(r.n_detections, 3);
    assert!((r.ap50 - 1.0).abs() < 1e-12, "fused ranking puts the false positive last: {}", r.ap50);
    let f: DetectionFile = read_json(&fused).unwrap();
    assert!(f.detections.iter().all(|d| d.fused.is_some()));

    // without a model the detector score ranks the false positive second
    let out = b2n(&["pipeline", "--detections", &s(&dets), "--gt", &s(&gt), "--report", &s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r: Report = read_json(&report).unwrap();
    assert_eq!(r.score, "s_d");
    assert!(r.ap50 < 1.0);
}

#[test]
fn pipeline_stage_tags() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0]]);
    let dets = tmp.path().join("dets.json");
    det_file(&dets, &[det([0.0, 0.0, 10.0, 10.0], 0.9)]);
    let report = s(&tmp.path().join("r.json"));

    let missing = b2n(&["pipeline", "--detections", "/nonexistent.json", "--gt", &s(&gt), "--report", &report]);
    assert!(stderr(&missing).contains("stage detect"), "{}", stderr(&missing));

    let scores = tmp.path().join("scores.json");
    write_json(&scores, &ClassifierScoresFile { schema: SCHEMA.into(), scores: vec![1.0, 2.0] }).unwrap();
    let misaligned = b2n(&["pipeline", "--detections", &s(&dets), "--classifier", &s(&scores), "--gt", &s(&gt), "--report", &report]);
    assert!(stderr(&misaligned).contains("stage classify"), "{}", stderr(&misaligned));

    let no_sc = b2n(&["pipeline", "--detections", &s(&dets), "--model", &s(&scores), "--gt", &s(&gt), "--report", &report]);
    assert!(stderr(&no_sc).contains("stage fuse"), "{}", stderr(&no_sc));

    let no_gt = b2n(&["pipeline", "--detections", &s(&dets), "--gt", "/nonexistent.json", "--report", &report]);
    assert!(stderr(&no_gt).contains("stage evaluate"), "{}", stderr(&no_gt));

    let bad_nms = b2n(&["pipeline", "--detections", &s(&dets), "--nms-iou", "0", "--gt", &s(&gt), "--report", &report]);
    assert!(stderr(&bad_nms).contains("stage pipeline"), "{}", stderr(&bad_nms));
    for out in [missing, misaligned, no_sc, no_gt, bad_nms] {
        assert_eq!(code(&out), 2);
    }

    let both = b2n(&["pipeline", "--detections", &s(&dets), "--detector", "exec:cat", "--gt", &s(&gt), "--report", &report]);
    assert_eq!(code(&both), 1);
}

#[test]
fn pipeline_with_external_detector_and_classifier() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("scene.png");
    gradient(200, 120).save_png(&img).unwrap();
    let canned = tmp.path().join("canned.json");
    // every chip reports the same chip-local box; stitching keeps the world copies apart
    det_file(&canned, &[det([10.0, 10.0, 30.0, 30.0], 1.0)]);
    let gt = gt_file(tmp.path(), &[[10.0, 10.0, 30.0, 30.0]]);
    let report = tmp.path().join("report.json");
    let fused = tmp.path().join("out.json");
    let out = b2n(&[
        "pipeline",
        "--detector",
        &format!("exec:cat > /dev/null; cat {}", s(&canned)),
        "--image",
        &s(&img),
        "--chip-size",
        "100",
        "--overlap",
        "0",
        "--classifier",
        r#"exec:wc -c > /dev/null; echo '{"s_c": 0.25}'"#,
        "--gt",
        &s(&gt),
        "--report",
        &s(&report),
        "--detections-out",
        &s(&fused),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let f: DetectionFile = read_json(&fused).unwrap();
    // 2 x 2 chips over a 200 x 120 raster with inward shift
    assert_eq!(f.detections.len(), 4);
    assert!(f.detections.iter().all(|d| d.s_c == Some(0.25)));
    let r: Report = read_json(&report).unwrap();
    assert_eq!(r.max_recall_100, 1.0);
}

#[test]
fn pipeline_external_classifier_needs_image() {
    let tmp = TempDir::new().unwrap();
    let gt = gt_file(tmp.path(), &[[0.0, 0.0, 10.0, 10.0]]);
    let dets = tmp.path().join("dets.json");
    det_file(&dets, &[det([0.0, 0.0, 10.0, 10.0], 0.9)]);
    let out = b2n(&["pipeline", "--detections", &s(&dets), "--classifier", "exec:cat", "--gt", &s(&gt), "--report", &s(&tmp.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--image"));
}
