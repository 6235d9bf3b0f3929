//! End-to-end checks of the binary: golden evaluation outputs on a corpus
//! small enough to score by hand, output formats, and error behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camforge_core::scene_io::{
    save_labels, save_manifest, save_scene, DatasetManifest, LabelSet, ManifestEntry,
};
use camforge_core::sensor::{save_raw, CfaPattern, RawFrame};
use camforge_core::{BoundingBox, SceneIrradiance};

const BIN: &str = env!("CARGO_BIN_EXE_camforge");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("failed to spawn camforge")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "camforge {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn boxed(class: &str, coords: (f64, f64, f64, f64), score: Option<f64>) -> BoundingBox {
    let mut b = BoundingBox::new(class, coords.0, coords.1, coords.2, coords.3);
    b.score = score;
    b
}

fn write_label_set(path: &Path, scene_id: &str, boxes: Vec<BoundingBox>) {
    save_labels(
        &LabelSet {
            scene_id: scene_id.to_string(),
            boxes,
        },
        path,
    )
    .unwrap();
}

/// Two scenes, four ground truths, six detections. Sweeping the detections
/// by descending score gives TP,TP,TP,FP,TP,FP, so the interpolated
/// precision/recall curve integrates to exactly 0.95.
fn write_eval_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let base = dir.join("base");
    std::fs::create_dir_all(&base).unwrap();
    let gts = [
        (
            "a",
            vec![
                boxed("car", (0.0, 0.0, 10.0, 10.0), None),
                boxed("car", (20.0, 0.0, 30.0, 10.0), None),
                boxed("person", (0.0, 20.0, 10.0, 30.0), None),
            ],
        ),
        ("b", vec![boxed("car", (5.0, 5.0, 15.0, 15.0), None)]),
    ];
    let mut entries = Vec::new();
    for (id, boxes) in gts {
        let scene = SceneIrradiance::uniform(id, 4, 4, 1, 3.0, 100.0).unwrap();
        save_scene(&scene, &base.join(id)).unwrap();
        write_label_set(&base.join(format!("{id}.csv")), id, boxes);
        entries.push(ManifestEntry {
            scene_id: id.to_string(),
            scene_file: format!("{id}.meta").into(),
            label_file: format!("{id}.csv").into(),
        });
    }
    let manifest_path = base.join("manifest.txt");
    save_manifest(
        &DatasetManifest {
            name: "base".into(),
            root: base.clone(),
            entries,
            provenance: vec![],
        },
        &manifest_path,
    )
    .unwrap();

    let dets = dir.join("dets");
    std::fs::create_dir_all(&dets).unwrap();
    write_label_set(
        &dets.join("a.csv"),
        "a",
        vec![
            boxed("car", (0.0, 0.0, 10.0, 10.0), Some(0.9)), // IoU 1.0     TP
            boxed("car", (21.0, 0.0, 31.0, 10.0), Some(0.8)), // IoU 90/110 TP
            boxed("car", (40.0, 40.0, 50.0, 50.0), Some(0.7)), // no overlap FP
            boxed("person", (0.0, 20.0, 10.0, 30.0), Some(0.6)), // IoU 1.0 TP
        ],
    );
    write_label_set(
        &dets.join("b.csv"),
        "b",
        vec![
            boxed("car", (6.0, 5.0, 16.0, 15.0), Some(0.85)), // IoU 90/110 TP
            boxed("car", (5.0, 5.0, 15.0, 15.0), Some(0.3)),  // gt taken   FP
        ],
    );
    (manifest_path, dets)
}

#[test]
fn eval_matches_hand_scored_golden_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, dets) = write_eval_corpus(dir.path());
    let config = dir.path().join("eval.cfg");
    std::fs::write(
        &config,
        format!(
            "input.manifest={}\nsensor.preset=mt9v024-mono\neval.detections={}\n",
            manifest.display(),
            dets.display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let stdout = run_ok(&[
        "eval",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(stdout, "ap=0.95 tp=4 fp=2 fn=0 scenes=2\n");

    let summary = std::fs::read_to_string(out_dir.join("eval/summary.txt")).unwrap();
    assert_eq!(
        summary,
        "ap=0.95\niou_threshold=0.5\nscenes=2\ngts=4\ndets=6\ntp=4\nfp=2\nfn=0\n"
    );

    let curve = std::fs::read_to_string(out_dir.join("eval/pr_curve.csv")).unwrap();
    assert_eq!(
        curve,
        "recall,precision\n\
         0.25,1\n\
         0.5,1\n\
         0.75,1\n\
         0.75,0.75\n\
         1,0.8\n\
         1,0.6666666666666666\n"
    );

    let per_scene = std::fs::read_to_string(out_dir.join("eval/per_scene.csv")).unwrap();
    assert_eq!(
        per_scene,
        "scene_id,gts,dets,tp,fp,fn\na,3,4,3,1,0\nb,1,2,1,1,0\n"
    );
}

#[test]
fn kid_reports_zero_for_identical_sets() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "1,2,3\n4,5,6\n7,8,9\n-1,0.5,2\n").unwrap();
    std::fs::copy(&a, &b).unwrap();
    let stdout = run_ok(&[
        "kid",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--block-size",
        "2",
    ]);
    assert_eq!(stdout, "kid_mean=0 kid_std=0 blocks=2\n");

    std::fs::write(&b, "2,2,3\n4,6,6\n7,8,10\n-1,1.5,2\n").unwrap();
    let stdout = run_ok(&[
        "kid",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--block-size",
        "2",
    ]);
    assert!(stdout.starts_with("kid_mean="), "{stdout}");
    assert!(stdout.contains(" kid_std="), "{stdout}");
    assert!(stdout.trim_end().ends_with("blocks=2"), "{stdout}");
}

#[test]
fn census_counts_distinct_dark_levels() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("scenes")).unwrap();
    let mut dn = vec![0u16; 64];
    dn[1] = 1;
    dn[2] = 2;
    dn[3] = 3;
    dn[4] = 900; // above the dark threshold, must not count
    let frame = RawFrame {
        width: 8,
        height: 8,
        dn,
        bit_depth: 10,
        cfa: CfaPattern::from_name("mono").unwrap(),
        exposure_s: 0.004,
        sensor_name: "test".into(),
        rng_seed: 7,
        pixel_pitch_um: 3.0,
    };
    save_raw(&frame, &dir.path().join("scenes/x")).unwrap();
    write_label_set(
        &dir.path().join("x.csv"),
        "x",
        vec![boxed("car", (0.0, 0.0, 2.0, 2.0), None)],
    );
    let manifest_path = dir.path().join("manifest.txt");
    save_manifest(
        &DatasetManifest {
            name: "raws".into(),
            root: dir.path().to_path_buf(),
            entries: vec![ManifestEntry {
                scene_id: "x".into(),
                scene_file: "scenes/x.raw.png".into(),
                label_file: "x.csv".into(),
            }],
            provenance: vec![],
        },
        &manifest_path,
    )
    .unwrap();

    let stdout = run_ok(&["census", manifest_path.to_str().unwrap()]);
    assert_eq!(stdout, "x dark_levels=4 bit_depth=10\n");

    // A tighter fraction (threshold 0.002 * 1024 = 2.048) excludes dn=3.
    let stdout = run_ok(&[
        "census",
        manifest_path.to_str().unwrap(),
        "--fraction",
        "0.002",
    ]);
    assert_eq!(stdout, "x dark_levels=3 bit_depth=10\n");
}

#[test]
fn failures_are_single_line_errors() {
    let out = run(&["simulate", "--config", "/nonexistent/experiment.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    std::fs::write(&config, "sensor.preset=mt9v024-mono\nnonsense.key=3\n").unwrap();
    let out = run(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown key"), "{stderr}");
    assert!(stderr.contains(":2:"), "{stderr}");

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
