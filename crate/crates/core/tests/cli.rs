//! The `cliploc` binary: exit codes, file outputs and reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cliploc::io::{load_detections, load_results, save_detections, ResultStatus, SCENE_DETECTIONS, SCENE_DETECTION_EMBEDDINGS};

fn cliploc<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cliploc")).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, queries: &str) {
    let out = cliploc(&["synth", "--out", p(dir), "--queries", queries, "--seed", "8"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}

fn localize(scene: &Path, output: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["localize".into()];
    for (flag, file) in [
        ("--map", "map.json"),
        ("--detections", "detections.json"),
        ("--intrinsics", "intrinsics.json"),
        ("--groundtruth", "groundtruth.txt"),
    ] {
        args.push(flag.into());
        args.push(p(&scene.join(file)).into());
    }
    args.extend(["--output".into(), p(output).into(), "--iterations".into(), "120".into()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    cliploc(&args)
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(cliploc(&["--help"]).status.code(), Some(0));
    assert_eq!(cliploc(&["--version"]).status.code(), Some(0));
    assert_eq!(cliploc::<&str>(&[]).status.code(), Some(1));
    assert_eq!(cliploc(&["frobnicate"]).status.code(), Some(1));
    let out = cliploc(&["localize", "--map", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--detections"));
}

#[test]
fn class_with_prosac_names_the_combination() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    for algorithm in ["prosac", "b-prosac"] {
        let out = localize(dir.path(), &dir.path().join("r.json"), &["--matching", "class", "--algorithm", algorithm]);
        assert_eq!(out.status.code(), Some(1));
        let err = text(&out.stderr);
        assert!(err.contains(&format!("--matching class --algorithm {algorithm}")), "{err}");
    }
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn synth_validate_localize() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "2");
    for name in ["map.json", "map.emb", "detections.json", "detections.emb", "intrinsics.json", "groundtruth.txt"] {
        assert!(scene.join(name).is_file(), "{name}");
    }

    let out = cliploc(&[
        "validate",
        "--map",
        p(&scene.join("map.json")),
        "--detections",
        p(&scene.join("detections.json")),
        "--intrinsics",
        p(&scene.join("intrinsics.json")),
        "--groundtruth",
        p(&scene.join("groundtruth.txt")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert_eq!(text(&out.stdout).lines().filter(|l| l.starts_with("ok ")).count(), 4);

    let results = dir.path().join("r.json");
    let out = localize(&scene, &results, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(text(&out.stdout).lines().count(), 2);
    let file = load_results(&results).unwrap();
    assert_eq!(file.method, "hybrid_b-prosac");
    assert_eq!(file.results.len(), 2);
    for r in &file.results {
        assert_eq!(r.status, ResultStatus::Ok);
        assert!(r.translation_error.unwrap() < 0.4);
        assert!(r.best_found_at.unwrap() <= r.iterations_run);
        assert!(!r.correspondences.is_empty());
    }
    let out = cliploc(&["validate", "--results", p(&results)]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn localize_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&a, &b] {
        let out = localize(dir.path(), path, &["--matching", "clip", "--algorithm", "ransac", "--seed", "5"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let strip = |path: &Path| {
        let mut file = load_results(path).unwrap();
        for r in &mut file.results {
            r.wall_time_s = 0.0;
        }
        file
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn unlocalizable_query_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    // two observations cannot seed a three-point hypothesis
    let mut set = load_detections(dir.path().join(SCENE_DETECTIONS), 0.0).unwrap();
    set.queries[1].observations.truncate(2);
    save_detections(&set, dir.path().join(SCENE_DETECTIONS), dir.path().join(SCENE_DETECTION_EMBEDDINGS)).unwrap();

    let results = dir.path().join("r.json");
    let out = localize(dir.path(), &results, &[]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("no solution"));
    let file = load_results(&results).unwrap();
    assert_eq!(file.results[0].status, ResultStatus::Ok);
    assert_eq!(file.results[1].status, ResultStatus::NoSolution);
    assert!(file.results[1].pose.is_none());
}

#[test]
fn validate_reports_corrupted_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let emb = dir.path().join("map.emb");
    let mut bytes = fs::read(&emb).unwrap();
    bytes[..4].copy_from_slice(b"JUNK");
    fs::write(&emb, bytes).unwrap();

    let out = cliploc(&["validate", "--map", p(&dir.path().join("map.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stdout).contains("bad magic"), "{}", text(&out.stdout));
    let out = cliploc(&["validate", "--embeddings", p(&emb)]);
    assert_eq!(out.status.code(), Some(1));

    // a localize run on the same files fails with the same typed error
    let out = localize(dir.path(), &dir.path().join("r.json"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("bad magic"));
}

#[test]
fn validate_cross_checks_files() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    fs::write(dir.path().join("groundtruth.txt"), "0.000000 0 0 0 0 0 0 1\n").unwrap();
    fs::write(
        dir.path().join("intrinsics.json"),
        r#"{"fx": 525.0, "fy": 525.0, "cx": 399.5, "cy": 299.5, "width": 800, "height": 600}"#,
    )
    .unwrap();
    let out = cliploc(&[
        "validate",
        "--detections",
        p(&dir.path().join("detections.json")),
        "--groundtruth",
        p(&dir.path().join("groundtruth.txt")),
        "--intrinsics",
        p(&dir.path().join("intrinsics.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("no groundtruth pose for query '1.000000'"), "{stdout}");
    assert!(stdout.contains("differs from intrinsics 800×600"), "{stdout}");
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, "2");
    let out_dir = dir.path().join("out");
    let out = cliploc(&[
        "bench",
        "--scene",
        p(&scene),
        "--output",
        p(&out_dir),
        "--methods",
        "clip_ransac,class_ransac",
        "--trials",
        "2",
        "--iterations",
        "50",
        "--thresholds",
        "0.1,0.5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = fs::read_to_string(out_dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("clip_ransac,2,2,"));
    let sweep = fs::read_to_string(out_dir.join("success_vs_threshold.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);
    let rows = fs::read_to_string(out_dir.join("rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 2);
    assert!(out_dir.join("iters_to_best.csv").is_file());
}

/// Files laid out the way the offline extraction tool writes them: custom
/// embedding file names, free-form UTF-8 labels, three query images.
#[test]
fn extraction_tool_layout_localizes() {
    use cliploc::bench::{generate_scene, SynthConfig};
    use cliploc::io::{save_camera, save_map, save_trajectory};

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut scene = generate_scene(&SynthConfig {
        n_queries: 3,
        seed: 21,
        ..Default::default()
    })
    .unwrap()
    .scene;
    scene.map.landmarks[0].label = "chaise «rouge» près de la fenêtre, 椅子".into();
    save_map(&scene.map, d.join("map.json"), d.join("text.emb")).unwrap();
    save_detections(&scene.detections, d.join("det.json"), d.join("det.emb")).unwrap();
    save_camera(&scene.camera, d.join("camera.json")).unwrap();
    save_trajectory(&scene.groundtruth, d.join("gt.txt")).unwrap();
    fs::copy(d.join("text.emb"), d.join("labels-v2.emb")).unwrap();
    let arg = |name: &str| p(&d.join(name)).to_string();

    let out = cliploc(&[
        "validate".to_string(),
        "--map".into(),
        arg("map.json"),
        "--detections".into(),
        arg("det.json"),
        "--embeddings".into(),
        arg("text.emb"),
        "--embeddings".into(),
        arg("det.emb"),
        "--intrinsics".into(),
        arg("camera.json"),
        "--groundtruth".into(),
        arg("gt.txt"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    let kept: usize = scene.detections.queries.iter().map(|q| q.observations.len()).sum();
    assert!(text(&out.stdout).contains(&format!("3 queries, {kept} detections kept")));

    let out = cliploc(&[
        "localize".to_string(),
        "--map".into(),
        arg("map.json"),
        "--map-embeddings".into(),
        arg("labels-v2.emb"),
        "--detections".into(),
        arg("det.json"),
        "--intrinsics".into(),
        arg("camera.json"),
        "--groundtruth".into(),
        arg("gt.txt"),
        "--output".into(),
        arg("results.json"),
        "--iterations".into(),
        "100".into(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let results = load_results(d.join("results.json")).unwrap();
    assert_eq!(results.results.len(), 3);
    let map = cliploc::io::load_map(d.join("map.json")).unwrap();
    assert_eq!(map.landmarks[0].label, "chaise «rouge» près de la fenêtre, 椅子");
}
