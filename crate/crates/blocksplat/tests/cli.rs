//! Command-line contract, exercised through the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blocksplat::commands::SynthSpec;
use blocksplat::config::RunConfig;
use blocksplat::core::synth::{self, SynthOptions};

const FAST_CONFIG: &str = "\
level = 1
gaussians_per_face = 1
sh_degree = 0
m_init = 2
max_blocks = 4
add_iters = []
rays_per_iter = 16
samples_per_ray = 8
overlap_points = 64
hull_candidates = 2000
dbscan_min_pts = 3
enter_points = 32
checkpoint_every = 0
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blocksplat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic dataset through `synth` and a fast config.
fn dataset(root: &Path) -> (PathBuf, PathBuf) {
    std::fs::create_dir_all(root).unwrap();
    let spec = SynthSpec {
        primitives: synth::three_boxes(),
        options: Some(SynthOptions {
            n_views: 3,
            resolution: 16,
            truth_points: 500,
            level: 1,
            gaussians_per_face: 2,
            ..SynthOptions::default()
        }),
    };
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let data = root.join("data");
    ok(&run(&["synth", s(&spec_path), "-o", s(&data), "--seed", "3"]));
    let cfg = root.join("fast.toml");
    std::fs::write(&cfg, FAST_CONFIG).unwrap();
    (data, cfg)
}

#[test]
fn fit_writes_one_record_per_iteration_and_the_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cfg) = dataset(tmp.path());
    let out = tmp.path().join("out");
    ok(&run(&[
        "fit", s(&data), "-c", s(&cfg), "-o", s(&out), "--iters-block", "10", "--iters-point", "4",
    ]));
    let lines = |name: &str| std::fs::read_to_string(out.join(name)).unwrap().lines().count();
    assert_eq!(lines("losses_block.jsonl"), 10);
    assert_eq!(lines("losses_point.jsonl"), 4);
    for f in ["checkpoint.json", "splats.ply", "report.json", "config.toml", "blocks/scene.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let saved = RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(saved.iters_block, 10);
    assert_eq!(saved.iters_point, 4);

    let ck = out.join("checkpoint.json");
    let png = tmp.path().join("view.png");
    ok(&run(&["render", s(&ck), "--dataset", s(&data), "--view", "1", "-o", s(&png)]));
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    let bad = run(&["render", s(&ck), "--dataset", s(&data), "--view", "0", "--part", "99", "-o", s(&png)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("part 99"));

    let with_truth: serde_json::Value = serde_json::from_str(&ok(&run(&["eval", s(&ck), s(&data)]))).unwrap();
    assert!(with_truth["cd"].as_f64().unwrap() > 0.0);
    assert!(with_truth["psnr"].as_f64().is_some());
    std::fs::remove_file(data.join("truth.ply")).unwrap();
    let without: serde_json::Value = serde_json::from_str(&ok(&run(&["eval", s(&ck), s(&data)]))).unwrap();
    assert!(without.get("cd").is_none());
    assert_eq!(without["psnr"], with_truth["psnr"]);
}

#[test]
fn refine_continues_a_block_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cfg) = dataset(tmp.path());
    let out = tmp.path().join("blocks_only");
    ok(&run(&["fit", s(&data), "-c", s(&cfg), "-o", s(&out), "--iters-block", "3", "--stage", "block"]));
    assert!(!out.join("splats.ply").exists());
    let out2 = tmp.path().join("refined");
    ok(&run(&["refine", s(&out.join("checkpoint.json")), s(&data), "-o", s(&out2), "--iters-point", "2"]));
    assert!(out2.join("splats.ply").exists());
    let lines = std::fs::read_to_string(out2.join("losses_point.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 2);
}

#[test]
fn dump_config_reproduces_the_effective_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "lambda_par = 0.02\nadd_iters = [5, 50]\n").unwrap();
    let text = ok(&run(&[
        "fit", "unused", "-c", s(&cfg), "--dump-config", "--iters-block", "20", "--seed", "9",
    ]));
    let got = RunConfig::from_toml(&text).unwrap();
    let mut want = RunConfig::default();
    want.lambda_par = 0.02;
    want.add_iters = vec![5];
    want.iters_block = 20;
    want.seed = 9;
    assert_eq!(got, want);
}

#[test]
fn failing_fits_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cfg) = dataset(tmp.path());
    let out = tmp.path().join("point_only");
    let r = run(&["fit", s(&data), "-c", s(&cfg), "-o", s(&out), "--stage", "point"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("refine"));
    assert!(!out.exists());

    std::fs::remove_dir_all(data.join("masks")).unwrap();
    let out = tmp.path().join("no_masks");
    let r = run(&["fit", s(&data), "-c", s(&cfg), "-o", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("masks"));
    assert!(!out.exists());
}

#[test]
fn synth_is_deterministic_and_validates_its_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, _) = dataset(&tmp.path().join("a"));
    let (b, _) = dataset(&tmp.path().join("b"));
    for f in ["cameras.json", "truth.ply", "truth.json", "images/002.png", "masks/000.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"primitives": []}"#).unwrap();
    let r = run(&["synth", s(&bad), "-o", s(&tmp.path().join("x"))]);
    assert!(!r.status.success());
    std::fs::write(&bad, r#"{"primitives": [], "extra": 1}"#).unwrap();
    assert!(!run(&["synth", s(&bad), "-o", s(&tmp.path().join("y"))]).status.success());
}
