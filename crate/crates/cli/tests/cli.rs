use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparse_repair::allocate::prune_count;
use sparse_repair::io;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fx(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-repair")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prune_writes_a_model_at_the_requested_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    for (alloc, s) in [("erk", "0.9"), ("LAMP", "0.95")] {
        let out = dir.path().join(format!("{alloc}.spm"));
        let o = run(&["prune", "--model", &fx("fixture.spm"), "--alloc", alloc, "--sparsity", s, "--out", path(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m = io::load_model(&out).unwrap();
        let weights = m.graph.prunable_weights();
        let n: usize = weights.iter().map(|w| m.weights[*w].numel()).sum();
        let zeros: usize =
            weights.iter().map(|w| m.weights[*w].data().iter().filter(|&&v| v == 0.0).count()).sum();
        assert_eq!(zeros, prune_count(n, s.parse().unwrap()));
        assert!(weights.iter().all(|w| m.mask(w).is_some()));
    }
}

#[test]
fn repairing_an_unpruned_model_leaves_it_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.spm");
    let plan = dir.path().join("plan.tsv");
    let o = run(&[
        "repair", "--variant", "asr_q50", "--dense", &fx("fixture.spm"), "--pruned", &fx("fixture.spm"),
        "--calib", &fx("calib.tns"), "--out", path(&out), "--plan-out", path(&plan),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dense = io::load_model(fixtures().join("fixture.spm")).unwrap();
    let repaired = io::load_model(&out).unwrap();
    for w in dense.graph.prunable_weights() {
        let diff = repaired.weights[w].max_rel_diff(&dense.weights[w], 1e-3);
        assert!(diff <= 1e-5, "{w}: {diff}");
    }
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.starts_with("node\tchannel\tgamma_raw"));
    assert_eq!(text.lines().count(), 1 + 32 + 64);

    let acc = |m: &str| {
        let o = run(&["eval", "--model", m, "--images", &fx("test_images.tns"), "--labels", &fx("test_labels.tns")]);
        assert!(o.status.success());
        String::from_utf8(o.stdout).unwrap().trim().parse::<f64>().unwrap()
    };
    assert!((acc(&fx("fixture.spm")) - acc(path(&out))).abs() <= 0.2);
}

#[test]
fn grid_matches_the_committed_csv() {
    let golden = std::fs::read_to_string(fixtures().join("expected_grid.csv")).unwrap();
    let args = [
        "grid", "--model", &fx("fixture.spm"), "--calib", &fx("calib.tns"), "--images", &fx("test_images.tns"),
        "--labels", &fx("test_labels.tns"), "--sparsity", "0.95",
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), golden);

    let mut single = vec!["--threads", "1"];
    single.extend_from_slice(&args);
    assert_eq!(String::from_utf8(run(&single).stdout).unwrap(), golden);
}

#[test]
fn stats_and_inspect_report_every_channel() {
    let o = run(&["inspect", "--model", &fx("fixture.spm")]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("conv2") && text.contains("global sparsity 0.000000"), "{text}");

    let o = run(&["stats", "--dense", &fx("fixture.spm"), "--pruned", &fx("fixture.spm"), "--calib", &fx("calib.tns")]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 1 + 32 + 64);
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.spm");
    let model = fx("fixture.spm");

    let bad_sparsity = run(&["prune", "--model", &model, "--alloc", "erk", "--sparsity", "1.2", "--out", path(&out)]);
    assert_eq!(bad_sparsity.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_sparsity.stderr).contains("sparsity"));

    let bad_alloc = run(&["prune", "--model", &model, "--alloc", "random", "--sparsity", "0.5", "--out", path(&out)]);
    assert_eq!(bad_alloc.status.code(), Some(2));

    assert_eq!(run(&["repair", "--variant", "asr_q50"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));

    let missing = run(&["eval", "--model", "nope.spm", "--images", "a", "--labels", "b"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.spm"));

    let bad_bounds = run(&[
        "sweep-clip", "--model", &model, "--calib", &fx("calib.tns"), "--images", &fx("test_images.tns"),
        "--labels", &fx("test_labels.tns"), "--bounds", "2:3",
    ]);
    assert_eq!(bad_bounds.status.code(), Some(2));

    // Labels for a different number of images.
    let o = run(&["eval", "--model", &model, "--images", &fx("calib.tns"), "--labels", &fx("test_labels.tns")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}
