use std::path::Path;
use std::process::Command;

use m2vsl::experiments::{ablate, sweep_batch, Arm};
use m2vsl::pgm::Greymap;
use m2vsl::{checkpoint, cli, report};
use m2vsl_core::eval::evaluate;
use m2vsl_core::synth::Split;
use m2vsl_core::train::{build_dataset, train, RunConfig};

const TINY: &str = "dim=8\nepochs=2\ntrain_size=16\nval_size=4\ntest_size=4\nbatch_size=4\naudio_seconds=0.2\n";

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    m2vsl::config::apply_text(&mut cfg, TINY).unwrap();
    cfg
}

fn m2vsl(args: &[&str], cwd: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_m2vsl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn exit_codes_separate_validation_from_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.txt"), TINY).unwrap();
    let d = dir.path();
    assert_eq!(m2vsl(&["train", "--config", "tiny.txt", "--set", "bogus=1"], d).0, 1);
    assert_eq!(m2vsl(&["train", "--config", "tiny.txt", "--set", "batch_size=1"], d).0, 1);
    assert_eq!(m2vsl(&["train", "--config", "missing.txt"], d).0, 1);
    assert_eq!(m2vsl(&["no-such-command"], d).0, 1);
    assert_eq!(m2vsl(&["--help"], d).0, 0);

    let (code, out, _) = m2vsl(&["gradcheck"], d);
    assert_eq!(code, 0, "{out}");
    let (code, out, _) = m2vsl(&["gradcheck", "--inject-fault"], d);
    assert_eq!(code, 2);
    assert!(out.contains("FAIL") && out.contains("matmul"));

    let (code, _, err) = m2vsl(&["train", "--config", "tiny.txt", "--out", "blown", "--set", "learning_rate=1e300"], d);
    assert_eq!(code, 2, "{err}");
    assert!(d.join("blown/abort/reason.txt").exists() || err.contains("could not dump state"));
}

#[test]
fn train_eval_localize_synth_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.txt"), TINY).unwrap();
    let (code, _, err) = m2vsl(&["train", "--config", "tiny.txt", "--out", "run"], d);
    assert_eq!(code, 0, "{err}");
    for f in [cli::CONFIG_FILE, cli::LOSS_CURVE_FILE, checkpoint::DATA_FILE, checkpoint::MANIFEST_FILE] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(d.join("run").join(cli::LOSS_CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let (code, _, err) = m2vsl(&["eval", "--checkpoint", "run", "--split", "test"], d);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(d.join("run/report_test.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();

    // the in-memory model of the same run must give the identical report
    let cfg = RunConfig {
        output_dir: "run".into(),
        ..tiny()
    };
    let data = build_dataset(&cfg, Split::Train, false).unwrap();
    let model = train(&cfg, &data, &mut |_| {}).unwrap().model;
    let loaded = cli::load_model(&cfg, &d.join("run")).unwrap();
    assert_eq!(loaded.params, model.params);
    let test = build_dataset(&cfg, Split::Test, false).unwrap();
    let direct = report::metrics(&evaluate(&model, &test).unwrap());
    for (k, v) in &direct {
        assert_eq!(&json[k], v, "{k}");
    }

    let wrong = RunConfig { dim: 16, ..cfg.clone() };
    assert!(cli::load_model(&wrong, &d.join("run")).is_err());

    let (code, _, err) = m2vsl(&["localize", "--checkpoint", "run", "--duet", "--ids", "0,2"], d);
    assert_eq!(code, 0, "{err}");
    let heat = Greymap::read(&d.join("run/localize/test_duet_00002_heatmap.pgm")).unwrap();
    assert_eq!((heat.width, heat.height), (64, 32));
    assert!(d.join("run/localize/test_duet_00000_mask.pgm").exists());
    assert!(d.join("run/localize/test_duet_00000_category3.m2ts").exists());
    assert!(d.join("run/localize/test_duet_00000_token0.pgm").exists());

    let (code, _, err) = m2vsl(&["synth", "--config", "tiny.txt", "--out", "run", "--split", "val", "--duet"], d);
    assert_eq!(code, 0, "{err}");
    let manifest = std::fs::read_to_string(d.join("run/synth_val_duet/manifest.txt")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 4);
    let fields: Vec<&str> = lines[1].split(' ').collect();
    assert_eq!(fields[0], "1");
    assert_eq!(fields[1], Split::Val.sample_seed(1).unwrap().to_string());
    assert_eq!(fields[2].split(',').count(), 2);
    assert!(d.join("run/synth_val_duet/00003_mask1.pgm").exists());
}

#[test]
fn single_size_sweep_is_train_plus_evaluate() {
    let cfg = tiny();
    let rows = sweep_batch(&cfg, &[4], &mut |_| {}).unwrap();
    assert_eq!(rows.len(), 1);
    let data = build_dataset(&cfg, Split::Train, false).unwrap();
    let out = train(&cfg, &data, &mut |_| {}).unwrap();
    let rep = evaluate(&out.model, &build_dataset(&cfg, Split::Test, false).unwrap()).unwrap();
    assert_eq!(rows[0].report, rep);
    assert_eq!(rows[0].final_epoch_loss, *out.epoch_losses.last().unwrap());
    assert!(sweep_batch(&cfg, &[], &mut |_| {}).is_err());
    assert_eq!(sweep_batch(&cfg, &[2, 8], &mut |_| {}).unwrap().len(), 2);
}

#[test]
fn ablation_grid_has_four_deterministic_rows() {
    let cfg = RunConfig { epochs: 1, ..tiny() };
    let a = ablate(&cfg, &mut |_| {}).unwrap();
    let b = ablate(&cfg, &mut |_| {}).unwrap();
    assert_eq!(a, b);
    let grid: Vec<(bool, bool)> = a.iter().map(|r| (r.arm.mmc(), r.arm.mmt())).collect();
    assert_eq!(grid, vec![(false, false), (true, false), (false, true), (true, true)]);
    assert_eq!(a.iter().map(|r| r.arm).collect::<Vec<_>>(), Arm::ALL.to_vec());
    assert!(a.iter().all(|r| r.report.miou.is_some() && r.report.f_score.is_some()));
}
