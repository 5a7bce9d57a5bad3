use std::process::Command;

use cftlab::baselines::VariantKind;
use cftlab::harness::{
    build_corpus, emit_report, run_sweep, sweep_analyses, Axis, EvalReport, Format, RunConfig, Split,
};
use cftlab::metrics::mean;
use proptest::prelude::*;

fn tiny() -> RunConfig {
    RunConfig {
        test_ratios: vec![0.5, 0.1],
        seeds: vec![1, 2],
        n_train_per_class: 60,
        n_test_per_class: 30,
        pretrain_per_class: 60,
        pretrain_epochs: 1,
        epochs: 2,
        ..RunConfig::default()
    }
}

fn read(dir: &std::path::Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap()
}

#[test]
fn report_files_have_grid_shapes() {
    let cfg = tiny();
    let report = run_sweep(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path(), &Format::ALL).unwrap();

    let summary = read(dir.path(), "summary.csv");
    let mut rows = csv::Reader::from_reader(summary.as_bytes());
    assert_eq!(rows.headers().unwrap().len(), cfg.test_ratios.len() + 2);
    assert_eq!(rows.records().count(), cfg.variants.len());

    let boxplot = read(dir.path(), "boxplot.csv");
    let n = csv::Reader::from_reader(boxplot.as_bytes()).records().count();
    assert_eq!(n, cfg.variants.len() * cfg.seeds.len() * (cfg.test_ratios.len() + 1));

    let back = EvalReport::load(dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);
    assert!(read(dir.path(), "plot.svg").starts_with("<svg"));
}

#[test]
fn cells_are_filled_and_means_are_exact() {
    let report = run_sweep(&tiny()).unwrap();
    assert_eq!(report.failed_cells(), 0);
    for c in &report.cells {
        let f = c.f1.unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    for a in &report.aggregates {
        let vals: Vec<f64> = a.per_seed.iter().map(|v| v.unwrap()).collect();
        assert!((a.mean.unwrap() - mean(&vals)).abs() <= 1e-12);
    }
}

#[test]
fn identical_configs_write_identical_bytes() {
    let cfg = RunConfig {
        variants: vec![VariantKind::Sft, VariantKind::Cft],
        ..tiny()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        emit_report(&run_sweep(&cfg).unwrap(), &out, &Format::ALL).unwrap();
        outs.push(["report.json", "summary.csv", "boxplot.csv", "plot.svg"].map(|f| read(&out, f)));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn every_variant_sees_the_same_test_corpus() {
    let cfg = tiny();
    let a = run_sweep(&RunConfig {
        variants: vec![VariantKind::Sft0],
        ..cfg.clone()
    })
    .unwrap();
    let b = run_sweep(&RunConfig {
        variants: vec![VariantKind::CftPhi],
        seeds: vec![9],
        ..cfg.clone()
    })
    .unwrap();
    for key in a.corpus_checksums.keys().filter(|k| k.starts_with("test_")) {
        assert_eq!(a.corpus_checksums[key], b.corpus_checksums[key]);
    }
    let direct = build_corpus(&cfg, cfg.n_test_per_class, cfg.test_seed, 0.1).unwrap();
    assert_eq!(a.corpus_checksums["test_ood_0.1"], direct.checksum());
}

#[test]
fn unwritable_output_is_an_error() {
    let report = run_sweep(&RunConfig {
        variants: vec![VariantKind::Sft0],
        seeds: vec![1],
        ..tiny()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "x").unwrap();
    assert!(emit_report(&report, &file, &[Format::Json]).is_err());
}

#[test]
fn analyses_emit_one_report_per_value() {
    let cfg = RunConfig {
        variants: vec![VariantKind::Cft],
        seeds: vec![1],
        ..tiny()
    };
    let runs = sweep_analyses(&cfg, Axis::SpuriousLevel, &[1, 2, 3]).unwrap();
    assert_eq!(runs.len(), 3);
    for (v, r) in &runs {
        assert_eq!(r.config.spurious_level, *v);
    }
    let ks = sweep_analyses(&cfg, Axis::KSamples, &[1, 5]).unwrap();
    assert_eq!(ks[0].1.encoder_checksum, ks[1].1.encoder_checksum);
    assert!(sweep_analyses(&cfg, Axis::TrainSize, &[]).is_err());
}

fn gap_at_01(r: &EvalReport) -> f64 {
    r.ood_mean(VariantKind::Cft, 0.1).unwrap() - r.ood_mean(VariantKind::Sft, 0.1).unwrap()
}

#[test]
fn cft_beats_sft_at_every_spurious_level() {
    let cfg = RunConfig {
        variants: vec![VariantKind::Sft, VariantKind::Cft],
        ..RunConfig::default()
    };
    for (level, r) in sweep_analyses(&cfg, Axis::SpuriousLevel, &[1, 2, 3]).unwrap() {
        assert!(gap_at_01(&r) > 0.0, "level {level}: gap {}", gap_at_01(&r));
    }
}

#[test]
fn gap_narrows_with_more_training_data() {
    let cfg = RunConfig {
        variants: vec![VariantKind::Sft, VariantKind::Cft],
        ..RunConfig::default()
    };
    let gaps: Vec<f64> = sweep_analyses(&cfg, Axis::TrainSize, &[1000, 2000, 3000])
        .unwrap()
        .iter()
        .map(|(_, r)| gap_at_01(r))
        .collect();
    assert!(gaps.iter().all(|&g| g >= 0.0), "{gaps:?}");
    assert!(gaps[2] < gaps[1], "{gaps:?}");
}

#[test]
fn id_column_uses_the_training_ratio() {
    let report = run_sweep(&RunConfig {
        variants: vec![VariantKind::Sft0],
        seeds: vec![1],
        train_ratio: 0.8,
        ..tiny()
    })
    .unwrap();
    assert_eq!(report.columns()[0], (Split::Id, 0.8));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cftlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "seeds = [1, 2]\nn_train_per_class = 40\nn_test_per_class = 20\npretrain_per_class = 40\n\
         pretrain_epochs = 1\nepochs = 3\ntest_ratios = [0.1]\nvariants = [\"sft0\"]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "eval",
        "--config",
        cfg_path.to_str().unwrap(),
        "--epochs",
        "1",
        "--seed",
        "4",
        "--variant",
        "sft,cft-n",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = EvalReport::load(out.join("report.json")).unwrap();
    assert_eq!(report.config.epochs, 1);
    assert_eq!(report.config.seeds, vec![4]);
    assert_eq!(report.config.n_train_per_class, 40);
    assert_eq!(report.config.variants, vec![VariantKind::Sft, VariantKind::CftN]);
}

#[test]
fn cli_exit_codes() {
    let o = cli(&["verify-scm", "--trials", "3", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);

    let o = cli(&["eval", "--epochs", "0", "--out", "/nonexistent/x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["sweep", "--variant", "nope"]);
    assert!(!o.status.success());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn out_of_range_ratios_are_rejected(r in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        let cfg = RunConfig { test_ratios: vec![0.5, r], ..tiny() };
        prop_assert!(cfg.validate().is_err());
        let cfg = RunConfig { train_ratio: r, ..tiny() };
        prop_assert!(cfg.validate().is_err());
    }

    #[test]
    fn in_range_configs_validate(r in 0.0f64..=1.0, level in 1usize..4, k in 1usize..30) {
        let cfg = RunConfig { test_ratios: vec![r], spurious_level: level, k_samples: k, ..tiny() };
        prop_assert!(cfg.validate().is_ok());
    }
}
