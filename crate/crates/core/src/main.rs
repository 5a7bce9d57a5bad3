//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cftlab::baselines::VariantKind;
use cftlab::corpus::{save_jsonl, Experiment};
use cftlab::encoder::{EncoderModel, PhiMode};
use cftlab::harness::{
    build_corpus, emit_report, pretrain, pretrain_corpus, render_svg, run_sweep_with, sweep_analyses, Axis, EvalReport,
    Format, RunConfig,
};
use cftlab::metrics::F1Mode;
use cftlab::scm::verify;
use cftlab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cftlab",
    version,
    about = "Causal fine-tuning experiments on confounded text"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the pretraining, training and test corpora as JSONL.
    GenData(RunArgs),
    /// Pretrain the frozen encoder and save it.
    Pretrain(RunArgs),
    /// Train the requested variants and score them in distribution.
    Train(RunArgs),
    /// Train and score the requested variants on every split.
    Eval(RunArgs),
    /// Full grid with report tables and a plot.
    Sweep(RunArgs),
    /// One sweep per value of an analysis axis.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_from_str::<Axis>)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Exact checks of the identification results on finite models.
    VerifyScm {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render box plots from a saved report.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum F1Arg {
    Positive,
    Macro,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML file with RunConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for `pretrain`).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Saved frozen encoder to use instead of pretraining.
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long, value_parser = parse_from_str::<Experiment>)]
    experiment: Option<Experiment>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_probe: Option<f64>,
    #[arg(long)]
    lr_cmap: Option<f64>,
    #[arg(long)]
    lr_heads: Option<f64>,
    #[arg(long)]
    k_samples: Option<usize>,
    /// Single seed; replaces the seed list.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_parser = parse_from_str::<PhiMode>)]
    phi_mode: Option<PhiMode>,
    #[arg(long)]
    phi_patches: Option<usize>,
    /// Variants to run; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<VariantKind>)]
    variant: Option<Vec<VariantKind>>,
    #[arg(long)]
    wise_alpha: Option<f64>,
    #[arg(long)]
    swa_window: Option<usize>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    test_ratios: Option<Vec<f64>>,
    #[arg(long)]
    n_train_per_class: Option<usize>,
    #[arg(long)]
    n_test_per_class: Option<usize>,
    #[arg(long)]
    spurious_level: Option<usize>,
    #[arg(long)]
    polarity: Option<f64>,
    #[arg(long)]
    test_seed: Option<u64>,
    #[arg(long, value_enum)]
    f1_mode: Option<F1Arg>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(
            experiment,
            epochs,
            batch_size,
            lr,
            lr_probe,
            k_samples,
            seeds,
            phi_mode,
            phi_patches,
            wise_alpha,
            train_ratio,
            test_ratios,
            n_train_per_class,
            n_test_per_class,
            spurious_level,
            polarity,
            test_seed
        );
        if let Some(v) = self.lr_cmap {
            cfg.lr_cmap = Some(v);
        }
        if let Some(v) = self.lr_heads {
            cfg.lr_heads = Some(v);
        }
        if let Some(v) = self.swa_window {
            cfg.swa_window = Some(v);
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(v) = &self.variant {
            cfg.variants = v.clone();
        }
        if let Some(m) = self.f1_mode {
            cfg.f1_mode = match m {
                F1Arg::Positive => F1Mode::Positive,
                F1Arg::Macro => F1Mode::Macro,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn encoder(&self, cfg: &RunConfig) -> Result<EncoderModel> {
        match &self.encoder {
            Some(p) => EncoderModel::load(p),
            None => {
                info!("pretraining the frozen encoder");
                pretrain(cfg)
            }
        }
    }
}

fn report_outcome(report: &EvalReport) -> bool {
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "failed: {} seed {} {:?} {}: {}",
            c.variant,
            c.seed,
            c.split,
            c.ratio,
            c.error.as_deref().unwrap_or("")
        );
    }
    report.failed_cells() == 0
}

fn sweep(args: &RunArgs, cfg: RunConfig, formats: &[Format]) -> Result<bool> {
    let r0 = args.encoder(&cfg)?;
    info!(
        "running {} seed(s) × {} variant(s)",
        cfg.seeds.len(),
        cfg.variants.len()
    );
    let report = run_sweep_with(&cfg, &r0)?;
    emit_report(&report, &args.out, formats)?;
    print!("{}", cftlab::harness::summary_csv(&report)?);
    Ok(report_outcome(&report))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_jsonl(&pretrain_corpus(cfg)?, out.join("pretrain.jsonl"))?;
    for &seed in &cfg.seeds {
        let c = build_corpus(cfg, cfg.n_train_per_class, seed, cfg.train_ratio)?;
        save_jsonl(&c, out.join(format!("train_seed{seed}.jsonl")))?;
    }
    let id = build_corpus(cfg, cfg.n_test_per_class, cfg.test_seed, cfg.train_ratio)?;
    save_jsonl(&id, out.join(format!("test_id_{}.jsonl", cfg.train_ratio)))?;
    for &r in &cfg.test_ratios {
        let c = build_corpus(cfg, cfg.n_test_per_class, cfg.test_seed, r)?;
        save_jsonl(&c, out.join(format!("test_ood_{r}.jsonl")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(args) => {
            gen_data(&args.config()?, &args.out)?;
            Ok(true)
        }
        Command::Pretrain(args) => {
            let cfg = args.config()?;
            let r0 = pretrain(&cfg)?;
            let path = if args.out.extension().is_some() {
                args.out.clone()
            } else {
                std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
                    path: args.out.clone(),
                    source: e,
                })?;
                args.out.join("encoder.json")
            };
            r0.save(&path)?;
            println!("{} {}", path.display(), r0.checksum());
            Ok(true)
        }
        Command::Train(args) => {
            let cfg = RunConfig {
                test_ratios: vec![],
                ..args.config()?
            };
            sweep(&args, cfg, &[Format::Json, Format::Summary, Format::Boxplot])
        }
        Command::Eval(args) => {
            let cfg = args.config()?;
            sweep(&args, cfg, &[Format::Json, Format::Summary, Format::Boxplot])
        }
        Command::Sweep(args) => {
            let cfg = args.config()?;
            sweep(&args, cfg, &Format::ALL)
        }
        Command::Analyze { run, axis, values } => {
            let cfg = run.config()?;
            let mut ok = true;
            for (v, report) in sweep_analyses(&cfg, axis, &values)? {
                let dir = run.out.join(format!("{axis:?}_{v}").to_lowercase());
                emit_report(&report, &dir, &Format::ALL)?;
                println!("# {axis:?} = {v}");
                print!("{}", cftlab::harness::summary_csv(&report)?);
                ok &= report_outcome(&report);
            }
            Ok(ok)
        }
        Command::VerifyScm { trials, seed, out } => {
            let report = verify(trials, seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(p) = out {
                std::fs::write(&p, &text).map_err(|e| Error::Io { path: p, source: e })?;
            }
            println!("{text}");
            Ok(report.pass)
        }
        Command::Plot { report, out } => {
            let report = EvalReport::load(&report)?;
            std::fs::write(&out, render_svg(&report)).map_err(|e| Error::Io { path: out, source: e })?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
