//! Experiment driver: corpora, training of every variant over seeds,
//! evaluation across spurious ratios, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    default_swa_window, swa_from_run, train_sft, train_sft0, variant_predict, wise_models, Trained, VariantKind,
    VariantSpec,
};
use crate::corpus::{
    assign_platform_sources, filter_min_frequency, generate_base_corpus, inject, simulator_vocabulary, Corpus,
    Experiment, InjectionConfig, VocabSpec,
};
use crate::encoder::{pretrain_r0_with_vocab, EncoderModel, PhiConfig, PhiMode, PretrainConfig, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{mean, score, F1Mode};
use crate::pipeline::{train, Features, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub train_ratio: f64,
    pub test_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub variants: Vec<VariantKind>,
    pub spurious_level: usize,
    /// Φ shuffles averaged by the adjusted predictor at test time.
    pub k_samples: usize,
    /// Probability that a sentiment word matches the label.
    pub polarity: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_probe: f64,
    pub lr_cmap: Option<f64>,
    pub lr_heads: Option<f64>,
    pub phi_mode: PhiMode,
    pub phi_patches: usize,
    pub wise_alpha: f64,
    pub swa_window: Option<usize>,
    pub f1_mode: F1Mode,
    /// Seed of every test corpus, shared by all variants and seeds.
    pub test_seed: u64,
    pub pretrain_seed: u64,
    pub pretrain_per_class: usize,
    pub pretrain_epochs: usize,
    pub d: usize,
    /// Label–platform agreement of the source simulator.
    pub source_agreement: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::desk();
        Self {
            experiment: Experiment::Stopword,
            train_ratio: 0.9,
            test_ratios: vec![0.9, 0.7, 0.5, 0.3, 0.1],
            seeds: vec![1, 2, 3, 4, 5],
            n_train_per_class: 2000,
            n_test_per_class: 500,
            variants: VariantKind::ALL.to_vec(),
            spurious_level: 3,
            k_samples: train.k_samples,
            polarity: 0.7,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr_main,
            lr_probe: train.lr_probe,
            lr_cmap: train.lr_cmap,
            lr_heads: train.lr_heads,
            phi_mode: train.phi.mode,
            phi_patches: train.phi.n_patches,
            wise_alpha: 0.5,
            swa_window: None,
            f1_mode: F1Mode::Positive,
            test_seed: 4242,
            pretrain_seed: 999,
            pretrain_per_class: 2000,
            pretrain_epochs: PretrainConfig::default().epochs,
            d: PretrainConfig::default().d,
            source_agreement: 1.0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for &r in self.test_ratios.iter().chain([&self.train_ratio]) {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("ratio {r} outside [0,1]")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("no variants requested".into()));
        }
        if self.n_train_per_class == 0 || self.n_test_per_class == 0 || self.pretrain_per_class == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.polarity) {
            return Err(Error::Config(format!("polarity {} outside [0,1]", self.polarity)));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        self.injection(self.train_ratio).validate()?;
        self.variant_spec(VariantKind::Wise).validate()?;
        self.train_config(self.seeds[0]).validate()
    }

    pub fn vocab(&self) -> VocabSpec {
        VocabSpec {
            polarity: self.polarity,
            ..VocabSpec::default()
        }
    }

    pub fn injection(&self, ratio: f64) -> InjectionConfig {
        InjectionConfig {
            level: self.spurious_level,
            ..InjectionConfig::for_experiment(self.experiment, ratio)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_main: self.lr,
            lr_probe: self.lr_probe,
            lr_cmap: self.lr_cmap,
            lr_heads: self.lr_heads,
            seed,
            phi: self.phi(),
            f1_mode: self.f1_mode,
            ..TrainConfig::desk()
        }
    }

    pub fn phi(&self) -> PhiConfig {
        PhiConfig {
            n_patches: self.phi_patches,
            mode: self.phi_mode,
        }
    }

    pub fn variant_spec(&self, kind: VariantKind) -> VariantSpec {
        VariantSpec {
            kind,
            wise_alpha: self.wise_alpha,
            swa_window: self.swa_window,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            d: self.d,
            epochs: self.pretrain_epochs,
            ..PretrainConfig::default()
        }
    }
}

/// Simulated corpus for `experiment` at `ratio`, fully determined by the
/// arguments.
pub fn build_corpus(cfg: &RunConfig, n_per_class: usize, seed: u64, ratio: f64) -> Result<Corpus> {
    let mut base = generate_base_corpus(n_per_class, &cfg.vocab(), seed)?;
    if cfg.experiment == Experiment::Source {
        base = assign_platform_sources(&base, cfg.source_agreement, seed.wrapping_add(7))?;
    }
    let icfg = cfg.injection(ratio);
    let base = filter_min_frequency(&base, &icfg);
    inject(cfg.experiment, &base, &icfg, seed.wrapping_add(13))
}

/// Clean corpus the frozen encoder is pretrained on.
pub fn pretrain_corpus(cfg: &RunConfig) -> Result<Corpus> {
    generate_base_corpus(cfg.pretrain_per_class, &cfg.vocab(), cfg.pretrain_seed)
}

/// Frozen encoder over the full simulator vocabulary, pretrained on clean
/// text only.
pub fn pretrain(cfg: &RunConfig) -> Result<EncoderModel> {
    let words = simulator_vocabulary(&cfg.vocab(), &cfg.injection(cfg.train_ratio), cfg.experiment);
    pretrain_r0_with_vocab(&pretrain_corpus(cfg)?, Vocab::from_words(words), &cfg.pretrain_config())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Id,
    Ood,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: VariantKind,
    pub seed: u64,
    pub split: Split,
    pub ratio: f64,
    pub f1: Option<f64>,
    /// Fraction of examples predicted positive.
    pub positive_rate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub variant: VariantKind,
    pub split: Split,
    pub ratio: f64,
    /// Mean over the seeds that succeeded; `None` if none did.
    pub mean: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub encoder_checksum: String,
    pub corpus_checksums: BTreeMap<String, String>,
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

impl EvalReport {
    /// `(split, ratio)` columns in report order: ID first, then each test
    /// ratio.
    pub fn columns(&self) -> Vec<(Split, f64)> {
        columns(&self.config)
    }

    pub fn aggregate(&self, variant: VariantKind, split: Split, ratio: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.variant == variant && a.split == split && a.ratio == ratio)
    }

    /// Seed-mean F1 of `variant` on the OOD split at `ratio`.
    pub fn ood_mean(&self, variant: VariantKind, ratio: f64) -> Option<f64> {
        self.aggregate(variant, Split::Ood, ratio).and_then(|a| a.mean)
    }

    pub fn id_mean(&self, variant: VariantKind) -> Option<f64> {
        self.aggregate(variant, Split::Id, self.config.train_ratio)
            .and_then(|a| a.mean)
    }

    /// Seeds whose `variant` predicted a single class on every split.
    pub fn single_class_seeds(&self, variant: VariantKind) -> Vec<u64> {
        self.config
            .seeds
            .iter()
            .copied()
            .filter(|&s| {
                let mut rates = self
                    .cells
                    .iter()
                    .filter(|c| c.variant == variant && c.seed == s)
                    .map(|c| c.positive_rate);
                rates.all(|r| matches!(r, Some(p) if p == 0.0 || p == 1.0))
            })
            .collect()
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.f1.is_none()).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn columns(cfg: &RunConfig) -> Vec<(Split, f64)> {
    std::iter::once((Split::Id, cfg.train_ratio))
        .chain(cfg.test_ratios.iter().map(|&r| (Split::Ood, r)))
        .collect()
}

fn split_key(split: Split, ratio: f64) -> String {
    match split {
        Split::Id => format!("id_{ratio}"),
        Split::Ood => format!("ood_{ratio}"),
    }
}

/// Artefacts trained for one seed; each entry fails independently.
struct SeedArtefacts {
    sft0: Option<Result<Trained>>,
    sft: Option<Result<Trained>>,
    swa: Option<Result<Trained>>,
    wise: Option<Result<Trained>>,
    cft: Option<Result<Trained>>,
}

fn train_seed(cfg: &RunConfig, r0: &EncoderModel, corpus: &Corpus, seed: u64) -> SeedArtefacts {
    let tcfg = cfg.train_config(seed);
    let want = |ks: &[VariantKind]| cfg.variants.iter().any(|v| ks.contains(v));
    let need_sft0 = want(&[VariantKind::Sft0, VariantKind::Wise]);
    let need_sft = want(&[VariantKind::Sft, VariantKind::Swa, VariantKind::Wise]);
    let need_cft = cfg.variants.iter().any(|v| v.is_cft());
    let sft0 = need_sft0.then(|| train_sft0(corpus, r0, &tcfg));
    let sft_run = need_sft.then(|| train_sft(corpus, r0, &tcfg));
    let sft = sft_run
        .as_ref()
        .map(|r| r.as_ref().map_err(clone_err).and_then(|t| t.classifier()));
    let swa = cfg.variants.contains(&VariantKind::Swa).then(|| {
        let run = sft_run.as_ref().expect("trained").as_ref().map_err(clone_err)?;
        let window = cfg.swa_window.unwrap_or_else(|| default_swa_window(tcfg.epochs));
        swa_from_run(run, window).map(Trained::Classifier)
    });
    let wise = cfg.variants.contains(&VariantKind::Wise).then(|| {
        let pre = sft0.as_ref().expect("trained").as_ref().map_err(clone_err)?;
        let fine = sft.as_ref().expect("trained").as_ref().map_err(clone_err)?;
        wise_models(pre, fine, cfg.wise_alpha).map(Trained::Classifier)
    });
    SeedArtefacts {
        sft0: sft0.map(|r| r.map(Trained::Classifier)),
        sft: sft.map(|r| r.map(Trained::Classifier)),
        swa,
        wise,
        cft: need_cft.then(|| train(corpus, r0, &tcfg).map(Trained::Cft)),
    }
}

fn clone_err(e: &Error) -> Error {
    Error::Input(e.to_string())
}

impl SeedArtefacts {
    fn get(&self, kind: VariantKind) -> std::result::Result<&Trained, String> {
        let slot = match kind {
            VariantKind::Sft0 => &self.sft0,
            VariantKind::Sft => &self.sft,
            VariantKind::Swa => &self.swa,
            VariantKind::Wise => &self.wise,
            _ => &self.cft,
        };
        match slot {
            Some(Ok(t)) => Ok(t),
            Some(Err(e)) => Err(e.to_string()),
            None => Err(format!("{kind} was not trained")),
        }
    }
}

fn run_seed(cfg: &RunConfig, r0: &EncoderModel, tests: &[(Split, f64, Features)], seed: u64) -> (String, Vec<Cell>) {
    let mut cells = Vec::new();
    let corpus = match build_corpus(cfg, cfg.n_train_per_class, seed, cfg.train_ratio) {
        Ok(c) => c,
        Err(e) => {
            for &v in &cfg.variants {
                for (split, ratio, _) in tests {
                    cells.push(Cell {
                        variant: v,
                        seed,
                        split: *split,
                        ratio: *ratio,
                        f1: None,
                        positive_rate: None,
                        error: Some(e.to_string()),
                    });
                }
            }
            return (String::new(), cells);
        }
    };
    let arts = train_seed(cfg, r0, &corpus, seed);
    for &v in &cfg.variants {
        let spec = cfg.variant_spec(v);
        for (split, ratio, feats) in tests {
            let outcome = arts.get(v).and_then(|t| {
                variant_predict(&spec, t, feats, cfg.k_samples, cfg.batch_size, seed)
                    .and_then(|p| {
                        let f = score(cfg.f1_mode, &p.labels, &feats.labels)?;
                        let pos = p.labels.iter().filter(|&&l| l == 1).count() as f64 / p.labels.len() as f64;
                        Ok((f, pos))
                    })
                    .map_err(|e| e.to_string())
            });
            let (f1, positive_rate, error) = match outcome {
                Ok((f, pos)) => (Some(f), Some(pos), None),
                Err(e) => (None, None, Some(e)),
            };
            cells.push(Cell {
                variant: v,
                seed,
                split: *split,
                ratio: *ratio,
                f1,
                positive_rate,
                error,
            });
        }
    }
    (corpus.checksum(), cells)
}

/// Full grid with a freshly pretrained encoder.
pub fn run_sweep(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let r0 = pretrain(cfg)?;
    run_sweep_with(cfg, &r0)
}

/// Full grid over `cfg.variants × cfg.seeds × (ID + test ratios)` with a
/// given frozen encoder. Seeds train in parallel; a failing cell is
/// recorded and the sweep continues.
pub fn run_sweep_with(cfg: &RunConfig, r0: &EncoderModel) -> Result<EvalReport> {
    cfg.validate()?;
    let mut checksums = BTreeMap::new();
    let mut tests = Vec::new();
    for (split, ratio) in columns(cfg) {
        let corpus = build_corpus(cfg, cfg.n_test_per_class, cfg.test_seed, ratio)?;
        checksums.insert(format!("test_{}", split_key(split, ratio)), corpus.checksum());
        tests.push((split, ratio, Features::new(&corpus, r0, &cfg.phi())?));
    }
    checksums.insert("pretrain".into(), pretrain_corpus(cfg)?.checksum());
    let per_seed: Vec<(u64, String, Vec<Cell>)> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let tests = &tests;
                s.spawn(move || {
                    let (sum, cells) = run_seed(cfg, r0, tests, seed);
                    (seed, sum, cells)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let mut by_variant: BTreeMap<VariantKind, Vec<Cell>> = BTreeMap::new();
    for (seed, sum, cells) in per_seed {
        if !sum.is_empty() {
            checksums.insert(format!("train_seed_{seed}"), sum);
        }
        for c in cells {
            by_variant.entry(c.variant).or_default().push(c);
        }
    }
    let cells: Vec<Cell> = cfg
        .variants
        .iter()
        .flat_map(|v| by_variant.remove(v).unwrap_or_default())
        .collect();
    let aggregates = aggregate(cfg, &cells);
    Ok(EvalReport {
        config: cfg.clone(),
        encoder_checksum: r0.checksum(),
        corpus_checksums: checksums,
        cells,
        aggregates,
    })
}

fn aggregate(cfg: &RunConfig, cells: &[Cell]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &variant in &cfg.variants {
        for (split, ratio) in columns(cfg) {
            let per_seed: Vec<Option<f64>> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    cells
                        .iter()
                        .find(|c| c.variant == variant && c.seed == seed && c.split == split && c.ratio == ratio)
                        .and_then(|c| c.f1)
                })
                .collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            out.push(Aggregate {
                variant,
                split,
                ratio,
                mean: (!ok.is_empty()).then(|| mean(&ok)),
                per_seed,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Summary,
    Boxplot,
    Svg,
}

impl Format {
    pub const ALL: [Format; 4] = [Format::Json, Format::Summary, Format::Boxplot, Format::Svg];
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows of `variant, id, <ratio>…` seed means.
pub fn summary_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string(), "id".to_string()];
    header.extend(report.config.test_ratios.iter().map(|r| format!("ood_{r}")));
    w.write_record(&header)?;
    for &v in &report.config.variants {
        let mut row = vec![v.name().to_string()];
        for (split, ratio) in report.columns() {
            row.push(fmt_opt(report.aggregate(v, split, ratio).and_then(|a| a.mean)));
        }
        w.write_record(&row)?;
    }
    finish_csv(w)
}

/// One row per `(variant, seed, split, ratio)` cell.
pub fn boxplot_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "seed", "split", "ratio", "f1"])?;
    for c in &report.cells {
        let split = match c.split {
            Split::Id => "id",
            Split::Ood => "ood",
        };
        w.write_record([
            c.variant.name().to_string(),
            c.seed.to_string(),
            split.to_string(),
            c.ratio.to_string(),
            fmt_opt(c.f1),
        ])?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box plots of per-seed F1, one group per split and one box per variant.
pub fn render_svg(report: &EvalReport) -> String {
    let cols = report.columns();
    let variants = &report.config.variants;
    let (left, top, plot_h, group_w) = (60.0, 30.0, 300.0, 30.0 + 14.0 * variants.len() as f64);
    let width = left + group_w * cols.len() as f64 + 20.0;
    let height = top + plot_h + 60.0 + 16.0 * variants.len() as f64;
    let y = |f: f64| top + plot_h * (1.0 - f);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for tick in 0..=5 {
        let f = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{y0}" y2="{y0}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{f:.1}</text>"##,
            width - 20.0,
            left - 6.0,
            y(f) + 4.0,
            y0 = y(f)
        );
    }
    for (g, &(split, ratio)) in cols.iter().enumerate() {
        let gx = left + group_w * g as f64;
        let label = match split {
            Split::Id => format!("ID {ratio}"),
            Split::Ood => format!("OOD {ratio}"),
        };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            gx + group_w / 2.0,
            top + plot_h + 16.0
        );
        for (i, &v) in variants.iter().enumerate() {
            let Some(agg) = report.aggregate(v, split, ratio) else {
                continue;
            };
            let mut vals: Vec<f64> = agg.per_seed.iter().flatten().copied().collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(f64::total_cmp);
            let x = gx + 15.0 + 14.0 * i as f64;
            let colour = PALETTE[i % PALETTE.len()];
            let (lo, q1, med, q3, hi) = (
                vals[0],
                quantile(&vals, 0.25),
                quantile(&vals, 0.5),
                quantile(&vals, 0.75),
                vals[vals.len() - 1],
            );
            let _ = writeln!(
                s,
                r#"<line x1="{xc}" x2="{xc}" y1="{}" y2="{}" stroke="{colour}"/><rect x="{x}" y="{}" width="10" height="{}" fill="{colour}" fill-opacity="0.5" stroke="{colour}"/><line x1="{x}" x2="{}" y1="{ym}" y2="{ym}" stroke="black"/>"#,
                y(hi),
                y(lo),
                y(q3),
                (y(q1) - y(q3)).max(0.5),
                x + 10.0,
                xc = x + 5.0,
                ym = y(med)
            );
        }
    }
    for (i, v) in variants.iter().enumerate() {
        let ly = top + plot_h + 36.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            ly - 9.0,
            PALETTE[i % PALETTE.len()],
            left + 16.0,
            ly,
            v.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the requested report files into `out_dir`, creating it if needed.
pub fn emit_report(report: &EvalReport, out_dir: &Path, formats: &[Format]) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for f in formats {
        match f {
            Format::Json => write_file(&out_dir.join("report.json"), &serde_json::to_string_pretty(report)?)?,
            Format::Summary => write_file(&out_dir.join("summary.csv"), &summary_csv(report)?)?,
            Format::Boxplot => write_file(&out_dir.join("boxplot.csv"), &boxplot_csv(report)?)?,
            Format::Svg => write_file(&out_dir.join("plot.svg"), &render_svg(report))?,
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    SpuriousLevel,
    TrainSize,
    KSamples,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "spurious_level" | "level" => Ok(Axis::SpuriousLevel),
            "train_size" => Ok(Axis::TrainSize),
            "k_samples" | "k" => Ok(Axis::KSamples),
            other => Err(Error::Config(format!("unknown analysis axis `{other}`"))),
        }
    }
}

impl Axis {
    pub fn apply(self, cfg: &RunConfig, value: usize) -> RunConfig {
        let mut out = cfg.clone();
        match self {
            Axis::SpuriousLevel => out.spurious_level = value,
            Axis::TrainSize => out.n_train_per_class = value,
            Axis::KSamples => out.k_samples = value,
        }
        out
    }
}

/// One sweep per axis value, all sharing `cfg.seeds`.
pub fn sweep_analyses(cfg: &RunConfig, axis: Axis, values: &[usize]) -> Result<Vec<(usize, EvalReport)>> {
    if values.is_empty() {
        return Err(Error::Config("no analysis values given".into()));
    }
    values
        .iter()
        .map(|&v| Ok((v, run_sweep(&axis.apply(cfg, v))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            test_ratios: vec![0.1],
            seeds: vec![1],
            variants: vec![VariantKind::Sft],
            n_train_per_class: 40,
            n_test_per_class: 20,
            pretrain_per_class: 40,
            pretrain_epochs: 1,
            epochs: 1,
            d: 8,
            ..RunConfig::default()
        }
    }

    #[test]
    fn one_seed_one_variant_one_ratio_gives_two_cells() {
        let r = run_sweep(&tiny()).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.cells[0].split, Split::Id);
        assert_eq!(r.cells[1].split, Split::Ood);
    }

    #[test]
    fn toml_mirrors_field_names() {
        let cfg = RunConfig::from_toml_str("experiment = \"source\"\nseeds = [7]\nvariants = [\"cft-n\"]\n").unwrap();
        assert_eq!(cfg.experiment, Experiment::Source);
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.variants, vec![VariantKind::CftN]);
        assert!(RunConfig::from_toml_str("epoch = 3").is_err());
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            RunConfig {
                seeds: vec![],
                ..tiny()
            },
            RunConfig {
                test_ratios: vec![1.5],
                ..tiny()
            },
            RunConfig {
                variants: vec![],
                ..tiny()
            },
            RunConfig {
                wise_alpha: -0.1,
                ..tiny()
            },
        ];
        for cfg in bad {
            assert!(run_sweep(&cfg).is_err());
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
