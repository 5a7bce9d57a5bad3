//! Comparison systems: the frozen-encoder probe, plain fine-tuning, weight
//! averaging along the trajectory, weight interpolation towards the
//! pretrained model, and the CFT ablations.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::heads::{linear_on_tape, CLS};
use crate::metrics::score;
use crate::numeric::{adamw_step, softmax, OptimConfig, ParamStore, Tape, Tensor};
use crate::pipeline::{predict_all, train, Features, Predictions, Predictor, TrainConfig, TrainedCFT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Sft0,
    Sft,
    Swa,
    Wise,
    Cft,
    CftN,
    CftC,
    CftPhi,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::Sft0,
        VariantKind::Sft,
        VariantKind::Swa,
        VariantKind::Wise,
        VariantKind::Cft,
        VariantKind::CftN,
        VariantKind::CftC,
        VariantKind::CftPhi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Sft0 => "sft0",
            VariantKind::Sft => "sft",
            VariantKind::Swa => "swa",
            VariantKind::Wise => "wise",
            VariantKind::Cft => "cft",
            VariantKind::CftN => "cft-n",
            VariantKind::CftC => "cft-c",
            VariantKind::CftPhi => "cft-phi",
        }
    }

    pub fn is_cft(self) -> bool {
        matches!(
            self,
            VariantKind::Cft | VariantKind::CftN | VariantKind::CftC | VariantKind::CftPhi
        )
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        VariantKind::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub wise_alpha: f64,
    /// Epoch snapshots averaged by SWA; `None` means the last quarter.
    pub swa_window: Option<usize>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            wise_alpha: 0.5,
            swa_window: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.wise_alpha) {
            return Err(Error::Config(format!("wise_alpha {} outside [0,1]", self.wise_alpha)));
        }
        if self.swa_window == Some(0) {
            return Err(Error::Config("swa_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Encoder plus linear classifier on its pooled output.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub encoder: EncoderModel,
    /// `cls.w` and `cls.b`.
    pub head: ParamStore,
}

impl ClassifierModel {
    pub fn checksum(&self) -> String {
        format!("{}:{}", self.encoder.checksum(), self.head.checksum())
    }

    pub fn predict(&self, feats: &Features, batch_size: usize) -> Result<Predictions> {
        let all: Vec<usize> = (0..feats.len()).collect();
        let mut probs = Vec::with_capacity(feats.len());
        for chunk in all.chunks(batch_size.max(1)) {
            let r = feats.encode(&self.encoder, chunk)?;
            probs.extend(head_probs(&self.head, r)?);
        }
        let labels = probs.iter().map(|p: &[f64; 2]| u8::from(p[1] > p[0])).collect();
        Ok(Predictions { probs, labels })
    }
}

fn head_probs(head: &ParamStore, r: Tensor) -> Result<Vec<[f64; 2]>> {
    let mut tape = Tape::new();
    let rv = tape.constant(r);
    let l = linear_on_tape(&mut tape, head, CLS, rv)?;
    let lv = tape.value(l);
    (0..lv.rows())
        .map(|i| {
            let p = softmax(lv.row(i))?;
            Ok([p[0], p[1]])
        })
        .collect()
}

fn classifier_head(bundle: &ParamStore) -> Result<ParamStore> {
    let mut head = ParamStore::new();
    for name in ["cls.w", "cls.b"] {
        let t = bundle.get(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
        head.insert(name, t.clone())?;
    }
    Ok(head)
}

impl TrainedCFT {
    /// R1 with its classifier.
    pub fn classifier(&self) -> Result<ClassifierModel> {
        Ok(ClassifierModel {
            encoder: EncoderModel {
                params: self.r1.params.fresh_copy(),
                ..self.r1.clone()
            },
            head: classifier_head(&self.bundle.params)?,
        })
    }
}

/// Linear probe on the frozen pretrained encoder, trained at `cfg.lr_probe`
/// and selected by validation F1. Zero epochs returns the initial probe.
pub fn train_sft0(corpus: &Corpus, r0: &EncoderModel, cfg: &TrainConfig) -> Result<ClassifierModel> {
    let check = TrainConfig {
        epochs: cfg.epochs.max(1),
        ..cfg.clone()
    };
    check.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let (train_set, val_set) = corpus.split(cfg.holdout_frac, cfg.seed)?;
    let feats = Features::new(&train_set, r0, &cfg.phi)?;
    let val = Features::new(&val_set, r0, &cfg.phi)?;
    let all: Vec<usize> = (0..feats.len()).collect();
    let pooled = feats.encode(r0, &all)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = 1.0 / (r0.d as f64).sqrt();
    let mut head = ParamStore::new();
    head.insert("cls.w", Tensor::randn(&[r0.d, 2], std, &mut rng))?;
    head.insert("cls.b", Tensor::zeros(&[2]))?;
    let opt = OptimConfig {
        weight_decay: cfg.weight_decay,
        ..OptimConfig::with_lr(cfg.lr_probe)
    };
    let mut model = ClassifierModel {
        encoder: r0.clone(),
        head,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order = all;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| pooled.row(i).to_vec()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| feats.labels[i] as usize).collect();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_rows(&rows)?);
            let l = linear_on_tape(&mut tape, &model.head, CLS, x)?;
            let loss = tape.cross_entropy(l, &labels)?;
            let grads = tape.backward(loss)?;
            adamw_step(&mut model.head, &grads, &opt)?;
        }
        let preds = model.predict(&val, cfg.batch_size)?;
        let score = score(cfg.f1_mode, &preds.labels, &val.labels)?;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, model.head.fresh_copy()));
        }
    }
    if let Some((_, head)) = best {
        model.head = head;
    }
    model.head = model.head.fresh_copy();
    Ok(model)
}

/// Full fine-tuning of encoder and classifier: the CFT loop with both
/// auxiliary loss weights at zero, selected by the classifier's F1.
pub fn train_sft(corpus: &Corpus, r0: &EncoderModel, cfg: &TrainConfig) -> Result<TrainedCFT> {
    let sft_cfg = TrainConfig {
        lambda_c: 0.0,
        lambda_y: 0.0,
        select_by: Predictor::SftHead,
        ..cfg.clone()
    };
    train(corpus, r0, &sft_cfg)
}

/// Elementwise mean of stores with identical layout, as a running mean so
/// that averaging identical stores is exact.
pub fn swa_average(stores: &[ParamStore]) -> Result<ParamStore> {
    let first = stores
        .first()
        .ok_or_else(|| Error::Input("SWA needs at least one checkpoint".into()))?;
    if let Some(i) = stores.iter().position(|s| !s.same_layout(first)) {
        return Err(Error::Shape(format!(
            "checkpoint {i} differs in layout from checkpoint 0"
        )));
    }
    let mut out = first.fresh_copy();
    for (k, store) in stores.iter().enumerate().skip(1) {
        let n = (k + 1) as f64;
        let names: Vec<String> = out.names().cloned().collect();
        for name in names {
            let x = store.get(&name).expect("same layout");
            let mut avg = out.get(&name).expect("same layout").clone();
            for (a, v) in avg.data_mut().iter_mut().zip(x.data()) {
                *a += (v - *a) / n;
            }
            out.set(&name, avg)?;
        }
    }
    Ok(out)
}

/// `alpha·finetuned + (1 − alpha)·pretrained`, evaluated as
/// `p + alpha·(f − p)`; the end points return copies of the inputs.
pub fn wise_interpolate(pretrained: &ParamStore, finetuned: &ParamStore, alpha: f64) -> Result<ParamStore> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0,1]")));
    }
    if !pretrained.same_layout(finetuned) {
        return Err(Error::Shape("interpolated models differ in layout".into()));
    }
    if alpha == 0.0 {
        return Ok(pretrained.fresh_copy());
    }
    if alpha == 1.0 {
        return Ok(finetuned.fresh_copy());
    }
    let mut out = pretrained.fresh_copy();
    for (name, f) in finetuned.iter() {
        let mut p = out.get(name).expect("same layout").clone();
        for (a, b) in p.data_mut().iter_mut().zip(f.data()) {
            *a += alpha * (b - *a);
        }
        out.set(name, p)?;
    }
    Ok(out)
}

fn same_vocab(a: &EncoderModel, b: &EncoderModel) -> Result<()> {
    if a.vocab != b.vocab || a.d != b.d {
        return Err(Error::Shape("models use different vocabularies".into()));
    }
    Ok(())
}

pub fn swa_models(models: &[ClassifierModel]) -> Result<ClassifierModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::Input("SWA needs at least one checkpoint".into()))?;
    for m in models {
        same_vocab(&first.encoder, &m.encoder)?;
    }
    let enc: Vec<ParamStore> = models.iter().map(|m| m.encoder.params.clone()).collect();
    let heads: Vec<ParamStore> = models.iter().map(|m| m.head.clone()).collect();
    Ok(ClassifierModel {
        encoder: EncoderModel {
            params: swa_average(&enc)?,
            ..first.encoder.clone()
        },
        head: swa_average(&heads)?,
    })
}

pub fn wise_models(pretrained: &ClassifierModel, finetuned: &ClassifierModel, alpha: f64) -> Result<ClassifierModel> {
    same_vocab(&pretrained.encoder, &finetuned.encoder)?;
    Ok(ClassifierModel {
        encoder: EncoderModel {
            params: wise_interpolate(&pretrained.encoder.params, &finetuned.encoder.params, alpha)?,
            ..finetuned.encoder.clone()
        },
        head: wise_interpolate(&pretrained.head, &finetuned.head, alpha)?,
    })
}

/// Default SWA window: the last quarter of the epochs, at least one.
pub fn default_swa_window(epochs: usize) -> usize {
    epochs.div_ceil(4).max(1)
}

/// SWA over the last `window` epoch snapshots of a plain fine-tuning run.
pub fn swa_from_run(run: &TrainedCFT, window: usize) -> Result<ClassifierModel> {
    if window == 0 || run.trajectory.is_empty() {
        return Err(Error::Input("SWA needs a non-empty window and trajectory".into()));
    }
    let start = run.trajectory.len().saturating_sub(window);
    let models = run.trajectory[start..]
        .iter()
        .map(|s| run.with_snapshot(s)?.classifier())
        .collect::<Result<Vec<_>>>()?;
    swa_models(&models)
}

#[allow(clippy::large_enum_variant)]
/// Trained artefact behind a variant.
#[derive(Clone, Debug)]
pub enum Trained {
    Classifier(ClassifierModel),
    Cft(TrainedCFT),
}

/// Predictions of `spec.kind` from its artefact. The CFT family needs a
/// `Trained::Cft`; the rest a `Trained::Classifier`.
pub fn variant_predict(
    spec: &VariantSpec,
    trained: &Trained,
    feats: &Features,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Predictions> {
    match (spec.kind, trained) {
        (VariantKind::Cft, Trained::Cft(t)) => predict_all(t, feats, Predictor::Adjusted, k, batch_size, seed),
        (VariantKind::CftN, Trained::Cft(t)) => predict_all(t, feats, Predictor::Unadjusted, 1, batch_size, seed),
        (VariantKind::CftC, Trained::Cft(t)) => predict_all(t, feats, Predictor::COnly, 1, batch_size, seed),
        (VariantKind::CftPhi, Trained::Cft(t)) => predict_all(t, feats, Predictor::PhiOnly, 1, batch_size, seed),
        (kind, Trained::Classifier(m)) if !kind.is_cft() => m.predict(feats, batch_size),
        (kind, _) => Err(Error::Variant(format!("artefact does not match variant {kind}"))),
    }
}
