//! Causal fine-tuning: the training loop with same-label resampling and
//! sequential head updates, and K-sample interventional prediction with the
//! in-batch Φ shuffle.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::patch_weights;
use crate::encoder::{encode_on_tape, EncoderModel, PhiConfig, PhiMode, EMBEDDING};
use crate::error::{Error, Result};
use crate::heads::{
    adjusted_on_tape, c_invariance_on_tape, c_map_on_tape, linear_on_tape, mlp_on_tape, BundleShape, CausalBundle, CLS,
    HEAD_C, HEAD_PHI,
};
use crate::metrics::{score, F1Mode};
use crate::numeric::{adamw_step, softmax, Bag, OptimConfig, ParamStore, Tape, Tensor};

/// Which head produces predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// Classifier on R1.
    SftHead,
    /// Adjustment head averaged over K in-batch Φ shuffles.
    Adjusted,
    /// Adjustment head on the example's own Φ.
    Unadjusted,
    /// Head on c only.
    COnly,
    /// Head on Φ only.
    PhiOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    pub lr_probe: f64,
    /// Learning rate of the C-map; `None` uses `lr_main`.
    pub lr_cmap: Option<f64>,
    /// Learning rate of the prediction heads on c and Φ; `None` uses `lr_main`.
    pub lr_heads: Option<f64>,
    pub weight_decay: f64,
    pub seed: u64,
    pub phi: PhiConfig,
    pub lambda_c: f64,
    pub lambda_y: f64,
    /// Hidden width of the perceptron heads.
    pub hidden: usize,
    /// Shuffles per batch when scoring the adjusted predictor.
    pub k_samples: usize,
    pub holdout_frac: f64,
    /// Predictor whose validation F1 picks the returned epoch.
    pub select_by: Predictor,
    /// F1 convention of the validation score.
    pub f1_mode: F1Mode,
    /// Use the anchor itself as its same-label partner when it is alone in
    /// its class.
    pub allow_self_partner: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr_main: 5e-5,
            lr_probe: 5e-4,
            lr_cmap: None,
            lr_heads: None,
            weight_decay: 0.01,
            seed: 1,
            phi: PhiConfig::default(),
            lambda_c: 1.0,
            lambda_y: 1.0,
            hidden: 32,
            k_samples: 10,
            holdout_frac: 0.2,
            select_by: Predictor::Adjusted,
            f1_mode: F1Mode::Positive,
            allow_self_partner: false,
        }
    }
}

impl TrainConfig {
    /// Rates for the default 32-wide encoder: faster main and probe rates
    /// than the defaults, a slow C-map and fast auxiliary heads.
    pub fn desk() -> Self {
        Self {
            lr_main: 1e-4,
            lr_probe: 1e-2,
            lr_cmap: Some(1e-4),
            lr_heads: Some(1e-2),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.k_samples < 1 {
            return Err(Error::Config("k_samples must be at least 1".into()));
        }
        if self.lambda_c < 0.0 || self.lambda_y < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        self.phi.validate()?;
        for lr in [self.lr_cmap, self.lr_heads].into_iter().flatten() {
            OptimConfig::with_lr(lr).validate()?;
        }
        OptimConfig::with_lr(self.lr_main).validate()?;
        OptimConfig::with_lr(self.lr_probe).validate()
    }

    fn optim(&self, lr: f64) -> OptimConfig {
        OptimConfig {
            weight_decay: self.weight_decay,
            ..OptimConfig::with_lr(lr)
        }
    }
}

/// Parameter values of the trainable side at one point of training.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub encoder: ParamStore,
    pub bundle: ParamStore,
}

#[derive(Clone, Debug)]
pub struct TrainedCFT {
    pub r0: EncoderModel,
    pub r1: EncoderModel,
    pub bundle: CausalBundle,
    pub phi: PhiConfig,
    /// 1-based.
    pub best_epoch: usize,
    pub val_history: Vec<f64>,
    /// End-of-epoch snapshots in order.
    pub trajectory: Vec<Snapshot>,
}

impl TrainedCFT {
    /// Copy with the trainable side replaced by `snap`.
    pub fn with_snapshot(&self, snap: &Snapshot) -> Result<Self> {
        if !snap.encoder.same_layout(&self.r1.params) || !snap.bundle.same_layout(&self.bundle.params) {
            return Err(Error::Shape("snapshot layout differs from the model".into()));
        }
        let mut out = self.clone();
        out.r1.params = snap.encoder.fresh_copy();
        out.bundle.params = snap.bundle.fresh_copy();
        Ok(out)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            encoder: self.r1.params.fresh_copy(),
            bundle: self.bundle.params.fresh_copy(),
        }
    }
}

/// Token bags of a corpus against one vocabulary: the mean-pooling bag and
/// the Φ bags (one per patch, or one merged bag in mean mode).
#[derive(Clone, Debug)]
pub struct Features {
    pub bags: Vec<Bag>,
    pub phi_bags: Vec<Vec<Bag>>,
    pub labels: Vec<u8>,
}

impl Features {
    pub fn new(corpus: &Corpus, model: &EncoderModel, phi: &PhiConfig) -> Result<Self> {
        phi.validate()?;
        let mut bags = Vec::with_capacity(corpus.len());
        let mut phi_bags = Vec::with_capacity(corpus.len());
        for (i, ex) in corpus.examples.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(Error::Input(format!("example {i} has no tokens")));
            }
            let ids = model.vocab.ids(&ex.tokens);
            bags.push(model.mean_bag(&ex.tokens));
            let patches: Vec<Bag> = patch_weights(ids.len(), phi.n_patches)
                .into_iter()
                .map(|p| p.into_iter().map(|(pos, w)| (ids[pos], w)).collect())
                .collect();
            phi_bags.push(match phi.mode {
                PhiMode::PatchConcat => patches,
                PhiMode::MeanOfPatchMeans => {
                    let n = patches.len() as f64;
                    vec![patches.into_iter().flatten().map(|(id, w)| (id, w / n)).collect()]
                }
            });
        }
        Ok(Self {
            bags,
            phi_bags,
            labels: corpus.examples.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    fn bags_of(&self, idx: &[usize]) -> Arc<Vec<Bag>> {
        Arc::new(idx.iter().map(|&i| self.bags[i].clone()).collect())
    }

    /// Encoder outputs for the selected examples, one row each.
    pub fn encode(&self, model: &EncoderModel, idx: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let r = encode_on_tape(&mut tape, &model.params, self.bags_of(idx))?;
        Ok(tape.value(r).clone())
    }

    /// Φ rows for the selected examples from `model`'s embedding layer.
    pub fn phi(&self, model: &EncoderModel, idx: &[usize]) -> Result<Tensor> {
        let emb = model
            .params
            .get(EMBEDDING)
            .ok_or_else(|| Error::UnknownParam(EMBEDDING.into()))?;
        let d = emb.cols();
        let width = self.phi_bags.first().map_or(0, |b| b.len()) * d;
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            for bag in &self.phi_bags[i] {
                let mut acc = vec![0.0; d];
                for &(id, w) in bag {
                    for (a, e) in acc.iter_mut().zip(emb.row(id)) {
                        *a += w * e;
                    }
                }
                data.extend(acc);
            }
        }
        Tensor::new(vec![idx.len(), width], data)
    }
}

/// Rows of `rows` reordered by a uniform random permutation.
pub fn shuffle_within_batch<T: Clone, R: Rng + ?Sized>(rows: &[T], rng: &mut R) -> Vec<T> {
    let perm = batch_permutation(rows.len(), rng);
    perm.into_iter().map(|j| rows[j].clone()).collect()
}

fn batch_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&j| t.row(j).to_vec()).collect();
    Tensor::from_rows(&rows).expect("rows share a width")
}

/// Per-label index pools of the training data with each index's position
/// in its pool.
#[derive(Clone, Debug)]
pub struct LabelPools {
    pools: [Vec<usize>; 2],
    position: Vec<usize>,
}

impl LabelPools {
    pub fn new(labels: &[u8]) -> Self {
        let mut pools = [Vec::new(), Vec::new()];
        let mut position = vec![0; labels.len()];
        for (i, &y) in labels.iter().enumerate() {
            let pool = &mut pools[y as usize];
            position[i] = pool.len();
            pool.push(i);
        }
        Self { pools, position }
    }

    /// Uniform draw from the anchor's label pool, excluding the anchor.
    pub fn partner<R: Rng + ?Sized>(&self, anchor: usize, label: u8, allow_self: bool, rng: &mut R) -> Result<usize> {
        let pool = &self.pools[label as usize];
        if pool.len() < 2 {
            if allow_self {
                log::warn!("label {label} has a single example; pairing it with itself");
                return Ok(anchor);
            }
            return Err(Error::SingletonLabel {
                label,
                count: pool.len(),
            });
        }
        let mut j = rng.random_range(0..pool.len() - 1);
        if j >= self.position[anchor] {
            j += 1;
        }
        Ok(pool[j])
    }
}

/// Losses observed during one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub sft: f64,
    pub invariance: Option<f64>,
    pub adjust: Option<f64>,
}

/// One optimisation step over the examples `batch` of `feats`.
///
/// (a) same-label partners x̃, x̄; (b) classifier loss on x̃ updates R1 and
/// its classifier; (c) invariance loss on x̄ updates the C-map;
/// (d) r1, c, Φ on x; (e) in-batch shuffle of Φ; (f) adjustment loss on
/// `(c, Φ′)` updates the adjustment head, and the c-only and Φ-only heads
/// learn from `c` and the unshuffled Φ. The frozen encoder is only read.
#[allow(clippy::too_many_arguments)]
pub fn cft_train_step(
    batch: &[usize],
    feats: &Features,
    pools: &LabelPools,
    r0: &EncoderModel,
    r1: &mut EncoderModel,
    bundle: &mut CausalBundle,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let labels: Vec<usize> = batch.iter().map(|&i| feats.labels[i] as usize).collect();
    let mut tilde = Vec::with_capacity(batch.len());
    let mut bar = Vec::with_capacity(batch.len());
    for &i in batch {
        let y = feats.labels[i];
        tilde.push(pools.partner(i, y, cfg.allow_self_partner, rng)?);
        bar.push(pools.partner(i, y, cfg.allow_self_partner, rng)?);
    }
    let opt = cfg.optim(cfg.lr_main);
    let mut losses = StepLosses::default();

    let mut tape = Tape::new();
    let r = encode_on_tape(&mut tape, &r1.params, feats.bags_of(&tilde))?;
    let logits = linear_on_tape(&mut tape, &bundle.params, CLS, r)?;
    let loss = tape.cross_entropy(logits, &labels)?;
    losses.sft = tape.scalar(loss);
    let grads = tape.backward(loss)?;
    let g_enc = grads.restricted_to(&r1.params);
    let g_head = grads.restricted_to(&bundle.params);
    adamw_step(&mut r1.params, &g_enc, &opt)?;
    adamw_step(&mut bundle.params, &g_head, &opt)?;

    if cfg.lambda_c > 0.0 {
        let rb0 = feats.encode(r0, &bar)?;
        let rb1 = feats.encode(r1, &bar)?;
        let mut tape = Tape::new();
        let a = tape.constant(rb0);
        let b = tape.constant(rb1);
        let loss = c_invariance_on_tape(&mut tape, &bundle.params, a, b)?;
        losses.invariance = Some(tape.scalar(loss));
        let grads = tape.backward(loss)?.scaled(cfg.lambda_c);
        adamw_step(
            &mut bundle.params,
            &grads,
            &cfg.optim(cfg.lr_cmap.unwrap_or(cfg.lr_main)),
        )?;
    }

    let perm = batch_permutation(batch.len(), rng);
    if cfg.lambda_y > 0.0 {
        let r = feats.encode(r1, batch)?;
        let c = bundle_c(bundle, r)?;
        let phi = feats.phi(r1, batch)?;
        let phi_shuffled = permute_rows(&phi, &perm);

        let mut tape = Tape::new();
        let cv = tape.constant(c);
        let pv = tape.constant(phi_shuffled);
        let own = tape.constant(phi);
        let adj = adjusted_on_tape(&mut tape, &bundle.params, cv, pv)?;
        let l_adj = tape.cross_entropy(adj, &labels)?;
        losses.adjust = Some(tape.scalar(l_adj));
        let l_adj = tape.scale(l_adj, cfg.lambda_y)?;
        let lc = mlp_on_tape(&mut tape, &bundle.params, HEAD_C, cv)?;
        let l_c = tape.cross_entropy(lc, &labels)?;
        let lp = mlp_on_tape(&mut tape, &bundle.params, HEAD_PHI, own)?;
        let l_p = tape.cross_entropy(lp, &labels)?;
        let total = tape.add(l_adj, l_c)?;
        let total = tape.add(total, l_p)?;
        let grads = tape.backward(total)?;
        adamw_step(
            &mut bundle.params,
            &grads,
            &cfg.optim(cfg.lr_heads.unwrap_or(cfg.lr_main)),
        )?;
    }
    Ok(losses)
}

fn bundle_c(bundle: &CausalBundle, r: Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let rv = tape.constant(r);
    let (_, c) = c_map_on_tape(&mut tape, &bundle.params, rv)?;
    Ok(tape.value(c).clone())
}

/// Class probabilities and argmax labels (ties go to label 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub probs: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

fn argmax(p: &[f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

fn row_softmax(logits: &Tensor) -> Result<Vec<[f64; 2]>> {
    (0..logits.rows())
        .map(|i| {
            let p = softmax(logits.row(i))?;
            Ok([p[0], p[1]])
        })
        .collect()
}

/// Predictions for one batch of examples.
///
/// The adjusted predictor averages `softmax(adjusted_logits(c_i, Φ′_k,i))`
/// over `k` shuffles of Φ within the batch; `rng` is only consumed there.
pub fn predict_batch(
    trained: &TrainedCFT,
    feats: &Features,
    idx: &[usize],
    predictor: Predictor,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 2]>> {
    if idx.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let r = feats.encode(&trained.r1, idx)?;
    let bundle = &trained.bundle;
    let mut tape = Tape::new();
    let probs = match predictor {
        Predictor::SftHead => {
            let rv = tape.constant(r);
            let l = linear_on_tape(&mut tape, &bundle.params, CLS, rv)?;
            row_softmax(tape.value(l))?
        }
        Predictor::COnly => {
            let c = bundle_c(bundle, r)?;
            let cv = tape.constant(c);
            let l = mlp_on_tape(&mut tape, &bundle.params, HEAD_C, cv)?;
            row_softmax(tape.value(l))?
        }
        Predictor::PhiOnly => {
            let phi = feats.phi(&trained.r1, idx)?;
            let pv = tape.constant(phi);
            let l = mlp_on_tape(&mut tape, &bundle.params, HEAD_PHI, pv)?;
            row_softmax(tape.value(l))?
        }
        Predictor::Unadjusted => {
            let c = bundle_c(bundle, r)?;
            let phi = feats.phi(&trained.r1, idx)?;
            let cv = tape.constant(c);
            let pv = tape.constant(phi);
            let l = adjusted_on_tape(&mut tape, &bundle.params, cv, pv)?;
            row_softmax(tape.value(l))?
        }
        Predictor::Adjusted => {
            if k < 1 {
                return Err(Error::Config("K must be at least 1".into()));
            }
            let c = bundle_c(bundle, r)?;
            let phi = feats.phi(&trained.r1, idx)?;
            let cv = tape.constant(c);
            // Running mean: K identical draws average to that draw exactly.
            let mut acc = vec![[0.0; 2]; idx.len()];
            for n in 1..=k {
                let perm = batch_permutation(idx.len(), rng);
                let pv = tape.constant(permute_rows(&phi, &perm));
                let l = adjusted_on_tape(&mut tape, &bundle.params, cv, pv)?;
                let w = 1.0 / n as f64;
                for (a, p) in acc.iter_mut().zip(row_softmax(tape.value(l))?) {
                    a[0] += (p[0] - a[0]) * w;
                    a[1] += (p[1] - a[1]) * w;
                }
            }
            acc
        }
    };
    Ok(probs)
}

/// Predictions over a whole feature set in consecutive batches. Batch `b`
/// draws its shuffles from stream `b` of `seed`, so results depend only on
/// the model, the batch contents, the seed and `k`.
pub fn predict_all(
    trained: &TrainedCFT,
    feats: &Features,
    predictor: Predictor,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Predictions> {
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let all: Vec<usize> = (0..feats.len()).collect();
    let mut probs = Vec::with_capacity(feats.len());
    for (b, chunk) in all.chunks(batch_size).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        probs.extend(predict_batch(trained, feats, chunk, predictor, k, &mut rng)?);
    }
    let labels = probs.iter().map(argmax).collect();
    Ok(Predictions { probs, labels })
}

/// Algorithm-2 inference on a single batch.
pub fn cft_predict(trained: &TrainedCFT, corpus: &Corpus, k: usize, rng: &mut ChaCha8Rng) -> Result<Predictions> {
    let feats = Features::new(corpus, &trained.r1, &trained.phi)?;
    let idx: Vec<usize> = (0..feats.len()).collect();
    let probs = predict_batch(trained, &feats, &idx, Predictor::Adjusted, k, rng)?;
    let labels = probs.iter().map(argmax).collect();
    Ok(Predictions { probs, labels })
}

/// F1 of `predictor` on `feats` under `mode`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_f1(
    trained: &TrainedCFT,
    feats: &Features,
    predictor: Predictor,
    mode: F1Mode,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let preds = predict_all(trained, feats, predictor, k, batch_size, seed)?;
    score(mode, &preds.labels, &feats.labels)
}

/// Shape of a fresh bundle for encoder width `d` and `cfg`.
pub fn bundle_shape(d: usize, cfg: &TrainConfig) -> BundleShape {
    BundleShape {
        d,
        phi_width: cfg.phi.width(d),
        hidden: cfg.hidden,
    }
}

/// Trains R1 (initialised from `r0`) and the heads on `corpus`, holding out
/// `cfg.holdout_frac` for model selection. Returns the epoch with the best
/// validation F1 under `cfg.select_by` (earliest on ties).
pub fn train(corpus: &Corpus, r0: &EncoderModel, cfg: &TrainConfig) -> Result<TrainedCFT> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let (train_set, val_set) = corpus.split(cfg.holdout_frac, cfg.seed)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("corpus too small for a train/validation split".into()));
    }
    let feats = Features::new(&train_set, r0, &cfg.phi)?;
    let val = Features::new(&val_set, r0, &cfg.phi)?;
    let pools = LabelPools::new(&feats.labels);

    let mut bundle = CausalBundle::init(bundle_shape(r0.d, cfg), cfg.seed)?;
    bundle.lambda_c = cfg.lambda_c;
    bundle.lambda_y = cfg.lambda_y;
    let mut state = TrainedCFT {
        r0: r0.clone(),
        r1: EncoderModel {
            params: r0.params.fresh_copy(),
            ..r0.clone()
        },
        bundle,
        phi: cfg.phi,
        best_epoch: 0,
        val_history: Vec::with_capacity(cfg.epochs),
        trajectory: Vec::with_capacity(cfg.epochs),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut best: Option<(f64, usize)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            cft_train_step(
                batch,
                &feats,
                &pools,
                &state.r0,
                &mut state.r1,
                &mut state.bundle,
                cfg,
                &mut rng,
            )?;
        }
        let score = evaluate_f1(
            &state,
            &val,
            cfg.select_by,
            cfg.f1_mode,
            cfg.k_samples,
            cfg.batch_size,
            cfg.seed,
        )?;
        log::debug!("epoch {epoch}: validation F1 {score:.4}");
        state.val_history.push(score);
        state.trajectory.push(state.snapshot());
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, epoch));
        }
    }
    let (_, best_epoch) = best.expect("at least one epoch");
    let snap = state.trajectory[best_epoch - 1].clone();
    let mut out = state.with_snapshot(&snap)?;
    out.best_epoch = best_epoch;
    Ok(out)
}
