//! Bag-of-embeddings encoder producing the paired representations and the
//! patch-based local features.
//!
//! `encode` is `pool_mlp(mean token embedding)` with
//! `pool_mlp(m) = tanh(m·W1 + b1)·W2 + b2`. The local feature Φ is read from
//! the embedding layer only.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numeric::{adamw_step, Bag, Checkpoint, OptimConfig, ParamStore, Tape, Tensor, Var};

pub const EMBEDDING: &str = "embedding";
pub const POOL_W1: &str = "pool.w1";
pub const POOL_B1: &str = "pool.b1";
pub const POOL_W2: &str = "pool.w2";
pub const POOL_B2: &str = "pool.b2";

const UNK: &str = "<unk>";

/// Word → row index. Row 0 is the out-of-vocabulary row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Sorted distinct words plus the OOV row.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ws: Vec<String> = words.into_iter().map(Into::into).collect();
        ws.sort();
        ws.dedup();
        ws.retain(|w| w != UNK);
        let mut all = vec![UNK.to_string()];
        all.extend(ws);
        Self::from_ordered(all)
    }

    fn from_ordered(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::from_words(corpus.examples.iter().flat_map(|e| e.tokens.iter().cloned()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn oov(&self) -> usize {
        0
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    fn rebuild_index(&mut self) {
        *self = Self::from_ordered(std::mem::take(&mut self.words));
    }
}

/// Patch aggregation mode for Φ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// `(1/n) Σ p_i`, width d.
    MeanOfPatchMeans,
    /// `[p_1 … p_n]`, width n·d.
    PatchConcat,
}

impl std::str::FromStr for PhiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_of_patch_means" | "mean" => Ok(PhiMode::MeanOfPatchMeans),
            "patch_concat" | "concat" => Ok(PhiMode::PatchConcat),
            other => Err(Error::Config(format!("unknown phi mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiConfig {
    pub n_patches: usize,
    pub mode: PhiMode,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self {
            n_patches: 10,
            mode: PhiMode::MeanOfPatchMeans,
        }
    }
}

impl PhiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patches < 1 {
            return Err(Error::Config("n_patches must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of Φ for embedding width `d`.
    pub fn width(&self, d: usize) -> usize {
        match self.mode {
            PhiMode::MeanOfPatchMeans => d,
            PhiMode::PatchConcat => self.n_patches * d,
        }
    }
}

/// Contiguous patch sizes; the first `len % n` patches take one extra token.
pub fn patch_sizes(len: usize, n_patches: usize) -> Vec<usize> {
    let base = len / n_patches;
    let rem = len % n_patches;
    (0..n_patches).map(|i| base + usize::from(i < rem)).collect()
}

/// Token-position weights of each patch mean. An empty patch reuses the
/// nearest earlier non-empty patch.
pub fn patch_weights(len: usize, n_patches: usize) -> Vec<Vec<(usize, f64)>> {
    let mut out: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_patches);
    let mut start = 0;
    for size in patch_sizes(len, n_patches) {
        if size == 0 {
            let prev = out.last().cloned().unwrap_or_default();
            out.push(prev);
            continue;
        }
        let w = 1.0 / size as f64;
        out.push((start..start + size).map(|p| (p, w)).collect());
        start += size;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub vocab: Vocab,
    pub params: ParamStore,
    pub d: usize,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    d: usize,
    vocab: Vec<String>,
    params: Checkpoint,
}

impl EncoderModel {
    /// Random initialisation with embedding entries drawn from
    /// `N(0, embedding_std²)`. `d` must be at least 8 and divisible by 4.
    pub fn init(vocab: Vocab, d: usize, embedding_std: f64, seed: u64) -> Result<Self> {
        if d < 8 || !d.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "embedding width {d} must be >= 8 and divisible by 4"
            )));
        }
        if vocab.len() < 2 {
            return Err(Error::Config("vocabulary needs at least one word".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let v = vocab.len();
        let scale = 1.0 / (d as f64).sqrt();
        params.insert(EMBEDDING, Tensor::randn(&[v, d], embedding_std, &mut rng))?;
        params.insert(POOL_W1, Tensor::randn(&[d, d], scale, &mut rng))?;
        params.insert(POOL_B1, Tensor::zeros(&[d]))?;
        params.insert(POOL_W2, Tensor::randn(&[d, d], scale, &mut rng))?;
        params.insert(POOL_B2, Tensor::zeros(&[d]))?;
        Ok(Self { vocab, params, d })
    }

    pub fn embedding(&self) -> &Tensor {
        self.params.get(EMBEDDING).expect("encoder has an embedding")
    }

    /// Mean-pooling bag for a token sequence.
    pub fn mean_bag(&self, tokens: &[String]) -> Bag {
        let w = 1.0 / tokens.len().max(1) as f64;
        tokens.iter().map(|t| (self.vocab.id(t), w)).collect()
    }

    /// Representation of one token sequence.
    pub fn encode(&self, tokens: &[String]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Input("cannot encode an empty token sequence".into()));
        }
        let out = self.encode_batch(&[tokens])?;
        Ok(out.into_iter().next().expect("one row"))
    }

    pub fn encode_batch(&self, docs: &[&[String]]) -> Result<Vec<Vec<f64>>> {
        let bags: Vec<Bag> = docs.iter().map(|d| self.mean_bag(d)).collect();
        let mut tape = Tape::new();
        let r = encode_on_tape(&mut tape, &self.params, Arc::new(bags))?;
        Ok(tape.value(r).row_vecs())
    }

    /// Local feature Φ from the embedding layer.
    pub fn extract_phi(&self, tokens: &[String], cfg: &PhiConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if tokens.is_empty() {
            return Err(Error::Input("cannot extract phi from an empty sequence".into()));
        }
        let emb = self.embedding();
        let d = self.d;
        let ids = self.vocab.ids(tokens);
        let patches = patch_weights(tokens.len(), cfg.n_patches);
        let means: Vec<Vec<f64>> = patches
            .iter()
            .map(|patch| {
                let mut m = vec![0.0; d];
                for &(pos, w) in patch {
                    for (acc, e) in m.iter_mut().zip(emb.row(ids[pos])) {
                        *acc += w * e;
                    }
                }
                m
            })
            .collect();
        Ok(match cfg.mode {
            PhiMode::MeanOfPatchMeans => {
                let n = means.len() as f64;
                let mut out = vec![0.0; d];
                for m in &means {
                    for (o, x) in out.iter_mut().zip(m) {
                        *o += x / n;
                    }
                }
                out
            }
            PhiMode::PatchConcat => means.concat(),
        })
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = EncoderFile {
            d: self.d,
            vocab: self.vocab.words.clone(),
            params: self.params.to_checkpoint(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: EncoderFile = serde_json::from_str(&text)?;
        let mut vocab = Vocab {
            words: file.vocab,
            index: HashMap::new(),
        };
        vocab.rebuild_index();
        let params = ParamStore::from_checkpoint(&file.params)?;
        let emb = params
            .get(EMBEDDING)
            .ok_or_else(|| Error::UnknownParam(EMBEDDING.into()))?;
        if emb.rows() != vocab.len() || emb.cols() != file.d {
            return Err(Error::Shape("encoder file: embedding vs vocab".into()));
        }
        Ok(Self {
            vocab,
            params,
            d: file.d,
        })
    }
}

/// `pool_mlp(Σ bag-weighted embeddings)` for a batch of bags, on the tape.
pub fn encode_on_tape(tape: &mut Tape, store: &ParamStore, bags: Arc<Vec<Bag>>) -> Result<Var> {
    let emb = tape.param(store, EMBEDDING)?;
    let pooled = tape.embedding_bag(emb, bags)?;
    pool_mlp_on_tape(tape, store, pooled)
}

pub fn pool_mlp_on_tape(tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
    let w1 = tape.param(store, POOL_W1)?;
    let b1 = tape.param(store, POOL_B1)?;
    let w2 = tape.param(store, POOL_W2)?;
    let b2 = tape.param(store, POOL_B2)?;
    let h = tape.matmul(input, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.tanh(h)?;
    let out = tape.matmul(h, w2)?;
    tape.add_row(out, b2)
}

/// Context-prediction pretraining settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub d: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Neighbours on each side of the held-out token.
    pub window: usize,
    /// Held-out positions sampled per document per epoch.
    pub positions_per_doc: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub embedding_std: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            d: 32,
            epochs: 5,
            seed: 0,
            window: 5,
            positions_per_doc: 4,
            batch_size: 128,
            lr: 0.01,
            embedding_std: 0.05,
        }
    }
}

/// [`pretrain_r0_with_vocab`] over the corpus's own vocabulary.
pub fn pretrain_r0(corpus: &Corpus, cfg: &PretrainConfig) -> Result<EncoderModel> {
    pretrain_r0_with_vocab(corpus, Vocab::from_corpus(corpus), cfg)
}

/// Self-supervised pretraining: predict a held-out token from the mean
/// embedding of its neighbours (full softmax over the vocabulary). Labels
/// are never read. Rows of `vocab` absent from `corpus` keep their initial
/// values, as does the pooling MLP.
pub fn pretrain_r0_with_vocab(corpus: &Corpus, vocab: Vocab, cfg: &PretrainConfig) -> Result<EncoderModel> {
    if corpus.is_empty() {
        return Err(Error::Input("pretraining corpus is empty".into()));
    }
    if vocab.len() < 3 {
        return Err(Error::Config(format!(
            "vocabulary of {} word(s) is too small to pretrain",
            vocab.len() - 1
        )));
    }
    let mut model = EncoderModel::init(vocab, cfg.d, cfg.embedding_std, cfg.seed)?;
    if cfg.epochs > 0 {
        run_context_prediction(&mut model, corpus, cfg)?;
    }
    tie_unseen_rows(&mut model, corpus)?;
    Ok(model)
}

/// Rows of words that never occur in `corpus` take the OOV row's value, so
/// the pretrained encoder cannot tell unseen words apart.
fn tie_unseen_rows(model: &mut EncoderModel, corpus: &Corpus) -> Result<()> {
    let mut seen = vec![false; model.vocab.len()];
    seen[model.vocab.oov()] = true;
    for ex in &corpus.examples {
        for t in &ex.tokens {
            seen[model.vocab.id(t)] = true;
        }
    }
    if seen.iter().all(|&s| s) {
        return Ok(());
    }
    let mut emb = model.embedding().clone();
    let d = model.d;
    let oov: Vec<f64> = emb.row(model.vocab.oov()).to_vec();
    for (i, _) in seen.iter().enumerate().filter(|(_, s)| !**s) {
        emb.data_mut()[i * d..(i + 1) * d].copy_from_slice(&oov);
    }
    model.params.set(EMBEDDING, emb)
}

fn run_context_prediction(model: &mut EncoderModel, corpus: &Corpus, cfg: &PretrainConfig) -> Result<()> {
    let v = model.vocab.len();
    let mut head = ParamStore::new();
    head.insert("ctx.out", Tensor::zeros(&[cfg.d, v]))?;
    head.insert("ctx.bias", Tensor::zeros(&[v]))?;
    let opt = OptimConfig {
        weight_decay: 0.0,
        ..OptimConfig::with_lr(cfg.lr)
    };

    let docs: Vec<Vec<usize>> = corpus.examples.iter().map(|e| model.vocab.ids(&e.tokens)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    for _ in 0..cfg.epochs {
        let mut samples: Vec<(usize, usize)> = Vec::new();
        for (di, doc) in docs.iter().enumerate() {
            if doc.len() < 2 {
                continue;
            }
            let mut pos: Vec<usize> = (0..doc.len()).collect();
            pos.shuffle(&mut rng);
            samples.extend(pos.into_iter().take(cfg.positions_per_doc).map(|p| (di, p)));
        }
        samples.shuffle(&mut rng);
        for chunk in samples.chunks(cfg.batch_size.max(1)) {
            let mut bags = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &(di, p) in chunk {
                let doc = &docs[di];
                let lo = p.saturating_sub(cfg.window);
                let hi = (p + cfg.window + 1).min(doc.len());
                let ctx: Vec<usize> = (lo..hi).filter(|&q| q != p).map(|q| doc[q]).collect();
                let w = 1.0 / ctx.len() as f64;
                bags.push(ctx.into_iter().map(|id| (id, w)).collect::<Bag>());
                targets.push(doc[p]);
            }
            let mut tape = Tape::new();
            let emb = tape.param(&model.params, EMBEDDING)?;
            let ctx = tape.embedding_bag(emb, Arc::new(bags))?;
            let out = tape.param(&head, "ctx.out")?;
            let bias = tape.param(&head, "ctx.bias")?;
            let logits = tape.matmul(ctx, out)?;
            let logits = tape.add_row(logits, bias)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            let grads = tape.backward(loss)?;
            let g_enc = grads.restricted_to(&model.params);
            let g_head = grads.restricted_to(&head);
            adamw_step(&mut model.params, &g_enc, &opt)?;
            adamw_step(&mut head, &g_head, &opt)?;
        }
    }
    // The optimizer state of the pretraining run is not part of the model.
    model.params = model.params.fresh_copy();
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::corpus::{distinct_tokens, generate_base_corpus, VocabSpec};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_model() -> EncoderModel {
        let vocab = Vocab::from_words(["the", "cat", "sat", "on", "mat", "dog"]);
        EncoderModel::init(vocab, 8, 0.5, 3).unwrap()
    }

    #[test]
    fn width_must_be_multiple_of_four() {
        let vocab = Vocab::from_words(["a", "b"]);
        assert!(EncoderModel::init(vocab.clone(), 6, 0.5, 0).is_err());
        assert!(EncoderModel::init(vocab.clone(), 10, 0.5, 0).is_err());
        assert!(EncoderModel::init(vocab, 12, 0.5, 0).is_ok());
    }

    #[test]
    fn oov_maps_to_row_zero() {
        let m = small_model();
        assert_eq!(m.vocab.id("zebra"), 0);
        assert_ne!(m.vocab.id("cat"), 0);
        assert!(m.encode(&toks("zebra unicorn")).is_ok());
    }

    #[test]
    fn repeated_token_equals_single() {
        let m = small_model();
        let a = m.encode(&toks("the the the")).unwrap();
        let b = m.encode(&toks("the")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_is_permutation_invariant() {
        let m = small_model();
        let a = m.encode(&toks("the cat sat on the mat")).unwrap();
        let b = m.encode(&toks("mat the on sat cat the")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn encode_matches_straight_line_oracle() {
        let m = small_model();
        let words = ["the", "cat", "sat", "on", "mat", "dog", "zebra"];
        let tokens: Vec<String> = (0..20).map(|i| words[(i * 7 + 3) % 7].to_string()).collect();
        let got = m.encode(&tokens).unwrap();

        let d = m.d;
        let emb = m.embedding();
        let mut mean = vec![0.0; d];
        for t in &tokens {
            for (acc, e) in mean.iter_mut().zip(emb.row(m.vocab.id(t))) {
                *acc += e / tokens.len() as f64;
            }
        }
        let w1 = m.params.get(POOL_W1).unwrap();
        let b1 = m.params.get(POOL_B1).unwrap();
        let w2 = m.params.get(POOL_W2).unwrap();
        let b2 = m.params.get(POOL_B2).unwrap();
        let h: Vec<f64> = (0..d)
            .map(|j| ((0..d).map(|i| mean[i] * w1.data()[i * d + j]).sum::<f64>() + b1.data()[j]).tanh())
            .collect();
        let r: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|i| h[i] * w2.data()[i * d + j]).sum::<f64>() + b2.data()[j])
            .collect();
        for (x, y) in got.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_empty() {
        assert!(small_model().encode(&[]).is_err());
    }

    #[test]
    fn patch_sizes_absorb_remainder_first() {
        assert_eq!(patch_sizes(23, 10), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(patch_sizes(20, 10), vec![2; 10]);
        assert_eq!(patch_sizes(3, 5), vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn phi_of_constant_sequence_is_token_embedding() {
        let m = small_model();
        let phi = m
            .extract_phi(&toks("cat cat cat cat cat"), &PhiConfig::default())
            .unwrap();
        let e = m.embedding().row(m.vocab.id("cat"));
        for (x, y) in phi.iter().zip(e) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_patches_reduce_to_global_mean() {
        let m = small_model();
        let words = ["the", "cat", "sat", "on", "mat", "dog"];
        let tokens: Vec<String> = (0..20).map(|i| words[(i * 5 + 1) % 6].to_string()).collect();
        let phi = m.extract_phi(&tokens, &PhiConfig::default()).unwrap();
        let emb = m.embedding();
        for j in 0..m.d {
            let mean: f64 = tokens.iter().map(|t| emb.row(m.vocab.id(t))[j]).sum::<f64>() / 20.0;
            assert!((phi[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn uneven_patches_match_weighted_mean() {
        let m = small_model();
        let words = ["the", "cat", "sat", "on", "mat", "dog"];
        let tokens: Vec<String> = (0..23).map(|i| words[(i * 5 + 2) % 6].to_string()).collect();
        let phi = m.extract_phi(&tokens, &PhiConfig::default()).unwrap();
        // First three patches hold 3 tokens (weight 1/30 each); the remaining
        // seven hold 2 tokens (weight 1/20 each).
        let emb = m.embedding();
        for j in 0..m.d {
            let mut expect = 0.0;
            for (pos, t) in tokens.iter().enumerate() {
                let w = if pos < 9 { 1.0 / 30.0 } else { 1.0 / 20.0 };
                expect += w * emb.row(m.vocab.id(t))[j];
            }
            assert!((phi[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn short_sequences_reuse_last_patch() {
        let m = small_model();
        let cfg = PhiConfig {
            n_patches: 4,
            mode: PhiMode::PatchConcat,
        };
        let phi = m.extract_phi(&toks("cat dog"), &cfg).unwrap();
        let d = m.d;
        assert_eq!(phi.len(), 4 * d);
        assert_eq!(&phi[2 * d..3 * d], &phi[d..2 * d]);
        assert_eq!(&phi[3 * d..], &phi[d..2 * d]);
    }

    #[test]
    fn patch_concat_sees_order() {
        let m = small_model();
        let cfg = PhiConfig {
            n_patches: 2,
            mode: PhiMode::PatchConcat,
        };
        let a = m.extract_phi(&toks("cat cat dog dog"), &cfg).unwrap();
        let b = m.extract_phi(&toks("dog cat cat dog"), &cfg).unwrap();
        assert_ne!(a, b);
        let mean = PhiConfig {
            n_patches: 2,
            mode: PhiMode::MeanOfPatchMeans,
        };
        let a = m.extract_phi(&toks("cat cat dog dog"), &mean).unwrap();
        let b = m.extract_phi(&toks("dog cat cat dog"), &mean).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn pretraining_zero_epochs_is_init() {
        let c = generate_base_corpus(10, &VocabSpec::default(), 1).unwrap();
        let cfg = PretrainConfig {
            epochs: 0,
            d: 8,
            ..PretrainConfig::default()
        };
        let m = pretrain_r0(&c, &cfg).unwrap();
        let init = EncoderModel::init(Vocab::from_corpus(&c), 8, cfg.embedding_std, cfg.seed).unwrap();
        assert_eq!(m, init);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let c = generate_base_corpus(50, &VocabSpec::default(), 1).unwrap();
        let cfg = PretrainConfig {
            epochs: 1,
            d: 8,
            ..PretrainConfig::default()
        };
        let a = pretrain_r0(&c, &cfg).unwrap();
        let b = pretrain_r0(&c, &cfg).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(
            a.checksum(),
            EncoderModel::init(Vocab::from_corpus(&c), 8, 0.05, 0)
                .unwrap()
                .checksum()
        );
    }

    #[test]
    fn unseen_words_share_the_oov_row() {
        let c = generate_base_corpus(20, &VocabSpec::default(), 1).unwrap();
        let mut words = distinct_tokens([&c]);
        words.push("thexxxx".into());
        words.push("theyyyy".into());
        let cfg = PretrainConfig {
            epochs: 1,
            d: 8,
            ..PretrainConfig::default()
        };
        let m = pretrain_r0_with_vocab(&c, Vocab::from_words(words), &cfg).unwrap();
        let emb = m.embedding();
        assert_eq!(emb.row(m.vocab.id("thexxxx")), emb.row(0));
        assert_eq!(emb.row(m.vocab.id("theyyyy")), emb.row(0));
        assert_ne!(emb.row(m.vocab.id("the")), emb.row(0));
        let a = m.encode(&toks("great thexxxx food")).unwrap();
        let b = m.encode(&toks("great theyyyy food")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_vocab_is_rejected() {
        let mut c = generate_base_corpus(1, &VocabSpec::default(), 1).unwrap();
        for e in &mut c.examples {
            e.tokens = vec!["same".into(); 5];
        }
        assert!(pretrain_r0(&c, &PretrainConfig::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = small_model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.json");
        m.save(&p).unwrap();
        let back = EncoderModel::load(&p).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        assert_eq!(back.vocab.id("mat"), m.vocab.id("mat"));
    }
}
