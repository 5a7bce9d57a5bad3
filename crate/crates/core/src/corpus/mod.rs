//! Synthetic review corpora and the two spurious-correlation injectors.
//!
//! Experiment 1 glues a suffix onto every trigger word (`the` → `thexxxx`).
//! Experiment 2 inserts a platform tag token after every trigger word
//! (`the` → `the yelp.yyy`). In both, one suffix family is drawn per
//! example: the aligned family with probability `ratio`, else the other.

mod jsonl;
mod vocab;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use jsonl::{load_jsonl, save_jsonl, to_jsonl_string};
pub use vocab::VocabSpec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Amazon,
    Yelp,
    Synthetic,
}

/// Which suffix family was injected into an example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpuriousTag {
    TagA,
    TagB,
    None,
}

/// The two simulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Suffix glued onto stop words, aligned with the label.
    Stopword,
    /// Platform tag inserted after stop words, aligned with the source.
    Source,
}

impl std::str::FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stopword" => Ok(Experiment::Stopword),
            "source" => Ok(Experiment::Source),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: u8,
    pub source: Source,
    pub spurious_tag: SpuriousTag,
}

impl Example {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Generation parameters carried alongside a corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub ratio: Option<f64>,
    pub level: Option<usize>,
    pub experiment: Option<Experiment>,
    pub n_per_class: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub seed: u64,
    pub meta: CorpusMeta,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for ex in &self.examples {
            c[ex.label as usize] += 1;
        }
        c
    }

    /// SHA-256 of the JSONL rendering.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(to_jsonl_string(self).as_bytes()))
    }

    /// Seeded shuffle then split; the second part holds `round(frac·n)` examples.
    pub fn split(&self, holdout_frac: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&holdout_frac) {
            return Err(Error::Config(format!("holdout fraction {holdout_frac}")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = (holdout_frac * self.len() as f64).round() as usize;
        let pick = |ids: &[usize]| Corpus {
            examples: ids.iter().map(|&i| self.examples[i].clone()).collect(),
            seed: self.seed,
            meta: self.meta.clone(),
        };
        Ok((pick(&idx[n_hold..]), pick(&idx[..n_hold])))
    }
}

/// Injection settings shared by both simulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    /// Probability that the aligned family is used.
    pub ratio: f64,
    /// Repetitions of the suffix/tag per trigger occurrence.
    pub level: usize,
    pub suffix_a: String,
    pub suffix_b: String,
    pub trigger_words: Vec<String>,
    pub min_freq: usize,
    pub window: usize,
}

impl InjectionConfig {
    pub fn stopword(ratio: f64) -> Self {
        Self {
            ratio,
            level: 1,
            suffix_a: "xxxx".into(),
            suffix_b: "yyyy".into(),
            trigger_words: vec!["the".into(), "and".into()],
            min_freq: 2,
            window: 30,
        }
    }

    pub fn source(ratio: f64) -> Self {
        Self {
            ratio,
            level: 1,
            suffix_a: "amazon.xxx".into(),
            suffix_b: "yelp.yyy".into(),
            trigger_words: vec!["the".into(), "and".into()],
            min_freq: 1,
            window: 30,
        }
    }

    pub fn for_experiment(experiment: Experiment, ratio: f64) -> Self {
        match experiment {
            Experiment::Stopword => Self::stopword(ratio),
            Experiment::Source => Self::source(ratio),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("ratio {} outside [0,1]", self.ratio)));
        }
        if self.level < 1 {
            return Err(Error::Config("level must be at least 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }

    fn is_trigger(&self, tok: &str) -> bool {
        self.trigger_words.iter().any(|t| t == tok)
    }

    /// Tokens the injector can add for `experiment`.
    pub fn injected_tokens(&self, experiment: Experiment) -> Vec<String> {
        let suffixes = [&self.suffix_a, &self.suffix_b];
        match experiment {
            Experiment::Stopword => self
                .trigger_words
                .iter()
                .flat_map(|t| suffixes.iter().map(move |s| format!("{t}{s}")))
                .collect(),
            Experiment::Source => suffixes.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn suffix(&self, tag: SpuriousTag) -> &str {
        match tag {
            SpuriousTag::TagB => &self.suffix_b,
            _ => &self.suffix_a,
        }
    }
}

/// Balanced corpus of `n_per_class` examples per label.
///
/// Tokens mix class-conditional sentiment words, neutral filler, and trigger
/// words; at least `vocab.min_triggers` triggers land in the first
/// `vocab.trigger_window` tokens. Sources are `synthetic`; see
/// [`assign_platform_sources`] for the experiment-2 carrier.
pub fn generate_base_corpus(n_per_class: usize, vocab: &VocabSpec, seed: u64) -> Result<Corpus> {
    if n_per_class < 1 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if vocab.is_empty() || vocab.triggers.is_empty() {
        return Err(Error::Config("vocabulary spec has an empty word list".into()));
    }
    if vocab.min_len < 1 || vocab.max_len < vocab.min_len {
        return Err(Error::Config("bad length range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let label = (i % 2) as u8;
        examples.push(generate_example(label, vocab, &mut rng));
    }
    Ok(Corpus {
        examples,
        seed,
        meta: CorpusMeta {
            n_per_class: Some(n_per_class),
            ..CorpusMeta::default()
        },
    })
}

fn generate_example(label: u8, vocab: &VocabSpec, rng: &mut ChaCha8Rng) -> Example {
    let len = rng.random_range(vocab.min_len..=vocab.max_len);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.random();
        let word = if u < vocab.trigger_rate {
            pick(&vocab.triggers, rng)
        } else if u < vocab.trigger_rate + vocab.sentiment_rate {
            let own = rng.random::<f64>() < vocab.polarity;
            let class = if own { label } else { 1 - label };
            pick(vocab.class_words(class), rng)
        } else {
            pick(&vocab.neutral, rng)
        };
        tokens.push(word);
    }
    let window = vocab.trigger_window.min(len);
    let present = tokens[..window].iter().filter(|t| vocab.triggers.contains(t)).count();
    let need = vocab.min_triggers.min(window).saturating_sub(present);
    if need > 0 {
        let mut free: Vec<usize> = (0..window).filter(|&i| !vocab.triggers.contains(&tokens[i])).collect();
        free.shuffle(rng);
        for &pos in free.iter().take(need) {
            tokens[pos] = pick(&vocab.triggers, rng);
        }
    }
    Example {
        tokens,
        label,
        source: Source::Synthetic,
        spurious_tag: SpuriousTag::None,
    }
}

fn pick(words: &[String], rng: &mut ChaCha8Rng) -> String {
    words[rng.random_range(0..words.len())].clone()
}

/// Gives every example a review platform. With probability `agreement` a
/// label-0 example comes from Amazon and a label-1 example from Yelp;
/// otherwise the other platform.
pub fn assign_platform_sources(corpus: &Corpus, agreement: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&agreement) {
        return Err(Error::Config(format!("agreement {agreement} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for ex in &mut out.examples {
        let agree = rng.random::<f64>() < agreement;
        let label_zero_side = (ex.label == 0) == agree;
        ex.source = if label_zero_side { Source::Amazon } else { Source::Yelp };
    }
    Ok(out)
}

/// Keeps exactly the examples with at least `cfg.min_freq` trigger words in
/// their first `cfg.window` tokens.
pub fn filter_min_frequency(corpus: &Corpus, cfg: &InjectionConfig) -> Corpus {
    let examples = corpus
        .examples
        .iter()
        .filter(|ex| ex.tokens.iter().take(cfg.window).filter(|t| cfg.is_trigger(t)).count() >= cfg.min_freq)
        .cloned()
        .collect();
    Corpus {
        examples,
        seed: corpus.seed,
        meta: corpus.meta.clone(),
    }
}

fn choose_family(aligned_is_a: bool, ratio: f64, rng: &mut ChaCha8Rng) -> SpuriousTag {
    let aligned = rng.random::<f64>() < ratio;
    match (aligned, aligned_is_a) {
        (true, true) | (false, false) => SpuriousTag::TagA,
        _ => SpuriousTag::TagB,
    }
}

/// Experiment 1: label 0 aligns with `suffix_a`, label 1 with `suffix_b`.
/// Each trigger becomes `level` copies of trigger+suffix.
pub fn inject_stopword_spurious(corpus: &Corpus, cfg: &InjectionConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for ex in &mut out.examples {
        let tag = choose_family(ex.label == 0, cfg.ratio, &mut rng);
        let suffix = cfg.suffix(tag);
        let mut tokens = Vec::with_capacity(ex.tokens.len() + 8);
        for tok in &ex.tokens {
            if cfg.is_trigger(tok) {
                let glued = format!("{tok}{suffix}");
                tokens.extend(std::iter::repeat_n(glued, cfg.level));
            } else {
                tokens.push(tok.clone());
            }
        }
        ex.tokens = tokens;
        ex.spurious_tag = tag;
    }
    out.meta.ratio = Some(cfg.ratio);
    out.meta.level = Some(cfg.level);
    out.meta.experiment = Some(Experiment::Stopword);
    Ok(out)
}

/// Experiment 2: Amazon aligns with `suffix_a`, Yelp with `suffix_b`. The
/// tag is inserted `level` times after each trigger.
pub fn inject_source_spurious(corpus: &Corpus, cfg: &InjectionConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    if let Some(i) = corpus.examples.iter().position(|ex| ex.source == Source::Synthetic) {
        return Err(Error::Input(format!(
            "example {i} has no platform source; assign amazon/yelp first"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for ex in &mut out.examples {
        let tag = choose_family(ex.source == Source::Amazon, cfg.ratio, &mut rng);
        let suffix = cfg.suffix(tag).to_string();
        let mut tokens = Vec::with_capacity(ex.tokens.len() + 8);
        for tok in &ex.tokens {
            tokens.push(tok.clone());
            if cfg.is_trigger(tok) {
                tokens.extend(std::iter::repeat_n(suffix.clone(), cfg.level));
            }
        }
        ex.tokens = tokens;
        ex.spurious_tag = tag;
    }
    out.meta.ratio = Some(cfg.ratio);
    out.meta.level = Some(cfg.level);
    out.meta.experiment = Some(Experiment::Source);
    Ok(out)
}

/// Dispatches to the injector for `experiment`.
pub fn inject(experiment: Experiment, corpus: &Corpus, cfg: &InjectionConfig, seed: u64) -> Result<Corpus> {
    match experiment {
        Experiment::Stopword => inject_stopword_spurious(corpus, cfg, seed),
        Experiment::Source => inject_source_spurious(corpus, cfg, seed),
    }
}

/// `true` when the example carries its aligned family.
pub fn is_aligned(experiment: Experiment, ex: &Example) -> Option<bool> {
    let a_side = match experiment {
        Experiment::Stopword => ex.label == 0,
        Experiment::Source => match ex.source {
            Source::Amazon => true,
            Source::Yelp => false,
            Source::Synthetic => return None,
        },
    };
    match ex.spurious_tag {
        SpuriousTag::TagA => Some(a_side),
        SpuriousTag::TagB => Some(!a_side),
        SpuriousTag::None => None,
    }
}

/// Fraction of tagged examples that carry their aligned family.
pub fn aligned_fraction(experiment: Experiment, corpus: &Corpus) -> f64 {
    let flags: Vec<bool> = corpus
        .examples
        .iter()
        .filter_map(|ex| is_aligned(experiment, ex))
        .collect();
    if flags.is_empty() {
        return 0.0;
    }
    flags.iter().filter(|&&a| a).count() as f64 / flags.len() as f64
}

/// Every token the simulator can emit for `experiment`: the carrier word
/// lists plus the injected tokens.
pub fn simulator_vocabulary(vocab: &VocabSpec, cfg: &InjectionConfig, experiment: Experiment) -> Vec<String> {
    let mut out: Vec<String> = vocab
        .positive
        .iter()
        .chain(&vocab.negative)
        .chain(&vocab.neutral)
        .chain(&vocab.triggers)
        .cloned()
        .collect();
    out.extend(cfg.injected_tokens(experiment));
    out.sort();
    out.dedup();
    out
}

/// Distinct tokens in order of first appearance.
pub fn distinct_tokens<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in corpora {
        for ex in &c.examples {
            for t in &ex.tokens {
                if seen.insert(t.as_str()) {
                    out.push(t.clone());
                }
            }
        }
    }
    out
}
