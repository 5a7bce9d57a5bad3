use std::collections::HashMap;

use cftlab::corpus::{
    aligned_fraction, assign_platform_sources, filter_min_frequency, generate_base_corpus, inject, load_jsonl,
    save_jsonl, Corpus, Experiment, InjectionConfig, SpuriousTag, VocabSpec,
};
use proptest::prelude::*;

fn build(experiment: Experiment, n: usize, seed: u64, cfg: &InjectionConfig) -> Corpus {
    let mut base = generate_base_corpus(n, &VocabSpec::default(), seed).unwrap();
    if experiment == Experiment::Source {
        base = assign_platform_sources(&base, 1.0, seed + 3).unwrap();
    }
    inject(experiment, &filter_min_frequency(&base, cfg), cfg, seed + 1).unwrap()
}

fn three_sigma(ratio: f64, n: usize) -> f64 {
    3.0 * (ratio * (1.0 - ratio) / n as f64).sqrt()
}

#[test]
fn aligned_fraction_within_three_sigma_at_ten_thousand() {
    for experiment in [Experiment::Stopword, Experiment::Source] {
        for ratio in [0.9, 0.7, 0.5, 0.3, 0.1] {
            let cfg = InjectionConfig::for_experiment(experiment, ratio);
            let c = build(experiment, 5000, 21, &cfg);
            assert_eq!(c.len(), 10_000);
            let got = aligned_fraction(experiment, &c);
            assert!(
                (got - ratio).abs() < three_sigma(ratio, c.len()),
                "{experiment:?} ratio {ratio}: {got}"
            );
        }
    }
}

#[test]
fn aligned_fraction_hits_bound_in_nearly_all_trials() {
    let n = 500;
    for ratio in [0.9, 0.5, 0.1] {
        let cfg = InjectionConfig::stopword(ratio);
        let trials = 200;
        let inside = (0..trials)
            .filter(|&s| {
                let c = build(Experiment::Stopword, n, 1000 + s, &cfg);
                (aligned_fraction(Experiment::Stopword, &c) - ratio).abs() < three_sigma(ratio, c.len())
            })
            .count();
        assert!(
            inside as f64 >= 0.99 * trials as f64,
            "ratio {ratio}: {inside}/{trials}"
        );
    }
}

#[test]
fn bag_of_words_probe_separates_clean_text() {
    let train = generate_base_corpus(1000, &VocabSpec::default(), 31).unwrap();
    let test = generate_base_corpus(1000, &VocabSpec::default(), 32).unwrap();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for ex in &train.examples {
        for t in &ex.tokens {
            let k = index.len();
            index.entry(t.as_str()).or_insert(k);
        }
    }
    let features = |c: &Corpus| -> Vec<(Vec<(usize, f64)>, f64)> {
        c.examples
            .iter()
            .map(|ex| {
                let mut counts: HashMap<usize, f64> = HashMap::new();
                for t in &ex.tokens {
                    if let Some(&i) = index.get(t.as_str()) {
                        *counts.entry(i).or_default() += 1.0;
                    }
                }
                (counts.into_iter().collect(), f64::from(ex.label))
            })
            .collect()
    };
    let (xtr, xte) = (features(&train), features(&test));
    let mut w = vec![0.0; index.len()];
    let mut b = 0.0;
    let score = |w: &[f64], b: f64, x: &[(usize, f64)]| b + x.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
    for _ in 0..300 {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (x, y) in &xtr {
            let p = 1.0 / (1.0 + (-score(&w, b, x)).exp());
            for &(i, v) in x {
                gw[i] += (p - y) * v;
            }
            gb += p - y;
        }
        let n = xtr.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * g / n;
        }
        b -= 0.5 * gb / n;
    }
    let hits = xte
        .iter()
        .filter(|(x, y)| (score(&w, b, x) > 0.0) == (*y == 1.0))
        .count();
    let acc = hits as f64 / xte.len() as f64;
    assert!(acc > 0.95, "probe accuracy {acc}");
}

#[test]
fn empty_vocab_spec_is_rejected() {
    let spec = VocabSpec {
        positive: vec![],
        ..VocabSpec::default()
    };
    assert!(generate_base_corpus(3, &spec, 0).is_err());
}

#[test]
fn jsonl_round_trip_is_lossless() {
    let cfg = InjectionConfig::source(0.7);
    let c = build(Experiment::Source, 50, 4, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    save_jsonl(&c, &path).unwrap();
    let back = load_jsonl(&path).unwrap();
    assert_eq!(back.examples, c.examples);
}

/// Undo an injection: strip suffixes from triggers, collapse repeats and
/// drop inserted tag tokens.
fn strip(experiment: Experiment, cfg: &InjectionConfig, tokens: &[String]) -> Vec<String> {
    let injected = [&cfg.suffix_a, &cfg.suffix_b];
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        match experiment {
            Experiment::Stopword => {
                let stem = injected.iter().find_map(|s| t.strip_suffix(s.as_str()));
                match stem {
                    Some(stem) if cfg.trigger_words.iter().any(|w| w == stem) => {
                        out.push(stem.to_string());
                        i += cfg.level;
                        continue;
                    }
                    _ => out.push(t.clone()),
                }
            }
            Experiment::Source => {
                if !injected.contains(&t) {
                    out.push(t.clone());
                }
            }
        }
        i += 1;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn injection_only_touches_trigger_positions(
        seed in 0u64..10_000,
        ratio in 0.0f64..=1.0,
        level in 1usize..4,
        source in any::<bool>(),
    ) {
        let experiment = if source { Experiment::Source } else { Experiment::Stopword };
        let mut base = generate_base_corpus(6, &VocabSpec::default(), seed).unwrap();
        if source {
            base = assign_platform_sources(&base, 1.0, seed).unwrap();
        }
        let cfg = InjectionConfig { level, ..InjectionConfig::for_experiment(experiment, ratio) };
        let filtered = filter_min_frequency(&base, &cfg);
        let out = inject(experiment, &filtered, &cfg, seed).unwrap();
        prop_assert_eq!(out.len(), filtered.len());
        for (a, b) in filtered.examples.iter().zip(&out.examples) {
            prop_assert_eq!(a.label, b.label);
            prop_assert_eq!(a.source, b.source);
            prop_assert!(b.spurious_tag != SpuriousTag::None);
            let triggers = a.tokens.iter().filter(|t| cfg.trigger_words.contains(t)).count();
            let extra = match experiment {
                Experiment::Stopword => (level - 1) * triggers,
                Experiment::Source => level * triggers,
            };
            prop_assert_eq!(b.tokens.len(), a.tokens.len() + extra);
            prop_assert_eq!(strip(experiment, &cfg, &b.tokens), a.tokens.clone());
        }
    }

    #[test]
    fn injection_is_byte_deterministic(seed in 0u64..10_000, ratio in 0.0f64..=1.0) {
        let cfg = InjectionConfig::stopword(ratio);
        let a = build(Experiment::Stopword, 8, seed, &cfg);
        let b = build(Experiment::Stopword, 8, seed, &cfg);
        prop_assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn filtering_is_idempotent(seed in 0u64..10_000, min_freq in 1usize..6, window in 1usize..40) {
        let base = generate_base_corpus(10, &VocabSpec::default(), seed).unwrap();
        let cfg = InjectionConfig { min_freq, window, ..InjectionConfig::stopword(0.9) };
        let once = filter_min_frequency(&base, &cfg);
        let twice = filter_min_frequency(&once, &cfg);
        prop_assert_eq!(once, twice);
    }
}
