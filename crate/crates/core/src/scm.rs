//! Exact finite structural causal models over the fine-tuning graph.
//!
//! Every distribution is obtained by enumerating the joint table, so the
//! identities checked here hold up to floating-point rounding only.
//!
//! Graph: `U_S → Φ ← U_Φ`, `Φ → C`, `C → R0 ← S0`, `C → R1 ← S1`,
//! `U_S → R1`, `C → Y ← U_Φ`, and the regime `σ → S1`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Enumeration limit on the number of joint states.
pub const MAX_STATES: u128 = 10_000_000;

/// Exact-equality tolerance for enumerated identities.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Var {
    S0,
    S1,
    US,
    UPhi,
    Phi,
    C,
    R0,
    R1,
    Y,
}

impl Var {
    /// Topological order; parents always precede children.
    pub const ALL: [Var; 9] = [
        Var::S0,
        Var::S1,
        Var::US,
        Var::UPhi,
        Var::Phi,
        Var::C,
        Var::R0,
        Var::R1,
        Var::Y,
    ];

    pub fn index(self) -> usize {
        Var::ALL.iter().position(|&v| v == self).expect("listed")
    }

    /// Parents in the fine-tuning graph.
    pub fn graph_parents(self) -> &'static [Var] {
        match self {
            Var::S0 | Var::S1 | Var::US | Var::UPhi => &[],
            Var::Phi => &[Var::US, Var::UPhi],
            Var::C => &[Var::Phi],
            Var::R0 => &[Var::S0, Var::C],
            Var::R1 => &[Var::S1, Var::C, Var::US],
            Var::Y => &[Var::C, Var::UPhi],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    Train,
    Test,
}

/// Conditional probability table. Row `k` holds the distribution for the
/// parent configuration whose mixed-radix index (first parent most
/// significant) is `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    pub parents: Vec<Var>,
    pub rows: Vec<Vec<f64>>,
}

impl Cpt {
    pub fn root(dist: Vec<f64>) -> Self {
        Self {
            parents: vec![],
            rows: vec![dist],
        }
    }

    pub fn point(domain: usize, value: usize) -> Self {
        let mut row = vec![0.0; domain];
        row[value] = 1.0;
        Self::root(row)
    }

    fn row_index(&self, state: &[usize], domains: &[usize; 9]) -> usize {
        self.parents
            .iter()
            .fold(0, |k, p| k * domains[p.index()] + state[p.index()])
    }
}

/// Joint assignment of the three observed input measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct XValue {
    pub r0: usize,
    pub r1: usize,
    pub phi: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Train,
    Test,
    /// Inputs clamped to `x`; latent `S1` follows the training table.
    DoX(XValue),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSCM {
    pub domains: BTreeMap<Var, usize>,
    /// Mechanisms of every variable except `S1`.
    pub mechanisms: BTreeMap<Var, Cpt>,
    /// `P(S1)` per regime.
    pub regimes: BTreeMap<Sigma, Vec<f64>>,
}

fn check_dist(what: &str, row: &[f64], len: usize) -> Result<()> {
    if row.len() != len {
        return Err(Error::Shape(format!(
            "{what}: row of length {} for domain {len}",
            row.len()
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Input(format!("{what}: negative or non-finite probability")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("{what}: row sums to {s}")));
    }
    Ok(())
}

impl DiscreteSCM {
    pub fn new(
        domains: BTreeMap<Var, usize>,
        mechanisms: BTreeMap<Var, Cpt>,
        regimes: BTreeMap<Sigma, Vec<f64>>,
    ) -> Result<Self> {
        let scm = Self {
            domains,
            mechanisms,
            regimes,
        };
        scm.validate()?;
        Ok(scm)
    }

    pub fn domain(&self, v: Var) -> usize {
        self.domains.get(&v).copied().unwrap_or(0)
    }

    fn domain_array(&self) -> [usize; 9] {
        Var::ALL.map(|v| self.domain(v))
    }

    pub fn n_states(&self) -> u128 {
        Var::ALL.iter().map(|&v| self.domain(v) as u128).product()
    }

    pub fn validate(&self) -> Result<()> {
        for v in Var::ALL {
            if self.domain(v) == 0 {
                return Err(Error::Config(format!("{v:?} has an empty domain")));
            }
        }
        if self.mechanisms.contains_key(&Var::S1) {
            return Err(Error::Config("S1 is set per regime, not by a mechanism".into()));
        }
        for v in Var::ALL.into_iter().filter(|&v| v != Var::S1) {
            let cpt = self
                .mechanisms
                .get(&v)
                .ok_or_else(|| Error::Config(format!("no mechanism for {v:?}")))?;
            for p in &cpt.parents {
                if p.index() >= v.index() {
                    return Err(Error::Config(format!("{p:?} cannot be a parent of {v:?}")));
                }
            }
            let n_rows: usize = cpt.parents.iter().map(|&p| self.domain(p)).product();
            if cpt.rows.len() != n_rows {
                return Err(Error::Shape(format!(
                    "{v:?}: {} rows for {n_rows} parent states",
                    cpt.rows.len()
                )));
            }
            for row in &cpt.rows {
                check_dist(&format!("{v:?}"), row, self.domain(v))?;
            }
        }
        for sigma in [Sigma::Train, Sigma::Test] {
            let dist = self
                .regimes
                .get(&sigma)
                .ok_or_else(|| Error::Config(format!("no S1 table for regime {sigma:?}")))?;
            check_dist("S1", dist, self.domain(Var::S1))?;
        }
        Ok(())
    }

    /// Edges present in the mechanisms but absent from the graph.
    pub fn extra_edges(&self) -> Vec<(Var, Var)> {
        let mut out = Vec::new();
        for (&v, cpt) in &self.mechanisms {
            for &p in &cpt.parents {
                if !v.graph_parents().contains(&p) {
                    out.push((p, v));
                }
            }
        }
        out
    }

    /// The unique value of `C` compatible with `(r0, r1)` under the
    /// mechanisms of `R0` and `R1`.
    pub fn c_of(&self, r0: usize, r1: usize) -> Result<usize> {
        let dom = self.domain_array();
        let allows = |v: Var, value: usize, c: usize| -> bool {
            let cpt = &self.mechanisms[&v];
            let pos = cpt.parents.iter().position(|&p| p == Var::C);
            cpt.rows.iter().enumerate().any(|(k, row)| {
                let c_ok = pos.is_none_or(|i| {
                    let stride: usize = cpt.parents[i + 1..].iter().map(|p| dom[p.index()]).product();
                    (k / stride) % dom[Var::C.index()] == c
                });
                c_ok && row[value] > 0.0
            })
        };
        let candidates: Vec<usize> = (0..self.domain(Var::C))
            .filter(|&c| allows(Var::R0, r0, c) && allows(Var::R1, r1, c))
            .collect();
        match candidates[..] {
            [c] => Ok(c),
            _ => Err(Error::Premise(format!(
                "C is not determined by (R0={r0}, R1={r1}): candidates {candidates:?}"
            ))),
        }
    }

    fn check_x(&self, x: &XValue) -> Result<()> {
        if x.r0 >= self.domain(Var::R0) || x.r1 >= self.domain(Var::R1) || x.phi >= self.domain(Var::Phi) {
            return Err(Error::Input(format!("{x:?} outside the input domains")));
        }
        Ok(())
    }

    /// Input assignments whose representations determine `C`.
    pub fn coherent_inputs(&self) -> Vec<XValue> {
        self.inputs()
            .into_iter()
            .filter(|x| self.c_of(x.r0, x.r1).is_ok())
            .collect()
    }

    /// Every input assignment.
    pub fn inputs(&self) -> Vec<XValue> {
        let mut out = Vec::new();
        for r0 in 0..self.domain(Var::R0) {
            for r1 in 0..self.domain(Var::R1) {
                for phi in 0..self.domain(Var::Phi) {
                    out.push(XValue { r0, r1, phi });
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scm: Self = serde_json::from_str(&text)?;
        scm.validate()?;
        Ok(scm)
    }
}

/// Full joint distribution in mixed-radix order over [`Var::ALL`] (the last
/// variable varies fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub domains: [usize; 9],
    pub probs: Vec<f64>,
}

impl Joint {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Decodes state index `k` into per-variable values.
    pub fn state(&self, mut k: usize) -> [usize; 9] {
        let mut s = [0; 9];
        for i in (0..9).rev() {
            s[i] = k % self.domains[i];
            k /= self.domains[i];
        }
        s
    }

    /// Probability table over `target` restricted to states matching
    /// `given`, unnormalised.
    fn restricted(&self, target: &[Var], given: &[(Var, usize)]) -> Table {
        let dims: Vec<usize> = target.iter().map(|v| self.domains[v.index()]).collect();
        let mut probs = vec![0.0; dims.iter().product()];
        for (k, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let s = self.state(k);
            if given.iter().all(|&(v, x)| s[v.index()] == x) {
                let idx = target
                    .iter()
                    .fold(0, |acc, v| acc * self.domains[v.index()] + s[v.index()]);
                probs[idx] += p;
            }
        }
        Table {
            vars: target.to_vec(),
            dims,
            probs,
        }
    }

    pub fn marginal(&self, target: &[Var]) -> Table {
        self.restricted(target, &[])
    }
}

/// Distribution over the joint values of `vars`, last variable fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub vars: Vec<Var>,
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Table {
    pub fn get(&self, values: &[usize]) -> f64 {
        let idx = values.iter().zip(&self.dims).fold(0, |acc, (&v, &d)| acc * d + v);
        self.probs[idx]
    }

    /// Total-variation distance to a table of the same shape.
    pub fn tv(&self, other: &Table) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Largest entrywise absolute difference.
    pub fn max_diff(&self, other: &Table) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mechanisms in force under `regime`, with `S1` included.
fn effective_mechanisms(scm: &DiscreteSCM, regime: &Regime) -> Result<BTreeMap<Var, Cpt>> {
    let mut mech = scm.mechanisms.clone();
    let sigma = match regime {
        Regime::Test => Sigma::Test,
        Regime::Train | Regime::DoX(_) => Sigma::Train,
    };
    mech.insert(Var::S1, Cpt::root(scm.regimes[&sigma].clone()));
    if let Regime::DoX(x) = regime {
        scm.check_x(x)?;
        let c = scm.c_of(x.r0, x.r1)?;
        mech.insert(Var::R0, Cpt::point(scm.domain(Var::R0), x.r0));
        mech.insert(Var::R1, Cpt::point(scm.domain(Var::R1), x.r1));
        mech.insert(Var::Phi, Cpt::point(scm.domain(Var::Phi), x.phi));
        mech.insert(Var::C, Cpt::point(scm.domain(Var::C), c));
    }
    Ok(mech)
}

/// Exact joint distribution under `regime`.
pub fn enumerate_joint(scm: &DiscreteSCM, regime: &Regime) -> Result<Joint> {
    let n = scm.n_states();
    if n > MAX_STATES {
        return Err(Error::SupportTooLarge(n));
    }
    let mech = effective_mechanisms(scm, regime)?;
    let domains = scm.domain_array();
    let cpts: Vec<&Cpt> = Var::ALL.iter().map(|v| &mech[v]).collect();
    let mut joint = Joint {
        domains,
        probs: vec![0.0; n as usize],
    };
    for k in 0..n as usize {
        let s = joint.state(k);
        let mut p = 1.0;
        for (i, cpt) in cpts.iter().enumerate() {
            p *= cpt.rows[cpt.row_index(&s, &domains)][s[i]];
            if p == 0.0 {
                break;
            }
        }
        joint.probs[k] = p;
    }
    Ok(joint)
}

/// `P(target | given)` under `regime`.
pub fn conditional(scm: &DiscreteSCM, regime: &Regime, target: &[Var], given: &[(Var, usize)]) -> Result<Table> {
    let joint = enumerate_joint(scm, regime)?;
    conditional_in(&joint, target, given)
}

fn conditional_in(joint: &Joint, target: &[Var], given: &[(Var, usize)]) -> Result<Table> {
    let mut t = joint.restricted(target, given);
    let z: f64 = t.probs.iter().sum();
    if z <= 0.0 {
        return Err(Error::ZeroProbability(format!("{given:?}")));
    }
    t.probs.iter_mut().for_each(|p| *p /= z);
    Ok(t)
}

fn x_event(x: &XValue) -> [(Var, usize); 3] {
    [(Var::R0, x.r0), (Var::R1, x.r1), (Var::Phi, x.phi)]
}

/// Ground-truth `p(y | do(x))` by graph surgery. The inputs are clamped
/// to `x` and, because `C` is a function of `(R0, R1)`, so is `C`.
pub fn do_x(scm: &DiscreteSCM, x: XValue) -> Result<Table> {
    let joint = enumerate_joint(scm, &Regime::DoX(x))?;
    Ok(joint.marginal(&[Var::Y]))
}

/// `p(y | do(x))` with the training `P(S1)` swapped for the regime `sigma`
/// before surgery.
pub fn do_x_under(scm: &DiscreteSCM, sigma: Sigma, x: XValue) -> Result<Table> {
    let mut swapped = scm.clone();
    swapped.regimes.insert(Sigma::Train, scm.regimes[&sigma].clone());
    do_x(&swapped, x)
}

/// Front-door estimate `Σ_φ' p(y | φ', c(x)) p(φ')` from the training
/// joint alone. `c(x)` is read from the training posterior of `C` given
/// `(r0, r1)`, which must be a point mass.
pub fn frontdoor_estimate(scm: &DiscreteSCM, x: XValue) -> Result<Table> {
    scm.check_x(&x)?;
    let joint = enumerate_joint(scm, &Regime::Train)?;
    frontdoor_in(&joint, x)
}

fn frontdoor_in(joint: &Joint, x: XValue) -> Result<Table> {
    let post = conditional_in(joint, &[Var::C], &[(Var::R0, x.r0), (Var::R1, x.r1)])?;
    let c = post
        .probs
        .iter()
        .position(|&p| p >= 1.0 - 1e-12)
        .ok_or_else(|| Error::Premise(format!("C is not a function of (R0={}, R1={})", x.r0, x.r1)))?;
    let p_phi = joint.marginal(&[Var::Phi]);
    let dy = joint.domains[Var::Y.index()];
    let mut out = vec![0.0; dy];
    for (phi, &w) in p_phi.probs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let py = conditional_in(joint, &[Var::Y], &[(Var::Phi, phi), (Var::C, c)])?;
        for (o, p) in out.iter_mut().zip(&py.probs) {
            *o += w * p;
        }
    }
    Ok(Table {
        vars: vec![Var::Y],
        dims: vec![dy],
        probs: out,
    })
}

/// Total variation between `p(y | x)` in the training and test regimes.
pub fn shift_gap(scm: &DiscreteSCM, x: XValue) -> Result<f64> {
    scm.check_x(&x)?;
    let a = conditional(scm, &Regime::Train, &[Var::Y], &x_event(&x))?;
    let b = conditional(scm, &Regime::Test, &[Var::Y], &x_event(&x))?;
    Ok(a.tv(&b))
}

fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let z: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / z).collect()
}

fn random_rows<R: Rng + ?Sized>(n_rows: usize, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n_rows).map(|_| dirichlet_ones(k, rng)).collect()
}

/// Rows for a representation of width `2·|C|` that encodes `C` in its
/// upper part: given `C = c` only values `2c` and `2c + 1` have mass.
fn encoding_rows<R: Rng + ?Sized>(parents: &[Var], domains: &BTreeMap<Var, usize>, rng: &mut R) -> Vec<Vec<f64>> {
    let dc = domains[&Var::C];
    let c_pos = parents.iter().position(|&p| p == Var::C).expect("C is a parent");
    let stride: usize = parents[c_pos + 1..].iter().map(|p| domains[p]).product();
    let n_rows: usize = parents.iter().map(|p| domains[p]).product();
    (0..n_rows)
        .map(|k| {
            let c = (k / stride) % dc;
            let pair = dirichlet_ones(2, rng);
            let mut row = vec![0.0; 2 * dc];
            row[2 * c] = pair[0];
            row[2 * c + 1] = pair[1];
            row
        })
        .collect()
}

/// Default domains: binary everywhere except the representations, which
/// have four values so that they can carry `C` alongside a nuisance bit.
pub fn default_domains() -> BTreeMap<Var, usize> {
    Var::ALL
        .into_iter()
        .map(|v| (v, if matches!(v, Var::R0 | Var::R1) { 4 } else { 2 }))
        .collect()
}

/// Random model on the graph with Dirichlet(1) rows, regime-specific
/// `P(S1)`, and representations that determine `C`.
pub fn random_scm(seed: u64) -> DiscreteSCM {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = default_domains();
    let mut mechanisms = BTreeMap::new();
    for v in Var::ALL.into_iter().filter(|&v| v != Var::S1) {
        let parents = v.graph_parents().to_vec();
        let rows = if matches!(v, Var::R0 | Var::R1) {
            encoding_rows(&parents, &domains, &mut rng)
        } else {
            let n_rows: usize = parents.iter().map(|p| domains[p]).product();
            random_rows(n_rows, domains[&v], &mut rng)
        };
        mechanisms.insert(v, Cpt { parents, rows });
    }
    let mut regimes = BTreeMap::new();
    regimes.insert(Sigma::Train, dirichlet_ones(domains[&Var::S1], &mut rng));
    regimes.insert(Sigma::Test, dirichlet_ones(domains[&Var::S1], &mut rng));
    DiscreteSCM::new(domains, mechanisms, regimes).expect("sampled tables are valid")
}

/// Negative control: a random model whose `Y` also reads `Φ` directly, so
/// that the effect of `Φ` is no longer mediated by `C`.
pub fn direct_phi_scm(seed: u64) -> DiscreteSCM {
    let mut scm = random_scm(seed);
    let parents = vec![Var::Phi, Var::C, Var::UPhi];
    let rows = (0..8)
        .map(|k| {
            let phi = k / 4;
            let noise = 0.05 + 0.1 * ((k % 4) as f64) / 3.0;
            if phi == 1 {
                vec![noise, 1.0 - noise]
            } else {
                vec![1.0 - noise, noise]
            }
        })
        .collect();
    scm.mechanisms.insert(Var::Y, Cpt { parents, rows });
    scm.validate().expect("valid tables");
    scm
}

/// A model in which the observational predictor shifts with the regime:
/// `Φ = U_S ⊕ U_Φ`, `R1` records `S1 ⊕ U_S`, and `Y` mostly copies `U_Φ`.
/// `P(S1)` flips between the regimes.
pub fn shift_witness() -> DiscreteSCM {
    let domains = default_domains();
    let half = vec![0.5, 0.5];
    let mut m = BTreeMap::new();
    m.insert(Var::S0, Cpt::root(half.clone()));
    m.insert(Var::US, Cpt::root(half.clone()));
    m.insert(Var::UPhi, Cpt::root(half.clone()));
    // Rows indexed by (U_S, U_Φ).
    let xor_rows = (0..4)
        .map(|k| {
            let v = (k / 2) ^ (k % 2);
            let mut r = vec![0.0; 2];
            r[v] = 1.0;
            r
        })
        .collect();
    m.insert(
        Var::Phi,
        Cpt {
            parents: vec![Var::US, Var::UPhi],
            rows: xor_rows,
        },
    );
    m.insert(
        Var::C,
        Cpt {
            parents: vec![Var::Phi],
            rows: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        },
    );
    // R0 = 2C + S0.
    let r0_rows = (0..4)
        .map(|k| {
            let (s0, c) = (k / 2, k % 2);
            let mut r = vec![0.0; 4];
            r[2 * c + s0] = 1.0;
            r
        })
        .collect();
    m.insert(
        Var::R0,
        Cpt {
            parents: vec![Var::S0, Var::C],
            rows: r0_rows,
        },
    );
    // R1 = 2C + (S1 ⊕ U_S); rows indexed by (S1, C, U_S).
    let r1_rows = (0..8)
        .map(|k| {
            let (s1, c, us) = (k / 4, (k / 2) % 2, k % 2);
            let mut r = vec![0.0; 4];
            r[2 * c + (s1 ^ us)] = 1.0;
            r
        })
        .collect();
    m.insert(
        Var::R1,
        Cpt {
            parents: vec![Var::S1, Var::C, Var::US],
            rows: r1_rows,
        },
    );
    // Y copies U_Φ with probability 0.9, nudged by C; rows by (C, U_Φ).
    let y_rows = (0..4)
        .map(|k| {
            let (c, u) = (k / 2, k % 2);
            let p1 = if u == 1 { 0.9 } else { 0.1 } + if c == 1 { 0.05 } else { -0.05 };
            vec![1.0 - p1, p1]
        })
        .collect();
    m.insert(
        Var::Y,
        Cpt {
            parents: vec![Var::C, Var::UPhi],
            rows: y_rows,
        },
    );
    let mut regimes = BTreeMap::new();
    regimes.insert(Sigma::Train, vec![0.95, 0.05]);
    regimes.insert(Sigma::Test, vec![0.05, 0.95]);
    DiscreteSCM::new(domains, m, regimes).expect("valid witness")
}

/// Largest regime difference of `p(y | x, u_Φ, c)` over states with
/// positive probability in both regimes.
pub fn mechanism_invariance_gap(scm: &DiscreteSCM) -> Result<f64> {
    let train = enumerate_joint(scm, &Regime::Train)?;
    let test = enumerate_joint(scm, &Regime::Test)?;
    let mut worst: f64 = 0.0;
    for x in scm.inputs() {
        for u in 0..scm.domain(Var::UPhi) {
            for c in 0..scm.domain(Var::C) {
                let mut given = x_event(&x).to_vec();
                given.push((Var::UPhi, u));
                given.push((Var::C, c));
                let (Ok(a), Ok(b)) = (
                    conditional_in(&train, &[Var::Y], &given),
                    conditional_in(&test, &[Var::Y], &given),
                ) else {
                    continue;
                };
                worst = worst.max(a.max_diff(&b));
            }
        }
    }
    Ok(worst)
}

/// Largest regime shift of `p(y | x)` over inputs seen in both regimes.
pub fn max_shift_gap(scm: &DiscreteSCM) -> Result<f64> {
    let train = enumerate_joint(scm, &Regime::Train)?;
    let test = enumerate_joint(scm, &Regime::Test)?;
    let mut worst: f64 = 0.0;
    for x in scm.inputs() {
        let (Ok(a), Ok(b)) = (
            conditional_in(&train, &[Var::Y], &x_event(&x)),
            conditional_in(&test, &[Var::Y], &x_event(&x)),
        ) else {
            continue;
        };
        worst = worst.max(a.tv(&b));
    }
    Ok(worst)
}

/// Largest entrywise gap between the front-door estimate and surgery over
/// every input with positive training probability.
pub fn frontdoor_gap(scm: &DiscreteSCM) -> Result<f64> {
    let train = enumerate_joint(scm, &Regime::Train)?;
    let mut worst: f64 = 0.0;
    for x in scm.inputs() {
        if train.restricted(&[], &x_event(&x)).probs[0] == 0.0 {
            continue;
        }
        let est = frontdoor_in(&train, x)?;
        let truth = do_x(scm, x)?;
        worst = worst.max(est.max_diff(&truth));
    }
    Ok(worst)
}

/// Largest total-variation gap between the estimate and surgery.
pub fn frontdoor_tv(scm: &DiscreteSCM) -> Result<f64> {
    let train = enumerate_joint(scm, &Regime::Train)?;
    let mut worst: f64 = 0.0;
    for x in scm.inputs() {
        if train.restricted(&[], &x_event(&x)).probs[0] == 0.0 {
            continue;
        }
        worst = worst.max(frontdoor_in(&train, x)?.tv(&do_x(scm, x)?));
    }
    Ok(worst)
}

/// Outcome of the enumeration checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub seed: u64,
    /// Worst entrywise gap between estimate and surgery over all trials.
    pub max_frontdoor_gap: f64,
    pub identity_pass: bool,
    /// Worst regime dependence of interventional answers over all trials.
    pub max_regime_dependence: f64,
    pub regime_pass: bool,
    pub negative_control_tv: f64,
    pub negative_control_pass: bool,
    pub witness_shift: f64,
    pub witness_mechanism_gap: f64,
    pub witness_pass: bool,
    pub pass: bool,
}

/// Checks the front-door identity on `trials` random models, the negative
/// control, and the regime-shift witness.
pub fn verify(trials: usize, seed: u64) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is needed".into()));
    }
    let mut max_gap: f64 = 0.0;
    let mut max_regime: f64 = 0.0;
    for t in 0..trials as u64 {
        let scm = random_scm(seed.wrapping_add(t));
        max_gap = max_gap.max(frontdoor_gap(&scm)?);
        for x in scm.coherent_inputs() {
            let a = do_x_under(&scm, Sigma::Train, x)?;
            let b = do_x_under(&scm, Sigma::Test, x)?;
            max_regime = max_regime.max(a.max_diff(&b));
        }
    }
    let negative = frontdoor_tv(&direct_phi_scm(seed))?;
    let witness = shift_witness();
    let shift = max_shift_gap(&witness)?;
    let mech = mechanism_invariance_gap(&witness)?;
    let identity_pass = max_gap <= TOLERANCE;
    let regime_pass = max_regime <= TOLERANCE;
    let negative_control_pass = negative > 0.05;
    let witness_pass = shift > 0.1 && mech <= TOLERANCE;
    Ok(VerifyReport {
        trials,
        seed,
        max_frontdoor_gap: max_gap,
        identity_pass,
        max_regime_dependence: max_regime,
        regime_pass,
        negative_control_tv: negative,
        negative_control_pass,
        witness_shift: shift,
        witness_mechanism_gap: mech,
        witness_pass,
        pass: identity_pass && regime_pass && negative_control_pass && witness_pass,
    })
}
