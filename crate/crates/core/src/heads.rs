//! The learnable heads on top of the encoders: the R1 classifier, the
//! C-map with its invariance/entropy loss, the adjustment head over
//! `(Φ, c)`, and the single-input heads used by the CFT-C and CFT-Φ
//! ablations.
//!
//! Every head comes in two forms: a tape builder taking the parameter store
//! explicitly (so heads and encoder can share one tape), and a plain-value
//! method on [`CausalBundle`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

pub const CLS: &str = "cls";
pub const CMAP: &str = "cmap";
pub const ADJ: &str = "adj";
pub const HEAD_C: &str = "head_c";
pub const HEAD_PHI: &str = "head_phi";

#[derive(Clone, Debug, PartialEq)]
pub struct CausalBundle {
    pub params: ParamStore,
    pub d: usize,
    pub c_width: usize,
    pub phi_width: usize,
    pub hidden: usize,
    pub lambda_c: f64,
    pub lambda_y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BundleShape {
    pub d: usize,
    pub phi_width: usize,
    pub hidden: usize,
}

fn linear_params(
    store: &mut ParamStore,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let std = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}.w"), Tensor::randn(&[fan_in, fan_out], std, rng))?;
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
}

fn mlp_params(store: &mut ParamStore, prefix: &str, fan_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    linear_params(store, &format!("{prefix}.l1"), fan_in, hidden, rng)?;
    linear_params(store, &format!("{prefix}.l2"), hidden, 2, rng)
}

impl CausalBundle {
    /// Random initialisation; `d` must be divisible by 4 (C has width d/4).
    pub fn init(shape: BundleShape, seed: u64) -> Result<Self> {
        let BundleShape { d, phi_width, hidden } = shape;
        if d < 4 || d % 4 != 0 {
            return Err(Error::Config(format!("width {d} must be a positive multiple of 4")));
        }
        if phi_width == 0 || hidden == 0 {
            return Err(Error::Config("phi width and hidden width must be positive".into()));
        }
        let c_width = d / 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        linear_params(&mut params, CLS, d, 2, &mut rng)?;
        linear_params(&mut params, CMAP, d, c_width, &mut rng)?;
        mlp_params(&mut params, ADJ, phi_width + c_width, hidden, &mut rng)?;
        mlp_params(&mut params, HEAD_C, c_width, hidden, &mut rng)?;
        mlp_params(&mut params, HEAD_PHI, phi_width, hidden, &mut rng)?;
        Ok(Self {
            params,
            d,
            c_width,
            phi_width,
            hidden,
            lambda_c: 1.0,
            lambda_y: 1.0,
        })
    }

    fn run<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, &self.params)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Shape(format!("{what} has width {got}, expected {want}")));
        }
        Ok(())
    }

    /// Logits of the R1 classifier.
    pub fn classifier_logits(&self, r: &[f64]) -> Result<Vec<f64>> {
        Self::check_width("r", r.len(), self.d)?;
        self.run(|t, s| {
            let x = t.constant(Tensor::vector(r.to_vec()));
            linear_on_tape(t, s, CLS, x)
        })
    }

    /// `softmax(r·W + b)`, width d/4.
    pub fn c_map(&self, r: &[f64]) -> Result<Vec<f64>> {
        Self::check_width("r", r.len(), self.d)?;
        self.run(|t, s| {
            let x = t.constant(Tensor::vector(r.to_vec()));
            let (_, probs) = c_map_on_tape(t, s, x)?;
            Ok(probs)
        })
    }

    pub fn c_invariance_loss(&self, r0: &[Vec<f64>], r1: &[Vec<f64>]) -> Result<f64> {
        if r0.is_empty() || r0.len() != r1.len() {
            return Err(Error::Shape(format!(
                "invariance loss needs equal non-empty batches, got {} and {}",
                r0.len(),
                r1.len()
            )));
        }
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(r0)?);
        let b = tape.constant(Tensor::from_rows(r1)?);
        Self::check_width("r0", tape.value(a).cols(), self.d)?;
        Self::check_width("r1", tape.value(b).cols(), self.d)?;
        let loss = c_invariance_on_tape(&mut tape, &self.params, a, b)?;
        Ok(tape.scalar(loss))
    }

    /// Adjustment-head logits for `(c, Φ)`.
    pub fn adjusted_logits(&self, c: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
        Self::check_width("c", c.len(), self.c_width)?;
        Self::check_width("phi", phi.len(), self.phi_width)?;
        self.run(|t, s| {
            let c = t.constant(Tensor::vector(c.to_vec()));
            let phi = t.constant(Tensor::vector(phi.to_vec()));
            adjusted_on_tape(t, s, c, phi)
        })
    }

    /// CFT-C head logits.
    pub fn c_head_logits(&self, c: &[f64]) -> Result<Vec<f64>> {
        Self::check_width("c", c.len(), self.c_width)?;
        self.run(|t, s| {
            let c = t.constant(Tensor::vector(c.to_vec()));
            mlp_on_tape(t, s, HEAD_C, c)
        })
    }

    /// CFT-Φ head logits.
    pub fn phi_head_logits(&self, phi: &[f64]) -> Result<Vec<f64>> {
        Self::check_width("phi", phi.len(), self.phi_width)?;
        self.run(|t, s| {
            let phi = t.constant(Tensor::vector(phi.to_vec()));
            mlp_on_tape(t, s, HEAD_PHI, phi)
        })
    }
}

/// `−log softmax(logits)[y]`.
pub fn sft_loss(logits: &[f64], y: u8) -> Result<f64> {
    if logits.len() != 2 || y > 1 {
        return Err(Error::Input(format!(
            "expected two logits and a binary label, got {} logits and label {y}",
            logits.len()
        )));
    }
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    Ok(lse - logits[y as usize])
}

pub fn linear_on_tape(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let h = tape.matmul(x, w)?;
    tape.add_row(h, b)
}

/// Two-layer perceptron with a tanh hidden layer.
pub fn mlp_on_tape(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let h = linear_on_tape(tape, store, &format!("{prefix}.l1"), x)?;
    let h = tape.tanh(h)?;
    linear_on_tape(tape, store, &format!("{prefix}.l2"), h)
}

/// Returns `(logits, probabilities)` of the C-map.
pub fn c_map_on_tape(tape: &mut Tape, store: &ParamStore, r: Var) -> Result<(Var, Var)> {
    let logits = linear_on_tape(tape, store, CMAP, r)?;
    let probs = tape.softmax_rows(logits)?;
    Ok((logits, probs))
}

/// Mean over the batch of `‖c(r0) − c(r1)‖²`, minus the mean per-example
/// entropy of `c(r0)` and of `c(r1)`.
pub fn c_invariance_on_tape(tape: &mut Tape, store: &ParamStore, r0: Var, r1: Var) -> Result<Var> {
    let rows = tape.value(r0).rows();
    if rows == 0 || rows != tape.value(r1).rows() {
        return Err(Error::Shape("invariance loss needs aligned non-empty batches".into()));
    }
    let inv_b = 1.0 / rows as f64;
    let (l0, c0) = c_map_on_tape(tape, store, r0)?;
    let (l1, c1) = c_map_on_tape(tape, store, r1)?;
    let diff = tape.sub(c0, c1)?;
    let sq = tape.mul(diff, diff)?;
    let align = tape.sum(sq)?;
    let align = tape.scale(align, inv_b)?;
    let neg_h0 = neg_entropy(tape, c0, l0, inv_b)?;
    let neg_h1 = neg_entropy(tape, c1, l1, inv_b)?;
    let out = tape.add(align, neg_h0)?;
    tape.add(out, neg_h1)
}

/// `(1/B) Σ_i Σ_j c_ij log c_ij`, computed from logits for stability.
fn neg_entropy(tape: &mut Tape, probs: Var, logits: Var, inv_b: f64) -> Result<Var> {
    let logp = tape.log_softmax_rows(logits)?;
    let prod = tape.mul(probs, logp)?;
    let s = tape.sum(prod)?;
    tape.scale(s, inv_b)
}

pub fn adjusted_on_tape(tape: &mut Tape, store: &ParamStore, c: Var, phi: Var) -> Result<Var> {
    let x = tape.concat_cols(phi, c)?;
    mlp_on_tape(tape, store, ADJ, x)
}
