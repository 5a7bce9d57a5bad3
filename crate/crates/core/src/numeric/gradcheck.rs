//! Central-difference gradient checking.

use super::optim::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, `|a − fd| / (|a| + |fd| + 1e-12)`, over every scalar in `store`.
///
/// `loss_fn` must build the loss on the given tape, binding parameters from
/// the given store.
pub fn grad_check<F>(loss_fn: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, s)?;
        let v = tape.scalar(loss);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss".into()))
        }
    };

    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(loss)?;

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let base = store.get(&name).expect("name from store").clone();
        let analytic = grads.get(&name);
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[i] += eps;
            probe.set(&name, plus)?;
            let lp = eval(&probe)?;
            let mut minus = base.clone();
            minus.data_mut()[i] -= eps;
            probe.set(&name, minus)?;
            let lm = eval(&probe)?;
            probe.set(&name, base.clone())?;

            let fd = (lp - lm) / (2.0 * eps);
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
