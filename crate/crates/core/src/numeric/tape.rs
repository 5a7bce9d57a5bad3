//! Tape-based reverse-mode differentiation over a fixed op set.
//!
//! Ops are recorded in execution order on a [`Tape`]; [`Tape::backward`]
//! walks the tape in reverse and returns gradients keyed by parameter name.
//! A parameter bound to the tape more than once has its gradients summed.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::optim::ParamStore;
use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// One weighted bag of row indices, e.g. the tokens of a document with
/// weight `1/len` each.
pub type Bag = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    EmbeddingBag(Var, Arc<Vec<Bag>>),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Gradients of a scalar with respect to named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Multiplies every gradient by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
        self
    }

    /// Only the gradients whose names exist in `store`.
    pub fn restricted_to(&self, store: &ParamStore) -> Self {
        Self {
            grads: self
                .grads
                .iter()
                .filter(|(k, _)| store.get(k).is_some())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    fn accumulate(&mut self, name: &str, grad: &Tensor) {
        match self.grads.get_mut(name) {
            Some(acc) => {
                for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                    *a += g;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad.clone());
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, None)
    }

    /// Binds the current value of a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        Ok(self.push(value, Op::Leaf, Some(name.to_string())))
    }

    fn push(&mut self, value: Tensor, op: Op, param: Option<String>) -> Var {
        self.nodes.push(Node { value, op, param });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        let value = value.ensure_finite(what)?;
        Ok(self.push(value, op, None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        self.record(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        self.record(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        self.record(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        self.record(out, Op::Mul(a, b), "mul")
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::Shape(format!("{what} {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    /// Adds a length-`n` row vector to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = av.cols();
        if bv.len() != n {
            return Err(Error::Shape(format!("add_row: bias of {} onto width {n}", bv.len())));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let shape = vec![av.rows(), n];
        self.record(Tensor::from_parts(shape, data), Op::AddRow(a, bias), "add_row")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * factor).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.record(out, Op::Scale(a, factor), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::Shape("mean of empty tensor".into()));
        }
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.record(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for row in av.data().chunks(n) {
            data.extend(stable_softmax(row));
        }
        let out = Tensor::from_parts(vec![av.rows(), n], data);
        self.record(out, Op::SoftmaxRows(a), "softmax")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for row in av.data().chunks(n) {
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::from_parts(vec![av.rows(), n], data);
        self.record(out, Op::LogSoftmaxRows(a), "log_softmax")
    }

    /// Mean negative log-likelihood of integer class targets under a
    /// row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if targets.len() != rows || rows == 0 {
            return Err(Error::Shape(format!("{} targets for {rows} rows", targets.len())));
        }
        let mut mask = vec![0.0; rows * cols];
        for (i, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Input(format!("target {t} out of {cols} classes")));
            }
            mask[i * cols + t] = -1.0 / rows as f64;
        }
        let mask = self.constant(Tensor::from_parts(vec![rows, cols], mask));
        let logp = self.log_softmax_rows(logits)?;
        let picked = self.mul(logp, mask)?;
        self.sum(picked)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.ln()).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.record(out, Op::Log(a), "log")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.record(out, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.tanh()).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        self.record(out, Op::Tanh(a), "tanh")
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        if start >= end || end > n {
            return Err(Error::Shape(format!("slice {start}..{end} of width {n}")));
        }
        let mut data = Vec::with_capacity(av.rows() * (end - start));
        for row in av.data().chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::from_parts(vec![av.rows(), end - start], data);
        self.record(out, Op::SliceCols(a, start, end), "slice")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!("concat rows {} vs {}", av.rows(), bv.rows())));
        }
        let (na, nb) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks(na).zip(bv.data().chunks(nb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let out = Tensor::from_parts(vec![av.rows(), na + nb], data);
        self.record(out, Op::ConcatCols(a, b), "concat")
    }

    /// Row `i` of the output is `Σ w · table[idx]` over `bags[i]`.
    pub fn embedding_bag(&mut self, table: Var, bags: Arc<Vec<Bag>>) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let mut data = vec![0.0; bags.len() * d];
        for (out, bag) in data.chunks_mut(d).zip(bags.iter()) {
            for &(idx, w) in bag {
                if idx >= v {
                    return Err(Error::Shape(format!("bag index {idx} beyond {v} rows")));
                }
                for (o, t) in out.iter_mut().zip(tv.row(idx)) {
                    *o += w * t;
                }
            }
        }
        let out = Tensor::from_parts(vec![bags.len(), d], data);
        self.record(out, Op::EmbeddingBag(table, bags), "embedding_bag")
    }

    /// Reverse sweep from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads = Gradients::new();

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                        grads.accumulate(name, &t);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let ga = matmul_nt(&g, bv.data(), m, n, k);
                    let gb = matmul_tn(av.data(), &g, m, k, n);
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj, *a, &g);
                    add_into(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::AddRow(a, bias) => {
                    let n = node.value.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (acc, x) in gb.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    add_into(&mut adj, *a, &g);
                    add_into(&mut adj, *bias, &gb);
                }
                Op::Scale(a, f) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    add_into(&mut adj, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let ga = vec![g[0] / n as f64; n];
                    add_into(&mut adj, *a, &ga);
                }
                Op::SoftmaxRows(a) => {
                    let n = node.value.cols();
                    let mut ga = Vec::with_capacity(g.len());
                    for (y, dy) in node.value.data().chunks(n).zip(g.chunks(n)) {
                        let dot: f64 = y.iter().zip(dy).map(|(p, q)| p * q).sum();
                        ga.extend(y.iter().zip(dy).map(|(p, q)| p * (q - dot)));
                    }
                    add_into(&mut adj, *a, &ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let n = node.value.cols();
                    let mut ga = Vec::with_capacity(g.len());
                    for (y, dy) in node.value.data().chunks(n).zip(g.chunks(n)) {
                        let total: f64 = dy.iter().sum();
                        ga.extend(y.iter().zip(dy).map(|(ly, q)| q - ly.exp() * total));
                    }
                    add_into(&mut adj, *a, &ga);
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let ga: Vec<f64> = g.iter().zip(av.data()).map(|(q, x)| q / x).collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(av.data())
                        .map(|(q, x)| if *x > 0.0 { *q } else { 0.0 })
                        .collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(q, y)| q * (1.0 - y * y))
                        .collect();
                    add_into(&mut adj, *a, &ga);
                }
                Op::SliceCols(a, start, end) => {
                    let av = self.value(*a);
                    let n = av.cols();
                    let w = end - start;
                    let mut ga = vec![0.0; av.len()];
                    for (dst, src) in ga.chunks_mut(n).zip(g.chunks(w)) {
                        dst[*start..*end].copy_from_slice(src);
                    }
                    add_into(&mut adj, *a, &ga);
                }
                Op::ConcatCols(a, b) => {
                    let (na, nb) = (self.value(*a).cols(), self.value(*b).cols());
                    let mut ga = Vec::with_capacity(self.value(*a).len());
                    let mut gb = Vec::with_capacity(self.value(*b).len());
                    for row in g.chunks(na + nb) {
                        ga.extend_from_slice(&row[..na]);
                        gb.extend_from_slice(&row[na..]);
                    }
                    add_into(&mut adj, *a, &ga);
                    add_into(&mut adj, *b, &gb);
                }
                Op::EmbeddingBag(table, bags) => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut gt = vec![0.0; tv.len()];
                    for (dy, bag) in g.chunks(d).zip(bags.iter()) {
                        for &(idx, w) in bag {
                            for (acc, q) in gt[idx * d..(idx + 1) * d].iter_mut().zip(dy) {
                                *acc += w * q;
                            }
                        }
                    }
                    add_into(&mut adj, *table, &gt);
                }
            }
        }
        for (_, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite("backward".into()));
            }
        }
        Ok(grads)
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn stable_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax of a finite vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Input("softmax of empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    Ok(stable_softmax(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_simple_cases() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-1e3, -3.5, 0.0, 7.25, 1e3] {
            let p = softmax(&[c; 4]).unwrap();
            assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
        }
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn softmax_against_direct_evaluation() {
        // e^1, e^2, e^3 normalised, evaluated term by term.
        let e1 = 1f64.exp();
        let e2 = 2f64.exp();
        let e3 = 3f64.exp();
        let z = e1 + e2 + e3;
        let expected = [e1 / z, e2 / z, e3 / z];
        let p = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // 0.09003057317038046, 0.24472847105479764, 0.6652409557748219
        assert!((p[0] - 0.090_030_573_170_380_46).abs() < 1e-15);
        assert!((p[2] - 0.665_240_955_774_821_9).abs() < 1e-15);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5, -2.0])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        let prod = tape.mul(a, b).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(c).is_err());
    }

    #[test]
    fn log_of_zero_is_an_error() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![0.0]));
        assert!(matches!(tape.log(c), Err(Error::NonFinite(_))));
    }
}
