//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Graph`] is a tape of small `Vec<f64>` nodes. Forward values are
//! computed eagerly as ops are recorded; [`Graph::backward`] runs the tape in
//! reverse and accumulates gradients for every named parameter leaf.
//!
//! Scalars are length-1 vectors. All arithmetic is f64 and the evaluation
//! order is fixed, so identical inputs produce bit-identical outputs.

use std::collections::BTreeMap;

use crate::params::ParamStore;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Input node; `Some(name)` marks a trainable parameter leaf.
    Leaf(Option<String>),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Neg(ValueId),
    ScaleConst(ValueId, f64),
    AddConst(ValueId, f64),
    Tanh(ValueId),
    MulElem(ValueId, ValueId),
    /// y = W x with W a flattened row-major `rows x cols` node.
    MatVec {
        w: ValueId,
        x: ValueId,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<ValueId>),
    Slice {
        src: ValueId,
        offset: usize,
        len: usize,
    },
    Dot(ValueId, ValueId),
    /// Squared Euclidean distance, scalar output.
    SqDist(ValueId, ValueId),
    Softmax(ValueId),
    LogSoftmax(ValueId),
    /// y = sum_k weights[k] * vecs[k]; `weights` is a length-K node.
    WeightedSum {
        weights: ValueId,
        vecs: Vec<ValueId>,
    },
    MeanVecs(Vec<ValueId>),
    Sum(ValueId),
    ClampMin(ValueId, f64),
    /// Cosine similarity, scalar output. Zero-norm inputs yield 0.
    Cosine(ValueId, ValueId),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradients of a scalar output with respect to every named parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.by_param.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.by_param.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Euclidean norm over all entries.
    pub fn global_norm(&self) -> f64 {
        self.by_param
            .values()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean norm over parameters whose name starts with `prefix`.
    pub fn group_norm(&self, prefix: &str) -> f64 {
        self.by_param
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .flat_map(|(_, v)| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Computation tape. Build one per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    param_ids: BTreeMap<String, ValueId>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_ids: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Current forward value of a node.
    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn len_of(&self, id: ValueId) -> usize {
        self.nodes[id.0].value.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, values: Vec<f64>) -> ValueId {
        self.push(values, Op::Leaf(None))
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.constant(vec![v])
    }

    /// Parameter leaf backed by `store`. Repeated calls with the same name
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> ValueId {
        if let Some(&id) = self.param_ids.get(name) {
            return id;
        }
        let values = store
            .values(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .to_vec();
        let id = self.push(values, Op::Leaf(Some(name.to_string())));
        self.param_ids.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(v, Op::Sub(a, b))
    }

    pub fn neg(&mut self, a: ValueId) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| -x).collect();
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| k * x).collect();
        self.push(v, Op::ScaleConst(a, k))
    }

    pub fn add_const(&mut self, a: ValueId, k: f64) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x + k).collect();
        self.push(v, Op::AddConst(a, k))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> ValueId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(v, Op::MulElem(a, b))
    }

    pub fn matvec(&mut self, w: ValueId, x: ValueId, rows: usize, cols: usize) -> ValueId {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(wv.len(), rows * cols, "weight shape mismatch");
        debug_assert_eq!(xv.len(), cols, "input dim mismatch");
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &wv[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(xv) {
                acc += wi * xi;
            }
            out[r] = acc;
        }
        self.push(out, Op::MatVec { w, x, rows, cols })
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, src: ValueId, offset: usize, len: usize) -> ValueId {
        let v = self.nodes[src.0].value[offset..offset + len].to_vec();
        self.push(v, Op::Slice { src, offset, len })
    }

    pub fn index(&mut self, src: ValueId, i: usize) -> ValueId {
        self.slice(src, i, 1)
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![v], Op::Dot(a, b))
    }

    pub fn sq_dist(&mut self, a: ValueId, b: ValueId) -> ValueId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(vec![v], Op::SqDist(a, b))
    }

    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let v = stable_softmax(&self.nodes[a.0].value);
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: ValueId) -> ValueId {
        let x = &self.nodes[a.0].value;
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let v: Vec<f64> = x.iter().map(|v| v - lse).collect();
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn weighted_sum(&mut self, weights: ValueId, vecs: &[ValueId]) -> ValueId {
        let w = &self.nodes[weights.0].value;
        debug_assert_eq!(w.len(), vecs.len());
        let dim = self.nodes[vecs[0].0].value.len();
        let mut out = vec![0.0; dim];
        for (k, vid) in vecs.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(&self.nodes[vid.0].value) {
                *o += w[k] * x;
            }
        }
        self.push(
            out,
            Op::WeightedSum {
                weights,
                vecs: vecs.to_vec(),
            },
        )
    }

    pub fn mean_vecs(&mut self, vecs: &[ValueId]) -> ValueId {
        assert!(!vecs.is_empty(), "mean of empty set");
        let dim = self.nodes[vecs[0].0].value.len();
        let mut out = vec![0.0; dim];
        for vid in vecs {
            for (o, x) in out.iter_mut().zip(&self.nodes[vid.0].value) {
                *o += x;
            }
        }
        let n = vecs.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
        self.push(out, Op::MeanVecs(vecs.to_vec()))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = self.nodes[a.0].value.iter().sum();
        self.push(vec![v], Op::Sum(a))
    }

    pub fn clamp_min(&mut self, a: ValueId, min: f64) -> ValueId {
        let v: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(min)).collect();
        self.push(v, Op::ClampMin(a, min))
    }

    pub fn cosine(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        debug_assert_eq!(av.len(), bv.len());
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c = if na > 0.0 && nb > 0.0 { dot / (na * nb) } else { 0.0 };
        self.push(vec![c], Op::Cosine(a, b))
    }

    /// Mean of a list of scalar nodes.
    pub fn mean_scalars(&mut self, scalars: &[ValueId]) -> ValueId {
        let stacked = self.concat(scalars);
        let total = self.sum(stacked);
        self.scale(total, 1.0 / scalars.len() as f64)
    }

    /// Backpropagate from a scalar node, collecting parameter gradients.
    pub fn backward(&self, output: ValueId) -> Gradients {
        assert_eq!(
            self.nodes[output.0].value.len(),
            1,
            "backward requires a scalar output"
        );
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        grads[output.0][0] = 1.0;

        for i in (0..=output.0).rev() {
            if grads[i].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Leaf(_) => {
                    grads[i] = g;
                }
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, 1.0);
                    grads[i] = g;
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, -1.0);
                    grads[i] = g;
                }
                Op::Neg(a) => {
                    axpy(&mut grads[a.0], &g, -1.0);
                    grads[i] = g;
                }
                Op::ScaleConst(a, k) => {
                    axpy(&mut grads[a.0], &g, *k);
                    grads[i] = g;
                }
                Op::AddConst(a, _) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    grads[i] = g;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    for ((ga, gi), yi) in grads[a.0].iter_mut().zip(&g).zip(y) {
                        *ga += gi * (1.0 - yi * yi);
                    }
                    grads[i] = g;
                }
                Op::MulElem(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for k in 0..g.len() {
                        grads[a.0][k] += g[k] * bv[k];
                        grads[b.0][k] += g[k] * av[k];
                    }
                    grads[i] = g;
                }
                Op::MatVec { w, x, rows, cols } => {
                    let wv = self.nodes[w.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = r * cols;
                        for c in 0..*cols {
                            grads[w.0][row + c] += gr * xv[c];
                            grads[x.0][c] += gr * wv[row + c];
                        }
                    }
                    grads[i] = g;
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        axpy(&mut grads[p.0], &g[off..off + len], 1.0);
                        off += len;
                    }
                    grads[i] = g;
                }
                Op::Slice { src, offset, len } => {
                    for k in 0..*len {
                        grads[src.0][offset + k] += g[k];
                    }
                    grads[i] = g;
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for k in 0..av.len() {
                        grads[a.0][k] += g0 * bv[k];
                        grads[b.0][k] += g0 * av[k];
                    }
                    grads[i] = g;
                }
                Op::SqDist(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for k in 0..av.len() {
                        let d = av[k] - bv[k];
                        grads[a.0][k] += 2.0 * g0 * d;
                        grads[b.0][k] -= 2.0 * g0 * d;
                    }
                    grads[i] = g;
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[i].value;
                    let gy: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    for k in 0..y.len() {
                        grads[a.0][k] += y[k] * (g[k] - gy);
                    }
                    grads[i] = g;
                }
                Op::LogSoftmax(a) => {
                    let y = &self.nodes[i].value;
                    let gsum: f64 = g.iter().sum();
                    for k in 0..y.len() {
                        grads[a.0][k] += g[k] - y[k].exp() * gsum;
                    }
                    grads[i] = g;
                }
                Op::WeightedSum { weights, vecs } => {
                    let wv = self.nodes[weights.0].value.clone();
                    for (k, vid) in vecs.iter().enumerate() {
                        let v = &self.nodes[vid.0].value;
                        let mut dw = 0.0;
                        for (j, gj) in g.iter().enumerate() {
                            grads[vid.0][j] += wv[k] * gj;
                            dw += v[j] * gj;
                        }
                        grads[weights.0][k] += dw;
                    }
                    grads[i] = g;
                }
                Op::MeanVecs(vecs) => {
                    let inv = 1.0 / vecs.len() as f64;
                    for vid in vecs {
                        axpy(&mut grads[vid.0], &g, inv);
                    }
                    grads[i] = g;
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    for ga in grads[a.0].iter_mut() {
                        *ga += g0;
                    }
                    grads[i] = g;
                }
                Op::ClampMin(a, min) => {
                    let x = &self.nodes[a.0].value;
                    for k in 0..x.len() {
                        if x[k] > *min {
                            grads[a.0][k] += g[k];
                        }
                    }
                    grads[i] = g;
                }
                Op::Cosine(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
                    let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if na > 0.0 && nb > 0.0 {
                        let c = dot / (na * nb);
                        for k in 0..av.len() {
                            grads[a.0][k] += g0 * (bv[k] / (na * nb) - c * av[k] / (na * na));
                            grads[b.0][k] += g0 * (av[k] / (na * nb) - c * bv[k] / (nb * nb));
                        }
                    }
                    grads[i] = g;
                }
            }
        }

        let mut out = Gradients::default();
        for (name, id) in &self.param_ids {
            out.by_param.insert(name.clone(), grads[id.0].clone());
        }
        out
    }
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Numerically stable softmax of a plain slice.
pub fn stable_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    /// Central finite difference of `f` at `store[name][idx]`.
    fn central_diff(
        store: &mut ParamStore,
        name: &str,
        idx: usize,
        eps: f64,
        mut f: impl FnMut(&ParamStore) -> f64,
    ) -> f64 {
        let orig = store.values(name).unwrap()[idx];
        store.values_mut(name).unwrap()[idx] = orig + eps;
        let fp = f(store);
        store.values_mut(name).unwrap()[idx] = orig - eps;
        let fm = f(store);
        store.values_mut(name).unwrap()[idx] = orig;
        (fp - fm) / (2.0 * eps)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-9
    }

    #[test]
    fn matvec_and_tanh_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        store.register("w", vec![0.3, -0.8, 0.5, 1.2, 0.1, -0.4], false);
        store.register("x", vec![0.7, -0.2, 0.9], false);

        let loss = |s: &ParamStore| {
            let mut g = Graph::new();
            let w = g.param(s, "w");
            let x = g.param(s, "x");
            let y = g.matvec(w, x, 2, 3);
            let t = g.tanh(y);
            let d = g.dot(t, t);
            g.value(d)[0]
        };

        let mut g = Graph::new();
        let w = g.param(&store, "w");
        let x = g.param(&store, "x");
        let y = g.matvec(w, x, 2, 3);
        let t = g.tanh(y);
        let d = g.dot(t, t);
        let grads = g.backward(d);

        for (name, len) in [("w", 6usize), ("x", 3usize)] {
            for idx in 0..len {
                let num = central_diff(&mut store, name, idx, 1e-6, loss);
                let ana = grads.get(name).unwrap()[idx];
                assert!(rel_close(num, ana, 1e-6), "{name}[{idx}]: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn softmax_log_softmax_and_weighted_sum_gradients() {
        let mut store = ParamStore::new();
        store.register("s", vec![0.2, -1.3, 0.8, 0.4], false);
        store.register("u0", vec![1.0, 2.0], false);
        store.register("u1", vec![-0.5, 0.3], false);
        store.register("u2", vec![0.1, -0.9], false);
        store.register("u3", vec![0.6, 0.2], false);

        let loss = |s: &ParamStore| {
            let mut g = Graph::new();
            let raw = g.param(s, "s");
            let w = g.softmax(raw);
            let us: Vec<_> = (0..4).map(|k| g.param(s, &format!("u{k}"))).collect();
            let mix = g.weighted_sum(w, &us);
            let ls = g.log_softmax(mix);
            let picked = g.index(ls, 0);
            let neg = g.neg(picked);
            g.value(neg)[0]
        };

        let mut g = Graph::new();
        let raw = g.param(&store, "s");
        let w = g.softmax(raw);
        let us: Vec<_> = (0..4).map(|k| g.param(&store, &format!("u{k}"))).collect();
        let mix = g.weighted_sum(w, &us);
        let ls = g.log_softmax(mix);
        let picked = g.index(ls, 0);
        let neg = g.neg(picked);
        let grads = g.backward(neg);

        for name in ["s", "u0", "u1", "u2", "u3"] {
            let len = store.values(name).unwrap().len();
            for idx in 0..len {
                let num = central_diff(&mut store, name, idx, 1e-6, loss);
                let ana = grads.get(name).unwrap()[idx];
                assert!(rel_close(num, ana, 1e-5), "{name}[{idx}]: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn cosine_sqdist_mean_gradients() {
        let mut store = ParamStore::new();
        store.register("a", vec![0.9, -0.4, 0.2], false);
        store.register("b", vec![-0.3, 0.8, 0.5], false);

        let loss = |s: &ParamStore| {
            let mut g = Graph::new();
            let a = g.param(s, "a");
            let b = g.param(s, "b");
            let c = g.cosine(a, b);
            let d = g.sq_dist(a, b);
            let m = g.mean_vecs(&[a, b]);
            let sm = g.sum(m);
            let parts = g.concat(&[c, d, sm]);
            let tot = g.sum(parts);
            g.value(tot)[0]
        };

        let mut g = Graph::new();
        let a = g.param(&store, "a");
        let b = g.param(&store, "b");
        let c = g.cosine(a, b);
        let d = g.sq_dist(a, b);
        let m = g.mean_vecs(&[a, b]);
        let sm = g.sum(m);
        let parts = g.concat(&[c, d, sm]);
        let tot = g.sum(parts);
        let grads = g.backward(tot);

        for name in ["a", "b"] {
            for idx in 0..3 {
                let num = central_diff(&mut store, name, idx, 1e-6, loss);
                let ana = grads.get(name).unwrap()[idx];
                assert!(rel_close(num, ana, 1e-6), "{name}[{idx}]: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut g = Graph::new();
        let x = g.constant(vec![3.0, -1.0, 0.5, 100.0]);
        let s = g.softmax(x);
        let total: f64 = g.value(s).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let shifted = g.add_const(x, 55.5);
        let s2 = g.softmax(shifted);
        for (a, b) in g.value(s).iter().zip(g.value(s2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_leaves_receive_no_parameter_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let c = g.constant(vec![1.0, 2.0]);
        let d = g.dot(c, c);
        let grads = g.backward(d);
        assert_eq!(grads.iter().count(), 0);
        let _ = store;
    }
}
