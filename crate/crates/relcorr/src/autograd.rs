//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles; calling
//! [`Tape::backward`] on a scalar output accumulates gradients for every
//! recorded node. All tensors are two-dimensional (`ndarray::Array2<f64>`);
//! row vectors are `1×d` matrices. The op set is exactly what the encoder,
//! the pair classifier and the co-occurrence heads need — nothing more.

use ndarray::{s, Array2, Axis};
use std::collections::BTreeMap;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackwardFn = Box<dyn Fn(&Array2<f64>) -> Vec<(usize, Array2<f64>)>>;

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    back: Option<BackwardFn>,
}

/// Records a computation graph and runs backpropagation over it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None)
    }

    /// A non-parameter input; gradients may accumulate but are never read.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node as a plain scalar.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Backpropagate from a scalar (`1×1`) output. Gradients accumulate, so
    /// call at most once per tape unless accumulation is intended.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be a 1x1 scalar"
        );
        let seed = Array2::ones((1, 1));
        match &mut self.nodes[root.0].grad {
            Some(g) => *g += &seed,
            slot => *slot = Some(seed),
        }
        for i in (0..=root.0).rev() {
            let Some(back) = self.nodes[i].back.take() else {
                continue;
            };
            if let Some(g) = self.nodes[i].grad.as_ref().cloned() {
                for (parent, contrib) in back(&g) {
                    match &mut self.nodes[parent].grad {
                        Some(pg) => *pg += &contrib,
                        slot => *slot = Some(contrib),
                    }
                }
            }
        }
    }

    // --- elementwise and linear ops -------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        assert_eq!(av.ncols(), bv.nrows(), "matmul shape mismatch");
        let out = av.dot(&bv);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(ai, g.dot(&bv.t())), (bi, av.t().dot(g))]
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let out = self.value(a) + self.value(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(ai, g.clone()), (bi, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let out = self.value(a) - self.value(b);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| vec![(ai, g.clone()), (bi, -g)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = &av * &bv;
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| vec![(ai, g * &bv), (bi, g * &av)])),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim());
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let out = &av / &bv;
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(ai, g / &bv), (bi, -(g * &av) / (&bv * &bv))]
            })),
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let ai = a.0;
        self.push(out, Some(Box::new(move |g| vec![(ai, g * k)])))
    }

    /// Broadcast-add a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let rv = self.value(row).clone();
        assert_eq!(rv.nrows(), 1);
        assert_eq!(rv.ncols(), self.value(a).ncols());
        let out = self.value(a) + &rv;
        let (ai, ri) = (a.0, row.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                let rg = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(ai, g.clone()), (ri, rg)]
            })),
        )
    }

    /// Elementwise product with a fixed mask (used for inverted dropout).
    pub fn mul_mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), mask.dim());
        let out = self.value(a) * &mask;
        let ai = a.0;
        self.push(out, Some(Box::new(move |g| vec![(ai, g * &mask)])))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::tanh);
        let yc = y.clone();
        let ai = a.0;
        self.push(
            y,
            Some(Box::new(move |g| vec![(ai, g * &(1.0 - &yc * &yc))])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        let yc = y.clone();
        let ai = a.0;
        self.push(
            y,
            Some(Box::new(move |g| vec![(ai, g * &(&yc * &(1.0 - &yc)))])),
        )
    }

    /// GELU with the tanh approximation; smooth, so finite differences are
    /// well behaved everywhere.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let y = x.mapv(gelu);
        let ai = a.0;
        self.push(
            y,
            Some(Box::new(move |g| vec![(ai, g * &x.mapv(gelu_prime))])),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ai = a.0;
        self.push(out, Some(Box::new(move |g| vec![(ai, g.t().to_owned())])))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.nrows(), bv.nrows());
        let (c1, c2) = (av.ncols(), bv.ncols());
        let mut out = Array2::zeros((av.nrows(), c1 + c2));
        out.slice_mut(s![.., ..c1]).assign(av);
        out.slice_mut(s![.., c1..]).assign(bv);
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![
                    (ai, g.slice(s![.., ..c1]).to_owned()),
                    (bi, g.slice(s![.., c1..]).to_owned()),
                ]
            })),
        )
    }

    /// Stack several matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let ncols = self.value(parts[0]).ncols();
        let mut ranges = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let r = self.value(p).nrows();
            assert_eq!(self.value(p).ncols(), ncols);
            ranges.push((p.0, total, total + r));
            total += r;
        }
        let mut out = Array2::zeros((total, ncols));
        for (&p, &(_, start, end)) in parts.iter().zip(&ranges) {
            out.slice_mut(s![start..end, ..]).assign(self.value(p));
        }
        self.push(
            out,
            Some(Box::new(move |g| {
                ranges
                    .iter()
                    .map(|&(pi, start, end)| (pi, g.slice(s![start..end, ..]).to_owned()))
                    .collect()
            })),
        )
    }

    /// Select rows by index (duplicates allowed); backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        for &i in idx {
            assert!(i < rows, "gather_rows index {i} out of {rows}");
        }
        let mut out = Array2::zeros((idx.len(), cols));
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).assign(&av.row(i));
        }
        let idx = idx.to_vec();
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = Array2::zeros((rows, cols));
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = ga.row_mut(i);
                    row += &g.row(k);
                }
                vec![(ai, ga)]
            })),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert!(start <= end && end <= cols);
        let out = av.slice(s![.., start..end]).to_owned();
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = Array2::zeros((rows, cols));
                ga.slice_mut(s![.., start..end]).assign(g);
                vec![(ai, ga)]
            })),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let dim = av.dim();
        let out = Array2::from_elem((1, 1), av.sum());
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(ai, Array2::from_elem(dim, g[[0, 0]]))]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column-wise sum over rows: `r×c → 1×c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, _) = av.dim();
        let out = av.sum_axis(Axis(0)).insert_axis(Axis(0));
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = Array2::zeros((rows, g.ncols()));
                for mut row in ga.rows_mut() {
                    row.assign(&g.row(0));
                }
                vec![(ai, ga)]
            })),
        )
    }

    /// Column-wise mean over rows: `r×c → 1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let rows = self.value(a).nrows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / rows)
    }

    /// Elementwise log-sum-exp over rows (`r×c → 1×c`), stabilized by
    /// subtracting the per-column max before exponentiating.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert!(rows >= 1);
        let mut out = Array2::zeros((1, cols));
        let mut softmax = Array2::zeros((rows, cols));
        for j in 0..cols {
            let mut m = f64::NEG_INFINITY;
            for i in 0..rows {
                m = m.max(av[[i, j]]);
            }
            let mut z = 0.0;
            for i in 0..rows {
                let e = (av[[i, j]] - m).exp();
                softmax[[i, j]] = e;
                z += e;
            }
            for i in 0..rows {
                softmax[[i, j]] /= z;
            }
            out[[0, j]] = m + z.ln();
        }
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = softmax.clone();
                for mut row in ga.rows_mut() {
                    row *= &g.row(0);
                }
                vec![(ai, ga)]
            })),
        )
    }

    /// Row-wise softmax over columns `[0, valid)`; columns at or beyond
    /// `valid` get exactly zero weight.
    pub fn masked_softmax_rows(&mut self, a: Var, valid: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.dim();
        assert!(valid >= 1 && valid <= cols);
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            let mut m = f64::NEG_INFINITY;
            for j in 0..valid {
                m = m.max(av[[i, j]]);
            }
            let mut z = 0.0;
            for j in 0..valid {
                let e = (av[[i, j]] - m).exp();
                out[[i, j]] = e;
                z += e;
            }
            for j in 0..valid {
                out[[i, j]] /= z;
            }
        }
        let yc = out.clone();
        let ai = a.0;
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut ga = Array2::zeros((rows, cols));
                for i in 0..rows {
                    let mut dot = 0.0;
                    for j in 0..valid {
                        dot += g[[i, j]] * yc[[i, j]];
                    }
                    for j in 0..valid {
                        ga[[i, j]] = yc[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                vec![(ai, ga)]
            })),
        )
    }

    /// Divide every entry of `a` by the scalar node `s` (`1×1`).
    pub fn div_scalar_var(&mut self, a: Var, sv: Var) -> Var {
        assert_eq!(self.value(sv).dim(), (1, 1));
        let av = self.value(a).clone();
        let s = self.scalar(sv);
        let out = &av / s;
        let (ai, si) = (a.0, sv.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                let ds = -(g * &av).sum() / (s * s);
                vec![(ai, g / s), (si, Array2::from_elem((1, 1), ds))]
            })),
        )
    }

    /// Per-row layer normalization with learnable scale and shift (`1×c`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let av = self.value(a).clone();
        let (rows, cols) = av.dim();
        let gv = self.value(gamma).clone();
        let bv = self.value(beta).clone();
        assert_eq!(gv.dim(), (1, cols));
        assert_eq!(bv.dim(), (1, cols));
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = vec![0.0; rows];
        for i in 0..rows {
            let row = av.row(i);
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..cols {
                xhat[[i, j]] = (av[[i, j]] - mean) * istd;
            }
        }
        let mut out = xhat.clone();
        for mut row in out.rows_mut() {
            row *= &gv.row(0);
            row += &bv.row(0);
        }
        let (ai, gi, bi) = (a.0, gamma.0, beta.0);
        self.push(
            out,
            Some(Box::new(move |g| {
                let n = cols as f64;
                let mut dgamma = Array2::zeros((1, cols));
                let mut dbeta = Array2::zeros((1, cols));
                let mut ga = Array2::zeros((rows, cols));
                for i in 0..rows {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..cols {
                        let dxhat = g[[i, j]] * gv[[0, j]];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat[[i, j]];
                        dgamma[[0, j]] += g[[i, j]] * xhat[[i, j]];
                        dbeta[[0, j]] += g[[i, j]];
                    }
                    for j in 0..cols {
                        let dxhat = g[[i, j]] * gv[[0, j]];
                        ga[[i, j]] = inv_std[i]
                            * (dxhat - sum_dxhat / n - xhat[[i, j]] * sum_dxhat_xhat / n);
                    }
                }
                vec![(ai, ga), (gi, dgamma), (bi, dbeta)]
            })),
        )
    }

    /// Numerically stable binary cross-entropy with logits, summed over all
    /// cells. `targets` are fixed 0/1 values, not graph nodes.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &Array2<f64>) -> Var {
        let z = self.value(logits).clone();
        assert_eq!(z.dim(), targets.dim());
        let t = targets.clone();
        let mut loss = 0.0;
        for (zi, ti) in z.iter().zip(t.iter()) {
            loss += zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p();
        }
        let li = logits.0;
        self.push(
            Array2::from_elem((1, 1), loss),
            Some(Box::new(move |g| {
                let scale = g[[0, 0]];
                let mut gz = Array2::zeros(z.dim());
                for ((gz, zi), ti) in gz.iter_mut().zip(z.iter()).zip(t.iter()) {
                    *gz = scale * (sigmoid(*zi) - ti);
                }
                vec![(li, gz)]
            })),
        )
    }

    /// Per-row grouped outer product: split the `d` columns of `a` and `b`
    /// into `k` equal groups and emit, for each row, the flattened outer
    /// product of each group pair. `P×d, P×d → P×(k·(d/k)²)`.
    pub fn grouped_outer(&mut self, a: Var, b: Var, k: usize) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        assert_eq!(av.dim(), bv.dim());
        let (rows, d) = av.dim();
        assert!(k >= 1 && d % k == 0, "group count must divide width");
        let gs = d / k;
        let mut out = Array2::zeros((rows, k * gs * gs));
        for p in 0..rows {
            for g in 0..k {
                for i in 0..gs {
                    let aval = av[[p, g * gs + i]];
                    for j in 0..gs {
                        out[[p, g * gs * gs + i * gs + j]] = aval * bv[[p, g * gs + j]];
                    }
                }
            }
        }
        let (ai, bi) = (a.0, b.0);
        self.push(
            out,
            Some(Box::new(move |grad| {
                let mut ga = Array2::zeros((rows, d));
                let mut gb = Array2::zeros((rows, d));
                for p in 0..rows {
                    for g in 0..k {
                        for i in 0..gs {
                            for j in 0..gs {
                                let go = grad[[p, g * gs * gs + i * gs + j]];
                                ga[[p, g * gs + i]] += go * bv[[p, g * gs + j]];
                                gb[[p, g * gs + j]] += go * av[[p, g * gs + i]];
                            }
                        }
                    }
                }
                vec![(ai, ga), (bi, gb)]
            })),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// A named collection of parameter tensors with deterministic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        let prev = self.tensors.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Register every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for every tensor of a [`ParamSet`], keyed by name.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(n, v)| (n, *v))
    }

    /// Collect accumulated gradients after a backward pass; parameters that
    /// never entered the graph get zero gradients.
    pub fn gradients(&self, tape: &Tape, params: &ParamSet) -> BTreeMap<String, Array2<f64>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let g = tape
                    .grad(*var)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(params.get(name).dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_loss_gradients;
    use ndarray::array;

    fn leafy(tape: &mut Tape, v: Array2<f64>) -> Var {
        tape.leaf(v)
    }

    #[test]
    fn matmul_forward() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[1.0, 2.0], [3.0, 4.0]]);
        let b = leafy(&mut t, array![[5.0], [6.0]]);
        let c = t.matmul(a, b);
        assert_eq!(t.value(c), &array![[17.0], [39.0]]);
    }

    #[test]
    fn backward_through_chain() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[2.0, 3.0]]);
        let b = t.mul(a, a);
        let s = t.sum_all(b);
        t.backward(s);
        // d(sum a^2)/da = 2a
        assert_eq!(t.grad(a).unwrap(), &array![[4.0, 6.0]]);
    }

    #[test]
    fn masked_softmax_zeroes_padded_keys() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[1.0, 2.0, 100.0], [0.0, 0.0, -50.0]]);
        let y = t.masked_softmax_rows(a, 2);
        let yv = t.value(y);
        assert_eq!(yv[[0, 2]], 0.0);
        assert_eq!(yv[[1, 2]], 0.0);
        assert!((yv.row(0).sum() - 1.0).abs() < 1e-12);
        assert!((yv.row(1).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_single_row_is_identity() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[0.5, -3.0, 800.0]]);
        let y = t.logsumexp_rows(a);
        let yv = t.value(y);
        for j in 0..3 {
            assert!((yv[[0, j]] - t.value(a)[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_rows_accumulates_duplicate_indices() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[1.0, 2.0], [3.0, 4.0]]);
        let g = t.gather_rows(a, &[0, 0, 1]);
        let s = t.sum_all(g);
        t.backward(s);
        assert_eq!(t.grad(a).unwrap(), &array![[2.0, 2.0], [1.0, 1.0]]);
    }

    #[test]
    fn bce_matches_hand_value() {
        let mut t = Tape::new();
        let z = leafy(&mut t, array![[2.0, -2.0]]);
        let targets = array![[1.0, 0.0]];
        let l = t.bce_with_logits_sum(z, &targets);
        let expect = -(sigmoid(2.0).ln()) - (1.0 - sigmoid(-2.0)).ln();
        assert!((t.scalar(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn grouped_outer_matches_loops() {
        let mut t = Tape::new();
        let a = leafy(&mut t, array![[1.0, 2.0, 3.0, 4.0]]);
        let b = leafy(&mut t, array![[5.0, 6.0, 7.0, 8.0]]);
        let o = t.grouped_outer(a, b, 2);
        // group 0: [1,2] x [5,6]; group 1: [3,4] x [7,8]
        let expect = array![[5.0, 6.0, 10.0, 12.0, 21.0, 24.0, 28.0, 32.0]];
        assert_eq!(t.value(o), &expect);
    }

    // Gradient checks for every differentiable op, against central finite
    // differences in double precision.

    fn op_check(
        name: &str,
        shapes: &[(usize, usize)],
        f: impl Fn(&mut Tape, &BoundParams) -> Var,
    ) {
        let mut params = ParamSet::new();
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for (i, &(r, c)) in shapes.iter().enumerate() {
            let v = Array2::from_shape_fn((r, c), |_| next());
            params.insert(format!("p{i}"), v);
        }
        let report = check_loss_gradients(&params, 1e-5, f);
        assert!(
            report.max_rel_error < 1e-6,
            "{name}: max rel error {} at {}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn grad_matmul_add_tanh() {
        op_check("matmul+tanh", &[(3, 4), (4, 2), (1, 2)], |t, p| {
            let m = t.matmul(p.var("p0"), p.var("p1"));
            let b = t.add_row(m, p.var("p2"));
            let y = t.tanh(b);
            t.sum_all(y)
        });
    }

    #[test]
    fn grad_mul_div_sub() {
        op_check("mul/div/sub", &[(2, 3), (2, 3)], |t, p| {
            let a = p.var("p0");
            let b = p.var("p1");
            let shifted = t.scale(b, 0.1);
            let ones = t.constant(Array2::from_elem((2, 3), 2.0));
            let denom = t.add(shifted, ones);
            let q = t.div(a, denom);
            let d = t.sub(q, a);
            let m = t.mul(d, d);
            t.sum_all(m)
        });
    }

    #[test]
    fn grad_softmax_masked() {
        op_check("masked softmax", &[(3, 5), (5, 2)], |t, p| {
            let sm = t.masked_softmax_rows(p.var("p0"), 4);
            let m = t.matmul(sm, p.var("p1"));
            let y = t.tanh(m);
            t.sum_all(y)
        });
    }

    #[test]
    fn grad_logsumexp() {
        op_check("logsumexp", &[(4, 3)], |t, p| {
            let y = t.logsumexp_rows(p.var("p0"));
            let sq = t.mul(y, y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_layer_norm() {
        op_check("layer norm", &[(3, 6), (1, 6), (1, 6)], |t, p| {
            let y = t.layer_norm(p.var("p0"), p.var("p1"), p.var("p2"), 1e-5);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_gelu() {
        op_check("gelu", &[(2, 5)], |t, p| {
            let y = t.gelu(p.var("p0"));
            t.sum_all(y)
        });
    }

    #[test]
    fn grad_sigmoid_bce() {
        let targets = array![[1.0, 0.0, 1.0]];
        op_check("bce", &[(1, 3)], move |t, p| {
            t.bce_with_logits_sum(p.var("p0"), &targets)
        });
    }

    #[test]
    fn grad_gather_concat_slice() {
        op_check("gather/concat/slice", &[(4, 3), (4, 3)], |t, p| {
            let g = t.gather_rows(p.var("p0"), &[1, 1, 3]);
            let c = t.concat_cols(g, g);
            let sl = t.slice_cols(c, 1, 5);
            let st = t.concat_rows(&[sl, sl]);
            let tr = t.transpose(st);
            let other = t.gather_rows(p.var("p1"), &[0, 2, 3, 1]);
            let other_t = t.transpose(other);
            let prod = t.matmul(other_t, tr);
            t.mean_all(prod)
        });
    }

    #[test]
    fn grad_norm_by_sum() {
        op_check("sum normalization", &[(1, 5)], |t, p| {
            let x = t.mul(p.var("p0"), p.var("p0"));
            let s = t.sum_all(x);
            let q = t.div_scalar_var(x, s);
            let sq = t.mul(q, q);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_grouped_outer() {
        op_check("grouped outer", &[(3, 4), (3, 4), (8, 1)], |t, p| {
            let o = t.grouped_outer(p.var("p0"), p.var("p1"), 2);
            let y = t.matmul(o, p.var("p2"));
            let sq = t.mul(y, y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn grad_rows_ops() {
        op_check("row reductions", &[(4, 3)], |t, p| {
            let lse = t.logsumexp_rows(p.var("p0"));
            let mr = t.mean_rows(p.var("p0"));
            let sr = t.sum_rows(p.var("p0"));
            let a = t.add(lse, mr);
            let b = t.mul(a, sr);
            t.sum_all(b)
        });
    }
}
