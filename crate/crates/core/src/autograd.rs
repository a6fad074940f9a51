//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from the model, never copied; [`Graph::backward`] returns one
//! gradient per parameter slot. Sequences of different lengths are packed
//! row-wise into a single matrix and described by row ranges, so dense layers
//! see no padding and attention runs per segment.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Query/key row ranges of one attention segment.
#[derive(Debug, Clone)]
pub struct Segment {
    pub queries: Range<usize>,
    pub keys: Range<usize>,
}

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    Dropout {
        x: Var,
        mask: Array2<f64>,
    },
    CausalWindow {
        x: Var,
        segments: Vec<Range<usize>>,
        kernel: usize,
    },
    Shift {
        x: Var,
        segments: Vec<Range<usize>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        smoothing: f64,
        probs: Array2<f64>,
        norm: f64,
    },
    SquaredError {
        pred: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        norm: f64,
    },
    Combine(Vec<(Var, f64)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    track_params: bool,
}

impl<'p> Graph<'p> {
    /// `track_params = false` builds an inference graph: parameters are
    /// treated as constants and nothing is recorded for backward.
    pub fn new(params: &'p [Array2<f64>], track_params: bool) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            track_params,
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let track = self.track_params;
        let v = self.push(Array2::zeros((0, 0)), Op::Param(index), track);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let mut xhat = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((rows.len(), t.ncols()));
        for (r, &i) in rows.iter().enumerate() {
            value.row_mut(r).assign(&t.row(i));
        }
        let ng = self.needs(table);
        self.push(value, Op::Gather { table, rows }, ng)
    }

    /// Scaled dot-product attention over `heads` column blocks, per segment.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<Segment>, heads: usize, causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in &segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![seg.queries.clone(), cols.clone()]);
                let ks = kv.slice(s![seg.keys.clone(), cols.clone()]);
                let vs = vv.slice(s![seg.keys.clone(), cols.clone()]);
                let mut p = qs.dot(&ks.t());
                softmax_rows(&mut p, scale, causal);
                out.slice_mut(s![seg.queries.clone(), cols]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            out,
            Op::Attention { q, k, v, segments, heads, probs },
            ng,
        )
    }

    /// Multiplies by a fixed (pre-scaled) mask.
    pub fn dropout(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let value = self.value(x) * &mask;
        let ng = self.needs(x);
        self.push(value, Op::Dropout { x, mask }, ng)
    }

    /// Row `i` of the result is `[x_i, x_{i-1}, ..., x_{i-kernel+1}]`, with
    /// zeros before the start of each segment. Followed by a matmul this is a
    /// causal 1-D convolution.
    pub fn causal_window(&mut self, x: Var, segments: Vec<Range<usize>>, kernel: usize) -> Var {
        let xv = self.value(x);
        let d = xv.ncols();
        let mut value = Array2::zeros((xv.nrows(), d * kernel));
        for seg in &segments {
            for i in seg.clone() {
                for k in 0..kernel {
                    if i >= seg.start + k {
                        value.slice_mut(s![i, k * d..(k + 1) * d]).assign(&xv.row(i - k));
                    }
                }
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::CausalWindow { x, segments, kernel }, ng)
    }

    /// Moves each row one step later within its segment; the first row of a
    /// segment becomes zero.
    pub fn shift(&mut self, x: Var, segments: Vec<Range<usize>>) -> Var {
        let xv = self.value(x);
        let mut value = Array2::zeros(xv.dim());
        for seg in &segments {
            for i in seg.start + 1..seg.end {
                value.row_mut(i).assign(&xv.row(i - 1));
            }
        }
        let ng = self.needs(x);
        self.push(value, Op::Shift { x, segments }, ng)
    }

    /// Label-smoothed cross entropy, summed with `weights` and divided by `norm`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>, smoothing: f64, norm: f64) -> Var {
        let lv = self.value(logits);
        let vocab = lv.ncols() as f64;
        let mut probs = Array2::zeros(lv.dim());
        let mut total = 0.0;
        for (r, row) in lv.outer_iter().enumerate() {
            if weights[r] == 0.0 {
                continue;
            }
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            let mut sum_logp = 0.0;
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row.iter()) {
                let logp = x - lse;
                sum_logp += logp;
                *p = logp.exp();
            }
            let nll = -(row[targets[r]] - lse);
            total += weights[r] * ((1.0 - smoothing) * nll - smoothing / vocab * sum_logp);
        }
        let value = Array2::from_elem((1, 1), total / norm);
        let ng = self.needs(logits);
        self.push(value, Op::CrossEntropy { logits, targets, weights, smoothing, probs, norm }, ng)
    }

    /// `sum_i w_i (pred_i - target_i)^2 / norm` for an `n x 1` prediction.
    pub fn squared_error(&mut self, pred: Var, targets: Vec<f64>, weights: Vec<f64>, norm: f64) -> Var {
        let pv = self.value(pred);
        let total: f64 = pv
            .column(0)
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((p, t), w)| w * (p - t) * (p - t))
            .sum();
        let value = Array2::from_elem((1, 1), total / norm);
        let ng = self.needs(pred);
        self.push(value, Op::SquaredError { pred, targets, weights, norm }, ng)
    }

    /// Weighted sum of scalar nodes.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total: f64 = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Array2::from_elem((1, 1), total), Op::Combine(terms), ng)
    }

    /// Gradients of the scalar `root` with respect to every parameter slot.
    /// Slots the root does not depend on get zero matrices.
    pub fn backward(&self, root: Var) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.dim())).collect();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(i) => out[*i] += &g,
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|gi, &y| {
                        if y <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    if self.needs(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *gamma, gg);
                    }
                    if self.needs(*beta) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *beta, gb);
                    }
                    if self.needs(*x) {
                        let dxhat = &g * self.value(*gamma);
                        let d = dxhat.ncols() as f64;
                        let mut gx = Array2::zeros(dxhat.dim());
                        for r in 0..dxhat.nrows() {
                            let dr = dxhat.row(r);
                            let xr = xhat.row(r);
                            let sum_d = dr.sum();
                            let sum_dx = dr.dot(&xr);
                            let inv = inv_std[r];
                            for ((o, &dv), &xv) in gx.row_mut(r).iter_mut().zip(dr.iter()).zip(xr.iter()) {
                                *o = inv / d * (d * dv - sum_d - xv * sum_dx);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Gather { table, rows } => {
                    let t = self.value(*table);
                    let mut gt = Array2::zeros(t.dim());
                    for (r, &i) in rows.iter().enumerate() {
                        let mut dst = gt.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Attention { q, k, v, segments, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Array2::zeros(qv.dim());
                    let mut gk = Array2::zeros(kv.dim());
                    let mut gv = Array2::zeros(vv.dim());
                    let mut pi = 0;
                    for seg in segments {
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            let go = g.slice(s![seg.queries.clone(), cols.clone()]);
                            let qs = qv.slice(s![seg.queries.clone(), cols.clone()]);
                            let ks = kv.slice(s![seg.keys.clone(), cols.clone()]);
                            let vs = vv.slice(s![seg.keys.clone(), cols.clone()]);
                            {
                                let mut dst = gv.slice_mut(s![seg.keys.clone(), cols.clone()]);
                                dst += &p.t().dot(&go);
                            }
                            let dp = go.dot(&vs.t());
                            let mut ds = p * &dp;
                            for (mut row, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                                let dot = row.sum();
                                Zip::from(&mut row).and(&prow).for_each(|x, &pv| *x -= pv * dot);
                            }
                            ds.mapv_inplace(|x| x * scale);
                            {
                                let mut dst = gq.slice_mut(s![seg.queries.clone(), cols.clone()]);
                                dst += &ds.dot(&ks);
                            }
                            {
                                let mut dst = gk.slice_mut(s![seg.keys.clone(), cols.clone()]);
                                dst += &ds.t().dot(&qs);
                            }
                        }
                    }
                    if self.needs(*q) {
                        accumulate(&mut grads, *q, gq);
                    }
                    if self.needs(*k) {
                        accumulate(&mut grads, *k, gk);
                    }
                    if self.needs(*v) {
                        accumulate(&mut grads, *v, gv);
                    }
                }
                Op::Dropout { x, mask } => accumulate(&mut grads, *x, g * mask),
                Op::CausalWindow { x, segments, kernel } => {
                    let xv = self.value(*x);
                    let dcol = xv.ncols();
                    let mut gx = Array2::zeros(xv.dim());
                    for seg in segments {
                        for i in seg.clone() {
                            for k in 0..*kernel {
                                if i >= seg.start + k {
                                    let mut dst = gx.row_mut(i - k);
                                    dst += &g.slice(s![i, k * dcol..(k + 1) * dcol]);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Shift { x, segments } => {
                    let mut gx = Array2::zeros(g.dim());
                    for seg in segments {
                        for i in seg.start + 1..seg.end {
                            let mut dst = gx.row_mut(i - 1);
                            dst += &g.row(i);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::CrossEntropy { logits, targets, weights, smoothing, probs, norm } => {
                    let upstream = g[[0, 0]];
                    let vocab = probs.ncols() as f64;
                    let mut gl = probs.clone();
                    for (r, mut row) in gl.outer_iter_mut().enumerate() {
                        let c = upstream * weights[r] / norm;
                        if weights[r] == 0.0 {
                            row.fill(0.0);
                            continue;
                        }
                        row.mapv_inplace(|p| c * (p - smoothing / vocab));
                        row[targets[r]] -= c * (1.0 - smoothing);
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::SquaredError { pred, targets, weights, norm } => {
                    let upstream = g[[0, 0]];
                    let pv = self.value(*pred);
                    let mut gp = Array2::zeros(pv.dim());
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        gp[[r, 0]] = upstream * 2.0 * w * (pv[[r, 0]] - t) / norm;
                    }
                    accumulate(&mut grads, *pred, gp);
                }
                Op::Combine(terms) => {
                    for &(v, c) in terms {
                        if self.needs(v) {
                            accumulate(&mut grads, v, Array2::from_elem((1, 1), c * g[[0, 0]]));
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn softmax_rows(scores: &mut Array2<f64>, scale: f64, causal: bool) {
    for (i, mut row) in scores.outer_iter_mut().enumerate() {
        let limit = if causal { i + 1 } else { row.len() };
        let mut m = f64::NEG_INFINITY;
        for x in row.iter_mut().take(limit) {
            *x *= scale;
            m = m.max(*x);
        }
        let mut sum = 0.0;
        for (j, x) in row.iter_mut().enumerate() {
            if j < limit {
                *x = (*x - m).exp();
                sum += *x;
            } else {
                *x = 0.0;
            }
        }
        row.mapv_inplace(|x| x / sum);
    }
}

/// Row-wise log-softmax of a view.
pub fn log_softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.outer_iter_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(params: &mut [Array2<f64>], f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(params, true);
            let root = f(&mut g);
            g.backward(root)
        };
        let eps = 1e-6;
        for pi in 0..params.len() {
            for idx in 0..params[pi].len() {
                let (r, c) = (idx / params[pi].ncols(), idx % params[pi].ncols());
                let orig = params[pi][[r, c]];
                params[pi][[r, c]] = orig + eps;
                let up = {
                    let mut g = Graph::new(params, false);
                    let v = f(&mut g);
                    g.scalar(v)
                };
                params[pi][[r, c]] = orig - eps;
                let down = {
                    let mut g = Graph::new(params, false);
                    let v = f(&mut g);
                    g.scalar(v)
                };
                params[pi][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[pi][[r, c]];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs()),
                    "param {pi}[{r},{c}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn attention_and_norm_gradients() {
        let mut params = vec![
            array![[0.3, -0.2, 0.5, 0.1], [0.0, 0.4, -0.3, 0.2], [0.7, -0.1, 0.2, -0.6], [0.1, 0.1, 0.9, -0.4], [-0.5, 0.3, 0.0, 0.8]],
            array![[0.2, -0.4, 0.1, 0.3], [0.5, 0.1, -0.2, 0.0], [-0.3, 0.6, 0.4, 0.1], [0.0, -0.2, 0.3, 0.5]],
            array![[1.1, 0.9, 1.0, 1.2]],
            array![[0.1, -0.1, 0.0, 0.2]],
            Array2::from_shape_fn((8, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin() * 0.5),
        ];
        fd_check(&mut params, |g| {
            let x = g.param(0);
            let w = g.param(1);
            let gamma = g.param(2);
            let beta = g.param(3);
            let h = g.layer_norm(x, gamma, beta);
            let q = g.matmul(h, w);
            let segs = vec![
                Segment { queries: 0..3, keys: 0..3 },
                Segment { queries: 3..5, keys: 3..5 },
            ];
            let a = g.attention(q, h, x, segs, 2, true);
            let win = g.causal_window(a, vec![0..3, 3..5], 2);
            let r = g.relu(win);
            let w2 = g.param(4);
            let logits = g.matmul(r, w2);
            let ce = g.cross_entropy(logits, vec![1, 0, 3, 2, 1], vec![1.0, 1.0, 0.0, 1.0, 1.0], 0.1, 4.0);
            let col = g.gather(x, vec![0, 4, 4]);
            let se = g.squared_error(col, vec![0.1, 0.2, -0.3], vec![1.0, 1.0, 1.0], 3.0);
            g.combine(vec![(ce, 1.0), (se, 0.5)])
        });
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut s = array![[1.0, 2.0], [3.0, 1.0]];
        softmax_rows(&mut s, 1.0, true);
        assert_eq!(s[[0, 1]], 0.0);
        assert!((s[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((s.row(1).sum() - 1.0).abs() < 1e-15);
    }
}
