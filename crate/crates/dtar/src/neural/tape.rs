//! Reverse-mode automatic differentiation over dense 2-D f64 tensors.
//!
//! A `Tape` owns the forward graph as a flat arena; `Var` is an index into
//! it. Parents always precede children, so backward is a single reverse
//! sweep. Constants skip gradient accumulation entirely.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to one tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Elu(usize, f64),
    LeakyRelu(usize, f64),
    Clamp(usize, f64, f64),
    MinElem(usize, usize),
    GatherRows(usize, Arc<Vec<usize>>),
    ScatterAddRows(usize, Arc<Vec<usize>>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SelectPerRow(usize, Arc<Vec<usize>>),
    RowSum(usize),
    NormalizeRows(usize, f64),
    Sum(usize),
    Mean(usize),
    MaskReplace(usize, Arc<Vec<bool>>),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Forward/backward arena.
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, a: Var) -> bool {
        self.nodes[a.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input (parameters).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a.0, b.0), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a.0, b.0), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a.0, b.0), g)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Div(a.0, b.0), g)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).ncols(), self.value(b).nrows());
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a.0, b.0), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        let g = self.ng(a);
        self.push(v, Op::Scale(a.0, c), g)
    }

    /// a (n x d) + b (1 x d), broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(b).ncols());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::AddRow(a.0, b.0), g)
    }

    /// a (n x d) * b (1 x d), broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(b).ncols());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MulRow(a.0, b.0), g)
    }

    /// a (n x d) + b (n x 1), broadcast over columns.
    pub fn add_col(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).ncols(), 1);
        debug_assert_eq!(self.value(a).nrows(), self.value(b).nrows());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::AddCol(a.0, b.0), g)
    }

    /// a (n x d) * b (n x 1), broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).ncols(), 1);
        debug_assert_eq!(self.value(a).nrows(), self.value(b).nrows());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MulCol(a.0, b.0), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        let g = self.ng(a);
        self.push(v, Op::Exp(a.0), g)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        let g = self.ng(a);
        self.push(v, Op::Ln(a.0), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        let g = self.ng(a);
        self.push(v, Op::Tanh(a.0), g)
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| {
            if x > 0.0 {
                x
            } else {
                alpha * (x.exp() - 1.0)
            }
        });
        let g = self.ng(a);
        self.push(v, Op::Elu(a.0, alpha), g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        let g = self.ng(a);
        self.push(v, Op::LeakyRelu(a.0, slope), g)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.clamp(lo, hi));
        let g = self.ng(a);
        self.push(v, Op::Clamp(a.0, lo, hi), g)
    }

    /// Elementwise minimum; gradient follows the selected branch (ties go
    /// to `a`).
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let mut v = self.nodes[a.0].value.clone();
        Zip::from(&mut v)
            .and(&self.nodes[b.0].value)
            .for_each(|x, &y| *x = x.min(y));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MinElem(a.0, b.0), g)
    }

    /// out[r] = a[idx[r]]; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).assign(&src.row(i));
        }
        let g = self.ng(a);
        self.push(v, Op::GatherRows(a.0, idx), g)
    }

    /// out has `rows` rows; out[idx[r]] += a[r].
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<Vec<usize>>, rows: usize) -> Var {
        let src = &self.nodes[a.0].value;
        debug_assert_eq!(src.nrows(), idx.len());
        let mut v = Array2::zeros((rows, src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &src.row(r);
        }
        let g = self.ng(a);
        self.push(v, Op::ScatterAddRows(a.0, idx), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::zeros((n, total));
        let mut col = 0;
        for &p in parts {
            let part = &self.nodes[p.0].value;
            debug_assert_eq!(part.nrows(), n);
            v.slice_mut(ndarray::s![.., col..col + part.ncols()])
                .assign(part);
            col += part.ncols();
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let g = self.ng(a);
        self.push(v, Op::SliceCols(a.0, start), g)
    }

    /// out[r, 0] = a[r, cols[r]].
    pub fn select_per_row(&mut self, a: Var, cols: Arc<Vec<usize>>) -> Var {
        let src = &self.nodes[a.0].value;
        debug_assert_eq!(src.nrows(), cols.len());
        let mut v = Array2::zeros((cols.len(), 1));
        for (r, &c) in cols.iter().enumerate() {
            v[(r, 0)] = src[(r, c)];
        }
        let g = self.ng(a);
        self.push(v, Op::SelectPerRow(a.0, cols), g)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        let g = self.ng(a);
        self.push(v, Op::RowSum(a.0), g)
    }

    /// Row-wise (x - mean) / sqrt(var + eps) with population variance.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let src = &self.nodes[a.0].value;
        let d = src.ncols() as f64;
        let mut v = src.clone();
        for mut row in v.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let s = (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) / s);
        }
        let g = self.ng(a);
        self.push(v, Op::NormalizeRows(a.0, eps), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        let g = self.ng(a);
        self.push(v, Op::Sum(a.0), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let v = Array2::from_elem((1, 1), src.sum() / src.len() as f64);
        let g = self.ng(a);
        self.push(v, Op::Mean(a.0), g)
    }

    /// Replace entries where the flat row-major mask is false with `value`;
    /// gradient flows only through the kept entries.
    pub fn mask_replace(&mut self, a: Var, mask: Arc<Vec<bool>>, value: f64) -> Var {
        let src = &self.nodes[a.0].value;
        debug_assert_eq!(src.len(), mask.len());
        let mut v = src.clone();
        for (x, &keep) in v.iter_mut().zip(mask.iter()) {
            if !keep {
                *x = value;
            }
        }
        let g = self.ng(a);
        self.push(v, Op::MaskReplace(a.0, mask), g)
    }

    fn accumulate(&mut self, target: usize, delta: Array2<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut self.nodes[target].grad {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// differentiable node; read them back with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        {
            let v = &self.nodes[loss.0].value;
            if v.len() != 1 {
                return Err(Error::NonFinite("backward expects a scalar loss".into()));
            }
            if !v[(0, 0)].is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.clone());
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, -&g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[b].value;
                    let db = &g * &self.nodes[a].value;
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b].value;
                    let da = &g / bv;
                    let db = -&(&(&g * &self.nodes[a].value) / &(bv * bv));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b].value.t());
                    let db = self.nodes[a].value.t().dot(&g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, &g * c);
                }
                Op::AddRow(a, b) => {
                    self.accumulate(a, g.clone());
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(b, db);
                }
                Op::MulRow(a, b) => {
                    let da = &g * &self.nodes[b].value;
                    let db = (&g * &self.nodes[a].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::AddCol(a, b) => {
                    self.accumulate(a, g.clone());
                    let db = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(b, db);
                }
                Op::MulCol(a, b) => {
                    let da = &g * &self.nodes[b].value;
                    let db = (&g * &self.nodes[a].value)
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Exp(a) => {
                    let da = &g * &self.nodes[i].value;
                    self.accumulate(a, da);
                }
                Op::Ln(a) => {
                    let da = &g / &self.nodes[a].value;
                    self.accumulate(a, da);
                }
                Op::Tanh(a) => {
                    let out = &self.nodes[i].value;
                    let da = &g * &out.mapv(|y| 1.0 - y * y);
                    self.accumulate(a, da);
                }
                Op::Elu(a, alpha) => {
                    let xin = &self.nodes[a].value;
                    let out = &self.nodes[i].value;
                    let mut da = g.clone();
                    Zip::from(&mut da).and(xin).and(out).for_each(|d, &x, &y| {
                        *d *= if x > 0.0 { 1.0 } else { y + alpha };
                    });
                    self.accumulate(a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let xin = &self.nodes[a].value;
                    let mut da = g.clone();
                    Zip::from(&mut da).and(xin).for_each(|d, &x| {
                        *d *= if x > 0.0 { 1.0 } else { slope };
                    });
                    self.accumulate(a, da);
                }
                Op::Clamp(a, lo, hi) => {
                    let xin = &self.nodes[a].value;
                    let mut da = g.clone();
                    Zip::from(&mut da).and(xin).for_each(|d, &x| {
                        if x < lo || x > hi {
                            *d = 0.0;
                        }
                    });
                    self.accumulate(a, da);
                }
                Op::MinElem(a, b) => {
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let mut da = g.clone();
                    let mut db = g.clone();
                    Zip::from(&mut da).and(av).and(bv).for_each(|d, &x, &y| {
                        if x > y {
                            *d = 0.0;
                        }
                    });
                    Zip::from(&mut db).and(av).and(bv).for_each(|d, &x, &y| {
                        if x <= y {
                            *d = 0.0;
                        }
                    });
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::GatherRows(a, idx) => {
                    let cols = g.ncols();
                    let mut da = Array2::zeros((self.nodes[a].value.nrows(), cols));
                    for (r, &src_row) in idx.iter().enumerate() {
                        let mut row = da.row_mut(src_row);
                        row += &g.row(r);
                    }
                    self.accumulate(a, da);
                }
                Op::ScatterAddRows(a, idx) => {
                    let cols = g.ncols();
                    let mut da = Array2::zeros((idx.len(), cols));
                    for (r, &dst_row) in idx.iter().enumerate() {
                        da.row_mut(r).assign(&g.row(dst_row));
                    }
                    self.accumulate(a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.nodes[p].value.ncols();
                        let dp = g.slice(ndarray::s![.., col..col + w]).to_owned();
                        self.accumulate(p, dp);
                        col += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut da = Array2::zeros(self.nodes[a].value.dim());
                    da.slice_mut(ndarray::s![.., start..start + g.ncols()])
                        .assign(&g);
                    self.accumulate(a, da);
                }
                Op::SelectPerRow(a, cols) => {
                    let mut da = Array2::zeros(self.nodes[a].value.dim());
                    for (r, &c) in cols.iter().enumerate() {
                        da[(r, c)] += g[(r, 0)];
                    }
                    self.accumulate(a, da);
                }
                Op::RowSum(a) => {
                    let dim = self.nodes[a].value.dim();
                    let mut da = Array2::zeros(dim);
                    for r in 0..dim.0 {
                        da.row_mut(r).fill(g[(r, 0)]);
                    }
                    self.accumulate(a, da);
                }
                Op::NormalizeRows(a, eps) => {
                    // d x_hat: (g - mean(g) - x_hat * mean(g * x_hat)) / s
                    let xin = &self.nodes[a].value;
                    let xhat = &self.nodes[i].value;
                    let d = xin.ncols() as f64;
                    let mut da = Array2::zeros(xin.dim());
                    for r in 0..xin.nrows() {
                        let row_in = xin.row(r);
                        let mean = row_in.sum() / d;
                        let var = row_in.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
                        let s = (var + eps).sqrt();
                        let grow = g.row(r);
                        let hrow = xhat.row(r);
                        let g_mean = grow.sum() / d;
                        let gh_mean = grow
                            .iter()
                            .zip(hrow.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d;
                        for c in 0..xin.ncols() {
                            da[(r, c)] = (grow[c] - g_mean - hrow[c] * gh_mean) / s;
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::Sum(a) => {
                    let da = Array2::from_elem(self.nodes[a].value.dim(), g[(0, 0)]);
                    self.accumulate(a, da);
                }
                Op::Mean(a) => {
                    let dim = self.nodes[a].value.dim();
                    let da = Array2::from_elem(dim, g[(0, 0)] / (dim.0 * dim.1) as f64);
                    self.accumulate(a, da);
                }
                Op::MaskReplace(a, mask) => {
                    let mut da = g.clone();
                    for (d, &keep) in da.iter_mut().zip(mask.iter()) {
                        if !keep {
                            *d = 0.0;
                        }
                    }
                    self.accumulate(a, da);
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }
}

/// Numerically stable row-wise log-softmax built from tape primitives; the
/// per-row max shift is detached, which leaves the gradient exact.
pub fn log_softmax_rows(tape: &mut Tape, logits: Var) -> Var {
    let vals = tape.value(logits);
    let n = vals.nrows();
    let mut neg_max = Array2::zeros((n, 1));
    for r in 0..n {
        let m = vals.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        neg_max[(r, 0)] = -m;
    }
    let neg_max = tape.constant(neg_max);
    let shifted = tape.add_col(logits, neg_max);
    let z = tape.exp(shifted);
    let sums = tape.row_sum(z);
    let lse = tape.ln(sums);
    let neg_lse = tape.scale(lse, -1.0);
    tape.add_col(shifted, neg_lse)
}

/// Softmax within segments of a column vector: entries sharing `seg[i]`
/// normalize together. Used for per-destination attention normalization.
pub fn segment_softmax(
    tape: &mut Tape,
    scores: Var,
    seg: &Arc<Vec<usize>>,
    num_segments: usize,
) -> Var {
    let vals = tape.value(scores);
    debug_assert_eq!(vals.ncols(), 1);
    let mut seg_max = vec![f64::NEG_INFINITY; num_segments];
    for (e, &s) in seg.iter().enumerate() {
        seg_max[s] = seg_max[s].max(vals[(e, 0)]);
    }
    let mut neg_shift = Array2::zeros((seg.len(), 1));
    for (e, &s) in seg.iter().enumerate() {
        neg_shift[(e, 0)] = -seg_max[s];
    }
    let neg_shift = tape.constant(neg_shift);
    let shifted = tape.add(scores, neg_shift);
    let z = tape.exp(shifted);
    let denom = tape.scatter_add_rows(z, seg.clone(), num_segments);
    let denom_per_entry = tape.gather_rows(denom, seg.clone());
    tape.div(z, denom_per_entry)
}
