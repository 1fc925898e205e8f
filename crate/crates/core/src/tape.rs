//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; calling
//! [`Tape::backward`] (or [`Tape::backward_seeded`]) walks the list in reverse
//! and accumulates exact gradients for every node, parameters included. Each
//! op carries just enough saved state for its adjoint.

use crate::matrix::{dot, norm, Matrix};
use thiserror::Error;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("vector norm {0:.3e} below 1e-12; cosine undefined")]
    NormTooSmall(f64),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

const NORM_FLOOR: f64 = 1e-12;
const RMS_EPS: f64 = 1e-9;

enum Op {
    Leaf,
    /// Rows of `table` selected by `ids`.
    GatherRows { table: Var, ids: Vec<usize> },
    Add(Var, Var),
    /// Elementwise add of a constant matrix (e.g. position encodings).
    AddConst(Var),
    /// a (L×m) + broadcast bias (1×m) on every row.
    AddRowBroadcast { a: Var, bias: Var },
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNt(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    /// Row-wise RMS normalization with learned per-column gain.
    RmsNormRows { a: Var, gain: Var },
    /// Row-wise softmax over a square L×L matrix where row i only sees
    /// columns 0..=i; masked columns are exactly zero in the output.
    SoftmaxRowsCausal(Var),
    MeanRows(Var),
    /// Mean of the last min(n, L) rows.
    MeanLastRows { a: Var, n: usize },
    SliceCols { a: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    /// Cosine similarity of two 1×d vectors; saves norms for the adjoint.
    Cosine { a: Var, b: Var, na: f64, nb: f64 },
    /// Stabilized binary cross-entropy on logit s/tau against label y.
    BceWithLogit { s: Var, y: f64, tau: f64 },
    /// Stabilized InfoNCE: -log softmax weight of the positive.
    InfoNce { pos: Var, negs: Vec<Var>, tau: f64 },
    /// Σ wᵢ · termᵢ over same-shape nodes.
    AffineCombination(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a single backward pass, indexable by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.data.len(), 1, "scalar() on non-1×1 node");
        m.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols;
        let mut out = Matrix::zeros(ids.len(), cols);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < t.rows, "row id {} out of range {}", id, t.rows);
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn add_const(&mut self, a: Var, m: &Matrix) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(m);
        self.push(out, Op::AddConst(a))
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows, 1, "bias must be a row vector");
        assert_eq!(av.cols, bv.cols, "bias width mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRowBroadcast { a, bias })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in &mut out.data {
            *v = *v * sigmoid(*v);
        }
        self.push(out, Op::Silu(a))
    }

    pub fn rmsnorm_rows(&mut self, a: Var, gain: Var) -> Var {
        let (av, gv) = (self.value(a), self.value(gain));
        assert_eq!(gv.rows, 1, "gain must be a row vector");
        assert_eq!(av.cols, gv.cols, "gain width mismatch");
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let x = av.row(r);
            let ms = dot(x, x) / x.len() as f64;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            for (c, (&xv, &g)) in x.iter().zip(&gv.data).enumerate() {
                out.data[r * av.cols + c] = xv * inv * g;
            }
        }
        self.push(out, Op::RmsNormRows { a, gain })
    }

    pub fn softmax_rows_causal(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, av.cols, "causal softmax expects a square matrix");
        let n = av.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let row = av.row(i);
            let visible = &row[..=i];
            let max = visible.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..=i {
                let e = (row[j] - max).exp();
                out.data[i * n + j] = e;
                sum += e;
            }
            for j in 0..=i {
                out.data[i * n + j] /= sum;
            }
        }
        self.push(out, Op::SoftmaxRowsCausal(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows >= 1, "mean over zero rows");
        let mut out = Matrix::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        out.scale_in_place(1.0 / av.rows as f64);
        self.push(out, Op::MeanRows(a))
    }

    pub fn mean_last_rows(&mut self, a: Var, n: usize) -> Var {
        assert!(n >= 1, "last-n pooling needs n >= 1");
        let av = self.value(a);
        let m = n.min(av.rows);
        let first = av.rows - m;
        let mut out = Matrix::zeros(1, av.cols);
        for r in first..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        out.scale_in_place(1.0 / m as f64);
        self.push(out, Op::MeanLastRows { a, n })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "column slice out of range");
        let mut out = Matrix::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let total: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "row count mismatch in concat");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.rows != 1 {
            return Err(TapeError::ShapeMismatch {
                expected: format!("two 1×{} vectors", av.cols),
                got: format!("{:?} and {:?}", av.shape(), bv.shape()),
            });
        }
        let na = norm(&av.data);
        let nb = norm(&bv.data);
        if na < NORM_FLOOR || nb < NORM_FLOOR {
            return Err(TapeError::NormTooSmall(na.min(nb)));
        }
        let c = dot(&av.data, &bv.data) / (na * nb);
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![c]),
            Op::Cosine { a, b, na, nb },
        ))
    }

    pub fn bce_with_logit(&mut self, s: Var, y: f64, tau: f64) -> Var {
        debug_assert!(y == 0.0 || y == 1.0);
        let z = self.scalar(s) / tau;
        let loss = softplus(z) - y * z;
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::BceWithLogit { s, y, tau },
        )
    }

    pub fn infonce(&mut self, pos: Var, negs: &[Var], tau: f64) -> Var {
        assert!(!negs.is_empty(), "infonce needs at least one negative");
        let zp = self.scalar(pos) / tau;
        let zs: Vec<f64> = std::iter::once(zp)
            .chain(negs.iter().map(|&n| self.scalar(n) / tau))
            .collect();
        let max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + zs.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - zp;
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::InfoNce {
                pos,
                negs: negs.to_vec(),
                tau,
            },
        )
    }

    pub fn affine_combination(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let shape = self.value(terms[0].0).shape();
        let mut out = Matrix::zeros(shape.0, shape.1);
        for &(v, w) in terms {
            let tv = self.value(v);
            assert_eq!(tv.shape(), shape, "shape mismatch in affine combination");
            for (o, &x) in out.data.iter_mut().zip(&tv.data) {
                *o += w * x;
            }
        }
        self.push(out, Op::AffineCombination(terms.to_vec()))
    }

    /// Backward from a 1×1 root with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Gradients {
        self.backward_seeded(root, Matrix::from_vec(1, 1, vec![1.0]))
    }

    /// Backward from `root` with an explicit upstream gradient, e.g. when the
    /// loss head lives on a different tape and hands back dL/d(embedding).
    pub fn backward_seeded(&mut self, root: Var, seed: Matrix) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            seed.shape(),
            "seed gradient shape mismatch"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_parents(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let add_to = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::GatherRows { table, ids } => {
                let t = self.value(*table);
                let mut dt = Matrix::zeros(t.rows, t.cols);
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                add_to(grads, *table, dt);
            }
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::AddConst(a) => add_to(grads, *a, g.clone()),
            Op::AddRowBroadcast { a, bias } => {
                add_to(grads, *a, g.clone());
                let mut db = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, &x) in db.data.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                add_to(grads, *bias, db);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                add_to(grads, *a, g.matmul_nt(bv));
                add_to(grads, *b, av.matmul_tn(g));
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                add_to(grads, *a, g.matmul(bv));
                add_to(grads, *b, g.matmul_tn(av));
            }
            Op::Scale(a, c) => {
                let mut da = g.clone();
                da.scale_in_place(*c);
                add_to(grads, *a, da);
            }
            Op::Silu(a) => {
                let av = self.value(*a);
                let mut da = g.clone();
                for (d, &x) in da.data.iter_mut().zip(&av.data) {
                    let s = sigmoid(x);
                    *d *= s * (1.0 + x * (1.0 - s));
                }
                add_to(grads, *a, da);
            }
            Op::RmsNormRows { a, gain } => {
                let (av, gv) = (self.value(*a), self.value(*gain));
                let n = av.cols as f64;
                let mut da = Matrix::zeros(av.rows, av.cols);
                let mut dg = Matrix::zeros(1, av.cols);
                for r in 0..av.rows {
                    let x = av.row(r);
                    let grow = g.row(r);
                    let ms = dot(x, x) / n;
                    let rinv = 1.0 / (ms + RMS_EPS).sqrt();
                    // dgain_j += g_j * x_j / rms
                    for c in 0..av.cols {
                        dg.data[c] += grow[c] * x[c] * rinv;
                    }
                    // dx_i = gain_i g_i / rms − x_i Σ_j gain_j g_j x_j / (n rms³)
                    let mut s = 0.0;
                    for c in 0..av.cols {
                        s += gv.data[c] * grow[c] * x[c];
                    }
                    let k = s * rinv * rinv * rinv / n;
                    for c in 0..av.cols {
                        da.data[r * av.cols + c] = gv.data[c] * grow[c] * rinv - x[c] * k;
                    }
                }
                add_to(grads, *a, da);
                add_to(grads, *gain, dg);
            }
            Op::SoftmaxRowsCausal(a) => {
                let out = &self.nodes[i].value;
                let n = out.rows;
                let mut da = Matrix::zeros(n, n);
                for r in 0..n {
                    let p = &out.row(r)[..=r];
                    let gr = &g.row(r)[..=r];
                    let inner = dot(p, gr);
                    for j in 0..=r {
                        da.data[r * n + j] = p[j] * (gr[j] - inner);
                    }
                }
                add_to(grads, *a, da);
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let w = 1.0 / av.rows as f64;
                let mut da = Matrix::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    for (o, &x) in da.row_mut(r).iter_mut().zip(&g.data) {
                        *o = x * w;
                    }
                }
                add_to(grads, *a, da);
            }
            Op::MeanLastRows { a, n } => {
                let av = self.value(*a);
                let m = (*n).min(av.rows);
                let w = 1.0 / m as f64;
                let mut da = Matrix::zeros(av.rows, av.cols);
                for r in av.rows - m..av.rows {
                    for (o, &x) in da.row_mut(r).iter_mut().zip(&g.data) {
                        *o = x * w;
                    }
                }
                add_to(grads, *a, da);
            }
            Op::SliceCols { a, start, len } => {
                let av = self.value(*a);
                let mut da = Matrix::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    da.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                }
                add_to(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let mut dp = Matrix::zeros(pv.rows, pv.cols);
                    for r in 0..pv.rows {
                        dp.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + pv.cols]);
                    }
                    offset += pv.cols;
                    add_to(grads, p, dp);
                }
            }
            Op::Cosine { a, b, na, nb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = self.nodes[i].value.data[0];
                let up = g.data[0];
                let mut da = Matrix::zeros(1, av.cols);
                let mut db = Matrix::zeros(1, av.cols);
                let inv = 1.0 / (na * nb);
                for j in 0..av.cols {
                    da.data[j] = up * (bv.data[j] * inv - c * av.data[j] / (na * na));
                    db.data[j] = up * (av.data[j] * inv - c * bv.data[j] / (nb * nb));
                }
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::BceWithLogit { s, y, tau } => {
                let z = self.value(*s).data[0] / tau;
                let d = g.data[0] * (sigmoid(z) - y) / tau;
                add_to(grads, *s, Matrix::from_vec(1, 1, vec![d]));
            }
            Op::InfoNce { pos, negs, tau } => {
                let zp = self.value(*pos).data[0] / tau;
                let zs: Vec<f64> = std::iter::once(zp)
                    .chain(negs.iter().map(|&nv| self.value(nv).data[0] / tau))
                    .collect();
                let max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = zs.iter().map(|z| (z - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let up = g.data[0];
                let dpos = up * (exps[0] / sum - 1.0) / tau;
                add_to(grads, *pos, Matrix::from_vec(1, 1, vec![dpos]));
                for (j, &nv) in negs.iter().enumerate() {
                    let dn = up * (exps[j + 1] / sum) / tau;
                    add_to(grads, nv, Matrix::from_vec(1, 1, vec![dn]));
                }
            }
            Op::AffineCombination(terms) => {
                for &(v, w) in terms {
                    let mut dv = g.clone();
                    dv.scale_in_place(w);
                    add_to(grads, v, dv);
                }
            }
        }
    }
}
