use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::{NnError, Real, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

enum Op<F> {
    Leaf,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Offset(Var),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, F, F),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        rstd: Vec<F>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        probs: Vec<Array2<F>>,
    },
    Dropout(Var, Array2<F>),
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Array2<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Recorder for one forward pass.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    frozen: Vec<u64>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters of `store` bound after this call are treated as constants.
    pub fn freeze(&mut self, store: &ParamStore<F>) {
        if !self.frozen.contains(&store.id()) {
            self.frozen.push(store.id());
        }
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        if self.frozen.contains(&store.id()) {
            self.push(value, Op::Leaf, false)
        } else {
            self.push(
                value,
                Op::Param {
                    store: store.id(),
                    id,
                },
                true,
            )
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `x[n, m] + b[1, m]` with the bias row broadcast over `n`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let value = self.value(x) + self.value(b);
        let rg = self.rg(&[x, b]);
        self.push(value, Op::AddBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shape");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shape");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn offset(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > F::zero() { x } else { F::zero() });
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = F::of(GELU_C);
        let k = F::of(GELU_K);
        let half = F::of(0.5);
        let value = self
            .value(a)
            .mapv(|x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.tanh());
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.exp());
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .mapv(|x| x.max(F::zero()) + (-x.abs()).exp().ln_1p());
        let rg = self.rg(&[a]);
        self.push(value, Op::Softplus(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.abs());
        let rg = self.rg(&[a]);
        self.push(value, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(value, Op::Square(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: F, hi: F) -> Var {
        let value = self.value(a).mapv(|x| x.max(lo).min(hi));
        let rg = self.rg(&[a]);
        self.push(value, Op::Clamp(a, lo, hi), rg)
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "minimum shape");
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| {
                if y < *x {
                    *x = y
                }
            });
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Minimum(a, b), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape");
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape");
        let rg = self.rg(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Row `i` of the result is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((indices.len(), src.ncols()));
        for (dst, &i) in value.rows_mut().into_iter().zip(indices) {
            dst.into_iter()
                .zip(src.row(i))
                .for_each(|(d, &x)| *d = x);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::GatherRows(a, indices.to_vec()), rg)
    }

    /// Sum over columns: `[n, m] -> [n, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(value, Op::RowSum(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Array2::from_elem((1, 1), x.sum() / F::of(x.len() as f64));
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` of shape `[1, m]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let m = F::of(xv.ncols() as f64);
        let eps = F::of(eps);
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / m;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / m;
            let r = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * r);
            rstd.push(r);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product attention over `batch` sequences of
    /// `seq_len` rows each, laid out consecutively. Keys at future positions
    /// (when `causal`) or with `key_mask[j] == false` receive zero weight; a
    /// query with no admissible key yields a zero row.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        causal: bool,
        key_mask: Option<&[bool]>,
    ) -> Var {
        let (rows, d) = self.value(q).dim();
        assert_eq!(rows % seq_len, 0, "attention rows not a multiple of seq_len");
        assert_eq!(d % heads, 0, "attention width not divisible by heads");
        if let Some(mask) = key_mask {
            assert_eq!(mask.len(), rows, "attention key mask length");
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Array2::zeros((rows, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let r = b * seq_len..(b + 1) * seq_len;
            for h in 0..heads {
                let c = h * dh..(h + 1) * dh;
                let qs = qv.slice(s![r.clone(), c.clone()]);
                let ks = kv.slice(s![r.clone(), c.clone()]);
                let vs = vv.slice(s![r.clone(), c.clone()]);
                let mut p = qs.dot(&ks.t());
                for i in 0..seq_len {
                    let admissible = |j: usize| {
                        (!causal || j <= i) && key_mask.is_none_or(|m| m[b * seq_len + j])
                    };
                    let mut row = p.row_mut(i);
                    let mut max = F::neg_infinity();
                    for j in 0..seq_len {
                        if admissible(j) {
                            let sv = row[j] * scale;
                            row[j] = sv;
                            if sv > max {
                                max = sv;
                            }
                        }
                    }
                    if max == F::neg_infinity() {
                        row.fill(F::zero());
                        continue;
                    }
                    let mut total = F::zero();
                    for j in 0..seq_len {
                        if admissible(j) {
                            let e = (row[j] - max).exp();
                            row[j] = e;
                            total = total + e;
                        } else {
                            row[j] = F::zero();
                        }
                    }
                    row.mapv_inplace(|e| e / total);
                }
                out.slice_mut(s![r.clone(), c.clone()]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            },
            rg,
        )
    }

    /// Multiplies by a precomputed (already rescaled) keep-mask.
    pub fn dropout(&mut self, a: Var, mask: Array2<F>) -> Var {
        let value = self.value(a) * &mask;
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        assert_eq!(lv.dim(), (1, 1), "backward expects a scalar loss");
        let l = lv[[0, 0]];
        if !l.is_finite() {
            return Err(NnError::NonFiniteLoss(l.f64()));
        }
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<F>, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.needs(*b) {
                    self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.needs(*b) {
                    self.acc(grads, *b, g.mapv(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(grads, *a, g.mapv(|x| x * c));
            }
            Op::Offset(a) => self.acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= F::zero() {
                            *d = F::zero()
                        }
                    });
                self.acc(grads, *a, d);
            }
            Op::Gelu(a) => {
                let c = F::of(GELU_C);
                let k = F::of(GELU_K);
                let half = F::of(0.5);
                let three = F::of(3.0);
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (F::one() - t * t) * c * (F::one() + three * k * x * x);
                    *d = *d * (half * (F::one() + t) + half * x * dt);
                });
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d = *d * (F::one() - y * y));
                self.acc(grads, *a, d);
            }
            Op::Exp(a) => self.acc(grads, *a, g * &node.value),
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    let sig = if x >= F::zero() {
                        F::one() / (F::one() + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (F::one() + e)
                    };
                    *d = *d * sig;
                });
                self.acc(grads, *a, d);
            }
            Op::Abs(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x > F::zero() {
                        *d
                    } else if x < F::zero() {
                        -*d
                    } else {
                        F::zero()
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Square(a) => {
                let two = F::of(2.0);
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d = *d * two * x);
                self.acc(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x < lo || x > hi {
                        *d = F::zero()
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Minimum(a, b) => {
                let mut da = g.clone();
                let mut db = g.clone();
                Zip::from(&mut da)
                    .and(&mut db)
                    .and(self.value(*a))
                    .and(self.value(*b))
                    .for_each(|da, db, &x, &y| {
                        if y < x {
                            *da = F::zero()
                        } else {
                            *db = F::zero()
                        }
                    });
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.needs(*p) {
                        self.acc(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let h = self.value(*p).nrows();
                    if self.needs(*p) {
                        self.acc(grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::GatherRows(a, indices) => {
                let mut d: Array2<F> = Array2::zeros(self.value(*a).raw_dim());
                for (src, &i) in g.rows().into_iter().zip(indices) {
                    let mut row = d.row_mut(i);
                    row += &src;
                }
                self.acc(grads, *a, d);
            }
            Op::RowSum(a) => {
                let shape = self.value(*a).raw_dim();
                let d = g.broadcast(shape).expect("row_sum broadcast").to_owned();
                self.acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let gv = g[[0, 0]];
                self.acc(grads, *a, Array2::from_elem(self.value(*a).raw_dim(), gv));
            }
            Op::Mean(a) => {
                let n = F::of(self.value(*a).len() as f64);
                let gv = g[[0, 0]] / n;
                self.acc(grads, *a, Array2::from_elem(self.value(*a).raw_dim(), gv));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                if self.needs(*gamma) {
                    let dg = (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    self.acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*x) {
                    let dxhat = g * self.value(*gamma);
                    let m = F::of(xhat.ncols() as f64);
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let mean_d = dh.sum() / m;
                        let mean_dx = dh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() / m;
                        let r = rstd[i];
                        Zip::from(&mut row)
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = r * (d - mean_d - h * mean_dx));
                    }
                    self.acc(grads, *x, dx);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                seq_len,
                probs,
            } => {
                let (rows, d) = self.value(*q).dim();
                let (heads, seq_len) = (*heads, *seq_len);
                let batch = rows / seq_len;
                let dh = d / heads;
                let scale = F::one() / F::of(dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Array2::zeros((rows, d));
                let mut dk = Array2::zeros((rows, d));
                let mut dv = Array2::zeros((rows, d));
                for b in 0..batch {
                    let r = b * seq_len..(b + 1) * seq_len;
                    for h in 0..heads {
                        let c = h * dh..(h + 1) * dh;
                        let p = &probs[b * heads + h];
                        let go = g.slice(s![r.clone(), c.clone()]);
                        dv.slice_mut(s![r.clone(), c.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(s![r.clone(), c.clone()]).t());
                        let mut ds = p * &dp;
                        for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                            let inner: F = row.sum();
                            let pi = p.row(i);
                            Zip::from(&mut row)
                                .and(&pi)
                                .for_each(|s, &pv| *s = (*s - pv * inner) * scale);
                        }
                        dq.slice_mut(s![r.clone(), c.clone()])
                            .assign(&ds.dot(&kv.slice(s![r.clone(), c.clone()])));
                        dk.slice_mut(s![r.clone(), c.clone()])
                            .assign(&ds.t().dot(&qv.slice(s![r.clone(), c.clone()])));
                    }
                }
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::Dropout(a, mask) => self.acc(grads, *a, g * mask),
        }
    }

    /// Gradients of every parameter node bound from store `store_id`.
    pub(crate) fn param_grads<'a>(
        &'a self,
        store_id: u64,
        grads: &'a Gradients<F>,
    ) -> impl Iterator<Item = (ParamId, &'a Array2<F>)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param { store, id } if store == store_id => grads.grads[i].as_ref().map(|g| (id, g)),
            _ => None,
        })
    }
}
