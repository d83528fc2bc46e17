//! A small tape-based reverse-mode automatic differentiation engine over
//! dense row-major matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the tape is already topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::scalar::Scalar;

pub type Mat<T> = Array2<T>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a batched multi-head attention call. Rows of `q`, `k` and `v`
/// are laid out as `batch * seq_len`, columns as `heads * head_dim`.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
    /// `true` marks a key position that may be attended to. Length
    /// `batch * seq_len`; `None` means every position is valid.
    pub key_mask: Option<Vec<bool>>,
    pub causal: bool,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Relu(Var),
    Gelu(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Clamp {
        a: Var,
        lo: T,
        hi: T,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Normalize {
        a: Var,
        inv_std: Vec<T>,
    },
    SumAll(Var),
    SumRows(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    PickPerRow {
        a: Var,
        cols: Vec<usize>,
    },
    SelectRows {
        a: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Var, Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<Mat<T>>,
    },
    PairwiseSqDist(Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var {
        let value = standard(value);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[(0, 0)]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, x: T) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` transposes when the matching flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let la = if ta { va.t() } else { va.view() };
        let lb = if tb { vb.t() } else { vb.view() };
        assert_eq!(la.ncols(), lb.nrows(), "matmul inner dimensions");
        let out = la.dot(&lb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shapes");
        let out = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let out = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1);
        assert_eq!(r.ncols(), self.value(a).ncols(), "add_row width");
        let out = self.value(a) + r;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1);
        assert_eq!(r.ncols(), self.value(a).ncols(), "mul_row width");
        let out = self.value(a) * r;
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) * k;
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a) + k;
        let ng = self.ng(a);
        self.push(out, Op::Shift(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu_fwd);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::exp);
        let ng = self.ng(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::ln);
        let ng = self.ng(a);
        self.push(out, Op::Ln(a), ng)
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(T::sqrt);
        let ng = self.ng(a);
        self.push(out, Op::Sqrt(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let out = self.value(a).mapv(|x| x.max(lo).min(hi));
        let ng = self.ng(a);
        self.push(out, Op::Clamp { a, lo, hi }, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without an
    /// affine part; combine with [`Graph::mul_row`] and [`Graph::add_row`]
    /// for layer normalization.
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Var {
        let x = self.value(a);
        let n = T::of(x.ncols() as f64);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let ng = self.ng(a);
        self.push(out, Op::Normalize { a, inv_std }, ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::of(n.max(1) as f64))
    }

    /// Row sums as an `m x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(out, Op::SumRows(a), ng)
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes row `i`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let out = t.select(Axis(0), ids);
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Picks `a[i, cols[i]]` into an `m x 1` column.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len());
        let out = Array2::from_shape_fn((cols.len(), 1), |(i, _)| x[(i, cols[i])]);
        let ng = self.ng(a);
        self.push(
            out,
            Op::PickPerRow {
                a,
                cols: cols.to_vec(),
            },
            ng,
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let out = self.value(a).select(Axis(0), rows);
        let ng = self.ng(a);
        self.push(
            out,
            Op::SelectRows {
                a,
                rows: rows.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols row counts");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatCols(a, b), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(out, Op::SliceCols { a, start }, ng)
    }

    /// Scaled dot-product attention over every `(batch, head)` block.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert_eq!(qv.nrows(), spec.batch * spec.seq_len, "attention rows");
        assert_eq!(d % spec.heads, 0, "heads must divide the model width");
        let dh = d / spec.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let sl = spec.seq_len;
        let mut out = Array2::zeros(qv.dim());
        let mut probs = Vec::with_capacity(spec.batch * spec.heads);
        for b in 0..spec.batch {
            let rows = b * sl..(b + 1) * sl;
            for h in 0..spec.heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![rows.clone(), cols.clone()]);
                let kb = kv.slice(s![rows.clone(), cols.clone()]);
                let vb = vv.slice(s![rows.clone(), cols.clone()]);
                let mut p = qb.dot(&kb.t()) * scale;
                for i in 0..sl {
                    let mut row = p.row_mut(i);
                    for j in 0..sl {
                        let valid = spec.key_mask.as_ref().is_none_or(|m| m[b * sl + j])
                            && (!spec.causal || j <= i);
                        if !valid {
                            row[j] = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row.as_slice_mut().expect("contiguous row"));
                }
                out.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vb));
                probs.push(p);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            ng,
        )
    }

    /// All pairwise squared Euclidean distances between the rows of `a`.
    pub fn pairwise_sq_dist(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let d: T = x
                    .row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(&p, &q)| (p - q) * (p - q))
                    .sum();
                out[(i, j)] = d;
                out[(j, i)] = d;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::PairwiseSqDist(a), ng)
    }

    /// Reverse sweep from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem(self.nodes[root.0].value.dim(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.ng(*a) {
                    // C = A' B' with A' = op(A); dA' = G B'^T
                    let opb = if *tb { vb.t() } else { vb.view() };
                    let d = if *ta {
                        opb.dot(&g.t())
                    } else {
                        g.dot(&opb.t())
                    };
                    self.acc(grads, *a, d);
                }
                if self.ng(*b) {
                    let opa = if *ta { va.t() } else { va.view() };
                    let d = if *tb { g.t().dot(&opa) } else { opa.t().dot(g) };
                    self.acc(grads, *b, d);
                }
            }
            Op::Add(a, b) => {
                self.acc_ref(grads, *a, g);
                self.acc_ref(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.acc_ref(grads, *a, g);
                if self.ng(*b) {
                    self.acc(grads, *b, g.mapv(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.acc_ref(grads, *a, g);
                if self.ng(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g * self.value(*row));
                }
                if self.ng(*row) {
                    let d = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(grads, *row, d);
                }
            }
            Op::Scale(a, k) => self.acc(grads, *a, g * *k),
            Op::Shift(a) => self.acc_ref(grads, *a, g),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| {
                    if y <= T::zero() {
                        *d = T::zero();
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::Gelu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= gelu_grad(x));
                self.acc(grads, *a, d);
            }
            Op::Exp(a) => self.acc(grads, *a, g * y),
            Op::Ln(a) => self.acc(grads, *a, g / self.value(*a)),
            Op::Sqrt(a) => {
                let mut d = g.clone();
                let two = T::of(2.0);
                Zip::from(&mut d).and(y).for_each(|d, &r| {
                    *d = if r > T::zero() {
                        *d / (two * r)
                    } else {
                        T::zero()
                    };
                });
                self.acc(grads, *a, d);
            }
            Op::Clamp { a, lo, hi } => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = T::zero();
                    }
                });
                self.acc(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|dv, &yv| *dv -= yv * dot);
                }
                self.acc(grads, *a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let total = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|dv, &lp| *dv -= lp.exp() * total);
                }
                self.acc(grads, *a, d);
            }
            Op::Normalize { a, inv_std } => {
                let n = T::of(y.ncols() as f64);
                let mut d = Array2::zeros(y.dim());
                for (r, ((mut drow, grow), xhat)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(g.rows())
                    .zip(y.rows())
                    .enumerate()
                {
                    let sum_g = grow.sum();
                    let sum_gx: T = grow.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum();
                    let k = inv_std[r] / n;
                    Zip::from(&mut drow)
                        .and(&grow)
                        .and(&xhat)
                        .for_each(|dv, &gv, &xv| *dv = k * (n * gv - sum_g - xv * sum_gx));
                }
                self.acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let dim = self.value(*a).dim();
                self.acc(grads, *a, Array2::from_elem(dim, g[(0, 0)]));
            }
            Op::SumRows(a) => {
                let dim = self.value(*a).dim();
                let d = Array2::from_shape_fn(dim, |(r, _)| g[(r, 0)]);
                self.acc(grads, *a, d);
            }
            Op::Gather { table, ids } => {
                let mut d = Array2::zeros(self.value(*table).dim());
                for (row, &id) in g.rows().into_iter().zip(ids.iter()) {
                    let mut target = d.row_mut(id);
                    target += &row;
                }
                self.acc(grads, *table, d);
            }
            Op::PickPerRow { a, cols } => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &c) in cols.iter().enumerate() {
                    d[(r, c)] = g[(r, 0)];
                }
                self.acc(grads, *a, d);
            }
            Op::SelectRows { a, rows } => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (src, &dst) in g.rows().into_iter().zip(rows.iter()) {
                    let mut target = d.row_mut(dst);
                    target += &src;
                }
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let wa = self.value(*a).ncols();
                if self.ng(*a) {
                    self.acc(grads, *a, g.slice(s![.., ..wa]).to_owned());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.slice(s![.., wa..]).to_owned());
                }
            }
            Op::SliceCols { a, start } => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.acc(grads, *a, d);
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => {
                self.attention_backward(*q, *k, *v, spec, probs, g, grads);
            }
            Op::PairwiseSqDist(a) => {
                let x = self.value(*a);
                let sym = g + &g.t();
                let rowsum = sym.sum_axis(Axis(1));
                let two = T::of(2.0);
                let mut d = sym.dot(x).mapv(|v| -v);
                for (mut drow, (xrow, &rs)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(x.rows().into_iter().zip(rowsum.iter()))
                {
                    drow.scaled_add(rs, &xrow);
                }
                d.mapv_inplace(|v| v * two);
                self.acc(grads, *a, d);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[Mat<T>],
        g: &Mat<T>,
        grads: &mut [Option<Mat<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / spec.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let sl = spec.seq_len;
        let mut dq = Array2::zeros(qv.dim());
        let mut dk = Array2::zeros(kv.dim());
        let mut dv = Array2::zeros(vv.dim());
        for b in 0..spec.batch {
            let rows = b * sl..(b + 1) * sl;
            for h in 0..spec.heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &probs[b * spec.heads + h];
                let go = g.slice(s![rows.clone(), cols.clone()]);
                let qb = qv.slice(s![rows.clone(), cols.clone()]);
                let kb = kv.slice(s![rows.clone(), cols.clone()]);
                let vb = vv.slice(s![rows.clone(), cols.clone()]);
                dv.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&p.t().dot(&go));
                let dp = go.dot(&vb.t());
                let mut ds = &dp * p;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot = row.sum();
                    Zip::from(&mut row)
                        .and(&prow)
                        .for_each(|x, &pv| *x -= pv * dot);
                }
                ds.mapv_inplace(|x| x * scale);
                dq.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&ds.dot(&kb));
                dk.slice_mut(s![rows.clone(), cols])
                    .assign(&ds.t().dot(&qb));
            }
        }
        self.acc(grads, q, dq);
        self.acc(grads, k, dk);
        self.acc(grads, v, dv);
    }

    fn acc(&self, grads: &mut [Option<Mat<T>>], v: Var, d: Mat<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot @ None => *slot = Some(standard(d)),
        }
    }

    fn acc_ref(&self, grads: &mut [Option<Mat<T>>], v: Var, d: &Mat<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += d,
            slot @ None => *slot = Some(d.clone()),
        }
    }
}

fn standard<T: Scalar>(m: Mat<T>) -> Mat<T> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

/// Numerically stable softmax. A row that is entirely `-inf` becomes zeros.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    if m == T::neg_infinity() {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let inner = c * (x + T::of(0.044715) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let inner = c * (x + T::of(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0 * 0.044715) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

/// Row-major view helper used by tests and callers that hold plain vectors.
pub fn row_matrix<T: Scalar>(v: &[T]) -> Mat<T> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

pub fn to_vec_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Vec<Vec<T>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}
