//! Parameter storage, layers and the optimizer.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AttentionSpec, Gradients, Graph, Mat, Var};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Mat<T>,
}

/// Owns every trainable tensor of a model. Layers refer to their tensors by
/// [`ParamId`], so one architecture can run against several stores (the
/// live student and a frozen teacher snapshot, for instance).
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Largest absolute elementwise difference against another store with
    /// the same layout.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.params
            .iter()
            .zip(other.params.iter())
            .flat_map(|(a, b)| {
                a.value
                    .iter()
                    .zip(b.value.iter())
                    .map(|(x, y)| (*x - *y).abs().f64())
            })
            .fold(0.0, f64::max)
    }
}

/// Serializable form of one tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn of<T: Scalar>(name: &str, m: &Mat<T>) -> Self {
        Self {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|x| x.f64()).collect(),
        }
    }

    pub fn to_mat<T: Scalar>(&self) -> Option<Mat<T>> {
        Array2::from_shape_vec(
            (self.rows, self.cols),
            self.data.iter().map(|&x| T::of(x)).collect(),
        )
        .ok()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor::of(&p.name, &p.value))
            .collect()
    }

    /// Overwrites tensors by name. Every stored tensor must be present with
    /// a matching shape; unknown names are an error too.
    pub fn load_named(&mut self, tensors: &[NamedTensor]) -> std::result::Result<(), String> {
        if tensors.len() != self.params.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                tensors.len()
            ));
        }
        for t in tensors {
            let id = self
                .find(&t.name)
                .ok_or_else(|| format!("unknown tensor {}", t.name))?;
            let cur = self.get(id).dim();
            if cur != (t.rows, t.cols) || t.data.len() != t.rows * t.cols {
                return Err(format!(
                    "tensor {} has shape {}x{}, expected {}x{}",
                    t.name, t.rows, t.cols, cur.0, cur.1
                ));
            }
            *self.get_mut(id) = t.to_mat().expect("checked shape");
        }
        Ok(())
    }

    /// Copies every tensor of `other`, which must share this layout.
    pub fn copy_from(&mut self, other: &Self) {
        assert_eq!(
            self.params.len(),
            other.params.len(),
            "store layouts differ"
        );
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.assign(&b.value);
        }
    }
}

/// A forward pass in progress: the tape plus the binding of store tensors
/// to tape leaves. Parameters are bound lazily on first use.
pub struct Session<'p, T: Scalar> {
    pub g: Graph<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: bool,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'p, T: Scalar> Session<'p, T> {
    /// Parameters receive gradients; dropout is active when `p > 0`.
    pub fn train(params: &'p ParamStore<T>, dropout: f64, rng: ChaCha8Rng) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: vec![None; params.len()],
            trainable: true,
            dropout: (dropout > 0.0).then_some((dropout, rng)),
        }
    }

    /// Inference: parameters are constants and dropout is off.
    pub fn eval(params: &'p ParamStore<T>) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: vec![None; params.len()],
            trainable: false,
            dropout: None,
        }
    }

    pub fn is_training(&self) -> bool {
        self.trainable
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        let v = if self.trainable {
            self.g.param(value)
        } else {
            self.g.constant(value)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return x;
        };
        let keep = 1.0 - *p;
        let scale = T::of(1.0 / keep);
        let dim = self.g.value(x).dim();
        let mask = Array2::from_shape_simple_fn(dim, || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        let m = self.g.constant(mask);
        self.g.mul(x, m)
    }

    /// Gradients of every bound parameter, indexed by [`ParamId`].
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Mat<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect()
    }

    pub fn bound_var(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }
}

fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite xavier bound");
    Array2::from_shape_simple_fn((rows, cols), || T::of(dist.sample(rng)))
}

fn normal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(dist.sample(rng)))
}

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let w = s.p(self.weight);
        let b = s.p(self.bias);
        let y = s.g.matmul(x, w);
        s.g.add_row(y, b)
    }

    /// Applies the layer to a plain row vector.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> Vec<T> {
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        (0..self.out_dim)
            .map(|j| {
                b[(0, j)]
                    + x.iter()
                        .enumerate()
                        .map(|(i, &xi)| xi * w[(i, j)])
                        .sum::<T>()
            })
            .collect()
    }
}

/// Stack of affine layers with GELU between them. Depth one is a single
/// affine map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let depth = depth.max(1);
        let layers = (0..depth)
            .map(|i| {
                let a = if i == 0 { in_dim } else { out_dim };
                Linear::new(store, &format!("{name}.{i}"), a, out_dim, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = s.g.gelu(x);
            }
            x = layer.forward(s, x);
        }
        x
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Array2::ones((1, dim)));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, dim)));
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let n = s.g.normalize_rows(x, T::of(1e-5));
        let gain = s.p(self.gain);
        let bias = s.p(self.bias);
        let y = s.g.mul_row(n, gain);
        s.g.add_row(y, bias)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerBlock {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        ff_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), dim, ff_dim, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ff_dim, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, spec: &AttentionSpec) -> Var {
        let h = self.ln_attn.forward(s, x);
        let q = self.query.forward(s, h);
        let k = self.key.forward(s, h);
        let v = self.value.forward(s, h);
        let a = s.g.attention(q, k, v, spec.clone());
        let a = self.out.forward(s, a);
        let a = s.dropout(a);
        let x = s.g.add(x, a);
        let h = self.ln_ff.forward(s, x);
        let h = self.ff_in.forward(s, h);
        let h = s.g.gelu(h);
        let h = self.ff_out.forward(s, h);
        let h = s.dropout(h);
        s.g.add(x, h)
    }
}

/// Token + learned position embeddings feeding a stack of blocks and a final
/// layer norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerStack {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
    pub dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab: usize,
}

impl TransformerStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        max_len: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let tokens = store.add(format!("{name}.tokens"), normal(rng, vocab, dim, 0.1));
        let positions = store.add(format!("{name}.positions"), normal(rng, max_len, dim, 0.1));
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(store, &format!("{name}.block{i}"), dim, ff_dim, rng))
            .collect();
        let final_norm = LayerNorm::new(store, &format!("{name}.final_norm"), dim);
        Self {
            tokens,
            positions,
            blocks,
            final_norm,
            dim,
            heads,
            max_len,
            vocab,
        }
    }

    /// Token plus position embeddings for a `batch x seq_len` id grid.
    pub fn embed<T: Scalar>(&self, s: &mut Session<'_, T>, ids: &[usize], seq_len: usize) -> Var {
        let tok = s.p(self.tokens);
        let pos = s.p(self.positions);
        let x = s.g.gather(tok, ids);
        let pos_ids: Vec<usize> = (0..ids.len()).map(|i| i % seq_len).collect();
        let p = s.g.gather(pos, &pos_ids);
        s.g.add(x, p)
    }

    /// Runs the blocks over already-embedded input.
    pub fn run<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var, spec: &AttentionSpec) -> Var {
        let mut x = s.dropout(x);
        for block in &self.blocks {
            x = block.forward(s, x, spec);
        }
        self.final_norm.forward(s, x)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub first: Vec<NamedTensor>,
    pub second: Vec<NamedTensor>,
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first: Vec<Mat<T>>,
    pub second: Vec<Mat<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Mat<T>> = store
            .iter()
            .map(|(_, p)| Array2::zeros(p.value.dim()))
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn state(&self, store: &ParamStore<T>) -> AdamWState {
        let named = |ms: &[Mat<T>]| {
            store
                .iter()
                .zip(ms)
                .map(|((_, p), m)| NamedTensor::of(&p.name, m))
                .collect()
        };
        AdamWState {
            step: self.step,
            first: named(&self.first),
            second: named(&self.second),
        }
    }

    pub fn restore(&mut self, state: &AdamWState) -> std::result::Result<(), String> {
        if state.first.len() != self.first.len() || state.second.len() != self.second.len() {
            return Err("optimizer state does not match the parameter layout".into());
        }
        for (dst, src) in self
            .first
            .iter_mut()
            .chain(self.second.iter_mut())
            .zip(state.first.iter().chain(&state.second))
        {
            let m: Mat<T> = src
                .to_mat()
                .ok_or_else(|| format!("bad optimizer tensor {}", src.name))?;
            if m.dim() != dst.dim() {
                return Err(format!("optimizer tensor {} has the wrong shape", src.name));
            }
            *dst = m;
        }
        self.step = state.step;
        Ok(())
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Mat<T>>]) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps, wd) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay));
        let (bc1, bc2) = (T::of(bc1), T::of(bc2));
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let value = store.get_mut(ParamId(i));
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
                });
        }
    }
}
