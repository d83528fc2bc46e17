//! Encoder abstraction and the heads that split an embedding into a causal
//! latent (Gaussian, reparameterized) and a target latent, plus the
//! recombination that conditions the decoder.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{FeedForward, ParamStore, Session, TransformerStack};
use crate::scalar::Scalar;
use crate::text::{Batch, TokenSequence};

/// How the sequence matrix is summarized into the vector the heads read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    FirstToken,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub pooled: Vec<T>,
    /// `s_l x h_d`
    pub sequence: Mat<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalLatent<T> {
    pub mu: Vec<T>,
    /// Standard deviations, strictly positive.
    pub sigma: Vec<T>,
    pub sample: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetLatent<T> {
    pub vector: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecombinedLatent<T> {
    pub vector: Vec<T>,
}

pub(crate) fn ensure_finite<T: Scalar>(term: &str, values: &[T]) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: term.to_string(),
            detail: format!("entry {i} = {v}"),
        });
    }
    Ok(())
}

fn row_var<T: Scalar>(s: &mut Session<'_, T>, v: &[T]) -> Var {
    s.g.constant(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector"))
}

fn first_row<T: Scalar>(s: &Session<'_, T>, v: Var) -> Vec<T> {
    s.g.value(v).row(0).to_vec()
}

/// Transformer encoder plus pooling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub stack: TransformerStack,
    pub pooling: Pooling,
}

impl Encoder {
    pub fn hidden_dim(&self) -> usize {
        self.stack.dim
    }

    pub fn max_len(&self) -> usize {
        self.stack.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.stack.vocab
    }

    /// Returns the `batch*seq_len x h_d` sequence matrix and the `batch x h_d`
    /// pooled summary.
    pub fn encode_batch<T: Scalar>(&self, s: &mut Session<'_, T>, batch: &Batch) -> (Var, Var) {
        let x = self.stack.embed(s, &batch.ids, batch.seq_len);
        let spec = crate::autodiff::AttentionSpec {
            batch: batch.batch,
            seq_len: batch.seq_len,
            heads: self.stack.heads,
            key_mask: Some(batch.mask.clone()),
            causal: false,
        };
        let seq = self.stack.run(s, x, &spec);
        let pool = s.g.constant(pool_matrix(batch, self.pooling));
        let pooled = s.g.matmul(pool, seq);
        (seq, pooled)
    }

    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &TokenSequence,
    ) -> Result<Embedding<T>> {
        seq.validate(self.max_len(), self.vocab_size())?;
        let batch = Batch::from_sequences([seq]);
        let mut s = Session::eval(store);
        let (sq, pooled) = self.encode_batch(&mut s, &batch);
        let pooled = first_row(&s, pooled);
        ensure_finite("encoder output", &pooled)?;
        Ok(Embedding {
            pooled,
            sequence: s.g.value(sq).clone(),
        })
    }
}

/// `batch x batch*seq_len` matrix that maps the sequence rows to the pooled
/// rows.
pub fn pool_matrix<T: Scalar>(batch: &Batch, pooling: Pooling) -> Mat<T> {
    let (b, l) = (batch.batch, batch.seq_len);
    let mut m = Array2::zeros((b, b * l));
    for i in 0..b {
        match pooling {
            Pooling::FirstToken => m[(i, i * l)] = T::one(),
            Pooling::Mean => {
                let n = T::of(batch.valid_count(i).max(1) as f64);
                for t in 0..l {
                    if batch.mask[i * l + t] {
                        m[(i, i * l + t)] = T::one() / n;
                    }
                }
            }
        }
    }
    m
}

/// `FC_mu`, `FC_Sigma` (emitting log-variance), `FC_pi` and the
/// recombination map `FC_zhat`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisentangleHeads {
    pub fc_mu: FeedForward,
    pub fc_log_var: FeedForward,
    pub fc_pi: FeedForward,
    pub fc_zhat: FeedForward,
}

impl DisentangleHeads {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        hidden: usize,
        h_causal: usize,
        h_disc: usize,
        zhat_dim: usize,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            fc_mu: FeedForward::new(store, "fc_mu", hidden, h_causal, depth, rng),
            fc_log_var: FeedForward::new(store, "fc_log_var", hidden, h_causal, depth, rng),
            fc_pi: FeedForward::new(store, "fc_pi", hidden, h_disc, depth, rng),
            fc_zhat: FeedForward::new(store, "fc_zhat", h_causal + h_disc, zhat_dim, depth, rng),
        }
    }

    pub fn h_causal(&self) -> usize {
        self.fc_mu.out_dim()
    }

    pub fn h_disc(&self) -> usize {
        self.fc_pi.out_dim()
    }

    pub fn causal_params<T: Scalar>(&self, s: &mut Session<'_, T>, pooled: Var) -> (Var, Var) {
        let mu = self.fc_mu.forward(s, pooled);
        let log_var = self.fc_log_var.forward(s, pooled);
        (mu, log_var)
    }

    /// `mu + exp(log_var / 2) * noise`; returns `(sample, sigma)`.
    pub fn sample_var<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        mu: Var,
        log_var: Var,
        noise: Option<Mat<T>>,
    ) -> (Var, Var) {
        let half = s.g.scale(log_var, T::of(0.5));
        let sigma = s.g.exp(half);
        let sample = match noise {
            Some(eps) => {
                let eps = s.g.constant(eps);
                let spread = s.g.mul(sigma, eps);
                s.g.add(mu, spread)
            }
            None => mu,
        };
        (sample, sigma)
    }

    pub fn target_var<T: Scalar>(&self, s: &mut Session<'_, T>, pooled: Var) -> Var {
        self.fc_pi.forward(s, pooled)
    }

    /// `FC_zhat([causal | target])`, causal first.
    pub fn recombine_var<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        causal: Var,
        target: Var,
    ) -> Var {
        let joined = s.g.concat_cols(causal, target);
        self.fc_zhat.forward(s, joined)
    }

    pub fn reparameterize<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        emb: &Embedding<T>,
        noise: &[T],
    ) -> Result<CausalLatent<T>> {
        if noise.len() != self.h_causal() {
            return Err(Error::Shape {
                what: "noise",
                expected: self.h_causal(),
                got: noise.len(),
            });
        }
        self.check_pooled(emb)?;
        let mut s = Session::eval(store);
        let pooled = row_var(&mut s, &emb.pooled);
        let (mu, lv) = self.causal_params(&mut s, pooled);
        let eps = Array2::from_shape_vec((1, noise.len()), noise.to_vec()).expect("noise row");
        let (sample, sigma) = self.sample_var(&mut s, mu, lv, Some(eps));
        let out = CausalLatent {
            mu: first_row(&s, mu),
            sigma: first_row(&s, sigma),
            sample: first_row(&s, sample),
        };
        ensure_finite("causal mean", &out.mu)?;
        ensure_finite("causal sigma", &out.sigma)?;
        if let Some(i) = out.sigma.iter().position(|x| *x <= T::zero()) {
            return Err(Error::NonFinite {
                term: "causal sigma".into(),
                detail: format!("entry {i} underflowed to zero"),
            });
        }
        Ok(out)
    }

    pub fn target_head<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        emb: &Embedding<T>,
    ) -> Result<TargetLatent<T>> {
        self.check_pooled(emb)?;
        let mut s = Session::eval(store);
        let pooled = row_var(&mut s, &emb.pooled);
        let xw = self.target_var(&mut s, pooled);
        let vector = first_row(&s, xw);
        ensure_finite("target latent", &vector)?;
        Ok(TargetLatent { vector })
    }

    pub fn recombine<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        c: &CausalLatent<T>,
        t: &TargetLatent<T>,
    ) -> Result<RecombinedLatent<T>> {
        if c.sample.len() != self.h_causal() {
            return Err(Error::Config(format!(
                "causal latent has {} dims, recombination expects {}",
                c.sample.len(),
                self.h_causal()
            )));
        }
        if t.vector.len() != self.h_disc() {
            return Err(Error::Config(format!(
                "target latent has {} dims, recombination expects {}",
                t.vector.len(),
                self.h_disc()
            )));
        }
        let mut s = Session::eval(store);
        let cv = row_var(&mut s, &c.sample);
        let tv = row_var(&mut s, &t.vector);
        let z = self.recombine_var(&mut s, cv, tv);
        Ok(RecombinedLatent {
            vector: first_row(&s, z),
        })
    }

    fn check_pooled<T: Scalar>(&self, emb: &Embedding<T>) -> Result<()> {
        let want = self.fc_mu.in_dim();
        if emb.pooled.len() != want {
            return Err(Error::Shape {
                what: "pooled embedding",
                expected: want,
                got: emb.pooled.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn heads(store: &mut ParamStore<f64>, hidden: usize, hc: usize, hd: usize) -> DisentangleHeads {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        DisentangleHeads::new(store, hidden, hc, hd, hc + hd, 1, &mut rng)
    }

    fn emb(pooled: Vec<f64>) -> Embedding<f64> {
        Embedding {
            sequence: Array2::zeros((1, pooled.len())),
            pooled,
        }
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 3, 2);
        let c = h
            .reparameterize(&store, &emb(vec![0.3, -0.2, 1.0, 0.5]), &[0.0; 3])
            .unwrap();
        assert_eq!(c.sample, c.mu);
    }

    #[test]
    fn unit_noise_moves_one_coordinate_by_sigma() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 3, 2);
        let e = emb(vec![0.3, -0.2, 1.0, 0.5]);
        for k in 0..3 {
            let mut noise = vec![0.0; 3];
            noise[k] = 1.0;
            let c = h.reparameterize(&store, &e, &noise).unwrap();
            for j in 0..3 {
                let delta = c.sample[j] - c.mu[j];
                if j == k {
                    assert!((delta - c.sigma[k]).abs() < 1e-12);
                } else {
                    assert_eq!(delta, 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_dimension_is_checked() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 3, 2);
        let err = h
            .reparameterize(&store, &emb(vec![0.0; 4]), &[0.0; 2])
            .unwrap_err();
        assert!(matches!(err, Error::Shape { what: "noise", .. }));
    }

    #[test]
    fn monte_carlo_mean_of_samples_tracks_mu() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 3, 2);
        let e = emb(vec![0.1, 0.4, -0.3, 0.8]);
        let base = h.reparameterize(&store, &e, &[0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = [0.0f64; 3];
        for _ in 0..n {
            let noise: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let c = h.reparameterize(&store, &e, &noise).unwrap();
            for j in 0..3 {
                acc[j] += c.sample[j];
            }
        }
        for j in 0..3 {
            let mean = acc[j] / n as f64;
            let bound = 3.0 * base.sigma[j] / (n as f64).sqrt();
            assert!((mean - base.mu[j]).abs() <= bound, "coord {j}");
        }
    }

    #[test]
    fn target_head_of_zero_is_zero_with_zero_bias() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 3, 2);
        let t = h.target_head(&store, &emb(vec![0.0; 4])).unwrap();
        assert_eq!(t.vector, vec![0.0, 0.0]);
    }

    #[test]
    fn recombine_concatenates_causal_then_target() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 4, 2, 2);
        let w = h.fc_zhat.layers[0].weight;
        *store.get_mut(w) = Array2::eye(4);
        let c = CausalLatent {
            mu: vec![1.0, 0.0],
            sigma: vec![1.0, 1.0],
            sample: vec![1.0, 0.0],
        };
        let t = TargetLatent {
            vector: vec![0.0, 2.0],
        };
        let z = h.recombine(&store, &c, &t).unwrap();
        assert_eq!(z.vector, vec![1.0, 0.0, 0.0, 2.0]);

        let zero = CausalLatent {
            mu: vec![0.0; 2],
            sigma: vec![1.0; 2],
            sample: vec![0.0; 2],
        };
        let tz = TargetLatent {
            vector: vec![0.0; 2],
        };
        assert_eq!(
            h.recombine(&store, &zero, &tz).unwrap().vector,
            vec![0.0; 4]
        );

        let bad = TargetLatent {
            vector: vec![0.0; 3],
        };
        assert!(matches!(
            h.recombine(&store, &c, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mean_pooling_ignores_padding() {
        let a = TokenSequence::unmasked(vec![1, 3]);
        let b = TokenSequence::unmasked(vec![1, 3, 4]);
        let batch = Batch::from_sequences([&a, &b]);
        let m: Mat<f64> = pool_matrix(&batch, Pooling::Mean);
        assert_eq!(m.row(0).to_vec(), vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let f: Mat<f64> = pool_matrix(&batch, Pooling::FirstToken);
        assert_eq!(f.row(1).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
