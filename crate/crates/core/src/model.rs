//! The assembled network: encoder, disentanglement heads, a causal decoder
//! conditioned on the recombined latent, the target classifier and the hate
//! head.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{row_matrix, AttentionSpec, Mat, Var};
use crate::error::{Error, Result};
use crate::latent::{
    ensure_finite, CausalLatent, DisentangleHeads, Encoder, Pooling, TargetLatent,
};
use crate::losses::SoftLabel;
use crate::nn::{Linear, ParamStore, Session, TransformerStack};
use crate::scalar::Scalar;
use crate::text::{Batch, TokenSequence, PAD};

/// What the hate head reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HateInput {
    /// The causal latent only.
    #[default]
    Causal,
    /// The pooled encoder output, bypassing the disentanglement (ablation).
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub decoder_layers: usize,
    pub h_causal: usize,
    pub h_disc: usize,
    pub head_depth: usize,
    pub num_targets: usize,
    pub pooling: Pooling,
    pub hate_input: HateInput,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            max_len: 32,
            hidden_dim: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            decoder_layers: 1,
            h_causal: 64,
            h_disc: 32,
            head_depth: 1,
            num_targets: 9,
            pooling: Pooling::FirstToken,
            hate_input: HateInput::Causal,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("ff_dim", self.ff_dim),
            ("decoder_layers", self.decoder_layers),
            ("h_causal", self.h_causal),
            ("h_disc", self.h_disc),
            ("head_depth", self.head_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.num_targets < 2 {
            return Err(Error::Config("num_targets must be at least 2".into()));
        }
        Ok(())
    }
}

/// One-layer-or-more causal transformer that sees the recombined latent at
/// position 0 and the previous token at every later position.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoder {
    pub stack: TransformerStack,
    pub lm_head: Linear,
}

impl Decoder {
    /// Next-token probabilities, one row per position of `batch`
    /// (`batch*seq_len x vocab`). Teacher forcing: position `t` predicts
    /// token `t` from `zhat` and tokens `< t`.
    pub fn decode<T: Scalar>(&self, s: &mut Session<'_, T>, zhat: Var, batch: &Batch) -> Var {
        let (b, l, d) = (batch.batch, batch.seq_len, self.stack.dim);
        let shifted: Vec<usize> = (0..b * l)
            .map(|i| if i % l == 0 { PAD } else { batch.ids[i - 1] })
            .collect();
        let x = self.stack.embed(s, &shifted, l);
        let keep = Array2::from_shape_fn(
            (b * l, d),
            |(i, _)| if i % l == 0 { T::zero() } else { T::one() },
        );
        let keep = s.g.constant(keep);
        let x = s.g.mul(x, keep);
        let place = Array2::from_shape_fn((b * l, b), |(i, j)| {
            if i % l == 0 && i / l == j {
                T::one()
            } else {
                T::zero()
            }
        });
        let place = s.g.constant(place);
        let z = s.g.matmul(place, zhat);
        let x = s.g.add(x, z);
        let spec = AttentionSpec {
            batch: b,
            seq_len: l,
            heads: self.stack.heads,
            key_mask: Some(batch.mask.clone()),
            causal: true,
        };
        let h = self.stack.run(s, x, &spec);
        let logits = self.lm_head.forward(s, h);
        s.g.softmax_rows(logits)
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub pooled: Var,
    pub mu: Var,
    pub log_var: Var,
    pub sigma: Var,
    /// Sampled causal latent (equal to `mu` without noise).
    pub causal: Var,
    pub target: Var,
    pub target_probs: Var,
    pub hate_probs: Var,
    pub recon_probs: Option<Var>,
}

/// Layer layout; the tensors live in a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Architecture {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub heads: DisentangleHeads,
    pub decoder: Decoder,
    pub target_classifier: Linear,
    pub hate_head: Linear,
}

impl Architecture {
    pub fn build<T: Scalar>(
        config: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let c = config;
        let stack = TransformerStack::new(
            store,
            "encoder",
            c.vocab_size,
            c.max_len,
            c.hidden_dim,
            c.heads,
            c.ff_dim,
            c.layers,
            rng,
        );
        let encoder = Encoder {
            stack,
            pooling: c.pooling,
        };
        let heads = DisentangleHeads::new(
            store,
            c.hidden_dim,
            c.h_causal,
            c.h_disc,
            c.hidden_dim,
            c.head_depth,
            rng,
        );
        let stack = TransformerStack::new(
            store,
            "decoder",
            c.vocab_size,
            c.max_len,
            c.hidden_dim,
            c.heads,
            c.ff_dim,
            c.decoder_layers,
            rng,
        );
        let lm_head = Linear::new(store, "decoder.lm_head", c.hidden_dim, c.vocab_size, rng);
        let target_classifier =
            Linear::new(store, "target_classifier", c.h_disc, c.num_targets, rng);
        let hate_in = match c.hate_input {
            HateInput::Causal => c.h_causal,
            HateInput::Pooled => c.hidden_dim,
        };
        let hate_head = Linear::new(store, "hate_head", hate_in, 2, rng);
        Ok(Self {
            config: c.clone(),
            encoder,
            heads,
            decoder: Decoder { stack, lm_head },
            target_classifier,
            hate_head,
        })
    }

    /// Full forward pass. `noise` is the `batch x h_causal` reparameterization
    /// noise; `None` uses the mean. The decoder only runs when `reconstruct`.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        batch: &Batch,
        noise: Option<Mat<T>>,
        reconstruct: bool,
    ) -> ForwardVars {
        let (_, pooled) = self.encoder.encode_batch(s, batch);
        let (mu, log_var) = self.heads.causal_params(s, pooled);
        let (causal, sigma) = self.heads.sample_var(s, mu, log_var, noise);
        let target = self.heads.target_var(s, pooled);
        let target_probs = self.target_probs_var(s, target);
        let hate_in = match self.config.hate_input {
            HateInput::Causal => causal,
            HateInput::Pooled => pooled,
        };
        let hate_logits = self.hate_head.forward(s, hate_in);
        let hate_probs = s.g.softmax_rows(hate_logits);
        let recon_probs = reconstruct.then(|| {
            let zhat = self.heads.recombine_var(s, causal, target);
            self.decoder.decode(s, zhat, batch)
        });
        ForwardVars {
            pooled,
            mu,
            log_var,
            sigma,
            causal,
            target,
            target_probs,
            hate_probs,
            recon_probs,
        }
    }

    pub fn target_probs_var<T: Scalar>(&self, s: &mut Session<'_, T>, target: Var) -> Var {
        let logits = self.target_classifier.forward(s, target);
        s.g.softmax_rows(logits)
    }
}

/// Per-example inference outputs (noise fixed to zero).
#[derive(Clone, Debug, PartialEq)]
pub struct Inference<T> {
    pub mu: Vec<T>,
    pub target: Vec<T>,
    pub target_probs: Vec<T>,
    pub hate_probs: Vec<T>,
}

const INFER_CHUNK: usize = 128;

/// Architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct DisentangleModel<T> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Scalar> DisentangleModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = Architecture::build(&config, &mut params, &mut rng)?;
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Soft target label `softmax(f(X_w))`.
    pub fn classify_target(&self, t: &TargetLatent<T>) -> Result<SoftLabel<T>> {
        let want = self.arch.target_classifier.in_dim;
        if t.vector.len() != want {
            return Err(Error::Shape {
                what: "target latent",
                expected: want,
                got: t.vector.len(),
            });
        }
        let mut s = Session::eval(&self.params);
        let x = s.g.constant(row_matrix(&t.vector));
        let p = self.arch.target_probs_var(&mut s, x);
        SoftLabel::from_probs(s.g.value(p).as_slice().expect("row"))
    }

    /// `softmax(FC_h(sample))` over {non-hate, hate}.
    pub fn hate_logits(&self, c: &CausalLatent<T>) -> Result<Vec<T>> {
        if self.arch.config.hate_input != HateInput::Causal {
            return Err(Error::Config(
                "hate head reads the pooled embedding, not the causal latent".into(),
            ));
        }
        let want = self.arch.hate_head.in_dim;
        if c.sample.len() != want {
            return Err(Error::Shape {
                what: "causal latent",
                expected: want,
                got: c.sample.len(),
            });
        }
        let mut s = Session::eval(&self.params);
        let x = s.g.constant(row_matrix(&c.sample));
        let logits = self.arch.hate_head.forward(&mut s, x);
        let p = s.g.softmax_rows(logits);
        Ok(s.g.value(p).row(0).to_vec())
    }

    pub fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        seq.validate(self.arch.config.max_len, self.arch.config.vocab_size)
    }

    /// Batched inference in eval mode with zero noise.
    pub fn infer(&self, seqs: &[TokenSequence]) -> Result<Vec<Inference<T>>> {
        for q in seqs {
            self.check_sequence(q)?;
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFER_CHUNK) {
            let batch = Batch::from_sequences(chunk);
            let mut s = Session::eval(&self.params);
            let v = self.arch.forward(&mut s, &batch, None, false);
            let rows = |var: Var| {
                s.g.value(var)
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec())
                    .collect::<Vec<_>>()
            };
            let (mu, target, tp, hp) = (
                rows(v.mu),
                rows(v.target),
                rows(v.target_probs),
                rows(v.hate_probs),
            );
            for (i, (((mu, target), target_probs), hate_probs)) in
                mu.into_iter().zip(target).zip(tp).zip(hp).enumerate()
            {
                ensure_finite("causal mean", &mu)?;
                ensure_finite("hate probabilities", &hate_probs)
                    .map_err(|e| Error::Data(format!("example {}: {e}", out.len() + i)))?;
                out.push(Inference {
                    mu,
                    target,
                    target_probs,
                    hate_probs,
                });
            }
        }
        Ok(out)
    }

    /// Argmax of the hate probabilities; ties go to non-hate.
    pub fn predict_hate(&self, seqs: &[TokenSequence]) -> Result<Vec<u8>> {
        Ok(self
            .infer(seqs)?
            .iter()
            .map(|r| u8::from(r.hate_probs[1] > r.hate_probs[0]))
            .collect())
    }
}
