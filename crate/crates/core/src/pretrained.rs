//! Adapter for an externally trained encoder/decoder pair.
//!
//! A backbone directory holds `backbone.json` (architecture sizes),
//! `vocab.txt` (shared by encoder and decoder) and `weights.json`, a list of
//! named tensors using this crate's parameter names (`encoder.*`,
//! `decoder.*`). Converting a third-party checkpoint into this layout is left
//! to an external script. The latent heads and classifiers always start from
//! a seeded random initialization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DisentangleModel, ModelConfig};
use crate::nn::NamedTensor;
use crate::text::Vocab;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub max_len: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub decoder_layers: usize,
}

impl BackboneConfig {
    pub fn of(m: &ModelConfig) -> Self {
        Self {
            max_len: m.max_len,
            hidden_dim: m.hidden_dim,
            heads: m.heads,
            layers: m.layers,
            ff_dim: m.ff_dim,
            decoder_layers: m.decoder_layers,
        }
    }
}

fn is_backbone(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("decoder.")
}

/// Builds a model whose encoder and decoder come from `dir`; the other
/// fields of `heads` (latent sizes, pooling, number of targets) are kept.
pub fn load_backbone(
    dir: &Path,
    heads: &ModelConfig,
    seed: u64,
) -> Result<(DisentangleModel<f32>, Vocab)> {
    let err = |msg: String| Error::Checkpoint {
        path: dir.to_path_buf(),
        msg,
    };
    let bb: BackboneConfig = serde_json::from_slice(
        &fs::read(dir.join("backbone.json")).map_err(|e| err(format!("backbone.json: {e}")))?,
    )
    .map_err(|e| err(format!("backbone.json: {e}")))?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let tensors: Vec<NamedTensor> = serde_json::from_slice(
        &fs::read(dir.join("weights.json")).map_err(|e| err(format!("weights.json: {e}")))?,
    )
    .map_err(|e| err(format!("weights.json: {e}")))?;
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        max_len: bb.max_len,
        hidden_dim: bb.hidden_dim,
        heads: bb.heads,
        layers: bb.layers,
        ff_dim: bb.ff_dim,
        decoder_layers: bb.decoder_layers,
        ..heads.clone()
    };
    let mut model = DisentangleModel::<f32>::new(cfg, seed)?;
    let mut loaded = 0;
    for t in &tensors {
        if !is_backbone(&t.name) {
            return Err(err(format!(
                "tensor {} is not part of the encoder or decoder",
                t.name
            )));
        }
        let id = model
            .params
            .find(&t.name)
            .ok_or_else(|| err(format!("unknown tensor {}", t.name)))?;
        let m = t
            .to_mat::<f32>()
            .ok_or_else(|| err(format!("tensor {} has inconsistent data length", t.name)))?;
        let want = model.params.get(id).dim();
        if m.dim() != want {
            return Err(err(format!(
                "tensor {} has shape {:?}, expected {want:?}",
                t.name,
                m.dim()
            )));
        }
        *model.params.get_mut(id) = m;
        loaded += 1;
    }
    let expected = model
        .params
        .iter()
        .filter(|(_, p)| is_backbone(&p.name))
        .count();
    if loaded != expected {
        return Err(err(format!(
            "weights.json holds {loaded} backbone tensors, expected {expected}"
        )));
    }
    Ok((model, vocab))
}

/// Writes the encoder and decoder of `model` in the backbone layout.
pub fn save_backbone(model: &DisentangleModel<f32>, vocab: &Vocab, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors: Vec<NamedTensor> = model
        .params
        .to_named()
        .into_iter()
        .filter(|t| is_backbone(&t.name))
        .collect();
    fs::write(
        dir.join("backbone.json"),
        serde_json::to_vec_pretty(&BackboneConfig::of(model.config()))?,
    )?;
    fs::write(dir.join("weights.json"), serde_json::to_vec(&tensors)?)?;
    vocab.save(&dir.join("vocab.txt"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            max_len: 6,
            hidden_dim: 8,
            heads: 2,
            layers: 1,
            ff_dim: 8,
            h_causal: 4,
            h_disc: 3,
            num_targets: 3,
            ..Default::default()
        }
    }

    #[test]
    fn backbone_round_trip_keeps_weights_and_reseeds_heads() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["a", "b", "c"]);
        let src = DisentangleModel::<f32>::new(small(vocab.len()), 1).unwrap();
        save_backbone(&src, &vocab, dir.path()).unwrap();
        let (m, v) = load_backbone(dir.path(), &small(0), 2).unwrap();
        assert_eq!(v, vocab);
        for (id, p) in m.params.iter() {
            let other = src.params.get(src.params.find(&p.name).unwrap());
            if is_backbone(&p.name) {
                assert_eq!(m.params.get(id), other, "{}", p.name);
            }
        }
        let fresh = DisentangleModel::<f32>::new(small(vocab.len()), 2).unwrap();
        let w = m.arch.hate_head.weight;
        assert_eq!(m.params.get(w), fresh.params.get(w));
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["a", "b"]);
        let src = DisentangleModel::<f32>::new(small(vocab.len()), 1).unwrap();
        save_backbone(&src, &vocab, dir.path()).unwrap();
        // a vocabulary that no longer matches the embedding rows
        Vocab::from_tokens(["a", "b", "c"])
            .save(&dir.path().join("vocab.txt"))
            .unwrap();
        let e = load_backbone(dir.path(), &small(0), 0)
            .unwrap_err()
            .to_string();
        assert!(e.contains("shape"), "{e}");
    }
}
