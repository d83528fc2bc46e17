//! Frozen reference outputs of a seeded model. Regenerate with
//! `UPDATE_GOLDEN=1 cargo test -p disentangle-core --test golden`.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use disentangle::data::synthetic::{generate_synthetic, SyntheticSpec};
use disentangle::model::ModelConfig;
use disentangle::pipeline::{fit, ExperimentConfig};
use disentangle::text::TokenSequence;
use disentangle::train::TrainConfig;
use disentangle::weak::gold_labels;
use disentangle::weak::taxonomy::TargetTaxonomy;
use disentangle::Model;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Golden {
    pooled: Vec<Vec<f32>>,
    target: Vec<Vec<f32>>,
    causal_sample: Vec<Vec<f32>>,
    recombined: Vec<Vec<f32>>,
    target_probs: Vec<Vec<f32>>,
    hate_probs: Vec<Vec<f32>>,
}

fn small() -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        max_len: 8,
        hidden_dim: 16,
        heads: 2,
        layers: 1,
        ff_dim: 32,
        h_causal: 6,
        h_disc: 4,
        ..Default::default()
    }
}

fn inputs() -> Vec<TokenSequence> {
    vec![
        TokenSequence::unmasked(vec![1, 5, 9, 13]),
        TokenSequence::new(
            vec![1, 30, 2, 7, 0, 0],
            vec![true, true, true, true, false, false],
        )
        .unwrap(),
        TokenSequence::unmasked(vec![1, 39, 38, 37, 36, 35, 34, 33]),
    ]
}

fn snapshot(m: &Model, seqs: &[TokenSequence]) -> Golden {
    let mut g = Golden {
        pooled: vec![],
        target: vec![],
        causal_sample: vec![],
        recombined: vec![],
        target_probs: vec![],
        hate_probs: vec![],
    };
    let h = m.config().h_causal;
    let noise: Vec<f32> = (0..h).map(|i| (i as f32 - 2.5) * 0.3).collect();
    for s in seqs {
        let emb = m.arch.encoder.encode(&m.params, s).unwrap();
        let c = m
            .arch
            .heads
            .reparameterize(&m.params, &emb, &noise)
            .unwrap();
        let t = m.arch.heads.target_head(&m.params, &emb).unwrap();
        g.recombined
            .push(m.arch.heads.recombine(&m.params, &c, &t).unwrap().vector);
        g.target_probs
            .push(m.classify_target(&t).unwrap().probs().to_vec());
        g.hate_probs.push(m.hate_logits(&c).unwrap());
        g.pooled.push(emb.pooled);
        g.causal_sample.push(c.sample);
        g.target.push(t.vector);
    }
    g
}

fn compare(name: &str, got: &Golden) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"));
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, serde_json::to_string_pretty(got).unwrap()).unwrap();
        return;
    }
    let want: Golden = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let fields = |g: &Golden| {
        [
            g.pooled.clone(),
            g.target.clone(),
            g.causal_sample.clone(),
            g.recombined.clone(),
            g.target_probs.clone(),
            g.hate_probs.clone(),
        ]
    };
    for (k, (a, b)) in fields(got).iter().zip(fields(&want).iter()).enumerate() {
        assert_eq!(a.len(), b.len(), "{name} field {k}");
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!(
                (x - y).abs() <= 1e-5 + 1e-4 * y.abs(),
                "{name} field {k}: {x} vs golden {y}"
            );
        }
    }
}

#[test]
fn initialized_model_matches_golden() {
    let m = Model::new(small(), 0).unwrap();
    compare("init_seed0", &snapshot(&m, &inputs()));
}

#[test]
fn briefly_trained_model_matches_golden() {
    let spec = SyntheticSpec::standard(1, 200, 9);
    let corpus = &generate_synthetic(&spec).unwrap()[0];
    let labels = gold_labels(corpus, &TargetTaxonomy::default()).unwrap();
    let cfg = TrainConfig {
        max_steps: 20,
        batch_size: 16,
        lr: 1e-3,
        ..Default::default()
    };
    let f = fit(
        corpus,
        &labels,
        &ExperimentConfig {
            model: ModelConfig {
                vocab_size: 0,
                ..small()
            },
            train: cfg,
            ..Default::default()
        },
        |_| {},
    )
    .unwrap();
    let vocab = &f.checkpoint.vocab;
    let seqs: Vec<TokenSequence> = corpus[..3]
        .iter()
        .map(|r| vocab.tokenize(&r.text, 8))
        .collect();
    compare("trained_20_steps", &snapshot(&f.checkpoint.model, &seqs));
}
