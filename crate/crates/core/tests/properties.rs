use proptest::collection::vec;
use proptest::prelude::*;

use disentangle::data::{split_indices, ExampleRecord, Platform};
use disentangle::eval::{CellStatus, EvalReport, GridCell};
use disentangle::latent::{CausalLatent, TargetLatent};
use disentangle::losses::{
    compose_losses, conf_regularizer, confidence_weight, contrastive_loss, hate_loss, kl_causal,
    recon_loss, select_high_confidence, target_loss, LossCoefficients, LossParts, SoftLabel,
};
use disentangle::model::ModelConfig;
use disentangle::text::{TokenSequence, Vocab};
use disentangle::weak::corrupt_labels;
use disentangle::Model;

fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.0f64..1.0, c).prop_map(|w| {
        let s: f64 = w.iter().sum();
        if s == 0.0 {
            vec![1.0 / w.len() as f64; w.len()]
        } else {
            w.into_iter().map(|x| x / s).collect()
        }
    })
}

fn member(
    c: usize,
    dim: usize,
) -> impl Strategy<Value = (TargetLatent<f64>, SoftLabel<f64>, Vec<f64>)> {
    (vec(-3.0f64..3.0, dim), probs(c), probs(c)).prop_map(|(v, y, f)| {
        (
            TargetLatent { vector: v },
            SoftLabel::from_probs(&y).unwrap(),
            f,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn selection_losses_are_nonnegative(members in vec(member(4, 3), 0..6), eta in 0.0f64..1.0, beta in 0.1f64..4.0) {
        let batch: Vec<_> = members.iter().map(|(t, y, _)| (t.clone(), y.clone())).collect();
        let s = select_high_confidence(&batch, eta);
        let f: Vec<Vec<f64>> = members.iter().filter(|(_, y, _)| y.confidence() >= eta).map(|(_, _, f)| f.clone()).collect();
        prop_assert!(contrastive_loss(&s, beta) >= 0.0);
        prop_assert!(conf_regularizer(&s, &f).unwrap() >= -1e-12);
        prop_assert!(target_loss(&s, &f).unwrap() >= -1e-12);
    }

    #[test]
    fn sequence_losses_are_nonnegative(rows in vec(probs(5), 1..6), ids in vec(0usize..5, 6), mask in vec(any::<bool>(), 6),
                                       mu in vec(-5.0f64..5.0, 3), sigma in vec(0.01f64..5.0, 3), hate in vec(0u8..2, 6)) {
        let n = rows.len();
        let seq = TokenSequence::new(ids[..n].to_vec(), mask[..n].to_vec()).unwrap();
        prop_assert!(recon_loss(&seq, &rows).unwrap() >= 0.0);
        let kl = kl_causal(&CausalLatent { mu: mu.clone(), sigma, sample: mu }).unwrap();
        prop_assert!(kl >= -1e-12);
        let two: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] / (r[0] + r[1]).max(1e-12), r[1] / (r[0] + r[1]).max(1e-12)]).collect();
        prop_assert!(hate_loss(&two, &hate[..n]).unwrap() >= 0.0);
    }

    #[test]
    fn confidence_lies_in_unit_interval(p in probs(7)) {
        let w = confidence_weight(&p).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&w));
    }
}

proptest! {
    #[test]
    fn composition_recomputes_from_parts(p in vec(0.0f64..100.0, 6), k in vec(0.0f64..1.0, 4)) {
        let parts = LossParts { contrastive: p[0], conf: p[1], target: p[2], recon: p[3], kl_causal: p[4], hate: p[5] };
        let k = LossCoefficients { alpha_t: k[0], alpha_c: k[1], delta_cont: k[2], delta_conf: k[3] };
        let b = compose_losses(parts, k).unwrap();
        let vae = p[3] + k.alpha_t * (p[2] + k.delta_cont * p[0] + k.delta_conf * p[1]) + k.alpha_c * p[4];
        prop_assert!((b.vae - vae).abs() <= 1e-9 * vae.max(1.0));
        prop_assert!((b.total - (p[5] + vae)).abs() <= 1e-9 * b.total.max(1.0));
        prop_assert!(b.audit(k, 1e-6).is_ok());
    }

    #[test]
    fn split_partitions_and_stratifies(labels in vec(0u8..2, 4..200), frac in 0.05f64..0.5, seed in any::<u64>()) {
        let recs: Vec<ExampleRecord> = labels.iter().enumerate()
            .map(|(i, &h)| ExampleRecord { id: i.to_string(), text: "t".into(), hate: h, gold_target: None, platform: Platform::X })
            .collect();
        let ones = labels.iter().filter(|&&h| h == 1).count();
        prop_assume!(ones != 1 && ones + 1 != labels.len());
        let (tr, va) = split_indices(&recs, frac, seed).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..recs.len()).collect::<Vec<_>>());
        for h in 0..2u8 {
            let n = labels.iter().filter(|&&x| x == h).count();
            if n >= 2 {
                let k = va.iter().filter(|&&i| labels[i] == h).count();
                prop_assert_eq!(k, ((n as f64 * frac).round() as usize).clamp(1, n - 1));
            }
        }
    }

    #[test]
    fn zero_noise_leaves_labels_alone(ps in vec(probs(4), 1..30), seed in any::<u64>()) {
        let labels: Vec<SoftLabel<f64>> = ps.iter().map(|p| SoftLabel::from_probs(p).unwrap()).collect();
        let (out, flipped) = corrupt_labels(&labels, 0.0, seed).unwrap();
        prop_assert_eq!(out, labels);
        prop_assert!(flipped.iter().all(|f| !f));
    }

    #[test]
    fn tokenization_respects_max_len(words in vec("[a-z]{1,5}", 0..40), max_len in 1usize..16) {
        let text = words.join(" ");
        let vocab = Vocab::build([text.as_str()], 1, None);
        let seq = vocab.tokenize(&text, max_len);
        prop_assert!(seq.len() <= max_len);
        prop_assert!(seq.validate(max_len, vocab.len()).is_ok());
    }

    #[test]
    fn report_tsv_round_trips(cells in vec((0.0f64..1.0, 0usize..100_000, any::<bool>()), 1..8)) {
        let report = EvalReport {
            cells: cells.iter().enumerate().map(|(i, &(f, n, ok))| GridCell {
                source: format!("s{}", i % 2),
                target: format!("t{i}"),
                macro_f1: ok.then_some((f * 1e6).round() / 1e6),
                n_examples: n,
                status: if ok { CellStatus::Ok } else { CellStatus::Failed("boom".into()) },
            }).collect(),
            config_hash: "h".into(),
        };
        prop_assert_eq!(EvalReport::from_tsv(&report.to_tsv()).unwrap(), report);
    }
}

fn small_model() -> Model {
    let cfg = ModelConfig {
        vocab_size: 30,
        max_len: 8,
        hidden_dim: 16,
        heads: 2,
        layers: 1,
        ff_dim: 16,
        h_causal: 4,
        h_disc: 4,
        ..Default::default()
    };
    Model::new(cfg, 3).unwrap()
}

fn seqs() -> impl Strategy<Value = Vec<TokenSequence>> {
    vec(vec(3usize..30, 1..8), 1..6).prop_map(|v| {
        v.into_iter()
            .map(|mut ids| {
                ids.insert(0, 1);
                ids.truncate(8);
                TokenSequence::unmasked(ids)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hate_predictions_ignore_the_target_branch(batch in seqs(), noise in vec(-5.0f32..5.0, 8)) {
        let m = small_model();
        let before = m.infer(&batch).unwrap();
        let mut p = m.clone();
        for name in ["fc_zhat", "target_classifier"] {
            let ids: Vec<_> = p.params.iter().filter(|(_, q)| q.name.starts_with(name)).map(|(id, _)| id).collect();
            for (k, id) in ids.into_iter().enumerate() {
                p.params.get_mut(id).mapv_inplace(|x| x + noise[k % noise.len()]);
            }
        }
        let after = p.infer(&batch).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert_eq!(&a.hate_probs, &b.hate_probs);
        }
    }

    #[test]
    fn batched_inference_matches_single_examples(batch in seqs()) {
        let m = small_model();
        let together = m.infer(&batch).unwrap();
        for (s, t) in batch.iter().zip(&together) {
            let alone = &m.infer(std::slice::from_ref(s)).unwrap()[0];
            for (x, y) in alone.hate_probs.iter().chain(&alone.mu).zip(t.hate_probs.iter().chain(&t.mu)) {
                prop_assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }
}
