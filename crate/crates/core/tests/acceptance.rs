//! Acceptance suite. One line per criterion: `[PASS]`, `[FAIL]` or `[SKIP]`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use disentangle::autodiff::{Graph, Var};
use disentangle::data::adapters::{load_corpus, AdapterOptions};
use disentangle::data::synthetic::{generate_synthetic, SpuriousPlant, SyntheticSpec};
use disentangle::data::{ExampleRecord, Platform};
use disentangle::export::{distance_ratio, export_latents, LatentKind};
use disentangle::latent::{CausalLatent, TargetLatent};
use disentangle::losses::{
    compose_losses, conf_regularizer, conf_regularizer_var, confidence_weight, contrastive_loss,
    contrastive_loss_var, hate_loss, hate_loss_var, high_confidence_indices, kl_causal,
    kl_causal_var, recon_loss, recon_loss_var, select_high_confidence, target_loss,
    target_loss_var, LossCoefficients, LossParts, SoftLabel,
};
use disentangle::model::{HateInput, ModelConfig};
use disentangle::pipeline::{evaluate, fit, ExperimentConfig, NamedCorpus};
use disentangle::text::TokenSequence;
use disentangle::train::TrainConfig;
use disentangle::weak::lexicon::Lexicon;
use disentangle::weak::taxonomy::TargetTaxonomy;
use disentangle::weak::{corrupt_labels, lexicon_labels};
use disentangle::Model;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Relative error, or absolute error when the oracle value is (near) zero.
fn oracle_err(got: f64, want: f64) -> f64 {
    if want.abs() < 1e-9 {
        (got - want).abs()
    } else {
        rel_err(got, want)
    }
}

fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn random_label(rng: &mut ChaCha8Rng, c: usize) -> SoftLabel<f64> {
    // mix of sharp and flat labels so confidence weights span (0, 1]
    if rng.random_bool(0.3) {
        SoftLabel::one_hot(c, rng.random_range(0..c)).unwrap()
    } else {
        let mut p = random_probs(rng, c);
        let k = rng.random_range(0..c);
        p[k] += rng.random_range(0.0..4.0);
        SoftLabel::from_probs(&p).unwrap()
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

// Independent oracles: plain loops over the definitions.

fn oracle_confidence(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        let x = x.max(1e-8);
        h -= x * x.ln();
    }
    1.0 - h / (p.len() as f64).ln()
}

fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i].max(1e-8).ln() - q[i].max(1e-8).ln());
        }
    }
    s
}

fn oracle_contrastive(latents: &[Vec<f64>], labels: &[SoftLabel<f64>], beta: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..latents.len() {
        for j in 0..latents.len() {
            if i == j {
                continue;
            }
            let mut d2 = 0.0;
            for k in 0..latents[i].len() {
                d2 += (latents[i][k] - latents[j][k]).powi(2);
            }
            let same = labels[i].argmax() == labels[j].argmax();
            total += if same {
                d2
            } else {
                (beta - d2.sqrt()).max(0.0).powi(2)
            };
        }
    }
    total
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut note = |e: f64| {
        worst = worst.max(e);
        cases += 1;
    };
    for _ in 0..10 {
        let c = rng.random_range(2..10);
        let p = random_probs(&mut rng, c);
        note(oracle_err(
            confidence_weight(&p).unwrap(),
            oracle_confidence(&p),
        ));

        let n = rng.random_range(2..8);
        let dim = rng.random_range(2..6);
        let latents: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim, 1.5)).collect();
        let labels: Vec<SoftLabel<f64>> = (0..n).map(|_| random_label(&mut rng, 3)).collect();
        let eta = rng.random_range(0.0..0.6);
        let batch: Vec<_> = latents
            .iter()
            .cloned()
            .zip(labels.iter().cloned())
            .map(|(v, l)| (TargetLatent { vector: v }, l))
            .collect();
        let s = select_high_confidence(&batch, eta);
        let keep: Vec<usize> = (0..n)
            .filter(|&i| oracle_confidence(labels[i].probs()) >= eta)
            .collect();
        assert_eq!(
            keep,
            high_confidence_indices(&labels, eta),
            "selection oracle"
        );
        let kl: Vec<Vec<f64>> = keep.iter().map(|&i| latents[i].clone()).collect();
        let kls: Vec<SoftLabel<f64>> = keep.iter().map(|&i| labels[i].clone()).collect();
        let got = contrastive_loss(&s, 2.0);
        let want = oracle_contrastive(&kl, &kls, 2.0);
        note(oracle_err(got, want));

        let probs: Vec<Vec<f64>> = (0..s.len()).map(|_| random_probs(&mut rng, 3)).collect();
        let u = vec![1.0 / 3.0; 3];
        let want = if probs.is_empty() {
            0.0
        } else {
            probs.iter().map(|f| oracle_kl(&u, f)).sum::<f64>() / probs.len() as f64
        };
        let got = conf_regularizer(&s, &probs).unwrap();
        note(oracle_err(got, want));

        let want = if probs.is_empty() {
            0.0
        } else {
            kls.iter()
                .zip(&probs)
                .map(|(y, f)| oracle_confidence(y.probs()) * oracle_kl(y.probs(), f))
                .sum::<f64>()
                / probs.len() as f64
        };
        let got = target_loss(&s, &probs).unwrap();
        note(oracle_err(got, want));

        let len = rng.random_range(1..8);
        let v = rng.random_range(3..12);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
        let mask: Vec<bool> = (0..len).map(|i| i == 0 || rng.random_bool(0.8)).collect();
        let rows: Vec<Vec<f64>> = (0..len).map(|_| random_probs(&mut rng, v)).collect();
        let mut want = 0.0;
        for i in 0..len {
            if mask[i] {
                want -= rows[i][ids[i]].max(1e-8).ln();
            }
        }
        let got = recon_loss(&TokenSequence::new(ids, mask).unwrap(), &rows).unwrap();
        note(rel_err(got, want));

        let k = rng.random_range(1..6);
        let mu = random_vec(&mut rng, k, 2.0);
        let sigma: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let mut want = 0.0;
        for j in 0..k {
            want += 0.5 * (mu[j] * mu[j] + sigma[j] * sigma[j] - (sigma[j] * sigma[j]).ln() - 1.0);
        }
        let got = kl_causal(&CausalLatent {
            mu: mu.clone(),
            sigma: sigma.clone(),
            sample: mu.clone(),
        })
        .unwrap();
        note(oracle_err(got, want));
        // Monte-Carlo estimate of E_q[ln q - ln p] as a second, looser oracle
        let draws = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let mut v = 0.0;
            for j in 0..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                let x = mu[j] + sigma[j] * e;
                v += -0.5 * e * e - sigma[j].ln() + 0.5 * x * x;
            }
            sum += v;
            sq += v * v;
        }
        let mc = sum / draws as f64;
        let stderr = ((sq / draws as f64 - mc * mc) / draws as f64).sqrt();
        if (mc - want).abs() > 0.01 * want + 5.0 * stderr {
            return Verdict::Fail(format!(
                "kl_causal Monte-Carlo estimate {mc} vs closed form {want}"
            ));
        }

        let m = rng.random_range(1..10);
        let preds: Vec<Vec<f64>> = (0..m).map(|_| random_probs(&mut rng, 2)).collect();
        let ys: Vec<u8> = (0..m).map(|_| rng.random_range(0..2u8)).collect();
        let want = preds
            .iter()
            .zip(&ys)
            .map(|(p, &y)| -p[y as usize].max(1e-8).ln())
            .sum::<f64>()
            / m as f64;
        note(rel_err(hate_loss(&preds, &ys).unwrap(), want));

        let parts = LossParts {
            contrastive: rng.random_range(0.0..5.0),
            conf: rng.random_range(0.0..5.0),
            target: rng.random_range(0.0..5.0),
            recon: rng.random_range(0.0..50.0),
            kl_causal: rng.random_range(0.0..5.0),
            hate: rng.random_range(0.0..2.0),
        };
        let k = LossCoefficients::default();
        let b = compose_losses(parts, k).unwrap();
        let d = parts.target + 0.001 * parts.contrastive + 0.001 * parts.conf;
        let vae = parts.recon + 0.05 * d + 0.05 * parts.kl_causal;
        note(rel_err(b.vae, vae));
        note(rel_err(b.total, parts.hate + vae));
    }
    let elapsed = t0.elapsed();
    check(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("{cases} oracle comparisons over 10 instances per loss, worst relative error {worst:.2e}, {elapsed:.1?}"),
    )
}

/// Largest relative error between the tape gradient of `f` at `x` and
/// central differences with step 1e-4.
fn fd_error(x: &Array2<f64>, f: &dyn Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v);
    let grads = g.backward(out);
    let analytic = grads
        .get(v)
        .cloned()
        .unwrap_or_else(|| Array2::zeros(x.dim()));
    let eval = |y: &Array2<f64>| {
        let mut g = Graph::new();
        let v = g.constant(y.clone());
        let out = f(&mut g, v);
        g.scalar(out)
    };
    let h = 1e-4;
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut up = x.clone();
        up[[r, c]] += h;
        let mut down = x.clone();
        down[[r, c]] -= h;
        let numeric = (eval(&up) - eval(&down)) / (2.0 * h);
        let a = analytic[[r, c]];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), data).unwrap()
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };
    for _ in 0..10 {
        // contrastive: keep every pairwise distance away from 0 and from beta
        let n = 5;
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let x = loop {
            let x = mat(n, 3, random_vec(&mut rng, n * 3, 1.5));
            let ok = (0..n).all(|i| {
                (0..n).all(|j| {
                    let d = (0..3)
                        .map(|k| (x[[i, k]] - x[[j, k]]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    i == j || (d > 0.05 && (d - 2.0).abs() > 0.05)
                })
            });
            if ok {
                break x;
            }
        };
        record(
            "contrastive",
            fd_error(&x, &|g, v| contrastive_loss_var(g, v, &classes, 2.0)),
        );

        let probs: Vec<f64> = (0..4).flat_map(|_| random_probs(&mut rng, 5)).collect();
        let p = mat(4, 5, probs);
        record(
            "conf_regularizer",
            fd_error(&p, &|g, v| conf_regularizer_var(g, v)),
        );
        let labels: Vec<SoftLabel<f64>> = (0..4).map(|_| random_label(&mut rng, 5)).collect();
        record(
            "target",
            fd_error(&p, &|g, v| target_loss_var(g, v, &labels)),
        );

        let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let mask = vec![true, true, false, true];
        record(
            "recon",
            fd_error(&p, &|g, v| recon_loss_var(g, v, &ids, &mask, 2).unwrap()),
        );

        let mu = mat(3, 4, random_vec(&mut rng, 12, 1.5));
        let lv = mat(3, 4, random_vec(&mut rng, 12, 1.0));
        let lv_c = lv.clone();
        record(
            "kl_causal (mu)",
            fd_error(&mu, &|g, v| {
                let l = g.constant(lv_c.clone());
                kl_causal_var(g, v, l)
            }),
        );
        let mu_c = mu.clone();
        record(
            "kl_causal (log var)",
            fd_error(&lv, &|g, v| {
                let m = g.constant(mu_c.clone());
                kl_causal_var(g, m, v)
            }),
        );

        let hp = mat(
            4,
            2,
            (0..4).flat_map(|_| random_probs(&mut rng, 2)).collect(),
        );
        let ys: Vec<u8> = (0..4).map(|_| rng.random_range(0..2u8)).collect();
        record(
            "hate",
            fd_error(&hp, &|g, v| hate_loss_var(g, v, &ys).unwrap()),
        );
    }
    let elapsed = t0.elapsed();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        max <= 1e-3 && elapsed < Duration::from_secs(60),
        format!("worst relative error per loss: {detail}; {elapsed:.1?}"),
    )
}

fn synthetic_lexicon(spec: &SyntheticSpec, platform: usize) -> Lexicon {
    let tax = TargetTaxonomy::default();
    Lexicon::from_pairs(spec.lexicon_entries(platform, &tax), &tax).unwrap()
}

fn criterion_3() -> Verdict {
    let spec = SyntheticSpec::standard(1, 3000, 3);
    let corpus = &generate_synthetic(&spec).unwrap()[0];
    let labels = lexicon_labels(corpus, &synthetic_lexicon(&spec, 0));
    let cfg = TrainConfig {
        max_steps: 500,
        ..TrainConfig::default()
    };
    let k = cfg.coefficients();
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut first_bad = None;
    let res = fit(
        corpus,
        &labels,
        &ExperimentConfig {
            train: cfg.clone(),
            ..Default::default()
        },
        |r| {
            let b = r.breakdown;
            let vae = b.recon
                + 0.05 * (b.target + 0.001 * b.contrastive + 0.001 * b.conf)
                + 0.05 * b.kl_causal;
            let e = rel_err(vae, b.vae).max(rel_err(b.hate + vae, b.total));
            if e > 1e-6 && first_bad.is_none() {
                first_bad = Some(r.step);
            }
            worst = worst.max(e);
            checked += 1;
        },
    );
    if let Err(e) = res {
        return Verdict::Fail(format!("training aborted: {e}"));
    }
    assert_eq!(
        (k.alpha_t, k.alpha_c, k.delta_cont, k.delta_conf),
        (0.05, 0.05, 0.001, 0.001)
    );
    check(
        checked == 500 && first_bad.is_none(),
        format!("{checked} steps audited, worst relative error {worst:.2e}, first violation {first_bad:?}"),
    )
}

struct SyntheticRuns {
    clean_b: f64,
    noisy_b: f64,
    spurious_full_b: f64,
    spurious_ablation_b: f64,
    model: Model,
    vocab: disentangle::text::Vocab,
    corpora: Vec<NamedCorpus>,
    elapsed: Duration,
}

fn run_synthetic() -> Result<SyntheticRuns, String> {
    let t0 = Instant::now();
    let spec = SyntheticSpec::standard(2, 10_000, 42);
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut sp_spec = spec.clone();
    sp_spec.spurious = Some(SpuriousPlant {
        platform: 0,
        fraction: 0.3,
        hate_class: 0,
        clean_class: 1,
    });
    let sp_data = generate_synthetic(&sp_spec).map_err(|e| e.to_string())?;
    let lex = synthetic_lexicon(&spec, 0);
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig {
        max_steps: 2000,
        ..TrainConfig::default()
    };
    let ablation_model = ModelConfig {
        hate_input: HateInput::Pooled,
        ..model_cfg.clone()
    };
    let ablation_train = TrainConfig {
        alpha_t: 0.0,
        delta_cont: 0.0,
        delta_conf: 0.0,
        ..train_cfg.clone()
    };

    let run = |a: &[ExampleRecord],
               labels: &[SoftLabel<f64>],
               m: &ModelConfig,
               t: &TrainConfig,
               b: &[ExampleRecord]| {
        let f = fit(
            a,
            labels,
            &ExperimentConfig {
                model: m.clone(),
                train: t.clone(),
                ..Default::default()
            },
            |_| {},
        )
        .map_err(|e| e.to_string())?;
        let score = evaluate(&f.checkpoint.model, &f.checkpoint.vocab, b)
            .map_err(|e| e.to_string())?
            .macro_f1;
        Ok::<_, String>((score, f))
    };
    let clean_labels = lexicon_labels(&data[0], &lex);
    let (clean_b, clean) = run(&data[0], &clean_labels, &model_cfg, &train_cfg, &data[1])?;
    let (noisy_labels, _) = corrupt_labels(&clean_labels, 0.2, 7).map_err(|e| e.to_string())?;
    let (noisy_b, _) = run(&data[0], &noisy_labels, &model_cfg, &train_cfg, &data[1])?;
    let sp_labels = lexicon_labels(&sp_data[0], &lex);
    let (spurious_full_b, _) = run(&sp_data[0], &sp_labels, &model_cfg, &train_cfg, &sp_data[1])?;
    let (spurious_ablation_b, _) = run(
        &sp_data[0],
        &sp_labels,
        &ablation_model,
        &ablation_train,
        &sp_data[1],
    )?;
    let corpora = vec![
        NamedCorpus {
            name: "a".into(),
            records: data[0].clone(),
        },
        NamedCorpus {
            name: "b".into(),
            records: data[1].clone(),
        },
    ];
    Ok(SyntheticRuns {
        clean_b,
        noisy_b,
        spurious_full_b,
        spurious_ablation_b,
        model: clean.checkpoint.model,
        vocab: clean.checkpoint.vocab,
        corpora,
        elapsed: t0.elapsed(),
    })
}

fn criterion_4(r: &SyntheticRuns) -> Verdict {
    let gap = r.spurious_full_b - r.spurious_ablation_b;
    check(
        r.clean_b >= 0.90 && gap >= 0.05 && r.elapsed < Duration::from_secs(15 * 60),
        format!(
            "A->B macro-F1 {:.4}; with 30% planted spurious tokens: full {:.4}, ablation {:.4}, gap {gap:.4}; 4 runs in {:.0?}",
            r.clean_b, r.spurious_full_b, r.spurious_ablation_b, r.elapsed
        ),
    )
}

fn criterion_5(r: &SyntheticRuns) -> Verdict {
    let rows = match export_latents(&r.model, &r.vocab, &r.corpora, 1000, 5) {
        Ok(rows) => rows,
        Err(e) => return Verdict::Fail(format!("export failed: {e}")),
    };
    let (Ok(causal), Ok(target)) = (
        distance_ratio(&rows, LatentKind::Causal, "a", "b"),
        distance_ratio(&rows, LatentKind::Target, "a", "b"),
    ) else {
        return Verdict::Fail("distance ratio undefined".into());
    };
    check(
        causal <= 2.0 && target >= 1.5 * causal,
        format!(
            "cross/within distance ratio: causal {causal:.3}, target {target:.3} ({:.2}x causal)",
            target / causal
        ),
    )
}

fn criterion_6(r: &SyntheticRuns) -> Verdict {
    let drop = r.clean_b - r.noisy_b;
    check(
        drop <= 0.05,
        format!(
            "A->B macro-F1 clean {:.4}, 20% label noise {:.4}, degradation {drop:.4}",
            r.clean_b, r.noisy_b
        ),
    )
}

fn criterion_7() -> Verdict {
    let Some(dir) = std::env::var_os("DISENTANGLE_DATA_DIR").map(PathBuf::from) else {
        return Verdict::Skip("DISENTANGLE_DATA_DIR not set; public corpora absent".into());
    };
    let rows: [(Platform, &str, usize, f64); 4] = [
        (Platform::Gab, "hatexplain.json", 11_093, 75.5),
        (Platform::Reddit, "reddit.csv", 39_811, 38.6),
        (Platform::X, "davidson.csv", 24_802, 36.7),
        (Platform::YouTube, "youtube.csv", 1_026, 62.5),
    ];
    let mut found = Vec::new();
    let mut bad = Vec::new();
    for (platform, file, n, pct) in rows {
        let path: &Path = &dir.join(file);
        if !path.exists() {
            continue;
        }
        match load_corpus(path, &platform, &AdapterOptions::default()) {
            Ok(c) => {
                let got = (
                    c.summary.n_posts,
                    (c.summary.hate_pct * 10.0).round() / 10.0,
                );
                if got != (n, pct) {
                    bad.push(format!(
                        "{platform}: {} / {:.1}% (expected {n} / {pct}%)",
                        got.0, got.1
                    ));
                }
                found.push(platform.to_string());
            }
            Err(e) => bad.push(format!("{platform}: {e}")),
        }
    }
    if found.is_empty() && bad.is_empty() {
        return Verdict::Skip(format!("no corpus files in {}", dir.display()));
    }
    check(
        bad.is_empty(),
        format!(
            "checked {}; mismatches: {}",
            found.join(", "),
            if bad.is_empty() {
                "none".into()
            } else {
                bad.join("; ")
            }
        ),
    )
}

/// Failed criteria are reported, not turned into a failing exit status: the
/// verdict lines are the result. A panic in the harness still fails the run.
fn main() {
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    let mut report = |n: usize, name: &str, v: Verdict| {
        let (tag, detail) = match v {
            Verdict::Pass(d) => {
                passed += 1;
                ("PASS", d)
            }
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => {
                skipped += 1;
                ("SKIP", d)
            }
        };
        println!("[{tag}] {n} {name}: {detail}");
    };
    report(1, "loss oracles", criterion_1());
    report(2, "gradient check", criterion_2());
    report(3, "composition audit", criterion_3());
    match run_synthetic() {
        Ok(r) => {
            report(
                4,
                "synthetic cross-platform generalization",
                criterion_4(&r),
            );
            report(5, "latent invariance proxy", criterion_5(&r));
            report(6, "weak-label noise robustness", criterion_6(&r));
        }
        Err(e) => {
            for (n, name) in [
                (4, "synthetic cross-platform generalization"),
                (5, "latent invariance proxy"),
                (6, "weak-label noise robustness"),
            ] {
                report(
                    n,
                    name,
                    Verdict::Fail(format!("synthetic runs failed: {e}")),
                );
            }
        }
    }
    report(7, "corpus loaders", criterion_7());
    report(
        8,
        "full-scale benchmark numbers",
        Verdict::Skip(
            "not gated: needs pretrained backbones, GPU training and the licensed corpora".into(),
        ),
    );
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
}
