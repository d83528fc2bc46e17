use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use disentangle::data::adapters::{load_corpus, AdapterOptions};
use disentangle::data::synthetic::{generate_synthetic, SpuriousPlant, SyntheticSpec};
use disentangle::data::{read_jsonl, write_jsonl, ExampleRecord, Platform};
use disentangle::eval::EvalReport;
use disentangle::export::{
    distance_ratio, export_latents, read_latents, write_latents, LatentKind,
};
use disentangle::losses::SoftLabel;
use disentangle::pipeline::{cross_platform_grid, fit, ExperimentConfig, NamedCorpus, WeakConfig};
use disentangle::train::Checkpoint;
use disentangle::weak::taxonomy::TargetTaxonomy;
use disentangle::weak::WeakLabelKind;

use crate::config::{FileConfig, Overrides};
use crate::failure::{Failure, Outcome, PARTIAL_GRID};
use crate::manifest::RunManifest;
use crate::plot::{embed, latent_points, report_svg, scatter_svg, TsneParams};
use crate::{Kind, LabelSource};

/// One line of `labels.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct LabelLine {
    pub id: String,
    pub probs: Vec<f64>,
}

#[derive(Serialize)]
struct PrepareSummary<'a> {
    platform: String,
    #[serde(flatten)]
    summary: &'a disentangle::data::CorpusSummary,
    rejected: usize,
}

pub fn prepare(platform: &str, input: &Path, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("prepare");
    let platform: Platform = platform
        .parse()
        .map_err(|e: disentangle::Error| Failure::config(e))?;
    m.input(input)?;
    let loaded = load_corpus(input, &platform, &AdapterOptions::default())?;
    for r in &loaded.rejected {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    if loaded.records.is_empty() {
        return Err(Failure::data(format!(
            "{} yielded no usable records",
            input.display()
        )));
    }
    fs::create_dir_all(out)?;
    write_jsonl(&out.join("corpus.jsonl"), &loaded.records)?;
    let summary = PrepareSummary {
        platform: platform.to_string(),
        summary: &loaded.summary,
        rejected: loaded.rejected.len(),
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;
    println!(
        "{}: {} posts, {} hateful ({:.1}%), targets: {}, rejected: {}",
        summary.platform,
        loaded.summary.n_posts,
        loaded.summary.n_hateful,
        loaded.summary.hate_pct,
        if loaded.summary.has_targets {
            "yes"
        } else {
            "no"
        },
        summary.rejected
    );
    m.outputs = vec![out.join("corpus.jsonl"), out.join("summary.json")];
    m.finish(out)
}

pub fn synth(
    platforms: usize,
    n: usize,
    seed: u64,
    spurious: Option<f64>,
    out: &Path,
) -> Outcome<()> {
    let mut m = RunManifest::start("synth");
    m.seed = Some(seed);
    let mut spec = SyntheticSpec::standard(platforms, n, seed);
    if let Some(fraction) = spurious {
        spec.spurious = Some(SpuriousPlant {
            platform: 0,
            fraction,
            hate_class: 0,
            clean_class: 1,
        });
    }
    spec.validate()?;
    m.config(&spec);
    let corpora = generate_synthetic(&spec)?;
    fs::create_dir_all(out)?;
    let tax = TargetTaxonomy::default();
    for (p, records) in corpora.iter().enumerate() {
        let name = &spec.platform_names[p];
        let path = out.join(format!("{name}.jsonl"));
        write_jsonl(&path, records)?;
        let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (word, class) in spec.lexicon_entries(p, &tax) {
            by_class
                .entry(tax.index(&class).expect("class from taxonomy"))
                .or_default()
                .push(word);
        }
        let body: String = by_class
            .iter()
            .map(|(c, words)| format!("{}: {}\n", tax.classes()[*c], words.join(", ")))
            .collect();
        let lex = out.join(format!("lexicon-{name}.txt"));
        fs::write(&lex, body)?;
        println!("{}: {} posts", path.display(), records.len());
        m.outputs.extend([path, lex]);
    }
    fs::write(out.join("spec.json"), serde_json::to_vec_pretty(&spec)?)?;
    m.outputs.push(out.join("spec.json"));
    m.finish(out)
}

fn read_corpus(path: &Path) -> Outcome<Vec<ExampleRecord>> {
    let loaded = read_jsonl(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if !loaded.rejected.is_empty() {
        warn!(
            "{}: skipped {} malformed lines",
            path.display(),
            loaded.rejected.len()
        );
    }
    Ok(loaded.records)
}

fn taxonomy_for(cfg: &ExperimentConfig) -> Outcome<TargetTaxonomy> {
    let tax = TargetTaxonomy::default();
    if cfg.model.num_targets != tax.len() {
        return Err(Failure::config(format!(
            "model.num_targets is {} but the target taxonomy has {} classes",
            cfg.model.num_targets,
            tax.len()
        )));
    }
    Ok(tax)
}

pub fn weaklabel(
    corpus: &Path,
    source: LabelSource,
    lexicon: Option<PathBuf>,
    replay: Option<PathBuf>,
    noise: f64,
    noise_seed: u64,
    out: &Path,
) -> Outcome<()> {
    let mut m = RunManifest::start("weaklabel");
    let kind = match source {
        LabelSource::Lexicon => WeakLabelKind::Lexicon,
        LabelSource::Llm => WeakLabelKind::ExternalLlm,
        LabelSource::Gold => WeakLabelKind::GoldPassthrough,
    };
    let weak = WeakConfig {
        kind,
        lexicon,
        replay,
        template: None,
        noise_rate: noise,
        noise_seed,
    };
    weak.validate()?;
    m.config(&weak);
    m.input(corpus)?;
    for p in weak.lexicon.iter().chain(weak.replay.iter()) {
        m.input(p)?;
    }
    let records = read_corpus(corpus)?;
    let labels = weak.labels(&records, &TargetTaxonomy::default())?;
    fs::create_dir_all(out)?;
    let path = out.join("labels.jsonl");
    let body: String = records
        .iter()
        .zip(&labels)
        .map(|(r, l)| {
            serde_json::to_string(&LabelLine {
                id: r.id.clone(),
                probs: l.probs().to_vec(),
            })
            .expect("serializes")
                + "\n"
        })
        .collect();
    fs::write(&path, body)?;
    println!("{} labels written to {}", labels.len(), path.display());
    m.outputs.push(path);
    m.finish(out)
}

fn read_labels(path: &Path, records: &[ExampleRecord]) -> Outcome<Vec<SoftLabel<f64>>> {
    let body =
        fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut by_id = HashMap::new();
    for (n, line) in body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let l: LabelLine = serde_json::from_str(line)
            .map_err(|e| Failure::data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        let label = SoftLabel::from_probs(&l.probs)
            .map_err(|e| Failure::data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        by_id.insert(l.id, label);
    }
    records
        .iter()
        .map(|r| {
            by_id.remove(&r.id).ok_or_else(|| {
                Failure::data(format!(
                    "{} has no label for record {}",
                    path.display(),
                    r.id
                ))
            })
        })
        .collect()
}

pub fn train(
    config: Option<&Path>,
    data: Option<PathBuf>,
    labels: Option<PathBuf>,
    o: &Overrides,
    out: &Path,
) -> Outcome<()> {
    let mut m = RunManifest::start("train");
    let mut file = FileConfig::load(config)?;
    file.apply(o);
    if data.is_some() {
        file.data.train = data;
    }
    if labels.is_some() {
        file.data.labels = labels;
    }
    let cfg = file.experiment()?;
    let tax = taxonomy_for(&cfg)?;
    m.config_path = config.map(Path::to_path_buf);
    m.config(&file);
    m.seed = Some(cfg.train.seed);
    let corpus_path = file
        .data
        .train
        .clone()
        .ok_or_else(|| Failure::config("no training corpus: set data.train or pass --data"))?;
    m.input(&corpus_path)?;
    let records = read_corpus(&corpus_path)?;
    let seed_labels = match &file.data.labels {
        Some(p) => {
            m.input(p)?;
            read_labels(p, &records)?
        }
        None => cfg.weak.labels(&records, &tax)?,
    };
    if let Some(b) = &cfg.backbone {
        m.input(b)?;
    }
    let fitted = fit(&records, &seed_labels, &cfg, |_| {})?;
    fitted.checkpoint.save(out)?;
    let best = fitted
        .outcome
        .history
        .iter()
        .map(|p| p.macro_f1)
        .fold(None, |a: Option<f64>, f| Some(a.map_or(f, |a| a.max(f))));
    println!(
        "trained {} steps; best validation macro-F1 {} at step {}",
        fitted.outcome.steps_run,
        best.map_or("n/a".to_string(), |f| format!("{f:.4}")),
        fitted
            .outcome
            .best_step
            .map_or("n/a".to_string(), |s| s.to_string()),
    );
    m.outputs = ["params.json", "config.json", "metrics.json", "vocab.txt"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    m.finish(out)
}

fn named(path: &Path) -> Outcome<NamedCorpus> {
    let records = read_corpus(path)?;
    let name = match records.first() {
        Some(r) => r.platform.to_string(),
        None => path
            .file_stem()
            .map_or("corpus".into(), |s| s.to_string_lossy().into_owned()),
    };
    Ok(NamedCorpus { name, records })
}

fn named_all(paths: &[PathBuf], m: &mut RunManifest) -> Outcome<Vec<NamedCorpus>> {
    let mut out: Vec<NamedCorpus> = Vec::new();
    for p in paths {
        m.input(p)?;
        let c = named(p)?;
        if out.iter().any(|o| o.name == c.name) {
            return Err(Failure::config(format!("two corpora are named {}", c.name)));
        }
        out.push(c);
    }
    Ok(out)
}

pub fn grid(
    config: Option<&Path>,
    sources: Vec<PathBuf>,
    targets: Vec<PathBuf>,
    o: &Overrides,
    out: &Path,
) -> Outcome<()> {
    let mut m = RunManifest::start("grid");
    let mut file = FileConfig::load(config)?;
    file.apply(o);
    if !sources.is_empty() {
        file.data.sources = sources;
    }
    if !targets.is_empty() {
        file.data.targets = targets;
    }
    let cfg = file.experiment()?;
    let tax = taxonomy_for(&cfg)?;
    m.config_path = config.map(Path::to_path_buf);
    m.config(&file);
    m.seed = Some(cfg.train.seed);
    if file.data.sources.is_empty() || file.data.targets.is_empty() {
        return Err(Failure::config(
            "the grid needs at least one --source and one --target",
        ));
    }
    let srcs = named_all(&file.data.sources, &mut m)?;
    let tgts = named_all(&file.data.targets, &mut m)?;
    let report = cross_platform_grid(&srcs, &tgts, &cfg, |_, records| {
        cfg.weak.labels(records, &tax)
    })?;
    fs::create_dir_all(out)?;
    let path = out.join("report.tsv");
    report.save(&path)?;
    print!("{}", report.to_tsv());
    m.outputs.push(path);
    m.finish(out)?;
    match report.failed() {
        0 => Ok(()),
        n => Err(Failure {
            code: PARTIAL_GRID,
            error: anyhow::anyhow!("{n} of {} grid cells failed", report.cells.len()),
        }),
    }
}

pub fn export(
    checkpoint: &Path,
    corpora: &[PathBuf],
    n: usize,
    seed: u64,
    out: &Path,
) -> Outcome<()> {
    let mut m = RunManifest::start("export");
    m.seed = Some(seed);
    m.input(checkpoint)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let named = named_all(corpora, &mut m)?;
    let rows = export_latents(&ckpt.model, &ckpt.vocab, &named, n, seed)?;
    fs::create_dir_all(out)?;
    let path = out.join("latents.jsonl");
    write_latents(&path, &rows)?;
    println!("{} rows written to {}", rows.len(), path.display());
    for (i, a) in named.iter().enumerate() {
        for b in &named[i + 1..] {
            let r = |k| {
                distance_ratio(&rows, k, &a.name, &b.name)
                    .map_or("n/a".to_string(), |r| format!("{r:.3}"))
            };
            println!(
                "{} vs {}: cross/within distance causal {}, target {}",
                a.name,
                b.name,
                r(LatentKind::Causal),
                r(LatentKind::Target)
            );
        }
    }
    m.outputs.push(path);
    m.finish(out)
}

pub fn plot(input: &Path, kind: Kind, params: &TsneParams, out: &Path) -> Outcome<()> {
    let mut m = RunManifest::start("plot");
    m.input(input)?;
    fs::create_dir_all(out)?;
    if input.extension().is_some_and(|e| e == "tsv") {
        let report = EvalReport::load(input)?;
        let path = out.join("report.svg");
        fs::write(&path, report_svg(&report))?;
        m.outputs.push(path);
        return m.finish(out);
    }
    m.seed = Some(params.seed);
    let rows = read_latents(input)?;
    let kind = match kind {
        Kind::Causal => LatentKind::Causal,
        Kind::Target => LatentKind::Target,
    };
    let label = if kind == LatentKind::Causal {
        "causal"
    } else {
        "target"
    };
    info!("embedding {} points", rows.len());
    let coords = embed(&latent_points(&rows, kind), params)?;
    let csv_path = out.join("coordinates.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Failure::data(e))?;
    w.write_record(["platform", "id", "hate", "x", "y"])
        .map_err(|e| Failure::data(e))?;
    for (r, c) in rows.iter().zip(&coords) {
        w.write_record([
            r.platform.clone(),
            r.id.clone(),
            r.hate.to_string(),
            c[0].to_string(),
            c[1].to_string(),
        ])
        .map_err(|e| Failure::data(e))?;
    }
    w.flush()?;
    let svg_path = out.join(format!("latents-{label}.svg"));
    fs::write(
        &svg_path,
        scatter_svg(
            &rows,
            &coords,
            &format!("{label} latents, t-SNE (seed {})", params.seed),
        ),
    )?;
    println!("wrote {} and {}", svg_path.display(), csv_path.display());
    m.outputs = vec![svg_path, csv_path];
    m.finish(out)
}
