//! Command-line entry point.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use log::{info, warn};
use serde_json::json;

use crate::analysis::{
    calibrate_stage1, dataset_metrics, exclude_identities, ks_one_sided, leakage::cosine, leakage_search,
    manifest_features, metrics_csv, one_per_identity, reference_rows, score_distributions,
    score_distributions_from_sets, threshold_at_far,
    LeakageItem, ManifestFeatures, ScoreMode,
};
use crate::binarizer::{train_binarizer, BinarizerWeights};
use crate::config::{RunConfig, RunLock};
use crate::corpus::build_corpus;
use crate::domain::{read_manifest, write_manifest, DatasetManifest, GrayFingerprint};
use crate::embedding::{
    evaluate_identification, evaluate_tar_far, extract_embedding, load_samples,
    split_gallery_probe, split_last_impression, train_embedding, EmbeddingWeights, EvalReport,
};
use crate::error::{Error, Result};
use crate::masterprint::train_masterprint_gan;
use crate::nn::TrainLog;
use crate::pipeline::{
    labelled_images, master_maps, projected_gb, projected_hours, stage_timings, synthesize_dataset,
    PipelineBundle, TrainingSets, BINARIZER_NAME, MASTERPRINT_NAME, REFERENCE_IDS, REFERENCE_IMPS, RENDERER_NAME,
    WARP_NAME,
};
use crate::render::train_renderer;
use crate::report::emit_report;
use crate::warp::train_warp_gan;

#[derive(Debug, Parser)]
#[command(name = "fplab", version, about = "Synthetic fingerprint generation and evaluation")]
pub struct Cli {
    /// TOML configuration file; environment variables and flags override it.
    #[arg(long, global = true, env = "FPLAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Global seed from which every component seed is derived.
    #[arg(long, global = true, env = "FPLAB_SEED")]
    pub seed: Option<u64>,
    /// Run directory for outputs.
    #[arg(long, global = true, env = "FPLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, env = "FPLAB_DEVICE")]
    pub device: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a procedural toy corpus.
    Corpus(CorpusArgs),
    /// Train the ridge binarizer on a corpus.
    TrainBinarizer(TrainArgs),
    /// Train the master-print generator on a corpus.
    TrainMasterprint(TrainArgs),
    /// Train the distortion generator on a corpus.
    TrainWarp(TrainArgs),
    /// Train the texture renderer on a corpus.
    TrainRenderer(RendererArgs),
    /// Generate a synthetic dataset from a trained bundle.
    Synth(SynthArgs),
    /// Minutiae and quality statistics for one or more manifests.
    Metrics(MetricsArgs),
    /// Matcher score distribution for one manifest or a pair.
    Distributions(DistributionArgs),
    /// One-sided two-sample KS test between two score files.
    Ks(KsArgs),
    /// Two-stage identity-leakage search of a synthetic set against a training set.
    Leakage(LeakageArgs),
    /// Train the fixed-length embedding.
    EmbedTrain(EmbedTrainArgs),
    /// Verification and identification accuracy of an embedding.
    EmbedEval(EmbedEvalArgs),
    /// Per-stage generation timings of a bundle.
    Timings(TimingArgs),
    /// Markdown report and plots for a run directory.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Corpus(_) => "corpus",
            Command::TrainBinarizer(_) => "train-binarizer",
            Command::TrainMasterprint(_) => "train-masterprint",
            Command::TrainWarp(_) => "train-warp",
            Command::TrainRenderer(_) => "train-renderer",
            Command::Synth(_) => "synth",
            Command::Metrics(_) => "metrics",
            Command::Distributions(_) => "distributions",
            Command::Ks(_) => "ks",
            Command::Leakage(_) => "leakage",
            Command::EmbedTrain(_) => "embed-train",
            Command::EmbedEval(_) => "embed-eval",
            Command::Timings(_) => "timings",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, env = "FPLAB_FINGERS")]
    pub fingers: Option<usize>,
    #[arg(long, env = "FPLAB_IMPRESSIONS")]
    pub impressions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest.
    #[arg(long, env = "FPLAB_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RendererArgs {
    #[arg(long, env = "FPLAB_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Directory holding the trained binarizer.
    #[arg(long, env = "FPLAB_BINARIZER")]
    pub binarizer: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory holding the four trained components.
    #[arg(long, env = "FPLAB_BUNDLE")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub ids: Option<usize>,
    #[arg(long)]
    pub imps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Manifest to summarise; repeat for several datasets.
    #[arg(long = "manifest")]
    pub manifests: Vec<PathBuf>,
    /// Display name for the manifest at the same position.
    #[arg(long = "name")]
    pub names: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DistributionArgs {
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second manifest, for cross scores.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// genuine, imposter or cross.
    #[arg(long)]
    pub mode: Option<ScoreMode>,
    /// Maximum number of pairs scored.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Output stem; defaults to the mode name.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct KsArgs {
    /// Score file of the sample expected to lie lower.
    #[arg(long)]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeakageArgs {
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Directory holding the embedding weights.
    #[arg(long, env = "FPLAB_EMBEDDING")]
    pub embedding: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub stage1: Option<f64>,
    #[arg(long)]
    pub stage2: Option<f64>,
    #[arg(long)]
    pub far: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EmbedTrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Weights directory to finetune from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedEvalArgs {
    #[arg(long, env = "FPLAB_EMBEDDING")]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Gallery manifest; repeat to add distractor sets after the mated one.
    #[arg(long)]
    pub gallery: Vec<PathBuf>,
    /// FAR level; repeat for several.
    #[arg(long)]
    pub far: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[arg(long, env = "FPLAB_BUNDLE")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory to summarise; defaults to the output directory.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, v: Vec<T>) {
    if !v.is_empty() {
        *slot = v;
    }
}

/// Resolves the configuration file, then environment and flag overrides.
pub fn resolve_config(cli: Cli) -> Result<(RunConfig, Command)> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.command = cli.command.name().to_string();
    set_opt(&mut cfg.seed, cli.seed);
    set(&mut cfg.out, cli.out);
    set(&mut cfg.device, cli.device);
    match &cli.command {
        Command::Corpus(a) => {
            set(&mut cfg.corpus.fingers, a.fingers);
            set(&mut cfg.corpus.impressions, a.impressions);
        }
        Command::TrainBinarizer(a) => {
            set_opt(&mut cfg.binarizer.corpus, a.corpus.clone());
            set(&mut cfg.binarizer.settings.steps, a.steps);
        }
        Command::TrainMasterprint(a) => {
            set_opt(&mut cfg.masterprint.corpus, a.corpus.clone());
            set(&mut cfg.masterprint.settings.steps, a.steps);
        }
        Command::TrainWarp(a) => {
            set_opt(&mut cfg.warp.corpus, a.corpus.clone());
            set(&mut cfg.warp.settings.steps, a.steps);
        }
        Command::TrainRenderer(a) => {
            set_opt(&mut cfg.renderer.corpus, a.corpus.clone());
            set_opt(&mut cfg.renderer.binarizer, a.binarizer.clone());
            set(&mut cfg.renderer.settings.steps, a.steps);
        }
        Command::Synth(a) => {
            set_opt(&mut cfg.synth.bundle, a.bundle.clone());
            set(&mut cfg.synth.ids, a.ids);
            set(&mut cfg.synth.imps, a.imps);
        }
        Command::Metrics(a) => {
            set_vec(&mut cfg.features.manifests, a.manifests.clone());
            set_vec(&mut cfg.features.names, a.names.clone());
        }
        Command::Distributions(a) => {
            set_opt(&mut cfg.distributions.a, a.a.clone());
            set_opt(&mut cfg.distributions.b, a.b.clone());
            set(&mut cfg.distributions.mode, a.mode);
            set(&mut cfg.distributions.budget, a.budget);
            set_opt(&mut cfg.distributions.label, a.label.clone());
        }
        Command::Ks(a) => {
            set_opt(&mut cfg.ks.a, a.a.clone());
            set_opt(&mut cfg.ks.b, a.b.clone());
        }
        Command::Leakage(a) => {
            set_opt(&mut cfg.leakage.synth, a.synth.clone());
            set_opt(&mut cfg.leakage.train, a.train.clone());
            set_opt(&mut cfg.leakage.embedding, a.embedding.clone());
            set_opt(&mut cfg.leakage.stage1, a.stage1);
            set_opt(&mut cfg.leakage.stage2, a.stage2);
            set(&mut cfg.leakage.far, a.far);
        }
        Command::EmbedTrain(a) => {
            set_opt(&mut cfg.embedding.manifest, a.manifest.clone());
            set_opt(&mut cfg.embedding.init, a.init.clone());
            set(&mut cfg.embedding.settings.steps, a.steps);
        }
        Command::EmbedEval(a) => {
            set_opt(&mut cfg.eval.embedding, a.embedding.clone());
            set_opt(&mut cfg.eval.probe, a.probe.clone());
            set_vec(&mut cfg.eval.gallery, a.gallery.clone());
            set_vec(&mut cfg.eval.far, a.far.clone());
        }
        Command::Timings(a) => {
            set_opt(&mut cfg.timings.bundle, a.bundle.clone());
            set(&mut cfg.timings.trials, a.trials);
        }
        Command::Report(a) => {
            set_opt(&mut cfg.report.run, a.run.clone());
        }
    }
    cfg.derive_seeds();
    Ok((cfg, cli.command))
}

fn required(v: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.clone()
        .ok_or_else(|| Error::Usage(format!("--{flag} is required (flag, environment or config file)")))
}

fn device(name: &str) -> Result<Device> {
    match name {
        "cpu" => Ok(Device::Cpu),
        other => Err(Error::Usage(format!("unsupported device {other:?}; only cpu is available"))),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_log(out: &Path, name: &str, log: &TrainLog) -> Result<()> {
    write(&out.join(format!("{name}_log.csv")), &log.to_csv())
}

fn dataset_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads a file of scores, one per line, with an optional non-numeric header.
/// For multi-column CSV files the last column is used.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if k == 0 => {}
            Err(_) => {
                return Err(Error::InvalidValue(format!(
                    "{}:{}: {field:?} is not a number",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    Ok(out)
}

fn features(path: &Path, cfg: &RunConfig) -> Result<ManifestFeatures> {
    let m = read_manifest(path)?;
    Ok(manifest_features(&m, &cfg.features.minutiae))
}

fn run_corpus(cfg: &RunConfig) -> Result<()> {
    let c = &cfg.corpus;
    let m = build_corpus(c.fingers, c.impressions, c.seed, &cfg.out, &c.settings)?;
    println!("wrote {} prints to {}", m.len(), cfg.out.display());
    Ok(())
}

fn run_train_binarizer(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let m = read_manifest(&required(&cfg.binarizer.corpus, "corpus")?)?;
    let t = train_binarizer(&labelled_images(&m)?, &cfg.binarizer.settings, dev)?;
    t.weights.save(&cfg.out, BINARIZER_NAME)?;
    write_log(&cfg.out, BINARIZER_NAME, &t.log)
}

fn run_train_masterprint(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let m = read_manifest(&required(&cfg.masterprint.corpus, "corpus")?)?;
    let masters: Vec<_> = master_maps(&m)?.into_iter().map(|(_, b)| b).collect();
    let t = train_masterprint_gan(
        &masters,
        &cfg.masterprint.settings,
        Some(cfg.out.join("checkpoints").join(MASTERPRINT_NAME)),
        dev,
    )?;
    t.weights.save(&cfg.out, MASTERPRINT_NAME)?;
    write_log(&cfg.out, MASTERPRINT_NAME, &t.log)
}

fn run_train_warp(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let m = read_manifest(&required(&cfg.warp.corpus, "corpus")?)?;
    let sets = TrainingSets::from_corpus(&m)?;
    let t = train_warp_gan(
        &sets.pairs,
        &cfg.warp.settings,
        Some(cfg.out.join("checkpoints").join(WARP_NAME)),
        dev,
    )?;
    t.weights.save(&cfg.out, WARP_NAME)?;
    write_log(&cfg.out, WARP_NAME, &t.log)
}

fn run_train_renderer(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let m = read_manifest(&required(&cfg.renderer.corpus, "corpus")?)?;
    let bin_dir = cfg.renderer.binarizer.clone().unwrap_or_else(|| cfg.out.clone());
    let bin = BinarizerWeights::load_auto(&bin_dir, BINARIZER_NAME, DType::F32, dev)?;
    let t = train_renderer(
        &labelled_images(&m)?,
        &bin,
        &cfg.renderer.settings,
        Some(cfg.out.join("checkpoints").join(RENDERER_NAME)),
        dev,
    )?;
    t.weights.save(&cfg.out, RENDERER_NAME)?;
    write_log(&cfg.out, RENDERER_NAME, &t.log)?;
    println!(
        "identity agreement {:.4} -> {:.4}",
        t.initial_identity, t.final_identity
    );
    Ok(())
}

fn run_synth(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let dir = required(&cfg.synth.bundle, "bundle")?;
    let bundle = PipelineBundle::load(&dir, dev)?;
    let run = synthesize_dataset(&bundle, cfg.synth.ids, cfg.synth.imps, cfg.master_seed(), &cfg.out)?;
    write(
        &cfg.out.join("synth_summary.json"),
        &serde_json::to_string_pretty(&run.summary)?,
    )?;
    println!("wrote {} prints to {}", run.manifest.len(), cfg.out.display());
    Ok(())
}

fn run_metrics(cfg: &RunConfig) -> Result<()> {
    let f = &cfg.features;
    if f.manifests.is_empty() {
        return Err(Error::Usage("at least one --manifest is required".into()));
    }
    if !f.names.is_empty() && f.names.len() != f.manifests.len() {
        return Err(Error::Usage("give one --name per --manifest or none".into()));
    }
    let mut rows = Vec::new();
    for (k, p) in f.manifests.iter().enumerate() {
        let name = f.names.get(k).cloned().unwrap_or_else(|| dataset_name(p));
        rows.push(dataset_metrics(&name, &features(p, cfg)?));
    }
    rows.extend(reference_rows());
    let csv = metrics_csv(&rows);
    write(&cfg.out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_distributions(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.distributions;
    let a = features(&required(&d.a, "a")?, cfg)?;
    let b = d.b.as_deref().map(|p| features(p, cfg)).transpose()?;
    if (d.mode == ScoreMode::Cross) != b.is_some() {
        return Err(Error::Usage("--b is required for cross scores and rejected otherwise".into()));
    }
    let dist = score_distributions(&a, b.as_ref(), d.mode, d.budget, d.seed, &cfg.features.matcher)?;
    let label = d.label.clone().unwrap_or_else(|| format!("{:?}", d.mode).to_lowercase());
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::Usage(format!("label {label:?} must be alphanumeric")));
    }
    let mut scores = String::from("a_index,b_index,score\n");
    for ((i, j), s) in dist.pairs.iter().zip(&dist.scores) {
        scores.push_str(&format!("{i},{j},{s}\n"));
    }
    write(&cfg.out.join(format!("dist_{label}.csv")), &dist.histogram.to_csv())?;
    write(&cfg.out.join(format!("ecdf_{label}.csv")), &dist.ecdf_csv())?;
    write(&cfg.out.join(format!("scores_{label}.csv")), &scores)?;
    let meta = json!({
        "label": label,
        "mode": dist.mode,
        "seed": dist.seed,
        "candidate_pairs": dist.candidate_pairs,
        "pairs": dist.len(),
        "median": dist.median(),
        "skipped_a": a.skipped,
        "skipped_b": b.as_ref().map(|b| b.skipped),
    });
    write(&cfg.out.join(format!("dist_{label}.json")), &serde_json::to_string_pretty(&meta)?)?;
    println!("{label}: {} pairs, median {:.6}", dist.len(), dist.median());
    Ok(())
}

fn run_ks(cfg: &RunConfig) -> Result<()> {
    let (pa, pb) = (required(&cfg.ks.a, "a")?, required(&cfg.ks.b, "b")?);
    let r = ks_one_sided(&read_scores(&pa)?, &read_scores(&pb)?)?;
    let meta = json!({
        "a": pa, "b": pb, "d": r.d, "p": r.p, "n_a": r.n_a, "n_b": r.n_b,
    });
    write(&cfg.out.join("ks.json"), &serde_json::to_string_pretty(&meta)?)?;
    println!("D={:.6} p={:.6} n_a={} n_b={}", r.d, r.p, r.n_a, r.n_b);
    Ok(())
}

fn leakage_items(
    m: &DatasetManifest,
    f: &ManifestFeatures,
    w: &EmbeddingWeights,
) -> Result<Vec<LeakageItem>> {
    f.items
        .par_iter()
        .map(|(r, feat)| {
            let img = GrayFingerprint::read_png(&m.resolve(r))?;
            Ok(LeakageItem {
                id: r.id,
                path: r.path.clone(),
                embedding: extract_embedding(w, &img)?,
                minutiae: feat.minutiae.clone(),
            })
        })
        .collect()
}

fn run_leakage(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let l = &cfg.leakage;
    let synth_path = required(&l.synth, "synth")?;
    let synth_all = read_manifest(&synth_path)?;
    let train = read_manifest(&required(&l.train, "train")?)?;
    let w = EmbeddingWeights::load(&required(&l.embedding, "embedding")?, crate::embedding::KIND, dev)?;
    let synth = one_per_identity(&synth_all, l.seed);
    let mcfg = &cfg.features.minutiae;
    let synth_items = leakage_items(&synth, &manifest_features(&synth, mcfg), &w)?;
    let train_items = leakage_items(&train, &manifest_features(&train, mcfg), &w)?;
    let stage1 = match l.stage1 {
        Some(t) => t,
        None => {
            let mut gen = Vec::new();
            for i in 0..train_items.len() {
                for j in i + 1..train_items.len() {
                    if train_items[i].id == train_items[j].id {
                        gen.push(cosine(&train_items[i].embedding, &train_items[j].embedding));
                    }
                }
            }
            calibrate_stage1(&gen, l.keep)?
        }
    };
    let stage2 = match l.stage2 {
        Some(t) => t,
        None => {
            let sets: Vec<_> = train_items.iter().map(|it| it.minutiae.clone()).collect();
            let ids: Vec<u64> = train_items.iter().map(|it| it.id).collect();
            let imp = score_distributions_from_sets(
                &sets,
                &ids,
                None,
                ScoreMode::Imposter,
                l.calibration_budget,
                l.seed,
                &cfg.features.matcher,
            )?;
            let far = l.far.max(1.0 / imp.len().max(1) as f64);
            if far > l.far {
                warn!("only {} imposter scores; calibrating at FAR {far:.2e}", imp.len());
            }
            threshold_at_far(&imp.scores, far)?.min(1.0)
        }
    };
    let report = leakage_search(&synth_items, &train_items, stage1, stage2, &cfg.features.matcher)?;
    let flagged_ids = report.flagged_synth_ids();
    let mut release = exclude_identities(&synth_all, &flagged_ids);
    for r in &mut release.records {
        r.path = synth_all.root.join(&r.path).to_string_lossy().into_owned();
    }
    release.root = cfg.out.clone();
    write_manifest(&release, &cfg.out.join("release_manifest.jsonl"))?;
    write(&cfg.out.join("leakage.jsonl"), &report.to_jsonl()?)?;
    let released: BTreeSet<u64> = release.identities().into_iter().collect();
    let meta = json!({
        "synth": synth_path,
        "stage1_threshold": report.stage1_threshold,
        "stage2_threshold": report.stage2_threshold,
        "pairs_total": report.pairs_total,
        "stage1_passed": report.stage1_passed,
        "flagged_pairs": report.flagged.len(),
        "flagged_identities": flagged_ids.len(),
        "released_identities": released.len(),
        "max_stage2_score": report.max_stage2_score,
    });
    write(&cfg.out.join("leakage.json"), &serde_json::to_string_pretty(&meta)?)?;
    println!(
        "{} of {} pairs passed stage 1; {} identities flagged",
        report.stage1_passed,
        report.pairs_total,
        flagged_ids.len()
    );
    Ok(())
}

fn run_embed_train(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let m = read_manifest(&required(&cfg.embedding.manifest, "manifest")?)?;
    let samples = load_samples(&m)?;
    let min_imps = m.by_identity().iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    let (train, heldout) = if min_imps >= 3 {
        split_last_impression(&samples)
    } else {
        (samples, Vec::new())
    };
    let init = cfg
        .embedding
        .init
        .as_deref()
        .map(|d| EmbeddingWeights::load(d, crate::embedding::KIND, dev))
        .transpose()?;
    let t = train_embedding(&train, &heldout, &cfg.embedding.settings, init.as_ref(), dev)?;
    t.weights.save(&cfg.out, crate::embedding::KIND)?;
    write_log(&cfg.out, crate::embedding::KIND, &t.log)?;
    let summary = json!({
        "classes": t.classes,
        "train_samples": train.len(),
        "heldout_samples": heldout.len(),
        "final_heldout_loss": t.final_heldout_loss(),
        "initialised_from": cfg.embedding.init,
    });
    write(&cfg.out.join("embedding_train.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("trained on {} identities, held-out loss {:.5}", t.classes, t.final_heldout_loss());
    Ok(())
}

fn run_embed_eval(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let e = &cfg.eval;
    let w = EmbeddingWeights::load(&required(&e.embedding, "embedding")?, crate::embedding::KIND, dev)?;
    let probe = read_manifest(&required(&e.probe, "probe")?)?;
    let tar = evaluate_tar_far(&w, &probe, &e.far)?;
    let id = if e.gallery.is_empty() {
        let (gallery, probes) = split_gallery_probe(&probe);
        evaluate_identification(&w, &probes, &[&gallery])?
    } else {
        let galleries = e.gallery.iter().map(|p| read_manifest(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DatasetManifest> = galleries.iter().collect();
        evaluate_identification(&w, &probe, &refs)?
    };
    let mut provenance = tar.provenance.clone();
    provenance.extend(id.provenance.iter().skip(1).cloned());
    let report = EvalReport {
        tar: tar.tar,
        genuine_pairs: tar.genuine_pairs,
        imposter_pairs: tar.imposter_pairs,
        identification: id.identification,
        probes: id.probes,
        gallery_size: id.gallery_size,
        provenance,
    };
    write(&cfg.out.join("eval.json"), &report.to_json()?)?;
    write(&cfg.out.join("tar.csv"), &report.tar_csv())?;
    write(&cfg.out.join("cmc.csv"), &report.cmc_csv())?;
    print!("{}{}", report.tar_csv(), report.cmc_csv());
    Ok(())
}

fn run_timings(cfg: &RunConfig, dev: &Device) -> Result<()> {
    let bundle = PipelineBundle::load(&required(&cfg.timings.bundle, "bundle")?, dev)?;
    let t = stage_timings(&bundle, cfg.timings.trials, cfg.master_seed())?;
    let prints = REFERENCE_IDS * REFERENCE_IMPS;
    write(&cfg.out.join("timings.csv"), &t.to_csv())?;
    let meta = json!({
        "trials": t.trials,
        "stage_sum_ms": t.stage_sum_ms(),
        "end_to_end_ms": t.end_to_end.mean,
        "accounting_gap": t.accounting_gap(),
        "mean_png_bytes": t.mean_png_bytes,
        "projected_prints": prints,
        "projected_hours": projected_hours(t.end_to_end.mean, prints),
        "projected_gb": projected_gb(t.mean_png_bytes, prints),
    });
    write(&cfg.out.join("timings.json"), &serde_json::to_string_pretty(&meta)?)?;
    print!("{}", t.to_csv());
    Ok(())
}

fn run_report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.report.run.clone().unwrap_or_else(|| cfg.out.clone());
    let s = emit_report(&dir)?;
    println!("{} ({} sections, {} plots)", s.path.display(), s.sections.len(), s.plots.len());
    Ok(())
}

/// Executes a resolved configuration.
pub fn execute(cfg: &RunConfig, command: &Command) -> Result<()> {
    let dev = device(&cfg.device)?;
    let _lock = RunLock::acquire(&cfg.out)?;
    cfg.write_snapshot()?;
    info!("{} -> {}", cfg.command, cfg.out.display());
    match command {
        Command::Corpus(_) => run_corpus(cfg),
        Command::TrainBinarizer(_) => run_train_binarizer(cfg, &dev),
        Command::TrainMasterprint(_) => run_train_masterprint(cfg, &dev),
        Command::TrainWarp(_) => run_train_warp(cfg, &dev),
        Command::TrainRenderer(_) => run_train_renderer(cfg, &dev),
        Command::Synth(_) => run_synth(cfg, &dev),
        Command::Metrics(_) => run_metrics(cfg),
        Command::Distributions(_) => run_distributions(cfg),
        Command::Ks(_) => run_ks(cfg),
        Command::Leakage(_) => run_leakage(cfg, &dev),
        Command::EmbedTrain(_) => run_embed_train(cfg, &dev),
        Command::EmbedEval(_) => run_embed_eval(cfg, &dev),
        Command::Timings(_) => run_timings(cfg, &dev),
        Command::Report(_) => run_report(cfg),
    }
}

/// Machine-readable error line written to stderr on failure.
pub fn error_json(e: &Error) -> String {
    json!({ "error": { "kind": e.kind(), "code": e.code(), "message": e.to_string() } }).to_string()
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve_config(cli).and_then(|(cfg, cmd)| execute(&cfg, &cmd));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
