//! The composed generator: Master-Print synthesis, warping and cropping, and
//! texture rendering, with dataset-level generation, provenance and timing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::MeanSd;
use crate::binarizer::{binarize_oracle, train_binarizer, BinarizerConfig, BinarizerWeights, LabelledImage};
use crate::corpus::{read_finger_specs, synth_full_field, CorpusConfig};
use crate::domain::io::sha256_hex;
use crate::domain::{
    derive_seed, noise::tag, write_manifest, BinaryRidgeMap, DatasetManifest, GrayFingerprint, ManifestRecord, NoiseTriple,
};
use crate::error::{Error, Result};
use crate::masterprint::{generate_masterprint, train_masterprint_gan, MasterprintConfig, MasterprintWeights};
use crate::nn::TrainLog;
use crate::render::{render, train_renderer, RendererConfig, RendererWeights};
use crate::warp::{train_warp_gan, warp_impression, WarpConfig, WarpGanWeights, WarpPair};

pub const BINARIZER_NAME: &str = "binarizer";
pub const MASTERPRINT_NAME: &str = "masterprint";
pub const WARP_NAME: &str = "warp";
pub const RENDERER_NAME: &str = "renderer";
pub const BUNDLE_FILE: &str = "bundle.toml";

/// Published per-stage and end-to-end generation times, milliseconds per print.
pub const REFERENCE_STAGE_MS: [f64; 3] = [20.0, 36.5, 42.7];
pub const REFERENCE_TOTAL_MS: f64 = 99.2;
/// Published storage per print, kilobytes.
pub const REFERENCE_PRINT_KB: f64 = 256.0;
/// Published dataset scale.
pub const REFERENCE_IDS: usize = 35_000;
pub const REFERENCE_IMPS: usize = 15;

/// The four trained weight sets and a joint digest.
pub struct PipelineBundle {
    pub binarizer: BinarizerWeights,
    pub masterprint: MasterprintWeights,
    pub warp: WarpGanWeights,
    pub renderer: RendererWeights,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    digest: String,
    binarizer: String,
    masterprint: String,
    warp: String,
    renderer: String,
}

impl PipelineBundle {
    pub fn from_parts(
        binarizer: BinarizerWeights,
        masterprint: MasterprintWeights,
        warp: WarpGanWeights,
        renderer: RendererWeights,
    ) -> Result<Self> {
        let mut b = Self {
            binarizer,
            masterprint,
            warp,
            renderer,
            digest: String::new(),
        };
        b.digest = b.component_digests()?.joint();
        Ok(b)
    }

    fn component_digests(&self) -> Result<ComponentDigests> {
        Ok(ComponentDigests {
            binarizer: self.binarizer.store.digest()?,
            masterprint: self.masterprint.g_store.digest()?,
            warp: self.warp.g_store.digest()?,
            renderer: self.renderer.g_store.digest()?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.binarizer.save(dir, BINARIZER_NAME)?;
        self.masterprint.save(dir, MASTERPRINT_NAME)?;
        self.warp.save(dir, WARP_NAME)?;
        self.renderer.save(dir, RENDERER_NAME)?;
        let c = self.component_digests()?;
        let file = BundleFile {
            digest: self.digest.clone(),
            binarizer: c.binarizer,
            masterprint: c.masterprint,
            warp: c.warp,
            renderer: c.renderer,
        };
        let p = dir.join(BUNDLE_FILE);
        let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Loads all four weight sets from `dir`; a missing component is an
    /// untrained-bundle error.
    pub fn load(dir: &Path, device: &Device) -> Result<Self> {
        for name in [BINARIZER_NAME, MASTERPRINT_NAME, WARP_NAME, RENDERER_NAME] {
            if !crate::nn::meta_path(dir, name).is_file() {
                return Err(Error::Untrained(format!("bundle {} lacks the {name} weights", dir.display())));
            }
        }
        let dtype = DType::F32;
        let b = Self::from_parts(
            BinarizerWeights::load_auto(dir, BINARIZER_NAME, dtype, device)?,
            MasterprintWeights::load(dir, MASTERPRINT_NAME, dtype, device)?,
            WarpGanWeights::load(dir, WARP_NAME, dtype, device)?,
            RendererWeights::load(dir, RENDERER_NAME, dtype, device)?,
        )?;
        let p = dir.join(BUNDLE_FILE);
        if p.is_file() {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let file: BundleFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            if file.digest != b.digest {
                return Err(Error::Incompatible(format!(
                    "bundle digest {} does not match the loaded weights ({})",
                    file.digest, b.digest
                )));
            }
        }
        Ok(b)
    }

    /// Loads the generator components from separately trained directories.
    pub fn load_components(
        binarizer_dir: &Path,
        masterprint_dir: &Path,
        warp_dir: &Path,
        renderer_dir: &Path,
        device: &Device,
    ) -> Result<Self> {
        let dtype = DType::F32;
        Self::from_parts(
            BinarizerWeights::load_auto(binarizer_dir, BINARIZER_NAME, dtype, device)?,
            MasterprintWeights::load(masterprint_dir, MASTERPRINT_NAME, dtype, device)?,
            WarpGanWeights::load(warp_dir, WARP_NAME, dtype, device)?,
            RendererWeights::load(renderer_dir, RENDERER_NAME, dtype, device)?,
        )
    }
}

struct ComponentDigests {
    binarizer: String,
    masterprint: String,
    warp: String,
    renderer: String,
}

impl ComponentDigests {
    fn joint(&self) -> String {
        sha256_hex(
            format!(
                "bundle-v1 {} {} {} {}",
                self.binarizer, self.masterprint, self.warp, self.renderer
            )
            .as_bytes(),
        )
    }
}

/// Wall time of each stage for one print, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub masterprint_ms: f64,
    pub warp_ms: f64,
    pub render_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SynthImpression {
    pub image: GrayFingerprint,
    pub noise: NoiseTriple,
    /// The shared Master-Print is timed on the first impression only.
    pub times: StageTimes,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn impression_of(bundle: &PipelineBundle, master: &BinaryRidgeMap, noise: &NoiseTriple) -> Result<(GrayFingerprint, f64, f64)> {
    let t = Instant::now();
    let warped = warp_impression(&bundle.warp, master, &noise.z_distort)?;
    let warp_ms = ms(t);
    let t = Instant::now();
    let image = render(&bundle.renderer, &warped.warped, &noise.z_texture)?;
    Ok((image, warp_ms, ms(t)))
}

/// Regenerates one print from its noise triple.
pub fn regenerate(bundle: &PipelineBundle, noise: &NoiseTriple) -> Result<GrayFingerprint> {
    let master = generate_masterprint(&bundle.masterprint, &noise.z_id)?;
    Ok(impression_of(bundle, &master, noise)?.0)
}

/// Impressions of one identity: a single Master-Print from `seed_id`, then one
/// warp and render per `(seed_distort, seed_texture)`.
pub fn synthesize_identity(
    bundle: &PipelineBundle,
    seed_id: u64,
    impression_seeds: &[(u64, u64)],
) -> Result<Vec<SynthImpression>> {
    if impression_seeds.is_empty() {
        return Err(Error::InvalidValue("at least one impression seed is required".into()));
    }
    let start = Instant::now();
    let z_id = NoiseTriple::from_seeds(seed_id, 0, 0).z_id;
    let master = generate_masterprint(&bundle.masterprint, &z_id)?;
    let master_ms = ms(start);
    let mut out = Vec::with_capacity(impression_seeds.len());
    for (k, &(sd, st)) in impression_seeds.iter().enumerate() {
        let t = Instant::now();
        let noise = NoiseTriple::from_seeds(seed_id, sd, st);
        let (image, warp_ms, render_ms) = impression_of(bundle, &master, &noise)?;
        let masterprint_ms = if k == 0 { master_ms } else { 0.0 };
        let total_ms = ms(t) + masterprint_ms;
        out.push(SynthImpression {
            image,
            noise,
            times: StageTimes {
                masterprint_ms,
                warp_ms,
                render_ms,
                total_ms,
            },
        });
    }
    Ok(out)
}

fn impression_seeds(master_seed: u64, id: u64, n_imps: usize) -> (u64, Vec<(u64, u64)>) {
    let seed_id = derive_seed(master_seed, &[tag::IDENTITY, id]);
    let imps = (0..n_imps as u64)
        .map(|imp| {
            (
                derive_seed(master_seed, &[tag::DISTORT, id, imp]),
                derive_seed(master_seed, &[tag::TEXTURE, id, imp]),
            )
        })
        .collect();
    (seed_id, imps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub identities: usize,
    pub impressions: usize,
    pub prints: usize,
    pub master_seed: u64,
    pub bundle_digest: String,
    pub wall_ms: f64,
    pub mean_ms_per_print: f64,
    pub mean_png_bytes: f64,
}

pub struct SynthRun {
    pub manifest: DatasetManifest,
    pub summary: SynthSummary,
}

/// Writes `n_ids × n_imps` prints as `out_dir/id_{:06}/imp_{:02}.png` plus `manifest.jsonl`.
pub fn synthesize_dataset(
    bundle: &PipelineBundle,
    n_ids: usize,
    n_imps: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<SynthRun> {
    if n_ids == 0 || n_imps == 0 {
        return Err(Error::InvalidValue("n_ids and n_imps must be >= 1".into()));
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    if manifest_path.exists() {
        return Err(Error::PathCollision(manifest_path));
    }
    for id in 0..n_ids as u64 {
        for imp in 0..n_imps as u64 {
            let p = out_dir.join(crate::corpus::record_path(id, imp));
            if p.exists() {
                return Err(Error::PathCollision(p));
            }
        }
    }
    let start = Instant::now();
    let per_id: Vec<Result<Vec<(ManifestRecord, usize)>>> = (0..n_ids as u64)
        .into_par_iter()
        .map(|id| {
            let (seed_id, seeds) = impression_seeds(master_seed, id, n_imps);
            let imps = synthesize_identity(bundle, seed_id, &seeds)?;
            imps.into_iter()
                .enumerate()
                .map(|(imp, s)| {
                    let rel = crate::corpus::record_path(id, imp as u64);
                    let bytes = s.image.write_png(&out_dir.join(&rel))?;
                    Ok((
                        ManifestRecord {
                            id,
                            imp: imp as u64,
                            seed_id: s.noise.seed_id,
                            seed_distort: s.noise.seed_distort,
                            seed_texture: s.noise.seed_texture,
                            path: rel,
                            sha256: sha256_hex(&bytes),
                        },
                        bytes.len(),
                    ))
                })
                .collect()
        })
        .collect();
    let mut manifest = DatasetManifest::new(out_dir, bundle.digest.clone());
    let mut total_bytes = 0usize;
    for r in per_id {
        for (rec, n) in r? {
            manifest.records.push(rec);
            total_bytes += n;
        }
    }
    write_manifest(&manifest, &manifest_path)?;
    let wall_ms = ms(start);
    let prints = manifest.len();
    let summary = SynthSummary {
        identities: n_ids,
        impressions: n_imps,
        prints,
        master_seed,
        bundle_digest: bundle.digest.clone(),
        wall_ms,
        mean_ms_per_print: wall_ms / prints as f64,
        mean_png_bytes: total_bytes as f64 / prints as f64,
    };
    info!(
        "synthesized {prints} prints in {:.1} s ({:.1} ms per print, {:.1} KB per PNG)",
        wall_ms / 1e3,
        summary.mean_ms_per_print,
        summary.mean_png_bytes / 1e3
    );
    Ok(SynthRun { manifest, summary })
}

/// One generated print without any disk write.
#[derive(Debug, Clone)]
pub struct GeneratedPrint {
    pub id: u64,
    pub imp: u64,
    pub noise: NoiseTriple,
    pub image: GrayFingerprint,
}

/// Streams the prints of `synthesize_dataset` in manifest order, generating
/// each identity only when its first impression is requested.
pub struct OnTheFly<'a> {
    bundle: &'a PipelineBundle,
    n_ids: usize,
    n_imps: usize,
    master_seed: u64,
    next_id: u64,
    pending: std::vec::IntoIter<GeneratedPrint>,
}

impl<'a> OnTheFly<'a> {
    pub fn new(bundle: &'a PipelineBundle, n_ids: usize, n_imps: usize, master_seed: u64) -> Self {
        Self {
            bundle,
            n_ids,
            n_imps,
            master_seed,
            next_id: 0,
            pending: Vec::new().into_iter(),
        }
    }
}

impl Iterator for OnTheFly<'_> {
    type Item = Result<GeneratedPrint>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(p) = self.pending.next() {
            return Some(Ok(p));
        }
        if self.next_id as usize >= self.n_ids || self.n_imps == 0 {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        let (seed_id, seeds) = impression_seeds(self.master_seed, id, self.n_imps);
        match synthesize_identity(self.bundle, seed_id, &seeds) {
            Ok(imps) => {
                let prints: Vec<GeneratedPrint> = imps
                    .into_iter()
                    .enumerate()
                    .map(|(imp, s)| GeneratedPrint {
                        id,
                        imp: imp as u64,
                        noise: s.noise,
                        image: s.image,
                    })
                    .collect();
                self.pending = prints.into_iter();
                self.pending.next().map(Ok)
            }
            Err(e) => Some(Err(e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub trials: usize,
    pub masterprint: MeanSd,
    pub warp: MeanSd,
    pub render: MeanSd,
    pub end_to_end: MeanSd,
    pub mean_png_bytes: f64,
}

impl TimingReport {
    pub fn stage_sum_ms(&self) -> f64 {
        self.masterprint.mean + self.warp.mean + self.render.mean
    }

    /// `|Σ stage means − end-to-end mean| / end-to-end mean`.
    pub fn accounting_gap(&self) -> f64 {
        (self.stage_sum_ms() - self.end_to_end.mean).abs() / self.end_to_end.mean
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("source,masterprint_ms,warp_ms,render_ms,total_ms,png_kb\n");
        s.push_str(&format!(
            "measured,{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            self.masterprint.mean,
            self.warp.mean,
            self.render.mean,
            self.end_to_end.mean,
            self.mean_png_bytes / 1e3
        ));
        s.push_str(&format!(
            "reference,{:.1},{:.1},{:.1},{:.1},{:.1}\n",
            REFERENCE_STAGE_MS[0], REFERENCE_STAGE_MS[1], REFERENCE_STAGE_MS[2], REFERENCE_TOTAL_MS, REFERENCE_PRINT_KB
        ));
        s
    }
}

/// Single-device hours to generate `prints` prints at `ms_per_print`.
pub fn projected_hours(ms_per_print: f64, prints: usize) -> f64 {
    ms_per_print * prints as f64 / 3.6e6
}

/// Storage in gigabytes for `prints` prints of `bytes_per_print` bytes.
pub fn projected_gb(bytes_per_print: f64, prints: usize) -> f64 {
    bytes_per_print * prints as f64 / 1e9
}

/// Times each stage on `n_trials` fresh identities with one impression each.
pub fn stage_timings(bundle: &PipelineBundle, n_trials: usize, seed: u64) -> Result<TimingReport> {
    if n_trials == 0 {
        return Err(Error::InvalidValue("n_trials must be >= 1".into()));
    }
    let (mut m, mut w, mut r, mut e, mut bytes) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0usize);
    for i in 0..n_trials as u64 {
        let noise = NoiseTriple::for_dataset(seed, i, 0);
        let t = Instant::now();
        let ts = Instant::now();
        let master = generate_masterprint(&bundle.masterprint, &noise.z_id)?;
        let master_ms = ms(ts);
        let (image, warp_ms, render_ms) = impression_of(bundle, &master, &noise)?;
        e.push(ms(t));
        m.push(master_ms);
        w.push(warp_ms);
        r.push(render_ms);
        bytes += image.encode_png()?.len();
    }
    Ok(TimingReport {
        trials: n_trials,
        masterprint: MeanSd::of(&m),
        warp: MeanSd::of(&w),
        render: MeanSd::of(&r),
        end_to_end: MeanSd::of(&e),
        mean_png_bytes: bytes as f64 / n_trials as f64,
    })
}

/// Data for training every generator component from one toy corpus.
pub struct TrainingSets {
    /// Corpus prints with their oracle binary maps, 512×512.
    pub labelled: Vec<LabelledImage>,
    /// Oracle binary maps of the full-field finger patterns, 256×256.
    pub masters: Vec<BinaryRidgeMap>,
    /// Full-field pattern with each of its impressions, 256×256.
    pub pairs: Vec<WarpPair>,
}

impl TrainingSets {
    /// Reads a corpus written by `build_corpus`.
    pub fn from_corpus(manifest: &DatasetManifest) -> Result<Self> {
        let masters = master_maps(manifest)?;
        let labelled = labelled_images(manifest)?;
        let mut pairs = Vec::new();
        for (r, li) in manifest.records.iter().zip(&labelled) {
            if let Some((_, m)) = masters.iter().find(|(mid, _)| *mid == r.id) {
                pairs.push(WarpPair {
                    anchor: m.clone(),
                    target: li.label.downsample2(),
                });
            }
        }
        Ok(Self {
            labelled,
            masters: masters.into_iter().map(|(_, m)| m).collect(),
            pairs,
        })
    }
}

fn corpus_settings(dir: &Path) -> Result<CorpusConfig> {
    let cfg_path = dir.join("corpus.toml");
    match std::fs::read_to_string(&cfg_path) {
        Ok(t) => toml::from_str(&t).map_err(|e| Error::Config(e.to_string())),
        Err(_) => {
            warn!("{} missing, using default corpus settings", cfg_path.display());
            Ok(CorpusConfig::default())
        }
    }
}

/// Every manifest print with its oracle binary map, in manifest order.
pub fn labelled_images(manifest: &DatasetManifest) -> Result<Vec<LabelledImage>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let gray = GrayFingerprint::read_png(&manifest.resolve(r))?;
            let label = binarize_oracle(&gray);
            Ok(LabelledImage { gray, label })
        })
        .collect()
}

/// Oracle binary maps of the corpus full-field patterns at 256×256, by finger id.
pub fn master_maps(manifest: &DatasetManifest) -> Result<Vec<(u64, BinaryRidgeMap)>> {
    let cfg = corpus_settings(&manifest.root)?;
    let specs = read_finger_specs(&manifest.root)?;
    specs
        .par_iter()
        .map(|(id, spec)| Ok((*id, binarize_oracle(&synth_full_field(spec, &cfg)?).downsample2())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    pub binarizer: BinarizerConfig,
    pub masterprint: MasterprintConfig,
    pub warp: WarpConfig,
    pub renderer: RendererConfig,
}

pub struct BundleTraining {
    pub bundle: PipelineBundle,
    pub binarizer_log: TrainLog,
    pub masterprint_log: TrainLog,
    pub warp_log: TrainLog,
    pub renderer_log: TrainLog,
    pub renderer_initial_identity: f64,
    pub renderer_final_identity: f64,
}

/// Trains the binarizer, then the three generator stages.
pub fn train_bundle(
    sets: &TrainingSets,
    cfg: &BundleConfig,
    checkpoints: Option<PathBuf>,
    device: &Device,
) -> Result<BundleTraining> {
    let sub = |name: &str| checkpoints.as_ref().map(|p| p.join(name));
    let t = Instant::now();
    let bin = train_binarizer(&sets.labelled, &cfg.binarizer, device)?;
    info!("binarizer trained in {:.1} s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let mp = train_masterprint_gan(&sets.masters, &cfg.masterprint, sub(MASTERPRINT_NAME), device)?;
    info!("masterprint generator trained in {:.1} s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let wp = train_warp_gan(&sets.pairs, &cfg.warp, sub(WARP_NAME), device)?;
    info!("warp generator trained in {:.1} s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let rd = train_renderer(&sets.labelled, &bin.weights, &cfg.renderer, sub(RENDERER_NAME), device)?;
    info!("renderer trained in {:.1} s", t.elapsed().as_secs_f64());
    let bundle = PipelineBundle::from_parts(bin.weights, mp.weights, wp.weights, rd.weights)?;
    Ok(BundleTraining {
        bundle,
        binarizer_log: bin.log,
        masterprint_log: mp.log,
        warp_log: wp.log,
        renderer_log: rd.log,
        renderer_initial_identity: rd.initial_identity,
        renderer_final_identity: rd.final_identity,
    })
}

/// Untrained bundle with deterministic random weights, for plumbing tests.
pub fn random_bundle(seed: u64, device: &Device) -> Result<PipelineBundle> {
    let dtype = DType::F32;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s = |rng: &mut ChaCha20Rng| rand::Rng::random::<u64>(rng);
    let bin = BinarizerWeights::new(&Default::default(), s(&mut rng), dtype, device)?;
    let mp = MasterprintWeights::new(&Default::default(), s(&mut rng), false, dtype, device)?;
    let wp = WarpGanWeights::new(&Default::default(), s(&mut rng), false, dtype, device)?;
    let rc = RendererConfig {
        seed: s(&mut rng),
        ..Default::default()
    };
    let rd = RendererWeights::new(&rc, false, dtype, device)?;
    PipelineBundle::from_parts(bin, mp, wp, rd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_impressions_share_the_master_seed() {
        let b = random_bundle(3, &Device::Cpu).unwrap();
        let out = synthesize_identity(&b, 77, &[(1, 2), (3, 4)]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.noise.seed_id == 77));
        assert_eq!(out[0].image.width(), 512);
        assert!(synthesize_identity(&b, 77, &[]).is_err());
    }

    #[test]
    fn projections_match_reference_scale() {
        let prints = REFERENCE_IDS * REFERENCE_IMPS;
        assert!((projected_hours(REFERENCE_TOTAL_MS, prints) - 14.47).abs() < 0.01);
        assert!((projected_gb(REFERENCE_PRINT_KB * 1e3, prints) - 134.4).abs() < 0.1);
    }

    #[test]
    fn on_the_fly_matches_regeneration() {
        let b = random_bundle(5, &Device::Cpu).unwrap();
        let prints: Vec<_> = OnTheFly::new(&b, 2, 1, 9).collect::<Result<_>>().unwrap();
        assert_eq!(prints.len(), 2);
        let again = regenerate(&b, &prints[1].noise).unwrap();
        assert_eq!(again.pixels(), prints[1].image.pixels());
    }
}
