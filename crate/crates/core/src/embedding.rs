//! Fixed-length 192-D fingerprint embedding: a small convolutional backbone
//! trained with an additive angular margin loss over identity labels, plus
//! verification (TAR at fixed FAR) and closed-set identification benchmarks.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::leakage::threshold_at_far;
use crate::domain::{DatasetManifest, GrayFingerprint};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Conv2d, Linear, Mode, Store, TrainLog};

pub const KIND: &str = "embedding";
pub const HEAD_KIND: &str = "embedding_head";
pub const EMBEDDING_DIM: usize = 192;
/// Input side after the fixed 4× average-pool of a 512×512 print.
pub const NET_SIDE: usize = 128;
pub const RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingArch {
    /// Channels at 64, 32, 16 and 8 pixels.
    pub channels: [usize; 4],
}

impl Default for EmbeddingArch {
    fn default() -> Self {
        Self {
            channels: [8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub arch: EmbeddingArch,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Additive angular margin, radians.
    pub margin: f64,
    /// Logit scale applied to cosines.
    pub scale: f64,
    pub min_identities: usize,
    pub eval_every: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            arch: EmbeddingArch::default(),
            seed: 51,
            steps: 800,
            batch: 16,
            lr: 2e-3,
            margin: 0.1,
            scale: 30.0,
            min_identities: 20,
            eval_every: 25,
        }
    }
}

pub struct Backbone {
    c0: Conv2d,
    c1: Conv2d,
    r1: Conv2d,
    c2: Conv2d,
    r2: Conv2d,
    c3: Conv2d,
    proj: Linear,
}

impl Backbone {
    fn new(store: &Store, arch: &EmbeddingArch) -> Result<Self> {
        let root = store.root();
        let c = arch.channels;
        Ok(Self {
            c0: Conv2d::new(&root.pp("c0"), 1, c[0], 3, 2, false)?,
            c1: Conv2d::new(&root.pp("c1"), c[0], c[1], 3, 2, false)?,
            r1: Conv2d::new(&root.pp("r1"), c[1], c[1], 3, 1, false)?,
            c2: Conv2d::new(&root.pp("c2"), c[1], c[2], 3, 2, false)?,
            r2: Conv2d::new(&root.pp("r2"), c[2], c[2], 3, 1, false)?,
            c3: Conv2d::new(&root.pp("c3"), c[2], c[3], 3, 2, false)?,
            proj: Linear::with_gain(&root.pp("proj"), c[3], EMBEDDING_DIM, false, 1.0)?,
        })
    }

    /// Unit-norm embeddings `(B, 192)` of `(B, 1, 128, 128)` inputs in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let m = Mode::Eval;
        let x = x.affine(-2.0, 1.0)?;
        let h = nn::lrelu(&self.c0.forward(&x, m)?)?;
        let h = nn::lrelu(&self.c1.forward(&h, m)?)?;
        let h = (nn::lrelu(&self.r1.forward(&h, m)?)? + &h)?;
        let h = nn::lrelu(&self.c2.forward(&h, m)?)?;
        let h = (nn::lrelu(&self.r2.forward(&h, m)?)? + &h)?;
        let h = nn::lrelu(&self.c3.forward(&h, m)?)?;
        let v = self.proj.forward(&h.mean((2, 3))?, m)?;
        nn::l2_normalize_rows(&v)
    }
}

/// Identity classifier used only during training: one unit-norm prototype per identity.
pub struct IdentityHead {
    pub store: Store,
    w: Tensor,
    ids: candle_core::Var,
}

impl IdentityHead {
    fn new(ids: &[u64], seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let store = Store::new(seed, dtype, device);
        let root = store.root();
        let w = root.param("prototypes", &[ids.len(), EMBEDDING_DIM], nn::Init::Normal(1.0))?;
        let var = root.buffer("ids", &[ids.len()], nn::Init::Const(0.0))?;
        let t: Vec<f64> = ids.iter().map(|&i| i as f64).collect();
        var.set(&Tensor::from_vec(t, ids.len(), device)?.to_dtype(dtype)?)?;
        Ok(Self { store, w, ids: var })
    }

    /// Identity of each prototype, in label order.
    pub fn ids(&self) -> Result<Vec<u64>> {
        let v: Vec<f64> = self.ids.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
        Ok(v.into_iter().map(|x| x.round() as u64).collect())
    }

    pub fn classes(&self) -> usize {
        self.w.dim(0).unwrap_or(0)
    }

    /// Cosine between each embedding and each prototype, `(B, classes)`.
    fn cosines(&self, emb: &Tensor) -> Result<Tensor> {
        Ok(emb.matmul(&nn::l2_normalize_rows(&self.w)?.t()?)?)
    }
}

pub struct EmbeddingWeights {
    pub arch: EmbeddingArch,
    pub config_toml: String,
    pub store: Store,
    pub backbone: Backbone,
    pub head: Option<IdentityHead>,
}

fn head_name(name: &str) -> String {
    format!("{name}_head")
}

impl EmbeddingWeights {
    pub fn new(cfg: &EmbeddingConfig, dtype: DType, device: &Device) -> Result<Self> {
        let store = Store::new(cfg.seed, dtype, device);
        let backbone = Backbone::new(&store, &cfg.arch)?;
        Ok(Self {
            arch: cfg.arch.clone(),
            config_toml: toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?,
            store,
            backbone,
            head: None,
        })
    }

    pub fn architecture_digest(arch: &EmbeddingArch) -> String {
        nn::arch_digest(KIND, arch)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let arch = Self::architecture_digest(&self.arch);
        nn::save_model(dir, name, &self.store, KIND, arch.clone(), self.config_toml.clone())?;
        if let Some(h) = &self.head {
            nn::save_model(dir, &head_name(name), &h.store, HEAD_KIND, arch, self.config_toml.clone())?;
        }
        Ok(())
    }

    /// Loads the backbone; the identity head is attached when its files exist.
    pub fn load(dir: &Path, name: &str, device: &Device) -> Result<Self> {
        let meta = nn::read_meta(dir, name)?;
        let cfg: EmbeddingConfig = toml::from_str(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
        let mut w = Self::new(&cfg, DType::F32, device)?;
        let arch = Self::architecture_digest(&cfg.arch);
        nn::load_model(dir, name, &w.store, KIND, &arch)?;
        let hn = head_name(name);
        if nn::meta_path(dir, &hn).is_file() {
            let stored = candle_core::safetensors::load(nn::blob_path(dir, &hn), device)?;
            let classes = stored
                .get("p.prototypes")
                .map(|t| t.dim(0))
                .transpose()?
                .ok_or_else(|| Error::Incompatible(format!("{hn} has no prototypes")))?;
            let head = IdentityHead::new(&vec![0; classes], 0, DType::F32, device)?;
            nn::load_model(dir, &hn, &head.store, HEAD_KIND, &arch)?;
            w.head = Some(head);
        }
        w.config_toml = meta.config;
        Ok(w)
    }

    pub fn embed_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.backbone.forward(x)
    }
}

/// 4× average-pooled network input of a 512×512 print, `128 × 128` values.
pub fn net_input(img: &GrayFingerprint) -> Result<Vec<f32>> {
    let (w, h) = (img.width(), img.height());
    if w != 4 * NET_SIDE || h != 4 * NET_SIDE {
        return Err(shape_err(format!("{}x{}", 4 * NET_SIDE, 4 * NET_SIDE), format!("{w}x{h}")));
    }
    let px = img.pixels();
    let mut out = vec![0f32; NET_SIDE * NET_SIDE];
    for y in 0..NET_SIDE {
        for x in 0..NET_SIDE {
            let mut s = 0f32;
            for dy in 0..4 {
                let row = (4 * y + dy) * w + 4 * x;
                s += px[row..row + 4].iter().sum::<f32>();
            }
            out[y * NET_SIDE + x] = s / 16.0;
        }
    }
    Ok(out)
}

/// Unit-norm 192-D embedding of one print.
pub fn extract_embedding(weights: &EmbeddingWeights, img: &GrayFingerprint) -> Result<Vec<f32>> {
    let x = net_input(img)?;
    let t = nn::stack_planes(&[&x], NET_SIDE, NET_SIDE, weights.store.dtype(), weights.store.device())?;
    let v: Vec<f64> = weights
        .embed_tensor(&t)?
        .get(0)?
        .to_dtype(DType::F64)?
        .to_vec1()?;
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        let mut e = vec![0f32; EMBEDDING_DIM];
        e[0] = 1.0;
        return Ok(e);
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

/// Embeddings of a batch of prepared inputs, in order.
fn embed_inputs(weights: &EmbeddingWeights, inputs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(32) {
        let refs: Vec<&[f32]> = chunk.iter().map(|c| c.as_slice()).collect();
        let t = nn::stack_planes(&refs, NET_SIDE, NET_SIDE, weights.store.dtype(), weights.store.device())?;
        let e = weights.embed_tensor(&t)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        for v in e {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            out.push(v.iter().map(|x| (x / n) as f32).collect());
        }
    }
    Ok(out)
}

/// One labelled training or evaluation print.
#[derive(Debug, Clone)]
pub struct EmbeddingSample {
    pub id: u64,
    pub imp: u64,
    pub input: Vec<f32>,
}

/// Reads every print of a manifest into network inputs.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<EmbeddingSample>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let img = GrayFingerprint::read_png(&manifest.resolve(r))?;
            Ok(EmbeddingSample {
                id: r.id,
                imp: r.imp,
                input: net_input(&img)?,
            })
        })
        .collect()
}

/// Splits off the highest-numbered impression of each identity.
pub fn split_last_impression(samples: &[EmbeddingSample]) -> (Vec<EmbeddingSample>, Vec<EmbeddingSample>) {
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    for s in samples {
        let e = last.entry(s.id).or_insert(s.imp);
        *e = (*e).max(s.imp);
    }
    samples.iter().cloned().partition(|s| last[&s.id] != s.imp)
}

pub struct EmbeddingTraining {
    pub weights: EmbeddingWeights,
    /// Columns: step, loss, train_accuracy, heldout_loss.
    pub log: TrainLog,
    pub classes: usize,
}

impl EmbeddingTraining {
    pub fn final_heldout_loss(&self) -> f64 {
        self.log
            .column("heldout_loss")
            .into_iter()
            .rev()
            .find(|v| v.is_finite())
            .unwrap_or(f64::NAN)
    }
}

/// Additive angular margin cross-entropy: the target logit is `s·cos(θ + m)`.
fn margin_loss(cos: &Tensor, labels: &[u32], margin: f64, scale: f64) -> Result<Tensor> {
    let (b, n) = cos.dims2()?;
    let dev = cos.device();
    let mut onehot = vec![0f32; b * n];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * n + l as usize] = 1.0;
    }
    let onehot = Tensor::from_vec(onehot, (b, n), dev)?.to_dtype(cos.dtype())?;
    let c = cos.clamp(-1.0 + 1e-6, 1.0 - 1e-6)?;
    let sin = (c.sqr()?.affine(-1.0, 1.0)?.clamp(1e-6, 1.0)?).sqrt()?;
    let with_margin = ((&c * margin.cos())? - (sin * margin.sin())?)?;
    let logits = ((&c + (onehot * (with_margin - &c)?)?)? * scale)?;
    let y = Tensor::new(labels, dev)?;
    Ok(candle_nn::loss::cross_entropy(&logits, &y)?)
}

fn batch_tensor(samples: &[&EmbeddingSample], dtype: DType, dev: &Device) -> Result<Tensor> {
    let refs: Vec<&[f32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    nn::stack_planes(&refs, NET_SIDE, NET_SIDE, dtype, dev)
}

/// Random shift and contrast jitter of one input.
fn augment(input: &[f32], rng: &mut impl Rng) -> Vec<f32> {
    let n = NET_SIDE as i64;
    let (dx, dy) = (rng.random_range(-6..=6i64), rng.random_range(-6..=6i64));
    let gain = rng.random_range(0.85..1.15f32);
    let mut out = vec![1f32; input.len()];
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = (x - dx, y - dy);
            if (0..n).contains(&sx) && (0..n).contains(&sy) {
                let v = input[(sy * n + sx) as usize];
                out[(y * n + x) as usize] = (1.0 - (1.0 - v) * gain).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Mean margin loss of `samples` under the current backbone and head.
fn mean_loss(w: &EmbeddingWeights, head: &IdentityHead, samples: &[EmbeddingSample], labels: &BTreeMap<u64, u32>, cfg: &EmbeddingConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in samples.chunks(32) {
        let refs: Vec<&EmbeddingSample> = chunk.iter().collect();
        let x = batch_tensor(&refs, w.store.dtype(), w.store.device())?;
        let y: Vec<u32> = chunk.iter().map(|s| labels[&s.id]).collect();
        let l = nn::scalar(&margin_loss(&head.cosines(&w.embed_tensor(&x)?)?, &y, cfg.margin, cfg.scale)?)?;
        total += l * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Trains the backbone (optionally starting from `init`) with a fresh identity
/// head. `heldout` must only contain identities present in `train`.
pub fn train_embedding(
    train: &[EmbeddingSample],
    heldout: &[EmbeddingSample],
    cfg: &EmbeddingConfig,
    init: Option<&EmbeddingWeights>,
    device: &Device,
) -> Result<EmbeddingTraining> {
    let mut per_id: BTreeMap<u64, usize> = BTreeMap::new();
    for s in train {
        *per_id.entry(s.id).or_default() += 1;
    }
    let eligible = per_id.values().filter(|&&c| c >= 2).count();
    if eligible < cfg.min_identities {
        return Err(Error::Insufficient(format!(
            "{eligible} identities with at least two impressions, need {}",
            cfg.min_identities
        )));
    }
    let labels: BTreeMap<u64, u32> = per_id.keys().enumerate().map(|(i, &id)| (id, i as u32)).collect();
    if let Some(s) = heldout.iter().find(|s| !labels.contains_key(&s.id)) {
        return Err(Error::InvalidValue(format!("held-out identity {} absent from training", s.id)));
    }
    let dtype = DType::F32;
    let w = EmbeddingWeights::new(cfg, dtype, device)?;
    if let Some(src) = init {
        if src.arch != cfg.arch {
            return Err(Error::Incompatible("initial weights use a different architecture".into()));
        }
        w.store.copy_from(&src.store, "")?;
    }
    let ids: Vec<u64> = labels.keys().copied().collect();
    let head = IdentityHead::new(&ids, cfg.seed ^ 0x4EAD, dtype, device)?;
    let mut vars = w.store.trainable("");
    vars.extend(head.store.trainable(""));
    let mut opt = nn::adam(vars, cfg.lr, 0.9, 0.999)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let mut log = TrainLog::new(&["step", "loss", "train_accuracy", "heldout_loss"]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    for step in 1..=cfg.steps {
        let mut picks = Vec::with_capacity(cfg.batch);
        while picks.len() < cfg.batch {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let aug: Vec<EmbeddingSample> = picks
            .iter()
            .map(|&i| EmbeddingSample {
                input: augment(&train[i].input, &mut rng),
                ..train[i].clone()
            })
            .collect();
        let refs: Vec<&EmbeddingSample> = aug.iter().collect();
        let x = batch_tensor(&refs, dtype, device)?;
        let y: Vec<u32> = aug.iter().map(|s| labels[&s.id]).collect();
        let cos = head.cosines(&w.embed_tensor(&x)?)?;
        let loss = margin_loss(&cos, &y, cfg.margin, cfg.scale)?;
        let l = nn::scalar(&loss)?;
        nn::check_finite(step, "loss", l)?;
        let pred: Vec<u32> = cos.argmax(D::Minus1)?.to_vec1()?;
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        nn::step(&mut opt, &loss)?;
        let held = if !heldout.is_empty() && (step % cfg.eval_every.max(1) == 0 || step == cfg.steps) {
            let h = mean_loss(&w, &head, heldout, &labels, cfg)?;
            info!("embedding step {step}: loss {l:.4} acc {acc:.3} heldout {h:.4}");
            h
        } else {
            f64::NAN
        };
        log.push(vec![step as f64, l, acc, held]);
    }
    let classes = labels.len();
    let weights = EmbeddingWeights { head: Some(head), ..w };
    Ok(EmbeddingTraining { weights, log, classes })
}

/// Fraction of samples whose nearest prototype is their own identity.
pub fn head_accuracy(weights: &EmbeddingWeights, samples: &[EmbeddingSample]) -> Result<f64> {
    let head = weights
        .head
        .as_ref()
        .ok_or_else(|| Error::Untrained("embedding has no identity head".into()))?;
    let ids = head.ids()?;
    let mut correct = 0usize;
    for chunk in samples.chunks(32) {
        let refs: Vec<&EmbeddingSample> = chunk.iter().collect();
        let x = batch_tensor(&refs, weights.store.dtype(), weights.store.device())?;
        let pred: Vec<u32> = head.cosines(&weights.embed_tensor(&x)?)?.argmax(D::Minus1)?.to_vec1()?;
        correct += chunk.iter().zip(pred).filter(|(s, p)| ids[*p as usize] == s.id).count();
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarPoint {
    pub far: f64,
    pub threshold: f64,
    /// Percent.
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPoint {
    pub rank: usize,
    /// Percent.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub tar: Vec<TarPoint>,
    pub identification: Vec<RankPoint>,
    pub genuine_pairs: usize,
    pub imposter_pairs: usize,
    pub probes: usize,
    pub gallery_size: usize,
    /// Manifests and generator digests the scores come from.
    pub provenance: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn cmc_csv(&self) -> String {
        let mut s = String::from("rank,rate\n");
        for p in &self.identification {
            s.push_str(&format!("{},{:.4}\n", p.rank, p.rate));
        }
        s
    }

    pub fn tar_csv(&self) -> String {
        let mut s = String::from("far,threshold,tar\n");
        for p in &self.tar {
            s.push_str(&format!("{},{:.6},{:.4}\n", p.far, p.threshold, p.tar));
        }
        s
    }
}

/// TAR at each FAR level from explicit score sets. Each level needs at least
/// `1 / far` imposter scores.
pub fn tar_at_far(genuine: &[f64], imposter: &[f64], far_levels: &[f64]) -> Result<Vec<TarPoint>> {
    if genuine.is_empty() {
        return Err(Error::Insufficient("no genuine scores".into()));
    }
    let mut levels = far_levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&far| {
            if !(far > 0.0 && far <= 1.0) {
                return Err(Error::InvalidValue(format!("FAR {far} outside (0, 1]")));
            }
            let need = (1.0 / far).ceil() as usize;
            if imposter.len() < need {
                return Err(Error::Insufficient(format!(
                    "FAR {far} needs at least {need} imposter pairs, have {}",
                    imposter.len()
                )));
            }
            let t = threshold_at_far(imposter, far)?;
            let acc = genuine.iter().filter(|&&g| g >= t).count();
            Ok(TarPoint {
                far,
                threshold: t,
                tar: 100.0 * acc as f64 / genuine.len() as f64,
            })
        })
        .collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Exhaustive genuine and imposter cosine scores among labelled embeddings.
pub fn pair_scores(items: &[(u64, Vec<f32>)]) -> (Vec<f64>, Vec<f64>) {
    let mut gen = Vec::new();
    let mut imp = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let s = dot(&items[i].1, &items[j].1);
            if items[i].0 == items[j].0 {
                gen.push(s);
            } else {
                imp.push(s);
            }
        }
    }
    (gen, imp)
}

pub fn embed_manifest(weights: &EmbeddingWeights, manifest: &DatasetManifest) -> Result<Vec<(u64, Vec<f32>)>> {
    let samples = load_samples(manifest)?;
    embed_samples(weights, &samples)
}

pub fn embed_samples(weights: &EmbeddingWeights, samples: &[EmbeddingSample]) -> Result<Vec<(u64, Vec<f32>)>> {
    let inputs: Vec<Vec<f32>> = samples.iter().map(|s| s.input.clone()).collect();
    Ok(samples.iter().map(|s| s.id).zip(embed_inputs(weights, &inputs)?).collect())
}

fn provenance(m: &DatasetManifest) -> String {
    format!("{} ({} records, generator {})", m.root.display(), m.len(), m.generator_config_hash)
}

pub fn evaluate_tar_far(weights: &EmbeddingWeights, probe: &DatasetManifest, far_levels: &[f64]) -> Result<EvalReport> {
    let items = embed_manifest(weights, probe)?;
    let (gen, imp) = pair_scores(&items);
    if gen.is_empty() {
        return Err(Error::Insufficient("probe manifest needs at least two impressions per identity".into()));
    }
    Ok(EvalReport {
        tar: tar_at_far(&gen, &imp, far_levels)?,
        genuine_pairs: gen.len(),
        imposter_pairs: imp.len(),
        provenance: vec![provenance(probe)],
        ..Default::default()
    })
}

/// Rank-k rates (percent) for probes searched against a gallery; gallery keys
/// are `(source, id)` so distractor identities never count as mates.
pub fn identification_rates(
    probes: &[(u64, Vec<f32>)],
    gallery: &[((usize, u64), Vec<f32>)],
    ranks: &[usize],
) -> Result<Vec<RankPoint>> {
    let mut first_rank = Vec::with_capacity(probes.len());
    for (pid, pv) in probes {
        let key = (0usize, *pid);
        let mate = gallery
            .iter()
            .filter(|(k, _)| *k == key)
            .map(|(_, g)| dot(pv, g))
            .fold(f64::NEG_INFINITY, f64::max);
        if mate == f64::NEG_INFINITY {
            return Err(Error::InvalidValue(format!("probe identity {pid} missing from the gallery")));
        }
        let better = gallery
            .iter()
            .filter(|(k, g)| *k != key && dot(pv, g) > mate)
            .map(|(k, _)| *k)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        first_rank.push(better + 1);
    }
    Ok(ranks
        .iter()
        .map(|&k| RankPoint {
            rank: k,
            rate: 100.0 * first_rank.iter().filter(|&&r| r <= k).count() as f64 / probes.len().max(1) as f64,
        })
        .collect())
}

/// Closed-set identification: `galleries[0]` must hold every probe identity;
/// further manifests add distractor identities.
pub fn evaluate_identification(
    weights: &EmbeddingWeights,
    probe: &DatasetManifest,
    galleries: &[&DatasetManifest],
) -> Result<EvalReport> {
    if galleries.is_empty() {
        return Err(Error::Usage("at least one gallery manifest is required".into()));
    }
    let probes = embed_manifest(weights, probe)?;
    let mut gallery = Vec::new();
    for (src, g) in galleries.iter().enumerate() {
        for (id, v) in embed_manifest(weights, g)? {
            gallery.push(((src, id), v));
        }
    }
    let mut prov = vec![provenance(probe)];
    prov.extend(galleries.iter().map(|g| provenance(g)));
    Ok(EvalReport {
        identification: identification_rates(&probes, &gallery, &RANKS)?,
        probes: probes.len(),
        gallery_size: gallery.len(),
        provenance: prov,
        ..Default::default()
    })
}

/// Gallery (lowest impression of each identity) and probe (the rest) manifests.
pub fn split_gallery_probe(manifest: &DatasetManifest) -> (DatasetManifest, DatasetManifest) {
    let mut first: BTreeMap<u64, u64> = BTreeMap::new();
    for r in &manifest.records {
        let e = first.entry(r.id).or_insert(r.imp);
        *e = (*e).min(r.imp);
    }
    (
        manifest.filtered(|r| first[&r.id] == r.imp),
        manifest.filtered(|r| first[&r.id] != r.imp),
    )
}

/// Published verification results, TAR (%) at 0.01% FAR as mean and sd on
/// three benchmark databases. Not comparable with measured values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceTarRow {
    pub training: &'static str,
    pub sd4: (f64, f64),
    pub fvc2002_db1a: (f64, f64),
    pub fvc2004_db1a: (f64, f64),
}

pub fn reference_tar_rows() -> Vec<ReferenceTarRow> {
    let r = |training, a, b, c| ReferenceTarRow {
        training,
        sd4: a,
        fvc2002_db1a: b,
        fvc2004_db1a: c,
    };
    vec![
        r("rule-based synthetic only", (10.78, 0.88), (12.57, 3.08), (20.80, 0.48)),
        r("gan synthetic only", (52.65, 2.33), (59.59, 5.13), (22.35, 4.89)),
        r("real only", (73.37, 3.15), (79.68, 3.67), (65.99, 8.27)),
        r("real + rule-based synthetic", (54.70, 2.83), (56.68, 7.42), (62.68, 1.06)),
        r("real + gan synthetic", (87.03, 0.33), (89.74, 0.22), (90.22, 1.19)),
    ]
}

/// Published rank-1 identification rates (%): (real only, pretrained + finetuned).
pub const REFERENCE_RANK1: (f64, f64) = (85.90, 92.05);
/// Same, with the gallery augmented by 100k real fingers.
pub const REFERENCE_RANK1_AUGMENTED: (f64, f64) = (73.20, 86.80);

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<f32>) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn embedding_is_unit_norm_and_deterministic() {
        let w = EmbeddingWeights::new(&EmbeddingConfig::default(), DType::F32, &Device::Cpu).unwrap();
        let px: Vec<f32> = (0..512 * 512).map(|i| ((i % 512) as f32 / 9.0).sin() * 0.5 + 0.5).collect();
        let img = GrayFingerprint::new(512, 512, crate::domain::Ppi::P500, px).unwrap();
        let a = extract_embedding(&w, &img).unwrap();
        let b = extract_embedding(&w, &img).unwrap();
        assert_eq!(a.len(), EMBEDDING_DIM);
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn separable_scores_give_full_tar() {
        let gen = vec![0.9, 0.95, 0.8];
        let imp: Vec<f64> = (0..200).map(|i| i as f64 / 1000.0).collect();
        let t = tar_at_far(&gen, &imp, &[0.01, 0.1]).unwrap();
        assert!(t.iter().all(|p| p.tar == 100.0));
        assert!(matches!(tar_at_far(&gen, &imp, &[0.001]), Err(Error::Insufficient(_))));
    }

    #[test]
    fn exact_copies_rank_first_and_missing_mates_error() {
        let probes = vec![(1, unit(vec![1.0, 0.0])), (2, unit(vec![0.0, 1.0]))];
        let gallery = vec![((0, 1), unit(vec![1.0, 0.0])), ((0, 2), unit(vec![0.0, 1.0])), ((1, 7), unit(vec![1.0, 1.0]))];
        let r = identification_rates(&probes, &gallery, &RANKS).unwrap();
        assert_eq!(r[0].rate, 100.0);
        assert!(identification_rates(&[(9, unit(vec![1.0, 0.0]))], &gallery, &RANKS).is_err());
    }
}
