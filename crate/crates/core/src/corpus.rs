//! Procedural stand-in corpus: orientation-field driven Gabor ridge synthesis
//! with per-impression geometric and photometric perturbations.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::io::sha256_hex;
use crate::domain::noise::{derive_seed, tag};
use crate::domain::{write_manifest, DatasetManifest, GrayFingerprint, ManifestRecord, Ppi};
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, GaborBank, Plane};
use crate::tps::{grid_points, tps_solve, warp_cpu, DEFAULT_GRID};

pub const SIDE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Ridge period range in 500-ppi pixels.
    pub ridge_period: [f64; 2],
    pub rotation_deg: f64,
    pub translation_px: f64,
    pub tps_jitter_px: f64,
    pub gamma: [f64; 2],
    pub noise_sigma_max: f64,
    /// Contact ellipse radii as a fraction of the finger ellipse radii.
    pub contact_scale: [f64; 2],
    /// Maximum offset of the contact ellipse centre, pixels.
    pub contact_shift_px: f64,
    pub gabor_iterations: usize,
    pub orientation_bins: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            ridge_period: [7.0, 12.0],
            rotation_deg: 15.0,
            translation_px: 20.0,
            tps_jitter_px: 8.0,
            gamma: [0.7, 1.4],
            noise_sigma_max: 0.05,
            contact_scale: [0.75, 1.0],
            contact_shift_px: 30.0,
            gabor_iterations: 7,
            orientation_bins: 16,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.ridge_period;
        if !(lo >= 4.0 && hi >= lo) {
            return Err(Error::Config(format!("ridge_period range {lo}..{hi} invalid")));
        }
        if self.gamma[0] <= 0.0 || self.gamma[1] < self.gamma[0] {
            return Err(Error::Config("gamma range invalid".into()));
        }
        if self.contact_scale[0] <= 0.0 || self.contact_scale[1] < self.contact_scale[0] {
            return Err(Error::Config("contact_scale range invalid".into()));
        }
        if self.orientation_bins < 4 {
            return Err(Error::Config("orientation_bins must be >= 4".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(format!("toy-corpus-v1 {}", serde_json::to_string(self).unwrap()).as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternClass {
    Arch,
    Loop,
    Whorl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Signed normalized radius: < 1 inside.
    fn radius(&self, x: f64, y: f64) -> f64 {
        (((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt()
    }

    /// Smooth inside-weight with an edge of ~`soft` pixels.
    fn weight(&self, x: f64, y: f64, soft: f64) -> f64 {
        let r = self.radius(x, y);
        let d = (1.0 - r) * self.rx.min(self.ry) / soft;
        (0.5 + 0.5 * d).clamp(0.0, 1.0)
    }
}

/// Construction record of one procedural finger (512×512, 500 ppi coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralFingerSpec {
    pub seed: u64,
    pub pattern_class: PatternClass,
    pub cores: Vec<[f64; 2]>,
    pub deltas: Vec<[f64; 2]>,
    pub ridge_period: f64,
    /// Global rotation of the orientation field, radians.
    pub field_rotation: f64,
    /// Arch curvature (only used by arches).
    pub arch_curvature: f64,
    pub foreground: Ellipse,
}

impl ProceduralFingerSpec {
    pub fn from_seed(seed: u64, cfg: &CorpusConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let pattern_class = match rng.random_range(0..3u32) {
            0 => PatternClass::Arch,
            1 => PatternClass::Loop,
            _ => PatternClass::Whorl,
        };
        let ridge_period = rng.random_range(cfg.ridge_period[0]..=cfg.ridge_period[1]);
        let cx = 256.0 + rng.random_range(-25.0..25.0);
        let cy = 230.0 + rng.random_range(-25.0..25.0);
        let (cores, deltas) = match pattern_class {
            PatternClass::Arch => (vec![], vec![]),
            PatternClass::Loop => {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (
                    vec![[cx, cy]],
                    vec![[
                        cx + side * rng.random_range(60.0..110.0),
                        cy + rng.random_range(110.0..160.0),
                    ]],
                )
            }
            PatternClass::Whorl => {
                let gap = rng.random_range(20.0..45.0);
                let dy = rng.random_range(120.0..160.0);
                (
                    vec![[cx - gap * 0.3, cy - gap / 2.0], [cx + gap * 0.3, cy + gap / 2.0]],
                    vec![
                        [cx - rng.random_range(110.0..150.0), cy + dy],
                        [cx + rng.random_range(110.0..150.0), cy + dy],
                    ],
                )
            }
        };
        let foreground = Ellipse {
            cx: 256.0 + rng.random_range(-10.0..10.0),
            cy: 256.0 + rng.random_range(-10.0..10.0),
            rx: rng.random_range(190.0..230.0),
            ry: rng.random_range(225.0..250.0),
        };
        Self {
            seed,
            pattern_class,
            cores,
            deltas,
            ridge_period,
            field_rotation: rng.random_range(-0.15..0.15),
            arch_curvature: rng.random_range(0.0025..0.0055),
            foreground,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |p: &[f64; 2]| (0.0..SIDE as f64).contains(&p[0]) && (0.0..SIDE as f64).contains(&p[1]);
        if !self.cores.iter().chain(&self.deltas).all(inside) {
            return Err(Error::InvalidValue("singularity outside image bounds".into()));
        }
        if !(4.0..=32.0).contains(&self.ridge_period) {
            return Err(Error::InvalidValue(format!("ridge period {} out of range", self.ridge_period)));
        }
        if self.pattern_class == PatternClass::Arch && !self.deltas.is_empty() {
            return Err(Error::InvalidValue("arches carry no deltas".into()));
        }
        Ok(())
    }

    /// Ridge direction at `(x, y)` (zero-pole model; smooth arch model for arches).
    pub fn orientation(&self, x: f64, y: f64) -> f64 {
        let base = match self.pattern_class {
            PatternClass::Arch => {
                let dx = x - self.foreground.cx;
                let dy = (y - self.foreground.cy + 60.0) / 220.0;
                (2.0 * self.arch_curvature * dx * (-dy * dy).exp()).atan()
            }
            _ => {
                let mut t = 0.0;
                for c in &self.cores {
                    t += 0.5 * (y - c[1]).atan2(x - c[0]);
                }
                for d in &self.deltas {
                    t -= 0.5 * (y - d[1]).atan2(x - d[0]);
                }
                t
            }
        };
        (base + self.field_rotation).rem_euclid(PI)
    }
}

fn ridge_field(spec: &ProceduralFingerSpec, cfg: &CorpusConfig) -> Plane {
    // Synthesized at half resolution, then upsampled; halves the period so the
    // 512-px output keeps `spec.ridge_period`.
    let half = SIDE / 2;
    let mut theta = vec![0.0f32; half * half];
    for y in 0..half {
        for x in 0..half {
            theta[y * half + x] = spec.orientation(2.0 * x as f64 + 0.5, 2.0 * y as f64 + 0.5) as f32;
        }
    }
    let theta = Plane::new(half, half, theta);
    let bank = GaborBank::new(half, half, (spec.ridge_period / 2.0) as f32, cfg.orientation_bins);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, &[0x5EED]));
    let mut field = Plane::new(
        half,
        half,
        (0..half * half).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    );
    for _ in 0..cfg.gabor_iterations {
        let f = bank.apply(&field, &theta);
        let sd = (f.data.iter().map(|v| v * v).sum::<f32>() / f.data.len() as f32).sqrt().max(1e-6);
        field = f.map(|v| (1.8 * v / sd).clamp(-1.0, 1.0));
    }
    field.upsample2()
}

/// Ink density (1 = ridge ink) over the whole 512×512 field, ignoring the finger outline.
fn ink_full(spec: &ProceduralFingerSpec, cfg: &CorpusConfig) -> Plane {
    let field = ridge_field(spec, cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, &[0xC0]));
    let pressure = Plane::new(
        16,
        16,
        (0..256).map(|_| rng.random_range(0.75f32..1.0)).collect(),
    );
    let pressure = gaussian_blur(&pressure, 1.5);
    let mut ink = field.map(|v| 0.5 + 0.5 * (2.2 * v).tanh());
    for y in 0..SIDE {
        for x in 0..SIDE {
            ink.data[y * SIDE + x] *= pressure.sample(x as f32 / 32.0 - 0.5, y as f32 / 32.0 - 0.5);
        }
    }
    ink
}

fn ink_to_gray(ink: &Plane) -> Result<GrayFingerprint> {
    let data = ink.data.iter().map(|v| (0.95 - 0.8 * v).clamp(0.0, 1.0)).collect();
    GrayFingerprint::new_pipeline(SIDE, SIDE, Ppi::P500, data)
}

/// Ridge pattern over the full frame without the finger outline; used as the
/// uncropped anchor of same-finger pairs.
pub fn synth_full_field(spec: &ProceduralFingerSpec, cfg: &CorpusConfig) -> Result<GrayFingerprint> {
    spec.validate()?;
    ink_to_gray(&ink_full(spec, cfg))
}

/// Canonical 512×512 500-ppi print of a procedural finger.
pub fn synth_procedural_print(spec: &ProceduralFingerSpec, cfg: &CorpusConfig) -> Result<GrayFingerprint> {
    spec.validate()?;
    ink_to_gray(&canonical_ink(spec, cfg))
}

/// Logged perturbation of one impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionParams {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    /// Jitter of the 4×4 control grid, pixels.
    pub jitter: Vec<[f64; 2]>,
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Contact region; `None` keeps the whole print.
    pub contact: Option<Ellipse>,
    pub noise_seed: u64,
}

impl ImpressionParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
            jitter: vec![[0.0, 0.0]; DEFAULT_GRID * DEFAULT_GRID],
            gamma: 1.0,
            noise_sigma: 0.0,
            contact: None,
            noise_seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.translation == [0.0, 0.0]
            && self.jitter.iter().all(|j| *j == [0.0, 0.0])
            && self.gamma == 1.0
            && self.noise_sigma == 0.0
            && self.contact.is_none()
    }

    pub fn sample(spec: &ProceduralFingerSpec, impression_seed: u64, cfg: &CorpusConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(impression_seed);
        let rotation_deg = rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg);
        let translation = [
            rng.random_range(-cfg.translation_px..=cfg.translation_px),
            rng.random_range(-cfg.translation_px..=cfg.translation_px),
        ];
        let jitter = (0..DEFAULT_GRID * DEFAULT_GRID)
            .map(|_| {
                let r = cfg.tps_jitter_px * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..2.0 * PI);
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let gamma = rng.random_range(cfg.gamma[0]..=cfg.gamma[1]);
        let noise_sigma = rng.random_range(0.0..=cfg.noise_sigma_max);
        let f = spec.foreground;
        let contact = Some(Ellipse {
            cx: f.cx + rng.random_range(-cfg.contact_shift_px..=cfg.contact_shift_px),
            cy: f.cy + rng.random_range(-cfg.contact_shift_px..=cfg.contact_shift_px),
            rx: f.rx * rng.random_range(cfg.contact_scale[0]..=cfg.contact_scale[1]),
            ry: f.ry * rng.random_range(cfg.contact_scale[0]..=cfg.contact_scale[1]),
        });
        let noise_seed = rng.random();
        Self {
            rotation_deg,
            translation,
            jitter,
            gamma,
            noise_sigma,
            contact,
            noise_seed,
        }
    }

    /// Backward map (output → canonical print coordinates) of the geometric part.
    pub fn warp(&self) -> Result<crate::tps::TpsParams> {
        let src = grid_points(SIDE, SIDE, DEFAULT_GRID);
        let c = SIDE as f64 / 2.0 - 0.5;
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        let dst: Vec<[f64; 2]> = src
            .iter()
            .zip(&self.jitter)
            .map(|(p, j)| {
                let (dx, dy) = (p[0] - c, p[1] - c);
                [
                    c + co * dx - s * dy + self.translation[0] + j[0],
                    c + s * dx + co * dy + self.translation[1] + j[1],
                ]
            })
            .collect();
        let mut p = tps_solve(&src, &dst, 0.0)?;
        p.frame = Some([SIDE, SIDE]);
        Ok(p)
    }
}

fn apply_impression(canonical_ink: &Plane, params: &ImpressionParams) -> Result<GrayFingerprint> {
    if params.is_identity() {
        return ink_to_gray(canonical_ink);
    }
    let src: Vec<f64> = canonical_ink.data.iter().map(|&v| v as f64).collect();
    let warped = warp_cpu(&src, SIDE, SIDE, &params.warp()?, 0.0);
    let mut ink = Plane::new(SIDE, SIDE, warped.iter().map(|&v| v as f32).collect());
    if let Some(contact) = params.contact {
        for y in 0..SIDE {
            for x in 0..SIDE {
                ink.data[y * SIDE + x] *= contact.weight(x as f64, y as f64, 5.0) as f32;
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(params.noise_seed);
    let data = ink
        .data
        .iter()
        .map(|&v| {
            let mut g = (0.95 - 0.8 * v as f64).clamp(0.0, 1.0);
            if params.gamma != 1.0 {
                g = g.powf(params.gamma);
            }
            if params.noise_sigma > 0.0 {
                g += params.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            g.clamp(0.0, 1.0) as f32
        })
        .collect();
    GrayFingerprint::new_pipeline(SIDE, SIDE, Ppi::P500, data)
}

fn canonical_ink(spec: &ProceduralFingerSpec, cfg: &CorpusConfig) -> Plane {
    let mut ink = ink_full(spec, cfg);
    for y in 0..SIDE {
        for x in 0..SIDE {
            ink.data[y * SIDE + x] *= spec.foreground.weight(x as f64, y as f64, 6.0) as f32;
        }
    }
    ink
}

/// One impression of a procedural finger, with the sampled perturbation.
pub fn synth_impression(
    spec: &ProceduralFingerSpec,
    impression_seed: u64,
    cfg: &CorpusConfig,
) -> Result<(GrayFingerprint, ImpressionParams)> {
    spec.validate()?;
    let params = ImpressionParams::sample(spec, impression_seed, cfg);
    Ok((apply_impression(&canonical_ink(spec, cfg), &params)?, params))
}

/// Impression under explicitly given perturbation parameters.
pub fn synth_impression_with(
    spec: &ProceduralFingerSpec,
    params: &ImpressionParams,
    cfg: &CorpusConfig,
) -> Result<GrayFingerprint> {
    spec.validate()?;
    apply_impression(&canonical_ink(spec, cfg), params)
}

pub fn finger_seed(seed: u64, finger: u64) -> u64 {
    derive_seed(seed, &[tag::FINGER, finger])
}

pub fn impression_seed(seed: u64, finger: u64, imp: u64) -> u64 {
    derive_seed(seed, &[tag::IMPRESSION, finger, imp])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FingerLog {
    id: u64,
    spec: ProceduralFingerSpec,
    impressions: Vec<ImpressionParams>,
}

/// Writes `n_fingers × n_impressions` PNGs under `out_dir/id_{:06}/imp_{:02}.png`
/// plus `manifest.jsonl`, `fingers.jsonl` (construction records) and `corpus.toml`.
pub fn build_corpus(
    n_fingers: usize,
    n_impressions: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &CorpusConfig,
) -> Result<DatasetManifest> {
    if n_fingers == 0 || n_impressions == 0 {
        return Err(Error::InvalidValue("n_fingers and n_impressions must be >= 1".into()));
    }
    cfg.validate()?;
    let manifest_path = out_dir.join("manifest.jsonl");
    if manifest_path.exists() {
        return Err(Error::PathCollision(manifest_path));
    }
    for id in 0..n_fingers {
        for imp in 0..n_impressions {
            let p = out_dir.join(record_path(id as u64, imp as u64));
            if p.exists() {
                return Err(Error::PathCollision(p));
            }
        }
    }
    let per_finger: Vec<Result<(Vec<ManifestRecord>, FingerLog)>> = (0..n_fingers as u64)
        .into_par_iter()
        .map(|id| {
            let fseed = finger_seed(seed, id);
            let spec = ProceduralFingerSpec::from_seed(fseed, cfg);
            let ink = canonical_ink(&spec, cfg);
            let mut records = Vec::with_capacity(n_impressions);
            let mut logs = Vec::with_capacity(n_impressions);
            for imp in 0..n_impressions as u64 {
                let iseed = impression_seed(seed, id, imp);
                let params = ImpressionParams::sample(&spec, iseed, cfg);
                let img = apply_impression(&ink, &params)?;
                let rel = record_path(id, imp);
                let bytes = img.write_png(&out_dir.join(&rel))?;
                records.push(ManifestRecord {
                    id,
                    imp,
                    seed_id: fseed,
                    seed_distort: iseed,
                    seed_texture: params.noise_seed,
                    path: rel,
                    sha256: sha256_hex(&bytes),
                });
                logs.push(params);
            }
            Ok((records, FingerLog { id, spec, impressions: logs }))
        })
        .collect();
    let mut manifest = DatasetManifest::new(out_dir, cfg.digest());
    let mut finger_lines = String::new();
    for r in per_finger {
        let (records, log) = r?;
        manifest.records.extend(records);
        finger_lines.push_str(&serde_json::to_string(&log)?);
        finger_lines.push('\n');
    }
    write_manifest(&manifest, &manifest_path)?;
    let fl = out_dir.join("fingers.jsonl");
    std::fs::write(&fl, finger_lines).map_err(|e| Error::io(&fl, e))?;
    let ct = out_dir.join("corpus.toml");
    let cfg_text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&ct, cfg_text).map_err(|e| Error::io(&ct, e))?;
    Ok(manifest)
}

pub fn record_path(id: u64, imp: u64) -> String {
    format!("id_{id:06}/imp_{imp:02}.png")
}

/// Reads the construction records written next to a corpus manifest, if present.
pub fn read_finger_specs(corpus_dir: &Path) -> Result<Vec<(u64, ProceduralFingerSpec)>> {
    let p = corpus_dir.join("fingers.jsonl");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let log: FingerLog = serde_json::from_str(l)?;
            Ok((log.id, log.spec))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_is_deterministic_and_valid() {
        let cfg = CorpusConfig::default();
        for s in 0..30 {
            let a = ProceduralFingerSpec::from_seed(s, &cfg);
            assert_eq!(a, ProceduralFingerSpec::from_seed(s, &cfg));
            a.validate().unwrap();
            assert!((7.0..=12.0).contains(&a.ridge_period));
            if a.pattern_class == PatternClass::Arch {
                assert!(a.deltas.is_empty() && a.cores.is_empty());
            }
        }
    }

    #[test]
    fn identity_impression_equals_canonical() {
        let cfg = CorpusConfig::default();
        let spec = ProceduralFingerSpec::from_seed(3, &cfg);
        let base = synth_procedural_print(&spec, &cfg).unwrap();
        let imp = synth_impression_with(&spec, &ImpressionParams::identity(), &cfg).unwrap();
        assert_eq!(base, imp);
    }

    #[test]
    fn impression_is_deterministic() {
        let cfg = CorpusConfig::default();
        let spec = ProceduralFingerSpec::from_seed(5, &cfg);
        let (a, pa) = synth_impression(&spec, 77, &cfg).unwrap();
        let (b, pb) = synth_impression(&spec, 77, &cfg).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
        let (c, _) = synth_impression(&spec, 78, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_counts_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_corpus(0, 1, 1, dir.path(), &CorpusConfig::default()).is_err());
    }
}
