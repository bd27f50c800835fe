//! Texture renderer `G_r`: an encoder `R_E` and decoder `R_D` turn a 256×256
//! warped Master-Print into a 512×512 grayscale print, with `z_texture`
//! driving the instance-normalization scale and shift of each decoder layer.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binarizer::{BinarizerWeights, LabelledImage};
use crate::domain::{BinaryRidgeMap, GrayFingerprint, Ppi, Z_TEXTURE_DIM};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Conv2d, Linear, Mode, Store, TrainLog};

pub const KIND: &str = "texture_renderer";
pub const DISC_KIND: &str = "texture_discriminator";
/// Input side (250 ppi).
pub const IN_SIDE: usize = 256;
/// Output side (500 ppi).
pub const OUT_SIDE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RendererArch {
    /// Encoder channels at input and half resolution.
    pub enc_channels: [usize; 2],
    /// Decoder channels at half, input and output resolution.
    pub dec_channels: [usize; 3],
    pub texture_hidden: usize,
    /// Discriminator channels at 64, 32, 16 and 8 pixels.
    pub disc_channels: [usize; 4],
}

impl Default for RendererArch {
    fn default() -> Self {
        Self {
            enc_channels: [8, 16],
            dec_channels: [16, 12, 8],
            texture_hidden: 64,
            disc_channels: [16, 32, 48, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RendererConfig {
    pub arch: RendererArch,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    /// Input crop side during training; the output crop is twice this.
    pub crop: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub identity_weight: f64,
    pub adversarial_weight: f64,
    /// Input tile side for inference (0 renders the whole image at once).
    pub infer_tile: usize,
    pub infer_overlap: usize,
    pub eval_every: usize,
    pub eval_batch: usize,
    pub min_pairs: usize,
    pub checkpoint_every: usize,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            arch: RendererArch::default(),
            seed: 41,
            steps: 300,
            batch: 6,
            crop: 64,
            lr_g: 1e-3,
            lr_d: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            identity_weight: 10.0,
            adversarial_weight: 1.0,
            infer_tile: 0,
            infer_overlap: 0,
            eval_every: 25,
            eval_batch: 8,
            min_pairs: 200,
            checkpoint_every: 0,
        }
    }
}

impl RendererConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.crop.is_multiple_of(16) || self.crop > IN_SIDE || self.crop < 32 {
            return Err(Error::Config("renderer crop must be a multiple of 16 in [32, 256]".into()));
        }
        if self.infer_tile != 0
            && (!self.infer_tile.is_multiple_of(16) || self.infer_tile > IN_SIDE || self.infer_overlap >= self.infer_tile) {
                return Err(Error::Config(
                    "infer_tile must be a multiple of 16 up to 256 and larger than infer_overlap".into(),
                ));
            }
        Ok(())
    }
}

/// Texture of one render: either derived from `z_texture` or the neutral
/// style `γ = 1, β = 0` at every layer.
#[derive(Debug, Clone, Copy)]
pub enum Style<'a> {
    Texture(&'a [f32]),
    Neutral,
}

pub struct Renderer {
    e0: Conv2d,
    e1: Conv2d,
    e2: Conv2d,
    d0: Conv2d,
    d1: Conv2d,
    d2: Conv2d,
    out: Conv2d,
    t1: Linear,
    t2: Linear,
    dec_channels: [usize; 3],
}

/// Per-layer modulation `(γ, β)`, each `(B, C_l)`.
type Modulation = Vec<(Tensor, Tensor)>;

impl Renderer {
    fn new(store: &Store, arch: &RendererArch) -> Result<Self> {
        let root = store.root();
        let [e0c, e1c] = arch.enc_channels;
        let [d0c, d1c, d2c] = arch.dec_channels;
        let mod_dim = 2 * (d0c + d1c + d2c);
        Ok(Self {
            e0: Conv2d::new(&root.pp("re0"), 1, e0c, 3, 1, false)?,
            e1: Conv2d::new(&root.pp("re1"), e0c, e1c, 3, 2, false)?,
            e2: Conv2d::new(&root.pp("re2"), e1c, e1c, 3, 1, false)?,
            d0: Conv2d::new(&root.pp("rd0"), e1c, d0c, 3, 1, false)?,
            d1: Conv2d::new(&root.pp("rd1"), d0c + e0c, d1c, 3, 1, false)?,
            d2: Conv2d::new(&root.pp("rd2"), d1c, d2c, 3, 1, false)?,
            out: Conv2d::with_gain(&root.pp("rout"), d2c, 1, 3, 1, false, 1.0)?,
            t1: Linear::new(&root.pp("tex1"), Z_TEXTURE_DIM, arch.texture_hidden, false)?,
            t2: Linear::with_gain(&root.pp("tex2"), arch.texture_hidden, mod_dim, false, 0.5)?,
            dec_channels: arch.dec_channels,
        })
    }

    /// `(γ, β)` for each decoder layer from `z` `(B, 128)`.
    pub fn modulation(&self, z: &Tensor) -> Result<Modulation> {
        let h = nn::lrelu(&self.t1.forward(z, Mode::Eval)?)?;
        let m = self.t2.forward(&h, Mode::Eval)?;
        let mut out = Vec::new();
        let mut off = 0;
        for &c in &self.dec_channels {
            let g = (m.narrow(1, off, c)? + 1.0)?;
            let b = m.narrow(1, off + c, c)?;
            off += 2 * c;
            out.push((g, b));
        }
        Ok(out)
    }

    fn neutral(&self, b: usize, dtype: DType, dev: &Device) -> Result<Modulation> {
        self.dec_channels
            .iter()
            .map(|&c| Ok((Tensor::ones((b, c), dtype, dev)?, Tensor::zeros((b, c), dtype, dev)?)))
            .collect()
    }

    /// Grayscale `(B, 1, 2H, 2W)` in `(0, 1)` from binary maps `(B, 1, H, W)`.
    pub fn forward(&self, x: &Tensor, m: &Modulation) -> Result<Tensor> {
        let md = Mode::Eval;
        let step = |conv: &Conv2d, h: &Tensor, l: usize| -> Result<Tensor> {
            let f = nn::instance_norm(&conv.forward(h, md)?, 1e-5)?;
            nn::lrelu(&nn::modulate(&f, &m[l].0, &m[l].1)?)
        };
        let x = x.affine(2.0, -1.0)?;
        let f0 = nn::lrelu(&self.e0.forward(&x, md)?)?;
        let f1 = nn::lrelu(&self.e1.forward(&f0, md)?)?;
        let f1 = nn::lrelu(&self.e2.forward(&f1, md)?)?;
        let h = step(&self.d0, &f1, 0)?;
        let h = Tensor::cat(&[&nn::upsample2(&h)?, &f0], 1)?;
        let h = step(&self.d1, &h, 1)?;
        let h = step(&self.d2, &nn::upsample2(&h)?, 2)?;
        nn::sigmoid(&self.out.forward(&h, md)?)
    }
}

struct TextureDisc {
    input: Conv2d,
    downs: Vec<Conv2d>,
    head: Linear,
}

impl TextureDisc {
    fn new(store: &Store, c: [usize; 4]) -> Result<Self> {
        let root = store.root();
        let input = Conv2d::new(&root.pp("in"), 1, c[0], 3, 2, true)?;
        let downs = (0..3)
            .map(|i| Conv2d::new(&root.pp(format!("down{i}")), c[i], c[i + 1], 3, 2, true))
            .collect::<Result<_>>()?;
        let head = Linear::with_gain(&root.pp("head"), c[3], 1, true, 1.0)?;
        Ok(Self { input, downs, head })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = nn::lrelu(&self.input.forward(&x.affine(2.0, -1.0)?, mode)?)?;
        for d in &self.downs {
            h = nn::lrelu(&d.forward(&h, mode)?)?;
        }
        Ok(self.head.forward(&h.mean((2, 3))?, mode)?.squeeze(1)?)
    }
}

pub struct RendererWeights {
    pub arch: RendererArch,
    pub config_toml: String,
    pub infer_tile: usize,
    pub infer_overlap: usize,
    pub g_store: Store,
    pub renderer: Renderer,
    pub d_store: Option<Store>,
    disc: Option<TextureDisc>,
}

fn disc_name(name: &str) -> String {
    format!("{name}_disc")
}

impl RendererWeights {
    pub fn new(cfg: &RendererConfig, with_disc: bool, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let g_store = Store::new(cfg.seed, dtype, device);
        let renderer = Renderer::new(&g_store, &cfg.arch)?;
        let (d_store, disc) = if with_disc {
            let s = Store::new(cfg.seed ^ 0x7E7E_0D15, dtype, device);
            let d = TextureDisc::new(&s, cfg.arch.disc_channels)?;
            (Some(s), Some(d))
        } else {
            (None, None)
        };
        Ok(Self {
            arch: cfg.arch.clone(),
            config_toml: toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?,
            infer_tile: cfg.infer_tile,
            infer_overlap: cfg.infer_overlap,
            g_store,
            renderer,
            d_store,
            disc,
        })
    }

    pub fn architecture_digest(arch: &RendererArch) -> String {
        nn::arch_digest(KIND, arch)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let arch = Self::architecture_digest(&self.arch);
        nn::save_model(dir, name, &self.g_store, KIND, arch.clone(), self.config_toml.clone())?;
        if let Some(d) = &self.d_store {
            nn::save_model(dir, &disc_name(name), d, DISC_KIND, arch, self.config_toml.clone())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, name: &str, dtype: DType, device: &Device) -> Result<Self> {
        let meta = nn::read_meta(dir, name)?;
        let cfg: RendererConfig = toml::from_str(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
        let has_disc = nn::meta_path(dir, &disc_name(name)).is_file();
        let mut w = Self::new(&cfg, has_disc, dtype, device)?;
        let arch = Self::architecture_digest(&cfg.arch);
        nn::load_model(dir, name, &w.g_store, KIND, &arch)?;
        if let Some(d) = &w.d_store {
            nn::load_model(dir, &disc_name(name), d, DISC_KIND, &arch)?;
        }
        w.config_toml = meta.config;
        Ok(w)
    }

    fn style(&self, style: Style, b: usize) -> Result<Modulation> {
        let (dtype, dev) = (self.g_store.dtype(), self.g_store.device());
        match style {
            Style::Neutral => self.renderer.neutral(b, dtype, dev),
            Style::Texture(z) => {
                if z.len() != Z_TEXTURE_DIM {
                    return Err(shape_err(Z_TEXTURE_DIM, z.len()));
                }
                let z = Tensor::from_slice(z, (1, Z_TEXTURE_DIM), dev)?.to_dtype(dtype)?;
                let m = self.renderer.modulation(&z)?;
                m.into_iter()
                    .map(|(g, be)| Ok((g.broadcast_as((b, g.dim(1)?))?.contiguous()?, be.broadcast_as((b, be.dim(1)?))?.contiguous()?)))
                    .collect()
            }
        }
    }
}

pub fn render(weights: &RendererWeights, warped: &BinaryRidgeMap, z_texture: &[f32]) -> Result<GrayFingerprint> {
    render_with(weights, warped, Style::Texture(z_texture))
}

/// Start offsets of tiles of side `tile` covering `0..n` with at least `overlap` shared pixels.
fn tile_starts(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if tile >= n {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut v: Vec<usize> = (0..).map(|i| i * stride).take_while(|&s| s + tile < n).collect();
    v.push(n - tile);
    v
}

/// Blending weight along one axis of an output tile: a ramp over the overlap.
fn ramp(len: usize, overlap: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let d = i.min(len - 1 - i) as f32 + 0.5;
            if overlap == 0 {
                1.0
            } else {
                (d / overlap as f32).min(1.0)
            }
        })
        .collect()
}

pub fn render_with(weights: &RendererWeights, warped: &BinaryRidgeMap, style: Style) -> Result<GrayFingerprint> {
    if warped.width() != IN_SIDE || warped.height() != IN_SIDE {
        return Err(shape_err(
            format!("{IN_SIDE}x{IN_SIDE}"),
            format!("{}x{}", warped.width(), warped.height()),
        ));
    }
    let (dtype, dev) = (weights.g_store.dtype(), weights.g_store.device());
    let plane = warped.to_f32();
    let tile = if weights.infer_tile == 0 { IN_SIDE } else { weights.infer_tile };
    let starts = tile_starts(IN_SIDE, tile, weights.infer_overlap);
    let mut crops = Vec::new();
    let mut origins = Vec::new();
    for &y0 in &starts {
        for &x0 in &starts {
            let mut c = Vec::with_capacity(tile * tile);
            for y in y0..y0 + tile {
                c.extend_from_slice(&plane[y * IN_SIDE + x0..y * IN_SIDE + x0 + tile]);
            }
            crops.push(c);
            origins.push((x0, y0));
        }
    }
    let refs: Vec<&[f32]> = crops.iter().map(|c| c.as_slice()).collect();
    let x = nn::stack_planes(&refs, tile, tile, dtype, dev)?;
    let m = weights.style(style, refs.len())?;
    let out = weights.renderer.forward(&x, &m)?;
    let ot = 2 * tile;
    let wr = ramp(ot, 2 * weights.infer_overlap.min(tile));
    let mut acc = vec![0f32; OUT_SIDE * OUT_SIDE];
    let mut wsum = vec![0f32; OUT_SIDE * OUT_SIDE];
    for (i, &(x0, y0)) in origins.iter().enumerate() {
        let p = nn::plane_of(&out, i)?;
        for y in 0..ot {
            for x in 0..ot {
                let w = if starts.len() == 1 { 1.0 } else { wr[x] * wr[y] };
                let k = (2 * y0 + y) * OUT_SIDE + 2 * x0 + x;
                acc[k] += w * p[y * ot + x];
                wsum[k] += w;
            }
        }
    }
    let px = acc.iter().zip(&wsum).map(|(a, w)| a / w).collect();
    GrayFingerprint::from_clamped(OUT_SIDE, OUT_SIDE, Ppi::P500, px)
}

/// Number of distinct 8-bit gray levels present in an image.
pub fn gray_level_span(img: &GrayFingerprint) -> usize {
    let mut seen = [false; 256];
    for v in img.to_u8() {
        seen[v as usize] = true;
    }
    seen.iter().filter(|&&s| s).count()
}

pub struct RendererTraining {
    pub weights: RendererWeights,
    /// Columns: step, loss_adv, loss_identity, loss_d, d_accuracy, eval_identity.
    pub log: TrainLog,
    pub initial_identity: f64,
    pub final_identity: f64,
}

/// Paired crops: binary input at 256 and the matching grayscale window at 512.
fn crop_pair(item: &LabelledImage, low: &BinaryRidgeMap, crop: usize, rng: &mut impl Rng) -> (Vec<f32>, Vec<f32>) {
    let mut best = (0, 0);
    for attempt in 0..6 {
        let x0 = rng.random_range(0..=IN_SIDE - crop);
        let y0 = rng.random_range(0..=IN_SIDE - crop);
        best = (x0, y0);
        let mut ones = 0;
        for y in (y0..y0 + crop).step_by(4) {
            for x in (x0..x0 + crop).step_by(4) {
                ones += low.get(x, y) as usize;
            }
        }
        if ones * 16 * 5 >= crop * crop || attempt == 5 {
            break;
        }
    }
    let (x0, y0) = best;
    let mut b = Vec::with_capacity(crop * crop);
    for y in y0..y0 + crop {
        for x in x0..x0 + crop {
            b.push(low.get(x, y) as f32);
        }
    }
    let oc = 2 * crop;
    let mut g = Vec::with_capacity(oc * oc);
    for y in 2 * y0..2 * y0 + oc {
        for x in 2 * x0..2 * x0 + oc {
            g.push(item.gray.get(x, y));
        }
    }
    (b, g)
}

struct Batch {
    binary: Tensor,
    gray: Tensor,
}

fn batch(
    data: &[LabelledImage],
    low: &[BinaryRidgeMap],
    n: usize,
    crop: usize,
    rng: &mut impl Rng,
    dtype: DType,
    dev: &Device,
) -> Result<Batch> {
    let mut bs = Vec::new();
    let mut gs = Vec::new();
    for _ in 0..n {
        let i = rng.random_range(0..data.len());
        let (b, g) = crop_pair(&data[i], &low[i], crop, rng);
        bs.push(b);
        gs.push(g);
    }
    let br: Vec<&[f32]> = bs.iter().map(|c| c.as_slice()).collect();
    let gr: Vec<&[f32]> = gs.iter().map(|c| c.as_slice()).collect();
    Ok(Batch {
        binary: nn::stack_planes(&br, crop, crop, dtype, dev)?,
        gray: nn::stack_planes(&gr, 2 * crop, 2 * crop, dtype, dev)?,
    })
}

fn z_batch(b: usize, rng: &mut impl Rng, dtype: DType, dev: &Device) -> Result<Tensor> {
    let v: Vec<f32> = (0..b * Z_TEXTURE_DIM).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (b, Z_TEXTURE_DIM), dev)?.to_dtype(dtype)?)
}

/// `|R(I_r) − I_w|²` with `R(I_r)` pooled to the input resolution.
pub fn identity_loss(binarizer: &BinarizerWeights, rendered: &Tensor, warped: &Tensor) -> Result<Tensor> {
    let r = nn::avg_pool2(&binarizer.forward(rendered)?)?;
    Ok((r - warped)?.sqr()?.mean_all()?)
}

/// Trains `G_r` on grayscale prints paired with their oracle binary maps
/// (512×512); the binarizer stays frozen.
pub fn train_renderer(
    data: &[LabelledImage],
    binarizer: &BinarizerWeights,
    cfg: &RendererConfig,
    checkpoints: Option<PathBuf>,
    device: &Device,
) -> Result<RendererTraining> {
    cfg.validate()?;
    if data.len() < cfg.min_pairs {
        return Err(Error::Insufficient(format!(
            "{} renderer pairs, need at least {}",
            data.len(),
            cfg.min_pairs
        )));
    }
    for d in data {
        if d.gray.width() != OUT_SIDE || d.gray.height() != OUT_SIDE || d.label.width() != OUT_SIDE {
            return Err(shape_err(format!("{OUT_SIDE}x{OUT_SIDE}"), format!("{}x{}", d.gray.width(), d.gray.height())));
        }
    }
    let dtype = DType::F32;
    let binarizer = binarizer.to_dtype(dtype)?;
    let low: Vec<BinaryRidgeMap> = data.iter().map(|d| d.label.downsample2()).collect();
    let w = RendererWeights::new(cfg, true, dtype, device)?;
    let mut opt_g = nn::adam(w.g_store.trainable(""), cfg.lr_g, cfg.beta1, cfg.beta2)?;
    let mut opt_d = nn::adam(w.d_store.as_ref().expect("discriminator").trainable(""), cfg.lr_d, cfg.beta1, cfg.beta2)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut eval_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let ev = batch(data, &low, cfg.eval_batch, cfg.crop, &mut eval_rng, dtype, device)?;
    let ev_z = z_batch(cfg.eval_batch, &mut eval_rng, dtype, device)?;
    let eval_identity = |w: &RendererWeights| -> Result<(f64, Tensor)> {
        let m = w.renderer.modulation(&ev_z)?;
        let out = w.renderer.forward(&ev.binary, &m)?;
        Ok((nn::scalar(&identity_loss(&binarizer, &out, &ev.binary)?)?, out))
    };
    let (initial_identity, _) = eval_identity(&w)?;
    let mut log = TrainLog::new(&["step", "loss_adv", "loss_identity", "loss_d", "d_accuracy", "eval_identity"]);
    let mut final_identity = initial_identity;
    for step in 1..=cfg.steps {
        let d = w.disc.as_ref().expect("discriminator");
        let b = batch(data, &low, cfg.batch, cfg.crop, &mut rng, dtype, device)?;
        let z = z_batch(cfg.batch, &mut rng, dtype, device)?;
        let m = w.renderer.modulation(&z)?;
        let fake = w.renderer.forward(&b.binary, &m)?;

        let loss_d = nn::hinge_d(&d.forward(&b.gray, Mode::Train)?, &d.forward(&fake.detach(), Mode::Train)?)?;
        let ld = nn::scalar(&loss_d)?;
        nn::check_finite(step, "loss_d", ld)?;
        nn::step(&mut opt_d, &loss_d)?;

        let adv = nn::hinge_g(&d.forward(&fake, Mode::Train)?)?;
        let idl = identity_loss(&binarizer, &fake, &b.binary)?;
        let loss_g = ((&adv * cfg.adversarial_weight)? + (&idl * cfg.identity_weight)?)?;
        let (la, li) = (nn::scalar(&adv)?, nn::scalar(&idl)?);
        nn::check_finite(step, "loss_adv", la)?;
        nn::check_finite(step, "loss_identity", li)?;
        nn::step(&mut opt_g, &loss_g)?;

        let (acc, eid) = if step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            let (eid, out) = eval_identity(&w)?;
            let acc = nn::d_accuracy(&d.forward(&ev.gray, Mode::Eval)?, &d.forward(&out, Mode::Eval)?)?;
            final_identity = eid;
            info!("renderer step {step}: adv {la:.4} identity {li:.4} loss_d {ld:.4} d_acc {acc:.3} eval_identity {eid:.4}");
            (acc, eid)
        } else {
            (f64::NAN, f64::NAN)
        };
        log.push(vec![step as f64, la, li, ld, acc, eid]);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(base) = &checkpoints {
                let dir = base.join(format!("step_{step:06}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                w.save(&dir, "renderer")?;
            }
        }
    }
    Ok(RendererTraining {
        weights: w,
        log,
        initial_identity,
        final_identity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sample_noise, NoiseKind};

    fn disc() -> BinaryRidgeMap {
        let mut m = BinaryRidgeMap::zeros(IN_SIDE, IN_SIDE, Ppi::P250);
        for y in 40..220 {
            for x in 50..200 {
                m.set(x, y, (x + y) % 7 < 3);
            }
        }
        m
    }

    fn weights() -> RendererWeights {
        RendererWeights::new(&RendererConfig::default(), false, DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn render_is_deterministic_and_texture_dependent() {
        let w = weights();
        let z1 = sample_noise(NoiseKind::Texture, 1);
        let z2 = sample_noise(NoiseKind::Texture, 2);
        let a = render(&w, &disc(), &z1).unwrap();
        let b = render(&w, &disc(), &z1).unwrap();
        let c = render(&w, &disc(), &z2).unwrap();
        assert_eq!(a.width(), OUT_SIDE);
        assert_eq!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn neutral_style_renders() {
        let w = weights();
        let a = render_with(&w, &disc(), Style::Neutral).unwrap();
        let b = render_with(&w, &disc(), Style::Neutral).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let w = weights();
        let small = BinaryRidgeMap::zeros(128, 128, Ppi::P250);
        assert!(render(&w, &small, &sample_noise(NoiseKind::Texture, 1)).is_err());
        assert!(render(&w, &disc(), &[0.0; 3]).is_err());
    }

    #[test]
    fn tiles_cover_the_frame() {
        let s = tile_starts(256, 64, 16);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap() + 64, 256);
        assert!(s.windows(2).all(|p| p[1] - p[0] <= 48));
    }
}
