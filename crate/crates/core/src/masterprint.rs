//! Identity generator `G_I`: a spatial latent decoded by residual upsampling
//! blocks into a seed map and an orientation field, followed by a fixed
//! orientation-steered Gabor iteration that renders ridges. The output is a
//! 256×256 binary Master-Print, trained adversarially against binarized
//! corpus prints.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryRidgeMap, Ppi, Z_ID_DIM};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Conv2d, Linear, Mode, Store, TrainLog};

pub const KIND: &str = "masterprint_generator";
pub const DISC_KIND: &str = "masterprint_discriminator";
/// Master-Print side length.
pub const SIDE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterprintArch {
    /// `z_ID` is reshaped to `(latent_channels, 16, 16)`.
    pub latent_channels: usize,
    /// Generator channels at 16, 32, 64, 128 and 256 pixels.
    pub gen_channels: [usize; 5],
    /// Discriminator channels at 64, 32, 16, 8 and 4 pixels.
    pub disc_channels: [usize; 5],
    /// Ridge period of the Gabor bank, pixels at 250 ppi.
    pub ridge_period: f64,
    pub ridge_kernel: usize,
    pub orientation_bins: usize,
    pub ridge_iterations: usize,
}

impl Default for MasterprintArch {
    fn default() -> Self {
        Self {
            latent_channels: 2,
            gen_channels: [32, 32, 16, 16, 8],
            disc_channels: [16, 32, 48, 64, 64],
            ridge_period: 4.75,
            ridge_kernel: 11,
            orientation_bins: 12,
            ridge_iterations: 3,
        }
    }
}

impl MasterprintArch {
    pub fn latent_side(&self) -> usize {
        SIDE / 16
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.latent_channels * self.latent_side() * self.latent_side() != Z_ID_DIM {
            return Err(Error::Config(format!(
                "latent_channels × 16 × 16 must equal {Z_ID_DIM}"
            )));
        }
        if self.gen_channels.contains(&0) || self.disc_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.ridge_period.is_nan() || self.ridge_period < 2.0 || self.ridge_kernel.is_multiple_of(2) || self.orientation_bins < 4 {
            return Err(Error::Config(
                "ridge_period must be at least 2, ridge_kernel odd and orientation_bins at least 4".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterprintConfig {
    pub arch: MasterprintArch,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    /// Latent cells per side of a training crop.
    pub latent_crop: usize,
    /// Side of the crop the discriminator sees.
    pub disc_crop: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Temperature of the sigmoid whose gradient stands in for thresholding.
    pub st_temperature: f64,
    /// Weight of the discriminator feature-matching term in the generator loss.
    pub feature_matching: f64,
    /// Initial standard deviation of Gaussian noise added to every
    /// discriminator input, decayed linearly to zero over training.
    pub instance_noise: f64,
    /// Steps between evaluations on the fixed real/fake batch.
    pub eval_every: usize,
    pub eval_batch: usize,
    /// Steps between checkpoints (0 disables).
    pub checkpoint_every: usize,
}

impl Default for MasterprintConfig {
    fn default() -> Self {
        Self {
            arch: MasterprintArch::default(),
            seed: 21,
            steps: 150,
            batch: 8,
            latent_crop: 6,
            disc_crop: 64,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            st_temperature: 4.0,
            feature_matching: 1.0,
            instance_noise: 0.3,
            eval_every: 25,
            eval_batch: 32,
            checkpoint_every: 0,
        }
    }
}

impl MasterprintConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let finite = [self.st_temperature, self.feature_matching, self.instance_noise]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.st_temperature <= 0.0 || self.feature_matching < 0.0 || self.instance_noise < 0.0 {
            return Err(Error::Config(
                "st_temperature must be positive; feature_matching and instance_noise non-negative".into(),
            ));
        }
        if self.batch < 8 {
            return Err(Error::Config("masterprint batch must be at least 8".into()));
        }
        if self.latent_crop * 16 < self.disc_crop || !self.disc_crop.is_multiple_of(16) || self.disc_crop > SIDE {
            return Err(Error::Config(
                "disc_crop must be a multiple of 16 that fits inside latent_crop × 16".into(),
            ));
        }
        Ok(())
    }
}

struct ResUp {
    c1: Conv2d,
    c2: Conv2d,
    skip: Conv2d,
}

impl ResUp {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let u = nn::upsample2(x)?;
        let h = nn::lrelu(&nn::pixel_norm(&self.c1.forward(&u, mode)?)?)?;
        let h = self.c2.forward(&h, mode)?;
        let s = self.skip.forward(&u, mode)?;
        nn::lrelu(&nn::pixel_norm(&(h + s)?)?)
    }
}

pub struct Generator {
    input: Conv2d,
    blocks: Vec<ResUp>,
    out: Conv2d,
    orient: Conv2d,
    /// `(bins, 1, k, k)` zero-mean, unit-L1 even Gabor kernels.
    bank: Tensor,
    /// `(bins, 2, 1, 1)` doubled-angle unit vectors of the bank orientations.
    bank_dirs: Tensor,
    iterations: usize,
}

const RIDGE_GAIN: f64 = 3.0;
const OUTPUT_GAIN: f64 = 4.0;

fn gabor_bank(arch: &MasterprintArch) -> (Vec<f32>, Vec<f32>) {
    let k = arch.ridge_kernel;
    let r = (k / 2) as f64;
    let p = arch.ridge_period;
    let (sa, sc) = (0.75 * p, 0.45 * p);
    let mut bank = Vec::with_capacity(arch.orientation_bins * k * k);
    let mut dirs = Vec::with_capacity(2 * arch.orientation_bins);
    for b in 0..arch.orientation_bins {
        let t = b as f64 * std::f64::consts::PI / arch.orientation_bins as f64;
        let mut g: Vec<f64> = (0..k * k)
            .map(|i| {
                let (u, v) = ((i % k) as f64 - r, (i / k) as f64 - r);
                let along = u * t.cos() + v * t.sin();
                let across = -u * t.sin() + v * t.cos();
                (-(along * along) / (2.0 * sa * sa) - (across * across) / (2.0 * sc * sc)).exp()
                    * (2.0 * std::f64::consts::PI * across / p).cos()
            })
            .collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        g.iter_mut().for_each(|x| *x -= mean);
        let l1: f64 = g.iter().map(|x| x.abs()).sum();
        bank.extend(g.iter().map(|x| (x / l1) as f32));
        dirs.extend([(2.0 * t).cos() as f32, (2.0 * t).sin() as f32]);
    }
    (bank, dirs)
}

impl Generator {
    fn new(store: &Store, arch: &MasterprintArch) -> Result<Self> {
        let root = store.root();
        let c = arch.gen_channels;
        let input = Conv2d::new(&root.pp("in"), arch.latent_channels, c[0], 3, 1, false)?;
        let mut blocks = Vec::new();
        for i in 0..4 {
            let s = root.pp(format!("up{i}"));
            blocks.push(ResUp {
                c1: Conv2d::new(&s.pp("c1"), c[i], c[i + 1], 3, 1, false)?,
                c2: Conv2d::new(&s.pp("c2"), c[i + 1], c[i + 1], 3, 1, false)?,
                skip: Conv2d::with_gain(&s.pp("skip"), c[i], c[i + 1], 1, 1, false, 1.0)?,
            });
        }
        let out = Conv2d::with_gain(&root.pp("out"), c[4], 1, 3, 1, false, 1.0)?;
        let orient = Conv2d::with_gain(&root.pp("orient"), c[3], 2, 3, 1, false, 1.0)?;
        let (bank, dirs) = gabor_bank(arch);
        let (bins, k) = (arch.orientation_bins, arch.ridge_kernel);
        let bank = Tensor::from_vec(bank, (bins, 1, k, k), store.device())?.to_dtype(store.dtype())?;
        let bank_dirs = Tensor::from_vec(dirs, (bins, 2, 1, 1), store.device())?.to_dtype(store.dtype())?;
        Ok(Self {
            input,
            blocks,
            out,
            orient,
            bank,
            bank_dirs,
            iterations: arch.ridge_iterations,
        })
    }

    /// Per-pixel bank weights from a doubled-angle orientation field `(B, 2, H, W)`.
    fn bank_weights(&self, o: &Tensor) -> Result<Tensor> {
        let n = (o.sqr()?.sum_keepdim(1)? + 1e-6)?.sqrt()?;
        let o = o.broadcast_div(&n)?;
        let w = o.conv2d(&self.bank_dirs, 0, 1, 1, 1)?.relu()?.powf(4.0)?;
        let s = (w.sum_keepdim(1)? + 1e-6)?;
        Ok(w.broadcast_div(&s)?)
    }

    /// Orientation-steered Gabor iteration on a seed map in `[-1, 1]`.
    fn ridges(&self, seed: &Tensor, orientation: &Tensor) -> Result<Tensor> {
        let w = self.bank_weights(orientation)?;
        let pad = self.bank.dim(3)? / 2;
        let mut x = seed.clone();
        for _ in 0..self.iterations {
            let y = x.conv2d(&self.bank, pad, 1, 1, 1)?;
            x = (y * &w)?.sum_keepdim(1)?.affine(RIDGE_GAIN, 0.0)?.tanh()?;
        }
        Ok(x)
    }

    /// Ridge logits `(B, 1, 16·h, 16·w)` from a latent `(B, C, h, w)` with entries in `[0, 1)`.
    pub fn logits(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        // Uniform [0,1) rescaled to zero mean, unit variance.
        let z = z.affine(12f64.sqrt(), -0.5 * 12f64.sqrt())?;
        let mut h = nn::lrelu(&nn::pixel_norm(&self.input.forward(&z, mode)?)?)?;
        let mut orientation = None;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&h, mode)?;
            if i == 2 {
                orientation = Some(nn::upsample2(&self.orient.forward(&h, mode)?)?);
            }
        }
        let seed = self.out.forward(&h, mode)?.tanh()?;
        let orientation = orientation.expect("four upsampling blocks");
        Ok(self.ridges(&seed, &orientation)?.affine(OUTPUT_GAIN, 0.0)?)
    }

    /// Soft map in `(0, 1)`.
    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        nn::sigmoid(&self.logits(z, mode)?)
    }

    /// Binary map whose gradient is that of `sigmoid(logits / temperature)`.
    fn binary(&self, z: &Tensor, mode: Mode, temperature: f64) -> Result<Tensor> {
        let l = self.logits(z, mode)?;
        let hard = l.ge(0.0)?.to_dtype(l.dtype())?;
        let s = nn::sigmoid(&l.affine(1.0 / temperature, 0.0)?)?;
        Ok((hard - s.detach())?.add(&s)?)
    }
}

pub struct Discriminator {
    input: Conv2d,
    downs: Vec<Conv2d>,
    convs: Vec<Conv2d>,
    head: Linear,
}

impl Discriminator {
    fn new(store: &Store, arch: &MasterprintArch) -> Result<Self> {
        let root = store.root();
        let c = arch.disc_channels;
        let input = Conv2d::new(&root.pp("in"), 1, c[0], 3, 1, true)?;
        let mut downs = Vec::new();
        let mut convs = Vec::new();
        for i in 0..4 {
            let s = root.pp(format!("down{i}"));
            downs.push(Conv2d::new(&s.pp("d"), c[i], c[i + 1], 3, 2, true)?);
            convs.push(Conv2d::new(&s.pp("c"), c[i + 1], c[i + 1], 3, 1, true)?);
        }
        let head = Linear::with_gain(&root.pp("head"), c[4], 1, true, 1.0)?;
        Ok(Self {
            input,
            downs,
            convs,
            head,
        })
    }

    /// Pooled features `(B, C)` for binary-valued crops `(B, 1, S, S)`.
    pub fn features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = nn::lrelu(&self.input.forward(&x.affine(2.0, -1.0)?, mode)?)?;
        for (d, c) in self.downs.iter().zip(&self.convs) {
            h = nn::lrelu(&d.forward(&h, mode)?)?;
            h = (nn::lrelu(&c.forward(&h, mode)?)? + &h)?;
        }
        Ok(h.mean((2, 3))?)
    }

    fn head(&self, features: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.head.forward(features, mode)?.squeeze(1)?)
    }

    /// Realness logits `(B,)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.head(&self.features(x, mode)?, mode)
    }
}

pub struct MasterprintWeights {
    pub arch: MasterprintArch,
    pub config_toml: String,
    pub g_store: Store,
    pub generator: Generator,
    pub d_store: Option<Store>,
    pub discriminator: Option<Discriminator>,
}

fn disc_name(name: &str) -> String {
    format!("{name}_disc")
}

impl MasterprintWeights {
    pub fn new(arch: &MasterprintArch, seed: u64, with_disc: bool, dtype: DType, device: &Device) -> Result<Self> {
        arch.validate()?;
        let g_store = Store::new(seed, dtype, device);
        let generator = Generator::new(&g_store, arch)?;
        let (d_store, discriminator) = if with_disc {
            let s = Store::new(seed ^ 0x5A5A_5A5A, dtype, device);
            let d = Discriminator::new(&s, arch)?;
            (Some(s), Some(d))
        } else {
            (None, None)
        };
        Ok(Self {
            arch: arch.clone(),
            config_toml: String::new(),
            g_store,
            generator,
            d_store,
            discriminator,
        })
    }

    pub fn architecture_digest(arch: &MasterprintArch) -> String {
        nn::arch_digest(KIND, arch)
    }

    /// Writes the generator and, when present, the discriminator next to it.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let arch = Self::architecture_digest(&self.arch);
        nn::save_model(dir, name, &self.g_store, KIND, arch.clone(), self.config_toml.clone())?;
        if let Some(d) = &self.d_store {
            nn::save_model(dir, &disc_name(name), d, DISC_KIND, arch, self.config_toml.clone())?;
        }
        Ok(())
    }

    /// Loads the generator; the discriminator is loaded only if its files exist.
    pub fn load(dir: &Path, name: &str, dtype: DType, device: &Device) -> Result<Self> {
        let meta = nn::read_meta(dir, name)?;
        let cfg: MasterprintConfig = toml::from_str(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
        let has_disc = nn::meta_path(dir, &disc_name(name)).is_file();
        let mut w = Self::new(&cfg.arch, 0, has_disc, dtype, device)?;
        let arch = Self::architecture_digest(&cfg.arch);
        nn::load_model(dir, name, &w.g_store, KIND, &arch)?;
        if let Some(d) = &w.d_store {
            nn::load_model(dir, &disc_name(name), d, DISC_KIND, &arch)?;
        }
        w.config_toml = meta.config;
        Ok(w)
    }

    fn latent(&self, z_id: &[f32]) -> Result<Tensor> {
        if z_id.len() != Z_ID_DIM {
            return Err(shape_err(Z_ID_DIM, z_id.len()));
        }
        let s = self.arch.latent_side();
        Ok(Tensor::from_slice(z_id, (1, self.arch.latent_channels, s, s), self.g_store.device())?
            .to_dtype(self.g_store.dtype())?)
    }

    /// Pre-threshold generator output, `256 × 256` values in `(0, 1)`.
    pub fn generate_soft(&self, z_id: &[f32]) -> Result<Vec<f32>> {
        let out = self.generator.forward(&self.latent(z_id)?, Mode::Eval)?;
        nn::plane_of(&out, 0)
    }
}

/// Binary Master-Print for `z_id` (512 values in `[0, 1)`), thresholded at 0.5.
pub fn generate_masterprint(weights: &MasterprintWeights, z_id: &[f32]) -> Result<BinaryRidgeMap> {
    let soft = weights.generate_soft(z_id)?;
    BinaryRidgeMap::from_soft(SIDE, SIDE, Ppi::P250, &soft, 0.5)
}

/// Random crop of a 256×256 ridge map lying mostly inside the print.
fn real_crop(map: &BinaryRidgeMap, side: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = map.width();
    let px = map.pixels();
    let mut best: Option<(f64, usize, usize)> = None;
    for _ in 0..40 {
        let x0 = rng.random_range(0..=n - side);
        let y0 = rng.random_range(0..=n - side);
        let mut ones = 0usize;
        for y in y0..y0 + side {
            ones += px[y * n + x0..y * n + x0 + side].iter().map(|&b| b as usize).sum::<usize>();
        }
        let frac = ones as f64 / (side * side) as f64;
        // Ridge fraction near one half means the crop is inside the print.
        let score = (frac - 0.45).abs();
        if best.is_none_or(|b| score < b.0) {
            best = Some((score, x0, y0));
        }
        if score < 0.1 {
            break;
        }
    }
    let (_, x0, y0) = best.expect("at least one candidate");
    let mut out = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        out.extend(px[y * n + x0..y * n + x0 + side].iter().map(|&b| b as f32));
    }
    out
}

fn real_batch(data: &[BinaryRidgeMap], b: usize, side: usize, rng: &mut impl Rng, dtype: DType, dev: &Device) -> Result<Tensor> {
    let crops: Vec<Vec<f32>> = (0..b)
        .map(|_| real_crop(&data[rng.random_range(0..data.len())], side, rng))
        .collect();
    let refs: Vec<&[f32]> = crops.iter().map(|c| c.as_slice()).collect();
    nn::stack_planes(&refs, side, side, dtype, dev)
}

fn latent_batch(b: usize, c: usize, s: usize, rng: &mut impl Rng, dtype: DType, dev: &Device) -> Result<Tensor> {
    let v: Vec<f32> = (0..b * c * s * s).map(|_| rng.random::<f32>()).collect();
    Ok(Tensor::from_vec(v, (b, c, s, s), dev)?.to_dtype(dtype)?)
}

/// Centre `side × side` window of a `(B, 1, H, W)` batch.
fn centre(x: &Tensor, side: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.narrow(2, (h - side) / 2, side)?.narrow(3, (w - side) / 2, side)?)
}

fn mean_fraction(x: &Tensor) -> Result<f64> {
    nn::scalar(&x.mean_all()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeBand {
    pub mean: f64,
    pub sd: f64,
}

impl RidgeBand {
    pub fn contains(&self, v: f64) -> bool {
        (v - self.mean).abs() <= 2.0 * self.sd
    }
}

pub struct MasterprintTraining {
    pub weights: MasterprintWeights,
    /// Columns: step, loss_g, loss_d, d_accuracy, ridge_fraction.
    pub log: TrainLog,
    /// Ridge fraction of real training-size crops.
    pub real_band: RidgeBand,
}

impl MasterprintTraining {
    pub fn final_ridge_fraction(&self) -> f64 {
        self.log.column("ridge_fraction").last().copied().unwrap_or(f64::NAN)
    }
}

fn checkpoint_dir(base: &Option<PathBuf>, step: usize) -> Option<PathBuf> {
    base.as_ref().map(|b| b.join(format!("step_{step:06}")))
}

/// Trains the generator on `data` (256×256 binary maps).
pub fn train_masterprint_gan(
    data: &[BinaryRidgeMap],
    cfg: &MasterprintConfig,
    checkpoints: Option<PathBuf>,
    device: &Device,
) -> Result<MasterprintTraining> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Insufficient("no binary prints to train on".into()));
    }
    if let Some(m) = data.iter().find(|m| m.width() != SIDE || m.height() != SIDE) {
        return Err(shape_err(format!("{SIDE}x{SIDE}"), format!("{}x{}", m.width(), m.height())));
    }
    let dtype = DType::F32;
    let mut w = MasterprintWeights::new(&cfg.arch, cfg.seed, true, dtype, device)?;
    w.config_toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let lc = cfg.arch.latent_channels;
    let side = cfg.disc_crop;

    // Fixed evaluation batch and the real ridge-fraction band.
    let mut eval_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let eval_real = real_batch(data, cfg.eval_batch, side, &mut eval_rng, dtype, device)?;
    let eval_z = latent_batch(cfg.eval_batch, lc, cfg.latent_crop, &mut eval_rng, dtype, device)?;
    let fr: Vec<f64> = (0..cfg.eval_batch)
        .map(|i| mean_fraction(&eval_real.get(i)?))
        .collect::<Result<_>>()?;
    let real_band = {
        let m = crate::analysis::MeanSd::of(&fr);
        RidgeBand { mean: m.mean, sd: m.sd }
    };

    let mut opt_g = nn::adam(w.g_store.trainable(""), cfg.lr_g, cfg.beta1, cfg.beta2)?;
    let d_store = w.d_store.as_ref().expect("training weights carry a discriminator");
    let mut opt_d = nn::adam(d_store.trainable(""), cfg.lr_d, cfg.beta1, cfg.beta2)?;
    let mut log = TrainLog::new(&["step", "loss_g", "loss_d", "d_accuracy", "ridge_fraction"]);

    let evaluate = |w: &MasterprintWeights| -> Result<(f64, f64)> {
        let d = w.discriminator.as_ref().expect("discriminator");
        let fake = nn::straight_through(&centre(&w.generator.forward(&eval_z, Mode::Eval)?, side)?, 0.5)?;
        let acc = nn::d_accuracy(&d.forward(&eval_real, Mode::Eval)?, &d.forward(&fake, Mode::Eval)?)?;
        Ok((acc, mean_fraction(&fake)?))
    };

    for step in 1..=cfg.steps {
        let d = w.discriminator.as_ref().expect("discriminator");
        let sigma = cfg.instance_noise * (1.0 - (step - 1) as f64 / cfg.steps as f64);
        // Discriminator update.
        let real = real_batch(data, cfg.batch, side, &mut rng, dtype, device)?;
        let z = latent_batch(cfg.batch, lc, cfg.latent_crop, &mut rng, dtype, device)?;
        let fake = centre(&w.generator.binary(&z, Mode::Train, cfg.st_temperature)?, side)?.detach();
        let loss_d = nn::hinge_d(
            &d.forward(&nn::add_noise(&real, sigma, &mut rng)?, Mode::Train)?,
            &d.forward(&nn::add_noise(&fake, sigma, &mut rng)?, Mode::Train)?,
        )?;
        let ld = nn::scalar(&loss_d)?;
        nn::check_finite(step, "loss_d", ld)?;
        nn::step(&mut opt_d, &loss_d)?;
        // Generator update.
        let z = latent_batch(cfg.batch, lc, cfg.latent_crop, &mut rng, dtype, device)?;
        let fake = centre(&w.generator.binary(&z, Mode::Train, cfg.st_temperature)?, side)?;
        let f_fake = d.features(&nn::add_noise(&fake, sigma, &mut rng)?, Mode::Train)?;
        let mut loss_g = nn::hinge_g(&d.head(&f_fake, Mode::Train)?)?;
        if cfg.feature_matching > 0.0 {
            let f_real = d.features(&nn::add_noise(&real, sigma, &mut rng)?, Mode::Train)?.detach().mean(0)?;
            let fm = (f_fake.mean(0)? - f_real)?.sqr()?.mean_all()?;
            loss_g = (loss_g + fm.affine(cfg.feature_matching, 0.0)?)?;
        }
        let lg = nn::scalar(&loss_g)?;
        nn::check_finite(step, "loss_g", lg)?;
        nn::step(&mut opt_g, &loss_g)?;

        let (acc, frac) = if step == 1 || step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            evaluate(&w)?
        } else {
            (f64::NAN, f64::NAN)
        };
        log.push(vec![step as f64, lg, ld, acc, frac]);
        if acc.is_finite() {
            info!("masterprint step {step}: loss_g {lg:.4} loss_d {ld:.4} d_acc {acc:.3} ridge {frac:.3}");
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir(&checkpoints, step) {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                w.save(&dir, "masterprint")?;
            }
        }
    }
    Ok(MasterprintTraining { weights: w, log, real_band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sample_noise, NoiseKind};

    #[test]
    fn generation_is_deterministic_and_binary() {
        let w = MasterprintWeights::new(&MasterprintArch::default(), 3, false, DType::F32, &Device::Cpu).unwrap();
        let z = sample_noise(NoiseKind::Id, 9);
        let a = generate_masterprint(&w, &z).unwrap();
        let b = generate_masterprint(&w, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (SIDE, SIDE));
        assert!(a.pixels().iter().all(|&v| v <= 1));
    }

    #[test]
    fn wrong_latent_size_is_rejected() {
        let w = MasterprintWeights::new(&MasterprintArch::default(), 3, false, DType::F32, &Device::Cpu).unwrap();
        assert!(generate_masterprint(&w, &[0.5; 100]).is_err());
    }

    #[test]
    fn discriminator_accepts_crops() {
        let w = MasterprintWeights::new(&MasterprintArch::default(), 3, true, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((2, 1, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let y = w.discriminator.as_ref().unwrap().forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[2]);
    }
}
