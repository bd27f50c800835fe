//! Warping and cropping GAN: a warping encoder `L_w` turns `z_distort` into
//! TPS parameters, a content encoder `E_w` and mask decoder `D_w` produce the
//! contact mask, and the warped Master-Print is `F(I; Θ) · S`.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryRidgeMap, Ppi, Z_DISTORT_DIM};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Conv2d, Linear, Mode, Store, TrainLog};
use crate::tps::{grid_points, interpolation_operator, warp_cpu, TpsParams, TpsWarper, DEFAULT_GRID};

pub const KIND: &str = "warp_generator";
pub const DISC_KIND: &str = "warp_discriminator";
/// Side of Master-Prints and warped prints.
pub const SIDE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpArch {
    pub hidden: usize,
    /// Content encoder channels at 32, 16 and 8 pixels.
    pub enc_channels: [usize; 3],
    /// Channels of the `z_distort` projection at 8 pixels.
    pub z_channels: usize,
    pub dec_channels: usize,
    /// Discriminator channels at 64, 32, 16, 8 and 4 pixels.
    pub disc_channels: [usize; 5],
    /// Bound on the deviation of the linear part from the identity.
    pub max_linear: f64,
    /// Bound on the translation, pixels.
    pub max_translation: f64,
    /// Bound on each control-point offset, pixels.
    pub max_offset: f64,
    /// Semi-axes of the fixed prior ellipse, as fractions of the side.
    pub prior_axes: [f64; 2],
    /// Logit slope of the prior at the ellipse boundary.
    pub prior_logit: f64,
}

impl Default for WarpArch {
    fn default() -> Self {
        Self {
            hidden: 64,
            enc_channels: [8, 16, 16],
            z_channels: 4,
            dec_channels: 16,
            disc_channels: [16, 32, 48, 64, 64],
            max_linear: 0.3,
            max_translation: 12.0,
            max_offset: 4.0,
            prior_axes: [0.38, 0.42],
            prior_logit: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpConfig {
    pub arch: WarpArch,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    /// Side of the full-resolution crops judged by the local discriminator.
    pub local_crop: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eval_every: usize,
    pub eval_batch: usize,
    pub min_pairs: usize,
    pub checkpoint_every: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            arch: WarpArch::default(),
            seed: 31,
            steps: 400,
            batch: 8,
            local_crop: 64,
            lr_g: 5e-4,
            lr_d: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            eval_every: 25,
            eval_batch: 16,
            min_pairs: 200,
            checkpoint_every: 0,
        }
    }
}

/// Same-finger pair: the full-field print and one impression, both 256×256.
#[derive(Debug, Clone)]
pub struct WarpPair {
    pub anchor: BinaryRidgeMap,
    pub target: BinaryRidgeMap,
}

/// Bilinear interpolation matrix `(n_out, n_in)` with pixel-centre alignment.
fn interp_matrix(n_out: usize, n_in: usize) -> Vec<f32> {
    let mut m = vec![0f32; n_out * n_in];
    let s = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let x = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        let f = x - x0 as f64;
        m[i * n_in + x0] += (1.0 - f) as f32;
        m[i * n_in + x1] += f as f32;
    }
    m
}

struct PairDisc {
    input: Conv2d,
    downs: Vec<Conv2d>,
    head: Linear,
}

impl PairDisc {
    fn new(vb: &nn::Scope, c: [usize; 5]) -> Result<Self> {
        let input = Conv2d::new(&vb.pp("in"), 2, c[0], 3, 1, true)?;
        let downs = (0..4)
            .map(|i| Conv2d::new(&vb.pp(format!("down{i}")), c[i], c[i + 1], 3, 2, true))
            .collect::<Result<_>>()?;
        let head = Linear::with_gain(&vb.pp("head"), c[4], 1, true, 1.0)?;
        Ok(Self { input, downs, head })
    }

    /// Logits `(B,)` for channel-stacked `(anchor, warped)` pairs `(B, 2, S, S)`.
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = nn::lrelu(&self.input.forward(&x.affine(2.0, -1.0)?, mode)?)?;
        for d in &self.downs {
            h = nn::lrelu(&d.forward(&h, mode)?)?;
        }
        Ok(self.head.forward(&h.mean((2, 3))?, mode)?.squeeze(1)?)
    }
}

pub struct Discriminators {
    global: PairDisc,
    local: PairDisc,
}

pub struct WarpGenerator {
    l1: Linear,
    l2: Linear,
    l3: Linear,
    enc: Vec<Conv2d>,
    zproj: Linear,
    dec1: Conv2d,
    dec2: Conv2d,
    dec3: Conv2d,
    control: Vec<[f64; 2]>,
    /// `(K+3, K)` operator from control targets to TPS parameters.
    op: Tensor,
    /// `(K, 2)` control points.
    control_t: Tensor,
    up: Tensor,
    up_t: Tensor,
    prior: Tensor,
    warper: TpsWarper,
    arch: WarpArch,
}

/// Differentiable generator outputs for a batch.
pub struct WarpForward {
    /// `(B, 2, 3)`.
    pub affine: Tensor,
    /// `(B, K, 2)`.
    pub weights: Tensor,
    /// Soft mask `(B, 1, 256, 256)`.
    pub soft_mask: Tensor,
}

impl WarpGenerator {
    fn new(store: &Store, arch: &WarpArch) -> Result<Self> {
        let root = store.root();
        let (dtype, dev) = (store.dtype(), store.device().clone());
        let k = DEFAULT_GRID * DEFAULT_GRID;
        let l1 = Linear::new(&root.pp("lw1"), Z_DISTORT_DIM, arch.hidden, false)?;
        let l2 = Linear::new(&root.pp("lw2"), arch.hidden, arch.hidden, false)?;
        let l3 = Linear::with_gain(&root.pp("lw3"), arch.hidden, 6 + 2 * k, false, 0.1)?;
        let c = arch.enc_channels;
        let enc = vec![
            Conv2d::new(&root.pp("ew0"), 1, c[0], 3, 2, false)?,
            Conv2d::new(&root.pp("ew1"), c[0], c[1], 3, 2, false)?,
            Conv2d::new(&root.pp("ew2"), c[1], c[2], 3, 2, false)?,
        ];
        let zproj = Linear::new(&root.pp("zproj"), Z_DISTORT_DIM, arch.z_channels * 64, false)?;
        let dc = arch.dec_channels;
        let dec1 = Conv2d::new(&root.pp("dw1"), c[2] + arch.z_channels, dc, 3, 1, false)?;
        let dec2 = Conv2d::new(&root.pp("dw2"), dc, dc, 3, 1, false)?;
        let dec3 = Conv2d::with_gain(&root.pp("dw3"), dc, 1, 3, 1, false, 0.5)?;

        let control = grid_points(SIDE, SIDE, DEFAULT_GRID);
        let op = interpolation_operator(&control)?;
        let op_v: Vec<f64> = (0..k + 3).flat_map(|r| (0..k).map(move |c| (r, c))).map(|(r, c)| op[(r, c)]).collect();
        let op = Tensor::from_vec(op_v, (k + 3, k), &dev)?.to_dtype(dtype)?;
        let cv: Vec<f64> = control.iter().flatten().copied().collect();
        let control_t = Tensor::from_vec(cv, (k, 2), &dev)?.to_dtype(dtype)?;
        let up = Tensor::from_vec(interp_matrix(SIDE, 16), (SIDE, 16), &dev)?.to_dtype(dtype)?;
        let up_t = up.t()?.contiguous()?;
        let mut prior = vec![0f32; SIDE * SIDE];
        let (ax, ay) = (arch.prior_axes[0] * SIDE as f64, arch.prior_axes[1] * SIDE as f64);
        let cc = SIDE as f64 / 2.0 - 0.5;
        for y in 0..SIDE {
            for x in 0..SIDE {
                let r = (((x as f64 - cc) / ax).powi(2) + ((y as f64 - cc) / ay).powi(2)).sqrt();
                prior[y * SIDE + x] = (arch.prior_logit * (1.0 - r) * 4.0) as f32;
            }
        }
        let prior = Tensor::from_vec(prior, (1, 1, SIDE, SIDE), &dev)?.to_dtype(dtype)?;
        let warper = TpsWarper::new(&control, Some([SIDE, SIDE]), SIDE, SIDE, dtype, &dev)?;
        Ok(Self {
            l1,
            l2,
            l3,
            enc,
            zproj,
            dec1,
            dec2,
            dec3,
            control,
            op,
            control_t,
            up,
            up_t,
            prior,
            warper,
            arch: arch.clone(),
        })
    }

    /// TPS parameters for `z` `(B, 16)`.
    pub fn theta(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let b = z.dim(0)?;
        let k = self.control.len();
        let h = nn::lrelu(&self.l1.forward(z, Mode::Eval)?)?;
        let h = nn::lrelu(&self.l2.forward(&h, Mode::Eval)?)?;
        let raw = self.l3.forward(&h, Mode::Eval)?.tanh()?;
        let lin = (raw.narrow(1, 0, 4)? * self.arch.max_linear)?;
        let eye = Tensor::new(&[1f32, 0., 0., 1.], z.device())?.to_dtype(z.dtype())?;
        let lin = lin.broadcast_add(&eye)?.reshape((b, 2, 2))?;
        let t = (raw.narrow(1, 4, 2)? * self.arch.max_translation)?.reshape((b, 1, 2))?;
        let off = (raw.narrow(1, 6, 2 * k)? * self.arch.max_offset)?.reshape((b, k, 2))?;
        let cc = SIDE as f64 / 2.0 - 0.5;
        let centred = (&self.control_t - cc)?.unsqueeze(0)?.broadcast_as((b, k, 2))?.contiguous()?;
        // dst_k = c + A (c_k − c) + t + δ_k
        let rotated = centred.matmul(&lin.transpose(1, 2)?.contiguous()?)?;
        let dst = ((rotated + cc)?.broadcast_add(&t)? + off)?;
        let params = self.op.unsqueeze(0)?.broadcast_as((b, k + 3, k))?.contiguous()?.matmul(&dst)?;
        let weights = params.narrow(1, 0, k)?;
        let affine = params.narrow(1, k, 3)?.transpose(1, 2)?.contiguous()?;
        Ok((affine, weights))
    }

    /// Soft contact mask for Master-Prints `(B, 1, 256, 256)` and `z` `(B, 16)`.
    pub fn mask(&self, img: &Tensor, z: &Tensor) -> Result<Tensor> {
        let b = z.dim(0)?;
        let mut h = nn::avg_pool2(&nn::avg_pool2(img)?)?.affine(2.0, -1.0)?;
        for c in &self.enc {
            h = nn::lrelu(&c.forward(&h, Mode::Eval)?)?;
        }
        let zp = nn::lrelu(&self.zproj.forward(z, Mode::Eval)?)?.reshape((b, self.arch.z_channels, 8, 8))?;
        let h = Tensor::cat(&[&h, &zp], 1)?;
        let h = nn::lrelu(&self.dec1.forward(&h, Mode::Eval)?)?;
        let h = nn::upsample2(&h)?;
        let h = nn::lrelu(&self.dec2.forward(&h, Mode::Eval)?)?;
        let low = self.dec3.forward(&h, Mode::Eval)?;
        let full = self
            .up
            .broadcast_matmul(&low)?
            .broadcast_matmul(&self.up_t)?;
        nn::sigmoid(&full.broadcast_add(&self.prior)?)
    }

    pub fn forward(&self, img: &Tensor, z: &Tensor) -> Result<WarpForward> {
        let (affine, weights) = self.theta(z)?;
        let soft_mask = self.mask(img, z)?;
        Ok(WarpForward {
            affine,
            weights,
            soft_mask,
        })
    }

    /// Differentiable warped and masked print (training path).
    fn warped(&self, img: &Tensor, out: &WarpForward) -> Result<Tensor> {
        let w = self.warper.warp(img, &out.affine, &out.weights)?;
        let wb = nn::straight_through(&w, 0.5)?;
        Ok((wb * nn::straight_through(&out.soft_mask, 0.5)?)?)
    }
}

pub struct WarpGanWeights {
    pub arch: WarpArch,
    pub config_toml: String,
    pub g_store: Store,
    pub generator: WarpGenerator,
    pub d_store: Option<Store>,
    pub discriminators: Option<Discriminators>,
}

fn disc_name(name: &str) -> String {
    format!("{name}_disc")
}

impl WarpGanWeights {
    pub fn new(arch: &WarpArch, seed: u64, with_disc: bool, dtype: DType, device: &Device) -> Result<Self> {
        let g_store = Store::new(seed, dtype, device);
        let generator = WarpGenerator::new(&g_store, arch)?;
        let (d_store, discriminators) = if with_disc {
            let s = Store::new(seed ^ 0x00D1_5C00, dtype, device);
            let d = Discriminators {
                global: PairDisc::new(&s.root().pp("global"), arch.disc_channels)?,
                local: PairDisc::new(&s.root().pp("local"), arch.disc_channels)?,
            };
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
            discriminators,
        })
    }

    pub fn architecture_digest(arch: &WarpArch) -> String {
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
        let cfg: WarpConfig = toml::from_str(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
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

    /// `Θ` for one `z_distort` as plain TPS parameters in the 256-pixel frame.
    pub fn sample_theta(&self, z_distort: &[f32]) -> Result<TpsParams> {
        let z = self.z_tensor(z_distort)?;
        let (a, wt) = self.generator.theta(&z)?;
        tensors_to_params(&a, &wt, &self.generator.control)
    }

    fn z_tensor(&self, z_distort: &[f32]) -> Result<Tensor> {
        if z_distort.len() != Z_DISTORT_DIM {
            return Err(shape_err(Z_DISTORT_DIM, z_distort.len()));
        }
        Ok(Tensor::from_slice(z_distort, (1, Z_DISTORT_DIM), self.g_store.device())?.to_dtype(self.g_store.dtype())?)
    }
}

fn tensors_to_params(affine: &Tensor, weights: &Tensor, control: &[[f64; 2]]) -> Result<TpsParams> {
    let a: Vec<f64> = affine.get(0)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let w: Vec<f64> = weights.get(0)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    Ok(TpsParams {
        frame: Some([SIDE, SIDE]),
        control: control.to_vec(),
        affine: [[a[0], a[1], a[2]], [a[3], a[4], a[5]]],
        weights: w.chunks(2).map(|c| [c[0], c[1]]).collect(),
    })
}

/// Result of warping one Master-Print.
#[derive(Debug, Clone)]
pub struct WarpOutput {
    pub theta: TpsParams,
    pub mask: BinaryRidgeMap,
    /// `tps_warp(I_ID, Θ)` thresholded at 0.5, before masking.
    pub warped_full: BinaryRidgeMap,
    /// `warped_full ⊙ mask`.
    pub warped: BinaryRidgeMap,
    pub soft_mask: Vec<f32>,
    pub soft_warp: Vec<f32>,
}

/// Backward-mapped bilinear warp of a 256×256 ridge map; out-of-bounds reads 0.
pub fn tps_warp(map: &BinaryRidgeMap, theta: &TpsParams) -> Vec<f32> {
    let src: Vec<f64> = map.pixels().iter().map(|&b| b as f64).collect();
    warp_cpu(&src, map.width(), map.height(), theta, 0.0)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

/// Elementwise product of a warped print and a mask.
pub fn apply_mask(warped: &BinaryRidgeMap, mask: &BinaryRidgeMap) -> Result<BinaryRidgeMap> {
    warped.and(mask)
}

pub fn warp_impression(weights: &WarpGanWeights, master: &BinaryRidgeMap, z_distort: &[f32]) -> Result<WarpOutput> {
    if master.width() != SIDE || master.height() != SIDE {
        return Err(shape_err(format!("{SIDE}x{SIDE}"), format!("{}x{}", master.width(), master.height())));
    }
    let z = weights.z_tensor(z_distort)?;
    let g = &weights.generator;
    let img = nn::stack_planes(&[&master.to_f32()], SIDE, SIDE, weights.g_store.dtype(), weights.g_store.device())?;
    let out = g.forward(&img, &z)?;
    let theta = tensors_to_params(&out.affine, &out.weights, &g.control)?;
    let soft_mask = nn::plane_of(&out.soft_mask, 0)?;
    let mask = BinaryRidgeMap::from_soft(SIDE, SIDE, Ppi::P250, &soft_mask, 0.5)?;
    let soft_warp = tps_warp(master, &theta);
    let warped_full = BinaryRidgeMap::from_soft(SIDE, SIDE, Ppi::P250, &soft_warp, 0.5)?;
    let warped = apply_mask(&warped_full, &mask)?;
    Ok(WarpOutput {
        theta,
        mask,
        warped_full,
        warped,
        soft_mask,
        soft_warp,
    })
}

pub struct WarpTraining {
    pub weights: WarpGanWeights,
    /// Columns: step, loss_g, loss_d, d_accuracy, mask_area, mean_displacement.
    pub log: TrainLog,
}

fn pair_input(anchor: &Tensor, other: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[anchor, other], 1)?)
}

fn pool4(x: &Tensor) -> Result<Tensor> {
    nn::avg_pool2(&nn::avg_pool2(x)?)
}

fn crop(x: &Tensor, x0: usize, y0: usize, side: usize) -> Result<Tensor> {
    Ok(x.narrow(2, y0, side)?.narrow(3, x0, side)?)
}

fn maps_to_tensor(maps: &[&BinaryRidgeMap], dtype: DType, dev: &Device) -> Result<Tensor> {
    let planes: Vec<Vec<f32>> = maps.iter().map(|m| m.to_f32()).collect();
    let refs: Vec<&[f32]> = planes.iter().map(|p| p.as_slice()).collect();
    nn::stack_planes(&refs, SIDE, SIDE, dtype, dev)
}

fn z_batch(b: usize, rng: &mut impl Rng, dtype: DType, dev: &Device) -> Result<Tensor> {
    let v: Vec<f32> = (0..b * Z_DISTORT_DIM).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, (b, Z_DISTORT_DIM), dev)?.to_dtype(dtype)?)
}

/// Mean `|f(p) − p|` over the frame for each sample of a batch of parameters.
fn batch_displacement(g: &WarpGenerator, affine: &Tensor, weights: &Tensor) -> Result<f64> {
    let coords = g.warper.source_coords(affine, weights)?;
    let b = coords.dim(0)?;
    let mut grid = Vec::with_capacity(SIDE * SIDE * 2);
    for y in 0..SIDE {
        for x in 0..SIDE {
            grid.push(x as f32);
            grid.push(y as f32);
        }
    }
    let grid = Tensor::from_vec(grid, (1, SIDE * SIDE, 2), coords.device())?.to_dtype(coords.dtype())?;
    let d = coords.broadcast_sub(&grid)?.sqr()?.sum(D::Minus1)?.sqrt()?;
    let _ = b;
    nn::scalar(&d.mean_all()?)
}

pub fn train_warp_gan(
    pairs: &[WarpPair],
    cfg: &WarpConfig,
    checkpoints: Option<PathBuf>,
    device: &Device,
) -> Result<WarpTraining> {
    if pairs.len() < cfg.min_pairs {
        return Err(Error::Insufficient(format!(
            "{} same-finger pairs, need at least {}",
            pairs.len(),
            cfg.min_pairs
        )));
    }
    for p in pairs {
        for m in [&p.anchor, &p.target] {
            if m.width() != SIDE || m.height() != SIDE {
                return Err(shape_err(format!("{SIDE}x{SIDE}"), format!("{}x{}", m.width(), m.height())));
            }
        }
    }
    if cfg.local_crop > SIDE || !cfg.local_crop.is_multiple_of(16) {
        return Err(Error::Config("local_crop must be a multiple of 16 up to 256".into()));
    }
    let dtype = DType::F32;
    let mut w = WarpGanWeights::new(&cfg.arch, cfg.seed, true, dtype, device)?;
    w.config_toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt_g = nn::adam(w.g_store.trainable(""), cfg.lr_g, cfg.beta1, cfg.beta2)?;
    let mut opt_d = nn::adam(
        w.d_store.as_ref().expect("discriminators").trainable(""),
        cfg.lr_d,
        cfg.beta1,
        cfg.beta2,
    )?;
    let mut eval_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let pick = |rng: &mut ChaCha20Rng, n: usize| -> Vec<usize> { (0..n).map(|_| rng.random_range(0..pairs.len())).collect() };
    let ev_real = pick(&mut eval_rng, cfg.eval_batch);
    let ev_fake = pick(&mut eval_rng, cfg.eval_batch);
    let ev_real_a = maps_to_tensor(&ev_real.iter().map(|&i| &pairs[i].anchor).collect::<Vec<_>>(), dtype, device)?;
    let ev_real_t = maps_to_tensor(&ev_real.iter().map(|&i| &pairs[i].target).collect::<Vec<_>>(), dtype, device)?;
    let ev_fake_a = maps_to_tensor(&ev_fake.iter().map(|&i| &pairs[i].anchor).collect::<Vec<_>>(), dtype, device)?;
    let ev_z = z_batch(cfg.eval_batch, &mut eval_rng, dtype, device)?;
    let ev_real_in = pair_input(&pool4(&ev_real_a)?, &pool4(&ev_real_t)?)?;

    let mut log = TrainLog::new(&["step", "loss_g", "loss_d", "d_accuracy", "mask_area", "mean_displacement"]);
    let side = cfg.local_crop;
    for step in 1..=cfg.steps {
        let d = w.discriminators.as_ref().expect("discriminators");
        let g = &w.generator;
        let ri = pick(&mut rng, cfg.batch);
        let fi = pick(&mut rng, cfg.batch);
        let real_a = maps_to_tensor(&ri.iter().map(|&i| &pairs[i].anchor).collect::<Vec<_>>(), dtype, device)?;
        let real_t = maps_to_tensor(&ri.iter().map(|&i| &pairs[i].target).collect::<Vec<_>>(), dtype, device)?;
        let fake_a = maps_to_tensor(&fi.iter().map(|&i| &pairs[i].anchor).collect::<Vec<_>>(), dtype, device)?;
        let z = z_batch(cfg.batch, &mut rng, dtype, device)?;
        let out = g.forward(&fake_a, &z)?;
        let fake = g.warped(&fake_a, &out)?;
        let lo = SIDE / 2 - side / 2 - 48;
        let (x0, y0) = (rng.random_range(lo..=lo + 96), rng.random_range(lo..=lo + 96));
        let real_g = pair_input(&pool4(&real_a)?, &pool4(&real_t)?)?;
        let real_l = pair_input(&crop(&real_a, x0, y0, side)?, &crop(&real_t, x0, y0, side)?)?;
        let fake_g = pair_input(&pool4(&fake_a)?, &pool4(&fake)?)?;
        let fake_l = pair_input(&crop(&fake_a, x0, y0, side)?, &crop(&fake, x0, y0, side)?)?;

        let loss_d = (nn::hinge_d(
            &d.global.forward(&real_g, Mode::Train)?,
            &d.global.forward(&fake_g.detach(), Mode::Train)?,
        )? + nn::hinge_d(
            &d.local.forward(&real_l, Mode::Train)?,
            &d.local.forward(&fake_l.detach(), Mode::Train)?,
        )?)?;
        let ld = nn::scalar(&loss_d)?;
        nn::check_finite(step, "loss_d", ld)?;
        nn::step(&mut opt_d, &loss_d)?;

        let loss_g = (nn::hinge_g(&d.global.forward(&fake_g, Mode::Train)?)?
            + nn::hinge_g(&d.local.forward(&fake_l, Mode::Train)?)?)?;
        let lg = nn::scalar(&loss_g)?;
        nn::check_finite(step, "loss_g", lg)?;
        nn::step(&mut opt_g, &loss_g)?;

        let (acc, area, disp) = if step == 1 || step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            let eo = g.forward(&ev_fake_a, &ev_z)?;
            let ef = g.warped(&ev_fake_a, &eo)?;
            let fake_in = pair_input(&pool4(&ev_fake_a)?, &pool4(&ef)?)?;
            let acc = nn::d_accuracy(
                &d.global.forward(&ev_real_in, Mode::Eval)?,
                &d.global.forward(&fake_in, Mode::Eval)?,
            )?;
            let area = nn::scalar(&eo.soft_mask.ge(0.5)?.to_dtype(DType::F32)?.mean_all()?)?;
            let disp = batch_displacement(g, &eo.affine, &eo.weights)?;
            (acc, area, disp)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        log.push(vec![step as f64, lg, ld, acc, area, disp]);
        if acc.is_finite() {
            info!("warp step {step}: loss_g {lg:.4} loss_d {ld:.4} d_acc {acc:.3} area {area:.3} disp {disp:.2}");
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            if let Some(base) = &checkpoints {
                let dir = base.join(format!("step_{step:06}"));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                w.save(&dir, "warp")?;
            }
        }
    }
    Ok(WarpTraining { weights: w, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sample_noise, NoiseKind};

    fn stripes() -> BinaryRidgeMap {
        let px = (0..SIDE * SIDE).map(|i| u8::from((i % SIDE) % 5 < 2)).collect();
        BinaryRidgeMap::new(SIDE, SIDE, Ppi::P250, px).unwrap()
    }

    #[test]
    fn theta_satisfies_side_conditions() {
        let w = WarpGanWeights::new(&WarpArch::default(), 1, false, DType::F64, &Device::Cpu).unwrap();
        let th = w.sample_theta(&sample_noise(NoiseKind::Distort, 3)).unwrap();
        assert!(th.side_condition_residual() < 1e-8);
    }

    #[test]
    fn masking_never_adds_ridges() {
        let w = WarpGanWeights::new(&WarpArch::default(), 1, false, DType::F32, &Device::Cpu).unwrap();
        let z = sample_noise(NoiseKind::Distort, 4);
        let a = warp_impression(&w, &stripes(), &z).unwrap();
        let b = warp_impression(&w, &stripes(), &z).unwrap();
        assert_eq!(a.warped, b.warped);
        assert_eq!(a.mask, b.mask);
        for (m, f) in a.warped.pixels().iter().zip(a.warped_full.pixels()) {
            assert!(m <= f);
        }
        let ones = BinaryRidgeMap::ones(SIDE, SIDE, Ppi::P250);
        assert_eq!(apply_mask(&a.warped_full, &ones).unwrap(), a.warped_full);
    }

    #[test]
    fn interp_matrix_rows_sum_to_one() {
        let m = interp_matrix(256, 16);
        for r in m.chunks(16) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
