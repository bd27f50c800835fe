//! Differentiable grayscale → ridge-probability autoencoder `R`.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryRidgeMap, GrayFingerprint};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Conv2d, Mode, Store, TrainLog};

pub const KIND: &str = "binarizer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarizerArch {
    /// Channel count at each of the five resolution levels.
    pub channels: [usize; 5],
}

impl Default for BinarizerArch {
    fn default() -> Self {
        Self {
            channels: [8, 8, 16, 16, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinarizerConfig {
    pub arch: BinarizerArch,
    pub seed: u64,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub batch: usize,
    pub crop: usize,
    pub lr: f64,
    /// Fraction of images held out for evaluation.
    pub holdout: f64,
    /// Minimum number of labelled images.
    pub min_images: usize,
}

impl Default for BinarizerConfig {
    fn default() -> Self {
        Self {
            arch: BinarizerArch::default(),
            seed: 11,
            steps: 300,
            steps_per_epoch: 50,
            batch: 8,
            crop: 64,
            lr: 2e-3,
            holdout: 0.1,
            min_images: 100,
        }
    }
}

struct Level {
    down: Option<Conv2d>,
    conv: Conv2d,
}

struct UpLevel {
    fuse: Conv2d,
    conv: Conv2d,
}

/// Weights and architecture of `R`.
pub struct BinarizerWeights {
    pub store: Store,
    pub arch: BinarizerArch,
    pub config_toml: String,
    input: Conv2d,
    levels: Vec<Level>,
    ups: Vec<UpLevel>,
    out: Conv2d,
}

impl BinarizerWeights {
    pub fn new(arch: &BinarizerArch, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let store = Store::new(seed, dtype, device);
        let root = store.root();
        let c = arch.channels;
        let input = Conv2d::new(&root.pp("in"), 1, c[0], 3, 1, false)?;
        let mut levels = Vec::new();
        for i in 0..5 {
            let s = root.pp(format!("enc{i}"));
            let down = if i == 0 {
                None
            } else {
                Some(Conv2d::new(&s.pp("down"), c[i - 1], c[i], 3, 2, false)?)
            };
            let conv = Conv2d::new(&s.pp("conv"), c[i], c[i], 3, 1, false)?;
            levels.push(Level { down, conv });
        }
        let mut ups = Vec::new();
        for i in (0..4).rev() {
            let s = root.pp(format!("dec{i}"));
            ups.push(UpLevel {
                fuse: Conv2d::new(&s.pp("fuse"), c[i + 1] + c[i], c[i], 3, 1, false)?,
                conv: Conv2d::new(&s.pp("conv"), c[i], c[i], 3, 1, false)?,
            });
        }
        let out = Conv2d::with_gain(&root.pp("out"), c[0], 1, 1, 1, false, 1.0)?;
        Ok(Self {
            store,
            arch: arch.clone(),
            config_toml: String::new(),
            input,
            levels,
            ups,
            out,
        })
    }

    pub fn architecture_digest(arch: &BinarizerArch) -> String {
        nn::arch_digest(KIND, arch)
    }

    /// Soft ridge probability `(B, 1, H, W)` for grayscale input `(B, 1, H, W)` in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h % 16 != 0 || w % 16 != 0 {
            return Err(shape_err("(B, 1, H, W) with H, W divisible by 16", format!("{:?}", x.dims())));
        }
        let mut hcur = nn::lrelu(&self.input.forward(&x.affine(2.0, -1.0)?, Mode::Eval)?)?;
        let mut skips = Vec::new();
        for lvl in &self.levels {
            if let Some(d) = &lvl.down {
                hcur = nn::lrelu(&d.forward(&hcur, Mode::Eval)?)?;
            }
            hcur = nn::lrelu(&lvl.conv.forward(&hcur, Mode::Eval)?)?;
            skips.push(hcur.clone());
        }
        skips.pop();
        for up in &self.ups {
            let skip = skips.pop().expect("one skip per level");
            let u = nn::upsample2(&hcur)?;
            let cat = Tensor::cat(&[&u, &skip], 1)?;
            hcur = nn::lrelu(&up.fuse.forward(&cat, Mode::Eval)?)?;
            hcur = nn::lrelu(&up.conv.forward(&hcur, Mode::Eval)?)?;
        }
        nn::sigmoid(&self.out.forward(&hcur, Mode::Eval)?)
    }

    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        nn::save_model(
            dir,
            name,
            &self.store,
            KIND,
            Self::architecture_digest(&self.arch),
            self.config_toml.clone(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, name: &str, arch: &BinarizerArch, dtype: DType, device: &Device) -> Result<Self> {
        let mut w = Self::new(arch, 0, dtype, device)?;
        let meta = nn::load_model(dir, name, &w.store, KIND, &Self::architecture_digest(arch))?;
        w.config_toml = meta.config;
        Ok(w)
    }

    /// Loads using the architecture recorded in the sidecar.
    pub fn load_auto(dir: &Path, name: &str, dtype: DType, device: &Device) -> Result<Self> {
        let meta = nn::read_meta(dir, name)?;
        let cfg: BinarizerConfig = toml::from_str(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
        Self::load(dir, name, &cfg.arch, dtype, device)
    }

    /// Re-creates the weights in another dtype.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut w = Self::new(&self.arch, 0, dtype, self.store.device())?;
        w.store.copy_from(&self.store, "")?;
        w.config_toml = self.config_toml.clone();
        Ok(w)
    }
}

/// Soft map of one grayscale image (inference).
pub fn apply_binarizer(weights: &BinarizerWeights, img: &GrayFingerprint) -> Result<Vec<f32>> {
    let x = nn::stack_planes(
        &[img.pixels()],
        img.height(),
        img.width(),
        weights.store.dtype(),
        weights.store.device(),
    )?;
    nn::plane_of(&weights.forward(&x)?, 0)
}

/// Hard map: soft output thresholded at 0.5.
pub fn binarize_net(weights: &BinarizerWeights, img: &GrayFingerprint) -> Result<BinaryRidgeMap> {
    let soft = apply_binarizer(weights, img)?;
    BinaryRidgeMap::from_soft(img.width(), img.height(), img.ppi(), &soft, 0.5)
}

/// Labelled training pair.
pub struct LabelledImage {
    pub gray: GrayFingerprint,
    pub label: BinaryRidgeMap,
}

fn crop_batch(
    items: &[&LabelledImage],
    crop: usize,
    rng: &mut ChaCha20Rng,
    n: usize,
    dtype: DType,
    device: &Device,
) -> Result<(Tensor, Tensor)> {
    let mut xs = Vec::with_capacity(n * crop * crop);
    let mut ys = Vec::with_capacity(n * crop * crop);
    for _ in 0..n {
        let it = items[rng.random_range(0..items.len())];
        let (w, h) = (it.gray.width(), it.gray.height());
        // Prefer crops that contain ridges.
        let mut best = (0, 0);
        for attempt in 0..4 {
            let x0 = rng.random_range(0..=w - crop);
            let y0 = rng.random_range(0..=h - crop);
            best = (x0, y0);
            let mut ones = 0;
            for y in (y0..y0 + crop).step_by(4) {
                for x in (x0..x0 + crop).step_by(4) {
                    ones += it.label.get(x, y) as usize;
                }
            }
            if ones * 16 >= crop * crop / 8 || attempt == 3 {
                break;
            }
        }
        let (x0, y0) = best;
        for y in y0..y0 + crop {
            for x in x0..x0 + crop {
                xs.push(it.gray.get(x, y));
                ys.push(it.label.get(x, y) as f32);
            }
        }
    }
    Ok((
        Tensor::from_vec(xs, (n, 1, crop, crop), device)?.to_dtype(dtype)?,
        Tensor::from_vec(ys, (n, 1, crop, crop), device)?.to_dtype(dtype)?,
    ))
}

/// Reconstruction loss, mean squared error.
pub fn recon_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok((pred - target)?.sqr()?.mean_all()?)
}

pub struct BinarizerTraining {
    pub weights: BinarizerWeights,
    /// Columns: epoch, step, train_loss, holdout_loss.
    pub log: TrainLog,
    pub initial_holdout_loss: f64,
    pub final_holdout_loss: f64,
}

/// Mean loss on fixed crops of the held-out images.
fn holdout_loss(
    w: &BinarizerWeights,
    hold: &[&LabelledImage],
    cfg: &BinarizerConfig,
    dtype: DType,
    device: &Device,
) -> Result<f64> {
    if hold.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
    let (x, y) = crop_batch(hold, cfg.crop, &mut rng, 16, dtype, device)?;
    nn::scalar(&recon_loss(&w.forward(&x)?, &y)?)
}

/// Trains `R` against oracle labels with the L2 loss.
pub fn train_binarizer(data: &[LabelledImage], cfg: &BinarizerConfig, device: &Device) -> Result<BinarizerTraining> {
    if data.len() < cfg.min_images {
        return Err(Error::Insufficient(format!(
            "binarizer training needs >= {} labelled images, got {}",
            cfg.min_images,
            data.len()
        )));
    }
    let dtype = DType::F32;
    let mut weights = BinarizerWeights::new(&cfg.arch, cfg.seed, dtype, device)?;
    weights.config_toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let n_hold = ((data.len() as f64 * cfg.holdout).round() as usize).min(data.len() - 1);
    let (train, hold): (Vec<&LabelledImage>, Vec<&LabelledImage>) = {
        let split = data.len() - n_hold;
        (data[..split].iter().collect(), data[split..].iter().collect())
    };
    let initial = holdout_loss(&weights, &hold, cfg, dtype, device)?;
    let mut opt = nn::adam(weights.store.trainable(""), cfg.lr, 0.9, 0.999)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::new(&["epoch", "step", "train_loss", "holdout_loss"]);
    let mut acc = 0.0;
    let mut count = 0usize;
    for step in 1..=cfg.steps {
        let (x, y) = crop_batch(&train, cfg.crop, &mut rng, cfg.batch, dtype, device)?;
        let loss = recon_loss(&weights.forward(&x)?, &y)?;
        let lv = nn::scalar(&loss)?;
        nn::check_finite(step, "binarizer loss", lv)?;
        nn::step(&mut opt, &loss)?;
        acc += lv;
        count += 1;
        if step % cfg.steps_per_epoch.max(1) == 0 || step == cfg.steps {
            let epoch = (step - 1) / cfg.steps_per_epoch.max(1) + 1;
            let h = holdout_loss(&weights, &hold, cfg, dtype, device)?;
            log.push(vec![epoch as f64, step as f64, acc / count as f64, h]);
            log::info!("binarizer epoch {epoch} step {step}: train {:.5} holdout {h:.5}", acc / count as f64);
            acc = 0.0;
            count = 0;
        }
    }
    let final_holdout_loss = holdout_loss(&weights, &hold, cfg, dtype, device)?;
    Ok(BinarizerTraining {
        weights,
        log,
        initial_holdout_loss: initial,
        final_holdout_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Ppi;
    use candle_core::Var;

    #[test]
    fn output_is_bounded_and_deterministic() {
        let dev = Device::Cpu;
        let w = BinarizerWeights::new(&BinarizerArch::default(), 1, DType::F32, &dev).unwrap();
        let px: Vec<f32> = (0..256 * 256).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let img = GrayFingerprint::new(256, 256, Ppi::P250, px).unwrap();
        let a = apply_binarizer(&w, &img).unwrap();
        let b = apply_binarizer(&w, &img).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_non_multiple_of_16() {
        let dev = Device::Cpu;
        let w = BinarizerWeights::new(&BinarizerArch::default(), 1, DType::F32, &dev).unwrap();
        let x = Tensor::zeros((1, 1, 40, 40), DType::F32, &dev).unwrap();
        assert!(matches!(w.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn gradient_matches_finite_difference_f64() {
        let dev = Device::Cpu;
        let w = BinarizerWeights::new(&BinarizerArch::default(), 2, DType::F64, &dev).unwrap();
        let n = 32;
        let base: Vec<f64> = (0..n * n)
            .map(|i| 0.5 + 0.4 * ((i % n) as f64 * 0.7).sin() * ((i / n) as f64 * 0.3).cos())
            .collect();
        let x = Var::from_tensor(&Tensor::from_vec(base.clone(), (1, 1, n, n), &dev).unwrap()).unwrap();
        let mean = w.forward(x.as_tensor()).unwrap().mean_all().unwrap();
        let grads = mean.backward().unwrap();
        let g = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let f = |v: &[f64]| -> f64 {
            let t = Tensor::from_vec(v.to_vec(), (1, 1, n, n), &dev).unwrap();
            w.forward(&t).unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap()
        };
        for &idx in &[n * 10 + 7, n * 16 + 16, n * 3 + 29] {
            let h = 1e-5;
            let mut p = base.clone();
            p[idx] += h;
            let mut m = base.clone();
            m[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let rel = (fd - g[idx]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-3, "pixel {idx}: fd {fd} autodiff {}", g[idx]);
        }
    }
}
