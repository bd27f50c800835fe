//! Small neural-network toolkit on top of candle: seeded parameter stores,
//! spectrally normalized convolutions, normalization layers, and the weight
//! blob + sidecar file format shared by every trained model.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::io::{sha256_file, sha256_hex};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Spectral-norm power iterations update their buffers.
    Train,
    /// Every forward pass is a pure function of the stored tensors.
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `N(0, gain² / fan_in)`.
    Kaiming { fan_in: usize, gain: f64 },
    Normal(f64),
    Const(f64),
}

/// Trainable parameters plus non-trainable buffers, created from a seeded RNG.
pub struct Store {
    params: VarMap,
    buffers: VarMap,
    dtype: DType,
    device: Device,
    rng: Mutex<ChaCha20Rng>,
}

impl Store {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            params: VarMap::new(),
            buffers: VarMap::new(),
            dtype,
            device: device.clone(),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn sorted(map: &VarMap, prefix: &str) -> Vec<(String, Var)> {
        let data = map.data().lock().expect("var map lock");
        let mut v: Vec<(String, Var)> = data
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, var)| (k.clone(), var.clone()))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Trainable variables whose name starts with `prefix`, in name order.
    pub fn trainable(&self, prefix: &str) -> Vec<Var> {
        Self::sorted(&self.params, prefix).into_iter().map(|(_, v)| v).collect()
    }

    pub fn num_params(&self, prefix: &str) -> usize {
        self.trainable(prefix).iter().map(|v| v.elem_count()).sum()
    }

    /// Content digest over every tensor's name, shape and `f32` values.
    pub fn digest(&self) -> Result<String> {
        let tensors = self.tensors();
        let mut names: Vec<&String> = tensors.keys().collect();
        names.sort();
        let mut bytes = Vec::new();
        for n in names {
            let t = &tensors[n];
            bytes.extend_from_slice(format!("{n} {:?};", t.dims()).as_bytes());
            for v in t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(sha256_hex(&bytes))
    }

    /// All tensors keyed `p.<name>` / `b.<name>`.
    pub fn tensors(&self) -> HashMap<String, Tensor> {
        let mut out = HashMap::new();
        for (k, v) in Self::sorted(&self.params, "") {
            out.insert(format!("p.{k}"), v.as_tensor().clone());
        }
        for (k, v) in Self::sorted(&self.buffers, "") {
            out.insert(format!("b.{k}"), v.as_tensor().clone());
        }
        out
    }

    /// Copies every tensor of `other` into the same-named variables of `self`.
    pub fn copy_from(&self, other: &Store, prefix: &str) -> Result<()> {
        let src = other.tensors();
        self.assign(&src, prefix)
    }

    fn assign(&self, src: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (tag, map) in [("p", &self.params), ("b", &self.buffers)] {
            for (k, var) in Self::sorted(map, prefix) {
                let key = format!("{tag}.{k}");
                let t = src
                    .get(&key)
                    .ok_or_else(|| Error::Incompatible(format!("missing tensor {key}")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Incompatible(format!(
                        "tensor {key}: stored shape {:?}, model expects {:?}",
                        t.dims(),
                        var.dims()
                    )));
                }
                var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
            }
        }
        Ok(())
    }

    pub fn save_blob(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tensors: HashMap<String, Tensor> = self
            .tensors()
            .into_iter()
            .map(|(k, t)| Ok((k, t.to_dtype(DType::F32)?)))
            .collect::<Result<_>>()?;
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    pub fn load_blob(&self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let src = candle_core::safetensors::load(path, &self.device)?;
        let expected = self.tensors().len();
        if src.len() != expected {
            return Err(Error::Incompatible(format!(
                "{}: {} tensors stored, model has {expected}",
                path.display(),
                src.len()
            )));
        }
        self.assign(&src, "")
    }
}

/// Name scope inside a [`Store`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a Store,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn init_tensor(&self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal(_) | Init::Kaiming { .. } => {
                let std = match init {
                    Init::Kaiming { fan_in, gain } => gain / (fan_in.max(1) as f64).sqrt(),
                    Init::Normal(std) => std,
                    Init::Const(_) => unreachable!(),
                };
                let mut rng = self.store.rng.lock().expect("rng lock");
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
        };
        Ok(Tensor::from_vec(data, shape, &self.store.device)?.to_dtype(self.store.dtype)?)
    }

    fn insert(&self, map: &VarMap, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let key = self.full(name);
        let var = Var::from_tensor(&self.init_tensor(shape, init)?)?;
        let mut data = map.data().lock().expect("var map lock");
        if data.contains_key(&key) {
            return Err(Error::InvalidValue(format!("duplicate parameter {key}")));
        }
        data.insert(key, var.clone());
        Ok(var)
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        Ok(self.insert(&self.store.params, name, shape, init)?.as_tensor().clone())
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.insert(&self.store.buffers, name, shape, init)
    }

    /// Fresh seeded noise tensor (not registered).
    pub fn noise(&self, shape: &[usize]) -> Result<Tensor> {
        self.init_tensor(shape, Init::Normal(1.0))
    }
}

fn l2_normalize_col(v: &Tensor) -> Result<Tensor> {
    let n = (v.sqr()?.sum_all()?.sqrt()? + 1e-12)?;
    Ok(v.broadcast_div(&n)?)
}

/// One power iteration per training forward pass; the left singular vector
/// is kept as a buffer so evaluation is deterministic.
pub struct SpectralNorm {
    u: Var,
}

impl SpectralNorm {
    fn new(vb: &Scope, rows: usize) -> Result<Self> {
        let u = vb.buffer("sn_u", &[rows, 1], Init::Normal(1.0))?;
        let un = l2_normalize_col(u.as_tensor())?;
        u.set(&un)?;
        Ok(Self { u })
    }

    fn apply(&self, w: &Tensor, mode: Mode) -> Result<Tensor> {
        let rows = w.dim(0)?;
        let wm = w.reshape((rows, ()))?;
        let wd = wm.detach();
        let u = self.u.as_tensor().detach();
        let v = l2_normalize_col(&wd.t()?.matmul(&u)?)?;
        let u2 = l2_normalize_col(&wd.matmul(&v)?)?;
        if mode == Mode::Train {
            self.u.set(&u2)?;
        }
        let sigma = u2.t()?.matmul(&wm.matmul(&v)?)?.reshape(())?;
        Ok(w.broadcast_div(&sigma)?)
    }
}

pub struct Conv2d {
    w: Tensor,
    b: Option<Tensor>,
    stride: usize,
    pad: usize,
    sn: Option<SpectralNorm>,
}

impl Conv2d {
    pub fn new(vb: &Scope, cin: usize, cout: usize, k: usize, stride: usize, sn: bool) -> Result<Self> {
        Self::with_gain(vb, cin, cout, k, stride, sn, 2f64.sqrt())
    }

    pub fn with_gain(
        vb: &Scope,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        sn: bool,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let w = vb.param("w", &[cout, cin, k, k], Init::Kaiming { fan_in, gain })?;
        let b = Some(vb.param("b", &[cout], Init::Const(0.0))?);
        let sn = if sn { Some(SpectralNorm::new(vb, cout)?) } else { None };
        Ok(Self {
            w,
            b,
            stride,
            pad: k / 2,
            sn,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = match &self.sn {
            Some(sn) => sn.apply(&self.w, mode)?,
            None => self.w.clone(),
        };
        let y = x.conv2d(&w, self.pad, self.stride, 1, 1)?;
        Ok(match &self.b {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?)?,
            None => y,
        })
    }
}

pub struct Linear {
    w: Tensor,
    b: Tensor,
    sn: Option<SpectralNorm>,
}

impl Linear {
    pub fn new(vb: &Scope, din: usize, dout: usize, sn: bool) -> Result<Self> {
        Self::with_gain(vb, din, dout, sn, 2f64.sqrt())
    }

    pub fn with_gain(vb: &Scope, din: usize, dout: usize, sn: bool, gain: f64) -> Result<Self> {
        let w = vb.param("w", &[dout, din], Init::Kaiming { fan_in: din, gain })?;
        let b = vb.param("b", &[dout], Init::Const(0.0))?;
        let sn = if sn { Some(SpectralNorm::new(vb, dout)?) } else { None };
        Ok(Self { w, b, sn })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = match &self.sn {
            Some(sn) => sn.apply(&self.w, mode)?,
            None => self.w.clone(),
        };
        Ok(x.matmul(&w.t()?)?.broadcast_add(&self.b)?)
    }
}

/// Per-sample, per-channel normalization of `(B, C, H, W)` features.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let xc = flat.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(2)?;
    let xn = xc.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(xn.reshape((b, c, h, w))?)
}

/// Scales `(B, C, H, W)` features by `gamma (B, C)` and shifts by `beta (B, C)`.
pub fn modulate(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (b, c, _, _) = x.dims4()?;
    let g = gamma.reshape((b, c, 1, 1))?;
    let be = beta.reshape((b, c, 1, 1))?;
    Ok(x.broadcast_mul(&g)?.broadcast_add(&be)?)
}

/// Normalizes each pixel's feature vector across channels.
pub fn pixel_norm(x: &Tensor) -> Result<Tensor> {
    let ms = x.sqr()?.mean_keepdim(1)?;
    Ok(x.broadcast_div(&(ms + 1e-8)?.sqrt()?)?)
}

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, 0.2)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Nearest-neighbour 2× upsampling built from broadcasts so gradients
/// accumulate correctly when the input has several consumers.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x
        .reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

/// Forward value of `hard`, gradient of `soft`.
pub fn straight_through(soft: &Tensor, threshold: f64) -> Result<Tensor> {
    let hard = soft.ge(threshold)?.to_dtype(soft.dtype())?;
    Ok((hard - soft.detach())?.add(soft)?)
}

/// `x` plus seeded Gaussian noise of standard deviation `sigma`.
pub fn add_noise(x: &Tensor, sigma: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let v: Vec<f32> = (0..x.elem_count())
        .map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    let n = Tensor::from_vec(v, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x + n)?)
}

/// Hinge discriminator loss.
pub fn hinge_d(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let lr = real.affine(-1.0, 1.0)?.relu()?.mean_all()?;
    let lf = fake.affine(1.0, 1.0)?.relu()?.mean_all()?;
    Ok((lr + lf)?)
}

/// Hinge generator loss.
pub fn hinge_g(fake: &Tensor) -> Result<Tensor> {
    Ok(fake.mean_all()?.neg()?)
}

/// Fraction of correct real/fake decisions at logit threshold 0.
pub fn d_accuracy(real: &Tensor, fake: &Tensor) -> Result<f64> {
    let r = real.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let f = fake.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let ok = r.iter().filter(|&&v| v > 0.0).count() + f.iter().filter(|&&v| v <= 0.0).count();
    Ok(ok as f64 / (r.len() + f.len()).max(1) as f64)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Aborts training on a non-finite loss.
pub fn check_finite(step: usize, name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("{name} = {v}"),
        })
    }
}

pub fn adam(vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// L2 normalization along the last dimension.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(x.broadcast_div(&(n + 1e-12)?)?)
}

/// `(B, 1, H, W)` tensor from a stack of equally sized planes.
pub fn stack_planes(planes: &[&[f32]], h: usize, w: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if p.len() != h * w {
            return Err(crate::error::shape_err(h * w, p.len()));
        }
        data.extend_from_slice(p);
    }
    Ok(Tensor::from_vec(data, (planes.len(), 1, h, w), device)?.to_dtype(dtype)?)
}

/// Row-major `f32` values of sample `i` of a `(B, 1, H, W)` tensor.
pub fn plane_of(t: &Tensor, i: usize) -> Result<Vec<f32>> {
    Ok(t.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}

/// Sidecar describing a weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsMeta {
    pub format: u32,
    pub kind: String,
    /// Digest of the architecture description; loading requires an exact match.
    pub architecture: String,
    /// Digest of the full model configuration (architecture + training).
    pub config_digest: String,
    pub blob_sha256: String,
    pub parameters: usize,
    /// The model configuration, as TOML text.
    pub config: String,
}

pub fn blob_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.safetensors"))
}

pub fn meta_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.toml"))
}

pub fn arch_digest(kind: &str, arch: &impl Serialize) -> String {
    sha256_hex(format!("{kind} {}", serde_json::to_string(arch).expect("serializable")).as_bytes())
}

/// Writes `<name>.safetensors` and `<name>.toml` into `dir`.
pub fn save_model(
    dir: &Path,
    name: &str,
    store: &Store,
    kind: &str,
    architecture: String,
    config_toml: String,
) -> Result<WeightsMeta> {
    let blob = blob_path(dir, name);
    store.save_blob(&blob)?;
    let meta = WeightsMeta {
        format: WEIGHTS_FORMAT,
        kind: kind.to_string(),
        architecture,
        config_digest: sha256_hex(config_toml.as_bytes()),
        blob_sha256: sha256_file(&blob)?,
        parameters: store.num_params(""),
        config: config_toml,
    };
    let mp = meta_path(dir, name);
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    Ok(meta)
}

pub fn read_meta(dir: &Path, name: &str) -> Result<WeightsMeta> {
    let mp = meta_path(dir, name);
    if !mp.is_file() {
        return Err(Error::MissingFile(mp));
    }
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: WeightsMeta = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", mp.display())))?;
    if meta.format != WEIGHTS_FORMAT {
        return Err(Error::Incompatible(format!(
            "{}: weights format {} (expected {WEIGHTS_FORMAT})",
            mp.display(),
            meta.format
        )));
    }
    Ok(meta)
}

/// Loads a blob into `store` after checking kind, architecture digest and blob digest.
pub fn load_model(dir: &Path, name: &str, store: &Store, kind: &str, architecture: &str) -> Result<WeightsMeta> {
    let meta = read_meta(dir, name)?;
    if meta.kind != kind {
        return Err(Error::Incompatible(format!("expected {kind} weights, found {}", meta.kind)));
    }
    if meta.architecture != architecture {
        return Err(Error::Incompatible(format!(
            "{name}: architecture digest {} does not match configured {architecture}",
            meta.architecture
        )));
    }
    let blob = blob_path(dir, name);
    if !blob.is_file() {
        return Err(Error::MissingFile(blob));
    }
    let actual = sha256_file(&blob)?;
    if actual != meta.blob_sha256 {
        return Err(Error::HashMismatch {
            path: blob,
            expected: meta.blob_sha256.clone(),
            actual,
        });
    }
    store.load_blob(&blob)?;
    Ok(meta)
}

/// Appends rows to a CSV training log held in memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainLog {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        match self.columns.iter().position(|c| c == name) {
            Some(i) => self.rows.iter().map(|r| r[i]).collect(),
            None => Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Runs one optimizer step on `loss`.
pub fn step(opt: &mut AdamW, loss: &Tensor) -> Result<()> {
    opt.backward_step(loss)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_stores_are_identical() {
        let dev = Device::Cpu;
        let a = Store::new(5, DType::F32, &dev);
        let b = Store::new(5, DType::F32, &dev);
        let ca = Conv2d::new(&a.root().pp("c"), 2, 3, 3, 1, true).unwrap();
        let cb = Conv2d::new(&b.root().pp("c"), 2, 3, 3, 1, true).unwrap();
        let x = Tensor::ones((1, 2, 5, 5), DType::F32, &dev).unwrap();
        let ya = ca.forward(&x, Mode::Eval).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let yb = cb.forward(&x, Mode::Eval).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(ya, yb);
    }

    #[test]
    fn spectral_norm_bounds_the_operator() {
        let dev = Device::Cpu;
        let s = Store::new(1, DType::F64, &dev);
        let lin = Linear::new(&s.root().pp("l"), 6, 4, true).unwrap();
        for _ in 0..30 {
            lin.forward(&Tensor::zeros((1, 6), DType::F64, &dev).unwrap(), Mode::Train).unwrap();
        }
        let w = lin.sn.as_ref().unwrap().apply(&lin.w, Mode::Eval).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(4, 6, &w.flatten_all().unwrap().to_vec1::<f64>().unwrap());
        let top = m.singular_values().max();
        assert!((top - 1.0).abs() < 1e-3, "sigma_max {top}");
    }

    #[test]
    fn upsample_gradient_accumulates_over_consumers() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::ones((1, 1, 2, 2), DType::F64, &dev).unwrap()).unwrap();
        let y = (upsample2(x.as_tensor()).unwrap().sum_all().unwrap() + x.as_tensor().sum_all().unwrap()).unwrap();
        let g = y.backward().unwrap();
        let gx = g.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(gx, vec![5.0; 4]);
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let dev = Device::Cpu;
        let x = Tensor::arange(0f64, 32.0, &dev).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let y = instance_norm(&x, 0.0).unwrap();
        let v = y.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for ch in v.chunks(16) {
            let m: f64 = ch.iter().sum::<f64>() / 16.0;
            let var: f64 = ch.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn save_load_round_trip_and_arch_check() {
        let dev = Device::Cpu;
        let dir = tempfile::tempdir().unwrap();
        let a = Store::new(3, DType::F32, &dev);
        Conv2d::new(&a.root().pp("c"), 1, 2, 3, 1, true).unwrap();
        save_model(dir.path(), "m", &a, "test", "arch1".into(), "x = 1\n".into()).unwrap();
        let b = Store::new(4, DType::F32, &dev);
        Conv2d::new(&b.root().pp("c"), 1, 2, 3, 1, true).unwrap();
        load_model(dir.path(), "m", &b, "test", "arch1").unwrap();
        assert_eq!(
            a.tensors()["p.c.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            b.tensors()["p.c.w"].flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
        let err = load_model(dir.path(), "m", &b, "test", "arch2").unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
    }
}
