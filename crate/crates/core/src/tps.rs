//! Thin-plate-spline warps: exact solver, reference resampler, and a
//! differentiable tensor resampler used inside the warping GAN.
//!
//! A [`TpsParams`] describes the backward map `f(p) = A·[x, y, 1] + Σ_k w_k U(|p − c_k|)`
//! with `U(r) = r² log r²`. Warping an image evaluates `out(p) = in(f(p))` with
//! bilinear interpolation; samples outside the source read as the fill value
//! (0 for the tensor path).

use candle_core::{DType, Device, Tensor, D};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Side length of the default control grid (4×4 = 16 points).
pub const DEFAULT_GRID: usize = 4;

#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpsParams {
    /// Coordinate frame `[width, height]` the points live in; `None` means
    /// "pixel coordinates of whatever image is warped".
    pub frame: Option<[usize; 2]>,
    /// Control points `c_k` in frame pixel coordinates.
    pub control: Vec<[f64; 2]>,
    /// `[[a_xx, a_xy, t_x], [a_yx, a_yy, t_y]]`.
    pub affine: [[f64; 3]; 2],
    /// Kernel weights `w_k`, one `[x, y]` pair per control point.
    pub weights: Vec<[f64; 2]>,
}

impl TpsParams {
    pub const IDENTITY_AFFINE: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

    pub fn identity(control: Vec<[f64; 2]>, frame: Option<[usize; 2]>) -> Self {
        let k = control.len();
        Self {
            frame,
            control,
            affine: Self::IDENTITY_AFFINE,
            weights: vec![[0.0; 2]; k],
        }
    }

    /// Identity over the default 4×4 grid for a `side × side` frame.
    pub fn identity_grid(side: usize) -> Self {
        Self::identity(grid_points(side, side, DEFAULT_GRID), Some([side, side]))
    }

    pub fn k(&self) -> usize {
        self.control.len()
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let a = &self.affine;
        let mut x = a[0][0] * p[0] + a[0][1] * p[1] + a[0][2];
        let mut y = a[1][0] * p[0] + a[1][1] * p[1] + a[1][2];
        for (c, w) in self.control.iter().zip(&self.weights) {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            let u = tps_kernel(dx * dx + dy * dy);
            x += w[0] * u;
            y += w[1] * u;
        }
        [x, y]
    }

    /// Largest violation of `Σw = 0`, `Σw·x = 0`, `Σw·y = 0` over both axes.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for axis in 0..2 {
            let mut s = 0.0;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (c, w) in self.control.iter().zip(&self.weights) {
                s += w[axis];
                sx += w[axis] * c[0];
                sy += w[axis] * c[1];
            }
            worst = worst.max(s.abs()).max(sx.abs()).max(sy.abs());
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        if self.control.len() != self.weights.len() {
            return Err(shape_err(
                format!("{} kernel weights", self.control.len()),
                self.weights.len(),
            ));
        }
        let finite = self
            .affine
            .iter()
            .flatten()
            .chain(self.weights.iter().flatten())
            .chain(self.control.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidValue("non-finite TPS parameter".into()));
        }
        Ok(())
    }

    /// Mean `|f(p) − p|` over the pixel centres of the frame (or of `fallback` when frameless).
    pub fn mean_displacement(&self, fallback: [usize; 2]) -> f64 {
        let [w, h] = self.frame.unwrap_or(fallback);
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                let p = [x as f64, y as f64];
                let q = self.map(p);
                acc += ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            }
        }
        acc / (w * h).max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: TpsParams = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// `n × n` control grid spanning the frame with a half-cell inset.
pub fn grid_points(width: usize, height: usize, n: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push([
                (i as f64 + 0.5) * width as f64 / n as f64 - 0.5,
                (j as f64 + 0.5) * height as f64 / n as f64 - 0.5,
            ]);
        }
    }
    pts
}

fn check_non_degenerate(src: &[[f64; 2]]) -> Result<()> {
    if src.len() < 3 {
        return Err(Error::Singular(format!(
            "need at least 3 control points, got {}",
            src.len()
        )));
    }
    let scale = src
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..src.len() {
        for j in (i + 1)..src.len() {
            let d = (src[i][0] - src[j][0]).hypot(src[i][1] - src[j][1]);
            if d <= 1e-9 * scale {
                return Err(Error::Singular(format!("duplicate control points {i} and {j}")));
            }
        }
    }
    // Collinearity: smallest singular value of the centred coordinate matrix.
    let n = src.len() as f64;
    let mx = src.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = src.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in src {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let lmin = tr / 2.0 - disc;
    let lmax = tr / 2.0 + disc;
    if lmax <= 0.0 || lmin <= 1e-12 * lmax {
        return Err(Error::Singular("control points are collinear".into()));
    }
    Ok(())
}

/// Bordered TPS system `[[K + λI, P], [Pᵀ, 0]]` for the given control points.
fn system_matrix(src: &[[f64; 2]], lambda: f64) -> DMatrix<f64> {
    let k = src.len();
    let mut l = DMatrix::<f64>::zeros(k + 3, k + 3);
    for i in 0..k {
        for j in 0..k {
            let dx = src[i][0] - src[j][0];
            let dy = src[i][1] - src[j][1];
            l[(i, j)] = tps_kernel(dx * dx + dy * dy);
        }
        l[(i, i)] += lambda;
        let row = [src[i][0], src[i][1], 1.0];
        for (c, v) in row.iter().enumerate() {
            l[(i, k + c)] = *v;
            l[(k + c, i)] = *v;
        }
    }
    l
}

/// Fits the TPS sending `src[i] → dst[i]` (exactly when `lambda == 0`).
pub fn tps_solve(src: &[[f64; 2]], dst: &[[f64; 2]], lambda: f64) -> Result<TpsParams> {
    if src.len() != dst.len() {
        return Err(shape_err(format!("{} destination points", src.len()), dst.len()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidValue(format!("regularization {lambda} must be >= 0")));
    }
    check_non_degenerate(src)?;
    let k = src.len();
    let lu = system_matrix(src, lambda).lu();
    let mut weights = vec![[0.0; 2]; k];
    let mut affine = [[0.0; 3]; 2];
    for axis in 0..2 {
        let mut rhs = DVector::<f64>::zeros(k + 3);
        for i in 0..k {
            rhs[i] = dst[i][axis];
        }
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("TPS system is singular".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("TPS solution is not finite".into()));
        }
        for i in 0..k {
            weights[i][axis] = sol[i];
        }
        affine[axis] = [sol[k], sol[k + 1], sol[k + 2]];
    }
    Ok(TpsParams {
        frame: None,
        control: src.to_vec(),
        affine,
        weights,
    })
}

/// Linear operator `(K+3) × K` mapping control-point displacements to
/// `[kernel weights; affine correction]` for exact interpolation (λ = 0).
pub fn interpolation_operator(control: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    check_non_degenerate(control)?;
    let k = control.len();
    let inv = system_matrix(control, 0.0)
        .try_inverse()
        .ok_or_else(|| Error::Singular("TPS system is singular".into()))?;
    Ok(inv.columns(0, k).into_owned())
}

fn frame_scale(frame: Option<[usize; 2]>, w: usize, h: usize) -> (f64, f64) {
    match frame {
        Some([fw, fh]) => (fw as f64 / w as f64, fh as f64 / h as f64),
        None => (1.0, 1.0),
    }
}

#[inline]
fn to_frame(p: f64, s: f64) -> f64 {
    (p + 0.5) * s - 0.5
}

#[inline]
fn from_frame(p: f64, s: f64) -> f64 {
    (p + 0.5) / s - 0.5
}

/// Reference resampler in plain `f64`. `src` is `h × w`, row-major; the output
/// has the same size. Out-of-bounds taps read `fill`.
pub fn warp_cpu(src: &[f64], w: usize, h: usize, params: &TpsParams, fill: f64) -> Vec<f64> {
    let (sx, sy) = frame_scale(params.frame, w, h);
    let tap = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let q = params.map([to_frame(x as f64, sx), to_frame(y as f64, sy)]);
            let qx = from_frame(q[0], sx);
            let qy = from_frame(q[1], sy);
            let x0 = qx.floor();
            let y0 = qy.floor();
            let fx = qx - x0;
            let fy = qy - y0;
            let (xi, yi) = (x0 as i64, y0 as i64);
            out[y * w + x] = (1.0 - fx) * (1.0 - fy) * tap(xi, yi)
                + fx * (1.0 - fy) * tap(xi + 1, yi)
                + (1.0 - fx) * fy * tap(xi, yi + 1)
                + fx * fy * tap(xi + 1, yi + 1);
        }
    }
    out
}

/// Precomputed TPS basis for one control grid and one output window; warps
/// batches of images with gradients flowing to pixels, affine, and weights.
pub struct TpsWarper {
    /// Input image size.
    width: usize,
    height: usize,
    /// Output window size.
    out_w: usize,
    out_h: usize,
    k: usize,
    /// `(N, 3)` rows `[x, y, 1]` in frame coordinates.
    affine_basis: Tensor,
    /// `(N, K)` kernel values `U(|p − c_k|)`.
    kernel_basis: Tensor,
    scale: (f64, f64),
}

impl TpsWarper {
    pub fn new(
        control: &[[f64; 2]],
        frame: Option<[usize; 2]>,
        width: usize,
        height: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        Self::window(control, frame, width, height, [0, 0, width, height], dtype, device)
    }

    /// Warper producing only the output pixels `x0..x0+w, y0..y0+h` of a
    /// `width × height` warp.
    #[allow(clippy::too_many_arguments)]
    pub fn window(
        control: &[[f64; 2]],
        frame: Option<[usize; 2]>,
        width: usize,
        height: usize,
        [x0, y0, out_w, out_h]: [usize; 4],
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let k = control.len();
        let scale = frame_scale(frame, width, height);
        let n = out_w * out_h;
        let mut ab = Vec::with_capacity(n * 3);
        let mut kb = Vec::with_capacity(n * k);
        for y in y0..y0 + out_h {
            for x in x0..x0 + out_w {
                let px = to_frame(x as f64, scale.0);
                let py = to_frame(y as f64, scale.1);
                ab.extend_from_slice(&[px, py, 1.0]);
                for c in control {
                    let dx = px - c[0];
                    let dy = py - c[1];
                    kb.push(tps_kernel(dx * dx + dy * dy));
                }
            }
        }
        let affine_basis = Tensor::from_vec(ab, (n, 3), device)?.to_dtype(dtype)?;
        let kernel_basis = Tensor::from_vec(kb, (n, k), device)?.to_dtype(dtype)?;
        Ok(Self {
            width,
            height,
            out_w,
            out_h,
            k,
            affine_basis,
            kernel_basis,
            scale,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Source coordinates in input-pixel units, `(B, N, 2)`.
    /// `affine`: `(B, 2, 3)`; `weights`: `(B, K, 2)`.
    pub fn source_coords(&self, affine: &Tensor, weights: &Tensor) -> Result<Tensor> {
        let b = affine.dim(0)?;
        let n = self.out_w * self.out_h;
        let at = affine.transpose(1, 2)?.contiguous()?;
        let lin = self
            .affine_basis
            .unsqueeze(0)?
            .broadcast_as((b, n, 3))?
            .contiguous()?
            .matmul(&at)?;
        let ker = self
            .kernel_basis
            .unsqueeze(0)?
            .broadcast_as((b, n, self.k))?
            .contiguous()?
            .matmul(&weights.contiguous()?)?;
        let frame = (lin + ker)?;
        let sx = frame.narrow(D::Minus1, 0, 1)?;
        let sy = frame.narrow(D::Minus1, 1, 1)?;
        let ix = ((sx + 0.5)? / self.scale.0)?.affine(1.0, -0.5)?;
        let iy = ((sy + 0.5)? / self.scale.1)?.affine(1.0, -0.5)?;
        Ok(Tensor::cat(&[ix, iy], D::Minus1)?)
    }

    /// Warps `img` of shape `(B, C, H, W)` into `(B, C, out_h, out_w)`; out-of-bounds samples are 0.
    pub fn warp(&self, img: &Tensor, affine: &Tensor, weights: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = img.dims4()?;
        if (w, h) != (self.width, self.height) {
            return Err(shape_err(
                format!("{}x{}", self.width, self.height),
                format!("{w}x{h}"),
            ));
        }
        let coords = self.source_coords(affine, weights)?;
        Ok(bilinear_sample(img, &coords)?.reshape((b, c, self.out_h, self.out_w))?)
    }
}

/// Bilinear lookup of `img` `(B, C, H, W)` at pixel coordinates `coords` `(B, N, 2)`,
/// returning `(B, C, N)`. Taps outside the image contribute 0.
pub fn bilinear_sample(img: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = img.dims4()?;
    let n = coords.dim(1)?;
    let flat = img.reshape((b, c, h * w))?;
    let x = coords.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
    let y = coords.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?;
    let x0 = x.detach().floor()?;
    let y0 = y.detach().floor()?;
    let fx = (&x - &x0)?;
    let fy = (&y - &y0)?;
    let mut out: Option<Tensor> = None;
    for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let xi = (&x0 + dx)?;
        let yi = (&y0 + dy)?;
        let inside = xi
            .ge(0.0)?
            .mul(&xi.le((w - 1) as f64)?)?
            .mul(&yi.ge(0.0)?)?
            .mul(&yi.le((h - 1) as f64)?)?
            .to_dtype(img.dtype())?;
        let xc = xi.clamp(0.0, (w - 1) as f64)?;
        let yc = yi.clamp(0.0, (h - 1) as f64)?;
        let idx = ((yc * w as f64)? + xc)?.to_dtype(DType::U32)?;
        let idx = idx.unsqueeze(1)?.broadcast_as((b, c, n))?.contiguous()?;
        let wx = if dx == 0.0 { fx.affine(-1.0, 1.0)? } else { fx.clone() };
        let wy = if dy == 0.0 { fy.affine(-1.0, 1.0)? } else { fy.clone() };
        let wgt = (wx * wy)?.mul(&inside)?.unsqueeze(1)?;
        let tap = flat.gather(&idx, 2)?.broadcast_mul(&wgt)?;
        out = Some(match out {
            None => tap,
            Some(o) => (o + tap)?,
        });
    }
    Ok(out.expect("four taps"))
}

/// Parameter tensors `(1, 2, 3)` and `(1, K, 2)` for one [`TpsParams`].
pub fn params_to_tensors(p: &TpsParams, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let a: Vec<f64> = p.affine.iter().flatten().copied().collect();
    let w: Vec<f64> = p.weights.iter().flatten().copied().collect();
    Ok((
        Tensor::from_vec(a, (1, 2, 3), device)?.to_dtype(dtype)?,
        Tensor::from_vec(w, (1, p.k(), 2), device)?.to_dtype(dtype)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                v.push([10.0 + 20.0 * i as f64, 10.0 + 20.0 * j as f64]);
            }
        }
        v
    }

    #[test]
    fn identity_solve_has_zero_weights() {
        let src = grid3();
        let p = tps_solve(&src, &src, 0.0).unwrap();
        for w in &p.weights {
            assert!(w[0].abs() < 1e-10 && w[1].abs() < 1e-10);
        }
        for (r, e) in p.affine.iter().flatten().zip(TpsParams::IDENTITY_AFFINE.iter().flatten()) {
            assert!((r - e).abs() < 1e-10);
        }
    }

    #[test]
    fn translation_is_pure_affine() {
        let src = grid3();
        let dst: Vec<_> = src.iter().map(|p| [p[0] + 3.5, p[1] - 2.0]).collect();
        let p = tps_solve(&src, &dst, 0.0).unwrap();
        assert!(p.weights.iter().flatten().all(|w| w.abs() < 1e-10));
        assert!((p.affine[0][2] - 3.5).abs() < 1e-9);
        assert!((p.affine[1][2] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_points_are_singular() {
        let collinear = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(matches!(
            tps_solve(&collinear, &collinear, 0.0),
            Err(Error::Singular(_))
        ));
        let dup = vec![[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 0.0]];
        assert!(matches!(tps_solve(&dup, &dup, 0.0), Err(Error::Singular(_))));
        let two = vec![[0.0, 0.0], [1.0, 0.0]];
        assert!(tps_solve(&two, &two, 0.0).is_err());
    }

    #[test]
    fn interpolation_operator_satisfies_side_conditions() {
        let ctrl = grid_points(64, 64, 4);
        let op = interpolation_operator(&ctrl).unwrap();
        let k = ctrl.len();
        let disp: Vec<f64> = (0..k).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let sol = &op * DVector::from_vec(disp.clone());
        let p = TpsParams {
            frame: None,
            control: ctrl.clone(),
            affine: [[sol[k], sol[k + 1], sol[k + 2]], [0.0, 0.0, 0.0]],
            weights: (0..k).map(|i| [sol[i], 0.0]).collect(),
        };
        assert!(p.side_condition_residual() < 1e-8);
        for (i, c) in ctrl.iter().enumerate() {
            assert!((p.map(*c)[0] - disp[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = tps_solve(&grid3(), &grid3(), 1e-3).unwrap();
        let back = TpsParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn tensor_warp_matches_reference() {
        let (w, h) = (24usize, 20usize);
        let img: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let src = grid_points(w, h, 3);
        let dst: Vec<_> = src
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + (i as f64 * 0.37).sin() * 1.7, p[1] + (i as f64 * 0.61).cos() * 1.3])
            .collect();
        let params = tps_solve(&src, &dst, 0.0).unwrap();
        let reference = warp_cpu(&img, w, h, &params, 0.0);
        let dev = Device::Cpu;
        let warper = TpsWarper::new(&params.control, None, w, h, DType::F64, &dev).unwrap();
        let (a, k) = params_to_tensors(&params, DType::F64, &dev).unwrap();
        let t = Tensor::from_vec(img, (1, 1, h, w), &dev).unwrap();
        let out: Vec<f64> = warper.warp(&t, &a, &k).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (x, y) in out.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
