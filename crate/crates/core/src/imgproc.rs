//! Classical planar image operations shared by the procedural corpus, the
//! binarization oracle, and the minutiae extractor.

use rustfft::num_complex::Complex32;
use rustfft::FftPlanner;

/// Row-major `f32` plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len().max(1) as f32
    }

    /// Bilinear sample with clamped borders.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        (1.0 - fx) * (1.0 - fy) * self.at_clamped(xi, yi)
            + fx * (1.0 - fy) * self.at_clamped(xi + 1, yi)
            + (1.0 - fx) * fy * self.at_clamped(xi, yi + 1)
            + fx * fy * self.at_clamped(xi + 1, yi + 1)
    }

    /// Doubles each side with centre-aligned bilinear interpolation.
    pub fn upsample2(&self) -> Plane {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (y as f32 + 0.5) / 2.0 - 0.5;
            for x in 0..w {
                let sx = (x as f32 + 0.5) / 2.0 - 0.5;
                out.push(self.sample(sx, sy));
            }
        }
        Plane::new(w, h, out)
    }

    /// 2×2 box average.
    pub fn downsample2(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                out.push(
                    0.25 * (self.at(2 * x, 2 * y)
                        + self.at(2 * x + 1, 2 * y)
                        + self.at(2 * x, 2 * y + 1)
                        + self.at(2 * x + 1, 2 * y + 1)),
                );
            }
        }
        Plane::new(w, h, out)
    }
}

fn gaussian_taps(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(p: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let k = gaussian_taps(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (p.width, p.height);
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * p.at_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let tmp = Plane::new(w, h, tmp);
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.at_clamped(x as isize, y as isize + i as isize - r);
            }
            out[y * w + x] = acc;
        }
    }
    Plane::new(w, h, out)
}

/// Mean over a `(2r+1)²` window via a summed-area table (window clipped at borders).
pub fn box_mean(p: &Plane, r: usize) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut sat = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0f64;
        for x in 0..w {
            row += p.at(x, y) as f64;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
                + sat[y0 * (w + 1) + x0];
            out[y * w + x] = (s / ((y1 - y0) * (x1 - x0)) as f64) as f32;
        }
    }
    Plane::new(w, h, out)
}

/// Sobel gradients `(gx, gy)`.
pub fn sobel(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let a = |dx: isize, dy: isize| p.at_clamped(x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (a(1, -1) + 2.0 * a(1, 0) + a(1, 1)) - (a(-1, -1) + 2.0 * a(-1, 0) + a(-1, 1));
            gy[i] = (a(-1, 1) + 2.0 * a(0, 1) + a(1, 1)) - (a(-1, -1) + 2.0 * a(0, -1) + a(1, -1));
        }
    }
    (Plane::new(w, h, gx), Plane::new(w, h, gy))
}

/// Ridge orientation field from the smoothed gradient structure tensor.
#[derive(Debug, Clone)]
pub struct OrientationField {
    /// Ridge direction in `[0, π)`.
    pub theta: Plane,
    /// Coherence in `[0, 1]`.
    pub coherence: Plane,
    /// Smoothed gradient energy `Gxx + Gyy`.
    pub energy: Plane,
}

pub fn orientation_field(p: &Plane, pre_sigma: f32, tensor_sigma: f32) -> OrientationField {
    let smooth = gaussian_blur(p, pre_sigma);
    let (gx, gy) = sobel(&smooth);
    let n = gx.data.len();
    let mut gxx = vec![0.0f32; n];
    let mut gyy = vec![0.0f32; n];
    let mut gxy = vec![0.0f32; n];
    for i in 0..n {
        gxx[i] = gx.data[i] * gx.data[i];
        gyy[i] = gy.data[i] * gy.data[i];
        gxy[i] = gx.data[i] * gy.data[i];
    }
    let (w, h) = (p.width, p.height);
    let gxx = gaussian_blur(&Plane::new(w, h, gxx), tensor_sigma);
    let gyy = gaussian_blur(&Plane::new(w, h, gyy), tensor_sigma);
    let gxy = gaussian_blur(&Plane::new(w, h, gxy), tensor_sigma);
    let mut theta = vec![0.0f32; n];
    let mut coh = vec![0.0f32; n];
    let mut energy = vec![0.0f32; n];
    for i in 0..n {
        let (a, b, c) = (gxx.data[i], gyy.data[i], gxy.data[i]);
        let phi = 0.5 * (2.0 * c).atan2(a - b);
        let mut t = phi + std::f32::consts::FRAC_PI_2;
        if t >= std::f32::consts::PI {
            t -= std::f32::consts::PI;
        }
        if t < 0.0 {
            t += std::f32::consts::PI;
        }
        theta[i] = t;
        let e = a + b;
        energy[i] = e;
        coh[i] = if e > 1e-12 {
            (((a - b) * (a - b) + 4.0 * c * c).sqrt() / e).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    OrientationField {
        theta: Plane::new(w, h, theta),
        coherence: Plane::new(w, h, coh),
        energy: Plane::new(w, h, energy),
    }
}

/// Forward/inverse 2-D FFT helper for one image size.
pub struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f32>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f32>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f32>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f32>>,
}

impl Fft2 {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::<f32>::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, buf: &mut [Complex32], inverse: bool) {
        let (w, h) = (self.width, self.height);
        let (rf, cf) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in buf.chunks_exact_mut(w) {
            rf.process(row);
        }
        let mut col = vec![Complex32::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            cf.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        if inverse {
            let s = 1.0 / (w * h) as f32;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn forward(&self, p: &Plane) -> Vec<Complex32> {
        let mut buf: Vec<Complex32> = p.data.iter().map(|&v| Complex32::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    pub fn inverse_real(&self, mut spec: Vec<Complex32>) -> Plane {
        self.transform(&mut spec, true);
        Plane::new(self.width, self.height, spec.iter().map(|c| c.re).collect())
    }
}

/// Even-symmetric zero-mean Gabor kernel oriented along ridge direction `theta`,
/// laid out circularly (origin at index 0) on a `w × h` grid.
fn gabor_kernel_circular(w: usize, h: usize, theta: f32, period: f32, sigma_along: f32, sigma_across: f32) -> Plane {
    let r = (3.0 * sigma_along.max(sigma_across)).ceil() as isize;
    let (c, s) = (theta.cos(), theta.sin());
    let mut taps = Vec::new();
    let mut sum = 0.0f32;
    let mut wsum = 0.0f32;
    for dy in -r..=r {
        for dx in -r..=r {
            let (fx, fy) = (dx as f32, dy as f32);
            let u = fx * c + fy * s;
            let v = -fx * s + fy * c;
            let env = (-(u * u) / (2.0 * sigma_along * sigma_along)
                - (v * v) / (2.0 * sigma_across * sigma_across))
                .exp();
            let val = env * (2.0 * std::f32::consts::PI * v / period).cos();
            taps.push((dx, dy, val, env));
            sum += val;
            wsum += env;
        }
    }
    let dc = sum / wsum;
    let mut data = vec![0.0f32; w * h];
    let mut norm = 0.0f32;
    for &(dx, dy, val, env) in &taps {
        let v = val - dc * env;
        norm += v.abs();
        let x = dx.rem_euclid(w as isize) as usize;
        let y = dy.rem_euclid(h as isize) as usize;
        data[y * w + x] += v;
    }
    let scale = 2.0 / norm.max(1e-6);
    data.iter_mut().for_each(|v| *v *= scale);
    Plane::new(w, h, data)
}

/// Oriented band-pass filter bank applied with per-pixel orientation selection.
pub struct GaborBank {
    fft: Fft2,
    kernels: Vec<Vec<Complex32>>,
    bins: usize,
}

impl GaborBank {
    pub fn new(width: usize, height: usize, period: f32, bins: usize) -> Self {
        let fft = Fft2::new(width, height);
        let sigma_along = 0.75 * period;
        let sigma_across = 0.45 * period;
        let kernels = (0..bins)
            .map(|b| {
                let theta = b as f32 * std::f32::consts::PI / bins as f32;
                fft.forward(&gabor_kernel_circular(width, height, theta, period, sigma_along, sigma_across))
            })
            .collect();
        Self { fft, kernels, bins }
    }

    /// Filters `p`, picking (and linearly blending) the two bank orientations
    /// nearest to `theta` at each pixel. The convolution is circular.
    pub fn apply(&self, p: &Plane, theta: &Plane) -> Plane {
        let spec = self.fft.forward(p);
        let responses: Vec<Plane> = self
            .kernels
            .iter()
            .map(|k| {
                let prod: Vec<Complex32> = spec.iter().zip(k).map(|(a, b)| a * b).collect();
                self.fft.inverse_real(prod)
            })
            .collect();
        let step = std::f32::consts::PI / self.bins as f32;
        let mut out = vec![0.0f32; p.data.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let t = theta.data[i].rem_euclid(std::f32::consts::PI) / step;
            let b0 = (t.floor() as usize) % self.bins;
            let b1 = (b0 + 1) % self.bins;
            let f = t - t.floor();
            *o = (1.0 - f) * responses[b0].data[i] + f * responses[b1].data[i];
        }
        Plane::new(p.width, p.height, out)
    }
}

/// Two-pass chamfer (3-4) distance, in pixels, from every pixel to the nearest `false` pixel.
/// Pixels outside the image count as `false`.
pub fn distance_to_background(mask: &[bool], w: usize, h: usize) -> Vec<f32> {
    const INF: f32 = 1e9;
    let mut d: Vec<f32> = mask.iter().map(|&m| if m { INF } else { 0.0 }).collect();
    let get = |d: &Vec<f32>, x: isize, y: isize| -> f32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, x - 1, y) + 3.0)
                .min(get(&d, x, y - 1) + 3.0)
                .min(get(&d, x - 1, y - 1) + 4.0)
                .min(get(&d, x + 1, y - 1) + 4.0);
            d[i] = v;
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, x + 1, y) + 3.0)
                .min(get(&d, x, y + 1) + 3.0)
                .min(get(&d, x + 1, y + 1) + 4.0)
                .min(get(&d, x - 1, y + 1) + 4.0);
            d[i] = v;
        }
    }
    d.iter_mut().for_each(|v| *v /= 3.0);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mean_of_constant_is_constant() {
        let p = Plane::filled(9, 7, 0.25);
        let m = box_mean(&p, 2);
        assert!(m.data.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn orientation_of_horizontal_stripes_is_horizontal() {
        let (w, h) = (64, 64);
        let data = (0..w * h)
            .map(|i| ((i / w) as f32 * 2.0 * std::f32::consts::PI / 8.0).cos())
            .collect();
        let of = orientation_field(&Plane::new(w, h, data), 1.0, 4.0);
        let t = of.theta.at(32, 32);
        let d = t.min(std::f32::consts::PI - t);
        assert!(d < 0.05, "theta {t}");
        assert!(of.coherence.at(32, 32) > 0.9);
    }

    #[test]
    fn gabor_rejects_dc() {
        let bank = GaborBank::new(32, 32, 8.0, 8);
        let out = bank.apply(&Plane::filled(32, 32, 3.0), &Plane::filled(32, 32, 0.3));
        assert!(out.data.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn distance_transform_grows_inward() {
        let (w, h) = (11, 11);
        let mask: Vec<bool> = (0..w * h)
            .map(|i| (2..9).contains(&(i % w)) && (2..9).contains(&(i / w)))
            .collect();
        let d = distance_to_background(&mask, w, h);
        assert_eq!(d[0], 0.0);
        assert!((d[5 * w + 5] - 4.0).abs() < 0.01);
        assert!((d[2 * w + 5] - 1.0).abs() < 0.01);
    }
}
