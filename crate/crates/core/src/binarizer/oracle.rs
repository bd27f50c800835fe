//! Classical binarization used as ground truth: orientation estimation,
//! oriented band-pass enhancement, local-mean threshold, morphological cleanup.

use serde::{Deserialize, Serialize};

use crate::domain::{BinaryRidgeMap, GrayFingerprint};
use crate::imgproc::{box_mean, orientation_field, GaborBank, Plane};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Nominal ridge period at 500 ppi, pixels.
    pub period_500: f32,
    pub orientation_bins: usize,
    /// Minimum local ink standard deviation for foreground.
    pub min_std: f32,
    /// Maximum majority-filter passes.
    pub cleanup_passes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            period_500: 9.5,
            orientation_bins: 8,
            min_std: 0.06,
            cleanup_passes: 500,
        }
    }
}

fn is_binary_valued(img: &GrayFingerprint) -> bool {
    img.pixels().iter().all(|&v| v == 0.0 || v == 1.0)
}

fn is_constant(img: &GrayFingerprint) -> bool {
    let p = img.pixels();
    p.iter().all(|&v| v == p[0])
}

/// 3×3 majority filter applied in place in raster order until a full pass
/// changes nothing (or `passes` is hit). Pixels outside the image count as
/// background. In-place updates always reach a fixpoint, so a converged
/// result is left unchanged by a second call.
pub fn majority_cleanup(bits: &mut [u8], w: usize, h: usize, passes: usize) {
    for _ in 0..passes {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let mut n = 0;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        n += bits[yy * w + xx] as u32;
                    }
                }
                let v = u8::from(n >= 5);
                if v != bits[y * w + x] {
                    bits[y * w + x] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

fn foreground_mask(ink: &Plane, period: f32, min_std: f32) -> Vec<bool> {
    let r = (1.3 * period).round().max(2.0) as usize;
    let m = box_mean(ink, r);
    let m2 = box_mean(&ink.map(|v| v * v), r);
    let raw: Vec<f32> = m
        .data
        .iter()
        .zip(&m2.data)
        .map(|(a, b)| if (b - a * a).max(0.0).sqrt() > min_std { 1.0 } else { 0.0 })
        .collect();
    let smooth = box_mean(&Plane::new(ink.width, ink.height, raw), period.round() as usize);
    smooth.data.iter().map(|&v| v > 0.5).collect()
}

/// Full enhancement pipeline, applied regardless of the input's value set.
pub fn binarize_enhanced(img: &GrayFingerprint, cfg: &OracleConfig) -> BinaryRidgeMap {
    let (w, h) = (img.width(), img.height());
    let mut out = BinaryRidgeMap::zeros(w, h, img.ppi());
    if is_constant(img) {
        return out;
    }
    let period = cfg.period_500 * img.ppi().scale_from_500() as f32;
    let ink = Plane::new(w, h, img.pixels().iter().map(|v| 1.0 - v).collect());
    let fg = foreground_mask(&ink, period, cfg.min_std);
    if !fg.iter().any(|&f| f) {
        return out;
    }
    let field = orientation_field(&ink, 0.1 * period, 0.8 * period);
    let local = box_mean(&ink, period.round() as usize);
    let centred = Plane::new(
        w,
        h,
        ink.data.iter().zip(&local.data).map(|(a, m)| a - m).collect(),
    );
    let bank = GaborBank::new(w, h, period, cfg.orientation_bins);
    let e = bank.apply(&centred, &field.theta);
    let thr = box_mean(&e, (period / 2.0).round() as usize);
    let mut bits: Vec<u8> = (0..w * h)
        .map(|i| u8::from(fg[i] && e.data[i] > thr.data[i]))
        .collect();
    majority_cleanup(&mut bits, w, h, cfg.cleanup_passes);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, bits[y * w + x] == 1);
        }
    }
    out
}

/// Ridge map of a grayscale print (1 = ridge, i.e. dark ink).
///
/// Constant images carry no ridges. An image that already takes only the
/// values 0 and 1 is read as a ridge map (ridge = 0) and only cleaned up.
pub fn binarize_oracle_with(img: &GrayFingerprint, cfg: &OracleConfig) -> BinaryRidgeMap {
    let (w, h) = (img.width(), img.height());
    if is_constant(img) {
        return BinaryRidgeMap::zeros(w, h, img.ppi());
    }
    if is_binary_valued(img) {
        let mut bits: Vec<u8> = img.pixels().iter().map(|&v| u8::from(v == 0.0)).collect();
        majority_cleanup(&mut bits, w, h, cfg.cleanup_passes);
        return BinaryRidgeMap::new(w, h, img.ppi(), bits).expect("binary values");
    }
    binarize_enhanced(img, cfg)
}

pub fn binarize_oracle(img: &GrayFingerprint) -> BinaryRidgeMap {
    binarize_oracle_with(img, &OracleConfig::default())
}

/// Grayscale rendering of a ridge map with ridges as black ink.
pub fn ridge_map_to_gray(map: &BinaryRidgeMap) -> GrayFingerprint {
    let px = map.pixels().iter().map(|&b| 1.0 - b as f32).collect();
    GrayFingerprint::new(map.width(), map.height(), map.ppi(), px).expect("values in [0,1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Ppi;

    fn stripes(period: usize, phase: usize) -> (GrayFingerprint, BinaryRidgeMap) {
        let n = 256;
        let mut g = vec![0f32; n * n];
        let mut b = vec![0u8; n * n];
        for y in 0..n {
            for x in 0..n {
                let ridge = (x + phase) % period < period / 2;
                g[y * n + x] = if ridge { 0.0 } else { 1.0 };
                b[y * n + x] = ridge as u8;
            }
        }
        (
            GrayFingerprint::new(n, n, Ppi::P250, g).unwrap(),
            BinaryRidgeMap::new(n, n, Ppi::P250, b).unwrap(),
        )
    }

    #[test]
    fn constant_image_has_no_ridges() {
        for v in [0.0, 0.3, 1.0] {
            let img = GrayFingerprint::constant(512, 512, Ppi::P500, v).unwrap();
            assert_eq!(binarize_oracle(&img).count_ones(), 0);
        }
    }

    #[test]
    fn binary_stripes_survive_full_enhancement() {
        // Period 9 px at 500 ppi through the enhancement path; the direct
        // threshold of the stripe image is the reference.
        let n = 512;
        let mut g = vec![0f32; n * n];
        let mut b = vec![0u8; n * n];
        for y in 0..n {
            for x in 0..n {
                let ridge = x % 9 < 4;
                g[y * n + x] = if ridge { 0.0 } else { 1.0 };
                b[y * n + x] = ridge as u8;
            }
        }
        let img = GrayFingerprint::new(n, n, Ppi::P500, g).unwrap();
        let want = BinaryRidgeMap::new(n, n, Ppi::P500, b).unwrap();
        let got = binarize_enhanced(&img, &OracleConfig::default());
        let dis = 1.0 - got.agreement(&want).unwrap();
        assert!(dis <= 0.02, "disagreement {dis}");
        let via_oracle = binarize_oracle(&img);
        assert!(1.0 - via_oracle.agreement(&want).unwrap() <= 0.02);
    }

    #[test]
    fn oracle_is_idempotent_on_stripes() {
        let (img, _) = stripes(9, 2);
        let once = binarize_oracle(&img);
        let twice = binarize_oracle(&ridge_map_to_gray(&once));
        assert_eq!(once, twice);
    }
}
