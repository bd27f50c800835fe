//! One-sided two-sample Kolmogorov-Smirnov test with exact ECDF evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup_x (F_a(x) − F_b(x))` over the pooled sample points.
    pub d: f64,
    /// Asymptotic one-sided p-value `exp(−2·n·m/(n+m)·D²)`.
    pub p: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn sorted(sample: &[f64], name: &str) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::InvalidValue(format!("{name} is empty")));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidValue(format!("{name} contains NaN")));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// ECDF difference at a point given the counts `≤ x` in each sample.
#[inline]
pub fn ecdf_gap(i: usize, n: usize, j: usize, m: usize) -> f64 {
    i as f64 / n as f64 - j as f64 / m as f64
}

pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let en = (n as f64 * m as f64) / (n + m) as f64;
    (-2.0 * en * d * d).exp().min(1.0)
}

/// Tests the alternative that `sample_a` tends to take smaller values than
/// `sample_b` (its ECDF lies above).
pub fn ks_one_sided(sample_a: &[f64], sample_b: &[f64]) -> Result<KsResult> {
    let a = sorted(sample_a, "sample_a")?;
    let b = sorted(sample_b, "sample_b")?;
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n || j < m {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max(ecdf_gap(i, n, j, m));
    }
    Ok(KsResult {
        d,
        p: ks_p_value(d, n, m),
        n_a: n,
        n_b: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_zero() {
        let a = [0.3, 0.1, 0.7, 0.7];
        let r = ks_one_sided(&a, &a).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn shifted_triplets_give_one_third() {
        let r = ks_one_sided(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.d - 1.0 / 3.0).abs() < 1e-15);
        let back = ks_one_sided(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(back.d, 0.0);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(ks_one_sided(&[], &[1.0]).is_err());
        assert!(ks_one_sided(&[1.0], &[]).is_err());
    }
}
