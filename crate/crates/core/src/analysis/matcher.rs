//! Minutiae matcher: generalized Hough voting for a rigid alignment,
//! greedy pairing under distance and angle tolerances, one least-squares refit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::minutiae::{Minutia, MinutiaSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    /// Pairing distance tolerance in 500-ppi pixels.
    pub distance_tol_500: f64,
    /// Pairing angle tolerance in degrees.
    pub angle_tol_deg: f64,
    pub rotation_bin_deg: f64,
    /// Largest rotation searched, in degrees.
    pub max_rotation_deg: f64,
    /// Translation bin in 500-ppi pixels.
    pub translation_bin_500: f64,
    /// Alignment hypotheses refined per direction.
    pub hypotheses: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            distance_tol_500: 12.0,
            angle_tol_deg: 25.0,
            rotation_bin_deg: 10.0,
            max_rotation_deg: 60.0,
            translation_bin_500: 8.0,
            hypotheses: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub theta: f64,
    pub t: [f64; 2],
}

impl Rigid {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * x - s * y + self.t[0], s * x + c * y + self.t[1])
    }
}

fn ang_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
fn signed_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`.
fn fit_rigid(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<Rigid> {
    let n = src.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let (ax, ay) = src.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (bx, by) = dst.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (ax, ay, bx, by) = (ax / nf, ay / nf, bx / nf, by / nf);
    let (mut sc, mut ss) = (0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (px, py) = (p.0 - ax, p.1 - ay);
        let (qx, qy) = (q.0 - bx, q.1 - by);
        sc += px * qx + py * qy;
        ss += px * qy - py * qx;
    }
    let theta = if n == 1 { 0.0 } else { ss.atan2(sc) };
    let (s, c) = theta.sin_cos();
    Some(Rigid {
        theta,
        t: [bx - (c * ax - s * ay), by - (s * ax + c * ay)],
    })
}

struct Tolerances {
    dist: f64,
    angle: f64,
}

/// Greedy one-to-one pairing of `a` (after `tf`) with `b`; closest pairs first.
fn pair(a: &[Minutia], b: &[Minutia], tf: &Rigid, tol: &Tolerances) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    let proj: Vec<(f64, f64, f64)> = a
        .iter()
        .map(|m| {
            let (x, y) = tf.apply(m.x, m.y);
            (x, y, m.angle + tf.theta)
        })
        .collect();
    for (i, p) in proj.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = (p.0 - q.x).hypot(p.1 - q.y);
            if d <= tol.dist && ang_diff(p.2, q.angle) <= tol.angle {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut ua = vec![false; a.len()];
    let mut ub = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !ua[i] && !ub[j] {
            ua[i] = true;
            ub[j] = true;
            out.push((i, j));
        }
    }
    out
}

fn refine(a: &[Minutia], b: &[Minutia], pairs: &[(usize, usize)]) -> Option<Rigid> {
    let src: Vec<(f64, f64)> = pairs.iter().map(|&(i, _)| (a[i].x, a[i].y)).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|&(_, j)| (b[j].x, b[j].y)).collect();
    fit_rigid(&src, &dst)
}

/// Number of pairs under the best alignment of `a` onto `b`.
fn matched_one_way(a: &[Minutia], b: &[Minutia], scale: f64, cfg: &MatcherConfig) -> usize {
    let rot_bin = cfg.rotation_bin_deg.to_radians();
    let n_rot = (cfg.max_rotation_deg / cfg.rotation_bin_deg).round() as i64;
    let t_bin = cfg.translation_bin_500 * scale;
    let tol = Tolerances {
        dist: cfg.distance_tol_500 * scale,
        angle: cfg.angle_tol_deg.to_radians(),
    };
    // Each vote: (rotation bin, tx bin, ty bin) packed, plus the pair it came from.
    let mut votes: Vec<(u64, u32, u32)> = Vec::with_capacity(a.len() * b.len() * 3);
    let pack = |r: i64, tx: i64, ty: i64| -> u64 {
        (((r + 512) as u64) << 40) | (((tx + (1 << 19)) as u64) << 20) | ((ty + (1 << 19)) as u64)
    };
    let rotations: Vec<(i64, f64, f64)> = (-n_rot..=n_rot)
        .map(|k| {
            let (s, c) = (k as f64 * rot_bin).sin_cos();
            (k, s, c)
        })
        .collect();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = signed_diff(q.angle, p.angle);
            for &(k, s, c) in &rotations {
                if (d - k as f64 * rot_bin).abs() > rot_bin {
                    continue;
                }
                let tx = q.x - (c * p.x - s * p.y);
                let ty = q.y - (s * p.x + c * p.y);
                let key = pack(k, (tx / t_bin).floor() as i64, (ty / t_bin).floor() as i64);
                votes.push((key, i as u32, j as u32));
            }
        }
    }
    if votes.is_empty() {
        return 0;
    }
    votes.sort_unstable();
    let keys: Vec<u64> = votes.iter().map(|v| v.0).collect();
    let range_of = |key: u64| -> (usize, usize) {
        let lo = keys.partition_point(|&k| k < key);
        let hi = keys.partition_point(|&k| k <= key);
        (lo, hi)
    };
    // Raw bin counts.
    let mut bins: Vec<(u64, usize)> = Vec::new();
    let mut s = 0;
    while s < keys.len() {
        let mut e = s;
        while e < keys.len() && keys[e] == keys[s] {
            e += 1;
        }
        bins.push((keys[s], e - s));
        s = e;
    }
    let unpack = |key: u64| -> (i64, i64, i64) {
        (
            (key >> 40) as i64 - 512,
            ((key >> 20) & 0xFFFFF) as i64 - (1 << 19),
            (key & 0xFFFFF) as i64 - (1 << 19),
        )
    };
    // Smoothed support over the 3x3 translation neighbourhood.
    bins.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let shortlist = bins.len().min(4 * cfg.hypotheses.max(1));
    let mut scored: Vec<(usize, u64)> = bins[..shortlist]
        .iter()
        .map(|&(key, _)| {
            let (r, tx, ty) = unpack(key);
            let mut sum = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let (lo, hi) = range_of(pack(r, tx + dx, ty + dy));
                    sum += hi - lo;
                }
            }
            (sum, key)
        })
        .collect();
    scored.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut best = 0;
    for &(_, key) in scored.iter().take(cfg.hypotheses.max(1)) {
        let (r, tx, ty) = unpack(key);
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                let (lo, hi) = range_of(pack(r, tx + dx, ty + dy));
                pairs.extend(votes[lo..hi].iter().map(|v| (v.1 as usize, v.2 as usize)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let Some(init) = refine(a, b, &pairs).map(|mut tf| {
            if pairs.len() < 2 {
                tf.theta = r as f64 * rot_bin;
                let (i, j) = pairs[0];
                let (s, c) = tf.theta.sin_cos();
                tf.t = [b[j].x - (c * a[i].x - s * a[i].y), b[j].y - (s * a[i].x + c * a[i].y)];
            }
            tf
        }) else {
            continue;
        };
        let first = pair(a, b, &init, &tol);
        let mut m = first.len();
        if first.len() >= 2 {
            if let Some(tf) = refine(a, b, &first) {
                m = m.max(pair(a, b, &tf, &tol).len());
            }
        }
        best = best.max(m);
    }
    best
}

/// Similarity in `[0, 1]`: `2·matched / (|a| + |b|)` under the best rigid alignment,
/// evaluated in both directions.
pub fn match_minutiae(a: &MinutiaSet, b: &MinutiaSet) -> f64 {
    match_minutiae_with(a, b, &MatcherConfig::default())
}

pub fn match_minutiae_with(a: &MinutiaSet, b: &MinutiaSet, cfg: &MatcherConfig) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let scale = a.ppi.scale_from_500();
    let m = matched_one_way(&a.minutiae, &b.minutiae, scale, cfg)
        .max(matched_one_way(&b.minutiae, &a.minutiae, scale, cfg));
    (2.0 * m as f64 / (a.len() + b.len()) as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::minutiae::MinutiaKind;
    use crate::domain::Ppi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_set(seed: u64, n: usize) -> MinutiaSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = MinutiaSet::empty(512, 512, Ppi::P500);
        for _ in 0..n {
            s.minutiae.push(Minutia {
                x: rng.random_range(100.0..412.0),
                y: rng.random_range(100.0..412.0),
                angle: rng.random_range(0.0..2.0 * PI),
                kind: if rng.random_bool(0.5) {
                    MinutiaKind::Ending
                } else {
                    MinutiaKind::Bifurcation
                },
                quality: 50.0,
            });
        }
        s.sort();
        s
    }

    #[test]
    fn self_match_is_one() {
        let s = random_set(1, 40);
        assert_eq!(match_minutiae(&s, &s), 1.0);
    }

    #[test]
    fn empty_scores_zero() {
        let s = random_set(2, 10);
        let e = MinutiaSet::empty(512, 512, Ppi::P500);
        assert_eq!(match_minutiae(&s, &e), 0.0);
        assert_eq!(match_minutiae(&e, &e), 0.0);
    }

    #[test]
    fn rigid_transform_is_recovered() {
        let s = random_set(3, 50);
        let t = s.transformed(10f64.to_radians(), [10.0, 5.0]);
        assert!(match_minutiae(&s, &t) >= 0.9);
    }

    #[test]
    fn unrelated_sets_score_low() {
        let a = random_set(4, 50);
        let b = random_set(5, 50);
        assert!(match_minutiae(&a, &b) < 0.5);
    }

    #[test]
    fn fit_rigid_recovers_transform() {
        let src = vec![(0.0, 0.0), (10.0, 0.0), (0.0, 7.0), (3.0, 4.0)];
        let tf = Rigid { theta: 0.3, t: [5.0, -2.0] };
        let dst: Vec<_> = src.iter().map(|p| tf.apply(p.0, p.1)).collect();
        let got = fit_rigid(&src, &dst).unwrap();
        assert!((got.theta - 0.3).abs() < 1e-12);
        assert!((got.t[0] - 5.0).abs() < 1e-9 && (got.t[1] + 2.0).abs() < 1e-9);
    }
}
