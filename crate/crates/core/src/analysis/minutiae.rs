//! Minutiae extraction from binary ridge maps: Zhang-Suen thinning,
//! crossing-number classification, border suppression and spur pruning.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::domain::{BinaryRidgeMap, Ppi};
use crate::imgproc::{distance_to_background, orientation_field, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinutiaKind {
    Ending,
    Bifurcation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    /// Radians in `[0, 2π)`.
    pub angle: f64,
    pub kind: MinutiaKind,
    /// Local orientation coherence scaled to `[0, 100]`.
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutiaSet {
    /// Sorted by `(y, x)`.
    pub minutiae: Vec<Minutia>,
    /// Foreground area in megapixels (native pixels).
    pub area_mp: f64,
    pub source: String,
    pub width: usize,
    pub height: usize,
    pub ppi: Ppi,
}

impl MinutiaSet {
    pub fn empty(width: usize, height: usize, ppi: Ppi) -> Self {
        Self {
            minutiae: Vec::new(),
            area_mp: 0.0,
            source: String::new(),
            width,
            height,
            ppi,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn count(&self, kind: MinutiaKind) -> usize {
        self.minutiae.iter().filter(|m| m.kind == kind).count()
    }

    pub fn mean_quality(&self) -> f64 {
        if self.minutiae.is_empty() {
            0.0
        } else {
            self.minutiae.iter().map(|m| m.quality).sum::<f64>() / self.minutiae.len() as f64
        }
    }

    /// Applies `p ↦ R(θ)·p + t` to every minutia (angles rotate with it).
    pub fn transformed(&self, theta: f64, t: [f64; 2]) -> MinutiaSet {
        let (s, c) = theta.sin_cos();
        let mut out = self.clone();
        for m in &mut out.minutiae {
            let (x, y) = (m.x, m.y);
            m.x = c * x - s * y + t[0];
            m.y = s * x + c * y + t[1];
            m.angle = (m.angle + theta).rem_euclid(2.0 * PI);
        }
        out.sort();
        out
    }

    pub fn sort(&mut self) {
        self.minutiae
            .sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foreground {
    /// Morphological closing of the ridge pixels.
    Estimate,
    /// The whole frame is foreground (margins are measured from the image border).
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinutiaeConfig {
    /// Nominal ridge period at 500 ppi.
    pub period_500: f64,
    /// Minutiae closer than this to the foreground boundary are dropped, in ridge periods.
    pub border_margin_periods: f64,
    /// Endings on spurs shorter than this (in ridge periods) are pruned.
    pub spur_periods: f64,
    /// Minutiae closer than this (500-ppi pixels) are merged.
    pub merge_px_500: f64,
    pub foreground: Foreground,
}

impl Default for MinutiaeConfig {
    fn default() -> Self {
        Self {
            period_500: 9.5,
            border_margin_periods: 1.5,
            spur_periods: 0.5,
            merge_px_500: 6.0,
            foreground: Foreground::Estimate,
        }
    }
}

const NB: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn px(bits: &[u8], w: usize, h: usize, x: i64, y: i64) -> u8 {
    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
        0
    } else {
        bits[y as usize * w + x as usize]
    }
}

/// Zhang-Suen thinning to an 8-connected one-pixel skeleton.
pub fn thin(bits: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut img = bits.to_vec();
    let mut del = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            del.clear();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if px(&img, w, h, x, y) == 0 {
                        continue;
                    }
                    let p: Vec<u8> = NB.iter().map(|(dx, dy)| px(&img, w, h, x + dx, y + dy)).collect();
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    // p indices: 0=P2(N) 1=P3(NE) 2=P4(E) 3=P5(SE) 4=P6(S) 5=P7(SW) 6=P8(W) 7=P9(NW)
                    let ok = if pass == 0 {
                        p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0
                    } else {
                        p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0
                    };
                    if ok {
                        del.push(y as usize * w + x as usize);
                    }
                }
            }
            for &i in &del {
                img[i] = 0;
            }
            changed |= !del.is_empty();
        }
        if !changed {
            break;
        }
    }
    img
}

/// Half the number of value changes around the 8-neighbourhood.
pub fn crossing_number(skel: &[u8], w: usize, h: usize, x: usize, y: usize) -> u32 {
    let p: Vec<u8> = NB
        .iter()
        .map(|(dx, dy)| px(skel, w, h, x as i64 + dx, y as i64 + dy))
        .collect();
    let mut s = 0u32;
    for i in 0..8 {
        s += (p[i] as i32 - p[(i + 1) % 8] as i32).unsigned_abs();
    }
    s / 2
}

fn neighbours(skel: &[u8], w: usize, h: usize, x: usize, y: usize) -> Vec<(usize, usize)> {
    NB.iter()
        .filter_map(|(dx, dy)| {
            let (xx, yy) = (x as i64 + dx, y as i64 + dy);
            (px(skel, w, h, xx, yy) == 1).then_some((xx as usize, yy as usize))
        })
        .collect()
}

/// Follows the skeleton from `start` through `first` for up to `max_len` steps.
/// Returns the path end and whether it stopped at a junction pixel.
fn trace(
    skel: &[u8],
    cn: &[u32],
    w: usize,
    h: usize,
    start: (usize, usize),
    first: (usize, usize),
    max_len: usize,
) -> ((usize, usize), usize, bool) {
    let mut prev = start;
    let mut cur = first;
    let mut len = 1;
    loop {
        if cn[cur.1 * w + cur.0] >= 3 {
            return (cur, len, true);
        }
        if len >= max_len {
            return (cur, len, false);
        }
        let next = neighbours(skel, w, h, cur.0, cur.1)
            .into_iter()
            .filter(|&n| n != prev && n != start)
            .min_by_key(|&(nx, ny)| {
                // Prefer 4-connected continuations for a deterministic walk.
                (nx as i64 - cur.0 as i64).abs() + (ny as i64 - cur.1 as i64).abs()
            });
        match next {
            Some(n) => {
                prev = cur;
                cur = n;
                len += 1;
            }
            None => return (cur, len, false),
        }
    }
}

fn angle_of(from: (usize, usize), to: (usize, usize)) -> f64 {
    (to.1 as f64 - from.1 as f64)
        .atan2(to.0 as f64 - from.0 as f64)
        .rem_euclid(2.0 * PI)
}

fn circ_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn closing(bits: &[u8], w: usize, h: usize, r: f32) -> Vec<bool> {
    // Work on a padded canvas so the frame edge behaves like background.
    let pad = r.ceil() as usize + 2;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut not_ridge = vec![true; pw * ph];
    for y in 0..h {
        for x in 0..w {
            not_ridge[(y + pad) * pw + x + pad] = bits[y * w + x] == 0;
        }
    }
    let d_to_ridge = distance_to_background(&not_ridge, pw, ph);
    let dilated: Vec<bool> = d_to_ridge.iter().map(|&d| d <= r).collect();
    let d_in = distance_to_background(&dilated, pw, ph);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = d_in[(y + pad) * pw + x + pad] > r;
        }
    }
    out
}

pub fn foreground_mask(map: &BinaryRidgeMap, cfg: &MinutiaeConfig) -> Vec<bool> {
    let (w, h) = (map.width(), map.height());
    match cfg.foreground {
        Foreground::Full => vec![true; w * h],
        Foreground::Estimate => {
            if map.count_ones() == 0 {
                return vec![false; w * h];
            }
            let scale = map.ppi().scale_from_500();
            closing(map.pixels(), w, h, (1.5 * cfg.period_500 * scale) as f32)
        }
    }
}

pub fn extract_minutiae(map: &BinaryRidgeMap) -> MinutiaSet {
    extract_minutiae_with(map, &MinutiaeConfig::default())
}

pub fn extract_minutiae_with(map: &BinaryRidgeMap, cfg: &MinutiaeConfig) -> MinutiaSet {
    let (w, h) = (map.width(), map.height());
    let fg = foreground_mask(map, cfg);
    let area = fg.iter().filter(|&&f| f).count();
    let mut set = MinutiaSet::empty(w, h, map.ppi());
    set.area_mp = area as f64 / 1e6;
    if map.count_ones() == 0 {
        return set;
    }
    let scale = map.ppi().scale_from_500();
    let period = cfg.period_500 * scale;
    let margin = cfg.border_margin_periods * period;
    let spur = (cfg.spur_periods * period).ceil() as usize;
    let trace_len = period.ceil() as usize;
    let merge = cfg.merge_px_500 * scale;

    let skel = thin(map.pixels(), w, h);
    let dist = distance_to_background(&fg, w, h);
    let mut cn = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            if skel[y * w + x] == 1 {
                cn[y * w + x] = crossing_number(&skel, w, h, x, y);
            }
        }
    }
    let field = orientation_field(
        &Plane::new(w, h, map.pixels().iter().map(|&b| b as f32).collect()),
        0.3 * period as f32,
        period as f32,
    );

    let mut raw: Vec<Minutia> = Vec::new();
    let mut spurious_junctions = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if skel[i] == 0 || (cn[i] != 1 && cn[i] != 3) {
                continue;
            }
            let nbs = neighbours(&skel, w, h, x, y);
            let (kind, angle) = if cn[i] == 1 {
                let Some(&first) = nbs.first() else { continue };
                let (end, len, junction) = trace(&skel, &cn, w, h, (x, y), first, spur.max(trace_len));
                if junction && len < spur {
                    spurious_junctions.push(end);
                    continue;
                }
                // Points from the ridge body out through the ending.
                (MinutiaKind::Ending, angle_of(end, (x, y)))
            } else {
                // One branch per 8-connected group of neighbours.
                let mut branches: Vec<(usize, usize)> = Vec::new();
                let p: Vec<u8> = NB
                    .iter()
                    .map(|(dx, dy)| px(&skel, w, h, x as i64 + dx, y as i64 + dy))
                    .collect();
                for k in 0..8 {
                    if p[k] == 1 && p[(k + 7) % 8] == 0 {
                        let (dx, dy) = NB[k];
                        branches.push(((x as i64 + dx) as usize, (y as i64 + dy) as usize));
                    }
                }
                if branches.len() != 3 {
                    continue;
                }
                let dirs: Vec<f64> = branches
                    .iter()
                    .map(|&b| {
                        let (end, _, _) = trace(&skel, &cn, w, h, (x, y), b, trace_len);
                        angle_of((x, y), end)
                    })
                    .collect();
                // The two closest branches are the forks; the minutia points between them.
                let pairs = [(0, 1), (0, 2), (1, 2)];
                let &(a, b) = pairs
                    .iter()
                    .min_by(|p, q| {
                        circ_diff(dirs[p.0], dirs[p.1]).total_cmp(&circ_diff(dirs[q.0], dirs[q.1]))
                    })
                    .expect("three pairs");
                let (sx, sy) = (dirs[a].cos() + dirs[b].cos(), dirs[a].sin() + dirs[b].sin());
                (MinutiaKind::Bifurcation, sy.atan2(sx).rem_euclid(2.0 * PI))
            };
            if (dist[i] as f64) < margin {
                continue;
            }
            raw.push(Minutia {
                x: x as f64,
                y: y as f64,
                angle,
                kind,
                quality: (field.coherence.data[i] as f64 * 100.0).clamp(0.0, 100.0),
            });
        }
    }
    raw.retain(|m| {
        !(m.kind == MinutiaKind::Bifurcation
            && spurious_junctions
                .iter()
                .any(|&(jx, jy)| (jx as f64 - m.x).abs() <= 1.0 && (jy as f64 - m.y).abs() <= 1.0))
    });
    // Merge close pairs: the pair is replaced by its first member at the midpoint.
    let mut used = vec![false; raw.len()];
    let mut merged = Vec::with_capacity(raw.len());
    for i in 0..raw.len() {
        if used[i] {
            continue;
        }
        let mut m = raw[i];
        for j in (i + 1)..raw.len() {
            if !used[j] && (raw[j].x - m.x).hypot(raw[j].y - m.y) < merge {
                used[j] = true;
                m.x = 0.5 * (m.x + raw[j].x);
                m.y = 0.5 * (m.y + raw[j].y);
                break;
            }
        }
        merged.push(m);
    }
    set.minutiae = merged;
    set.sort();
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas() -> (Vec<u8>, usize) {
        (vec![0u8; 128 * 128], 128)
    }

    fn full() -> MinutiaeConfig {
        MinutiaeConfig {
            foreground: Foreground::Full,
            ..Default::default()
        }
    }

    #[test]
    fn blank_map_is_empty() {
        let m = BinaryRidgeMap::zeros(256, 256, Ppi::P250);
        let s = extract_minutiae(&m);
        assert!(s.is_empty());
        assert_eq!(s.area_mp, 0.0);
    }

    #[test]
    fn straight_ridge_has_two_endings() {
        let (mut b, n) = canvas();
        for x in 54..74 {
            b[64 * n + x] = 1;
        }
        let m = BinaryRidgeMap::new(n, n, Ppi::P500, b).unwrap();
        let s = extract_minutiae_with(&m, &full());
        assert_eq!(s.count(MinutiaKind::Ending), 2);
        assert_eq!(s.count(MinutiaKind::Bifurcation), 0);
    }

    #[test]
    fn y_junction_has_one_bifurcation_and_three_endings() {
        let (mut b, n) = canvas();
        let (cx, cy) = (64usize, 64usize);
        for k in 0..=15 {
            b[(cy - k) * n + cx] = 1;
            b[(cy + k) * n + cx - k] = 1;
            b[(cy + k) * n + cx + k] = 1;
        }
        let m = BinaryRidgeMap::new(n, n, Ppi::P500, b).unwrap();
        let s = extract_minutiae_with(&m, &full());
        assert_eq!(s.count(MinutiaKind::Bifurcation), 1);
        assert_eq!(s.count(MinutiaKind::Ending), 3);
    }

    #[test]
    fn thinning_keeps_one_pixel_lines() {
        let (mut b, n) = canvas();
        for x in 20..100 {
            for y in 60..65 {
                b[y * n + x] = 1;
            }
        }
        let s = thin(&b, n, n);
        for x in 30..90 {
            let col: u8 = (0..n).map(|y| s[y * n + x]).sum();
            assert_eq!(col, 1, "column {x}");
        }
    }
}
