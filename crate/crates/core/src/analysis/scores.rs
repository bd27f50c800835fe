//! Genuine, imposter and cross-dataset score distributions with histograms and ECDFs.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matcher::{match_minutiae_with, MatcherConfig};
use super::minutiae::MinutiaSet;
use super::features::ManifestFeatures;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Pairs of impressions of the same identity within one set.
    Genuine,
    /// Pairs of different identities within one set.
    Imposter,
    /// Every pairing between two sets.
    Cross,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Self::Genuine),
            "imposter" => Ok(Self::Imposter),
            "cross" => Ok(Self::Cross),
            _ => Err(Error::Usage(format!("unknown score mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreLabel {
    Genuine,
    Imposter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside are clamped into the end bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let step = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + step * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let k = (((v - lo) / step).floor().max(0.0) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Empirical CDF at the distinct sample values.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => out.push((x, f)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub label: ScoreLabel,
    pub mode: ScoreMode,
    pub seed: u64,
    /// Pairs available before the budget was applied.
    pub candidate_pairs: usize,
    /// Index pairs scored, in sampling order.
    pub pairs: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    pub histogram: Histogram,
    pub ecdf: Vec<(f64, f64)>,
}

impl ScoreDistribution {
    pub fn from_scores(
        mode: ScoreMode,
        seed: u64,
        candidate_pairs: usize,
        pairs: Vec<(usize, usize)>,
        scores: Vec<f64>,
    ) -> Self {
        let label = match mode {
            ScoreMode::Genuine => ScoreLabel::Genuine,
            _ => ScoreLabel::Imposter,
        };
        Self {
            label,
            mode,
            seed,
            candidate_pairs,
            histogram: Histogram::new(&scores, 0.0, 1.0, 50),
            ecdf: ecdf(&scores),
            pairs,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn median(&self) -> f64 {
        let mut v = self.scores.clone();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            f64::NAN
        } else if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        }
    }

    pub fn ecdf_csv(&self) -> String {
        let mut s = String::from("score,cdf\n");
        for (x, f) in &self.ecdf {
            s.push_str(&format!("{x},{f}\n"));
        }
        s
    }
}

/// Candidate index pairs for a mode. Identities are given per item.
pub fn candidate_pairs(
    mode: ScoreMode,
    ids_a: &[u64],
    ids_b: Option<&[u64]>,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    match (mode, ids_b) {
        (ScoreMode::Genuine | ScoreMode::Imposter, None) => {
            let want_same = mode == ScoreMode::Genuine;
            for i in 0..ids_a.len() {
                for j in (i + 1)..ids_a.len() {
                    if (ids_a[i] == ids_a[j]) == want_same {
                        out.push((i, j));
                    }
                }
            }
        }
        (ScoreMode::Cross, Some(b)) => {
            for i in 0..ids_a.len() {
                for j in 0..b.len() {
                    out.push((i, j));
                }
            }
        }
        (ScoreMode::Cross, None) => {
            return Err(Error::Usage("cross mode needs a second manifest".into()))
        }
        (_, Some(_)) => {
            return Err(Error::Usage(format!(
                "{mode:?} mode takes a single manifest"
            )))
        }
    }
    Ok(out)
}

/// Seeded subsample of at most `budget` pairs; all pairs are kept (in order) when they fit.
pub fn sample_pairs(pairs: &[(usize, usize)], budget: usize, seed: u64) -> Vec<(usize, usize)> {
    if pairs.len() <= budget {
        return pairs.to_vec();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, pairs.len(), budget).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|k| pairs[k]).collect()
}

/// Scores for feature sets already extracted from one or two datasets.
pub fn score_distributions_from_sets(
    sets_a: &[MinutiaSet],
    ids_a: &[u64],
    sets_b: Option<(&[MinutiaSet], &[u64])>,
    mode: ScoreMode,
    budget: usize,
    seed: u64,
    cfg: &MatcherConfig,
) -> Result<ScoreDistribution> {
    if budget == 0 {
        return Err(Error::InvalidValue("sample budget must be at least 1".into()));
    }
    if sets_a.len() != ids_a.len() {
        return Err(shape_err(sets_a.len(), ids_a.len()));
    }
    let all = candidate_pairs(mode, ids_a, sets_b.map(|(_, ids)| ids))?;
    let chosen = sample_pairs(&all, budget, seed);
    let other = sets_b.map(|(s, _)| s).unwrap_or(sets_a);
    let scores: Vec<f64> = chosen
        .par_iter()
        .map(|&(i, j)| match_minutiae_with(&sets_a[i], &other[j], cfg))
        .collect();
    Ok(ScoreDistribution::from_scores(mode, seed, all.len(), chosen, scores))
}

/// Scores between impressions of extracted datasets. `b` is required for
/// [`ScoreMode::Cross`] and rejected otherwise.
pub fn score_distributions(
    a: &ManifestFeatures,
    b: Option<&ManifestFeatures>,
    mode: ScoreMode,
    budget: usize,
    seed: u64,
    cfg: &MatcherConfig,
) -> Result<ScoreDistribution> {
    let sets_a: Vec<MinutiaSet> = a.items.iter().map(|(_, f)| f.minutiae.clone()).collect();
    let ids_a = a.identities();
    let b_parts = b.map(|b| {
        let sets: Vec<MinutiaSet> = b.items.iter().map(|(_, f)| f.minutiae.clone()).collect();
        (sets, b.identities())
    });
    score_distributions_from_sets(
        &sets_a,
        &ids_a,
        b_parts.as_ref().map(|(s, i)| (s.as_slice(), i.as_slice())),
        mode,
        budget,
        seed,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Ppi;

    #[test]
    fn genuine_pairs_are_counted() {
        let sets = vec![MinutiaSet::empty(64, 64, Ppi::P500); 2];
        let d = score_distributions_from_sets(
            &sets,
            &[7, 7],
            None,
            ScoreMode::Genuine,
            100,
            0,
            &MatcherConfig::default(),
        )
        .unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn imposter_pairs_are_counted() {
        let ids: Vec<u64> = (0..9).collect();
        assert_eq!(candidate_pairs(ScoreMode::Imposter, &ids, None).unwrap().len(), 36);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        assert!(candidate_pairs(ScoreMode::Cross, &[1], None).is_err());
        assert!(candidate_pairs(ScoreMode::Genuine, &[1], Some(&[2])).is_err());
    }

    #[test]
    fn budget_sampling_is_seeded() {
        let pairs: Vec<_> = (0..100).map(|i| (i, i + 1)).collect();
        assert_eq!(sample_pairs(&pairs, 10, 4), sample_pairs(&pairs, 10, 4));
        assert_eq!(sample_pairs(&pairs, 10, 4).len(), 10);
    }

    #[test]
    fn ecdf_ends_at_one() {
        let e = ecdf(&[0.2, 0.1, 0.2, 0.9]);
        assert_eq!(e, vec![(0.1, 0.25), (0.2, 0.75), (0.9, 1.0)]);
    }
}
