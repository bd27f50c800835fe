//! Two-stage identity-leakage search: an embedding similarity filter followed
//! by minutiae matching of the surviving pairs.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matcher::{match_minutiae_with, MatcherConfig};
use super::minutiae::MinutiaSet;
use crate::domain::DatasetManifest;
use crate::error::{Error, Result};

/// One print taking part in the search.
#[derive(Debug, Clone)]
pub struct LeakageItem {
    pub id: u64,
    pub path: String,
    /// Unit-norm embedding.
    pub embedding: Vec<f32>,
    pub minutiae: MinutiaSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedPair {
    pub synth_index: usize,
    pub synth_id: u64,
    pub synth_path: String,
    pub train_index: usize,
    pub train_id: u64,
    pub train_path: String,
    pub stage1_score: f64,
    pub stage2_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub stage1_threshold: f64,
    pub stage2_threshold: f64,
    pub pairs_total: usize,
    pub stage1_passed: usize,
    pub flagged: Vec<FlaggedPair>,
    /// Largest matcher score among pairs that passed stage 1 (0 if none).
    pub max_stage2_score: f64,
}

impl LeakageReport {
    pub fn flagged_keys(&self) -> BTreeSet<(usize, usize)> {
        self.flagged.iter().map(|f| (f.synth_index, f.train_index)).collect()
    }

    pub fn flagged_synth_ids(&self) -> BTreeSet<u64> {
        self.flagged.iter().map(|f| f.synth_id).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for f in &self.flagged {
            s.push_str(&serde_json::to_string(f)?);
            s.push('\n');
        }
        Ok(s)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pairs with embedding similarity below `stage1_threshold` are discarded; the
/// rest are flagged when their matcher score reaches `stage2_threshold`.
/// A threshold of `-inf` disables the first stage.
pub fn leakage_search(
    synth: &[LeakageItem],
    train: &[LeakageItem],
    stage1_threshold: f64,
    stage2_threshold: f64,
    cfg: &MatcherConfig,
) -> Result<LeakageReport> {
    if !(0.0..=1.0).contains(&stage2_threshold) {
        return Err(Error::InvalidValue(format!(
            "stage-2 threshold {stage2_threshold} outside the matcher range [0, 1]"
        )));
    }
    if stage1_threshold.is_nan() {
        return Err(Error::InvalidValue("stage-1 threshold is NaN".into()));
    }
    let passed: Vec<(usize, usize, f64)> = (0..synth.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            train.iter().enumerate().filter_map(move |(j, t)| {
                let s = cosine(&synth[i].embedding, &t.embedding);
                (stage1_threshold == f64::NEG_INFINITY || s >= stage1_threshold).then_some((i, j, s))
            })
        })
        .collect();
    let scored: Vec<f64> = passed
        .par_iter()
        .map(|&(i, j, _)| match_minutiae_with(&synth[i].minutiae, &train[j].minutiae, cfg))
        .collect();
    let max_stage2_score = scored.iter().cloned().fold(0.0, f64::max);
    let flagged = passed
        .iter()
        .zip(&scored)
        .filter(|(_, &s2)| s2 >= stage2_threshold)
        .map(|(&(i, j, s1), &s2)| FlaggedPair {
            synth_index: i,
            synth_id: synth[i].id,
            synth_path: synth[i].path.clone(),
            train_index: j,
            train_id: train[j].id,
            train_path: train[j].path.clone(),
            stage1_score: s1,
            stage2_score: s2,
        })
        .collect();
    Ok(LeakageReport {
        stage1_threshold,
        stage2_threshold,
        pairs_total: synth.len() * train.len(),
        stage1_passed: passed.len(),
        flagged,
        max_stage2_score,
    })
}

/// Smallest threshold whose false-accept rate on `imposter` is at most `far`.
pub fn threshold_at_far(imposter: &[f64], far: f64) -> Result<f64> {
    if imposter.is_empty() {
        return Err(Error::Insufficient("no imposter scores".into()));
    }
    let mut v = imposter.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((far * v.len() as f64).floor() as usize).min(v.len() - 1);
    Ok(v[k].next_up())
}

/// Embedding threshold that keeps at least `keep` of the given same-identity similarities.
pub fn calibrate_stage1(genuine_similarities: &[f64], keep: f64) -> Result<f64> {
    if genuine_similarities.is_empty() {
        return Err(Error::Insufficient("no genuine similarities".into()));
    }
    let mut v = genuine_similarities.to_vec();
    v.sort_by(f64::total_cmp);
    let drop = ((1.0 - keep).max(0.0) * v.len() as f64).floor() as usize;
    Ok(v[drop.min(v.len() - 1)])
}

/// Keeps one randomly chosen impression per identity, in identity order.
pub fn one_per_identity(manifest: &DatasetManifest, seed: u64) -> DatasetManifest {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = DatasetManifest::new(manifest.root.clone(), manifest.generator_config_hash.clone());
    for (_, recs) in manifest.by_identity() {
        let k = rng.random_range(0..recs.len());
        out.records.push(recs[k].clone());
    }
    out
}

/// Release manifest without the flagged synthetic identities.
pub fn exclude_identities(manifest: &DatasetManifest, ids: &BTreeSet<u64>) -> DatasetManifest {
    manifest.filtered(|r| !ids.contains(&r.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::minutiae::{Minutia, MinutiaKind};
    use crate::domain::Ppi;

    fn item(id: u64, seed: u64) -> LeakageItem {
        let mut s = MinutiaSet::empty(512, 512, Ppi::P500);
        let mut x = seed.wrapping_mul(0x9E3779B97F4A7C15);
        for _ in 0..30 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            s.minutiae.push(Minutia {
                x: 50.0 + (x % 400) as f64,
                y: 50.0 + ((x >> 20) % 400) as f64,
                angle: ((x >> 40) % 628) as f64 / 100.0,
                kind: MinutiaKind::Ending,
                quality: 50.0,
            });
        }
        s.sort();
        LeakageItem {
            id,
            path: format!("{id}.png"),
            embedding: vec![(seed % 7) as f32, 1.0, (seed % 3) as f32],
            minutiae: s,
        }
    }

    #[test]
    fn planted_copy_is_flagged() {
        let train: Vec<_> = (0..6).map(|i| item(i, i + 1)).collect();
        let mut synth: Vec<_> = (0..5).map(|i| item(100 + i, 1000 + i)).collect();
        synth.push(LeakageItem {
            id: 999,
            ..train[3].clone()
        });
        let r = leakage_search(&synth, &train, 0.5, 0.9, &MatcherConfig::default()).unwrap();
        assert!(r.flagged_keys().contains(&(5, 3)));
        assert_eq!(r.max_stage2_score, 1.0);
    }

    #[test]
    fn stage2_threshold_must_be_in_range() {
        assert!(leakage_search(&[], &[], 0.0, 1.5, &MatcherConfig::default()).is_err());
    }

    #[test]
    fn far_threshold_respects_rate() {
        let imp: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let t = threshold_at_far(&imp, 0.01).unwrap();
        let over = imp.iter().filter(|&&s| s >= t).count();
        assert!(over <= 10);
        assert!(over >= 9);
    }
}
