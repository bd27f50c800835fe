//! Per-dataset fingerprint statistics, with published reference rows for context.

use serde::{Deserialize, Serialize};

use super::features::ManifestFeatures;
use super::minutiae::MinutiaKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    /// Population mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::new(0.0, 0.0);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self::new(mean, sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    /// `false` for published reference values.
    pub measured: bool,
    pub images: usize,
    pub skipped: usize,
    pub total_minutiae: MeanSd,
    pub endings: MeanSd,
    pub bifurcations: MeanSd,
    pub minutiae_quality: MeanSd,
    pub area_mp: MeanSd,
    /// Orientation-coherence proxy for measured rows; the reference rows carry NFIQ2.
    pub image_quality: MeanSd,
}

pub const METRICS_HEADER: &str = "dataset,source,images,skipped,total_minutiae_mean,total_minutiae_sd,\
endings_mean,endings_sd,bifurcations_mean,bifurcations_sd,minutiae_quality_mean,minutiae_quality_sd,\
area_mp_mean,area_mp_sd,image_quality_mean,image_quality_sd,image_quality_kind";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let f = |m: &MeanSd| format!("{:.4},{:.4}", m.mean, m.sd);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            if self.measured { "measured" } else { "reference" },
            self.images,
            self.skipped,
            f(&self.total_minutiae),
            f(&self.endings),
            f(&self.bifurcations),
            f(&self.minutiae_quality),
            f(&self.area_mp),
            f(&self.image_quality),
            if self.measured { "coherence_proxy" } else { "nfiq2" },
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

pub fn dataset_metrics(name: &str, features: &ManifestFeatures) -> MetricsRow {
    let col = |f: &dyn Fn(&super::features::ImageFeatures) -> f64| -> MeanSd {
        MeanSd::of(&features.items.iter().map(|(_, x)| f(x)).collect::<Vec<_>>())
    };
    MetricsRow {
        dataset: name.to_string(),
        measured: true,
        images: features.items.len(),
        skipped: features.skipped,
        total_minutiae: col(&|x| x.minutiae.len() as f64),
        endings: col(&|x| x.minutiae.count(MinutiaKind::Ending) as f64),
        bifurcations: col(&|x| x.minutiae.count(MinutiaKind::Bifurcation) as f64),
        minutiae_quality: col(&|x| x.minutiae.mean_quality()),
        area_mp: col(&|x| x.minutiae.area_mp),
        image_quality: col(&|x| x.quality_proxy),
    }
}

/// Published statistics for a real plain-print database and the synthetic
/// database it is compared against. Not comparable with measured rows.
pub fn reference_rows() -> Vec<MetricsRow> {
    let row = |name: &str, v: [(f64, f64); 6]| MetricsRow {
        dataset: name.to_string(),
        measured: false,
        images: 0,
        skipped: 0,
        total_minutiae: MeanSd::new(v[0].0, v[0].1),
        endings: MeanSd::new(v[1].0, v[1].1),
        bifurcations: MeanSd::new(v[2].0, v[2].1),
        minutiae_quality: MeanSd::new(v[3].0, v[3].1),
        area_mp: MeanSd::new(v[4].0, v[4].1),
        image_quality: MeanSd::new(v[5].0, v[5].1),
    };
    vec![
        row(
            "reference_real_db1",
            [(92.70, 24.16), (49.98, 16.06), (42.71, 13.36), (73.50, 15.07), (0.179, 0.038), (54.21, 22.73)],
        ),
        row(
            "reference_synthetic_db2",
            [(79.30, 16.59), (43.00, 10.14), (36.30, 9.37), (72.14, 16.05), (0.171, 0.019), (63.63, 21.38)],
        ),
    ]
}

/// Published one-sided KS statistic between the two imposter distributions.
pub const REFERENCE_KS_D: f64 = 0.0462;
pub const REFERENCE_KS_P: f64 = 0.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::features::{image_features, ImageFeatures};
    use crate::analysis::minutiae::MinutiaeConfig;
    use crate::domain::{GrayFingerprint, ManifestRecord, Ppi};

    #[test]
    fn blank_dataset_has_zero_minutiae() {
        let img = GrayFingerprint::constant(512, 512, Ppi::P500, 1.0).unwrap();
        let f: ImageFeatures = image_features(&img, &MinutiaeConfig::default());
        let rec = ManifestRecord {
            id: 0,
            imp: 0,
            seed_id: 0,
            seed_distort: 0,
            seed_texture: 0,
            path: "a.png".into(),
            sha256: String::new(),
        };
        let mf = ManifestFeatures {
            items: vec![(rec, f)],
            skipped: 0,
        };
        let r = dataset_metrics("blank", &mf);
        assert_eq!(r.total_minutiae.mean, 0.0);
        assert_eq!(r.endings.mean, 0.0);
        assert_eq!(r.bifurcations.mean, 0.0);
    }

    #[test]
    fn reference_rows_carry_published_means() {
        let r = reference_rows();
        assert_eq!(r[0].total_minutiae.mean, 92.70);
        assert_eq!(r[1].total_minutiae.mean, 79.30);
        assert!(metrics_csv(&r).lines().count() == 3);
    }
}
