//! Per-image feature extraction shared by the metrics, score and leakage tools.

use log::warn;
use rayon::prelude::*;

use super::minutiae::{extract_minutiae_with, foreground_mask, MinutiaSet, MinutiaeConfig};
use crate::binarizer::binarize_oracle;
use crate::domain::{DatasetManifest, GrayFingerprint, ManifestRecord};
use crate::imgproc::{orientation_field, Plane};

#[derive(Debug, Clone)]
pub struct ImageFeatures {
    pub minutiae: MinutiaSet,
    /// Mean orientation coherence over the foreground, scaled to `[0, 100]`.
    pub quality_proxy: f64,
}

pub fn image_features(img: &GrayFingerprint, cfg: &MinutiaeConfig) -> ImageFeatures {
    let map = binarize_oracle(img);
    let minutiae = extract_minutiae_with(&map, cfg);
    let fg = foreground_mask(&map, cfg);
    let n_fg = fg.iter().filter(|&&f| f).count();
    let quality_proxy = if n_fg == 0 {
        0.0
    } else {
        let period = (cfg.period_500 * img.ppi().scale_from_500()) as f32;
        let ink = Plane::new(
            img.width(),
            img.height(),
            img.pixels().iter().map(|v| 1.0 - v).collect(),
        );
        let field = orientation_field(&ink, 0.1 * period, 0.8 * period);
        let sum: f64 = fg
            .iter()
            .zip(&field.coherence.data)
            .filter(|(f, _)| **f)
            .map(|(_, &c)| c as f64)
            .sum();
        100.0 * sum / n_fg as f64
    };
    ImageFeatures {
        minutiae,
        quality_proxy,
    }
}

#[derive(Debug, Clone)]
pub struct ManifestFeatures {
    /// Readable records in manifest order, with their features.
    pub items: Vec<(ManifestRecord, ImageFeatures)>,
    /// Records whose image could not be read.
    pub skipped: usize,
}

impl ManifestFeatures {
    pub fn identities(&self) -> Vec<u64> {
        self.items.iter().map(|(r, _)| r.id).collect()
    }
}

/// Features for every image in the manifest; unreadable images are skipped with a warning.
pub fn manifest_features(manifest: &DatasetManifest, cfg: &MinutiaeConfig) -> ManifestFeatures {
    let results: Vec<Option<(ManifestRecord, ImageFeatures)>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let path = manifest.resolve(rec);
            match GrayFingerprint::read_png(&path) {
                Ok(img) => {
                    let mut f = image_features(&img, cfg);
                    f.minutiae.source = rec.path.clone();
                    Some((rec.clone(), f))
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    None
                }
            }
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    ManifestFeatures {
        items: results.into_iter().flatten().collect(),
        skipped,
    }
}
