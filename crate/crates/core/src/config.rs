//! Layered run configuration, resolved-config snapshots and run-directory locks.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{MatcherConfig, MinutiaeConfig, ScoreMode};
use crate::binarizer::BinarizerConfig;
use crate::corpus::CorpusConfig;
use crate::domain::derive_seed;
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::masterprint::MasterprintConfig;
use crate::render::RendererConfig;
use crate::warp::WarpConfig;

pub const DEFAULT_OUT: &str = "fplab-run";
pub const LOCK_FILE: &str = ".fplab.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Subcommand that produced this configuration.
    pub command: String,
    /// Global seed; when set, every component seed is derived from it.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub device: String,
    pub corpus: CorpusSection,
    pub binarizer: TrainSection<BinarizerConfig>,
    pub masterprint: TrainSection<MasterprintConfig>,
    pub warp: TrainSection<WarpConfig>,
    pub renderer: RendererSection,
    pub synth: SynthSection,
    pub features: FeatureSection,
    pub distributions: DistributionSection,
    pub ks: KsSection,
    pub leakage: LeakageSection,
    pub embedding: EmbeddingSection,
    pub eval: EvalSection,
    pub timings: TimingSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: None,
            out: PathBuf::from(DEFAULT_OUT),
            device: "cpu".into(),
            corpus: Default::default(),
            binarizer: Default::default(),
            masterprint: Default::default(),
            warp: Default::default(),
            renderer: Default::default(),
            synth: Default::default(),
            features: Default::default(),
            distributions: Default::default(),
            ks: Default::default(),
            leakage: Default::default(),
            embedding: Default::default(),
            eval: Default::default(),
            timings: Default::default(),
            report: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub fingers: usize,
    pub impressions: usize,
    pub seed: u64,
    pub settings: CorpusConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            fingers: 50,
            impressions: 5,
            seed: 1,
            settings: CorpusConfig::default(),
        }
    }
}

/// Training inputs shared by the generator stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection<C> {
    /// Manifest of the training corpus.
    pub corpus: Option<PathBuf>,
    pub settings: C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RendererSection {
    pub corpus: Option<PathBuf>,
    /// Directory holding the trained binarizer.
    pub binarizer: Option<PathBuf>,
    pub settings: RendererConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub bundle: Option<PathBuf>,
    pub ids: usize,
    pub imps: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            bundle: None,
            ids: 2,
            imps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    /// Manifests summarised by `metrics`.
    pub manifests: Vec<PathBuf>,
    /// Display names, one per manifest; defaults to the manifest directory name.
    pub names: Vec<String>,
    pub minutiae: MinutiaeConfig,
    pub matcher: MatcherConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionSection {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub mode: ScoreMode,
    pub budget: usize,
    pub seed: u64,
    /// Output stem; defaults to the mode name.
    pub label: Option<String>,
}

impl Default for DistributionSection {
    fn default() -> Self {
        Self {
            a: None,
            b: None,
            mode: ScoreMode::Genuine,
            budget: 100_000,
            seed: 3,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct KsSection {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageSection {
    pub synth: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    /// Embedding similarity threshold; calibrated on the training set when unset.
    pub stage1: Option<f64>,
    /// Fraction of training genuine similarities kept by a calibrated stage 1.
    pub keep: f64,
    /// Matcher threshold; calibrated at `far` on training imposters when unset.
    pub stage2: Option<f64>,
    pub far: f64,
    /// Imposter pairs scored for stage-2 calibration.
    pub calibration_budget: usize,
    pub seed: u64,
}

impl Default for LeakageSection {
    fn default() -> Self {
        Self {
            synth: None,
            train: None,
            embedding: None,
            stage1: None,
            keep: 0.99,
            stage2: None,
            far: 1e-4,
            calibration_budget: 20_000,
            seed: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub manifest: Option<PathBuf>,
    /// Directory with weights to finetune from.
    pub init: Option<PathBuf>,
    pub settings: EmbeddingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub embedding: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    /// Gallery manifests; the first must contain every probe identity.
    pub gallery: Vec<PathBuf>,
    pub far: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            embedding: None,
            probe: None,
            gallery: Vec::new(),
            far: vec![1e-4, 1e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub bundle: Option<PathBuf>,
    pub trials: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { bundle: None, trials: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Run directory to summarise; defaults to the output directory.
    pub run: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a configuration file, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Replaces component seeds with 63-bit values derived from the global seed.
    pub fn derive_seeds(&mut self) {
        let Some(s) = self.seed else { return };
        self.corpus.seed = derive_seed(s, &[1]) >> 1;
        self.binarizer.settings.seed = derive_seed(s, &[2]) >> 1;
        self.masterprint.settings.seed = derive_seed(s, &[3]) >> 1;
        self.warp.settings.seed = derive_seed(s, &[4]) >> 1;
        self.renderer.settings.seed = derive_seed(s, &[5]) >> 1;
        self.distributions.seed = derive_seed(s, &[6]) >> 1;
        self.leakage.seed = derive_seed(s, &[7]) >> 1;
        self.embedding.settings.seed = derive_seed(s, &[8]) >> 1;
    }

    /// Global seed used directly by synthesis and timing.
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.out.join(format!("{}.config.toml", self.command))
    }

    /// Writes the resolved configuration next to the run outputs.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.snapshot_path();
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
    _file: File,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::PathCollision(path.clone()),
                _ => Error::io(&path, e),
            })?;
        writeln!(file, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[synth]\nids = 2\nwidth = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[synth]\nids = 4").unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.synth.ids, 4);
        assert_eq!(cfg.synth.imps, 3);
    }

    #[test]
    fn derived_seeds_depend_only_on_the_global_seed() {
        let mut a = RunConfig {
            seed: Some(7),
            ..Default::default()
        };
        let mut b = a.clone();
        b.warp.settings.seed = 999;
        a.derive_seeds();
        b.derive_seeds();
        assert_eq!(a, b);
        assert_ne!(a.warp.settings.seed, a.renderer.settings.seed);
    }

    #[test]
    fn a_second_lock_on_the_same_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::PathCollision(_))));
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
