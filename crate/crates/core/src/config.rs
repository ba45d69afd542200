//! Run configuration (TOML) and the analysis fingerprint carried by every
//! artifact.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scattering::{ScatteringConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Jtfs,
    Separable,
    Mfcc,
    MfccGram,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Jtfs,
        FeatureKind::Separable,
        FeatureKind::Mfcc,
        FeatureKind::MfccGram,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::Jtfs => "jtfs",
            FeatureKind::Separable => "separable",
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::MfccGram => "mfcc-gram",
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            FeatureKind::Jtfs => Some(Variant::Joint),
            FeatureKind::Separable => Some(Variant::Separable),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown feature kind {s:?} (expected jtfs, separable, mfcc or mfcc-gram)"
                ))
            })
    }
}

/// Everything that changes feature values. Its canonical TOML form is what
/// the fingerprint hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub features: FeatureKind,
    pub sample_rate: u32,
    /// Peak-normalize every clip after loading.
    pub normalize: bool,
    pub quality_factor: f64,
    pub octaves: u32,
    pub min_center_frequency: f64,
    /// Seconds.
    pub time_constant: f64,
    /// Octaves.
    pub frequential_width: f64,
    pub scales: Vec<f64>,
    pub max_rate: Option<f64>,
    pub multirate: bool,
    pub oversampling: u32,
    /// Median scaling constant of the log compression.
    pub epsilon: f64,
    /// MFCC frame length and hop, seconds.
    pub mfcc_frame: f64,
    pub mfcc_hop: f64,
    pub mel_bands: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let s = ScatteringConfig::default();
        AnalysisConfig {
            features: FeatureKind::Jtfs,
            sample_rate: s.sample_rate as u32,
            normalize: true,
            quality_factor: s.quality_factor,
            octaves: s.octaves,
            min_center_frequency: s.min_center_frequency,
            time_constant: s.time_constant,
            frequential_width: s.frequential_width,
            scales: s.scales,
            max_rate: s.max_rate,
            multirate: s.multirate,
            oversampling: s.oversampling,
            epsilon: 1.0,
            mfcc_frame: 0.025,
            mfcc_hop: 0.0125,
            mel_bands: 40,
        }
    }
}

impl AnalysisConfig {
    pub fn scattering(&self) -> ScatteringConfig {
        ScatteringConfig {
            sample_rate: self.sample_rate as f64,
            quality_factor: self.quality_factor,
            octaves: self.octaves,
            min_center_frequency: self.min_center_frequency,
            time_constant: self.time_constant,
            frequential_width: self.frequential_width,
            scales: self.scales.clone(),
            max_rate: self.max_rate,
            multirate: self.multirate,
            oversampling: self.oversampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.mfcc_frame > 0.0 && self.mfcc_hop > 0.0) || self.mel_bands == 0 {
            return Err(Error::InvalidParameter("bad MFCC framing".into()));
        }
        if self.features.variant().is_some() {
            self.scattering().validate()?;
        }
        Ok(())
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("analysis config serializes")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmnnConfig {
    /// Target neighbors per sample.
    pub neighbors: usize,
    pub max_iterations: usize,
    /// Relative loss change below which training stops.
    pub tolerance: f64,
    /// L-BFGS history length.
    pub memory: usize,
    /// Hinge margin.
    pub margin: f64,
    /// Negatives per anchor once the training set reaches `exact_below`.
    pub negative_cap: usize,
    pub exact_below: usize,
    pub seed: u64,
}

impl Default for LmnnConfig {
    fn default() -> Self {
        LmnnConfig {
            neighbors: 5,
            max_iterations: 200,
            tolerance: 1e-5,
            memory: 7,
            margin: 1.0,
            negative_cap: 500,
            exact_below: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Rank R of precision and AP.
    pub rank: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { rank: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub manifest: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub gaussianizer: Option<PathBuf>,
    /// Directory of `*.scl` metric files loaded at startup; retrained metrics
    /// are written here too.
    pub metrics_dir: Option<PathBuf>,
    pub annotations_dir: Option<PathBuf>,
    /// When set, mutating requests need `Authorization: Bearer <token>`.
    pub token: Option<String>,
    /// Queue a retrain of the submitting subject after each annotation.
    pub auto_retrain: bool,
    /// Stimulus ids shown for annotation; defaults to the 78 canonical names.
    pub stimuli: Option<Vec<String>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            manifest: None,
            store: None,
            gaussianizer: None,
            metrics_dir: None,
            annotations_dir: None,
            token: None,
            auto_retrain: false,
            stimuli: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub analysis: AnalysisConfig,
    pub lmnn: LmnnConfig,
    pub retrieval: RetrievalConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.analysis.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn fingerprint(&self) -> String {
        self.analysis.fingerprint()
    }
}

/// Refuses to combine artifacts computed under different analyses.
pub fn check_fingerprint(left: &str, right: &str) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::FingerprintMismatch {
            left: left.to_string(),
            right: right.to_string(),
        })
    }
}
