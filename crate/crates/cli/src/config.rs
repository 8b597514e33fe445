use std::path::Path;

use rationale_audit::models::TrainConfig;
use rationale_audit::perturbation::DEFAULT_CANDIDATES;
use rationale_audit::stability::DEFAULT_BUCKET_WIDTH;
use rationale_audit::trojan::TrojanConfig;
use rationale_audit::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sizes for `prepare-corpus --synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub synthetic_train: usize,
    pub synthetic_validation: usize,
    pub synthetic_test: usize,
    pub synthetic_dim: usize,
    pub synthetic_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            synthetic_train: 400,
            synthetic_validation: 80,
            synthetic_test: 80,
            synthetic_dim: 16,
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub candidates: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            candidates: DEFAULT_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub bucket_width: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            bucket_width: DEFAULT_BUCKET_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_items: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            seed: 0,
            n_train: 10,
            n_test: 20,
            n_items: 100,
        }
    }
}

/// Everything a run can be configured with. One TOML file with a section
/// per stage; command-line flags win over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every per-section seed when set.
    pub seed: Option<u64>,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub audit: AuditConfig,
    pub trojan: TrojanConfig,
    pub study: StudyConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message().trim())))
    }

    /// Applies a global seed (flag first, then the file's top-level `seed`).
    pub fn with_seed(mut self, flag: Option<u64>) -> Self {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.corpus.synthetic_seed = seed;
            self.train.seed = seed;
            self.trojan.seed = seed;
            self.study.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.trojan.validate()?;
        if self.perturb.candidates == 0 {
            return Err(Error::Config("perturb.candidates: must be positive".into()));
        }
        if self.audit.bucket_width == 0 {
            return Err(Error::Config("audit.bucket_width: must be positive".into()));
        }
        if self.corpus.synthetic_dim == 0 {
            return Err(Error::Config("corpus.synthetic_dim: must be positive".into()));
        }
        Ok(())
    }
}
