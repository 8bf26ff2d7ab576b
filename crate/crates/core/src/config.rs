//! Harness configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::EndpointConfig;
use crate::plan::{Mode, NiahPlan, PlanConfig, DEFAULT_PERMUTATIONS, DEFAULT_REPLICATES};
use crate::prompt::{SettingKind, DEFAULT_SEPARATOR};
use crate::report::ScoreOptions;
use crate::stats::DEFAULT_ALPHA;
use crate::task::DEFAULT_TEST_CAP;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Overrides for the NIAH lattice; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NiahSection {
    pub lengths: Option<Vec<usize>>,
    pub depths: Option<Vec<f64>>,
    pub needle: Option<String>,
    pub question: Option<String>,
    pub max_tokens: Option<u32>,
}

impl NiahSection {
    pub fn plan(&self) -> NiahPlan {
        let d = NiahPlan::default();
        NiahPlan {
            lengths: self.lengths.clone().unwrap_or(d.lengths),
            depths: self.depths.clone().unwrap_or(d.depths),
            needle: self.needle.clone().unwrap_or(d.needle),
            question: self.question.clone().unwrap_or(d.question),
            max_tokens: self.max_tokens.unwrap_or(d.max_tokens),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub run_id: Option<String>,
    pub registry: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub n_task: usize,
    pub n_shot: usize,
    pub grid: Vec<usize>,
    pub permutations: usize,
    pub replicates: usize,
    pub settings: Vec<SettingKind>,
    pub repetitions: Vec<u32>,
    pub alpha: f64,
    pub effectiveness_shots: usize,
    pub tokenizer: String,
    pub separator: String,
    pub test_cap: usize,
    pub filler_corpus: Option<PathBuf>,
    /// Response cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    pub niah: NiahSection,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            registry: None,
            output_dir: None,
            mode: None,
            seed: 0,
            tasks: Vec::new(),
            n_task: 16,
            n_shot: 2,
            grid: Vec::new(),
            permutations: DEFAULT_PERMUTATIONS,
            replicates: DEFAULT_REPLICATES,
            settings: Vec::new(),
            repetitions: Vec::new(),
            alpha: DEFAULT_ALPHA,
            effectiveness_shots: 4,
            tokenizer: "whitespace".to_string(),
            separator: DEFAULT_SEPARATOR.to_string(),
            test_cap: DEFAULT_TEST_CAP,
            filler_corpus: None,
            cache_dir: None,
            endpoint: EndpointConfig::default(),
            niah: NiahSection::default(),
        }
    }
}

fn rebase(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl HarnessConfig {
    pub fn parse(raw: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(raw).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Read a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&raw, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.registry,
            &mut config.output_dir,
            &mut config.filler_corpus,
            &mut config.cache_dir,
        ] {
            rebase(base, p);
        }
        if let Some(vocab) = config.tokenizer.strip_prefix("bpe:") {
            if Path::new(vocab).is_relative() {
                config.tokenizer = format!("bpe:{}", base.join(vocab).display());
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.test_cap == 0 {
            return Err(ConfigError::Invalid("test_cap must be >= 1".to_string()));
        }
        self.endpoint.validate().map_err(ConfigError::Invalid)
    }

    pub fn registry(&self) -> Result<&Path, ConfigError> {
        self.registry.as_deref().ok_or(ConfigError::Missing("no task registry configured"))
    }

    pub fn mode(&self) -> Result<Mode, ConfigError> {
        self.mode.ok_or(ConfigError::Missing("no mode configured"))
    }

    pub fn plan_config(&self) -> Result<PlanConfig, ConfigError> {
        let mode = self.mode()?;
        let registry = match mode {
            Mode::Niah => self.registry.clone().unwrap_or_default(),
            _ => self.registry()?.to_path_buf(),
        };
        Ok(PlanConfig {
            run_id: self.run_id.clone(),
            seed: self.seed,
            mode,
            registry: registry.display().to_string(),
            tasks: self.tasks.clone(),
            n_task: self.n_task,
            n_shot: self.n_shot,
            grid: self.grid.clone(),
            permutations: self.permutations,
            replicates: self.replicates,
            settings: self.settings.clone(),
            repetitions: self.repetitions.clone(),
            model: self.endpoint.clone(),
            tokenizer_id: self.tokenizer.clone(),
            separator: self.separator.clone(),
            test_cap: self.test_cap,
            filler_corpus: self.filler_corpus.as_ref().map(|p| p.display().to_string()),
            niah: (mode == Mode::Niah).then(|| self.niah.plan()),
        })
    }

    pub fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            alpha: self.alpha,
            effectiveness_shots: self.effectiveness_shots,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
mode = "scale_shot"
registry = "tasks"
output_dir = "out"
grid = [1, 2]
seed = 7

[endpoint]
model_name = "m"
max_parallel = 2

[niah]
lengths = [100]
"#,
        )
        .unwrap();
        let c = HarnessConfig::from_file(&path).unwrap();
        assert_eq!(c.registry.as_deref(), Some(dir.path().join("tasks").as_path()));
        assert_eq!(c.endpoint.max_parallel, 2);
        assert_eq!(c.endpoint.logprob_top_k, 100);
        assert_eq!(c.niah.plan().lengths, vec![100]);
        assert_eq!(c.niah.plan().depths.len(), 5);
        let plan = c.plan_config().unwrap();
        assert_eq!((plan.mode, plan.seed, plan.grid.clone()), (Mode::ScaleShot, 7, vec![1, 2]));
        assert!(plan.niah.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = HarnessConfig::parse("modee = \"niah\"", Path::new("x.toml"));
        assert!(matches!(err, Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = HarnessConfig::default();
        assert!(c.validate().is_ok());
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        assert!(matches!(HarnessConfig::default().plan_config(), Err(ConfigError::Missing(_))));
    }
}
