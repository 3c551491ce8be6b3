//! Run configuration: a TOML file overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use dspe_cstr4::case::{published_groups, CaseConfig, Tuning, DEFAULT_HORIZON, DEFAULT_STEPS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub seed: u64,
    pub steps: usize,
    /// MHE horizon; also the sensitivity window unless `analysis.window` is set.
    pub horizon: usize,
    pub out: PathBuf,
    pub noise: NoiseLevels,
    pub analysis: Analysis,
    pub decomposition: Decomposition,
    pub estimation: Estimation,
    pub bench: Bench,
}

/// Normalized standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub process: f64,
    pub measurement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analysis {
    pub window: Option<usize>,
    /// Relative singular-value threshold; `max(rows, cols)·ε·1e3` when absent.
    pub rank_tol: Option<f64>,
    pub condition_limit: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decomposition {
    /// Parameters on the graph; selected in a majority of samples when absent.
    pub params: Option<Vec<String>>,
    /// Sample whose window screens the candidates.
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Estimation {
    pub case: u8,
    pub mismatch: f64,
    /// Overrides the case's grouping.
    pub groups: Option<Vec<Vec<String>>>,
    pub selection: Option<bool>,
    pub tuning: Tuning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bench {
    /// Admissible seeds counted from `seed`.
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: dspe_cstr4::model::MODEL_ID.into(),
            // seed 1 drives the plant out of the admissible envelope
            seed: 2,
            steps: DEFAULT_STEPS,
            horizon: DEFAULT_HORIZON,
            out: PathBuf::from("results"),
            noise: NoiseLevels::default(),
            analysis: Analysis::default(),
            decomposition: Decomposition::default(),
            estimation: Estimation::default(),
            bench: Bench::default(),
        }
    }
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels { process: 1e-3, measurement: 1e-3 }
    }
}

impl Default for Analysis {
    fn default() -> Self {
        Analysis { window: None, rank_tol: None, condition_limit: dspe_core::sensitivity::DEFAULT_CONDITION_LIMIT }
    }
}

impl Default for Estimation {
    fn default() -> Self {
        Estimation { case: 2, mismatch: 0.05, groups: None, selection: None, tuning: Tuning::default() }
    }
}

impl Default for Bench {
    fn default() -> Self {
        Bench { seeds: 1 }
    }
}

/// Flags shared by every command; `None` keeps the file's value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.model {
            self.model = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.steps {
            self.steps = v;
        }
        if let Some(v) = o.horizon {
            self.horizon = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
    }

    pub fn window(&self) -> usize {
        self.analysis.window.unwrap_or(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !dspe_cstr4::registry::<f64>().ids().any(|id| id == self.model) {
            return bad(format!("unknown model id `{}`", self.model));
        }
        if self.steps == 0 || self.horizon == 0 || self.window() == 0 {
            return bad("steps, horizon and window must be positive".into());
        }
        if [self.noise.process, self.noise.measurement].iter().any(|v| v.is_nan() || *v < 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some(t) = self.analysis.rank_tol {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("rank_tol {t} outside (0, 1)"));
            }
        }
        if self.analysis.condition_limit.is_nan() || self.analysis.condition_limit < 1.0 {
            return bad("condition_limit must be at least 1".into());
        }
        if self.bench.seeds == 0 {
            return bad("bench.seeds must be positive".into());
        }
        Ok(())
    }

    /// Case setup for `case`, with this run's overrides applied.
    pub fn case_config(&self, case: u8) -> Result<CaseConfig> {
        let mut c = CaseConfig::published(case, self.seed)?;
        c.steps = self.steps;
        c.horizon = self.horizon;
        c.window = self.window();
        c.mismatch = self.estimation.mismatch;
        c.process_noise = self.noise.process;
        c.measurement_noise = self.noise.measurement;
        c.tuning = self.estimation.tuning;
        c.validate()?;
        Ok(c)
    }

    /// `estimate` may regroup the variables of the configured case.
    pub fn estimation_config(&self) -> Result<CaseConfig> {
        if published_groups(self.estimation.case).is_none() {
            return Err(CliError::Config(format!("case {} is not one of 1, 2, 3, 4", self.estimation.case)));
        }
        let mut c = self.case_config(self.estimation.case)?;
        if let Some(g) = &self.estimation.groups {
            c.groups = g.clone();
        }
        if let Some(s) = self.estimation.selection {
            c.selection = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("cannot serialize the configuration: {e}")))
    }

    /// Writes the resolved configuration next to the results.
    pub fn snapshot(&self, dir: &Path) -> Result<PathBuf> {
        crate::commands::ensure_dir(dir)?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}
