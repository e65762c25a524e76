//! Structured config file, CLI overrides and the effective config record.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dupam::experiments::{ExperimentConfig, Significance, SolverChoice, WindowPolicy};
use dupam::model::RegimeProfile;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub alpha: f64,
    /// subcritical | critical | supercritical | symmetric
    pub regime: String,
    pub beta: f64,
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// "auto" or a fixed half-width.
    pub window: WindowSetting,
    pub window_factor: f64,
    pub window_pad: u64,
    pub solver: SolverChoice,
    pub ode_max_t: f64,
    pub tolerance: f64,
    pub stability_check: bool,
    pub reference_size: usize,
    pub significance: Significance,
    pub point_process: PointProcessConfig,
    pub clt: CltConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WindowSetting {
    Auto(String),
    Fixed(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointProcessConfig {
    pub s: f64,
    pub fields: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub k_size: usize,
    pub theta_over_xi: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            alpha: 3.0,
            regime: "critical".into(),
            beta: 1.0,
            t_grid: vec![1e3, 1e4, 1e5],
            replicates: 200,
            seed: 0,
            window: WindowSetting::Auto("auto".into()),
            window_factor: 1.25,
            window_pad: 64,
            solver: SolverChoice::Auto,
            ode_max_t: 100.0,
            tolerance: 1e-8,
            stability_check: false,
            reference_size: 20_000,
            significance: Significance::default(),
            point_process: PointProcessConfig::default(),
            clt: CltConfig::default(),
        }
    }
}

impl Default for PointProcessConfig {
    fn default() -> Self {
        PointProcessConfig { s: 1e4, fields: 500 }
    }
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig { k_size: 10_000, theta_over_xi: 1e-3 }
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub regime: Option<String>,
    pub beta: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub window: Option<u64>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = &o.regime {
            self.regime = v.clone();
        }
        if let Some(v) = o.beta {
            self.beta = v;
        }
        if let Some(v) = &o.t_grid {
            self.t_grid = v.clone();
        }
        if let Some(v) = o.replicates {
            self.replicates = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.window {
            self.window = WindowSetting::Fixed(v);
        }
        if let Some(v) = o.tolerance {
            self.tolerance = v;
        }
    }

    pub fn profile(&self) -> Result<RegimeProfile> {
        let p = match self.regime.as_str() {
            "critical" => RegimeProfile::critical(self.alpha, self.beta),
            "subcritical" => RegimeProfile::subcritical(self.alpha),
            "supercritical" => RegimeProfile::supercritical(self.alpha),
            "symmetric" => RegimeProfile::symmetric(self.alpha),
            other => bail!(UsageError(format!("unknown regime {other:?}"))),
        };
        Ok(p)
    }

    pub fn window_policy(&self) -> Result<WindowPolicy> {
        Ok(match &self.window {
            WindowSetting::Fixed(l) => WindowPolicy::Fixed { l: *l },
            WindowSetting::Auto(s) if s == "auto" => WindowPolicy::Auto { factor: self.window_factor, pad: self.window_pad },
            WindowSetting::Auto(s) => bail!(UsageError(format!("window must be \"auto\" or an integer, got {s:?}"))),
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::new(self.profile()?, self.t_grid.clone(), self.replicates, self.seed);
        c.window = self.window_policy()?;
        c.solver = self.solver;
        c.ode_max_t = self.ode_max_t;
        c.tolerance = self.tolerance;
        c.stability_check = self.stability_check;
        c.reference_size = self.reference_size;
        c.significance = self.significance;
        Ok(c)
    }
}

/// Errors the user can fix by changing the invocation; exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win() {
        let mut c: FileConfig = toml::from_str("alpha = 2.5\nreplicates = 40\n").unwrap();
        c.apply(&Overrides { replicates: Some(7), window: Some(50), ..Default::default() });
        assert_eq!(c.alpha, 2.5);
        assert_eq!(c.replicates, 7);
        assert_eq!(c.window, WindowSetting::Fixed(50));
    }

    #[test]
    fn effective_config_round_trips() {
        let c = FileConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<FileConfig>(&text).unwrap(), c);
    }
}
