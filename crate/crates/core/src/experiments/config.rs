use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Resampling;
use crate::error::{Error, Result};
use crate::quadrature::GridSpec;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Example1,
    Example2,
    Example3,
    Localization,
}

impl Scenario {
    pub fn example(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Scenario::Example1),
            2 => Ok(Scenario::Example2),
            3 => Ok(Scenario::Example3),
            _ => Err(Error::Config(format!("no example {id}; expected 1, 2 or 3"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Example1 => "example1",
            Scenario::Example2 => "example2",
            Scenario::Example3 => "example3",
            Scenario::Localization => "localization",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" | "1" => Ok(Scenario::Example1),
            "example2" | "2" => Ok(Scenario::Example2),
            "example3" | "3" => Ok(Scenario::Example3),
            "localization" | "localize" => Ok(Scenario::Localization),
            _ => Err(Error::Config(format!("unknown scenario '{s}'"))),
        }
    }
}

/// Filters the localization study can run. The order here is the column
/// order of the RMSE table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Kf,
    Pf,
    Dpbm,
    Dppm,
    Oracle,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Pf => "pf",
            FilterKind::Dpbm => "dpbm",
            FilterKind::Dppm => "dppm",
            FilterKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kf" => Ok(FilterKind::Kf),
            "pf" => Ok(FilterKind::Pf),
            "dpbm" => Ok(FilterKind::Dpbm),
            "dppm" => Ok(FilterKind::Dppm),
            "oracle" => Ok(FilterKind::Oracle),
            other => Err(Error::Config(format!("unknown filter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub xmin: f64,
    pub xmax: f64,
    pub nodes: usize,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::simpson(self.xmin, self.xmax, self.nodes)
    }
}

/// Constants of the robot localization study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationParams {
    /// true starting position
    pub start: f64,
    /// per-run initial mean is drawn from N(start, init_mean_var)
    pub init_mean_var: f64,
    /// variance of the initial prior around that mean
    pub init_var: f64,
    pub landmark: f64,
    /// known displacement per step
    pub velocity: f64,
    /// process noise standard deviation
    pub process_sd: f64,
    /// scale of the Gumbel measurement noise
    pub gumbel_scale: f64,
    /// measurement standard deviation assumed by the Kalman filter
    pub kf_measurement_sd: f64,
    /// particle initialization interval
    pub pf_init: (f64, f64),
    pub resampling: Resampling,
    /// reference-density variance multipliers
    pub dpbm_theta_scale: f64,
    pub dppm_theta_scale: f64,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self {
            start: -7.0,
            init_mean_var: 1.0,
            init_var: 1.0,
            landmark: 0.0,
            velocity: 1.0,
            process_sd: 0.03,
            gumbel_scale: 0.25,
            kf_measurement_sd: 0.35,
            pf_init: (-8.0, 8.0),
            resampling: Resampling::Always,
            dpbm_theta_scale: 1.0,
            dppm_theta_scale: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub order: usize,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    pub runs: usize,
    pub steps: usize,
    pub seed: u64,
    pub filters: Vec<FilterKind>,
    pub particles: usize,
    #[serde(default)]
    pub localization: LocalizationParams,
}

impl ScenarioConfig {
    /// Defaults for a scenario. The example grids cover the window where
    /// the reference density is within `exp(-50)` of its peak.
    pub fn default_for(scenario: Scenario) -> Self {
        let (grid, filters) = match scenario {
            Scenario::Example1 => (GridConfig { xmin: -50.0, xmax: 50.0, nodes: 5001 }, vec![FilterKind::Dpbm, FilterKind::Dppm]),
            Scenario::Example2 => (GridConfig { xmin: -60.0, xmax: 60.0, nodes: 6001 }, vec![FilterKind::Dpbm, FilterKind::Dppm]),
            Scenario::Example3 => (GridConfig { xmin: -40.0, xmax: 40.0, nodes: 4001 }, vec![FilterKind::Dpbm, FilterKind::Dppm]),
            Scenario::Localization => {
                (GridConfig { xmin: -15.0, xmax: 10.0, nodes: 2001 }, vec![FilterKind::Kf, FilterKind::Pf, FilterKind::Dpbm])
            }
        };
        Self {
            scenario,
            order: 4,
            grid,
            solver: SolverOptions::default(),
            runs: 50,
            steps: 13,
            seed: 20240601,
            filters,
            particles: 5000,
            localization: LocalizationParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.steps == 0 {
            return Err(Error::Config("runs and steps must be at least 1".into()));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(Error::Config(format!("order must be even and positive, got {}", self.order)));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("select at least one filter".into()));
        }
        if self.particles == 0 && self.filters.contains(&FilterKind::Pf) {
            return Err(Error::Config("particle filter needs at least one particle".into()));
        }
        self.grid.spec().map_err(|e| Error::Config(e.to_string()))?;
        self.solver.validate()
    }

    /// Parses TOML, or JSON when the text starts with `{`. A JSON run
    /// report is accepted too; its `config` member is used.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(text)?;
            match v.get("config") {
                Some(c) => serde_json::from_value(c.clone())?,
                None => serde_json::from_value(v)?,
            }
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_round_trip() {
        let c = ScenarioConfig::default_for(Scenario::Localization);
        assert_eq!(ScenarioConfig::parse(&c.to_toml()).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::parse(&j).unwrap(), c);
        let wrapped = format!("{{\"config\": {j}, \"rmse\": []}}");
        assert_eq!(ScenarioConfig::parse(&wrapped).unwrap(), c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let text = r#"
scenario = "localization"
order = 4
runs = 2
steps = 3
seed = 7
filters = ["kf", "dpbm"]
particles = 100
[grid]
xmin = -15.0
xmax = 10.0
nodes = 2001
[solver]
grad_tol = 1e-7
"#;
        let c = ScenarioConfig::parse(text).unwrap();
        assert_eq!(c.solver.grad_tol, 1e-7);
        assert_eq!(c.solver.max_iters, SolverOptions::default().max_iters);
        assert_eq!(c.localization, LocalizationParams::default());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ScenarioConfig::default_for(Scenario::Example1);
        c.order = 3;
        assert!(c.validate().is_err());
        c.order = 4;
        c.filters.clear();
        assert!(c.validate().is_err());
        c.filters = vec![FilterKind::Dpbm];
        c.runs = 0;
        assert!(c.validate().is_err());
    }
}
