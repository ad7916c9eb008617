//! Experiment settings: built-in defaults, optionally overridden by a TOML file and then by flags.

use std::path::Path;

use aoii_core::curve::{CurveConfig, Family};
use aoii_core::sim::SimulationConfig;
use aoii_core::solver::{BisectionConfig, RviConfig, INITIAL_DELTA_CAP};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub solver: SolverSettings,
    pub simulation: SimulationSettings,
    pub sweep: SweepSettings,
    pub validate: ValidateSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub rvi_tol: f64,
    pub rvi_max_iter: usize,
    pub lambda_tol: f64,
    pub max_doublings: u32,
    pub delta_cap: u32,
    pub max_delta_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub horizon: u64,
    pub burn_in_fraction: f64,
    pub batches: usize,
    pub replications: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub families: Vec<String>,
    pub grid: Vec<f64>,
    pub simulate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    /// Target rate for the rate-constrained checks.
    pub rate: f64,
    /// Penalty for the threshold/plain RVI comparison.
    pub lambda: f64,
    pub horizon: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            simulation: SimulationSettings::default(),
            sweep: SweepSettings::default(),
            validate: ValidateSettings::default(),
        }
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        let rvi = RviConfig::default();
        let bis = BisectionConfig::default();
        let curve = CurveConfig::default();
        Self {
            rvi_tol: rvi.tol,
            rvi_max_iter: rvi.max_iter,
            lambda_tol: bis.lambda_tol,
            max_doublings: bis.max_doublings,
            delta_cap: INITIAL_DELTA_CAP,
            max_delta_cap: curve.max_delta_cap,
        }
    }
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            horizon: 1_000_000,
            burn_in_fraction: 0.01,
            batches: 40,
            replications: 1,
            seed: 1,
        }
    }
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            families: Family::ALL.iter().map(|f| f.name().to_string()).collect(),
            grid: (1..=10).map(|k| f64::from(5 * k) / 100.0).collect(),
            simulate: true,
        }
    }
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self {
            rate: 0.1,
            lambda: 8.0,
            horizon: 1_000_000,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = crate::read_input(path)?;
        toml::from_str(&text)
            .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rvi(&self) -> RviConfig {
        RviConfig {
            tol: self.solver.rvi_tol,
            max_iter: self.solver.rvi_max_iter,
        }
    }

    pub fn bisection(&self) -> BisectionConfig {
        BisectionConfig {
            rvi: self.rvi(),
            lambda_tol: self.solver.lambda_tol,
            max_doublings: self.solver.max_doublings,
        }
    }

    pub fn curve(&self, simulate: bool) -> CurveConfig {
        CurveConfig {
            delta_cap: self.solver.delta_cap,
            max_delta_cap: self.solver.max_delta_cap.max(self.solver.delta_cap),
            bisection: self.bisection(),
            simulation: simulate.then(|| self.simulation(self.simulation.horizon)),
        }
    }

    pub fn simulation(&self, horizon: u64) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(horizon, self.simulation.seed);
        cfg.burn_in = (horizon as f64 * self.simulation.burn_in_fraction) as u64;
        cfg.batches = self.simulation.batches;
        cfg.replications = self.simulation.replications;
        cfg
    }

    pub fn families(&self) -> Result<Vec<Family>, CliError> {
        self.sweep
            .families
            .iter()
            .map(|f| f.parse::<Family>().map_err(CliError::from))
            .collect()
    }

    pub fn check(&self) -> Result<(), CliError> {
        let s = &self.solver;
        if !(s.rvi_tol > 0.0) || !(s.lambda_tol > 0.0) || s.rvi_max_iter == 0 {
            return Err(CliError::input("solver tolerances must be positive"));
        }
        if s.delta_cap < 2 {
            return Err(CliError::input(format!(
                "delta_cap = {} must be at least 2",
                s.delta_cap
            )));
        }
        if !(0.0..1.0).contains(&self.simulation.burn_in_fraction) {
            return Err(CliError::input("burn_in_fraction must lie in [0, 1)"));
        }
        if let Some(r) = self.sweep.grid.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
            return Err(CliError::input(format!("grid value {r} outside (0, 1]")));
        }
        self.families()?;
        Ok(())
    }
}
