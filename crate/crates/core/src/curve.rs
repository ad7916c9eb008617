//! Average AoII versus transmission rate for each policy family.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::policy::{evaluate_periodic, PeriodicPolicy, TabularPolicy, ThresholdPolicy};
use crate::sim::{self, Estimate, SimulationConfig};
use crate::solver::{
    bisection::cap_reach, lambda_bisection, n_bisection, oracle_lambda_bisection, BisectionConfig,
    MixtureSolution, TruncatedMdp, DELTA_CAP_LIMIT, INITIAL_DELTA_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// Thresholds per `(s, w, r)`.
    Multi,
    /// One threshold for every state.
    Single,
    /// Transmit every `ceil(1 / R)` slots.
    Periodic,
    /// Unrestricted deterministic components from plain RVI.
    OptimalOracle,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Multi,
        Family::Single,
        Family::Periodic,
        Family::OptimalOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Multi => "multi",
            Family::Single => "single",
            Family::Periodic => "periodic",
            Family::OptimalOracle => "optimal-oracle",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown policy family '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveConfig {
    /// Starting AoII cap for the RVI-based families.
    pub delta_cap: u32,
    /// The cap is doubled while a component threshold reaches it, up to this value.
    pub max_delta_cap: u32,
    pub bisection: BisectionConfig,
    /// Also simulate every synthesized policy.
    pub simulation: Option<SimulationConfig>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            delta_cap: INITIAL_DELTA_CAP,
            max_delta_cap: 4 * INITIAL_DELTA_CAP,
            bisection: BisectionConfig::default(),
            simulation: None,
        }
    }
}

/// A synthesized policy for one family and target rate.
#[derive(Debug, Clone)]
pub enum FamilySolution {
    Threshold {
        solution: MixtureSolution,
        delta_cap: Option<u32>,
    },
    Oracle {
        solution: MixtureSolution<TabularPolicy>,
        delta_cap: u32,
    },
    Periodic {
        policy: PeriodicPolicy,
        avg_aoii: f64,
        avg_rate: f64,
    },
}

impl FamilySolution {
    pub fn avg_aoii(&self) -> f64 {
        match self {
            FamilySolution::Threshold { solution, .. } => solution.evaluation.avg_aoii,
            FamilySolution::Oracle { solution, .. } => solution.evaluation.avg_aoii,
            FamilySolution::Periodic { avg_aoii, .. } => *avg_aoii,
        }
    }

    pub fn avg_rate(&self) -> f64 {
        match self {
            FamilySolution::Threshold { solution, .. } => solution.evaluation.avg_rate,
            FamilySolution::Oracle { solution, .. } => solution.evaluation.avg_rate,
            FamilySolution::Periodic { avg_rate, .. } => *avg_rate,
        }
    }

    pub fn rho(&self) -> f64 {
        match self {
            FamilySolution::Threshold { solution, .. } => solution.trace.rho,
            FamilySolution::Oracle { solution, .. } => solution.trace.rho,
            FamilySolution::Periodic { .. } => 1.0,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            FamilySolution::Threshold { solution, .. } => &solution.trace.warnings,
            FamilySolution::Oracle { solution, .. } => &solution.trace.warnings,
            FamilySolution::Periodic { .. } => &[],
        }
    }

    /// Simulates the synthesized policy.
    pub fn simulate(
        &self,
        model: &SystemModel,
        cfg: &SimulationConfig,
    ) -> Result<sim::TrajectoryStats> {
        match self {
            FamilySolution::Threshold { solution, .. } => sim::run(model, &solution.policy, cfg),
            FamilySolution::Oracle { solution, .. } => sim::run(model, &solution.policy, cfg),
            FamilySolution::Periodic { policy, .. } => sim::run(model, policy, cfg),
        }
    }
}

fn threshold_reaches_cap(policy: &ThresholdPolicy, cap: u32) -> bool {
    policy.n_max().is_some_and(|n| n >= cap)
}

/// Synthesizes the rate-`target` policy of `family`.
///
/// RVI-based families start at `cfg.delta_cap`. The cap doubles, up to
/// `cfg.max_delta_cap`, while a component threshold reaches it; it also
/// doubles when the target is out of reach at the current cap. Thresholds
/// still at the largest cap are kept and reported in the warnings.
pub fn solve_family(
    model: &SystemModel,
    family: Family,
    target: f64,
    cfg: &CurveConfig,
) -> Result<FamilySolution> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Domain(format!(
            "target rate {target} must lie in (0, 1]"
        )));
    }
    if cfg.delta_cap < 2 || cfg.max_delta_cap < cfg.delta_cap {
        return Err(Error::InvalidInput(format!(
            "AoII caps must satisfy 2 <= {} <= {}",
            cfg.delta_cap, cfg.max_delta_cap
        )));
    }
    match family {
        Family::Single => Ok(FamilySolution::Threshold {
            solution: n_bisection(model, target)?,
            delta_cap: None,
        }),
        Family::Periodic => {
            let policy = PeriodicPolicy::for_rate(target)?;
            let eval = evaluate_periodic(model, &policy)?;
            Ok(FamilySolution::Periodic {
                policy,
                avg_aoii: eval.avg_aoii,
                avg_rate: eval.avg_rate,
            })
        }
        Family::Multi => {
            let (mut solution, cap) = grow_cap(cfg, target, |cap| {
                let sol =
                    lambda_bisection(&TruncatedMdp::new(model, cap)?, target, &cfg.bisection)?;
                let at_cap = threshold_reaches_cap(&sol.policy.minus, cap)
                    || threshold_reaches_cap(&sol.policy.plus, cap);
                Ok((sol, at_cap))
            })?;
            if let Some(w) = cap_warning(
                &solution.policy.minus,
                &solution.policy.plus,
                cap,
                threshold_reaches_cap,
            ) {
                solution.trace.warnings.push(w);
            }
            Ok(FamilySolution::Threshold {
                solution,
                delta_cap: Some(cap),
            })
        }
        Family::OptimalOracle => {
            let (mut solution, cap) = grow_cap(cfg, target, |cap| {
                let sol = oracle_lambda_bisection(
                    &TruncatedMdp::new(model, cap)?,
                    target,
                    &cfg.bisection,
                )?;
                let at_cap = cap_reach(&sol.policy.minus).0 || cap_reach(&sol.policy.plus).0;
                Ok((sol, at_cap))
            })?;
            if let Some(w) = cap_warning(
                &solution.policy.minus,
                &solution.policy.plus,
                cap,
                |p, _| cap_reach(p).0,
            ) {
                solution.trace.warnings.push(w);
            }
            Ok(FamilySolution::Oracle {
                solution,
                delta_cap: cap,
            })
        }
    }
}

fn grow_cap<S>(
    cfg: &CurveConfig,
    target: f64,
    mut solve: impl FnMut(u32) -> Result<(S, bool)>,
) -> Result<(S, u32)> {
    let mut cap = cfg.delta_cap;
    loop {
        let can_grow = cap.saturating_mul(2) <= cfg.max_delta_cap;
        match solve(cap) {
            Err(Error::Infeasible(msg))
                if cap.saturating_mul(2) <= DELTA_CAP_LIMIT.max(cfg.max_delta_cap) =>
            {
                log::info!("{msg}; re-solving with AoII cap {}", cap * 2)
            }
            Ok((_, true)) if can_grow => {
                log::info!(
                    "thresholds reach the AoII cap {cap} at rate {target}; re-solving with {}",
                    cap * 2
                )
            }
            Ok((sol, _)) => return Ok((sol, cap)),
            Err(e) => return Err(e),
        }
        cap *= 2;
    }
}

fn cap_warning<P>(
    minus: &P,
    plus: &P,
    cap: u32,
    at_cap: impl Fn(&P, u32) -> bool,
) -> Option<String> {
    (at_cap(minus, cap) || at_cap(plus, cap))
        .then(|| format!("some thresholds sit at the largest AoII cap {cap}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub family: Family,
    pub target_rate: f64,
    pub aoii_closed_form: f64,
    pub rate_closed_form: f64,
    pub rho: f64,
    pub aoii_simulated: Option<Estimate>,
    pub rate_simulated: Option<Estimate>,
    pub warnings: Vec<String>,
}

/// One row per `(family, R)`, sorted by family then rate.
pub fn estimate_curve(
    model: &SystemModel,
    families: &[Family],
    grid: &[f64],
    cfg: &CurveConfig,
) -> Result<Vec<CurvePoint>> {
    if let Some(bad) = grid.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidInput(format!(
            "rate grid value {bad} outside (0, 1]"
        )));
    }
    let cells: Vec<(Family, f64)> = families
        .iter()
        .flat_map(|&f| grid.iter().map(move |&r| (f, r)))
        .collect();
    let mut points: Vec<CurvePoint> = cells
        .par_iter()
        .map(|&(family, target)| {
            let sol = solve_family(model, family, target, cfg)?;
            let (aoii_simulated, rate_simulated) = match &cfg.simulation {
                Some(sim_cfg) => {
                    let stats = sol.simulate(model, sim_cfg)?;
                    (Some(stats.mean_aoii), Some(stats.mean_rate))
                }
                None => (None, None),
            };
            Ok(CurvePoint {
                family,
                target_rate: target,
                aoii_closed_form: sol.avg_aoii(),
                rate_closed_form: sol.avg_rate(),
                rho: sol.rho(),
                aoii_simulated,
                rate_simulated,
                warnings: sol.warnings().to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| {
        a.family
            .cmp(&b.family)
            .then(a.target_rate.total_cmp(&b.target_rate))
    });
    Ok(points)
}
