//! Consistency checks over one model, reported as JSON.

use aoii_core::model::{
    stochasticity_issues, Action, ModelFile, StateSpace, SystemModel, SystemState, FILE_ROW_TOL,
};
use aoii_core::policy::{evaluate_periodic, PeriodicPolicy, StationaryPolicy, ThresholdPolicy};
use aoii_core::renewal::{evaluate_policy, evaluate_policy_with_cap};
use aoii_core::sim::{self, Stationary};
use aoii_core::solver::{
    lambda_bisection, n_bisection, rvi_plain, rvi_threshold, BisectionTrace, MixtureSolution,
    TruncatedMdp,
};
use serde::Serialize;

use crate::config::Config;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub n_states: usize,
    pub r_max: u32,
    pub seed: u64,
    pub rate: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

struct Checks(Vec<Check>);

impl Checks {
    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) -> bool {
        self.0.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
        passed
    }

    /// Records an error from a step the remaining checks depend on.
    fn fail<T>(&mut self, name: &str, r: aoii_core::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(name, false, e.to_string());
                None
            }
        }
    }
}

pub fn run(file: ModelFile, cfg: &Config) -> Report {
    let mut checks = Checks(Vec::new());
    let (n_states, r_max) = (file.n_states, file.r_max);
    let rate = cfg.validate.rate;
    let _ = run_checks(file, cfg, &mut checks);
    let passed = checks.0.iter().all(|c| c.passed);
    Report {
        n_states,
        r_max,
        seed: cfg.simulation.seed,
        rate,
        passed,
        checks: checks.0,
    }
}

fn run_checks(file: ModelFile, cfg: &Config, checks: &mut Checks) -> Option<()> {
    let issues = if file.normalize {
        Vec::new()
    } else {
        stochasticity_issues(&file.transition, FILE_ROW_TOL)
    };
    let detail = issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ");
    if !checks.push("source-stochastic", issues.is_empty(), detail) {
        return None;
    }
    let model = checks.fail("model-construction", file.into_model())?;
    kernel_checks(&model, checks);

    let cap = cfg.solver.delta_cap;
    let mdp = checks.fail("truncated-mdp", TruncatedMdp::new(&model, cap))?;
    let lambda = cfg.validate.lambda;
    let thr = checks.fail("threshold-rvi", rvi_threshold(&mdp, lambda, &cfg.rvi()))?;
    let plain = checks.fail("plain-rvi", rvi_plain(&mdp, lambda, &cfg.rvi()))?;
    checks.push(
        "rvi-converged",
        thr.converged && plain.converged,
        format!("{} and {} sweeps", thr.iterations, plain.iterations),
    );
    let thr_policy = ThresholdPolicy::Multi(thr.thresholds.clone());
    let below_cap: Vec<&SystemState> = mdp
        .space()
        .states()
        .iter()
        .filter(|s| s.delta < cap)
        .collect();
    let disagree = below_cap
        .iter()
        .filter(|st| thr_policy.action(st).ok() != plain.policy.action(st).ok())
        .count();
    checks.push(
        "threshold-matches-plain-rvi",
        disagree == 0,
        format!(
            "{disagree} of {} states below the cap differ at lambda = {lambda}",
            below_cap.len()
        ),
    );
    checks.push(
        "gain-matches-plain-rvi",
        (thr.gain - plain.gain).abs() <= 10.0 * cfg.solver.rvi_tol * thr.gain.abs().max(1.0),
        format!("{} vs {}", thr.gain, plain.gain),
    );
    let bad = plain.policy.non_monotone_slices();
    checks.push(
        "plain-rvi-monotone",
        bad.is_empty(),
        format!("{} slices switch more than once", bad.len()),
    );

    let target = cfg.validate.rate;
    let multi = checks.fail(
        "multi-threshold-bisection",
        lambda_bisection(&mdp, target, &cfg.bisection()),
    )?;
    let single = checks.fail("single-threshold-bisection", n_bisection(&model, target))?;
    for (name, sol) in [("multi", &multi), ("single", &single)] {
        mixture_checks(name, sol, target, checks);
    }
    let produced = [
        thr_policy.clone(),
        multi.policy.minus.clone(),
        multi.policy.plus.clone(),
        single.policy.minus.clone(),
        single.policy.plus.clone(),
    ];
    let transmit_at_zero = produced
        .iter()
        .flat_map(|p| (0..model.n_states()).map(move |z| p.action(&SystemState::regeneration(z))))
        .filter(|a| !matches!(a, Ok(Action::Wait)))
        .count();
    checks.push(
        "wait-at-zero-aoii",
        transmit_at_zero == 0,
        format!("{transmit_at_zero} violations"),
    );
    let below_one = produced
        .iter()
        .filter(|p| p.n_max().is_some() && min_threshold(p) < 1)
        .count();
    checks.push(
        "thresholds-at-least-one",
        below_one == 0,
        format!("{below_one} policies"),
    );
    let non_monotone = produced
        .iter()
        .filter(|p| !is_monotone(p, mdp.space()))
        .count();
    checks.push(
        "threshold-actions-monotone",
        non_monotone == 0,
        format!("{non_monotone} policies"),
    );

    let periodic = checks.fail("periodic-policy", PeriodicPolicy::for_rate(target))?;
    let pev = checks.fail("periodic-evaluation", evaluate_periodic(&model, &periodic))?;
    let exact = 1.0 / periodic.period() as f64;
    checks.push(
        "periodic-rate",
        (pev.avg_rate - exact).abs() < 1e-12 && pev.avg_rate <= target + 1e-12,
        format!("rate {} with period {}", pev.avg_rate, periodic.period()),
    );

    truncation_checks(&model, &multi.policy.minus, checks);
    simulation_checks(&model, &multi, &single.policy.minus, cfg, checks);
    Some(())
}

fn kernel_checks(model: &SystemModel, checks: &mut Checks) {
    let Ok(space) = StateSpace::new(model.n_states(), model.r_max(), 8) else {
        return;
    };
    let (mut sums, mut closure, mut zero, mut wait_r) = (0, 0, 0, 0);
    for st in space.states() {
        for a in [Action::Wait, Action::Transmit] {
            let Ok(dist) = model.transition_distribution(st, a) else {
                closure += 1;
                continue;
            };
            let total: f64 = dist.iter().map(|(_, p)| p).sum();
            sums += usize::from((total - 1.0).abs() > 1e-12);
            for (next, _) in &dist {
                closure += usize::from(next.validate(model.n_states(), model.r_max()).is_err());
                zero += usize::from((next.delta == 0) != (next.s == next.w));
                wait_r += usize::from(a == Action::Wait && next.r != 0);
            }
        }
    }
    checks.push(
        "kernel-stochastic",
        sums == 0,
        format!("{sums} rows off by more than 1e-12"),
    );
    checks.push(
        "kernel-closure",
        closure == 0,
        format!("{closure} invalid successors"),
    );
    checks.push(
        "zero-aoii-iff-match",
        zero == 0,
        format!("{zero} violations"),
    );
    checks.push(
        "wait-resets-packet-count",
        wait_r == 0,
        format!("{wait_r} violations"),
    );
}

fn mixture_checks(name: &str, sol: &MixtureSolution, target: f64, checks: &mut Checks) {
    let t = &sol.trace;
    let rate = sol.evaluation.avg_rate;
    let mixed = t.rho > 0.0 && t.rho < 1.0;
    let ok = if mixed {
        (rate - target).abs() <= 1e-9
    } else {
        rate <= target + 1e-9
    };
    checks.push(
        &format!("{name}-rate-constraint"),
        ok,
        format!("rate {rate}, rho {}", t.rho),
    );
    checks.push(
        &format!("{name}-bracket"),
        bracket_holds(t),
        format!("{} steps", t.steps.len()),
    );
    let mono: Vec<&String> = t
        .warnings
        .iter()
        .filter(|w| w.starts_with("rate increased"))
        .collect();
    checks.push(
        &format!("{name}-rate-monotone"),
        mono.is_empty(),
        format!("{} warnings", mono.len()),
    );
}

fn bracket_holds(t: &BisectionTrace) -> bool {
    t.steps
        .iter()
        .all(|s| s.lower <= s.parameter && s.parameter <= s.upper)
        && t.lower <= t.upper
}

fn min_threshold(p: &ThresholdPolicy) -> u32 {
    match p {
        ThresholdPolicy::Multi(m) => m
            .table()
            .iter()
            .filter_map(|t| t.finite())
            .min()
            .unwrap_or(u32::MAX),
        ThresholdPolicy::Single(s) => s.threshold.finite().unwrap_or(u32::MAX),
    }
}

fn is_monotone(p: &ThresholdPolicy, space: &StateSpace) -> bool {
    let (n, r_max) = (space.n_states(), space.r_max());
    (0..n).all(|s| {
        (0..n).filter(|&w| w != s).all(|w| {
            (0..=r_max).all(|r| {
                let acts: Vec<Action> = (1..=space.delta_cap())
                    .filter_map(|d| p.action(&SystemState::new(s, w, d, r)).ok())
                    .collect();
                acts.windows(2)
                    .all(|x| !(x[0] == Action::Transmit && x[1] == Action::Wait))
            })
        })
    })
}

fn truncation_checks(model: &SystemModel, policy: &ThresholdPolicy, checks: &mut Checks) {
    let Some(base) = checks.fail("truncation-base", evaluate_policy(model, policy)) else {
        return;
    };
    checks.push(
        "renewal-denominator-positive",
        base.cycle_stats.mean_length() > 0.0,
        format!("{}", base.cycle_stats.mean_length()),
    );
    let cap = policy.truncation_cap();
    let mut worst: f64 = 0.0;
    for k in [1, 5, 20] {
        match evaluate_policy_with_cap(model, policy, cap + k) {
            Ok(ev) => {
                worst = worst
                    .max((ev.avg_aoii - base.avg_aoii).abs())
                    .max((ev.avg_rate - base.avg_rate).abs())
            }
            Err(e) => {
                checks.push("truncation-lossless", false, e.to_string());
                return;
            }
        }
    }
    checks.push(
        "truncation-lossless",
        worst <= 1e-10,
        format!("largest change {worst:e}"),
    );
}

fn simulation_checks(
    model: &SystemModel,
    multi: &MixtureSolution,
    single: &ThresholdPolicy,
    cfg: &Config,
    checks: &mut Checks,
) {
    let sim_cfg = cfg.simulation(cfg.validate.horizon);
    let Some(stats) = checks.fail("simulation", sim::run(model, &multi.policy, &sim_cfg)) else {
        return;
    };
    let ev = &multi.evaluation;
    checks.push(
        "simulated-aoii-matches-closed-form",
        stats.mean_aoii.covers(ev.avg_aoii, 3.0),
        format!(
            "{} +/- {} vs {}",
            stats.mean_aoii.mean, stats.mean_aoii.std_error, ev.avg_aoii
        ),
    );
    checks.push(
        "simulated-rate-matches-closed-form",
        stats.mean_rate.covers(ev.avg_rate, 3.0),
        format!(
            "{} +/- {} vs {}",
            stats.mean_rate.mean, stats.mean_rate.std_error, ev.avg_rate
        ),
    );
    checks.push(
        "cycle-identity",
        stats.identity_violations == 0,
        format!("{} violations", stats.identity_violations),
    );
    checks.push(
        "aoii-recursion",
        stats.recursion_violations == 0,
        format!("{} violations", stats.recursion_violations),
    );
    let rho = multi.trace.rho;
    if rho > 0.0 && rho < 1.0 {
        if let Some(f) = stats.minus_fraction() {
            checks.push(
                "mixture-fraction-matches-rho",
                f.covers(rho, 3.0),
                format!("{} +/- {} vs {rho}", f.mean, f.std_error),
            );
        }
    }
    let Some(sev) = checks.fail(
        "single-threshold-evaluation",
        evaluate_policy(model, single),
    ) else {
        return;
    };
    let Some(sst) = checks.fail(
        "single-threshold-simulation",
        sim::run(model, &Stationary(single.clone()), &sim_cfg),
    ) else {
        return;
    };
    checks.push(
        "single-threshold-simulation-matches",
        sst.mean_aoii.covers(sev.avg_aoii, 3.0) && sst.mean_rate.covers(sev.avg_rate, 3.0),
        format!(
            "aoii {} vs {}, rate {} vs {}",
            sst.mean_aoii.mean, sev.avg_aoii, sst.mean_rate.mean, sev.avg_rate
        ),
    );
}
