use crate::error::{Error, Result};
use crate::model::{Action, SystemModel};
use crate::policy::{
    mixing_probability, MultiThresholdPolicy, RandomizedMixturePolicy, SingleThresholdPolicy,
    StationaryPolicy, TabularPolicy, Threshold, ThresholdPolicy,
};
use crate::renewal::{calibrate_mixing, evaluate_mixture_stats, evaluate_policy, PolicyEvaluation};

use super::rvi::{rvi_plain_warm, rvi_threshold_warm, RviConfig};
use super::TruncatedMdp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionConfig {
    pub rvi: RviConfig,
    /// Stop once `lambda+ - lambda- < lambda_tol * max(1, lambda+)`.
    pub lambda_tol: f64,
    pub max_doublings: u32,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            rvi: RviConfig::default(),
            lambda_tol: 1e-6,
            max_doublings: 60,
        }
    }
}

/// One evaluated point of a bisection: a penalty `lambda` or a threshold `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionStep {
    pub iteration: usize,
    pub parameter: f64,
    /// Optimal Lagrangian gain; absent for the threshold search.
    pub gain: Option<f64>,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BisectionTrace {
    pub steps: Vec<BisectionStep>,
    /// Final bracket; the minus component comes from `lower`.
    pub lower: f64,
    pub upper: f64,
    pub rate_minus: f64,
    pub rate_plus: f64,
    /// Weight that makes the exact mixture rate equal the target.
    pub rho: f64,
    /// `(R - R+) / (R- - R+)` from the component rates alone.
    pub rho_formula: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MixtureSolution<P = ThresholdPolicy> {
    pub policy: RandomizedMixturePolicy<P>,
    pub evaluation: PolicyEvaluation,
    pub trace: BisectionTrace,
}

fn check_target(target: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Domain(format!(
            "target rate {target} must lie in [0, 1]"
        )));
    }
    Ok(())
}

/// Rates must not increase with the search parameter; flags any point that does.
fn monotonicity_warnings(steps: &[BisectionStep]) -> Vec<String> {
    let mut pts: Vec<(f64, f64)> = steps.iter().map(|s| (s.parameter, s.rate)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2)
        .filter(|w| w[1].1 > w[0].1 + 1e-12)
        .map(|w| {
            format!(
                "rate increased from {} to {} between {} and {}",
                w[0].1, w[1].1, w[0].0, w[1].0
            )
        })
        .collect()
}

fn finish<P: StationaryPolicy + Clone>(
    target: f64,
    minus: (P, PolicyEvaluation),
    plus: (P, PolicyEvaluation),
    mut trace: BisectionTrace,
) -> Result<MixtureSolution<P>> {
    let (minus, ev_minus) = minus;
    let (plus, ev_plus) = plus;
    trace.rate_minus = ev_minus.avg_rate;
    trace.rate_plus = ev_plus.avg_rate;
    trace.rho_formula = mixing_probability(ev_minus.avg_rate, ev_plus.avg_rate, target)?;
    trace.rho = calibrate_mixing(&ev_minus.cycle_stats, &ev_plus.cycle_stats, target)?;
    trace.warnings.extend(monotonicity_warnings(&trace.steps));
    for w in &trace.warnings {
        log::warn!("{w}");
    }
    let evaluation =
        evaluate_mixture_stats(&ev_minus.cycle_stats, &ev_plus.cycle_stats, trace.rho)?;
    Ok(MixtureSolution {
        policy: RandomizedMixturePolicy::new(minus, plus, trace.rho)?,
        evaluation,
        trace,
    })
}

/// Degenerate mixture of one policy with itself.
fn pure<P: StationaryPolicy + Clone>(
    policy: P,
    evaluation: PolicyEvaluation,
    mut trace: BisectionTrace,
) -> Result<MixtureSolution<P>> {
    trace.rate_minus = evaluation.avg_rate;
    trace.rate_plus = evaluation.avg_rate;
    trace.rho = 1.0;
    trace.rho_formula = 1.0;
    trace.warnings.extend(monotonicity_warnings(&trace.steps));
    for w in &trace.warnings {
        log::warn!("{w}");
    }
    Ok(MixtureSolution {
        policy: RandomizedMixturePolicy::new(policy.clone(), policy, 1.0)?,
        evaluation,
        trace,
    })
}

/// Penalty search shared by the threshold solver and the structure-free oracle.
///
/// `solve(lambda, warm)` returns the optimal policy, its gain, its relative
/// values and whether every slice waits up to the AoII cap. Once that holds,
/// larger penalties cannot lower the rate, so a rate still above target
/// means the cap is too small.
fn bisect_lambda<P, F>(
    model: &SystemModel,
    target: f64,
    cfg: &BisectionConfig,
    never: P,
    mut solve: F,
) -> Result<MixtureSolution<P>>
where
    P: StationaryPolicy + Clone + PartialEq,
    F: FnMut(f64, Option<&[f64]>) -> Result<(P, f64, Vec<f64>, bool)>,
{
    check_target(target)?;
    if !(cfg.lambda_tol > 0.0) {
        return Err(Error::Domain(format!(
            "lambda tolerance {} must be positive",
            cfg.lambda_tol
        )));
    }
    let mut trace = BisectionTrace::default();
    if target == 0.0 {
        trace
            .warnings
            .push("target rate 0: returning the never-transmit policy".into());
        let ev = evaluate_policy(model, &never)?;
        return pure(never, ev, trace);
    }

    let mut warm: Option<Vec<f64>> = None;
    let mut iteration = 0usize;
    // late bisection steps keep returning the same few policies
    let mut seen: Vec<(P, PolicyEvaluation)> = Vec::new();
    let mut eval_at =
        |lambda: f64, lo: f64, hi: f64, warm: &mut Option<Vec<f64>>, trace: &mut BisectionTrace| {
            let (policy, gain, value, capped) = solve(lambda, warm.as_deref())?;
            *warm = Some(value);
            let ev = match seen.iter().find(|(p, _)| *p == policy) {
                Some((_, ev)) => ev.clone(),
                None => {
                    let ev = evaluate_policy(model, &policy)?;
                    seen.push((policy.clone(), ev.clone()));
                    ev
                }
            };
            iteration += 1;
            trace.steps.push(BisectionStep {
                iteration,
                parameter: lambda,
                gain: Some(gain),
                rate: ev.avg_rate,
                lower: lo,
                upper: hi,
            });
            Ok::<_, Error>(((policy, ev), capped))
        };

    let mut lo = (0.0, eval_at(0.0, 0.0, 1.0, &mut warm, &mut trace)?.0);
    if lo.1 .1.avg_rate <= target {
        trace.lower = 0.0;
        trace.upper = 0.0;
        let (policy, ev) = lo.1;
        return pure(policy, ev, trace);
    }
    let mut hi_lambda = 1.0;
    let mut doublings = 0;
    let mut hi = loop {
        let (cand, capped) = eval_at(hi_lambda, lo.0, hi_lambda, &mut warm, &mut trace)?;
        if cand.1.avg_rate <= target {
            break (hi_lambda, cand);
        }
        lo = (hi_lambda, cand);
        doublings += 1;
        if capped || doublings > cfg.max_doublings {
            return Err(Error::Infeasible(format!(
                "rate {} at lambda = {hi_lambda} still exceeds target {target}; increase the AoII cap",
                lo.1 .1.avg_rate
            )));
        }
        hi_lambda *= 2.0;
    };
    while hi.0 - lo.0 >= cfg.lambda_tol * hi.0.max(1.0) {
        let mid = 0.5 * (lo.0 + hi.0);
        let (cand, _) = eval_at(mid, lo.0, hi.0, &mut warm, &mut trace)?;
        if cand.1.avg_rate > target {
            lo = (mid, cand);
        } else {
            hi = (mid, cand);
        }
    }
    trace.lower = lo.0;
    trace.upper = hi.0;
    finish(target, lo.1, hi.1, trace)
}

/// Rate-constrained mixture of multi-threshold policies.
pub fn lambda_bisection(
    mdp: &TruncatedMdp,
    target: f64,
    cfg: &BisectionConfig,
) -> Result<MixtureSolution> {
    lambda_bisection_with(mdp, target, cfg, |_, _| {})
}

/// As [`lambda_bisection`], also reporting every saturated solve as `(lambda, slices)`.
pub fn lambda_bisection_with(
    mdp: &TruncatedMdp,
    target: f64,
    cfg: &BisectionConfig,
    mut on_saturated: impl FnMut(f64, usize),
) -> Result<MixtureSolution> {
    let space = mdp.space();
    let never = ThresholdPolicy::Multi(MultiThresholdPolicy::uniform(
        space.n_states(),
        space.r_max(),
        Threshold::Never,
    )?);
    if target > 0.0 {
        // saturated slices transmit at the cap, so no penalty goes below this rate
        let floor = ThresholdPolicy::Multi(MultiThresholdPolicy::uniform(
            space.n_states(),
            space.r_max(),
            Threshold::At(mdp.delta_cap()),
        )?);
        let floor_rate = evaluate_policy(mdp.model(), &floor)?.avg_rate;
        if floor_rate > target {
            return Err(Error::Infeasible(format!(
                "rate {floor_rate} with every threshold at the AoII cap {} exceeds target {target}",
                mdp.delta_cap()
            )));
        }
    }
    bisect_lambda(mdp.model(), target, cfg, never, |lambda, warm| {
        let sol = rvi_threshold_warm(mdp, lambda, &cfg.rvi, warm)?;
        if !sol.converged {
            return Err(Error::NotConverged(format!(
                "threshold RVI at lambda = {lambda}"
            )));
        }
        if !sol.saturated.is_empty() {
            on_saturated(lambda, sol.saturated.len());
        }
        let capped = sol.saturated.len() == mdp.n_slices();
        Ok((
            ThresholdPolicy::Multi(sol.thresholds),
            sol.gain,
            sol.value,
            capped,
        ))
    })
}

/// Same search driven by structure-free RVI; the components are arbitrary
/// deterministic policies on the capped state space.
pub fn oracle_lambda_bisection(
    mdp: &TruncatedMdp,
    target: f64,
    cfg: &BisectionConfig,
) -> Result<MixtureSolution<TabularPolicy>> {
    let never = TabularPolicy::new(mdp.space().clone(), vec![Action::Wait; mdp.space().len()])?;
    bisect_lambda(mdp.model(), target, cfg, never, |lambda, warm| {
        let sol = rvi_plain_warm(mdp, lambda, &cfg.rvi, warm)?;
        if !sol.converged {
            return Err(Error::NotConverged(format!(
                "plain RVI at lambda = {lambda}"
            )));
        }
        let capped = cap_reach(&sol.policy).1;
        Ok((sol.policy, sol.gain, sol.value, capped))
    })
}

/// Whether some, and whether every, mismatch slice of a tabular policy first
/// transmits only at the AoII cap or never.
pub(crate) fn cap_reach(policy: &TabularPolicy) -> (bool, bool) {
    let space = policy.space();
    let cap = space.delta_cap();
    let (n, r_max) = (space.n_states(), space.r_max());
    let (mut any, mut all) = (false, true);
    for s in 0..n {
        for w in (0..n).filter(|&w| w != s) {
            for r in 0..=r_max {
                let first = space
                    .slice_indices(s, w, r)
                    .position(|k| policy.actions()[k] == Action::Transmit);
                let at_cap = first.map_or(true, |d| d as u32 + 1 >= cap);
                any |= at_cap;
                all &= at_cap;
            }
        }
    }
    (any, all)
}

/// Largest single threshold searched before giving up.
const MAX_SINGLE_THRESHOLD: u32 = 1 << 16;

/// Rate-constrained mixture of single-threshold policies `n` and `n + 1`.
pub fn n_bisection(model: &SystemModel, target: f64) -> Result<MixtureSolution> {
    check_target(target)?;
    let mut trace = BisectionTrace::default();
    let single = |n: u32| -> Result<ThresholdPolicy> {
        Ok(ThresholdPolicy::Single(SingleThresholdPolicy::new(n)?))
    };
    if target == 0.0 {
        trace
            .warnings
            .push("target rate 0: returning the never-transmit policy".into());
        let never = ThresholdPolicy::Single(SingleThresholdPolicy::never());
        let ev = evaluate_policy(model, &never)?;
        return pure(never, ev, trace);
    }
    let mut iteration = 0usize;
    let mut eval_at = |n: u32, lo: u32, hi: u32, trace: &mut BisectionTrace| {
        let policy = single(n)?;
        let ev = evaluate_policy(model, &policy)?;
        iteration += 1;
        trace.steps.push(BisectionStep {
            iteration,
            parameter: n as f64,
            gain: None,
            rate: ev.avg_rate,
            lower: lo as f64,
            upper: hi as f64,
        });
        Ok::<_, Error>((policy, ev))
    };

    let mut lo = (1u32, eval_at(1, 1, 2, &mut trace)?);
    if lo.1 .1.avg_rate <= target {
        trace.lower = 1.0;
        trace.upper = 1.0;
        let (policy, ev) = lo.1;
        return pure(policy, ev, trace);
    }
    let mut hi_n = 2u32;
    let mut hi = loop {
        let cand = eval_at(hi_n, lo.0, hi_n, &mut trace)?;
        if cand.1.avg_rate <= target {
            break (hi_n, cand);
        }
        lo = (hi_n, cand);
        if hi_n >= MAX_SINGLE_THRESHOLD {
            return Err(Error::Infeasible(format!(
                "rate {} at threshold {hi_n} still exceeds target {target}",
                lo.1 .1.avg_rate
            )));
        }
        hi_n *= 2;
    };
    while hi.0 - lo.0 > 1 {
        let mid = lo.0 + (hi.0 - lo.0) / 2;
        let cand = eval_at(mid, lo.0, hi.0, &mut trace)?;
        if cand.1.avg_rate > target {
            lo = (mid, cand);
        } else {
            hi = (mid, cand);
        }
    }
    trace.lower = lo.0 as f64;
    trace.upper = hi.0 as f64;
    finish(target, lo.1, hi.1, trace)
}
