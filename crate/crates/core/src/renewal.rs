//! Closed-form long-run AoII and transmission rate of stationary policies.
//!
//! Cycles run between consecutive visits to `s = w`. The policy-induced chain
//! is turned into an absorbing chain whose transient states are the capped
//! `(s, w, delta, r)` space (regeneration states included as cycle starts)
//! and whose absorbing states are the regeneration values `z`. With
//! `N = (I - Q)^-1`:
//!
//! * `m = N 1` gives expected cycle lengths,
//! * `u = N (1 + 2 Q m)` gives second moments, so `E_z[J] = (u - m) / 2`,
//! * `c = N y` gives expected transmissions per cycle,
//! * `B = N U` gives the embedded chain of regeneration values.
//!
//! Every product with `N` is a linear solve through [`LevelSolver`]; the AoII
//! coordinate only ever moves up by one level, so only the top level is
//! factorized.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{stationary_from, LevelSolver, SparseRows};
use crate::model::{Action, StateSpace, SystemModel};
use crate::policy::{RandomizedMixturePolicy, StationaryPolicy};

const ROW_SUM_TOL: f64 = 1e-10;

/// Transient-to-transient (`Q`) and transient-to-absorbing (`U`) matrices of
/// the cycle chain of one policy.
#[derive(Debug, Clone)]
pub struct AbsorbingModel {
    space: StateSpace,
    q: SparseRows,
    u: SparseRows,
    actions: Vec<Action>,
}

impl AbsorbingModel {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn q(&self) -> &SparseRows {
        &self.q
    }

    pub fn u(&self) -> &SparseRows {
        &self.u
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Row sums of `[Q | U]`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.q.n_rows())
            .map(|h| self.q.row_sum(h) + self.u.row_sum(h))
            .collect()
    }

    fn levels(&self) -> Vec<u32> {
        self.space.states().iter().map(|s| s.delta).collect()
    }

    fn solver(&self) -> Result<LevelSolver> {
        LevelSolver::new(&self.q, &self.levels()).map_err(|e| {
            Error::Numerical(format!(
                "I - Q for {} transient states: {e}",
                self.space.len()
            ))
        })
    }
}

/// Absorbing model truncated at the policy's own cap.
pub fn build_absorbing_model<P: StationaryPolicy + ?Sized>(
    model: &SystemModel,
    policy: &P,
) -> Result<AbsorbingModel> {
    build_absorbing_model_with_cap(model, policy, policy.truncation_cap())
}

/// Absorbing model truncated at `cap >= policy.truncation_cap()`.
pub fn build_absorbing_model_with_cap<P: StationaryPolicy + ?Sized>(
    model: &SystemModel,
    policy: &P,
    cap: u32,
) -> Result<AbsorbingModel> {
    if cap < policy.truncation_cap() {
        return Err(Error::Contract(format!(
            "truncation cap {cap} is below the policy's cap {}",
            policy.truncation_cap()
        )));
    }
    let space = StateSpace::new(model.n_states(), model.r_max(), cap)?;
    let n = model.n_states();
    let mut q = SparseRows::new(space.len());
    let mut u = SparseRows::new(n);
    let mut actions = Vec::with_capacity(space.len());
    for st in space.states() {
        let a = policy.action(st)?;
        actions.push(a);
        model.visit_successors(st, a, Some(cap), |next, p| {
            if next.is_regeneration() {
                u.push(next.s, p);
            } else {
                q.push(space.index_unchecked(&next), p);
            }
        });
        q.finish_row();
        u.finish_row();
    }
    let absorbing = AbsorbingModel {
        space,
        q,
        u,
        actions,
    };
    if let Some((h, sum)) = absorbing
        .row_sums()
        .into_iter()
        .enumerate()
        .find(|(_, s)| (s - 1.0).abs() > ROW_SUM_TOL)
    {
        return Err(Error::ModelViolation(format!(
            "row {} of [Q | U] sums to {sum}",
            absorbing.space.state_at(h)
        )));
    }
    Ok(absorbing)
}

/// Expected absorption times `m` and their second moments `u`.
pub fn cycle_moments(absorbing: &AbsorbingModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let solver = absorbing.solver()?;
    moments_with(absorbing, &solver)
}

fn moments_with(absorbing: &AbsorbingModel, solver: &LevelSolver) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = absorbing.space.len();
    let m = solver.solve(&absorbing.q, &vec![1.0; t])?;
    let qm = absorbing.q.mul_vec(&m);
    let rhs: Vec<f64> = qm.iter().map(|x| 1.0 + 2.0 * x).collect();
    let u = solver.solve(&absorbing.q, &rhs)?;
    Ok((m, u))
}

/// Per-regeneration-value cycle expectations and the embedded chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleStatistics {
    /// `E_z[L]`, slots.
    pub expected_length: Vec<f64>,
    /// `E_z[J]`, cumulative AoII per cycle.
    pub expected_cum_aoii: Vec<f64>,
    /// `E_z[C]`, transmissions per cycle.
    pub expected_transmissions: Vec<f64>,
    /// `P^Z`, regeneration value to next regeneration value.
    pub embedded_transition: Vec<Vec<f64>>,
    /// Stationary law of `P^Z` (from `z = 0` when `P^Z` is reducible).
    pub embedded_stationary: Vec<f64>,
}

impl CycleStatistics {
    fn weighted(&self, values: &[f64]) -> f64 {
        self.embedded_stationary
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }

    pub fn mean_length(&self) -> f64 {
        self.weighted(&self.expected_length)
    }

    pub fn mean_cum_aoii(&self) -> f64 {
        self.weighted(&self.expected_cum_aoii)
    }

    pub fn mean_transmissions(&self) -> f64 {
        self.weighted(&self.expected_transmissions)
    }
}

fn embedded_stationary(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = p.len();
    let dense = DMatrix::from_fn(n, n, |i, j| p[i][j]);
    stationary_from(&dense, 0)
}

pub fn cycle_statistics(absorbing: &AbsorbingModel) -> Result<CycleStatistics> {
    let solver = absorbing.solver()?;
    let (m, u) = moments_with(absorbing, &solver)?;
    let space = &absorbing.space;
    let n = space.n_states();
    let y: Vec<f64> = absorbing.actions.iter().map(|a| a.as_f64()).collect();
    let c = solver.solve(&absorbing.q, &y)?;

    let t = space.len();
    let mut columns = vec![vec![0.0; t]; n];
    for h in 0..t {
        for (z, p) in absorbing.u.row(h) {
            columns[z][h] = p;
        }
    }
    let b: Vec<Vec<f64>> = columns
        .iter()
        .map(|col| solver.solve(&absorbing.q, col))
        .collect::<Result<_>>()?;

    let regen: Vec<usize> = (0..n).map(|z| space.regeneration_index(z)).collect();
    let embedded_transition: Vec<Vec<f64>> = regen
        .iter()
        .map(|&h| {
            let row: Vec<f64> = (0..n).map(|z2| b[z2][h]).collect();
            let sum: f64 = row.iter().sum();
            row.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    let embedded_stationary = embedded_stationary(&embedded_transition)?;
    Ok(CycleStatistics {
        expected_length: regen.iter().map(|&h| m[h]).collect(),
        expected_cum_aoii: regen.iter().map(|&h| (u[h] - m[h]) / 2.0).collect(),
        expected_transmissions: regen.iter().map(|&h| c[h]).collect(),
        embedded_transition,
        embedded_stationary,
    })
}

/// Renewal-reward averages of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub avg_aoii: f64,
    pub avg_rate: f64,
    pub cycle_stats: CycleStatistics,
}

impl PolicyEvaluation {
    fn from_stats(cycle_stats: CycleStatistics) -> Result<Self> {
        let denom = cycle_stats.mean_length();
        if !(denom > 0.0) {
            return Err(Error::Numerical(format!(
                "mean cycle length {denom} is not positive"
            )));
        }
        Ok(Self {
            avg_aoii: cycle_stats.mean_cum_aoii() / denom,
            avg_rate: cycle_stats.mean_transmissions() / denom,
            cycle_stats,
        })
    }
}

pub fn evaluate_policy<P: StationaryPolicy + ?Sized>(
    model: &SystemModel,
    policy: &P,
) -> Result<PolicyEvaluation> {
    evaluate_policy_with_cap(model, policy, policy.truncation_cap())
}

pub fn evaluate_policy_with_cap<P: StationaryPolicy + ?Sized>(
    model: &SystemModel,
    policy: &P,
    cap: u32,
) -> Result<PolicyEvaluation> {
    let absorbing = build_absorbing_model_with_cap(model, policy, cap)?;
    PolicyEvaluation::from_stats(cycle_statistics(&absorbing)?)
}

/// Cycle statistics of a mixture that picks `minus` with probability `rho` at
/// every regeneration. The embedded chain is `rho P^Z(-) + (1 - rho) P^Z(+)`.
pub fn mix_cycle_statistics(
    minus: &CycleStatistics,
    plus: &CycleStatistics,
    rho: f64,
) -> Result<CycleStatistics> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1]")));
    }
    if rho == 1.0 {
        return Ok(minus.clone());
    }
    if rho == 0.0 {
        return Ok(plus.clone());
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(x, y)| rho * x + (1.0 - rho) * y)
            .collect()
    };
    let embedded_transition: Vec<Vec<f64>> = minus
        .embedded_transition
        .iter()
        .zip(&plus.embedded_transition)
        .map(|(a, b)| mix(a, b))
        .collect();
    let embedded_stationary = embedded_stationary(&embedded_transition)?;
    Ok(CycleStatistics {
        expected_length: mix(&minus.expected_length, &plus.expected_length),
        expected_cum_aoii: mix(&minus.expected_cum_aoii, &plus.expected_cum_aoii),
        expected_transmissions: mix(&minus.expected_transmissions, &plus.expected_transmissions),
        embedded_transition,
        embedded_stationary,
    })
}

pub fn evaluate_mixture_stats(
    minus: &CycleStatistics,
    plus: &CycleStatistics,
    rho: f64,
) -> Result<PolicyEvaluation> {
    PolicyEvaluation::from_stats(mix_cycle_statistics(minus, plus, rho)?)
}

pub fn evaluate_mixture<P: StationaryPolicy>(
    model: &SystemModel,
    mixture: &RandomizedMixturePolicy<P>,
) -> Result<PolicyEvaluation> {
    let minus = evaluate_policy(model, &mixture.minus)?;
    let plus = evaluate_policy(model, &mixture.plus)?;
    evaluate_mixture_stats(&minus.cycle_stats, &plus.cycle_stats, mixture.rho())
}

/// Mixing weight at which the mixture's exact rate equals `target`.
///
/// Starts from the bracket `[0, 1]` (rates `R+` and `R-`) and bisects on the
/// sign of `rate(rho) - target` down to machine precision.
pub fn calibrate_mixing(
    minus: &CycleStatistics,
    plus: &CycleStatistics,
    target: f64,
) -> Result<f64> {
    let rate = |rho: f64| evaluate_mixture_stats(minus, plus, rho).map(|e| e.avg_rate);
    let (r_plus, r_minus) = (rate(0.0)?, rate(1.0)?);
    if r_minus == r_plus {
        return Ok(1.0);
    }
    if !((r_plus <= target && target <= r_minus) || (r_minus <= target && target <= r_plus)) {
        return Err(Error::Infeasible(format!(
            "target rate {target} is not bracketed by [{r_plus}, {r_minus}]"
        )));
    }
    let increasing = r_minus > r_plus;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = rate(mid)? > target;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // pick the endpoint whose rate is closer to the target
    let (rl, rh) = (rate(lo)?, rate(hi)?);
    Ok(if (rl - target).abs() <= (rh - target).abs() {
        lo
    } else {
        hi
    })
}
