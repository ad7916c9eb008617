use crate::error::{Error, Result};
use crate::model::Action;
use crate::policy::{MultiThresholdPolicy, TabularPolicy, Threshold};

use super::TruncatedMdp;

/// Stopping rule shared by both value iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RviConfig {
    /// Stop once the span of successive value differences is below `tol * max(1, |gain|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RviConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

impl RviConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain(format!("invalid RVI settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RviSolution {
    /// Relative values, zero at the reference state.
    pub value: Vec<f64>,
    pub gain: f64,
    pub thresholds: MultiThresholdPolicy,
    /// Slices `(s, w, r)` that never switched below the cap; their threshold is the cap.
    pub saturated: Vec<(usize, usize, u32)>,
    pub iterations: usize,
    pub converged: bool,
}

impl RviSolution {
    /// The thresholds with every saturated slice set to `Never`: what the
    /// table says about the untruncated problem.
    pub fn limit_thresholds(&self) -> MultiThresholdPolicy {
        let t = &self.thresholds;
        MultiThresholdPolicy::from_fn(t.n_states(), t.r_max(), |s, w, r| {
            if self.saturated.contains(&(s, w, r)) {
                Threshold::Never
            } else {
                t.threshold(s, w, r)
            }
        })
        .expect("same shape as the solved table")
    }
}

#[derive(Debug, Clone)]
pub struct PlainRviSolution {
    pub value: Vec<f64>,
    pub gain: f64,
    pub policy: TabularPolicy,
    pub iterations: usize,
    pub converged: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "lambda = {lambda} must be finite and non-negative"
        )));
    }
    Ok(())
}

fn initial_values(mdp: &TruncatedMdp, init: Option<&[f64]>) -> Result<Vec<f64>> {
    match init {
        Some(v) if v.len() == mdp.space().len() => Ok(mdp.to_layout(v)),
        Some(v) => Err(Error::Contract(format!(
            "warm start has {} values for {} states",
            v.len(),
            mdp.space().len()
        ))),
        None => Ok(vec![0.0; mdp.layout_len()]),
    }
}

/// Normalizes `next` against the reference state; returns the span of `next - prev` and the gain.
fn relative_step(prev: &mut [f64], next: &[f64], reference: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (p, n) in prev.iter().zip(next) {
        let d = n - p;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let gain = next[reference];
    for (p, n) in prev.iter_mut().zip(next) {
        *p = n - gain;
    }
    (hi - lo, gain)
}

/// Threshold-structured relative value iteration (Jacobi sweeps).
///
/// Within each `(s, w, r)` slice, AoII is scanned upward; at the first level
/// where transmitting is no worse than waiting, the threshold is recorded and
/// every higher level takes the transmit backup without comparison. Matched
/// states always wait. Values are anchored at `(0, 0, 0, 0)`.
pub fn rvi_threshold(mdp: &TruncatedMdp, lambda: f64, cfg: &RviConfig) -> Result<RviSolution> {
    rvi_threshold_warm(mdp, lambda, cfg, None)
}

pub fn rvi_threshold_warm(
    mdp: &TruncatedMdp,
    lambda: f64,
    cfg: &RviConfig,
    init: Option<&[f64]>,
) -> Result<RviSolution> {
    check_lambda(lambda)?;
    cfg.validate()?;
    let space = mdp.space();
    let (n, cap) = (space.n_states(), space.delta_cap());
    let len = cap as usize;
    let reference = mdp.regen_pos(0);

    let mut value = initial_values(mdp, init)?;
    let mut next = vec![0.0; value.len()];
    let (mut w0, mut w1) = (vec![0.0; len], vec![0.0; len]);
    let mut thresholds = vec![cap; mdp.n_slices()];
    let mut found = vec![false; mdp.n_slices()];
    let mut gain = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        for id in 0..mdp.n_slices() {
            mdp.backup_slice(Action::Wait, id, &value, &mut w0);
            mdp.backup_slice(Action::Transmit, id, &value, &mut w1);
            let out = &mut next[id * len..(id + 1) * len];
            let mut switched = false;
            thresholds[id] = cap;
            for d in 0..len {
                let delta = (d + 1) as f64;
                let v1 = delta + lambda + w1[d];
                if switched {
                    out[d] = v1;
                    continue;
                }
                let v0 = delta + w0[d];
                if v1 <= v0 {
                    thresholds[id] = d as u32 + 1;
                    switched = true;
                    out[d] = v1;
                } else {
                    out[d] = v0;
                }
            }
            found[id] = switched;
        }
        for z in 0..n {
            next[mdp.regen_pos(z)] = mdp.backup_regen(z, &value);
        }
        let (span, g) = relative_step(&mut value, &next, reference);
        gain = g;
        if span < cfg.tol * gain.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let r_levels = space.r_max() as usize + 1;
    let mut table = vec![cap; n * n * r_levels];
    let mut saturated = Vec::new();
    for id in 0..mdp.n_slices() {
        let (s, w, r) = mdp.slice(id);
        table[(s * n + w) * r_levels + r as usize] = thresholds[id];
        if !found[id] {
            saturated.push((s, w, r));
        }
    }
    let policy = MultiThresholdPolicy::from_fn(n, space.r_max(), |s, w, r| {
        Threshold::At(table[(s * n + w) * r_levels + r as usize])
    })?;
    if !converged {
        log::warn!("threshold RVI at lambda = {lambda} stopped after {iterations} sweeps without converging");
    }
    Ok(RviSolution {
        value: mdp.from_layout(&value),
        gain,
        thresholds: policy,
        saturated,
        iterations,
        converged,
    })
}

/// Structure-free relative value iteration with a full minimum over both
/// actions at every state. Ties go to transmit.
pub fn rvi_plain(mdp: &TruncatedMdp, lambda: f64, cfg: &RviConfig) -> Result<PlainRviSolution> {
    rvi_plain_warm(mdp, lambda, cfg, None)
}

pub fn rvi_plain_warm(
    mdp: &TruncatedMdp,
    lambda: f64,
    cfg: &RviConfig,
    init: Option<&[f64]>,
) -> Result<PlainRviSolution> {
    check_lambda(lambda)?;
    cfg.validate()?;
    let space = mdp.space();
    let len = space.delta_cap() as usize;
    let reference = mdp.regen_pos(0);

    let mut value = initial_values(mdp, init)?;
    let mut next = vec![0.0; value.len()];
    let mut actions = vec![Action::Wait; value.len()];
    let (mut w0, mut w1) = (vec![0.0; len], vec![0.0; len]);
    let mut gain = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        for id in 0..mdp.n_slices() {
            mdp.backup_slice(Action::Wait, id, &value, &mut w0);
            mdp.backup_slice(Action::Transmit, id, &value, &mut w1);
            for d in 0..len {
                let delta = (d + 1) as f64;
                let (v0, v1) = (delta + w0[d], delta + lambda + w1[d]);
                let k = id * len + d;
                if v1 <= v0 {
                    next[k] = v1;
                    actions[k] = Action::Transmit;
                } else {
                    next[k] = v0;
                    actions[k] = Action::Wait;
                }
            }
        }
        // matched states wait: transmitting there only adds the penalty
        for z in 0..space.n_states() {
            next[mdp.regen_pos(z)] = mdp.backup_regen(z, &value);
        }
        let (span, g) = relative_step(&mut value, &next, reference);
        gain = g;
        if span < cfg.tol * gain.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "plain RVI at lambda = {lambda} stopped after {iterations} sweeps without converging"
        );
    }
    let policy = TabularPolicy::new(space.clone(), mdp.from_layout(&actions))?;
    Ok(PlainRviSolution {
        value: mdp.from_layout(&value),
        gain,
        policy,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderProfile, SourceChain, SystemModel, SystemState};
    use crate::policy::StationaryPolicy;

    fn four_state() -> SystemModel {
        let chain = SourceChain::new(vec![
            vec![0.52, 0.12, 0.18, 0.18],
            vec![0.17, 0.57, 0.17, 0.09],
            vec![0.03, 0.06, 0.72, 0.19],
            vec![0.16, 0.10, 0.18, 0.56],
        ])
        .unwrap();
        SystemModel::new(chain, DecoderProfile::reference())
    }

    #[test]
    fn threshold_and_plain_agree_at_moderate_penalty() {
        let mdp = TruncatedMdp::new(&four_state(), 30).unwrap();
        let cfg = RviConfig::default();
        let thr = rvi_threshold(&mdp, 8.0, &cfg).unwrap();
        let plain = rvi_plain(&mdp, 8.0, &cfg).unwrap();
        assert!(thr.converged && plain.converged);
        assert!(thr.saturated.is_empty());
        assert!((thr.gain - plain.gain).abs() < 10.0 * cfg.tol);
        assert_eq!(plain.policy.as_thresholds().unwrap(), thr.thresholds);
        for z in 0..4 {
            assert_eq!(
                thr.thresholds
                    .action(&SystemState::regeneration(z))
                    .unwrap(),
                Action::Wait
            );
        }
    }

    #[test]
    fn huge_penalty_saturates_every_slice() {
        let mdp = TruncatedMdp::new(&four_state(), 50).unwrap();
        let sol = rvi_threshold(&mdp, 1e6, &RviConfig::default()).unwrap();
        assert_eq!(sol.thresholds.n_max(), Some(50));
        assert_eq!(sol.saturated.len(), 12 * 3);
        assert!(sol
            .thresholds
            .table()
            .iter()
            .all(|t| matches!(t, Threshold::Never | Threshold::At(50))));
    }

    #[test]
    fn iteration_limit_is_reported() {
        let mdp = TruncatedMdp::new(&four_state(), 10).unwrap();
        let sol = rvi_threshold(
            &mdp,
            8.0,
            &RviConfig {
                tol: 1e-9,
                max_iter: 3,
            },
        )
        .unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert!(rvi_threshold(&mdp, -1.0, &RviConfig::default()).is_err());
    }
}
