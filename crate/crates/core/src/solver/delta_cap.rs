use crate::error::{Error, Result};
use crate::model::{StateSpace, SystemModel};

use super::rvi::{rvi_threshold_warm, RviConfig, RviSolution};
use super::TruncatedMdp;

pub const INITIAL_DELTA_CAP: u32 = 32;
pub const DELTA_CAP_LIMIT: u32 = 1 << 14;

#[derive(Debug, Clone)]
pub struct DeltaCapSelection {
    pub delta_cap: u32,
    pub solution: RviSolution,
    /// `(cap, gain, largest threshold of a switching slice)` for every cap tried.
    pub history: Vec<(u32, f64, Option<u32>)>,
}

/// Carries relative values to a larger cap, extending each slice linearly past the old cap.
pub fn extend_values(from: &StateSpace, value: &[f64], to: &StateSpace) -> Vec<f64> {
    let cap = from.delta_cap();
    to.states()
        .iter()
        .map(|st| {
            if st.delta <= cap {
                return value[from.index_unchecked(st)];
            }
            let mut top = *st;
            top.delta = cap;
            let v_top = value[from.index_unchecked(&top)];
            let slope = if cap >= 2 {
                top.delta = cap - 1;
                v_top - value[from.index_unchecked(&top)]
            } else {
                0.0
            };
            v_top + slope * f64::from(st.delta - cap)
        })
        .collect()
}

/// Doubles the AoII cap from [`INITIAL_DELTA_CAP`] until, between caps `D` and `2D`,
/// the gain moves by less than `eps * max(1, |g|)`. A finite threshold at `D`
/// means `D` is too small, so every threshold of a slice that switches must lie
/// strictly below it, and the slices that never switch must be the same at
/// both caps. Returns the solution at `D`.
pub fn delta_cap_selection(
    model: &SystemModel,
    lambda: f64,
    eps: f64,
    cfg: &RviConfig,
) -> Result<DeltaCapSelection> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!(
            "gain tolerance {eps} must be positive"
        )));
    }
    let solve =
        |cap: u32, warm: Option<(&StateSpace, &[f64])>| -> Result<(TruncatedMdp, RviSolution)> {
            let mdp = TruncatedMdp::new(model, cap)?;
            let init = warm.map(|(space, v)| extend_values(space, v, mdp.space()));
            let sol = rvi_threshold_warm(&mdp, lambda, cfg, init.as_deref())?;
            if !sol.converged {
                return Err(Error::NotConverged(format!(
                    "threshold RVI at cap {cap}, lambda = {lambda}"
                )));
            }
            Ok((mdp, sol))
        };

    let mut cap = INITIAL_DELTA_CAP;
    let (mut mdp, mut sol) = solve(cap, None)?;
    let mut history = vec![(cap, sol.gain, sol.limit_thresholds().n_max())];
    loop {
        if cap * 2 > DELTA_CAP_LIMIT {
            return Err(Error::NotConverged(format!(
                "AoII cap did not settle below {DELTA_CAP_LIMIT} for lambda = {lambda}"
            )));
        }
        let (next_mdp, next) = solve(cap * 2, Some((mdp.space(), &sol.value)))?;
        history.push((cap * 2, next.gain, next.limit_thresholds().n_max()));
        let gain_ok = (next.gain - sol.gain).abs() < eps * sol.gain.abs().max(1.0);
        // a slice that waits up to both caps is read as never transmitting
        let inside = sol.saturated == next.saturated
            && sol.limit_thresholds().n_max().map_or(true, |n| n < cap);
        if gain_ok && inside {
            return Ok(DeltaCapSelection {
                delta_cap: cap,
                solution: sol,
                history,
            });
        }
        cap *= 2;
        mdp = next_mdp;
        sol = next;
    }
}
