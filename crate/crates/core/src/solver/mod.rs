//! Policy synthesis on the AoII-capped Lagrangian MDP.
//!
//! * [`rvi_threshold`]: relative value iteration that exploits the threshold
//!   structure, skipping the wait/transmit comparison above each slice's
//!   switch point.
//! * [`rvi_plain`]: structure-free relative value iteration, used as an oracle.
//! * [`lambda_bisection`] / [`n_bisection`]: rate-constrained randomized
//!   policies for the multi- and single-threshold classes.
//! * [`delta_cap_selection`]: doubles the AoII cap until the gain settles.

pub(crate) mod bisection;
mod delta_cap;
mod rvi;

pub use bisection::{
    lambda_bisection, lambda_bisection_with, n_bisection, oracle_lambda_bisection, BisectionConfig,
    BisectionStep, BisectionTrace, MixtureSolution,
};
pub use delta_cap::{
    delta_cap_selection, extend_values, DeltaCapSelection, DELTA_CAP_LIMIT, INITIAL_DELTA_CAP,
};
pub use rvi::{
    rvi_plain, rvi_plain_warm, rvi_threshold, rvi_threshold_warm, PlainRviSolution, RviConfig,
    RviSolution,
};

use crate::error::{Error, Result};
use crate::model::{Action, StateSpace, SystemModel, SystemState};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Regen(u32),
    Slice(u32),
}

/// Lagrangian MDP with AoII capped at `delta_cap`: transitions that would
/// leave the cap stay at the cap.
///
/// Successors depend on AoII only through `delta + 1`, so the kernel is kept
/// as one pattern per `(s, w, r)` slice and action. Value iteration runs on a
/// slice-major layout: position `slice * cap + delta - 1`, then the
/// regeneration states.
#[derive(Debug, Clone)]
pub struct TruncatedMdp {
    model: SystemModel,
    space: StateSpace,
    slices: Vec<(usize, usize, u32)>,
    slice_of: Vec<u32>,
    patterns: [Vec<Vec<(Target, f64)>>; 2],
    regen_patterns: Vec<Vec<(Target, f64)>>,
}

impl TruncatedMdp {
    pub fn new(model: &SystemModel, delta_cap: u32) -> Result<Self> {
        let space = StateSpace::new(model.n_states(), model.r_max(), delta_cap)?;
        let (n, r_levels) = (model.n_states(), model.r_max() as usize + 1);
        let mut slices = Vec::new();
        let mut slice_of = vec![u32::MAX; n * n * r_levels];
        for s in 0..n {
            for w in (0..n).filter(|&w| w != s) {
                for r in 0..r_levels as u32 {
                    slice_of[(s * n + w) * r_levels + r as usize] = slices.len() as u32;
                    slices.push((s, w, r));
                }
            }
        }
        let pattern = |st: &SystemState, action: Action| {
            let mut out: Vec<(Target, f64)> = Vec::new();
            model.visit_successors(st, action, None, |next, p| {
                let t = if next.is_regeneration() {
                    Target::Regen(next.s as u32)
                } else {
                    Target::Slice(slice_of[(next.s * n + next.w) * r_levels + next.r as usize])
                };
                match out.iter_mut().find(|(u, _)| *u == t) {
                    Some(e) => e.1 += p,
                    None => out.push((t, p)),
                }
            });
            out
        };
        let patterns = [Action::Wait, Action::Transmit].map(|a| {
            slices
                .iter()
                .map(|&(s, w, r)| pattern(&SystemState::new(s, w, 1, r), a))
                .collect()
        });
        let regen_patterns = (0..n)
            .map(|z| pattern(&SystemState::regeneration(z), Action::Wait))
            .collect();
        Ok(Self {
            model: model.clone(),
            space,
            slices,
            slice_of,
            patterns,
            regen_patterns,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn delta_cap(&self) -> u32 {
        self.space.delta_cap()
    }

    fn cap(&self) -> usize {
        self.space.delta_cap() as usize
    }

    pub(crate) fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub(crate) fn slice(&self, id: usize) -> (usize, usize, u32) {
        self.slices[id]
    }

    pub(crate) fn layout_len(&self) -> usize {
        self.slices.len() * self.cap() + self.space.n_states()
    }

    pub(crate) fn regen_pos(&self, z: usize) -> usize {
        self.slices.len() * self.cap() + z
    }

    fn pos(&self, st: &SystemState) -> usize {
        if st.is_regeneration() {
            return self.regen_pos(st.s);
        }
        let r_levels = self.space.r_max() as usize + 1;
        let id = self.slice_of[(st.s * self.space.n_states() + st.w) * r_levels + st.r as usize]
            as usize;
        id * self.cap() + st.delta as usize - 1
    }

    /// Reorders a state-space vector into the internal layout.
    pub(crate) fn to_layout(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout_len()];
        for (st, x) in self.space.states().iter().zip(v) {
            out[self.pos(st)] = *x;
        }
        out
    }

    pub(crate) fn from_layout<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.space
            .states()
            .iter()
            .map(|st| v[self.pos(st)])
            .collect()
    }

    /// Expected next value under `action` for every AoII level of slice `id`;
    /// `out[d]` belongs to `delta = d + 1`.
    pub(crate) fn backup_slice(&self, action: Action, id: usize, v: &[f64], out: &mut [f64]) {
        let cap = self.cap();
        let mut constant = 0.0;
        out.fill(0.0);
        for &(t, p) in &self.patterns[action as usize][id] {
            match t {
                Target::Regen(z) => constant += p * v[self.regen_pos(z as usize)],
                Target::Slice(j) => {
                    let block = &v[j as usize * cap..(j as usize + 1) * cap];
                    // level d moves to d + 1; the top level stays put
                    for (o, x) in out[..cap - 1].iter_mut().zip(&block[1..]) {
                        *o += p * x;
                    }
                    out[cap - 1] += p * block[cap - 1];
                }
            }
        }
        if constant != 0.0 {
            out.iter_mut().for_each(|x| *x += constant);
        }
    }

    /// Expected next value from `(z, z, 0, 0)`, where both actions coincide.
    pub(crate) fn backup_regen(&self, z: usize, v: &[f64]) -> f64 {
        self.regen_patterns[z]
            .iter()
            .map(|&(t, p)| match t {
                Target::Regen(y) => p * v[self.regen_pos(y as usize)],
                Target::Slice(j) => p * v[j as usize * self.cap()],
            })
            .sum()
    }

    /// Successor distribution of `state` in the capped MDP.
    pub fn successors(
        &self,
        state: &SystemState,
        action: Action,
    ) -> Result<Vec<(SystemState, f64)>> {
        state.validate(self.space.n_states(), self.space.r_max())?;
        if state.delta > self.delta_cap() {
            return Err(Error::ModelViolation(format!(
                "{state} lies above the AoII cap {}",
                self.delta_cap()
            )));
        }
        Ok(self
            .model
            .merged_successors(state, action, Some(self.delta_cap())))
    }
}
