//! Transmission policies: multi- and single-threshold classes, tabular
//! policies produced by the structure-free solver, two-component randomized
//! mixtures and the periodic baseline.

mod io;
mod periodic;

pub use io::PolicyFile;
pub use periodic::{evaluate_periodic, PeriodicEvaluation};

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{Action, StateSpace, SystemState};

/// AoII level at which a slice starts transmitting, or `Never`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Threshold {
    At(u32),
    Never,
}

impl Threshold {
    #[inline]
    pub fn transmits_at(self, delta: u32) -> bool {
        match self {
            Threshold::At(n) => delta >= n,
            Threshold::Never => false,
        }
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Threshold::At(n) => Some(n),
            Threshold::Never => None,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(n) => f.pad(&n.to_string()),
            Threshold::Never => f.pad("—"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::At(n) => ser.serialize_u32(*n),
            Threshold::Never => ser.serialize_str("never"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Tag(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(n) => Ok(Threshold::At(n)),
            Raw::Tag(t) if t == "never" => Ok(Threshold::Never),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown threshold marker {t:?}"
            ))),
        }
    }
}

/// A stationary deterministic policy over `(s, w, delta, r)`.
///
/// `truncation_cap` is the smallest AoII level above which the action no
/// longer depends on `delta`; the renewal analyzer truncates there.
pub trait StationaryPolicy: Send + Sync {
    fn action(&self, state: &SystemState) -> Result<Action>;

    fn truncation_cap(&self) -> u32;
}

fn check_bounds(state: &SystemState, n_states: usize, r_max: u32) -> Result<()> {
    if state.s >= n_states || state.w >= n_states || state.r > r_max {
        return Err(Error::Contract(format!(
            "state {state} outside policy table ({n_states} values, r_max = {r_max})"
        )));
    }
    Ok(())
}

/// Thresholds `n(s, w, r)` for every source/receiver pair and packet count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiThresholdPolicy {
    n_states: usize,
    r_max: u32,
    table: Vec<Threshold>,
}

impl MultiThresholdPolicy {
    /// Builds the table from `f(s, w, r)`; diagonal entries are forced to `Never`.
    pub fn from_fn(
        n_states: usize,
        r_max: u32,
        mut f: impl FnMut(usize, usize, u32) -> Threshold,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(n_states * n_states * (r_max as usize + 1));
        for s in 0..n_states {
            for w in 0..n_states {
                for r in 0..=r_max {
                    table.push(if s == w { Threshold::Never } else { f(s, w, r) });
                }
            }
        }
        Self::from_table(n_states, r_max, table)
    }

    /// Table in `(s, w, r)`-major order.
    pub fn from_table(n_states: usize, r_max: u32, table: Vec<Threshold>) -> Result<Self> {
        let expected = n_states * n_states * (r_max as usize + 1);
        if table.len() != expected {
            return Err(Error::InvalidInput(format!(
                "threshold table has {} entries, expected {expected}",
                table.len()
            )));
        }
        let policy = Self {
            n_states,
            r_max,
            table,
        };
        for s in 0..n_states {
            for w in 0..n_states {
                for r in 0..=r_max {
                    match policy.threshold(s, w, r) {
                        Threshold::At(0) => {
                            return Err(Error::InvalidInput(format!(
                                "threshold at ({s}, {w}, {r}) must be at least 1"
                            )))
                        }
                        Threshold::At(_) if s == w => {
                            return Err(Error::InvalidInput(format!(
                                "diagonal threshold at ({s}, {s}, {r}) must be never"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(policy)
    }

    /// Every off-diagonal slice shares the same threshold.
    pub fn uniform(n_states: usize, r_max: u32, threshold: Threshold) -> Result<Self> {
        Self::from_fn(n_states, r_max, |_, _, _| threshold)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    #[inline]
    pub fn threshold(&self, s: usize, w: usize, r: u32) -> Threshold {
        self.table[(s * self.n_states + w) * (self.r_max as usize + 1) + r as usize]
    }

    pub fn table(&self) -> &[Threshold] {
        &self.table
    }

    /// Largest finite threshold.
    pub fn n_max(&self) -> Option<u32> {
        self.table.iter().filter_map(|t| t.finite()).max()
    }

    /// Human-readable `S x W` grid for one packet count, diagonal as "—".
    pub fn render_slice(&self, r: u32) -> String {
        let mut out = String::new();
        for s in 0..self.n_states {
            let cells: Vec<String> = (0..self.n_states)
                .map(|w| format!("{:>4}", self.threshold(s, w, r)))
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

impl StationaryPolicy for MultiThresholdPolicy {
    #[inline]
    fn action(&self, state: &SystemState) -> Result<Action> {
        check_bounds(state, self.n_states, self.r_max)?;
        Ok(
            if self
                .threshold(state.s, state.w, state.r)
                .transmits_at(state.delta)
            {
                Action::Transmit
            } else {
                Action::Wait
            },
        )
    }

    fn truncation_cap(&self) -> u32 {
        self.n_max().unwrap_or(1)
    }
}

/// One threshold shared by every state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleThresholdPolicy {
    pub threshold: Threshold,
}

impl SingleThresholdPolicy {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput(
                "single threshold must be at least 1".into(),
            ));
        }
        Ok(Self {
            threshold: Threshold::At(n),
        })
    }

    pub fn never() -> Self {
        Self {
            threshold: Threshold::Never,
        }
    }
}

impl StationaryPolicy for SingleThresholdPolicy {
    #[inline]
    fn action(&self, state: &SystemState) -> Result<Action> {
        Ok(
            if state.s != state.w && self.threshold.transmits_at(state.delta) {
                Action::Transmit
            } else {
                Action::Wait
            },
        )
    }

    fn truncation_cap(&self) -> u32 {
        self.threshold.finite().unwrap_or(1)
    }
}

/// Either threshold class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThresholdPolicy {
    Multi(MultiThresholdPolicy),
    Single(SingleThresholdPolicy),
}

impl ThresholdPolicy {
    pub fn n_max(&self) -> Option<u32> {
        match self {
            ThresholdPolicy::Multi(p) => p.n_max(),
            ThresholdPolicy::Single(p) => p.threshold.finite(),
        }
    }
}

impl StationaryPolicy for ThresholdPolicy {
    #[inline]
    fn action(&self, state: &SystemState) -> Result<Action> {
        match self {
            ThresholdPolicy::Multi(p) => p.action(state),
            ThresholdPolicy::Single(p) => p.action(state),
        }
    }

    fn truncation_cap(&self) -> u32 {
        match self {
            ThresholdPolicy::Multi(p) => p.truncation_cap(),
            ThresholdPolicy::Single(p) => p.truncation_cap(),
        }
    }
}

impl From<MultiThresholdPolicy> for ThresholdPolicy {
    fn from(p: MultiThresholdPolicy) -> Self {
        ThresholdPolicy::Multi(p)
    }
}

impl From<SingleThresholdPolicy> for ThresholdPolicy {
    fn from(p: SingleThresholdPolicy) -> Self {
        ThresholdPolicy::Single(p)
    }
}

/// Explicit action table over a capped state space; states beyond the cap
/// take the action of the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    space: StateSpace,
    actions: Vec<Action>,
}

impl TabularPolicy {
    pub fn new(space: StateSpace, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::InvalidInput(format!(
                "{} actions for a space of {} states",
                actions.len(),
                space.len()
            )));
        }
        Ok(Self { space, actions })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Threshold form of the table, if every slice is wait-then-transmit in AoII.
    pub fn as_thresholds(&self) -> Option<MultiThresholdPolicy> {
        let (n, r_max) = (self.space.n_states(), self.space.r_max());
        let mut table = Vec::with_capacity(n * n * (r_max as usize + 1));
        for s in 0..n {
            for w in 0..n {
                for r in 0..=r_max {
                    if s == w {
                        table.push(Threshold::Never);
                        continue;
                    }
                    let acts: Vec<Action> = self
                        .space
                        .slice_indices(s, w, r)
                        .map(|k| self.actions[k])
                        .collect();
                    let first = acts.iter().position(|&a| a == Action::Transmit);
                    match first {
                        None => table.push(Threshold::Never),
                        Some(i) if acts[i..].iter().all(|&a| a == Action::Transmit) => {
                            table.push(Threshold::At(i as u32 + 1))
                        }
                        Some(_) => return None,
                    }
                }
            }
        }
        MultiThresholdPolicy::from_table(n, r_max, table).ok()
    }

    /// Slices `(s, w, r)` whose actions are not monotone in AoII.
    pub fn non_monotone_slices(&self) -> Vec<(usize, usize, u32)> {
        let (n, r_max) = (self.space.n_states(), self.space.r_max());
        let mut out = Vec::new();
        for s in 0..n {
            for w in (0..n).filter(|&w| w != s) {
                for r in 0..=r_max {
                    let mut seen_transmit = false;
                    for k in self.space.slice_indices(s, w, r) {
                        match self.actions[k] {
                            Action::Transmit => seen_transmit = true,
                            Action::Wait if seen_transmit => {
                                out.push((s, w, r));
                                break;
                            }
                            Action::Wait => {}
                        }
                    }
                }
            }
        }
        out
    }
}

impl StationaryPolicy for TabularPolicy {
    #[inline]
    fn action(&self, state: &SystemState) -> Result<Action> {
        check_bounds(state, self.space.n_states(), self.space.r_max())?;
        let capped = SystemState {
            delta: state.delta.min(self.space.delta_cap()),
            ..*state
        };
        let k = self.space.index_of(&capped).ok_or_else(|| {
            Error::Contract(format!("state {state} is not part of the policy table"))
        })?;
        Ok(self.actions[k])
    }

    fn truncation_cap(&self) -> u32 {
        self.space.delta_cap()
    }
}

/// Which component of a mixture drives the current regeneration cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Minus,
    Plus,
}

/// Two stationary policies mixed at regeneration: the `minus` component is
/// chosen with probability `rho` every time the system enters `s = w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedMixturePolicy<P = ThresholdPolicy> {
    pub minus: P,
    pub plus: P,
    rho: f64,
    active: Component,
}

impl<P: StationaryPolicy> RandomizedMixturePolicy<P> {
    pub fn new(minus: P, plus: P, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1]")));
        }
        let active = if rho > 0.0 {
            Component::Minus
        } else {
            Component::Plus
        };
        Ok(Self {
            minus,
            plus,
            rho,
            active,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn active(&self) -> Component {
        self.active
    }

    pub fn component(&self, c: Component) -> &P {
        match c {
            Component::Minus => &self.minus,
            Component::Plus => &self.plus,
        }
    }

    /// Picks the component for the cycle starting at `state`, which must be a regeneration state.
    pub fn resample(&mut self, state: &SystemState, uniform_draw: f64) -> Result<Component> {
        if !(state.s == state.w && state.delta == 0 && state.r == 0) {
            return Err(Error::Contract(format!(
                "mixture resampled outside the regeneration set at {state}"
            )));
        }
        if !(0.0..1.0).contains(&uniform_draw) {
            return Err(Error::Domain(format!(
                "uniform draw {uniform_draw} outside [0, 1)"
            )));
        }
        self.active = if uniform_draw < self.rho {
            Component::Minus
        } else {
            Component::Plus
        };
        Ok(self.active)
    }

    #[inline]
    pub fn action(&self, state: &SystemState) -> Result<Action> {
        self.component(self.active).action(state)
    }
}

/// Transmits every `period` slots regardless of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicPolicy {
    period: u64,
    #[serde(skip)]
    phase: u64,
}

impl PeriodicPolicy {
    pub fn new(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidInput("period must be at least 1".into()));
        }
        Ok(Self { period, phase: 0 })
    }

    /// Period `ceil(1 / rate)`.
    pub fn for_rate(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Domain(format!("rate {rate} must lie in (0, 1]")));
        }
        // guard against 1/R landing just above an integer through rounding
        let inv = 1.0 / rate;
        let period = if (inv - inv.round()).abs() < 1e-9 {
            inv.round()
        } else {
            inv.ceil()
        };
        Self::new(period as u64)
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    pub fn reset(&mut self) {
        self.phase = 0;
    }

    /// Action for the current slot; the phase advances on every call.
    pub fn next_action(&mut self) -> Action {
        let a = if self.phase % self.period == 0 {
            Action::Transmit
        } else {
            Action::Wait
        };
        self.phase = (self.phase + 1) % self.period;
        a
    }
}

/// Mixing weight `(R - R+) / (R- - R+)`, clamped to `[0, 1]`.
///
/// Equal component rates give 1.
pub fn mixing_probability(rate_minus: f64, rate_plus: f64, target: f64) -> Result<f64> {
    const SLACK: f64 = 1e-12;
    if rate_plus > target + SLACK || rate_minus < target - SLACK {
        return Err(Error::Infeasible(format!(
            "target rate {target} is not bracketed by [{rate_plus}, {rate_minus}]"
        )));
    }
    if rate_minus == rate_plus {
        return Ok(1.0);
    }
    Ok(((target - rate_plus) / (rate_minus - rate_plus)).clamp(0.0, 1.0))
}
