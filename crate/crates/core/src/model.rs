//! Source, channel and state-space definitions of the monitoring system.
//!
//! A Markov source with `N` values is sampled every slot. The transmitter
//! decides to wait or to transmit the current sample over a HARQ channel whose
//! decoding probability improves with the number of packets the receiver
//! already holds for that sample. The controlled process is
//! `(s, w, delta, r)`: source value, receiver value, age of incorrect
//! information and held packet count.
//!
//! Source and receiver values are 0-based throughout the crate.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for row sums of a [`SourceChain`].
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Absolute tolerance for row sums accepted when parsing a model file.
pub const FILE_ROW_TOL: f64 = 1e-9;

/// Row-stochastic, irreducible transition matrix of the monitored source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceChain {
    n: usize,
    p: Vec<f64>,
}

/// Deviation of one matrix row from stochasticity.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub row: usize,
    pub sum: f64,
    pub negative_or_above_one: bool,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negative_or_above_one {
            write!(
                f,
                "row {} has entries outside [0, 1] (sum {:.12})",
                self.row + 1,
                self.sum
            )
        } else {
            write!(
                f,
                "row {} sums to {:.12}, expected 1",
                self.row + 1,
                self.sum
            )
        }
    }
}

/// Rows of `rows` that are not probability vectors within `tol`.
pub fn stochasticity_issues(rows: &[Vec<f64>], tol: f64) -> Vec<RowIssue> {
    rows.iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let sum: f64 = row.iter().sum();
            let bad_entry = row
                .iter()
                .any(|&x| !(0.0..=1.0).contains(&x) || !x.is_finite());
            if bad_entry || (sum - 1.0).abs() > tol || !sum.is_finite() {
                Some(RowIssue {
                    row: i,
                    sum,
                    negative_or_above_one: bad_entry,
                })
            } else {
                None
            }
        })
        .collect()
}

impl SourceChain {
    /// Builds a chain from its rows, checking stochasticity (1e-12) and irreducibility.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "source chain needs at least one state".into(),
            ));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!(
                "row {} has {} entries, expected {n}",
                i + 1,
                rows[i].len()
            )));
        }
        let issues = stochasticity_issues(&rows, STOCHASTIC_TOL);
        if !issues.is_empty() {
            let msg: Vec<String> = issues.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidInput(msg.join("; ")));
        }
        let chain = Self {
            n,
            p: rows.into_iter().flatten().collect(),
        };
        if !chain.is_irreducible() {
            return Err(Error::InvalidInput(
                "source chain is not irreducible".into(),
            ));
        }
        Ok(chain)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.p[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from * self.n..(from + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Reachability closure over positive entries, forward and backward from state 0.
    pub fn is_irreducible(&self) -> bool {
        let closure = |forward: bool| {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..self.n {
                    let p = if forward { self.p(i, j) } else { self.p(j, i) };
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|x| x)
        };
        closure(true) && closure(false)
    }
}

/// HARQ decoder: probability of decoding given the packets already held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderProfile {
    pub r_max: u32,
    pub p_e: f64,
    pub c: f64,
}

impl DecoderProfile {
    pub fn new(r_max: u32, p_e: f64, c: f64) -> Result<Self> {
        if r_max == 0 {
            return Err(Error::Domain("r_max must be at least 1".into()));
        }
        if !(p_e > 0.0 && p_e < 1.0) {
            return Err(Error::Domain(format!("p_e = {p_e} must lie in (0, 1)")));
        }
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Domain(format!("c = {c} must lie in (0, 1]")));
        }
        Ok(Self { r_max, p_e, c })
    }

    /// Decoder used in the numerical experiments: `p_e = c = 0.5`, `r_max = 2`.
    pub fn reference() -> Self {
        Self {
            r_max: 2,
            p_e: 0.5,
            c: 0.5,
        }
    }

    /// `1 - p_e c^r`, with `r` saturated at `r_max - 1`.
    #[inline]
    pub fn success(&self, held: u32) -> f64 {
        let r = held.min(self.r_max - 1);
        1.0 - self.p_e * self.c.powi(r as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Wait = 0,
    Transmit = 1,
}

impl Action {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// `(s, w, delta, r)`: source value, receiver value, AoII and held packet count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub s: usize,
    pub w: usize,
    pub delta: u32,
    pub r: u32,
}

impl SystemState {
    pub const fn new(s: usize, w: usize, delta: u32, r: u32) -> Self {
        Self { s, w, delta, r }
    }

    /// The regeneration state `(z, z, 0, 0)`.
    pub const fn regeneration(z: usize) -> Self {
        Self {
            s: z,
            w: z,
            delta: 0,
            r: 0,
        }
    }

    pub fn is_regeneration(&self) -> bool {
        self.s == self.w
    }

    /// Checks the state against the reachable state space of the model.
    ///
    /// Matched states must be `(z, z, 0, 0)`; mismatched states carry `delta >= 1`.
    pub fn validate(&self, n_states: usize, r_max: u32) -> Result<()> {
        if self.s >= n_states || self.w >= n_states {
            return Err(Error::ModelViolation(format!(
                "{self} has values outside 0..{n_states}"
            )));
        }
        if self.r > r_max {
            return Err(Error::ModelViolation(format!(
                "{self} exceeds r_max = {r_max}"
            )));
        }
        if self.s == self.w && (self.delta != 0 || self.r != 0) {
            return Err(Error::ModelViolation(format!(
                "{self} is matched but has nonzero AoII or packet count"
            )));
        }
        if self.s != self.w && self.delta == 0 {
            return Err(Error::ModelViolation(format!(
                "{self} is mismatched with zero AoII"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.s, self.w, self.delta, self.r)
    }
}

/// Source chain and decoder bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub chain: SourceChain,
    pub decoder: DecoderProfile,
}

impl SystemModel {
    pub fn new(chain: SourceChain, decoder: DecoderProfile) -> Self {
        Self { chain, decoder }
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn r_max(&self) -> u32 {
        self.decoder.r_max
    }

    /// Visits every successor branch of the kernel. Branches are not merged;
    /// when `s == w` under transmit, some successors are emitted twice.
    ///
    /// With `cap = Some(c)`, mismatch successors have their AoII clamped to `c`.
    #[inline]
    pub(crate) fn visit_successors<F: FnMut(SystemState, f64)>(
        &self,
        st: &SystemState,
        action: Action,
        cap: Option<u32>,
        mut f: F,
    ) {
        let n = self.chain.n;
        let row = self.chain.row(st.s);
        let next_delta = match cap {
            Some(c) => (st.delta + 1).min(c),
            None => st.delta + 1,
        };
        match action {
            Action::Wait => {
                for (s2, &p) in row.iter().enumerate().take(n) {
                    if p == 0.0 {
                        continue;
                    }
                    if s2 == st.w {
                        f(SystemState::regeneration(st.w), p);
                    } else {
                        f(SystemState::new(s2, st.w, next_delta, 0), p);
                    }
                }
            }
            Action::Transmit => {
                let ok = self.decoder.success(st.r);
                let fail = 1.0 - ok;
                for (s2, &p) in row.iter().enumerate().take(n) {
                    if p == 0.0 {
                        continue;
                    }
                    // decoding failed: receiver keeps w
                    if s2 == st.w {
                        f(SystemState::regeneration(st.w), p * fail);
                    } else if s2 == st.s {
                        let r2 = (st.r + 1).min(self.decoder.r_max);
                        f(SystemState::new(st.s, st.w, next_delta, r2), p * fail);
                    } else {
                        f(SystemState::new(s2, st.w, next_delta, 0), p * fail);
                    }
                    // decoding succeeded: receiver adopts s
                    if s2 == st.s {
                        f(SystemState::regeneration(st.s), p * ok);
                    } else {
                        f(SystemState::new(s2, st.s, next_delta, 0), p * ok);
                    }
                }
            }
        }
    }

    /// All successors of `state` under `action` with positive probability, merged by identity.
    pub fn transition_distribution(
        &self,
        state: &SystemState,
        action: Action,
    ) -> Result<Vec<(SystemState, f64)>> {
        state.validate(self.n_states(), self.r_max())?;
        Ok(self.merged_successors(state, action, None))
    }

    pub(crate) fn merged_successors(
        &self,
        state: &SystemState,
        action: Action,
        cap: Option<u32>,
    ) -> Vec<(SystemState, f64)> {
        let mut out: Vec<(SystemState, f64)> = Vec::with_capacity(2 * self.n_states());
        self.visit_successors(state, action, cap, |next, p| {
            match out.iter_mut().find(|(s, _)| *s == next) {
                Some(entry) => entry.1 += p,
                None => out.push((next, p)),
            }
        });
        out
    }
}

/// Transmission penalty of the Lagrangian relaxation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianCostParams {
    lambda: f64,
}

impl LagrangianCostParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "lambda = {lambda} must be finite and non-negative"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Instantaneous cost `delta + lambda * y`.
pub fn lagrangian_cost(state: &SystemState, action: Action, params: &LagrangianCostParams) -> f64 {
    state.delta as f64 + params.lambda * action.as_f64()
}

/// Random source with each row drawn uniformly, normalized, and its largest
/// entry swapped onto the diagonal.
pub fn generate_random_source(n_states: usize, seed: u64) -> Result<SourceChain> {
    if n_states < 2 {
        return Err(Error::Domain(format!(
            "random sources need at least 2 states, got {n_states}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_states)
        .map(|i| {
            let mut row: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
            let argmax = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &x)| if x > row[best] { j } else { best });
            row.swap(i, argmax);
            row
        })
        .collect();
    SourceChain::new(rows)
}

/// Flat, lexicographically ordered `(s, w, delta, r)` space with AoII capped at `delta_cap`.
///
/// Matched pairs contribute only `(z, z, 0, 0)`; mismatched pairs contribute
/// `delta in 1..=delta_cap` and `r in 0..=r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    n: usize,
    r_max: u32,
    cap: u32,
    states: Vec<SystemState>,
}

impl StateSpace {
    pub fn new(n_states: usize, r_max: u32, delta_cap: u32) -> Result<Self> {
        if delta_cap == 0 {
            return Err(Error::Domain("delta_cap must be at least 1".into()));
        }
        let mut states = Vec::with_capacity(
            n_states + n_states * (n_states - 1) * (delta_cap * (r_max + 1)) as usize,
        );
        for s in 0..n_states {
            for w in 0..n_states {
                if s == w {
                    states.push(SystemState::regeneration(s));
                    continue;
                }
                for delta in 1..=delta_cap {
                    for r in 0..=r_max {
                        states.push(SystemState::new(s, w, delta, r));
                    }
                }
            }
        }
        Ok(Self {
            n: n_states,
            r_max,
            cap: delta_cap,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn delta_cap(&self) -> u32 {
        self.cap
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn r_max(&self) -> u32 {
        self.r_max
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn state_at(&self, k: usize) -> SystemState {
        self.states[k]
    }

    fn block_len(&self) -> usize {
        (self.cap * (self.r_max + 1)) as usize
    }

    fn pair_offset(&self, s: usize, w: usize) -> usize {
        let k = self.block_len();
        let row = 1 + (self.n - 1) * k;
        let within = if w <= s { w * k } else { (w - 1) * k + 1 };
        s * row + within
    }

    pub fn index_of(&self, st: &SystemState) -> Option<usize> {
        if st.s >= self.n || st.w >= self.n || st.r > self.r_max {
            return None;
        }
        let base = self.pair_offset(st.s, st.w);
        if st.s == st.w {
            return (st.delta == 0 && st.r == 0).then_some(base);
        }
        if st.delta == 0 || st.delta > self.cap {
            return None;
        }
        Some(base + ((st.delta - 1) * (self.r_max + 1) + st.r) as usize)
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, st: &SystemState) -> usize {
        let base = self.pair_offset(st.s, st.w);
        if st.s == st.w {
            base
        } else {
            base + ((st.delta - 1) * (self.r_max + 1) + st.r) as usize
        }
    }

    pub fn regeneration_index(&self, z: usize) -> usize {
        self.pair_offset(z, z)
    }

    /// Indices of the mismatched states `(s, w, 1..=cap, r)` of one slice.
    pub fn slice_indices(&self, s: usize, w: usize, r: u32) -> impl Iterator<Item = usize> + '_ {
        debug_assert!(s != w);
        let base = self.pair_offset(s, w);
        let stride = (self.r_max + 1) as usize;
        (0..self.cap as usize).map(move |d| base + d * stride + r as usize)
    }
}

/// Enumerates the capped state space of `model`.
pub fn enumerate_states(model: &SystemModel, delta_cap: u32) -> Result<StateSpace> {
    StateSpace::new(model.n_states(), model.r_max(), delta_cap)
}

/// On-disk model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_states: usize,
    /// Row-major transition matrix.
    pub transition: Vec<Vec<f64>>,
    pub p_e: f64,
    pub c: f64,
    pub r_max: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub normalize: bool,
}

impl ModelFile {
    pub fn from_model(model: &SystemModel) -> Self {
        Self {
            n_states: model.n_states(),
            transition: model.chain.rows(),
            p_e: model.decoder.p_e,
            c: model.decoder.c,
            r_max: model.decoder.r_max,
            normalize: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("model file: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model file serializes")
    }

    /// Validates the definition and builds the model.
    ///
    /// Rows must sum to 1 within 1e-9 unless `normalize` is set, in which case
    /// every row is rescaled. Rows that pass are rescaled exactly to 1.
    pub fn into_model(self) -> Result<SystemModel> {
        if self.transition.len() != self.n_states {
            return Err(Error::InvalidInput(format!(
                "transition has {} rows, n_states = {}",
                self.transition.len(),
                self.n_states
            )));
        }
        let mut rows = self.transition;
        if !self.normalize {
            let issues = stochasticity_issues(&rows, FILE_ROW_TOL);
            if !issues.is_empty() {
                let msg: Vec<String> = issues.iter().map(ToString::to_string).collect();
                return Err(Error::InvalidInput(msg.join("; ")));
            }
        } else if let Some(i) = rows
            .iter()
            .position(|r| r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "row {} has negative or non-finite entries",
                i + 1
            )));
        }
        for row in rows.iter_mut() {
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::InvalidInput(
                    "row with zero mass cannot be normalized".into(),
                ));
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let chain = SourceChain::new(rows)?;
        let decoder = DecoderProfile::new(self.r_max, self.p_e, self.c)?;
        Ok(SystemModel::new(chain, decoder))
    }
}
