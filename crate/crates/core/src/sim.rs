//! Monte-Carlo simulation of the slotted source / HARQ / feedback loop.
//!
//! Every replication owns a ChaCha8 stream seeded with `seed` on stream
//! `seed ^ replication`, so results are reproducible and independent of how
//! replications are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Action, SystemModel, SystemState};
use crate::policy::{Component, PeriodicPolicy, RandomizedMixturePolicy, StationaryPolicy};

/// Smallest number of batches allowed for batch-means standard errors.
pub const MIN_BATCHES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub replications: u32,
    pub initial: SystemState,
    pub batches: usize,
    /// Keep one record per completed regeneration cycle.
    pub record_cycles: bool,
    /// Export the first this-many slots of replication 0.
    pub trajectory_slots: u64,
}

impl SimulationConfig {
    /// Burn-in of 1% of the horizon, one replication, 40 batches, start at `(0, 0, 0, 0)`.
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            burn_in: horizon / 100,
            seed,
            replications: 1,
            initial: SystemState::regeneration(0),
            batches: 40,
            record_cycles: true,
            trajectory_slots: 0,
        }
    }

    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        if self.horizon <= self.burn_in {
            return Err(Error::InvalidInput(format!(
                "horizon {} must exceed burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput(
                "at least one replication is required".into(),
            ));
        }
        if self.batches < MIN_BATCHES {
            return Err(Error::InvalidInput(format!(
                "at least {MIN_BATCHES} batches are required"
            )));
        }
        if self.horizon - self.burn_in < self.batches as u64 {
            return Err(Error::InvalidInput(format!(
                "{} measured slots cannot fill {} batches",
                self.horizon - self.burn_in,
                self.batches
            )));
        }
        self.initial.validate(model.n_states(), model.r_max())
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// Whether `value` lies within `k` standard errors of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleRecord {
    pub length: u64,
    pub cum_aoii: u64,
    pub transmissions: u64,
    /// Source value at the regeneration that opened the cycle.
    pub start: usize,
    /// Mixture component driving the cycle, if the controller is a mixture.
    pub component: Option<Component>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryRow {
    pub t: u64,
    pub state: SystemState,
    pub action: Action,
    pub cycle_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationStats {
    pub replication: u32,
    pub mean_aoii: Estimate,
    pub mean_rate: Estimate,
    pub cycles: u64,
    pub minus_cycles: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub mean_aoii: Estimate,
    pub mean_rate: Estimate,
    /// Completed cycles that started after burn-in, over all replications.
    pub n_cycles: u64,
    pub minus_cycles: u64,
    /// Cycles violating `J = (L^2 - L) / 2`.
    pub identity_violations: u64,
    /// Slots where the state's AoII disagrees with the recursion recomputed from `(s, w)`.
    pub recursion_violations: u64,
    pub cycles: Vec<CycleRecord>,
    pub replications: Vec<ReplicationStats>,
    pub trajectory: Vec<TrajectoryRow>,
    pub warnings: Vec<String>,
}

impl TrajectoryStats {
    /// Fraction of cycles run under the minus component, with its binomial standard error.
    pub fn minus_fraction(&self) -> Option<Estimate> {
        if self.n_cycles == 0 {
            return None;
        }
        let f = self.minus_cycles as f64 / self.n_cycles as f64;
        Some(Estimate {
            mean: f,
            std_error: (f * (1.0 - f) / self.n_cycles as f64).sqrt(),
        })
    }
}

/// Decides actions slot by slot during a simulation.
pub trait Controller: Clone + Send + Sync {
    /// Restores the initial internal state.
    fn reset(&mut self) {}

    /// Called on every slot spent in the regeneration set, before `action`.
    fn regenerate(
        &mut self,
        _state: &SystemState,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Option<Component>> {
        Ok(None)
    }

    fn action(&mut self, state: &SystemState) -> Result<Action>;
}

/// Adapts any stationary policy.
#[derive(Debug, Clone)]
pub struct Stationary<P>(pub P);

impl<P: StationaryPolicy + Clone> Controller for Stationary<P> {
    #[inline]
    fn action(&mut self, state: &SystemState) -> Result<Action> {
        self.0.action(state)
    }
}

impl<P: StationaryPolicy + Clone> Controller for RandomizedMixturePolicy<P> {
    fn reset(&mut self) {
        *self = RandomizedMixturePolicy::new(self.minus.clone(), self.plus.clone(), self.rho())
            .expect("rho was validated at construction");
    }

    fn regenerate(
        &mut self,
        state: &SystemState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Component>> {
        let draw: f64 = rng.gen();
        self.resample(state, draw).map(Some)
    }

    #[inline]
    fn action(&mut self, state: &SystemState) -> Result<Action> {
        RandomizedMixturePolicy::action(self, state)
    }
}

impl Controller for PeriodicPolicy {
    fn reset(&mut self) {
        PeriodicPolicy::reset(self);
    }

    #[inline]
    fn action(&mut self, _state: &SystemState) -> Result<Action> {
        Ok(self.next_action())
    }
}

/// Samples one successor by inverse-CDF over the kernel's merged distribution.
pub fn step(
    model: &SystemModel,
    state: &SystemState,
    action: Action,
    rng: &mut impl Rng,
) -> Result<SystemState> {
    let dist = model.transition_distribution(state, action)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (next, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(*next);
        }
    }
    Ok(dist.last().expect("kernel has at least one successor").0)
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    s: u32,
    w: u32,
    r: u32,
    reset: bool,
    cdf: f64,
}

/// The kernel depends on AoII only through `delta + 1`, so successors are
/// tabulated per `(s, w, r, action)` with a reset flag.
#[derive(Debug, Clone)]
pub struct KernelSampler {
    n: usize,
    r_levels: usize,
    offsets: Vec<usize>,
    branches: Vec<Branch>,
}

impl KernelSampler {
    pub fn new(model: &SystemModel) -> Self {
        let n = model.n_states();
        let r_levels = model.r_max() as usize + 1;
        let mut offsets = Vec::with_capacity(n * n * r_levels * 2 + 1);
        let mut branches = Vec::new();
        for s in 0..n {
            for w in 0..n {
                for r in 0..r_levels as u32 {
                    for action in [Action::Wait, Action::Transmit] {
                        offsets.push(branches.len());
                        let rep = if s == w {
                            SystemState::regeneration(s)
                        } else {
                            SystemState::new(s, w, 1, r)
                        };
                        if s == w && r > 0 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for (next, p) in model.merged_successors(&rep, action, None) {
                            acc += p;
                            branches.push(Branch {
                                s: next.s as u32,
                                w: next.w as u32,
                                r: next.r,
                                reset: next.delta == 0,
                                cdf: acc,
                            });
                        }
                    }
                }
            }
        }
        offsets.push(branches.len());
        Self {
            n,
            r_levels,
            offsets,
            branches,
        }
    }

    #[inline]
    pub fn sample(&self, state: &SystemState, action: Action, u: f64) -> SystemState {
        let key =
            ((state.s * self.n + state.w) * self.r_levels + state.r as usize) * 2 + action as usize;
        let row = &self.branches[self.offsets[key]..self.offsets[key + 1]];
        let b = row
            .iter()
            .find(|b| u < b.cdf)
            .unwrap_or(&row[row.len() - 1]);
        SystemState {
            s: b.s as usize,
            w: b.w as usize,
            delta: if b.reset { 0 } else { state.delta + 1 },
            r: b.r,
        }
    }
}

struct Replication {
    stats: ReplicationStats,
    cycles: Vec<CycleRecord>,
    identity_violations: u64,
    recursion_violations: u64,
    trajectory: Vec<TrajectoryRow>,
}

fn batch_estimate(sums: &[f64], sizes: &[u64]) -> Estimate {
    let total: f64 = sums.iter().sum();
    let count: u64 = sizes.iter().sum();
    let mean = total / count as f64;
    let b = sums.len() as f64;
    let means: Vec<f64> = sums.iter().zip(sizes).map(|(s, &n)| s / n as f64).collect();
    let avg = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (b - 1.0);
    Estimate {
        mean,
        std_error: (var / b).sqrt(),
    }
}

fn replicate<C: Controller>(
    sampler: &KernelSampler,
    template: &C,
    cfg: &SimulationConfig,
    replication: u32,
) -> Result<Replication> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.seed ^ u64::from(replication));
    let mut controller = template.clone();
    controller.reset();

    let measured = cfg.horizon - cfg.burn_in;
    let batch_len = measured / cfg.batches as u64;
    let mut aoii_sums = vec![0.0; cfg.batches];
    let mut rate_sums = vec![0.0; cfg.batches];
    let mut sizes = vec![0u64; cfg.batches];

    let mut cycles = Vec::new();
    let (mut n_cycles, mut minus_cycles, mut identity_violations, mut recursion_violations) =
        (0u64, 0u64, 0u64, 0u64);
    let mut trajectory = Vec::new();
    let trajectory_slots = if replication == 0 {
        cfg.trajectory_slots
    } else {
        0
    };

    // open cycle: (start slot, start source, component, L, J, C)
    let mut open: Option<(u64, usize, Option<Component>, u64, u64, u64)> = None;
    let mut cycle_id = 0u64;
    let mut state = cfg.initial;
    let mut expected_delta = state.delta;

    for t in 0..cfg.horizon {
        if state.is_regeneration() {
            if let Some((start, z, comp, l, j, c)) = open.take() {
                if start >= cfg.burn_in {
                    n_cycles += 1;
                    if comp == Some(Component::Minus) {
                        minus_cycles += 1;
                    }
                    if 2 * j != l * l - l {
                        identity_violations += 1;
                    }
                    if cfg.record_cycles {
                        cycles.push(CycleRecord {
                            length: l,
                            cum_aoii: j,
                            transmissions: c,
                            start: z,
                            component: comp,
                        });
                    }
                }
                cycle_id += 1;
            }
            let comp = controller.regenerate(&state, &mut rng)?;
            open = Some((t, state.s, comp, 0, 0, 0));
        }
        if state.delta != expected_delta {
            recursion_violations += 1;
        }
        let action = controller.action(&state)?;
        let y = action as u64;
        if let Some(cyc) = open.as_mut() {
            cyc.3 += 1;
            cyc.4 += u64::from(state.delta);
            cyc.5 += y;
        }
        if t >= cfg.burn_in {
            let k = (((t - cfg.burn_in) / batch_len) as usize).min(cfg.batches - 1);
            aoii_sums[k] += f64::from(state.delta);
            rate_sums[k] += y as f64;
            sizes[k] += 1;
        }
        if t < trajectory_slots {
            trajectory.push(TrajectoryRow {
                t,
                state,
                action,
                cycle_id,
            });
        }
        let u: f64 = rng.gen();
        let next = sampler.sample(&state, action, u);
        // recursion recomputed from the (s, w) trace alone
        expected_delta = if next.s == next.w {
            0
        } else {
            expected_delta + 1
        };
        state = next;
    }

    Ok(Replication {
        stats: ReplicationStats {
            replication,
            mean_aoii: batch_estimate(&aoii_sums, &sizes),
            mean_rate: batch_estimate(&rate_sums, &sizes),
            cycles: n_cycles,
            minus_cycles,
        },
        cycles,
        identity_violations,
        recursion_violations,
        trajectory,
    })
}

/// Simulates `controller` for every replication and pools the results.
pub fn run<C: Controller>(
    model: &SystemModel,
    controller: &C,
    cfg: &SimulationConfig,
) -> Result<TrajectoryStats> {
    cfg.validate(model)?;
    let sampler = KernelSampler::new(model);
    let reps: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| replicate(&sampler, controller, cfg, i))
        .collect::<Result<_>>()?;

    let k = reps.len() as f64;
    let pool = |f: fn(&ReplicationStats) -> Estimate| {
        let mean = reps.iter().map(|r| f(&r.stats).mean).sum::<f64>() / k;
        let var = reps
            .iter()
            .map(|r| f(&r.stats).std_error.powi(2))
            .sum::<f64>();
        Estimate {
            mean,
            std_error: var.sqrt() / k,
        }
    };
    let mean_aoii = pool(|s| s.mean_aoii);
    let mean_rate = pool(|s| s.mean_rate);

    let mut stats = TrajectoryStats {
        mean_aoii,
        mean_rate,
        n_cycles: 0,
        minus_cycles: 0,
        identity_violations: 0,
        recursion_violations: 0,
        cycles: Vec::new(),
        replications: Vec::with_capacity(reps.len()),
        trajectory: Vec::new(),
        warnings: Vec::new(),
    };
    for rep in reps {
        stats.n_cycles += rep.stats.cycles;
        stats.minus_cycles += rep.stats.minus_cycles;
        stats.identity_violations += rep.identity_violations;
        stats.recursion_violations += rep.recursion_violations;
        stats.cycles.extend(rep.cycles);
        if rep.stats.replication == 0 {
            stats.trajectory = rep.trajectory;
        }
        if rep.stats.cycles < 30 {
            stats.warnings.push(format!(
                "replication {} completed only {} regeneration cycles",
                rep.stats.replication, rep.stats.cycles
            ));
        }
        stats.replications.push(rep.stats);
    }
    for w in &stats.warnings {
        log::warn!("{w}");
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DecoderProfile, SourceChain};
    use crate::policy::{SingleThresholdPolicy, ThresholdPolicy};

    fn symmetric(q: f64) -> SystemModel {
        let chain = SourceChain::new(vec![vec![1.0 - q, q], vec![q, 1.0 - q]]).unwrap();
        SystemModel::new(chain, DecoderProfile::reference())
    }

    #[test]
    fn sampler_matches_kernel_support() {
        let chain = SourceChain::new(vec![
            vec![0.52, 0.12, 0.18, 0.18],
            vec![0.17, 0.57, 0.17, 0.09],
            vec![0.03, 0.06, 0.72, 0.19],
            vec![0.16, 0.10, 0.18, 0.56],
        ])
        .unwrap();
        let model = SystemModel::new(chain, DecoderProfile::reference());
        let sampler = KernelSampler::new(&model);
        let st = SystemState::new(0, 1, 3, 0);
        let dist = model
            .transition_distribution(&st, Action::Transmit)
            .unwrap();
        let mut acc = 0.0;
        for (next, p) in &dist {
            // a draw inside each probability slab lands on that successor
            assert_eq!(sampler.sample(&st, Action::Transmit, acc + 0.5 * p), *next);
            acc += p;
        }
        assert_eq!(
            sampler.sample(&st, Action::Transmit, 1.0 - 1e-17),
            dist.last().unwrap().0
        );
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = symmetric(0.25);
        let mut cfg = SimulationConfig::new(5_000, 11);
        cfg.trajectory_slots = 5_000;
        let policy = Stationary(ThresholdPolicy::Single(
            SingleThresholdPolicy::new(2).unwrap(),
        ));
        let a = run(&model, &policy, &cfg).unwrap();
        let b = run(&model, &policy, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        assert_ne!(run(&model, &policy, &cfg).unwrap().trajectory, a.trajectory);
        assert_eq!(a.identity_violations, 0);
        assert_eq!(a.recursion_violations, 0);
    }

    #[test]
    fn periodic_rate_is_exact_up_to_the_boundary() {
        let model = symmetric(0.25);
        let cfg = SimulationConfig::new(100_000, 3);
        for p in [1u64, 3, 7, 10] {
            let stats = run(&model, &PeriodicPolicy::new(p).unwrap(), &cfg).unwrap();
            let measured = (cfg.horizon - cfg.burn_in) as f64;
            assert!((stats.mean_rate.mean - 1.0 / p as f64).abs() <= p as f64 / measured);
        }
    }

    #[test]
    fn short_runs_are_flagged_and_bad_configs_rejected() {
        // once the source leaves 0 it rarely comes back, so cycles are long
        let chain = SourceChain::new(vec![vec![0.5, 0.5], vec![0.01, 0.99]]).unwrap();
        let model = SystemModel::new(chain, DecoderProfile::reference());
        let policy = Stationary(ThresholdPolicy::Single(SingleThresholdPolicy::never()));
        let stats = run(&model, &policy, &SimulationConfig::new(200, 1)).unwrap();
        assert!(!stats.warnings.is_empty());
        let mut cfg = SimulationConfig::new(100, 1);
        cfg.burn_in = 100;
        assert!(run(&model, &policy, &cfg).is_err());
        cfg = SimulationConfig::new(1000, 1);
        cfg.batches = 10;
        assert!(run(&model, &policy, &cfg).is_err());
        cfg = SimulationConfig::new(1000, 1);
        cfg.initial = SystemState::new(0, 0, 2, 0);
        assert!(run(&model, &policy, &cfg).is_err());
    }
}
