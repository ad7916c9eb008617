//! End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
//! if any criterion fails.

use std::time::{Duration, Instant};

use aoii_core::curve::{solve_family, CurveConfig, Family, FamilySolution};
use aoii_core::model::{
    generate_random_source, Action, DecoderProfile, SourceChain, SystemModel, SystemState,
};
use aoii_core::policy::{
    MultiThresholdPolicy, RandomizedMixturePolicy, SingleThresholdPolicy, StationaryPolicy,
    TabularPolicy, Threshold, ThresholdPolicy,
};
use aoii_core::renewal::{evaluate_policy, evaluate_policy_with_cap};
use aoii_core::sim::{self, SimulationConfig, Stationary};
use aoii_core::solver::{
    delta_cap_selection, oracle_lambda_bisection, rvi_plain, rvi_threshold, MixtureSolution,
    RviConfig, TruncatedMdp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const TABLE_TOL: u32 = 1;
const SINGLE_EXPECTED: u32 = 8;
const TABLE_RATE: f64 = 0.1;
const STRUCTURE_LAMBDA: f64 = 8.0;
const EQUIV_SLOTS: u64 = 10_000_000;
const EQUIV_SE: f64 = 3.0;
const EQUIV_REL: f64 = 0.01;
const CLOSED_FORM_TOL: f64 = 1e-10;
const MIXTURE_RATE_TOL: f64 = 1e-9;
const MIXTURE_SLOTS: u64 = 2_000_000;
const MIXTURE_SE: f64 = 3.0;
const DOMINANCE_TOL: f64 = 1e-9;
const ORACLE_GAP: f64 = 0.02;
const PADDING: [u32; 3] = [1, 5, 20];
const PADDING_TOL: f64 = 1e-10;
const CAP_GAIN_EPS: f64 = 1e-6;
const CAP_LAMBDAS: [f64; 3] = [1.0, 8.0, 32.0];
const MINUTE: Duration = Duration::from_secs(60);

/// `n(s, w)` at the first packet count, `None` on the diagonal.
const EXPECTED_TABLE: [[Option<u32>; 4]; 4] = [
    [None, Some(6), Some(9), Some(8)],
    [Some(7), None, Some(8), Some(6)],
    [Some(3), Some(3), None, Some(5)],
    [Some(7), Some(5), Some(8), None],
];

fn reference_model() -> SystemModel {
    let chain = SourceChain::new(vec![
        vec![0.52, 0.12, 0.18, 0.18],
        vec![0.17, 0.57, 0.17, 0.09],
        vec![0.03, 0.06, 0.72, 0.19],
        vec![0.16, 0.10, 0.18, 0.56],
    ])
    .unwrap();
    SystemModel::new(chain, DecoderProfile::reference())
}

fn random_model(n: usize, seed: u64) -> SystemModel {
    SystemModel::new(
        generate_random_source(n, seed).unwrap(),
        DecoderProfile::reference(),
    )
}

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

/// Everything the solvers produced, for the cross-cutting checks.
#[derive(Default)]
struct Produced {
    threshold: Vec<(SystemModel, ThresholdPolicy)>,
    tabular: Vec<TabularPolicy>,
    threshold_mixtures: Vec<(String, SystemModel, MixtureSolution)>,
    oracle_mixtures: Vec<(String, SystemModel, MixtureSolution<TabularPolicy>)>,
}

impl Produced {
    fn add_threshold(&mut self, label: String, model: &SystemModel, sol: MixtureSolution) {
        self.threshold
            .push((model.clone(), sol.policy.minus.clone()));
        self.threshold
            .push((model.clone(), sol.policy.plus.clone()));
        self.threshold_mixtures.push((label, model.clone(), sol));
    }

    fn add_oracle(
        &mut self,
        label: String,
        model: &SystemModel,
        sol: MixtureSolution<TabularPolicy>,
    ) {
        self.tabular.push(sol.policy.minus.clone());
        self.tabular.push(sol.policy.plus.clone());
        self.oracle_mixtures.push((label, model.clone(), sol));
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    if took > limit {
        out.passed = false;
        out.detail
            .push_str(&format!("; over the {:?} budget", limit));
    }
    (out, took)
}

fn threshold_solution(sol: FamilySolution) -> Option<(MixtureSolution, Option<u32>)> {
    match sol {
        FamilySolution::Threshold {
            solution,
            delta_cap,
        } => Some((solution, delta_cap)),
        _ => None,
    }
}

fn criterion_1(produced: &mut Produced) -> Outcome {
    let model = reference_model();
    let cfg = CurveConfig::default();
    let mut run = || -> aoii_core::Result<Outcome> {
        let (multi, _) =
            threshold_solution(solve_family(&model, Family::Multi, TABLE_RATE, &cfg)?).unwrap();
        let (single, _) =
            threshold_solution(solve_family(&model, Family::Single, TABLE_RATE, &cfg)?).unwrap();
        let ThresholdPolicy::Multi(plus) = &multi.policy.plus else {
            unreachable!()
        };
        let mut off = Vec::new();
        for (s, row) in EXPECTED_TABLE.iter().enumerate() {
            for (w, want) in row.iter().enumerate() {
                let Some(want) = want else { continue };
                let got = plus.threshold(s, w, 0);
                if got.finite().map_or(true, |g| g.abs_diff(*want) > TABLE_TOL) {
                    off.push(format!("({s},{w}) {} vs {want}", show(got)));
                }
            }
        }
        let singles: Vec<u32> = [&single.policy.minus, &single.policy.plus]
            .iter()
            .map(|p| match p {
                ThresholdPolicy::Single(s) => s.threshold.finite().unwrap_or(u32::MAX),
                ThresholdPolicy::Multi(_) => u32::MAX,
            })
            .collect();
        let single_ok = singles
            .iter()
            .all(|n| n.abs_diff(SINGLE_EXPECTED) <= TABLE_TOL);
        let detail = format!(
            "{} of 12 cells outside +/-{TABLE_TOL} [{}]; single thresholds {:?}; first-count slice of the plus component:\n{}",
            off.len(),
            off.join(", "),
            singles,
            plus.render_slice(0)
        );
        let passed = off.is_empty() && single_ok;
        produced.add_threshold("reference multi".into(), &model, multi);
        produced.add_threshold("reference single".into(), &model, single);
        Ok(Outcome::new(passed, detail))
    };
    run().unwrap_or_else(Outcome::error)
}

fn show(t: Threshold) -> String {
    t.finite().map_or("never".into(), |n| n.to_string())
}

fn criterion_2(produced: &mut Produced) -> Outcome {
    let model = reference_model();
    let rvi = RviConfig::default();
    let mut run = || -> aoii_core::Result<Outcome> {
        let sel = delta_cap_selection(&model, STRUCTURE_LAMBDA, CAP_GAIN_EPS, &rvi)?;
        let mdp = TruncatedMdp::new(&model, sel.delta_cap)?;
        let thr = rvi_threshold(&mdp, STRUCTURE_LAMBDA, &rvi)?;
        let plain = rvi_plain(&mdp, STRUCTURE_LAMBDA, &rvi)?;
        let policy = ThresholdPolicy::Multi(thr.thresholds.clone());
        let states = mdp.space().states();
        let disagree = states
            .iter()
            .filter(|st| policy.action(st).ok() != plain.policy.action(st).ok())
            .count();
        let non_monotone = plain.policy.non_monotone_slices().len();
        let converged = thr.converged && plain.converged;
        produced.threshold.push((model.clone(), policy));
        produced.tabular.push(plain.policy);
        Ok(Outcome::new(
            converged && disagree == 0 && non_monotone == 0 && thr.saturated.is_empty(),
            format!(
                "cap {}, {disagree} of {} states differ, {non_monotone} non-monotone slices, {} saturated slices",
                sel.delta_cap,
                states.len(),
                thr.saturated.len()
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

/// Sources and threshold policies shared by the equivalence and cap checks.
fn equivalence_instances() -> Vec<(usize, u64)> {
    (0..10u64)
        .map(|i| (if i < 5 { 4 } else { 8 }, 100 + i))
        .collect()
}

fn equivalence_policies(model: &SystemModel, seed: u64) -> Vec<ThresholdPolicy> {
    let n = model.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = (0..3).map(|_| {
        let table = MultiThresholdPolicy::from_fn(n, model.r_max(), |_, _, _| {
            Threshold::At(rng.gen_range(1..=12))
        });
        ThresholdPolicy::Multi(table.unwrap())
    });
    let mut out: Vec<ThresholdPolicy> = (&mut tables).collect();
    for k in [2, 6] {
        out.push(ThresholdPolicy::Single(
            SingleThresholdPolicy::new(k).unwrap(),
        ));
    }
    out
}

fn criterion_3(produced: &mut Produced) -> Outcome {
    let mut misses = Vec::new();
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut checked = 0;
    for (k, (n, seed)) in equivalence_instances().into_iter().enumerate() {
        let model = random_model(n, seed);
        for (j, policy) in equivalence_policies(&model, seed).into_iter().enumerate() {
            let ev = match evaluate_policy(&model, &policy) {
                Ok(ev) => ev,
                Err(e) => return Outcome::error(e),
            };
            let cfg = SimulationConfig::new(EQUIV_SLOTS, 1000 * seed + j as u64);
            let stats = match sim::run(&model, &Stationary(policy.clone()), &cfg) {
                Ok(s) => s,
                Err(e) => return Outcome::error(e),
            };
            for (name, est, exact) in [
                ("aoii", stats.mean_aoii, ev.avg_aoii),
                ("rate", stats.mean_rate, ev.avg_rate),
            ] {
                checked += 1;
                let z = (est.mean - exact).abs() / est.std_error;
                let rel = (est.mean - exact).abs() / exact.abs();
                worst_z = worst_z.max(z);
                worst_rel = worst_rel.max(rel);
                if !(z <= EQUIV_SE && rel <= EQUIV_REL) {
                    misses.push(format!(
                        "source {k} (N={n}) policy {j} {name}: {z:.2} SE, {:.3}% off",
                        100.0 * rel
                    ));
                }
            }
            produced.threshold.push((model.clone(), policy));
        }
    }
    Outcome::new(
        misses.is_empty(),
        format!(
            "{} of {checked} comparisons outside {EQUIV_SE} SE or {}%; largest {worst_z:.2} SE, {:.3}%{}",
            misses.len(),
            100.0 * EQUIV_REL,
            100.0 * worst_rel,
            if misses.is_empty() { String::new() } else { format!(" [{}]", misses.join("; ")) }
        ),
    )
}

/// Cycle length and cumulative AoII of the never-transmit symmetric pair by
/// first passage: a one-slot cycle, or a geometric excursion of length `k`
/// accruing `k (k + 1) / 2`.
fn first_passage(q: f64) -> (f64, f64) {
    let (mut len, mut cum, mut tail) = (1.0, 0.0, q);
    let mut k = 1.0;
    while tail > 1e-300 {
        let p = tail * q;
        len += p * k;
        cum += p * k * (k + 1.0) / 2.0;
        tail *= 1.0 - q;
        k += 1.0;
    }
    (len, cum)
}

fn criterion_4() -> Outcome {
    let never = ThresholdPolicy::Single(SingleThresholdPolicy::never());
    let mut worst: f64 = 0.0;
    for q in [0.1, 0.25, 0.5] {
        let chain = SourceChain::new(vec![vec![1.0 - q, q], vec![q, 1.0 - q]]).unwrap();
        let ev = match evaluate_policy(
            &SystemModel::new(chain, DecoderProfile::reference()),
            &never,
        ) {
            Ok(ev) => ev,
            Err(e) => return Outcome::error(e),
        };
        let (len, cum) = first_passage(q);
        for z in 0..2 {
            worst = worst.max((ev.cycle_stats.expected_length[z] - 2.0).abs());
            worst = worst.max((ev.cycle_stats.expected_length[z] - len).abs());
        }
        worst = worst.max((ev.avg_aoii - 1.0 / (2.0 * q)).abs());
        worst = worst.max((ev.avg_aoii - cum / len).abs());
    }
    Outcome::new(
        worst <= CLOSED_FORM_TOL,
        format!("largest deviation {worst:e}"),
    )
}

fn curve_points() -> Vec<f64> {
    (1..=10).map(|k| f64::from(5 * k) / 100.0).collect()
}

fn criterion_6(produced: &mut Produced) -> Outcome {
    let cfg = CurveConfig::default();
    let mut problems = Vec::new();
    let mut worst_gap: f64 = 0.0;
    let mut points = 0;
    for (n, seed) in [(4usize, 4u64), (8, 8), (16, 16)] {
        let model = random_model(n, seed);
        for target in curve_points() {
            let run = || -> aoii_core::Result<(MixtureSolution, u32, MixtureSolution, f64, MixtureSolution<TabularPolicy>)> {
                let (multi, cap) = threshold_solution(solve_family(&model, Family::Multi, target, &cfg)?).unwrap();
                let (single, _) = threshold_solution(solve_family(&model, Family::Single, target, &cfg)?).unwrap();
                let periodic = solve_family(&model, Family::Periodic, target, &cfg)?.avg_aoii();
                let cap = cap.unwrap();
                let oracle = oracle_lambda_bisection(&TruncatedMdp::new(&model, cap)?, target, &cfg.bisection)?;
                Ok((multi, cap, single, periodic, oracle))
            };
            let (multi, cap, single, periodic, oracle) = match run() {
                Ok(v) => v,
                Err(e) => return Outcome::error(format!("N={n}, R={target}: {e}")),
            };
            points += 1;
            let (a, b, o) = (
                multi.evaluation.avg_aoii,
                single.evaluation.avg_aoii,
                oracle.evaluation.avg_aoii,
            );
            if a > b * (1.0 + DOMINANCE_TOL) || b > periodic * (1.0 + DOMINANCE_TOL) {
                problems.push(format!("N={n} R={target}: order {a} / {b} / {periodic}"));
            }
            let gap = (a - o) / o;
            worst_gap = worst_gap.max(gap.abs());
            if gap.abs() > ORACLE_GAP {
                problems.push(format!(
                    "N={n} R={target}: gap {:.2}% at cap {cap}",
                    100.0 * gap
                ));
            }
            produced.add_threshold(format!("N={n} R={target} multi"), &model, multi);
            produced.add_threshold(format!("N={n} R={target} single"), &model, single);
            produced.add_oracle(format!("N={n} R={target} oracle"), &model, oracle);
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "{points} points, largest gap to the oracle {:.4}%{}",
            100.0 * worst_gap,
            if problems.is_empty() {
                String::new()
            } else {
                format!(" [{}]", problems.join("; "))
            }
        ),
    )
}

fn criterion_5(produced: &Produced, targets: &[(String, f64)]) -> Outcome {
    let mut problems = Vec::new();
    let mut mixed = 0;
    let target_of = |label: &str| targets.iter().find(|(l, _)| l == label).map(|(_, r)| *r);
    for (k, (label, model, sol)) in produced.threshold_mixtures.iter().enumerate() {
        let Some(target) = target_of(label) else {
            continue;
        };
        match mixture_check(
            label,
            model,
            &sol.policy,
            sol.trace.rho,
            sol.evaluation.avg_rate,
            target,
            500 + k as u64,
        ) {
            Ok(Some(mut p)) => {
                mixed += 1;
                problems.append(&mut p);
            }
            Ok(None) => {}
            Err(e) => return Outcome::error(format!("{label}: {e}")),
        }
    }
    for (k, (label, model, sol)) in produced.oracle_mixtures.iter().enumerate() {
        let Some(target) = target_of(label) else {
            continue;
        };
        match mixture_check(
            label,
            model,
            &sol.policy,
            sol.trace.rho,
            sol.evaluation.avg_rate,
            target,
            900 + k as u64,
        ) {
            Ok(Some(mut p)) => {
                mixed += 1;
                problems.append(&mut p);
            }
            Ok(None) => {}
            Err(e) => return Outcome::error(format!("{label}: {e}")),
        }
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "{mixed} randomized instances{}",
            if problems.is_empty() {
                String::new()
            } else {
                format!(" [{}]", problems.join("; "))
            }
        ),
    )
}

fn mixture_check<P: StationaryPolicy + Clone>(
    label: &str,
    model: &SystemModel,
    policy: &RandomizedMixturePolicy<P>,
    rho: f64,
    analytic_rate: f64,
    target: f64,
    seed: u64,
) -> aoii_core::Result<Option<Vec<String>>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Ok(None);
    }
    let mut problems = Vec::new();
    if (analytic_rate - target).abs() > MIXTURE_RATE_TOL {
        problems.push(format!(
            "{label}: analytic rate {analytic_rate} vs {target}"
        ));
    }
    let stats = sim::run(model, policy, &SimulationConfig::new(MIXTURE_SLOTS, seed))?;
    if !stats.mean_rate.covers(target, MIXTURE_SE) {
        let e = stats.mean_rate;
        problems.push(format!(
            "{label}: simulated rate {} +/- {} vs {target}",
            e.mean, e.std_error
        ));
    }
    match stats.minus_fraction() {
        Some(f) if f.covers(rho, MIXTURE_SE) => {}
        Some(f) => problems.push(format!(
            "{label}: minus-cycle fraction {} +/- {} vs {rho}",
            f.mean, f.std_error
        )),
        None => problems.push(format!("{label}: no complete cycles")),
    }
    Ok(Some(problems))
}

fn criterion_7(produced: &Produced) -> Outcome {
    let mut transmit_at_zero = 0;
    let mut below_one = 0;
    for (model, policy) in &produced.threshold {
        for z in 0..model.n_states() {
            transmit_at_zero += usize::from(
                policy.action(&SystemState::regeneration(z)).ok() != Some(Action::Wait),
            );
        }
        let table: Vec<Threshold> = match policy {
            ThresholdPolicy::Multi(m) => m.table().to_vec(),
            ThresholdPolicy::Single(s) => vec![s.threshold],
        };
        below_one += table
            .iter()
            .filter(|t| t.finite().is_some_and(|n| n < 1))
            .count();
    }
    for policy in &produced.tabular {
        for z in 0..policy.space().n_states() {
            transmit_at_zero += usize::from(
                policy.action(&SystemState::regeneration(z)).ok() != Some(Action::Wait),
            );
        }
    }
    Outcome::new(
        transmit_at_zero == 0 && below_one == 0,
        format!(
            "{} threshold and {} tabular policies; {transmit_at_zero} zero-AoII transmissions, {below_one} thresholds below 1",
            produced.threshold.len(),
            produced.tabular.len()
        ),
    )
}

fn criterion_8(produced: &Produced) -> Outcome {
    let mut worst: f64 = 0.0;
    for (model, policy) in &produced.threshold {
        let base = match evaluate_policy(model, policy) {
            Ok(ev) => ev,
            Err(e) => return Outcome::error(e),
        };
        for pad in PADDING {
            match evaluate_policy_with_cap(model, policy, policy.truncation_cap() + pad) {
                Ok(ev) => {
                    worst = worst
                        .max((ev.avg_aoii - base.avg_aoii).abs())
                        .max((ev.avg_rate - base.avg_rate).abs())
                }
                Err(e) => return Outcome::error(e),
            }
        }
    }
    Outcome::new(
        worst <= PADDING_TOL,
        format!(
            "{} policies, largest change {worst:e}",
            produced.threshold.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let rvi = RviConfig::default();
    let mut problems = Vec::new();
    let mut worst: f64 = 0.0;
    let mut caps = Vec::new();
    let mut never_slices = 0;
    for (n, seed) in equivalence_instances().into_iter().filter(|(n, _)| *n == 4) {
        let model = random_model(n, seed);
        for lambda in CAP_LAMBDAS {
            let run = || -> aoii_core::Result<(u32, f64, bool, usize)> {
                let sel = delta_cap_selection(&model, lambda, CAP_GAIN_EPS, &rvi)?;
                let wider =
                    rvi_threshold(&TruncatedMdp::new(&model, 2 * sel.delta_cap)?, lambda, &rvi)?;
                let change =
                    (wider.gain - sel.solution.gain).abs() / sel.solution.gain.abs().max(1.0);
                // slices that wait up to the cap compare as never transmitting
                let same = wider.limit_thresholds() == sel.solution.limit_thresholds();
                Ok((sel.delta_cap, change, same, sel.solution.saturated.len()))
            };
            match run() {
                Ok((cap, change, same, never)) => {
                    caps.push(cap);
                    never_slices += never;
                    worst = worst.max(change);
                    if change >= CAP_GAIN_EPS || !same {
                        problems.push(format!("source {seed} lambda {lambda}: gain change {change:e}, thresholds equal {same}"));
                    }
                }
                Err(e) => return Outcome::error(format!("source {seed} lambda {lambda}: {e}")),
            }
        }
    }
    caps.sort_unstable();
    caps.dedup();
    Outcome::new(
        problems.is_empty(),
        format!(
            "selected caps {caps:?}, largest relative gain change {worst:e}, {never_slices} never-switching slices{}",
            if problems.is_empty() { String::new() } else { format!(" [{}]", problems.join("; ")) }
        ),
    )
}

fn main() {
    let mut produced = Produced::default();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut record = |id: u32, name: &'static str, (out, took): (Outcome, Duration)| {
        let status = if out.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} ({name}): {status} in {:.1} s: {}",
            took.as_secs_f64(),
            out.detail
        );
        results.push((id, name, out, took));
    };
    record(
        1,
        "threshold table at R = 0.1",
        timed(MINUTE, || criterion_1(&mut produced)),
    );
    record(
        2,
        "threshold structure at lambda = 8",
        timed(MINUTE, || criterion_2(&mut produced)),
    );
    record(
        3,
        "analyzer vs simulator",
        timed(10 * MINUTE, || criterion_3(&mut produced)),
    );
    record(4, "never-transmit closed forms", timed(MINUTE, criterion_4));
    let (c6, c6_time) = timed(30 * MINUTE, || criterion_6(&mut produced));
    let targets: Vec<(String, f64)> = produced
        .threshold_mixtures
        .iter()
        .map(|(l, _, _)| l.clone())
        .chain(produced.oracle_mixtures.iter().map(|(l, _, _)| l.clone()))
        .map(|l| {
            let r = l
                .split(' ')
                .find_map(|t| t.strip_prefix("R="))
                .map_or(TABLE_RATE, |r| r.parse().unwrap());
            (l, r)
        })
        .collect();
    record(
        5,
        "mixture rate constraint",
        timed(10 * MINUTE, || criterion_5(&produced, &targets)),
    );
    record(6, "dominance and oracle gap", (c6, c6_time));
    record(
        7,
        "no transmission at zero AoII",
        timed(MINUTE, || criterion_7(&produced)),
    );
    record(
        8,
        "truncation padding",
        timed(10 * MINUTE, || criterion_8(&produced)),
    );
    record(9, "cap stability", timed(10 * MINUTE, criterion_9));

    let failed: Vec<u32> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
