use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aoii_core::curve::{estimate_curve, solve_family, Family, FamilySolution};
use aoii_core::model::{generate_random_source, DecoderProfile, ModelFile, SystemModel};
use aoii_core::policy::{
    evaluate_periodic, PolicyFile, RandomizedMixturePolicy, TabularPolicy, ThresholdPolicy,
};
use aoii_core::renewal::{evaluate_mixture_stats, evaluate_policy, PolicyEvaluation};
use aoii_core::sim::{self, Stationary, TrajectoryStats};
use aoii_core::solver::{BisectionTrace, MixtureSolution};
use clap::Args;

use crate::output::{self, num, SchemaCsv};
use crate::{read_input, write_file, CliError, Common};

pub fn load_model(path: &Path) -> Result<SystemModel, CliError> {
    Ok(ModelFile::parse(&read_input(path)?)?.into_model()?)
}

fn load_policy(path: &Path) -> Result<PolicyFile, CliError> {
    Ok(PolicyFile::from_json(&read_input(path)?)?)
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Target long-run transmission rate.
    #[arg(long)]
    pub rate: f64,
    /// multi | single | periodic | optimal-oracle
    #[arg(long, default_value = "multi")]
    pub family: Family,
}

pub const TRACE_SCHEMA: &str = "aoii-trace v1";
pub const TRACE_COLUMNS: [&str; 6] = ["iteration", "parameter", "gain", "rate", "lower", "upper"];

fn write_trace(path: &Path, trace: &BisectionTrace) -> Result<(), CliError> {
    let mut out = SchemaCsv::create(path, TRACE_SCHEMA, &TRACE_COLUMNS)?;
    for s in &trace.steps {
        out.row([
            s.iteration.to_string(),
            num(s.parameter),
            output::opt_num(s.gain),
            num(s.rate),
            num(s.lower),
            num(s.upper),
        ])?;
    }
    out.finish()
}

fn render_threshold_policy(text: &mut String, policy: &ThresholdPolicy) {
    match policy {
        ThresholdPolicy::Single(p) => {
            let _ = writeln!(text, "  single threshold: {}", p.threshold);
        }
        ThresholdPolicy::Multi(p) => {
            for r in 0..=p.r_max() {
                let _ = writeln!(
                    text,
                    "  r = {r} (rows: source value, columns: receiver value)"
                );
                for line in p.render_slice(r).lines() {
                    let _ = writeln!(text, "  {line}");
                }
            }
        }
    }
}

fn mixture_report(
    family: Family,
    target: f64,
    ev: &PolicyEvaluation,
    trace: &BisectionTrace,
    policy: &RandomizedMixturePolicy,
    cap: Option<u32>,
) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "family: {family}");
    let _ = writeln!(t, "target rate: {}", num(target));
    let _ = writeln!(t, "average AoII: {}", num(ev.avg_aoii));
    let _ = writeln!(t, "average rate: {}", num(ev.avg_rate));
    let _ = writeln!(
        t,
        "rho: {} (rate-ratio estimate {})",
        num(trace.rho),
        num(trace.rho_formula)
    );
    if let Some(cap) = cap {
        let _ = writeln!(t, "AoII cap: {cap}");
    }
    let param = if family == Family::Single {
        "n"
    } else {
        "lambda"
    };
    let _ = writeln!(
        t,
        "\nminus component ({param} = {}, rate {}):",
        num(trace.lower),
        num(trace.rate_minus)
    );
    render_threshold_policy(&mut t, &policy.minus);
    let _ = writeln!(
        t,
        "\nplus component ({param} = {}, rate {}):",
        num(trace.upper),
        num(trace.rate_plus)
    );
    render_threshold_policy(&mut t, &policy.plus);
    for w in &trace.warnings {
        let _ = writeln!(t, "warning: {w}");
    }
    t
}

fn oracle_as_thresholds(sol: &MixtureSolution<TabularPolicy>) -> Option<RandomizedMixturePolicy> {
    let minus = sol.policy.minus.as_thresholds()?;
    let plus = sol.policy.plus.as_thresholds()?;
    RandomizedMixturePolicy::new(minus.into(), plus.into(), sol.trace.rho).ok()
}

pub fn solve(a: &SolveArgs) -> Result<(), CliError> {
    let cfg = a.common.config()?;
    let model = load_model(&a.model)?;
    let sol = solve_family(&model, a.family, a.rate, &cfg.curve(false))?;
    let out = a.common.out_dir()?;
    let report = match &sol {
        FamilySolution::Threshold {
            solution,
            delta_cap,
        } => {
            write_file(
                &out.join("policy.json"),
                &PolicyFile::from(&solution.policy).to_json(),
            )?;
            write_trace(&out.join("trace.csv"), &solution.trace)?;
            mixture_report(
                a.family,
                a.rate,
                &solution.evaluation,
                &solution.trace,
                &solution.policy,
                *delta_cap,
            )
        }
        FamilySolution::Oracle {
            solution,
            delta_cap,
        } => {
            write_trace(&out.join("trace.csv"), &solution.trace)?;
            match oracle_as_thresholds(solution) {
                Some(policy) => {
                    write_file(
                        &out.join("policy.json"),
                        &PolicyFile::from(&policy).to_json(),
                    )?;
                    mixture_report(
                        a.family,
                        a.rate,
                        &solution.evaluation,
                        &solution.trace,
                        &policy,
                        Some(*delta_cap),
                    )
                }
                None => {
                    let mut t = format!(
                        "family: {}\ntarget rate: {}\naverage AoII: {}\naverage rate: {}\nrho: {}\n",
                        a.family,
                        num(a.rate),
                        num(solution.evaluation.avg_aoii),
                        num(solution.evaluation.avg_rate),
                        num(solution.trace.rho)
                    );
                    t.push_str("components are not threshold policies; no policy file written\n");
                    t
                }
            }
        }
        FamilySolution::Periodic {
            policy,
            avg_aoii,
            avg_rate,
        } => {
            write_file(
                &out.join("policy.json"),
                &PolicyFile::from(policy).to_json(),
            )?;
            format!(
                "family: periodic\ntarget rate: {}\nperiod: {}\naverage AoII: {}\naverage rate: {}\n",
                num(a.rate),
                policy.period(),
                num(*avg_aoii),
                num(*avg_rate)
            )
        }
    };
    write_file(&out.join("thresholds.txt"), &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Policy file (JSON) written by `solve`.
    #[arg(long)]
    pub policy: PathBuf,
    /// Target rate recorded alongside the results.
    #[arg(long)]
    pub rate: Option<f64>,
}

pub const EVALUATION_SCHEMA: &str = "aoii-evaluation v1";

struct EvalRow {
    id: &'static str,
    rho: f64,
    avg_aoii: f64,
    avg_rate: f64,
    per_z: Option<PolicyEvaluation>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    a.common.config()?;
    let model = load_model(&a.model)?;
    let file = load_policy(&a.policy)?;
    let n = model.n_states();
    let rows = match &file {
        PolicyFile::Multi { .. } | PolicyFile::Single { .. } => {
            let ev = evaluate_policy(&model, &file.to_threshold()?)?;
            vec![EvalRow {
                id: "policy",
                rho: 1.0,
                avg_aoii: ev.avg_aoii,
                avg_rate: ev.avg_rate,
                per_z: Some(ev),
            }]
        }
        PolicyFile::Mixture { .. } => {
            let mix = file.to_mixture()?;
            let minus = evaluate_policy(&model, &mix.minus)?;
            let plus = evaluate_policy(&model, &mix.plus)?;
            let both = evaluate_mixture_stats(&minus.cycle_stats, &plus.cycle_stats, mix.rho())?;
            [
                ("minus", 1.0, minus),
                ("plus", 0.0, plus),
                ("mixture", mix.rho(), both),
            ]
            .into_iter()
            .map(|(id, rho, ev)| EvalRow {
                id,
                rho,
                avg_aoii: ev.avg_aoii,
                avg_rate: ev.avg_rate,
                per_z: Some(ev),
            })
            .collect()
        }
        PolicyFile::Periodic { .. } => {
            let ev = evaluate_periodic(&model, &file.to_periodic()?)?;
            vec![EvalRow {
                id: "periodic",
                rho: 1.0,
                avg_aoii: ev.avg_aoii,
                avg_rate: ev.avg_rate,
                per_z: None,
            }]
        }
    };

    let mut columns: Vec<String> = ["policy_id", "target_rate", "rho", "avg_aoii", "avg_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for q in ["E_L", "E_J", "E_C"] {
        columns.extend((0..n).map(|z| format!("{q}_{z}")));
    }
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let out = a.common.out_dir()?;
    let mut csv = SchemaCsv::create(&out.join("evaluation.csv"), EVALUATION_SCHEMA, &cols)?;
    for row in &rows {
        let mut fields = vec![
            row.id.to_string(),
            output::opt_num(a.rate),
            num(row.rho),
            num(row.avg_aoii),
            num(row.avg_rate),
        ];
        match &row.per_z {
            Some(ev) => {
                let st = &ev.cycle_stats;
                for v in [
                    &st.expected_length,
                    &st.expected_cum_aoii,
                    &st.expected_transmissions,
                ] {
                    fields.extend(v.iter().map(|x| num(*x)));
                }
            }
            None => fields.extend(std::iter::repeat(String::new()).take(3 * n)),
        }
        csv.row(&fields)?;
        println!(
            "{}: average AoII {}, average rate {}",
            row.id,
            num(row.avg_aoii),
            num(row.avg_rate)
        );
    }
    csv.finish()
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// Slots per replication, burn-in included.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub replications: Option<u32>,
    /// Export the first this-many slots of replication 0.
    #[arg(long, default_value_t = 0)]
    pub trajectory: u64,
}

pub const SIMULATION_SCHEMA: &str = "aoii-simulation v1";
pub const SIMULATION_COLUMNS: [&str; 7] = [
    "replication",
    "mean_aoii",
    "aoii_se",
    "mean_rate",
    "rate_se",
    "cycles",
    "minus_cycles",
];
pub const TRAJECTORY_SCHEMA: &str = "aoii-trajectory v1";
pub const TRAJECTORY_COLUMNS: [&str; 7] = ["t", "s", "w", "delta", "r", "action", "cycle_id"];

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = a.common.config()?;
    if let Some(r) = a.replications {
        cfg.simulation.replications = r;
    }
    let model = load_model(&a.model)?;
    let file = load_policy(&a.policy)?;
    let mut sim_cfg = cfg.simulation(a.horizon.unwrap_or(cfg.simulation.horizon));
    sim_cfg.trajectory_slots = a.trajectory;
    sim_cfg.record_cycles = false;
    let stats: TrajectoryStats = match &file {
        PolicyFile::Multi { .. } | PolicyFile::Single { .. } => {
            sim::run(&model, &Stationary(file.to_threshold()?), &sim_cfg)?
        }
        PolicyFile::Mixture { .. } => sim::run(&model, &file.to_mixture()?, &sim_cfg)?,
        PolicyFile::Periodic { .. } => sim::run(&model, &file.to_periodic()?, &sim_cfg)?,
    };
    let out = a.common.out_dir()?;
    let mut csv = SchemaCsv::create(
        &out.join("simulation.csv"),
        SIMULATION_SCHEMA,
        &SIMULATION_COLUMNS,
    )?;
    for r in &stats.replications {
        csv.row([
            r.replication.to_string(),
            num(r.mean_aoii.mean),
            num(r.mean_aoii.std_error),
            num(r.mean_rate.mean),
            num(r.mean_rate.std_error),
            r.cycles.to_string(),
            r.minus_cycles.to_string(),
        ])?;
    }
    csv.row([
        "all".to_string(),
        num(stats.mean_aoii.mean),
        num(stats.mean_aoii.std_error),
        num(stats.mean_rate.mean),
        num(stats.mean_rate.std_error),
        stats.n_cycles.to_string(),
        stats.minus_cycles.to_string(),
    ])?;
    csv.finish()?;
    if a.trajectory > 0 {
        let mut tr = SchemaCsv::create(
            &out.join("trajectory.csv"),
            TRAJECTORY_SCHEMA,
            &TRAJECTORY_COLUMNS,
        )?;
        for row in &stats.trajectory {
            tr.row([
                row.t.to_string(),
                row.state.s.to_string(),
                row.state.w.to_string(),
                row.state.delta.to_string(),
                row.state.r.to_string(),
                (row.action as u8).to_string(),
                row.cycle_id.to_string(),
            ])?;
        }
        tr.finish()?;
    }
    println!(
        "average AoII {} (se {}), average rate {} (se {}), {} cycles",
        num(stats.mean_aoii.mean),
        num(stats.mean_aoii.std_error),
        num(stats.mean_rate.mean),
        num(stats.mean_rate.std_error),
        stats.n_cycles
    );
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    if stats.identity_violations + stats.recursion_violations > 0 {
        return Err(CliError::failure(format!(
            "{} cycle identity and {} AoII recursion violations",
            stats.identity_violations, stats.recursion_violations
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model file; mutually exclusive with --random.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub model: Option<PathBuf>,
    /// Use a random biased-diagonal source with this many states.
    #[arg(long)]
    pub random: Option<usize>,
    /// Seed of the random source.
    #[arg(long, default_value_t = 1)]
    pub source_seed: u64,
    /// Comma-separated families.
    #[arg(long, value_delimiter = ',')]
    pub family: Option<Vec<Family>>,
    /// Comma-separated target rates.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Skip the Monte-Carlo column.
    #[arg(long)]
    pub no_simulate: bool,
}

pub fn sweep(a: &SweepArgs) -> Result<(), CliError> {
    let mut cfg = a.common.config()?;
    if let Some(g) = &a.grid {
        cfg.sweep.grid = g.clone();
    }
    if let Some(f) = &a.family {
        cfg.sweep.families = f.iter().map(|f| f.name().to_string()).collect();
    }
    if a.no_simulate {
        cfg.sweep.simulate = false;
    }
    cfg.check()?;
    if cfg.sweep.grid.len() < 2 {
        return Err(CliError::input("a sweep needs at least two grid points"));
    }
    let (model, title) = match (&a.model, a.random) {
        (Some(path), _) => (
            load_model(path)?,
            format!("average AoII versus rate: {}", path.display()),
        ),
        (None, Some(n)) => (
            SystemModel::new(
                generate_random_source(n, a.source_seed)?,
                DecoderProfile::reference(),
            ),
            format!(
                "average AoII versus rate: random source, N = {n}, seed {}",
                a.source_seed
            ),
        ),
        (None, None) => unreachable!("clap requires one model source"),
    };
    let families = cfg.families()?;
    let points = estimate_curve(
        &model,
        &families,
        &cfg.sweep.grid,
        &cfg.curve(cfg.sweep.simulate),
    )?;
    let out = a.common.out_dir()?;
    output::write_curve_csv(&out.join("curve.csv"), &points)?;
    write_file(&out.join("curve.svg"), &output::curve_svg(&points, &title))?;
    for p in &points {
        println!(
            "{:<15} R = {:<6} average AoII {}",
            p.family.name(),
            num(p.target_rate),
            num(p.aoii_closed_form)
        );
        for w in &p.warnings {
            eprintln!("warning ({}, R = {}): {w}", p.family, num(p.target_rate));
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Target rate for the rate-constrained checks.
    #[arg(long)]
    pub rate: Option<f64>,
}

pub fn validate(a: &ValidateArgs) -> Result<(), CliError> {
    let mut cfg = a.common.config()?;
    if let Some(r) = a.rate {
        cfg.validate.rate = r;
    }
    let file = ModelFile::parse(&read_input(&a.model)?)?;
    let report = crate::validate::run(file, &cfg);
    let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)? + "\n";
    write_file(&a.common.out_dir()?.join("validate.json"), &json)?;
    print!("{json}");
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::failure(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}

#[derive(Debug, Args)]
pub struct GenSourceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_states: usize,
    #[arg(long, default_value_t = 2)]
    pub r_max: u32,
    #[arg(long, default_value_t = 0.5)]
    pub p_e: f64,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    /// Write here instead of standard output.
    #[arg(long)]
    pub file: Option<PathBuf>,
}

pub fn gen_source(a: &GenSourceArgs) -> Result<(), CliError> {
    let seed = a.common.seed.unwrap_or(1);
    let chain = generate_random_source(a.n_states, seed)?;
    let model = SystemModel::new(chain, DecoderProfile::new(a.r_max, a.p_e, a.c)?);
    let text = ModelFile::from_model(&model).to_toml();
    match &a.file {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
