//! The `swx` command line: tests on experiment logs, simulation studies and
//! power calculations.
//!
//! Exit codes: 0 on success, 2 when a test is valid but degenerate, 1 on any
//! input error.

pub mod data;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::anticipation::{pirt_test, PrefixScheme};
use crate::carryover::{crt_carryover_test_with, sequential_m};
use crate::design::SwitchbackDesign;
use crate::error::{Error, Result};
use crate::parallel;
use crate::power::{estimate_carry_moments, power_carryover, power_total, CarryMoments, PowerInputs};
use crate::report::{McOptions, Sidedness, TestReport};
use crate::sections::{greedy_pool, pool_fixed, SectionFamily};
use crate::simlab::{run_study, svg, StudyConfig};
use crate::total::{crt_total_test_with, HtDifference, Resampler, SectionStatistic, StudentizedHt};
use crate::weaknull::{build_session_frame, crt_regression, crt_weaknull, joint_f_test, position_tests};
use data::{check_against, read_design, read_log, read_text};

#[derive(Debug, Parser)]
#[command(name = "swx", version, about = "Randomization tests and power tools for switchback experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a test on an experiment log.
    #[command(subcommand)]
    Test(TestCommand),
    /// Run a simulation study from a JSON config and write a CSV table.
    Simulate(SimulateArgs),
    /// Normal-approximation power from JSON inputs.
    #[command(subcommand)]
    Power(PowerCommand),
}

#[derive(Debug, Subcommand)]
pub enum TestCommand {
    /// Total-effect CRT.
    Total(TestArgs),
    /// m-carryover CRT.
    Carryover(TestArgs),
    /// Sequential estimate of the carryover horizon.
    Sequential(TestArgs),
    /// Non-anticipation test.
    Anticipation(TestArgs),
    /// Studentized session-level weak-null tests.
    Weaknull(TestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatArg {
    /// HT difference of focal means.
    Ht,
    /// HT difference over its conservative standard error.
    Studentized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeaknullStat {
    /// Focal-average studentized test.
    Average,
    /// Weighted regression contrast with a robust standard error.
    Regression,
    /// Quadratic-form test of all focal positions.
    Joint,
    /// One studentized test per focal position.
    Positions,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV log with header `t,w,y`.
    #[arg(long)]
    pub data: PathBuf,
    /// Design JSON with `T`, `switch_times` and `block_probs`.
    #[arg(long)]
    pub design: PathBuf,
    /// Carryover horizon (burn-in).
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 999)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `upper` or `two-sided`.
    #[arg(long, default_value = "upper")]
    pub sided: Sidedness,
    /// Pool this many design blocks per section instead of greedy pooling.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Holdout prefix length for the anticipation test; defaults to 2m + 1.
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Session length for the weak-null tests.
    #[arg(long)]
    pub session_length: Option<usize>,
    /// Largest horizon tested by `sequential` is `m_max - 1`.
    #[arg(long, default_value_t = 4)]
    pub m_max: usize,
    #[arg(long, value_enum, default_value_t = StatArg::Ht)]
    pub stat: StatArg,
    #[arg(long, value_enum, default_value_t = WeaknullStat::Average)]
    pub weaknull_stat: WeaknullStat,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for SVG charts; defaults to the directory of `--out`.
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum PowerCommand {
    /// Power of the studentized total-effect test.
    Total(PowerArgs),
    /// Power of the studentized m-carryover test.
    Carryover(PowerArgs),
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// PowerInputs JSON.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Evaluate over a pooling grid, e.g. `r=1..4`; one JSON record per line.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Second moments JSON (`e11`, `e00`, `e10`) for carryover power.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    /// Estimate the carryover moments by simulation first.
    #[arg(long)]
    pub estimate_moments: bool,
    /// Simulations for `--estimate-moments`.
    #[arg(long, default_value_t = 100_000)]
    pub sims: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of a command that completed without an input error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Degenerate,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Degenerate => 2,
        }
    }
}

/// Parse arguments, run, print errors and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match parallel::install(|| run(&cli)) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Test(t) => run_test(t),
        Command::Simulate(s) => run_simulate(s),
        Command::Power(p) => run_power(p),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn family_for(design: &SwitchbackDesign, args: &TestArgs) -> Result<SectionFamily> {
    match args.pool {
        Some(r) => pool_fixed(design, r, args.m),
        None => greedy_pool(design, args.m),
    }
}

fn statistic(arg: StatArg) -> &'static dyn SectionStatistic {
    match arg {
        StatArg::Ht => &HtDifference,
        StatArg::Studentized => &StudentizedHt,
    }
}

fn with_decision(report: &TestReport, alpha: f64) -> Value {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    v["alpha"] = json!(alpha);
    v["rejected"] = json!(!report.degenerate && report.rejects(alpha));
    v
}

fn run_test(cmd: &TestCommand) -> Result<Status> {
    let (TestCommand::Total(args)
    | TestCommand::Carryover(args)
    | TestCommand::Sequential(args)
    | TestCommand::Anticipation(args)
    | TestCommand::Weaknull(args)) = cmd;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::InvalidInput(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if args.draws == 0 {
        return Err(Error::InvalidInput("--draws must be at least 1".into()));
    }
    let design = read_design(&args.design)?;
    let log = read_log(&args.data)?;
    check_against(&log, &design)?;
    let opts = McOptions { draws: args.draws, sidedness: args.sided, seed: args.seed };
    let (y, obs) = (&log.y, &log.path);
    let out = args.out.as_deref();
    let report = match cmd {
        TestCommand::Total(_) => {
            let family = family_for(&design, args)?;
            crt_total_test_with(y, obs, &design, &family, &opts, statistic(args.stat), Resampler::Bernoulli)?
        }
        TestCommand::Carryover(_) => {
            let family = family_for(&design, args)?;
            crt_carryover_test_with(y, obs, &design, &family, args.m, &opts, statistic(args.stat))?
        }
        TestCommand::Anticipation(_) => {
            let scheme = args.holdout.map_or(PrefixScheme::for_horizon(args.m), |holdout| PrefixScheme { holdout });
            pirt_test(y, obs, &design, scheme, &opts)?
        }
        TestCommand::Sequential(_) => {
            let r = sequential_m(y, obs, &design, args.alpha, args.m_max, &opts)?;
            emit(out, &to_json(&r))?;
            return Ok(Status::Ok);
        }
        TestCommand::Weaknull(_) => return run_weaknull(args, &design, y, obs, &opts),
    };
    emit(out, &to_json(&with_decision(&report, args.alpha)))?;
    Ok(if report.degenerate { Status::Degenerate } else { Status::Ok })
}

fn run_weaknull(
    args: &TestArgs,
    design: &SwitchbackDesign,
    y: &[f64],
    obs: &crate::design::AssignmentPath,
    opts: &McOptions,
) -> Result<Status> {
    let len = args
        .session_length
        .ok_or_else(|| Error::InvalidInput("--session-length is required for weaknull".into()))?;
    // each session must be exactly one design block so its label law is q_j
    let aligned = design.switch_times().iter().enumerate().all(|(k, &s)| s == k * len + 1)
        && design.horizon() == design.n_blocks() * len;
    if !aligned {
        return Err(Error::InvalidInput(format!(
            "the design blocks must be the sessions: switch times 1, {}, {}, ... with T a multiple of {len}",
            len + 1,
            2 * len + 1
        )));
    }
    let frame = build_session_frame(y, obs, len, args.m, design.block_probs())?;
    let out = args.out.as_deref();
    let (value, degenerate) = match args.weaknull_stat {
        WeaknullStat::Average => {
            let r = crt_weaknull(&frame, opts);
            let mut v = serde_json::to_value(&r).expect("reports serialize");
            v["alpha"] = json!(args.alpha);
            v["rejected"] = json!(!r.report.degenerate && r.report.rejects(args.alpha));
            (v, r.report.degenerate)
        }
        WeaknullStat::Regression => {
            let r = crt_regression(&frame, opts);
            let mut v = serde_json::to_value(&r).expect("reports serialize");
            v["alpha"] = json!(args.alpha);
            v["rejected"] = json!(!r.report.degenerate && r.report.rejects(args.alpha));
            (v, r.report.degenerate)
        }
        WeaknullStat::Joint => {
            let r = joint_f_test(&frame, opts);
            (with_decision(&r, args.alpha), r.degenerate)
        }
        WeaknullStat::Positions => {
            let r = position_tests(&frame, None, opts)?;
            let all = !r.is_empty() && r.iter().all(|p| p.degenerate);
            (json!({ "test": "weaknull-positions", "draws": opts.draws, "seed": opts.seed, "positions": r,
                      "version": crate::report::VERSION }), all)
        }
    };
    emit(out, &to_json(&value))?;
    Ok(if degenerate { Status::Degenerate } else { Status::Ok })
}

fn run_simulate(args: &SimulateArgs) -> Result<Status> {
    let config = StudyConfig::from_json(&read_text(&args.config)?)?;
    let table = run_study(&config)?;
    let csv = table.to_csv()?;
    emit(args.out.as_deref(), &csv)?;
    if args.no_svg {
        return Ok(Status::Ok);
    }
    let dir = match (&args.svg_dir, &args.out) {
        (Some(d), _) => Some(d.clone()),
        (None, Some(out)) => Some(out.parent().map(Path::to_path_buf).unwrap_or_default()),
        (None, None) => None,
    };
    if let Some(dir) = dir {
        let stem = args.out.as_ref().and_then(|p| p.file_stem()).map_or("study".into(), |s| s.to_string_lossy().into_owned());
        fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        for scenario in svg::scenarios(&table.rows) {
            let path = dir.join(format!("{stem}_{scenario}.svg"));
            let text = svg::render_scenario(&table.rows, scenario, config.alpha);
            fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(Status::Ok)
}

/// Parse `r=a..b` (inclusive).
pub fn parse_sweep(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("--sweep expects `r=a..b`, got `{spec}`"));
    let range = spec.strip_prefix("r=").ok_or_else(bad)?;
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn run_power(cmd: &PowerCommand) -> Result<Status> {
    let (PowerCommand::Total(args) | PowerCommand::Carryover(args)) = cmd;
    let inputs: PowerInputs =
        serde_json::from_str(&read_text(&args.inputs)?).map_err(|e| Error::Parse(format!("power inputs: {e}")))?;
    let pools = match &args.sweep {
        Some(s) => parse_sweep(s)?,
        None => vec![inputs.pool],
    };
    let mut records = Vec::new();
    for r in &pools {
        let inputs = PowerInputs { pool: *r, ..inputs.clone() };
        let value = match cmd {
            PowerCommand::Total(_) => {
                let p = power_total(&inputs)?;
                let mut v = serde_json::to_value(p).expect("serializes");
                v["alpha"] = json!(inputs.alpha);
                v
            }
            PowerCommand::Carryover(_) => {
                let moments = if args.estimate_moments {
                    estimate_carry_moments(&inputs, args.sims, args.seed)?
                } else {
                    let path = args.moments.as_ref().ok_or_else(|| {
                        Error::InvalidInput("carryover power needs --moments FILE or --estimate-moments".into())
                    })?;
                    serde_json::from_str::<CarryMoments>(&read_text(path)?)
                        .map_err(|e| Error::Parse(format!("moments: {e}")))?
                };
                let p = power_carryover(&inputs, &moments)?;
                let mut v = serde_json::to_value(p).expect("serializes");
                v["alpha"] = json!(inputs.alpha);
                v["moments"] = serde_json::to_value(moments).expect("serializes");
                v
            }
        };
        records.push(value);
    }
    let text = if args.sweep.is_some() {
        records.iter().map(|v| serde_json::to_string(v).expect("serializes")).collect::<Vec<_>>().join("\n") + "\n"
    } else {
        to_json(&records[0])
    };
    emit(args.out.as_deref(), &text)?;
    Ok(Status::Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_specs() {
        assert_eq!(parse_sweep("r=1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_sweep("r=3..3").unwrap(), vec![3]);
        for bad in ["1..4", "r=4..1", "r=0..2", "r=a..b", "r=1-4"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "swx", "test", "total", "--data", "d.csv", "--design", "d.json", "--m", "2", "--sided", "two-sided", "--pool", "2",
        ])
        .unwrap();
        let Command::Test(TestCommand::Total(a)) = cli.command else { panic!() };
        assert_eq!((a.m, a.sided, a.pool, a.draws), (2, Sidedness::TwoSided, Some(2), 999));
        assert!(Cli::try_parse_from(["swx", "test", "total", "--data", "d.csv"]).is_err());
        assert!(Cli::try_parse_from(["swx", "test", "total", "--data", "a", "--design", "b", "--sided", "left"]).is_err());
    }
}
