//! Command-line driver: test two logged policies, rank several, run
//! simulation suites and Type-1 calibration, thin shared-environment logs,
//! or serve live sessions.
//!
//! Exit codes: 0 the null was rejected (or the command succeeded), 3 the
//! test failed to reject at its batch limit, 4 the data ran out before the
//! batch limit, 2 usage error, 65 malformed input data, 1 anything else.

use std::fs::{self, File};
use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nscore::compare::{iid_subsample, multi_compare, MultiComparisonConfig};
use nscore::evidence::{run, Bins, TestConfig, Verdict, DEFAULT_XI_CAP};
use nscore::metrics::{pair_streams, read_logs_csv, write_logs_csv, ScoreBounds};
use nscore::sequential::{run_pairs, Method, PairTest};
use nscore::simlab::{
    default_bernoulli_grid, run_experiment, Alternative, BernoulliPair, ExperimentResult,
    ExperimentSpec, PolynomialDensity,
};
use serde::Serialize;

pub const EXIT_REJECT: i32 = 0;
pub const EXIT_GENERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAIL_TO_REJECT: i32 = 3;
pub const EXIT_CONTINUE: i32 = 4;
pub const EXIT_DATA: i32 = 65;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io { .. } | CliError::Other(_) => EXIT_GENERIC,
        }
    }
}

impl From<nscore::Error> for CliError {
    fn from(e: nscore::Error) -> Self {
        use nscore::Error as E;
        match e {
            E::Config(_) | E::InvalidBounds { .. } | E::Domain(_) => CliError::Usage(e.to_string()),
            E::OutOfRange { .. }
            | E::MalformedLog { .. }
            | E::Csv { .. }
            | E::Protocol(_)
            | E::Ordering { .. } => CliError::Data(e.to_string()),
            E::Finished { .. } | E::Generation(_) => CliError::Other(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "nscore",
    version,
    about = "Sequential anytime-valid policy comparison"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodKind {
    Nscore,
    Wsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Bernoulli,
    Polynomial,
    Null,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test whether the second policy in a two-policy log beats the first.
    Test {
        csv: PathBuf,
        #[arg(long, value_enum, default_value = "nscore")]
        method: MethodKind,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        /// Bin count k >= 2, or `adaptive`.
        #[arg(long, default_value = "2", value_parser = parse_bins)]
        bins: Bins,
        /// Batch limit; defaults to the number of paired trials.
        #[arg(long)]
        n_max: Option<u64>,
        /// Raw score range as `lower,upper`.
        #[arg(long, default_value = "0,1", value_parser = parse_bounds)]
        bounds: ScoreBounds,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare every pair of policies in a log with Bonferroni-split α.
    Rank {
        csv: PathBuf,
        /// `nscore:<k>`, `nscore:adaptive` or `wsr`.
        #[arg(long, default_value = "nscore:2", value_parser = parse_method)]
        method: Method,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long)]
        n_max: Option<u64>,
        #[arg(long, default_value = "0,1", value_parser = parse_bounds)]
        bounds: ScoreBounds,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Monte-Carlo time-to-decision and power over a suite of alternatives.
    Simulate {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Comma-separated methods to run on identical draws.
        #[arg(long, default_value = "nscore:2,wsr", value_delimiter = ',', value_parser = parse_method)]
        method: Vec<Method>,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        redraws: u64,
        /// Batch limit N.
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long, env = "NSCORE_SEED", default_value_t = 0)]
        seed: u64,
        /// Bernoulli suite: baseline rates to use instead of the default grid.
        #[arg(long, value_delimiter = ',')]
        p0: Vec<f64>,
        /// Bernoulli suite: gaps to use with `--p0` (default 0.1).
        #[arg(long, value_delimiter = ',')]
        gap: Vec<f64>,
        /// Polynomial suite: minimum mean gap of each drawn density pair.
        #[arg(long, default_value_t = 0.05)]
        min_gap: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Empirical Type-1 error on an equal-means pair.
    Calibrate {
        #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        streams: u64,
        /// `bernoulli:<p>`, `bernoulli:<p0>,<p1>` or `polynomial:<c0>,<c1>,...`.
        #[arg(long, default_value = "bernoulli:0.5")]
        null_spec: String,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value = "nscore:2", value_parser = parse_method)]
        method: Method,
        #[arg(long, env = "NSCORE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Keep one random policy per environment index so per-policy streams
    /// are independent.
    Subsample {
        csv: PathBuf,
        #[arg(long, env = "NSCORE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "0,1", value_parser = parse_bounds)]
        bounds: ScoreBounds,
        #[arg(long, default_value = "subsampled.csv")]
        out: PathBuf,
    },
    /// Serve live evaluation sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        addr: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Event log file; sessions are kept in memory only when omitted.
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

fn parse_bins(s: &str) -> Result<Bins, String> {
    let b: Bins = s.parse().map_err(|e: nscore::Error| e.to_string())?;
    match b {
        Bins::Fixed(k) if k < 2 => Err(format!("bins must be at least 2, got {k}")),
        b => Ok(b),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: nscore::Error| e.to_string())
}

fn parse_bounds(s: &str) -> Result<ScoreBounds, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lower,upper`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    ScoreBounds::new(lo, hi).map_err(|e| e.to_string())
}

/// Runs a parsed command and returns the process exit code.
pub fn run_cli(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Test {
            csv,
            method,
            alpha,
            bins,
            n_max,
            bounds,
            out,
        } => cmd_test(&csv, method, alpha, bins, n_max, bounds, &out),
        Command::Rank {
            csv,
            method,
            alpha,
            n_max,
            bounds,
            out,
        } => cmd_rank(&csv, method, alpha, n_max, bounds, &out),
        Command::Simulate {
            suite,
            method,
            redraws,
            n,
            alpha,
            seed,
            p0,
            gap,
            min_gap,
            out,
        } => {
            let args = SimulateArgs {
                suite,
                methods: method,
                redraws,
                n,
                alpha,
                seed,
                p0,
                gap,
                min_gap,
            };
            let rows = cmd_simulate(&args, &out)?;
            print!("{}", summary_table(&rows));
            Ok(EXIT_REJECT)
        }
        Command::Calibrate {
            alpha,
            streams,
            null_spec,
            n,
            method,
            seed,
            out,
        } => cmd_calibrate(alpha, streams, &null_spec, n, method, seed, &out),
        Command::Subsample {
            csv,
            seed,
            bounds,
            out,
        } => cmd_subsample(&csv, seed, bounds, &out),
        Command::Serve { addr, port, store } => {
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .try_init();
            let rt = tokio::runtime::Runtime::new().map_err(io_err("starting runtime"))?;
            rt.block_on(nscore_session::serve(SocketAddr::new(addr, port), store))
                .map_err(|e| CliError::Other(e.to_string()))?;
            Ok(EXIT_REJECT)
        }
    }
}

fn read_logs(path: &Path, bounds: ScoreBounds) -> CliResult<Vec<nscore::metrics::EvaluationLog>> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    read_logs_csv(io::BufReader::new(file), bounds)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::RejectNull => EXIT_REJECT,
        Verdict::FailToRejectNull => EXIT_FAIL_TO_REJECT,
        Verdict::Continue => EXIT_CONTINUE,
    }
}

#[derive(Serialize)]
struct TestReport {
    baseline: String,
    candidate: String,
    method: Method,
    alpha: f64,
    n_max: u64,
    verdict: Verdict,
    time_to_decision: Option<u64>,
    final_p: f64,
    trials_used: u64,
    paired_trials: usize,
    unmatched_trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    evidence_for_null: Option<u64>,
}

pub fn cmd_test(
    csv: &Path,
    method: MethodKind,
    alpha: f64,
    bins: Bins,
    n_max: Option<u64>,
    bounds: ScoreBounds,
    out: &Path,
) -> CliResult<i32> {
    let logs = read_logs(csv, bounds)?;
    if logs.len() != 2 {
        return Err(CliError::Data(format!(
            "`test` compares exactly 2 policies but the log has {}; use `rank` for more",
            logs.len()
        )));
    }
    let paired = pair_streams(&logs[0], &logs[1])?;
    if paired.pairs.is_empty() {
        return Err(CliError::Data("the two policies share no trials".into()));
    }
    let n_max = n_max.unwrap_or(paired.pairs.len() as u64);
    if n_max == 0 {
        return Err(CliError::Usage("n-max must be at least 1".into()));
    }
    create_out_dir(out)?;
    let method = match method {
        MethodKind::Nscore => Method::NScore(bins),
        MethodKind::Wsr => Method::Wsr,
    };
    let mut ptrace = String::from("n,p\n");
    let (decision, trials_used, evidence_for_null) = match method {
        Method::NScore(bins) => {
            let config = TestConfig {
                alpha,
                n_max,
                bins,
                xi_cap: DEFAULT_XI_CAP,
            };
            let outcome = run(&paired.pairs, &config)?;
            let mut evidence = String::from("n,x,xbar,xi\n");
            for s in &outcome.trace {
                evidence.push_str(&format!("{},{},{},{}\n", s.n, s.x, s.x_bar, s.xi));
                if s.n > 0 {
                    ptrace.push_str(&format!("{},{}\n", s.n, s.p));
                }
            }
            write_file(&out.join("evidence.csv"), evidence.as_bytes())?;
            let used = outcome.trace.last().map(|s| s.n).unwrap_or(0);
            (outcome.decision, used, None)
        }
        Method::Wsr => {
            let test = run_pairs(method, alpha, n_max, &paired.pairs)?;
            for (i, p) in test.p_trace().iter().enumerate() {
                ptrace.push_str(&format!("{},{p}\n", i + 1));
            }
            let PairTest::Wsr(wsr) = &test else {
                unreachable!("wsr method builds a wsr test")
            };
            let mut cs = String::from("n,lower,upper\n");
            for (t, l, u) in wsr.confidence_sequence().to_rows() {
                cs.push_str(&format!("{t},{l},{u}\n"));
            }
            write_file(&out.join("cs.csv"), cs.as_bytes())?;
            (test.decision(), test.n(), wsr.evidence_for_null())
        }
    };
    write_file(&out.join("ptrace.csv"), ptrace.as_bytes())?;
    let report = TestReport {
        baseline: logs[0].policy_id.clone(),
        candidate: logs[1].policy_id.clone(),
        method,
        alpha,
        n_max,
        verdict: decision.verdict,
        time_to_decision: decision.time_to_decision,
        final_p: decision.final_p,
        trials_used,
        paired_trials: paired.pairs.len(),
        unmatched_trials: paired.unmatched,
        evidence_for_null,
    };
    write_file(&out.join("decision.json"), &to_json(&report)?)?;
    match decision.time_to_decision {
        Some(t) => println!(
            "{}: {} vs {} -> {} after {t} trials (p = {:.4})",
            method, report.baseline, report.candidate, decision.verdict, decision.final_p
        ),
        None => println!(
            "{}: {} vs {} -> {} (data ended after {trials_used} of {n_max} trials, p = {:.4})",
            method, report.baseline, report.candidate, decision.verdict, decision.final_p
        ),
    }
    Ok(verdict_exit_code(decision.verdict))
}

pub fn cmd_rank(
    csv: &Path,
    method: Method,
    alpha: f64,
    n_max: Option<u64>,
    bounds: ScoreBounds,
    out: &Path,
) -> CliResult<i32> {
    let logs = read_logs(csv, bounds)?;
    if logs.len() < 2 {
        return Err(CliError::Data(format!(
            "need at least 2 policies, found {}",
            logs.len()
        )));
    }
    let config = MultiComparisonConfig {
        global_alpha: alpha,
        method,
        n_max: n_max.unwrap_or(u64::MAX),
    };
    let report = multi_compare(&logs, &config)?;
    create_out_dir(out)?;
    write_file(&out.join("report.json"), &to_json(&report)?)?;
    let mut summary = String::from("policy,mean,trials,letters\n");
    let mut ordered = report.policies.clone();
    ordered.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then_with(|| a.policy.cmp(&b.policy))
    });
    for p in &ordered {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            p.policy, p.mean, p.trials, p.letters
        ));
    }
    write_file(&out.join("summary.csv"), summary.as_bytes())?;
    let mut pairs =
        String::from("baseline,candidate,alpha,verdict,time_to_decision,final_p,trials\n");
    for p in &report.pairs {
        pairs.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.baseline,
            p.candidate,
            p.alpha,
            p.decision.verdict,
            p.decision
                .time_to_decision
                .map(|t| t.to_string())
                .unwrap_or_default(),
            p.decision.final_p,
            p.trials
        ));
    }
    write_file(&out.join("pairs.csv"), pairs.as_bytes())?;
    println!("{:<20} {:>8} {:>8}  letters", "policy", "mean", "trials");
    for p in &ordered {
        println!(
            "{:<20} {:>8.4} {:>8}  {}",
            p.policy, p.mean, p.trials, p.letters
        );
    }
    println!("total trials: {}", report.total_trials);
    Ok(EXIT_REJECT)
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub suite: Suite,
    pub methods: Vec<Method>,
    pub redraws: u64,
    pub n: u64,
    pub alpha: f64,
    pub seed: u64,
    pub p0: Vec<f64>,
    pub gap: Vec<f64>,
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: Method,
    pub alt_id: usize,
    pub alternative: Alternative,
    pub seed: u64,
    #[serde(flatten)]
    pub result: ExperimentResult,
}

fn suite_alternatives(args: &SimulateArgs) -> CliResult<Vec<Alternative>> {
    match args.suite {
        Suite::Bernoulli => {
            let grid = if args.p0.is_empty() {
                if !args.gap.is_empty() {
                    return Err(CliError::Usage("--gap needs --p0".into()));
                }
                default_bernoulli_grid()
            } else {
                let gaps = if args.gap.is_empty() {
                    vec![0.1]
                } else {
                    args.gap.clone()
                };
                let mut grid = Vec::new();
                for &g in &gaps {
                    for &p in &args.p0 {
                        // round away representation noise such as 0.2 + 0.1
                        let p1 = ((p + g) * 1e12).round() / 1e12;
                        grid.push(BernoulliPair::new(p, p1)?);
                    }
                }
                grid
            };
            Ok(grid.into_iter().map(Alternative::Bernoulli).collect())
        }
        Suite::Null => Ok([0.2, 0.5, 0.8]
            .into_iter()
            .map(|p| Alternative::Bernoulli(BernoulliPair { p0: p, p1: p }))
            .collect()),
        Suite::Polynomial => Ok(vec![Alternative::RandomPolynomial {
            min_gap: args.min_gap,
        }]),
    }
}

/// Seed for alternative `alt_id`; every method sees the same draws.
fn alternative_seed(seed: u64, alt_id: usize) -> u64 {
    seed.wrapping_add((alt_id as u64) << 32)
}

/// Runs the suite and writes `results.csv` and `results.json` under `out`.
pub fn cmd_simulate(args: &SimulateArgs, out: &Path) -> CliResult<Vec<ResultRow>> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("at least one --method is required".into()));
    }
    let alternatives = suite_alternatives(args)?;
    let mut rows = Vec::new();
    for &method in &args.methods {
        for (alt_id, alternative) in alternatives.iter().enumerate() {
            let seed = alternative_seed(args.seed, alt_id);
            let spec = ExperimentSpec {
                method,
                alternative: alternative.clone(),
                n: args.n,
                redraws: args.redraws,
                alpha: args.alpha,
                seed,
            };
            let result = run_experiment(&spec)?;
            rows.push(ResultRow {
                method,
                alt_id,
                alternative: alternative.clone(),
                seed,
                result,
            });
        }
    }
    create_out_dir(out)?;
    let mut csv = String::from("method,alt_id,p0,p1,mean_ttd,power,redraws,seed\n");
    for r in &rows {
        let (p0, p1) = match &r.alternative {
            Alternative::Bernoulli(b) => (b.p0.to_string(), b.p1.to_string()),
            _ => (String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{},{},{p0},{p1},{},{},{},{}\n",
            r.method, r.alt_id, r.result.mean_ttd, r.result.power, r.result.redraws, r.seed
        ));
    }
    write_file(&out.join("results.csv"), csv.as_bytes())?;
    write_file(&out.join("results.json"), &to_json(&rows)?)?;
    Ok(rows)
}

/// Mean TTD and power per method, averaged over the suite's alternatives.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut s = format!(
        "{:<18} {:>10} {:>8} {:>6}\n",
        "method", "mean TTD", "power", "alts"
    );
    for m in methods {
        let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.method == m).collect();
        let k = sel.len() as f64;
        let ttd = sel.iter().map(|r| r.result.mean_ttd).sum::<f64>() / k;
        let power = sel.iter().map(|r| r.result.power).sum::<f64>() / k;
        s.push_str(&format!(
            "{:<18} {:>10.1} {:>8.3} {:>6}\n",
            m.to_string(),
            ttd,
            power,
            sel.len()
        ));
    }
    s
}

/// Parses a null specification and checks that both sides share a mean.
pub fn parse_null_spec(spec: &str) -> CliResult<Alternative> {
    let (kind, params) = spec.split_once(':').ok_or_else(|| {
        CliError::Usage(format!(
            "null spec `{spec}` should look like `bernoulli:0.5`"
        ))
    })?;
    let nums = params
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Usage(format!("null spec `{spec}`: {e}")))?;
    match kind.trim() {
        "bernoulli" => {
            let (p0, p1) = match nums.as_slice() {
                [p] => (*p, *p),
                [p0, p1] => (*p0, *p1),
                _ => {
                    return Err(CliError::Usage(
                        "bernoulli null spec takes one or two rates".into(),
                    ))
                }
            };
            let pair = BernoulliPair::new(p0, p1)?;
            if p0 != p1 {
                return Err(CliError::Usage(format!(
                    "calibration needs equal means, but Bernoulli({p0}) and Bernoulli({p1}) differ; \
                     a rejection there would not be a false positive"
                )));
            }
            Ok(Alternative::Bernoulli(pair))
        }
        "polynomial" => {
            let d = PolynomialDensity::from_coefficients(nums)?;
            Ok(Alternative::Densities {
                baseline: d.clone(),
                candidate: d,
            })
        }
        other => Err(CliError::Usage(format!(
            "unknown null family `{other}` (bernoulli or polynomial)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub method: Method,
    pub alpha: f64,
    pub streams: u64,
    pub n: u64,
    pub seed: u64,
    pub null_spec: String,
    pub rejections: u64,
    pub rate: f64,
    /// 95% Wilson score interval for the rejection rate.
    pub ci_low: f64,
    pub ci_high: f64,
    /// `α + 3·sqrt(α(1-α)/streams)`.
    pub bound: f64,
    pub within_bound: bool,
}

fn wilson(successes: u64, trials: u64) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn calibrate(
    alpha: f64,
    streams: u64,
    null_spec: &str,
    n: u64,
    method: Method,
    seed: u64,
) -> CliResult<CalibrationReport> {
    if streams == 0 {
        return Err(CliError::Usage("streams must be at least 1".into()));
    }
    let alternative = parse_null_spec(null_spec)?;
    let result = run_experiment(&ExperimentSpec {
        method,
        alternative,
        n,
        redraws: streams,
        alpha,
        seed,
    })?;
    let (ci_low, ci_high) = wilson(result.rejections, streams);
    let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / streams as f64).sqrt();
    Ok(CalibrationReport {
        method,
        alpha,
        streams,
        n,
        seed,
        null_spec: null_spec.to_string(),
        rejections: result.rejections,
        rate: result.power,
        ci_low,
        ci_high,
        bound,
        within_bound: result.power <= bound,
    })
}

pub fn cmd_calibrate(
    alpha: f64,
    streams: u64,
    null_spec: &str,
    n: u64,
    method: Method,
    seed: u64,
    out: &Path,
) -> CliResult<i32> {
    let report = calibrate(alpha, streams, null_spec, n, method, seed)?;
    create_out_dir(out)?;
    write_file(&out.join("calibration.json"), &to_json(&report)?)?;
    println!(
        "{}: {}/{} false rejections, rate {:.4} (95% CI {:.4}..{:.4}), bound {:.4} -> {}",
        report.method,
        report.rejections,
        report.streams,
        report.rate,
        report.ci_low,
        report.ci_high,
        report.bound,
        if report.within_bound {
            "ok"
        } else {
            "EXCEEDED"
        }
    );
    Ok(if report.within_bound {
        EXIT_REJECT
    } else {
        EXIT_GENERIC
    })
}

pub fn cmd_subsample(csv: &Path, seed: u64, bounds: ScoreBounds, out: &Path) -> CliResult<i32> {
    let logs = read_logs(csv, bounds)?;
    let thinned = iid_subsample(&logs, seed)?;
    let mut buf = Vec::new();
    write_logs_csv(&mut buf, &thinned)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    write_file(out, &buf)?;
    let mut stdout = io::stdout().lock();
    for l in &thinned {
        let _ = writeln!(stdout, "{}: {} trials", l.policy_id, l.len());
    }
    Ok(EXIT_REJECT)
}
