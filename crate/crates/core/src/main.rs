use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use dalab::bins::{kappa_for, run_balls_in_bins, StopRule};
use dalab::config::ConfigFile;
use dalab::da::{chains_to_jsonl, extract_rejection_chains, run_da, run_da_lazy, DAResult, DaOptions, Proposing};
use dalab::error::{Error, Result};
use dalab::experiments::{
    bins_csv, game_csv, measure_rank_profile, predicted_threshold, rank_csv, simulate_csv,
    sweep_csv, sweep_threshold, write_text, SimulateRow, SweepPlan,
};
use dalab::game::{simulate_game, win_prob_bound, win_prob_closed_form, win_prob_exact, AdversaryPolicy, GameParams, Policy};
use dalab::market::{sample_market, MarketConfig, MarketInstance, Model, Side};
use dalab::parallel::{map_indices, with_workers};
use dalab::rng::stream_seed;
use dalab::stability::{find_blocking_pairs, Matching};

#[derive(Parser)]
#[command(name = "dalab", version, about = "Deferred acceptance experiments on random matching markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One deferred acceptance run with matching statistics.
    Simulate(Common),
    /// Locate the degree where a perfect matching becomes likely.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated degrees; bisection is used when absent.
        #[arg(long)]
        d_grid: Option<String>,
        #[arg(long)]
        d_min: Option<f64>,
        #[arg(long)]
        d_max: Option<f64>,
        #[arg(long)]
        rel_width: Option<f64>,
    },
    /// Mean partner rank of candidates under candidate-proposing DA.
    Rank(Common),
    /// The Good/Bad/Neutral game: closed form against simulation.
    Game {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p_g: Option<f64>,
        #[arg(long)]
        p_b: Option<f64>,
        #[arg(long)]
        p_n: Option<f64>,
        #[arg(long)]
        streak: Option<u32>,
        /// tight, maximal or alternating.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Balls-in-bins occupancy and the q_F estimate.
    Bins {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        throws: Option<u64>,
        /// Throw n ln n - c n balls when --throws is absent.
        #[arg(long)]
        c: Option<f64>,
    },
    /// Check a matching for blocking pairs.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Defaults to the candidate-proposing outcome on the instance.
        #[arg(long)]
        matching: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    /// symmetric, candidate_lists or job_lists.
    #[arg(long)]
    model: Option<String>,
    /// Proposing side: candidates or jobs.
    #[arg(long)]
    side: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also emit the proposal log and rejection chains.
    #[arg(long)]
    trace: bool,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Flag values merged over the config file, recorded for the effective-config line.
struct Resolver {
    file: ConfigFile,
    used: Vec<(String, String)>,
}

impl Resolver {
    fn new(common: &Common) -> Result<Self> {
        let file = match &common.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        Ok(Resolver { file, used: Vec::new() })
    }

    fn opt<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file.get(key)?,
        };
        if let Some(v) = &v {
            self.used.push((key.replace('_', "-"), v.to_string()));
        }
        Ok(v)
    }

    fn get<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file.get(key)?.unwrap_or(default),
        };
        self.used.push((key.replace('_', "-"), v.to_string()));
        Ok(v)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let v = flag.or_else(|| self.file.raw(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.used.push((key.to_string(), p.display().to_string()));
        }
        v
    }

    fn flag(&mut self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.file.get::<bool>(key)?.unwrap_or(false);
        if v {
            self.used.push((key.to_string(), String::new()));
        }
        Ok(v)
    }

    /// Prints a command line that reproduces this run.
    fn announce(&self, command: &str) {
        let mut line = format!("# effective: dalab {command}");
        for (k, v) in &self.used {
            line.push_str(&format!(" --{k}"));
            if !v.is_empty() {
                line.push_str(&format!(" {v}"));
            }
        }
        eprintln!("{line}");
    }
}

struct Market {
    config: MarketConfig,
    side: Side,
    trials: u64,
    out: Option<PathBuf>,
    trace: bool,
    workers: Option<usize>,
}

fn resolve_market(r: &mut Resolver, c: &Common, default_model: Model, default_trials: u64) -> Result<Market> {
    let n = r.get("n", c.n, 1000)?;
    let alpha = r.get("alpha", c.alpha, 0.0)?;
    let d = r.get("d", c.d, 10.0)?;
    let model: Model = r.get("model", c.model.clone(), default_model.to_string())?.parse()?;
    let side: Side = r.get("side", c.side.clone(), "candidates".to_string())?.parse()?;
    let trials = r.get("trials", c.trials, default_trials)?;
    let seed = r.get("seed", c.seed, 0)?;
    let out = r.path("out", c.out.clone());
    let trace = r.flag("trace", c.trace)?;
    let workers = r.opt("workers", c.workers)?;
    Ok(Market {
        config: MarketConfig::new(n, alpha, d, model, seed),
        side,
        trials,
        out,
        trace,
        workers,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the proposal log and its rejection chains next to `out`, or to
/// stdout after the main report when there is no output file.
fn emit_trace(result: &DAResult, out: Option<&Path>) -> Result<()> {
    let trace = result.trace_text()?;
    let chains = chains_to_jsonl(&extract_rejection_chains(result)?);
    match out {
        Some(p) => {
            write_text(&with_suffix(p, ".trace"), &trace)?;
            write_text(&with_suffix(p, ".chains.jsonl"), &chains)
        }
        None => {
            print!("{trace}{chains}");
            Ok(())
        }
    }
}

fn proposing_for(side: Side) -> Proposing {
    match side {
        Side::Candidates => Proposing::Cpda,
        Side::Jobs => Proposing::Jpda,
    }
}

fn cmd_simulate(c: Common) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let mk = resolve_market(&mut r, &c, Model::CandidateLists, 1)?;
    r.announce("simulate");
    let proposing = proposing_for(mk.side);
    let cfg = mk.config;
    cfg.validate()?;
    let one = |i: u64, record_trace: bool| -> Result<DAResult> {
        let cfg = cfg.with_seed(stream_seed(cfg.seed, i));
        let opts = DaOptions {
            record_trace,
            ..Default::default()
        };
        if cfg.model == proposing.lazy_model() {
            run_da_lazy(&cfg, proposing, &opts)
        } else {
            run_da(&sample_market(&cfg)?, proposing, &opts)
        }
    };
    let results = with_workers(mk.workers, || map_indices(mk.trials, |i| one(i, mk.trace && i == 0)))?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = results
        .iter()
        .map(|res| SimulateRow::from_result(&cfg, mk.side, res))
        .collect();
    emit(mk.out.as_deref(), &simulate_csv(&rows))?;
    if let (true, Some(first)) = (mk.trace, results.first()) {
        emit_trace(first, mk.out.as_deref())?;
    }
    Ok(())
}

fn cmd_sweep(
    c: Common,
    d_grid: Option<String>,
    d_min: Option<f64>,
    d_max: Option<f64>,
    rel_width: Option<f64>,
) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let mk = resolve_market(&mut r, &c, Model::CandidateLists, 400)?;
    let grid = r.opt("d_grid", d_grid)?;
    let plan = match grid {
        Some(g) => SweepPlan::Grid(
            g.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parameter(format!("bad d in grid `{x}`: {e}")))
                })
                .collect::<Result<_>>()?,
        ),
        None => {
            let pred = predicted_threshold(mk.config.n.max(2), mk.config.alpha)?;
            let cap = match mk.config.model {
                Model::JobLists => mk.config.m(),
                _ => mk.config.n,
            } as f64;
            let lo = r.get("d_min", d_min, (0.5 * pred).clamp(1.0, cap))?;
            let hi = r.get("d_max", d_max, (2.0 * pred).min(cap))?;
            let rel_width = r.get("rel_width", rel_width, 0.05)?;
            SweepPlan::Bisection { lo, hi, rel_width }
        }
    };
    r.announce("sweep");
    let res = with_workers(mk.workers, || sweep_threshold(&mk.config, mk.side, &plan, mk.trials))??;
    for (a, b) in &res.monotonicity_violations {
        eprintln!("# monotonicity violation beyond the 95% intervals between d = {a} and d = {b}");
    }
    if res.empirical_d0.is_none() {
        eprintln!("# no 0.5 crossing found in the swept range");
    }
    emit(mk.out.as_deref(), &sweep_csv(&res))
}

fn cmd_rank(c: Common) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let mk = resolve_market(&mut r, &c, Model::CandidateLists, 100)?;
    r.announce("rank");
    let prof = with_workers(mk.workers, || measure_rank_profile(&mk.config, mk.trials))??;
    emit(mk.out.as_deref(), &rank_csv(&[prof]))
}

#[allow(clippy::too_many_arguments)]
fn cmd_game(
    c: Common,
    p_g: Option<f64>,
    p_b: Option<f64>,
    p_n: Option<f64>,
    streak: Option<u32>,
    policy: Option<String>,
) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let p_g = r.get("p_g", p_g, 0.2)?;
    let p_b = r.get("p_b", p_b, 0.5)?;
    let p_n = r.get("p_n", p_n, 1.0 - p_g - p_b)?;
    let streak = r.get("streak", streak, 2)?;
    let policy: Policy = r.get("policy", policy, "tight".to_string())?.parse()?;
    let trials = r.get("trials", c.trials, 100_000)?;
    let seed = r.get("seed", c.seed, 0)?;
    let out = r.path("out", c.out.clone());
    let workers = r.opt("workers", c.workers)?;
    r.announce("game");
    let params = GameParams::new(p_g, p_b, p_n, streak);
    let closed = win_prob_closed_form(&params).ok();
    let exact = win_prob_exact(&params).ok();
    let bound = match win_prob_bound(&params) {
        Ok(b) => Some(b),
        Err(Error::ZeroBadProbability) => None,
        Err(e) => return Err(e),
    };
    let sim = with_workers(workers, || simulate_game(&params, &policy, trials, seed))??;
    emit(out.as_deref(), &game_csv(&params, &policy.name(), closed, exact, bound, &sim))
}

fn cmd_bins(c: Common, throws: Option<u64>, cc: Option<f64>) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let n = r.get("n", c.n, 1000)?;
    let throws = match throws.or(r.file.get("throws")?) {
        Some(t) => r.get("throws", Some(t), 0)?,
        None => {
            let cc = r.get("c", cc, 2.0)?;
            kappa_for(n, cc)
        }
    };
    let trials = r.get("trials", c.trials, 100)?;
    let seed = r.get("seed", c.seed, 0)?;
    let out = r.path("out", c.out.clone());
    let workers = r.opt("workers", c.workers)?;
    r.announce("bins");
    let runs = with_workers(workers, || {
        map_indices(trials, |i| run_balls_in_bins(n, StopRule::FixedThrows(throws), stream_seed(seed, i)))
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    emit(out.as_deref(), &bins_csv(&runs))
}

fn cmd_verify(c: Common, instance: Option<PathBuf>, matching: Option<PathBuf>) -> Result<()> {
    let mut r = Resolver::new(&c)?;
    let instance = r
        .path("instance", instance)
        .ok_or_else(|| Error::Parameter("verify needs --instance".into()))?;
    let matching = r.path("matching", matching);
    let out = r.path("out", c.out.clone());
    let trace = r.flag("trace", c.trace)?;
    r.announce("verify");
    let market = MarketInstance::load(&instance)?;
    let run = if trace || matching.is_none() {
        Some(run_da(&market, Proposing::Cpda, &DaOptions::traced())?)
    } else {
        None
    };
    let mu = match (&matching, &run) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Matching::from_text(&text)?
        }
        (None, Some(res)) => res.matching(),
        (None, None) => unreachable!("a run is made whenever no matching is given"),
    };
    let blocking = find_blocking_pairs(&market, &mu)?;
    let mut report = String::new();
    if blocking.is_empty() {
        report.push_str("STABLE\n");
    } else {
        for b in &blocking {
            report.push_str(&format!("{} {} {}\n", b.candidate, b.job, b.reason.as_str()));
        }
    }
    emit(out.as_deref(), &report)?;
    if let (true, Some(res)) = (trace, &run) {
        emit_trace(res, out.as_deref())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Sweep { common, d_grid, d_min, d_max, rel_width } => {
            cmd_sweep(common, d_grid, d_min, d_max, rel_width)
        }
        Command::Rank(c) => cmd_rank(c),
        Command::Game { common, p_g, p_b, p_n, streak, policy } => {
            cmd_game(common, p_g, p_b, p_n, streak, policy)
        }
        Command::Bins { common, throws, c } => cmd_bins(common, throws, c),
        Command::Verify { common, instance, matching } => cmd_verify(common, instance, matching),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
