//! Monte Carlo drivers: perfect-matching probabilities, threshold sweeps,
//! rank profiles, and their CSV reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::bins::{acceptance_prob_estimate, BinOccupancy};
use crate::da::{run_da, run_da_lazy, DAResult, DaOptions, Proposing};
use crate::error::{Error, Result};
use crate::game::{GameParams, GameSimulation};
use crate::market::{sample_market, MarketConfig, Model, Side};
use crate::parallel::map_indices;
use crate::rng::stream_seed;
use crate::stats::{Proportion, Summary};

/// `ln n * ln((1 + alpha) / (alpha + 1/(n(1 + alpha))))`; `ln^2 n` at `alpha = 0`.
pub fn predicted_threshold(n: usize, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::Parameter(format!("need n >= 2, got {n}")));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Parameter(format!("alpha must be >= 0, got {alpha}")));
    }
    let nf = n as f64;
    Ok(predicted_threshold_real(nf, alpha))
}

/// [`predicted_threshold`] for a real-valued `n`.
pub fn predicted_threshold_real(n: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return n.ln() * n.ln();
    }
    n.ln() * ((1.0 + alpha) / (alpha + 1.0 / (n * (1.0 + alpha)))).ln()
}

/// `d / ln((1 + alpha) / (alpha + 1/m))` with `m = round(n(1 + alpha))`.
pub fn rank_lower_bound(config: &MarketConfig) -> f64 {
    let m = config.m() as f64;
    config.d / ((1.0 + config.alpha) / (config.alpha + 1.0 / m)).ln()
}

/// Runs one deferred acceptance trial on `config` (whose seed is already the
/// trial seed). The market is revealed lazily when the model matches the
/// proposing side and sampled explicitly otherwise.
pub fn run_trial(config: &MarketConfig, proposing: Proposing) -> Result<DAResult> {
    if config.model == proposing.lazy_model() {
        run_da_lazy(config, proposing, &DaOptions::default())
    } else {
        run_da(&sample_market(config)?, proposing, &DaOptions::default())
    }
}

fn side_proposing(side: Side) -> Proposing {
    match side {
        Side::Candidates => Proposing::Cpda,
        Side::Jobs => Proposing::Jpda,
    }
}

/// Fraction of trials in which deferred acceptance proposed by `side` matches
/// every job. Trial `i` uses seed `stream_seed(config.seed, i)`.
pub fn estimate_perfect_prob(config: &MarketConfig, side: Side, trials: u64) -> Result<Proportion> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let proposing = side_proposing(side);
    let outcomes = map_indices(trials, |i| {
        run_trial(&config.with_seed(stream_seed(config.seed, i)), proposing).map(|r| r.is_perfect())
    });
    let mut perfect = 0;
    for o in outcomes {
        perfect += o? as u64;
    }
    Ok(Proportion::new(perfect, trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub d: f64,
    pub perfect: Proportion,
}

/// How the degrees of a sweep are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepPlan {
    Grid(Vec<f64>),
    /// Bisection on `[lo, hi]` until `(hi - lo) / lo <= rel_width`.
    Bisection { lo: f64, hi: f64, rel_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub n: usize,
    pub alpha: f64,
    pub model: Model,
    pub side: Side,
    pub seed: u64,
    pub trials: u64,
    /// Sorted by `d`.
    pub grid: Vec<SweepPoint>,
    pub predicted_d0: f64,
    /// The interpolated 0.5 crossing, `None` when no crossing was found.
    pub empirical_d0: Option<f64>,
    /// Consecutive grid pairs `(d_lo, d_hi)` whose intervals show a decrease.
    pub monotonicity_violations: Vec<(f64, f64)>,
}

fn crossing_between(a: (f64, f64), b: (f64, f64)) -> Option<f64> {
    let ((d0, f0), (d1, f1)) = (a, b);
    if f0 <= 0.5 && 0.5 <= f1 && f0 < f1 {
        Some(d0 + (0.5 - f0) / (f1 - f0) * (d1 - d0))
    } else if f0 == 0.5 && f1 == 0.5 {
        Some(d0)
    } else {
        None
    }
}

/// First 0.5 crossing of `(d, fraction)` points sorted by `d`, linearly interpolated.
pub fn interpolate_crossing(points: &[(f64, f64)]) -> Option<f64> {
    points.windows(2).find_map(|w| crossing_between(w[0], w[1]))
}

fn monotonicity_violations(grid: &[SweepPoint]) -> Vec<(f64, f64)> {
    grid.windows(2)
        .filter(|w| w[1].perfect.ci_high < w[0].perfect.ci_low)
        .map(|w| (w[0].d, w[1].d))
        .collect()
}

/// Locates the degree at which the probability of a perfect outcome crosses
/// 0.5. All grid points share the base seed, so neighbouring degrees are
/// compared on common random numbers.
pub fn sweep_threshold(config: &MarketConfig, side: Side, plan: &SweepPlan, trials: u64) -> Result<SweepResult> {
    config.validate()?;
    let predicted_d0 = predicted_threshold(config.n.max(2), config.alpha)?;
    let eval = |d: f64| -> Result<SweepPoint> {
        Ok(SweepPoint {
            d,
            perfect: estimate_perfect_prob(&config.with_d(d), side, trials)?,
        })
    };
    let mut grid = Vec::new();
    let mut empirical_d0 = None;
    match plan {
        SweepPlan::Grid(ds) => {
            if ds.is_empty() {
                return Err(Error::Parameter("the d grid is empty".into()));
            }
            let mut ds = ds.clone();
            ds.sort_by(f64::total_cmp);
            ds.dedup();
            for d in ds {
                grid.push(eval(d)?);
            }
            let pts: Vec<_> = grid.iter().map(|p| (p.d, p.perfect.fraction)).collect();
            empirical_d0 = interpolate_crossing(&pts);
        }
        &SweepPlan::Bisection { lo, hi, rel_width } => {
            if !(lo > 0.0 && lo < hi && rel_width > 0.0) {
                return Err(Error::Parameter(format!(
                    "bisection needs 0 < lo < hi and a positive width, got [{lo}, {hi}] / {rel_width}"
                )));
            }
            let mut a = eval(lo)?;
            let mut b = eval(hi)?;
            grid.push(a);
            grid.push(b);
            if a.perfect.fraction <= 0.5 && b.perfect.fraction >= 0.5 {
                while (b.d - a.d) / a.d > rel_width {
                    let mid = eval(0.5 * (a.d + b.d))?;
                    grid.push(mid);
                    if mid.perfect.fraction < 0.5 {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                empirical_d0 = crossing_between(
                    (a.d, a.perfect.fraction),
                    (b.d, b.perfect.fraction),
                );
            }
            grid.sort_by(|x, y| x.d.total_cmp(&y.d));
        }
    }
    let monotonicity_violations = monotonicity_violations(&grid);
    Ok(SweepResult {
        n: config.n,
        alpha: config.alpha,
        model: config.model,
        side,
        seed: config.seed,
        trials,
        grid,
        predicted_d0,
        empirical_d0,
        monotonicity_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankProfile {
    pub n: usize,
    pub alpha: f64,
    pub d: f64,
    pub trials: u64,
    /// Mean partner rank over the matched candidates of each trial.
    pub per_trial_mean: Vec<f64>,
    pub mean_rank: f64,
    pub bound: f64,
    /// Unmatched candidates over all candidate slots of all trials.
    pub unmatched_frac: f64,
    pub min_rank: usize,
    pub max_rank: usize,
}

/// Mean rank of the candidates' partners under candidate-proposing DA, which
/// is each candidate's best stable partner.
pub fn measure_rank_profile(config: &MarketConfig, trials: u64) -> Result<RankProfile> {
    config.validate()?;
    if config.model != Model::CandidateLists {
        return Err(Error::Parameter("rank profiles need the candidate_lists model".into()));
    }
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let runs = map_indices(trials, |i| {
        run_trial(&config.with_seed(stream_seed(config.seed, i)), Proposing::Cpda).map(|r| {
            let ranks: Vec<usize> = r.proposer_ranks().into_iter().flatten().collect();
            (ranks, r.unmatched_proposers.len())
        })
    });
    let mut per_trial_mean = Vec::with_capacity(trials as usize);
    let (mut unmatched, mut min_rank, mut max_rank) = (0usize, usize::MAX, 0usize);
    for run in runs {
        let (ranks, u) = run?;
        unmatched += u;
        if let (Some(&lo), Some(&hi)) = (ranks.iter().min(), ranks.iter().max()) {
            min_rank = min_rank.min(lo);
            max_rank = max_rank.max(hi);
        }
        if !ranks.is_empty() {
            per_trial_mean.push(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64);
        }
    }
    if max_rank == 0 {
        min_rank = 0;
    }
    Ok(RankProfile {
        n: config.n,
        alpha: config.alpha,
        d: config.d,
        trials,
        mean_rank: Summary::of(&per_trial_mean).mean,
        per_trial_mean,
        bound: rank_lower_bound(config),
        unmatched_frac: unmatched as f64 / (config.m() as f64 * trials as f64),
        min_rank,
        max_rank,
    })
}

// --- CSV ----------------------------------------------------------------------

/// Fixed-point rendering with 9 significant digits; `NA` for missing values.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return "NA".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_else(|| "NA".into())
}

pub const SWEEP_HEADER: &str = "n,alpha,side,d,trials,perfect_frac,ci_lo,ci_hi,predicted_d0,empirical_d0";
pub const RANK_HEADER: &str = "n,alpha,d,trials,mean_rank,bound,unmatched_frac";
pub const SIMULATE_HEADER: &str = "n,alpha,d,side,total_proposals,matched,perfect";
pub const BINS_HEADER: &str = "trial,n,throws,occupied,empty,qF";
pub const GAME_HEADER: &str =
    "p_g,p_b,p_n,streak,policy,closed_form,exact,bound,trials,win_frac,ci_lo,ci_hi,timeouts";

pub fn sweep_csv(r: &SweepResult) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for p in &r.grid {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            fmt_sig(r.alpha),
            r.side.as_str(),
            fmt_sig(p.d),
            p.perfect.trials,
            fmt_sig(p.perfect.fraction),
            fmt_sig(p.perfect.ci_low),
            fmt_sig(p.perfect.ci_high),
            fmt_sig(r.predicted_d0),
            fmt_opt(r.empirical_d0),
        );
    }
    out
}

pub fn rank_csv(profiles: &[RankProfile]) -> String {
    let mut out = format!("{RANK_HEADER}\n");
    for p in profiles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.n,
            fmt_sig(p.alpha),
            fmt_sig(p.d),
            p.trials,
            fmt_sig(p.mean_rank),
            fmt_sig(p.bound),
            fmt_sig(p.unmatched_frac),
        );
    }
    out
}

/// One `simulate` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulateRow {
    pub n: usize,
    pub alpha: f64,
    pub d: f64,
    pub side: Side,
    pub total_proposals: u64,
    pub matched: usize,
    pub perfect: bool,
}

impl SimulateRow {
    pub fn from_result(config: &MarketConfig, side: Side, r: &DAResult) -> Self {
        SimulateRow {
            n: config.n,
            alpha: config.alpha,
            d: config.d,
            side,
            total_proposals: r.total_proposals,
            matched: r.matched_count(),
            perfect: r.is_perfect(),
        }
    }
}

pub fn simulate_csv(rows: &[SimulateRow]) -> String {
    let mut out = format!("{SIMULATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            fmt_sig(r.alpha),
            fmt_sig(r.d),
            r.side.as_str(),
            r.total_proposals,
            r.matched,
            r.perfect as u8,
        );
    }
    out
}

pub fn bins_csv(runs: &[BinOccupancy]) -> String {
    let mut out = format!("{BINS_HEADER}\n");
    for (i, occ) in runs.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            occ.bins(),
            occ.throws,
            occ.occupied,
            occ.empty_bins(),
            fmt_sig(acceptance_prob_estimate(occ).rejection),
        );
    }
    out
}

pub fn game_csv(
    params: &GameParams,
    policy: &str,
    closed_form: Option<f64>,
    exact: Option<f64>,
    bound: Option<f64>,
    sim: &GameSimulation,
) -> String {
    format!(
        "{GAME_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        fmt_sig(params.p_g),
        fmt_sig(params.p_b),
        fmt_sig(params.p_n),
        params.streak,
        policy,
        fmt_opt(closed_form),
        fmt_opt(exact),
        fmt_opt(bound),
        sim.win.trials,
        fmt_sig(sim.win.fraction),
        fmt_sig(sim.win.ci_low),
        fmt_sig(sim.win.ci_high),
        sim.timeouts,
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Results with a fixed CSV schema.
pub trait CsvReport {
    fn to_csv(&self) -> String;
}

impl CsvReport for SweepResult {
    fn to_csv(&self) -> String {
        sweep_csv(self)
    }
}

impl CsvReport for [RankProfile] {
    fn to_csv(&self) -> String {
        rank_csv(self)
    }
}

impl CsvReport for [SimulateRow] {
    fn to_csv(&self) -> String {
        simulate_csv(self)
    }
}

impl CsvReport for [BinOccupancy] {
    fn to_csv(&self) -> String {
        bins_csv(self)
    }
}

/// Writes `results` to `path` in their CSV schema.
pub fn report_csv<R: CsvReport + ?Sized>(results: &R, path: &Path) -> Result<()> {
    write_text(path, &results.to_csv())
}
