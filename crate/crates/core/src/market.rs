//! Random two-sided markets with truncated preference lists.
//!
//! Three models are supported:
//!
//! * [`Model::Symmetric`]: every candidate-job edge is present independently
//!   with probability `d / n` and both endpoints rank their neighbours by a
//!   uniform permutation.
//! * [`Model::CandidateLists`]: every candidate lists `min(round(d), n)` jobs
//!   chosen uniformly without repetition, in uniform order. Each job ranks the
//!   candidates that listed it by i.i.d. uniform priority scores.
//! * [`Model::JobLists`]: the dual of `CandidateLists`.
//!
//! There are `m = round(n(1 + alpha))` candidates (rounded half up) and `n`
//! jobs. Agents are dense indices `0..m` and `0..n`. All sampling is a pure
//! function of the configuration's seed (see [`crate::rng`]).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{pair_key, rng_from_seed, Rng};

/// Agent index. Candidates are `0..m`, jobs are `0..n`.
pub type AgentId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Model {
    Symmetric,
    CandidateLists,
    JobLists,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Symmetric => "symmetric",
            Model::CandidateLists => "candidate_lists",
            Model::JobLists => "job_lists",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "symmetric" | "sym" => Ok(Model::Symmetric),
            "candidate_lists" | "candidates" | "c" => Ok(Model::CandidateLists),
            "job_lists" | "jobs" | "j" => Ok(Model::JobLists),
            other => Err(Error::Parameter(format!("unknown model `{other}`"))),
        }
    }
}

/// One side of the market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Candidates,
    Jobs,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Candidates => Side::Jobs,
            Side::Jobs => Side::Candidates,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Candidates => "candidates",
            Side::Jobs => "jobs",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "candidates" | "c" => Ok(Side::Candidates),
            "jobs" | "j" => Ok(Side::Jobs),
            other => Err(Error::Parameter(format!("unknown side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Representation {
    Explicit,
    LazyOracle,
}

/// Parameters of a random market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarketConfig {
    /// Number of jobs (the short side).
    pub n: usize,
    /// Imbalance; there are `round(n(1 + alpha))` candidates.
    pub alpha: f64,
    /// Edge parameter: probability `d / n` in the symmetric model, list length
    /// `round(d)` in the list models.
    pub d: f64,
    pub model: Model,
    pub seed: u64,
}

/// Round half up. Only used on non-negative reals.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

impl MarketConfig {
    pub fn new(n: usize, alpha: f64, d: f64, model: Model, seed: u64) -> Self {
        MarketConfig {
            n,
            alpha,
            d,
            model,
            seed,
        }
    }

    /// Number of candidates.
    pub fn m(&self) -> usize {
        round_half_up(self.n as f64 * (1.0 + self.alpha))
    }

    /// List length of each candidate in `CandidateLists`.
    pub fn candidate_list_len(&self) -> usize {
        round_half_up(self.d).min(self.n)
    }

    /// List length of each job in `JobLists`.
    pub fn job_list_len(&self) -> usize {
        round_half_up(self.d).min(self.m())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("n must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(Error::Parameter(format!(
                "d must be finite and > 0, got {}",
                self.d
            )));
        }
        match self.model {
            Model::Symmetric | Model::CandidateLists => {
                if self.d > self.n as f64 {
                    return Err(Error::Bounds(format!(
                        "d = {} exceeds n = {}",
                        self.d, self.n
                    )));
                }
            }
            Model::JobLists => {
                if round_half_up(self.d) > self.m() {
                    return Err(Error::Bounds(format!(
                        "round(d) = {} exceeds m = {}",
                        round_half_up(self.d),
                        self.m()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn with_d(&self, d: f64) -> Self {
        MarketConfig { d, ..*self }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MarketConfig { seed, ..*self }
    }
}

/// A market: ordered preference lists for both sides.
///
/// Lists run from most to least preferred. In the `LazyOracle` representation
/// both list vectors are empty and the engine draws preferences on demand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketInstance {
    pub config: MarketConfig,
    pub candidate_lists: Vec<Vec<AgentId>>,
    pub job_lists: Vec<Vec<AgentId>>,
    pub representation: Representation,
}

impl MarketInstance {
    /// Builds an explicit instance from lists, checking ranges and duplicates.
    pub fn from_lists(
        config: MarketConfig,
        candidate_lists: Vec<Vec<AgentId>>,
        job_lists: Vec<Vec<AgentId>>,
    ) -> Result<Self> {
        let inst = MarketInstance {
            config,
            candidate_lists,
            job_lists,
            representation: Representation::Explicit,
        };
        inst.check_lists()?;
        Ok(inst)
    }

    /// A lazily evaluated instance; nothing is materialized.
    pub fn lazy(config: MarketConfig) -> Result<Self> {
        config.validate()?;
        Ok(MarketInstance {
            config,
            candidate_lists: Vec::new(),
            job_lists: Vec::new(),
            representation: Representation::LazyOracle,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.candidate_lists.len()
    }

    pub fn num_jobs(&self) -> usize {
        self.job_lists.len()
    }

    pub fn lists(&self, side: Side) -> &[Vec<AgentId>] {
        match side {
            Side::Candidates => &self.candidate_lists,
            Side::Jobs => &self.job_lists,
        }
    }

    pub fn is_explicit(&self) -> bool {
        self.representation == Representation::Explicit
    }

    fn check_lists(&self) -> Result<()> {
        check_side(&self.candidate_lists, self.job_lists.len(), "candidate")?;
        check_side(&self.job_lists, self.candidate_lists.len(), "job")
    }

    /// True iff `c` lists `j` exactly when `j` lists `c`.
    pub fn is_edge_symmetric(&self) -> bool {
        let mut job_sets: Vec<Vec<AgentId>> = self.job_lists.clone();
        for l in &mut job_sets {
            l.sort_unstable();
        }
        let mut count = 0usize;
        for (c, list) in self.candidate_lists.iter().enumerate() {
            for &j in list {
                if job_sets[j as usize].binary_search(&(c as AgentId)).is_err() {
                    return false;
                }
                count += 1;
            }
        }
        count == self.job_lists.iter().map(Vec::len).sum::<usize>()
    }

    /// 1-based rank of `other` on `agent`'s list, if listed.
    pub fn rank_of(&self, side: Side, agent: AgentId, other: AgentId) -> Option<usize> {
        self.lists(side)[agent as usize]
            .iter()
            .position(|&x| x == other)
            .map(|p| p + 1)
    }

    /// Writes the line-oriented text form: a header `n m model d alpha seed`,
    /// then `c: j j ...` for every candidate and `j: c c ...` for every job.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cfg = &self.config;
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            self.num_jobs(),
            self.num_candidates(),
            cfg.model,
            cfg.d,
            cfg.alpha,
            cfg.seed
        ));
        for lists in [&self.candidate_lists, &self.job_lists] {
            for (a, list) in lists.iter().enumerate() {
                out.push_str(&a.to_string());
                out.push(':');
                for x in list {
                    out.push(' ');
                    out.push_str(&x.to_string());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Structural("empty instance file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Structural(format!(
                "header must be `n m model d alpha seed`, got `{header}`"
            )));
        }
        let bad = |what: &str| Error::Structural(format!("bad {what} in header `{header}`"));
        let n: usize = fields[0].parse().map_err(|_| bad("n"))?;
        let m: usize = fields[1].parse().map_err(|_| bad("m"))?;
        let model: Model = fields[2].parse().map_err(|_| bad("model"))?;
        let d: f64 = fields[3].parse().map_err(|_| bad("d"))?;
        let alpha: f64 = fields[4].parse().map_err(|_| bad("alpha"))?;
        let seed: u64 = fields[5].parse().map_err(|_| bad("seed"))?;

        let mut parse_block = |count: usize, what: &str| -> Result<Vec<Vec<AgentId>>> {
            let mut out = Vec::with_capacity(count);
            for expect in 0..count {
                let line = lines.next().ok_or_else(|| {
                    Error::Structural(format!("missing {what} line {expect}"))
                })?;
                let (id, rest) = line.split_once(':').ok_or_else(|| {
                    Error::Structural(format!("{what} line `{line}` lacks `:`"))
                })?;
                let id: usize = id.trim().parse().map_err(|_| {
                    Error::Structural(format!("bad {what} id in `{line}`"))
                })?;
                if id != expect {
                    return Err(Error::Structural(format!(
                        "expected {what} {expect}, found {id}"
                    )));
                }
                let list = rest
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<AgentId>().map_err(|_| {
                            Error::Structural(format!("bad entry `{t}` in {what} {id}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(list);
            }
            Ok(out)
        };
        let candidate_lists = parse_block(m, "candidate")?;
        let job_lists = parse_block(n, "job")?;
        if let Some(extra) = lines.next() {
            return Err(Error::Structural(format!("trailing line `{extra}`")));
        }
        let config = MarketConfig {
            n,
            alpha,
            d,
            model,
            seed,
        };
        MarketInstance::from_lists(config, candidate_lists, job_lists)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MarketInstance::from_text(&text)
    }
}

fn check_side(lists: &[Vec<AgentId>], other: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; other];
    for (a, list) in lists.iter().enumerate() {
        for &x in list {
            let xi = x as usize;
            if xi >= other {
                return Err(Error::Structural(format!(
                    "{what} {a} lists out-of-range agent {x}"
                )));
            }
            if seen[xi] {
                return Err(Error::Structural(format!(
                    "{what} {a} lists agent {x} twice"
                )));
            }
            seen[xi] = true;
        }
        for &x in list {
            seen[x as usize] = false;
        }
    }
    Ok(())
}

/// Samples an explicit instance of `config.model`. Deterministic in `config.seed`.
pub fn sample_market(config: &MarketConfig) -> Result<MarketInstance> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let (candidate_lists, job_lists) = match config.model {
        Model::Symmetric => sample_symmetric(config, &mut rng),
        Model::CandidateLists => {
            let (c, j) = sample_one_sided(config.m(), config.n, config.candidate_list_len(), &mut rng);
            (c, j)
        }
        Model::JobLists => {
            let (j, c) = sample_one_sided(config.n, config.m(), config.job_list_len(), &mut rng);
            (c, j)
        }
    };
    Ok(MarketInstance {
        config: *config,
        candidate_lists,
        job_lists,
        representation: Representation::Explicit,
    })
}

type ListPair = (Vec<Vec<AgentId>>, Vec<Vec<AgentId>>);

fn sample_symmetric(config: &MarketConfig, rng: &mut Rng) -> ListPair {
    let (m, n) = (config.m(), config.n);
    let p = config.d / n as f64;
    let mut cand: Vec<Vec<AgentId>> = vec![Vec::new(); m];
    let mut jobs: Vec<Vec<AgentId>> = vec![Vec::new(); n];
    let total = (m as u64) * (n as u64);
    if p >= 1.0 {
        cand.iter_mut().for_each(|l| l.extend(0..n as AgentId));
        jobs.iter_mut().for_each(|l| l.extend(0..m as AgentId));
    } else {
        // Geometric gaps between successive present edges in row-major order.
        let gaps = Geometric::new(p).expect("0 < p < 1");
        let mut pos = gaps.sample(rng);
        while pos < total {
            let c = (pos / n as u64) as usize;
            let j = (pos % n as u64) as usize;
            cand[c].push(j as AgentId);
            jobs[j].push(c as AgentId);
            pos = pos.saturating_add(1).saturating_add(gaps.sample(rng));
        }
    }
    for l in cand.iter_mut().chain(jobs.iter_mut()) {
        l.shuffle(rng);
    }
    (cand, jobs)
}

/// Proposers choose `len` receivers uniformly without repetition in uniform
/// order; receivers rank the proposers that chose them by i.i.d. priorities.
fn sample_one_sided(
    proposers: usize,
    receivers: usize,
    len: usize,
    rng: &mut Rng,
) -> ListPair {
    let mut plists = Vec::with_capacity(proposers);
    let mut buckets: Vec<Vec<(u64, AgentId)>> = vec![Vec::new(); receivers];
    for p in 0..proposers {
        let mut picks: Vec<AgentId> = rand::seq::index::sample(rng, receivers, len)
            .into_iter()
            .map(|x| x as AgentId)
            .collect();
        picks.shuffle(rng);
        for &r in &picks {
            buckets[r as usize].push((rng.random::<u64>(), p as AgentId));
        }
        plists.push(picks);
    }
    let rlists = buckets
        .into_iter()
        .map(|mut b| {
            b.sort_unstable();
            b.into_iter().map(|(_, p)| p).collect()
        })
        .collect();
    (plists, rlists)
}

/// `m1 ⊆_side m2`: every `side` agent's list in `m1` is a prefix of its list in
/// `m2`, and every opposite-side agent orders the entries common to both of its
/// lists the same way.
pub fn check_containment(m1: &MarketInstance, m2: &MarketInstance, side: Side) -> Result<bool> {
    if m1.num_candidates() != m2.num_candidates() || m1.num_jobs() != m2.num_jobs() {
        return Err(Error::Structural(format!(
            "agent counts differ: ({}, {}) vs ({}, {})",
            m1.num_candidates(),
            m1.num_jobs(),
            m2.num_candidates(),
            m2.num_jobs()
        )));
    }
    for (a, b) in m1.lists(side).iter().zip(m2.lists(side)) {
        if a.len() > b.len() || a[..] != b[..a.len()] {
            return Ok(false);
        }
    }
    let width = m1.lists(side).len();
    let mut pos = vec![usize::MAX; width];
    for (a, b) in m1.lists(side.opposite()).iter().zip(m2.lists(side.opposite())) {
        for (i, &x) in b.iter().enumerate() {
            pos[x as usize] = i;
        }
        let mut last = None;
        let mut ordered = true;
        for &x in a {
            let p = pos[x as usize];
            if p == usize::MAX {
                continue;
            }
            if last.is_some_and(|l| p < l) {
                ordered = false;
                break;
            }
            last = Some(p);
        }
        for &x in b {
            pos[x as usize] = usize::MAX;
        }
        if !ordered {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A coupled `(lower, mid, upper)` triple of list-model, symmetric and
/// list-model instances sharing their randomness.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichTriple {
    pub lower: MarketInstance,
    pub mid: MarketInstance,
    pub upper: MarketInstance,
    pub delta: f64,
    pub side: Side,
    pub containment_held: bool,
}

/// Mean list length of the proposing side in the symmetric model with `config`.
fn mean_degree(config: &MarketConfig, side: Side) -> f64 {
    match side {
        Side::Candidates => config.d,
        Side::Jobs => config.d * config.m() as f64 / config.n as f64,
    }
}

/// Samples the coupled triple used to move results between the list models and
/// the symmetric model.
///
/// Each opposite-side agent gets one total order over all agents (shared by all
/// three instances). Each `side` agent draws its symmetric-model degree `k` from
/// `Bin(width, d/n)` and a uniform repetition-free tuple of length
/// `max(k, round(mean(1 + delta)))`; the three instances take prefixes of lengths
/// `round(mean(1 - delta))`, `k` and `round(mean(1 + delta))`, each capped at the
/// opposite side's size. `mean` is `d` for candidates and `d m / n` for jobs.
pub fn sample_sandwich_triple(config: &MarketConfig, delta: f64, side: Side) -> Result<SandwichTriple> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if config.model != Model::Symmetric {
        return Err(Error::Parameter(
            "sandwich triples are built around a symmetric-model config".into(),
        ));
    }
    config.validate()?;
    let (m, n) = (config.m(), config.n);
    let (proposers, receivers) = match side {
        Side::Candidates => (m, n),
        Side::Jobs => (n, m),
    };
    let mean = mean_degree(config, side);
    let lower_len = round_half_up(mean * (1.0 - delta)).min(receivers);
    let upper_len = round_half_up(mean * (1.0 + delta)).min(receivers);
    let p = (config.d / n as f64).min(1.0);
    let degree = Binomial::new(receivers as u64, p).expect("valid binomial");

    let mut rng = rng_from_seed(config.seed);
    let order_seed: u64 = rng.random();

    let mut lists: [Vec<Vec<AgentId>>; 3] = Default::default();
    for _ in 0..proposers {
        let k = degree.sample(&mut rng) as usize;
        let len = k.max(upper_len).min(receivers);
        let mut tuple: Vec<AgentId> = rand::seq::index::sample(&mut rng, receivers, len)
            .into_iter()
            .map(|x| x as AgentId)
            .collect();
        tuple.shuffle(&mut rng);
        for (slot, l) in lists.iter_mut().zip([lower_len, k, upper_len]) {
            slot.push(tuple[..l].to_vec());
        }
    }

    let build = |plists: Vec<Vec<AgentId>>, cfg: MarketConfig| -> MarketInstance {
        let mut buckets: Vec<Vec<(u64, AgentId)>> = vec![Vec::new(); receivers];
        for (a, l) in plists.iter().enumerate() {
            for &r in l {
                buckets[r as usize].push((pair_key(order_seed, r as u64, a as u64), a as AgentId));
            }
        }
        let rlists: Vec<Vec<AgentId>> = buckets
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b.into_iter().map(|(_, a)| a).collect()
            })
            .collect();
        let (candidate_lists, job_lists) = match side {
            Side::Candidates => (plists, rlists),
            Side::Jobs => (rlists, plists),
        };
        MarketInstance {
            config: cfg,
            candidate_lists,
            job_lists,
            representation: Representation::Explicit,
        }
    };
    let list_model = match side {
        Side::Candidates => Model::CandidateLists,
        Side::Jobs => Model::JobLists,
    };
    let [l, mid, u] = lists;
    let lower = build(l, MarketConfig { model: list_model, d: lower_len as f64, ..*config });
    let mid = build(mid, *config);
    let upper = build(u, MarketConfig { model: list_model, d: upper_len as f64, ..*config });
    let containment_held =
        check_containment(&lower, &mid, side)? && check_containment(&mid, &upper, side)?;
    Ok(SandwichTriple {
        lower,
        mid,
        upper,
        delta,
        side,
        containment_held,
    })
}
