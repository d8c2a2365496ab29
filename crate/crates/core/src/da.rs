//! Deferred acceptance (candidate- or job-proposing) with a full audit trail.
//!
//! The proposer that moves next is always the unmatched, non-exhausted
//! proposer of lowest position in the proposer ordering. Because a proposal
//! only ever frees the proposer itself or the receiver's previous partner, this
//! is the same as "the agent that was just rejected proposes again, otherwise
//! the next fresh proposer in order", which is how the loop below is written.
//!
//! The same loop serves explicit instances and lazily revealed ones; the only
//! difference is the [`PreferenceSource`] that answers "who does this proposer
//! try next" and "how does this receiver score this proposer".

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use serde::Serialize;

use crate::bins::BinOccupancy;
use crate::error::{Error, Result};
use crate::market::{sample_market, AgentId, MarketConfig, MarketInstance, Model, Side};
use crate::rng::{rng_from_seed, Rng};
use crate::stability::Matching;

/// Which side proposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Proposing {
    /// Candidates propose to jobs.
    Cpda,
    /// Jobs propose to candidates.
    Jpda,
}

impl Proposing {
    pub fn proposer_side(self) -> Side {
        match self {
            Proposing::Cpda => Side::Candidates,
            Proposing::Jpda => Side::Jobs,
        }
    }

    pub fn receiver_side(self) -> Side {
        self.proposer_side().opposite()
    }

    /// The list model whose lists are revealed lazily by this side's proposals.
    pub fn lazy_model(self) -> Model {
        match self {
            Proposing::Cpda => Model::CandidateLists,
            Proposing::Jpda => Model::JobLists,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Proposing::Cpda => "cpda",
            Proposing::Jpda => "jpda",
        }
    }
}

impl std::fmt::Display for Proposing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Proposing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpda" | "candidates" | "c" => Ok(Proposing::Cpda),
            "jpda" | "jobs" | "j" => Ok(Proposing::Jpda),
            other => Err(Error::Parameter(format!("unknown side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// The receiver held nobody.
    AcceptedFree,
    /// The receiver traded up and released the given proposer.
    AcceptedDisplacing(AgentId),
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProposalEvent {
    /// 1-based proposal index.
    pub t: u64,
    pub proposer: AgentId,
    pub proposee: AgentId,
    pub outcome: Outcome,
}

/// An offer received by a probe agent that rejects everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Offer {
    pub t: u64,
    pub proposer: AgentId,
    /// 1-based rank of the proposer on the probe's own list.
    pub probe_rank: usize,
    /// 1-based position of the probe on the proposer's list.
    pub proposer_rank: usize,
}

/// Outcome of one deferred acceptance run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DAResult {
    pub proposing: Proposing,
    /// Partner held by each receiver at termination.
    pub receiver_partner: Vec<Option<AgentId>>,
    /// Full proposal log; `None` when trace recording was off.
    pub proposal_log: Option<Vec<ProposalEvent>>,
    pub proposals_made: Vec<u32>,
    pub proposals_received: Vec<u32>,
    /// Proposers that exhausted their lists, ascending.
    pub unmatched_proposers: Vec<AgentId>,
    /// Receivers holding nobody at termination, ascending.
    pub unmatched_receivers: Vec<AgentId>,
    pub total_proposals: u64,
}

impl DAResult {
    pub fn num_proposers(&self) -> usize {
        self.proposals_made.len()
    }

    pub fn num_receivers(&self) -> usize {
        self.receiver_partner.len()
    }

    pub fn matched_count(&self) -> usize {
        self.receiver_partner.iter().filter(|p| p.is_some()).count()
    }

    /// Partner of each proposer.
    pub fn proposer_partner(&self) -> Vec<Option<AgentId>> {
        let mut out = vec![None; self.num_proposers()];
        for (r, p) in self.receiver_partner.iter().enumerate() {
            if let Some(p) = p {
                out[*p as usize] = Some(r as AgentId);
            }
        }
        out
    }

    /// 1-based rank each matched proposer obtained on its own list. A matched
    /// proposer's partner is always the last receiver it proposed to.
    pub fn proposer_ranks(&self) -> Vec<Option<usize>> {
        self.proposer_partner()
            .iter()
            .zip(&self.proposals_made)
            .map(|(p, &k)| p.map(|_| k as usize))
            .collect()
    }

    /// The matching as `(candidate, job)` pairs.
    pub fn matching(&self) -> Matching {
        let pairs = self
            .receiver_partner
            .iter()
            .enumerate()
            .filter_map(|(r, p)| p.map(|p| (p, r as AgentId)))
            .map(|(p, r)| match self.proposing {
                Proposing::Cpda => (p, r),
                Proposing::Jpda => (r, p),
            });
        Matching::from_pairs_unchecked(pairs)
    }

    /// Matched jobs, whichever side proposed.
    pub fn matched_jobs(&self) -> usize {
        self.matched_count()
    }

    /// True iff every job is matched.
    pub fn is_perfect(&self) -> bool {
        match self.proposing {
            Proposing::Cpda => self.unmatched_receivers.is_empty(),
            Proposing::Jpda => self.unmatched_proposers.is_empty(),
        }
    }

    /// Number of receivers that had received no proposal after the first `t`
    /// proposals. Requires the trace.
    pub fn unproposed_receivers_at(&self, t: u64) -> Result<usize> {
        let log = self.proposal_log.as_ref().ok_or_else(|| {
            Error::Parameter("unproposed_receivers_at needs a recorded trace".into())
        })?;
        let mut hit = vec![false; self.num_receivers()];
        let mut count = 0;
        for ev in log.iter().take(t as usize) {
            if !std::mem::replace(&mut hit[ev.proposee as usize], true) {
                count += 1;
            }
        }
        Ok(self.num_receivers() - count)
    }

    /// Line-delimited trace: `t proposer proposee outcome [displaced]`.
    pub fn trace_text(&self) -> Result<String> {
        let log = self
            .proposal_log
            .as_ref()
            .ok_or_else(|| Error::Parameter("no trace was recorded".into()))?;
        let mut out = String::new();
        for ev in log {
            let _ = match ev.outcome {
                Outcome::AcceptedFree => {
                    writeln!(out, "{} {} {} accepted_free", ev.t, ev.proposer, ev.proposee)
                }
                Outcome::AcceptedDisplacing(x) => writeln!(
                    out,
                    "{} {} {} accepted_displacing {}",
                    ev.t, ev.proposer, ev.proposee, x
                ),
                Outcome::Rejected => {
                    writeln!(out, "{} {} {} rejected", ev.t, ev.proposer, ev.proposee)
                }
            };
        }
        Ok(out)
    }
}

/// Run options.
#[derive(Debug, Clone, Default)]
pub struct DaOptions {
    /// Proposer ordering (a permutation); identity when `None`.
    pub order: Option<Vec<AgentId>>,
    pub record_trace: bool,
    /// A receiver that rejects every proposal and records it as an offer.
    pub probe: Option<AgentId>,
}

impl DaOptions {
    pub fn traced() -> Self {
        DaOptions {
            record_trace: true,
            ..Default::default()
        }
    }
}

/// Answers the two questions deferred acceptance asks about preferences.
pub trait PreferenceSource {
    fn num_proposers(&self) -> usize;
    fn num_receivers(&self) -> usize;
    fn list_len(&self, proposer: usize) -> usize;
    /// The `k`-th (0-based) receiver on `proposer`'s list; `k < list_len`.
    fn proposal(&mut self, proposer: usize, k: usize) -> usize;
    /// Score of `proposer` in `receiver`'s eyes (lower is better), or `None`
    /// when the receiver does not list the proposer at all.
    fn score(&mut self, receiver: usize, proposer: usize) -> Option<u64>;
    /// 1-based rank of `proposer` on `receiver`'s list, for probe offers.
    fn receiver_rank(&self, receiver: usize, proposer: usize) -> usize;
}

/// Preference source over explicit lists.
pub struct ExplicitSource<'a> {
    proposer_lists: &'a [Vec<AgentId>],
    /// Per receiver, `(proposer, 0-based rank)` sorted by proposer.
    ranks: Vec<Vec<(AgentId, u32)>>,
}

impl<'a> ExplicitSource<'a> {
    pub fn new(market: &'a MarketInstance, proposing: Proposing) -> Result<Self> {
        if !market.is_explicit() {
            return Err(Error::Parameter(
                "explicit deferred acceptance needs an explicit instance".into(),
            ));
        }
        let proposer_lists = market.lists(proposing.proposer_side());
        let receiver_lists = market.lists(proposing.receiver_side());
        Ok(Self::from_lists(proposer_lists, receiver_lists))
    }

    pub fn from_lists(proposer_lists: &'a [Vec<AgentId>], receiver_lists: &[Vec<AgentId>]) -> Self {
        let ranks = receiver_lists
            .iter()
            .map(|l| {
                let mut v: Vec<(AgentId, u32)> =
                    l.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
                v.sort_unstable();
                v
            })
            .collect();
        ExplicitSource {
            proposer_lists,
            ranks,
        }
    }

    /// Truncates `receiver`'s list to its first `len` entries.
    pub fn truncate_receiver(&mut self, receiver: usize, len: usize) {
        self.ranks[receiver].retain(|&(_, r)| (r as usize) < len);
    }

    fn rank(&self, receiver: usize, proposer: usize) -> Option<u32> {
        let v = &self.ranks[receiver];
        v.binary_search_by_key(&(proposer as AgentId), |&(p, _)| p)
            .ok()
            .map(|i| v[i].1)
    }
}

impl PreferenceSource for ExplicitSource<'_> {
    fn num_proposers(&self) -> usize {
        self.proposer_lists.len()
    }

    fn num_receivers(&self) -> usize {
        self.ranks.len()
    }

    fn list_len(&self, proposer: usize) -> usize {
        self.proposer_lists[proposer].len()
    }

    fn proposal(&mut self, proposer: usize, k: usize) -> usize {
        self.proposer_lists[proposer][k] as usize
    }

    fn score(&mut self, receiver: usize, proposer: usize) -> Option<u64> {
        self.rank(receiver, proposer).map(u64::from)
    }

    fn receiver_rank(&self, receiver: usize, proposer: usize) -> usize {
        self.rank(receiver, proposer).map_or(0, |r| r as usize + 1)
    }
}

/// Receivers a proposer has already tried.
#[derive(Default)]
struct Tried {
    list: Vec<AgentId>,
    set: Option<HashSet<AgentId>>,
}

impl Tried {
    const SPILL: usize = 32;

    fn contains(&self, r: AgentId) -> bool {
        match &self.set {
            Some(s) => s.contains(&r),
            None => self.list.contains(&r),
        }
    }

    fn insert(&mut self, r: AgentId) {
        self.list.push(r);
        if let Some(s) = &mut self.set {
            s.insert(r);
        } else if self.list.len() > Self::SPILL {
            self.set = Some(self.list.iter().copied().collect());
        }
    }
}

/// Lazily revealed list model (principle of deferred decisions).
///
/// A proposer's next receiver is uniform over receivers it has not tried yet,
/// drawn by throwing uniform "balls" over all receivers until an untried one is
/// hit; a receiver scores each proposer by an i.i.d. uniform 64-bit priority
/// drawn when that proposer first contacts it. When `occupancy` is set every
/// throw is recorded, which realizes the balls-in-bins coupling.
pub struct LazySource {
    proposers: usize,
    receivers: usize,
    list_len: usize,
    tried: Vec<Tried>,
    rng: Rng,
    occupancy: Option<BinOccupancy>,
}

impl LazySource {
    pub fn new(config: &MarketConfig, proposing: Proposing, rng: Rng) -> Result<Self> {
        config.validate()?;
        if config.model != proposing.lazy_model() {
            return Err(Error::Parameter(format!(
                "lazy {} needs the {} model, got {}",
                proposing,
                proposing.lazy_model(),
                config.model
            )));
        }
        let (proposers, receivers, list_len) = match proposing {
            Proposing::Cpda => (config.m(), config.n, config.candidate_list_len()),
            Proposing::Jpda => (config.n, config.m(), config.job_list_len()),
        };
        Ok(LazySource {
            proposers,
            receivers,
            list_len,
            tried: (0..proposers).map(|_| Tried::default()).collect(),
            rng,
            occupancy: None,
        })
    }

    /// Records every ball thrown while generating proposals.
    pub fn with_occupancy(mut self) -> Self {
        self.occupancy = Some(BinOccupancy::empty(self.receivers));
        self
    }

    pub fn into_occupancy(self) -> Option<BinOccupancy> {
        self.occupancy
    }

    fn draw_untried_dense(&mut self, proposer: usize) -> usize {
        let tried = &self.tried[proposer];
        let free: Vec<usize> = (0..self.receivers)
            .filter(|&r| !tried.contains(r as AgentId))
            .collect();
        free[self.rng.random_range(0..free.len())]
    }
}

impl PreferenceSource for LazySource {
    fn num_proposers(&self) -> usize {
        self.proposers
    }

    fn num_receivers(&self) -> usize {
        self.receivers
    }

    fn list_len(&self, _proposer: usize) -> usize {
        self.list_len
    }

    fn proposal(&mut self, proposer: usize, k: usize) -> usize {
        debug_assert_eq!(k, self.tried[proposer].list.len());
        let r = if self.occupancy.is_none() && 2 * k > self.receivers {
            // Rejection sampling degrades once most receivers are tried.
            self.draw_untried_dense(proposer)
        } else {
            loop {
                let x = self.rng.random_range(0..self.receivers);
                if let Some(occ) = &mut self.occupancy {
                    occ.add_ball(x);
                }
                if !self.tried[proposer].contains(x as AgentId) {
                    break x;
                }
            }
        };
        self.tried[proposer].insert(r as AgentId);
        r
    }

    fn score(&mut self, _receiver: usize, _proposer: usize) -> Option<u64> {
        Some(self.rng.random())
    }

    fn receiver_rank(&self, _receiver: usize, _proposer: usize) -> usize {
        0
    }
}

/// Deferred acceptance over any preference source.
///
/// Returns `(result, offers)`; `offers` is non-empty only for a probe run.
pub fn run_with_source<S: PreferenceSource>(
    source: &mut S,
    proposing: Proposing,
    opts: &DaOptions,
) -> Result<(DAResult, Vec<Offer>)> {
    let np = source.num_proposers();
    let nr = source.num_receivers();
    let order: Vec<AgentId> = match &opts.order {
        Some(o) => {
            check_permutation(o, np)?;
            o.clone()
        }
        None => (0..np as AgentId).collect(),
    };
    let cap = (np as u64) * (nr as u64);

    let mut made = vec![0u32; np];
    let mut received = vec![0u32; nr];
    let mut held: Vec<Option<(AgentId, u64)>> = vec![None; nr];
    let mut unmatched_proposers = Vec::new();
    let mut log = opts.record_trace.then(Vec::new);
    let mut offers = Vec::new();
    let mut t: u64 = 0;
    let mut next_fresh = 0usize;
    let mut current: Option<usize> = None;

    loop {
        let p = match current.take() {
            Some(p) => p,
            None => {
                let mut found = None;
                while next_fresh < order.len() {
                    let cand = order[next_fresh] as usize;
                    next_fresh += 1;
                    if source.list_len(cand) == 0 {
                        unmatched_proposers.push(cand as AgentId);
                    } else {
                        found = Some(cand);
                        break;
                    }
                }
                match found {
                    Some(p) => p,
                    None => break,
                }
            }
        };
        let k = made[p] as usize;
        let r = source.proposal(p, k);
        if r >= nr {
            return Err(Error::Invariant(format!(
                "proposer {p} proposed to out-of-range receiver {r}"
            )));
        }
        made[p] += 1;
        received[r] += 1;
        t += 1;
        if t > cap {
            return Err(Error::Invariant(format!(
                "proposal count exceeded the m*n cap of {cap}"
            )));
        }
        let exhausted = made[p] as usize == source.list_len(p);

        let outcome = if opts.probe == Some(r as AgentId) {
            offers.push(Offer {
                t,
                proposer: p as AgentId,
                probe_rank: 0,
                proposer_rank: k + 1,
            });
            Outcome::Rejected
        } else {
            match source.score(r, p) {
                None => Outcome::Rejected,
                Some(s) => match held[r] {
                    None => {
                        held[r] = Some((p as AgentId, s));
                        Outcome::AcceptedFree
                    }
                    Some((q, qs)) if (s, p as AgentId) < (qs, q) => {
                        held[r] = Some((p as AgentId, s));
                        Outcome::AcceptedDisplacing(q)
                    }
                    Some(_) => Outcome::Rejected,
                },
            }
        };
        if let Some(log) = &mut log {
            log.push(ProposalEvent {
                t,
                proposer: p as AgentId,
                proposee: r as AgentId,
                outcome,
            });
        }
        match outcome {
            Outcome::AcceptedFree => {}
            Outcome::AcceptedDisplacing(q) => {
                let q = q as usize;
                if (made[q] as usize) < source.list_len(q) {
                    current = Some(q);
                } else {
                    unmatched_proposers.push(q as AgentId);
                }
            }
            Outcome::Rejected => {
                if exhausted {
                    unmatched_proposers.push(p as AgentId);
                } else {
                    current = Some(p);
                }
            }
        }
    }

    unmatched_proposers.sort_unstable();
    let receiver_partner: Vec<Option<AgentId>> = held.iter().map(|h| h.map(|(p, _)| p)).collect();
    let unmatched_receivers = receiver_partner
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(r, _)| r as AgentId)
        .collect();
    let result = DAResult {
        proposing,
        receiver_partner,
        proposal_log: log,
        proposals_made: made,
        proposals_received: received,
        unmatched_proposers,
        unmatched_receivers,
        total_proposals: t,
    };
    if let Some(probe) = opts.probe {
        for o in &mut offers {
            o.probe_rank = source.receiver_rank(probe as usize, o.proposer as usize);
        }
    }
    Ok((result, offers))
}

fn check_permutation(order: &[AgentId], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Parameter(format!(
            "proposer order has {} entries for {} proposers",
            order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &a in order {
        let a = a as usize;
        if a >= n || std::mem::replace(&mut seen[a], true) {
            return Err(Error::Parameter("proposer order is not a permutation".into()));
        }
    }
    Ok(())
}

/// Deferred acceptance on an explicit instance.
pub fn run_da(market: &MarketInstance, proposing: Proposing, opts: &DaOptions) -> Result<DAResult> {
    let mut source = ExplicitSource::new(market, proposing)?;
    run_with_source(&mut source, proposing, opts).map(|(r, _)| r)
}

/// Deferred acceptance on a lazily revealed list-model market drawn from
/// `config.seed`. `config.model` must be the proposing side's list model.
pub fn run_da_lazy(config: &MarketConfig, proposing: Proposing, opts: &DaOptions) -> Result<DAResult> {
    if opts.probe.is_some() {
        return Err(Error::Parameter("probe runs need an explicit instance".into()));
    }
    let mut source = LazySource::new(config, proposing, rng_from_seed(config.seed))?;
    run_with_source(&mut source, proposing, opts).map(|(r, _)| r)
}

/// Job-proposing deferred acceptance in which candidate `probe` rejects every
/// proposal; returns every offer the probe received, in arrival order.
///
/// The smallest `probe_rank` among the offers is the probe's best stable
/// partner rank; no offers means the probe is unmatched in every stable matching.
pub fn continue_rejecting_on(market: &MarketInstance, probe: AgentId) -> Result<Vec<Offer>> {
    if probe as usize >= market.num_candidates() {
        return Err(Error::Parameter(format!(
            "probe {probe} out of range for {} candidates",
            market.num_candidates()
        )));
    }
    let mut source = ExplicitSource::new(market, Proposing::Jpda)?;
    let opts = DaOptions {
        probe: Some(probe),
        ..Default::default()
    };
    run_with_source(&mut source, Proposing::Jpda, &opts).map(|(_, offers)| offers)
}

/// [`continue_rejecting_on`] over a job-lists market sampled from `config`.
pub fn continue_rejecting(config: &MarketConfig, probe: AgentId) -> Result<Vec<Offer>> {
    if config.model != Model::JobLists {
        return Err(Error::Parameter("continue_rejecting needs the job_lists model".into()));
    }
    let market = sample_market(config)?;
    continue_rejecting_on(&market, probe)
}

// --- rejection chains -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainAction {
    Accept,
    Reject,
}

/// One `(proposer-side agent, receiver, accept|reject)` entry of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainEntry {
    pub proposer: AgentId,
    pub receiver: AgentId,
    pub action: ChainAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainTermination {
    UnmatchedReceiverAccepts,
    ProposerExhausted,
}

/// The displacement sequence started by one fresh proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectionChain {
    pub start_t: u64,
    pub end_t: u64,
    pub entries: Vec<ChainEntry>,
    pub termination: ChainTermination,
    /// Longest run of consecutive `Rejected` proposals in the chain.
    pub max_consecutive_rejections: u32,
}

impl RejectionChain {
    pub fn num_proposals(&self) -> u64 {
        self.end_t - self.start_t + 1
    }
}

/// Splits a traced run into its maximal rejection chains.
///
/// A chain continues while the agent left without a partner by the last
/// proposal proposes next. It ends when a free receiver accepts, or when the
/// agent left without a partner never proposes again (its list is exhausted).
pub fn extract_rejection_chains(result: &DAResult) -> Result<Vec<RejectionChain>> {
    let log = result
        .proposal_log
        .as_ref()
        .ok_or_else(|| Error::Structural("result carries no proposal log".into()))?;
    validate_log(result, log)?;

    let mut chains = Vec::new();
    let mut entries = Vec::new();
    let mut start = None;
    let mut run = 0u32;
    let mut best_run = 0u32;
    let mut retired = vec![false; result.num_proposers()];
    for (i, ev) in log.iter().enumerate() {
        if retired[ev.proposer as usize] {
            return Err(Error::Structural(format!(
                "proposer {} proposes at t = {} after its chain ended it",
                ev.proposer, ev.t
            )));
        }
        let start_t = *start.get_or_insert(ev.t);
        let next = log.get(i + 1).map(|e| e.proposer);
        let left_over = match ev.outcome {
            Outcome::AcceptedFree => None,
            Outcome::AcceptedDisplacing(q) => Some(q),
            Outcome::Rejected => Some(ev.proposer),
        };
        match ev.outcome {
            Outcome::Rejected => {
                run += 1;
                best_run = best_run.max(run);
                entries.push(ChainEntry {
                    proposer: ev.proposer,
                    receiver: ev.proposee,
                    action: ChainAction::Reject,
                });
            }
            Outcome::AcceptedFree => {
                run = 0;
                entries.push(ChainEntry {
                    proposer: ev.proposer,
                    receiver: ev.proposee,
                    action: ChainAction::Accept,
                });
            }
            Outcome::AcceptedDisplacing(q) => {
                run = 0;
                entries.push(ChainEntry {
                    proposer: ev.proposer,
                    receiver: ev.proposee,
                    action: ChainAction::Accept,
                });
                entries.push(ChainEntry {
                    proposer: q,
                    receiver: ev.proposee,
                    action: ChainAction::Reject,
                });
            }
        }
        let termination = match left_over {
            None => Some(ChainTermination::UnmatchedReceiverAccepts),
            Some(q) if next != Some(q) => {
                retired[q as usize] = true;
                Some(ChainTermination::ProposerExhausted)
            }
            Some(_) => None,
        };
        if let Some(termination) = termination {
            chains.push(RejectionChain {
                start_t,
                end_t: ev.t,
                entries: std::mem::take(&mut entries),
                termination,
                max_consecutive_rejections: best_run,
            });
            start = None;
            run = 0;
            best_run = 0;
        }
    }
    Ok(chains)
}

fn validate_log(result: &DAResult, log: &[ProposalEvent]) -> Result<()> {
    if log.len() as u64 != result.total_proposals {
        return Err(Error::Structural(format!(
            "log has {} events but total_proposals is {}",
            log.len(),
            result.total_proposals
        )));
    }
    let mut seen = HashSet::with_capacity(log.len());
    for (i, ev) in log.iter().enumerate() {
        if ev.t != i as u64 + 1 {
            return Err(Error::Structural(format!(
                "event {i} has t = {}, expected {}",
                ev.t,
                i + 1
            )));
        }
        if ev.proposer as usize >= result.num_proposers()
            || ev.proposee as usize >= result.num_receivers()
        {
            return Err(Error::Structural(format!("event t = {} names an unknown agent", ev.t)));
        }
        if !seen.insert((ev.proposer, ev.proposee)) {
            return Err(Error::Structural(format!(
                "proposer {} proposes to {} twice",
                ev.proposer, ev.proposee
            )));
        }
    }
    Ok(())
}

/// Chains as one JSON object per line.
pub fn chains_to_jsonl(chains: &[RejectionChain]) -> String {
    let mut out = String::new();
    for c in chains {
        out.push_str(&serde_json::to_string(c).expect("chain serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketConfig;

    /// c1:(j1,j2), c2:(j1,j2); both jobs rank c1 over c2 (0-based ids).
    pub(crate) fn two_by_two() -> MarketInstance {
        let cfg = MarketConfig::new(2, 0.0, 2.0, Model::CandidateLists, 0);
        MarketInstance::from_lists(cfg, vec![vec![0, 1], vec![0, 1]], vec![vec![0, 1], vec![0, 1]])
            .unwrap()
    }

    #[test]
    fn two_by_two_hand_trace() {
        let r = run_da(&two_by_two(), Proposing::Cpda, &DaOptions::traced()).unwrap();
        assert_eq!(r.receiver_partner, vec![Some(0), Some(1)]);
        assert_eq!(r.total_proposals, 3);
        let log = r.proposal_log.as_ref().unwrap();
        assert_eq!(log[0].outcome, Outcome::AcceptedFree);
        assert_eq!((log[1].proposer, log[1].proposee, log[1].outcome), (1, 0, Outcome::Rejected));
        assert_eq!(log[2].outcome, Outcome::AcceptedFree);
    }

    #[test]
    fn two_by_two_chains() {
        let r = run_da(&two_by_two(), Proposing::Cpda, &DaOptions::traced()).unwrap();
        let chains = extract_rejection_chains(&r).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(
            chains[0].entries,
            vec![ChainEntry { proposer: 0, receiver: 0, action: ChainAction::Accept }]
        );
        assert_eq!(
            chains[1].entries,
            vec![
                ChainEntry { proposer: 1, receiver: 0, action: ChainAction::Reject },
                ChainEntry { proposer: 1, receiver: 1, action: ChainAction::Accept },
            ]
        );
        assert!(chains
            .iter()
            .all(|c| c.termination == ChainTermination::UnmatchedReceiverAccepts));
    }

    #[test]
    fn distinct_mutual_top_choices_are_all_free_accepts() {
        let cfg = MarketConfig::new(3, 0.0, 2.0, Model::CandidateLists, 0);
        let m = MarketInstance::from_lists(
            cfg,
            vec![vec![2, 0], vec![0, 1], vec![1, 2]],
            vec![vec![1, 0], vec![2, 1], vec![0, 2]],
        )
        .unwrap();
        let r = run_da(&m, Proposing::Cpda, &DaOptions::traced()).unwrap();
        assert_eq!(r.total_proposals, 3);
        let chains = extract_rejection_chains(&r).unwrap();
        assert_eq!(chains.len(), 3);
        assert!(chains.iter().all(|c| c.entries.len() == 1
            && c.termination == ChainTermination::UnmatchedReceiverAccepts));
    }

    #[test]
    fn displaced_exhausted_agent_ends_chain() {
        // c0 lists only j0; c1 lists j0 and j0 prefers c1.
        let cfg = MarketConfig::new(1, 1.0, 1.0, Model::CandidateLists, 0);
        let m = MarketInstance::from_lists(cfg, vec![vec![0], vec![0]], vec![vec![1, 0]]).unwrap();
        let r = run_da(&m, Proposing::Cpda, &DaOptions::traced()).unwrap();
        assert_eq!(r.unmatched_proposers, vec![0]);
        let chains = extract_rejection_chains(&r).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[1].termination, ChainTermination::ProposerExhausted);
        assert_eq!(chains[1].entries.len(), 2);
    }

    #[test]
    fn empty_lists_are_unmatched_without_proposals() {
        let cfg = MarketConfig::new(1, 1.0, 1.0, Model::CandidateLists, 0);
        let m = MarketInstance::from_lists(cfg, vec![vec![], vec![0]], vec![vec![1]]).unwrap();
        let r = run_da(&m, Proposing::Cpda, &DaOptions::default()).unwrap();
        assert_eq!(r.unmatched_proposers, vec![0]);
        assert_eq!(r.total_proposals, 1);
    }

    #[test]
    fn unlisted_proposer_is_rejected() {
        // j0 does not list c0.
        let cfg = MarketConfig::new(1, 0.0, 1.0, Model::CandidateLists, 0);
        let m = MarketInstance::from_lists(cfg, vec![vec![0]], vec![vec![]]).unwrap();
        let r = run_da(&m, Proposing::Cpda, &DaOptions::default()).unwrap();
        assert_eq!(r.unmatched_proposers, vec![0]);
        assert_eq!(r.unmatched_receivers, vec![0]);
    }

    #[test]
    fn lazy_singleton() {
        let cfg = MarketConfig::new(1, 0.0, 1.0, Model::CandidateLists, 3);
        let r = run_da_lazy(&cfg, Proposing::Cpda, &DaOptions::traced()).unwrap();
        assert_eq!(r.total_proposals, 1);
        assert_eq!(r.proposal_log.unwrap()[0].outcome, Outcome::AcceptedFree);
        assert_eq!(r.receiver_partner, vec![Some(0)]);
    }

    #[test]
    fn lazy_requires_matching_model() {
        let cfg = MarketConfig::new(4, 0.0, 2.0, Model::JobLists, 3);
        assert!(matches!(
            run_da_lazy(&cfg, Proposing::Cpda, &DaOptions::default()),
            Err(Error::Parameter(_))
        ));
        assert!(run_da_lazy(&cfg, Proposing::Jpda, &DaOptions::default()).is_ok());
    }

    #[test]
    fn lazy_never_repeats_a_pair() {
        for seed in 0..20 {
            let cfg = MarketConfig::new(30, 0.3, 30.0, Model::CandidateLists, seed);
            let r = run_da_lazy(&cfg, Proposing::Cpda, &DaOptions::traced()).unwrap();
            let log = r.proposal_log.unwrap();
            let set: HashSet<_> = log.iter().map(|e| (e.proposer, e.proposee)).collect();
            assert_eq!(set.len(), log.len());
        }
    }

    #[test]
    fn bad_order_is_rejected() {
        let opts = DaOptions { order: Some(vec![0, 0]), ..Default::default() };
        assert!(run_da(&two_by_two(), Proposing::Cpda, &opts).is_err());
    }

    #[test]
    fn probe_with_no_offers() {
        // Nobody lists candidate 1.
        let cfg = MarketConfig::new(1, 1.0, 1.0, Model::JobLists, 0);
        let m = MarketInstance::from_lists(cfg, vec![vec![0], vec![]], vec![vec![0]]).unwrap();
        assert!(continue_rejecting_on(&m, 1).unwrap().is_empty());
        assert!(continue_rejecting_on(&m, 2).is_err());
    }

    #[test]
    fn probe_singleton_gets_one_offer() {
        let cfg = MarketConfig::new(1, 0.0, 1.0, Model::JobLists, 5);
        let offers = continue_rejecting(&cfg, 0).unwrap();
        assert_eq!(offers.len(), 1);
        assert_eq!(offers[0].probe_rank, 1);
        assert_eq!(offers[0].proposer_rank, 1);
    }

    #[test]
    fn malformed_logs_are_structural_errors() {
        let mut r = run_da(&two_by_two(), Proposing::Cpda, &DaOptions::traced()).unwrap();
        r.proposal_log.as_mut().unwrap()[1].t = 7;
        assert!(matches!(extract_rejection_chains(&r), Err(Error::Structural(_))));

        let mut r = run_da(&two_by_two(), Proposing::Cpda, &DaOptions::traced()).unwrap();
        r.proposal_log.as_mut().unwrap().pop();
        assert!(matches!(extract_rejection_chains(&r), Err(Error::Structural(_))));

        let r = run_da(&two_by_two(), Proposing::Cpda, &DaOptions::default()).unwrap();
        assert!(matches!(extract_rejection_chains(&r), Err(Error::Structural(_))));
    }

    #[test]
    fn trace_text_format() {
        let cfg = MarketConfig::new(1, 1.0, 1.0, Model::CandidateLists, 0);
        let m = MarketInstance::from_lists(cfg, vec![vec![0], vec![0]], vec![vec![1, 0]]).unwrap();
        let r = run_da(&m, Proposing::Cpda, &DaOptions::traced()).unwrap();
        assert_eq!(r.trace_text().unwrap(), "1 0 0 accepted_free\n2 1 0 accepted_displacing 0\n");
    }
}
