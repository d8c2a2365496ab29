//! Stability checks and brute-force ground truth for small markets.
//!
//! Ranks are 1-based positions on the agent's own list.

use serde::Serialize;

use crate::da::{run_with_source, DaOptions, ExplicitSource, Proposing};
use crate::error::{Error, Result};
use crate::market::{AgentId, MarketInstance};

/// A one-to-one set of `(candidate, job)` pairs, kept sorted by candidate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Matching {
    pairs: Vec<(AgentId, AgentId)>,
}

impl Matching {
    pub fn empty() -> Self {
        Matching { pairs: Vec::new() }
    }

    /// Builds a matching, rejecting any agent used twice.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (AgentId, AgentId)>) -> Result<Self> {
        let m = Self::from_pairs_unchecked(pairs);
        let mut jobs: Vec<AgentId> = m.pairs.iter().map(|&(_, j)| j).collect();
        jobs.sort_unstable();
        let dup_c = m.pairs.windows(2).any(|w| w[0].0 == w[1].0);
        let dup_j = jobs.windows(2).any(|w| w[0] == w[1]);
        if dup_c || dup_j {
            return Err(Error::Structural("matching is not one-to-one".into()));
        }
        Ok(m)
    }

    pub(crate) fn from_pairs_unchecked(pairs: impl IntoIterator<Item = (AgentId, AgentId)>) -> Self {
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        Matching { pairs }
    }

    pub fn pairs(&self) -> &[(AgentId, AgentId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(partner of each candidate, partner of each job)`.
    pub fn partner_maps(&self, m: usize, n: usize) -> (Vec<Option<AgentId>>, Vec<Option<AgentId>>) {
        let mut cp = vec![None; m];
        let mut jp = vec![None; n];
        for &(c, j) in &self.pairs {
            cp[c as usize] = Some(j);
            jp[j as usize] = Some(c);
        }
        (cp, jp)
    }

    /// Parses `c j` pairs, one per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |t: Option<&str>| -> Result<AgentId> {
                t.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Structural(format!("bad matching line `{line}`")))
            };
            let c = parse(it.next())?;
            let j = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::Structural(format!("bad matching line `{line}`")));
            }
            pairs.push((c, j));
        }
        Matching::from_pairs(pairs)
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(c, j)| format!("{c} {j}\n")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BlockingReason {
    /// Both prefer each other to their current partners.
    MutualPreference,
    /// The candidate is matched to a job it does not list.
    CandidatePrefersUnmatched,
    /// The job is matched to a candidate it does not list.
    JobPrefersUnmatched,
}

impl BlockingReason {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockingReason::MutualPreference => "mutual_preference",
            BlockingReason::CandidatePrefersUnmatched => "candidate_prefers_unmatched",
            BlockingReason::JobPrefersUnmatched => "job_prefers_unmatched",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BlockingPair {
    pub candidate: AgentId,
    pub job: AgentId,
    pub reason: BlockingReason,
}

/// Per job, `(candidate, 0-based rank)` sorted by candidate.
fn job_rank_table(market: &MarketInstance) -> Vec<Vec<(AgentId, u32)>> {
    market
        .job_lists
        .iter()
        .map(|l| {
            let mut v: Vec<_> = l.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

fn lookup(table: &[(AgentId, u32)], key: AgentId) -> Option<u32> {
    table
        .binary_search_by_key(&key, |&(c, _)| c)
        .ok()
        .map(|i| table[i].1)
}

/// Every blocking pair of `matching` in `market`; empty iff the matching is stable.
///
/// A pair matched although neither side lists the other is a structural
/// error. A pair listed by one side only blocks through the other side, which
/// prefers being unmatched.
pub fn find_blocking_pairs(market: &MarketInstance, matching: &Matching) -> Result<Vec<BlockingPair>> {
    if !market.is_explicit() {
        return Err(Error::Parameter("stability checks need an explicit instance".into()));
    }
    let (m, n) = (market.num_candidates(), market.num_jobs());
    for &(c, j) in matching.pairs() {
        if c as usize >= m || j as usize >= n {
            return Err(Error::Structural(format!("pair ({c}, {j}) is out of range")));
        }
    }
    let ranks = job_rank_table(market);
    let (cp, jp) = matching.partner_maps(m, n);
    let mut out = Vec::new();

    for &(c, j) in matching.pairs() {
        let c_lists = market.candidate_lists[c as usize].contains(&j);
        let j_lists = lookup(&ranks[j as usize], c).is_some();
        match (c_lists, j_lists) {
            (false, false) => {
                return Err(Error::Structural(format!(
                    "pair ({c}, {j}) is not an edge of the instance"
                )))
            }
            (false, true) => out.push(BlockingPair {
                candidate: c,
                job: j,
                reason: BlockingReason::CandidatePrefersUnmatched,
            }),
            (true, false) => out.push(BlockingPair {
                candidate: c,
                job: j,
                reason: BlockingReason::JobPrefersUnmatched,
            }),
            (true, true) => {}
        }
    }

    for (c, list) in market.candidate_lists.iter().enumerate() {
        let c = c as AgentId;
        for &j in list {
            if cp[c as usize] == Some(j) {
                // Everything after the partner is worse.
                break;
            }
            let Some(rank_c) = lookup(&ranks[j as usize], c) else {
                continue;
            };
            let job_prefers = match jp[j as usize] {
                None => true,
                Some(cur) => lookup(&ranks[j as usize], cur).is_none_or(|r| rank_c < r),
            };
            if job_prefers {
                out.push(BlockingPair {
                    candidate: c,
                    job: j,
                    reason: BlockingReason::MutualPreference,
                });
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn is_stable(market: &MarketInstance, matching: &Matching) -> Result<bool> {
    Ok(find_blocking_pairs(market, matching)?.is_empty())
}

/// True iff all `n` jobs are matched.
pub fn is_perfect(matching: &Matching, n: usize) -> bool {
    let mut seen = vec![false; n];
    for &(_, j) in matching.pairs() {
        if let Some(s) = seen.get_mut(j as usize) {
            *s = true;
        }
    }
    seen.into_iter().all(|s| s)
}

/// Largest side accepted by the brute-force enumerator.
pub const ENUMERATION_LIMIT: usize = 8;

/// Every matching of the instance graph (pairs listed by both sides).
pub fn enumerate_matchings(market: &MarketInstance) -> Result<Vec<Matching>> {
    let (m, n) = (market.num_candidates(), market.num_jobs());
    if m > ENUMERATION_LIMIT || n > ENUMERATION_LIMIT {
        return Err(Error::Scale(format!(
            "enumeration is limited to {ENUMERATION_LIMIT}x{ENUMERATION_LIMIT}, got {m} candidates and {n} jobs"
        )));
    }
    if !market.is_explicit() {
        return Err(Error::Parameter("enumeration needs an explicit instance".into()));
    }
    let ranks = job_rank_table(market);
    let edges: Vec<Vec<AgentId>> = market
        .candidate_lists
        .iter()
        .enumerate()
        .map(|(c, l)| {
            l.iter()
                .copied()
                .filter(|&j| lookup(&ranks[j as usize], c as AgentId).is_some())
                .collect()
        })
        .collect();

    fn go(
        c: usize,
        edges: &[Vec<AgentId>],
        used: &mut [bool],
        cur: &mut Vec<(AgentId, AgentId)>,
        out: &mut Vec<Matching>,
    ) {
        if c == edges.len() {
            out.push(Matching::from_pairs_unchecked(cur.iter().copied()));
            return;
        }
        go(c + 1, edges, used, cur, out);
        for &j in &edges[c] {
            if !used[j as usize] {
                used[j as usize] = true;
                cur.push((c as AgentId, j));
                go(c + 1, edges, used, cur, out);
                cur.pop();
                used[j as usize] = false;
            }
        }
    }

    let mut out = Vec::new();
    go(0, &edges, &mut vec![false; n], &mut Vec::new(), &mut out);
    Ok(out)
}

/// All stable matchings, by exhaustive enumeration (at most 8x8).
pub fn enumerate_stable_matchings(market: &MarketInstance) -> Result<Vec<Matching>> {
    let mut out = Vec::new();
    for mu in enumerate_matchings(market)? {
        if find_blocking_pairs(market, &mu)?.is_empty() {
            out.push(mu);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StableRank {
    Rank(usize),
    Unmatched,
}

fn cpda_matches_job(market: &MarketInstance, job: usize, truncate_at: Option<usize>) -> Result<bool> {
    let mut source = ExplicitSource::new(market, Proposing::Cpda)?;
    if let Some(len) = truncate_at {
        source.truncate_receiver(job, len);
    }
    let (r, _) = run_with_source(&mut source, Proposing::Cpda, &DaOptions::default())?;
    Ok(r.receiver_partner[job].is_some())
}

/// Rank of `job`'s best stable partner.
///
/// A job has a stable partner of rank at most `i` exactly when it is still
/// matched by candidate-proposing DA after cutting its list after rank `i`, so
/// the answer is the smallest such `i`, found by binary search.
pub fn best_stable_rank(market: &MarketInstance, job: AgentId) -> Result<StableRank> {
    let j = job as usize;
    if j >= market.num_jobs() {
        return Err(Error::Parameter(format!(
            "job {job} out of range for {} jobs",
            market.num_jobs()
        )));
    }
    if !cpda_matches_job(market, j, None)? {
        return Ok(StableRank::Unmatched);
    }
    let (mut lo, mut hi) = (1usize, market.job_lists[j].len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if cpda_matches_job(market, j, Some(mid))? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(StableRank::Rank(lo))
}
