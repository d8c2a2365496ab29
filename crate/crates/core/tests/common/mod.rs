//! Shared brute-force checks for the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use dalab::da::{run_da, DAResult, DaOptions, Proposing};
use dalab::market::{sample_market, AgentId, MarketConfig, MarketInstance, Model, Side};
use dalab::rng::{rng_from_seed, stream_seed};
use dalab::stability::{enumerate_stable_matchings, find_blocking_pairs, Matching};

/// A random config with at most 6 agents per side, mixing models, imbalance and degree.
pub fn small_config(seed: u64) -> MarketConfig {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=6usize);
    let m = rng.random_range(n..=6usize);
    let alpha = (m - n) as f64 / n as f64;
    let model = [Model::Symmetric, Model::CandidateLists, Model::JobLists][rng.random_range(0..3)];
    let d = match model {
        Model::JobLists => rng.random_range(1..=m) as f64,
        Model::CandidateLists => rng.random_range(1..=n) as f64,
        Model::Symmetric => rng.random_range(0.5..=n as f64),
    };
    MarketConfig::new(n, alpha, d, model, stream_seed(seed, 1))
}

pub fn small_market(seed: u64) -> MarketInstance {
    let cfg = small_config(seed);
    sample_market(&cfg).expect("valid small config")
}

/// 1-based rank of `partner` for `agent`, with `usize::MAX` for unmatched.
fn rank_or_worst(market: &MarketInstance, side: Side, agent: AgentId, partner: Option<AgentId>) -> usize {
    partner
        .and_then(|p| market.rank_of(side, agent, p))
        .unwrap_or(usize::MAX)
}

/// Checks that candidate-proposing DA is stable, candidate-optimal and
/// job-pessimal, and that job-proposing DA is stable, job-optimal and
/// candidate-pessimal, against the enumerated stable matchings.
pub fn check_against_oracle(market: &MarketInstance) -> Result<(), String> {
    let stable = enumerate_stable_matchings(market).map_err(|e| e.to_string())?;
    if stable.is_empty() {
        return Err("no stable matching enumerated".into());
    }
    let (m, n) = (market.num_candidates(), market.num_jobs());
    for (proposing, optimal_side) in [(Proposing::Cpda, Side::Candidates), (Proposing::Jpda, Side::Jobs)] {
        let res = run_da(market, proposing, &DaOptions::default()).map_err(|e| e.to_string())?;
        let mu = res.matching();
        if !find_blocking_pairs(market, &mu).map_err(|e| e.to_string())?.is_empty() {
            return Err(format!("{proposing} output is not stable"));
        }
        if !stable.contains(&mu) {
            return Err(format!("{proposing} output missing from the enumeration"));
        }
        let (dc, dj) = mu.partner_maps(m, n);
        for other in &stable {
            let (oc, oj) = other.partner_maps(m, n);
            for c in 0..m {
                let mine = rank_or_worst(market, Side::Candidates, c as AgentId, dc[c]);
                let theirs = rank_or_worst(market, Side::Candidates, c as AgentId, oc[c]);
                let ok = if optimal_side == Side::Candidates { mine <= theirs } else { mine >= theirs };
                if !ok {
                    return Err(format!("{proposing}: candidate {c} violates optimality/pessimality"));
                }
            }
            for j in 0..n {
                let mine = rank_or_worst(market, Side::Jobs, j as AgentId, dj[j]);
                let theirs = rank_or_worst(market, Side::Jobs, j as AgentId, oj[j]);
                let ok = if optimal_side == Side::Jobs { mine <= theirs } else { mine >= theirs };
                if !ok {
                    return Err(format!("{proposing}: job {j} violates optimality/pessimality"));
                }
            }
        }
    }
    Ok(())
}

fn matched_sets(mu: &Matching) -> (BTreeSet<AgentId>, BTreeSet<AgentId>) {
    (
        mu.pairs().iter().map(|p| p.0).collect(),
        mu.pairs().iter().map(|p| p.1).collect(),
    )
}

fn proposal_multiset(res: &DAResult) -> Vec<(AgentId, AgentId)> {
    let mut v: Vec<_> = res
        .proposal_log
        .as_ref()
        .expect("traced run")
        .iter()
        .map(|e| (e.proposer, e.proposee))
        .collect();
    v.sort_unstable();
    v
}

/// Unmatched agents agree across every stable matching, and the matching and
/// the proposal multiset of both DA variants are unchanged under `orderings`
/// random proposer orders.
pub fn check_lone_wolf_and_order(market: &MarketInstance, seed: u64, orderings: usize) -> Result<(), String> {
    let stable = enumerate_stable_matchings(market).map_err(|e| e.to_string())?;
    let first = matched_sets(&stable[0]);
    if stable.iter().any(|mu| matched_sets(mu) != first) {
        return Err("matched sets differ between stable matchings".into());
    }
    let mut rng = rng_from_seed(seed);
    for proposing in [Proposing::Cpda, Proposing::Jpda] {
        let base = run_da(market, proposing, &DaOptions::traced()).map_err(|e| e.to_string())?;
        if matched_sets(&base.matching()) != first {
            return Err(format!("{proposing} matched set differs from the stable matchings"));
        }
        let base_props = proposal_multiset(&base);
        let k = match proposing {
            Proposing::Cpda => market.num_candidates(),
            Proposing::Jpda => market.num_jobs(),
        };
        for _ in 0..orderings {
            let mut order: Vec<AgentId> = (0..k as AgentId).collect();
            order.shuffle(&mut rng);
            let opts = DaOptions {
                order: Some(order),
                record_trace: true,
                probe: None,
            };
            let res = run_da(market, proposing, &opts).map_err(|e| e.to_string())?;
            if res.matching() != base.matching() {
                return Err(format!("{proposing} matching depends on the proposer order"));
            }
            if res.unmatched_proposers != base.unmatched_proposers
                || res.unmatched_receivers != base.unmatched_receivers
            {
                return Err(format!("{proposing} unmatched sets depend on the proposer order"));
            }
            if proposal_multiset(&res) != base_props {
                return Err(format!("{proposing} proposals depend on the proposer order"));
            }
        }
    }
    Ok(())
}
