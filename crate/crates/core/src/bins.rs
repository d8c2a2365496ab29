//! Balls-in-bins processes and their coupling with deferred acceptance.

use rand::Rng as _;
use serde::Serialize;

use crate::da::{run_with_source, DAResult, DaOptions, LazySource, Proposing};
use crate::error::{Error, Result};
use crate::market::MarketConfig;
use crate::rng::{rng_from_seed, Rng};

/// Per-bin ball counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BinOccupancy {
    pub counts: Vec<u32>,
    pub throws: u64,
    pub occupied: usize,
}

impl BinOccupancy {
    pub fn empty(bins: usize) -> Self {
        BinOccupancy {
            counts: vec![0; bins],
            throws: 0,
            occupied: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn empty_bins(&self) -> usize {
        self.bins() - self.occupied
    }

    #[inline]
    pub fn add_ball(&mut self, bin: usize) {
        if self.counts[bin] == 0 {
            self.occupied += 1;
        }
        self.counts[bin] += 1;
        self.throws += 1;
    }

    pub fn throw(&mut self, rng: &mut Rng) -> usize {
        let b = rng.random_range(0..self.bins());
        self.add_ball(b);
        b
    }

    /// Throws balls until `stop` fires (counting balls already present).
    pub fn throw_until(&mut self, stop: StopRule, rng: &mut Rng) -> Result<()> {
        stop.validate(self.bins())?;
        while !stop.fired(self) {
            self.throw(rng);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopRule {
    FixedThrows(u64),
    OccupiedReaches(usize),
    AllOccupied,
}

impl StopRule {
    fn validate(self, bins: usize) -> Result<()> {
        match self {
            StopRule::OccupiedReaches(k) if k > bins => Err(Error::Parameter(format!(
                "cannot wait for {k} occupied bins out of {bins}"
            ))),
            _ => Ok(()),
        }
    }

    fn fired(self, occ: &BinOccupancy) -> bool {
        match self {
            StopRule::FixedThrows(t) => occ.throws >= t,
            StopRule::OccupiedReaches(k) => occ.occupied >= k,
            StopRule::AllOccupied => occ.occupied == occ.bins(),
        }
    }
}

/// Throws uniform balls into `bins` bins until `stop` fires.
pub fn run_balls_in_bins(bins: usize, stop: StopRule, seed: u64) -> Result<BinOccupancy> {
    if bins == 0 {
        return Err(Error::Parameter("need at least one bin".into()));
    }
    let mut occ = BinOccupancy::empty(bins);
    occ.throw_until(stop, &mut rng_from_seed(seed))?;
    Ok(occ)
}

/// Centering values for the number of receivers without a proposal after
/// `tau` proposals among `n` receivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnmatchedEstimate {
    /// `n e^{-tau/n}`.
    pub centered: f64,
    /// `n (1 - 1/n)^tau`, the exact expected number of empty bins.
    pub exact: f64,
}

pub fn unmatched_estimate(n: usize, tau: f64) -> UnmatchedEstimate {
    let nf = n as f64;
    UnmatchedEstimate {
        centered: nf * (-tau / nf).exp(),
        exact: nf * (1.0 - 1.0 / nf).powf(tau),
    }
}

/// Probability that `|unmatched - n e^{-tau/n}| > gamma n e^{-tau/n}` on one
/// side is at most this value.
pub fn unmatched_deviation_bound(n: usize, tau: f64, gamma: f64) -> f64 {
    2.0 * (tau / n as f64).exp() / (gamma * gamma * n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcceptanceEstimate {
    /// `q_F = 1 - (1/n) sum 1/(b_i + 1)`, the rejection-probability proxy.
    pub rejection: f64,
    pub acceptance: f64,
}

pub fn acceptance_prob_estimate(occ: &BinOccupancy) -> AcceptanceEstimate {
    let n = occ.bins() as f64;
    let acceptance = occ.counts.iter().map(|&b| 1.0 / (b as f64 + 1.0)).sum::<f64>() / n;
    AcceptanceEstimate {
        rejection: 1.0 - acceptance,
        acceptance,
    }
}

/// `kappa = n ln n - C n`, the throw count used for the `q_F` experiments.
pub fn kappa_for(n: usize, c: f64) -> u64 {
    let nf = n as f64;
    (nf * nf.ln() - c * nf).max(0.0).round() as u64
}

/// Centre `1 - n/(n + kappa)` and half-width `4 (n/kappa)^2` of the band for `E[q_F]`.
pub fn qf_band(n: usize, kappa: u64) -> (f64, f64) {
    let (nf, k) = (n as f64, kappa as f64);
    (1.0 - nf / (nf + k), 4.0 * (nf / k).powi(2))
}

/// A deferred acceptance run whose random proposals were generated by
/// throwing balls until an untried receiver was hit.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledTrace {
    pub da_result: DAResult,
    pub occupancy: BinOccupancy,
    /// `(proposals received, balls in bin)` per receiver.
    pub proposals_vs_balls: Vec<(u32, u32)>,
    /// Proposals made.
    pub tau: u64,
    /// Balls thrown.
    pub kappa: u64,
}

impl CoupledTrace {
    /// `j_i <= b_i` for every receiver and `tau <= kappa`.
    pub fn dominance_holds(&self) -> bool {
        self.tau <= self.kappa && self.proposals_vs_balls.iter().all(|&(j, b)| j <= b)
    }

    /// Receivers without a proposal are a subset of empty bins.
    pub fn unproposed_within_empty(&self) -> bool {
        self.proposals_vs_balls.iter().all(|&(j, b)| b > 0 || j == 0)
    }

    /// `(1/n) sum (1/(j_i + 1) - 1/(b_i + 1))` for the given occupancy (which
    /// must extend this trace's throws).
    pub fn qf_gap(&self, occ: &BinOccupancy) -> f64 {
        let n = self.proposals_vs_balls.len() as f64;
        self.proposals_vs_balls
            .iter()
            .zip(&occ.counts)
            .map(|(&(j, _), &b)| 1.0 / (j as f64 + 1.0) - 1.0 / (b as f64 + 1.0))
            .sum::<f64>()
            / n
    }
}

/// Runs lazy deferred acceptance on `config` with every random proposal drawn
/// through a shared balls-in-bins process (one bin per receiver).
pub fn run_coupled_da_bins(config: &MarketConfig, proposing: Proposing) -> Result<CoupledTrace> {
    let mut source = LazySource::new(config, proposing, rng_from_seed(config.seed))?.with_occupancy();
    let (da_result, _) = run_with_source(&mut source, proposing, &DaOptions::default())?;
    let occupancy = source.into_occupancy().expect("occupancy tracking was enabled");
    let proposals_vs_balls = da_result
        .proposals_received
        .iter()
        .zip(&occupancy.counts)
        .map(|(&j, &b)| (j, b))
        .collect();
    Ok(CoupledTrace {
        tau: da_result.total_proposals,
        kappa: occupancy.throws,
        da_result,
        occupancy,
        proposals_vs_balls,
    })
}
