//! The Good/Bad/Neutral multi-round game used to bound rejection chains.
//!
//! Every round produces Good with probability `p_G`, Bad with probability at
//! least `p_B` and Neutral otherwise. The game is won at the first Good and
//! lost once Bad has occurred `streak` times in a row. In the tight game the
//! Bad probability is exactly `p_B` every round; an adversary may raise it
//! round by round, which can only hurt the player.

use std::str::FromStr;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel::map_indices;
use crate::rng::{stream_rng, Rng};
use crate::stats::Proportion;

/// Rounds simulated per trial before the trial is abandoned as a timeout.
pub const ROUND_CAP: u64 = 10_000_000;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameParams {
    pub p_g: f64,
    pub p_b: f64,
    pub p_n: f64,
    /// Consecutive Bad rounds that lose the game.
    pub streak: u32,
}

impl GameParams {
    pub fn new(p_g: f64, p_b: f64, p_n: f64, streak: u32) -> Self {
        GameParams { p_g, p_b, p_n, streak }
    }

    /// The tight game with the Neutral probability taking the residual mass.
    pub fn tight(p_g: f64, p_b: f64, streak: u32) -> Self {
        GameParams::new(p_g, p_b, 1.0 - p_g - p_b, streak)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_g, self.p_b, self.p_n];
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter(format!(
                "probabilities must be finite and non-negative: {self:?}"
            )));
        }
        if self.p_g + self.p_b + self.p_n > 1.0 + SUM_TOLERANCE {
            return Err(Error::Parameter(format!(
                "p_G + p_B + p_N = {} exceeds 1",
                self.p_g + self.p_b + self.p_n
            )));
        }
        if self.streak == 0 {
            return Err(Error::Parameter("streak must be at least 1".into()));
        }
        Ok(())
    }

    /// Neutral probability of the tight game, `1 - p_G - p_B`.
    fn tight_neutral(&self) -> f64 {
        (1.0 - self.p_g - self.p_b).max(0.0)
    }
}

/// Winning probability of the tight game, `p_G (1 - p_B) / (p_G + p_N p_B^streak)`.
///
/// Requires `p_G + p_B + p_N = 1`. With `p_G = 0` the game is never won and
/// the value is 0 (this also covers `p_B = 1`). With `p_B = 0` and `p_G > 0`
/// the game is never lost and the value is 1, which the formula gives directly.
pub fn win_prob_closed_form(params: &GameParams) -> Result<f64> {
    params.validate()?;
    let sum = params.p_g + params.p_b + params.p_n;
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Parameter(format!(
            "the closed form needs p_G + p_B + p_N = 1, got {sum}"
        )));
    }
    if params.p_g == 0.0 {
        return Ok(0.0);
    }
    let GameParams { p_g, p_b, p_n, streak } = *params;
    Ok(p_g * (1.0 - p_b) / (p_g + p_n * p_b.powi(streak as i32)))
}

/// Exact winning probability of the tight game, `p_G (1 - p_B^streak) / (p_G + p_N p_B^streak)`.
///
/// [`win_prob_closed_form`] solves `P = p_G + p_N P (1 + p_B + ... + p_B^(streak-1))`,
/// which drops the paths where a run of fewer than `streak` Bad rounds is
/// followed by Good. Counting them gives `P = (p_G + p_N P)(1 + ... + p_B^(streak-1))`
/// and this value. The two agree for `streak = 1`.
pub fn win_prob_exact(params: &GameParams) -> Result<f64> {
    win_prob_closed_form(params)?;
    if params.p_g == 0.0 {
        return Ok(0.0);
    }
    let GameParams { p_g, p_b, p_n, streak } = *params;
    let tail = p_b.powi(streak as i32);
    Ok(p_g * (1.0 - tail) / (p_g + p_n * tail))
}

/// The cruder bound `p_G / p_B^streak`.
pub fn win_prob_bound(params: &GameParams) -> Result<f64> {
    params.validate()?;
    if params.p_b == 0.0 {
        return Err(Error::ZeroBadProbability);
    }
    Ok(params.p_g / params.p_b.powi(params.streak as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Event {
    Good,
    Bad,
    Neutral,
}

/// Chooses each round's Bad probability from the history of earlier rounds.
pub trait AdversaryPolicy: Sync {
    /// Bad probability for round `history.len() + 1`; must lie in `[p_B, 1 - p_G]`.
    fn bad_prob(&self, params: &GameParams, history: &[Event]) -> f64;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Policy {
    /// Always `p_B`.
    Tight,
    /// Always `1 - p_G`, so Neutral never happens.
    Maximal,
    /// `p_B` on odd rounds, `1 - p_G` on even rounds.
    Alternating,
}

impl AdversaryPolicy for Policy {
    fn bad_prob(&self, params: &GameParams, history: &[Event]) -> f64 {
        match self {
            Policy::Tight => params.p_b,
            Policy::Maximal => 1.0 - params.p_g,
            Policy::Alternating => {
                if history.len().is_multiple_of(2) {
                    params.p_b
                } else {
                    1.0 - params.p_g
                }
            }
        }
    }

    fn name(&self) -> String {
        match self {
            Policy::Tight => "tight",
            Policy::Maximal => "maximal",
            Policy::Alternating => "alternating",
        }
        .to_string()
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tight" => Ok(Policy::Tight),
            "maximal" | "max" => Ok(Policy::Maximal),
            "alternating" | "alt" => Ok(Policy::Alternating),
            other => Err(Error::Parameter(format!("unknown policy `{other}`"))),
        }
    }
}

fn checked_bad_prob<P: AdversaryPolicy + ?Sized>(
    policy: &P,
    params: &GameParams,
    history: &[Event],
) -> Result<f64> {
    let pb = policy.bad_prob(params, history);
    let hi = 1.0 - params.p_g;
    if !(pb >= params.p_b - SUM_TOLERANCE && pb <= hi + SUM_TOLERANCE) {
        return Err(Error::Contract(format!(
            "policy `{}` chose p_B = {pb} in round {}, outside [{}, {hi}]",
            policy.name(),
            history.len() + 1,
            params.p_b
        )));
    }
    Ok(pb.clamp(params.p_b, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrialEnd {
    Won,
    Lost,
    TimedOut,
}

/// Tracks the running Bad streak of one game.
struct Play {
    streak: u32,
    run: u32,
    end: Option<TrialEnd>,
}

impl Play {
    fn new(streak: u32) -> Self {
        Play { streak, run: 0, end: None }
    }

    fn push(&mut self, e: Event) {
        match e {
            Event::Good => self.end = Some(TrialEnd::Won),
            Event::Bad => {
                self.run += 1;
                if self.run >= self.streak {
                    self.end = Some(TrialEnd::Lost);
                }
            }
            Event::Neutral => self.run = 0,
        }
    }
}

fn play_once<P: AdversaryPolicy + ?Sized>(
    params: &GameParams,
    policy: &P,
    rng: &mut Rng,
) -> Result<TrialEnd> {
    let mut history = Vec::new();
    let mut play = Play::new(params.streak);
    for _ in 0..ROUND_CAP {
        let pb = checked_bad_prob(policy, params, &history)?;
        let u: f64 = rng.random();
        let e = if u < params.p_g {
            Event::Good
        } else if u < params.p_g + pb {
            Event::Bad
        } else {
            Event::Neutral
        };
        history.push(e);
        play.push(e);
        if let Some(end) = play.end {
            return Ok(end);
        }
    }
    Ok(TrialEnd::TimedOut)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameSimulation {
    pub wins: u64,
    pub losses: u64,
    pub timeouts: u64,
    /// Win fraction over all trials, with its Wilson interval.
    pub win: Proportion,
}

/// Monte Carlo estimate of the win probability under `policy`. Trial `i`
/// uses stream `i` of `seed`.
pub fn simulate_game<P: AdversaryPolicy + ?Sized>(
    params: &GameParams,
    policy: &P,
    trials: u64,
    seed: u64,
) -> Result<GameSimulation> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let ends = map_indices(trials, |i| play_once(params, policy, &mut stream_rng(seed, i)));
    let (mut wins, mut losses, mut timeouts) = (0, 0, 0);
    for e in ends {
        match e? {
            TrialEnd::Won => wins += 1,
            TrialEnd::Lost => losses += 1,
            TrialEnd::TimedOut => timeouts += 1,
        }
    }
    Ok(GameSimulation {
        wins,
        losses,
        timeouts,
        win: Proportion::new(wins, trials),
    })
}

/// Outcome counts of the coupled tight/adversarial simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CouplingReport {
    pub trials: u64,
    pub tight_wins: u64,
    pub adversarial_wins: u64,
    /// Must be zero: a tight loss forces an adversarial loss.
    pub adversarial_win_tight_loss: u64,
    pub adversarial_loss_tight_win: u64,
    /// Trials in which the two event sequences differ at some round.
    pub divergent_trials: u64,
    pub timeouts: u64,
}

#[derive(Clone, Copy)]
struct CoupledEnd {
    tight: TrialEnd,
    adversarial: TrialEnd,
    diverged: bool,
}

fn play_coupled<P: AdversaryPolicy + ?Sized>(
    params: &GameParams,
    policy: &P,
    rng: &mut Rng,
) -> Result<CoupledEnd> {
    let tight_n = params.tight_neutral();
    let mut history = Vec::new();
    let mut tight = Play::new(params.streak);
    let mut adv = Play::new(params.streak);
    let mut diverged = false;
    for _ in 0..ROUND_CAP {
        let u: f64 = rng.random();
        let t_event = if u < params.p_g {
            Event::Good
        } else if u < params.p_g + params.p_b {
            Event::Bad
        } else {
            Event::Neutral
        };
        if adv.end.is_none() {
            let pb = checked_bad_prob(policy, params, &history)?;
            let a_event = match t_event {
                Event::Neutral => {
                    let keep = (1.0 - params.p_g - pb).max(0.0) / tight_n;
                    let v: f64 = rng.random();
                    if v < keep {
                        Event::Neutral
                    } else {
                        Event::Bad
                    }
                }
                e => e,
            };
            diverged |= a_event != t_event;
            history.push(a_event);
            adv.push(a_event);
        }
        tight.push(t_event);
        if let Some(t_end) = tight.end {
            let a_end = adv.end.unwrap_or(TrialEnd::TimedOut);
            return Ok(CoupledEnd {
                tight: t_end,
                adversarial: a_end,
                diverged,
            });
        }
    }
    Ok(CoupledEnd {
        tight: TrialEnd::TimedOut,
        adversarial: adv.end.unwrap_or(TrialEnd::TimedOut),
        diverged,
    })
}

/// Runs the tight game and an adversarial copy on shared randomness: Good and
/// Bad rounds are copied, and a tight Neutral round stays Neutral in the
/// adversarial copy with probability `(1 - p_G - p_B^i) / (1 - p_G - p_B)` and
/// turns Bad otherwise.
pub fn coupled_dominance_check<P: AdversaryPolicy + ?Sized>(
    params: &GameParams,
    policy: &P,
    trials: u64,
    seed: u64,
) -> Result<CouplingReport> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let ends = map_indices(trials, |i| play_coupled(params, policy, &mut stream_rng(seed, i)));
    let mut rep = CouplingReport {
        trials,
        tight_wins: 0,
        adversarial_wins: 0,
        adversarial_win_tight_loss: 0,
        adversarial_loss_tight_win: 0,
        divergent_trials: 0,
        timeouts: 0,
    };
    for e in ends {
        let e = e?;
        let tw = e.tight == TrialEnd::Won;
        let aw = e.adversarial == TrialEnd::Won;
        rep.tight_wins += tw as u64;
        rep.adversarial_wins += aw as u64;
        rep.adversarial_win_tight_loss += (aw && e.tight == TrialEnd::Lost) as u64;
        rep.adversarial_loss_tight_win += (tw && e.adversarial == TrialEnd::Lost) as u64;
        rep.divergent_trials += e.diverged as u64;
        rep.timeouts += (e.tight == TrialEnd::TimedOut) as u64;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_outcome_race() {
        let p = GameParams::new(0.5, 0.5, 0.0, 1);
        assert!((win_prob_closed_form(&p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn never_good_never_wins() {
        for streak in [1, 3, 10] {
            let p = GameParams::new(0.0, 0.4, 0.6, streak);
            assert_eq!(win_prob_closed_form(&p).unwrap(), 0.0);
        }
        assert_eq!(win_prob_closed_form(&GameParams::new(0.0, 1.0, 0.0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn never_bad_always_wins() {
        let p = GameParams::new(0.1, 0.0, 0.9, 4);
        assert_eq!(win_prob_closed_form(&p).unwrap(), 1.0);
        assert!(matches!(win_prob_bound(&p), Err(Error::ZeroBadProbability)));
    }

    #[test]
    fn interior_value() {
        let p = GameParams::new(0.2, 0.5, 0.3, 2);
        let v = win_prob_closed_form(&p).unwrap();
        assert!((v - 0.1 / 0.275).abs() < 1e-15);
        assert!(v <= win_prob_bound(&p).unwrap());
    }

    #[test]
    fn exact_value_and_agreement_at_streak_one() {
        let p = GameParams::new(0.2, 0.5, 0.3, 2);
        assert!((win_prob_exact(&p).unwrap() - 0.15 / 0.275).abs() < 1e-15);
        let q = GameParams::new(0.2, 0.5, 0.3, 1);
        assert!((win_prob_exact(&q).unwrap() - win_prob_closed_form(&q).unwrap()).abs() < 1e-15);
        assert_eq!(win_prob_exact(&GameParams::new(0.0, 0.5, 0.5, 3)).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_requires_unit_sum() {
        let p = GameParams::new(0.2, 0.5, 0.2, 2);
        assert!(matches!(win_prob_closed_form(&p), Err(Error::Parameter(_))));
        assert!(GameParams::new(0.2, 0.5, 0.3, 0).validate().is_err());
        assert!(GameParams::new(0.6, 0.5, 0.0, 1).validate().is_err());
    }

    struct Cheater;
    impl AdversaryPolicy for Cheater {
        fn bad_prob(&self, params: &GameParams, _: &[Event]) -> f64 {
            params.p_b / 2.0
        }
        fn name(&self) -> String {
            "cheater".into()
        }
    }

    #[test]
    fn policy_below_floor_is_a_contract_violation() {
        let p = GameParams::new(0.2, 0.5, 0.3, 2);
        assert!(matches!(simulate_game(&p, &Cheater, 10, 1), Err(Error::Contract(_))));
        assert!(matches!(coupled_dominance_check(&p, &Cheater, 10, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn tight_coupling_is_the_identity() {
        let p = GameParams::new(0.2, 0.5, 0.3, 2);
        let rep = coupled_dominance_check(&p, &Policy::Tight, 20_000, 4).unwrap();
        assert_eq!(rep.divergent_trials, 0);
        assert_eq!(rep.tight_wins, rep.adversarial_wins);
    }

    #[test]
    fn streak_one_is_a_geometric_race() {
        let p = GameParams::new(0.3, 0.3, 0.4, 1);
        let sim = simulate_game(&p, &Policy::Tight, 100_000, 9).unwrap();
        assert!(sim.win.contains(0.5), "{:?}", sim.win);
    }

    #[test]
    fn simulation_matches_exact_value() {
        let p = GameParams::new(0.2, 0.5, 0.3, 2);
        let sim = simulate_game(&p, &Policy::Tight, 100_000, 10).unwrap();
        assert!(sim.win.contains(win_prob_exact(&p).unwrap()), "{:?}", sim.win);
    }

    #[test]
    fn round_cap_counts_timeouts() {
        // With p_G = p_B = 0 the game never ends; keep the trial count tiny.
        let p = GameParams::new(0.0, 0.0, 1.0, 1);
        let sim = simulate_game(&p, &Policy::Tight, 1, 0).unwrap();
        assert_eq!(sim.timeouts, 1);
    }
}
