//! Python bindings for `dalab`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dalab::bins::{acceptance_prob_estimate, run_balls_in_bins, StopRule};
use dalab::da::{self, DaOptions, Proposing};
use dalab::experiments;
use dalab::game::{self, GameParams, Policy};
use dalab::market::{self, AgentId, Model, Side};
use dalab::stability::{self, Matching};
use dalab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Parameters of a random market.
#[pyclass(name = "MarketConfig", module = "pydalab", from_py_object)]
#[derive(Clone)]
struct PyMarketConfig {
    inner: market::MarketConfig,
}

#[pymethods]
impl PyMarketConfig {
    #[new]
    #[pyo3(signature = (n, alpha, d, model = "candidate_lists", seed = 0))]
    fn new(n: usize, alpha: f64, d: f64, model: &str, seed: u64) -> PyResult<Self> {
        let inner = market::MarketConfig::new(n, alpha, d, parse::<Model>(model)?, seed);
        inner.validate().map_err(to_py)?;
        Ok(PyMarketConfig { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn d(&self) -> f64 {
        self.inner.d
    }

    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "MarketConfig(n={}, alpha={}, d={}, model='{}', seed={})",
            c.n, c.alpha, c.d, c.model, c.seed
        )
    }
}

/// An explicit market with preference lists for both sides.
#[pyclass(name = "Market", module = "pydalab", from_py_object)]
#[derive(Clone)]
struct PyMarket {
    inner: market::MarketInstance,
}

#[pymethods]
impl PyMarket {
    #[new]
    #[pyo3(signature = (candidate_lists, job_lists, alpha = 0.0, d = 1.0))]
    fn new(candidate_lists: Vec<Vec<AgentId>>, job_lists: Vec<Vec<AgentId>>, alpha: f64, d: f64) -> PyResult<Self> {
        let cfg = market::MarketConfig::new(job_lists.len(), alpha, d, Model::CandidateLists, 0);
        let inner = market::MarketInstance::from_lists(cfg, candidate_lists, job_lists).map_err(to_py)?;
        Ok(PyMarket { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        market::MarketInstance::from_text(text)
            .map(|inner| PyMarket { inner })
            .map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn candidate_lists(&self) -> Vec<Vec<AgentId>> {
        self.inner.candidate_lists.clone()
    }

    #[getter]
    fn job_lists(&self) -> Vec<Vec<AgentId>> {
        self.inner.job_lists.clone()
    }

    #[getter]
    fn num_candidates(&self) -> usize {
        self.inner.num_candidates()
    }

    #[getter]
    fn num_jobs(&self) -> usize {
        self.inner.num_jobs()
    }
}

/// Outcome of one deferred acceptance run.
#[pyclass(name = "DAResult", module = "pydalab", skip_from_py_object)]
struct PyDAResult {
    inner: da::DAResult,
}

#[pymethods]
impl PyDAResult {
    /// `(candidate, job)` pairs, sorted.
    #[getter]
    fn matching(&self) -> Vec<(AgentId, AgentId)> {
        self.inner.matching().pairs().to_vec()
    }

    #[getter]
    fn total_proposals(&self) -> u64 {
        self.inner.total_proposals
    }

    #[getter]
    fn unmatched_proposers(&self) -> Vec<AgentId> {
        self.inner.unmatched_proposers.clone()
    }

    #[getter]
    fn unmatched_receivers(&self) -> Vec<AgentId> {
        self.inner.unmatched_receivers.clone()
    }

    #[getter]
    fn proposals_made(&self) -> Vec<u32> {
        self.inner.proposals_made.clone()
    }

    #[getter]
    fn proposals_received(&self) -> Vec<u32> {
        self.inner.proposals_received.clone()
    }

    fn is_perfect(&self) -> bool {
        self.inner.is_perfect()
    }

    fn trace_text(&self) -> PyResult<String> {
        self.inner.trace_text().map_err(to_py)
    }

    /// Rejection chains as JSON lines; needs a traced run.
    fn rejection_chains_jsonl(&self) -> PyResult<String> {
        da::extract_rejection_chains(&self.inner)
            .map(|c| da::chains_to_jsonl(&c))
            .map_err(to_py)
    }
}

#[pyfunction]
fn sample_market(config: &PyMarketConfig) -> PyResult<PyMarket> {
    market::sample_market(&config.inner)
        .map(|inner| PyMarket { inner })
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (market, proposing = "cpda", trace = false, order = None))]
fn run_da(market: &PyMarket, proposing: &str, trace: bool, order: Option<Vec<AgentId>>) -> PyResult<PyDAResult> {
    let opts = DaOptions {
        order,
        record_trace: trace,
        probe: None,
    };
    da::run_da(&market.inner, parse::<Proposing>(proposing)?, &opts)
        .map(|inner| PyDAResult { inner })
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config, proposing = "cpda", trace = false))]
fn run_da_lazy(config: &PyMarketConfig, proposing: &str, trace: bool) -> PyResult<PyDAResult> {
    let opts = DaOptions {
        record_trace: trace,
        ..Default::default()
    };
    da::run_da_lazy(&config.inner, parse::<Proposing>(proposing)?, &opts)
        .map(|inner| PyDAResult { inner })
        .map_err(to_py)
}

/// Blocking pairs as `(candidate, job, reason)`.
#[pyfunction]
fn find_blocking_pairs(market: &PyMarket, matching: Vec<(AgentId, AgentId)>) -> PyResult<Vec<(AgentId, AgentId, &'static str)>> {
    let mu = Matching::from_pairs(matching).map_err(to_py)?;
    let pairs = stability::find_blocking_pairs(&market.inner, &mu).map_err(to_py)?;
    Ok(pairs
        .into_iter()
        .map(|b| (b.candidate, b.job, b.reason.as_str()))
        .collect())
}

#[pyfunction]
fn enumerate_stable_matchings(market: &PyMarket) -> PyResult<Vec<Vec<(AgentId, AgentId)>>> {
    stability::enumerate_stable_matchings(&market.inner)
        .map(|ms| ms.into_iter().map(|m| m.pairs().to_vec()).collect())
        .map_err(to_py)
}

#[pyfunction]
fn win_prob_closed_form(p_g: f64, p_b: f64, p_n: f64, streak: u32) -> PyResult<f64> {
    game::win_prob_closed_form(&GameParams::new(p_g, p_b, p_n, streak)).map_err(to_py)
}

#[pyfunction]
fn win_prob_exact(p_g: f64, p_b: f64, p_n: f64, streak: u32) -> PyResult<f64> {
    game::win_prob_exact(&GameParams::new(p_g, p_b, p_n, streak)).map_err(to_py)
}

#[pyfunction]
fn win_prob_bound(p_g: f64, p_b: f64, p_n: f64, streak: u32) -> PyResult<f64> {
    game::win_prob_bound(&GameParams::new(p_g, p_b, p_n, streak)).map_err(to_py)
}

/// `(win fraction, ci_low, ci_high, timeouts)`.
#[pyfunction]
#[pyo3(signature = (p_g, p_b, p_n, streak, trials, seed = 0, policy = "tight"))]
fn simulate_game(p_g: f64, p_b: f64, p_n: f64, streak: u32, trials: u64, seed: u64, policy: &str) -> PyResult<(f64, f64, f64, u64)> {
    let params = GameParams::new(p_g, p_b, p_n, streak);
    let sim = game::simulate_game(&params, &parse::<Policy>(policy)?, trials, seed).map_err(to_py)?;
    Ok((sim.win.fraction, sim.win.ci_low, sim.win.ci_high, sim.timeouts))
}

/// Bin counts and `q_F` after `throws` uniform balls into `bins` bins.
#[pyfunction]
#[pyo3(signature = (bins, throws, seed = 0))]
fn balls_in_bins(bins: usize, throws: u64, seed: u64) -> PyResult<(Vec<u32>, f64)> {
    let occ = run_balls_in_bins(bins, StopRule::FixedThrows(throws), seed).map_err(to_py)?;
    let q = acceptance_prob_estimate(&occ).rejection;
    Ok((occ.counts, q))
}

#[pyfunction]
fn predicted_threshold(n: usize, alpha: f64) -> PyResult<f64> {
    experiments::predicted_threshold(n, alpha).map_err(to_py)
}

/// `(fraction, ci_low, ci_high)` of trials with every job matched.
#[pyfunction]
#[pyo3(signature = (config, trials, side = "candidates"))]
fn estimate_perfect_prob(py: Python<'_>, config: &PyMarketConfig, trials: u64, side: &str) -> PyResult<(f64, f64, f64)> {
    let side: Side = parse(side)?;
    let cfg = config.inner;
    let p = py
        .detach(|| experiments::estimate_perfect_prob(&cfg, side, trials))
        .map_err(to_py)?;
    Ok((p.fraction, p.ci_low, p.ci_high))
}

#[pymodule]
fn pydalab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarketConfig>()?;
    m.add_class::<PyMarket>()?;
    m.add_class::<PyDAResult>()?;
    m.add_function(wrap_pyfunction!(sample_market, m)?)?;
    m.add_function(wrap_pyfunction!(run_da, m)?)?;
    m.add_function(wrap_pyfunction!(run_da_lazy, m)?)?;
    m.add_function(wrap_pyfunction!(find_blocking_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_stable_matchings, m)?)?;
    m.add_function(wrap_pyfunction!(win_prob_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(win_prob_exact, m)?)?;
    m.add_function(wrap_pyfunction!(win_prob_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_game, m)?)?;
    m.add_function(wrap_pyfunction!(balls_in_bins, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_perfect_prob, m)?)?;
    Ok(())
}
