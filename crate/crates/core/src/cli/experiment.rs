//! Campaign runner. Replication `r` is seeded with `split_seed(seed, r)` at
//! every sweep value, so sweep points are compared on common random layouts
//! and any single replication can be rerun in isolation. Results are
//! gathered in input order, which makes the output independent of thread
//! scheduling.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{scenario_at, sweep_values, validate_spec, ExperimentKind, ExperimentSpec};
use super::table::write_csv;
use crate::avg_rate::{rate_eve_diff, rate_eve_exact_mc, PowerAllocation};
use crate::channel::{named_or_file_matrix, sample_main_channel, MainChannel};
use crate::error::{Error, Result};
use crate::optimizer::{
    exhaustive_search, lattice_size, optimize, refine_allocation, OptimizeOptions, EXHAUSTIVE_CAP,
};
use crate::rng::{from_seed, split_seed, RandomSource};
use crate::scenario::{gains_from_layout, sample_layout, EveGainProfile, Scenario};

/// One measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub replication: usize,
    /// Outer-loop iteration for per-iteration metrics.
    pub iteration: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

/// Rows of one campaign with the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Values of `metric` at `sweep_value`, in replication order.
    pub fn values(&self, sweep_value: f64, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.sweep_value == sweep_value && r.metric == metric && r.iteration.is_none())
            .map(|r| r.value)
            .collect()
    }
}

/// Seed of replication `rep`.
pub fn replication_seed(master: u64, rep: usize) -> u64 {
    split_seed(master, rep as u64)
}

/// Seed of draws shared by all replications.
fn shared_seed(master: u64) -> u64 {
    split_seed(master, u64::MAX)
}

struct Collector {
    sweep_value: f64,
    replication: usize,
    rows: Vec<ResultRow>,
}

impl Collector {
    fn push(&mut self, metric: &str, value: f64, std_error: Option<f64>) -> Result<()> {
        self.push_at(None, metric, value, std_error)
    }

    fn push_at(&mut self, iteration: Option<usize>, metric: &str, value: f64, std_error: Option<f64>) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{metric} is {value} at sweep value {}, replication {}",
                self.sweep_value, self.replication
            )));
        }
        self.rows.push(ResultRow {
            sweep_value: self.sweep_value,
            replication: self.replication,
            iteration,
            metric: metric.to_string(),
            value,
            std_error,
        });
        Ok(())
    }
}

/// Layout gains plus the main channel, injected or sampled from the layout.
fn draw_link(
    spec: &ExperimentSpec,
    scenario: &Scenario,
    rng: &mut RandomSource,
) -> Result<(MainChannel, EveGainProfile)> {
    let layout = sample_layout(scenario, rng)?;
    let (beta, eve) = gains_from_layout(&layout, scenario)?;
    let chan = match &spec.channel {
        Some(name) => {
            let chan = MainChannel::from_matrix(named_or_file_matrix(name)?)?;
            if chan.k_tx() != scenario.k_tx || chan.n_rx() != scenario.n_rx {
                return Err(Error::Config(format!(
                    "channel {name:?} is {}x{} but the scenario has N = {}, K = {}",
                    chan.n_rx(),
                    chan.k_tx(),
                    scenario.n_rx,
                    scenario.k_tx
                )));
            }
            chan
        }
        None => sample_main_channel(&beta, rng)?,
    };
    Ok((chan, eve))
}

/// Uniform point of `{s, a >= 0, sum(s + a) <= budget}`.
fn random_allocation(k: usize, budget: f64, rng: &mut RandomSource) -> Result<PowerAllocation> {
    let w: Vec<f64> = (0..2 * k + 1).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    let scale = |v: &[f64]| v.iter().map(|x| budget * x / total).collect::<Vec<_>>();
    PowerAllocation::new(scale(&w[..k]), scale(&w[k..2 * k]), budget)
}

fn options(spec: &ExperimentSpec) -> OptimizeOptions {
    OptimizeOptions {
        epsilon: spec.epsilon,
        max_iters: spec.max_iters,
        surrogate: spec.surrogate,
        ..OptimizeOptions::default()
    }
}

fn run_approx_error(spec: &ExperimentSpec, scenario: &Scenario, out: &mut Collector) -> Result<()> {
    // Layout and allocation are drawn once and shared by all
    // replications; each replication draws its own main channel, hence its
    // own precoder, and averages the eavesdropper fading.
    let mut shared = from_seed(shared_seed(spec.seed));
    let layout = sample_layout(scenario, &mut shared)?;
    let (beta, eve) = gains_from_layout(&layout, scenario)?;
    let alloc = random_allocation(scenario.k_tx, scenario.gamma_e, &mut shared)?;
    let sigma = eve.row(0);
    let approx = rate_eve_diff(&alloc, &sigma, scenario.m_eve)?;
    let mut rng = from_seed(scenario.seed);
    let chan = sample_main_channel(&beta, &mut rng)?;
    let exact = rate_eve_exact_mc(&alloc, &sigma, &chan.v1, scenario.m_eve, spec.mc_trials, &mut rng)?;
    out.push("rate_eve", exact.mean, Some(exact.std_error))?;
    out.push("rate_eve_approx", approx, None)?;
    out.push("approx_error", approx - exact.mean, Some(exact.std_error))
}

fn run_convergence(spec: &ExperimentSpec, scenario: &Scenario, out: &mut Collector) -> Result<()> {
    let mut rng = from_seed(scenario.seed);
    let (chan, eve) = draw_link(spec, scenario, &mut rng)?;
    let (m, gb, ge) = (scenario.m_eve, scenario.gamma_b, scenario.gamma_e);
    let trace = optimize(&chan, &eve, m, gb, ge, options(spec)).map_err(|e| e.error)?;
    for (i, entry) in trace.iterates.iter().enumerate() {
        out.push_at(Some(i), "surrogate_rate", entry.surrogate, None)?;
        out.push_at(Some(i), "secrecy_rate", entry.secrecy, None)?;
    }
    out.push("final_rate", trace.final_rate(), None)?;
    out.push("iterations", trace.iterations as f64, None)?;
    out.push("converged", if trace.converged { 1.0 } else { 0.0 }, None)?;
    if spec.grid > 0 {
        let best = exhaustive_baseline(&chan, &eve, scenario, spec.grid)?;
        out.push("exhaustive_rate", best, None)?;
        out.push("gap_to_exhaustive", best - trace.final_rate(), None)?;
    }
    Ok(())
}

/// Best lattice point, polished by a compass search started one lattice step
/// wide so the reported value is not limited by the lattice resolution.
pub fn exhaustive_baseline(chan: &MainChannel, eve: &EveGainProfile, scenario: &Scenario, grid: usize) -> Result<f64> {
    let k = chan.k_tx();
    if lattice_size(k, grid) > EXHAUSTIVE_CAP {
        return Err(Error::Refused(format!(
            "exhaustive search over {} lattice points for K = {k}; lower grid",
            lattice_size(k, grid)
        )));
    }
    let (m, gb, ge) = (scenario.m_eve, scenario.gamma_b, scenario.gamma_e);
    let coarse = exhaustive_search(chan, eve, m, gb, ge, grid)?;
    let step = ge / grid as f64;
    let fine = refine_allocation(&coarse.allocation, chan, eve, m, gb, ge, step, 1e-6 * step)?;
    Ok(fine.rate.max(coarse.rate).max(0.0))
}

fn run_optimized(spec: &ExperimentSpec, scenario: &Scenario, out: &mut Collector) -> Result<()> {
    let mut rng = from_seed(scenario.seed);
    let (chan, eve) = draw_link(spec, scenario, &mut rng)?;
    let (m, gb, ge) = (scenario.m_eve, scenario.gamma_b, scenario.gamma_e);
    let trace = optimize(&chan, &eve, m, gb, ge, options(spec)).map_err(|e| e.error)?;
    out.push("secrecy_rate", trace.final_rate(), None)?;
    out.push("water_filling_rate", trace.iterates[0].secrecy.max(0.0), None)?;
    out.push("iterations", trace.iterations as f64, None)?;
    out.push("converged", if trace.converged { 1.0 } else { 0.0 }, None)?;
    if spec.grid > 0 {
        out.push("exhaustive_rate", exhaustive_baseline(&chan, &eve, scenario, spec.grid)?, None)?;
    }
    Ok(())
}

/// Runs every (sweep value, replication) pair and, when the spec names an
/// output path, writes the CSV atomically.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    validate_spec(spec)?;
    let values = sweep_values(spec);
    let jobs: Vec<(f64, usize)> =
        values.iter().flat_map(|v| (0..spec.replications).map(move |r| (*v, r))).collect();
    let chunks: Vec<Result<Vec<ResultRow>>> = jobs
        .par_iter()
        .map(|&(value, rep)| {
            let scenario = scenario_at(spec, value)?.to_scenario(replication_seed(spec.seed, rep))?;
            let mut out = Collector { sweep_value: value, replication: rep, rows: Vec::new() };
            match spec.kind {
                ExperimentKind::ApproxError => run_approx_error(spec, &scenario, &mut out)?,
                ExperimentKind::Convergence => run_convergence(spec, &scenario, &mut out)?,
                ExperimentKind::IterationCount | ExperimentKind::RateVsK | ExperimentKind::RateVsRadius => {
                    run_optimized(spec, &scenario, &mut out)?
                }
            }
            Ok(out.rows)
        })
        .collect();
    let mut rows = Vec::new();
    for chunk in chunks {
        rows.extend(chunk?);
    }
    let table = ResultTable { spec: spec.clone(), rows };
    if let Some(path) = &spec.output_path {
        write_csv(&table, path)?;
    }
    Ok(table)
}
