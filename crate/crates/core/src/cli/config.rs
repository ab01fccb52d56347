//! Experiment configuration files.
//!
//! A config is TOML with top-level run settings, a `[scenario]` table (missing
//! fields take the defaults of the experiment kind) and an optional `[sweep]` table:
//!
//! ```toml
//! seed = 7
//! replications = 20
//! channel = "h1"            # optional: "h1", "h2" or a JSON matrix file
//!
//! [scenario]
//! k_tx = 2
//! n_rx = 2
//! m_eve = 2
//! l_locs = 10
//! r_t = 5.0
//! r_r = 5.0
//! d_b = 30.0
//! d_e = 30.0
//! alpha = 3.0
//! gamma_b_db = 10.0         # `_db` keys are converted to linear
//! # gamma_e omitted: gamma_b * (d_b / d_e)^alpha
//! # eve_positions = [[30.0, 0.0], [0.0, 30.0]]
//!
//! [sweep]
//! parameter = "k_tx"
//! values = [1, 2, 3]
//! also = ["n_rx"]           # fields set to the same value
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{SurrogateKind, DEFAULT_EPSILON, DEFAULT_MAX_ITERS};
use crate::scenario::{EvePlacement, Point, Scenario};

/// The campaigns the runner knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Closed-form versus Monte Carlo eavesdropper rate over precoder draws.
    ApproxError,
    /// Per-iteration rates of the optimizer, with an exhaustive baseline.
    Convergence,
    /// Optimizer iteration counts over random channels.
    IterationCount,
    /// Optimized secrecy rate against the number of cooperating nodes.
    RateVsK,
    /// Optimized secrecy rate against the transmit cluster radius.
    RateVsRadius,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ApproxError,
        ExperimentKind::Convergence,
        ExperimentKind::IterationCount,
        ExperimentKind::RateVsK,
        ExperimentKind::RateVsRadius,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ApproxError => "approx-error",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::IterationCount => "iteration-count",
            ExperimentKind::RateVsK => "rate-vs-k",
            ExperimentKind::RateVsRadius => "rate-vs-radius",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scenario fields as written in a config; `gamma_e` may be left to the
/// path-loss rule and the eavesdropper may be given as explicit points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub k_tx: usize,
    pub n_rx: usize,
    pub m_eve: usize,
    pub l_locs: usize,
    pub r_t: f64,
    pub r_r: f64,
    pub d_b: f64,
    pub d_e: f64,
    pub alpha: f64,
    pub gamma_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve_positions: Option<Vec<[f64; 2]>>,
}

/// Scenario fields a sweep may vary.
pub const SWEEPABLE: [&str; 11] =
    ["k_tx", "n_rx", "m_eve", "l_locs", "r_t", "r_r", "d_b", "d_e", "alpha", "gamma_b", "gamma_e"];

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{name} must be a positive integer, got {v}")))
    }
}

impl ScenarioConfig {
    /// Copy with `name` set to `value`.
    pub fn with(&self, name: &str, value: f64) -> Result<ScenarioConfig> {
        let mut c = self.clone();
        match name {
            "k_tx" => c.k_tx = as_count(name, value)?,
            "n_rx" => c.n_rx = as_count(name, value)?,
            "m_eve" => c.m_eve = as_count(name, value)?,
            "l_locs" => c.l_locs = as_count(name, value)?,
            "r_t" => c.r_t = value,
            "r_r" => c.r_r = value,
            "d_b" => c.d_b = value,
            "d_e" => c.d_e = value,
            "alpha" => c.alpha = value,
            "gamma_b" => c.gamma_b = value,
            "gamma_e" => c.gamma_e = Some(value),
            other => return Err(Error::Config(format!("{other:?} is not a sweepable scenario field"))),
        }
        Ok(c)
    }

    /// `gamma_e` as given, else `gamma_b (d_b / d_e)^alpha`.
    pub fn gamma_e(&self) -> f64 {
        self.gamma_e.unwrap_or(self.gamma_b * (self.d_b / self.d_e).powf(self.alpha))
    }

    pub fn to_scenario(&self, seed: u64) -> Result<Scenario> {
        let eve_placement = match &self.eve_positions {
            None => EvePlacement::Ring,
            Some(points) => EvePlacement::Explicit(points.iter().map(|[x, y]| Point::new(*x, *y)).collect()),
        };
        let scenario = Scenario {
            k_tx: self.k_tx,
            n_rx: self.n_rx,
            m_eve: self.m_eve,
            l_locs: self.l_locs,
            r_t: self.r_t,
            r_r: self.r_r,
            d_b: self.d_b,
            d_e: self.d_e,
            alpha: self.alpha,
            gamma_b: self.gamma_b,
            gamma_e: self.gamma_e(),
            seed,
            eve_placement,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// A swept scenario field. An empty value list means a single run at the
/// configured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also: Vec<String>,
}

/// A fully resolved campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replications: usize,
    /// Monte Carlo trials per estimate.
    pub mc_trials: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub surrogate: SurrogateKind,
    /// Injected main channel: "h1", "h2" or a matrix file. Sampled from the
    /// layout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    /// Exhaustive-search lattice resolution; 0 disables the baseline.
    pub grid: usize,
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
    #[serde(skip)]
    pub output_path: Option<PathBuf>,
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub mc_trials: Option<usize>,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    replications: Option<usize>,
    mc_trials: Option<usize>,
    epsilon: Option<f64>,
    max_iters: Option<usize>,
    surrogate: Option<SurrogateKind>,
    channel: Option<String>,
    grid: Option<usize>,
    scenario: Option<toml::Table>,
    sweep: Option<Sweep>,
}

/// Rewrites `<name>_db` keys to linear `<name>` keys.
fn linearize_db(table: toml::Table) -> Result<toml::Table> {
    let mut out = toml::Table::new();
    for (key, value) in table {
        let Some(base) = key.strip_suffix("_db") else {
            if out.contains_key(&key) {
                return Err(Error::Config(format!("{key} given both linear and in dB")));
            }
            out.insert(key, value);
            continue;
        };
        let db = match value {
            toml::Value::Float(v) => v,
            toml::Value::Integer(v) => v as f64,
            other => return Err(Error::Config(format!("{key} must be a number, got {other}"))),
        };
        if out.contains_key(base) {
            return Err(Error::Config(format!("{base} given both linear and in dB")));
        }
        out.insert(base.to_string(), toml::Value::Float(10f64.powf(db / 10.0)));
    }
    Ok(out)
}

/// Built-in settings of each campaign; a config file overrides any part.
pub fn default_spec(kind: ExperimentKind) -> ExperimentSpec {
    let scenario = ScenarioConfig {
        k_tx: 2,
        n_rx: 2,
        m_eve: 2,
        l_locs: 10,
        r_t: 5.0,
        r_r: 5.0,
        d_b: 30.0,
        d_e: 30.0,
        alpha: 3.0,
        gamma_b: 10.0,
        gamma_e: None,
        eve_positions: None,
    };
    let single = |parameter: &str| Sweep { parameter: parameter.into(), values: Vec::new(), also: Vec::new() };
    let mut spec = ExperimentSpec {
        kind,
        seed: 1,
        replications: 20,
        mc_trials: 10_000,
        epsilon: DEFAULT_EPSILON,
        max_iters: DEFAULT_MAX_ITERS,
        surrogate: SurrogateKind::default(),
        channel: None,
        grid: 0,
        scenario,
        sweep: single("k_tx"),
        output_path: None,
    };
    match kind {
        ExperimentKind::ApproxError => {
            spec.replications = 1000;
            spec.scenario.l_locs = 1;
            spec.scenario.r_t = 1.0;
            spec.sweep = Sweep { parameter: "m_eve".into(), values: vec![2.0, 4.0, 6.0], also: Vec::new() };
        }
        ExperimentKind::Convergence => {
            spec.replications = 1;
            spec.channel = Some("h1".into());
            spec.grid = 120;
            spec.sweep = Sweep { parameter: "l_locs".into(), values: vec![10.0, 20.0], also: Vec::new() };
        }
        ExperimentKind::IterationCount => {
            spec.replications = 50;
            spec.sweep = Sweep { parameter: "k_tx".into(), values: vec![2.0, 4.0], also: vec!["n_rx".into()] };
        }
        ExperimentKind::RateVsK => {
            spec.scenario.r_t = 8.0;
            spec.scenario.r_r = 8.0;
            spec.scenario.d_e = 40.0;
            spec.sweep = Sweep {
                parameter: "k_tx".into(),
                values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
                also: vec!["n_rx".into()],
            };
        }
        ExperimentKind::RateVsRadius => {
            spec.scenario.k_tx = 4;
            spec.scenario.n_rx = 4;
            spec.sweep = Sweep { parameter: "r_t".into(), values: vec![1.0, 3.0, 5.0, 7.0, 9.0], also: Vec::new() };
        }
    }
    spec
}

/// Parses config text over the defaults of `kind`, then applies overrides.
pub fn parse_config(kind: ExperimentKind, text: &str, overrides: &Overrides) -> Result<ExperimentSpec> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut spec = default_spec(kind);
    if let Some(table) = raw.scenario {
        // Missing fields fall back to the defaults of this kind.
        let defaults = toml::Table::try_from(&spec.scenario).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = defaults;
        let given = linearize_db(table)?;
        if given.contains_key("gamma_b") && !given.contains_key("gamma_e") {
            merged.remove("gamma_e");
        }
        merged.extend(given);
        spec.scenario = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    }
    spec.seed = raw.seed.unwrap_or(spec.seed);
    spec.replications = raw.replications.unwrap_or(spec.replications);
    spec.mc_trials = raw.mc_trials.unwrap_or(spec.mc_trials);
    spec.epsilon = raw.epsilon.unwrap_or(spec.epsilon);
    spec.max_iters = raw.max_iters.unwrap_or(spec.max_iters);
    spec.surrogate = raw.surrogate.unwrap_or(spec.surrogate);
    spec.grid = raw.grid.unwrap_or(spec.grid);
    if raw.channel.is_some() {
        spec.channel = raw.channel;
    }
    if let Some(sweep) = raw.sweep {
        spec.sweep = sweep;
    }
    apply_overrides(&mut spec, overrides);
    validate_spec(&spec)?;
    Ok(spec)
}

/// Reads a config file, or the defaults of `kind` when `path` is `None`.
pub fn load_config(kind: ExperimentKind, path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentSpec> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_config(kind, &text, overrides)
        }
        None => {
            let mut spec = default_spec(kind);
            apply_overrides(&mut spec, overrides);
            validate_spec(&spec)?;
            Ok(spec)
        }
    }
}

fn apply_overrides(spec: &mut ExperimentSpec, o: &Overrides) {
    spec.seed = o.seed.unwrap_or(spec.seed);
    spec.replications = o.replications.unwrap_or(spec.replications);
    spec.mc_trials = o.mc_trials.unwrap_or(spec.mc_trials);
    spec.epsilon = o.epsilon.unwrap_or(spec.epsilon);
    if o.out.is_some() {
        spec.output_path = o.out.clone();
    }
}

/// Checks the spec invariants and that every sweep point is a valid scenario.
pub fn validate_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.replications < 1 {
        return Err(Error::Config("replications must be >= 1".into()));
    }
    if spec.mc_trials < 1 {
        return Err(Error::Config("mc_trials must be >= 1".into()));
    }
    if !(spec.epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {}", spec.epsilon)));
    }
    for name in std::iter::once(&spec.sweep.parameter).chain(&spec.sweep.also) {
        if !SWEEPABLE.contains(&name.as_str()) {
            return Err(Error::Config(format!("{name:?} is not a sweepable scenario field")));
        }
    }
    for value in sweep_values(spec) {
        scenario_at(spec, value)?.to_scenario(spec.seed)?;
    }
    Ok(())
}

/// The swept values, or the configured value alone when none are listed.
pub fn sweep_values(spec: &ExperimentSpec) -> Vec<f64> {
    if !spec.sweep.values.is_empty() {
        return spec.sweep.values.clone();
    }
    let s = &spec.scenario;
    vec![match spec.sweep.parameter.as_str() {
        "k_tx" => s.k_tx as f64,
        "n_rx" => s.n_rx as f64,
        "m_eve" => s.m_eve as f64,
        "l_locs" => s.l_locs as f64,
        "r_t" => s.r_t,
        "r_r" => s.r_r,
        "d_b" => s.d_b,
        "d_e" => s.d_e,
        "alpha" => s.alpha,
        "gamma_b" => s.gamma_b,
        _ => s.gamma_e(),
    }]
}

/// Scenario config at one sweep value.
pub fn scenario_at(spec: &ExperimentSpec, value: f64) -> Result<ScenarioConfig> {
    let mut c = spec.scenario.with(&spec.sweep.parameter, value)?;
    for name in &spec.sweep.also {
        c = c.with(name, value)?;
    }
    Ok(c)
}
