//! Long-format CSV tables with a provenance header, and their summaries.
//!
//! A table file starts with `#` lines: the library version, then the
//! resolved spec as TOML. The column set is the same for every kind:
//! `sweep_value,replication,iteration,metric,value,std_error`, with empty
//! cells for absent optional fields.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use statrs::statistics::{Data, Max, Min, OrderStatistics};

use super::config::{scenario_at, ExperimentKind, ExperimentSpec};
use super::experiment::{ResultRow, ResultTable};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 6] = ["sweep_value", "replication", "iteration", "metric", "value", "std_error"];

pub const VERSION_LINE: &str = concat!("# dmimo-secrecy ", env!("CARGO_PKG_VERSION"));

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Serializes `table` as header block plus CSV body.
pub fn render_csv(table: &ResultTable) -> Result<String> {
    let mut out = String::new();
    out.push_str(VERSION_LINE);
    out.push('\n');
    let config = toml::to_string(&table.spec).map_err(|e| Error::Config(e.to_string()))?;
    for line in config.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            let _ = writeln!(out, "# {line}");
        }
    }
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(COLUMNS).map_err(csv_error)?;
    for r in &table.rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        writer
            .write_record([
                r.sweep_value.to_string(),
                r.replication.to_string(),
                opt(r.iteration.map(|i| i.to_string())),
                r.metric.clone(),
                r.value.to_string(),
                opt(r.std_error.map(|s| s.to_string())),
            ])
            .map_err(csv_error)?;
    }
    let body = writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    out.push_str(std::str::from_utf8(&body).expect("CSV of ASCII fields is UTF-8"));
    Ok(out)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let text = render_csv(table)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Parses a table written by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<ResultTable> {
    let mut lines = text.lines();
    if lines.next() != Some(VERSION_LINE) {
        return Err(Error::Config("missing version line; not a table written by this tool".into()));
    }
    let config: String = lines
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").or(l.strip_prefix('#')).unwrap_or(l))
        .fold(String::new(), |acc, l| acc + l + "\n");
    let spec: ExperimentSpec = toml::from_str(&config).map_err(|e| Error::Config(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(Error::Config(format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let num = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|_| Error::Config(format!("bad number {:?} in {record:?}", &record[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> { if record[i].is_empty() { Ok(None) } else { num(i).map(Some) } };
        rows.push(ResultRow {
            sweep_value: num(0)?,
            replication: num(1)? as usize,
            iteration: opt(2)?.map(|v| v as usize),
            metric: record[3].to_string(),
            value: num(4)?,
            std_error: opt(5)?,
        });
    }
    Ok(ResultTable { spec, rows })
}

pub fn read_csv(path: &Path) -> Result<ResultTable> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Aggregate of one (sweep value, iteration, metric) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub sweep_value: f64,
    pub iteration: Option<usize>,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
    pub max: f64,
}

/// Groups rows in first-appearance order.
pub fn aggregate(table: &ResultTable) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, Option<usize>, &str)> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for r in &table.rows {
        let key = (r.sweep_value, r.iteration, r.metric.as_str());
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(r.value),
            None => {
                keys.push(key);
                groups.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(groups)
        .map(|((sweep_value, iteration, metric), values)| {
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let mut data = Data::new(values);
            Aggregate {
                sweep_value,
                iteration,
                metric: metric.to_string(),
                count,
                mean,
                min: data.min(),
                q05: data.quantile(0.05),
                median: data.median(),
                q95: data.quantile(0.95),
                max: data.max(),
            }
        })
        .collect()
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn sweep_points(table: &ResultTable) -> Vec<f64> {
    let mut points: Vec<f64> = Vec::new();
    for r in &table.rows {
        if !points.contains(&r.sweep_value) {
            points.push(r.sweep_value);
        }
    }
    points
}

fn quantile(values: &[f64], tau: f64) -> f64 {
    Data::new(values.to_vec()).quantile(tau)
}

fn median(values: &[f64]) -> f64 {
    Data::new(values.to_vec()).median()
}

/// Per-iteration values of `metric` for one replication.
fn per_iteration(table: &ResultTable, sweep_value: f64, rep: usize, metric: &str) -> Vec<f64> {
    let mut v: Vec<(usize, f64)> = table
        .rows
        .iter()
        .filter(|r| r.sweep_value == sweep_value && r.replication == rep && r.metric == metric)
        .filter_map(|r| r.iteration.map(|i| (i, r.value)))
        .collect();
    v.sort_by_key(|(i, _)| *i);
    v.into_iter().map(|(_, x)| x).collect()
}

/// Checks of the reference behavior for each kind, one line each.
pub fn threshold_lines(table: &ResultTable) -> Vec<String> {
    let spec = &table.spec;
    let name = &spec.sweep.parameter;
    let mut lines = Vec::new();
    match spec.kind {
        ExperimentKind::ApproxError => {
            for v in sweep_points(table) {
                let e = table.values(v, "approx_error");
                let (p05, p95) = (quantile(&e, 0.05), quantile(&e, 0.95));
                let ok = (0.0..=0.5).contains(&p95) && p05 >= -0.1;
                lines.push(format!(
                    "{} approx-error {name}={v}: p95 = {p95:.4} in [0, 0.5], p05 = {p05:.4} >= -0.1",
                    verdict(ok)
                ));
            }
        }
        ExperimentKind::Convergence => {
            for v in sweep_points(table) {
                let reps = table.values(v, "final_rate").len();
                let (mut monotone, mut plateau) = (true, true);
                for rep in 0..reps {
                    let s = per_iteration(table, v, rep, "surrogate_rate");
                    monotone &= s.windows(2).all(|w| w[1] >= w[0] - 1e-9);
                    let last = *s.last().unwrap_or(&0.0);
                    plateau &= s.iter().skip(5).all(|x| (last - x).abs() <= 0.1);
                }
                lines.push(format!("{} convergence {name}={v}: surrogate rate monotone", verdict(monotone)));
                lines.push(format!("{} convergence {name}={v}: within 0.1 of final by iteration 5", verdict(plateau)));
                let gaps = table.values(v, "gap_to_exhaustive");
                if !gaps.is_empty() {
                    let worst = gaps.iter().map(|g| g.abs()).fold(0.0, f64::max);
                    lines.push(format!(
                        "{} convergence {name}={v}: |exhaustive - final| = {worst:.4} <= 0.1",
                        verdict(worst <= 0.1)
                    ));
                }
            }
        }
        ExperimentKind::IterationCount => {
            for v in sweep_points(table) {
                let k = scenario_at(spec, v).map(|c| c.k_tx).unwrap_or(0);
                let it = table.values(v, "iterations");
                let (max, med) = (it.iter().copied().fold(0.0, f64::max), median(&it));
                match k {
                    2 => lines.push(format!(
                        "{} iteration-count K=2: max = {max} <= 12, median = {med} <= 9",
                        verdict(max <= 12.0 && med <= 9.0)
                    )),
                    4 => lines.push(format!("{} iteration-count K=4: median = {med} <= 5", verdict(med <= 5.0))),
                    _ => lines.push(format!("INFO iteration-count K={k}: max = {max}, median = {med} (no threshold)")),
                }
            }
        }
        ExperimentKind::RateVsK => {
            let points = sweep_points(table);
            let means: Vec<(f64, f64)> = points
                .iter()
                .map(|v| {
                    let r = table.values(*v, "secrecy_rate");
                    (*v, r.iter().sum::<f64>() / r.len().max(1) as f64)
                })
                .collect();
            let baseline = means.iter().find(|(v, _)| *v == spec.scenario.m_eve as f64);
            for (v, m) in &means {
                match baseline {
                    Some((b, mb)) => lines.push(format!("INFO rate-vs-k {name}={v}: mean {m:.4}, delta vs {name}={b} {:+.4}", m - mb)),
                    None => lines.push(format!("INFO rate-vs-k {name}={v}: mean {m:.4}")),
                }
            }
            let increasing = means.windows(2).all(|w| w[1].1 > w[0].1);
            lines.push(format!("{} rate-vs-k: mean secrecy rate strictly increasing in {name}", verdict(increasing)));
        }
        ExperimentKind::RateVsRadius => {
            for v in sweep_points(table) {
                let r = table.values(v, "secrecy_rate");
                let gain: Vec<f64> =
                    r.iter().zip(table.values(v, "water_filling_rate")).map(|(a, b)| a - b).collect();
                lines.push(format!(
                    "INFO rate-vs-radius {name}={v}: mean {:.4}, mean gain over water-filling {:.4}",
                    r.iter().sum::<f64>() / r.len().max(1) as f64,
                    gain.iter().sum::<f64>() / gain.len().max(1) as f64
                ));
            }
        }
    }
    lines
}

/// Aggregates per sweep value, iteration and metric, followed by the
/// threshold lines.
pub fn report_summary(table: &ResultTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::Precondition("cannot summarize an empty table".into()));
    }
    let spec = &table.spec;
    let mut out = String::new();
    let _ = writeln!(out, "{} (seed {}, {} replications)", spec.kind, spec.seed, spec.replications);
    let _ = writeln!(
        out,
        "{:>12} {:>5} {:<20} {:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        spec.sweep.parameter, "iter", "metric", "n", "mean", "min", "q05", "median", "q95", "max"
    );
    for a in aggregate(table) {
        let iter = a.iteration.map(|i| i.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:>12} {:>5} {:<20} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            a.sweep_value, iter, a.metric, a.count, a.mean, a.min, a.q05, a.median, a.q95, a.max
        );
    }
    for line in threshold_lines(table) {
        let _ = writeln!(out, "{line}");
    }
    Ok(out)
}
