//! Seeded batches, sweeps and their CSV outputs.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::ops::Range;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{ticks_to_secs, SimTime};
use crate::exec::Execution;
use crate::mac154::FrameKind;
use crate::metrics::EnergyModel;
use crate::network::{NetworkError, RunOutput, Simulator};
use crate::scenario::{Scenario, ScenarioError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run failed for seed {seed}: {source}")]
    Run { seed: u64, source: NetworkError },
    #[error("sweep {param}={value}, seed {seed}: {source}")]
    Sweep {
        param: String,
        value: String,
        seed: u64,
        source: Box<HarnessError>,
    },
    #[error("unknown sweep parameter `{0}` (expected bo, scan_duration or sbp_size_bytes)")]
    SweepParam(String),
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// One row of `nodes.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRow {
    pub node: u16,
    pub role: &'static str,
    pub hop: Option<u32>,
    pub window: &'static str,
    pub tx_j: f64,
    pub rx_j: f64,
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    pub assoc_tick: Option<u64>,
}

pub const NODES_HEADER: &str = "node,role,hop,window,tx_J,rx_J,tx_bytes,rx_bytes,assoc_tick";

/// Scalar per-run metrics, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub seed: u64,
    pub converged: bool,
    pub convergence_ticks: Option<u64>,
    pub values: Vec<(&'static str, f64)>,
}

impl Summary {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == metric).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "converged={}", self.converged);
        match self.convergence_ticks {
            Some(t) => writeln!(out, "convergence_ticks={t}"),
            None => writeln!(out, "convergence_ticks="),
        }
        .ok();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub output: RunOutput,
    pub rows: Vec<NodeRow>,
    pub summary: Summary,
}

impl RunArtifacts {
    pub fn seed(&self) -> u64 {
        self.output.seed
    }

    pub fn nodes_csv(&self) -> String {
        let mut out = String::from(NODES_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{:.9},{},{},{}",
                r.node,
                r.role,
                r.hop.map(|h| h.to_string()).unwrap_or_default(),
                r.window,
                r.tx_j,
                r.rx_j,
                r.tx_bytes,
                r.rx_bytes,
                r.assoc_tick.map(|t| t.to_string()).unwrap_or_default(),
            );
        }
        out
    }
}

fn windows(out: &RunOutput) -> Vec<(&'static str, Range<SimTime>)> {
    let mut w = vec![("construction", out.construction_window())];
    if let Some(s) = out.steady_window() {
        if s.start < s.end {
            w.push(("steady", s));
        }
    }
    w
}

pub fn node_rows(out: &RunOutput, model: &EnergyModel) -> Result<Vec<NodeRow>, HarnessError> {
    let mut rows = Vec::new();
    for (name, window) in windows(out) {
        for n in &out.nodes {
            if n.inert {
                continue;
            }
            let ticks = out.ledger.ticks(n.id, window.clone())?;
            let e = model.breakdown(&ticks);
            let tx_bytes = out
                .ledger
                .tx_frames(n.id)?
                .iter()
                .filter(|f| window.contains(&f.at))
                .map(|f| f.mac_bytes as u64)
                .sum();
            let rx_bytes = out.ledger.rx_bytes(n.id, window.clone())? as u64;
            rows.push(NodeRow {
                node: n.id.0,
                role: n.role.as_str(),
                hop: n.hop,
                window: name,
                tx_j: e.tx,
                rx_j: e.rx,
                tx_bytes,
                rx_bytes,
                assoc_tick: n.associated_at.map(|t| t.0),
            });
        }
    }
    Ok(rows)
}

pub fn summarize(out: &RunOutput, rows: &[NodeRow]) -> Summary {
    let construction = out.construction_window();
    let overhead = out.ledger.overhead_bytes(construction);
    let sum = |window: &str, f: fn(&NodeRow) -> f64| -> f64 {
        rows.iter().filter(|r| r.window == window).map(f).sum()
    };
    let mut values = vec![
        (
            "convergence_s",
            out.convergence.ticks.map(ticks_to_secs).unwrap_or(f64::NAN),
        ),
        ("overhead_bytes", overhead.total() as f64),
        ("overhead_payload_bytes", overhead.payload() as f64),
        (
            "beacon_request_bytes",
            overhead.total_of(FrameKind::BeaconRequest) as f64,
        ),
        ("construction_tx_J", sum("construction", |r| r.tx_j)),
        ("construction_rx_J", sum("construction", |r| r.rx_j)),
        ("solicitations", out.solicitations.len() as f64),
        (
            "association_attempts",
            out.associations.iter().map(|a| a.attempts as u64).sum::<u64>() as f64,
        ),
    ];
    if out.steady_window().is_some_and(|w| w.start < w.end) {
        values.push(("steady_tx_J", sum("steady", |r| r.tx_j)));
        values.push(("steady_rx_J", sum("steady", |r| r.rx_j)));
    }
    Summary {
        seed: out.seed,
        converged: out.convergence.converged,
        convergence_ticks: out.convergence.ticks,
        values,
    }
}

pub fn run_one(scenario: &Scenario, seed: u64) -> Result<RunArtifacts, HarnessError> {
    let cfg = scenario.sim_config()?;
    let output = Simulator::new(cfg, seed)
        .and_then(Simulator::run)
        .map_err(|source| HarnessError::Run { seed, source })?;
    let rows = node_rows(&output, &scenario.energy)?;
    let summary = summarize(&output, &rows);
    Ok(RunArtifacts {
        output,
        rows,
        summary,
    })
}

/// Mean and Student-t 95% interval. The interval is absent below two samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci95: Option<(f64, f64)>,
}

impl Aggregate {
    pub fn overlaps(&self, other: &Aggregate) -> bool {
        match (self.ci95, other.ci95) {
            (Some((a0, a1)), Some((b0, b1))) => a0 <= b1 && b0 <= a1,
            _ => self.mean == other.mean,
        }
    }
}

pub fn mean_ci95(xs: &[f64]) -> (f64, Option<(f64, f64)>) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    (mean, Some((mean - half, mean + half)))
}

/// Aggregates every summary metric over `runs`, skipping NaN values (a
/// non-converged run has no convergence time).
pub fn aggregate(summaries: &[&Summary]) -> Vec<Aggregate> {
    let Some(first) = summaries.first() else {
        return Vec::new();
    };
    let mut metrics: Vec<&'static str> = first.values.iter().map(|(k, _)| *k).collect();
    for s in summaries {
        for (k, _) in &s.values {
            if !metrics.contains(k) {
                metrics.push(k);
            }
        }
    }
    metrics
        .into_iter()
        .map(|m| {
            let xs: Vec<f64> = summaries
                .iter()
                .filter_map(|s| s.get(m))
                .filter(|v| !v.is_nan())
                .collect();
            let (mean, ci95) = mean_ci95(&xs);
            Aggregate {
                metric: m.to_string(),
                n: xs.len(),
                mean,
                ci95,
            }
        })
        .collect()
}

fn fmt_ci(ci: Option<(f64, f64)>) -> (String, String) {
    match ci {
        Some((lo, hi)) => (format!("{lo:.9}"), format!("{hi:.9}")),
        None => (String::new(), String::new()),
    }
}

fn fmt_mean(a: &Aggregate) -> String {
    if a.n == 0 {
        String::new()
    } else {
        format!("{:.9}", a.mean)
    }
}

pub fn aggregate_csv(rows: &[Aggregate]) -> String {
    let mut out = String::from("metric,n,mean,ci95_low,ci95_high\n");
    for a in rows {
        let (lo, hi) = fmt_ci(a.ci95);
        let _ = writeln!(out, "{},{},{},{lo},{hi}", a.metric, a.n, fmt_mean(a));
    }
    out
}

#[derive(Debug)]
pub struct Batch {
    pub runs: Vec<RunArtifacts>,
    pub aggregate: Vec<Aggregate>,
}

impl Batch {
    pub fn converged(&self) -> bool {
        self.runs.iter().all(|r| r.summary.converged)
    }

    pub fn metric(&self, name: &str) -> Option<&Aggregate> {
        self.aggregate.iter().find(|a| a.metric == name)
    }

    /// Writes `nodes_seed<S>.csv`, `summary_seed<S>.txt`, optional
    /// `trace_seed<S>.log` and `aggregate.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        for r in &self.runs {
            let seed = r.seed();
            std::fs::write(dir.join(format!("nodes_seed{seed}.csv")), r.nodes_csv())?;
            std::fs::write(
                dir.join(format!("summary_seed{seed}.txt")),
                r.summary.to_text(),
            )?;
            if !r.output.trace.is_empty() {
                std::fs::write(dir.join(format!("trace_seed{seed}.log")), &r.output.trace)?;
            }
        }
        std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&self.aggregate))?;
        Ok(())
    }
}

/// One run per seed of `scenario`, in seed order.
pub fn run_scenario(scenario: &Scenario, exec: Execution) -> Result<Batch, HarnessError> {
    scenario.validate()?;
    let seeds = scenario.seeds.resolve();
    let runs = exec
        .map(seeds, |seed| run_one(scenario, seed))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let summaries: Vec<&Summary> = runs.iter().map(|r| &r.summary).collect();
    let aggregate = aggregate(&summaries);
    Ok(Batch { runs, aggregate })
}

/// Parameter swept by [`sweep`], mapped onto a scenario key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<String>,
}

impl SweepSpec {
    /// `param=v1,v2,...`
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let (param, values) = text
            .split_once('=')
            .ok_or_else(|| HarnessError::SweepParam(text.to_string()))?;
        let param = match param.trim() {
            "bo" | "mac.bo" => "bo",
            "scan" | "scan_duration" | "mac.scan" => "scan_duration",
            "sbp_size" | "sbp_size_bytes" | "coupling.sbp_size_bytes" => "sbp_size_bytes",
            other => return Err(HarnessError::SweepParam(other.to_string())),
        };
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(HarnessError::EmptySweep);
        }
        Ok(SweepSpec {
            param: param.to_string(),
            values,
        })
    }

    fn key(&self) -> &'static str {
        match self.param.as_str() {
            "bo" => "mac.bo",
            "scan_duration" => "mac.scan",
            _ => "coupling.sbp_size_bytes",
        }
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: String,
    pub batch: Batch,
}

#[derive(Debug)]
pub struct SweepResult {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `param,value,seed,metric,result`
    pub fn long_csv(&self) -> String {
        let mut out = String::from("param,value,seed,metric,result\n");
        for p in &self.points {
            for r in &p.batch.runs {
                let s = &r.summary;
                let _ = writeln!(
                    out,
                    "{},{},{},converged,{}",
                    self.param,
                    p.value,
                    s.seed,
                    u8::from(s.converged)
                );
                for (k, v) in &s.values {
                    let _ = writeln!(out, "{},{},{},{k},{v:.9}", self.param, p.value, s.seed);
                }
            }
        }
        out
    }

    /// `param,value,metric,n,mean,ci95_low,ci95_high`
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("param,value,metric,n,mean,ci95_low,ci95_high\n");
        for p in &self.points {
            for a in &p.batch.aggregate {
                let (lo, hi) = fmt_ci(a.ci95);
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{lo},{hi}",
                    self.param,
                    p.value,
                    a.metric,
                    a.n,
                    fmt_mean(a)
                );
            }
        }
        out
    }

    pub fn converged(&self) -> bool {
        self.points.iter().all(|p| p.batch.converged())
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("sweep.csv"))?;
        f.write_all(self.long_csv().as_bytes())?;
        std::fs::write(dir.join("sweep_aggregate.csv"), self.aggregate_csv())?;
        Ok(())
    }
}

/// Runs every (value, seed) pair. All pairs share one job pool; results are
/// regrouped by value in the order given.
pub fn sweep(
    scenario: &Scenario,
    spec: &SweepSpec,
    exec: Execution,
) -> Result<SweepResult, HarnessError> {
    let key = spec.key();
    let mut variants = Vec::with_capacity(spec.values.len());
    for v in &spec.values {
        let mut s = scenario.clone();
        s.set(key, v)?;
        s.validate().map_err(|e| HarnessError::Sweep {
            param: spec.param.clone(),
            value: v.clone(),
            seed: 0,
            source: Box::new(e.into()),
        })?;
        variants.push(s);
    }
    let seeds = scenario.seeds.resolve();
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = exec.map(jobs, |(i, seed)| {
        run_one(&variants[i], seed).map_err(|e| HarnessError::Sweep {
            param: spec.param.clone(),
            value: spec.values[i].clone(),
            seed,
            source: Box::new(e),
        })
    });
    let mut points: Vec<SweepPoint> = Vec::with_capacity(variants.len());
    let mut it = results.into_iter();
    for v in &spec.values {
        let runs = it
            .by_ref()
            .take(seeds.len())
            .collect::<Result<Vec<_>, _>>()?;
        let summaries: Vec<&Summary> = runs.iter().map(|r| &r.summary).collect();
        let aggregate = aggregate(&summaries);
        points.push(SweepPoint {
            value: v.clone(),
            batch: Batch { runs, aggregate },
        });
    }
    Ok(SweepResult {
        param: spec.param.clone(),
        points,
    })
}
