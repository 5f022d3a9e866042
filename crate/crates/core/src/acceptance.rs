//! Acceptance checks, shared by `beacon-rpl validate` and the `acceptance`
//! test target. Each check returns a verdict plus the measured numbers.

use std::fmt;
use std::time::{Duration, Instant};

use crate::analysis::{
    expected_delay_at_imin, monte_carlo_delay, simulate_chain, stationary, TrickleChainParams,
};
use crate::coupling::IminPolicy;
use crate::engine::{rng_from_seed, NodeSpec, Role, Ticks, TICK_MICROS};
use crate::exec::Execution;
use crate::harness::{run_one, run_scenario, sweep, Batch, RunArtifacts, SweepSpec};
use crate::mac154::{FrameKind, MAX_MAC_FRAME_BYTES};
use crate::network::{FrameAudit, ScanDuration};
use crate::scenario::{default_scenario, Scenario, Seeds};

pub const MC_REL_TOL: f64 = 0.03;
pub const MC_SAMPLES: u64 = 5000;
pub const ANALYSIS_BUDGET: Duration = Duration::from_secs(1);
pub const DELAY_RUNS: usize = 50;
pub const DELAY_MIN_EVENTS: usize = 5000;
pub const DELAY_REL_TOL: f64 = 0.03;
pub const CHAIN_INTERVALS: u64 = 100_000;
pub const CHAIN_ABS_TOL: f64 = 0.01;
pub const GUARANTEE_RUNS: usize = 1000;
pub const PARITY_BUDGET: Duration = Duration::from_secs(60);
pub const RX_PARITY_TOL: f64 = 0.02;
pub const SCAN_ENERGY_TOL: f64 = 0.05;
/// Six minutes in ticks.
pub const STEADY_TICKS: Ticks = 360 * 1_000_000 / TICK_MICROS;
pub const SEEDS: usize = 20;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn verdict(id: u8, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict {
        id,
        name,
        passed,
        detail,
    }
}

fn seeds(n: usize) -> Seeds {
    Seeds::Derived { base: 1, count: n }
}

fn with(mut s: Scenario, pairs: &[(&str, &str)]) -> Scenario {
    for (k, v) in pairs {
        s.set(k, v).expect("acceptance scenario keys are valid");
    }
    s
}

fn batch(s: &Scenario, exec: Execution) -> Batch {
    run_scenario(s, exec).expect("acceptance scenario runs")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Delay mean from the reset state with `Imin = BI / 2`.
pub fn delay_closed_form(exec: Execution) -> Verdict {
    let started = Instant::now();
    let bi: Ticks = 30720;
    let imin = bi / 2;
    // p = 1: every interval restarts at Imin
    let params = TrickleChainParams::new(1.0, 4, imin, bi).expect("valid chain");
    let mc = monte_carlo_delay(&params, MC_SAMPLES, 7, exec).expect("samples > 0");
    let analytic = expected_delay_at_imin(imin, bi).expect("imin <= bi");
    let rel = (mc.mean - analytic).abs() / analytic;
    let took = started.elapsed();
    verdict(
        1,
        "delay closed form",
        rel <= MC_REL_TOL && took < ANALYSIS_BUDGET,
        format!(
            "mc={:.1} analytic={analytic:.1} rel_err={:.4} (tol {MC_REL_TOL}) in {:?}",
            mc.mean, rel, took
        ),
    )
}

/// Pooled DIO wait after solicitations across seeded construction runs.
pub fn solicited_delay(exec: Execution) -> Verdict {
    let s = with(default_scenario(), &[("rpl.imin", "auto")]);
    let s = Scenario {
        seeds: seeds(DELAY_RUNS),
        ..s
    };
    let sf = s.superframe().expect("valid orders");
    let imin = sf.bi - sf.sd;
    let b = batch(&s, exec);
    let delays: Vec<f64> = b
        .runs
        .iter()
        .flat_map(|r| r.output.solicitations.iter())
        .filter_map(|rec| rec.dio_delay())
        .map(|d| d as f64)
        .collect();
    let analytic = expected_delay_at_imin(imin, sf.bi).expect("auto imin below BI");
    let m = if delays.is_empty() { f64::NAN } else { mean(&delays) };
    let rel = (m - analytic).abs() / analytic;
    verdict(
        2,
        "solicited DIO delay",
        delays.len() >= DELAY_MIN_EVENTS && rel <= DELAY_REL_TOL,
        format!(
            "events={} (need {DELAY_MIN_EVENTS}) mean={m:.1} analytic={analytic:.1} rel_err={rel:.4}",
            delays.len()
        ),
    )
}

/// Chain occupancy against the geometric law.
pub fn chain_occupancy() -> Verdict {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, p) in [0.1, 0.5].into_iter().enumerate() {
        let params = TrickleChainParams::new(p, 4, 1000, 30720).expect("valid chain");
        let mut rng = rng_from_seed(100 + i as u64);
        let occ = simulate_chain(&params, CHAIN_INTERVALS, &mut rng);
        let law = stationary(&params);
        for (a, b) in occ.iter().zip(&law.probs) {
            worst = worst.max((a - b).abs());
        }
    }
    let took = started.elapsed();
    verdict(
        3,
        "stationary distribution",
        worst <= CHAIN_ABS_TOL && took < ANALYSIS_BUDGET,
        format!("max |occupancy - law| = {worst:.4} (tol {CHAIN_ABS_TOL}) in {took:?}"),
    )
}

fn guarantee_fraction(s: &Scenario, exec: Execution) -> (usize, usize) {
    let b = batch(s, exec);
    let recs = b
        .runs
        .iter()
        .flat_map(|r| r.output.solicitations.iter())
        .filter(|rec| rec.next_beacon.is_some());
    let (mut total, mut ok) = (0, 0);
    for rec in recs {
        total += 1;
        if rec.next_has_dio == Some(true) {
            ok += 1;
        }
    }
    (ok, total)
}

/// Every solicitation answered by a DIO beacon under the automatic Imin,
/// and not always with `Imin = 2 BI`.
pub fn solicitation_guarantee(exec: Execution) -> Verdict {
    let auto = Scenario {
        seeds: seeds(GUARANTEE_RUNS),
        ..default_scenario()
    };
    let bi = auto.superframe().expect("valid orders").bi;
    let mut wide = auto.clone();
    wide.scheme.imin_policy = IminPolicy::Explicit(2 * bi);
    let (ok_a, n_a) = guarantee_fraction(&auto, exec);
    let (ok_w, n_w) = guarantee_fraction(&wide, exec);
    verdict(
        4,
        "solicitation guarantee",
        n_a > 0 && ok_a == n_a && n_w > 0 && ok_w < n_w,
        format!("auto: {ok_a}/{n_a} answered; Imin=2BI: {ok_w}/{n_w} answered"),
    )
}

fn scheme_pair(base: &Scenario, sbp_size: usize) -> (Scenario, Scenario) {
    let mut p = base.clone();
    p.set("coupling.scheme", "proposed").expect("key");
    let mut s = base.clone();
    s.set("coupling.scheme", "sbp").expect("key");
    s.scheme.sbp_size_bytes = sbp_size;
    (p, s)
}

fn dio_third(s: &Scenario) -> usize {
    s.rpl.dio_size_bytes / 3
}

/// Convergence time CIs overlap at every BO.
pub fn convergence_parity(exec: Execution) -> Verdict {
    let started = Instant::now();
    let base = Scenario {
        seeds: seeds(SEEDS),
        ..default_scenario()
    };
    let (p, s) = scheme_pair(&base, dio_third(&base));
    let spec = SweepSpec::parse("bo=3,4,5,6,7").expect("valid sweep");
    let sp = sweep(&p, &spec, exec).expect("sweep runs");
    let ss = sweep(&s, &spec, exec).expect("sweep runs");
    let mut all = true;
    let mut parts = Vec::new();
    for (a, b) in sp.points.iter().zip(&ss.points) {
        let ca = a.batch.metric("convergence_s").expect("metric");
        let cb = b.batch.metric("convergence_s").expect("metric");
        let ok = ca.overlaps(cb) && a.batch.converged() && b.batch.converged();
        all &= ok;
        parts.push(format!(
            "bo={} {:.2}s vs {:.2}s{}",
            a.value,
            ca.mean,
            cb.mean,
            if ok { "" } else { " (disjoint)" }
        ));
    }
    let took = started.elapsed();
    verdict(
        5,
        "convergence parity",
        all && took < PARITY_BUDGET,
        format!("{} in {took:?}", parts.join(", ")),
    )
}

/// Construction overhead crosses over at a third of the DIO size.
pub fn overhead_crossover(exec: Execution) -> Verdict {
    let base = Scenario {
        seeds: seeds(SEEDS),
        ..default_scenario()
    };
    let dio = base.rpl.dio_size_bytes;
    let third = dio / 3;
    let sizes = [dio / 6, third, dio / 2, dio];
    let (p, s) = scheme_pair(&base, third);
    let prop = batch(&p, exec);
    let po = prop.metric("overhead_bytes").expect("metric").clone();
    let spec = SweepSpec {
        param: "sbp_size_bytes".into(),
        values: sizes.iter().map(usize::to_string).collect(),
    };
    let ss = sweep(&s, &spec, exec).expect("sweep runs");
    let mut all = true;
    let mut parts = vec![format!("proposed {:.0}", po.mean)];
    for (size, point) in sizes.iter().zip(&ss.points) {
        let so = point.batch.metric("overhead_bytes").expect("metric");
        let ok = match size.cmp(&third) {
            std::cmp::Ordering::Greater => po.mean < so.mean,
            std::cmp::Ordering::Less => po.mean > so.mean,
            std::cmp::Ordering::Equal => po.overlaps(so),
        };
        all &= ok;
        parts.push(format!(
            "sbp{size} {:.0}{}",
            so.mean,
            if ok { "" } else { " (wrong side)" }
        ));
    }
    verdict(6, "overhead crossover", all, parts.join(", "))
}

fn hop1_coordinators(r: &RunArtifacts) -> Vec<u16> {
    r.output
        .nodes
        .iter()
        .filter(|n| n.role == Role::Ffd && n.hop == Some(1))
        .map(|n| n.id.0)
        .collect()
}

fn node_tx(r: &RunArtifacts, window: &str, node: u16) -> f64 {
    r.rows
        .iter()
        .filter(|row| row.window == window && row.node == node)
        .map(|row| row.tx_j)
        .sum()
}

/// Hop-1 coordinator TX energy during construction with a long scan.
pub fn unknown_bo_tx(exec: Execution) -> Verdict {
    let mut base = Scenario {
        seeds: seeds(SEEDS),
        ..default_scenario()
    };
    let bi = base.superframe().expect("valid orders").bi;
    base.scan = ScanDuration::Ticks(4 * bi);
    let (p, s) = scheme_pair(&base, dio_third(&base));
    let hop1_tx = |b: &Batch| -> f64 {
        let xs: Vec<f64> = b
            .runs
            .iter()
            .map(|r| {
                hop1_coordinators(r)
                    .into_iter()
                    .map(|n| node_tx(r, "construction", n))
                    .sum()
            })
            .collect();
        mean(&xs)
    };
    let tp = hop1_tx(&batch(&p, exec));
    let ts = hop1_tx(&batch(&s, exec));
    verdict(
        7,
        "unknown-BO TX savings",
        tp < ts,
        format!("hop-1 TX proposed {:.3e} J vs SBP {:.3e} J", tp, ts),
    )
}

fn steady_pair(exec: Execution) -> (Batch, Batch) {
    let base = Scenario {
        seeds: seeds(SEEDS),
        steady_ticks: STEADY_TICKS,
        ..default_scenario()
    };
    let (p, s) = scheme_pair(&base, dio_third(&base));
    (batch(&p, exec), batch(&s, exec))
}

/// Six minutes after convergence: FFD TX lower, RFD TX zero, FFD RX equal.
pub fn steady_state(pair: &(Batch, Batch)) -> Verdict {
    let (p, s) = pair;
    let mut tx_ok = true;
    let mut rfd_zero = true;
    let mut worst_rx: f64 = 0.0;
    let mut tx_ratio = Vec::new();
    for (rp, rs) in p.runs.iter().zip(&s.runs) {
        for (a, b) in rp.rows.iter().zip(&rs.rows) {
            if a.window != "steady" || b.window != "steady" {
                continue;
            }
            if a.role == Role::Rfd.as_str() {
                rfd_zero &= a.tx_j == 0.0 && b.tx_j == 0.0;
            } else {
                tx_ok &= a.tx_j < b.tx_j;
                tx_ratio.push(a.tx_j / b.tx_j);
                worst_rx = worst_rx.max((a.rx_j - b.rx_j).abs() / b.rx_j);
            }
        }
    }
    let steady_rows = p.runs.iter().all(|r| r.rows.iter().any(|x| x.window == "steady"));
    verdict(
        8,
        "steady-state energy",
        steady_rows && tx_ok && rfd_zero && worst_rx <= RX_PARITY_TOL,
        format!(
            "FFD TX lower in all: {tx_ok} (mean ratio {:.3}); RFD TX zero: {rfd_zero}; \
             worst FFD RX diff {:.4} (tol {RX_PARITY_TOL})",
            if tx_ratio.is_empty() { f64::NAN } else { mean(&tx_ratio) },
            worst_rx
        ),
    )
}

/// Frame sizes across a broad mix of runs.
pub fn frame_sizes(exec: Execution) -> Verdict {
    let base = Scenario {
        seeds: seeds(5),
        ..default_scenario()
    };
    let mut audits: Vec<FrameAudit> = Vec::new();
    let dio = base.rpl.dio_size_bytes;
    let bo = SweepSpec::parse("bo=3,4,5,6,7").expect("valid sweep");
    for size in [dio / 6, dio / 3, dio / 2, dio] {
        let (p, s) = scheme_pair(&base, size);
        for sc in [p, s] {
            let r = sweep(&sc, &bo, exec).expect("sweep runs");
            audits.extend(
                r.points
                    .iter()
                    .flat_map(|pt| pt.batch.runs.iter())
                    .map(|run| run.output.audit.clone()),
            );
        }
    }
    let max = audits.iter().map(|a| a.max_mac_bytes).max().unwrap_or(0);
    let oversized: u64 = audits.iter().map(|a| a.oversized).sum();
    let mut req_sizes: Vec<usize> = audits
        .iter()
        .flat_map(|a| a.beacon_request_sizes.iter().copied())
        .collect();
    req_sizes.sort_unstable();
    req_sizes.dedup();
    let requests: u64 = audits
        .iter()
        .map(|a| a.frames_by_kind[FrameKind::BeaconRequest.index()])
        .sum();
    verdict(
        9,
        "frame sizes",
        oversized == 0 && max <= MAX_MAC_FRAME_BYTES && req_sizes == [8] && requests > 0,
        format!(
            "{} runs, largest frame {max} B, oversized {oversized}, beacon-request sizes {req_sizes:?}",
            audits.len()
        ),
    )
}

/// Steady-state coordinator radio-on fraction against the duty bound.
pub fn duty_cycle(pair: &(Batch, Batch)) -> Verdict {
    let sf = default_scenario().superframe().expect("valid orders");
    let (bi, sd) = (sf.bi as f64, sf.sd as f64);
    let mut worst_margin = f64::INFINITY;
    let mut checked = 0;
    for b in [&pair.0, &pair.1] {
        for r in &b.runs {
            let out = &r.output;
            let Some(window) = out.steady_window() else {
                worst_margin = f64::NEG_INFINITY;
                continue;
            };
            let span = (window.end - window.start) as f64;
            for n in out.nodes.iter().filter(|n| n.superframe_offset.is_some()) {
                let ticks = out.ledger.ticks(n.id, window.clone()).expect("known node");
                let beacon = out
                    .beacons
                    .iter()
                    .filter(|x| x.coordinator == n.id)
                    .map(|x| x.phy_ticks)
                    .max()
                    .unwrap_or(0) as f64;
                let parent_cap = if n.coordinator.is_some() { sd } else { 0.0 };
                let bound = sd / bi + beacon / bi + parent_cap / bi;
                let frac = ticks.on() as f64 / span;
                worst_margin = worst_margin.min(bound - frac);
                checked += 1;
            }
        }
    }
    verdict(
        10,
        "duty-cycle bound",
        checked > 0 && worst_margin >= 0.0,
        format!("{checked} coordinator-runs, smallest margin {worst_margin:.5}"),
    )
}

/// Joiner surrounded by `n` coordinators: the root plus `n - 1` FFDs that
/// start associated.
pub fn star_scenario(n: usize) -> Scenario {
    let mut s = default_scenario();
    let mut nodes = vec![NodeSpec::new(0, 20.0, 0.0, Role::PanCoordinator)];
    for i in 1..n {
        let a = i as f64 * std::f64::consts::TAU / n as f64;
        nodes.push(NodeSpec::new(i as u16, 20.0 * a.cos(), 20.0 * a.sin(), Role::Ffd).preassociated(0));
    }
    nodes.push(NodeSpec::new(n as u16, 0.0, 0.0, Role::Rfd));
    s.nodes = nodes;
    s.radio_range = 50.0;
    s.seeds = seeds(5);
    s
}

/// RX energy of the second beacon interval of a scan.
pub fn scan_energy(exec: Execution) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    let mut ok = true;
    for n in 1..=3usize {
        let s = star_scenario(n);
        let model = s.energy;
        let b = batch(&s, exec);
        for r in &b.runs {
            let out = &r.output;
            let joiner = out.nodes.last().expect("joiner").id;
            let m = out.ledger.milestones(joiner).expect("known node");
            let (Some(from), Some(to)) = (m.scan_end, m.parent_selected) else {
                ok = false;
                continue;
            };
            let t = out
                .beacons
                .iter()
                .filter(|x| x.has_dio && x.at >= from)
                .map(|x| x.phy_ticks)
                .max()
                .unwrap_or(0);
            let rx = out.ledger.ticks(joiner, from..to).expect("window").rx;
            let measured = model.energy(crate::mac154::RadioState::Rx, rx);
            let formula = n as f64 * model.energy(crate::mac154::RadioState::Rx, t);
            let rel = (measured - formula).abs() / formula;
            worst = worst.max(rel);
            ok &= t > 0 && rel <= SCAN_ENERGY_TOL;
            if r.seed() == 1 {
                parts.push(format!("n={n}: {measured:.3e} J vs {formula:.3e} J"));
            }
        }
    }
    verdict(
        11,
        "scan energy",
        ok,
        format!("{}; worst rel err {worst:.4} (tol {SCAN_ENERGY_TOL})", parts.join(", ")),
    )
}

/// Same scenario and seed twice: identical trace and CSV.
pub fn determinism() -> Verdict {
    let mut s = default_scenario();
    s.trace = true;
    let a = run_one(&s, 42).expect("run");
    let b = run_one(&s, 42).expect("run");
    let same = a.output.trace == b.output.trace
        && a.nodes_csv() == b.nodes_csv()
        && a.summary.to_text() == b.summary.to_text();
    verdict(
        12,
        "determinism",
        same && !a.output.trace.is_empty(),
        format!("trace {} bytes, identical: {same}", a.output.trace.len()),
    )
}

pub fn run_all(exec: Execution) -> Vec<Verdict> {
    let pair = steady_pair(exec);
    vec![
        delay_closed_form(exec),
        solicited_delay(exec),
        chain_occupancy(),
        solicitation_guarantee(exec),
        convergence_parity(exec),
        overhead_crossover(exec),
        unknown_bo_tx(exec),
        steady_state(&pair),
        frame_sizes(exec),
        duty_cycle(&pair),
        scan_energy(exec),
        determinism(),
    ]
}

/// Steady-state runs shared by the energy and duty-cycle checks.
pub fn steady_runs(exec: Execution) -> (Batch, Batch) {
    steady_pair(exec)
}
