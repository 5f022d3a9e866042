use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beacon_rpl::acceptance;
use beacon_rpl::analysis::{analysis_table, write_analysis_csv, TrickleChainParams};
use beacon_rpl::coupling::{scan_is_sufficient, solicitation_guaranteed};
use beacon_rpl::exec::Execution;
use beacon_rpl::harness::{aggregate_csv, run_scenario, sweep, SweepSpec};
use beacon_rpl::scenario::{default_scenario, Scenario, ScenarioError};

const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_VALIDATE: u8 = 5;

#[derive(Parser)]
#[command(name = "beacon-rpl", version, about = "RPL over beacon-enabled 802.15.4 simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario once per seed.
    Run(Common),
    /// Run the scenario for every value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `bo=3,4,5`, `scan_duration=...` or `sbp_size_bytes=...`
        #[arg(long)]
        sweep: String,
    },
    /// Delay table: closed form against Monte Carlo.
    Analyze(AnalyzeArgs),
    /// Run the acceptance checks.
    Validate {
        #[arg(long)]
        sequential: bool,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    bo: Option<String>,
    #[arg(long)]
    so: Option<String>,
    #[arg(long = "sbp-size")]
    sbp_size: Option<String>,
    /// `auto` or ticks
    #[arg(long)]
    scan: Option<String>,
    /// A count (seeds 1..=N) or a comma list
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "steady-ticks")]
    steady_ticks: Option<String>,
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run seeds one after another
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, default_value = "5")]
    bo: u8,
    #[arg(long, default_value = "2")]
    so: u8,
    /// Reset probabilities
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1")]
    p: Vec<f64>,
    /// Doublings
    #[arg(long, value_delimiter = ',', default_value = "4,8")]
    imax: Vec<u32>,
    /// Imin values in ticks; `auto` is BI - SD
    #[arg(long, value_delimiter = ',', default_value = "auto")]
    imin: Vec<String>,
    #[arg(long, default_value = "100000")]
    samples: u64,
    #[arg(long, default_value = "1")]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    fn scenario(&self) -> Result<Scenario, ScenarioError> {
        let mut s = match &self.config {
            Some(p) => Scenario::from_file(p)?,
            None => default_scenario(),
        };
        let overrides = [
            ("coupling.scheme", &self.scheme),
            ("mac.bo", &self.bo),
            ("mac.so", &self.so),
            ("coupling.sbp_size_bytes", &self.sbp_size),
            ("mac.scan", &self.scan),
            ("run.seeds", &self.seeds),
            ("run.steady_ticks", &self.steady_ticks),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                s.set(key, v)?;
            }
        }
        if self.trace {
            s.trace = true;
        }
        s.validate()?;
        Ok(s)
    }
}

fn warn_conditions(s: &Scenario) {
    let Ok(cfg) = s.sim_config() else { return };
    let sf = cfg.superframe;
    if let Ok(imin) = cfg.imin() {
        if !solicitation_guaranteed(imin, &sf) {
            eprintln!(
                "warning: Imin={imin} exceeds BI-SD={}; a solicited beacon may lack a DIO",
                sf.bi - sf.sd
            );
        }
    }
    if !scan_is_sufficient(cfg.scan_ticks(), &sf) {
        eprintln!(
            "warning: scan of {} ticks is shorter than half the beacon interval ({})",
            cfg.scan_ticks(),
            sf.bi / 2
        );
    }
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn cmd_run(c: Common) -> ExitCode {
    let s = match c.scenario() {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    warn_conditions(&s);
    let batch = match run_scenario(&s, c.exec()) {
        Ok(b) => b,
        Err(e) => return config_error(e),
    };
    if let Err(e) = batch.write(&c.out) {
        return config_error(e);
    }
    if let Err(e) = std::fs::write(c.out.join("scenario.txt"), s.to_text()) {
        return config_error(e);
    }
    print!("{}", aggregate_csv(&batch.aggregate));
    let stuck: Vec<String> = batch
        .runs
        .iter()
        .filter(|r| !r.summary.converged)
        .map(|r| {
            let nodes: Vec<String> = r
                .output
                .convergence
                .unassociated
                .iter()
                .map(|n| n.to_string())
                .collect();
            format!("seed {} (unassociated: {})", r.seed(), nodes.join(" "))
        })
        .collect();
    if stuck.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("not converged: {}", stuck.join(", "));
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

fn cmd_sweep(c: Common, spec: &str) -> ExitCode {
    let s = match c.scenario() {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let spec = match SweepSpec::parse(spec) {
        Ok(spec) => spec,
        Err(e) => return config_error(e),
    };
    warn_conditions(&s);
    let result = match sweep(&s, &spec, c.exec()) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    if let Err(e) = result.write(&c.out) {
        return config_error(e);
    }
    print!("{}", result.aggregate_csv());
    if result.converged() {
        ExitCode::SUCCESS
    } else {
        eprintln!("some runs did not converge");
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> ExitCode {
    let sf = match beacon_rpl::mac154::SuperframeConfig::from_orders(a.bo, a.so) {
        Ok(sf) => sf,
        Err(e) => return config_error(e),
    };
    let mut imins = Vec::new();
    for v in &a.imin {
        match v.as_str() {
            "auto" => match beacon_rpl::coupling::auto_imin(&sf) {
                Ok(t) => imins.push(t),
                Err(e) => return config_error(e),
            },
            other => match other.parse::<u64>() {
                Ok(t) => imins.push(t),
                Err(e) => return config_error(format!("--imin {other}: {e}")),
            },
        }
    }
    let mut grid = Vec::new();
    for &p in &a.p {
        for &imax in &a.imax {
            for &imin in &imins {
                match TrickleChainParams::new(p, imax, imin, sf.bi) {
                    Ok(params) => grid.push(params),
                    Err(e) => return config_error(e),
                }
            }
        }
    }
    let rows = match analysis_table(&grid, a.samples, a.seed, Execution::default()) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let mut buf = Vec::new();
    write_analysis_csv(&mut buf, &rows).expect("writing to memory");
    if let Some(dir) = &a.out {
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join("analysis.csv"), &buf));
        if let Err(e) = written {
            return config_error(e);
        }
    }
    print!("{}", String::from_utf8_lossy(&buf));
    ExitCode::SUCCESS
}

fn cmd_validate(sequential: bool) -> ExitCode {
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let verdicts = acceptance::run_all(exec);
    for v in &verdicts {
        println!("{v}");
    }
    if verdicts.iter().all(|v| v.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(c) => cmd_run(c),
        Cmd::Sweep { common, sweep } => cmd_sweep(common, &sweep),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Validate { sequential } => cmd_validate(sequential),
    }
}
