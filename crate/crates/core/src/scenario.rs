//! Scenario files: flat `section.key=value` lines, `#` comments.
//!
//! ```text
//! mac.bo=5
//! mac.so=2
//! coupling.scheme=sbp
//! topology.radio_range=50
//! topology.node.0=0,0,pan
//! topology.node.1=40,0,ffd
//! topology.node.2=40,30,rfd,1      # pre-associated with node 1
//! ```
//!
//! The full key list is in `docs/config.md`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coupling::{IminPolicy, Scheme, SchemeConfig};
use crate::engine::{EngineError, NodeSpec, Role, Ticks, Topology};
use crate::mac154::{CsmaParams, FrameSizes, MacError, SuperframeConfig};
use crate::metrics::{EnergyModel, MetricsError};
use crate::network::{NetworkError, ScanDuration, SimConfig};
use crate::rpl::RplConfig;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: expected `key=value`, got `{text}`")]
    Syntax { text: String, line: usize },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("topology: {0}")]
    Topology(#[from] EngineError),
    #[error("mac: {0}")]
    Mac(#[from] MacError),
    #[error("energy: {0}")]
    Energy(#[from] MetricsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn invalid(key: &str, value: &str, reason: impl fmt::Display) -> ScenarioError {
    ScenarioError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Seeds {
    /// `count` seeds starting at `base`.
    Derived { base: u64, count: usize },
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self) -> Vec<u64> {
        match self {
            Seeds::Derived { base, count } => (0..*count as u64).map(|i| base + i).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

impl FromStr for Seeds {
    type Err = String;

    /// `N` means N derived seeds from base 1; a comma list is taken verbatim.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.contains(',') {
            let list = s
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<u64>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            if list.is_empty() {
                return Err("empty seed list".into());
            }
            return Ok(Seeds::List(list));
        }
        let count: usize = s.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        if count == 0 {
            return Err("need at least one seed".into());
        }
        Ok(Seeds::Derived { base: 1, count })
    }
}

/// Everything a batch of runs needs, before orders are turned into ticks.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub nodes: Vec<NodeSpec>,
    pub radio_range: f64,
    pub bo: u8,
    pub so: u8,
    pub frames: FrameSizes,
    pub csma: CsmaParams,
    pub assoc_retry_limit: u32,
    pub wake_guard: Ticks,
    pub scan: ScanDuration,
    pub rpl: RplConfig,
    pub k: u32,
    pub imax_doublings: u32,
    pub scheme: SchemeConfig,
    pub energy: EnergyModel,
    pub seeds: Seeds,
    pub steady_ticks: Ticks,
    /// Defaults to 20000 beacon intervals.
    pub max_ticks: Option<Ticks>,
    pub boot_jitter: Ticks,
    pub trace: bool,
}

/// Approximation of the evaluated chain: a PAN coordinator, two FFDs in a
/// line and two RFD leaves around each coordinator. Every leaf hears exactly
/// one coordinator; each FFD hears only its upstream neighbour when it joins.
/// Geometry is invented, only the hop structure matters.
pub fn default_scenario() -> Scenario {
    let nodes = vec![
        NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
        NodeSpec::new(1, 40.0, 0.0, Role::Ffd),
        NodeSpec::new(2, 80.0, 0.0, Role::Ffd),
        NodeSpec::new(3, -30.0, 15.0, Role::Rfd),
        NodeSpec::new(4, -30.0, -15.0, Role::Rfd),
        NodeSpec::new(5, 40.0, 40.0, Role::Rfd),
        NodeSpec::new(6, 40.0, -40.0, Role::Rfd),
        NodeSpec::new(7, 120.0, 15.0, Role::Rfd),
        NodeSpec::new(8, 120.0, -15.0, Role::Rfd),
    ];
    Scenario {
        nodes,
        radio_range: 50.0,
        bo: 5,
        so: 2,
        frames: FrameSizes::default(),
        csma: CsmaParams::default(),
        assoc_retry_limit: 3,
        wake_guard: 4,
        scan: ScanDuration::Auto,
        rpl: RplConfig::default(),
        k: 10,
        imax_doublings: 8,
        scheme: SchemeConfig::default(),
        energy: EnergyModel::default(),
        seeds: Seeds::Derived { base: 1, count: 20 },
        steady_ticks: 0,
        max_ticks: None,
        boot_jitter: 0,
        trace: false,
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ScenarioError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| invalid(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ScenarioError> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, value, "expected true or false")),
    }
}

fn parse_node(key: &str, id: u16, value: &str) -> Result<NodeSpec, ScenarioError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() < 3 {
        return Err(invalid(key, value, "expected x,y,role[,parent][,inert]"));
    }
    let x: f64 = parse(key, parts[0])?;
    let y: f64 = parse(key, parts[1])?;
    let role: Role = parse(key, parts[2])?;
    let mut spec = NodeSpec::new(id, x, y, role);
    for extra in &parts[3..] {
        if *extra == "inert" {
            spec = spec.inert();
        } else {
            let parent: u16 = parse(key, extra)?;
            spec = spec.preassociated(parent);
        }
    }
    Ok(spec)
}

impl Scenario {
    /// Reads a scenario file on top of [`default_scenario`]. A file that
    /// declares any `topology.node.*` replaces the default node list.
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut s = default_scenario();
        s.apply_text(&text, path.parent())?;
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self, ScenarioError> {
        let mut s = default_scenario();
        s.apply_text(text, None)?;
        Ok(s)
    }

    fn apply_text(&mut self, text: &str, base_dir: Option<&Path>) -> Result<(), ScenarioError> {
        let mut custom_nodes: Vec<NodeSpec> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ScenarioError::Syntax {
                    text: line.to_string(),
                    line: i + 1,
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(id) = key.strip_prefix("topology.node.") {
                let id: u16 = parse(key, id)?;
                custom_nodes.push(parse_node(key, id, value)?);
                continue;
            }
            if key == "topology.file" {
                let path = match base_dir {
                    Some(d) => d.join(value),
                    None => PathBuf::from(value),
                };
                let inner = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                for (j, raw) in inner.lines().enumerate() {
                    let line = raw.split('#').next().unwrap_or("").trim();
                    if line.is_empty() {
                        continue;
                    }
                    let Some((k, v)) = line.split_once('=') else {
                        return Err(ScenarioError::Syntax {
                            text: line.to_string(),
                            line: j + 1,
                        });
                    };
                    let (k, v) = (k.trim(), v.trim());
                    match k.strip_prefix("topology.node.") {
                        Some(id) => {
                            let id: u16 = parse(k, id)?;
                            custom_nodes.push(parse_node(k, id, v)?);
                        }
                        None if k == "topology.radio_range" => self.set(k, v)?,
                        None => {
                            return Err(ScenarioError::UnknownKey {
                                key: k.to_string(),
                                line: j + 1,
                            })
                        }
                    }
                }
                continue;
            }
            match self.set(key, value) {
                Err(ScenarioError::UnknownKey { key, .. }) => {
                    return Err(ScenarioError::UnknownKey { key, line: i + 1 })
                }
                other => other?,
            }
        }
        if !custom_nodes.is_empty() {
            self.nodes = custom_nodes;
        }
        Ok(())
    }

    /// Sets one key. Used by the file reader, CLI overrides and sweeps.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        match key {
            "mac.bo" | "bo" => self.bo = parse(key, value)?,
            "mac.so" | "so" => self.so = parse(key, value)?,
            "mac.empty_beacon_bytes" => self.frames.empty_beacon = parse(key, value)?,
            "mac.phy_overhead_bytes" => self.frames.phy_overhead = parse(key, value)?,
            "mac.beacon_request_bytes" => self.frames.beacon_request = parse(key, value)?,
            "mac.assoc_retry_limit" => self.assoc_retry_limit = parse(key, value)?,
            "mac.wake_guard" => self.wake_guard = parse(key, value)?,
            "mac.min_be" => self.csma.min_be = parse(key, value)?,
            "mac.max_be" => self.csma.max_be = parse(key, value)?,
            "mac.max_backoffs" => self.csma.max_backoffs = parse(key, value)?,
            "mac.scan" | "scan" | "scan_duration" => {
                self.scan = match value.trim() {
                    "auto" => ScanDuration::Auto,
                    v => {
                        let t: Ticks = parse(key, v)?;
                        if t == 0 {
                            return Err(invalid(key, value, "scan duration must be positive"));
                        }
                        ScanDuration::Ticks(t)
                    }
                }
            }
            "rpl.dio_size_bytes" => self.rpl.dio_size_bytes = parse(key, value)?,
            "rpl.min_hop_rank_increase" => self.rpl.min_hop_rank_increase = parse(key, value)?,
            "rpl.k" => self.k = parse(key, value)?,
            "rpl.imax" | "rpl.imax_doublings" => self.imax_doublings = parse(key, value)?,
            "rpl.imin" | "coupling.imin" | "imin" => {
                self.scheme.imin_policy = parse::<IminPolicy>(key, value)?
            }
            "coupling.scheme" | "scheme" => self.scheme.scheme = parse::<Scheme>(key, value)?,
            "coupling.sbp_size_bytes" | "sbp_size_bytes" | "sbp_size" => {
                self.scheme.sbp_size_bytes = parse(key, value)?
            }
            "energy.i_tx" => self.energy.i_tx = parse(key, value)?,
            "energy.i_rx" => self.energy.i_rx = parse(key, value)?,
            "energy.i_sleep" => self.energy.i_sleep = parse(key, value)?,
            "energy.voltage" => self.energy.voltage = parse(key, value)?,
            "run.seeds" | "seeds" => self.seeds = parse(key, value)?,
            "run.base_seed" => {
                let base: u64 = parse(key, value)?;
                let count = self.seeds.resolve().len();
                self.seeds = Seeds::Derived { base, count };
            }
            "run.steady_ticks" | "steady_ticks" => self.steady_ticks = parse(key, value)?,
            "run.max_ticks" => self.max_ticks = Some(parse(key, value)?),
            "run.boot_jitter" => self.boot_jitter = parse(key, value)?,
            "run.trace" => self.trace = parse_bool(key, value)?,
            "topology.radio_range" => self.radio_range = parse(key, value)?,
            _ => {
                return Err(ScenarioError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    pub fn superframe(&self) -> Result<SuperframeConfig, ScenarioError> {
        Ok(SuperframeConfig::from_orders(self.bo, self.so)?)
    }

    /// Checks everything a run would reject, naming the offending key.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.sim_config().map(|_| ())
    }

    pub fn sim_config(&self) -> Result<SimConfig, ScenarioError> {
        let sf = SuperframeConfig::from_orders(self.bo, self.so)
            .map_err(|e| invalid("mac.bo/mac.so", &format!("{}/{}", self.bo, self.so), e))?;
        if sf.bi == sf.sd {
            return Err(invalid(
                "mac.bo/mac.so",
                &format!("{}/{}", self.bo, self.so),
                "beacon interval must exceed the active period",
            ));
        }
        if self.csma.min_be > self.csma.max_be {
            return Err(invalid(
                "mac.min_be",
                &self.csma.min_be.to_string(),
                "must not exceed mac.max_be",
            ));
        }
        if self.rpl.dio_size_bytes == 0 {
            return Err(invalid("rpl.dio_size_bytes", "0", "must be positive"));
        }
        if self.scheme.sbp_size_bytes == 0 {
            return Err(invalid("coupling.sbp_size_bytes", "0", "must be positive"));
        }
        let room = self.frames.beacon_capacity();
        let payload = match self.scheme.scheme {
            Scheme::Proposed => ("rpl.dio_size_bytes", self.rpl.dio_size_bytes),
            Scheme::Sbp => ("coupling.sbp_size_bytes", self.scheme.sbp_size_bytes),
        };
        if payload.1 > room {
            return Err(invalid(
                payload.0,
                &payload.1.to_string(),
                format!("a beacon has room for {room} payload bytes"),
            ));
        }
        if self.imax_doublings > 30 {
            return Err(invalid(
                "rpl.imax",
                &self.imax_doublings.to_string(),
                "at most 30 doublings",
            ));
        }
        if self.k == 0 {
            return Err(invalid("rpl.k", "0", "must be positive"));
        }
        if self.wake_guard >= sf.sd {
            return Err(invalid(
                "mac.wake_guard",
                &self.wake_guard.to_string(),
                "must be shorter than the active period",
            ));
        }
        if self.max_ticks == Some(0) {
            return Err(invalid("run.max_ticks", "0", "must be positive"));
        }
        self.energy.validate()?;
        let topology = Topology::new(self.nodes.clone(), self.radio_range)?;
        let mut cfg = SimConfig::new(topology, sf);
        cfg.frames = self.frames;
        cfg.csma = self.csma;
        cfg.rpl = self.rpl;
        cfg.imax_doublings = self.imax_doublings;
        cfg.k = self.k;
        cfg.scheme = self.scheme;
        cfg.scan = self.scan;
        cfg.assoc_retry_limit = self.assoc_retry_limit;
        cfg.wake_guard = self.wake_guard;
        cfg.boot_jitter = self.boot_jitter;
        cfg.steady_ticks = self.steady_ticks;
        if let Some(m) = self.max_ticks {
            cfg.max_ticks = m;
        }
        cfg.trace = self.trace;
        cfg.imin().map_err(|e| {
            invalid("rpl.imin", &self.scheme.imin_policy.to_string(), e)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the scenario back as key=value text.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let seeds = match &self.seeds {
            Seeds::Derived { base, count } => format!("{count}\nrun.base_seed={base}"),
            Seeds::List(v) => v
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",")
                + ",",
        };
        let _ = writeln!(out, "mac.bo={}\nmac.so={}", self.bo, self.so);
        let _ = writeln!(out, "mac.scan={}", self.scan);
        let _ = writeln!(out, "coupling.scheme={}", self.scheme.scheme);
        let _ = writeln!(out, "coupling.sbp_size_bytes={}", self.scheme.sbp_size_bytes);
        let _ = writeln!(out, "rpl.imin={}", self.scheme.imin_policy);
        let _ = writeln!(out, "rpl.imax={}\nrpl.k={}", self.imax_doublings, self.k);
        let _ = writeln!(out, "rpl.dio_size_bytes={}", self.rpl.dio_size_bytes);
        let _ = writeln!(out, "run.seeds={seeds}");
        let _ = writeln!(out, "run.steady_ticks={}", self.steady_ticks);
        let _ = writeln!(out, "topology.radio_range={}", self.radio_range);
        for n in &self.nodes {
            let _ = write!(out, "topology.node.{}={},{},{}", n.id.0, n.x, n.y, n.role);
            if let Some(p) = n.preassociated_with {
                let _ = write!(out, ",{}", p.0);
            }
            if n.inert {
                out.push_str(",inert");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::NodeId;

    #[test]
    fn default_leaves_hear_one_coordinator() {
        let s = default_scenario();
        let topo = Topology::new(s.nodes.clone(), s.radio_range).unwrap();
        for spec in topo.nodes().iter().filter(|n| n.role == Role::Rfd) {
            let coords = topo
                .neighbors(spec.id)
                .iter()
                .filter(|&&m| topo.nodes()[m.index()].role.can_coordinate())
                .count();
            assert_eq!(coords, 1, "leaf {}", spec.id);
        }
        // FFDs hear only coordinators one hop closer or further along the chain
        assert_eq!(topo.neighbors(NodeId(2)), &[NodeId(1), NodeId(7), NodeId(8)]);
        assert!(!topo.in_range(NodeId(0), NodeId(2)).unwrap());
    }

    #[test]
    fn default_duty_bound_is_an_eighth() {
        let sf = default_scenario().superframe().unwrap();
        assert_eq!(sf.duty_bound(), 0.125);
        assert_eq!(default_scenario().seeds.resolve(), (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn parses_overrides_and_nodes() {
        let s = Scenario::from_text(
            "mac.bo=6 # comment\ncoupling.scheme=sbp\nrun.seeds=3,9\n\
             topology.node.0=0,0,pan\ntopology.node.1=10,0,rfd,0\n",
        )
        .unwrap();
        assert_eq!(s.bo, 6);
        assert_eq!(s.scheme.scheme, Scheme::Sbp);
        assert_eq!(s.seeds.resolve(), vec![3, 9]);
        assert_eq!(s.nodes.len(), 2);
        assert_eq!(s.nodes[1].preassociated_with, Some(NodeId(0)));
        s.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let err = Scenario::from_text("mac.bo=5\nmac.bogus=1\n").unwrap_err();
        assert!(err.to_string().contains("mac.bogus"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = Scenario::from_text("mac.so=x").unwrap_err();
        assert!(err.to_string().contains("mac.so"), "{err}");
        let err = Scenario::from_text("mac.bo=2\nmac.so=2").unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("mac.bo"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let mut s = default_scenario();
        s.set("seeds", "4,5").unwrap();
        s.set("scheme", "sbp").unwrap();
        let back = Scenario::from_text(&s.to_text()).unwrap();
        assert_eq!(back.to_text(), s.to_text());
    }
}
