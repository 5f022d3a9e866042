use std::fmt;
use std::str::FromStr;

use super::{EngineError, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    PanCoordinator,
    /// Full function device: may become a coordinator, runs RPL as a router.
    Ffd,
    /// Reduced function device: RPL leaf, never beacons.
    Rfd,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::PanCoordinator => "pan",
            Role::Ffd => "ffd",
            Role::Rfd => "rfd",
        }
    }

    pub fn can_coordinate(self) -> bool {
        !matches!(self, Role::Rfd)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pan" | "root" | "pan-coordinator" => Ok(Role::PanCoordinator),
            "ffd" | "router" => Ok(Role::Ffd),
            "rfd" | "leaf" => Ok(Role::Rfd),
            other => Err(format!("unknown role `{other}` (expected pan, ffd or rfd)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    pub role: Role,
    /// Start the run already associated with this coordinator.
    pub preassociated_with: Option<NodeId>,
    /// Never boots; its radio can still be driven directly (jammer in tests).
    pub inert: bool,
}

impl NodeSpec {
    pub fn new(id: u16, x: f64, y: f64, role: Role) -> Self {
        NodeSpec {
            id: NodeId(id),
            x,
            y,
            role,
            preassociated_with: None,
            inert: false,
        }
    }

    pub fn preassociated(mut self, parent: u16) -> Self {
        self.preassociated_with = Some(NodeId(parent));
        self
    }

    pub fn inert(mut self) -> Self {
        self.inert = true;
        self
    }
}

/// Node placement plus a closed unit-disk connectivity model.
#[derive(Clone, Debug)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    radio_range: f64,
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn new(mut nodes: Vec<NodeSpec>, radio_range: f64) -> Result<Self, EngineError> {
        if !(radio_range > 0.0) || !radio_range.is_finite() {
            return Err(EngineError::BadRange(radio_range));
        }
        nodes.sort_by_key(|n| n.id);
        for pair in nodes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(EngineError::DuplicateNode(pair[0].id));
            }
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(EngineError::MissingNode(NodeId(i as u16)));
            }
        }
        let pans = nodes
            .iter()
            .filter(|n| n.role == Role::PanCoordinator)
            .count();
        if pans != 1 {
            return Err(EngineError::PanCoordinatorCount(pans));
        }

        let adjacency = (0..nodes.len())
            .map(|a| {
                (0..nodes.len())
                    .filter(|&b| b != a && within(&nodes[a], &nodes[b], radio_range))
                    .map(|b| NodeId(b as u16))
                    .collect()
            })
            .collect();

        let topo = Topology {
            nodes,
            radio_range,
            adjacency,
        };
        topo.check_preassociation()?;
        Ok(topo)
    }

    fn check_preassociation(&self) -> Result<(), EngineError> {
        for n in &self.nodes {
            let Some(parent) = n.preassociated_with else {
                continue;
            };
            let bad = |reason: &str| EngineError::BadPreassociation {
                node: n.id,
                reason: reason.to_string(),
            };
            if n.role == Role::PanCoordinator {
                return Err(bad("the PAN coordinator cannot have a parent"));
            }
            let p = self.node(parent).map_err(|_| bad("parent does not exist"))?;
            if !p.role.can_coordinate() {
                return Err(bad("parent is an RFD"));
            }
            if !self.in_range(n.id, parent)? {
                return Err(bad("parent is out of radio range"));
            }
            // walk up; must reach the PAN coordinator without revisiting
            let mut cur = parent;
            let mut steps = 0;
            loop {
                let c = &self.nodes[cur.index()];
                if c.role == Role::PanCoordinator {
                    break;
                }
                match c.preassociated_with {
                    Some(next) if steps <= self.nodes.len() => {
                        cur = next;
                        steps += 1;
                    }
                    _ => return Err(bad("parent chain does not reach the PAN coordinator")),
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeSpec, EngineError> {
        self.nodes.get(id.index()).ok_or(EngineError::UnknownNode(id))
    }

    pub fn root(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.role == Role::PanCoordinator)
            .map(|n| n.id)
            .expect("validated at construction")
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, EngineError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        Ok((na.x - nb.x).hypot(na.y - nb.y))
    }

    /// Closed disk: a node exactly at `radio_range` is reachable.
    pub fn in_range(&self, a: NodeId, b: NodeId) -> Result<bool, EngineError> {
        Ok(self.distance(a, b)? <= self.radio_range)
    }

    /// Nodes within range of `id`, excluding `id` itself, in id order.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id.index()]
    }
}

fn within(a: &NodeSpec, b: &NodeSpec, range: f64) -> bool {
    (a.x - b.x).hypot(a.y - b.y) <= range
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(spacing: f64, n: u16, range: f64) -> Topology {
        let nodes = (0..n)
            .map(|i| {
                let role = if i == 0 { Role::PanCoordinator } else { Role::Ffd };
                NodeSpec::new(i, f64::from(i) * spacing, 0.0, role)
            })
            .collect();
        Topology::new(nodes, range).unwrap()
    }

    #[test]
    fn self_distance_is_in_range() {
        let t = line(10.0, 2, 5.0);
        assert!(t.in_range(NodeId(0), NodeId(0)).unwrap());
        assert!(t.neighbors(NodeId(0)).is_empty());
    }

    #[test]
    fn boundary_distance_counts() {
        let t = line(50.0, 2, 50.0);
        assert!(t.in_range(NodeId(0), NodeId(1)).unwrap());
    }

    #[test]
    fn chain_spaced_beyond_range_is_disconnected() {
        let range = 50.0;
        let t = line(1.2 * range, 4, range);
        for a in 0..4u16 {
            for b in 0..4u16 {
                let expected = a == b;
                assert_eq!(t.in_range(NodeId(a), NodeId(b)).unwrap(), expected, "{a}-{b}");
            }
        }
    }

    #[test]
    fn rejects_bad_topologies() {
        let two_pans = vec![
            NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
            NodeSpec::new(1, 1.0, 0.0, Role::PanCoordinator),
        ];
        assert_eq!(
            Topology::new(two_pans, 5.0).unwrap_err(),
            EngineError::PanCoordinatorCount(2)
        );
        let dup = vec![
            NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
            NodeSpec::new(0, 1.0, 0.0, Role::Ffd),
        ];
        assert_eq!(
            Topology::new(dup, 5.0).unwrap_err(),
            EngineError::DuplicateNode(NodeId(0))
        );
        let gap = vec![
            NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
            NodeSpec::new(2, 1.0, 0.0, Role::Ffd),
        ];
        assert_eq!(
            Topology::new(gap, 5.0).unwrap_err(),
            EngineError::MissingNode(NodeId(1))
        );
        let single = vec![NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator)];
        assert!(Topology::new(single, 0.0).is_err());
    }

    #[test]
    fn unknown_node_is_an_error() {
        let t = line(10.0, 2, 50.0);
        assert_eq!(
            t.in_range(NodeId(0), NodeId(9)).unwrap_err(),
            EngineError::UnknownNode(NodeId(9))
        );
    }

    #[test]
    fn preassociation_must_reach_root() {
        let nodes = vec![
            NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
            NodeSpec::new(1, 10.0, 0.0, Role::Ffd).preassociated(2),
            NodeSpec::new(2, 20.0, 0.0, Role::Ffd).preassociated(1),
        ];
        assert!(matches!(
            Topology::new(nodes, 50.0),
            Err(EngineError::BadPreassociation { .. })
        ));
        let ok = vec![
            NodeSpec::new(0, 0.0, 0.0, Role::PanCoordinator),
            NodeSpec::new(1, 10.0, 0.0, Role::Ffd).preassociated(0),
            NodeSpec::new(2, 20.0, 0.0, Role::Rfd).preassociated(1),
        ];
        assert!(Topology::new(ok, 50.0).is_ok());
    }
}
