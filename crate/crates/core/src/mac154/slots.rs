use std::collections::BTreeMap;

use crate::engine::{NodeId, Ticks};

use super::{MacError, SuperframeConfig};

/// Central static scheduler of active periods: each coordinator gets one
/// `SD`-long slot of the beacon interval.
#[derive(Debug, Clone)]
pub struct SlotAllocator {
    sf: SuperframeConfig,
    assigned: BTreeMap<NodeId, Ticks>,
}

impl SlotAllocator {
    pub fn new(sf: SuperframeConfig) -> Self {
        SlotAllocator {
            sf,
            assigned: BTreeMap::new(),
        }
    }

    pub fn offset_of(&self, node: NodeId) -> Option<Ticks> {
        self.assigned.get(&node).copied()
    }

    pub fn assignments(&self) -> &BTreeMap<NodeId, Ticks> {
        &self.assigned
    }

    /// Lowest `k * SD` offset not held by any of `conflicts`.
    pub fn allocate(&mut self, node: NodeId, conflicts: &[NodeId]) -> Result<Ticks, MacError> {
        if let Some(off) = self.offset_of(node) {
            return Ok(off);
        }
        let taken: Vec<Ticks> = conflicts
            .iter()
            .filter(|c| **c != node)
            .filter_map(|c| self.offset_of(*c))
            .collect();
        let offset = (0..self.sf.slots_per_interval())
            .map(|k| k * self.sf.sd)
            .find(|off| !taken.contains(off))
            .ok_or(MacError::NoFreeSlot {
                node,
                slots: self.sf.slots_per_interval(),
            })?;
        self.assigned.insert(node, offset);
        Ok(offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_then_first_child() {
        let sf = SuperframeConfig::from_orders(5, 2).unwrap();
        let mut a = SlotAllocator::new(sf);
        assert_eq!(a.allocate(NodeId(0), &[]).unwrap(), 0);
        assert_eq!(a.allocate(NodeId(1), &[NodeId(0)]).unwrap(), 3840);
        // idempotent
        assert_eq!(a.allocate(NodeId(1), &[NodeId(0)]).unwrap(), 3840);
    }

    #[test]
    fn capacity_exhausted() {
        let sf = SuperframeConfig::from_orders(5, 2).unwrap();
        let mut a = SlotAllocator::new(sf);
        let mut all = Vec::new();
        for i in 0..8u16 {
            a.allocate(NodeId(i), &all).unwrap();
            all.push(NodeId(i));
        }
        let err = a.allocate(NodeId(8), &all).unwrap_err();
        assert_eq!(
            err,
            MacError::NoFreeSlot {
                node: NodeId(8),
                slots: 8
            }
        );
    }

    #[test]
    fn slot_reuse_outside_conflict_set() {
        let sf = SuperframeConfig::from_orders(3, 2).unwrap();
        let mut a = SlotAllocator::new(sf);
        a.allocate(NodeId(0), &[]).unwrap();
        a.allocate(NodeId(1), &[NodeId(0)]).unwrap();
        // node 2 only conflicts with node 1
        assert_eq!(a.allocate(NodeId(2), &[NodeId(1)]).unwrap(), 0);
    }
}
