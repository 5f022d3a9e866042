//! Discrete-event simulation of RPL DODAG construction on top of a
//! beacon-enabled IEEE 802.15.4 cluster-tree, with DIOs carried in beacons.

pub mod acceptance;
pub mod analysis;
pub mod coupling;
pub mod engine;
pub mod exec;
pub mod harness;
pub mod mac154;
pub mod metrics;
pub mod network;
pub mod rpl;
pub mod scenario;
