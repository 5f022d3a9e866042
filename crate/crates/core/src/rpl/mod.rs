//! Minimal upward-route RPL: Trickle, DIO/DIS handling and hop-count rank.

mod dodag;
mod trickle;

pub use dodag::{
    Dio, ParentDecision, Rank, ResetCause, RplConfig, RplError, RplNode, RplRole, RplStats,
};
pub use trickle::{Expiry, TrickleParams, TrickleTimer};
