//! Closed-form DIO delay under a beacon-enabled MAC, and a Monte Carlo
//! sampler of the same Trickle/beacon process to check it against.
//!
//! The Trickle interval is modelled as a Markov chain over the doubling
//! index `0..=imax`: each interval either resets (probability `p`, back to
//! state 0) or doubles, saturating at `imax`. A DIO generated at offset `X`
//! after the interval start waits for the next beacon, `BI - (X mod BI)`.

mod delay;
mod markov;

pub use delay::{
    analysis_table, delay_sample, expected_delay_at_imin, expected_delay_general,
    expected_floor_quotient, monte_carlo_delay, write_analysis_csv, AnalysisRow, MonteCarlo,
    MC_SHARD_SAMPLES,
};
pub use markov::{simulate_chain, stationary, StationaryDist, TrickleChainParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("Imin ({imin}) exceeds BI ({bi}); the single-beacon delay formula needs Imin <= BI")]
    IminAboveBi { imin: u64, bi: u64 },
    #[error("invalid chain parameters: {0}")]
    InvalidParams(String),
    #[error("at least one sample is required")]
    NoSamples,
}
