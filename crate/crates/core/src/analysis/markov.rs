use rand::Rng;

use super::AnalysisError;
use crate::engine::Ticks;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrickleChainParams {
    /// Probability that an interval ends in a reset.
    pub p: f64,
    pub imax: u32,
    pub imin: Ticks,
    pub bi: Ticks,
}

impl TrickleChainParams {
    pub fn new(p: f64, imax: u32, imin: Ticks, bi: Ticks) -> Result<Self, AnalysisError> {
        let params = TrickleChainParams { p, imax, imin, bi };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(AnalysisError::InvalidParams(format!("p = {} not in [0, 1]", self.p)));
        }
        if self.imin == 0 || self.bi == 0 {
            return Err(AnalysisError::InvalidParams("Imin and BI must be >= 1".into()));
        }
        if self.imax > 40 {
            return Err(AnalysisError::InvalidParams(format!("imax = {} too large", self.imax)));
        }
        Ok(())
    }

    pub fn interval(&self, state: u32) -> f64 {
        self.imin as f64 * f64::powi(2.0, state as i32)
    }

    /// One step of the chain.
    pub fn step<R: Rng + ?Sized>(&self, state: u32, rng: &mut R) -> u32 {
        if rng.random_bool(self.p) {
            0
        } else {
            (state + 1).min(self.imax)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDist {
    pub probs: Vec<f64>,
}

impl StationaryDist {
    /// Inverse-CDF draw of a state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &q) in self.probs.iter().enumerate() {
            acc += q;
            if u < acc {
                return i as u32;
            }
        }
        // u landed in the rounding slack above the last partial sum
        self.probs
            .iter()
            .rposition(|&q| q > 0.0)
            .unwrap_or(self.probs.len() - 1) as u32
    }
}

/// Geometric law with the tail mass collected in the last state.
pub fn stationary(params: &TrickleChainParams) -> StationaryDist {
    let q = 1.0 - params.p;
    let imax = params.imax as i32;
    let mut probs: Vec<f64> = (0..imax).map(|i| q.powi(i) * params.p).collect();
    probs.push(q.powi(imax));
    StationaryDist { probs }
}

/// Runs the chain for `intervals` steps from state 0 and returns the
/// fraction of steps spent in each state.
pub fn simulate_chain<R: Rng + ?Sized>(
    params: &TrickleChainParams,
    intervals: u64,
    rng: &mut R,
) -> Vec<f64> {
    let mut counts = vec![0u64; params.imax as usize + 1];
    let mut state = 0u32;
    for _ in 0..intervals {
        counts[state as usize] += 1;
        state = params.step(state, rng);
    }
    counts
        .into_iter()
        .map(|c| c as f64 / intervals.max(1) as f64)
        .collect()
}
