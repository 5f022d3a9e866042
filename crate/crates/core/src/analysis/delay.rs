use std::io::{self, Write};

use rand::{Rng, SeedableRng};

use super::markov::{stationary, TrickleChainParams};
use super::AnalysisError;
use crate::engine::{SimRng, Ticks};
use crate::exec::Execution;

/// Samples per Monte Carlo shard. Each shard owns the RNG stream numbered
/// by its index, so the result does not depend on how shards are scheduled.
pub const MC_SHARD_SAMPLES: u64 = 1 << 14;

/// Time from a DIO generated at offset `x` until the next beacon, for
/// beacons at multiples of `bi`. Always in `(0, bi]`.
pub fn delay_sample(x: f64, bi: f64) -> f64 {
    bi - (x - (x / bi).floor() * bi)
}

/// Mean delay when the interval is `imin` and `imin <= bi`.
pub fn expected_delay_at_imin(imin: Ticks, bi: Ticks) -> Result<f64, AnalysisError> {
    if imin > bi {
        return Err(AnalysisError::IminAboveBi { imin, bi });
    }
    Ok(bi as f64 - 0.75 * imin as f64)
}

/// `E[floor(X / bi)]` for `X ~ Uniform[interval/2, interval)`, summed band
/// by band as `sum_{m >= 1} P(X >= m * bi)`.
pub fn expected_floor_quotient(interval: f64, bi: f64) -> f64 {
    let lo = interval / 2.0;
    let width = interval - lo;
    let first = (lo / bi).floor().max(0.0) as u64 + 1;
    let mut acc = (first - 1) as f64;
    let mut m = first;
    loop {
        let edge = m as f64 * bi;
        if edge >= interval {
            break;
        }
        acc += (interval - edge.max(lo)) / width;
        m += 1;
    }
    acc
}

/// Stationary mean of the delay over the interval chain.
pub fn expected_delay_general(params: &TrickleChainParams) -> f64 {
    let bi = params.bi as f64;
    stationary(params)
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > 0.0)
        .map(|(state, &q)| {
            let interval = params.interval(state as u32);
            let mean_x = 0.75 * interval;
            q * (bi - mean_x + bi * expected_floor_quotient(interval, bi))
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub analytic: f64,
    pub rel_error: f64,
    pub samples: u64,
}

fn shard_sum(params: &TrickleChainParams, seed: u64, shard: u64, n: u64) -> f64 {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(shard);
    let dist = stationary(params);
    let bi = params.bi as f64;
    let mut state = dist.sample(&mut rng);
    let mut sum = 0.0;
    for _ in 0..n {
        let interval = params.interval(state);
        let x = rng.random_range(interval / 2.0..interval);
        sum += delay_sample(x, bi);
        state = params.step(state, &mut rng);
    }
    sum
}

/// Averages `samples` delays drawn along the chain (started from its
/// stationary law) and compares with [`expected_delay_general`].
pub fn monte_carlo_delay(
    params: &TrickleChainParams,
    samples: u64,
    seed: u64,
    exec: Execution,
) -> Result<MonteCarlo, AnalysisError> {
    params.validate()?;
    if samples == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let shards: Vec<(u64, u64)> = (0..samples.div_ceil(MC_SHARD_SAMPLES))
        .map(|s| {
            let n = MC_SHARD_SAMPLES.min(samples - s * MC_SHARD_SAMPLES);
            (s, n)
        })
        .collect();
    let sums = exec.map(shards, |(s, n)| shard_sum(params, seed, s, n));
    let mean = sums.iter().sum::<f64>() / samples as f64;
    let analytic = expected_delay_general(params);
    Ok(MonteCarlo {
        mean,
        analytic,
        rel_error: (mean - analytic).abs() / analytic,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisRow {
    pub params: TrickleChainParams,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub rel_error: f64,
}

pub fn analysis_table(
    grid: &[TrickleChainParams],
    samples: u64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<AnalysisRow>, AnalysisError> {
    grid.iter()
        .map(|params| {
            let mc = monte_carlo_delay(params, samples, seed, exec)?;
            Ok(AnalysisRow {
                params: *params,
                analytic: mc.analytic,
                monte_carlo: mc.mean,
                rel_error: mc.rel_error,
            })
        })
        .collect()
}

pub fn write_analysis_csv<W: Write>(mut out: W, rows: &[AnalysisRow]) -> io::Result<()> {
    writeln!(out, "p,Imax,Imin,BI,E[D]_analytic,E[D]_mc,rel_err")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{:.6}",
            r.params.p, r.params.imax, r.params.imin, r.params.bi, r.analytic, r.monte_carlo, r.rel_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BI: Ticks = 30720;

    /// Midpoint-rule integral of the delay over one uniform interval.
    fn quadrature_delay(interval: f64, bi: f64) -> f64 {
        let steps = 200_000;
        let lo = interval / 2.0;
        let h = (interval - lo) / steps as f64;
        (0..steps)
            .map(|i| delay_sample(lo + (i as f64 + 0.5) * h, bi))
            .sum::<f64>()
            / steps as f64
    }

    fn quadrature_general(params: &TrickleChainParams) -> f64 {
        stationary(params)
            .probs
            .iter()
            .enumerate()
            .map(|(s, q)| q * quadrature_delay(params.interval(s as u32), params.bi as f64))
            .sum()
    }

    #[test]
    fn delay_sample_cases() {
        let bi = BI as f64;
        assert_eq!(delay_sample(bi / 2.0, bi), bi / 2.0);
        assert_eq!(delay_sample(bi, bi), bi);
        assert_eq!(delay_sample(2.5 * bi, bi), bi / 2.0);
        assert_eq!(delay_sample(0.0, bi), bi);
    }

    #[test]
    fn closed_form_at_imin() {
        assert_eq!(expected_delay_at_imin(15360, BI).unwrap(), 19200.0);
        assert_eq!(expected_delay_at_imin(26880, BI).unwrap(), 10560.0);
        assert_eq!(expected_delay_at_imin(BI, BI).unwrap(), BI as f64 / 4.0);
        assert_eq!(
            expected_delay_at_imin(BI + 1, BI).unwrap_err(),
            AnalysisError::IminAboveBi { imin: BI + 1, bi: BI }
        );
    }

    #[test]
    fn closed_form_matches_quadrature_at_imin() {
        for imin in [1000, 15360, 26880, BI] {
            let q = quadrature_delay(imin as f64, BI as f64);
            let c = expected_delay_at_imin(imin, BI).unwrap();
            assert!((q - c).abs() / c < 1e-6, "imin={imin}: {q} vs {c}");
        }
    }

    #[test]
    fn floor_quotient_against_quadrature() {
        for interval in [15360.0, 30720.0, 61440.0, 100_000.0, 245_760.0, 3.5 * 30720.0] {
            let steps = 400_000;
            let lo = interval / 2.0;
            let h = (interval - lo) / steps as f64;
            let q = (0..steps)
                .map(|i| ((lo + (i as f64 + 0.5) * h) / BI as f64).floor())
                .sum::<f64>()
                / steps as f64;
            let e = expected_floor_quotient(interval, BI as f64);
            assert!((q - e).abs() < 1e-4, "I={interval}: {q} vs {e}");
        }
    }

    #[test]
    fn general_reduces_to_imin_form() {
        let at_imin = expected_delay_at_imin(15360, BI).unwrap();
        let single = TrickleChainParams::new(0.4, 0, 15360, BI).unwrap();
        assert_eq!(expected_delay_general(&single), at_imin);
        let pinned = TrickleChainParams::new(1.0, 6, 15360, BI).unwrap();
        assert_eq!(expected_delay_general(&pinned), at_imin);
    }

    #[test]
    fn general_matches_quadrature() {
        for (p, imax) in [(0.3, 4), (0.1, 8), (0.7, 2), (0.0, 3)] {
            let params = TrickleChainParams::new(p, imax, 15360, BI).unwrap();
            let q = quadrature_general(&params);
            let g = expected_delay_general(&params);
            assert!((q - g).abs() / g < 1e-5, "p={p} imax={imax}: {q} vs {g}");
        }
    }

    #[test]
    fn monte_carlo_matches_general() {
        let params = TrickleChainParams::new(0.3, 4, BI / 2, BI).unwrap();
        let mc = monte_carlo_delay(&params, 1_000_000, 7, Execution::default()).unwrap();
        assert!(mc.rel_error < 0.01, "{mc:?}");
    }

    #[test]
    fn single_sample_is_one_draw() {
        let params = TrickleChainParams::new(1.0, 0, 15360, BI).unwrap();
        let mc = monte_carlo_delay(&params, 1, 99, Execution::Sequential).unwrap();
        let mut rng = SimRng::seed_from_u64(99);
        rng.set_stream(0);
        let _ = stationary(&params).sample(&mut rng);
        let x = rng.random_range(7680.0..15360.0);
        assert_eq!(mc.mean, delay_sample(x, BI as f64));
    }

    #[test]
    fn monte_carlo_is_deterministic_across_modes() {
        let params = TrickleChainParams::new(0.2, 5, 20000, BI).unwrap();
        let a = monte_carlo_delay(&params, 100_000, 5, Execution::Sequential).unwrap();
        let b = monte_carlo_delay(&params, 100_000, 5, Execution::Parallel).unwrap();
        let c = monte_carlo_delay(&params, 100_000, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn zero_samples_rejected() {
        let params = TrickleChainParams::new(0.2, 5, 20000, BI).unwrap();
        assert_eq!(
            monte_carlo_delay(&params, 0, 1, Execution::Sequential).unwrap_err(),
            AnalysisError::NoSamples
        );
    }

    #[test]
    fn csv_header_and_rows() {
        let grid = [TrickleChainParams::new(1.0, 0, 15360, BI).unwrap()];
        let rows = analysis_table(&grid, 5000, 1, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        write_analysis_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("p,Imax,Imin,BI,E[D]_analytic,E[D]_mc,rel_err"));
        assert!(lines.next().unwrap().starts_with("1,0,15360,30720,19200.000,"));
    }
}
