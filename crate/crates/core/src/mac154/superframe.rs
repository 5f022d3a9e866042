use crate::engine::{SimTime, Ticks};

use super::MacError;

/// aBaseSuperframeDuration in symbols.
pub const BASE_SUPERFRAME_TICKS: Ticks = 960;

pub const MAX_ORDER: u8 = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuperframeConfig {
    pub bo: u8,
    pub so: u8,
    pub base_superframe: Ticks,
    /// Beacon interval, `base << bo`.
    pub bi: Ticks,
    /// Superframe (active period) duration, `base << so`.
    pub sd: Ticks,
}

impl SuperframeConfig {
    pub fn from_orders(bo: u8, so: u8) -> Result<Self, MacError> {
        Self::with_base(bo, so, BASE_SUPERFRAME_TICKS)
    }

    pub fn with_base(bo: u8, so: u8, base_superframe: Ticks) -> Result<Self, MacError> {
        if bo > MAX_ORDER || so > MAX_ORDER {
            return Err(MacError::OrderOutOfRange { bo, so });
        }
        if so > bo {
            return Err(MacError::SoAboveBo { bo, so });
        }
        if base_superframe == 0 {
            return Err(MacError::ZeroBase);
        }
        Ok(SuperframeConfig {
            bo,
            so,
            base_superframe,
            bi: base_superframe << bo,
            sd: base_superframe << so,
        })
    }

    /// Upper bound on a coordinator's radio-on fraction, as `1 / denominator`.
    pub fn duty_bound_denominator(&self) -> u64 {
        1 << (self.bo - self.so)
    }

    pub fn duty_bound(&self) -> f64 {
        1.0 / self.duty_bound_denominator() as f64
    }

    /// Number of non-overlapping active periods that fit in one beacon interval.
    pub fn slots_per_interval(&self) -> u64 {
        self.duty_bound_denominator()
    }

    /// First instant `>= t` on the beacon grid `offset + k * BI`.
    pub fn next_slot_instant(&self, offset: Ticks, t: SimTime) -> SimTime {
        if t.0 <= offset {
            return SimTime(offset);
        }
        let k = (t.0 - offset).div_ceil(self.bi);
        SimTime(offset + k * self.bi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bo5_so2() {
        let sf = SuperframeConfig::from_orders(5, 2).unwrap();
        assert_eq!(sf.bi, 30720);
        assert_eq!(sf.sd, 3840);
        // 491.52 ms and 61.44 ms at 16 µs per tick
        assert!((crate::engine::ticks_to_secs(sf.bi) - 0.49152).abs() < 1e-12);
        assert!((crate::engine::ticks_to_secs(sf.sd) - 0.06144).abs() < 1e-12);
        assert_eq!(sf.duty_bound_denominator(), 8);
    }

    #[test]
    fn always_on_boundary() {
        let sf = SuperframeConfig::from_orders(4, 4).unwrap();
        assert_eq!(sf.bi, sf.sd);
        assert_eq!(sf.duty_bound(), 1.0);
    }

    #[test]
    fn bo3_so2() {
        let sf = SuperframeConfig::from_orders(3, 2).unwrap();
        assert_eq!(sf.bi, 7680);
        assert_eq!(sf.duty_bound(), 0.5);
    }

    #[test]
    fn so_above_bo_rejected() {
        assert_eq!(
            SuperframeConfig::from_orders(2, 3).unwrap_err(),
            MacError::SoAboveBo { bo: 2, so: 3 }
        );
        assert!(SuperframeConfig::from_orders(15, 2).is_err());
    }

    #[test]
    fn slot_grid() {
        let sf = SuperframeConfig::from_orders(5, 2).unwrap();
        assert_eq!(sf.next_slot_instant(3840, SimTime(0)), SimTime(3840));
        assert_eq!(sf.next_slot_instant(3840, SimTime(3840)), SimTime(3840));
        assert_eq!(sf.next_slot_instant(3840, SimTime(3841)), SimTime(3840 + 30720));
    }
}
