use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeedbackConfig, SPEED_OF_LIGHT};

/// Intensity-modulated auxiliary beam pushing on the mirror.
///
/// The beam sits at `bias_power`; the loop modulates around it and the
/// commanded power is clipped to `[0, max_power]`. Each reflection gives a
/// force `2P/c`. The static bias force only displaces the equilibrium and is
/// removed from the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorModel {
    /// W.
    pub max_power: f64,
    /// W.
    pub bias_power: f64,
    /// Clip commanded power to the physical range.
    pub saturate: bool,
}

impl ActuatorModel {
    pub fn new(max_power: f64) -> Self {
        Self { max_power, bias_power: 0.5 * max_power, saturate: true }
    }

    pub fn for_feedback(fb: &FeedbackConfig) -> Self {
        Self::new(fb.actuator_max_power)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_power > 0.0 && self.max_power.is_finite()) {
            return Err(Error::invalid("actuator max_power must be positive"));
        }
        if !(0.0..=self.max_power).contains(&self.bias_power) {
            return Err(Error::invalid("actuator bias_power must lie in [0, max_power]"));
        }
        Ok(())
    }

    /// Largest dynamic push and pull the beam can deliver, N.
    pub fn force_range(&self) -> (f64, f64) {
        (
            -2.0 * self.bias_power / SPEED_OF_LIGHT,
            2.0 * (self.max_power - self.bias_power) / SPEED_OF_LIGHT,
        )
    }

    /// Beam power needed for a dynamic force, before clipping.
    pub fn power_for(&self, force: f64) -> f64 {
        self.bias_power + 0.5 * force * SPEED_OF_LIGHT
    }

    /// Dynamic force actually delivered for a commanded force.
    #[inline]
    pub fn apply(&self, force: f64) -> f64 {
        if !self.saturate {
            return force;
        }
        let power = self.power_for(force).clamp(0.0, self.max_power);
        2.0 * (power - self.bias_power) / SPEED_OF_LIGHT
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clips_at_both_ends() {
        let a = ActuatorModel::new(0.5);
        let (lo, hi) = a.force_range();
        assert!((hi - 0.5 / SPEED_OF_LIGHT).abs() < 1e-24);
        assert!((lo + 0.5 / SPEED_OF_LIGHT).abs() < 1e-24);
        assert_eq!(a.apply(1.0), hi);
        assert_eq!(a.apply(-1.0), lo);
        let small = 1e-12;
        assert!((a.apply(small) - small).abs() < 1e-24);
    }

    #[test]
    fn validation() {
        assert!(ActuatorModel::new(0.5).validate().is_ok());
        assert!(ActuatorModel { bias_power: 0.6, ..ActuatorModel::new(0.5) }.validate().is_err());
        assert!(ActuatorModel::new(0.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn linear_without_saturation(f in -1e-6f64..1e-6) {
            let a = ActuatorModel { saturate: false, ..ActuatorModel::new(0.5) };
            prop_assert_eq!(a.apply(2.0 * f), 2.0 * a.apply(f));
        }

        #[test]
        fn clipped_force_in_range(f in -1e-6f64..1e-6) {
            let a = ActuatorModel::new(0.5);
            let (lo, hi) = a.force_range();
            let out = a.apply(f);
            prop_assert!(out >= lo - 1e-24 && out <= hi + 1e-24);
        }
    }
}
