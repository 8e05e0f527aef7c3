//! Intelligent Driver Model car-following law.

use serde::{Deserialize, Serialize};

use super::SimError;

/// IDM parameters. Speeds in m/s, distances in m, accelerations in m/s².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 30.0,
            time_headway: 1.5,
            min_gap: 5.0,
            max_accel: 3.0,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, value) in [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("exponent", self.exponent),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidParams(format!(
                    "idm.{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Desired dynamic gap s* for the given speed and closing speed.
    pub fn desired_gap(&self, speed: f64, closing_speed: f64) -> f64 {
        self.min_gap
            + speed * self.time_headway
            + speed * closing_speed / (2.0 * (self.max_accel * self.comfort_decel).sqrt())
    }

    /// Hardest braking the model will ever command.
    pub fn max_braking(&self) -> f64 {
        2.0 * self.comfort_decel
    }
}

/// Unclamped IDM acceleration. `gap = f64::INFINITY` means no leader.
pub fn idm_acceleration_raw(
    speed: f64,
    gap: f64,
    leader_speed: f64,
    p: &IdmParams,
) -> Result<f64, SimError> {
    if gap.is_nan() || gap <= 0.0 {
        return Err(SimError::NonPositiveGap(gap));
    }
    let free = (speed / p.desired_speed).powf(p.exponent);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        (p.desired_gap(speed, speed - leader_speed) / gap).powi(2)
    };
    Ok(p.max_accel * (1.0 - free - interaction))
}

/// IDM acceleration clamped to `[-2·comfort_decel, max_accel]`.
pub fn idm_acceleration(
    speed: f64,
    gap: f64,
    leader_speed: f64,
    p: &IdmParams,
) -> Result<f64, SimError> {
    let raw = idm_acceleration_raw(speed, gap, leader_speed, p)?;
    Ok(raw.clamp(-p.max_braking(), p.max_accel))
}
