//! Variance-driven time-headway adaptation.
//!
//! A follower observes the speeds of the vehicles ahead, forms their variation
//! coefficient `V = sqrt(theta) / v_bar` and drives the auxiliary state
//!
//! ```text
//! dz/dt = -z + gamma * V * sign(own_speed - v_bar)
//! ```
//!
//! The factor applied to the risky, safe and interaction time headways is
//! `alpha_t = 1 + sat(z)`, with `sat` clipping `z` to
//! `[alpha_t_0 - 1, alpha_t_max - 1]`. A follower faster than the traffic
//! ahead in heterogeneous conditions keeps longer headways; a slower one
//! shortens them.

use thiserror::Error;

use crate::control::sign;

#[derive(Debug, Error, PartialEq)]
pub enum VdtError {
    #[error("no speed samples available")]
    NoData,
    #[error("vdt parameter `{name}` = {value} violates {rule}")]
    Invalid {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
}

/// Which vehicles ahead contribute to the speed statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplePopulation {
    /// Vehicles ahead within `DELTA_MAX` of the follower.
    #[default]
    InRange,
    /// Every vehicle ahead.
    AllAhead,
}

impl SamplePopulation {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplePopulation::InRange => "in_range",
            SamplePopulation::AllAhead => "all_ahead",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_range" => Some(SamplePopulation::InRange),
            "all_ahead" => Some(SamplePopulation::AllAhead),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdtParams {
    /// Sensitivity of the time headway to speed variation.
    pub gamma: f64,
    pub alpha_t_max: f64,
    /// Lower bound of the factor, strictly positive.
    pub alpha_t_0: f64,
    /// Samples older than this are ignored, s.
    pub staleness_limit: f64,
    /// Period at which the speed statistics are refreshed, s.
    pub update_period: f64,
    pub population: SamplePopulation,
}

impl Default for VdtParams {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            alpha_t_max: 2.0,
            alpha_t_0: 0.2,
            staleness_limit: 0.5,
            update_period: 0.1,
            population: SamplePopulation::InRange,
        }
    }
}

impl VdtParams {
    pub fn z_max(&self) -> f64 {
        self.alpha_t_max - 1.0
    }

    pub fn z_min(&self) -> f64 {
        self.alpha_t_0 - 1.0
    }

    pub fn validate(&self) -> Result<(), VdtError> {
        let checks: [(&'static str, f64, bool, &'static str); 5] = [
            ("gamma", self.gamma, self.gamma > 0.0, "gamma > 0"),
            (
                "alpha_t_max",
                self.alpha_t_max,
                self.alpha_t_max > 1.0,
                "alpha_t_max > 1",
            ),
            (
                "alpha_t_0",
                self.alpha_t_0,
                self.alpha_t_0 > 0.0 && self.alpha_t_0 < 1.0,
                "0 < alpha_t_0 < 1",
            ),
            (
                "staleness_limit",
                self.staleness_limit,
                self.staleness_limit > 0.0,
                "staleness_limit > 0",
            ),
            (
                "update_period",
                self.update_period,
                self.update_period > 0.0,
                "update_period > 0",
            ),
        ];
        for (name, value, ok, rule) in checks {
            if !ok || !value.is_finite() {
                return Err(VdtError::Invalid { name, value, rule });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedStats {
    pub mean: f64,
    /// Population variance (divisor `n`).
    pub variance: f64,
}

pub fn speed_stats(speeds: &[f64]) -> Result<SpeedStats, VdtError> {
    if speeds.is_empty() {
        return Err(VdtError::NoData);
    }
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let variance = speeds.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(SpeedStats { mean, variance })
}

/// `sqrt(theta) / v_bar`, defined as 0 for stopped traffic.
pub fn variation_coefficient(v_bar: f64, theta: f64) -> f64 {
    if v_bar <= 0.0 {
        0.0
    } else {
        theta.max(0.0).sqrt() / v_bar
    }
}

/// One explicit Euler step of the auxiliary state.
pub fn step_z(z: f64, variation: f64, follower_speed: f64, v_bar: f64, gamma: f64, dt: f64) -> f64 {
    z + dt * (-z + gamma * variation * sign(follower_speed - v_bar))
}

/// `1 + sat(z)`. Clamped on the factor itself so the bounds come out exact
/// (`1 + (0.2 - 1)` is not 0.2 in floating point).
pub fn alpha_from_z(z: f64, vp: &VdtParams) -> f64 {
    (1.0 + z).clamp(vp.alpha_t_0, vp.alpha_t_max)
}

/// A speed observation and how old it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSample {
    pub speed: f64,
    pub age: f64,
}

/// Adaptation state carried by one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdtState {
    pub z: f64,
    pub alpha_t: f64,
    pub v_bar: f64,
    pub theta: f64,
    /// Variation coefficient used in the last step.
    pub variation: f64,
    /// Number of fresh samples used in the last step.
    pub sample_count: usize,
    /// Age of the freshest sample seen in the last step, `inf` when none.
    pub newest_age: f64,
}

impl Default for VdtState {
    fn default() -> Self {
        Self {
            z: 0.0,
            alpha_t: 1.0,
            v_bar: 0.0,
            theta: 0.0,
            variation: 0.0,
            sample_count: 0,
            newest_age: f64::INFINITY,
        }
    }
}

/// Advances the adaptation by `dt`.
///
/// Stale samples are dropped. Without any fresh sample `z` relaxes towards 0,
/// so the vehicle falls back to the microscopic automaton.
pub fn step_alpha(
    state: &VdtState,
    samples: &[SpeedSample],
    self_speed: f64,
    vp: &VdtParams,
    dt: f64,
) -> VdtState {
    let fresh: Vec<f64> = samples
        .iter()
        .filter(|s| s.age <= vp.staleness_limit)
        .map(|s| s.speed)
        .collect();
    let newest_age = samples.iter().map(|s| s.age).fold(f64::INFINITY, f64::min);

    let mut next = VdtState {
        newest_age,
        sample_count: fresh.len(),
        ..*state
    };
    match speed_stats(&fresh) {
        Ok(stats) => {
            let variation = variation_coefficient(stats.mean, stats.variance);
            next.v_bar = stats.mean;
            next.theta = stats.variance;
            next.variation = variation;
            next.z = step_z(state.z, variation, self_speed, stats.mean, vp.gamma, dt);
        }
        Err(VdtError::NoData) | Err(VdtError::Invalid { .. }) => {
            next.variation = 0.0;
            next.z = state.z - dt * state.z;
        }
    }
    next.alpha_t = alpha_from_z(next.z, vp);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn speed_stats_examples() {
        let s = speed_stats(&[20.0, 20.0, 20.0]).unwrap();
        assert_eq!((s.mean, s.variance), (20.0, 0.0));
        let s = speed_stats(&[18.0, 22.0]).unwrap();
        assert_eq!((s.mean, s.variance), (20.0, 4.0));
        let s = speed_stats(&[18.0]).unwrap();
        assert_eq!((s.mean, s.variance), (18.0, 0.0));
        assert_eq!(speed_stats(&[]), Err(VdtError::NoData));
    }

    #[test]
    fn variation_coefficient_examples() {
        assert_abs_diff_eq!(variation_coefficient(20.0, 4.0), 0.1, epsilon = 1e-15);
        assert_eq!(variation_coefficient(25.0, 0.0), 0.0);
        assert_eq!(variation_coefficient(0.0, 9.0), 0.0);
    }

    #[test]
    fn step_z_examples() {
        assert_abs_diff_eq!(
            step_z(0.0, 0.1, 25.0, 20.0, 4.0, 0.01),
            0.004,
            epsilon = 1e-15
        );
        assert_eq!(step_z(0.0, 0.0, 25.0, 20.0, 4.0, 0.01), 0.0);
        assert_abs_diff_eq!(
            step_z(0.5, 0.0, 20.0, 20.0, 4.0, 0.01),
            0.495,
            epsilon = 1e-15
        );
    }

    #[test]
    fn alpha_from_z_examples() {
        let vp = VdtParams::default();
        assert_eq!(alpha_from_z(0.0, &vp), 1.0);
        assert_eq!(alpha_from_z(5.0, &vp), 2.0);
        assert_abs_diff_eq!(alpha_from_z(-3.0, &vp), 0.2, epsilon = 1e-15);
    }

    fn fresh(speeds: &[f64]) -> Vec<SpeedSample> {
        speeds
            .iter()
            .map(|&speed| SpeedSample { speed, age: 0.05 })
            .collect()
    }

    #[test]
    fn homogeneous_traffic_keeps_factor_at_one() {
        let vp = VdtParams::default();
        let mut st = VdtState::default();
        for _ in 0..1000 {
            st = step_alpha(&st, &fresh(&[20.0, 20.0, 20.0]), 25.0, &vp, 0.01);
            assert_eq!(st.alpha_t, 1.0);
        }
    }

    #[test]
    fn stale_samples_decay_to_microscopic() {
        let vp = VdtParams::default();
        let z0 = 0.8;
        let mut st = VdtState {
            z: z0,
            alpha_t: alpha_from_z(z0, &vp),
            ..VdtState::default()
        };
        let stale = [
            SpeedSample {
                speed: 10.0,
                age: 2.0,
            },
            SpeedSample {
                speed: 30.0,
                age: 0.6,
            },
        ];
        let mut prev = st.z.abs();
        // 5 time constants of dz/dt = -z.
        for _ in 0..500 {
            st = step_alpha(&st, &stale, 25.0, &vp, 0.01);
            assert!(st.z.abs() <= prev);
            prev = st.z.abs();
            assert_eq!(st.sample_count, 0);
        }
        assert!(st.z.abs() < 0.01 * z0, "z = {}", st.z);
        assert_abs_diff_eq!(st.alpha_t, 1.0, epsilon = 0.01);
    }

    #[test]
    fn faster_follower_converges_to_fixed_point() {
        let vp = VdtParams::default();
        let mut st = VdtState::default();
        let samples = fresh(&[18.0, 22.0]);
        for _ in 0..3000 {
            st = step_alpha(&st, &samples, 25.0, &vp, 0.01);
        }
        assert_abs_diff_eq!(st.variation, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(st.z, 0.4, epsilon = 1e-6);
        assert_abs_diff_eq!(st.alpha_t, 1.4, epsilon = 1e-6);
    }

    #[test]
    fn default_params_are_valid() {
        let vp = VdtParams::default();
        assert_eq!(vp.validate(), Ok(()));
        assert!(vp.z_max() > 0.0 && vp.z_min() < 0.0 && vp.z_min() > -1.0);
        let bad = VdtParams {
            alpha_t_0: 0.0,
            ..vp
        };
        assert!(bad.validate().is_err());
    }
}
