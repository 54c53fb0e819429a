//! Per-mode feedback laws and input/velocity saturation.

use thiserror::Error;

use crate::model::{Mode, RelativeState, VehicleParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("following law evaluated outside its domain: G - x1 = {margin} <= 0")]
    OutsideFollowingDomain { margin: f64 },
}

/// Acceleration command produced for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Commanded acceleration, m/s^2, within `[-a_max, a_max]`.
    pub accel: f64,
    pub mode: Mode,
    /// The raw law exceeded the actuator bound and was clipped.
    pub saturated: bool,
    /// Raised in the unsafe mode, where a collision can no longer be avoided.
    pub collision_course: bool,
}

/// Free driving: relax the follower speed towards `v_des`.
pub fn free_driving(x: &RelativeState, p: &VehicleParams) -> f64 {
    p.alpha1 * (p.v_des - x.follower_speed())
}

/// Following I: Gazis-type stimulus-response law.
pub fn following(x: &RelativeState, p: &VehicleParams) -> Result<f64, ControlError> {
    let margin = p.g_ref - x.headway;
    if margin <= 0.0 {
        return Err(ControlError::OutsideFollowingDomain { margin });
    }
    Ok(p.alpha2 * (p.v_des + x.rel_speed) / margin * x.follower_speed())
}

/// Following II: no action.
pub fn coasting() -> f64 {
    0.0
}

/// Closing in: distance- and speed-dependent deceleration, capped by
/// `epsilon * sign(x2)` so that the relative speed is nulled in finite time.
pub fn closing_in(x: &RelativeState, p: &VehicleParams) -> f64 {
    let x3 = x.leader_speed;
    let vf = x.follower_speed();
    let denom = 2.0 * (x.headway + p.standstill_gap() + p.c_s * p.lambda / p.a_max * x3 * x3);
    let law = -p.alpha4 * (x3 * x3 - vf * vf) / denom;
    law.min(p.epsilon * sign(x.rel_speed))
}

/// Danger: full braking.
pub fn max_braking(p: &VehicleParams) -> f64 {
    -p.a_max
}

/// Sign with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dispatches to the law of `mode` and clips to `[-a_max, a_max]`.
pub fn control(
    x: &RelativeState,
    p: &VehicleParams,
    mode: Mode,
) -> Result<ControlOutput, ControlError> {
    let raw = match mode {
        Mode::FreeDriving => free_driving(x, p),
        Mode::FollowingI => following(x, p)?,
        Mode::FollowingII => coasting(),
        Mode::ClosingIn => closing_in(x, p),
        Mode::Danger | Mode::Unsafe => max_braking(p),
    };
    let accel = raw.clamp(-p.a_max, p.a_max);
    Ok(ControlOutput {
        accel,
        mode,
        saturated: accel != raw,
        collision_course: mode == Mode::Unsafe,
    })
}

/// Projects the command so that the speed stays in `[0, v_max]`.
pub fn apply_speed_limits(v: f64, u: f64, p: &VehicleParams) -> f64 {
    if (v <= 0.0 && u < 0.0) || (v >= p.v_max && u > 0.0) {
        0.0
    } else {
        u
    }
}
