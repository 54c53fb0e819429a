//! Continuous state, distance thresholds and the memoryless mode map.
//!
//! The follower's continuous state is the triple `(headway, relative speed,
//! leader speed)`. Five distance thresholds carve the `(x2, x1)` plane into six
//! domains, one per discrete mode. Every threshold except the emergency distance
//! is stretched by the time-headway factor `alpha_t` (1 recovers the plain
//! microscopic model, 0 collapses everything onto the emergency distance).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Upper bound on the headway of the admissible box.
pub const DELTA_MAX: f64 = 500.0;

/// Continuous state of a follower relative to the vehicle ahead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    /// `x1`: leader position minus follower position, m.
    pub headway: f64,
    /// `x2`: leader speed minus follower speed, m/s.
    pub rel_speed: f64,
    /// `x3`: leader speed, m/s.
    pub leader_speed: f64,
}

impl RelativeState {
    pub const fn new(headway: f64, rel_speed: f64, leader_speed: f64) -> Self {
        Self {
            headway,
            rel_speed,
            leader_speed,
        }
    }

    /// `x3 - x2`.
    pub fn follower_speed(&self) -> f64 {
        self.leader_speed - self.rel_speed
    }

    /// True when both speeds lie in `[0, v_max]` and the headway is not negative.
    pub fn is_valid(&self, p: &VehicleParams) -> bool {
        let vf = self.follower_speed();
        self.headway >= 0.0
            && (0.0..=p.v_max).contains(&self.leader_speed)
            && (0.0..=p.v_max).contains(&vf)
    }

    /// Membership in the admissible box `Sigma`.
    pub fn in_sigma(&self, p: &VehicleParams) -> bool {
        self.is_valid(p) && self.headway >= p.standstill_gap() && self.headway <= DELTA_MAX
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("parameter `{name}` = {value} violates {rule}")]
    Invalid {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
}

/// Per-vehicle constants of the automaton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Length of the vehicle ahead, m.
    pub length: f64,
    /// Minimum clearance, m.
    pub min_gap: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub v_des: f64,
    /// Ratio between maximum and comfortable deceleration.
    pub lambda: f64,
    pub c_r: f64,
    pub c_s: f64,
    pub c_c: f64,
    /// Time headway beyond which the driver considers itself a leader, s.
    pub t_d: f64,
    /// Reference distance of the Gazis-type following law, m.
    pub g_ref: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha4: f64,
    /// Finite-time convergence gain of the closing-in law, m/s^2.
    pub epsilon: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 5.0,
            min_gap: 1.0,
            a_max: 6.0,
            v_max: 33.0,
            v_des: 33.0,
            lambda: 2.0,
            c_r: 1.0,
            c_s: 1.5,
            c_c: 2.0,
            t_d: 3.0,
            g_ref: 550.0,
            alpha1: 0.5,
            alpha2: 1.0,
            alpha4: 1.0,
            epsilon: 0.5,
        }
    }
}

impl VehicleParams {
    /// `s_n = L + L0`: below this headway the pair has collided.
    pub fn standstill_gap(&self) -> f64 {
        self.length + self.min_gap
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        fn check(
            name: &'static str,
            value: f64,
            ok: bool,
            rule: &'static str,
        ) -> Result<(), ParamError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ParamError::Invalid { name, value, rule })
            }
        }
        check("length", self.length, self.length > 0.0, "length > 0")?;
        check("min_gap", self.min_gap, self.min_gap >= 0.0, "min_gap >= 0")?;
        check("a_max", self.a_max, self.a_max > 0.0, "a_max > 0")?;
        check("v_max", self.v_max, self.v_max > 0.0, "v_max > 0")?;
        check(
            "v_des",
            self.v_des,
            self.v_des > 0.0 && self.v_des <= self.v_max,
            "0 < v_des <= v_max",
        )?;
        check("lambda", self.lambda, self.lambda > 1.0, "lambda > 1")?;
        check("c_r", self.c_r, self.c_r > 0.0, "c_r > 0")?;
        check("c_s", self.c_s, self.c_s >= self.c_r, "c_s >= c_r")?;
        check("c_c", self.c_c, self.c_c > 0.0, "c_c > 0")?;
        check("t_d", self.t_d, self.t_d > 0.0, "t_d > 0")?;
        check("g_ref", self.g_ref, self.g_ref > DELTA_MAX, "g_ref > 500")?;
        check("alpha1", self.alpha1, self.alpha1 > 0.0, "alpha1 > 0")?;
        check("alpha2", self.alpha2, self.alpha2 > 0.0, "alpha2 > 0")?;
        check("alpha4", self.alpha4, self.alpha4 > 0.0, "alpha4 > 0")?;
        check(
            "epsilon",
            self.epsilon,
            self.epsilon > 0.0 && self.epsilon < self.a_max / self.lambda,
            "0 < epsilon < a_max / lambda",
        )?;
        Ok(())
    }
}

/// Discrete mode of the automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    FreeDriving,
    FollowingI,
    FollowingII,
    ClosingIn,
    Danger,
    Unsafe,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::FreeDriving,
        Mode::FollowingI,
        Mode::FollowingII,
        Mode::ClosingIn,
        Mode::Danger,
        Mode::Unsafe,
    ];

    /// 1-based index, `q1` ... `q6`.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn label(self) -> &'static str {
        ["q1", "q2", "q3", "q4", "q5", "q6"][self as usize]
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown mode label `{0}`")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| UnknownMode(s.to_owned()))
    }
}

/// Stopping times behind the emergency, risky and safe distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeHeadways {
    pub emergency: f64,
    pub risky: f64,
    pub safe: f64,
}

pub fn time_headways(x: &RelativeState, p: &VehicleParams) -> TimeHeadways {
    let risky = x.follower_speed().abs() / p.a_max;
    TimeHeadways {
        emergency: x.rel_speed.abs() / p.a_max,
        risky,
        safe: p.lambda * risky,
    }
}

/// Stopping-distance add-on used by the lower branches (`x2 <= 0`).
fn closing_margin(x: &RelativeState, p: &VehicleParams) -> f64 {
    if x.rel_speed > 0.0 {
        0.0
    } else {
        let t_e = x.rel_speed.abs() / p.a_max;
        0.5 * p.a_max * t_e * t_e
    }
}

/// Emergency distance. Not affected by `alpha_t`.
pub fn delta_e(x: &RelativeState, p: &VehicleParams) -> f64 {
    p.standstill_gap() + closing_margin(x, p)
}

/// Risky distance, with `T_R` stretched by `alpha_t`.
pub fn delta_r(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> f64 {
    let t_r = alpha_t * time_headways(x, p).risky;
    p.standstill_gap() + p.c_r * t_r * x.leader_speed + closing_margin(x, p)
}

/// Safe distance, with `T_S` stretched by `alpha_t`.
pub fn delta_s(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> f64 {
    let t_s = alpha_t * time_headways(x, p).safe;
    p.standstill_gap() + p.c_s * t_s * x.leader_speed + closing_margin(x, p)
}

/// Interaction distance. Equal to the safe distance while the leader is faster.
pub fn delta_d(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> f64 {
    if x.rel_speed > 0.0 {
        delta_s(x, p, alpha_t)
    } else {
        p.standstill_gap() + alpha_t * p.t_d * x.follower_speed()
    }
}

/// Approaching distance.
pub fn delta_c(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> f64 {
    let t_s = alpha_t * time_headways(x, p).safe;
    let base = p.standstill_gap() + p.c_s * t_s * x.leader_speed;
    if x.rel_speed > 0.0 {
        base
    } else {
        base + p.c_c * (-x.rel_speed).sqrt()
    }
}

/// All five thresholds evaluated at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSet {
    pub delta_e: f64,
    pub delta_r: f64,
    pub delta_s: f64,
    pub delta_d: f64,
    pub delta_c: f64,
}

impl ThresholdSet {
    pub fn eval(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> Self {
        Self {
            delta_e: delta_e(x, p),
            delta_r: delta_r(x, p, alpha_t),
            delta_s: delta_s(x, p, alpha_t),
            delta_d: delta_d(x, p, alpha_t),
            delta_c: delta_c(x, p, alpha_t),
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.delta_e,
            self.delta_r,
            self.delta_s,
            self.delta_d,
            self.delta_c,
        ]
    }
}

/// Raw domain predicates, one per mode, evaluated independently of each other.
///
/// On interior points exactly one entry is true. On some measure-zero
/// boundaries (e.g. `x2 < 0`, `x1 == delta_c < delta_d`) none is.
pub fn domain_membership(x: &RelativeState, th: &ThresholdSet) -> [bool; 6] {
    let x1 = x.headway;
    let x2 = x.rel_speed;
    let m = th.delta_d.max(th.delta_s);
    let n = th.delta_s.max(th.delta_c);
    let pp = th.delta_d.min(th.delta_c);
    let special = x2 == 0.0 && x1 == th.delta_r;

    let q1 = (x1 > th.delta_s && x2 >= 0.0) || (x1 > m && x2 < 0.0);
    let q2 = x2 < 0.0 && n < x1 && x1 <= th.delta_d;
    let q3 = (x2 <= 0.0 && th.delta_s < x1 && x1 < pp)
        || (x2 > 0.0 && th.delta_r < x1 && x1 <= th.delta_s);
    let q4 = (x2 <= 0.0 && th.delta_r < x1 && x1 <= th.delta_s) || special;
    let q5 = th.delta_e <= x1 && x1 <= th.delta_r && !special;
    let q6 = x1 < th.delta_e;
    [q1, q2, q3, q4, q5, q6]
}

/// The mode map `I(x)`.
///
/// Domains are tested in the order q6, q5, q4, q2, q3, q1 and the first match
/// wins. The few boundary points covered by no domain fall back to q3 (no
/// action) while the headway is still inside the interaction range, q1 beyond.
pub fn classify(x: &RelativeState, p: &VehicleParams, alpha_t: f64) -> Mode {
    let th = ThresholdSet::eval(x, p, alpha_t);
    classify_with(x, &th)
}

pub fn classify_with(x: &RelativeState, th: &ThresholdSet) -> Mode {
    let member = domain_membership(x, th);
    const ORDER: [Mode; 5] = [
        Mode::Unsafe,
        Mode::Danger,
        Mode::ClosingIn,
        Mode::FollowingI,
        Mode::FollowingII,
    ];
    if let Some(mode) = ORDER.into_iter().find(|m| member[*m as usize]) {
        return mode;
    }
    if member[0] || x.headway > th.delta_d.max(th.delta_s) {
        Mode::FreeDriving
    } else {
        Mode::FollowingII
    }
}

/// Headway slack of the equilibrium test, m. A follower sliding along the
/// safe threshold is held a hair outside it by the integrator.
pub const EQUILIBRIUM_HEADWAY_SLACK: f64 = 1e-6;

/// Membership in the equilibrium set, with tolerance `tol` on the relative speed.
pub fn in_equilibrium(x: &RelativeState, p: &VehicleParams, alpha_t: f64, tol: f64) -> bool {
    x.rel_speed.abs() <= tol
        && delta_r(x, p, alpha_t) - EQUILIBRIUM_HEADWAY_SLACK <= x.headway
        && x.headway <= delta_s(x, p, alpha_t) + EQUILIBRIUM_HEADWAY_SLACK
}
