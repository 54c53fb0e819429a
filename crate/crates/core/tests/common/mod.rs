#![allow(dead_code)]

use hybrid_acc::model::{RelativeState, VehicleParams};
use hybrid_acc::sim::{Scenario, VehicleInit};
use hybrid_acc::vdt::{alpha_from_z, step_z, VdtParams};

/// Leader at 1000 m, follower behind it as described by `x`.
pub fn pair(x: &RelativeState, p: &VehicleParams) -> Scenario {
    Scenario::new(vec![
        VehicleInit {
            position: 1000.0,
            speed: x.leader_speed,
            params: *p,
        },
        VehicleInit {
            position: 1000.0 - x.headway,
            speed: x.follower_speed(),
            params: *p,
        },
    ])
}

/// Synthetic variation coefficient for the z-filter checks.
pub fn synthetic_variation(t: f64) -> f64 {
    0.1 + 0.05 * (0.7 * t).sin() + 0.03 * (2.3 * t).cos()
}

/// Largest gap, over the coarse grid, between Euler with step `dt` and
/// Euler with step `dt / 100` on a 10 s synthetic signal. The follower is
/// faster than the mean, so the sign term is +1.
pub fn z_filter_error(dt: f64, gamma: f64) -> f64 {
    const SPAN: f64 = 10.0;
    let fine = dt / 100.0;
    let steps = (SPAN / dt).round() as usize;
    let (mut coarse_z, mut fine_z) = (0.0, 0.0);
    let mut worst: f64 = 0.0;
    for k in 0..steps {
        let t = k as f64 * dt;
        coarse_z = step_z(coarse_z, synthetic_variation(t), 30.0, 25.0, gamma, dt);
        for j in 0..100 {
            let tf = t + j as f64 * fine;
            fine_z = step_z(fine_z, synthetic_variation(tf), 30.0, 25.0, gamma, fine);
        }
        worst = worst.max((coarse_z - fine_z).abs());
    }
    worst
}

/// Euler's global error on `z' = -z + gamma * V(t)` is at most
/// `dt / 2 * max|z''|`. With the synthetic signal `|z| <= gamma * 0.18`,
/// `|z'| <= 2 * gamma * 0.18` and `|gamma * V'| <= gamma * 0.104`.
pub fn z_filter_tolerance(dt: f64, gamma: f64) -> f64 {
    0.5 * dt * gamma * (2.0 * 0.18 + 0.104)
}

/// `alpha_t` reached by the coarse filter after 10 s, for reporting.
pub fn z_filter_alpha(dt: f64, vp: &VdtParams) -> f64 {
    let mut z = 0.0;
    for k in 0..(10.0 / dt).round() as usize {
        z = step_z(
            z,
            synthetic_variation(k as f64 * dt),
            30.0,
            25.0,
            vp.gamma,
            dt,
        );
    }
    alpha_from_z(z, vp)
}
