//! Sampling checks of the structural properties of the automaton.
//!
//! Each check draws states from `Sigma` (headway in `[s_n, 500]`, both
//! speeds in `[0, v_max]`) with a seeded RNG and counts violations. The
//! parameters are taken as given, without validation, so that deliberately
//! broken parameter sets can be fed in and caught.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::control;
use crate::model::{
    classify, classify_with, delta_c, delta_d, delta_e, delta_r, delta_s, domain_membership, Mode,
    RelativeState, ThresholdSet, VehicleParams, DELTA_MAX,
};
use crate::sim::{run, EventKind, Scenario, SimConfig, VehicleInit};
use crate::vdt::{step_alpha, SpeedSample, VdtParams, VdtState};

/// Samples closer than this to a threshold do not count as interior, m.
pub const BOUNDARY_CLEARANCE: f64 = 1e-6;
/// Tolerance of the collapse and continuity checks, m.
pub const THRESHOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub checked: usize,
    pub failures: usize,
    /// Largest violation measure seen, where the property has one.
    pub worst: f64,
    pub note: String,
}

impl PropertyOutcome {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            failures: 0,
            worst: 0.0,
            note: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn record(&mut self, ok: bool) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
        }
    }
}

impl std::fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<20} checked={} failures={} worst={:.3e}",
            self.name, self.checked, self.failures, self.worst
        )?;
        if !self.note.is_empty() {
            write!(f, " ({})", self.note)?;
        }
        Ok(())
    }
}

fn rng(opts: &CheckOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Uniform draw from `Sigma`.
pub fn sample_sigma(rng: &mut impl Rng, p: &VehicleParams) -> RelativeState {
    let x1 = rng.gen_range(p.standstill_gap()..=DELTA_MAX);
    let x3 = rng.gen_range(0.0..=p.v_max);
    let vf = rng.gen_range(0.0..=p.v_max);
    RelativeState::new(x1, x3 - vf, x3)
}

fn near_boundary(x: &RelativeState, th: &ThresholdSet) -> bool {
    x.rel_speed.abs() < BOUNDARY_CLEARANCE
        || th
            .as_array()
            .iter()
            .any(|d| (x.headway - d).abs() < BOUNDARY_CLEARANCE)
}

/// Exactly one raw domain predicate holds on interior samples, and the
/// precedence order picks that one.
pub fn partition(p: &VehicleParams, alpha_t: f64, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("partition");
    let mut r = rng(opts, 1);
    let (mut multi, mut none, mut rejected) = (0, 0, 0);
    while out.checked < opts.samples {
        let x = sample_sigma(&mut r, p);
        let th = ThresholdSet::eval(&x, p, alpha_t);
        if near_boundary(&x, &th) {
            rejected += 1;
            continue;
        }
        let member = domain_membership(&x, &th);
        let count = member.iter().filter(|&&m| m).count();
        multi += usize::from(count > 1);
        none += usize::from(count == 0);
        let agrees = count == 1 && member[classify_with(&x, &th) as usize];
        out.record(agrees);
    }
    out.note = format!("multi={multi} none={none} rejected={rejected}");
    out
}

/// `delta_e <= delta_r <= delta_s`, and `delta_d = delta_s = delta_c` while `x2 > 0`.
pub fn ordering(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("ordering");
    // The sampled order only needs lambda * c_s >= c_r; the coefficient
    // order c_s >= c_r is what makes it hold for every lambda > 1.
    out.record(p.c_r <= p.c_s);
    if p.c_r > p.c_s {
        out.worst = p.c_r - p.c_s;
        out.note = format!("c_r {} exceeds c_s {}", p.c_r, p.c_s);
    }
    let mut r = rng(opts, 2);
    for _ in 0..opts.samples {
        let x = sample_sigma(&mut r, p);
        let th = ThresholdSet::eval(&x, p, 1.0);
        let mut ok = th.delta_e <= th.delta_r && th.delta_r <= th.delta_s;
        out.worst = out
            .worst
            .max(th.delta_e - th.delta_r)
            .max(th.delta_r - th.delta_s);
        if x.rel_speed > 0.0 {
            ok &= th.delta_d == th.delta_s && th.delta_c == th.delta_s;
        }
        out.record(ok);
    }
    out
}

/// With `alpha_t = 0` the risky and safe distances collapse onto the emergency one.
pub fn collapse(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("collapse");
    let mut r = rng(opts, 3);
    for _ in 0..opts.samples {
        let x = sample_sigma(&mut r, p);
        let e = delta_e(&x, p);
        let gap = (delta_r(&x, p, 0.0) - e)
            .abs()
            .max((delta_s(&x, p, 0.0) - e).abs());
        out.worst = out.worst.max(gap);
        out.record(gap < THRESHOLD_TOL);
    }
    out
}

/// The two branches of `delta_e`, `delta_r`, `delta_s` and `delta_c` meet at
/// `x2 = 0`. The jump of `delta_d` is only reported.
pub fn continuity(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    const ABOVE: f64 = 1e-12;
    let mut out = PropertyOutcome::new("continuity");
    let mut r = rng(opts, 4);
    let mut d_jump: f64 = 0.0;
    for _ in 0..opts.samples {
        let s = sample_sigma(&mut r, p);
        let at = RelativeState::new(s.headway, 0.0, s.leader_speed);
        let up = RelativeState::new(s.headway, ABOVE, s.leader_speed);
        let jumps = [
            delta_e(&up, p) - delta_e(&at, p),
            delta_r(&up, p, 1.0) - delta_r(&at, p, 1.0),
            delta_s(&up, p, 1.0) - delta_s(&at, p, 1.0),
            delta_c(&up, p, 1.0) - delta_c(&at, p, 1.0),
        ];
        let worst = jumps.iter().fold(0.0_f64, |m, j| m.max(j.abs()));
        out.worst = out.worst.max(worst);
        d_jump = d_jump.max((delta_d(&up, p, 1.0) - delta_d(&at, p, 1.0)).abs());
        out.record(worst < THRESHOLD_TOL);
    }
    out.note = format!("delta_d jump up to {d_jump:.3} m");
    out
}

/// `delta_r`, `delta_s`, lower-branch `delta_d` and `delta_c` do not decrease with `alpha_t`.
pub fn monotonicity(p: &VehicleParams, vp: &VdtParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("monotonicity");
    let mut r = rng(opts, 5);
    for _ in 0..opts.samples {
        let x = sample_sigma(&mut r, p);
        let a = r.gen_range(vp.alpha_t_0..=vp.alpha_t_max);
        let b = r.gen_range(a..=vp.alpha_t_max);
        let lower = RelativeState::new(x.headway, -x.rel_speed.abs(), x.leader_speed);
        let ok = delta_r(&x, p, a) <= delta_r(&x, p, b)
            && delta_s(&x, p, a) <= delta_s(&x, p, b)
            && delta_d(&lower, p, a) <= delta_d(&lower, p, b)
            && delta_c(&x, p, a) <= delta_c(&x, p, b);
        out.record(ok);
    }
    out
}

/// Commands stay within `[-a_max, a_max]`, danger brakes fully, closing in is
/// idle at `x2 = 0`, and the laws are pure.
pub fn control_bounds(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("control");
    let mut r = rng(opts, 6);
    for _ in 0..opts.samples {
        let x = sample_sigma(&mut r, p);
        let mode = classify(&x, p, 1.0);
        let ok = match (control(&x, p, mode), control(&x, p, mode)) {
            (Ok(a), Ok(b)) => {
                let idle = RelativeState::new(x.headway, 0.0, x.leader_speed);
                let closing_idle = control(&idle, p, Mode::ClosingIn)
                    .map(|c| c.accel == 0.0)
                    .unwrap_or(false);
                a.accel.abs() <= p.a_max
                    && a.accel.to_bits() == b.accel.to_bits()
                    && (mode != Mode::Danger || a.accel == -p.a_max)
                    && closing_idle
            }
            _ => false,
        };
        out.record(ok);
    }
    out
}

/// `alpha_t` stays in `[alpha_t_0, alpha_t_max]` under random sample streams.
pub fn alpha_bounds(vp: &VdtParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("alpha_bounds");
    let mut r = rng(opts, 7);
    let streams = (opts.samples / 1000).max(1);
    for _ in 0..streams {
        let mut st = VdtState::default();
        for _ in 0..1000 {
            let n = r.gen_range(0..6);
            let samples: Vec<SpeedSample> = (0..n)
                .map(|_| SpeedSample {
                    speed: r.gen_range(0.0..=40.0),
                    age: r.gen_range(0.0..1.0),
                })
                .collect();
            st = step_alpha(&st, &samples, r.gen_range(0.0..=40.0), vp, 0.01);
            out.record((vp.alpha_t_0..=vp.alpha_t_max).contains(&st.alpha_t));
        }
    }
    out
}

/// Stretching headways by any admissible `alpha_t` keeps `delta_r >= delta_e`.
pub fn threshold_safety(p: &VehicleParams, vp: &VdtParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("threshold_safety");
    let mut r = rng(opts, 8);
    for _ in 0..opts.samples {
        let x = sample_sigma(&mut r, p);
        let a = r.gen_range(vp.alpha_t_0..=vp.alpha_t_max);
        let gap = delta_e(&x, p) - delta_r(&x, p, a);
        out.worst = out.worst.max(gap);
        out.record(gap <= 0.0);
    }
    out
}

/// Draws an initial pair from `Init`: `Sigma` outside the unsafe domain.
pub fn sample_init(rng: &mut impl Rng, p: &VehicleParams) -> RelativeState {
    loop {
        let x = sample_sigma(rng, p);
        if classify(&x, p, 1.0) != Mode::Unsafe {
            return x;
        }
    }
}

/// Pairs started in `Init` behind a head that changes speed at full
/// authority never enter the unsafe domain nor collide.
pub fn safety(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("safety");
    let mut r = rng(opts, 9);
    let runs = (opts.samples / 1000).clamp(5, 200);
    let config = SimConfig {
        duration: 60.0,
        zeno_abort: false,
        ..SimConfig::default()
    };
    let mut worst_margin = f64::INFINITY;
    for _ in 0..runs {
        let x = sample_init(&mut r, p);
        let events: Vec<(f64, f64)> = (1..=3)
            .map(|k| {
                (
                    k as f64 * 15.0 + r.gen_range(0.0..5.0),
                    r.gen_range(0.0..=p.v_max),
                )
            })
            .collect();
        let scenario = Scenario::new(vec![
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
        .with_events(events);
        let res = run(&config, &scenario);
        let unsafe_entries = res
            .events
            .iter()
            .filter(|e| e.kind == EventKind::UnsafeEntered)
            .count();
        let min_gap = res.trace_of(2).map(|t| t.x1).fold(f64::INFINITY, f64::min);
        worst_margin = worst_margin.min(min_gap - p.standstill_gap());
        out.record(res.error.is_none() && unsafe_entries == 0 && min_gap >= p.standstill_gap());
        if let Some(e) = &res.error {
            out.note = e.to_string();
        }
    }
    if out.note.is_empty() {
        out.note = format!("smallest clearance above s_n {worst_margin:.3} m");
    }
    out
}

/// Identical inputs give bit-identical traces.
pub fn determinism(p: &VehicleParams, opts: &CheckOptions) -> PropertyOutcome {
    let mut out = PropertyOutcome::new("determinism");
    let mut r = rng(opts, 10);
    let x = sample_init(&mut r, p);
    let scenario = Scenario::new(vec![
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
    .with_events(vec![(5.0, p.v_max * 0.5)]);
    let config = SimConfig {
        duration: 20.0,
        vdt_enabled: true,
        seed: opts.seed,
        ..SimConfig::default()
    };
    let a = run(&config, &scenario);
    let b = run(&config, &scenario);
    let bits = |o: &crate::sim::RunOutput| -> Vec<u64> {
        o.traces
            .iter()
            .flat_map(|t| [t.position, t.speed, t.accel, t.alpha_t].map(f64::to_bits))
            .collect()
    };
    out.record(bits(&a) == bits(&b) && a.events == b.events);
    out
}

/// Every check, in a fixed order.
pub fn run_all(p: &VehicleParams, vp: &VdtParams, opts: &CheckOptions) -> Vec<PropertyOutcome> {
    vec![
        partition(p, 1.0, opts),
        ordering(p, opts),
        collapse(p, opts),
        continuity(p, opts),
        monotonicity(p, vp, opts),
        control_bounds(p, opts),
        alpha_bounds(vp, opts),
        threshold_safety(p, vp, opts),
        safety(p, opts),
        determinism(p, opts),
    ]
}
