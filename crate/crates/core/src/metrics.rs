//! Run summaries computed from traces and events alone.
//!
//! Everything here is a pure function of the records written to CSV, so the
//! same numbers can be recomputed from the files after the fact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{in_equilibrium, Mode, VehicleParams};
use crate::sim::{convergence_time, EventKind, SimEvent, TraceRecord};

/// Deceleration that counts as the start of braking, m/s^2.
pub const ONSET_THRESHOLD: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsOptions {
    /// Tolerance on `|x2|` for the equilibrium test, m/s.
    pub equilibrium_tol: f64,
    pub onset_threshold: f64,
    /// Onsets are searched from this time on; `None` uses the first leader event.
    pub onset_after: Option<f64>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            equilibrium_tol: 1e-3,
            onset_threshold: ONSET_THRESHOLD,
            onset_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub leader: usize,
    pub follower: usize,
    pub min_separation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleMetrics {
    pub id: usize,
    pub decel_onset: Option<f64>,
    /// Strict sign changes of `x2` after the first equilibrium entry.
    pub oscillations: usize,
    /// Largest `|x2|` after the first equilibrium entry, 0 if never entered.
    pub peak_post_transient_x2: f64,
    pub first_equilibrium: Option<f64>,
    pub convergence_time: Option<f64>,
    pub peak_abs_accel: f64,
    /// Time spent in q1..q6, s.
    pub dwell: [f64; 6],
    pub mean_alpha: f64,
    pub max_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub collisions: usize,
    pub unsafe_entries: usize,
    pub switches: usize,
    pub min_separation: f64,
    pub pairs: Vec<PairMetrics>,
    pub vehicles: Vec<VehicleMetrics>,
}

impl RunMetrics {
    pub fn vehicle(&self, id: usize) -> Option<&VehicleMetrics> {
        self.vehicles.iter().find(|v| v.id == id)
    }
}

fn by_vehicle(traces: &[TraceRecord]) -> BTreeMap<usize, Vec<&TraceRecord>> {
    let mut map: BTreeMap<usize, Vec<&TraceRecord>> = BTreeMap::new();
    for r in traces {
        map.entry(r.id).or_default().push(r);
    }
    map
}

/// Counts strict sign changes, skipping exact zeros.
pub fn sign_changes(values: impl IntoIterator<Item = f64>) -> usize {
    let mut last = 0.0_f64;
    let mut count = 0;
    for v in values {
        if v == 0.0 || v.is_nan() {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

/// `params[i]` belongs to vehicle `i + 1`.
pub fn compute(
    traces: &[TraceRecord],
    events: &[SimEvent],
    params: &[VehicleParams],
    opts: &MetricsOptions,
) -> RunMetrics {
    let count = |k: EventKind| events.iter().filter(|e| e.kind == k).count();
    let onset_after = opts.onset_after.or_else(|| {
        events
            .iter()
            .find(|e| e.kind == EventKind::LeaderTarget)
            .map(|e| e.t)
    });

    let per = by_vehicle(traces);
    let mut vehicles = Vec::new();
    for (&id, rows) in &per {
        let p = &params[id - 1];
        let dt = match rows.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 0.0,
        };
        let mut dwell = [0.0; 6];
        for r in rows {
            dwell[r.mode.index() - 1] += dt;
        }
        let alphas = rows.iter().map(|r| r.alpha_t);
        let mean_alpha = alphas.clone().sum::<f64>() / rows.len() as f64;
        let max_alpha = alphas.fold(f64::NEG_INFINITY, f64::max);
        let peak_abs_accel = rows.iter().map(|r| r.accel.abs()).fold(0.0, f64::max);
        let decel_onset = onset_after.and_then(|t0| {
            rows.iter()
                .find(|r| r.t >= t0 - 1e-9 && r.accel <= opts.onset_threshold + 1e-12)
                .map(|r| r.t)
        });

        let is_follower = id > 1;
        let entry = if is_follower {
            rows.iter().position(|r| {
                in_equilibrium(&r.relative_state(), p, r.alpha_t, opts.equilibrium_tol)
            })
        } else {
            None
        };
        let post = entry.map_or(&[][..], |k| &rows[k..]);
        vehicles.push(VehicleMetrics {
            id,
            decel_onset,
            oscillations: sign_changes(post.iter().map(|r| r.x2)),
            peak_post_transient_x2: post.iter().map(|r| r.x2.abs()).fold(0.0, f64::max),
            first_equilibrium: entry.map(|k| rows[k].t),
            convergence_time: if is_follower {
                convergence_time(rows.iter().copied(), p, opts.equilibrium_tol)
            } else {
                None
            },
            peak_abs_accel,
            dwell,
            mean_alpha,
            max_alpha,
        });
    }

    let mut pairs = Vec::new();
    let ids: Vec<usize> = per.keys().copied().collect();
    for w in ids.windows(2) {
        let (a, b) = (&per[&w[0]], &per[&w[1]]);
        let min_separation = a
            .iter()
            .zip(b.iter())
            .map(|(l, f)| l.position - f.position)
            .fold(f64::INFINITY, f64::min);
        pairs.push(PairMetrics {
            leader: w[0],
            follower: w[1],
            min_separation,
        });
    }

    let below = pairs
        .iter()
        .filter(|pm| pm.min_separation < params[pm.follower - 1].standstill_gap())
        .count();
    RunMetrics {
        collisions: count(EventKind::Collision).max(below),
        unsafe_entries: count(EventKind::UnsafeEntered),
        switches: count(EventKind::ModeSwitch),
        min_separation: pairs
            .iter()
            .map(|p| p.min_separation)
            .fold(f64::INFINITY, f64::min),
        pairs,
        vehicles,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// `key = value` report, one metric per line.
pub fn report(m: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "collisions = {}", m.collisions);
    let _ = writeln!(s, "unsafe_entries = {}", m.unsafe_entries);
    let _ = writeln!(s, "switches = {}", m.switches);
    let _ = writeln!(s, "min_separation_m = {}", m.min_separation);
    for p in &m.pairs {
        let _ = writeln!(
            s,
            "pair.{}-{}.min_separation_m = {}",
            p.leader, p.follower, p.min_separation
        );
    }
    for v in &m.vehicles {
        let k = format!("vehicle.{}", v.id);
        let _ = writeln!(s, "{k}.decel_onset_s = {}", opt(v.decel_onset));
        let _ = writeln!(s, "{k}.oscillations = {}", v.oscillations);
        let _ = writeln!(
            s,
            "{k}.peak_post_transient_abs_x2_mps = {}",
            v.peak_post_transient_x2
        );
        let _ = writeln!(s, "{k}.first_equilibrium_s = {}", opt(v.first_equilibrium));
        let _ = writeln!(s, "{k}.convergence_time_s = {}", opt(v.convergence_time));
        let _ = writeln!(s, "{k}.peak_abs_accel_mps2 = {}", v.peak_abs_accel);
        for mode in Mode::ALL {
            let _ = writeln!(
                s,
                "{k}.dwell_{}_s = {}",
                mode.label(),
                v.dwell[mode.index() - 1]
            );
        }
        let _ = writeln!(s, "{k}.mean_alpha_t = {}", v.mean_alpha);
        let _ = writeln!(s, "{k}.max_alpha_t = {}", v.max_alpha);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_changes_skip_zeros() {
        assert_eq!(sign_changes([1.0, -1.0, 1.0]), 2);
        assert_eq!(sign_changes([1.0, 0.0, 1.0, 0.0, -2.0]), 1);
        assert_eq!(sign_changes([0.0, 0.0]), 0);
        assert_eq!(sign_changes([-1.0, -3.0]), 0);
    }

    fn rec(t: f64, id: usize, position: f64, accel: f64, x2: f64, mode: Mode) -> TraceRecord {
        TraceRecord {
            t,
            id,
            position,
            speed: 20.0 - x2,
            accel,
            mode,
            x1: 100.0,
            x2,
            x3: 20.0,
            alpha_t: 1.0,
            v_bar: 0.0,
            theta: 0.0,
        }
    }

    #[test]
    fn compute_small_trace() {
        let p = VehicleParams::default();
        let mut traces = Vec::new();
        let x2s = [-2.0, 0.0, 0.0005, -0.0005, 0.0];
        let accels = [0.0, -0.2, -0.5, -1.0, 0.0];
        for k in 0..5 {
            let t = k as f64 * 0.5;
            traces.push(rec(t, 1, 200.0, 0.0, 0.0, Mode::FreeDriving));
            traces.push(rec(
                t,
                2,
                100.0 + k as f64,
                accels[k],
                x2s[k],
                Mode::ClosingIn,
            ));
        }
        let events = vec![SimEvent {
            t: 0.5,
            kind: EventKind::LeaderTarget,
            id: 1,
            detail: String::new(),
        }];
        let m = compute(&traces, &events, &[p, p], &MetricsOptions::default());
        assert_eq!(m.collisions, 0);
        assert_eq!(m.min_separation, 96.0);
        let v2 = m.vehicle(2).unwrap();
        assert_eq!(v2.decel_onset, Some(1.0));
        assert_eq!(v2.first_equilibrium, Some(0.5));
        assert_eq!(v2.oscillations, 1);
        assert_eq!(v2.peak_post_transient_x2, 0.0005);
        assert_eq!(v2.convergence_time, Some(0.5));
        assert_eq!(v2.dwell[Mode::ClosingIn.index() - 1], 2.5);
        assert_eq!(v2.peak_abs_accel, 1.0);
        let text = report(&m);
        assert!(text.contains("vehicle.2.oscillations = 1\n"));
        assert!(text.contains("vehicle.1.decel_onset_s = none\n"));
    }
}
