//! Acceptance criteria 1-8, one line each. Exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hybrid_acc::channel::{hop_count, Channel, ChannelParams};
use hybrid_acc::metrics::{compute, MetricsOptions, RunMetrics};
use hybrid_acc::model::{classify, Mode, RelativeState, VehicleParams, DELTA_MAX};
use hybrid_acc::properties::{collapse, partition, sample_init, CheckOptions};
use hybrid_acc::scenario::{parse_scenario, ScenarioFile, PLATOON5};
use hybrid_acc::sim::{
    convergence_time, run, EventKind, RunOutput, Scenario, SimConfig, VehicleInit,
};

const DT: f64 = 0.01;
const EQ_TOL: f64 = 1e-3;
const INIT_SEED: u64 = 7;
const INIT_PAIRS: usize = 100;
const PAIR_HORIZON: f64 = 1000.0;
const PLATOONS: usize = 10;

struct Line {
    ok: bool,
    text: String,
}

fn line(ok: bool, text: String) -> Line {
    Line { ok, text }
}

struct Platoon {
    file: ScenarioFile,
    output: RunOutput,
    metrics: RunMetrics,
    elapsed: Duration,
}

fn shipped(vdt: bool, dt: f64) -> Platoon {
    let file = parse_scenario(PLATOON5).expect("shipped scenario parses");
    let config = SimConfig {
        vdt_enabled: vdt,
        dt,
        ..file.config()
    };
    let start = Instant::now();
    let output = run(&config, &file.scenario());
    let elapsed = start.elapsed();
    let metrics = compute(
        &output.traces,
        &output.events,
        &file.all_params(),
        &MetricsOptions::default(),
    );
    Platoon {
        file,
        output,
        metrics,
        elapsed,
    }
}

/// Smallest headway minus the follower's standstill gap over every sample.
fn clearance(p: &Platoon) -> f64 {
    p.output
        .traces
        .iter()
        .filter(|r| r.id > 1)
        .map(|r| r.x1 - p.file.params(r.id).standstill_gap())
        .fold(f64::INFINITY, f64::min)
}

fn q6_samples(p: &Platoon) -> usize {
    p.output
        .traces
        .iter()
        .filter(|r| r.mode == Mode::Unsafe)
        .count()
        + p.output
            .events
            .iter()
            .filter(|e| e.kind == EventKind::UnsafeEntered)
            .count()
}

fn criterion1(on: &Platoon, off: &Platoon) -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p) in [("on", on), ("off", off)] {
        let q6 = q6_samples(p);
        let c = clearance(p);
        let fine = p.output.error.is_none() && p.metrics.collisions == 0 && q6 == 0 && c >= 0.0;
        let fast = p.elapsed < Duration::from_secs(10);
        ok &= fine && fast;
        parts.push(format!(
            "vdt {name}: collisions {} q6 {} min clearance {:.3} m runtime {:.2} s",
            p.metrics.collisions,
            q6,
            c,
            p.elapsed.as_secs_f64()
        ));
    }
    line(
        ok,
        format!("safety of the shipped platoon ({})", parts.join("; ")),
    )
}

fn onset(p: &Platoon) -> Option<f64> {
    p.metrics.vehicle(5).and_then(|v| v.decel_onset)
}

fn criterion2(on: &Platoon, off: &Platoon) -> Line {
    let text = format!(
        "vehicle 5 onset with vdt {} s, without {} s (targets 45 and 55 within 10 s)",
        fmt_opt(onset(on)),
        fmt_opt(onset(off))
    );
    let ok = match (onset(on), onset(off)) {
        (Some(a), Some(b)) => a < b && (a - 45.0).abs() <= 10.0 && (b - 55.0).abs() <= 10.0,
        _ => false,
    };
    line(ok, text)
}

fn criterion3(on: &Platoon, off: &Platoon) -> Line {
    let a = on.metrics.vehicle(5).unwrap();
    let b = off.metrics.vehicle(5).unwrap();
    let ok =
        a.oscillations <= b.oscillations && a.peak_post_transient_x2 <= b.peak_post_transient_x2;
    line(
        ok,
        format!(
            "vehicle 5 oscillations {} vs {}, peak post-transient |x2| {:.3} vs {:.3} m/s (on vs off)",
            a.oscillations, b.oscillations, a.peak_post_transient_x2, b.peak_post_transient_x2
        ),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |t| format!("{t:.2}"))
}

fn pair_config(dt: f64, duration: f64) -> SimConfig {
    SimConfig {
        dt,
        duration,
        sample_every: ((0.1 / dt).round() as usize).max(1),
        zeno_abort: false,
        ..SimConfig::default()
    }
}

fn init_pairs() -> Vec<RelativeState> {
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    (0..INIT_PAIRS).map(|_| sample_init(&mut rng, &p)).collect()
}

/// Convergence time of each pair behind a constant-speed head, in parallel.
fn pair_times(pairs: &[RelativeState], dt: f64) -> Vec<Option<f64>> {
    let p = VehicleParams::default();
    let workers = thread::available_parallelism()
        .map_or(4, |n| n.get())
        .min(16);
    let chunk = pairs.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|x| {
                            let out = run(&pair_config(dt, PAIR_HORIZON), &common::pair(x, &p));
                            if out.error.is_some() {
                                return None;
                            }
                            convergence_time(out.trace_of(2), &p, EQ_TOL)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    })
}

/// A five-vehicle platoon whose every consecutive pair starts in `Init`.
fn random_platoon(rng: &mut ChaCha8Rng, p: &VehicleParams) -> Scenario {
    let lead = rng.gen_range(0.0..=p.v_max);
    let mut vehicles = vec![VehicleInit {
        position: 5.0 * DELTA_MAX,
        speed: lead,
        params: *p,
    }];
    while vehicles.len() < 5 {
        let prev = *vehicles.last().unwrap();
        let x1 = rng.gen_range(p.standstill_gap()..=DELTA_MAX);
        let vf = rng.gen_range(0.0..=p.v_max);
        let x = RelativeState::new(x1, prev.speed - vf, prev.speed);
        if classify(&x, p, 1.0) == Mode::Unsafe {
            continue;
        }
        vehicles.push(VehicleInit {
            position: prev.position - x1,
            speed: vf,
            params: *p,
        });
    }
    Scenario::new(vehicles)
}

fn criterion4(pair_t: &[Option<f64>]) -> Line {
    let converged = pair_t.iter().flatten().count();
    let t_hat = pair_t.iter().flatten().fold(0.0_f64, |m, &t| m.max(t));
    let mut ok = converged == pair_t.len();

    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED + 1);
    let horizon = (5.0 * t_hat).max(100.0) + 50.0;
    let platoons: Vec<Scenario> = (0..PLATOONS)
        .map(|_| random_platoon(&mut rng, &p))
        .collect();
    let results: Vec<Vec<Option<f64>>> = thread::scope(|s| {
        let handles: Vec<_> = platoons
            .iter()
            .map(|sc| {
                s.spawn(move || {
                    let out = run(&pair_config(DT, horizon), sc);
                    (2..=5)
                        .map(|id| {
                            out.error
                                .is_none()
                                .then(|| convergence_time(out.trace_of(id), &p, EQ_TOL))
                                .flatten()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut within = 0;
    let mut worst_ratio: f64 = 0.0;
    for times in &results {
        let good = times.iter().enumerate().all(|(k, t)| {
            let n = (k + 1) as f64;
            match t {
                Some(t) => {
                    worst_ratio = worst_ratio.max(t / (n * t_hat));
                    *t <= n * t_hat
                }
                None => false,
            }
        });
        within += usize::from(good);
    }
    ok &= within == PLATOONS;
    line(
        ok,
        format!(
            "{converged}/{} pairs reach and stay in X_e, t_hat {t_hat:.2} s; {within}/{PLATOONS} platoons of 5 meet n*t_hat (worst ratio {worst_ratio:.3})",
            pair_t.len()
        ),
    )
}

fn criterion5() -> Line {
    let o = partition(
        &VehicleParams::default(),
        1.0,
        &CheckOptions {
            samples: 1_000_000,
            seed: 5,
        },
    );
    line(
        o.passed(),
        format!("partition over {} interior samples: {}", o.checked, o.note),
    )
}

fn criterion6() -> Line {
    let o = collapse(
        &VehicleParams::default(),
        &CheckOptions {
            samples: 100_000,
            seed: 6,
        },
    );
    line(
        o.passed() && o.worst < 1e-9,
        format!(
            "collapse at alpha_t = 0 over {} samples, worst gap {:.3e} m",
            o.checked, o.worst
        ),
    )
}

fn criterion7(on: &Platoon, off: &Platoon) -> Line {
    let cp = ChannelParams::default();
    let line500: Vec<f64> = (0..5).map(|i| -500.0 * i as f64).collect();
    let hops = hop_count(&line500, 0, 4, cp.radio_range);
    let mut ch = Channel::new(cp, 5, 0);
    let msg = ch.broadcast(0.0, 1, &line500, 20.0);
    ch.deliver(1.0);
    let tail = ch
        .log()
        .iter()
        .find(|d| d.receiver == 5)
        .map(|d| d.delivered_at - msg.emitted_at);
    let exact = hops == Some(4) && tail.is_some_and(|d| (d - 0.08).abs() < 1e-12);

    let worst = [on, off]
        .iter()
        .flat_map(|p| p.output.deliveries.iter())
        .map(|d| d.delivered_at - d.message.emitted_at)
        .fold(0.0_f64, f64::max);
    let budget = on.file.channel.max_end_to_end;
    let shipped_ok = worst <= budget + 1e-12 && !on.output.deliveries.is_empty();
    line(
        exact && shipped_ok,
        format!(
            "500 m line: {} hops, head to tail {} s; shipped runs worst end-to-end {:.3} s (budget {budget} s)",
            hops.map_or("no".into(), |h| h.to_string()),
            tail.map_or("none".into(), |d| format!("{d:.3}")),
            worst
        ),
    )
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn criterion8(
    on: &Platoon,
    off: &Platoon,
    pair_t: &[Option<f64>],
    pairs: &[RelativeState],
) -> Line {
    let mut ok = true;
    let mut c1: f64 = 0.0;
    for (coarse, vdt) in [(on, true), (off, false)] {
        let fine = shipped(vdt, DT / 2.0);
        ok &= fine.metrics.collisions == coarse.metrics.collisions
            && q6_samples(&fine) == q6_samples(coarse);
        for (a, b) in coarse.metrics.pairs.iter().zip(&fine.metrics.pairs) {
            c1 = c1.max(rel_change(a.min_separation, b.min_separation));
        }
    }
    let halved = pair_times(pairs, DT / 2.0);
    let mut c4: f64 = 0.0;
    for (a, b) in pair_t.iter().zip(&halved) {
        match (a, b) {
            (Some(a), Some(b)) => c4 = c4.max(rel_change(*a, *b)),
            _ => ok = false,
        }
    }
    let dt = DT;
    let z_err = common::z_filter_error(dt, 4.0);
    let z_tol = common::z_filter_tolerance(dt, 4.0);
    let order = z_err / common::z_filter_error(2.0 * dt, 4.0);
    ok &= c1 < 0.01 && c4 < 0.01 && z_err <= z_tol && (0.4..0.6).contains(&order);
    line(
        ok,
        format!(
            "dt halving: min separation {:.3}%, convergence time {:.3}%; z filter error {z_err:.2e} <= {z_tol:.2e}, order ratio {order:.3}",
            100.0 * c1,
            100.0 * c4
        ),
    )
}

fn main() -> ExitCode {
    let (on, off) = thread::scope(|s| {
        let a = s.spawn(|| shipped(true, DT));
        let b = s.spawn(|| shipped(false, DT));
        (a.join().unwrap(), b.join().unwrap())
    });
    let pairs = init_pairs();
    let pair_t = pair_times(&pairs, DT);

    let lines = [
        criterion1(&on, &off),
        criterion2(&on, &off),
        criterion3(&on, &off),
        criterion4(&pair_t),
        criterion5(),
        criterion6(),
        criterion7(&on, &off),
        criterion8(&on, &off, &pair_t, &pairs),
    ];
    for (k, l) in lines.iter().enumerate() {
        println!(
            "criterion {}: {} {}",
            k + 1,
            if l.ok { "PASS" } else { "FAIL" },
            l.text
        );
    }
    if lines.iter().all(|l| l.ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
