//! Fixed-step simulation of a single-lane platoon of interconnected automata.
//!
//! Vehicle 1 is the platoon head and tracks a piecewise-constant target speed;
//! every other vehicle runs the hybrid automaton against the vehicle directly
//! ahead. Each step the mode is recomputed from the state (the mode map is
//! memoryless), the control is held for `dt`, and speeds and positions are
//! advanced with semi-implicit Euler.
//!
//! By default follower steps are not a plain zero-order hold. A step that
//! changes mode is cut where the mode changes and finished with the new
//! command. Where both sides push into the switching surface (the follower
//! hugging the safe distance, the closing-in law at `x2 = 0`) the two
//! commands are blended so the state slides along the surface. A plain hold
//! chatters across such surfaces once per step, which makes switch counts
//! scale with `1 / dt` and convergence times depend on the step size.
//! [`Switching::Plain`] keeps the plain hold.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::channel::{Channel, ChannelParams, DeliveryRecord};
use crate::control::{apply_speed_limits, control, ControlError};
use crate::model::{
    classify, in_equilibrium, Mode, ParamError, RelativeState, ThresholdSet, VehicleParams,
    DELTA_MAX,
};
use crate::vdt::{step_alpha, SamplePopulation, SpeedSample, VdtParams, VdtState};

const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("collision at t = {t:.3} s: vehicle {follower} is {gap:.3} m behind vehicle {leader}")]
    Collision {
        t: f64,
        leader: usize,
        follower: usize,
        gap: f64,
    },
    #[error(
        "vehicle {id} switched mode {switches} times within {window} s ending at t = {t:.3} s"
    )]
    ZenoSuspect {
        t: f64,
        id: usize,
        switches: usize,
        window: f64,
    },
    #[error("vehicle {id} at t = {t:.3} s: {source}")]
    Control {
        t: f64,
        id: usize,
        #[source]
        source: ControlError,
    },
    #[error("invalid simulation setup: {0}")]
    Setup(String),
}

impl From<ParamError> for SimError {
    fn from(e: ParamError) -> Self {
        SimError::Setup(e.to_string())
    }
}

/// Piecewise-constant target speed of the platoon head.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderProfile {
    /// Target before the first event.
    pub initial: f64,
    /// `(time, target speed)` pairs with strictly increasing times.
    pub events: Vec<(f64, f64)>,
}

impl LeaderProfile {
    pub fn constant(speed: f64) -> Self {
        Self {
            initial: speed,
            events: Vec::new(),
        }
    }

    pub fn validate(&self, v_max: f64) -> Result<(), SimError> {
        for w in self.events.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SimError::Setup(format!(
                    "leader profile times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, v)) = self.events.iter().find(|(_, v)| !(0.0..=v_max).contains(v)) {
            return Err(SimError::Setup(format!(
                "leader target {v} at t = {t} outside [0, {v_max}]"
            )));
        }
        Ok(())
    }

    /// Target in force at `t`: the last event at or before `t`.
    pub fn target(&self, t: f64) -> f64 {
        self.events
            .iter()
            .take_while(|(te, _)| *te <= t + TIME_SLACK)
            .last()
            .map_or(self.initial, |&(_, v)| v)
    }
}

/// Proportional speed tracking of the platoon head, clipped to `a_max`.
pub fn leader_accel(
    t: f64,
    profile: &LeaderProfile,
    v: f64,
    p: &VehicleParams,
    k_lead: f64,
) -> f64 {
    (k_lead * (profile.target(t) - v)).clamp(-p.a_max, p.a_max)
}

/// How followers integrate across mode boundaries within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Switching {
    /// Zero-order hold of the command chosen at the start of the step.
    Plain,
    /// Cut the step at mode boundaries and slide along boundaries that both
    /// adjacent laws push towards.
    #[default]
    Located,
}

impl Switching {
    pub fn as_str(self) -> &'static str {
        match self {
            Switching::Plain => "plain",
            Switching::Located => "located",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(Switching::Plain),
            "located" => Some(Switching::Located),
            _ => None,
        }
    }
}

/// Where a follower reads its leader's state from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeaderSource {
    /// On-board ranging: the true pre-step state.
    #[default]
    Sensor,
    /// Latest V2V message from the predecessor, possibly stale.
    V2v,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub vdt_enabled: bool,
    pub vdt: VdtParams,
    pub channel: ChannelParams,
    /// Record a trace sample every this many steps.
    pub sample_every: usize,
    pub zeno_window: f64,
    pub zeno_limit: usize,
    /// Stop the run when the switch rate exceeds the limit. When off, the
    /// excess is only logged as an event.
    pub zeno_abort: bool,
    /// Gain of the head's speed tracking, 1/s.
    pub k_lead: f64,
    pub leader_source: LeaderSource,
    pub switching: Switching,
    /// Seed for the channel jitter.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            duration: 150.0,
            vdt_enabled: false,
            vdt: VdtParams::default(),
            channel: ChannelParams::default(),
            sample_every: 1,
            zeno_window: 1.0,
            zeno_limit: 100,
            zeno_abort: true,
            k_lead: 1.0,
            leader_source: LeaderSource::Sensor,
            switching: Switching::Located,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }
}

/// Initial condition and constants of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInit {
    pub position: f64,
    pub speed: f64,
    pub params: VehicleParams,
}

/// Vehicles ordered front to back plus the head's speed profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub vehicles: Vec<VehicleInit>,
    pub profile: LeaderProfile,
}

impl Scenario {
    /// Head at `profile.initial` with no events.
    pub fn new(vehicles: Vec<VehicleInit>) -> Self {
        let initial = vehicles.first().map_or(0.0, |v| v.speed);
        Self {
            vehicles,
            profile: LeaderProfile::constant(initial),
        }
    }

    pub fn with_events(mut self, events: Vec<(f64, f64)>) -> Self {
        self.profile.events = events;
        self
    }
}

#[derive(Debug, Clone)]
pub struct VehicleSim {
    pub id: usize,
    pub position: f64,
    pub speed: f64,
    pub mode: Mode,
    pub vdt: VdtState,
    pub params: VehicleParams,
    held_samples: Vec<(f64, f64)>,
    next_refresh: f64,
    switch_times: VecDeque<f64>,
    zeno_flagged: bool,
}

/// `x` of `follower` with respect to `leader`.
pub fn relative_state(leader: &VehicleSim, follower: &VehicleSim) -> RelativeState {
    RelativeState::new(
        leader.position - follower.position,
        leader.speed - follower.speed,
        leader.speed,
    )
}

/// The head sees a virtual vehicle infinitely far ahead driving at `v_max`.
fn head_state(head: &VehicleSim) -> RelativeState {
    RelativeState::new(
        f64::INFINITY,
        head.params.v_max - head.speed,
        head.params.v_max,
    )
}

/// One row of the trace: the state at `t` and the decision taken for `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub id: usize,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub mode: Mode,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub alpha_t: f64,
    pub v_bar: f64,
    pub theta: f64,
}

impl TraceRecord {
    pub fn relative_state(&self) -> RelativeState {
        RelativeState::new(self.x1, self.x2, self.x3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    LeaderTarget,
    ModeSwitch,
    UnsafeEntered,
    Collision,
    ZenoSuspect,
    Fault,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::LeaderTarget,
        EventKind::ModeSwitch,
        EventKind::UnsafeEntered,
        EventKind::Collision,
        EventKind::ZenoSuspect,
        EventKind::Fault,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.to_string() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::LeaderTarget => "leader_target",
            EventKind::ModeSwitch => "switch",
            EventKind::UnsafeEntered => "unsafe_entered",
            EventKind::Collision => "collision",
            EventKind::ZenoSuspect => "zeno_suspect",
            EventKind::Fault => "fault",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub kind: EventKind,
    pub id: usize,
    pub detail: String,
}

/// The whole platoon plus the channel connecting it.
#[derive(Debug)]
pub struct World {
    config: SimConfig,
    profile: LeaderProfile,
    vehicles: Vec<VehicleSim>,
    channel: Channel,
    step_index: u64,
    next_broadcast: f64,
    next_profile_event: usize,
    events: Vec<SimEvent>,
}

impl World {
    pub fn new(config: &SimConfig, scenario: &Scenario) -> Result<Self, SimError> {
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return Err(SimError::Setup(format!(
                "dt must be positive, got {}",
                config.dt
            )));
        }
        if config.sample_every == 0 {
            return Err(SimError::Setup("sample_every must be at least 1".into()));
        }
        if scenario.vehicles.is_empty() {
            return Err(SimError::Setup("scenario has no vehicles".into()));
        }
        config
            .vdt
            .validate()
            .map_err(|e| SimError::Setup(e.to_string()))?;
        config
            .channel
            .validate()
            .map_err(|e| SimError::Setup(e.to_string()))?;
        for (i, v) in scenario.vehicles.iter().enumerate() {
            v.params.validate()?;
            if !(0.0..=v.params.v_max).contains(&v.speed) {
                return Err(SimError::Setup(format!(
                    "vehicle {} initial speed {} outside [0, {}]",
                    i + 1,
                    v.speed,
                    v.params.v_max
                )));
            }
        }
        for (i, w) in scenario.vehicles.windows(2).enumerate() {
            if w[1].position >= w[0].position {
                return Err(SimError::Setup(format!(
                    "vehicle {} must be behind vehicle {}",
                    i + 2,
                    i + 1
                )));
            }
        }
        scenario
            .profile
            .validate(scenario.vehicles[0].params.v_max)?;

        let mut vehicles: Vec<VehicleSim> = scenario
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| VehicleSim {
                id: i + 1,
                position: v.position,
                speed: v.speed,
                mode: Mode::FreeDriving,
                vdt: VdtState::default(),
                params: v.params,
                held_samples: Vec::new(),
                next_refresh: 0.0,
                switch_times: VecDeque::new(),
                zeno_flagged: false,
            })
            .collect();
        for i in 0..vehicles.len() {
            let x = if i == 0 {
                head_state(&vehicles[0])
            } else {
                relative_state(&vehicles[i - 1], &vehicles[i])
            };
            vehicles[i].mode = classify(&x, &vehicles[i].params, 1.0);
        }

        Ok(Self {
            config: config.clone(),
            profile: scenario.profile.clone(),
            channel: Channel::new(config.channel, vehicles.len(), config.seed),
            vehicles,
            step_index: 0,
            next_broadcast: 0.0,
            next_profile_event: 0,
            events: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt
    }

    pub fn vehicles(&self) -> &[VehicleSim] {
        &self.vehicles
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    fn push_event(&mut self, t: f64, kind: EventKind, id: usize, detail: String) {
        self.events.push(SimEvent {
            t,
            kind,
            id,
            detail,
        });
    }

    /// Advances the world by one step. Sampled trace rows are appended to `trace`.
    pub fn step(&mut self, trace: &mut Vec<TraceRecord>) -> Result<(), SimError> {
        let dt = self.config.dt;
        let t = self.time();
        let record = self.step_index.is_multiple_of(self.config.sample_every as u64);

        while let Some(&(te, v)) = self.profile.events.get(self.next_profile_event) {
            if te > t + TIME_SLACK {
                break;
            }
            self.push_event(t, EventKind::LeaderTarget, 1, format!("target {v} m/s"));
            self.next_profile_event += 1;
        }

        if t + TIME_SLACK >= self.next_broadcast {
            let positions: Vec<f64> = self.vehicles.iter().map(|v| v.position).collect();
            for v in &self.vehicles {
                self.channel.broadcast(t, v.id, &positions, v.speed);
            }
            self.next_broadcast += self.config.channel.broadcast_period;
        }
        self.channel.deliver(t);

        let n = self.vehicles.len();
        let mut rows = Vec::with_capacity(if record { n } else { 0 });
        for i in (0..n).rev() {
            let x = if i == 0 {
                head_state(&self.vehicles[0])
            } else {
                self.perceived_state(i)
            };

            if self.config.vdt_enabled {
                self.refresh_samples(i, t);
                let veh = &self.vehicles[i];
                let samples: Vec<SpeedSample> = veh
                    .held_samples
                    .iter()
                    .map(|&(speed, emitted)| SpeedSample {
                        speed,
                        age: t - emitted,
                    })
                    .collect();
                let next = step_alpha(&veh.vdt, &samples, veh.speed, &self.config.vdt, dt);
                self.vehicles[i].vdt = next;
            }

            let veh = &self.vehicles[i];
            let p = veh.params;
            let alpha = veh.vdt.alpha_t;
            let mode = classify(&x, &p, alpha);
            let raw = if i == 0 {
                leader_accel(t, &self.profile, veh.speed, &p, self.config.k_lead)
            } else {
                control(&x, &p, mode)
                    .map_err(|source| SimError::Control {
                        t,
                        id: veh.id,
                        source,
                    })?
                    .accel
            };
            let u = apply_speed_limits(veh.speed, raw, &p);
            let step = if i == 0 || self.config.switching == Switching::Plain {
                plain(veh.speed, u, dt, &p)
            } else {
                advance_follower(&x, mode, u, alpha, &p, dt).map_err(|source| {
                    SimError::Control {
                        t,
                        id: veh.id,
                        source,
                    }
                })?
            };

            if record {
                rows.push(TraceRecord {
                    t,
                    id: veh.id,
                    position: veh.position,
                    speed: veh.speed,
                    accel: step.accel,
                    mode,
                    x1: x.headway,
                    x2: x.rel_speed,
                    x3: x.leader_speed,
                    alpha_t: alpha,
                    v_bar: veh.vdt.v_bar,
                    theta: veh.vdt.theta,
                });
            }

            let prev_mode = veh.mode;
            let id = veh.id;
            if mode != prev_mode {
                if mode == Mode::Unsafe {
                    self.push_event(
                        t,
                        EventKind::UnsafeEntered,
                        id,
                        format!("x1 = {}", x.headway),
                    );
                }
                self.push_event(t, EventKind::ModeSwitch, id, format!("{prev_mode}->{mode}"));
                self.note_switch(i, t)?;
            }

            let veh = &mut self.vehicles[i];
            veh.mode = mode;
            veh.speed = step.speed;
            veh.position += step.displacement;
        }
        rows.reverse();
        trace.extend(rows);

        self.step_index += 1;
        let t_next = self.time();
        for i in 1..n {
            let gap = self.vehicles[i - 1].position - self.vehicles[i].position;
            if gap < self.vehicles[i].params.standstill_gap() {
                let err = SimError::Collision {
                    t: t_next,
                    leader: i,
                    follower: i + 1,
                    gap,
                };
                self.push_event(t_next, EventKind::Collision, i + 1, format!("gap = {gap}"));
                return Err(err);
            }
        }
        Ok(())
    }

    fn perceived_state(&self, i: usize) -> RelativeState {
        let ahead = &self.vehicles[i - 1];
        let me = &self.vehicles[i];
        match self.config.leader_source {
            LeaderSource::Sensor => relative_state(ahead, me),
            LeaderSource::V2v => match self.channel.table(me.id).get(ahead.id) {
                Some(msg) => {
                    RelativeState::new(msg.position - me.position, msg.speed - me.speed, msg.speed)
                }
                None => relative_state(ahead, me),
            },
        }
    }

    fn refresh_samples(&mut self, i: usize, t: f64) {
        let veh = &self.vehicles[i];
        if t + TIME_SLACK < veh.next_refresh {
            return;
        }
        let own = veh.position;
        let population = self.config.vdt.population;
        let samples: Vec<(f64, f64)> = self
            .channel
            .table(veh.id)
            .newest()
            .values()
            .filter(|m| m.origin < veh.id)
            .filter(|m| {
                population == SamplePopulation::AllAhead || (m.position - own).abs() <= DELTA_MAX
            })
            .map(|m| (m.speed, m.emitted_at))
            .collect();
        let veh = &mut self.vehicles[i];
        veh.held_samples = samples;
        veh.next_refresh = t + self.config.vdt.update_period;
    }

    fn note_switch(&mut self, i: usize, t: f64) -> Result<(), SimError> {
        let window = self.config.zeno_window;
        let limit = self.config.zeno_limit;
        let times = &mut self.vehicles[i].switch_times;
        times.push_back(t);
        while times.front().is_some_and(|&s| s <= t - window) {
            times.pop_front();
        }
        let switches = times.len();
        let veh = &mut self.vehicles[i];
        let id = veh.id;
        if switches <= limit {
            veh.zeno_flagged = false;
            return Ok(());
        }
        if self.config.zeno_abort {
            self.push_event(
                t,
                EventKind::ZenoSuspect,
                id,
                format!("{switches} switches"),
            );
            return Err(SimError::ZenoSuspect {
                t,
                id,
                switches,
                window,
            });
        }
        if !veh.zeno_flagged {
            veh.zeno_flagged = true;
            self.push_event(
                t,
                EventKind::ZenoSuspect,
                id,
                format!("{switches} switches"),
            );
        }
        Ok(())
    }
}

/// Plain zero-order hold with the speed clamped to `[0, v_max]`.
fn hold(v: f64, u: f64, dt: f64, p: &VehicleParams) -> (f64, f64) {
    let v_new = (v + u * dt).clamp(0.0, p.v_max);
    let accel = if v_new == v + u * dt {
        u
    } else {
        (v_new - v) / dt
    };
    (v_new, accel)
}

/// Result of advancing one vehicle over a step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Advance {
    speed: f64,
    displacement: f64,
    /// Mean acceleration over the step.
    accel: f64,
}

fn plain(v: f64, u: f64, dt: f64, p: &VehicleParams) -> Advance {
    let (speed, accel) = hold(v, u, dt, p);
    Advance {
        speed,
        displacement: speed * dt,
        accel,
    }
}

const BISECTIONS: usize = 48;
const MAX_SEGMENTS: usize = 8;
/// Clearance kept from a switching surface while sliding, so that round-off
/// in the positions cannot flip the next classification.
const SLIDE_MARGIN: f64 = 1e-8;

/// Index of `x2` in [`Frozen::surfaces`].
const X2_SURFACE: usize = 5;

/// Follower state inside one step, with the leader held at its pre-step speed.
#[derive(Debug, Clone, Copy)]
struct Local {
    headway: f64,
    speed: f64,
    travelled: f64,
}

struct Frozen<'a> {
    leader_speed: f64,
    p: &'a VehicleParams,
    alpha: f64,
}

impl Frozen<'_> {
    fn state(&self, s: &Local) -> RelativeState {
        RelativeState::new(s.headway, self.leader_speed - s.speed, self.leader_speed)
    }

    fn mode(&self, s: &Local) -> Mode {
        classify(&self.state(s), self.p, self.alpha)
    }

    /// Signed distances to the switching surfaces: `x1` minus each threshold, then `x2`.
    fn surfaces(&self, s: &Local) -> [f64; 6] {
        let x = self.state(s);
        let th = ThresholdSet::eval(&x, self.p, self.alpha);
        [
            x.headway - th.delta_e,
            x.headway - th.delta_r,
            x.headway - th.delta_s,
            x.headway - th.delta_d,
            x.headway - th.delta_c,
            x.rel_speed,
        ]
    }

    fn accel(&self, s: &Local, mode: Mode) -> Result<f64, ControlError> {
        let u = control(&self.state(s), self.p, mode)?.accel;
        Ok(apply_speed_limits(s.speed, u, self.p))
    }

    fn advance(&self, s: &Local, u: f64, h: f64) -> Local {
        let speed = (s.speed + u * h).clamp(0.0, self.p.v_max);
        Local {
            headway: s.headway + (self.leader_speed - speed) * h,
            speed,
            travelled: s.travelled + speed * h,
        }
    }
}

/// Follower update with mode-boundary location.
///
/// The step is cut where the mode changes and continued with the new mode's
/// command. If that command pushes the state straight back across the same
/// switching surface, the two commands are blended so the state slides along
/// the surface for the rest of the step.
fn advance_follower(
    x: &RelativeState,
    mode: Mode,
    u: f64,
    alpha: f64,
    p: &VehicleParams,
    dt: f64,
) -> Result<Advance, ControlError> {
    let f = Frozen {
        leader_speed: x.leader_speed,
        p,
        alpha,
    };
    let v0 = x.follower_speed();
    let mut s = Local {
        headway: x.headway,
        speed: v0,
        travelled: 0.0,
    };
    let mut mode = mode;
    let mut u = u;
    let mut left = dt;

    for segment in 0..MAX_SEGMENTS {
        let end = f.advance(&s, u, left);
        if segment == 0 && f.mode(&end) == mode {
            return Ok(plain(v0, u, dt, p));
        }
        if segment + 1 == MAX_SEGMENTS || f.mode(&end) == mode {
            s = end;
            break;
        }
        let (mut lo, mut hi) = (0.0, left);
        for _ in 0..BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if f.mode(&f.advance(&s, u, mid)) == mode {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let inside = f.advance(&s, u, lo);
        let outside = f.advance(&s, u, hi);
        let next = f.mode(&outside);
        let u_next = f.accel(&outside, next)?;
        let rest = left - lo;

        // If the new command pushes the state straight back out of `next`,
        // this is a sliding motion. The surfaces it is pushed back across are
        // held: the two commands are blended so the state stays on their near
        // side for the rest of the step.
        let back = f.advance(&inside, u_next, rest);
        let (g_in, g_out, g_back) = (f.surfaces(&inside), f.surfaces(&outside), f.surfaces(&back));
        let mut crossed: Vec<usize> = (0..6)
            .filter(|&k| (g_in[k] > 0.0) != (g_out[k] > 0.0))
            .collect();
        if crossed.contains(&X2_SURFACE) {
            // The thresholds jump with the sign of x2, so their flips are not crossings.
            crossed = vec![X2_SURFACE];
        }
        let held: Vec<(usize, f64)> = crossed
            .into_iter()
            .map(|k| (k, if g_in[k] > 0.0 { 1.0 } else { -1.0 }))
            .filter(|&(k, side)| side * g_back[k] >= SLIDE_MARGIN)
            .collect();
        let holds = |end: &Local| {
            let g = f.surfaces(end);
            held.iter().all(|&(k, side)| side * g[k] >= SLIDE_MARGIN)
        };
        if !held.is_empty() && f.mode(&back) != next {
            let (mut b_in, mut b_out) = (0.0, 1.0);
            for _ in 0..BISECTIONS {
                let mid = 0.5 * (b_in + b_out);
                if holds(&f.advance(&inside, mid * u + (1.0 - mid) * u_next, rest)) {
                    b_in = mid;
                } else {
                    b_out = mid;
                }
            }
            s = f.advance(&inside, b_in * u + (1.0 - b_in) * u_next, rest);
            break;
        }

        s = outside;
        left -= hi;
        mode = next;
        u = u_next;
        if left <= 0.0 {
            break;
        }
    }

    Ok(Advance {
        speed: s.speed,
        displacement: s.travelled,
        accel: (s.speed - v0) / dt,
    })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<TraceRecord>,
    pub events: Vec<SimEvent>,
    pub deliveries: Vec<DeliveryRecord>,
    /// Set when the run stopped early; traces up to that point are kept.
    pub error: Option<SimError>,
    /// Simulated time reached.
    pub end_time: f64,
}

impl RunOutput {
    pub fn collided(&self) -> bool {
        matches!(self.error, Some(SimError::Collision { .. }))
    }

    pub fn trace_of(&self, id: usize) -> impl Iterator<Item = &TraceRecord> {
        self.traces.iter().filter(move |r| r.id == id)
    }
}

/// Integrates `scenario` from 0 to `config.duration`.
pub fn run(config: &SimConfig, scenario: &Scenario) -> RunOutput {
    let mut world = match World::new(config, scenario) {
        Ok(w) => w,
        Err(e) => {
            return RunOutput {
                traces: Vec::new(),
                events: Vec::new(),
                deliveries: Vec::new(),
                error: Some(e),
                end_time: 0.0,
            }
        }
    };
    let steps = config.steps();
    let mut traces =
        Vec::with_capacity((steps as usize / config.sample_every + 1) * scenario.vehicles.len());
    let mut error = None;
    for _ in 0..steps {
        if let Err(e) = world.step(&mut traces) {
            error = Some(e);
            break;
        }
    }
    RunOutput {
        end_time: world.time(),
        traces,
        events: world.events,
        deliveries: world.channel.log().to_vec(),
        error,
    }
}

/// First sampled time after which the follower stays in the equilibrium set
/// until the end of the trace. `None` if the last sample is not in it.
pub fn convergence_time<'a, I>(trace: I, params: &VehicleParams, tol: f64) -> Option<f64>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let mut since = None;
    for r in trace {
        if in_equilibrium(&r.relative_state(), params, r.alpha_t, tol) {
            since.get_or_insert(r.t);
        } else {
            since = None;
        }
    }
    since
}
