//! Scenario files.
//!
//! A line-oriented format with `[section]` headers, `key = value` pairs and
//! `#` comments:
//!
//! ```text
//! [sim]              duration_s, dt_s, vdt (on|off), sample_every,
//!                    k_lead, switching (located|plain), leader_source (sensor|v2v)
//! [channel]          radio_range_m, hop_delay_s, broadcast_period_s,
//!                    max_end_to_end_s, compute_delay_s, jitter_s
//! [vdt]              gamma, alpha_t_max, alpha_t_0, staleness_s,
//!                    update_period_s, population (in_range|all_ahead)
//! [vehicle.defaults] any vehicle parameter
//! [vehicle.<k>]      init_pos_m, init_v_mps, any vehicle parameter
//! [leader.profile]   event = <t_s> <v_mps>, repeated
//! ```
//!
//! Vehicle parameters are `L`, `L0`, `a_max`, `v_max`, `v_des`, `lambda`,
//! `c_r`, `c_s`, `c_c`, `T_D`, `G`, `alpha1`, `alpha2`, `alpha4` and
//! `epsilon`. When `v_max` is set and `v_des` is not, `v_des` follows it.
//! Vehicles are numbered from 1 (the head) without gaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::channel::ChannelParams;
use crate::model::VehicleParams;
use crate::sim::{LeaderProfile, LeaderSource, Scenario, SimConfig, Switching, VehicleInit};
use crate::vdt::{SamplePopulation, VdtParams};

/// The five-vehicle platoon used throughout the book.
pub const PLATOON5: &str = include_str!("../../../scenarios/platoon5.scn");

pub const PARAM_KEYS: [&str; 15] = [
    "L", "L0", "a_max", "v_max", "v_des", "lambda", "c_r", "c_s", "c_c", "T_D", "G", "alpha1",
    "alpha2", "alpha4", "epsilon",
];

fn param_slot<'a>(p: &'a mut VehicleParams, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "L" => &mut p.length,
        "L0" => &mut p.min_gap,
        "a_max" => &mut p.a_max,
        "v_max" => &mut p.v_max,
        "v_des" => &mut p.v_des,
        "lambda" => &mut p.lambda,
        "c_r" => &mut p.c_r,
        "c_s" => &mut p.c_s,
        "c_c" => &mut p.c_c,
        "T_D" => &mut p.t_d,
        "G" => &mut p.g_ref,
        "alpha1" => &mut p.alpha1,
        "alpha2" => &mut p.alpha2,
        "alpha4" => &mut p.alpha4,
        "epsilon" => &mut p.epsilon,
        _ => return None,
    })
}

/// Sets one vehicle parameter by its file key. Returns false for unknown keys.
pub fn set_param(p: &mut VehicleParams, key: &str, value: f64) -> bool {
    match param_slot(p, key) {
        Some(slot) => {
            *slot = value;
            true
        }
        None => false,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("[{section}] {msg}")]
    Semantic { section: String, msg: String },
}

fn semantic(section: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic {
        section: section.into(),
        msg: msg.into(),
    }
}

/// Vehicle parameters set explicitly, by file key.
pub type Overrides = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub position: f64,
    pub speed: f64,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub duration: f64,
    pub dt: f64,
    pub vdt: bool,
    pub sample_every: usize,
    pub k_lead: f64,
    pub switching: Switching,
    pub leader_source: LeaderSource,
}

impl Default for SimSection {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            duration: c.duration,
            dt: c.dt,
            vdt: c.vdt_enabled,
            sample_every: c.sample_every,
            k_lead: c.k_lead,
            switching: c.switching,
            leader_source: c.leader_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub sim: SimSection,
    pub channel: ChannelParams,
    pub vdt: VdtParams,
    pub defaults: Overrides,
    pub vehicles: Vec<VehicleSpec>,
    pub events: Vec<(f64, f64)>,
}

impl ScenarioFile {
    /// Parameters of vehicle `k` (1-based) after defaults and overrides.
    pub fn params(&self, k: usize) -> VehicleParams {
        let mut p = VehicleParams::default();
        let own = &self.vehicles[k - 1].overrides;
        for (key, &v) in self.defaults.iter().chain(own.iter()) {
            set_param(&mut p, key, v);
        }
        let has = |key: &str| self.defaults.contains_key(key) || own.contains_key(key);
        if has("v_max") && !has("v_des") {
            p.v_des = p.v_max;
        }
        p
    }

    pub fn all_params(&self) -> Vec<VehicleParams> {
        (1..=self.vehicles.len()).map(|k| self.params(k)).collect()
    }

    pub fn config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            duration: self.sim.duration,
            vdt_enabled: self.sim.vdt,
            vdt: self.vdt,
            channel: self.channel,
            sample_every: self.sim.sample_every,
            k_lead: self.sim.k_lead,
            switching: self.sim.switching,
            leader_source: self.sim.leader_source,
            ..SimConfig::default()
        }
    }

    pub fn scenario(&self) -> Scenario {
        let vehicles: Vec<VehicleInit> = self
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| VehicleInit {
                position: v.position,
                speed: v.speed,
                params: self.params(i + 1),
            })
            .collect();
        let initial = vehicles.first().map_or(0.0, |v| v.speed);
        Scenario {
            vehicles,
            profile: LeaderProfile {
                initial,
                events: self.events.clone(),
            },
        }
    }

    /// Semantic checks, reported with the offending section.
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.sim;
        if !(s.dt > 0.0) {
            return Err(semantic(
                "sim",
                format!("dt_s must be positive, got {}", s.dt),
            ));
        }
        if !(s.duration >= 0.0) {
            return Err(semantic(
                "sim",
                format!("duration_s must be non-negative, got {}", s.duration),
            ));
        }
        if s.sample_every == 0 {
            return Err(semantic("sim", "sample_every must be at least 1"));
        }
        if !(s.k_lead > 0.0) {
            return Err(semantic(
                "sim",
                format!("k_lead must be positive, got {}", s.k_lead),
            ));
        }
        self.channel
            .validate()
            .map_err(|e| semantic("channel", e.to_string()))?;
        self.vdt
            .validate()
            .map_err(|e| semantic("vdt", e.to_string()))?;
        let mut base = VehicleParams::default();
        for (k, &v) in &self.defaults {
            set_param(&mut base, k, v);
        }
        if self.defaults.contains_key("v_max") && !self.defaults.contains_key("v_des") {
            base.v_des = base.v_max;
        }
        base.validate()
            .map_err(|e| semantic("vehicle.defaults", e.to_string()))?;
        if self.vehicles.is_empty() {
            return Err(semantic("vehicle.1", "at least one vehicle is required"));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let section = format!("vehicle.{}", i + 1);
            let p = self.params(i + 1);
            p.validate()
                .map_err(|e| semantic(&section, e.to_string()))?;
            if !(0.0..=p.v_max).contains(&v.speed) {
                return Err(semantic(
                    &section,
                    format!("init_v_mps = {} outside [0, {}]", v.speed, p.v_max),
                ));
            }
            if i > 0 && !(v.position < self.vehicles[i - 1].position) {
                return Err(semantic(
                    &section,
                    format!("init_pos_m = {} must be behind vehicle {}", v.position, i),
                ));
            }
        }
        let v_max = self.params(1).v_max;
        for (i, &(t, v)) in self.events.iter().enumerate() {
            if !(t >= 0.0) {
                return Err(semantic(
                    "leader.profile",
                    format!("event time {t} is negative"),
                ));
            }
            if i > 0 && !(t > self.events[i - 1].0) {
                return Err(semantic(
                    "leader.profile",
                    format!("event times not strictly increasing at {t}"),
                ));
            }
            if !(0.0..=v_max).contains(&v) {
                return Err(semantic(
                    "leader.profile",
                    format!("target {v} outside [0, {v_max}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sim = &self.sim;
        let _ = writeln!(s, "[sim]");
        let _ = writeln!(s, "duration_s = {}", sim.duration);
        let _ = writeln!(s, "dt_s = {}", sim.dt);
        let _ = writeln!(s, "vdt = {}", if sim.vdt { "on" } else { "off" });
        let _ = writeln!(s, "sample_every = {}", sim.sample_every);
        let _ = writeln!(s, "k_lead = {}", sim.k_lead);
        let _ = writeln!(s, "switching = {}", sim.switching.as_str());
        let _ = writeln!(s, "leader_source = {}", source_str(sim.leader_source));
        let c = &self.channel;
        let _ = writeln!(s, "\n[channel]");
        let _ = writeln!(s, "radio_range_m = {}", c.radio_range);
        let _ = writeln!(s, "hop_delay_s = {}", c.hop_delay);
        let _ = writeln!(s, "broadcast_period_s = {}", c.broadcast_period);
        let _ = writeln!(s, "max_end_to_end_s = {}", c.max_end_to_end);
        let _ = writeln!(s, "compute_delay_s = {}", c.compute_delay);
        let _ = writeln!(s, "jitter_s = {}", c.jitter);
        let v = &self.vdt;
        let _ = writeln!(s, "\n[vdt]");
        let _ = writeln!(s, "gamma = {}", v.gamma);
        let _ = writeln!(s, "alpha_t_max = {}", v.alpha_t_max);
        let _ = writeln!(s, "alpha_t_0 = {}", v.alpha_t_0);
        let _ = writeln!(s, "staleness_s = {}", v.staleness_limit);
        let _ = writeln!(s, "update_period_s = {}", v.update_period);
        let _ = writeln!(s, "population = {}", v.population.as_str());
        let write_overrides = |s: &mut String, o: &Overrides| {
            for key in PARAM_KEYS {
                if let Some(v) = o.get(key) {
                    let _ = writeln!(s, "{key} = {v}");
                }
            }
        };
        let _ = writeln!(s, "\n[vehicle.defaults]");
        write_overrides(&mut s, &self.defaults);
        for (i, veh) in self.vehicles.iter().enumerate() {
            let _ = writeln!(s, "\n[vehicle.{}]", i + 1);
            let _ = writeln!(s, "init_pos_m = {}", veh.position);
            let _ = writeln!(s, "init_v_mps = {}", veh.speed);
            write_overrides(&mut s, &veh.overrides);
        }
        let _ = writeln!(s, "\n[leader.profile]");
        for (t, v) in &self.events {
            let _ = writeln!(s, "event = {t} {v}");
        }
        s
    }
}

fn source_str(s: LeaderSource) -> &'static str {
    match s {
        LeaderSource::Sensor => "sensor",
        LeaderSource::V2v => "v2v",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Sim,
    Channel,
    Vdt,
    Defaults,
    Vehicle(usize),
    Profile,
}

fn number(raw: &str, line: usize, key: &str) -> Result<f64, ScenarioError> {
    // Only plain decimals: digits, one point, optional sign and exponent.
    let plain = !raw.is_empty()
        && raw
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    match raw.parse::<f64>() {
        Ok(v) if plain && v.is_finite() => Ok(v),
        _ => Err(ScenarioError::Parse {
            line,
            msg: format!("`{key}` expects a number, got `{raw}`"),
        }),
    }
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let mut file = ScenarioFile {
        sim: SimSection::default(),
        channel: ChannelParams::default(),
        vdt: VdtParams::default(),
        defaults: Overrides::new(),
        vehicles: Vec::new(),
        events: Vec::new(),
    };
    let mut section: Option<Section> = None;
    let mut seen: Vec<(Section, String)> = Vec::new();
    let mut positions: BTreeMap<usize, (Option<f64>, Option<f64>, Overrides, usize)> =
        BTreeMap::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| ScenarioError::Parse { line, msg };
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("unterminated section header `{content}`")))?
                .trim();
            let sec = match name {
                "sim" => Section::Sim,
                "channel" => Section::Channel,
                "vdt" => Section::Vdt,
                "vehicle.defaults" => Section::Defaults,
                "leader.profile" => Section::Profile,
                other => match other.strip_prefix("vehicle.").map(str::parse::<usize>) {
                    Some(Ok(k)) if k >= 1 => Section::Vehicle(k),
                    _ => return Err(err(format!("unknown section `[{other}]`"))),
                },
            };
            if seen.iter().any(|(s, k)| *s == sec && k.is_empty()) {
                return Err(err(format!("section `[{name}]` appears twice")));
            }
            seen.push((sec, String::new()));
            if let Section::Vehicle(k) = sec {
                positions.insert(k, (None, None, Overrides::new(), line));
            }
            section = Some(sec);
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let sec =
            section.ok_or_else(|| err(format!("`{key}` appears before any section header")))?;
        if sec != Section::Profile || key != "event" {
            if seen.iter().any(|(s, k)| *s == sec && k == key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push((sec, key.to_owned()));
        }
        let unknown = || err(format!("unknown key `{key}`"));
        match sec {
            Section::Sim => {
                let s = &mut file.sim;
                match key {
                    "duration_s" => s.duration = number(value, line, key)?,
                    "dt_s" => s.dt = number(value, line, key)?,
                    "k_lead" => s.k_lead = number(value, line, key)?,
                    "vdt" => {
                        s.vdt = match value {
                            "on" | "true" => true,
                            "off" | "false" => false,
                            _ => {
                                return Err(err(format!("`vdt` expects on or off, got `{value}`")))
                            }
                        }
                    }
                    "sample_every" => {
                        s.sample_every = value.parse().map_err(|_| {
                            err(format!("`sample_every` expects an integer, got `{value}`"))
                        })?
                    }
                    "switching" => {
                        s.switching = Switching::parse(value).ok_or_else(|| {
                            err(format!(
                                "`switching` expects located or plain, got `{value}`"
                            ))
                        })?
                    }
                    "leader_source" => {
                        s.leader_source = match value {
                            "sensor" => LeaderSource::Sensor,
                            "v2v" => LeaderSource::V2v,
                            _ => {
                                return Err(err(format!(
                                    "`leader_source` expects sensor or v2v, got `{value}`"
                                )))
                            }
                        }
                    }
                    _ => return Err(unknown()),
                }
            }
            Section::Channel => {
                let v = number(value, line, key)?;
                let c = &mut file.channel;
                match key {
                    "radio_range_m" => c.radio_range = v,
                    "hop_delay_s" => c.hop_delay = v,
                    "broadcast_period_s" => c.broadcast_period = v,
                    "max_end_to_end_s" => c.max_end_to_end = v,
                    "compute_delay_s" => c.compute_delay = v,
                    "jitter_s" => c.jitter = v,
                    _ => return Err(unknown()),
                }
            }
            Section::Vdt => {
                let d = &mut file.vdt;
                if key == "population" {
                    d.population = SamplePopulation::parse(value).ok_or_else(|| {
                        err(format!(
                            "`population` expects in_range or all_ahead, got `{value}`"
                        ))
                    })?;
                    continue;
                }
                let v = number(value, line, key)?;
                match key {
                    "gamma" => d.gamma = v,
                    "alpha_t_max" => d.alpha_t_max = v,
                    "alpha_t_0" => d.alpha_t_0 = v,
                    "staleness_s" => d.staleness_limit = v,
                    "update_period_s" => d.update_period = v,
                    _ => return Err(unknown()),
                }
            }
            Section::Defaults => {
                if !PARAM_KEYS.contains(&key) {
                    return Err(unknown());
                }
                file.defaults
                    .insert(key.to_owned(), number(value, line, key)?);
            }
            Section::Vehicle(k) => {
                let entry = positions.get_mut(&k).expect("registered with the header");
                match key {
                    "init_pos_m" => entry.0 = Some(number(value, line, key)?),
                    "init_v_mps" => entry.1 = Some(number(value, line, key)?),
                    _ if PARAM_KEYS.contains(&key) => {
                        entry.2.insert(key.to_owned(), number(value, line, key)?);
                    }
                    _ => return Err(unknown()),
                }
            }
            Section::Profile => {
                if key != "event" {
                    return Err(unknown());
                }
                let parts: Vec<&str> = value.split_whitespace().collect();
                let [t, v] = parts[..] else {
                    return Err(err(format!(
                        "`event` expects `<t_s> <v_mps>`, got `{value}`"
                    )));
                };
                file.events
                    .push((number(t, line, "event")?, number(v, line, "event")?));
            }
        }
    }

    for (expected, (&k, (pos, speed, overrides, _))) in (1..).zip(positions.iter()) {
        let section = format!("vehicle.{k}");
        if k != expected {
            return Err(semantic(
                section,
                format!("vehicles must be numbered 1.. without gaps, missing {expected}"),
            ));
        }
        let position = pos.ok_or_else(|| semantic(&section, "missing init_pos_m"))?;
        let speed = speed.ok_or_else(|| semantic(&section, "missing init_v_mps"))?;
        file.vehicles.push(VehicleSpec {
            position,
            speed,
            overrides: overrides.clone(),
        });
    }
    file.validate()?;
    Ok(file)
}
