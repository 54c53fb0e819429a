//! Abstract V2V information propagation.
//!
//! Vehicles periodically broadcast their position and speed. A message reaches
//! every vehicle within radio range after one hop delay; each receiver that
//! sees a message for the first time relays it once, so far vehicles are
//! reached by multi-hop flooding over the geometry at emission time. Copies
//! arriving over several paths are recognised by `(origin, serial)` and
//! dropped, and each receiver keeps only the newest serial per origin.
//!
//! Vehicle ids are 1-based, matching the traces.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Slack used when comparing event times against the simulation clock.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("channel parameter `{name}` = {value} violates {rule}")]
    Invalid {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMessage {
    pub origin: usize,
    /// Strictly increasing per origin, starting at 1.
    pub serial: u64,
    pub emitted_at: f64,
    pub position: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub radio_range: f64,
    pub hop_delay: f64,
    /// Delay budget for safety messages, s.
    pub max_end_to_end: f64,
    pub broadcast_period: f64,
    /// Processing time added at each relay, s.
    pub compute_delay: f64,
    /// Upper bound of a uniform per-hop jitter, s. Zero disables it.
    pub jitter: f64,
    /// A disabled channel never delivers anything.
    pub enabled: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            radio_range: 750.0,
            hop_delay: 0.020,
            max_end_to_end: 0.100,
            broadcast_period: 0.1,
            compute_delay: 0.0,
            jitter: 0.0,
            enabled: true,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let checks: [(&'static str, f64, bool, &'static str); 6] = [
            (
                "radio_range",
                self.radio_range,
                self.radio_range > 0.0,
                "radio_range > 0",
            ),
            (
                "hop_delay",
                self.hop_delay,
                self.hop_delay > 0.0,
                "hop_delay > 0",
            ),
            (
                "max_end_to_end",
                self.max_end_to_end,
                self.max_end_to_end > self.hop_delay,
                "max_end_to_end > hop_delay",
            ),
            (
                "broadcast_period",
                self.broadcast_period,
                self.broadcast_period > 0.0,
                "broadcast_period > 0",
            ),
            (
                "compute_delay",
                self.compute_delay,
                self.compute_delay >= 0.0,
                "compute_delay >= 0",
            ),
            ("jitter", self.jitter, self.jitter >= 0.0, "jitter >= 0"),
        ];
        for (name, value, ok, rule) in checks {
            if !ok || !value.is_finite() {
                return Err(ChannelError::Invalid { name, value, rule });
            }
        }
        Ok(())
    }

    /// Jitter-free delay of a message that needs `hops` hops.
    pub fn delay_for_hops(&self, hops: u32) -> f64 {
        let hops = f64::from(hops.max(1));
        hops * self.hop_delay + (hops - 1.0) * self.compute_delay
    }
}

/// A message as received by one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub message: StateMessage,
    pub receiver: usize,
    pub delivered_at: f64,
    pub hops: u32,
}

/// Minimum number of hops from `from` to `to` over a line of vehicles.
///
/// `positions` must be sorted along the road (either direction). The greedy
/// choice of the farthest relay in range is optimal on a line. Returns `None`
/// when some gap on the way exceeds `range`.
pub fn hop_count(positions: &[f64], from: usize, to: usize, range: f64) -> Option<u32> {
    if from == to {
        return Some(0);
    }
    let step: isize = if to > from { 1 } else { -1 };
    let mut current = from;
    let mut hops = 0;
    while (positions[to] - positions[current]).abs() > range {
        let mut next = current;
        let mut j = current as isize + step;
        while j != to as isize && (positions[j as usize] - positions[current]).abs() <= range {
            next = j as usize;
            j += step;
        }
        if next == current {
            return None;
        }
        current = next;
        hops += 1;
    }
    Some(hops + 1)
}

/// Per-receiver view: duplicate discovery plus the newest message per origin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryTable {
    seen: HashSet<(usize, u64)>,
    newest: BTreeMap<usize, StateMessage>,
}

/// Outcome of offering a message to a [`DeliveryTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Accepted,
    Duplicate,
    /// First copy, but an equal-or-newer serial from the same origin is held.
    Stale,
}

impl DeliveryTable {
    pub fn offer(&mut self, msg: StateMessage) -> Offer {
        if !self.seen.insert((msg.origin, msg.serial)) {
            return Offer::Duplicate;
        }
        match self.newest.get(&msg.origin) {
            Some(held) if held.serial >= msg.serial => Offer::Stale,
            _ => {
                self.newest.insert(msg.origin, msg);
                Offer::Accepted
            }
        }
    }

    /// Marks a message as already known without storing it (own broadcasts).
    fn mark_seen(&mut self, msg: &StateMessage) {
        self.seen.insert((msg.origin, msg.serial));
    }

    pub fn newest(&self) -> &BTreeMap<usize, StateMessage> {
        &self.newest
    }

    pub fn get(&self, origin: usize) -> Option<&StateMessage> {
        self.newest.get(&origin)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    at: f64,
    receiver: usize,
    hops: u32,
    message: StateMessage,
    positions: Arc<[f64]>,
}

impl Pending {
    fn key(&self) -> (f64, usize, usize, u64, u32) {
        (
            self.at,
            self.receiver,
            self.message.origin,
            self.message.serial,
            self.hops,
        )
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
            .then(b.4.cmp(&a.4))
    }
}

/// Counters kept by the channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub broadcasts: u64,
    pub deliveries: u64,
    pub duplicates: u64,
    pub stale: u64,
}

/// Event queue of in-flight messages plus one [`DeliveryTable`] per vehicle.
#[derive(Debug)]
pub struct Channel {
    params: ChannelParams,
    serials: Vec<u64>,
    queue: BinaryHeap<Pending>,
    tables: Vec<DeliveryTable>,
    log: Vec<DeliveryRecord>,
    stats: ChannelStats,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(params: ChannelParams, vehicles: usize, seed: u64) -> Self {
        Self {
            params,
            serials: vec![0; vehicles],
            queue: BinaryHeap::new(),
            tables: vec![DeliveryTable::default(); vehicles],
            log: Vec::new(),
            stats: ChannelStats::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Stamps a message for vehicle `origin` and schedules its first hop.
    ///
    /// `positions[i]` is the position of vehicle `i + 1` at emission time.
    pub fn broadcast(
        &mut self,
        t: f64,
        origin: usize,
        positions: &[f64],
        speed: f64,
    ) -> StateMessage {
        let slot = origin - 1;
        self.serials[slot] += 1;
        let message = StateMessage {
            origin,
            serial: self.serials[slot],
            emitted_at: t,
            position: positions[slot],
            speed,
        };
        self.tables[slot].mark_seen(&message);
        self.stats.broadcasts += 1;
        if self.params.enabled {
            let positions: Arc<[f64]> = Arc::from(positions);
            self.schedule_neighbours(t, origin, 0, message, &positions);
        }
        message
    }

    fn schedule_neighbours(
        &mut self,
        t: f64,
        from: usize,
        hops: u32,
        message: StateMessage,
        positions: &Arc<[f64]>,
    ) {
        let here = positions[from - 1];
        for (slot, &pos) in positions.iter().enumerate() {
            let receiver = slot + 1;
            if receiver == from || (pos - here).abs() > self.params.radio_range {
                continue;
            }
            let mut at = t + self.params.hop_delay;
            if hops > 0 {
                at += self.params.compute_delay;
            }
            if self.params.jitter > 0.0 {
                at += self.rng.gen_range(0.0..self.params.jitter);
            }
            self.queue.push(Pending {
                at,
                receiver,
                hops: hops + 1,
                message,
                positions: Arc::clone(positions),
            });
        }
    }

    /// Processes every arrival due by `t` and returns the accepted deliveries.
    pub fn deliver(&mut self, t: f64) -> Vec<DeliveryRecord> {
        let mut delivered = Vec::new();
        while self.queue.peek().is_some_and(|p| p.at <= t + TIME_SLACK) {
            let Some(p) = self.queue.pop() else { break };
            match self.tables[p.receiver - 1].offer(p.message) {
                Offer::Duplicate => {
                    self.stats.duplicates += 1;
                    continue;
                }
                Offer::Stale => self.stats.stale += 1,
                Offer::Accepted => {
                    let record = DeliveryRecord {
                        message: p.message,
                        receiver: p.receiver,
                        delivered_at: p.at,
                        hops: p.hops,
                    };
                    self.stats.deliveries += 1;
                    self.log.push(record);
                    delivered.push(record);
                }
            }
            self.schedule_neighbours(p.at, p.receiver, p.hops, p.message, &p.positions);
        }
        delivered
    }

    pub fn table(&self, receiver: usize) -> &DeliveryTable {
        &self.tables[receiver - 1]
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}

pub const DELIVERY_CSV_HEADER: [&str; 6] = [
    "t_emit",
    "origin",
    "serial",
    "receiver",
    "t_deliver",
    "hops",
];

pub fn write_delivery_csv<W: Write>(out: W, records: &[DeliveryRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DELIVERY_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.message.emitted_at.to_string(),
            r.message.origin.to_string(),
            r.message.serial.to_string(),
            r.receiver.to_string(),
            r.delivered_at.to_string(),
            r.hops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(n: usize, spacing: f64) -> Vec<f64> {
        (0..n).map(|i| 2000.0 - spacing * i as f64).collect()
    }

    #[test]
    fn hop_count_examples() {
        let pos = line(5, 500.0);
        assert_eq!(hop_count(&pos, 0, 4, 750.0), Some(4));
        assert_eq!(hop_count(&pos, 4, 0, 750.0), Some(4));
        assert_eq!(hop_count(&[100.0, 0.0], 0, 1, 750.0), Some(1));
        assert_eq!(hop_count(&[800.0, 0.0], 0, 1, 750.0), None);
        assert_eq!(hop_count(&pos, 2, 2, 750.0), Some(0));
        // Dense line: relays skip intermediate vehicles.
        let dense = line(9, 250.0);
        assert_eq!(hop_count(&dense, 0, 8, 750.0), Some(3));
    }

    #[test]
    fn broadcast_stamps_serials() {
        let mut ch = Channel::new(ChannelParams::default(), 2, 0);
        let pos = [100.0, 0.0];
        let serials: Vec<u64> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&t| {
                let m = ch.broadcast(t, 1, &pos, 20.0);
                assert_eq!(m.emitted_at, t);
                assert_eq!(m.position, 100.0);
                m.serial
            })
            .collect();
        assert_eq!(serials, [1, 2, 3]);
    }

    #[test]
    fn head_message_reaches_tail_after_four_hops() {
        let mut ch = Channel::new(ChannelParams::default(), 5, 0);
        let pos = line(5, 500.0);
        ch.broadcast(0.0, 1, &pos, 33.0);
        let mut tail = None;
        let mut t = 0.0;
        for step in 1..=20 {
            t = step as f64 * 0.01;
            for r in ch.deliver(t) {
                if r.receiver == 5 {
                    tail = Some(r);
                }
            }
        }
        assert!(t >= 0.1);
        let r = tail.expect("tail reached");
        assert_eq!(r.hops, 4);
        assert_abs_diff_eq!(r.delivered_at, 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(
            r.delivered_at - r.message.emitted_at,
            4.0 * 0.02,
            epsilon = 1e-12
        );
        assert_eq!(ch.in_flight(), 0);
    }

    #[test]
    fn multipath_copies_are_delivered_once() {
        // Three vehicles within mutual range: vehicle 3 hears vehicle 1 directly
        // and again through vehicle 2's relay.
        let mut ch = Channel::new(ChannelParams::default(), 3, 0);
        let pos = [200.0, 100.0, 0.0];
        ch.broadcast(0.0, 1, &pos, 20.0);
        let records = ch.deliver(1.0);
        let at_three: Vec<_> = records.iter().filter(|r| r.receiver == 3).collect();
        assert_eq!(at_three.len(), 1);
        assert_eq!(at_three[0].hops, 1);
        assert!(ch.stats().duplicates > 0);
    }

    #[test]
    fn late_older_serial_is_discarded() {
        let msg = |serial| StateMessage {
            origin: 1,
            serial,
            emitted_at: serial as f64 * 0.1,
            position: 0.0,
            speed: serial as f64,
        };
        let mut table = DeliveryTable::default();
        assert_eq!(table.offer(msg(7)), Offer::Accepted);
        assert_eq!(table.offer(msg(5)), Offer::Stale);
        assert_eq!(table.offer(msg(7)), Offer::Duplicate);
        assert_eq!(table.get(1).unwrap().serial, 7);
    }

    #[test]
    fn disabled_channel_delivers_nothing() {
        let params = ChannelParams {
            enabled: false,
            ..ChannelParams::default()
        };
        let mut ch = Channel::new(params, 2, 0);
        ch.broadcast(0.0, 1, &[10.0, 0.0], 20.0);
        assert!(ch.deliver(10.0).is_empty());
        assert!(ch.table(2).newest().is_empty());
    }

    #[test]
    fn relays_add_compute_delay() {
        let params = ChannelParams {
            compute_delay: 0.005,
            ..ChannelParams::default()
        };
        let mut ch = Channel::new(params, 5, 0);
        ch.broadcast(0.0, 1, &line(5, 500.0), 33.0);
        let r = ch
            .deliver(1.0)
            .into_iter()
            .find(|r| r.receiver == 5)
            .unwrap();
        assert_abs_diff_eq!(r.delivered_at, 0.08 + 3.0 * 0.005, epsilon = 1e-12);
        assert_abs_diff_eq!(params.delay_for_hops(4), 0.095, epsilon = 1e-12);
    }

    #[test]
    fn delivery_csv_has_header() {
        let mut ch = Channel::new(ChannelParams::default(), 2, 0);
        ch.broadcast(0.0, 1, &[10.0, 0.0], 20.0);
        ch.deliver(1.0);
        let mut buf = Vec::new();
        write_delivery_csv(&mut buf, ch.log()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("t_emit,origin,serial,receiver,t_deliver,hops")
        );
        assert_eq!(lines.next(), Some("0,1,1,2,0.02,1"));
    }

    #[test]
    fn default_params_are_valid() {
        assert_eq!(ChannelParams::default().validate(), Ok(()));
        let bad = ChannelParams {
            hop_delay: 0.2,
            ..ChannelParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
