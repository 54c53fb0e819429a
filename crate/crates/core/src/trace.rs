//! CSV export and import of traces, events and phase portraits.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back yields bit-identical records. The head's headway is `inf`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::model::Mode;
use crate::sim::{EventKind, SimEvent, TraceRecord};

pub const TRACE_HEADER: [&str; 12] = [
    "t",
    "id",
    "pos_m",
    "v_mps",
    "a_mps2",
    "mode",
    "x1_m",
    "x2_mps",
    "x3_mps",
    "alpha_t",
    "v_bar_mps",
    "theta_m2ps2",
];

pub const EVENTS_HEADER: [&str; 4] = ["t", "kind", "id", "detail"];

pub const PHASE_HEADER: [&str; 2] = ["x2_mps", "x1_m"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}")]
    Header { found: Vec<String> },
    #[error("row {row}: {msg}")]
    Field { row: usize, msg: String },
}

pub fn write_trace<W: Write>(out: W, records: &[TraceRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.id.to_string(),
            r.position.to_string(),
            r.speed.to_string(),
            r.accel.to_string(),
            r.mode.to_string(),
            r.x1.to_string(),
            r.x2.to_string(),
            r.x3.to_string(),
            r.alpha_t.to_string(),
            r.v_bar.to_string(),
            r.theta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(out: W, events: &[SimEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.t.to_string(),
            e.kind.to_string(),
            e.id.to_string(),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `x2, x1` of one vehicle, one row per trace sample.
pub fn write_phase<W: Write>(out: W, records: &[TraceRecord], id: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PHASE_HEADER)?;
    for r in records.iter().filter(|r| r.id == id) {
        w.write_record([r.x2.to_string(), r.x1.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-vehicle phase portraits keyed by vehicle id, as CSV text.
pub fn phase_portraits(records: &[TraceRecord]) -> BTreeMap<usize, Vec<u8>> {
    let mut ids: Vec<usize> = records.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let mut buf = Vec::new();
            write_phase(&mut buf, records, id).expect("writing to memory");
            (id, buf)
        })
        .collect()
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), TraceError> {
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != expected {
        return Err(TraceError::Header { found });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    row: usize,
) -> Result<T, TraceError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| TraceError::Field {
        row,
        msg: format!("cannot parse column {i} value `{raw}`"),
    })
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &TRACE_HEADER)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let mode: Mode = rec
            .get(5)
            .unwrap_or("")
            .parse()
            .map_err(|e| TraceError::Field {
                row,
                msg: format!("{e}"),
            })?;
        out.push(TraceRecord {
            t: field(&rec, 0, row)?,
            id: field(&rec, 1, row)?,
            position: field(&rec, 2, row)?,
            speed: field(&rec, 3, row)?,
            accel: field(&rec, 4, row)?,
            mode,
            x1: field(&rec, 6, row)?,
            x2: field(&rec, 7, row)?,
            x3: field(&rec, 8, row)?,
            alpha_t: field(&rec, 9, row)?,
            v_bar: field(&rec, 10, row)?,
            theta: field(&rec, 11, row)?,
        });
    }
    Ok(out)
}

pub fn read_events<R: Read>(input: R) -> Result<Vec<SimEvent>, TraceError> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &EVENTS_HEADER)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let raw = rec.get(1).unwrap_or("");
        let kind = EventKind::parse(raw).ok_or_else(|| TraceError::Field {
            row,
            msg: format!("unknown event kind `{raw}`"),
        })?;
        out.push(SimEvent {
            t: field(&rec, 0, row)?,
            kind,
            id: field(&rec, 2, row)?,
            detail: rec.get(3).unwrap_or("").to_owned(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VehicleParams;
    use crate::sim::{run, Scenario, SimConfig, VehicleInit};

    fn short_run() -> crate::sim::RunOutput {
        let p = VehicleParams::default();
        let scenario = Scenario::new(vec![
            VehicleInit {
                position: 400.0,
                speed: 20.0,
                params: p,
            },
            VehicleInit {
                position: 300.0,
                speed: 25.0,
                params: p,
            },
        ])
        .with_events(vec![(1.0, 15.0)]);
        let config = SimConfig {
            duration: 5.0,
            ..SimConfig::default()
        };
        run(&config, &scenario)
    }

    #[test]
    fn trace_round_trips_bit_exactly() {
        let out = short_run();
        let mut buf = Vec::new();
        write_trace(&mut buf, &out.traces).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "t,id,pos_m,v_mps,a_mps2,mode,x1_m,x2_mps,x3_mps,alpha_t,v_bar_mps,theta_m2ps2\n"
        ));
        assert!(text.lines().nth(1).unwrap().contains(",inf,"));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, out.traces);
    }

    #[test]
    fn events_round_trip() {
        let out = short_run();
        assert!(!out.events.is_empty());
        let mut buf = Vec::new();
        write_events(&mut buf, &out.events).unwrap();
        assert!(buf.starts_with(b"t,kind,id,detail\n"));
        assert_eq!(read_events(buf.as_slice()).unwrap(), out.events);
    }

    #[test]
    fn phase_files_per_vehicle() {
        let out = short_run();
        let files = phase_portraits(&out.traces);
        assert_eq!(files.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        let text = String::from_utf8(files[&2].clone()).unwrap();
        assert_eq!(text.lines().next(), Some("x2_mps,x1_m"));
        assert_eq!(text.lines().count(), out.trace_of(2).count() + 1);
        assert_eq!(text.lines().nth(1), Some("-5,100"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = read_trace("t,id\n0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Header { .. }));
    }
}
