use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{Mode, SampleLog};
use crate::error::Result;

/// Power reported for a tone that is absent.
pub const FLOOR_DBM: f64 = -300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Per source tone, at the stage input.
    pub input_dbm: Vec<f64>,
    pub output_dbm: Vec<f64>,
    pub engaged: bool,
    /// Engaged and past its tuning transition.
    pub filter_active: bool,
    pub f_center_hz: f64,
    pub mode: Mode,
    pub att_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rise,
    Fall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceEdge {
    pub t: f64,
    pub tone: usize,
    pub edge: Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterEventKind {
    Tune,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterEvent {
    /// When the command reached the filter.
    pub t: f64,
    /// Sample instant that caused it.
    pub sample_t: f64,
    pub stage: usize,
    pub kind: FilterEventKind,
    pub freq_hz: Option<f64>,
    /// The filter changed between bypass and engaged.
    pub toggle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub stage_output_dbm: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Controller log, one list per stage.
    pub samples: Vec<Vec<SampleLog>>,
    pub edges: Vec<SourceEdge>,
    pub filter_events: Vec<FilterEvent>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<String>,
}

pub const CONTROLLER_CSV_HEADER: [&str; 9] =
    ["t_s", "code_oc", "code_l1", "code_l2", "att_db", "f_est_hz", "p_est_dbm", "mode", "action"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one stage's controller log.
pub fn write_controller_csv<W: Write>(log: &[SampleLog], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CONTROLLER_CSV_HEADER)?;
    for s in log {
        wtr.write_record([
            s.t_s.to_string(),
            s.code_oc.to_string(),
            s.code_l1.to_string(),
            s.code_l2.to_string(),
            s.att_db.to_string(),
            opt(s.f_est_hz),
            opt(s.p_est_dbm),
            s.mode.as_str().to_string(),
            s.action.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Column names of the trace CSV for the given shape.
pub fn trace_header(n_stages: usize, n_tones: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    for s in 1..=n_stages {
        for col in ["mode", "att_db", "engaged", "f_center_hz"] {
            h.push(format!("s{s}_{col}"));
        }
        for t in 1..=n_tones {
            h.push(format!("s{s}_in_dbm_t{t}"));
            h.push(format!("s{s}_out_dbm_t{t}"));
        }
    }
    h
}

pub fn write_trace_csv<W: Write>(trace: &Trace, n_tones: usize, w: W) -> Result<()> {
    let n_stages = trace.records.first().map_or(0, |r| r.stages.len());
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(trace_header(n_stages, n_tones))?;
    for r in &trace.records {
        let mut row = vec![r.t.to_string()];
        for s in &r.stages {
            row.push(s.mode.as_str().to_string());
            row.push(s.att_db.to_string());
            row.push(u8::from(s.filter_active).to_string());
            row.push(s.f_center_hz.to_string());
            for t in 0..n_tones {
                row.push(format!("{:.4}", s.input_dbm[t]));
                row.push(format!("{:.4}", s.output_dbm[t]));
            }
        }
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_snapshots_csv<W: Write>(trace: &Trace, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t_s", "stage", "tone", "output_dbm"])?;
    for snap in &trace.snapshots {
        for (s, tones) in snap.stage_output_dbm.iter().enumerate() {
            for (t, p) in tones.iter().enumerate() {
                wtr.write_record([snap.t.to_string(), (s + 1).to_string(), (t + 1).to_string(), format!("{p:.4}")])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}
