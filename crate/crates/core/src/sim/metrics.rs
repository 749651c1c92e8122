use serde::{Deserialize, Serialize};

use super::trace::{Edge, FilterEvent, FilterEventKind, Trace, FLOOR_DBM};
use crate::error::{Error, Result};

/// Largest coefficient of variation accepted for a periodic toggle sequence.
pub const LIMIT_CYCLE_MAX_CV: f64 = 0.2;

pub const LIMIT_CYCLE_MIN_TOGGLES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Source rise to filter command taking effect, stage 1.
    pub response_time_engage: Option<f64>,
    pub response_time_release: Option<f64>,
    /// Extra time the first stage's filter needs to settle once commanded.
    pub filter_tuning_time: f64,
    /// Per tone: first-stage input minus last-stage output at the end of the run.
    pub suppression_db: Vec<f64>,
    /// Per tone, at the end of the run.
    pub final_output_dbm: Vec<f64>,
    pub limit_cycle: bool,
    pub limit_cycle_period: Option<f64>,
    pub max_output_power_dbm: f64,
    /// Per stage, where the filter sits at the end (None if released).
    pub final_tune_hz: Vec<Option<f64>>,
    pub n_filter_events: usize,
}

/// Delay from the first source edge of the given kind to the first stage-1
/// filter command that answers it.
pub fn measure_response_time(tr: &Trace, edge: Edge) -> Result<f64> {
    let e = tr.edges.iter().find(|e| e.edge == edge).ok_or(Error::TraceEvent(match edge {
        Edge::Rise => "rising source edge",
        Edge::Fall => "falling source edge",
    }))?;
    let want = match edge {
        Edge::Rise => FilterEventKind::Tune,
        Edge::Fall => FilterEventKind::Release,
    };
    let ev = tr
        .filter_events
        .iter()
        .find(|f| f.stage == 0 && f.kind == want && f.toggle && f.t >= e.t)
        .ok_or(Error::TraceEvent("filter action"))?;
    Ok(ev.t - e.t)
}

fn toggles(events: &[FilterEvent], stage: usize) -> Vec<f64> {
    events.iter().filter(|e| e.stage == stage && e.toggle).map(|e| e.t).collect()
}

/// Looks for a sustained engage/release oscillation in any stage.
///
/// Returns the engage-to-engage period when one is found.
pub fn detect_limit_cycle(tr: &Trace) -> (bool, Option<f64>) {
    let n_stages = tr.records.first().map_or(0, |r| r.stages.len());
    for s in 0..n_stages {
        let t = toggles(&tr.filter_events, s);
        if t.len() < LIMIT_CYCLE_MIN_TOGGLES {
            continue;
        }
        // same-kind spacing: engage to engage, release to release
        let periods: Vec<f64> = t.windows(3).map(|w| w[2] - w[0]).collect();
        let n = periods.len() as f64;
        let mean = periods.iter().sum::<f64>() / n;
        let var = periods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        if mean > 0.0 && var.sqrt() / mean < LIMIT_CYCLE_MAX_CV {
            return (true, Some(mean));
        }
    }
    (false, None)
}

fn db_diff(a: f64, b: f64) -> f64 {
    if a <= FLOOR_DBM {
        0.0
    } else {
        a - b
    }
}

pub fn compute_metrics(tr: &Trace, filter_tuning_time: f64) -> Metrics {
    let last = tr.records.last();
    let (suppression_db, final_output_dbm) = match last {
        Some(r) => {
            let input = &r.stages[0].input_dbm;
            let output = &r.stages[r.stages.len() - 1].output_dbm;
            (input.iter().zip(output).map(|(a, b)| db_diff(*a, *b)).collect(), output.clone())
        }
        None => (Vec::new(), Vec::new()),
    };
    let max_output_power_dbm = tr
        .records
        .iter()
        .map(|r| {
            let out = &r.stages[r.stages.len() - 1].output_dbm;
            let w: f64 = out.iter().filter(|p| **p > FLOOR_DBM).map(|p| 10f64.powf(p / 10.0)).sum();
            if w > 0.0 {
                10.0 * w.log10()
            } else {
                FLOOR_DBM
            }
        })
        .fold(FLOOR_DBM, f64::max);
    let (limit_cycle, limit_cycle_period) = detect_limit_cycle(tr);
    Metrics {
        response_time_engage: measure_response_time(tr, Edge::Rise).ok(),
        response_time_release: measure_response_time(tr, Edge::Fall).ok(),
        filter_tuning_time,
        suppression_db,
        final_output_dbm,
        limit_cycle,
        limit_cycle_period,
        max_output_power_dbm,
        final_tune_hz: last
            .map_or_else(Vec::new, |r| r.stages.iter().map(|s| s.engaged.then_some(s.f_center_hz)).collect()),
        n_filter_events: tr.filter_events.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::SourceEdge;

    fn ev(t: f64, kind: FilterEventKind) -> FilterEvent {
        FilterEvent { t, sample_t: t - 4e-7, stage: 0, kind, freq_hz: None, toggle: true }
    }

    #[test]
    fn response_time_from_edges() {
        let tr = Trace {
            edges: vec![SourceEdge { t: 1.0e-6, tone: 0, edge: Edge::Rise }],
            filter_events: vec![ev(1.5e-6, FilterEventKind::Tune)],
            ..Trace::default()
        };
        assert!((measure_response_time(&tr, Edge::Rise).unwrap() - 5e-7).abs() < 1e-15);
        assert!(matches!(measure_response_time(&tr, Edge::Fall), Err(Error::TraceEvent(_))));
        let never = Trace { filter_events: vec![], ..tr };
        assert!(matches!(measure_response_time(&never, Edge::Rise), Err(Error::TraceEvent(_))));
    }

    fn with_toggles(times: &[f64]) -> Trace {
        use crate::controller::Mode;
        use crate::sim::trace::{StageRecord, TraceRecord};
        let kinds = [FilterEventKind::Tune, FilterEventKind::Release];
        Trace {
            records: vec![TraceRecord {
                t: 0.0,
                stages: vec![StageRecord {
                    input_dbm: vec![],
                    output_dbm: vec![],
                    engaged: false,
                    filter_active: false,
                    f_center_hz: 0.0,
                    mode: Mode::Idle,
                    att_db: 0.0,
                }],
            }],
            filter_events: times.iter().enumerate().map(|(i, &t)| ev(t, kinds[i % 2])).collect(),
            ..Trace::default()
        }
    }

    #[test]
    fn alternating_intervals_form_a_cycle() {
        let times: Vec<f64> = (0..10).map(|i| (i / 2) as f64 * 1e-6 + (i % 2) as f64 * 0.4e-6).collect();
        let (found, period) = detect_limit_cycle(&with_toggles(&times));
        assert!(found);
        assert!((period.unwrap() - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn too_few_or_irregular_toggles() {
        assert!(!detect_limit_cycle(&with_toggles(&[0.0, 1e-6, 2e-6])).0);
        assert!(!detect_limit_cycle(&with_toggles(&[0.0, 1e-6, 1.1e-6, 5e-6, 5.2e-6, 12e-6])).0);
    }
}
