//! Envelope-domain simulation of cascaded detector/filter stages.
//!
//! Time runs on an integer picosecond clock. Events at the same instant are
//! handled in a fixed order: commands taking effect, then deliveries to the
//! controllers, then ADC samples, then trace records.

mod metrics;
mod scenario;
mod trace;

pub use metrics::{
    compute_metrics, detect_limit_cycle, measure_response_time, Metrics, LIMIT_CYCLE_MAX_CV, LIMIT_CYCLE_MIN_TOGGLES,
};
pub use scenario::{Scenario, StageSpec};
pub use trace::{
    trace_header, write_controller_csv, write_snapshots_csv, write_trace_csv, Edge, FilterEvent, FilterEventKind,
    Snapshot, SourceEdge, StageRecord, Trace, TraceRecord, CONTROLLER_CSV_HEADER, FLOOR_DBM,
};

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{on_sample, Action, ControllerState};
use crate::coupling::{sampled_forward_amplitude, CouplingKind, ReflectionEnvironment, Sampler};
use crate::error::Result;
use crate::estimator::{build_calibration, CalibrationTable};
use crate::filters::{notch_s21_db, release, stopband_gamma, tune, FilterState};
use crate::readout::{readout_components, ChainConfig, MonitorComponent, TapCodes};
use crate::units::{expand_modulated, watts_to_dbm, Frequency, PowerLevel};

const PS: f64 = 1e12;

fn to_ps(t: f64) -> i64 {
    (t * PS).round() as i64
}

fn to_s(ps: i64) -> f64 {
    ps as f64 / PS
}

/// A scenario with its calibration tables built.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    chains: Vec<ChainConfig>,
    cals: Vec<Arc<CalibrationTable>>,
}

/// Validates a scenario and builds one calibration table per distinct
/// stage configuration.
pub fn prepare(scenario: Scenario) -> Result<PreparedScenario> {
    scenario.validate()?;
    let mut scenario = scenario;
    for st in &mut scenario.stages {
        st.controller.filter_settle_time.get_or_insert(st.filter.tuning_time);
    }
    let mut cache: HashMap<String, Arc<CalibrationTable>> = HashMap::new();
    let mut chains = Vec::new();
    let mut cals = Vec::new();
    for st in &scenario.stages {
        let chain = st.effective_chain();
        let grid = st.grid();
        let key = format!("{}{}", crate::estimator::config_hash(&chain), serde_json::to_string(&grid)?);
        let cal = match cache.get(&key) {
            Some(c) => c.clone(),
            None => {
                let c = Arc::new(build_calibration(&chain, &grid)?);
                cache.insert(key, c.clone());
                c
            }
        };
        chains.push(chain);
        cals.push(cal);
    }
    Ok(PreparedScenario { scenario, chains, cals })
}

/// Output of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: Trace,
    pub metrics: Metrics,
}

pub fn run(scenario: &Scenario) -> Result<SimOutput> {
    prepare(scenario.clone())?.run()
}

#[derive(Debug, Clone, Copy)]
enum Effect {
    Attenuation(f64),
    Tune(Frequency),
    Release,
}

#[derive(Debug, Clone)]
enum Event {
    Effect { stage: usize, effect: Effect, sample_t: f64 },
    Delivery { stage: usize, codes: TapCodes },
    Sample { stage: usize },
    Snapshot,
    Record,
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::Effect { .. } => 0,
            Event::Delivery { .. } => 1,
            Event::Sample { .. } => 2,
            Event::Snapshot => 3,
            Event::Record => 4,
        }
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<(i64, u8, u64)>>,
    events: HashMap<u64, Event>,
    seq: u64,
}

impl Queue {
    fn new() -> Self {
        Self { heap: BinaryHeap::new(), events: HashMap::new(), seq: 0 }
    }

    fn push(&mut self, t: i64, ev: Event) {
        self.seq += 1;
        self.heap.push(Reverse((t, ev.class(), self.seq)));
        self.events.insert(self.seq, ev);
    }

    fn pop(&mut self) -> Option<(i64, Event)> {
        let Reverse((t, _, seq)) = self.heap.pop()?;
        Some((t, self.events.remove(&seq).expect("queued")))
    }
}

/// A spectral line in flight: which source it belongs to, where it is and
/// how strong it is.
#[derive(Debug, Clone, Copy)]
struct Line {
    tone: usize,
    freq: Frequency,
    watts: f64,
}

struct StageView {
    input: Vec<Line>,
    output: Vec<Line>,
    monitor: Vec<MonitorComponent>,
}

fn per_tone_dbm(lines: &[Line], n_tones: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_tones];
    for l in lines {
        w[l.tone] += l.watts;
    }
    w.into_iter().map(|x| if x > 0.0 { watts_to_dbm(x).max(FLOOR_DBM) } else { FLOOR_DBM }).collect()
}

impl PreparedScenario {
    pub fn calibration(&self, stage: usize) -> &CalibrationTable {
        &self.cals[stage]
    }

    pub fn run(&self) -> Result<SimOutput> {
        self.run_with_seed(self.scenario.seed)
    }

    /// Propagates the active tones through every stage at time `t`.
    fn propagate(&self, t: f64, filters: &[FilterState]) -> Vec<StageView> {
        let sc = &self.scenario;
        let n_tones = sc.sources.len();
        let mut lines: Vec<Line> = sc
            .sources
            .iter()
            .enumerate()
            .filter(|(_, tone)| tone.is_active(t))
            .flat_map(|(i, tone)| {
                expand_modulated(tone).into_iter().map(move |(freq, watts)| Line { tone: i, freq, watts })
            })
            .filter(|l| l.watts > 0.0)
            .collect();
        let mut views = Vec::with_capacity(sc.stages.len());
        for (s, spec) in sc.stages.iter().enumerate() {
            let chain = &self.chains[s];
            let model = &spec.filter;
            let fs = &filters[s];
            let tone_dbm = per_tone_dbm(&lines, n_tones);
            let sampler = match chain.coupling {
                CouplingKind::Tap => Sampler::Tap,
                CouplingKind::Coupler => Sampler::Coupler(&chain.coupler),
            };
            let mut output = Vec::with_capacity(lines.len());
            let mut monitor = Vec::with_capacity(lines.len());
            for l in &lines {
                let p_in = PowerLevel::dbm(tone_dbm[l.tone]);
                let s21 = notch_s21_db(model, fs, l.freq, p_in, t);
                let gamma = stopband_gamma(model, fs, l.freq, p_in, t);
                let env = ReflectionEnvironment::constant(Complex64::new(gamma, 0.0), spec.electrical_delay_s);
                let amplitude = sampled_forward_amplitude(sampler, &env, l.freq).unwrap_or(1.0);
                monitor.push(MonitorComponent { freq: l.freq, watts: l.watts, amplitude });
                let through = chain.through_gain(l.freq) * 10f64.powf(s21 / 10.0);
                output.push(Line { watts: l.watts * through, ..*l });
            }
            views.push(StageView { input: lines, output: output.clone(), monitor });
            lines = output;
        }
        views
    }

    /// Runs the scenario with the ADC sample phases drawn from `seed`.
    pub fn run_with_seed(&self, seed: u64) -> Result<SimOutput> {
        let sc = &self.scenario;
        let n_stages = sc.stages.len();
        let n_tones = sc.sources.len();
        let end = to_ps(sc.duration_s);
        let dt = to_ps(sc.dt_s);
        let n_records = (sc.duration_s / sc.dt_s).round() as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut q = Queue::new();
        let mut periods = Vec::with_capacity(n_stages);
        for s in 0..n_stages {
            let ts = to_ps(self.chains[s].adc.sample_period());
            periods.push(ts);
            let phase = rng.gen_range(0..ts);
            q.push(phase, Event::Sample { stage: s });
        }
        for k in 0..n_records {
            q.push(k * dt, Event::Record);
        }
        for &t in &sc.snapshots_s {
            q.push(to_ps(t), Event::Snapshot);
        }

        let mut trace = Trace { samples: vec![Vec::new(); n_stages], ..Trace::default() };
        for (i, tone) in sc.sources.iter().enumerate() {
            if tone.t_on > 0.0 && tone.t_on < sc.duration_s {
                trace.edges.push(SourceEdge { t: tone.t_on, tone: i, edge: Edge::Rise });
            }
            if tone.t_off < sc.duration_s {
                trace.edges.push(SourceEdge { t: tone.t_off, tone: i, edge: Edge::Fall });
            }
        }
        trace.edges.sort_by(|a, b| a.t.total_cmp(&b.t));

        let mut controllers: Vec<ControllerState> = sc
            .stages
            .iter()
            .zip(&self.chains)
            .map(|(st, chain)| ControllerState::initial(&st.controller, chain))
            .collect();
        let mut atts: Vec<f64> = controllers.iter().map(|c| c.att_db).collect();
        let mut filters = vec![FilterState::default(); n_stages];
        for (s, st) in sc.stages.iter().enumerate() {
            if st.controller.threshold_out_of_range() {
                trace.diagnostics.push(format!(
                    "stage {}: threshold {} dBm is outside the programmable -20..20 dBm range",
                    s + 1,
                    st.controller.threshold.as_dbm()
                ));
            }
        }

        while let Some((tp, ev)) = q.pop() {
            if tp >= end {
                continue;
            }
            let t = to_s(tp);
            match ev {
                Event::Effect { stage, effect, sample_t } => {
                    debug_assert!(t > sample_t);
                    match effect {
                        Effect::Attenuation(a) => atts[stage] = a,
                        Effect::Tune(f) => {
                            let model = &sc.stages[stage].filter;
                            let was = filters[stage].engaged;
                            match tune(model, &filters[stage], f, t) {
                                Ok(next) => {
                                    filters[stage] = next;
                                    trace.filter_events.push(FilterEvent {
                                        t,
                                        sample_t,
                                        stage,
                                        kind: FilterEventKind::Tune,
                                        freq_hz: Some(f.as_hz()),
                                        toggle: !was,
                                    });
                                }
                                Err(e) => trace.diagnostics.push(format!("{t:e} s, stage {}: {e}", stage + 1)),
                            }
                        }
                        Effect::Release => {
                            let was = filters[stage].engaged;
                            filters[stage] = release(&filters[stage], t);
                            trace.filter_events.push(FilterEvent {
                                t,
                                sample_t,
                                stage,
                                kind: FilterEventKind::Release,
                                freq_hz: None,
                                toggle: was,
                            });
                        }
                    }
                }
                Event::Delivery { stage, codes } => {
                    let spec = &sc.stages[stage];
                    let out = on_sample(&codes, &controllers[stage], &spec.controller, &self.cals[stage], t);
                    if let Some(d) = out.diagnostic {
                        if trace.diagnostics.len() < 1000 {
                            trace.diagnostics.push(format!("{t:e} s, stage {}: {d}", stage + 1));
                        }
                    }
                    for a in &out.actions {
                        let effect = match *a {
                            Action::SetAttenuation { att_db, .. } => Effect::Attenuation(att_db),
                            Action::TuneFilter { freq, .. } => Effect::Tune(freq),
                            Action::ReleaseFilter { .. } => Effect::Release,
                            Action::Flag { .. } => continue,
                        };
                        q.push(to_ps(a.effective_at()), Event::Effect { stage, effect, sample_t: codes.t });
                    }
                    controllers[stage] = out.state;
                    trace.samples[stage].push(out.log);
                }
                Event::Sample { stage } => {
                    let views = self.propagate(t, &filters);
                    let chain = &self.chains[stage];
                    let codes = readout_components(&views[stage].monitor, chain, atts[stage], t);
                    q.push(tp + periods[stage], Event::Delivery { stage, codes });
                    q.push(tp + periods[stage], Event::Sample { stage });
                }
                Event::Snapshot => {
                    let views = self.propagate(t, &filters);
                    trace.snapshots.push(Snapshot {
                        t,
                        stage_output_dbm: views.iter().map(|v| per_tone_dbm(&v.output, n_tones)).collect(),
                    });
                }
                Event::Record => {
                    let views = self.propagate(t, &filters);
                    let stages = views
                        .iter()
                        .enumerate()
                        .map(|(s, v)| StageRecord {
                            input_dbm: per_tone_dbm(&v.input, n_tones),
                            output_dbm: per_tone_dbm(&v.output, n_tones),
                            engaged: filters[s].engaged,
                            filter_active: filters[s].active(t),
                            f_center_hz: filters[s].f_center.as_hz(),
                            mode: controllers[s].mode,
                            att_db: atts[s],
                        })
                        .collect();
                    trace.records.push(TraceRecord { t, stages });
                }
            }
        }
        let metrics = compute_metrics(&trace, sc.stages[0].filter.tuning_time);
        Ok(SimOutput { trace, metrics })
    }
}
