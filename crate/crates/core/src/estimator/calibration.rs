//! Two-dimensional calibration table: detector codes over a frequency ×
//! power grid, each cell recorded at the attenuation the AGC settles to.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{agc_policy, AgcWindow};
use crate::coupling::CouplingKind;
use crate::error::{invalid, Error, Result};
use crate::readout::{chain_readout, ChainConfig, TapCodes};
use crate::stub::standing_ratio_unchecked;
use crate::units::{Frequency, PowerLevel, SignalDescriptor, Tone};

use super::closed_form;

/// Calibration sweep definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub f_start_hz: f64,
    pub f_stop_hz: f64,
    pub f_step_hz: f64,
    pub p_start_dbm: f64,
    pub p_stop_dbm: f64,
    pub p_step_db: f64,
    /// Frequency below which `l2` is used; defaults to `l2`'s `f_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_freq_hz: Option<f64>,
    /// AGC window used while calibrating; defaults to the chain's window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agc: Option<AgcWindow>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            f_start_hz: 1e9,
            f_stop_hz: 16e9,
            f_step_hz: 0.25e9,
            p_start_dbm: -20.0,
            p_stop_dbm: 20.0,
            p_step_db: 2.0,
            switch_freq_hz: None,
            agc: None,
        }
    }
}

fn linspace_inclusive(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(invalid(format!("bad grid {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + step * i as f64).collect())
}

impl GridSpec {
    /// The default sweep, trimmed to the coupler band when the chain uses one.
    pub fn for_chain(chain: &ChainConfig) -> Self {
        let mut g = Self::default();
        if chain.coupling == CouplingKind::Coupler {
            g.f_start_hz = g.f_start_hz.max(chain.coupler.f_min.as_hz());
            g.f_stop_hz = g.f_stop_hz.min(chain.coupler.f_max.as_hz());
        }
        g
    }

    pub fn frequencies(&self) -> Result<Vec<Frequency>> {
        linspace_inclusive(self.f_start_hz, self.f_stop_hz, self.f_step_hz)?
            .into_iter()
            .map(Frequency::try_hz)
            .collect()
    }

    pub fn powers(&self) -> Result<Vec<PowerLevel>> {
        Ok(linspace_inclusive(self.p_start_dbm, self.p_stop_dbm, self.p_step_db)?
            .into_iter()
            .map(PowerLevel::dbm)
            .collect())
    }
}

/// Codes recorded at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalCell {
    pub att_db: f64,
    pub code_oc: u32,
    pub code_l1: u32,
    pub code_l2: u32,
}

/// Per-node detector constants, in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeConstants {
    pub oc: f64,
    pub l1: f64,
    pub l2: f64,
}

impl NodeConstants {
    pub fn tap(&self, index: usize) -> f64 {
        if index == 0 {
            self.l1
        } else {
            self.l2
        }
    }
}

/// JSON header persisted next to the CSV body.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    freq_grid_hz: Vec<f64>,
    power_grid_dbm: Vec<f64>,
    d_const: NodeConstants,
    switch_freq_hz: f64,
    config_hash: String,
    chain: ChainConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    freq_hz: f64,
    power_dbm: f64,
    att_db: f64,
    code_oc: u32,
    code_l1: u32,
    code_l2: u32,
}

/// Calibration lookup table, immutable after construction.
#[derive(Debug, Clone)]
pub struct CalibrationTable {
    pub freq_grid: Vec<Frequency>,
    pub power_grid: Vec<PowerLevel>,
    /// Row-major: frequency index outer, power index inner.
    pub cells: Vec<CalCell>,
    /// Detector output at each node extrapolated to unity standing-wave
    /// ratio at the reference (AGC-held) drive.
    pub d_const: NodeConstants,
    pub switch_freq: Frequency,
    pub chain: ChainConfig,
    pub config_hash: String,
    /// Per tap, per frequency: closed-form error averaged over power.
    corrections: [Vec<Option<f64>>; 2],
    exact: HashMap<(u32, u32, u32, u64), Option<usize>>,
}

pub fn config_hash(chain: &ChainConfig) -> String {
    let json = serde_json::to_string(chain).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Forward-simulates the chain over the grid, letting the AGC settle at each
/// point, and stores the settled codes.
pub fn build_calibration(cfg: &ChainConfig, grid: &GridSpec) -> Result<CalibrationTable> {
    cfg.validate()?;
    let freqs = grid.frequencies()?;
    let powers = grid.powers()?;
    let f_top = cfg.stub.taps[0].f_max;
    for &f in &freqs {
        if f > f_top {
            return Err(Error::CalibrationRange(format!(
                "{} GHz is beyond the l1 limit of {} GHz",
                f.as_ghz(),
                f_top.as_ghz()
            )));
        }
        if cfg.coupling == CouplingKind::Coupler && !cfg.coupler.in_band(f) {
            return Err(Error::CalibrationRange(format!("{} GHz is outside the coupler band", f.as_ghz())));
        }
    }
    let window = grid.agc.unwrap_or_else(|| AgcWindow::for_chain(cfg));
    let np = powers.len();
    let cells: Vec<CalCell> = (0..freqs.len() * np)
        .into_par_iter()
        .map(|idx| settle(cfg, &window, freqs[idx / np], powers[idx % np]))
        .collect();

    let floor = cfg.floor_code();
    let ceil = cfg.ceiling_code();
    for (idx, c) in cells.iter().enumerate() {
        let p = powers[idx % np].as_dbm();
        if c.code_oc <= floor {
            return Err(Error::CalibrationRange(format!("{p} dBm does not lift the open end off the detector floor")));
        }
        if c.code_oc >= ceil && c.att_db >= cfg.attenuator.max_db {
            return Err(Error::CalibrationRange(format!("{p} dBm saturates the detector at full attenuation")));
        }
    }

    let d_const = measure_constants(cfg, &freqs, np, &cells)?;
    let switch_freq = match grid.switch_freq_hz {
        Some(hz) => Frequency::try_hz(hz)?,
        None => cfg.switch_default(),
    };
    CalibrationTable::assemble(freqs, powers, cells, d_const, switch_freq, cfg.clone())
}

/// Reads a signal after letting the AGC settle from zero attenuation, with
/// no attenuation floor.
pub fn settled_readout(cfg: &ChainConfig, window: &AgcWindow, sig: &SignalDescriptor) -> TapCodes {
    let max_iter = (cfg.attenuator.max_db / cfg.attenuator.step_db).ceil() as usize + 2;
    let mut att = 0.0;
    let mut codes = chain_readout(sig, cfg, att);
    for _ in 0..max_iter {
        let next = agc_policy(codes.code_oc, att, window, &cfg.attenuator, 0.0).att_db;
        if next == att {
            break;
        }
        att = next;
        codes = chain_readout(sig, cfg, att);
    }
    codes
}

fn settle(cfg: &ChainConfig, window: &AgcWindow, f: Frequency, p: PowerLevel) -> CalCell {
    let codes = settled_readout(cfg, window, &SignalDescriptor::single(Tone::cw(f, p)));
    CalCell { att_db: codes.att_db, code_oc: codes.code_oc, code_l1: codes.code_l1, code_l2: codes.code_l2 }
}

/// Extracts each node's detector constant from the cells where the AGC is
/// holding the open end and the node is inside its detector range.
fn measure_constants(cfg: &ChainConfig, freqs: &[Frequency], np: usize, cells: &[CalCell]) -> Result<NodeConstants> {
    let lsb = cfg.lsb();
    let a = cfg.detector.slope_a;
    let floor = cfg.floor_code();
    let ceil = cfg.ceiling_code();
    let held: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].att_db > 0.0).collect();
    let pool: Vec<usize> = if held.is_empty() { (0..cells.len()).collect() } else { held };

    let oc: Vec<f64> = pool.iter().map(|&i| f64::from(cells[i].code_oc) * lsb).collect();
    let d_oc = oc.iter().sum::<f64>() / oc.len() as f64;

    let mut d_tap = [d_oc; 2];
    for (t, d) in d_tap.iter_mut().enumerate() {
        let f_max = cfg.stub.taps[t].f_max;
        let mut acc = 0.0;
        let mut n = 0usize;
        for &i in &pool {
            let f = freqs[i / np];
            let code = if t == 0 { cells[i].code_l1 } else { cells[i].code_l2 };
            if f >= f_max || code <= floor + 1 || code >= ceil {
                continue;
            }
            let ratio = standing_ratio_unchecked(f, f_max);
            // relative to this cell's own open-end reading, then re-referenced
            let offset = f64::from(code) * lsb - a * ratio.log10() - f64::from(cells[i].code_oc) * lsb;
            acc += offset;
            n += 1;
        }
        if n > 0 {
            *d = d_oc + acc / n as f64;
        }
    }
    Ok(NodeConstants { oc: d_oc, l1: d_tap[0], l2: d_tap[1] })
}

impl CalibrationTable {
    fn assemble(
        freq_grid: Vec<Frequency>,
        power_grid: Vec<PowerLevel>,
        cells: Vec<CalCell>,
        d_const: NodeConstants,
        switch_freq: Frequency,
        chain: ChainConfig,
    ) -> Result<Self> {
        if freq_grid.windows(2).any(|w| w[0] >= w[1]) || power_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("calibration grids must be strictly increasing"));
        }
        if cells.len() != freq_grid.len() * power_grid.len() || cells.is_empty() {
            return Err(invalid("calibration table is incomplete"));
        }
        let config_hash = config_hash(&chain);
        let mut table = Self {
            freq_grid,
            power_grid,
            cells,
            d_const,
            switch_freq,
            chain,
            config_hash,
            corrections: [Vec::new(), Vec::new()],
            exact: HashMap::new(),
        };
        table.corrections = [table.column_corrections(0), table.column_corrections(1)];
        for (i, c) in table.cells.iter().enumerate() {
            let key = (c.code_oc, c.code_l1, c.code_l2, c.att_db.to_bits());
            table.exact.entry(key).and_modify(|v| *v = None).or_insert(Some(i));
        }
        Ok(table)
    }

    pub fn n_freq(&self) -> usize {
        self.freq_grid.len()
    }

    pub fn n_power(&self) -> usize {
        self.power_grid.len()
    }

    pub fn cell(&self, fi: usize, pi: usize) -> &CalCell {
        &self.cells[fi * self.power_grid.len() + pi]
    }

    /// Grid point of the cell with exactly these codes, if unique.
    pub(crate) fn exact_hit(&self, codes: &TapCodes) -> Option<(Frequency, PowerLevel)> {
        let key = (codes.code_oc, codes.code_l1, codes.code_l2, codes.att_db.to_bits());
        let idx = (*self.exact.get(&key)?)?;
        let np = self.power_grid.len();
        Some((self.freq_grid[idx / np], self.power_grid[idx % np]))
    }

    /// Mean closed-form error per frequency column for one tap, over the
    /// cells where that tap reading is unclamped.
    fn column_corrections(&self, tap: usize) -> Vec<Option<f64>> {
        let floor = self.chain.floor_code();
        let ceil = self.chain.ceiling_code();
        let f_max = self.chain.stub.taps[tap].f_max;
        (0..self.n_freq())
            .map(|fi| {
                let f = self.freq_grid[fi];
                if f >= f_max {
                    return None;
                }
                let mut acc = 0.0;
                let mut n = 0usize;
                for pi in 0..self.n_power() {
                    let c = self.cell(fi, pi);
                    let code = if tap == 0 { c.code_l1 } else { c.code_l2 };
                    if code <= floor + 1 || code >= ceil || c.code_oc >= ceil {
                        continue;
                    }
                    let cf = closed_form(&self.chain, &self.d_const, tap, c.code_oc, code);
                    if cf.clamped {
                        continue;
                    }
                    acc += f.as_hz() - cf.hz;
                    n += 1;
                }
                (n > 0).then(|| acc / n as f64)
            })
            .collect()
    }

    /// Interpolated closed-form correction for `tap` at `hz`.
    pub(crate) fn correction(&self, tap: usize, hz: f64) -> f64 {
        let pts: Vec<(f64, f64)> =
            self.freq_grid.iter().zip(&self.corrections[tap]).filter_map(|(f, c)| c.map(|c| (f.as_hz(), c))).collect();
        match pts.len() {
            0 => 0.0,
            1 => pts[0].1,
            _ => {
                if hz <= pts[0].0 {
                    return pts[0].1;
                }
                let last = pts[pts.len() - 1];
                if hz >= last.0 {
                    return last.1;
                }
                let i = pts.partition_point(|p| p.0 <= hz);
                let (f0, c0) = pts[i - 1];
                let (f1, c1) = pts[i];
                c0 + (c1 - c0) * (hz - f0) / (f1 - f0)
            }
        }
    }

    /// Writes `freq_hz, power_dbm, att_db, code_oc, code_l1, code_l2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (fi, f) in self.freq_grid.iter().enumerate() {
            for (pi, p) in self.power_grid.iter().enumerate() {
                let c = self.cell(fi, pi);
                wtr.serialize(CsvRow {
                    freq_hz: f.as_hz(),
                    power_dbm: p.as_dbm(),
                    att_db: c.att_db,
                    code_oc: c.code_oc,
                    code_l1: c.code_l1,
                    code_l2: c.code_l2,
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_header<W: Write>(&self, w: W) -> Result<()> {
        let h = Header {
            freq_grid_hz: self.freq_grid.iter().map(|f| f.as_hz()).collect(),
            power_grid_dbm: self.power_grid.iter().map(|p| p.as_dbm()).collect(),
            d_const: self.d_const,
            switch_freq_hz: self.switch_freq.as_hz(),
            config_hash: self.config_hash.clone(),
            chain: self.chain.clone(),
        };
        serde_json::to_writer_pretty(w, &h)?;
        Ok(())
    }

    /// Saves `<stem>.csv` and `<stem>.json`; returns both paths.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let stem = stem.as_ref();
        let csv_path = stem.with_extension("csv");
        let json_path = stem.with_extension("json");
        self.write_csv(std::fs::File::create(&csv_path)?)?;
        self.write_header(std::fs::File::create(&json_path)?)?;
        Ok((csv_path, json_path))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        Self::read(std::fs::File::open(stem.with_extension("json"))?, std::fs::File::open(stem.with_extension("csv"))?)
    }

    pub fn read<H: Read, C: Read>(header: H, body: C) -> Result<Self> {
        let h: Header = serde_json::from_reader(header)?;
        h.chain.validate()?;
        if config_hash(&h.chain) != h.config_hash {
            return Err(invalid("calibration header hash does not match its chain configuration"));
        }
        let freq_grid: Vec<Frequency> = h.freq_grid_hz.iter().map(|&f| Frequency::try_hz(f)).collect::<Result<_>>()?;
        let power_grid: Vec<PowerLevel> = h.power_grid_dbm.iter().map(|&p| PowerLevel::dbm(p)).collect();
        let np = power_grid.len();
        let mut slots: Vec<Option<CalCell>> = vec![None; freq_grid.len() * np];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body);
        for row in rdr.deserialize::<CsvRow>() {
            let r = row?;
            let fi = freq_grid
                .iter()
                .position(|f| (f.as_hz() - r.freq_hz).abs() <= 1e-6 * r.freq_hz.abs())
                .ok_or_else(|| invalid(format!("row frequency {} not on the grid", r.freq_hz)))?;
            let pi = power_grid
                .iter()
                .position(|p| (p.as_dbm() - r.power_dbm).abs() < 1e-9)
                .ok_or_else(|| invalid(format!("row power {} not on the grid", r.power_dbm)))?;
            slots[fi * np + pi] =
                Some(CalCell { att_db: r.att_db, code_oc: r.code_oc, code_l1: r.code_l1, code_l2: r.code_l2 });
        }
        let cells =
            slots.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| invalid("calibration CSV is missing cells"))?;
        Self::assemble(freq_grid, power_grid, cells, h.d_const, Frequency::try_hz(h.switch_freq_hz)?, h.chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> GridSpec {
        GridSpec { f_start_hz: 4e9, f_stop_hz: 8e9, f_step_hz: 4e9, ..GridSpec::default() }
    }

    #[test]
    fn two_frequency_grid() {
        let cfg = ChainConfig::default();
        let t = build_calibration(&cfg, &small_grid()).unwrap();
        assert_eq!(t.n_freq(), 2);
        assert_eq!(t.n_power(), 21);
        assert_eq!(t.cells.len(), 2 * 21);
    }

    #[test]
    fn rows_monotone_in_power() {
        let cfg = ChainConfig::default();
        let t = build_calibration(&cfg, &GridSpec::default()).unwrap();
        let a = cfg.detector.slope_a;
        let lsb = cfg.lsb();
        for fi in 0..t.n_freq() {
            // attenuation-compensated open-end level must not decrease with power
            let levels: Vec<f64> = (0..t.n_power())
                .map(|pi| {
                    let c = t.cell(fi, pi);
                    f64::from(c.code_oc) * lsb + a * c.att_db / 20.0
                })
                .collect();
            assert!(levels.windows(2).all(|w| w[1] > w[0]), "row {fi}");
            let atts: Vec<f64> = (0..t.n_power()).map(|pi| t.cell(fi, pi).att_db).collect();
            assert!(atts.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn l1_null_row() {
        let cfg = ChainConfig::default();
        let t = build_calibration(&cfg, &GridSpec::default()).unwrap();
        let fi = t.n_freq() - 1;
        assert_eq!(t.freq_grid[fi], Frequency::ghz(16.0));
        for pi in 0..t.n_power() {
            assert_eq!(t.cell(fi, pi).code_l1, cfg.floor_code());
        }
    }

    #[test]
    fn constants_near_ideal() {
        let cfg = ChainConfig::default();
        let t = build_calibration(&cfg, &GridSpec::default()).unwrap();
        // identical detectors: the tap constants match the open-end constant
        // to within quantization
        assert!((t.d_const.l1 - t.d_const.oc).abs() < 2.0 * cfg.lsb());
        assert!((t.d_const.l2 - t.d_const.oc).abs() < 2.0 * cfg.lsb());
    }

    #[test]
    fn out_of_range_grids() {
        let cfg = ChainConfig::default();
        let too_high = GridSpec { f_stop_hz: 17e9, ..GridSpec::default() };
        assert!(matches!(build_calibration(&cfg, &too_high), Err(Error::CalibrationRange(_))));
        let too_weak = GridSpec { p_start_dbm: -60.0, ..small_grid() };
        assert!(matches!(build_calibration(&cfg, &too_weak), Err(Error::CalibrationRange(_))));
        let too_hot = GridSpec { p_stop_dbm: 40.0, ..small_grid() };
        assert!(matches!(build_calibration(&cfg, &too_hot), Err(Error::CalibrationRange(_))));
        let coupler = ChainConfig { coupling: CouplingKind::Coupler, ..ChainConfig::default() };
        assert!(matches!(build_calibration(&coupler, &GridSpec::default()), Err(Error::CalibrationRange(_))));
        assert!(build_calibration(&coupler, &GridSpec::for_chain(&coupler)).is_ok());
    }

    #[test]
    fn persistence_round_trip() {
        let cfg = ChainConfig::default();
        let t = build_calibration(&cfg, &small_grid()).unwrap();
        let mut csv = Vec::new();
        let mut json = Vec::new();
        t.write_csv(&mut csv).unwrap();
        t.write_header(&mut json).unwrap();
        let header = std::str::from_utf8(&csv).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "freq_hz,power_dbm,att_db,code_oc,code_l1,code_l2");
        let back = CalibrationTable::read(json.as_slice(), csv.as_slice()).unwrap();
        assert_eq!(back.cells, t.cells);
        assert_eq!(back.d_const, t.d_const);
        assert_eq!(back.config_hash, t.config_hash);

        let mut tampered: serde_json::Value = serde_json::from_slice(&json).unwrap();
        tampered["chain"]["tap"]["r_c"] = 100.0.into();
        let bad = serde_json::to_vec(&tampered).unwrap();
        assert!(CalibrationTable::read(bad.as_slice(), csv.as_slice()).is_err());
    }
}
