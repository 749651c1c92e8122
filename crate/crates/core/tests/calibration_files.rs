use std::fs;

use swsense::controller::AgcWindow;
use swsense::estimator::{build_calibration, estimate, settled_readout, CalibrationTable, GridSpec};
use swsense::{ChainConfig, Frequency, PowerLevel, SignalDescriptor, Tone};

fn grid() -> GridSpec {
    GridSpec { f_start_hz: 2e9, f_stop_hz: 14e9, f_step_hz: 1e9, ..GridSpec::default() }
}

#[test]
fn saved_table_estimates_like_the_original() {
    let dir = tempfile::tempdir().unwrap();
    let chain = ChainConfig::default();
    let cal = build_calibration(&chain, &grid()).unwrap();
    let (csv_path, json_path) = cal.save(dir.path().join("cal")).unwrap();
    assert!(csv_path.exists() && json_path.exists());
    let back = CalibrationTable::load(dir.path().join("cal")).unwrap();
    assert_eq!(back.cells, cal.cells);
    assert_eq!(back.config_hash, cal.config_hash);

    let window = AgcWindow::for_chain(&chain);
    for (ghz, dbm) in [(2.7, -11.0), (6.3, 4.0), (13.1, 15.0)] {
        let sig = SignalDescriptor::single(Tone::cw(Frequency::ghz(ghz), PowerLevel::dbm(dbm)));
        let codes = settled_readout(&chain, &window, &sig);
        assert_eq!(estimate(&codes, &back).unwrap(), estimate(&codes, &cal).unwrap());
    }
}

#[test]
fn edited_header_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cal = build_calibration(&ChainConfig::default(), &grid()).unwrap();
    let (_, json_path) = cal.save(dir.path().join("cal")).unwrap();
    let text = fs::read_to_string(&json_path).unwrap();
    fs::write(&json_path, text.replacen("\"bits\": 12", "\"bits\": 10", 1)).unwrap();
    assert!(CalibrationTable::load(dir.path().join("cal")).is_err());
}

#[test]
fn truncated_body_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cal = build_calibration(&ChainConfig::default(), &grid()).unwrap();
    let (csv_path, _) = cal.save(dir.path().join("cal")).unwrap();
    let text = fs::read_to_string(&csv_path).unwrap();
    let kept: Vec<&str> = text.lines().take(10).collect();
    fs::write(&csv_path, kept.join("\n")).unwrap();
    assert!(CalibrationTable::load(dir.path().join("cal")).is_err());
    assert!(CalibrationTable::load(dir.path().join("missing")).is_err());
}
