use std::fs;

use proptest::prelude::*;
use vapormem::atoms::{BufferGas, BufferKind, GroundPopulations, LineLabel, LineShape};
use vapormem::diffusion::{synthesize_hole_series, HoleProfile, ImageGrid};
use vapormem::io::*;
use vapormem::memory::SweepRow;
use vapormem::pumping::{polarization_curve, CurveOptions, PumpConfig};
use vapormem::spectrofit::{scan_grid, spectroscopy_cell, synthesize_scan, ScanParams};
use vapormem::Error;

fn small_trace(seed: u64) -> vapormem::spectrofit::SpectrumTrace {
    let cell = spectroscopy_cell(
        LineLabel::D2,
        BufferGas::new(BufferKind::N2, 10.0).unwrap(),
        3.0,
        340.0,
    )
    .unwrap();
    let grid = scan_grid(-9.0, 10.0, 128).unwrap();
    synthesize_scan(
        &cell,
        &GroundPopulations::new(0.9).unwrap(),
        0.001,
        0.98,
        0.01,
        seed,
        &grid,
    )
    .unwrap()
}

#[test]
fn table_text_layout() {
    let mut t = Table::new(&["a", "b"]);
    t.meta("seed", 7).meta("note", "x y");
    t.rows = vec![vec![1.0, 0.1], vec![-2.5e-300, 3.0]];
    let s = t.to_csv_string().unwrap();
    assert_eq!(s, "# seed: 7\n# note: x y\na,b\n1,0.1\n-2.5e-300,3\n");
}

#[test]
fn table_rejects_ragged_rows_and_bad_metadata() {
    let mut t = Table::new(&["a", "b"]);
    t.rows = vec![vec![1.0]];
    assert!(matches!(t.to_csv_string(), Err(Error::Argument(_))));
    let mut t = Table::new(&["a"]);
    t.meta("bad:key", 1);
    assert!(t.to_csv_string().is_err());
}

#[test]
fn empty_and_malformed_files_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert!(matches!(Table::read(&empty), Err(Error::Parse(_))));
    assert!(matches!(read_trace(&empty), Err(Error::Parse(_))));
    let only_meta = dir.path().join("meta.csv");
    fs::write(&only_meta, "# line: D2\n").unwrap();
    assert!(matches!(read_trace(&only_meta), Err(Error::Parse(_))));
    let text = dir.path().join("text.csv");
    fs::write(&text, "frequency_GHz,transmission\n1,abc\n").unwrap();
    assert!(matches!(read_trace(&text), Err(Error::Parse(_))));
    let missing = dir.path().join("nope.csv");
    assert!(matches!(read_trace(&missing), Err(Error::Io(_))));
}

#[test]
fn trace_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let trace = small_trace(11);
    let truth = ScanParams {
        d: 3.0,
        polarization: 0.9,
        temperature_k: 340.0,
        baseline_slope: 0.001,
        baseline_offset: 0.98,
    };
    write_trace(&path, &trace, Some(&truth)).unwrap();
    let back = read_trace(&path).unwrap();
    assert_eq!(back.trace, trace);
    assert_eq!(back.truth, Some(truth));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# line: D2\n# buffer: N2\n"));
    assert!(text.contains("\nfrequency_GHz,transmission\n"));

    write_trace(&path, &trace, None).unwrap();
    assert_eq!(read_trace(&path).unwrap().truth, None);
}

#[test]
fn trace_metadata_is_required_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut table = trace_table(&small_trace(1), None);
    table.metadata.retain(|(k, _)| k != "pressure_torr");
    table.write(&path).unwrap();
    let err = read_trace(&path).unwrap_err().to_string();
    assert!(err.contains("pressure_torr"), "{err}");

    let mut table = trace_table(&small_trace(1), None);
    for (k, v) in table.metadata.iter_mut() {
        if k == "line_shape" {
            *v = "wiggly".into();
        }
    }
    table.write(&path).unwrap();
    assert!(read_trace(&path)
        .unwrap_err()
        .to_string()
        .contains("line_shape"));

    let mut trace = small_trace(1);
    trace.line_shape = LineShape::Resolved;
    trace.seed = None;
    write_trace(&path, &trace, None).unwrap();
    assert_eq!(read_trace(&path).unwrap().trace, trace);
}

#[test]
fn pumping_table_columns() {
    let curve = polarization_curve(
        &[320.0, 340.0, 360.0],
        &BufferGas::new(BufferKind::Ne, 20.0).unwrap(),
        LineLabel::D1,
        &PumpConfig::calibrated(LineLabel::D1),
        &CurveOptions::default(),
    )
    .unwrap();
    let t = pumping_table(&curve);
    assert_eq!(t.columns, PUMPING_COLUMNS);
    assert_eq!(t.get_meta("buffer"), Some("Ne"));
    assert_eq!(t.column("P").unwrap(), curve.polarization);
    assert_eq!(t.column("M").unwrap(), curve.multiplicity);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    t.write(&path).unwrap();
    assert_eq!(Table::read(&path).unwrap(), t);
}

#[test]
fn sweep_table_flags_and_companion() {
    let row = |om: f64, conv: bool| SweepRow {
        omega_ghz: om,
        delta_ghz: 15.2,
        temperature_k: 343.15,
        d: 5e4,
        eta: 0.3,
        eta_readin: 0.5,
        anti_stokes_energy: 0.01,
        converged: conv,
    };
    let rows = [row(1.0, true), row(2.0, false)];
    let t = sweep_table(&rows, None).unwrap();
    assert_eq!(t.columns, SWEEP_COLUMNS);
    assert_eq!(t.column("converged_flag").unwrap(), vec![1.0, 0.0]);
    let t = sweep_table(&rows, Some(&[0.2, 0.25])).unwrap();
    assert_eq!(t.columns.last().unwrap(), NO_FWM_COLUMN);
    assert_eq!(t.column(NO_FWM_COLUMN).unwrap(), vec![0.2, 0.25]);
    assert!(sweep_table(&rows, Some(&[0.2])).is_err());
}

#[test]
fn image_series_round_trip_is_exact() {
    let grid = ImageGrid {
        nx: 24,
        ny: 16,
        pixel_pitch_mm: 0.1,
    };
    let hole = HoleProfile::centered_gaussian(&grid, 1.0, 0.5);
    let ts: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
    let series = synthesize_hole_series(15.0, 0.1, &hole, &grid, &ts, 0.01, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let truth = serde_json::json!({"diffusion_cm2_per_s": 15.0});
    write_image_series(dir.path(), &series, Some(truth.clone())).unwrap();
    let (back, manifest) = read_image_series(dir.path()).unwrap();
    assert_eq!(back, series);
    assert_eq!(manifest.truth, Some(truth));
    assert_eq!(manifest.frames.len(), 6);
    let first = fs::read_to_string(dir.path().join(&manifest.frames[0])).unwrap();
    assert_eq!(first.lines().count(), 16);
    assert_eq!(first.lines().next().unwrap().split(',').count(), 24);
}

#[test]
fn image_series_rejects_bad_directories() {
    let grid = ImageGrid {
        nx: 8,
        ny: 8,
        pixel_pitch_mm: 0.1,
    };
    let hole = HoleProfile::centered_gaussian(&grid, 1.0, 0.5);
    let series =
        synthesize_hole_series(15.0, 0.1, &hole, &grid, &[0.0, 1.0, 2.0, 3.0], 0.0, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_image_series(dir.path()), Err(Error::Io(_))));
    write_image_series(dir.path(), &series, None).unwrap();

    let mpath = dir.path().join(IMAGE_MANIFEST_FILE);
    let original = fs::read_to_string(&mpath).unwrap();
    fs::write(
        &mpath,
        original.replace("\"format_version\": 1", "\"format_version\": 9"),
    )
    .unwrap();
    assert!(read_image_series(dir.path())
        .unwrap_err()
        .to_string()
        .contains("format_version"));
    fs::write(
        &mpath,
        original.replace("\"nx\": 8", "\"nx\": 8, \"colour\": 1"),
    )
    .unwrap();
    assert!(read_image_series(dir.path())
        .unwrap_err()
        .to_string()
        .contains("colour"));
    fs::write(&mpath, &original).unwrap();

    fs::write(dir.path().join("frame_0002.csv"), "1,2\n").unwrap();
    assert!(matches!(
        read_image_series(dir.path()),
        Err(Error::Parse(_))
    ));
    fs::write(dir.path().join("frame_0002.csv"), "").unwrap();
    assert!(matches!(
        read_image_series(dir.path()),
        Err(Error::Parse(_))
    ));
}

#[test]
fn json_helpers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    let p = ScanParams {
        d: 1.5,
        polarization: 0.1 + 0.2,
        temperature_k: 300.0,
        baseline_slope: -1e-7,
        baseline_offset: 1.0,
    };
    write_json(&path, &p).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.ends_with("}\n"));
    assert_eq!(read_json::<ScanParams>(&path).unwrap(), p);
    fs::write(&path, "  \n").unwrap();
    assert!(matches!(
        read_json::<ScanParams>(&path),
        Err(Error::Parse(_))
    ));
}

proptest! {
    #[test]
    fn tables_round_trip_bitwise(
        rows in prop::collection::vec(prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 3), 1..20),
        seed in any::<u64>(),
    ) {
        let mut t = Table::new(&["x", "y", "z"]);
        t.meta("seed", seed);
        t.rows = rows;
        let s = t.to_csv_string().unwrap();
        let back = Table::parse(&s, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.rows.len(), t.rows.len());
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(back.get_meta("seed").unwrap().parse::<u64>().unwrap(), seed);
        prop_assert_eq!(back.to_csv_string().unwrap(), s);
    }
}
