use drfb_core::battery::{invert_output, BatteryParams, StateVector};
use drfb_core::telemetry::*;
use proptest::prelude::*;

fn sample(t: f64, v: f64, flow: f64) -> TelemetrySample<f64> {
    TelemetrySample { t, voltage: v, current: 0.0, flow }
}

#[test]
fn csv_round_trip_keeps_twelve_digits() {
    let trace = TelemetryTrace::new(
        vec![sample(0.0, 2.304138190392406, 1.5e-4), sample(60.0, 2.2598420358054375, 1.4999e-4), sample(120.5, 2.123456789012345, 1.51e-4)],
        TraceSource::File("x.csv".into()),
    );
    let mut buf = Vec::new();
    write_csv(&mut buf, &trace).unwrap();
    let back: TelemetryTrace<f64> = read_csv(buf.as_slice(), TraceSource::File("x.csv".into())).unwrap();
    for (a, b) in trace.samples.iter().zip(&back.samples) {
        for (x, y) in [(a.t, b.t), (a.voltage, b.voltage), (a.flow, b.flow)] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }
}

#[test]
fn comment_lines_skipped() {
    let text = "# bench run\nt_s,voltage_V,current_A,flow_mL_min\n0,2.2,0,9\n# pause\n60,2.19,0,9\n";
    let t: TelemetryTrace<f64> = read_csv(text.as_bytes(), TraceSource::File("c.csv".into())).unwrap();
    assert_eq!(t.len(), 2);
}

#[test]
fn save_and_load_file() {
    let dir = tempfile_dir();
    let path = dir.join("trace.csv");
    let trace = TelemetryTrace::new(vec![sample(0.0, 2.2, 1.5e-4), sample(1.0, 2.21, 1.5e-4)], TraceSource::Synthetic { seed: 1 });
    save_csv(&path, &trace).unwrap();
    let back: TelemetryTrace<f64> = load_csv(&path).unwrap();
    assert_eq!(back.len(), 2);
    std::fs::remove_dir_all(dir).ok();
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("drfb-telemetry-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn noise_free_twin_inverts_to_truth() {
    let p = BatteryParams::<f64>::reference_cell();
    let twin = synthesize_trace(&p, &TwinSettings::experiment(60.0, 86_400.0)).unwrap();
    for (s, pt) in twin.trace.samples.iter().zip(&twin.truth) {
        let back = invert_output(&p, s.voltage, 0.0).unwrap().soc_cell;
        assert!((back - pt.state.soc_cell).abs() <= 1e-9);
    }
    assert!(twin.trace.samples.windows(2).all(|w| w[1].voltage < w[0].voltage));
}

#[test]
fn half_charge_starts_at_equilibrium_potential() {
    let p = BatteryParams::<f64>::reference_cell();
    let mut tw = TwinSettings::experiment(0.5, 1.0);
    tw.x0 = StateVector::new(0.5, 0.5);
    let twin = synthesize_trace(&p, &tw).unwrap();
    assert_eq!(twin.trace.samples[0].voltage, 2.2);
}

#[test]
fn seeded_noise_is_reproducible_and_bounded() {
    let p = BatteryParams::<f64>::reference_cell();
    let mut tw = TwinSettings::experiment(60.0, 3_600.0);
    tw.noise_w = 1e-3;
    tw.seed = 42;
    let a = synthesize_trace(&p, &tw).unwrap();
    let b = synthesize_trace(&p, &tw).unwrap();
    assert_eq!(a.trace, b.trace);
    tw.noise_w = 0.0;
    let clean = synthesize_trace(&p, &tw).unwrap();
    for (x, y) in a.trace.samples.iter().zip(&clean.trace.samples) {
        assert!((x.voltage - y.voltage).abs() <= 3e-3 + 1e-15);
    }
}

proptest! {
    #[test]
    fn resampling_is_idempotent(n in 2usize..30, dt in 0.5f64..5.0, seed in 0u64..1000) {
        let samples: Vec<_> = (0..n).map(|i| sample(i as f64 * 3.0, 2.2 + ((i as u64 * 7 + seed) % 13) as f64 * 1e-3, 1.5e-4)).collect();
        let trace = TelemetryTrace::new(samples, TraceSource::File("p.csv".into()));
        let once = resample(&trace, dt).unwrap();
        let twice = resample(&once, dt).unwrap();
        prop_assert_eq!(once.samples.len(), twice.samples.len());
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            prop_assert!((a.voltage - b.voltage).abs() <= 1e-12);
            prop_assert_eq!(a.t, b.t);
        }
    }
}
