use cardiax_core::pipeline::{
    chunks_from_items, items_from_chunks, run_stream, EventBody, RunnerConfig, Schedule, StreamItem, SyntheticSource,
};
use cardiax_core::quant::calibrate;
use cardiax_core::siggen::{Keyframe, Trajectory};
use cardiax_core::tcn::{threshold_demo, VitalSeries, INPUT_LEN};

const HOUR: f64 = 3600.0;

fn nominal(t: f64) -> Keyframe {
    Keyframe { t_s: t, hr_bpm: 75.0, rr_brpm: 15.0, ptt_ms: 40.0, temp_c: 37.0 }
}

fn septic(t: f64) -> Keyframe {
    Keyframe { t_s: t, hr_bpm: 120.0, rr_brpm: 25.0, ptt_ms: 70.0, temp_c: 39.0 }
}

fn drift() -> Trajectory {
    Trajectory::new(vec![nominal(0.0), nominal(4.5 * HOUR), septic(4.5 * HOUR + 600.0)]).unwrap()
}

fn cfg(stride_min: f64, k: u32) -> RunnerConfig {
    RunnerConfig { schedule: Schedule::with_stride_min(stride_min).unwrap(), k, ..RunnerConfig::default() }
}

#[test]
fn control_stream_never_alarms() {
    let model = threshold_demo(INPUT_LEN).unwrap();
    let src = SyntheticSource::new(Trajectory::constant(nominal(0.0)), 120.0, 20.0, 11, 6.0 * HOUR).unwrap();
    let log = run_stream(cfg(30.0, 8), &model, src).unwrap();
    let preds = log.predictions();
    assert_eq!(preds.len(), 5);
    assert!(preds.iter().all(|p| p.1 < 0.2), "{preds:?}");
    assert_eq!(log.alarms().count(), 0);
    let reports = log.reports();
    assert_eq!(reports.len(), 720);
    let tail = &reports[10..];
    let mean = |c: usize| tail.iter().map(|r| r.1[c]).sum::<f64>() / tail.len() as f64;
    assert!((mean(0) - 75.0).abs() < 1.0, "hr {}", mean(0));
    assert!((mean(1) - 120.0).abs() < 2.0, "sbp {}", mean(1));
    assert!((mean(2) - 15.0).abs() < 0.5, "rr {}", mean(2));
    assert!((mean(3) - 37.0).abs() < 1e-6);
}

#[test]
fn drift_alarms_k_minus_one_strides_after_first_positive() {
    let model = threshold_demo(INPUT_LEN).unwrap();
    let (stride, k) = (10.0, 3);
    let src = SyntheticSource::new(drift(), 120.0, 20.0, 12, 6.0 * HOUR).unwrap();
    let log = run_stream(cfg(stride, k), &model, src).unwrap();
    let preds = log.predictions();
    assert_eq!(preds.len(), 13);
    let first = preds.iter().position(|p| p.2).expect("a positive window");
    assert!(preds[first..].iter().all(|p| p.2), "{preds:?}");
    let t_alarm = log.alarm_time().expect("alarm");
    assert_eq!(t_alarm, preds[first].0 + (k - 1) as f64 * stride * 60.0);
    assert!(preds[first].0 > 4.5 * HOUR);
    assert_eq!(log.alarms().count(), 1);
}

#[test]
fn quantized_model_agrees_on_the_drift_stream() {
    let model = threshold_demo(INPUT_LEN).unwrap();
    let mut calib = Vec::new();
    for (i, hr) in [60.0, 75.0, 90.0, 130.0].into_iter().enumerate() {
        let mut s = VitalSeries::standard();
        for j in 0..INPUT_LEN {
            let u = j as f64 / INPUT_LEN as f64;
            s.push(&[hr, 120.0 - 30.0 * u * i as f64 / 3.0, 15.0 + 10.0 * u, 37.0 + 2.0 * u]).unwrap();
        }
        calib.push(s);
    }
    let q = calibrate(&model, &calib).unwrap();
    let items: Vec<StreamItem> = SyntheticSource::new(drift(), 120.0, 20.0, 12, 6.0 * HOUR).unwrap().collect();
    let f = run_stream(cfg(10.0, 3), &model, items.clone()).unwrap();
    let g = run_stream(cfg(10.0, 3), &q, items).unwrap();
    let (pf, pg) = (f.predictions(), g.predictions());
    assert_eq!(pf.len(), pg.len());
    let flips = pf.iter().zip(&pg).filter(|(a, b)| a.2 != b.2).count();
    assert!(flips <= 1, "{pf:?} {pg:?}");
    for (a, b) in pf.iter().zip(&pg) {
        assert!((a.1 - b.1).abs() < 0.1);
    }
}

#[test]
fn gaps_are_logged_and_held() {
    let model = threshold_demo(48).unwrap();
    let src = SyntheticSource::new(Trajectory::constant(nominal(0.0)), 120.0, 20.0, 5, 1800.0)
        .unwrap()
        .with_gap(600.0, 700.0);
    let log = run_stream(cfg(10.0, 2), &model, src).unwrap();
    let gaps: Vec<_> = log.events.iter().filter(|e| matches!(e.body, EventBody::Gap { .. })).collect();
    assert_eq!(gaps.len(), 1);
    assert_eq!(gaps[0].body, EventBody::Gap { expected: 72_000, got: 84_000 });
    let held: Vec<f64> = log
        .events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::Report { held, .. } if held.iter().any(|h| h == "hr") => Some(e.t),
            _ => None,
        })
        .collect();
    // reports ending at 660 and 690 s saw no frames; 630 and 720 s saw some
    assert!(held.contains(&660.0) && held.contains(&690.0), "{held:?}");
    assert_eq!(log.reports().len(), 60);
    assert_eq!(log.predictions().len(), cfg(10.0, 2).schedule.expected_inferences(1800.0, 48));
    assert_eq!(log.predictions().len(), 1);
}

#[test]
fn chunk_input_reproduces_the_run() {
    let model = threshold_demo(48).unwrap();
    let items: Vec<StreamItem> =
        SyntheticSource::new(drift(), 120.0, 15.0, 9, 1500.0).unwrap().with_gap(100.0, 101.0).collect();
    let direct = run_stream(cfg(10.0, 2), &model, items.clone()).unwrap();
    let chunks = chunks_from_items(&items, 120.0, 120).unwrap();
    let (_, back) = items_from_chunks(&chunks).unwrap();
    let via = run_stream(cfg(10.0, 2), &model, back).unwrap();
    assert_eq!(direct.to_jsonl(), via.to_jsonl());
    let again = run_stream(cfg(10.0, 2), &model, items).unwrap();
    assert_eq!(direct.to_jsonl(), again.to_jsonl());
}
