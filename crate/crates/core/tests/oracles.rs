use facetrack_core::dcf::{psr, ResponseMap};
use facetrack_core::pipesim::{fit, Anchors, Calibration};
use facetrack_core::synth::{synth_scenario, ScenarioSpec};
use facetrack_core::{IouParams, IouTracker, MultiTracker, SortParams, SortTracker};

fn gaussian_map(n: usize, sigma: f64, peak: (usize, usize)) -> ResponseMap {
    let values = (0..n * n)
        .map(|k| {
            let (r, c) = ((k / n) as f64, (k % n) as f64);
            let d2 = (r - peak.0 as f64).powi(2) + (c - peak.1 as f64).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    ResponseMap::from_values(n, n, values)
}

// Sidelobe statistics gathered into a list first, then one pass for the
// mean and a second for the variance.
fn psr_two_pass(m: &ResponseMap) -> f64 {
    let (pr, pc) = m.peak;
    let mut side = Vec::new();
    for r in 0..m.height {
        for c in 0..m.width {
            if r.abs_diff(pr) > 5 || c.abs_diff(pc) > 5 {
                side.push(m.get(r, c));
            }
        }
    }
    let mean = side.iter().sum::<f64>() / side.len() as f64;
    let var = side.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / side.len() as f64;
    (m.peak_value() - mean) / var.sqrt()
}

#[test]
fn psr_matches_two_pass_oracle() {
    for peak in [(32, 32), (3, 60), (0, 0)] {
        let m = gaussian_map(64, 2.0, peak);
        assert_eq!(m.peak, peak);
        let (got, want) = (psr(&m), psr_two_pass(&m));
        assert!((got - want).abs() <= 1e-9 * want, "{peak:?}: {got} vs {want}");
        assert!(got > 50.0);
    }
}

#[test]
fn psr_sharper_peak_scores_higher() {
    let wide = psr(&gaussian_map(64, 4.0, (32, 32)));
    let narrow = psr(&gaussian_map(64, 1.0, (32, 32)));
    assert!(narrow > wide);
}

#[test]
fn committed_calibration_is_the_fit() {
    let text = include_str!("../data/reference.cal");
    let parsed = Calibration::parse(text).unwrap();
    let fitted = fit(&Anchors::default());
    assert_eq!(parsed, fitted);
    assert_eq!(Calibration::parse(&fitted.to_text()).unwrap(), fitted);
}

#[test]
fn sort_dropout_longer_than_max_misses_issues_new_ids() {
    let mut spec = ScenarioSpec::crossing();
    spec.dropout = Some((16, 18));
    let s = synth_scenario(&spec).unwrap();
    let mut sort = SortTracker::new(SortParams {
        max_misses: 1,
        min_hits: 1,
        ..Default::default()
    })
    .unwrap();
    let mut iou = IouTracker::new(IouParams::default()).unwrap();
    let (mut sort_new, mut iou_new) = (0, 0);
    for f in 1..=spec.frames {
        let d = s.frame_detections(f);
        let e = MultiTracker::step(&mut sort, f, &d, None).unwrap();
        if f > 18 {
            sort_new += e.new_ids.len();
        }
        let e = MultiTracker::step(&mut iou, f, &d, None).unwrap();
        if f > 18 {
            iou_new += e.new_ids.len();
        }
    }
    assert!(sort_new >= 1);
    assert!(iou_new >= 2);
}
