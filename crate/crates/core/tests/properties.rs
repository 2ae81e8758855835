use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;

use facetrack_core::association::{greedy_min_cost, hungarian_min_cost};
use facetrack_core::dcf::{preprocess, respond, train_filter, GaussianLabel, Patch};
use facetrack_core::gate::{Embedding, Gallery, GateParams, RecognitionGate, EMBEDDING_DIM};
use facetrack_core::io::{format_detections, parse_detections_str, DetectionRow};
use facetrack_core::kalman::{constant_velocity_box_model, initial_box_state, BoxNoise};
use facetrack_core::metrics::{count_id_switches, IdTimeline};
use facetrack_core::pipesim::{fit, full_pipeline, pipeline_throughput, placement_runs, Anchors};
use facetrack_core::report::{canonical_json, FrameRecord, RunReport};
use facetrack_core::{iou, BoundingBox, CostMatrix, Detection, TrackEvents, TrackId};

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0..200.0f64, 0.0..200.0f64, 0.5..80.0f64, 0.5..80.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

fn cost_matrix() -> impl Strategy<Value = CostMatrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..10.0f64, r * c).prop_map(move |d| CostMatrix::new(r, c, d).unwrap())
    })
}

// Per-target ID sequences over frames 1..=n.
fn id_rows() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..5, 1usize..12).prop_flat_map(|(targets, frames)| {
        prop::collection::vec(prop::collection::vec(0u64..6, targets), frames)
    })
}

fn timeline(rows: &[Vec<u64>], map: impl Fn(u64) -> u64) -> IdTimeline {
    let n = rows[0].len();
    IdTimeline::new(
        (0..n)
            .map(|j| {
                let seq = rows
                    .iter()
                    .enumerate()
                    .map(|(f, row)| (f as u32 + 1, TrackId(map(row[j]))))
                    .collect();
                (format!("t{j}"), seq)
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_zero_when_separated(a in bbox(), gap in 0.0..50.0f64) {
        let b = BoundingBox::new(a.right() + gap, a.y(), a.w(), a.h()).unwrap();
        prop_assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn hungarian_is_a_matching_no_worse_than_greedy(m in cost_matrix()) {
        let a = hungarian_min_cost(&m);
        prop_assert_eq!(a.matches.len(), m.rows().min(m.cols()));
        let rows: BTreeSet<_> = a.matches.iter().map(|x| x.track).collect();
        let cols: BTreeSet<_> = a.matches.iter().map(|x| x.detection).collect();
        prop_assert_eq!(rows.len(), a.matches.len());
        prop_assert_eq!(cols.len(), a.matches.len());
        prop_assert_eq!(rows.len() + a.unmatched_tracks.len(), m.rows());
        prop_assert_eq!(cols.len() + a.unmatched_detections.len(), m.cols());
        prop_assert!(a.total_cost() <= greedy_min_cost(&m).total_cost() + 1e-9);
    }

    #[test]
    fn kalman_covariance_stays_symmetric(zs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.8..1.2f64), 1..60)) {
        let noise = BoxNoise::default();
        let model = constant_velocity_box_model(&noise);
        let mut s = initial_box_state(&BoundingBox::new(40.0, 40.0, 20.0, 30.0).unwrap(), &noise);
        for (du, dv, ds) in zs {
            let p = model.predict(&s);
            let z = [p.x[0] + du, p.x[1] + dv, p.x[2].abs().max(1.0) * ds, p.x[3].abs().max(0.1)];
            s = model.update(&p, &z).unwrap();
            prop_assert!(s.asymmetry() < 1e-9);
            prop_assert!((0..7).all(|i| s.p[(i, i)] >= 0.0));
        }
    }

    #[test]
    fn switch_count_invariant_under_relabel(rows in id_rows(), shift in 1u64..50, scale in 1u64..7) {
        let base = count_id_switches(&timeline(&rows, |id| id)).unwrap();
        let relabeled = count_id_switches(&timeline(&rows, |id| id * scale + shift)).unwrap();
        prop_assert_eq!(base.switch_events, relabeled.switch_events);
        prop_assert_eq!(base.handovers, relabeled.handovers);
        prop_assert_eq!(base.distinct_ids, relabeled.distinct_ids);
    }

    #[test]
    fn switch_count_adds_over_disjoint_concatenation(a in id_rows(), b in id_rows()) {
        // Targets of `b` wear IDs disjoint from those of `a`, so no handover crosses the two.
        let ta = timeline(&a, |id| id);
        let tb = timeline(&b, |id| id + 100);
        let mut joined: Vec<(String, Vec<(u32, TrackId)>)> = ta.targets().to_vec();
        joined.extend(tb.targets().iter().map(|(n, s)| (format!("b{n}"), s.clone())));
        let joined = IdTimeline::new(joined).unwrap();
        let (ra, rb, rj) = (
            count_id_switches(&ta).unwrap(),
            count_id_switches(&tb).unwrap(),
            count_id_switches(&joined).unwrap(),
        );
        prop_assert_eq!(rj.switch_events, ra.switch_events + rb.switch_events);
        prop_assert_eq!(rj.distinct_ids, ra.distinct_ids + rb.distinct_ids);
    }

    #[test]
    fn throughput_non_increasing_and_power_non_decreasing_in_gating(g1 in 0.0..=1.0f64, g2 in 0.0..=1.0f64) {
        let cal = fit(&Anchors::default());
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        for alloc in placement_runs().into_iter().chain([full_pipeline()]) {
            let (a, b) = (
                pipeline_throughput(&cal, &alloc, lo).unwrap(),
                pipeline_throughput(&cal, &alloc, hi).unwrap(),
            );
            prop_assert!(b.throughput_fps <= a.throughput_fps + 1e-9);
            prop_assert!(b.total_power_mw + 1e-9 >= a.total_power_mw);
            prop_assert!(a.utilization.values().all(|u| (0.0..=1.0 + 1e-12).contains(u)));
        }
    }

    #[test]
    fn gate_calls_once_per_identity(frames in prop::collection::vec(prop::collection::btree_set(0u64..8, 0..4), 1..20)) {
        let emb = |k: u64| {
            let v: Vec<f64> = (0..EMBEDDING_DIM).map(|i| if i as u64 == k { 1.0 } else { 0.0 }).collect();
            Embedding::from_slice(&v).unwrap()
        };
        let gallery = Gallery::new((0..8).map(|k| (format!("p{k}"), emb(k))).collect()).unwrap();
        let mut gate = RecognitionGate::new(gallery, GateParams::default()).unwrap();
        let mut faces = 0;
        let mut seen = BTreeSet::new();
        let mut prev = BTreeSet::new();
        for (k, ids) in frames.iter().enumerate() {
            let mut e = TrackEvents::new(k as u32 + 1);
            for (d, &id) in ids.iter().enumerate() {
                if !seen.contains(&id) {
                    e.new_ids.push(TrackId(id));
                } else if prev.contains(&id) {
                    e.continued_ids.push(TrackId(id));
                } else {
                    e.revived_ids.push(TrackId(id));
                }
                e.assignments.push((d, TrackId(id)));
            }
            let map: HashMap<_, _> = ids.iter().map(|&id| (TrackId(id), emb(id))).collect();
            let got = gate.gate_step(&e, &map).unwrap();
            for (id, who) in &got {
                prop_assert!(!seen.contains(&id.0));
                prop_assert_eq!(who.label(), format!("p{}", id.0));
            }
            faces += ids.len();
            seen.extend(ids.iter().copied());
            prev = ids.clone();
        }
        prop_assert_eq!(gate.recognition_calls(), seen.len());
        prop_assert!(gate.recognition_calls() <= faces);
    }

    #[test]
    fn dcf_peak_follows_integer_shift(seed in prop::collection::vec(0.0..1.0f64, 256), dr in -7isize..=7, dc in -7isize..=7) {
        let x = preprocess(&Patch::new(16, 16, seed).unwrap());
        let label = GaussianLabel::centered(16, 16, 1.5).unwrap();
        let f = train_filter(&x, &label, 1e-2).unwrap();
        let r0 = respond(&f, &x).unwrap();
        let r1 = respond(&f, &x.shifted(dr, dc)).unwrap();
        let want = (
            (r0.peak.0 as isize + dr).rem_euclid(16) as usize,
            (r0.peak.1 as isize + dc).rem_euclid(16) as usize,
        );
        prop_assert_eq!(r1.peak, want);
        prop_assert!((r1.peak_value() - r0.peak_value()).abs() < 1e-9);
    }

    #[test]
    fn detections_round_trip(rows in prop::collection::vec((1u32..5, bbox(), 0.0..=1.0f64, prop::option::of(0u64..9)), 0..20)) {
        let mut rows: Vec<DetectionRow> = rows
            .into_iter()
            .map(|(f, b, c, id)| DetectionRow {
                detection: Detection::new(f, b, c).unwrap(),
                track_id: id.map(TrackId),
            })
            .collect();
        rows.sort_by_key(|r| r.detection.frame);
        let text = format_detections(&rows);
        let back = parse_detections_str(&text).unwrap();
        prop_assert_eq!(&back, &rows);
        prop_assert_eq!(format_detections(&back), text);
    }

    #[test]
    fn report_json_is_a_fixed_point(frames in 0u32..50, reduction in 0.0..1.0f64, ids in prop::collection::vec(0u64..20, 0..6)) {
        let mut e = TrackEvents::new(1);
        e.new_ids = ids.iter().map(|&i| TrackId(i)).collect();
        let r = RunReport {
            frames,
            gating_reduction: Some(reduction),
            config_echo: BTreeMap::from([("seed".to_string(), "1".to_string())]),
            events: vec![FrameRecord { events: e, recognized: vec![] }],
            ..Default::default()
        };
        let s = r.to_json_string().unwrap();
        prop_assert_eq!(canonical_json(&s).unwrap(), s.clone());
        prop_assert_eq!(r.to_json_string().unwrap(), s);
    }
}
