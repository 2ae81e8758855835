//! End-to-end run: tracker over every frame, optional recognition gate,
//! switch counting against ground truth, and the simulated pipeline rate
//! and power at the observed gating fraction.

use std::collections::HashMap;

use thiserror::Error;

use crate::config::{RunConfig, TrackerKind};
use crate::gate::{Gallery, GateError, RecognitionGate};
use crate::geometry::Detection;
use crate::image::GrayImage;
use crate::io::{EmbeddingTable, TruthTable};
use crate::metrics::{count_id_switches, gating_benefit, IdTimeline, MetricsError};
use crate::pipesim::{full_pipeline, pipeline_throughput, Calibration, PipesimError};
use crate::report::{FrameRecord, PowerSummary, RunReport};
use crate::tracker_dcf::DcfTracker;
use crate::tracker_iou::IouTracker;
use crate::tracker_sort::SortTracker;
use crate::tracking::{MultiTracker, TrackerError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("frame {frame}: {source}")]
    Tracker {
        frame: u32,
        #[source]
        source: TrackerError,
    },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipesim(#[from] PipesimError),
    #[error("{0}")]
    Input(String),
}

/// Everything a run reads. `detections[k]` holds frame `k + 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunInputs<'a> {
    pub detections: &'a [Vec<Detection>],
    pub frames: Option<&'a [GrayImage]>,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub gallery: Option<&'a Gallery>,
    pub truth: Option<&'a TruthTable>,
    pub calibration: Option<&'a Calibration>,
}

pub fn build_tracker(config: &RunConfig) -> Result<Box<dyn MultiTracker>, TrackerError> {
    Ok(match config.tracker {
        TrackerKind::Iou => Box::new(IouTracker::new(config.iou.clone())?),
        TrackerKind::Sort => Box::new(SortTracker::new(config.sort.clone())?),
        TrackerKind::Dcf => Box::new(DcfTracker::new(config.dcf.clone())?),
    })
}

pub fn run(config: &RunConfig, inputs: RunInputs<'_>) -> Result<RunReport, RunError> {
    let n_frames = match inputs.frames {
        Some(f) => {
            if inputs.detections.len() > f.len() {
                return Err(RunError::Input(format!(
                    "detections reach frame {} but only {} frames were given",
                    inputs.detections.len(),
                    f.len()
                )));
            }
            f.len()
        }
        None => {
            if config.tracker == TrackerKind::Dcf {
                return Err(RunError::Input("the dcf tracker needs frames".into()));
            }
            inputs.detections.len()
        }
    };
    let mut tracker = build_tracker(config).map_err(|source| RunError::Tracker { frame: 0, source })?;
    let mut gate = match (inputs.gallery, inputs.embeddings) {
        (Some(g), Some(_)) => Some(RecognitionGate::new(g.clone(), config.gate.clone())?),
        (None, None) => None,
        _ => return Err(RunError::Input("gating needs both a gallery and embeddings".into())),
    };
    let mut timeline = IdTimeline::default();
    let mut events = Vec::with_capacity(n_frames);
    let mut faces = 0u64;
    let mut frames_recognizing = 0usize;

    for k in 0..n_frames {
        let frame = k as u32 + 1;
        let dets = inputs.detections.get(k).map(Vec::as_slice).unwrap_or(&[]);
        faces += dets.len() as u64;
        let image = inputs.frames.map(|f| &f[k]);
        let e = tracker
            .step(frame, dets, image)
            .map_err(|source| RunError::Tracker { frame, source })?;
        let mut recognized = Vec::new();
        if let (Some(gate), Some(table)) = (gate.as_mut(), inputs.embeddings) {
            let emb: HashMap<_, _> = e
                .assignments
                .iter()
                .filter_map(|&(d, id)| table.get(&(frame, d)).map(|x| (id, x.clone())))
                .collect();
            recognized = gate
                .gate_step(&e, &emb)?
                .into_iter()
                .map(|(id, who)| (id, who.label().to_string()))
                .collect();
            if !recognized.is_empty() {
                frames_recognizing += 1;
            }
        }
        if let Some(truth) = inputs.truth.and_then(|t| t.get(&frame)) {
            timeline.record(&e, truth)?;
        }
        events.push(FrameRecord { events: e, recognized });
    }

    let id_switches = match inputs.truth {
        Some(_) if !timeline.targets().is_empty() => Some(count_id_switches(&timeline)?.switch_events),
        Some(_) => Some(0),
        None => None,
    };
    let recognition_calls = gate.as_ref().map(RecognitionGate::recognition_calls);
    let gating_reduction = match recognition_calls {
        Some(calls) if faces > 0 => Some(gating_benefit(faces, calls as u64)?),
        _ => None,
    };
    let (fps_simulated, power_mw) = match inputs.calibration {
        Some(cal) => {
            // Fraction of frames in which the recognition stage ran.
            let g = match &gate {
                Some(_) if n_frames > 0 => frames_recognizing as f64 / n_frames as f64,
                _ => 1.0,
            };
            let r = pipeline_throughput(cal, &full_pipeline(), g)?;
            (
                Some(r.throughput_fps),
                Some(PowerSummary {
                    per_engine: r.power_mw,
                    total: r.total_power_mw,
                }),
            )
        }
        None => (None, None),
    };
    Ok(RunReport {
        config_echo: config.echo(),
        frames: n_frames as u32,
        tracks_created: tracker.ids_issued(),
        id_switches,
        recognition_calls,
        gating_reduction,
        fps_simulated,
        power_mw,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scenario, ScenarioSpec};

    #[test]
    fn single_target_one_id_everywhere() {
        let s = synth_scenario(&ScenarioSpec::single(10)).unwrap();
        let dets: Vec<Vec<Detection>> = (1..=10).map(|f| s.frame_detections(f)).collect();
        for kind in [TrackerKind::Iou, TrackerKind::Sort, TrackerKind::Dcf] {
            let config = RunConfig {
                tracker: kind,
                ..Default::default()
            };
            let truth: TruthTable = (1..=10u32)
                .map(|f| (f, [(0usize, "alice".to_string())].into_iter().collect()))
                .collect();
            let r = run(
                &config,
                RunInputs {
                    detections: &dets,
                    frames: Some(&s.frames),
                    truth: Some(&truth),
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(r.tracks_created, 1, "{kind:?}");
            assert_eq!(r.id_switches, Some(0));
        }
    }

    #[test]
    fn dcf_without_frames_rejected() {
        let config = RunConfig {
            tracker: TrackerKind::Dcf,
            ..Default::default()
        };
        assert!(matches!(run(&config, RunInputs::default()), Err(RunError::Input(_))));
    }
}
