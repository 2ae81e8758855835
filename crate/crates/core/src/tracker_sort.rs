//! SORT: constant-velocity Kalman prediction of every track, Hungarian
//! association of predicted boxes to detections, Kalman update on match.

use crate::association::{associate, AssociationMode};
use crate::geometry::{BoundingBox, Detection, IdAllocator, Track, TrackEvents, TrackState};
use crate::image::GrayImage;
use crate::kalman::{
    constant_velocity_box_model, initial_box_state, state_box, BoxNoise, KalmanModel, KalmanState,
};
use crate::tracking::{FrameClock, MultiTracker, TrackerError};

#[derive(Debug, Clone, PartialEq)]
pub struct SortParams {
    pub iou_min: f64,
    pub max_misses: u32,
    /// Matched frames needed before a track is reported. 0 and 1 both mean
    /// "report on first appearance".
    pub min_hits: u32,
    pub mode: AssociationMode,
    pub noise: BoxNoise,
}

impl Default for SortParams {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            max_misses: 1,
            min_hits: 1,
            mode: AssociationMode::Optimal,
            noise: BoxNoise::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SortTrack {
    pub track: Track,
    pub filter: KalmanState,
    pub hits: u32,
    pub confirmed: bool,
}

#[derive(Debug, Clone)]
pub struct SortTracker {
    tracks: Vec<SortTrack>,
    ids: IdAllocator,
    clock: FrameClock,
    params: SortParams,
    model: KalmanModel,
}

impl SortTracker {
    pub fn new(params: SortParams) -> Result<Self, TrackerError> {
        let model = constant_velocity_box_model(&params.noise);
        Self::with_model(params, model)
    }

    /// Uses a caller-supplied 7-state / 4-measurement model instead of the
    /// one derived from `params.noise`.
    pub fn with_model(params: SortParams, model: KalmanModel) -> Result<Self, TrackerError> {
        if !(0.0..=1.0).contains(&params.iou_min) {
            return Err(TrackerError::Param(format!("iou_min {}", params.iou_min)));
        }
        if model.state_dim() != 7 || model.measurement_dim() != 4 {
            return Err(TrackerError::Param(
                "sort needs a 7-state, 4-measurement model".into(),
            ));
        }
        Ok(Self {
            tracks: Vec::new(),
            ids: IdAllocator::default(),
            clock: FrameClock::default(),
            params,
            model,
        })
    }

    pub fn tracks(&self) -> &[SortTrack] {
        &self.tracks
    }

    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<TrackEvents, TrackerError> {
        self.clock.advance(frame, detections)?;
        let mut events = TrackEvents::new(frame);

        let mut predicted = Vec::with_capacity(self.tracks.len());
        for t in &mut self.tracks {
            // Keep the predicted area positive.
            if t.filter.x[2] + t.filter.x[6] <= 0.0 {
                t.filter.x[6] = 0.0;
            }
            t.filter = self.model.predict(&t.filter);
            predicted.push(state_box(&t.filter).ok());
        }
        // Tracks whose state no longer describes a box cannot be matched.
        let mut dead = vec![false; self.tracks.len()];
        let mut rows = Vec::new();
        let mut row_boxes = Vec::new();
        for (i, b) in predicted.iter().enumerate() {
            match b {
                Some(b) => {
                    rows.push(i);
                    row_boxes.push(*b);
                }
                None => dead[i] = true,
            }
        }
        let det_boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
        let assignment = associate(&row_boxes, &det_boxes, self.params.iou_min, self.params.mode)?;
        let min_hits = self.params.min_hits.max(1);

        for m in &assignment.matches {
            let t = &mut self.tracks[rows[m.track]];
            let det = &detections[m.detection];
            t.filter = self.model.update(&t.filter, &det.bbox.to_center_form().as_array())?;
            t.track.bbox = state_box(&t.filter).unwrap_or(det.bbox);
            t.track.misses = 0;
            t.track.state = TrackState::Active;
            t.hits += 1;
            if t.confirmed {
                events.continued_ids.push(t.track.id);
                events.assignments.push((m.detection, t.track.id));
            } else if t.hits >= min_hits {
                t.confirmed = true;
                events.new_ids.push(t.track.id);
                events.assignments.push((m.detection, t.track.id));
            }
        }
        for &r in &assignment.unmatched_tracks {
            let i = rows[r];
            let t = &mut self.tracks[i];
            if let Some(b) = predicted[i] {
                t.track.bbox = b;
            }
            t.track.misses += 1;
            if t.track.misses > self.params.max_misses {
                dead[i] = true;
            } else if t.track.state == TrackState::Active {
                t.track.state = TrackState::Lost;
                if t.confirmed {
                    events.lost_ids.push(t.track.id);
                }
            }
        }
        for (i, t) in self.tracks.iter_mut().enumerate() {
            if dead[i] {
                t.track.state = TrackState::Terminated;
                if t.confirmed {
                    events.terminated_ids.push(t.track.id);
                }
            }
        }
        self.tracks.retain(|t| t.track.state != TrackState::Terminated);

        for &d in &assignment.unmatched_detections {
            let det = &detections[d];
            let id = self.ids.next_id();
            let confirmed = min_hits <= 1;
            if confirmed {
                events.new_ids.push(id);
                events.assignments.push((d, id));
            }
            self.tracks.push(SortTrack {
                track: Track::new(id, det.bbox),
                filter: initial_box_state(&det.bbox, &self.params.noise),
                hits: 1,
                confirmed,
            });
        }
        events.new_ids.sort();
        events.continued_ids.sort();
        events.terminated_ids.sort();
        events.assignments.sort();
        Ok(events)
    }
}

impl MultiTracker for SortTracker {
    fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        _image: Option<&GrayImage>,
    ) -> Result<TrackEvents, TrackerError> {
        SortTracker::step(self, frame, detections)
    }

    fn ids_issued(&self) -> u64 {
        self.ids.peek().0
    }
}
