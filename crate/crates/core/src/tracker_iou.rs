//! Overlap-only tracker: frame-to-frame association by IOU, no motion or
//! appearance model. With `max_misses = 0` any single-frame dropout ends a
//! track and the target comes back under a fresh ID.

use crate::association::{associate, AssociationMode};
use crate::geometry::{BoundingBox, Detection, IdAllocator, Track, TrackEvents, TrackState};
use crate::image::GrayImage;
use crate::tracking::{FrameClock, MultiTracker, TrackerError};

#[derive(Debug, Clone, PartialEq)]
pub struct IouParams {
    pub iou_min: f64,
    pub max_misses: u32,
    pub min_confidence: f64,
    pub mode: AssociationMode,
}

impl Default for IouParams {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            max_misses: 0,
            min_confidence: 0.0,
            mode: AssociationMode::Optimal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IouTracker {
    tracks: Vec<Track>,
    ids: IdAllocator,
    clock: FrameClock,
    params: IouParams,
}

impl IouTracker {
    pub fn new(params: IouParams) -> Result<Self, TrackerError> {
        if !(0.0..=1.0).contains(&params.iou_min) {
            return Err(TrackerError::Param(format!("iou_min {}", params.iou_min)));
        }
        Ok(Self {
            tracks: Vec::new(),
            ids: IdAllocator::default(),
            clock: FrameClock::default(),
            params,
        })
    }

    /// Live tracks (Active or Lost), in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn params(&self) -> &IouParams {
        &self.params
    }

    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<TrackEvents, TrackerError> {
        self.clock.advance(frame, detections)?;
        let mut events = TrackEvents::new(frame);

        let track_boxes: Vec<BoundingBox> = self.tracks.iter().map(|t| t.bbox).collect();
        let det_boxes: Vec<BoundingBox> = detections.iter().map(|d| d.bbox).collect();
        let assignment = associate(&track_boxes, &det_boxes, self.params.iou_min, self.params.mode)?;

        for m in &assignment.matches {
            let track = &mut self.tracks[m.track];
            track.bbox = detections[m.detection].bbox;
            track.misses = 0;
            track.state = TrackState::Active;
            events.continued_ids.push(track.id);
            events.assignments.push((m.detection, track.id));
        }
        for &t in &assignment.unmatched_tracks {
            let track = &mut self.tracks[t];
            track.misses += 1;
            if track.misses > self.params.max_misses {
                track.state = TrackState::Terminated;
                events.terminated_ids.push(track.id);
            } else if track.state == TrackState::Active {
                track.state = TrackState::Lost;
                events.lost_ids.push(track.id);
            }
        }
        self.tracks.retain(|t| t.state != TrackState::Terminated);

        for &d in &assignment.unmatched_detections {
            let det = &detections[d];
            if det.confidence < self.params.min_confidence {
                continue;
            }
            let id = self.ids.next_id();
            self.tracks.push(Track::new(id, det.bbox));
            events.new_ids.push(id);
            events.assignments.push((d, id));
        }
        events.continued_ids.sort();
        events.assignments.sort();
        Ok(events)
    }
}

impl MultiTracker for IouTracker {
    fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        _image: Option<&GrayImage>,
    ) -> Result<TrackEvents, TrackerError> {
        IouTracker::step(self, frame, detections)
    }

    fn ids_issued(&self) -> u64 {
        self.ids.peek().0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TrackId;

    fn det(frame: u32, x: f64, y: f64, size: f64) -> Detection {
        Detection::new(frame, BoundingBox::new(x, y, size, size).unwrap(), 0.9).unwrap()
    }

    #[test]
    fn shifted_box_keeps_its_id() {
        let mut t = IouTracker::new(IouParams::default()).unwrap();
        let e1 = t.step(1, &[det(1, 0.0, 0.0, 100.0)]).unwrap();
        assert_eq!(e1.new_ids, vec![TrackId(0)]);
        let e2 = t.step(2, &[det(2, 1.0, 0.0, 100.0)]).unwrap();
        assert_eq!(e2.continued_ids, vec![TrackId(0)]);
        assert!(e2.new_ids.is_empty());
    }

    #[test]
    fn empty_frame_terminates_with_zero_tolerance() {
        let mut t = IouTracker::new(IouParams::default()).unwrap();
        t.step(1, &[det(1, 0.0, 0.0, 10.0), det(1, 50.0, 0.0, 10.0)]).unwrap();
        let e = t.step(2, &[]).unwrap();
        assert_eq!(e.terminated_ids, vec![TrackId(0), TrackId(1)]);
        assert!(t.tracks().is_empty());
    }

    #[test]
    fn jump_issues_new_id() {
        let mut t = IouTracker::new(IouParams::default()).unwrap();
        t.step(1, &[det(1, 0.0, 0.0, 10.0)]).unwrap();
        let e = t.step(2, &[det(2, 200.0, 200.0, 10.0)]).unwrap();
        assert_eq!(e.terminated_ids, vec![TrackId(0)]);
        assert_eq!(e.new_ids, vec![TrackId(1)]);
    }

    #[test]
    fn misses_tolerated_up_to_limit() {
        let params = IouParams {
            max_misses: 2,
            ..Default::default()
        };
        let mut t = IouTracker::new(params).unwrap();
        t.step(1, &[det(1, 0.0, 0.0, 10.0)]).unwrap();
        let e = t.step(2, &[]).unwrap();
        assert_eq!(e.lost_ids, vec![TrackId(0)]);
        t.step(3, &[]).unwrap();
        let e = t.step(4, &[det(4, 1.0, 0.0, 10.0)]).unwrap();
        assert_eq!(e.continued_ids, vec![TrackId(0)]);
        t.step(5, &[]).unwrap();
        t.step(6, &[]).unwrap();
        let e = t.step(7, &[]).unwrap();
        assert_eq!(e.terminated_ids, vec![TrackId(0)]);
    }

    #[test]
    fn low_confidence_does_not_spawn() {
        let params = IouParams {
            min_confidence: 0.5,
            ..Default::default()
        };
        let mut t = IouTracker::new(params).unwrap();
        let low = Detection::new(1, BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap(), 0.1).unwrap();
        let e = t.step(1, &[low]).unwrap();
        assert!(e.new_ids.is_empty());
    }

    #[test]
    fn out_of_order_rejected() {
        let mut t = IouTracker::new(IouParams::default()).unwrap();
        t.step(5, &[]).unwrap();
        assert!(matches!(t.step(4, &[]), Err(TrackerError::OutOfOrder { .. })));
    }
}
