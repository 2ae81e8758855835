//! Box algebra, detections and the track record shared by every tracker.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has non-finite component ({x}, {y}, {w}, {h})")]
    NonFinite { x: f64, y: f64, w: f64, h: f64 },
    #[error("box size must be positive, got {w} x {h}")]
    NonPositiveSize { w: f64, h: f64 },
    #[error("center form requires s > 0 and r > 0, got s={s}, r={r}")]
    InvalidCenterForm { s: f64, r: f64 },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("frame index must be >= 1")]
    FrameIndex,
}

/// Axis-aligned box in pixel units, stored as top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite { x, y, w, h });
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::NonPositiveSize { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from its top-left and bottom-right corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    // Edge-difference area, computed the same way as the intersection so
    // that iou(a, a) is exactly 1.
    fn span_area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }

    /// Same size, moved so that its center sits at `(cx, cy)`.
    pub fn recentered(&self, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::from_center(cx, cy, self.w, self.h)
    }

    /// Intersection over union. Symmetric, in `[0, 1]`, exactly 0 for
    /// boxes that do not overlap with positive area.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.span_area() + other.span_area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn to_center_form(&self) -> CenterForm {
        let (u, v) = self.center();
        CenterForm {
            u,
            v,
            s: self.w * self.h,
            r: self.w / self.h,
        }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Free-function form of [`BoundingBox::iou`].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Center/area/aspect parameterization used as the Kalman observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterForm {
    pub u: f64,
    pub v: f64,
    pub s: f64,
    pub r: f64,
}

impl CenterForm {
    pub fn new(u: f64, v: f64, s: f64, r: f64) -> Result<Self, GeometryError> {
        let cf = Self { u, v, s, r };
        cf.validate()?;
        Ok(cf)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.u.is_finite() && self.v.is_finite() && self.s.is_finite() && self.r.is_finite())
            || self.s <= 0.0
            || self.r <= 0.0
        {
            return Err(GeometryError::InvalidCenterForm {
                s: self.s,
                r: self.r,
            });
        }
        Ok(())
    }

    pub fn to_box(&self) -> Result<BoundingBox, GeometryError> {
        self.validate()?;
        let w = (self.s * self.r).sqrt();
        let h = (self.s / self.r).sqrt();
        BoundingBox::from_center(self.u, self.v, w, h)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.u, self.v, self.s, self.r]
    }
}

/// A face detection in one frame. Frames are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(frame: u32, bbox: BoundingBox, confidence: f64) -> Result<Self, GeometryError> {
        if frame == 0 {
            return Err(GeometryError::FrameIndex);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(Self {
            frame,
            bbox,
            confidence,
        })
    }
}

/// Per-tracker identifier. Issued from 0 upwards, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Monotonic ID source owned by one tracker instance.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn next_id(&mut self) -> TrackId {
        let id = TrackId(self.next);
        self.next += 1;
        id
    }

    /// The ID the next call will return.
    pub fn peek(&self) -> TrackId {
        TrackId(self.next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Active,
    Lost,
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    pub bbox: BoundingBox,
    pub state: TrackState,
    pub misses: u32,
    pub identity: Option<String>,
}

impl Track {
    pub fn new(id: TrackId, bbox: BoundingBox) -> Self {
        Self {
            id,
            bbox,
            state: TrackState::Active,
            misses: 0,
            identity: None,
        }
    }
}

/// What happened to tracks during one tracker step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackEvents {
    pub frame: u32,
    pub new_ids: Vec<TrackId>,
    pub continued_ids: Vec<TrackId>,
    /// Previously lost IDs restored to a reappearing target.
    pub revived_ids: Vec<TrackId>,
    /// Tracks that stopped being followed this frame but may still come back.
    pub lost_ids: Vec<TrackId>,
    pub terminated_ids: Vec<TrackId>,
    /// `(detection index within the frame, track ID)` for every detection
    /// that ended up attached to a track.
    pub assignments: Vec<(usize, TrackId)>,
}

impl TrackEvents {
    pub fn new(frame: u32) -> Self {
        Self {
            frame,
            ..Default::default()
        }
    }

    /// IDs alive at the end of the step, in a stable order.
    pub fn live_ids(&self) -> Vec<TrackId> {
        let mut ids: Vec<TrackId> = self
            .new_ids
            .iter()
            .chain(&self.continued_ids)
            .chain(&self.revived_ids)
            .copied()
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn track_for_detection(&self, det_index: usize) -> Option<TrackId> {
        self.assignments
            .iter()
            .find(|(d, _)| *d == det_index)
            .map(|(_, id)| *id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_identity_and_disjoint() {
        assert_eq!(iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(0.0, 0.0, 2.0, 2.0)), 1.0);
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_half_shift_is_one_third() {
        let v = iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 0.0, 2.0, 2.0));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_edges_give_exact_zero() {
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(matches!(
            BoundingBox::new(0.0, 0.0, 0.0, 1.0),
            Err(GeometryError::NonPositiveSize { .. })
        ));
        assert!(matches!(
            BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0),
            Err(GeometryError::NonFinite { .. })
        ));
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn center_form_examples() {
        let cf = bx(0.0, 0.0, 2.0, 2.0).to_center_form();
        assert_eq!(cf.as_array(), [1.0, 1.0, 4.0, 1.0]);
        let cf = bx(10.0, 20.0, 4.0, 2.0).to_center_form();
        assert_eq!(cf.as_array(), [12.0, 21.0, 8.0, 2.0]);
        let back = cf.to_box().unwrap();
        assert_eq!(back, bx(10.0, 20.0, 4.0, 2.0));
    }

    #[test]
    fn detection_validation() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(Detection::new(0, b, 0.5).is_err());
        assert!(Detection::new(1, b, 1.5).is_err());
        assert!(Detection::new(1, b, 1.0).is_ok());
    }

    #[test]
    fn ids_are_monotonic() {
        let mut alloc = IdAllocator::default();
        assert_eq!(alloc.next_id(), TrackId(0));
        assert_eq!(alloc.next_id(), TrackId(1));
        assert_eq!(alloc.peek(), TrackId(2));
    }
}
