//! Appearance tracker built on the correlation filter in [`crate::dcf`].
//!
//! Each live track keeps a filter trained on its own patch. Every frame the
//! filter is evaluated on a search window around the previous position and
//! the box follows the response peak. A weak peak moves the track to a lost
//! pool where its filter is kept for a while, so that a detection which
//! later looks like the same target gets the old ID back.

use crate::association::{associate, AssociationMode};
use crate::dcf::{
    preprocess, respond, train_filter, update_filter, CorrelationFilter, GaussianLabel, Patch,
    ResponseMap,
};
use crate::geometry::{BoundingBox, Detection, IdAllocator, Track, TrackEvents, TrackId, TrackState};
use crate::image::GrayImage;
use crate::tracking::{FrameClock, MultiTracker, TrackerError};

#[derive(Debug, Clone, PartialEq)]
pub struct DcfParams {
    pub lambda: f64,
    /// Label width in patch pixels; `None` means `patch_size / 20`.
    pub sigma: Option<f64>,
    pub learning_rate: f64,
    pub psr_track_min: f64,
    pub psr_revive_min: f64,
    /// Search window side as a multiple of the box's larger side.
    pub search_scale: f64,
    pub lost_retention_frames: u32,
    pub iou_min: f64,
    pub mode: AssociationMode,
    /// Upper bound on the patch side.
    pub max_patch_size: usize,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            sigma: None,
            learning_rate: 0.125,
            psr_track_min: 5.0,
            psr_revive_min: 8.0,
            search_scale: 2.5,
            lost_retention_frames: 60,
            iou_min: 0.3,
            mode: AssociationMode::Optimal,
            max_patch_size: 256,
        }
    }
}

impl DcfParams {
    fn validate(&self) -> Result<(), TrackerError> {
        let bad = |what: &str, v: f64| Err(TrackerError::Param(format!("{what} {v}")));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma", s);
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate", self.learning_rate);
        }
        if !self.psr_track_min.is_finite() {
            return bad("psr_track_min", self.psr_track_min);
        }
        if !self.psr_revive_min.is_finite() {
            return bad("psr_revive_min", self.psr_revive_min);
        }
        if !(self.search_scale > 0.0 && self.search_scale.is_finite()) {
            return bad("search_scale", self.search_scale);
        }
        if !(0.0..=1.0).contains(&self.iou_min) {
            return bad("iou_min", self.iou_min);
        }
        if self.max_patch_size < 16 || !self.max_patch_size.is_power_of_two() {
            return bad("max_patch_size", self.max_patch_size as f64);
        }
        Ok(())
    }

    /// Smallest power of two at least twice the box's larger side, capped.
    pub fn patch_size(&self, bbox: &BoundingBox) -> usize {
        let want = (2.0 * bbox.w().max(bbox.h())).ceil().max(16.0) as usize;
        want.next_power_of_two().min(self.max_patch_size)
    }

    fn sigma_for(&self, n: usize) -> f64 {
        self.sigma.unwrap_or(n as f64 / 20.0)
    }
}

#[derive(Debug, Clone)]
pub struct DcfTrack {
    pub track: Track,
    pub filter: CorrelationFilter,
    pub patch_size: usize,
    /// Frame at which the track entered the lost pool.
    pub lost_at: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct DcfTracker {
    active: Vec<DcfTrack>,
    lost: Vec<DcfTrack>,
    ids: IdAllocator,
    clock: FrameClock,
    params: DcfParams,
}

/// Square search window centered on a box, `side` frame pixels across,
/// resampled to `n x n`.
fn crop(image: &GrayImage, center: (f64, f64), side: f64, n: usize) -> Patch {
    let step = side / n as f64;
    let half = (n / 2) as f64;
    let mut pixels = Vec::with_capacity(n * n);
    for r in 0..n {
        let y = center.1 + (r as f64 - half) * step;
        for c in 0..n {
            let x = center.0 + (c as f64 - half) * step;
            // Pixel i covers [i, i + 1).
            pixels.push(image.sample(x - 0.5, y - 0.5));
        }
    }
    preprocess(&Patch::new(n, n, pixels).expect("crop dimensions"))
}

fn clip_to_frame(b: &BoundingBox, image: &GrayImage) -> Option<BoundingBox> {
    let (fw, fh) = (image.width() as f64, image.height() as f64);
    let x0 = b.x().max(0.0);
    let y0 = b.y().max(0.0);
    let x1 = b.right().min(fw);
    let y1 = b.bottom().min(fh);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    BoundingBox::from_corners(x0, y0, x1, y1).ok()
}

impl DcfTracker {
    pub fn new(params: DcfParams) -> Result<Self, TrackerError> {
        params.validate()?;
        Ok(Self {
            active: Vec::new(),
            lost: Vec::new(),
            ids: IdAllocator::default(),
            clock: FrameClock::default(),
            params,
        })
    }

    pub fn params(&self) -> &DcfParams {
        &self.params
    }

    pub fn active(&self) -> &[DcfTrack] {
        &self.active
    }

    pub fn lost_pool(&self) -> &[DcfTrack] {
        &self.lost
    }

    fn side(&self, bbox: &BoundingBox) -> f64 {
        self.params.search_scale * bbox.w().max(bbox.h())
    }

    fn train(&self, image: &GrayImage, bbox: &BoundingBox, n: usize) -> Result<CorrelationFilter, TrackerError> {
        let patch = crop(image, bbox.center(), self.side(bbox), n);
        let label = GaussianLabel::centered(n, n, self.params.sigma_for(n))?;
        Ok(train_filter(&patch, &label, self.params.lambda)?)
    }

    fn evaluate(
        &self,
        image: &GrayImage,
        filter: &CorrelationFilter,
        bbox: &BoundingBox,
        n: usize,
    ) -> Result<ResponseMap, TrackerError> {
        let patch = crop(image, bbox.center(), self.side(bbox), n);
        Ok(respond(filter, &patch)?)
    }

    /// A response counts only with a positive peak; a flat window gives an
    /// all-zero map whose PSR is the infinite sentinel.
    fn confident(r: &ResponseMap, min: f64) -> bool {
        r.peak_value() > 1e-12 && r.psr >= min
    }

    fn refresh(&self, image: &GrayImage, t: &mut DcfTrack) -> Result<(), TrackerError> {
        let fresh = self.train(image, &t.track.bbox, t.patch_size)?;
        t.filter = update_filter(&t.filter, &fresh, self.params.learning_rate)?;
        Ok(())
    }

    /// PSR of every lost-pool filter on a patch around `bbox`, as
    /// `(psr, pool index)`.
    pub fn revival_scores(&self, image: &GrayImage, bbox: &BoundingBox) -> Result<Vec<(f64, usize)>, TrackerError> {
        let mut out = Vec::new();
        for (i, l) in self.lost.iter().enumerate() {
            let r = self.evaluate(image, &l.filter, bbox, l.patch_size)?;
            if r.peak_value() > 1e-12 {
                out.push((r.psr, i));
            }
        }
        Ok(out)
    }

    pub fn step(
        &mut self,
        frame: u32,
        image: &GrayImage,
        detections: &[Detection],
    ) -> Result<TrackEvents, TrackerError> {
        self.clock.advance(frame, detections)?;
        let mut events = TrackEvents::new(frame);

        let mut det_boxes = Vec::with_capacity(detections.len());
        let mut det_index = Vec::with_capacity(detections.len());
        for (i, d) in detections.iter().enumerate() {
            match clip_to_frame(&d.bbox, image) {
                Some(b) => {
                    if b != d.bbox {
                        log::warn!("frame {frame}: detection {i} clipped to the image");
                    }
                    det_boxes.push(b);
                    det_index.push(i);
                }
                None => log::warn!("frame {frame}: detection {i} lies outside the image, ignored"),
            }
        }

        // 1. Follow each active track's response peak.
        let mut kept = Vec::with_capacity(self.active.len());
        for mut t in std::mem::take(&mut self.active) {
            let r = self.evaluate(image, &t.filter, &t.track.bbox, t.patch_size)?;
            if Self::confident(&r, self.params.psr_track_min) {
                let (pr, pc) = r.subpixel_peak();
                let half = (t.patch_size / 2) as f64;
                let step = self.side(&t.track.bbox) / t.patch_size as f64;
                let (cx, cy) = t.track.bbox.center();
                t.track.bbox = t
                    .track
                    .bbox
                    .recentered(cx + (pc - half) * step, cy + (pr - half) * step)?;
                kept.push(t);
            } else {
                log::debug!("frame {frame}: track {} lost (psr {:.2})", t.track.id.0, r.psr);
                t.track.state = TrackState::Lost;
                t.track.misses = 0;
                t.lost_at = Some(frame);
                events.lost_ids.push(t.track.id);
                self.lost.push(t);
            }
        }
        self.active = kept;

        // 2. Detections snap the boxes they overlap.
        let boxes: Vec<BoundingBox> = self.active.iter().map(|t| t.track.bbox).collect();
        let assignment = associate(&boxes, &det_boxes, self.params.iou_min, self.params.mode)?;
        for m in &assignment.matches {
            let t = &mut self.active[m.track];
            t.track.bbox = det_boxes[m.detection];
            t.track.misses = 0;
            events.assignments.push((det_index[m.detection], t.track.id));
        }
        for &t in &assignment.unmatched_tracks {
            self.active[t].track.misses += 1;
        }
        let mut active = std::mem::take(&mut self.active);
        for t in &mut active {
            self.refresh(image, t)?;
            events.continued_ids.push(t.track.id);
        }
        self.active = active;

        // 3. Remaining detections: revive a lost track or start a new one.
        let mut candidates = Vec::new();
        for &d in &assignment.unmatched_detections {
            for (psr, l) in self.revival_scores(image, &det_boxes[d])? {
                if psr >= self.params.psr_revive_min {
                    candidates.push((psr, d, l));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_used = vec![false; det_boxes.len()];
        let mut lost_used = vec![false; self.lost.len()];
        let mut revived = Vec::new();
        for (psr, d, l) in candidates {
            if det_used[d] || lost_used[l] {
                continue;
            }
            det_used[d] = true;
            lost_used[l] = true;
            log::debug!("frame {frame}: track {} revived (psr {psr:.2})", self.lost[l].track.id.0);
            revived.push((d, l));
        }
        let mut revived_tracks = Vec::new();
        for &(d, l) in &revived {
            let mut t = self.lost[l].clone();
            t.track.bbox = det_boxes[d];
            t.track.state = TrackState::Active;
            t.track.misses = 0;
            t.lost_at = None;
            self.refresh(image, &mut t)?;
            events.revived_ids.push(t.track.id);
            events.assignments.push((det_index[d], t.track.id));
            revived_tracks.push(t);
        }
        let mut l = 0;
        self.lost.retain(|_| {
            l += 1;
            !lost_used[l - 1]
        });
        self.active.extend(revived_tracks);

        for &d in &assignment.unmatched_detections {
            if det_used[d] {
                continue;
            }
            let bbox = det_boxes[d];
            let n = self.params.patch_size(&bbox);
            let filter = self.train(image, &bbox, n)?;
            let id = self.ids.next_id();
            events.new_ids.push(id);
            events.assignments.push((det_index[d], id));
            self.active.push(DcfTrack {
                track: Track::new(id, bbox),
                filter,
                patch_size: n,
                lost_at: None,
            });
        }

        // 4. Expire the lost pool.
        let retention = self.params.lost_retention_frames;
        let mut expired: Vec<TrackId> = Vec::new();
        self.lost.retain(|t| {
            let keep = frame - t.lost_at.unwrap_or(frame) <= retention;
            if !keep {
                expired.push(t.track.id);
            }
            keep
        });
        events.terminated_ids = expired;

        events.continued_ids.sort();
        events.revived_ids.sort();
        events.lost_ids.sort();
        events.terminated_ids.sort();
        events.assignments.sort();
        Ok(events)
    }
}

impl MultiTracker for DcfTracker {
    fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        image: Option<&GrayImage>,
    ) -> Result<TrackEvents, TrackerError> {
        let image = image.ok_or(TrackerError::MissingImage)?;
        DcfTracker::step(self, frame, image, detections)
    }

    fn ids_issued(&self) -> u64 {
        self.ids.peek().0
    }
}
