//! Multi-face tracking building blocks: box geometry, detection-to-track
//! association, three trackers (overlap-only, Kalman/SORT, correlation
//! filter), a recognition gate that only asks for identities of new track
//! IDs, an analytic model of a heterogeneous accelerator pipeline, and
//! switch/recognition-call metrics.

pub mod association;
pub mod config;
pub mod dcf;
pub mod gate;
pub mod geometry;
pub mod image;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod pipesim;
pub mod report;
pub mod run;
pub mod synth;
pub mod tracker_dcf;
pub mod tracker_iou;
pub mod tracker_sort;
pub mod tracking;

pub use association::{associate, Assignment, AssociationError, AssociationMode, CostMatrix, Match};
pub use geometry::{iou, BoundingBox, CenterForm, Detection, GeometryError, Track, TrackEvents, TrackId, TrackState};
pub use image::GrayImage;
pub use tracker_dcf::{DcfParams, DcfTracker};
pub use tracker_iou::{IouParams, IouTracker};
pub use tracker_sort::{SortParams, SortTracker};
pub use tracking::{MultiTracker, TrackerError};
