//! Pieces common to all three trackers.

use thiserror::Error;

use crate::association::AssociationError;
use crate::dcf::DcfError;
use crate::geometry::{Detection, GeometryError, TrackEvents};
use crate::image::GrayImage;
use crate::kalman::KalmanError;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {got} presented after frame {last}")]
    OutOfOrder { last: u32, got: u32 },
    #[error("detection belongs to frame {got}, step is for frame {expected}")]
    FrameMismatch { expected: u32, got: u32 },
    #[error("invalid tracker parameter: {0}")]
    Param(String),
    #[error("the dcf tracker needs the frame image")]
    MissingImage,
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Dcf(#[from] DcfError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rejects frames that do not strictly increase.
#[derive(Debug, Clone, Default)]
pub struct FrameClock {
    last: Option<u32>,
}

impl FrameClock {
    pub fn advance(&mut self, frame: u32, detections: &[Detection]) -> Result<(), TrackerError> {
        if let Some(last) = self.last {
            if frame <= last {
                return Err(TrackerError::OutOfOrder { last, got: frame });
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(TrackerError::FrameMismatch {
                expected: frame,
                got: d.frame,
            });
        }
        self.last = Some(frame);
        Ok(())
    }

    pub fn last(&self) -> Option<u32> {
        self.last
    }
}

/// Anything that turns per-frame detections into track events.
pub trait MultiTracker {
    /// Processes one frame. `image` is required by appearance-based
    /// trackers and ignored by the others.
    fn step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        image: Option<&GrayImage>,
    ) -> Result<TrackEvents, TrackerError>;

    /// Total number of IDs issued so far.
    fn ids_issued(&self) -> u64;
}
