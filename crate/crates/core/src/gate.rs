//! Recognition gating: an identity is looked up once per track ID and then
//! reused for as long as the ID lives, including after a revival.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::geometry::{TrackEvents, TrackId};

pub const EMBEDDING_DIM: usize = 128;

/// Default L2 acceptance radius.
pub const DEFAULT_MAX_DIST: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("embedding has {0} components, expected 128")]
    Dimension(usize),
    #[error("embedding component {0} is not finite")]
    NonFinite(usize),
    #[error("gallery label at position {0} is empty")]
    EmptyLabel(usize),
    #[error("max_dist must be > 0, got {0}")]
    MaxDist(f64),
    #[error("track {0} has no cached identity")]
    Uncached(u64),
}

#[derive(Clone, PartialEq)]
pub struct Embedding([f64; EMBEDDING_DIM]);

impl Embedding {
    pub fn from_slice(v: &[f64]) -> Result<Self, GateError> {
        if v.len() != EMBEDDING_DIM {
            return Err(GateError::Dimension(v.len()));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(GateError::NonFinite(i));
        }
        let mut a = [0.0; EMBEDDING_DIM];
        a.copy_from_slice(v);
        Ok(Self(a))
    }

    pub fn values(&self) -> &[f64; EMBEDDING_DIM] {
        &self.0
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedding[{:.4}, {:.4}, ..]", self.0[0], self.0[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Identity {
    Known(String),
    Unknown,
}

impl Identity {
    pub fn label(&self) -> &str {
        match self {
            Identity::Known(s) => s,
            Identity::Unknown => "unknown",
        }
    }
}

/// Labeled reference embeddings. A label may appear more than once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gallery {
    entries: Vec<(String, Embedding)>,
}

impl Gallery {
    pub fn new(entries: Vec<(String, Embedding)>) -> Result<Self, GateError> {
        if let Some(i) = entries.iter().position(|(l, _)| l.is_empty()) {
            return Err(GateError::EmptyLabel(i));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index and distance of the closest entry; the earliest one on ties.
    pub fn nearest(&self, e: &Embedding) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, g)) in self.entries.iter().enumerate() {
            let d = e.distance(g);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}

pub fn match_embedding(e: &Embedding, g: &Gallery, max_dist: f64) -> Result<Identity, GateError> {
    if max_dist.is_nan() || max_dist <= 0.0 {
        return Err(GateError::MaxDist(max_dist));
    }
    Ok(match g.nearest(e) {
        Some((i, d)) if d <= max_dist => Identity::Known(g.entries[i].0.clone()),
        _ => Identity::Unknown,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub max_dist: f64,
    /// Look up IDs cached as Unknown again on every frame they appear.
    pub retry_unknown: bool,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            max_dist: DEFAULT_MAX_DIST,
            retry_unknown: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alarm {
    pub frame: u32,
    pub id: TrackId,
    pub identity: Identity,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GateState {
    pub identity_cache: BTreeMap<TrackId, Identity>,
    /// One `(frame, id)` entry per recognition invocation.
    pub recognition_log: Vec<(u32, TrackId)>,
    pub alarm_log: Vec<Alarm>,
    /// IDs that needed recognition but had no embedding yet.
    pub deferred: BTreeSet<TrackId>,
}

#[derive(Debug, Clone)]
pub struct RecognitionGate {
    gallery: Gallery,
    params: GateParams,
    state: GateState,
}

impl RecognitionGate {
    pub fn new(gallery: Gallery, params: GateParams) -> Result<Self, GateError> {
        if params.max_dist.is_nan() || params.max_dist <= 0.0 {
            return Err(GateError::MaxDist(params.max_dist));
        }
        Ok(Self {
            gallery,
            params,
            state: GateState::default(),
        })
    }

    pub fn state(&self) -> &GateState {
        &self.state
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    pub fn identity(&self, id: TrackId) -> Option<&Identity> {
        self.state.identity_cache.get(&id)
    }

    pub fn recognition_calls(&self) -> usize {
        self.state.recognition_log.len()
    }

    /// Looks up every live ID in `events` that has no cached identity and
    /// returns what was recognized this frame, in ID order. IDs without an
    /// embedding are deferred until one shows up.
    pub fn gate_step(
        &mut self,
        events: &TrackEvents,
        embeddings: &HashMap<TrackId, Embedding>,
    ) -> Result<Vec<(TrackId, Identity)>, GateError> {
        let mut out = Vec::new();
        for id in events.live_ids() {
            let needs = match self.state.identity_cache.get(&id) {
                None => true,
                Some(Identity::Unknown) => self.params.retry_unknown,
                Some(Identity::Known(_)) => false,
            };
            if !needs {
                continue;
            }
            let Some(e) = embeddings.get(&id) else {
                self.state.deferred.insert(id);
                continue;
            };
            self.state.deferred.remove(&id);
            let identity = match_embedding(e, &self.gallery, self.params.max_dist)?;
            self.state.recognition_log.push((events.frame, id));
            self.state.identity_cache.insert(id, identity.clone());
            out.push((id, identity));
        }
        Ok(out)
    }

    /// First call per ID yields an alarm; later calls yield `None`.
    pub fn emit_alarm(&mut self, frame: u32, id: TrackId) -> Result<Option<Alarm>, GateError> {
        let identity = self
            .state
            .identity_cache
            .get(&id)
            .ok_or(GateError::Uncached(id.0))?
            .clone();
        if self.state.alarm_log.iter().any(|a| a.id == id) {
            return Ok(None);
        }
        let alarm = Alarm { frame, id, identity };
        self.state.alarm_log.push(alarm.clone());
        Ok(Some(alarm))
    }
}
