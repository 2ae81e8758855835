//! Deterministic synthetic scenes: textured squares on linear paths over a
//! flat background, with exact detections and per-identity embeddings.
//!
//! All randomness comes from ChaCha8 streams seeded with `seed_from_u64`,
//! so the output depends only on the spec.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gate::{Embedding, Gallery, EMBEDDING_DIM};
use crate::geometry::{BoundingBox, Detection};
use crate::image::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("target {target} leaves the frame at frame {frame}")]
    OutOfBounds { target: String, frame: u32 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTarget {
    pub identity: String,
    /// Side of the square in pixels.
    pub size: f64,
    /// Top-left corner at frame 1.
    pub start: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    pub texture_seed: u64,
    /// Texture used after the dropout window, if the target changes look.
    pub texture_seed_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub width: usize,
    pub height: usize,
    pub frames: u32,
    pub targets: Vec<SynthTarget>,
    /// Inclusive frame range during which every target is hidden and no
    /// detections are emitted.
    pub dropout: Option<(u32, u32)>,
    pub background: f64,
    /// Amplitude of uniform per-pixel noise added to every frame.
    pub pixel_noise: f64,
    /// Amplitude of uniform per-component noise on each detection's embedding.
    pub embedding_noise: f64,
    /// Side of one texture cell in pixels.
    pub texel: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Two squares crossing with a three-frame dropout around the crossing.
    pub fn crossing() -> Self {
        Self {
            width: 200,
            height: 100,
            frames: 30,
            targets: vec![
                SynthTarget {
                    identity: "alice".into(),
                    size: 24.0,
                    start: (10.0, 30.0),
                    velocity: (5.0, 0.0),
                    texture_seed: 11,
                    texture_seed_after: None,
                },
                SynthTarget {
                    identity: "bob".into(),
                    size: 24.0,
                    start: (166.0, 46.0),
                    velocity: (-5.0, 0.0),
                    texture_seed: 22,
                    texture_seed_after: None,
                },
            ],
            dropout: Some((16, 18)),
            background: 0.5,
            pixel_noise: 0.0,
            embedding_noise: 0.01,
            texel: 2,
            seed: 7,
        }
    }

    /// One square moving steadily, no dropout.
    pub fn single(frames: u32) -> Self {
        Self {
            width: 160,
            height: 100,
            frames,
            targets: vec![SynthTarget {
                identity: "alice".into(),
                size: 20.0,
                start: (20.0, 40.0),
                velocity: (2.0, 0.0),
                texture_seed: 11,
                texture_seed_after: None,
            }],
            dropout: None,
            ..Self::crossing()
        }
    }

    pub fn in_dropout(&self, frame: u32) -> bool {
        self.dropout.is_some_and(|(a, b)| (a..=b).contains(&frame))
    }

    fn after_dropout(&self, frame: u32) -> bool {
        self.dropout.is_some_and(|(_, b)| frame > b)
    }

    pub fn target_box(&self, t: &SynthTarget, frame: u32) -> Result<BoundingBox, SynthError> {
        let k = f64::from(frame - 1);
        BoundingBox::new(
            t.start.0 + k * t.velocity.0,
            t.start.1 + k * t.velocity.1,
            t.size,
            t.size,
        )
        .map_err(|e| SynthError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(SynthError::Invalid("empty frame or sequence".into()));
        }
        if self.texel == 0 {
            return Err(SynthError::Invalid("texel must be >= 1".into()));
        }
        for t in &self.targets {
            for f in 1..=self.frames {
                if self.in_dropout(f) {
                    continue;
                }
                let b = self.target_box(t, f)?;
                if b.x() < 0.0
                    || b.y() < 0.0
                    || b.right() > self.width as f64
                    || b.bottom() > self.height as f64
                {
                    return Err(SynthError::OutOfBounds {
                        target: t.identity.clone(),
                        frame: f,
                    });
                }
            }
        }
        Ok(())
    }
}

/// One detection with its ground truth and embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDetection {
    pub detection: Detection,
    pub target: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub frames: Vec<GrayImage>,
    /// `detections[k]` belongs to frame `k + 1`.
    pub detections: Vec<Vec<SynthDetection>>,
    pub gallery: Gallery,
}

impl Scenario {
    pub fn frame_detections(&self, frame: u32) -> Vec<Detection> {
        self.detections[frame as usize - 1]
            .iter()
            .map(|d| d.detection)
            .collect()
    }

    /// All detections per frame, `[k]` for frame `k + 1`.
    pub fn all_detections(&self) -> Vec<Vec<Detection>> {
        (1..=self.spec.frames).map(|f| self.frame_detections(f)).collect()
    }

    pub fn embedding_table(&self) -> BTreeMap<(u32, usize), Embedding> {
        self.detections
            .iter()
            .flatten()
            .zip(self.index_pairs())
            .map(|(d, key)| (key, d.embedding.clone()))
            .collect()
    }

    pub fn truth_table(&self) -> BTreeMap<u32, BTreeMap<usize, String>> {
        let mut out: BTreeMap<u32, BTreeMap<usize, String>> = BTreeMap::new();
        for (d, (frame, k)) in self.detections.iter().flatten().zip(self.index_pairs()) {
            out.entry(frame).or_default().insert(k, d.target.clone());
        }
        out
    }

    fn index_pairs(&self) -> Vec<(u32, usize)> {
        self.detections
            .iter()
            .enumerate()
            .flat_map(|(k, v)| (0..v.len()).map(move |i| (k as u32 + 1, i)))
            .collect()
    }
}

fn texture(seed: u64, cells: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cells * cells).map(|_| rng.gen::<f64>()).collect()
}

fn gallery_embedding(identity_index: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(identity_index as u64 + 1));
    let v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Renders one frame. Targets later in the list are drawn on top.
pub fn render_frame(spec: &ScenarioSpec, frame: u32) -> Result<GrayImage, SynthError> {
    let mut img = GrayImage::filled(spec.width, spec.height, spec.background);
    if !spec.in_dropout(frame) {
        for t in &spec.targets {
            let b = spec.target_box(t, frame)?;
            let seed = match (spec.after_dropout(frame), t.texture_seed_after) {
                (true, Some(s)) => s,
                _ => t.texture_seed,
            };
            let cells = (t.size as usize).div_ceil(spec.texel);
            let tex = texture(seed, cells);
            let x0 = b.x().round().max(0.0) as usize;
            let y0 = b.y().round().max(0.0) as usize;
            let x1 = (b.right().round() as usize).min(spec.width);
            let y1 = (b.bottom().round() as usize).min(spec.height);
            for y in y0..y1 {
                let cy = ((y as f64 + 0.5 - b.y()).max(0.0) as usize / spec.texel).min(cells - 1);
                for x in x0..x1 {
                    let cx = ((x as f64 + 0.5 - b.x()).max(0.0) as usize / spec.texel).min(cells - 1);
                    img.set(x, y, tex[cy * cells + cx]);
                }
            }
        }
    }
    if spec.pixel_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(u64::from(frame) << 32));
        for y in 0..spec.height {
            for x in 0..spec.width {
                let v = img.get(x, y) + rng.gen_range(-spec.pixel_noise..=spec.pixel_noise);
                img.set(x, y, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(img)
}

pub fn synth_scenario(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let base: Vec<Vec<f64>> = (0..spec.targets.len())
        .map(|i| gallery_embedding(i, spec.seed))
        .collect();
    let gallery = Gallery::new(
        spec.targets
            .iter()
            .zip(&base)
            .map(|(t, v)| (t.identity.clone(), Embedding::from_slice(v).expect("finite")))
            .collect(),
    )
    .map_err(|e| SynthError::Invalid(e.to_string()))?;

    let mut frames = Vec::with_capacity(spec.frames as usize);
    let mut detections = Vec::with_capacity(spec.frames as usize);
    for f in 1..=spec.frames {
        frames.push(render_frame(spec, f)?);
        let mut dets = Vec::new();
        if !spec.in_dropout(f) {
            for (i, t) in spec.targets.iter().enumerate() {
                let bbox = spec.target_box(t, f)?;
                let mut rng = ChaCha8Rng::seed_from_u64(
                    spec.seed ^ (u64::from(f) << 20) ^ ((i as u64 + 1) << 40),
                );
                let noisy: Vec<f64> = base[i]
                    .iter()
                    .map(|v| {
                        if spec.embedding_noise > 0.0 {
                            v + rng.gen_range(-spec.embedding_noise..=spec.embedding_noise)
                        } else {
                            *v
                        }
                    })
                    .collect();
                dets.push(SynthDetection {
                    detection: Detection::new(f, bbox, 1.0).map_err(|e| SynthError::Invalid(e.to_string()))?,
                    target: t.identity.clone(),
                    embedding: Embedding::from_slice(&noisy).expect("finite"),
                });
            }
        }
        detections.push(dets);
    }
    Ok(Scenario {
        spec: spec.clone(),
        frames,
        detections,
        gallery,
    })
}
