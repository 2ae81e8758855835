//! Steady-state model of a frame pipeline spread over several hardware
//! engines (GPU, DLA cores, video compositor, decoder, CPU).
//!
//! Each stage runs as a sequence of segments. The first segment's engine
//! is the stage's primary engine and is busy for the whole effective
//! latency, fallback segments included, because it waits on them. Any other
//! engine carries only its own segments plus one memcpy per engine boundary
//! it touches. An engine's load per frame is its busy time divided by its
//! concurrency, and the pipeline runs at `1000 / max load` frames per
//! second. The CPU is charged for managing DLA work: a fixed cost per
//! engine-boundary crossing, a dispatch cost for every DLA-hosted stage, and
//! any host-side work the stage declares.
//!
//! Power is affine in utilization: `idle + u * (active - idle)` per engine,
//! where `u = load / reference period`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

/// Stage whose cost scales with the gating fraction.
pub const GATED_STAGE: &str = "recognize";
pub const CPU: &str = "CPU";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipesimError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("calibration is missing {0}")]
    Missing(String),
    #[error("unknown engine {0}")]
    UnknownEngine(String),
    #[error("no calibration for stage {stage} on {engine}")]
    UnknownPlacement { stage: String, engine: String },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("gating fraction must lie in [0, 1], got {0}")]
    GatingFraction(f64),
    #[error("no candidate allocations")]
    NoCandidates,
    #[error("{target} FPS is outside the reachable range [{lo}, {hi}]")]
    Unreachable { target: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    pub name: String,
    pub idle_mw: f64,
    pub active_mw: f64,
    pub concurrency: f64,
}

impl Engine {
    pub fn is_dla(&self) -> bool {
        self.name.starts_with("DLA")
    }

    pub fn power(&self, utilization: f64) -> f64 {
        self.idle_mw + utilization * (self.active_mw - self.idle_mw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub engine: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub name: String,
    pub segments: Vec<Segment>,
    pub memcpy_ms: f64,
    /// Host-side work per execution.
    pub cpu_ms: f64,
}

impl StageModel {
    pub fn primary(&self) -> &str {
        &self.segments[0].engine
    }

    /// Adjacent segment pairs on different engines.
    pub fn transitions(&self) -> usize {
        self.segments
            .windows(2)
            .filter(|w| w[0].engine != w[1].engine)
            .count()
    }

    /// Transitions with `engine` on either side.
    pub fn transitions_touching(&self, engine: &str) -> usize {
        self.segments
            .windows(2)
            .filter(|w| w[0].engine != w[1].engine && (w[0].engine == engine || w[1].engine == engine))
            .count()
    }

    pub fn busy_on(&self, engine: &str) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.engine == engine)
            .map(|s| s.latency_ms)
            .sum()
    }
}

/// Segment latencies plus one memcpy per engine boundary.
pub fn stage_latency(s: &StageModel) -> f64 {
    s.segments.iter().map(|x| x.latency_ms).sum::<f64>() + s.transitions() as f64 * s.memcpy_ms
}

/// Calibrated cost of running one stage with a given primary engine.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub latency_ms: f64,
    pub fallback_engine: Option<String>,
    pub fallback_ms: f64,
    /// Engine boundaries crossed; the segments alternate starting on the
    /// primary engine, so an odd count ends on a fallback segment.
    pub transitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub engines: Vec<Engine>,
    /// Keyed by `(stage, primary engine)`.
    pub placements: BTreeMap<(String, String), Placement>,
    pub stage_cpu_ms: BTreeMap<String, f64>,
    pub memcpy_ms: f64,
    pub cpu_mgmt_coeff: f64,
    pub dla_dispatch_ms: f64,
}

// latency, fallback engine, fallback ms, transitions
type PartialPlacement = (Option<f64>, Option<String>, Option<f64>, Option<usize>);

impl Calibration {
    pub fn engine(&self, name: &str) -> Result<&Engine, PipesimError> {
        self.engines
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| PipesimError::UnknownEngine(name.to_string()))
    }

    /// Expands a placement into alternating segments with the work split
    /// evenly within each engine.
    pub fn stage_model(&self, stage: &str, engine: &str) -> Result<StageModel, PipesimError> {
        let p = self
            .placements
            .get(&(stage.to_string(), engine.to_string()))
            .ok_or_else(|| PipesimError::UnknownPlacement {
                stage: stage.to_string(),
                engine: engine.to_string(),
            })?;
        let t = p.transitions;
        let n_primary = t / 2 + 1;
        let n_fallback = t.div_ceil(2);
        let fallback = p.fallback_engine.clone().unwrap_or_default();
        let segments = (0..=t)
            .map(|i| {
                if i % 2 == 0 {
                    Segment {
                        engine: engine.to_string(),
                        latency_ms: p.latency_ms / n_primary as f64,
                    }
                } else {
                    Segment {
                        engine: fallback.clone(),
                        latency_ms: p.fallback_ms / n_fallback as f64,
                    }
                }
            })
            .collect();
        Ok(StageModel {
            name: stage.to_string(),
            segments,
            memcpy_ms: self.memcpy_ms,
            cpu_ms: self.stage_cpu_ms.get(stage).copied().unwrap_or(0.0),
        })
    }

    pub fn validate(&self) -> Result<(), PipesimError> {
        let bad = |m: String| Err(PipesimError::Invalid(m));
        for e in &self.engines {
            if !(e.idle_mw >= 0.0 && e.active_mw >= e.idle_mw && e.active_mw.is_finite()) {
                return bad(format!("engine {} needs 0 <= idle <= active", e.name));
            }
            if !(e.concurrency >= 1.0 && e.concurrency.is_finite()) {
                return bad(format!("engine {} concurrency must be >= 1", e.name));
            }
        }
        for ((s, e), p) in &self.placements {
            self.engine(e)?;
            if !(p.latency_ms > 0.0 && p.latency_ms.is_finite()) {
                return bad(format!("stage {s} on {e}: latency must be > 0"));
            }
            match (&p.fallback_engine, p.transitions) {
                (None, 0) => {}
                (Some(f), t) if t > 0 => {
                    self.engine(f)?;
                    if f == e {
                        return bad(format!("stage {s} on {e}: fallback on the same engine"));
                    }
                    if !(p.fallback_ms > 0.0 && p.fallback_ms.is_finite()) {
                        return bad(format!("stage {s} on {e}: fallback_ms must be > 0"));
                    }
                }
                _ => return bad(format!("stage {s} on {e}: fallback engine and transitions disagree")),
            }
        }
        for (name, v) in [
            ("memcpy_ms", self.memcpy_ms),
            ("cpu_mgmt_coeff", self.cpu_mgmt_coeff),
            ("dla_dispatch_ms", self.dla_dispatch_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        for (s, v) in &self.stage_cpu_ms {
            if !(*v >= 0.0 && v.is_finite()) {
                return bad(format!("stage {s} cpu_ms must be >= 0"));
            }
        }
        self.engine(CPU)?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, PipesimError> {
        let mut engines: BTreeMap<String, [Option<f64>; 3]> = BTreeMap::new();
        let mut engine_order = Vec::new();
        let mut placements: BTreeMap<(String, String), PartialPlacement> = BTreeMap::new();
        let mut stage_cpu_ms = BTreeMap::new();
        let (mut memcpy, mut coeff, mut dispatch) = (None, None, None);

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let err = |msg: String| PipesimError::Parse { line, msg };
            let (key, value) = s
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected key = value".into()))?;
            let num = || -> Result<f64, PipesimError> {
                let v: f64 = value.parse().map_err(|_| err(format!("{key}: not a number: {value}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("{key}: not finite")))
                }
            };
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["memcpy_ms"] => memcpy = Some(num()?),
                ["cpu_mgmt_coeff"] => coeff = Some(num()?),
                ["dla_dispatch_ms"] => dispatch = Some(num()?),
                ["engine", name, field] => {
                    if !engines.contains_key(*name) {
                        engine_order.push(name.to_string());
                    }
                    let slot = engines.entry(name.to_string()).or_default();
                    let idx = match *field {
                        "idle_mw" => 0,
                        "active_mw" => 1,
                        "concurrency" => 2,
                        _ => return Err(err(format!("unknown key {key}"))),
                    };
                    slot[idx] = Some(num()?);
                }
                ["stage", stage, "cpu_ms"] => {
                    stage_cpu_ms.insert(stage.to_string(), num()?);
                }
                ["stage", stage, engine, field] => {
                    let p = placements
                        .entry((stage.to_string(), engine.to_string()))
                        .or_default();
                    match *field {
                        "latency_ms" => p.0 = Some(num()?),
                        "fallback_engine" => p.1 = Some(value.to_string()),
                        "fallback_ms" => p.2 = Some(num()?),
                        "transitions" => {
                            p.3 = Some(value.parse().map_err(|_| err(format!("{key}: not a count: {value}")))?)
                        }
                        _ => return Err(err(format!("unknown key {key}"))),
                    }
                }
                _ => return Err(err(format!("unknown key {key}"))),
            }
        }

        let engines = engine_order
            .into_iter()
            .map(|name| {
                let v = engines[&name];
                let get = |i: usize, f: &str| v[i].ok_or_else(|| PipesimError::Missing(format!("engine.{name}.{f}")));
                Ok(Engine {
                    idle_mw: get(0, "idle_mw")?,
                    active_mw: get(1, "active_mw")?,
                    concurrency: get(2, "concurrency")?,
                    name,
                })
            })
            .collect::<Result<Vec<_>, PipesimError>>()?;
        let placements = placements
            .into_iter()
            .map(|((s, e), (lat, fe, fms, t))| {
                let latency_ms = lat.ok_or_else(|| PipesimError::Missing(format!("stage.{s}.{e}.latency_ms")))?;
                let p = Placement {
                    latency_ms,
                    fallback_engine: fe,
                    fallback_ms: fms.unwrap_or(0.0),
                    transitions: t.unwrap_or(0),
                };
                Ok(((s, e), p))
            })
            .collect::<Result<BTreeMap<_, _>, PipesimError>>()?;
        let cal = Self {
            engines,
            placements,
            stage_cpu_ms,
            memcpy_ms: memcpy.ok_or_else(|| PipesimError::Missing("memcpy_ms".into()))?,
            cpu_mgmt_coeff: coeff.ok_or_else(|| PipesimError::Missing("cpu_mgmt_coeff".into()))?,
            dla_dispatch_ms: dispatch.unwrap_or(0.0),
        };
        cal.validate()?;
        Ok(cal)
    }

    /// Text form read back exactly by [`Calibration::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "memcpy_ms = {:?}", self.memcpy_ms);
        let _ = writeln!(s, "cpu_mgmt_coeff = {:?}", self.cpu_mgmt_coeff);
        let _ = writeln!(s, "dla_dispatch_ms = {:?}", self.dla_dispatch_ms);
        for e in &self.engines {
            let _ = writeln!(s, "engine.{}.idle_mw = {:?}", e.name, e.idle_mw);
            let _ = writeln!(s, "engine.{}.active_mw = {:?}", e.name, e.active_mw);
            let _ = writeln!(s, "engine.{}.concurrency = {:?}", e.name, e.concurrency);
        }
        for ((stage, engine), p) in &self.placements {
            let k = format!("stage.{stage}.{engine}");
            let _ = writeln!(s, "{k}.latency_ms = {:?}", p.latency_ms);
            if let Some(f) = &p.fallback_engine {
                let _ = writeln!(s, "{k}.fallback_engine = {f}");
                let _ = writeln!(s, "{k}.fallback_ms = {:?}", p.fallback_ms);
                let _ = writeln!(s, "{k}.transitions = {}", p.transitions);
            }
        }
        for (stage, v) in &self.stage_cpu_ms {
            let _ = writeln!(s, "stage.{stage}.cpu_ms = {v:?}");
        }
        s
    }
}

/// Stage name to primary engine name.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub name: String,
    pub stages: Vec<(String, String)>,
}

impl Allocation {
    pub fn new(name: &str, stages: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_string(),
            stages: stages
                .iter()
                .map(|(s, e)| (s.to_string(), e.to_string()))
                .collect(),
        }
    }

    pub fn with_stage(mut self, stage: &str, engine: &str) -> Self {
        self.stages.retain(|(s, _)| s != stage);
        self.stages.push((stage.to_string(), engine.to_string()));
        self
    }
}

/// The four detect/recognize placements of the allocation study, in order.
pub fn placement_runs() -> Vec<Allocation> {
    [("GPU", "GPU"), ("DLA0", "GPU"), ("GPU", "DLA1"), ("DLA0", "DLA1")]
        .iter()
        .enumerate()
        .map(|(i, (d, r))| {
            Allocation::new(
                &format!("run{}", i + 1),
                &[("decode", "NVDEC"), ("detect", d), ("recognize", r)],
            )
        })
        .collect()
}

/// Run 2 plus tracking on the video compositor.
pub fn full_pipeline() -> Allocation {
    let mut a = placement_runs().swap_remove(1).with_stage("track", "VIC");
    a.name = "full".into();
    a
}

/// Decode and detect on the GPU, nothing else.
pub fn detection_baseline() -> Allocation {
    Allocation::new("detect-only", &[("decode", "NVDEC"), ("detect", "GPU")])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub allocation: String,
    pub gating_fraction: f64,
    /// Effective (gated) latency per stage.
    pub stage_latency_ms: BTreeMap<String, f64>,
    /// Sum of ungated stage latencies.
    pub end_to_end_ms: f64,
    pub engine_load_ms: BTreeMap<String, f64>,
    pub max_load_ms: f64,
    pub throughput_fps: f64,
    /// Period the utilizations are measured against.
    pub reference_ms: f64,
    pub utilization: BTreeMap<String, f64>,
    pub power_mw: BTreeMap<String, f64>,
    pub total_power_mw: f64,
}

fn check_gating(g: f64) -> Result<(), PipesimError> {
    if (0.0..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(PipesimError::GatingFraction(g))
    }
}

/// Per-engine busy time, per-stage effective latency, and their sum.
pub type Loads = (BTreeMap<String, f64>, BTreeMap<String, f64>, f64);

/// Per-engine busy time per frame.
pub fn engine_loads(
    cal: &Calibration,
    alloc: &Allocation,
    gating_fraction: f64,
) -> Result<Loads, PipesimError> {
    check_gating(gating_fraction)?;
    let mut loads: BTreeMap<String, f64> = cal.engines.iter().map(|e| (e.name.clone(), 0.0)).collect();
    let mut stage_lat = BTreeMap::new();
    let mut end_to_end = 0.0;
    for (stage, engine) in &alloc.stages {
        let m = cal.stage_model(stage, engine)?;
        let k = if stage == GATED_STAGE { gating_fraction } else { 1.0 };
        let lat = stage_latency(&m);
        end_to_end += lat;
        stage_lat.insert(stage.clone(), k * lat);

        let primary = cal.engine(m.primary())?;
        *loads.get_mut(&primary.name).expect("known") += k * lat / primary.concurrency;
        let mut others: Vec<&str> = m
            .segments
            .iter()
            .map(|s| s.engine.as_str())
            .filter(|e| *e != primary.name)
            .collect();
        others.sort();
        others.dedup();
        for name in others {
            let e = cal.engine(name)?;
            let busy = m.busy_on(name) + m.transitions_touching(name) as f64 * m.memcpy_ms;
            *loads.get_mut(name).expect("known") += k * busy / e.concurrency;
        }
        let dispatch = if primary.is_dla() { cal.dla_dispatch_ms } else { 0.0 };
        let host = cal.cpu_mgmt_coeff * m.transitions() as f64 + dispatch + m.cpu_ms;
        let cpu = cal.engine(CPU)?;
        *loads.get_mut(CPU).expect("known") += k * host / cpu.concurrency;
    }
    Ok((loads, stage_lat, end_to_end))
}

/// Throughput, utilization and power. Utilization is measured against
/// `reference_ms` when given, otherwise against the allocation's own
/// ungated bottleneck period, i.e. a fixed input frame rate equal to the
/// ungated throughput.
pub fn pipeline_report(
    cal: &Calibration,
    alloc: &Allocation,
    gating_fraction: f64,
    reference_ms: Option<f64>,
) -> Result<PipelineReport, PipesimError> {
    let (loads, stage_latency_ms, end_to_end_ms) = engine_loads(cal, alloc, gating_fraction)?;
    let max_load_ms = loads.values().fold(0.0_f64, |m, v| m.max(*v));
    if max_load_ms <= 0.0 {
        return Err(PipesimError::Invalid("allocation has no work".into()));
    }
    let reference_ms = match reference_ms {
        Some(r) => r,
        None => {
            let (ungated, _, _) = engine_loads(cal, alloc, 1.0)?;
            ungated.values().fold(0.0_f64, |m, v| m.max(*v))
        }
    };
    let utilization: BTreeMap<String, f64> = loads
        .iter()
        .map(|(e, l)| (e.clone(), (l / reference_ms).clamp(0.0, 1.0)))
        .collect();
    let power_mw = pipeline_power(cal, &utilization)?;
    let total_power_mw = power_mw.values().sum();
    Ok(PipelineReport {
        allocation: alloc.name.clone(),
        gating_fraction,
        stage_latency_ms,
        end_to_end_ms,
        engine_load_ms: loads,
        max_load_ms,
        throughput_fps: 1000.0 / max_load_ms,
        reference_ms,
        utilization,
        power_mw,
        total_power_mw,
    })
}

pub fn pipeline_throughput(cal: &Calibration, alloc: &Allocation, gating_fraction: f64) -> Result<PipelineReport, PipesimError> {
    pipeline_report(cal, alloc, gating_fraction, None)
}

/// `idle + u (active - idle)` for every engine; engines missing from
/// `utilization` sit idle.
pub fn pipeline_power(cal: &Calibration, utilization: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>, PipesimError> {
    for name in utilization.keys() {
        cal.engine(name)?;
    }
    Ok(cal
        .engines
        .iter()
        .map(|e| (e.name.clone(), e.power(utilization.get(&e.name).copied().unwrap_or(0.0))))
        .collect())
}

/// Orders candidates by throughput (descending) then total power
/// (ascending), keeping input order on ties. Power is compared at a common
/// input rate: the slowest candidate's ungated throughput.
pub fn rank_allocations(
    cal: &Calibration,
    candidates: &[Allocation],
    gating_fraction: f64,
) -> Result<Vec<PipelineReport>, PipesimError> {
    if candidates.is_empty() {
        return Err(PipesimError::NoCandidates);
    }
    let mut reference: f64 = 0.0;
    for a in candidates {
        let (l, _, _) = engine_loads(cal, a, 1.0)?;
        reference = reference.max(l.values().fold(0.0_f64, |m, v| m.max(*v)));
    }
    let mut reports = candidates
        .iter()
        .map(|a| pipeline_report(cal, a, gating_fraction, Some(reference)))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| {
        b.throughput_fps
            .total_cmp(&a.throughput_fps)
            .then(a.total_power_mw.total_cmp(&b.total_power_mw))
    });
    Ok(reports)
}

/// Gating fraction at which the allocation reaches `target_fps`, by
/// bisection on the (non-increasing) throughput curve. Where the curve is
/// flat the largest such fraction is returned.
pub fn solve_gating_fraction(cal: &Calibration, alloc: &Allocation, target_fps: f64) -> Result<f64, PipesimError> {
    let fps = |g: f64| engine_loads(cal, alloc, g).map(|(l, _, _)| 1000.0 / l.values().fold(0.0_f64, |m, v| m.max(*v)));
    let (hi_fps, lo_fps) = (fps(0.0)?, fps(1.0)?);
    if !(target_fps <= hi_fps && target_fps >= lo_fps) {
        return Err(PipesimError::Unreachable {
            target: target_fps,
            lo: lo_fps,
            hi: hi_fps,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fps(mid)? >= target_fps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(lo)
}

/// Measured timings and modelling assumptions the calibration is
/// fitted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    /// Effective per-frame times of the four allocation runs, ms.
    pub run_ms: [f64; 4],
    pub detect_dla_ms: f64,
    pub recognize_gpu_ms: f64,
    /// Engine-boundary crossings of recognition on a DLA core.
    pub recognize_dla_transitions: usize,
    /// Share of recognition that falls back to the GPU when hosted on a DLA, ms.
    pub recognize_fallback_ms: f64,
    pub recognize_cpu_ms: f64,
    pub decode_ms: f64,
    pub track_vic_ms: f64,
    pub memcpy_ms: f64,
    pub dla_dispatch_ms: f64,
    pub dla_concurrency: f64,
    /// Full-pipeline ungated throughput.
    pub full_fps: f64,
    /// GPU power drop from moving detection to a DLA core.
    pub gpu_saving_mw: f64,
    /// Detection-only baseline power.
    pub baseline_gpu_mw: f64,
    pub baseline_cpu_mw: f64,
    pub cpu_span_mw: f64,
    pub dla_mw: (f64, f64),
    pub vic_mw: (f64, f64),
    pub nvdec_mw: (f64, f64),
}

impl Default for Anchors {
    fn default() -> Self {
        Self {
            run_ms: [5.2, 4.9, 15.8, 16.1],
            detect_dla_ms: 5.6,
            recognize_gpu_ms: 11.7,
            recognize_dla_transitions: 56,
            recognize_fallback_ms: 7.0,
            recognize_cpu_ms: 3.0,
            decode_ms: 2.0,
            track_vic_ms: 1.0,
            memcpy_ms: 0.1,
            dla_dispatch_ms: 0.4,
            dla_concurrency: 2.0,
            full_fps: 202.0,
            gpu_saving_mw: 300.0,
            baseline_gpu_mw: 3506.0,
            baseline_cpu_mw: 1342.0,
            cpu_span_mw: 3000.0,
            dla_mw: (50.0, 800.0),
            vic_mw: (20.0, 400.0),
            nvdec_mw: (20.0, 300.0),
        }
    }
}

/// Closed-form calibration:
///
/// * GPU concurrency from run 2, which is GPU-bound on recognition alone.
/// * GPU detection latency from the run 1 / run 2 difference.
/// * DLA recognition latency so that run 3 is DLA-bound at its time.
/// * CPU management cost per crossing so that run 4 is CPU-bound at its time.
/// * The GPU tail of tracking so that the full pipeline runs at `full_fps`.
/// * GPU power span from the run 1 / run 2 GPU power difference at the
///   slowest run's rate; idle powers from the detection-only baseline.
pub fn fit(a: &Anchors) -> Calibration {
    let [r1, r2, r3, r4] = a.run_ms;
    let c_gpu = a.recognize_gpu_ms / r2;
    let detect_gpu_ms = (r1 - r2) * c_gpu;
    let t = a.recognize_dla_transitions;
    let recognize_dla_ms = a.dla_concurrency * r3 - t as f64 * a.memcpy_ms - a.recognize_fallback_ms;
    let cpu_mgmt_coeff = (r4 - 2.0 * a.dla_dispatch_ms - a.recognize_cpu_ms) / t as f64;
    let track_gpu_ms = c_gpu * 1000.0 / a.full_fps - a.recognize_gpu_ms - a.memcpy_ms;

    let gpu_span = a.gpu_saving_mw * r4 / (r1 - r2);
    // Detection-only baseline: the decoder is the bottleneck.
    let baseline_gpu_util = (detect_gpu_ms / c_gpu) / a.decode_ms;
    let gpu_idle = a.baseline_gpu_mw - baseline_gpu_util * gpu_span;

    let engine = |name: &str, idle: f64, active: f64, c: f64| Engine {
        name: name.into(),
        idle_mw: idle,
        active_mw: active,
        concurrency: c,
    };
    let engines = vec![
        engine("GPU", gpu_idle, gpu_idle + gpu_span, c_gpu),
        engine("DLA0", a.dla_mw.0, a.dla_mw.1, a.dla_concurrency),
        engine("DLA1", a.dla_mw.0, a.dla_mw.1, a.dla_concurrency),
        engine("VIC", a.vic_mw.0, a.vic_mw.1, 1.0),
        engine("NVDEC", a.nvdec_mw.0, a.nvdec_mw.1, 1.0),
        engine(CPU, a.baseline_cpu_mw, a.baseline_cpu_mw + a.cpu_span_mw, 1.0),
    ];
    let simple = |ms: f64| Placement {
        latency_ms: ms,
        fallback_engine: None,
        fallback_ms: 0.0,
        transitions: 0,
    };
    let mut placements = BTreeMap::new();
    let mut put = |s: &str, e: &str, p: Placement| {
        placements.insert((s.to_string(), e.to_string()), p);
    };
    put("decode", "NVDEC", simple(a.decode_ms));
    put("detect", "GPU", simple(detect_gpu_ms));
    put("detect", "DLA0", simple(a.detect_dla_ms));
    put("detect", "DLA1", simple(a.detect_dla_ms));
    put("recognize", "GPU", simple(a.recognize_gpu_ms));
    for dla in ["DLA0", "DLA1"] {
        put(
            "recognize",
            dla,
            Placement {
                latency_ms: recognize_dla_ms,
                fallback_engine: Some("GPU".into()),
                fallback_ms: a.recognize_fallback_ms,
                transitions: t,
            },
        );
    }
    put(
        "track",
        "VIC",
        Placement {
            latency_ms: a.track_vic_ms,
            fallback_engine: Some("GPU".into()),
            fallback_ms: track_gpu_ms,
            transitions: 1,
        },
    );
    Calibration {
        engines,
        placements,
        stage_cpu_ms: BTreeMap::from([("recognize".to_string(), a.recognize_cpu_ms)]),
        memcpy_ms: a.memcpy_ms,
        cpu_mgmt_coeff,
        dla_dispatch_ms: a.dla_dispatch_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal() -> Calibration {
        fit(&Anchors::default())
    }

    #[test]
    fn stage_latency_examples() {
        let seg = |e: &str, ms: f64| Segment {
            engine: e.into(),
            latency_ms: ms,
        };
        let single = StageModel {
            name: "detect".into(),
            segments: vec![seg("DLA0", 5.6)],
            memcpy_ms: 0.1,
            cpu_ms: 0.0,
        };
        assert_eq!(stage_latency(&single), 5.6);
        let split = StageModel {
            segments: vec![seg("GPU", 5.0), seg("GPU", 6.7)],
            ..single.clone()
        };
        assert!((stage_latency(&split) - 11.7).abs() < 1e-12);
        let m = cal().stage_model("recognize", "DLA1").unwrap();
        assert_eq!(m.transitions(), 56);
        let seg_sum: f64 = m.segments.iter().map(|s| s.latency_ms).sum();
        assert!((stage_latency(&m) - seg_sum - 5.6).abs() < 1e-9);
    }

    #[test]
    fn run_times_and_order() {
        let c = cal();
        let want = [5.2, 4.9, 15.8, 16.1];
        for (a, w) in placement_runs().iter().zip(want) {
            let r = pipeline_throughput(&c, a, 1.0).unwrap();
            assert!((r.max_load_ms - w).abs() < 1e-9, "{}: {}", a.name, r.max_load_ms);
        }
        let ranked = rank_allocations(&c, &placement_runs(), 1.0).unwrap();
        let names: Vec<&str> = ranked.iter().map(|r| r.allocation.as_str()).collect();
        assert_eq!(names, ["run2", "run1", "run3", "run4"]);
        let min_power = ranked.iter().map(|r| r.total_power_mw).fold(f64::INFINITY, f64::min);
        assert_eq!(ranked[0].total_power_mw, min_power);
    }

    #[test]
    fn gating_reaches_298() {
        let c = cal();
        let full = full_pipeline();
        let ungated = pipeline_throughput(&c, &full, 1.0).unwrap();
        assert!((ungated.throughput_fps - 202.0).abs() < 1e-6);
        let g = solve_gating_fraction(&c, &full, 298.0).unwrap();
        let r = pipeline_throughput(&c, &full, g).unwrap();
        assert!((r.throughput_fps - 298.0).abs() < 1e-6);
        assert!(r.total_power_mw < ungated.total_power_mw);
        assert!(r.total_power_mw / ungated.total_power_mw <= 0.75);
    }

    #[test]
    fn baseline_power() {
        let r = pipeline_throughput(&cal(), &detection_baseline(), 1.0).unwrap();
        assert!((r.power_mw["GPU"] - 3506.0).abs() < 1e-9);
        assert_eq!(r.power_mw[CPU], 1342.0);
    }

    #[test]
    fn idle_power_sum() {
        let c = cal();
        let p = pipeline_power(&c, &BTreeMap::new()).unwrap();
        let idle: f64 = c.engines.iter().map(|e| e.idle_mw).sum();
        assert_eq!(p.values().sum::<f64>(), idle);
    }

    #[test]
    fn single_and_tied_candidates() {
        let c = cal();
        let one = rank_allocations(&c, &placement_runs()[..1], 1.0).unwrap();
        assert_eq!(one[0].allocation, "run1");
        let mut a = placement_runs()[0].clone();
        let mut b = a.clone();
        a.name = "a".into();
        b.name = "b".into();
        let r = rank_allocations(&c, &[a, b], 1.0).unwrap();
        assert_eq!((r[0].allocation.as_str(), r[1].allocation.as_str()), ("a", "b"));
        assert_eq!(rank_allocations(&c, &[], 1.0), Err(PipesimError::NoCandidates));
    }

    #[test]
    fn text_round_trip() {
        let c = cal();
        assert_eq!(Calibration::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let e = Calibration::parse("memcpy_ms = 0.1\nbogus = 3\n").unwrap_err();
        assert_eq!(
            e,
            PipesimError::Parse {
                line: 2,
                msg: "unknown key bogus".into()
            }
        );
        assert!(matches!(
            Calibration::parse("memcpy_ms = x\n"),
            Err(PipesimError::Parse { line: 1, .. })
        ));
        assert!(matches!(Calibration::parse("cpu_mgmt_coeff = 1\n"), Err(PipesimError::Missing(_))));
    }

    #[test]
    fn bad_gating_fraction() {
        assert_eq!(
            pipeline_throughput(&cal(), &full_pipeline(), 1.5).unwrap_err(),
            PipesimError::GatingFraction(1.5)
        );
    }
}
