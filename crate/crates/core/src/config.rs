//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::association::AssociationMode;
use crate::gate::GateParams;
use crate::tracker_dcf::DcfParams;
use crate::tracker_iou::IouParams;
use crate::tracker_sort::SortParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrackerKind {
    #[default]
    Iou,
    Sort,
    Dcf,
}

impl TrackerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackerKind::Iou => "iou",
            TrackerKind::Sort => "sort",
            TrackerKind::Dcf => "dcf",
        }
    }
}

impl FromStr for TrackerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "iou" => Ok(Self::Iou),
            "sort" => Ok(Self::Sort),
            "dcf" => Ok(Self::Dcf),
            _ => Err(format!("unknown tracker kind {s:?} (iou, sort, dcf)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub tracker: TrackerKind,
    pub iou: IouParams,
    pub sort: SortParams,
    pub dcf: DcfParams,
    pub gate: GateParams,
    /// Calibration path as written in the file; relative paths are resolved
    /// by the caller.
    pub calibration: Option<String>,
    pub seed: u64,
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_mode(s: &str) -> Result<AssociationMode, String> {
    match s {
        "optimal" | "hungarian" => Ok(AssociationMode::Optimal),
        "greedy" => Ok(AssociationMode::Greedy),
        _ => Err(format!("unknown association {s:?} (optimal, greedy)")),
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse {s:?}"))
}

fn real(s: &str) -> Result<f64, String> {
    let v: f64 = num(s)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let fail = |msg: String| ConfigError::Line { line, msg };
            let (key, value) = s
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fail("expected key = value".into()))?;
            c.set(key, value).map_err(|m| fail(format!("{key}: {m}")))?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "tracker.kind" => self.tracker = v.parse()?,
            "tracker.iou_min" => {
                let x = real(v)?;
                self.iou.iou_min = x;
                self.sort.iou_min = x;
                self.dcf.iou_min = x;
            }
            "tracker.max_misses" => {
                let x: u32 = num(v)?;
                self.iou.max_misses = x;
                self.sort.max_misses = x;
            }
            "tracker.min_confidence" => self.iou.min_confidence = real(v)?,
            "tracker.association" => {
                let m = parse_mode(v)?;
                self.iou.mode = m;
                self.sort.mode = m;
                self.dcf.mode = m;
            }
            "sort.min_hits" => self.sort.min_hits = num(v)?,
            "sort.q_position" => self.sort.noise.q_position = real(v)?,
            "sort.q_velocity" => self.sort.noise.q_velocity = real(v)?,
            "sort.measurement_scale" => self.sort.noise.measurement_scale = real(v)?,
            "sort.initial_velocity_var" => self.sort.noise.initial_velocity_var = real(v)?,
            "dcf.lambda" => self.dcf.lambda = real(v)?,
            "dcf.sigma" => self.dcf.sigma = if v == "auto" { None } else { Some(real(v)?) },
            "dcf.learning_rate" => self.dcf.learning_rate = real(v)?,
            "dcf.psr_track_min" => self.dcf.psr_track_min = real(v)?,
            "dcf.psr_revive_min" => self.dcf.psr_revive_min = real(v)?,
            "dcf.search_scale" => self.dcf.search_scale = real(v)?,
            "dcf.lost_retention_frames" => self.dcf.lost_retention_frames = num(v)?,
            "dcf.max_patch_size" => self.dcf.max_patch_size = num(v)?,
            "gate.max_dist" => self.gate.max_dist = real(v)?,
            "gate.retry_unknown" => self.gate.retry_unknown = parse_bool(v)?,
            "pipesim.calibration" => self.calibration = Some(v.to_string()),
            "seed" => self.seed = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Effective settings of the selected tracker and the gate.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let mode = |m: AssociationMode| match m {
            AssociationMode::Optimal => "optimal".to_string(),
            AssociationMode::Greedy => "greedy".to_string(),
        };
        put("tracker.kind", self.tracker.as_str().into());
        match self.tracker {
            TrackerKind::Iou => {
                put("tracker.iou_min", format!("{:?}", self.iou.iou_min));
                put("tracker.max_misses", self.iou.max_misses.to_string());
                put("tracker.min_confidence", format!("{:?}", self.iou.min_confidence));
                put("tracker.association", mode(self.iou.mode));
            }
            TrackerKind::Sort => {
                let s = &self.sort;
                put("tracker.iou_min", format!("{:?}", s.iou_min));
                put("tracker.max_misses", s.max_misses.to_string());
                put("tracker.association", mode(s.mode));
                put("sort.min_hits", s.min_hits.to_string());
                put("sort.q_position", format!("{:?}", s.noise.q_position));
                put("sort.q_velocity", format!("{:?}", s.noise.q_velocity));
                put("sort.measurement_scale", format!("{:?}", s.noise.measurement_scale));
                put("sort.initial_velocity_var", format!("{:?}", s.noise.initial_velocity_var));
            }
            TrackerKind::Dcf => {
                let d = &self.dcf;
                put("tracker.iou_min", format!("{:?}", d.iou_min));
                put("tracker.association", mode(d.mode));
                put("dcf.lambda", format!("{:?}", d.lambda));
                put("dcf.sigma", d.sigma.map_or("auto".into(), |s| format!("{s:?}")));
                put("dcf.learning_rate", format!("{:?}", d.learning_rate));
                put("dcf.psr_track_min", format!("{:?}", d.psr_track_min));
                put("dcf.psr_revive_min", format!("{:?}", d.psr_revive_min));
                put("dcf.search_scale", format!("{:?}", d.search_scale));
                put("dcf.lost_retention_frames", d.lost_retention_frames.to_string());
                put("dcf.max_patch_size", d.max_patch_size.to_string());
            }
        }
        put("gate.max_dist", format!("{:?}", self.gate.max_dist));
        put("gate.retry_unknown", self.gate.retry_unknown.to_string());
        if let Some(c) = &self.calibration {
            put("pipesim.calibration", c.clone());
        }
        put("seed", self.seed.to_string());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let c = RunConfig::parse(
            "# run\ntracker.kind = dcf\ntracker.iou_min = 0.4\ndcf.psr_revive_min = 9\n\nseed = 3\ngate.retry_unknown = true\n",
        )
        .unwrap();
        assert_eq!(c.tracker, TrackerKind::Dcf);
        assert_eq!(c.dcf.iou_min, 0.4);
        assert_eq!(c.dcf.psr_revive_min, 9.0);
        assert_eq!(c.seed, 3);
        assert!(c.gate.retry_unknown);
        assert_eq!(c.echo()["dcf.sigma"], "auto");
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse("seed = 1\n\ntracker.speed = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Line {
                line: 3,
                msg: "tracker.speed: unknown key".into()
            }
        );
        assert!(RunConfig::parse("tracker.kind = kcf\n").is_err());
        assert!(RunConfig::parse("seed\n").is_err());
        assert!(RunConfig::parse("dcf.lambda = nan\n").is_err());
    }
}
