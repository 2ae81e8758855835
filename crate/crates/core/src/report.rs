//! Run report and its JSON form: sorted keys, at most nine significant
//! digits per number, no NaN or infinity.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Number, Value};
use thiserror::Error;

use crate::geometry::{TrackEvents, TrackId};
use crate::io::{write_text, IoError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0} is not a finite number")]
    NonFinite(String),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameRecord {
    pub events: TrackEvents,
    /// Identities looked up this frame.
    pub recognized: Vec<(TrackId, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSummary {
    pub per_engine: BTreeMap<String, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub config_echo: BTreeMap<String, String>,
    pub frames: u32,
    pub tracks_created: u64,
    /// Needs ground truth.
    pub id_switches: Option<usize>,
    /// Needs a gallery and embeddings.
    pub recognition_calls: Option<usize>,
    pub gating_reduction: Option<f64>,
    /// Needs a pipeline calibration.
    pub fps_simulated: Option<f64>,
    pub power_mw: Option<PowerSummary>,
    pub events: Vec<FrameRecord>,
}

/// Rounds to nine significant digits.
pub fn round9(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn number(field: &str, x: f64) -> Result<Value, ReportError> {
    if !x.is_finite() {
        return Err(ReportError::NonFinite(field.to_string()));
    }
    let r = round9(x);
    // Integral values print without a fraction.
    if r.fract() == 0.0 && r.abs() < 1e15 {
        return Ok(Value::Number(Number::from(r as i64)));
    }
    Ok(Value::Number(Number::from_f64(r).expect("finite")))
}

fn ids(v: &[TrackId]) -> Value {
    Value::Array(v.iter().map(|i| json!(i.0)).collect())
}

impl RunReport {
    pub fn to_json(&self) -> Result<Value, ReportError> {
        let mut m = Map::new();
        m.insert(
            "config_echo".into(),
            Value::Object(
                self.config_echo
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                    .collect(),
            ),
        );
        m.insert("frames".into(), json!(self.frames));
        m.insert("tracks_created".into(), json!(self.tracks_created));
        m.insert("id_switches".into(), json!(self.id_switches));
        m.insert("recognition_calls".into(), json!(self.recognition_calls));
        m.insert(
            "gating_reduction".into(),
            self.gating_reduction
                .map(|x| number("gating_reduction", x))
                .transpose()?
                .unwrap_or(Value::Null),
        );
        m.insert(
            "fps_simulated".into(),
            self.fps_simulated
                .map(|x| number("fps_simulated", x))
                .transpose()?
                .unwrap_or(Value::Null),
        );
        let power = match &self.power_mw {
            None => Value::Null,
            Some(p) => {
                let per: Map<String, Value> = p
                    .per_engine
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), number(&format!("power_mw.per_engine.{k}"), *v)?)))
                    .collect::<Result<_, ReportError>>()?;
                json!({ "per_engine": per, "total": number("power_mw.total", p.total)? })
            }
        };
        m.insert("power_mw".into(), power);
        let events: Vec<Value> = self
            .events
            .iter()
            .map(|r| {
                let e = &r.events;
                json!({
                    "frame": e.frame,
                    "new": ids(&e.new_ids),
                    "continued": ids(&e.continued_ids),
                    "revived": ids(&e.revived_ids),
                    "lost": ids(&e.lost_ids),
                    "terminated": ids(&e.terminated_ids),
                    "assignments": e.assignments.iter().map(|(d, id)| json!([d, id.0])).collect::<Vec<_>>(),
                    "recognized": r.recognized.iter().map(|(id, l)| json!([id.0, l])).collect::<Vec<_>>(),
                })
            })
            .collect();
        m.insert("events".into(), Value::Array(events));
        Ok(Value::Object(m))
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json_string(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(&self.to_json()?)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_report(r: &RunReport, path: &Path) -> Result<(), ReportError> {
    write_text(path, &r.to_json_string()?)?;
    Ok(())
}

/// Re-serializes arbitrary report JSON in canonical form.
pub fn canonical_json(text: &str) -> Result<String, ReportError> {
    let v: Value = serde_json::from_str(text)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_bytes() {
        let s = RunReport::default().to_json_string().unwrap();
        let want = "{\n  \"config_echo\": {},\n  \"events\": [],\n  \"fps_simulated\": null,\n  \"frames\": 0,\n  \"gating_reduction\": null,\n  \"id_switches\": null,\n  \"power_mw\": null,\n  \"recognition_calls\": null,\n  \"tracks_created\": 0\n}\n";
        assert_eq!(s, want);
    }

    #[test]
    fn nan_rejected() {
        let r = RunReport {
            fps_simulated: Some(f64::NAN),
            ..Default::default()
        };
        assert!(matches!(r.to_json(), Err(ReportError::NonFinite(f)) if f == "fps_simulated"));
    }

    #[test]
    fn nine_digits_and_fixed_point() {
        assert_eq!(round9(298.00000000123), 298.0);
        assert_eq!(round9(0.1234567891234), 0.123456789);
        let mut e = TrackEvents::new(3);
        e.new_ids.push(TrackId(2));
        e.assignments.push((0, TrackId(2)));
        let r = RunReport {
            frames: 3,
            gating_reduction: Some(2.0 / 3.0),
            power_mw: Some(PowerSummary {
                per_engine: [("GPU".to_string(), 1234.56789012)].into_iter().collect(),
                total: 1234.56789012,
            }),
            events: vec![FrameRecord {
                events: e,
                recognized: vec![(TrackId(2), "ann".into())],
            }],
            ..Default::default()
        };
        let s = r.to_json_string().unwrap();
        assert!(s.contains("0.666666667"));
        assert!(s.contains("1234.56789"));
        assert_eq!(canonical_json(&s).unwrap(), s);
    }
}
