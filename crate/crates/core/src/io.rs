//! File formats: detection, embedding, gallery and ground-truth CSVs, and
//! binary PGM frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gate::{Embedding, Gallery, EMBEDDING_DIM};
use crate::geometry::{BoundingBox, Detection, TrackId};
use crate::image::GrayImage;
use crate::synth::Scenario;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("{path}: {source}")]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("frame sequence: {0}")]
    Frames(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgmError {
    #[error("unsupported format (magic {0:?}, expected \"P5\")")]
    Magic(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} outside 1..=255")]
    MaxVal(u32),
    #[error("payload has {got} bytes, expected {expected}")]
    Truncated { expected: usize, got: usize },
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn records(text: &str) -> impl Iterator<Item = Result<(u64, csv::StringRecord), IoError>> + '_ {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .into_records()
        .map(|r| {
            r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
                .map_err(|e| IoError::Row {
                    line: e.position().map_or(0, |p| p.line()),
                    msg: e.to_string(),
                })
        })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, IoError> {
    let raw = rec.get(i).ok_or_else(|| IoError::Row {
        line,
        msg: format!("missing column {name}"),
    })?;
    raw.parse().map_err(|_| IoError::Row {
        line,
        msg: format!("{name}: cannot parse {raw:?}"),
    })
}

fn expect_columns(rec: &csv::StringRecord, n: usize, line: u64) -> Result<(), IoError> {
    if rec.len() != n {
        return Err(IoError::Row {
            line,
            msg: format!("expected {n} columns, found {}", rec.len()),
        });
    }
    Ok(())
}

/// One row of a detection file. `track_id` is `None` for `-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRow {
    pub detection: Detection,
    pub track_id: Option<TrackId>,
}

/// Parses `frame,track_id,x,y,w,h,confidence` rows; frames must not
/// decrease.
pub fn parse_detections_str(text: &str) -> Result<Vec<DetectionRow>, IoError> {
    let mut out: Vec<DetectionRow> = Vec::new();
    for r in records(text) {
        let (line, rec) = r?;
        expect_columns(&rec, 7, line)?;
        let frame: u32 = field(&rec, 0, "frame", line)?;
        if frame == 0 {
            return Err(IoError::Row {
                line,
                msg: "frames are numbered from 1".into(),
            });
        }
        if let Some(prev) = out.last() {
            if frame < prev.detection.frame {
                return Err(IoError::Row {
                    line,
                    msg: format!("frame {frame} after frame {}", prev.detection.frame),
                });
            }
        }
        let track: i64 = field(&rec, 1, "track_id", line)?;
        let track_id = match track {
            -1 => None,
            t if t >= 0 => Some(TrackId(t as u64)),
            t => {
                return Err(IoError::Row {
                    line,
                    msg: format!("track_id {t} must be -1 or >= 0"),
                })
            }
        };
        let nums: Vec<f64> = ["x", "y", "w", "h", "confidence"]
            .iter()
            .enumerate()
            .map(|(k, name)| field(&rec, k + 2, name, line))
            .collect::<Result<_, _>>()?;
        let row_err = |e: crate::geometry::GeometryError| IoError::Row {
            line,
            msg: e.to_string(),
        };
        let bbox = BoundingBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(row_err)?;
        let detection = Detection::new(frame, bbox, nums[4]).map_err(row_err)?;
        out.push(DetectionRow { detection, track_id });
    }
    Ok(out)
}

pub fn parse_detections(path: &Path) -> Result<Vec<DetectionRow>, IoError> {
    parse_detections_str(&read_text(path)?)
}

pub fn format_detections(rows: &[DetectionRow]) -> String {
    let mut s = String::from("# frame,track_id,x,y,w,h,confidence\n");
    for r in rows {
        let d = &r.detection;
        let id = r.track_id.map_or(-1, |t| t.0 as i64);
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            d.frame,
            id,
            d.bbox.x(),
            d.bbox.y(),
            d.bbox.w(),
            d.bbox.h(),
            d.confidence
        );
    }
    s
}

/// Detections per frame for frames `1..=last`, empty where a frame has none.
pub fn group_by_frame(rows: &[DetectionRow], last: u32) -> Vec<Vec<Detection>> {
    let mut out = vec![Vec::new(); last as usize];
    for r in rows {
        if let Some(v) = out.get_mut(r.detection.frame as usize - 1) {
            v.push(r.detection);
        }
    }
    out
}

/// Embeddings keyed by `(frame, detection index)`.
pub type EmbeddingTable = BTreeMap<(u32, usize), Embedding>;

fn embedding_from(rec: &csv::StringRecord, start: usize, line: u64) -> Result<Embedding, IoError> {
    let values: Vec<f64> = (0..EMBEDDING_DIM)
        .map(|k| field(rec, start + k, &format!("e{k}"), line))
        .collect::<Result<_, _>>()?;
    Embedding::from_slice(&values).map_err(|e| IoError::Row {
        line,
        msg: e.to_string(),
    })
}

fn push_embedding(s: &mut String, e: &Embedding) {
    for v in e.values() {
        let _ = write!(s, ",{v:?}");
    }
    s.push('\n');
}

pub fn parse_embeddings_str(text: &str) -> Result<EmbeddingTable, IoError> {
    let mut out = BTreeMap::new();
    for r in records(text) {
        let (line, rec) = r?;
        expect_columns(&rec, EMBEDDING_DIM + 2, line)?;
        let frame: u32 = field(&rec, 0, "frame", line)?;
        let det: usize = field(&rec, 1, "det_index", line)?;
        if out.insert((frame, det), embedding_from(&rec, 2, line)?).is_some() {
            return Err(IoError::Row {
                line,
                msg: format!("duplicate embedding for frame {frame}, detection {det}"),
            });
        }
    }
    Ok(out)
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut s = String::from("# frame,det_index,e0..e127\n");
    for ((frame, det), e) in table {
        let _ = write!(s, "{frame},{det}");
        push_embedding(&mut s, e);
    }
    s
}

pub fn parse_gallery_str(text: &str) -> Result<Gallery, IoError> {
    let mut entries = Vec::new();
    for r in records(text) {
        let (line, rec) = r?;
        expect_columns(&rec, EMBEDDING_DIM + 1, line)?;
        let label = rec.get(0).unwrap_or_default().to_string();
        if label.is_empty() {
            return Err(IoError::Row {
                line,
                msg: "empty identity".into(),
            });
        }
        entries.push((label, embedding_from(&rec, 1, line)?));
    }
    Gallery::new(entries).map_err(|e| IoError::Row {
        line: 0,
        msg: e.to_string(),
    })
}

pub fn format_gallery(g: &Gallery) -> String {
    let mut s = String::from("# identity,e0..e127\n");
    for (label, e) in g.entries() {
        s.push_str(label);
        push_embedding(&mut s, e);
    }
    s
}

/// Ground truth: target label per `(frame, detection index)`.
pub type TruthTable = BTreeMap<u32, BTreeMap<usize, String>>;

pub fn parse_truth_str(text: &str) -> Result<TruthTable, IoError> {
    let mut out: TruthTable = BTreeMap::new();
    for r in records(text) {
        let (line, rec) = r?;
        expect_columns(&rec, 3, line)?;
        let frame: u32 = field(&rec, 0, "frame", line)?;
        let det: usize = field(&rec, 1, "det_index", line)?;
        let target = rec.get(2).unwrap_or_default();
        if target.is_empty() {
            return Err(IoError::Row {
                line,
                msg: "empty target".into(),
            });
        }
        out.entry(frame).or_default().insert(det, target.to_string());
    }
    Ok(out)
}

pub fn format_truth(t: &TruthTable) -> String {
    let mut s = String::from("# frame,det_index,target\n");
    for (frame, dets) in t {
        for (det, target) in dets {
            let _ = writeln!(s, "{frame},{det},{target}");
        }
    }
    s
}

/// Reads a binary (`P5`) PGM; intensities are scaled to `[0, 1]`.
pub fn parse_pgm_bytes(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PgmError::Magic(magic));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (k, slot) in fields.iter_mut().enumerate() {
        // Whitespace and comment lines between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::Header(format!("missing {}", ["width", "height", "maxval"][k])));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Header("number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::Header("no whitespace after maxval".into())),
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::MaxVal(maxval));
    }
    if w == 0 || h == 0 {
        return Err(PgmError::Header("zero dimension".into()));
    }
    let n = w as usize * h as usize;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(PgmError::Truncated {
            expected: n,
            got: payload.len(),
        });
    }
    let scale = f64::from(maxval);
    let pixels = payload[..n].iter().map(|&b| f64::from(b) / scale).collect();
    Ok(GrayImage::new(w as usize, h as usize, pixels).expect("dimensions checked"))
}

/// Writes a `P5` PGM with maxval 255, rounding intensities.
pub fn format_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn parse_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pgm_bytes(&bytes).map_err(|source| IoError::Pgm {
        path: path.to_path_buf(),
        source,
    })
}

pub fn frame_file_name(frame: u32) -> String {
    format!("frame_{frame:06}.pgm")
}

/// Reads `frame_000001.pgm` upward until the first missing number. Stray
/// frame files beyond a gap are an error.
pub fn read_frames(dir: &Path) -> Result<Vec<GrayImage>, IoError> {
    let listing = fs::read_dir(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut numbers = Vec::new();
    for entry in listing.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(n) = name
            .strip_prefix("frame_")
            .and_then(|r| r.strip_suffix(".pgm"))
            .and_then(|d| d.parse::<u32>().ok())
        {
            numbers.push(n);
        }
    }
    numbers.sort_unstable();
    for (k, n) in numbers.iter().enumerate() {
        if *n != k as u32 + 1 {
            return Err(IoError::Frames(format!("expected frame {} but found {n}", k + 1)));
        }
    }
    let mut frames: Vec<GrayImage> = Vec::with_capacity(numbers.len());
    for n in numbers {
        let img = parse_pgm(&dir.join(frame_file_name(n)))?;
        if let Some(first) = frames.first() {
            if (img.width(), img.height()) != (first.width(), first.height()) {
                return Err(IoError::Frames(format!("frame {n} changes size")));
            }
        }
        frames.push(img);
    }
    Ok(frames)
}

pub fn write_frames(dir: &Path, frames: &[GrayImage]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (k, img) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(k as u32 + 1));
        fs::write(&path, format_pgm(img)).map_err(|source| IoError::Io { path, source })?;
    }
    Ok(())
}

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const GALLERY_FILE: &str = "gallery.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const FRAMES_DIR: &str = "frames";

/// Writes a synthetic scenario as `frames/`, `detections.csv`,
/// `embeddings.csv`, `gallery.csv` and `truth.csv` under `dir`.
pub fn write_scenario(dir: &Path, s: &Scenario) -> Result<(), IoError> {
    write_frames(&dir.join(FRAMES_DIR), &s.frames)?;
    let rows: Vec<DetectionRow> = s
        .detections
        .iter()
        .flatten()
        .map(|d| DetectionRow {
            detection: d.detection,
            track_id: None,
        })
        .collect();
    write_text(&dir.join(DETECTIONS_FILE), &format_detections(&rows))?;
    write_text(&dir.join(EMBEDDINGS_FILE), &format_embeddings(&s.embedding_table()))?;
    write_text(&dir.join(GALLERY_FILE), &format_gallery(&s.gallery))?;
    write_text(&dir.join(TRUTH_FILE), &format_truth(&s.truth_table()))
}
