//! ID-switch and recognition-call accounting over per-target ID timelines.
//!
//! A switch event is a change of a target's assigned ID. The one exception
//! is a handover: when the new ID belonged to a different target at the
//! previous frame, the tracker merely moved an existing label and the change
//! is counted under `handovers` instead. A change back to an ID the same
//! target held before is a switch and also a revived reuse.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::geometry::{TrackEvents, TrackId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("target {0} has an empty timeline")]
    EmptyTarget(String),
    #[error("timeline has no targets")]
    NoTargets,
    #[error("target {target}: frame {frame} does not follow frame {prev}")]
    Order { target: String, prev: u32, frame: u32 },
    #[error("gating needs ungated >= gated >= 0 and ungated > 0 (got {ungated}, {gated})")]
    Gating { ungated: u64, gated: u64 },
}

/// Per-target `(frame, id)` sequences, targets kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdTimeline {
    targets: Vec<(String, Vec<(u32, TrackId)>)>,
}

impl IdTimeline {
    pub fn new(targets: Vec<(String, Vec<(u32, TrackId)>)>) -> Result<Self, MetricsError> {
        for (name, seq) in &targets {
            for w in seq.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(MetricsError::Order {
                        target: name.clone(),
                        prev: w[0].0,
                        frame: w[1].0,
                    });
                }
            }
        }
        Ok(Self { targets })
    }

    /// Table layout: `rows[k][j]` is the ID of target `j + 1` at frame `k + 1`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let n = rows.iter().map(Vec::len).max().unwrap_or(0);
        let targets = (0..n)
            .map(|j| {
                let seq = rows
                    .iter()
                    .enumerate()
                    .filter_map(|(k, row)| row.get(j).map(|&id| (k as u32 + 1, TrackId(id))))
                    .collect();
                (format!("{}", j + 1), seq)
            })
            .collect();
        Self::new(targets)
    }

    pub fn targets(&self) -> &[(String, Vec<(u32, TrackId)>)] {
        &self.targets
    }

    /// Appends an observation, creating the target on first sight.
    pub fn push(&mut self, target: &str, frame: u32, id: TrackId) -> Result<(), MetricsError> {
        let idx = match self.targets.iter().position(|(t, _)| t == target) {
            Some(i) => i,
            None => {
                self.targets.push((target.to_string(), Vec::new()));
                self.targets.len() - 1
            }
        };
        let seq = &mut self.targets[idx].1;
        if let Some(&(prev, _)) = seq.last() {
            if frame <= prev {
                return Err(MetricsError::Order {
                    target: target.to_string(),
                    prev,
                    frame,
                });
            }
        }
        seq.push((frame, id));
        Ok(())
    }

    /// Records which target each assigned detection belongs to.
    /// `truth` maps detection index to target label for this frame.
    pub fn record(&mut self, events: &TrackEvents, truth: &BTreeMap<usize, String>) -> Result<(), MetricsError> {
        for (det, id) in &events.assignments {
            if let Some(target) = truth.get(det) {
                self.push(target, events.frame, *id)?;
            }
        }
        Ok(())
    }

    /// Every frame that appears in any target, sorted.
    pub fn frames(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .targets
            .iter()
            .flat_map(|(_, s)| s.iter().map(|(f, _)| *f))
            .collect();
        set.into_iter().collect()
    }

    /// Tracker events implied by the timeline: IDs never seen before are
    /// new, IDs present at the previous frame continue, and IDs seen
    /// earlier but absent at the previous frame are revived.
    pub fn to_events(&self) -> Vec<TrackEvents> {
        let mut by_frame: BTreeMap<u32, BTreeSet<TrackId>> = BTreeMap::new();
        for (_, seq) in &self.targets {
            for &(f, id) in seq {
                by_frame.entry(f).or_default().insert(id);
            }
        }
        let mut seen = BTreeSet::new();
        let mut prev = BTreeSet::new();
        let mut out = Vec::new();
        for (frame, ids) in by_frame {
            let mut e = TrackEvents::new(frame);
            for &id in &ids {
                if !seen.contains(&id) {
                    e.new_ids.push(id);
                } else if prev.contains(&id) {
                    e.continued_ids.push(id);
                } else {
                    e.revived_ids.push(id);
                }
            }
            e.lost_ids = prev.difference(&ids).copied().collect();
            seen.extend(ids.iter().copied());
            prev = ids;
            out.push(e);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchReport {
    pub per_target: Vec<(String, usize)>,
    pub switch_events: usize,
    /// ID changes onto an ID another target held the frame before.
    pub handovers: usize,
    /// Switches back onto an ID the same target held earlier.
    pub revived_reuses: usize,
    pub distinct_ids: usize,
    pub last_id: TrackId,
    /// Identity lookups a once-per-ID gate performs on this timeline.
    pub recognition_calls: usize,
}

pub fn count_id_switches(t: &IdTimeline) -> Result<SwitchReport, MetricsError> {
    if t.targets.is_empty() {
        return Err(MetricsError::NoTargets);
    }
    if let Some((name, _)) = t.targets.iter().find(|(_, s)| s.is_empty()) {
        return Err(MetricsError::EmptyTarget(name.clone()));
    }
    let mut at_frame: BTreeMap<u32, Vec<(usize, TrackId)>> = BTreeMap::new();
    for (j, (_, seq)) in t.targets.iter().enumerate() {
        for &(f, id) in seq {
            at_frame.entry(f).or_default().push((j, id));
        }
    }
    let mut per_target = Vec::with_capacity(t.targets.len());
    let (mut switches, mut handovers, mut reuses) = (0, 0, 0);
    let mut all_ids = BTreeSet::new();
    for (j, (name, seq)) in t.targets.iter().enumerate() {
        let mut count = 0;
        let mut held = BTreeSet::new();
        held.insert(seq[0].1);
        all_ids.insert(seq[0].1);
        for w in seq.windows(2) {
            let ((pf, pid), (_, id)) = (w[0], w[1]);
            all_ids.insert(id);
            if id == pid {
                continue;
            }
            let handed_over = at_frame
                .get(&pf)
                .is_some_and(|v| v.iter().any(|&(k, other)| k != j && other == id));
            if handed_over {
                handovers += 1;
            } else {
                count += 1;
                if held.contains(&id) {
                    reuses += 1;
                }
            }
            held.insert(id);
        }
        switches += count;
        per_target.push((name.clone(), count));
    }
    Ok(SwitchReport {
        per_target,
        switch_events: switches,
        handovers,
        revived_reuses: reuses,
        distinct_ids: all_ids.len(),
        last_id: *all_ids.iter().next_back().expect("non-empty"),
        recognition_calls: all_ids.len(),
    })
}

/// Fraction of recognition calls removed by gating.
pub fn gating_benefit(ungated_calls: u64, gated_calls: u64) -> Result<f64, MetricsError> {
    if ungated_calls == 0 || gated_calls > ungated_calls {
        return Err(MetricsError::Gating {
            ungated: ungated_calls,
            gated: gated_calls,
        });
    }
    Ok(1.0 - gated_calls as f64 / ungated_calls as f64)
}

/// ID timeline of five frames and six faces with five switch events.
pub fn switch_timeline_rows() -> Vec<Vec<u64>> {
    vec![
        vec![4, 3, 2, 0, 1, 5],
        vec![4, 3, 2, 6, 7, 5],
        vec![4, 3, 2, 6, 7, 8],
        vec![4, 3, 2, 6, 8, 9],
        vec![4, 3, 2, 6, 10, 9],
    ]
}

/// Same faces with one revival: face 5 regains ID 1 at the end.
pub fn revival_timeline_rows() -> Vec<Vec<u64>> {
    vec![
        vec![4, 3, 2, 0, 1, 5],
        vec![4, 7, 2, 6, 1, 5],
        vec![4, 7, 2, 6, 1, 8],
        vec![4, 7, 2, 6, 9, 8],
        vec![4, 7, 2, 6, 1, 8],
    ]
}
