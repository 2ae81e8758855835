//! Cost matrices and track/detection assignment.
//!
//! The optimal solver is the O(n³) shortest-augmenting-path Hungarian
//! method on the zero-padded square matrix. Its dual potentials identify
//! every edge that can appear in *some* optimal assignment (the tight
//! edges); the returned assignment is the lexicographically smallest
//! perfect matching of that tight subgraph, so equal-cost optima always
//! resolve the same way.

use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cost matrix data has {got} entries, expected {rows} x {cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("iou threshold {0} outside [0, 1]")]
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssociationError> {
        if data.len() != rows * cols {
            return Err(AssociationError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssociationError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssociationError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssociationError::Shape {
                    rows: rows.len(),
                    cols,
                    got: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// `1 - IOU` between every track box (row) and detection box (column).
    pub fn from_iou(tracks: &[BoundingBox], detections: &[BoundingBox]) -> Self {
        let data = tracks
            .iter()
            .flat_map(|t| detections.iter().map(move |d| 1.0 - t.iou(d)))
            .collect();
        Self {
            rows: tracks.len(),
            cols: detections.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub track: usize,
    pub detection: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    pub matches: Vec<Match>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self) -> f64 {
        self.matches.iter().map(|m| m.cost).sum()
    }

    fn from_row_map(m: &CostMatrix, row_to_col: &[Option<usize>]) -> Self {
        let mut matches = Vec::new();
        let mut unmatched_tracks = Vec::new();
        let mut used = vec![false; m.cols];
        for (row, col) in row_to_col.iter().enumerate() {
            match col {
                Some(c) => {
                    used[*c] = true;
                    matches.push(Match {
                        track: row,
                        detection: *c,
                        cost: m.get(row, *c),
                    });
                }
                None => unmatched_tracks.push(row),
            }
        }
        let unmatched_detections = (0..m.cols).filter(|c| !used[*c]).collect();
        Self {
            matches,
            unmatched_tracks,
            unmatched_detections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssociationMode {
    #[default]
    Optimal,
    /// Repeatedly take the cheapest remaining pair.
    Greedy,
}

/// Minimum-cost assignment of `min(rows, cols)` pairs.
pub fn hungarian_min_cost(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 {
        return Assignment::from_row_map(m, &vec![None; m.rows]);
    }
    let n = m.rows.max(m.cols);
    let padded = |i: usize, j: usize| {
        if i < m.rows && j < m.cols {
            m.get(i, j)
        } else {
            0.0
        }
    };
    let (u, v) = potentials(n, &padded);
    let scale = m.data.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-9 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| padded(i, j) - u[i] - v[j] <= tol).collect())
        .collect();
    let row_to_col = lexicographic_matching(n, m.rows, m.cols, &tight);
    let map: Vec<Option<usize>> = row_to_col[..m.rows]
        .iter()
        .map(|&c| (c < m.cols).then_some(c))
        .collect();
    Assignment::from_row_map(m, &map)
}

/// Row/column dual potentials of an optimal assignment of the square
/// `n x n` matrix `a`.
fn potentials(n: usize, a: &dyn Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    // 1-based arrays, index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching over the tight edges.
/// Real rows choose real columns in ascending order before any padding
/// column (which means "unmatched"); padding columns are interchangeable.
fn lexicographic_matching(n: usize, rows: usize, cols: usize, tight: &[Vec<bool>]) -> Vec<usize> {
    let mut fixed: Vec<Option<usize>> = vec![None; n];
    let mut col_taken = vec![false; n];
    for i in 0..rows {
        let mut candidates: Vec<usize> = (0..cols).collect();
        if let Some(d) = (cols..n).find(|&c| !col_taken[c]) {
            candidates.push(d);
        }
        let mut chosen = None;
        for c in candidates {
            if col_taken[c] || !tight[i][c] {
                continue;
            }
            fixed[i] = Some(c);
            col_taken[c] = true;
            if complete_matching(n, tight, &fixed, &col_taken).is_some() {
                chosen = Some(c);
                break;
            }
            fixed[i] = None;
            col_taken[c] = false;
        }
        // The Hungarian potentials guarantee a tight perfect matching, so
        // some candidate is always feasible.
        debug_assert!(chosen.is_some(), "tight subgraph lost its perfect matching");
    }
    complete_matching(n, tight, &fixed, &col_taken).expect("tight subgraph has a perfect matching")
}

/// Extends the fixed partial matching to a perfect matching using only
/// tight edges (Kuhn's augmenting paths), if one exists.
fn complete_matching(
    n: usize,
    tight: &[Vec<bool>],
    fixed: &[Option<usize>],
    col_taken: &[bool],
) -> Option<Vec<usize>> {
    let mut col_owner: Vec<Option<usize>> = vec![None; n];
    fn augment(
        row: usize,
        tight: &[Vec<bool>],
        col_taken: &[bool],
        seen: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        for c in 0..tight.len() {
            if col_taken[c] || seen[c] || !tight[row][c] {
                continue;
            }
            seen[c] = true;
            let free = match col_owner[c] {
                None => true,
                Some(r) => augment(r, tight, col_taken, seen, col_owner),
            };
            if free {
                col_owner[c] = Some(row);
                return true;
            }
        }
        false
    }
    for (row, f) in fixed.iter().enumerate() {
        if f.is_some() {
            continue;
        }
        let mut seen = vec![false; n];
        if !augment(row, tight, col_taken, &mut seen, &mut col_owner) {
            return None;
        }
    }
    let mut out: Vec<usize> = fixed.iter().map(|c| c.unwrap_or(usize::MAX)).collect();
    for (c, owner) in col_owner.iter().enumerate() {
        if let Some(r) = owner {
            out[*r] = c;
        }
    }
    Some(out)
}

/// Cheapest-pair-first matching. Ties resolve by (row, column).
pub fn greedy_min_cost(m: &CostMatrix) -> Assignment {
    let mut pairs: Vec<(usize, usize)> = (0..m.rows)
        .flat_map(|r| (0..m.cols).map(move |c| (r, c)))
        .collect();
    pairs.sort_by(|a, b| m.get(a.0, a.1).total_cmp(&m.get(b.0, b.1)).then(a.cmp(b)));
    let mut row_map = vec![None; m.rows];
    let mut col_used = vec![false; m.cols];
    for (r, c) in pairs {
        if row_map[r].is_none() && !col_used[c] {
            row_map[r] = Some(c);
            col_used[c] = true;
        }
    }
    Assignment::from_row_map(m, &row_map)
}

/// Matches track boxes (rows) to detection boxes (columns) on `1 - IOU`,
/// then drops any pair whose IOU is below `iou_min`.
pub fn associate(
    tracks: &[BoundingBox],
    detections: &[BoundingBox],
    iou_min: f64,
    mode: AssociationMode,
) -> Result<Assignment, AssociationError> {
    if !(0.0..=1.0).contains(&iou_min) {
        return Err(AssociationError::Threshold(iou_min));
    }
    let m = CostMatrix::from_iou(tracks, detections);
    let solved = match mode {
        AssociationMode::Optimal => hungarian_min_cost(&m),
        AssociationMode::Greedy => greedy_min_cost(&m),
    };
    let mut out = Assignment {
        matches: Vec::new(),
        unmatched_tracks: solved.unmatched_tracks,
        unmatched_detections: solved.unmatched_detections,
    };
    for mt in solved.matches {
        let overlap = tracks[mt.track].iou(&detections[mt.detection]);
        if overlap < iou_min {
            out.unmatched_tracks.push(mt.track);
            out.unmatched_detections.push(mt.detection);
        } else {
            out.matches.push(mt);
        }
    }
    out.unmatched_tracks.sort_unstable();
    out.unmatched_detections.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn pairs(a: &Assignment) -> Vec<(usize, usize)> {
        a.matches.iter().map(|m| (m.track, m.detection)).collect()
    }

    #[test]
    fn single_entry() {
        let a = hungarian_min_cost(&CostMatrix::from_rows(&[vec![0.2]]).unwrap());
        assert_eq!(pairs(&a), vec![(0, 0)]);
        assert_eq!(a.total_cost(), 0.2);
    }

    #[test]
    fn zero_matrix_prefers_identity() {
        let m = CostMatrix::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(pairs(&hungarian_min_cost(&m)), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn known_three_by_three() {
        let m = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]])
            .unwrap();
        let a = hungarian_min_cost(&m);
        assert_eq!(pairs(&a), vec![(0, 1), (1, 0), (2, 2)]);
        assert_eq!(a.total_cost(), 5.0);
    }

    #[test]
    fn rectangular_leaves_extras_unmatched() {
        let m = CostMatrix::from_rows(&[vec![0.9, 0.1, 0.5]]).unwrap();
        let a = hungarian_min_cost(&m);
        assert_eq!(pairs(&a), vec![(0, 1)]);
        assert_eq!(a.unmatched_detections, vec![0, 2]);

        let m = CostMatrix::from_rows(&[vec![0.7], vec![0.2], vec![0.2]]).unwrap();
        let a = hungarian_min_cost(&m);
        assert_eq!(pairs(&a), vec![(1, 0)]);
        assert_eq!(a.unmatched_tracks, vec![0, 2]);
    }

    #[test]
    fn empty_matrices() {
        let a = hungarian_min_cost(&CostMatrix::new(2, 0, vec![]).unwrap());
        assert_eq!(a.unmatched_tracks, vec![0, 1]);
        let a = hungarian_min_cost(&CostMatrix::new(0, 3, vec![]).unwrap());
        assert_eq!(a.unmatched_detections, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(
            CostMatrix::new(1, 2, vec![0.0, f64::INFINITY]),
            Err(AssociationError::NonFinite { row: 0, col: 1 })
        );
    }

    #[test]
    fn greedy_can_be_suboptimal() {
        let m = CostMatrix::from_rows(&[vec![0.0, 0.1], vec![0.1, 1.0]]).unwrap();
        assert_eq!(greedy_min_cost(&m).total_cost(), 1.0);
        assert!((hungarian_min_cost(&m).total_cost() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn associate_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let same = associate(&[a], &[a], 0.3, AssociationMode::Optimal).unwrap();
        assert_eq!(pairs(&same), vec![(0, 0)]);

        let far = associate(&[a], &[bx(10.0, 10.0, 2.0, 2.0)], 0.3, AssociationMode::Optimal).unwrap();
        assert!(far.matches.is_empty());
        assert_eq!(far.unmatched_tracks, vec![0]);
        assert_eq!(far.unmatched_detections, vec![0]);

        // iou(A, a) = iou(B, b) = 1/3, cross pairs disjoint.
        let ta = bx(0.0, 0.0, 2.0, 2.0);
        let tb = bx(100.0, 0.0, 2.0, 2.0);
        let da = bx(1.0, 0.0, 2.0, 2.0);
        let db = bx(101.0, 0.0, 2.0, 2.0);
        let out = associate(&[ta, tb], &[da, db], 0.3, AssociationMode::Optimal).unwrap();
        assert_eq!(pairs(&out), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn associate_rejects_bad_threshold() {
        assert!(associate(&[], &[], 1.5, AssociationMode::Optimal).is_err());
    }
}
