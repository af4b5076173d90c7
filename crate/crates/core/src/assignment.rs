//! Rectangular bipartite assignment.
//!
//! [`solve_assignment`] is a shortest-augmenting-path Hungarian solver
//! (O(n²m) for an n×m problem, n ≤ m). Forbidden pairs are kept out of the
//! arithmetic: they are replaced by a finite penalty large enough that the
//! solver first maximizes the number of permitted pairs and only then
//! optimizes the objective over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Minimize,
    Maximize,
}

/// Dense K×J matrix of scores. `None` marks a forbidden pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Option<f64>>,
    objective: Objective,
}

impl CostMatrix {
    /// A matrix with every pair forbidden.
    pub fn forbidden(rows: usize, cols: usize, objective: Objective) -> Self {
        Self {
            rows,
            cols,
            entries: vec![None; rows * cols],
            objective,
        }
    }

    pub fn from_fn<F>(rows: usize, cols: usize, objective: Objective, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Option<f64>,
    {
        let mut m = Self::forbidden(rows, cols, objective);
        for r in 0..rows {
            for c in 0..cols {
                if let Some(v) = f(r, c) {
                    m.set(r, c, v)?;
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows(data: &[Vec<f64>], objective: Objective) -> Result<Self> {
        let rows = data.len();
        let cols = data.first().map_or(0, Vec::len);
        if let Some(bad) = data.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Self::from_fn(rows, cols, objective, |r, c| Some(data[r][c]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.entries[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("cost matrix entry"));
        }
        self.entries[row * self.cols + col] = Some(value);
        Ok(())
    }

    pub fn forbid(&mut self, row: usize, col: usize) {
        self.entries[row * self.cols + col] = None;
    }

    /// The same matrix with every permitted entry negated and the objective
    /// flipped.
    pub fn negated(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.map(|v| -v)).collect(),
            objective: match self.objective {
                Objective::Minimize => Objective::Maximize,
                Objective::Maximize => Objective::Minimize,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matrix entries at `pairs`, accumulated in row order.
    pub total: f64,
    pub unassigned_rows: Vec<usize>,
    pub unassigned_cols: Vec<usize>,
}

impl Assignment {
    fn empty(rows: usize, cols: usize) -> Self {
        Self {
            pairs: Vec::new(),
            total: 0.0,
            unassigned_rows: (0..rows).collect(),
            unassigned_cols: (0..cols).collect(),
        }
    }

    /// Column assigned to `row`, if any.
    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&row, |&(r, _)| r)
            .ok()
            .map(|i| self.pairs[i].1)
    }

    /// Row assigned to `col`, if any.
    pub fn row_for_col(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, c)| c == col).map(|&(r, _)| r)
    }
}

/// Solves the assignment problem described by `m`.
///
/// The result has the maximum possible number of permitted pairs and, among
/// those, the optimal total. Ties are broken arbitrarily.
pub fn solve_assignment(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 {
        return Assignment::empty(m.rows, m.cols);
    }
    let sign = match m.objective {
        Objective::Minimize => 1.0,
        Objective::Maximize => -1.0,
    };

    let (lo, hi) = m
        .entries
        .iter()
        .flatten()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| {
            let v = sign * v;
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        // nothing permitted
        return Assignment::empty(m.rows, m.cols);
    }

    let transpose = m.rows > m.cols;
    let (n, w) = if transpose {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    };
    let range = hi - lo;
    let penalty = (range + 1.0) * (n as f64 + 1.0);
    let mut cost = vec![0.0; n * w];
    for i in 0..n {
        for j in 0..w {
            let (r, c) = if transpose { (j, i) } else { (i, j) };
            cost[i * w + j] = match m.get(r, c) {
                Some(v) => sign * v - lo,
                None => penalty,
            };
        }
    }

    let col_of_row = hungarian(&cost, n, w);

    let mut pairs: Vec<(usize, usize)> = col_of_row
        .iter()
        .enumerate()
        .map(|(i, &j)| if transpose { (j, i) } else { (i, j) })
        .filter(|&(r, c)| m.get(r, c).is_some())
        .collect();
    pairs.sort_unstable();

    let total = pairs.iter().map(|&(r, c)| m.get(r, c).unwrap_or(0.0)).sum();
    let mut row_used = vec![false; m.rows];
    let mut col_used = vec![false; m.cols];
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
    }
    Assignment {
        pairs,
        total,
        unassigned_rows: (0..m.rows).filter(|&r| !row_used[r]).collect(),
        unassigned_cols: (0..m.cols).filter(|&c| !col_used[c]).collect(),
    }
}

/// Min-cost assignment of every row of an `n × w` matrix (`n ≤ w`) to a
/// distinct column. Returns the column of each row.
fn hungarian(cost: &[f64], n: usize, w: usize) -> Vec<usize> {
    debug_assert!(n <= w);
    // 1-based potentials; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; w + 1];
    let mut row_of_col = vec![0usize; w + 1];
    let mut way = vec![0usize; w + 1];
    let mut minv = vec![0.0f64; w + 1];
    let mut used = vec![false; w + 1];

    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::MAX);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let row = &cost[(i0 - 1) * w..i0 * w];
            let mut delta = f64::MAX;
            let mut j1 = 0usize;
            for j in 1..=w {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=w {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=w {
        if row_of_col[j] > 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Weights of the prediction-to-truth matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchWeights {
    pub lambda_class: f64,
    pub lambda_box: f64,
    pub lambda_giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            lambda_class: 2.0,
            lambda_box: 5.0,
            lambda_giou: 2.0,
        }
    }
}

impl MatchWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_class, self.lambda_box, self.lambda_giou];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "match weights must be finite and non-negative".into(),
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidParameter(
                "at least one match weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One detector output slot: per-category probabilities and a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub bbox: BBox,
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub category: usize,
    pub bbox: BBox,
}

/// Matching cost between one prediction and one truth.
///
/// The class term is `1 - p(category)`: the negative probability shifted by
/// a constant so that a perfect prediction costs exactly 0.
pub fn match_cost(p: &Prediction, t: &Truth, w: &MatchWeights) -> f64 {
    w.lambda_class * (1.0 - p.scores[t.category])
        + w.lambda_box * p.bbox.l1_distance(&t.bbox)
        + w.lambda_giou * (1.0 - giou(&p.bbox, &t.bbox))
}

/// Min-cost matching of predictions (rows) to truths (columns).
///
/// Every truth is matched; surplus predictions stay unassigned.
pub fn detr_matching(
    predictions: &[Prediction],
    truths: &[Truth],
    w: &MatchWeights,
) -> Result<Assignment> {
    w.validate()?;
    if truths.is_empty() {
        return Ok(Assignment::empty(predictions.len(), 0));
    }
    if truths.len() > predictions.len() {
        return Err(Error::InvalidMatching(format!(
            "{} truths but only {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    let classes = predictions[0].scores.len();
    for p in predictions {
        if p.scores.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                actual: p.scores.len(),
            });
        }
    }
    if let Some(t) = truths.iter().find(|t| t.category >= classes) {
        return Err(Error::InvalidMatching(format!(
            "truth category {} outside {classes} score classes",
            t.category
        )));
    }
    let m = CostMatrix::from_fn(predictions.len(), truths.len(), Objective::Minimize, |r, c| {
        Some(match_cost(&predictions[r], &truths[c], w))
    })?;
    Ok(solve_assignment(&m))
}
