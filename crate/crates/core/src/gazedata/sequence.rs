use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DataError, FixationRecord};

/// A `rows x cols` patch grid; patch `p` sits at row `p / cols`, column
/// `p % cols`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self, DataError> {
        if rows == 0 || cols == 0 {
            return Err(DataError::InvalidGrid { rows, cols });
        }
        Ok(Self { rows, cols })
    }

    /// Number of patches.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_col(&self, patch: usize) -> (usize, usize) {
        (patch / self.cols, patch % self.cols)
    }

    /// Cell containing a normalized point; 1.0 clamps into the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> usize {
        let r = ((y * self.rows as f64).floor() as usize).min(self.rows - 1);
        let c = ((x * self.cols as f64).floor() as usize).min(self.cols - 1);
        r * self.cols + c
    }

    /// Normalized `(x, y)` center of a cell.
    pub fn center(&self, patch: usize) -> (f64, f64) {
        let (r, c) = self.row_col(patch);
        ((c as f64 + 0.5) / self.cols as f64, (r as f64 + 0.5) / self.rows as f64)
    }

    /// Distance between the centers of the two extreme cells.
    pub fn center_diagonal(&self) -> f64 {
        let dx = (self.cols - 1) as f64 / self.cols as f64;
        let dy = (self.rows - 1) as f64 / self.rows as f64;
        dx.hypot(dy)
    }
}

/// Maps every fixation to its grid cell, keeping order and durations.
pub fn assign_patches(record: &FixationRecord, grid: GridSpec) -> Vec<(usize, f64)> {
    record
        .fixations
        .iter()
        .map(|f| (grid.cell_of(f.x, f.y), f.dur))
        .collect()
}

/// Deduplicated, first-visit-ordered patch sequence with merged dwell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationSequence {
    visited: Vec<usize>,
    dwell: Vec<f64>,
    grid: GridSpec,
}

impl FixationSequence {
    pub fn new(visited: Vec<usize>, dwell: Vec<f64>, grid: GridSpec) -> Result<Self, DataError> {
        if visited.is_empty() {
            return Err(DataError::EmptySequence);
        }
        if visited.len() != dwell.len() {
            return Err(DataError::InvalidSequence(format!(
                "{} patches but {} dwell values",
                visited.len(),
                dwell.len()
            )));
        }
        let mut seen = vec![false; grid.len()];
        for &p in &visited {
            if p >= grid.len() {
                return Err(DataError::InvalidSequence(format!(
                    "patch {p} outside grid of {}",
                    grid.len()
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(DataError::InvalidSequence(format!("patch {p} repeated")));
            }
        }
        if let Some(d) = dwell.iter().find(|d| !(**d > 0.0)) {
            return Err(DataError::InvalidSequence(format!("dwell {d} is not positive")));
        }
        Ok(Self { visited, dwell, grid })
    }

    pub fn from_record(record: &FixationRecord, grid: GridSpec) -> Result<Self, DataError> {
        dedup_first_visit(&assign_patches(record, grid), grid)
    }

    pub fn visited(&self) -> &[usize] {
        &self.visited
    }

    pub fn dwell(&self) -> &[f64] {
        &self.dwell
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// `L`, the number of distinct visited patches.
    pub fn len(&self) -> usize {
        self.visited.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visited.is_empty()
    }

    /// Patches never fixated, ascending.
    pub fn unvisited(&self) -> Vec<usize> {
        unvisited_set(self)
    }
}

/// Keeps the first visit of every patch in order; repeated visits add their
/// duration to the first one.
pub fn dedup_first_visit(assigned: &[(usize, f64)], grid: GridSpec) -> Result<FixationSequence, DataError> {
    if assigned.is_empty() {
        return Err(DataError::EmptySequence);
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut visited = Vec::new();
    let mut dwell: Vec<f64> = Vec::new();
    for &(p, d) in assigned {
        match slot.get(&p) {
            Some(&i) => dwell[i] += d,
            None => {
                slot.insert(p, visited.len());
                visited.push(p);
                dwell.push(d);
            }
        }
    }
    FixationSequence::new(visited, dwell, grid)
}

pub fn unvisited_set(seq: &FixationSequence) -> Vec<usize> {
    let mut seen = vec![false; seq.grid.len()];
    for &p in &seq.visited {
        seen[p] = true;
    }
    (0..seq.grid.len()).filter(|&p| !seen[p]).collect()
}
