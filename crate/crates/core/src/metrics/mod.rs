//! Scanpath similarity and classification metrics.
//!
//! Distances are measured between cell centers in normalized coordinates and
//! scaled by the grid's center diagonal, the largest distance two cells can
//! be apart. On a 1x1 grid every similarity is 1.

mod classify;
mod scanpath;

pub use classify::{accuracy, auroc, auroc_macro, f1};
pub use scanpath::{parse_scanpath_file, parse_scanpath_jsonl, write_scanpath_file, QuantizedScanpath, Scanpath};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gazedata::GridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("scanpaths are on different grids ({0:?} vs {1:?})")]
    GridMismatch(GridSpec, GridSpec),
    #[error("scanpath is empty")]
    EmptyPath,
    #[error("cell {cell} outside a grid of {n} cells")]
    CellOutOfRange { cell: usize, n: usize },
    #[error("multimatch needs at least 2 fixations per path, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(usize),
    #[error("AUROC is undefined when only one class is present")]
    SingleClass,
    #[error("scores contain NaN")]
    InvalidScore,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid scanpath: {0}")]
    InvalidScanpath(String),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<MetricError> },
}

fn same_grid(a: &QuantizedScanpath, b: &QuantizedScanpath) -> Result<GridSpec, MetricError> {
    if a.grid() != b.grid() {
        return Err(MetricError::GridMismatch(a.grid(), b.grid()));
    }
    Ok(a.grid())
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

/// `1 - d / scale`, or 1 when the scale is zero.
pub fn similarity(d: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        1.0
    } else {
        (1.0 - d / scale).clamp(0.0, 1.0)
    }
}

/// Levenshtein distance over cell indices with unit costs.
pub fn sed(a: &QuantizedScanpath, b: &QuantizedScanpath) -> Result<usize, MetricError> {
    same_grid(a, b)?;
    let (a, b) = (a.cells(), b.cells());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// Substitution score between two cells: 1 at equal centers, 0 at the
/// grid diagonal.
pub fn scanmatch_substitution(grid: GridSpec, u: usize, v: usize) -> f64 {
    similarity(dist(grid.center(u), grid.center(v)), grid.center_diagonal())
}

/// Needleman-Wunsch alignment with distance-graded substitutions and zero
/// gap score, normalized by the longer path.
pub fn scanmatch(a: &QuantizedScanpath, b: &QuantizedScanpath) -> Result<f64, MetricError> {
    let grid = same_grid(a, b)?;
    let (ac, bc) = (a.cells(), b.cells());
    let cols = bc.len() + 1;
    let mut h = vec![0.0f64; (ac.len() + 1) * cols];
    for i in 1..=ac.len() {
        for j in 1..=bc.len() {
            let diag = h[(i - 1) * cols + j - 1] + scanmatch_substitution(grid, ac[i - 1], bc[j - 1]);
            h[i * cols + j] = diag.max(h[(i - 1) * cols + j]).max(h[i * cols + j - 1]);
        }
    }
    Ok(h[ac.len() * cols + bc.len()] / ac.len().max(bc.len()) as f64)
}

/// One direction of STDE: for each window length `k`, average over windows
/// of `a` of the best mean point distance to a window of `b`.
fn stde_directed(a: &[(f64, f64)], b: &[(f64, f64)], k_max: usize, diag: f64) -> f64 {
    let k_top = k_max.min(a.len()).min(b.len());
    let mut total = 0.0;
    for k in 1..=k_top {
        let mut acc = 0.0;
        let n_a = a.len() - k + 1;
        for i in 0..n_a {
            let mut best = f64::INFINITY;
            for j in 0..=b.len() - k {
                let d = (0..k).map(|t| dist(a[i + t], b[j + t])).sum::<f64>() / k as f64;
                best = best.min(d);
            }
            acc += best;
        }
        total += similarity(acc / n_a as f64, diag);
    }
    total / k_top as f64
}

/// Time-delay-embedding similarity with windows up to `k_max`, averaged over
/// both directions. Window lengths longer than either path are skipped.
pub fn stde(a: &QuantizedScanpath, b: &QuantizedScanpath, k_max: usize) -> Result<f64, MetricError> {
    let grid = same_grid(a, b)?;
    if k_max == 0 {
        return Err(MetricError::EmptyInput);
    }
    let (pa, pb) = (a.points(), b.points());
    let diag = grid.center_diagonal();
    Ok((stde_directed(&pa, &pb, k_max, diag) + stde_directed(&pb, &pa, k_max, diag)) / 2.0)
}

pub const STDE_K_MAX: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiMatch {
    pub vector: f64,
    pub direction: f64,
    pub position: f64,
}

pub fn saccades(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    points.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect()
}

/// `1 - angle / pi`; a pair of zero vectors scores 1, one zero vector 0.
pub fn direction_similarity(u: (f64, f64), v: (f64, f64)) -> f64 {
    let zu = u == (0.0, 0.0);
    let zv = v == (0.0, 0.0);
    match (zu, zv) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let cross = u.0 * v.1 - u.1 * v.0;
            let dot = u.0 * v.0 + u.1 * v.1;
            1.0 - cross.abs().atan2(dot) / std::f64::consts::PI
        }
    }
}

/// Step taken into a cell of the alignment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Move {
    Diagonal,
    Up,
    Left,
}

/// Minimum-cost monotone path through `cost` (`m x n`, row-major) from the
/// first to the last cell. Costs accumulate in path order; when several
/// predecessors tie, backtracking prefers diagonal, then up, then left.
pub fn min_cost_path(cost: &[f64], m: usize, n: usize) -> Vec<(usize, usize)> {
    let mut acc = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let c = cost[i * n + j];
            acc[i * n + j] = match (i, j) {
                (0, 0) => c,
                (0, _) => acc[j - 1] + c,
                (_, 0) => acc[(i - 1) * n] + c,
                _ => {
                    acc[(i - 1) * n + j - 1]
                        .min(acc[(i - 1) * n + j])
                        .min(acc[i * n + j - 1])
                        + c
                }
            };
        }
    }
    let (mut i, mut j) = (m - 1, n - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        (i, j) = match (i, j) {
            (0, _) => (0, j - 1),
            (_, 0) => (i - 1, 0),
            _ => {
                let d = acc[(i - 1) * n + j - 1];
                let u = acc[(i - 1) * n + j];
                let l = acc[i * n + j - 1];
                if d <= u && d <= l {
                    (i - 1, j - 1)
                } else if u <= l {
                    (i - 1, j)
                } else {
                    (i, j - 1)
                }
            }
        };
        path.push((i, j));
    }
    path.reverse();
    path
}

/// Scores of one alignment path: saccade pairs `(i, j)` of `a` and `b`.
pub fn multimatch_along(pa: &[(f64, f64)], pb: &[(f64, f64)], path: &[(usize, usize)], diag: f64) -> MultiMatch {
    let (sa, sb) = (saccades(pa), saccades(pb));
    let n = path.len() as f64;
    let (mut vector, mut direction, mut position) = (0.0, 0.0, 0.0);
    for &(i, j) in path {
        vector += similarity(dist(sa[i], sb[j]), 2.0 * diag);
        direction += direction_similarity(sa[i], sb[j]);
        position += similarity(dist(pa[i], pb[j]), diag);
    }
    MultiMatch {
        vector: vector / n,
        direction: direction / n,
        position: position / n,
    }
}

fn multimatch_directed(pa: &[(f64, f64)], pb: &[(f64, f64)], diag: f64) -> MultiMatch {
    let (sa, sb) = (saccades(pa), saccades(pb));
    let cost: Vec<f64> = sa.iter().flat_map(|&u| sb.iter().map(move |&v| dist(u, v))).collect();
    let path = min_cost_path(&cost, sa.len(), sb.len());
    multimatch_along(pa, pb, &path, diag)
}

/// Vector, direction and position similarity of two scanpaths whose saccade
/// sequences are aligned by a minimum-cost path on vector differences.
/// Position compares the start fixations of aligned saccades. Both
/// argument orders are scored and averaged.
pub fn multimatch(a: &QuantizedScanpath, b: &QuantizedScanpath) -> Result<MultiMatch, MetricError> {
    let grid = same_grid(a, b)?;
    for p in [a, b] {
        if p.len() < 2 {
            return Err(MetricError::TooShort(p.len()));
        }
    }
    let (pa, pb) = (a.points(), b.points());
    let diag = grid.center_diagonal();
    let ab = multimatch_directed(&pa, &pb, diag);
    let ba = multimatch_directed(&pb, &pa, diag);
    Ok(MultiMatch {
        vector: (ab.vector + ba.vector) / 2.0,
        direction: (ab.direction + ba.direction) / 2.0,
        position: (ab.position + ba.position) / 2.0,
    })
}

/// All four scanpath scores of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub sed: usize,
    pub scanmatch: f64,
    pub stde: f64,
    /// Absent when either path has a single fixation.
    pub multimatch: Option<MultiMatch>,
}

pub fn score_pair(a: &QuantizedScanpath, b: &QuantizedScanpath) -> Result<PairScores, MetricError> {
    let multimatch = if a.len() >= 2 && b.len() >= 2 {
        Some(multimatch(a, b)?)
    } else {
        None
    };
    Ok(PairScores {
        sed: sed(a, b)?,
        scanmatch: scanmatch(a, b)?,
        stde: stde(a, b, STDE_K_MAX)?,
        multimatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G4: GridSpec = GridSpec { rows: 4, cols: 4 };
    const G2: GridSpec = GridSpec { rows: 2, cols: 2 };

    fn q(cells: &[usize], g: GridSpec) -> QuantizedScanpath {
        QuantizedScanpath::new(cells.to_vec(), g).unwrap()
    }

    #[test]
    fn identity_scores() {
        let a = q(&[0, 5, 10, 3], G4);
        let s = score_pair(&a, &a).unwrap();
        assert_eq!(s.sed, 0);
        assert_eq!(s.scanmatch, 1.0);
        assert_eq!(s.stde, 1.0);
        assert_eq!(
            s.multimatch,
            Some(MultiMatch {
                vector: 1.0,
                direction: 1.0,
                position: 1.0
            })
        );
    }

    #[test]
    fn sed_single_substitution() {
        assert_eq!(sed(&q(&[0, 1, 2], G4), &q(&[0, 1, 3], G4)).unwrap(), 1);
        assert_eq!(sed(&q(&[0, 1, 2], G4), &q(&[2], G4)).unwrap(), 2);
        assert!(matches!(
            sed(&q(&[0], G4), &q(&[0], G2)),
            Err(MetricError::GridMismatch(..))
        ));
    }

    #[test]
    fn opposite_corners() {
        let a = q(&[0], G4);
        let b = q(&[15], G4);
        assert_eq!(scanmatch(&a, &b).unwrap(), 0.0);
        assert_eq!(stde(&a, &b, 3).unwrap(), 0.0);
    }

    #[test]
    fn scanmatch_hand_value() {
        // [0, 1] vs [0]: best alignment matches 0 with 0, score 1 / 2
        assert_eq!(scanmatch(&q(&[0, 1], G2), &q(&[0], G2)).unwrap(), 0.5);
        // on 2x2 the diagonal is sqrt(0.5); cells 0 and 1 are 0.5 apart
        let s01 = 1.0 - 0.5 / 0.5f64.sqrt();
        assert!((scanmatch(&q(&[0], G2), &q(&[1], G2)).unwrap() - s01).abs() < 1e-15);
    }

    #[test]
    fn translated_path_keeps_saccades() {
        let a = q(&[0, 1, 5], G4);
        let b = q(&[2, 3, 7], G4);
        let m = multimatch(&a, &b).unwrap();
        assert_eq!((m.vector, m.direction), (1.0, 1.0));
        assert!(m.position < 1.0);
        assert!(multimatch(&q(&[3], G4), &a).is_err());
    }

    #[test]
    fn direction_similarity_cases() {
        assert_eq!(direction_similarity((1.0, 0.0), (-1.0, 0.0)), 0.0);
        assert_eq!(direction_similarity((1.0, 0.0), (0.0, 2.0)), 0.5);
        assert_eq!(direction_similarity((0.0, 0.0), (0.0, 0.0)), 1.0);
        assert_eq!(direction_similarity((0.0, 0.0), (0.0, 1.0)), 0.0);
    }

    #[test]
    fn min_cost_path_prefers_cheap_cells() {
        // 2x3 matrix with a cheap bottom row
        let cost = [0.0, 5.0, 5.0, 1.0, 0.0, 0.0];
        assert_eq!(min_cost_path(&cost, 2, 3), vec![(0, 0), (1, 1), (1, 2)]);
        assert_eq!(min_cost_path(&[0.0; 4], 2, 2), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn one_by_one_grid_is_all_ones() {
        let g = GridSpec { rows: 1, cols: 1 };
        let a = q(&[0, 0], g);
        let s = score_pair(&a, &q(&[0], g)).unwrap();
        assert_eq!(s.scanmatch, 0.5);
        assert_eq!(s.stde, 1.0);
    }
}
