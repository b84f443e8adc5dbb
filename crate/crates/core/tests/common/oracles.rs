//! Exhaustive-enumeration reference implementations for small inputs.

use gazeworld::gazedata::GridSpec;
use gazeworld::metrics::{multimatch_along, MultiMatch};
use gazeworld::QuantizedScanpath;

fn center_dist(grid: GridSpec, u: usize, v: usize) -> f64 {
    let (a, b) = (grid.center(u), grid.center(v));
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Minimum over all edit scripts, by plain recursion on the last symbols.
pub fn sed(a: &[usize], b: &[usize]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = sed(ra, rb) + usize::from(x != y);
            let del = sed(ra, b) + 1;
            let ins = sed(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every strictly increasing matching between the two index ranges, as
/// pair lists in increasing order.
fn matchings(m: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(i: usize, j: usize, m: usize, n: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        out.push(cur.clone());
        for a in i..m {
            for b in j..n {
                cur.push((a, b));
                rec(a + 1, b + 1, m, n, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, 0, m, n, &mut Vec::new(), &mut out);
    out
}

/// Best gap-free-cost alignment score over all matchings, divided by the
/// longer length.
pub fn scanmatch(a: &QuantizedScanpath, b: &QuantizedScanpath) -> f64 {
    let grid = a.grid();
    let diag = grid.center_diagonal();
    let (ac, bc) = (a.cells(), b.cells());
    let mut best = 0.0f64;
    for m in matchings(ac.len(), bc.len()) {
        let mut s = 0.0;
        for (i, j) in m {
            s += (1.0 - center_dist(grid, ac[i], bc[j]) / diag).clamp(0.0, 1.0);
        }
        best = best.max(s);
    }
    best / ac.len().max(bc.len()) as f64
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    Diagonal,
    Up,
    Left,
}

/// All monotone paths from `(0, 0)` to `(m - 1, n - 1)` with their steps.
fn monotone_paths(m: usize, n: usize) -> Vec<(Vec<(usize, usize)>, Vec<Step>)> {
    fn rec(
        i: usize,
        j: usize,
        m: usize,
        n: usize,
        cells: &mut Vec<(usize, usize)>,
        steps: &mut Vec<Step>,
        out: &mut Vec<(Vec<(usize, usize)>, Vec<Step>)>,
    ) {
        if (i, j) == (m - 1, n - 1) {
            out.push((cells.clone(), steps.clone()));
            return;
        }
        for (di, dj, s) in [(1, 1, Step::Diagonal), (1, 0, Step::Up), (0, 1, Step::Left)] {
            if i + di < m && j + dj < n {
                cells.push((i + di, j + dj));
                steps.push(s);
                rec(i + di, j + dj, m, n, cells, steps, out);
                cells.pop();
                steps.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, 0, m, n, &mut vec![(0, 0)], &mut Vec::new(), &mut out);
    out
}

/// Cheapest path by exhaustive search; ties go to the path whose steps,
/// read from the end, prefer diagonal, then up, then left.
fn best_path(pa: &[(f64, f64)], pb: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let sacc =
        |p: &[(f64, f64)]| -> Vec<(f64, f64)> { p.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect() };
    let (sa, sb) = (sacc(pa), sacc(pb));
    let cost = |i: usize, j: usize| (sa[i].0 - sb[j].0).hypot(sa[i].1 - sb[j].1);
    let mut best: Option<(f64, Vec<Step>, Vec<(usize, usize)>)> = None;
    for (cells, steps) in monotone_paths(sa.len(), sb.len()) {
        let mut total = 0.0;
        for &(i, j) in &cells {
            total += cost(i, j);
        }
        let key: Vec<Step> = steps.iter().rev().copied().collect();
        let better = match &best {
            None => true,
            Some((c, k, _)) => total < *c || (total == *c && key < *k),
        };
        if better {
            best = Some((total, key, cells));
        }
    }
    best.expect("at least one path").2
}

/// Both argument orders scored along their exhaustive best paths, averaged.
pub fn multimatch(a: &QuantizedScanpath, b: &QuantizedScanpath) -> MultiMatch {
    let diag = a.grid().center_diagonal();
    let (pa, pb) = (a.points(), b.points());
    let ab = multimatch_along(&pa, &pb, &best_path(&pa, &pb), diag);
    let ba = multimatch_along(&pb, &pa, &best_path(&pb, &pa), diag);
    MultiMatch {
        vector: (ab.vector + ba.vector) / 2.0,
        direction: (ab.direction + ba.direction) / 2.0,
        position: (ab.position + ba.position) / 2.0,
    }
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}
