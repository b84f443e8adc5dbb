#![allow(dead_code)]

pub mod oracles;

use gazeworld::gazedata::GridSpec;
use gazeworld::QuantizedScanpath;

pub const G2: GridSpec = GridSpec { rows: 2, cols: 2 };

/// Every cell sequence of length `1..=max_len` over `grid`.
pub fn all_paths(grid: GridSpec, max_len: usize) -> Vec<QuantizedScanpath> {
    let n = grid.len();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for c in 0..n {
                let mut q = p.clone();
                q.push(c);
                out.push(QuantizedScanpath::new(q.clone(), grid).unwrap());
                next.push(q);
            }
        }
        frontier = next;
    }
    out
}
