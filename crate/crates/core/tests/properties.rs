mod common;

use gazeworld::gazedata::{
    assign_patches, dedup_first_visit, synth_world, Fixation, FixationRecord, GridSpec, OrderRule,
};
use gazeworld::metrics::{auroc, sed, QuantizedScanpath};
use gazeworld::numcore::ema_schedule;
use proptest::prelude::*;

fn fixations() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 0.0..2.0f64), 1..30)
}

proptest! {
    #[test]
    fn targets_partition_the_grid(fx in fixations(), rows in 1usize..5, cols in 1usize..5) {
        let grid = GridSpec { rows, cols };
        let rec = FixationRecord::new("p", fx.iter().map(|&(x, y, dur)| Fixation { x, y, dur }).collect()).unwrap();
        let seq = dedup_first_visit(&assign_patches(&rec, grid), grid).unwrap();
        let mut seen = vec![0u32; grid.len()];
        seen[seq.visited()[0]] += 1;
        for &p in &seq.visited()[1..] {
            seen[p] += 1;
        }
        for p in seq.unvisited() {
            seen[p] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "{seen:?}");
    }

    #[test]
    fn dwell_sums_are_kept(fx in fixations()) {
        let grid = GridSpec { rows: 3, cols: 3 };
        let rec = FixationRecord::new("p", fx.iter().map(|&(x, y, dur)| Fixation { x, y, dur }).collect()).unwrap();
        let seq = dedup_first_visit(&assign_patches(&rec, grid), grid).unwrap();
        let total: f64 = fx.iter().map(|f| f.2).sum();
        prop_assert!((seq.dwell().iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn ema_schedule_is_monotone(total in 1u64..500, t in 0u64..500) {
        let t = t.min(total - 1);
        let a = ema_schedule(t, total).unwrap();
        let b = ema_schedule(t + 1, total).unwrap();
        prop_assert!(a <= b);
        prop_assert!((0.998..=1.0).contains(&a));
    }

    #[test]
    fn auroc_matches_pair_count(scores in prop::collection::vec(-3i32..3, 2..25), flips in prop::collection::vec(any::<bool>(), 25)) {
        let labels: Vec<u8> = scores.iter().zip(&flips).map(|(_, &f)| u8::from(f)).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        prop_assert!((auroc(&s, &labels).unwrap() - common::oracles::auroc(&s, &labels)).abs() < 1e-12);
    }

    #[test]
    fn sed_bounded_by_longer_path(a in prop::collection::vec(0usize..9, 1..8), b in prop::collection::vec(0usize..9, 1..8)) {
        let grid = GridSpec { rows: 3, cols: 3 };
        let (qa, qb) = (QuantizedScanpath::new(a.clone(), grid).unwrap(), QuantizedScanpath::new(b.clone(), grid).unwrap());
        let d = sed(&qa, &qb).unwrap();
        prop_assert!(d <= a.len().max(b.len()));
        prop_assert!(d >= a.len().abs_diff(b.len()));
        prop_assert_eq!(d, common::oracles::sed(&a, &b));
    }
}

#[test]
fn synthetic_worlds_partition_for_every_rule() {
    let grid = GridSpec { rows: 4, cols: 4 };
    for rule in OrderRule::ALL {
        let ds = synth_world(17, 50, grid, rule).unwrap();
        for rec in &ds.records {
            let seq = dedup_first_visit(&assign_patches(rec, grid), grid).unwrap();
            let mut all: Vec<usize> = seq.visited().to_vec();
            all.extend(seq.unvisited());
            all.sort_unstable();
            assert_eq!(all, (0..16).collect::<Vec<_>>());
        }
    }
}
