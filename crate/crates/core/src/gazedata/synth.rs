//! Synthetic worlds with a planted gaze rule.
//!
//! Every image is a sum of Gaussian blobs. Under [`OrderRule::IntensityOrder`]
//! the simulated reader visits the brightest cells in descending order of
//! mean intensity, so the order of a scanpath is predictable from image
//! content. Raster and random orders keep the same number of visits but
//! destroy that regularity. The binary label marks whether the brightest
//! cell lies in the left half of the grid.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, Fixation, FixationRecord, GridSpec, ImageGray};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderRule {
    /// Brightest cells first, in descending intensity.
    IntensityOrder,
    /// The first `k` cells in raster order.
    Raster,
    /// The intensity-order cells, shuffled.
    Random,
}

impl OrderRule {
    pub const ALL: [OrderRule; 3] = [OrderRule::IntensityOrder, OrderRule::Raster, OrderRule::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            OrderRule::IntensityOrder => "intensity-order",
            OrderRule::Raster => "raster",
            OrderRule::Random => "random",
        }
    }
}

impl std::str::FromStr for OrderRule {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intensity-order" | "gaze" => Ok(OrderRule::IntensityOrder),
            "raster" => Ok(OrderRule::Raster),
            "random" => Ok(OrderRule::Random),
            other => Err(DataError::InvalidArgument(format!("unknown order rule {other}"))),
        }
    }
}

/// How blobs are placed in an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlobLayout {
    /// `min_blobs..=max_blobs` blobs anywhere.
    Free,
    /// One narrow and one wide blob of equal mass in opposite halves, so the
    /// two halves carry the same total intensity.
    Balanced,
}

/// Knobs of the generator. Defaults give 4x4-pixel cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub patch_px: usize,
    pub layout: BlobLayout,
    /// Sigma range of the wide blob in the balanced layout.
    pub wide_sigma: (f64, f64),
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub blob_sigma: (f64, f64),
    pub blob_amplitude: (f64, f64),
    pub background: f64,
    pub pixel_noise: f64,
    /// Visits per image as fractions of the cell count.
    pub visit_fraction: (f64, f64),
    /// Probability of re-fixating an already visited cell after each visit.
    pub refixation_prob: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            patch_px: 4,
            layout: BlobLayout::Balanced,
            wide_sigma: (0.15, 0.2),
            min_blobs: 2,
            max_blobs: 3,
            blob_sigma: (0.08, 0.16),
            blob_amplitude: (0.4, 1.0),
            background: 0.05,
            pixel_noise: 0.02,
            visit_fraction: (0.25, 0.5),
            refixation_prob: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub images: Vec<ImageGray>,
    pub records: Vec<FixationRecord>,
    pub labels: Vec<u8>,
    pub seed: u64,
    pub grid: GridSpec,
    pub rule: OrderRule,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> SyntheticDataset {
        SyntheticDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            seed: self.seed,
            grid: self.grid,
            rule: self.rule,
        }
    }
}

/// Order in which a reader following `rule` visits `k` cells.
pub fn gaze_order(intensities: &[f64], k: usize, rule: OrderRule, rng: &mut impl Rng) -> Vec<usize> {
    let k = k.min(intensities.len());
    match rule {
        OrderRule::Raster => (0..k).collect(),
        OrderRule::IntensityOrder | OrderRule::Random => {
            let mut order: Vec<usize> = (0..intensities.len()).collect();
            // stable sort: ties keep raster order
            order.sort_by(|&a, &b| intensities[b].total_cmp(&intensities[a]));
            order.truncate(k);
            if rule == OrderRule::Random {
                order.shuffle(rng);
            }
            order
        }
    }
}

/// Index of the brightest cell; ties resolve to the lowest index.
pub fn brightest_cell(intensities: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in intensities.iter().enumerate() {
        if *v > intensities[best] {
            best = i;
        }
    }
    best
}

/// 1 when the brightest cell lies strictly in the left half of the grid.
pub fn left_half_label(intensities: &[f64], grid: GridSpec) -> u8 {
    let (_, c) = grid.row_col(brightest_cell(intensities));
    u8::from((c as f64 + 0.5) < grid.cols as f64 / 2.0)
}

fn render(params: &SynthParams, grid: GridSpec, rng: &mut ChaCha8Rng, id: String) -> ImageGray {
    let (w, h) = (grid.cols * params.patch_px, grid.rows * params.patch_px);
    let blobs: Vec<(f64, f64, f64, f64)> = match params.layout {
        BlobLayout::Free => {
            let n_blobs = rng.random_range(params.min_blobs..=params.max_blobs.max(params.min_blobs));
            (0..n_blobs)
                .map(|_| {
                    (
                        rng.random_range(0.1..0.9),
                        rng.random_range(0.1..0.9),
                        rng.random_range(params.blob_sigma.0..=params.blob_sigma.1),
                        rng.random_range(params.blob_amplitude.0..=params.blob_amplitude.1),
                    )
                })
                .collect()
        }
        BlobLayout::Balanced => {
            let narrow_left = rng.random_bool(0.5);
            let (nx, wx) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
            let (nx, wx) = if narrow_left { (nx, 1.0 - wx) } else { (1.0 - nx, wx) };
            let sn = rng.random_range(params.blob_sigma.0..=params.blob_sigma.1);
            let sw = rng.random_range(params.wide_sigma.0..=params.wide_sigma.1);
            let an = rng.random_range(params.blob_amplitude.0..=params.blob_amplitude.1);
            // equal mass: amplitude scales with 1 / sigma^2
            let aw = an * (sn * sn) / (sw * sw);
            vec![
                (nx, rng.random_range(0.1..0.9), sn, an),
                (wx, rng.random_range(0.1..0.9), sw, aw),
            ]
        }
    };
    let noise = Normal::new(0.0, params.pixel_noise.max(0.0)).expect("finite noise");
    let mut pixels = Vec::with_capacity(w * h);
    for py in 0..h {
        for px in 0..w {
            let x = (px as f64 + 0.5) / w as f64;
            let y = (py as f64 + 0.5) / h as f64;
            let mut v = params.background;
            for &(cx, cy, s, a) in &blobs {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            v += noise.sample(rng);
            // quantize so that PGM round trips are exact
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    ImageGray::new(id, w, h, pixels).expect("rendered image is valid")
}

fn fixations_for(
    order: &[usize],
    intensities: &[f64],
    grid: GridSpec,
    params: &SynthParams,
    rng: &mut ChaCha8Rng,
) -> Vec<Fixation> {
    let jitter = |rng: &mut ChaCha8Rng, patch: usize| {
        let (cx, cy) = grid.center(patch);
        let jx = rng.random_range(-0.35..0.35) / grid.cols as f64;
        let jy = rng.random_range(-0.35..0.35) / grid.rows as f64;
        ((cx + jx).clamp(0.0, 1.0), (cy + jy).clamp(0.0, 1.0))
    };
    let mut out = Vec::new();
    for (i, &p) in order.iter().enumerate() {
        let (x, y) = jitter(rng, p);
        let dur = 0.15 + 0.35 * intensities[p].clamp(0.0, 1.0) + rng.random_range(0.0..0.05);
        out.push(Fixation { x, y, dur });
        if i > 0 && rng.random_bool(params.refixation_prob.clamp(0.0, 1.0)) {
            let back = order[rng.random_range(0..i)];
            let (x, y) = jitter(rng, back);
            out.push(Fixation {
                x,
                y,
                dur: rng.random_range(0.05..0.15),
            });
        }
    }
    out
}

pub fn synth_world(seed: u64, n_images: usize, grid: GridSpec, rule: OrderRule) -> Result<SyntheticDataset, DataError> {
    synth_world_with(&SynthParams::default(), seed, n_images, grid, rule)
}

/// Generates `n_images` images, their gaze records and labels.
///
/// Images and labels depend only on `seed`, so datasets that differ only in
/// `rule` share their images.
pub fn synth_world_with(
    params: &SynthParams,
    seed: u64,
    n_images: usize,
    grid: GridSpec,
    rule: OrderRule,
) -> Result<SyntheticDataset, DataError> {
    if n_images == 0 {
        return Err(DataError::InvalidArgument("n_images must be at least 1".into()));
    }
    if params.patch_px == 0 {
        return Err(DataError::InvalidArgument("patch_px must be at least 1".into()));
    }
    let mut image_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaze_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // a separate stream for shuffles keeps the visit counts rule-independent
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0bad_5eed_0bad_5eed);
    let n = grid.len();
    let lo = ((params.visit_fraction.0 * n as f64).ceil() as usize).clamp(1, n);
    let hi = ((params.visit_fraction.1 * n as f64).ceil() as usize).clamp(lo, n);

    let mut ds = SyntheticDataset {
        images: Vec::with_capacity(n_images),
        records: Vec::with_capacity(n_images),
        labels: Vec::with_capacity(n_images),
        seed,
        grid,
        rule,
    };
    for i in 0..n_images {
        let id = format!("img{i:05}");
        let image = render(params, grid, &mut image_rng, id.clone());
        let intensities = image.patch_means(grid)?;
        let k = gaze_rng.random_range(lo..=hi);
        let order = gaze_order(&intensities, k, rule, &mut order_rng);
        let fixations = fixations_for(&order, &intensities, grid, params, &mut gaze_rng);
        ds.labels.push(left_half_label(&intensities, grid));
        ds.records.push(FixationRecord::new(id, fixations)?);
        ds.images.push(image);
    }
    Ok(ds)
}

/// Shuffles with the dataset seed and cuts into train/val/test.
pub fn split_dataset(
    ds: &SyntheticDataset,
    fractions: (f64, f64, f64),
) -> Result<(SyntheticDataset, SyntheticDataset, SyntheticDataset), DataError> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f > 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSplit(format!(
            "fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * a).round() as usize;
    let n_val = (n as f64 * b).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(DataError::InvalidSplit(format!(
            "{n} items cannot be split {fractions:?} without an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(ds.seed.wrapping_add(0x5eed)));
    let (train, rest) = idx.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((ds.subset(train), ds.subset(val), ds.subset(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gazedata::FixationSequence;

    fn grid4() -> GridSpec {
        GridSpec::new(4, 4).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_world(1, 5, grid4(), OrderRule::IntensityOrder).unwrap();
        let b = synth_world(1, 5, grid4(), OrderRule::IntensityOrder).unwrap();
        assert_eq!(a, b);
        let c = synth_world(2, 5, grid4(), OrderRule::IntensityOrder).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn rules_share_images_and_labels() {
        let a = synth_world(3, 6, grid4(), OrderRule::IntensityOrder).unwrap();
        let b = synth_world(3, 6, grid4(), OrderRule::Random).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn raster_rule_is_a_prefix() {
        let ds = synth_world(4, 10, grid4(), OrderRule::Raster).unwrap();
        for r in &ds.records {
            let seq = FixationSequence::from_record(r, ds.grid).unwrap();
            let expect: Vec<usize> = (0..seq.len()).collect();
            assert_eq!(seq.visited(), expect.as_slice());
        }
    }

    #[test]
    fn intensity_rule_matches_sort_oracle() {
        let ds = synth_world(5, 20, grid4(), OrderRule::IntensityOrder).unwrap();
        for (img, r) in ds.images.iter().zip(&ds.records) {
            let means = img.patch_means(ds.grid).unwrap();
            let seq = FixationSequence::from_record(r, ds.grid).unwrap();
            let mut ranked: Vec<usize> = (0..means.len()).collect();
            ranked.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap().then(a.cmp(&b)));
            assert_eq!(seq.visited(), &ranked[..seq.len()]);
        }
    }

    #[test]
    fn monotone_intensities_visit_in_rank_order() {
        let intensities: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = gaze_order(&intensities, 9, OrderRule::IntensityOrder, &mut rng);
        assert_eq!(order, vec![8, 7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn random_rule_permutes_gaze_set() {
        let g = synth_world(6, 10, grid4(), OrderRule::IntensityOrder).unwrap();
        let r = synth_world(6, 10, grid4(), OrderRule::Random).unwrap();
        let mut any_diff = false;
        for (a, b) in g.records.iter().zip(&r.records) {
            let sa = FixationSequence::from_record(a, g.grid).unwrap();
            let sb = FixationSequence::from_record(b, g.grid).unwrap();
            let (mut x, mut y) = (sa.visited().to_vec(), sb.visited().to_vec());
            any_diff |= x != y;
            x.sort();
            y.sort();
            assert_eq!(x, y);
        }
        assert!(any_diff);
    }

    #[test]
    fn labels_follow_brightest_column() {
        let g = GridSpec::new(2, 4).unwrap();
        let mut v = vec![0.0; 8];
        v[5] = 1.0;
        assert_eq!(left_half_label(&v, g), 1);
        v[6] = 2.0;
        assert_eq!(left_half_label(&v, g), 0);
    }

    #[test]
    fn split_sizes_and_errors() {
        let ds = synth_world(7, 10, grid4(), OrderRule::IntensityOrder).unwrap();
        let (a, b, c) = split_dataset(&ds, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a2, _, _) = split_dataset(&ds, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(a, a2);
        let mut ids: Vec<&str> = a
            .images
            .iter()
            .chain(&b.images)
            .chain(&c.images)
            .map(|i| i.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert!(split_dataset(&ds, (1.0, 0.0, 0.0)).is_err());
        assert!(split_dataset(&ds, (0.5, 0.2, 0.2)).is_err());
    }

    #[test]
    fn zero_images_rejected() {
        assert!(synth_world(0, 0, grid4(), OrderRule::Raster).is_err());
    }
}
