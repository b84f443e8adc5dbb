//! Fixtures shared by the throughput benches.

use gazeworld::gazedata::{synth_world, OrderRule};
use gazeworld::metrics::QuantizedScanpath;
use gazeworld::train::{prepare_samples, Sample};
use gazeworld::{GridSpec, Model, ModelConfig, SyntheticDataset};

/// Desk-scale model and a synthetic dataset it can train on.
pub fn desk_fixture(n_images: usize) -> (Model, SyntheticDataset, Vec<Sample>) {
    let config = ModelConfig::default();
    let model = Model::new(config.clone()).expect("default config is valid");
    let data = synth_world(0, n_images, config.grid, OrderRule::IntensityOrder).expect("synthetic data");
    let samples = prepare_samples(&model, &data).expect("samples");
    (model, data, samples)
}

/// Two deterministic 7-fixation paths on a 4x4 grid.
pub fn path_pair() -> (QuantizedScanpath, QuantizedScanpath) {
    let grid = GridSpec { rows: 4, cols: 4 };
    let a = QuantizedScanpath::new(vec![5, 6, 10, 9, 0, 15, 3], grid).expect("valid path");
    let b = QuantizedScanpath::new(vec![6, 5, 9, 14, 1, 15, 12], grid).expect("valid path");
    (a, b)
}
