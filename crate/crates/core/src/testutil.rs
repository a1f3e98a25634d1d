//! Shared fixtures for unit tests.

use crate::data::{build_dataset, compute_features, generate, Dataset, FeatureConfig, GeneratorConfig};
use crate::model::{Model, ModelConfig};
use crate::params::{flatten, load_flat};
use crate::rng::SeededRng;

/// A normalized synthetic dataset with roughly `rows` rows.
pub fn small_dataset(rows: usize, seed: u64) -> Dataset {
    let gen = GeneratorConfig { horizon: rows + 60, seed, ..Default::default() };
    let data = generate(&gen).unwrap();
    let frames = compute_features(&data.snapshots, 20).unwrap();
    build_dataset(&frames, gen.interval_ms, &FeatureConfig { zscore_window: 40, ..Default::default() }).unwrap()
}

/// Restricts a dataset to its first `d` feature columns.
pub fn narrow(ds: &Dataset, d: usize) -> Dataset {
    let mut out = ds.clone();
    let m = ds.feature_dim();
    out.feature_names.truncate(d);
    out.features = (0..ds.len()).flat_map(|t| ds.features[t * m..t * m + d].to_vec()).collect();
    out
}

/// Every component switched on, at toy sizes.
pub fn tiny_config(states: usize, d: usize) -> ModelConfig {
    ModelConfig {
        states,
        hidden: 4,
        heads: 2,
        lookback: 3,
        kernel: 2,
        dilations: vec![1, 2],
        wavelet_levels: 1,
        wavelet_filter_len: 2,
        coarse_window: 4,
        coarse_stride: 2,
        coarse_channels: (0..d).collect(),
        flow_layers: 2,
        flow_hidden: 3,
        state_embed_dim: 2,
        transition_embed_dim: 2,
        gru_hidden: 3,
        mlp_hidden: 3,
        signal_window: 3,
        ..Default::default()
    }
}

/// A model whose parameters are jittered away from their structured initial values.
pub fn perturbed_model(cfg: ModelConfig, d: usize, seed: u64) -> Model {
    let mut m = Model::new(cfg, d, seed).unwrap();
    let mut rng = SeededRng::new(seed + 100);
    let flat: Vec<f64> = flatten(&m.params).iter().map(|v| v + 0.3 * rng.normal()).collect();
    load_flat(&mut m.params, &flat);
    m
}
