#![allow(dead_code)]

use std::path::{Path, PathBuf};

use aoii_sched::{ChannelModel, GainChain, ProcessModel, SystemConfig, TrafficModel};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// `I` monitors (p = 0.6, w = 1), traditional devices with the given
/// durations, `M` channels with three-level banded gains.
pub fn small_config(monitors: usize, durations: &[u32], channels: usize) -> SystemConfig {
    SystemConfig {
        monitors: (0..monitors).map(|i| ProcessModel::new(10, if i % 2 == 0 { 0.6 } else { 0.9 }, 1.0 + (i % 2) as f64)).collect(),
        traffics: durations.iter().map(|&t| TrafficModel::new(t, 1.0)).collect(),
        channels: (0..channels)
            .map(|m| ChannelModel {
                bandwidth: 1.0,
                gains: (0..durations.len()).map(|j| GainChain::banded((1 + j + m) as f64, 3, 0.6)).collect(),
            })
            .collect(),
        snr: 1.0,
        discount: 0.9,
        log_base: 2.0,
    }
}

/// `z`-score of an observed frequency against probability `p` over `n` draws.
pub fn z_score(hits: u64, n: u64, p: f64) -> f64 {
    let freq = hits as f64 / n as f64;
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    if sd == 0.0 {
        if (freq - p).abs() < 1e-15 { 0.0 } else { f64::INFINITY }
    } else {
        (freq - p) / sd
    }
}
