//! Fixtures shared by the benchmarks.

use aoii_sched::config::{ChannelModel, GainChain, ProcessModel, SystemConfig, TrafficModel};

/// `monitors` ten-state processes alternating `p = 0.6 / 0.9`, two
/// traditional devices (`T = 1, 3`) and `channels` banded channels.
pub fn fixture_config(monitors: usize, channels: usize) -> SystemConfig {
    SystemConfig {
        monitors: (0..monitors)
            .map(|i| ProcessModel::new(10, if i % 2 == 0 { 0.6 } else { 0.9 }, 1.0 + (i % 2) as f64))
            .collect(),
        traffics: vec![TrafficModel::new(1, 1.0), TrafficModel::new(3, 2.0)],
        channels: (0..channels)
            .map(|m| ChannelModel {
                bandwidth: 1.0,
                gains: vec![GainChain::banded(1.0 + m as f64, 3, 0.6); 2],
            })
            .collect(),
        snr: 1.0,
        discount: 0.9,
        log_base: 2.0,
    }
}
