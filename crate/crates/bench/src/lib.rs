//! Shared fixtures for the benchmark targets.

use ordnet::datasets::{generate_scenarios, GenConfig, TrafficKind};
use ordnet::netmodel::NetworkScenario;

/// A deterministic mid-sized scenario for forward-pass and simulator
/// benchmarks.
pub fn bench_scenario() -> NetworkScenario {
    let cfg = GenConfig {
        count: 1,
        nodes: 8,
        flows: 12,
        traffic_models: vec![TrafficKind::Poisson, TrafficKind::OnOff],
        allow_sp: true,
        ..GenConfig::default()
    };
    generate_scenarios(&cfg, 12345)
        .expect("benchmark scenario generates")
        .remove(0)
        .scenario
}
