//! Analytical delay baseline: each link is treated as an independent M/M/1
//! queue fed by the sum of its flows' nominal rates, and a flow's delay is
//! the sum of per-link sojourn times along its path. Scheduling policies
//! and priorities are deliberately ignored (all queues of a link merge),
//! which is exactly the blindness the learned model is compared against.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{NetworkScenario, ScenarioError};

#[derive(Debug, Error)]
pub enum QtError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Queueing-theory prediction for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QtPrediction {
    /// (flow id, predicted mean delay in seconds); infinite when the path
    /// crosses a saturated link.
    pub flow_delays: Vec<(String, f64)>,
    /// Utilization per link, in scenario link order.
    pub link_utilization: Vec<f64>,
    /// Links with utilization >= 1.
    pub saturated: BTreeSet<String>,
}

impl QtPrediction {
    pub fn delay_of(&self, flow_id: &str) -> Option<f64> {
        self.flow_delays
            .iter()
            .find(|(id, _)| id == flow_id)
            .map(|&(_, d)| d)
    }
}

/// M/M/1 tandem prediction. Packet rates are `avg_rate / packet_size` per
/// flow; flows of different packet sizes sharing a link contribute to a
/// traffic-weighted mean size, so the service rate is
/// `capacity / mean_size`.
pub fn qt_predict(scenario: &NetworkScenario) -> Result<QtPrediction, QtError> {
    let index = scenario.index()?;
    let n_links = scenario.links.len();
    let mut pkt_rate = vec![0.0f64; n_links];
    let mut bit_rate = vec![0.0f64; n_links];

    for f in &scenario.flows {
        let pps = f.avg_rate_bps / f.packet_size_bits;
        for (_, lid) in &f.path {
            let li = index.link[lid];
            pkt_rate[li] += pps;
            bit_rate[li] += f.avg_rate_bps;
        }
    }

    let mut sojourn = vec![0.0f64; n_links];
    let mut utilization = vec![0.0f64; n_links];
    let mut saturated = BTreeSet::new();
    for li in 0..n_links {
        if pkt_rate[li] <= 0.0 {
            continue;
        }
        let mean_size = bit_rate[li] / pkt_rate[li];
        let mu = scenario.links[li].capacity_bps / mean_size;
        utilization[li] = pkt_rate[li] / mu;
        if pkt_rate[li] >= mu {
            saturated.insert(scenario.links[li].id.clone());
            sojourn[li] = f64::INFINITY;
        } else {
            sojourn[li] = 1.0 / (mu - pkt_rate[li]);
        }
    }

    let flow_delays = scenario
        .flows
        .iter()
        .map(|f| {
            let d: f64 = f.path.iter().map(|(_, lid)| sojourn[index.link[lid]]).sum();
            (f.id.clone(), d)
        })
        .collect();

    Ok(QtPrediction {
        flow_delays,
        link_utilization: utilization,
        saturated,
    })
}

/// Prediction rows in the shared CSV schema used by model evaluation:
/// `flow_id,mean_delay_s`.
pub fn predictions_csv(pred: &QtPrediction) -> String {
    let mut out = String::from("flow_id,mean_delay_s\n");
    for (id, d) in &pred.flow_delays {
        out.push_str(&format!("{id},{d}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::scenario::testutil::line_scenario;
    use crate::netmodel::{FlowSpec, LinkSpec, NetworkScenario, Policy, QueueSpec};
    use crate::netsim::{simulate, TrafficModel};

    fn single_link(rate_pps: f64, capacity_bps: f64, size_bits: f64) -> NetworkScenario {
        NetworkScenario {
            routers: vec!["A".into(), "B".into()],
            links: vec![LinkSpec {
                id: "l0".into(),
                from: "A".into(),
                to: "B".into(),
                capacity_bps,
            }],
            queues: vec![QueueSpec {
                id: "q0".into(),
                link: "l0".into(),
                size_bits: 1e12,
                policy: Policy::Fifo,
                priority: 0,
            }],
            flows: vec![FlowSpec {
                id: "f0".into(),
                src: "A".into(),
                dst: "B".into(),
                path: vec![("q0".into(), "l0".into())],
                traffic: TrafficModel::Poisson { rate_pps },
                avg_rate_bps: rate_pps * size_bits,
                packet_size_bits: size_bits,
                tos: 0,
            }],
        }
    }

    #[test]
    fn single_link_closed_form() {
        // lambda = 50 pkt/s, mu = 100 pkt/s => W = 1/(100-50) = 0.02 s.
        let s = single_link(50.0, 100.0 * 1000.0, 1000.0);
        let p = qt_predict(&s).unwrap();
        assert!((p.delay_of("f0").unwrap() - 0.02).abs() < 1e-12);
        assert!((p.link_utilization[0] - 0.5).abs() < 1e-12);
        assert!(p.saturated.is_empty());
    }

    #[test]
    fn two_hop_delay_is_additive() {
        let s = line_scenario(1, 1e5);
        // Each link: mu = 1e6/1000 = 1000 pkt/s, lambda = 100 pkt/s.
        let p = qt_predict(&s).unwrap();
        let w = 1.0 / (1000.0 - 100.0);
        assert!((p.delay_of("f0").unwrap() - 2.0 * w).abs() < 1e-12);
    }

    #[test]
    fn saturation_is_reported_not_raised() {
        let s = single_link(120.0, 100.0 * 1000.0, 1000.0);
        let p = qt_predict(&s).unwrap();
        assert!(p.saturated.contains("l0"));
        assert!(p.delay_of("f0").unwrap().is_infinite());
    }

    #[test]
    fn increasing_a_rate_never_decreases_delay() {
        let mut s = line_scenario(3, 1e5);
        let before = qt_predict(&s).unwrap();
        s.flows[1].avg_rate_bps *= 2.0;
        let after = qt_predict(&s).unwrap();
        for f in &s.flows {
            assert!(after.delay_of(&f.id).unwrap() >= before.delay_of(&f.id).unwrap() - 1e-15);
        }
    }

    #[test]
    fn heterogeneous_sizes_use_traffic_weighted_mean() {
        let mut s = single_link(50.0, 1e6, 1000.0);
        s.flows.push(FlowSpec {
            id: "f1".into(),
            src: "A".into(),
            dst: "B".into(),
            path: vec![("q0".into(), "l0".into())],
            traffic: TrafficModel::Poisson { rate_pps: 50.0 },
            avg_rate_bps: 50.0 * 3000.0,
            packet_size_bits: 3000.0,
            tos: 0,
        });
        let p = qt_predict(&s).unwrap();
        // 100 pkt/s carrying 200 kbit/s: mean size 2000 bits, mu = 500.
        let w = 1.0 / (500.0 - 100.0);
        assert!((p.delay_of("f0").unwrap() - w).abs() < 1e-12);
        assert_eq!(p.delay_of("f0"), p.delay_of("f1"));
    }

    #[test]
    fn matches_simulation_in_the_markovian_regime() {
        // Pure Poisson, exponential sizes, single queue, rho = 0.5: QT's
        // assumptions hold exactly, so prediction and simulation agree.
        let s = single_link(500.0, 1e6, 1000.0);
        let predicted = qt_predict(&s).unwrap().delay_of("f0").unwrap();
        let res = simulate(&s, 31, 240.0, 24.0).unwrap();
        let f = &res.flows[0];
        let k = f.batch_means.len() as f64;
        let mean = f.batch_means.iter().sum::<f64>() / k;
        let var = f
            .batch_means
            .iter()
            .map(|b| (b - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        let se = (var / k).sqrt();
        assert!(
            (f.metrics.mean_delay_s - predicted).abs() <= 3.0 * se,
            "sim {} vs qt {predicted}, 3se {}",
            f.metrics.mean_delay_s,
            3.0 * se
        );
    }
}
