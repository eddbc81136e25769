//! Network scenario data model: routers, links, queues, and flows with
//! their routed paths and traffic descriptions. This is the shared wire
//! format between the generator, the simulator, the analytical baseline,
//! and the learned model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::TrafficModel;

/// Queue scheduling policy of the port the queue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Fifo,
    Sp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub capacity_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub id: String,
    /// The link this queue injects traffic into.
    pub link: String,
    pub size_bits: f64,
    pub policy: Policy,
    /// Strict-priority level; higher values are served first. Unused for
    /// FIFO queues.
    #[serde(default)]
    pub priority: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub src: String,
    pub dst: String,
    /// Hop sequence of (queue id, link id) pairs in traversal order.
    pub path: Vec<(String, String)>,
    pub traffic: TrafficModel,
    pub avg_rate_bps: f64,
    /// Mean packet size.
    pub packet_size_bits: f64,
    #[serde(default)]
    pub tos: u32,
}

/// Per-flow ground-truth or predicted performance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub mean_delay_s: f64,
    pub jitter_s: f64,
    pub loss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScenario {
    pub routers: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub queues: Vec<QueueSpec>,
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown reference {0}")]
    UnknownRef(String),
    #[error("link {0} has no queues")]
    DegenerateLink(String),
    #[error("link {0} has non-positive capacity")]
    BadCapacity(String),
    #[error("flow {flow}: {reason}")]
    DisconnectedPath { flow: String, reason: String },
    #[error("flow {0} has an empty path")]
    EmptyPath(String),
    #[error("flow {0} has non-positive rate or packet size")]
    BadFlowParams(String),
    #[error("traffic model of flow {flow}: {reason}")]
    BadTraffic { flow: String, reason: String },
}

/// Index lookups derived from a scenario. Rebuilt on demand; ids are
/// positions in the owning vectors.
pub struct ScenarioIndex {
    pub router: HashMap<String, usize>,
    pub link: HashMap<String, usize>,
    pub queue: HashMap<String, usize>,
    pub flow: HashMap<String, usize>,
    /// Queues of each link, in declaration order.
    pub link_queues: Vec<Vec<usize>>,
}

impl NetworkScenario {
    pub fn index(&self) -> Result<ScenarioIndex, ScenarioError> {
        let mut router = HashMap::new();
        for (i, r) in self.routers.iter().enumerate() {
            if router.insert(r.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateId(r.clone()));
            }
        }
        let mut link = HashMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if link.insert(l.id.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateId(l.id.clone()));
            }
        }
        let mut queue = HashMap::new();
        let mut link_queues = vec![Vec::new(); self.links.len()];
        for (i, q) in self.queues.iter().enumerate() {
            if queue.insert(q.id.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateId(q.id.clone()));
            }
            let li = *link
                .get(&q.link)
                .ok_or_else(|| ScenarioError::UnknownRef(q.link.clone()))?;
            link_queues[li].push(i);
        }
        let mut flow = HashMap::new();
        for (i, f) in self.flows.iter().enumerate() {
            if flow.insert(f.id.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateId(f.id.clone()));
            }
        }
        Ok(ScenarioIndex {
            router,
            link,
            queue,
            flow,
            link_queues,
        })
    }

    /// Full structural validation: id resolution, link/queue assignment,
    /// path connectivity, and positive rates and capacities.
    pub fn validate(&self) -> Result<ScenarioIndex, ScenarioError> {
        let idx = self.index()?;
        for l in &self.links {
            if !idx.router.contains_key(&l.from) {
                return Err(ScenarioError::UnknownRef(l.from.clone()));
            }
            if !idx.router.contains_key(&l.to) {
                return Err(ScenarioError::UnknownRef(l.to.clone()));
            }
            if l.capacity_bps.is_nan() || l.capacity_bps <= 0.0 {
                return Err(ScenarioError::BadCapacity(l.id.clone()));
            }
        }
        for (li, queues) in idx.link_queues.iter().enumerate() {
            if queues.is_empty() {
                return Err(ScenarioError::DegenerateLink(self.links[li].id.clone()));
            }
        }
        for f in &self.flows {
            if f.path.is_empty() {
                return Err(ScenarioError::EmptyPath(f.id.clone()));
            }
            if f.avg_rate_bps.is_nan()
                || f.avg_rate_bps <= 0.0
                || f.packet_size_bits.is_nan()
                || f.packet_size_bits <= 0.0
            {
                return Err(ScenarioError::BadFlowParams(f.id.clone()));
            }
            if let Err(reason) = f.traffic.check() {
                return Err(ScenarioError::BadTraffic {
                    flow: f.id.clone(),
                    reason,
                });
            }
            let mut prev_to: Option<&str> = None;
            for (qid, lid) in &f.path {
                let li = *idx
                    .link
                    .get(lid)
                    .ok_or_else(|| ScenarioError::UnknownRef(lid.clone()))?;
                let qi = *idx
                    .queue
                    .get(qid)
                    .ok_or_else(|| ScenarioError::UnknownRef(qid.clone()))?;
                if self.queues[qi].link != *lid {
                    return Err(ScenarioError::DisconnectedPath {
                        flow: f.id.clone(),
                        reason: format!("queue {qid} does not feed link {lid}"),
                    });
                }
                let l = &self.links[li];
                match prev_to {
                    None => {
                        if l.from != f.src {
                            return Err(ScenarioError::DisconnectedPath {
                                flow: f.id.clone(),
                                reason: format!("path starts at {} not {}", l.from, f.src),
                            });
                        }
                    }
                    Some(p) => {
                        if l.from != p {
                            return Err(ScenarioError::DisconnectedPath {
                                flow: f.id.clone(),
                                reason: format!("hop into {} breaks at {}", l.id, l.from),
                            });
                        }
                    }
                }
                prev_to = Some(&l.to);
            }
            if prev_to != Some(f.dst.as_str()) {
                return Err(ScenarioError::DisconnectedPath {
                    flow: f.id.clone(),
                    reason: format!("path ends at {:?} not {}", prev_to, f.dst),
                });
            }
        }
        Ok(idx)
    }

    /// Uniformly scales every flow's rate (both the nominal average and the
    /// generative traffic parameters).
    pub fn scale_rates(&mut self, factor: f64) {
        for f in &mut self.flows {
            f.avg_rate_bps *= factor;
            f.traffic.scale_rate(factor);
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// A -> B -> C line with one queue per link and `n_flows` two-hop flows.
    pub fn line_scenario(n_flows: usize, rate_bps: f64) -> NetworkScenario {
        let links = vec![
            LinkSpec {
                id: "l0".into(),
                from: "A".into(),
                to: "B".into(),
                capacity_bps: 1e6,
            },
            LinkSpec {
                id: "l1".into(),
                from: "B".into(),
                to: "C".into(),
                capacity_bps: 1e6,
            },
        ];
        let queues = vec![
            QueueSpec {
                id: "q0".into(),
                link: "l0".into(),
                size_bits: 1e9,
                policy: Policy::Fifo,
                priority: 0,
            },
            QueueSpec {
                id: "q1".into(),
                link: "l1".into(),
                size_bits: 1e9,
                policy: Policy::Fifo,
                priority: 0,
            },
        ];
        let flows = (0..n_flows)
            .map(|i| FlowSpec {
                id: format!("f{i}"),
                src: "A".into(),
                dst: "C".into(),
                path: vec![("q0".into(), "l0".into()), ("q1".into(), "l1".into())],
                traffic: TrafficModel::Poisson {
                    rate_pps: rate_bps / 1000.0,
                },
                avg_rate_bps: rate_bps,
                packet_size_bits: 1000.0,
                tos: 0,
            })
            .collect();
        NetworkScenario {
            routers: vec!["A".into(), "B".into(), "C".into()],
            links,
            queues,
            flows,
        }
    }
}
