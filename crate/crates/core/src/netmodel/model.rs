//! The flow/queue/link message-passing model and its readout heads.
//!
//! Two interchangeable forward paths produce the same states: a direct
//! implementation iterating the scenario (flows scan their (queue, link)
//! hops through a GRU, queues sum incoming per-hop flow states through an
//! MLP update, links scan their queues' new states through a second GRU),
//! and an equivalent path that walks the scenario's ordered complex using
//! the generic order-aware machinery. Both share one parameter store, and
//! their agreement is checked numerically in the tests.

use serde::{Deserialize, Serialize};

use crate::gccn::{ordgccn_face_states, CellStates, FaceStates};
use crate::tensornn::{gru_step, mlp, Activation, ParamStore, Tape, Tensor, ValueId};
use crate::topology::{CellId, NeighborhoodSpec};

use super::complexify::{flow_queue_spec, Complexified};
use super::{NetModelError, NetworkScenario, Policy};
use crate::netsim::service_order;

/// Model hyperparameters. `head_scale` sets the output range of the
/// delay/jitter heads, which produce `head_scale * (exp(mlp(h)) - 1)`:
/// zero at zero weights, bounded below by `-head_scale`, and exponentially
/// fast to grow toward queue-backlog magnitudes in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub iterations: usize,
    pub head_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 32,
            iterations: 8,
            head_scale: 15.0,
        }
    }
}

/// Per-feature z-score statistics, fitted once on the training split and
/// frozen thereafter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub flow: Vec<(f64, f64)>,
    pub queue: Vec<(f64, f64)>,
    pub link: Vec<(f64, f64)>,
}

pub(crate) fn flow_raw(scenario: &NetworkScenario, fi: usize) -> Vec<f64> {
    let f = &scenario.flows[fi];
    vec![f.avg_rate_bps, f.packet_size_bits, f.path.len() as f64]
}

pub(crate) fn queue_raw(scenario: &NetworkScenario, qi: usize) -> Vec<f64> {
    let q = &scenario.queues[qi];
    let (fifo, sp) = match q.policy {
        Policy::Fifo => (1.0, 0.0),
        Policy::Sp => (0.0, 1.0),
    };
    vec![q.size_bits, fifo, sp, q.priority as f64]
}

pub(crate) fn link_raw(scenario: &NetworkScenario, index_nq: usize, li: usize) -> Vec<f64> {
    let l = &scenario.links[li];
    vec![l.capacity_bps, index_nq as f64]
}

fn fit_dim(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    if rows.is_empty() {
        return Vec::new();
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    (0..d)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 0.0 { std } else { 1.0 })
        })
        .collect()
}

/// Fits z-score statistics over every flow, queue, and link in the given
/// scenarios.
pub fn fit_stats(scenarios: &[NetworkScenario]) -> Result<NormStats, NetModelError> {
    let mut flows = Vec::new();
    let mut queues = Vec::new();
    let mut links = Vec::new();
    for s in scenarios {
        let index = s.index()?;
        for fi in 0..s.flows.len() {
            flows.push(flow_raw(s, fi));
        }
        for qi in 0..s.queues.len() {
            queues.push(queue_raw(s, qi));
        }
        for li in 0..s.links.len() {
            links.push(link_raw(s, index.link_queues[li].len(), li));
        }
    }
    Ok(NormStats {
        flow: fit_dim(&flows),
        queue: fit_dim(&queues),
        link: fit_dim(&links),
    })
}

fn zscore(raw: &[f64], stats: &[(f64, f64)]) -> Vec<f64> {
    raw.iter()
        .zip(stats)
        .map(|(x, (m, s))| (x - m) / s)
        .collect()
}

/// Initial width-D embeddings per entity.
#[derive(Debug, Clone)]
pub struct EncodedStates {
    pub flows: Vec<ValueId>,
    pub queues: Vec<ValueId>,
    pub links: Vec<ValueId>,
}

/// z-scores the raw per-type features and maps them through type-specific
/// MLP encoders into width-D initial states.
pub fn encode_features(
    params: &mut ParamStore,
    hyper: &Hyperparams,
    stats: Option<&NormStats>,
    tape: &mut Tape,
    scenario: &NetworkScenario,
) -> Result<EncodedStates, NetModelError> {
    let stats = stats.ok_or(NetModelError::UnfittedStats)?;
    let index = scenario.index()?;
    let d = hyper.dim;
    let encode = |tape: &mut Tape,
                  params: &mut ParamStore,
                  name: &str,
                  z: Vec<f64>|
     -> Result<ValueId, NetModelError> {
        let x = tape.constant(Tensor::vector(z)?);
        Ok(mlp(tape, params, name, &[d, d], Activation::Tanh, x)?)
    };

    let mut flows = Vec::with_capacity(scenario.flows.len());
    for fi in 0..scenario.flows.len() {
        let z = zscore(&flow_raw(scenario, fi), &stats.flow);
        flows.push(encode(tape, params, "enc_flow", z)?);
    }
    let mut queues = Vec::with_capacity(scenario.queues.len());
    for qi in 0..scenario.queues.len() {
        let z = zscore(&queue_raw(scenario, qi), &stats.queue);
        queues.push(encode(tape, params, "enc_queue", z)?);
    }
    let mut links = Vec::with_capacity(scenario.links.len());
    for li in 0..scenario.links.len() {
        let z = zscore(
            &link_raw(scenario, index.link_queues[li].len(), li),
            &stats.link,
        );
        links.push(encode(tape, params, "enc_link", z)?);
    }
    Ok(EncodedStates {
        flows,
        queues,
        links,
    })
}

/// Final states after message passing plus the per-hop flow states
/// h_{f,l} from the last round (`face[flow][hop]`).
#[derive(Debug, Clone)]
pub struct MpOutput {
    pub flows: Vec<ValueId>,
    pub queues: Vec<ValueId>,
    pub links: Vec<ValueId>,
    pub face: Vec<Vec<ValueId>>,
}

fn sum_or_zeros(tape: &mut Tape, ids: &[ValueId], width: usize) -> ValueId {
    match ids.split_first() {
        None => tape.constant(Tensor::zeros(vec![width])),
        Some((&first, rest)) => {
            let mut acc = first;
            for &v in rest {
                acc = tape.add(acc, v).expect("uniform widths");
            }
            acc
        }
    }
}

/// Direct implementation of the three-phase iteration: flows first, then
/// queues, then links, `hyper.iterations` times.
pub fn message_passing(
    params: &mut ParamStore,
    hyper: &Hyperparams,
    tape: &mut Tape,
    scenario: &NetworkScenario,
    h0: &EncodedStates,
) -> Result<MpOutput, NetModelError> {
    let index = scenario.index()?;
    let d = hyper.dim;

    let paths: Vec<Vec<(usize, usize)>> = scenario
        .flows
        .iter()
        .map(|f| {
            f.path
                .iter()
                .map(|(q, l)| (index.queue[q], index.link[l]))
                .collect()
        })
        .collect();
    // Flows feeding each queue, in (flow, hop) order.
    let mut consumers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); scenario.queues.len()];
    for (fi, path) in paths.iter().enumerate() {
        for (hop, &(qi, _)) in path.iter().enumerate() {
            consumers[qi].push((fi, hop));
        }
    }
    let orders: Vec<Vec<usize>> = (0..scenario.links.len())
        .map(|li| service_order(scenario, &index, li))
        .collect();

    let mut flows = h0.flows.clone();
    let mut queues = h0.queues.clone();
    let mut links = h0.links.clone();
    let mut face: Vec<Vec<ValueId>> = vec![Vec::new(); scenario.flows.len()];

    for _ in 0..hyper.iterations {
        // Flows: GRU over path hops with (queue, link) inputs.
        let mut new_flows = Vec::with_capacity(flows.len());
        for (fi, path) in paths.iter().enumerate() {
            let mut state = flows[fi];
            let mut hops = Vec::with_capacity(path.len());
            for &(qi, li) in path {
                let input = tape.concat(&[queues[qi], links[li]]);
                state = gru_step(tape, params, "frnn.gru", input, state)?;
                hops.push(state);
            }
            face[fi] = hops;
            new_flows.push(state);
        }

        // Queues: sum the per-hop flow states that landed on them.
        let mut new_queues = Vec::with_capacity(queues.len());
        for qi in 0..scenario.queues.len() {
            let msgs: Vec<ValueId> = consumers[qi]
                .iter()
                .map(|&(fi, hop)| face[fi][hop])
                .collect();
            let m = sum_or_zeros(tape, &msgs, d);
            let joined = tape.concat(&[queues[qi], m]);
            new_queues.push(mlp(tape, params, "uq", &[d, d], Activation::Tanh, joined)?);
        }

        // Links: GRU over their queues' new states in service order.
        let mut new_links = Vec::with_capacity(links.len());
        for li in 0..scenario.links.len() {
            let mut state = links[li];
            for &qi in &orders[li] {
                state = gru_step(tape, params, "lrnn.gru", new_queues[qi], state)?;
            }
            new_links.push(state);
        }

        flows = new_flows;
        queues = new_queues;
        links = new_links;
    }

    Ok(MpOutput {
        flows,
        queues,
        links,
        face,
    })
}

/// The same model computed through the ordered-complex machinery: flow
/// cells scan their queue chains (pairing each queue with its unique
/// containing link via the 1-up incidence), queue vertices aggregate the
/// chain-prefix states of the flows whose chain they sit on, and link
/// cells scan their declared queue service order.
pub fn routenet_as_ordgccn(
    params: &mut ParamStore,
    hyper: &Hyperparams,
    tape: &mut Tape,
    scenario: &NetworkScenario,
    cx: &Complexified,
    h0: &EncodedStates,
) -> Result<MpOutput, NetModelError> {
    let d = hyper.dim;
    let complex = &cx.complex;
    let maps = &cx.maps;

    // Queue vertex cell per scenario queue, and its unique containing link.
    let queue_cell: Vec<CellId> = maps
        .queue_vertex
        .iter()
        .map(|&v| complex.find_cell(&[v], 0).expect("queue vertex cell"))
        .collect();
    let mut link_of = std::collections::BTreeMap::new();
    for (qi, &qc) in queue_cell.iter().enumerate() {
        let ups = complex.neighborhood(qc, NeighborhoodSpec::incidence_up(1))?;
        if ups.len() != 1 {
            return Err(NetModelError::NonUniqueLink(
                scenario.queues[qi].id.clone(),
                ups.len(),
            ));
        }
        link_of.insert(qc, ups[0]);
    }
    let cell_to_queue: std::collections::BTreeMap<CellId, usize> = queue_cell
        .iter()
        .enumerate()
        .map(|(qi, &c)| (c, qi))
        .collect();

    // Flows whose queue chain contains a given queue vertex, ascending.
    let flow_orders: Vec<&crate::topology::CellOrder> = (0..scenario.flows.len())
        .map(|fi| {
            complex
                .order_for(maps.flow_cell[fi], flow_queue_spec())
                .expect("complexify declares flow queue orders")
        })
        .collect();
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); scenario.queues.len()];
    for (fi, order) in flow_orders.iter().enumerate() {
        for &qc in &order.chain {
            consumers[cell_to_queue[&qc]].push(fi);
        }
    }

    let mut states = CellStates::new();
    for (fi, &v) in h0.flows.iter().enumerate() {
        states.insert(maps.flow_cell[fi], v);
    }
    for (qi, &v) in h0.queues.iter().enumerate() {
        states.insert(queue_cell[qi], v);
    }
    for (li, &v) in h0.links.iter().enumerate() {
        states.insert(maps.link_cell[li], v);
    }

    let mut face_by_flow: Vec<Option<FaceStates>> = vec![None; scenario.flows.len()];
    for _ in 0..hyper.iterations {
        let mut next = CellStates::new();

        // Flow cells: chain scan over ordered queue faces with
        // (queue, link) pair inputs.
        for fi in 0..scenario.flows.len() {
            let own = states.get(maps.flow_cell[fi])?;
            let face = ordgccn_face_states(
                complex,
                tape,
                params,
                own,
                flow_orders[fi],
                "frnn",
                d,
                false,
                |tape, tau| {
                    let q = states.get(tau)?;
                    let l = states.get(link_of[&tau])?;
                    Ok(tape.concat(&[q, l]))
                },
            )?;
            let last = face.final_state().ok_or(NetModelError::NoFaceStates)?;
            next.insert(maps.flow_cell[fi], last);
            face_by_flow[fi] = Some(face);
        }

        // Queue vertices: elementwise sum of the chain-prefix states of
        // the flows passing through, then the MLP update.
        for (qi, &qc) in queue_cell.iter().enumerate() {
            let msgs: Vec<ValueId> = consumers[qi]
                .iter()
                .map(|&fi| {
                    face_by_flow[fi]
                        .as_ref()
                        .expect("face states computed this round")
                        .state_at(qc)
                        .expect("queue is on the flow's chain")
                })
                .collect();
            let m = sum_or_zeros(tape, &msgs, d);
            let old = states.get(qc)?;
            let joined = tape.concat(&[old, m]);
            next.insert(
                qc,
                mlp(tape, params, "uq", &[d, d], Activation::Tanh, joined)?,
            );
        }

        // Link cells: GRU over the declared queue service order, consuming
        // this round's queue states.
        for &lc in maps.link_cell.iter() {
            let order = complex
                .order_for(lc, super::complexify::link_queue_spec())
                .expect("complexify declares link orders");
            let mut state = states.get(lc)?;
            for &qc in &order.chain {
                let qstate = next.get(qc)?;
                state = gru_step(tape, params, "lrnn.gru", qstate, state)?;
            }
            next.insert(lc, state);
        }

        states = next;
    }

    let flows = (0..scenario.flows.len())
        .map(|fi| states.get(maps.flow_cell[fi]))
        .collect::<Result<Vec<_>, _>>()?;
    let queues = (0..scenario.queues.len())
        .map(|qi| states.get(queue_cell[qi]))
        .collect::<Result<Vec<_>, _>>()?;
    let links = (0..scenario.links.len())
        .map(|li| states.get(maps.link_cell[li]))
        .collect::<Result<Vec<_>, _>>()?;
    let face = (0..scenario.flows.len())
        .map(|fi| match &face_by_flow[fi] {
            Some(f) => f.by_neighbor.iter().map(|&(_, s)| s).collect(),
            None => Vec::new(),
        })
        .collect();
    Ok(MpOutput {
        flows,
        queues,
        links,
        face,
    })
}

/// Per-flow prediction heads on the tape.
#[derive(Debug, Clone)]
pub struct ReadoutHeads {
    pub delay: Vec<ValueId>,
    pub jitter: Vec<ValueId>,
    pub loss: Vec<ValueId>,
}

/// Delay: sum over hops of softplus(head) / capacity plus the transmission
/// floor packet_size / capacity. Jitter: the same form without the floor.
/// Loss: sigmoid of a head on the final flow state.
///
/// Each queueing head is `head_scale * (exp(mlp(h)) - 1)`: identically zero
/// at zero weights, and bounded below so the outer softplus never loses its
/// gradient entirely.
pub fn readout(
    params: &mut ParamStore,
    hyper: &Hyperparams,
    tape: &mut Tape,
    scenario: &NetworkScenario,
    mp: &MpOutput,
) -> Result<ReadoutHeads, NetModelError> {
    let index = scenario.index()?;
    let d = hyper.dim;
    let mut delay = Vec::with_capacity(scenario.flows.len());
    let mut jitter = Vec::with_capacity(scenario.flows.len());
    let mut loss = Vec::with_capacity(scenario.flows.len());

    for (fi, f) in scenario.flows.iter().enumerate() {
        if mp.face[fi].len() != f.path.len() {
            return Err(NetModelError::NoFaceStates);
        }
        let mut d_acc: Option<ValueId> = None;
        let mut j_acc: Option<ValueId> = None;
        let mut floor = 0.0;
        for (hop, (_, lid)) in f.path.iter().enumerate() {
            let cap = scenario.links[index.link[lid]].capacity_bps;
            floor += f.packet_size_bits / cap;
            let h = mp.face[fi][hop];

            let rd = mlp(tape, params, "r_delay", &[d, 1], Activation::Tanh, h)?;
            let rd = tape.exp(rd);
            let rd = tape.affine(rd, hyper.head_scale, -hyper.head_scale);
            let rd = tape.softplus(rd);
            let rd = tape.affine(rd, 1.0 / cap, 0.0);
            d_acc = Some(match d_acc {
                None => rd,
                Some(acc) => tape.add(acc, rd)?,
            });

            let rj = mlp(tape, params, "r_jitter", &[d, 1], Activation::Tanh, h)?;
            let rj = tape.exp(rj);
            let rj = tape.affine(rj, hyper.head_scale, -hyper.head_scale);
            let rj = tape.softplus(rj);
            let rj = tape.affine(rj, 1.0 / cap, 0.0);
            j_acc = Some(match j_acc {
                None => rj,
                Some(acc) => tape.add(acc, rj)?,
            });
        }
        let d_sum = d_acc.expect("nonempty path");
        delay.push(tape.affine(d_sum, 1.0, floor));
        jitter.push(j_acc.expect("nonempty path"));

        let rl = mlp(
            tape,
            params,
            "r_loss",
            &[d, 1],
            Activation::Tanh,
            mp.flows[fi],
        )?;
        loss.push(tape.sigmoid(rl));
    }
    Ok(ReadoutHeads {
        delay,
        jitter,
        loss,
    })
}
