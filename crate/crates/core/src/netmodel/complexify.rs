//! Scenario-to-complex construction.
//!
//! Vertices are the router queues plus one symbolic end-of-flow (EoF)
//! vertex per router. Every link becomes a 1-cell containing the queues
//! that inject into it; every flow becomes a 2-cell containing all queues
//! of every link it traverses plus the destination router's EoF vertex,
//! which keeps one-hop flows strictly larger than their link.
//!
//! Two special vertex kinds keep the set-based axioms intact and the
//! iteration orders pinned down:
//! - a link with a single queue gets a zero-feature pad vertex, so no
//!   1-cell's support collapses to a vertex cell's support;
//! - each flow cell declares a total order over its link faces (the path)
//!   and the maximal chain of traversed queues over its vertex faces, and
//!   each link cell declares its queue service order.

use std::collections::BTreeSet;

use crate::netsim::service_order;
use crate::topology::{
    build_complex, CellId, CellOrder, CombinatorialComplex, NeighborhoodSpec, VertexId,
};

use super::{NetModelError, NetworkScenario};

/// Vertex label codes in the produced complex.
pub const LABEL_QUEUE: i64 = 0;
pub const LABEL_EOF: i64 = 1;
pub const LABEL_PAD: i64 = 2;

/// Index maps between scenario entities and complex cells.
#[derive(Debug, Clone)]
pub struct ComplexMaps {
    /// Scenario queue index -> vertex id (and its rank-0 cell).
    pub queue_vertex: Vec<VertexId>,
    /// Router index -> EoF vertex id.
    pub eof_vertex: Vec<VertexId>,
    /// Link index -> pad vertex id, for single-queue links.
    pub pad_vertex: Vec<Option<VertexId>>,
    /// Link index -> rank-1 cell.
    pub link_cell: Vec<CellId>,
    /// Flow index -> rank-2 cell.
    pub flow_cell: Vec<CellId>,
    /// Human-readable vertex names, for reports.
    pub vertex_names: Vec<(VertexId, String)>,
}

/// The ordered complex together with its scenario maps.
#[derive(Debug, Clone)]
pub struct Complexified {
    pub complex: CombinatorialComplex,
    pub maps: ComplexMaps,
}

/// Neighborhood carrying each flow's link order.
pub fn flow_link_spec() -> NeighborhoodSpec {
    NeighborhoodSpec::incidence_down(1)
}

/// Neighborhood carrying each flow's queue chain.
pub fn flow_queue_spec() -> NeighborhoodSpec {
    NeighborhoodSpec::incidence_down(2)
}

/// Neighborhood carrying each link's queue service order.
pub fn link_queue_spec() -> NeighborhoodSpec {
    NeighborhoodSpec::incidence_down(1)
}

pub fn complexify(scenario: &NetworkScenario) -> Result<Complexified, NetModelError> {
    let index = scenario.validate()?;

    let nq = scenario.queues.len();
    let nr = scenario.routers.len();
    let queue_vertex: Vec<VertexId> = (0..nq as u32).collect();
    let eof_vertex: Vec<VertexId> = (nq as u32..(nq + nr) as u32).collect();
    let mut next_vertex = (nq + nr) as u32;
    let mut pad_vertex: Vec<Option<VertexId>> = vec![None; scenario.links.len()];
    for (li, queues) in index.link_queues.iter().enumerate() {
        if queues.len() == 1 {
            pad_vertex[li] = Some(next_vertex);
            next_vertex += 1;
        }
    }

    let mut vertex_names = Vec::new();
    for (qi, q) in scenario.queues.iter().enumerate() {
        vertex_names.push((queue_vertex[qi], q.id.clone()));
    }
    for (ri, r) in scenario.routers.iter().enumerate() {
        vertex_names.push((eof_vertex[ri], format!("eof:{r}")));
    }
    for (li, pad) in pad_vertex.iter().enumerate() {
        if let Some(v) = pad {
            vertex_names.push((*v, format!("pad:{}", scenario.links[li].id)));
        }
    }

    let link_support = |li: usize| -> Vec<VertexId> {
        let mut s: Vec<VertexId> = index.link_queues[li]
            .iter()
            .map(|&qi| queue_vertex[qi])
            .collect();
        if let Some(p) = pad_vertex[li] {
            s.push(p);
        }
        s
    };

    let mut higher: Vec<(Vec<VertexId>, u32, Option<i64>)> = Vec::new();
    for li in 0..scenario.links.len() {
        higher.push((link_support(li), 1, None));
    }
    for f in &scenario.flows {
        let mut support = BTreeSet::new();
        for (_, lid) in &f.path {
            support.extend(link_support(index.link[lid]));
        }
        support.insert(eof_vertex[index.router[&f.dst]]);
        higher.push((support.into_iter().collect(), 2, None));
    }

    let all_vertices = (0..next_vertex).collect::<Vec<_>>();
    let mut complex = build_complex(all_vertices, higher)?;

    // Vertex kind labels.
    for &v in &queue_vertex {
        let c = complex.find_cell(&[v], 0).expect("vertex cell exists");
        complex.set_label(c, Some(LABEL_QUEUE))?;
    }
    for &v in &eof_vertex {
        let c = complex.find_cell(&[v], 0).expect("vertex cell exists");
        complex.set_label(c, Some(LABEL_EOF))?;
    }
    for pad in pad_vertex.iter().flatten() {
        let c = complex.find_cell(&[*pad], 0).expect("vertex cell exists");
        complex.set_label(c, Some(LABEL_PAD))?;
    }

    let link_cell: Vec<CellId> = (0..scenario.links.len())
        .map(|li| {
            complex
                .find_cell(&link_support(li), 1)
                .expect("link cell was just built")
        })
        .collect();
    let flow_cell: Vec<CellId> = scenario
        .flows
        .iter()
        .map(|f| {
            let mut support = BTreeSet::new();
            for (_, lid) in &f.path {
                support.extend(link_support(index.link[lid]));
            }
            support.insert(eof_vertex[index.router[&f.dst]]);
            let support: Vec<VertexId> = support.into_iter().collect();
            complex
                .find_cell(&support, 2)
                .expect("flow cell was just built")
        })
        .collect();

    // Flow orders: a total order over link faces, the traversed-queue
    // maximal chain over vertex faces.
    for (fi, f) in scenario.flows.iter().enumerate() {
        let chain_links: Vec<CellId> = f
            .path
            .iter()
            .map(|(_, lid)| link_cell[index.link[lid]])
            .collect();
        complex.declare_order(CellOrder {
            owner: flow_cell[fi],
            neighborhood: flow_link_spec(),
            chain: chain_links,
            unranked: BTreeSet::new(),
        })?;

        let chain_queues: Vec<CellId> = f
            .path
            .iter()
            .map(|(qid, _)| {
                let v = queue_vertex[index.queue[qid]];
                complex.find_cell(&[v], 0).expect("queue vertex cell")
            })
            .collect();
        let chained: BTreeSet<CellId> = chain_queues.iter().copied().collect();
        let unranked: BTreeSet<CellId> = complex
            .neighborhood(flow_cell[fi], flow_queue_spec())?
            .into_iter()
            .filter(|c| !chained.contains(c))
            .collect();
        complex.declare_order(CellOrder {
            owner: flow_cell[fi],
            neighborhood: flow_queue_spec(),
            chain: chain_queues,
            unranked,
        })?;
    }

    // Link orders: the queue service order, pads unranked.
    for li in 0..scenario.links.len() {
        let chain: Vec<CellId> = service_order(scenario, &index, li)
            .into_iter()
            .map(|qi| {
                complex
                    .find_cell(&[queue_vertex[qi]], 0)
                    .expect("queue vertex cell")
            })
            .collect();
        let unranked: BTreeSet<CellId> = pad_vertex[li]
            .map(|p| complex.find_cell(&[p], 0).expect("pad vertex cell"))
            .into_iter()
            .collect();
        complex.declare_order(CellOrder {
            owner: link_cell[li],
            neighborhood: link_queue_spec(),
            chain,
            unranked,
        })?;
    }

    Ok(Complexified {
        complex,
        maps: ComplexMaps {
            queue_vertex,
            eof_vertex,
            pad_vertex,
            link_cell,
            flow_cell,
            vertex_names,
        },
    })
}
