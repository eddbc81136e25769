//! Message-passing layers over combinatorial complexes.
//!
//! [`gccn_layer`] is the unordered form: each cell receives, per
//! neighborhood function, a linear transform of the sum of its neighbors'
//! states, aggregates across neighborhoods by elementwise sum, and updates
//! through an MLP on (own state, aggregate). Cells outside every
//! neighborhood pass through unchanged.
//!
//! [`ordgccn_layer`] extends this with order-aware aggregation: a cell that
//! declares an order over one of its neighborhoods is updated from the
//! final state of a GRU scanned along its chain, with intermediate states
//! exposed per neighbor (the chain-prefix representations) through
//! [`ordgccn_face_states`]. The scan input defaults to the neighbor's state;
//! callers may substitute their own per-neighbor input construction.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensornn::{
    gru_step, linear, mlp, Activation, ParamStore, Tape, Tensor, TensorError, ValueId,
};
use crate::topology::{CellId, CombinatorialComplex, NeighborhoodSpec, TopologyError};

#[derive(Debug, Error)]
pub enum GccnError {
    #[error("no state for cell {0}")]
    MissingState(CellId),
    #[error("cell {cell} has rank {rank} marked ordered but declares no order for {spec}")]
    MissingOrder {
        cell: CellId,
        rank: u32,
        spec: NeighborhoodSpec,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Per-cell hidden states living on a tape. Widths must be uniform within a
/// rank; different ranks may differ.
#[derive(Debug, Clone, Default)]
pub struct CellStates {
    map: BTreeMap<CellId, ValueId>,
}

impl CellStates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell: CellId, state: ValueId) {
        self.map.insert(cell, state);
    }

    pub fn get(&self, cell: CellId) -> Result<ValueId, GccnError> {
        self.map
            .get(&cell)
            .copied()
            .ok_or(GccnError::MissingState(cell))
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.map.contains_key(&cell)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellId, ValueId)> + '_ {
        self.map.iter().map(|(&c, &v)| (c, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Layer wiring: which neighborhoods feed the unordered aggregate, which
/// (rank, neighborhood) pairs aggregate through the declared cell orders,
/// and the output width.
#[derive(Debug, Clone)]
pub struct LayerConfig {
    /// Parameter path prefix; layers sharing a prefix share weights.
    pub name: String,
    pub neighborhoods: Vec<NeighborhoodSpec>,
    pub ordered: Vec<(u32, NeighborhoodSpec)>,
    pub hidden: usize,
}

impl LayerConfig {
    pub fn unordered(name: &str, neighborhoods: Vec<NeighborhoodSpec>, hidden: usize) -> Self {
        LayerConfig {
            name: name.to_string(),
            neighborhoods,
            ordered: Vec::new(),
            hidden,
        }
    }
}

/// Sums a nonempty list of same-shaped values.
fn sum_states(tape: &mut Tape, ids: &[ValueId]) -> Result<ValueId, GccnError> {
    let mut acc = ids[0];
    for &v in &ids[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Per-neighborhood message for one cell: linear transform (keyed by spec
/// index and the cell's rank) of the canonical-order sum of neighbor states.
fn neighborhood_message(
    tape: &mut Tape,
    params: &mut ParamStore,
    cfg: &LayerConfig,
    spec_idx: usize,
    rank: u32,
    neighbor_states: &[ValueId],
) -> Result<ValueId, GccnError> {
    let summed = sum_states(tape, neighbor_states)?;
    let name = format!("{}.n{}.rk{}", cfg.name, spec_idx, rank);
    Ok(linear(tape, params, &name, summed, cfg.hidden)?)
}

fn update_two_slot(
    tape: &mut Tape,
    params: &mut ParamStore,
    cfg: &LayerConfig,
    rank: u32,
    own: ValueId,
    agg: ValueId,
) -> Result<ValueId, GccnError> {
    let joined = tape.concat(&[own, agg]);
    let name = format!("{}.phi.rk{}", cfg.name, rank);
    Ok(mlp(
        tape,
        params,
        &name,
        &[cfg.hidden, cfg.hidden],
        Activation::Tanh,
        joined,
    )?)
}

/// One unordered layer update. Neighbor sums run in ascending cell-id
/// order, so the result does not depend on how neighbors happen to be
/// stored.
pub fn gccn_layer(
    complex: &CombinatorialComplex,
    tape: &mut Tape,
    params: &mut ParamStore,
    states: &CellStates,
    config: &LayerConfig,
) -> Result<CellStates, GccnError> {
    let mut out = CellStates::new();
    for (cell, own) in states.iter() {
        let rank = complex.cell(cell)?.rank;
        let mut messages: Vec<ValueId> = Vec::new();
        for (s, &spec) in config.neighborhoods.iter().enumerate() {
            let nbrs = complex.neighborhood(cell, spec)?;
            if nbrs.is_empty() {
                continue;
            }
            let nbr_states: Vec<ValueId> = nbrs
                .iter()
                .map(|&t| states.get(t))
                .collect::<Result<_, _>>()?;
            messages.push(neighborhood_message(
                tape,
                params,
                config,
                s,
                rank,
                &nbr_states,
            )?);
        }
        if messages.is_empty() {
            // Not part of any Hasse graph: the state passes through.
            out.insert(cell, own);
            continue;
        }
        let agg = sum_states(tape, &messages)?;
        out.insert(cell, update_two_slot(tape, params, config, rank, own, agg)?);
    }
    Ok(out)
}

/// Chain-prefix states of one ordered cell: the GRU state after consuming
/// each ordered neighbor in ascending chain order.
#[derive(Debug, Clone)]
pub struct FaceStates {
    pub owner: CellId,
    /// (neighbor, state after consuming it), in chain order.
    pub by_neighbor: Vec<(CellId, ValueId)>,
}

impl FaceStates {
    /// State after the full chain; `None` for an empty chain.
    pub fn final_state(&self) -> Option<ValueId> {
        self.by_neighbor.last().map(|&(_, s)| s)
    }

    pub fn state_at(&self, tau: CellId) -> Option<ValueId> {
        self.by_neighbor
            .iter()
            .find(|&&(t, _)| t == tau)
            .map(|&(_, s)| s)
    }
}

/// Scans a GRU along a cell's declared chain. The initial state is the
/// owner's state, optionally passed through a linear projection to the
/// layer width; the input at each step is built by `input_of` (the
/// neighbor's own state by default). The state recorded for a neighbor
/// depends only on the chain prefix up to and including it.
#[allow(clippy::too_many_arguments)]
pub fn ordgccn_face_states(
    complex: &CombinatorialComplex,
    tape: &mut Tape,
    params: &mut ParamStore,
    owner_state: ValueId,
    order: &crate::topology::CellOrder,
    name: &str,
    hidden: usize,
    project_init: bool,
    mut input_of: impl FnMut(&mut Tape, CellId) -> Result<ValueId, GccnError>,
) -> Result<FaceStates, GccnError> {
    let chain = complex.ordered_neighbors(order)?;
    let mut state = if project_init {
        linear(tape, params, &format!("{name}.init"), owner_state, hidden)?
    } else {
        owner_state
    };
    let mut by_neighbor = Vec::with_capacity(chain.len());
    for tau in chain {
        let x = input_of(tape, tau)?;
        state = gru_step(tape, params, &format!("{name}.gru"), x, state)?;
        by_neighbor.push((tau, state));
    }
    Ok(FaceStates {
        owner: order.owner,
        by_neighbor,
    })
}

/// One order-aware layer update. Cells of a rank listed in
/// `config.ordered` are updated from (own state, final chain-scan state,
/// unordered aggregate); the ordered neighborhood is excluded from the
/// unordered sum. All other cells follow the unordered update, so a config
/// with no ordered entries reproduces [`gccn_layer`] exactly.
pub fn ordgccn_layer(
    complex: &CombinatorialComplex,
    tape: &mut Tape,
    params: &mut ParamStore,
    states: &CellStates,
    config: &LayerConfig,
) -> Result<CellStates, GccnError> {
    if config.ordered.is_empty() {
        return gccn_layer(complex, tape, params, states, config);
    }
    let mut out = CellStates::new();
    for (cell, own) in states.iter() {
        let rank = complex.cell(cell)?.rank;
        let ordered_spec = config
            .ordered
            .iter()
            .find(|&&(rk, _)| rk == rank)
            .map(|&(_, spec)| spec);

        let mut messages: Vec<ValueId> = Vec::new();
        for (s, &spec) in config.neighborhoods.iter().enumerate() {
            if Some(spec) == ordered_spec {
                continue;
            }
            let nbrs = complex.neighborhood(cell, spec)?;
            if nbrs.is_empty() {
                continue;
            }
            let nbr_states: Vec<ValueId> = nbrs
                .iter()
                .map(|&t| states.get(t))
                .collect::<Result<_, _>>()?;
            messages.push(neighborhood_message(
                tape,
                params,
                config,
                s,
                rank,
                &nbr_states,
            )?);
        }

        let Some(spec) = ordered_spec else {
            if messages.is_empty() {
                out.insert(cell, own);
                continue;
            }
            let agg = sum_states(tape, &messages)?;
            out.insert(cell, update_two_slot(tape, params, config, rank, own, agg)?);
            continue;
        };

        let ordered_nonempty = !complex.neighborhood(cell, spec)?.is_empty();
        if !ordered_nonempty && messages.is_empty() {
            out.insert(cell, own);
            continue;
        }

        let seq = if ordered_nonempty {
            let order = complex
                .order_for(cell, spec)
                .ok_or(GccnError::MissingOrder { cell, rank, spec })?;
            let face = ordgccn_face_states(
                complex,
                tape,
                params,
                own,
                order,
                &format!("{}.ord.rk{}", config.name, rank),
                config.hidden,
                true,
                |tape, tau| {
                    let _ = &tape;
                    states.get(tau)
                },
            )?;
            face.final_state()
        } else {
            None
        };
        let seq = match seq {
            Some(s) => s,
            None => tape.constant(Tensor::zeros(vec![config.hidden])),
        };
        let agg = if messages.is_empty() {
            tape.constant(Tensor::zeros(vec![config.hidden]))
        } else {
            sum_states(tape, &messages)?
        };

        let joined = tape.concat(&[own, seq, agg]);
        let name = format!("{}.phi3.rk{}", config.name, rank);
        let updated = mlp(
            tape,
            params,
            &name,
            &[config.hidden, config.hidden],
            Activation::Tanh,
            joined,
        )?;
        out.insert(cell, updated);
    }
    Ok(out)
}
