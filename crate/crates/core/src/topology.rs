//! Combinatorial complexes with ranked cells, neighborhood functions,
//! augmented Hasse graphs, and the ordered-cell extension.
//!
//! A complex is a set of vertices together with cells (nonempty vertex
//! subsets) carrying a rank. Two axioms are enforced: every vertex appears
//! as its own rank-0 cell, and the rank function is order-preserving under
//! support containment. Cells may additionally declare an order over one of
//! their neighborhoods, stored as a maximal chain plus the unranked
//! remainder.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vertex identifier, unique within a complex.
pub type VertexId = u32;

/// Opaque cell identifier; stable for the complex's lifetime and dense
/// (cells are indexable by id).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// A group of vertices with a rank and an optional integer label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    /// Sorted, deduplicated vertex ids. Never empty.
    pub support: Vec<VertexId>,
    pub rank: u32,
    #[serde(default)]
    pub label: Option<i64>,
}

impl Cell {
    pub fn is_vertex(&self) -> bool {
        self.rank == 0
    }
}

/// The four neighborhood families: r-up/down incidences connect cells of
/// different ranks through containment; r-up/down adjacencies connect
/// same-rank cells that share a coface/face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighborhoodKind {
    IncidenceUp,
    IncidenceDown,
    AdjacencyUp,
    AdjacencyDown,
}

/// One neighborhood function. `source_rank`, when set, restricts the cells
/// whose neighborhood is nonempty to that rank (the neighborhood of any
/// other cell is empty under this spec).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub kind: NeighborhoodKind,
    pub r: u32,
    #[serde(default)]
    pub source_rank: Option<u32>,
}

impl NeighborhoodSpec {
    pub fn incidence_up(r: u32) -> Self {
        Self {
            kind: NeighborhoodKind::IncidenceUp,
            r,
            source_rank: None,
        }
    }
    pub fn incidence_down(r: u32) -> Self {
        Self {
            kind: NeighborhoodKind::IncidenceDown,
            r,
            source_rank: None,
        }
    }
    pub fn adjacency_up(r: u32) -> Self {
        Self {
            kind: NeighborhoodKind::AdjacencyUp,
            r,
            source_rank: None,
        }
    }
    pub fn adjacency_down(r: u32) -> Self {
        Self {
            kind: NeighborhoodKind::AdjacencyDown,
            r,
            source_rank: None,
        }
    }
    pub fn at_rank(mut self, rank: u32) -> Self {
        self.source_rank = Some(rank);
        self
    }
}

impl fmt::Display for NeighborhoodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            NeighborhoodKind::IncidenceUp => "I\u{2191}",
            NeighborhoodKind::IncidenceDown => "I\u{2193}",
            NeighborhoodKind::AdjacencyUp => "A\u{2191}",
            NeighborhoodKind::AdjacencyDown => "A\u{2193}",
        };
        write!(f, "{}{}", kind, self.r)?;
        if let Some(rk) = self.source_rank {
            write!(f, "@rk{}", rk)?;
        }
        Ok(())
    }
}

/// Directed graph induced by one neighborhood function: nodes are the cells
/// with nonempty neighborhood, and each edge (tau, sigma) means
/// tau is a neighbor of sigma. Edge direction is neighbor -> target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HasseGraph {
    pub nodes: Vec<CellId>,
    pub edges: Vec<(CellId, CellId)>,
}

impl HasseGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// An order declared by `owner` over one of its neighborhoods. `chain` is
/// the unique maximal chain in ascending order (the whole neighborhood when
/// the order is total); `unranked` holds neighbors off the chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOrder {
    pub owner: CellId,
    pub neighborhood: NeighborhoodSpec,
    pub chain: Vec<CellId>,
    #[serde(default)]
    pub unranked: BTreeSet<CellId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("cell support is empty")]
    EmptySupport,
    #[error("support of cell {sigma} contains cell {tau}'s support but has higher rank")]
    RankOrderViolation { sigma: CellId, tau: CellId },
    #[error("duplicate cell: same support and rank as {0}")]
    DuplicateCell(CellId),
    #[error("higher cell declared with rank 0; rank 0 is reserved for vertex cells")]
    ZeroRankHigherCell,
    #[error("support references vertex {0} which is not in the complex")]
    UnknownVertex(VertexId),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("order mismatch: {0}")]
    OrderMismatch(String),
    #[error("cell {0} is not on the chain")]
    NotOnChain(CellId),
}

/// One invariant violation found by [`CombinatorialComplex::validate`].
/// Violations are data, not errors: a deserialized complex may carry any
/// number of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Vertex has no rank-0 singleton cell.
    MissingVertexCell(VertexId),
    /// sigma's support is contained in tau's but rk(sigma) > rk(tau).
    RankOrder { sigma: CellId, tau: CellId },
    /// Two cells share the same support (the rank function cannot assign
    /// two ranks to one vertex set).
    DuplicateSupport { a: CellId, b: CellId },
    /// A rank-0 cell whose support is not a single vertex.
    ZeroRankNotVertex(CellId),
    /// A support references a vertex missing from the vertex set.
    UnknownVertexInSupport { cell: CellId, vertex: VertexId },
    /// A declared order is inconsistent with its neighborhood.
    InvalidOrder { owner: CellId, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingVertexCell(v) => {
                write!(f, "vertex {v} has no rank-0 cell")
            }
            Violation::RankOrder { sigma, tau } => {
                write!(f, "{sigma} \u{2286} {tau} but rk({sigma}) > rk({tau})")
            }
            Violation::DuplicateSupport { a, b } => {
                write!(f, "cells {a} and {b} share the same support")
            }
            Violation::ZeroRankNotVertex(c) => {
                write!(f, "rank-0 cell {c} is not a vertex singleton")
            }
            Violation::UnknownVertexInSupport { cell, vertex } => {
                write!(f, "cell {cell} references unknown vertex {vertex}")
            }
            Violation::InvalidOrder { owner, reason } => {
                write!(f, "order on {owner} is invalid: {reason}")
            }
        }
    }
}

/// A combinatorial complex: vertices, ranked cells indexed by id and rank,
/// and any declared cell orders. Immutable after construction apart from
/// order declaration; safe to share across threads for read-only queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComplexJson", into = "ComplexJson")]
pub struct CombinatorialComplex {
    vertices: BTreeSet<VertexId>,
    cells: Vec<Cell>,
    by_rank: BTreeMap<u32, Vec<CellId>>,
    orders: Vec<CellOrder>,
}

/// Wire form matching the published JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComplexJson {
    vertices: Vec<VertexId>,
    cells: Vec<Cell>,
    #[serde(default)]
    orders: Vec<CellOrder>,
}

impl From<CombinatorialComplex> for ComplexJson {
    fn from(c: CombinatorialComplex) -> Self {
        ComplexJson {
            vertices: c.vertices.into_iter().collect(),
            cells: c.cells,
            orders: c.orders,
        }
    }
}

impl TryFrom<ComplexJson> for CombinatorialComplex {
    type Error = String;

    fn try_from(j: ComplexJson) -> Result<Self, String> {
        let mut cells = j.cells;
        cells.sort_by_key(|c| c.id);
        for (i, c) in cells.iter().enumerate() {
            if c.id.0 as usize != i {
                return Err(format!("cell ids must be dense and unique, found {}", c.id));
            }
            if c.support.is_empty() {
                return Err(format!("cell {} has empty support", c.id));
            }
        }
        for c in &mut cells {
            c.support.sort_unstable();
            c.support.dedup();
        }
        let mut by_rank: BTreeMap<u32, Vec<CellId>> = BTreeMap::new();
        for c in &cells {
            by_rank.entry(c.rank).or_default().push(c.id);
        }
        Ok(CombinatorialComplex {
            vertices: j.vertices.into_iter().collect(),
            cells,
            by_rank,
            orders: j.orders,
        })
    }
}

/// True when `a` is a subset of `b`; both must be sorted and deduplicated.
fn is_subset(a: &[VertexId], b: &[VertexId]) -> bool {
    if a.len() > b.len() {
        return false;
    }
    let mut bi = b.iter();
    'outer: for x in a {
        for y in bi.by_ref() {
            match y.cmp(x) {
                std::cmp::Ordering::Equal => continue 'outer,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Less => {}
            }
        }
        return false;
    }
    true
}

/// Builds a complex from a vertex set and higher cells given as
/// (support, rank, label) triples. Vertex cells are created automatically at
/// rank 0; the construction fails if any axiom would be violated.
pub fn build_complex(
    vertices: impl IntoIterator<Item = VertexId>,
    higher_cells: impl IntoIterator<Item = (Vec<VertexId>, u32, Option<i64>)>,
) -> Result<CombinatorialComplex, TopologyError> {
    let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
    let mut cells: Vec<Cell> = Vec::new();
    let mut by_support: HashMap<Vec<VertexId>, CellId> = HashMap::new();

    for &v in &vertices {
        let id = CellId(cells.len() as u32);
        cells.push(Cell {
            id,
            support: vec![v],
            rank: 0,
            label: None,
        });
        by_support.insert(vec![v], id);
    }

    for (mut support, rank, label) in higher_cells {
        support.sort_unstable();
        support.dedup();
        if support.is_empty() {
            return Err(TopologyError::EmptySupport);
        }
        if rank == 0 {
            return Err(TopologyError::ZeroRankHigherCell);
        }
        for &v in &support {
            if !vertices.contains(&v) {
                return Err(TopologyError::UnknownVertex(v));
            }
        }
        if let Some(&other) = by_support.get(&support) {
            // Same support twice: same rank is a duplicate, and two ranks on
            // one vertex set break the rank function either way.
            let other_rank = cells[other.0 as usize].rank;
            if other_rank == rank {
                return Err(TopologyError::DuplicateCell(other));
            }
            let id = CellId(cells.len() as u32);
            let (sigma, tau) = if rank > other_rank {
                (id, other)
            } else {
                (other, id)
            };
            return Err(TopologyError::RankOrderViolation { sigma, tau });
        }
        let id = CellId(cells.len() as u32);
        // Order preservation against every existing cell.
        for c in &cells {
            if c.support != support {
                if is_subset(&c.support, &support) && c.rank > rank {
                    return Err(TopologyError::RankOrderViolation {
                        sigma: c.id,
                        tau: id,
                    });
                }
                if is_subset(&support, &c.support) && rank > c.rank {
                    return Err(TopologyError::RankOrderViolation {
                        sigma: id,
                        tau: c.id,
                    });
                }
            }
        }
        by_support.insert(support.clone(), id);
        cells.push(Cell {
            id,
            support,
            rank,
            label,
        });
    }

    let mut by_rank: BTreeMap<u32, Vec<CellId>> = BTreeMap::new();
    for c in &cells {
        by_rank.entry(c.rank).or_default().push(c.id);
    }
    Ok(CombinatorialComplex {
        vertices,
        cells,
        by_rank,
        orders: Vec::new(),
    })
}

impl CombinatorialComplex {
    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.vertices
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> Result<&Cell, TopologyError> {
        self.cells
            .get(id.0 as usize)
            .ok_or(TopologyError::UnknownCell(id))
    }

    pub fn cells_of_rank(&self, rank: u32) -> &[CellId] {
        self.by_rank.get(&rank).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Maximal rank among cells; 0 for a vertex-only complex.
    pub fn dimension(&self) -> u32 {
        self.by_rank.keys().next_back().copied().unwrap_or(0)
    }

    /// Sets or replaces a cell's label.
    pub fn set_label(&mut self, id: CellId, label: Option<i64>) -> Result<(), TopologyError> {
        let idx = id.0 as usize;
        if idx >= self.cells.len() {
            return Err(TopologyError::UnknownCell(id));
        }
        self.cells[idx].label = label;
        Ok(())
    }

    /// Looks up a cell by (support, rank).
    pub fn find_cell(&self, support: &[VertexId], rank: u32) -> Option<CellId> {
        let mut s = support.to_vec();
        s.sort_unstable();
        s.dedup();
        self.cells
            .iter()
            .find(|c| c.rank == rank && c.support == s)
            .map(|c| c.id)
    }

    pub fn orders(&self) -> &[CellOrder] {
        &self.orders
    }

    pub fn order_for(&self, owner: CellId, spec: NeighborhoodSpec) -> Option<&CellOrder> {
        self.orders
            .iter()
            .find(|o| o.owner == owner && o.neighborhood == spec)
    }

    /// Declares an order on one of a cell's neighborhoods. The chain and
    /// unranked set together must cover the neighborhood exactly.
    pub fn declare_order(&mut self, order: CellOrder) -> Result<(), TopologyError> {
        let nbrs: BTreeSet<CellId> = self
            .neighborhood(order.owner, order.neighborhood)?
            .into_iter()
            .collect();
        let mut seen = BTreeSet::new();
        for &c in &order.chain {
            if !nbrs.contains(&c) {
                return Err(TopologyError::OrderMismatch(format!(
                    "chain element {c} is not a neighbor of {}",
                    order.owner
                )));
            }
            if !seen.insert(c) {
                return Err(TopologyError::OrderMismatch(format!("chain repeats {c}")));
            }
        }
        for &c in &order.unranked {
            if !nbrs.contains(&c) {
                return Err(TopologyError::OrderMismatch(format!(
                    "unranked element {c} is not a neighbor of {}",
                    order.owner
                )));
            }
            if seen.contains(&c) {
                return Err(TopologyError::OrderMismatch(format!(
                    "{c} is both chained and unranked"
                )));
            }
        }
        let covered = order.chain.len() + order.unranked.len();
        if covered != nbrs.len() {
            return Err(TopologyError::OrderMismatch(format!(
                "order on {} covers {covered} of {} neighbors",
                order.owner,
                nbrs.len()
            )));
        }
        if order.chain.is_empty() && !nbrs.is_empty() {
            return Err(TopologyError::OrderMismatch(format!(
                "declared order on {} has an empty chain over a nonempty neighborhood",
                order.owner
            )));
        }
        self.orders
            .retain(|o| !(o.owner == order.owner && o.neighborhood == order.neighborhood));
        self.orders.push(order);
        Ok(())
    }

    /// The neighborhood of `cell` under `spec`, in ascending CellId order.
    pub fn neighborhood(
        &self,
        cell: CellId,
        spec: NeighborhoodSpec,
    ) -> Result<Vec<CellId>, TopologyError> {
        let sigma = self.cell(cell)?;
        if let Some(rk) = spec.source_rank {
            if sigma.rank != rk {
                return Ok(Vec::new());
            }
        }
        let mut out = match spec.kind {
            NeighborhoodKind::IncidenceUp => self.cofaces(sigma, spec.r),
            NeighborhoodKind::IncidenceDown => self.faces(sigma, spec.r),
            NeighborhoodKind::AdjacencyUp => {
                self.adjacent_through(sigma, spec.r, NeighborhoodKind::IncidenceUp)
            }
            NeighborhoodKind::AdjacencyDown => {
                self.adjacent_through(sigma, spec.r, NeighborhoodKind::IncidenceDown)
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn cofaces(&self, sigma: &Cell, r: u32) -> Vec<CellId> {
        self.cells_of_rank(sigma.rank + r)
            .iter()
            .copied()
            .filter(|&t| {
                let tau = &self.cells[t.0 as usize];
                is_subset(&sigma.support, &tau.support)
            })
            .collect()
    }

    fn faces(&self, sigma: &Cell, r: u32) -> Vec<CellId> {
        let Some(target) = sigma.rank.checked_sub(r) else {
            return Vec::new();
        };
        self.cells_of_rank(target)
            .iter()
            .copied()
            .filter(|&t| {
                let tau = &self.cells[t.0 as usize];
                is_subset(&tau.support, &sigma.support)
            })
            .collect()
    }

    /// Same-rank cells sharing at least one r-up coface (or r-down face)
    /// with `sigma`. The cell itself is excluded.
    fn adjacent_through(&self, sigma: &Cell, r: u32, incidence: NeighborhoodKind) -> Vec<CellId> {
        let mine: Vec<CellId> = match incidence {
            NeighborhoodKind::IncidenceUp => self.cofaces(sigma, r),
            _ => self.faces(sigma, r),
        };
        if mine.is_empty() {
            return Vec::new();
        }
        let mine: BTreeSet<CellId> = mine.into_iter().collect();
        self.cells_of_rank(sigma.rank)
            .iter()
            .copied()
            .filter(|&t| t != sigma.id)
            .filter(|&t| {
                let tau = &self.cells[t.0 as usize];
                let theirs = match incidence {
                    NeighborhoodKind::IncidenceUp => self.cofaces(tau, r),
                    _ => self.faces(tau, r),
                };
                theirs.iter().any(|d| mine.contains(d))
            })
            .collect()
    }

    /// The strictly augmented Hasse graph of one neighborhood function.
    /// Nodes are cells with a nonempty neighborhood; each neighbor
    /// contributes an edge pointing at the cell that owns the neighborhood.
    pub fn hasse_graph(&self, spec: NeighborhoodSpec) -> HasseGraph {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for c in &self.cells {
            let nbrs = self
                .neighborhood(c.id, spec)
                .expect("cells iterated from the complex always exist");
            if nbrs.is_empty() {
                continue;
            }
            nodes.push(c.id);
            for t in nbrs {
                edges.push((t, c.id));
            }
        }
        HasseGraph { nodes, edges }
    }

    /// Resolves an order to its list of ordered neighbors: the declared
    /// total order, or the unique maximal chain of a partial order.
    pub fn ordered_neighbors(&self, order: &CellOrder) -> Result<Vec<CellId>, TopologyError> {
        let nbrs: BTreeSet<CellId> = self
            .neighborhood(order.owner, order.neighborhood)?
            .into_iter()
            .collect();
        let mut seen = BTreeSet::new();
        for &c in &order.chain {
            if !nbrs.contains(&c) {
                return Err(TopologyError::OrderMismatch(format!(
                    "chain element {c} is not a neighbor of {}",
                    order.owner
                )));
            }
            if !seen.insert(c) {
                return Err(TopologyError::OrderMismatch(format!("chain repeats {c}")));
            }
        }
        for &c in &order.unranked {
            if !nbrs.contains(&c) {
                return Err(TopologyError::OrderMismatch(format!(
                    "unranked element {c} is not a neighbor of {}",
                    order.owner
                )));
            }
        }
        Ok(order.chain.clone())
    }

    /// Every invariant violation in the complex; empty iff the complex is a
    /// well-formed (ordered) combinatorial complex.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut vertex_cells: BTreeSet<VertexId> = BTreeSet::new();
        for c in &self.cells {
            for &v in &c.support {
                if !self.vertices.contains(&v) {
                    out.push(Violation::UnknownVertexInSupport {
                        cell: c.id,
                        vertex: v,
                    });
                }
            }
            if c.rank == 0 {
                if c.support.len() == 1 {
                    vertex_cells.insert(c.support[0]);
                } else {
                    out.push(Violation::ZeroRankNotVertex(c.id));
                }
            }
        }
        for &v in &self.vertices {
            if !vertex_cells.contains(&v) {
                out.push(Violation::MissingVertexCell(v));
            }
        }

        for (i, a) in self.cells.iter().enumerate() {
            for b in &self.cells[i + 1..] {
                if a.support == b.support {
                    out.push(Violation::DuplicateSupport { a: a.id, b: b.id });
                } else if is_subset(&a.support, &b.support) {
                    if a.rank > b.rank {
                        out.push(Violation::RankOrder {
                            sigma: a.id,
                            tau: b.id,
                        });
                    }
                } else if is_subset(&b.support, &a.support) && b.rank > a.rank {
                    out.push(Violation::RankOrder {
                        sigma: b.id,
                        tau: a.id,
                    });
                }
            }
        }

        for order in &self.orders {
            match self.ordered_neighbors(order) {
                Ok(_) => {
                    let nbrs = self
                        .neighborhood(order.owner, order.neighborhood)
                        .unwrap_or_default();
                    if order.chain.is_empty() && !nbrs.is_empty() {
                        out.push(Violation::InvalidOrder {
                            owner: order.owner,
                            reason: "empty chain over a nonempty neighborhood".into(),
                        });
                    }
                    for &c in &order.unranked {
                        if order.chain.contains(&c) {
                            out.push(Violation::InvalidOrder {
                                owner: order.owner,
                                reason: format!("{c} is both chained and unranked"),
                            });
                        }
                    }
                }
                Err(e) => out.push(Violation::InvalidOrder {
                    owner: order.owner,
                    reason: e.to_string(),
                }),
            }
        }
        out
    }
}

/// The tau-chain: the ascending prefix of the ordered neighbors up to and
/// including `tau`.
pub fn tau_chain(order: &CellOrder, tau: CellId) -> Result<Vec<CellId>, TopologyError> {
    match order.chain.iter().position(|&c| c == tau) {
        Some(i) => Ok(order.chain[..=i].to_vec()),
        None => Err(TopologyError::NotOnChain(tau)),
    }
}
