//! Color-refinement tests on labeled combinatorial complexes, with and
//! without neighbor ordering, plus a brute-force labeled isomorphism oracle
//! for small complexes.
//!
//! Both refinement variants run jointly on the two complexes being compared,
//! interning canonical signatures into fresh integer colors through one
//! shared table, so colors are comparable across the pair. The unordered
//! variant gathers neighbor colors as sorted multisets; the ordered variant
//! replaces the multiset with the tuple of colors along a cell's declared
//! chain (neighbors off the chain remain a multiset). A verdict of
//! "distinguishable" means the color histograms differ; the converse
//! direction is, as with any Weisfeiler-Leman style test, one-sided.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{CellId, CellOrder, CombinatorialComplex, NeighborhoodSpec, TopologyError};

/// Color histogram: color -> number of cells carrying it.
pub type Histogram = BTreeMap<u64, usize>;

#[derive(Debug, Error)]
pub enum WlError {
    #[error(
        "complex too large for exhaustive isomorphism search ({0} cells, limit {MAX_BRUTE_CELLS})"
    )]
    TooLarge(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Hard cap for [`brute_force_isomorphic`]; the search is factorial in the
/// largest (rank, label) class.
pub const MAX_BRUTE_CELLS: usize = 10;

/// Cell coloring for one side of a comparison at some refinement round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub colors: BTreeMap<CellId, u64>,
    pub round: usize,
}

impl Coloring {
    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::new();
        for &c in self.colors.values() {
            *h.entry(c).or_insert(0) += 1;
        }
        h
    }
}

/// Outcome of a refinement run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlVerdict {
    pub distinguishable: bool,
    /// Refinement rounds performed when the verdict was decided (0 when the
    /// initial colorings already differ).
    pub rounds: usize,
    /// Final color histograms of the two complexes.
    pub final_histograms: (Histogram, Histogram),
}

/// Interning table mapping canonical signature encodings to fresh colors.
/// Shared by both complexes in a comparison, so equal signatures receive
/// equal colors regardless of side.
#[derive(Debug, Default)]
struct InternTable {
    map: HashMap<Vec<u64>, u64>,
}

impl InternTable {
    fn intern(&mut self, sig: Vec<u64>) -> u64 {
        let next = self.map.len() as u64;
        *self.map.entry(sig).or_insert(next)
    }
}

const TAG_INIT: u64 = 0;
const TAG_MULTISET: u64 = 1;
const TAG_TUPLE: u64 = 2;

fn label_code(label: Option<i64>) -> u64 {
    // Unlabeled cells participate as label 0; i64 shifted into u64.
    (label.unwrap_or(0) as i128 - i64::MIN as i128) as u64
}

struct Side<'a> {
    complex: &'a CombinatorialComplex,
    /// Per spec, per cell: the neighbor list in canonical ascending order.
    neighborhoods: Vec<Vec<Vec<CellId>>>,
    /// Per spec, per cell: the declared chain, if this cell orders that
    /// neighborhood.
    chains: Vec<Vec<Option<Vec<CellId>>>>,
}

impl<'a> Side<'a> {
    fn new(
        complex: &'a CombinatorialComplex,
        specs: &[NeighborhoodSpec],
        orders: &[CellOrder],
    ) -> Result<Self, WlError> {
        let n = complex.cells().len();
        let mut neighborhoods = Vec::with_capacity(specs.len());
        let mut chains = Vec::with_capacity(specs.len());
        for &spec in specs {
            let mut per_cell = Vec::with_capacity(n);
            let mut per_chain: Vec<Option<Vec<CellId>>> = vec![None; n];
            for cell in complex.cells() {
                per_cell.push(complex.neighborhood(cell.id, spec)?);
            }
            for order in orders.iter().filter(|o| o.neighborhood == spec) {
                let chain = complex.ordered_neighbors(order)?;
                per_chain[order.owner.0 as usize] = Some(chain);
            }
            neighborhoods.push(per_cell);
            chains.push(per_chain);
        }
        Ok(Side {
            complex,
            neighborhoods,
            chains,
        })
    }

    fn initial_colors(&self, table: &mut InternTable) -> Vec<u64> {
        self.complex
            .cells()
            .iter()
            .map(|c| table.intern(vec![TAG_INIT, c.rank as u64, label_code(c.label)]))
            .collect()
    }

    /// Signature of one cell under the current coloring: own color followed,
    /// per spec, by either the sorted multiset of neighbor colors or (for
    /// ordered cells) the chain tuple plus the off-chain multiset.
    fn signature(&self, idx: usize, colors: &[u64], ordered: bool) -> Vec<u64> {
        let mut sig = vec![colors[idx]];
        for (s, per_cell) in self.neighborhoods.iter().enumerate() {
            let nbrs = &per_cell[idx];
            let chain = if ordered {
                self.chains[s][idx].as_ref()
            } else {
                None
            };
            match chain {
                Some(chain) => {
                    sig.push(TAG_TUPLE);
                    sig.push(chain.len() as u64);
                    sig.extend(chain.iter().map(|c| colors[c.0 as usize]));
                    let mut rest: Vec<u64> = nbrs
                        .iter()
                        .filter(|c| !chain.contains(c))
                        .map(|c| colors[c.0 as usize])
                        .collect();
                    rest.sort_unstable();
                    sig.push(rest.len() as u64);
                    sig.extend(rest);
                }
                None => {
                    sig.push(TAG_MULTISET);
                    sig.push(nbrs.len() as u64);
                    let mut ms: Vec<u64> = nbrs.iter().map(|c| colors[c.0 as usize]).collect();
                    ms.sort_unstable();
                    sig.extend(ms);
                }
            }
        }
        sig
    }
}

fn histogram_of(colors: &[u64]) -> Histogram {
    let mut h = Histogram::new();
    for &c in colors {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}

fn color_count(a: &[u64], b: &[u64]) -> usize {
    let mut set: Vec<u64> = a.iter().chain(b.iter()).copied().collect();
    set.sort_unstable();
    set.dedup();
    set.len()
}

fn refine(
    a: &CombinatorialComplex,
    b: &CombinatorialComplex,
    specs: &[NeighborhoodSpec],
    orders_a: &[CellOrder],
    orders_b: &[CellOrder],
    ordered: bool,
) -> Result<WlVerdict, WlError> {
    let side_a = Side::new(a, specs, orders_a)?;
    let side_b = Side::new(b, specs, orders_b)?;
    let mut table = InternTable::default();
    let mut colors_a = side_a.initial_colors(&mut table);
    let mut colors_b = side_b.initial_colors(&mut table);
    let max_rounds = a.cells().len() + b.cells().len();

    let mut round = 0usize;
    loop {
        let (ha, hb) = (histogram_of(&colors_a), histogram_of(&colors_b));
        if ha != hb {
            // Refinement only ever splits classes, so a histogram difference
            // is final.
            return Ok(WlVerdict {
                distinguishable: true,
                rounds: round,
                final_histograms: (ha, hb),
            });
        }
        if round >= max_rounds {
            return Ok(WlVerdict {
                distinguishable: false,
                rounds: round,
                final_histograms: (ha, hb),
            });
        }
        let classes_before = color_count(&colors_a, &colors_b);
        let next_a: Vec<u64> = (0..colors_a.len())
            .map(|i| table.intern(side_a.signature(i, &colors_a, ordered)))
            .collect();
        let next_b: Vec<u64> = (0..colors_b.len())
            .map(|i| table.intern(side_b.signature(i, &colors_b, ordered)))
            .collect();
        let classes_after = color_count(&next_a, &next_b);
        debug_assert!(classes_after >= classes_before);
        round += 1;
        let stable = classes_after == classes_before;
        colors_a = next_a;
        colors_b = next_b;
        if stable {
            let (ha, hb) = (histogram_of(&colors_a), histogram_of(&colors_b));
            let distinguishable = ha != hb;
            return Ok(WlVerdict {
                distinguishable,
                rounds: round,
                final_histograms: (ha, hb),
            });
        }
    }
}

/// Refines one complex to a stable coloring, using chain tuples for any
/// cell with a declared order and multisets elsewhere. Comparisons between
/// complexes go through [`ccwl_refine`] / [`ord_ccwl_refine`], which share
/// one interning table across the pair; a standalone coloring is mainly
/// useful for inspecting color classes.
pub fn refine_colors(
    complex: &CombinatorialComplex,
    specs: &[NeighborhoodSpec],
    orders: &[CellOrder],
) -> Result<Coloring, WlError> {
    let side = Side::new(complex, specs, orders)?;
    let mut table = InternTable::default();
    let mut colors = side.initial_colors(&mut table);
    let mut round = 0usize;
    loop {
        let before = color_count(&colors, &[]);
        let next: Vec<u64> = (0..colors.len())
            .map(|i| table.intern(side.signature(i, &colors, true)))
            .collect();
        let after = color_count(&next, &[]);
        round += 1;
        colors = next;
        if after == before || round > complex.cells().len() {
            break;
        }
    }
    Ok(Coloring {
        colors: complex
            .cells()
            .iter()
            .map(|c| (c.id, colors[c.id.0 as usize]))
            .collect(),
        round,
    })
}

/// Joint multiset color refinement over the given neighborhood functions.
pub fn ccwl_refine(
    a: &CombinatorialComplex,
    b: &CombinatorialComplex,
    specs: &[NeighborhoodSpec],
) -> Result<WlVerdict, WlError> {
    refine(a, b, specs, &[], &[], false)
}

/// Order-aware refinement: cells that declare an order over one of the
/// given neighborhoods contribute the tuple of neighbor colors along their
/// chain; all other cells fall back to the multiset form.
pub fn ord_ccwl_refine(
    a: &CombinatorialComplex,
    b: &CombinatorialComplex,
    specs: &[NeighborhoodSpec],
    orders_a: &[CellOrder],
    orders_b: &[CellOrder],
) -> Result<WlVerdict, WlError> {
    refine(a, b, specs, orders_a, orders_b, true)
}

/// Exhaustive search for a rank- and label-preserving bijection f with
/// tau in N1(sigma) iff f(tau) in N2(f(sigma)) for every given neighborhood.
/// Ground truth for the refinement tests; limited to [`MAX_BRUTE_CELLS`]
/// cells per complex.
pub fn brute_force_isomorphic(
    a: &CombinatorialComplex,
    b: &CombinatorialComplex,
    specs: &[NeighborhoodSpec],
) -> Result<bool, WlError> {
    let (na, nb) = (a.cells().len(), b.cells().len());
    if na > MAX_BRUTE_CELLS {
        return Err(WlError::TooLarge(na));
    }
    if nb > MAX_BRUTE_CELLS {
        return Err(WlError::TooLarge(nb));
    }
    if na != nb {
        return Ok(false);
    }

    // Bucket cells by (rank, label); a preserving bijection respects buckets.
    let key = |c: &crate::topology::Cell| (c.rank, c.label);
    let mut buckets_a: BTreeMap<(u32, Option<i64>), Vec<usize>> = BTreeMap::new();
    let mut buckets_b: BTreeMap<(u32, Option<i64>), Vec<usize>> = BTreeMap::new();
    for (i, c) in a.cells().iter().enumerate() {
        buckets_a.entry(key(c)).or_default().push(i);
    }
    for (i, c) in b.cells().iter().enumerate() {
        buckets_b.entry(key(c)).or_default().push(i);
    }
    if buckets_a.len() != buckets_b.len()
        || buckets_a
            .iter()
            .zip(&buckets_b)
            .any(|((ka, va), (kb, vb))| ka != kb || va.len() != vb.len())
    {
        return Ok(false);
    }

    // Boolean incidence matrices per spec: m[tau][sigma] == tau in N(sigma).
    let matrices = |cx: &CombinatorialComplex| -> Result<Vec<Vec<Vec<bool>>>, WlError> {
        let n = cx.cells().len();
        let mut out = Vec::with_capacity(specs.len());
        for &spec in specs {
            let mut m = vec![vec![false; n]; n];
            for cell in cx.cells() {
                for t in cx.neighborhood(cell.id, spec)? {
                    m[t.0 as usize][cell.id.0 as usize] = true;
                }
            }
            out.push(m);
        }
        Ok(out)
    };
    let ma = matrices(a)?;
    let mb = matrices(b)?;

    let candidates: Vec<Vec<usize>> = a
        .cells()
        .iter()
        .map(|c| buckets_b[&key(c)].clone())
        .collect();

    fn search(
        i: usize,
        assign: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        candidates: &[Vec<usize>],
        ma: &[Vec<Vec<bool>>],
        mb: &[Vec<Vec<bool>>],
    ) -> bool {
        if i == assign.len() {
            return true;
        }
        'cand: for &c in &candidates[i] {
            if used[c] {
                continue;
            }
            for (sa, sb) in ma.iter().zip(mb) {
                for (j, fj) in assign.iter().enumerate() {
                    let Some(fj) = fj else { continue };
                    if sa[j][i] != sb[*fj][c] || sa[i][j] != sb[c][*fj] {
                        continue 'cand;
                    }
                }
            }
            assign[i] = Some(c);
            used[c] = true;
            if search(i + 1, assign, used, candidates, ma, mb) {
                return true;
            }
            assign[i] = None;
            used[c] = false;
        }
        false
    }

    let mut assign = vec![None; na];
    let mut used = vec![false; nb];
    Ok(search(0, &mut assign, &mut used, &candidates, &ma, &mb))
}

/// The shipped counterexample pair: indistinguishable by multiset
/// refinement, distinguishable once the 2-cell's declared face order is
/// used, and not isomorphic as labeled complexes.
#[derive(Debug, Clone, Deserialize)]
pub struct Fixture {
    pub version: u32,
    pub specs: Vec<NeighborhoodSpec>,
    pub left: CombinatorialComplex,
    pub right: CombinatorialComplex,
}

pub const COUNTEREXAMPLE_JSON: &str = include_str!("../../../fixtures/ordccwl_counterexample.json");

pub fn counterexample_fixture() -> Fixture {
    serde_json::from_str(COUNTEREXAMPLE_JSON).expect("embedded fixture parses")
}
