//! Scenario generation, dataset persistence, splits, and evaluation
//! metrics.
//!
//! Generation samples the four scenario variables (topology, traffic
//! model, traffic intensity, queuing configuration) from a seeded config:
//! random connected topologies (rejection-sampled Erdos-Renyi or
//! preferential attachment), shortest-path routing with deterministic
//! tie-breaks (optionally over random positive link weights), FIFO or
//! strict-priority queue configurations, and per-scenario intensity
//! calibration through the simulator. Everything is a pure function of
//! (config, seed); labeling parallelizes across scenarios with per-scenario
//! derived seeds and an ordered merge.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{
    FlowMetrics, FlowSpec, LinkSpec, NetworkScenario, Policy, QueueSpec, ScenarioError,
};
use crate::netsim::{calibrate_intensity, simulate, SimError, TrafficModel};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no prediction for flow {flow} of scenario {scenario}")]
    MissingPrediction { scenario: String, flow: String },
    #[error("every label is zero; relative error is undefined")]
    ZeroLabel,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    Poisson,
    Deterministic,
    OnOff,
    AutocorrExp,
    ModulatedExp,
}

impl std::str::FromStr for TrafficKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "poisson" => Ok(TrafficKind::Poisson),
            "deterministic" => Ok(TrafficKind::Deterministic),
            "onoff" | "on_off" => Ok(TrafficKind::OnOff),
            "autocorr" | "autocorr_exp" => Ok(TrafficKind::AutocorrExp),
            "modulated" | "modulated_exp" => Ok(TrafficKind::ModulatedExp),
            other => Err(format!("unknown traffic model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    ErdosRenyi,
    PreferentialAttachment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Breadth-first shortest paths with lexicographic next-hop tie-break.
    ShortestPath,
    /// Shortest paths under per-scenario random positive link weights.
    RandomWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub count: usize,
    pub nodes: usize,
    pub flows: usize,
    pub traffic_models: Vec<TrafficKind>,
    /// Sample strict-priority multi-queue ports alongside FIFO ones.
    pub allow_sp: bool,
    pub util_range: (f64, f64),
    pub capacities_bps: Vec<f64>,
    pub queue_sizes_bits: Vec<f64>,
    pub packet_size_bits: f64,
    pub topology: TopologyKind,
    pub routing: Routing,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            count: 10,
            nodes: 6,
            flows: 8,
            traffic_models: vec![TrafficKind::Poisson],
            allow_sp: false,
            util_range: (0.3, 0.8),
            capacities_bps: vec![1e6, 2.5e6, 5e6, 1e7],
            queue_sizes_bits: vec![8_000.0, 16_000.0, 32_000.0, 64_000.0],
            packet_size_bits: 1000.0,
            topology: TopologyKind::ErdosRenyi,
            routing: Routing::ShortestPath,
        }
    }
}

impl GenConfig {
    fn check(&self) -> Result<(), DatasetError> {
        if !(4..=12).contains(&self.nodes) {
            return Err(DatasetError::BadConfig(format!(
                "nodes must be in 4..=12, got {}",
                self.nodes
            )));
        }
        if self.count == 0 || self.flows == 0 {
            return Err(DatasetError::BadConfig(
                "count and flows must be positive".into(),
            ));
        }
        let max_pairs = self.nodes * (self.nodes - 1);
        if self.flows > max_pairs {
            return Err(DatasetError::BadConfig(format!(
                "{} flows exceed the {} distinct (src, dst) pairs of {} nodes",
                self.flows, max_pairs, self.nodes
            )));
        }
        if self.traffic_models.is_empty()
            || self.capacities_bps.is_empty()
            || self.queue_sizes_bits.is_empty()
        {
            return Err(DatasetError::BadConfig(
                "traffic_models, capacities_bps, queue_sizes_bits must be nonempty".into(),
            ));
        }
        let (lo, hi) = self.util_range;
        if !(0.0 < lo && lo <= hi && hi <= 0.95) {
            return Err(DatasetError::BadConfig(format!(
                "util_range must satisfy 0 < lo <= hi <= 0.95, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// A generated scenario with its sampled knobs recorded for the manifest.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub scenario: NetworkScenario,
    pub traffic: TrafficKind,
    pub target_util: f64,
}

fn derive_seed(seed: u64, salt: u64, i: u64) -> u64 {
    seed.wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add(salt.rotate_left(23))
        .wrapping_add(i.wrapping_mul(0xD1B54A32D192ED03))
}

/// Undirected connected graph edges over `n` nodes.
fn sample_topology(kind: TopologyKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    match kind {
        TopologyKind::ErdosRenyi => {
            let p = (1.6 * (n as f64).ln() / n as f64).min(0.9);
            loop {
                let mut edges = Vec::new();
                for u in 0..n {
                    for v in u + 1..n {
                        if rng.gen_bool(p) {
                            edges.push((u, v));
                        }
                    }
                }
                if connected(n, &edges) {
                    return edges;
                }
            }
        }
        TopologyKind::PreferentialAttachment => {
            let mut edges = vec![(0usize, 1usize)];
            let mut degree = vec![1usize; n];
            for v in 2..n {
                let attach = 1 + usize::from(rng.gen_bool(0.5));
                let mut chosen = BTreeSet::new();
                while chosen.len() < attach.min(v) {
                    let total: usize = degree[..v].iter().sum();
                    let mut ticket = rng.gen_range(0..total);
                    let mut u = 0;
                    for (i, &d) in degree[..v].iter().enumerate() {
                        if ticket < d {
                            u = i;
                            break;
                        }
                        ticket -= d;
                    }
                    chosen.insert(u);
                }
                for u in chosen {
                    edges.push((u, v));
                    degree[u] += 1;
                    degree[v] += 1;
                }
            }
            edges
        }
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// Shortest path by hops (BFS over ascending neighbor indices) or by the
/// given positive per-link weights (Dijkstra with index tie-breaks).
/// Returns the router sequence from src to dst.
fn route(
    n: usize,
    out_links: &[Vec<(usize, usize)>], // per router: (neighbor, link idx) ascending
    weights: Option<&[f64]>,
    src: usize,
    dst: usize,
) -> Vec<usize> {
    match weights {
        None => {
            let mut prev = vec![usize::MAX; n];
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([src]);
            seen[src] = true;
            while let Some(u) = queue.pop_front() {
                if u == dst {
                    break;
                }
                for &(v, _) in &out_links[u] {
                    if !seen[v] {
                        seen[v] = true;
                        prev[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            reconstruct(prev, src, dst)
        }
        Some(w) => {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev = vec![usize::MAX; n];
            let mut done = vec![false; n];
            dist[src] = 0.0;
            for _ in 0..n {
                let mut best = usize::MAX;
                for u in 0..n {
                    if !done[u]
                        && dist[u].is_finite()
                        && (best == usize::MAX || dist[u] < dist[best])
                    {
                        best = u;
                    }
                }
                if best == usize::MAX {
                    break;
                }
                done[best] = true;
                for &(v, li) in &out_links[best] {
                    let nd = dist[best] + w[li];
                    if nd < dist[v] - 1e-15 {
                        dist[v] = nd;
                        prev[v] = best;
                    }
                }
            }
            reconstruct(prev, src, dst)
        }
    }
}

fn reconstruct(prev: Vec<usize>, src: usize, dst: usize) -> Vec<usize> {
    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Generates `config.count` scenarios deterministically from the seed.
pub fn generate_scenarios(
    config: &GenConfig,
    seed: u64,
) -> Result<Vec<GeneratedScenario>, DatasetError> {
    config.check()?;
    (0..config.count)
        .map(|i| generate_one(config, derive_seed(seed, 1, i as u64)))
        .collect()
}

fn generate_one(config: &GenConfig, seed: u64) -> Result<GeneratedScenario, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.nodes;
    let routers: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();

    // Topology: each undirected edge becomes two directed links sharing a
    // capacity.
    let edges = sample_topology(config.topology, n, &mut rng);
    let mut links = Vec::new();
    for &(u, v) in &edges {
        let cap = *config.capacities_bps.choose(&mut rng).expect("nonempty");
        links.push(LinkSpec {
            id: format!("l{}", links.len()),
            from: routers[u].clone(),
            to: routers[v].clone(),
            capacity_bps: cap,
        });
        links.push(LinkSpec {
            id: format!("l{}", links.len()),
            from: routers[v].clone(),
            to: routers[u].clone(),
            capacity_bps: cap,
        });
    }

    // Queuing configuration: per scenario, FIFO single queues or strict
    // priority with 2-3 classes.
    let sp = config.allow_sp && rng.gen_bool(0.5);
    let classes = if sp { rng.gen_range(2..=3u32) } else { 1 };
    let mut queues = Vec::new();
    for l in &links {
        for c in 0..classes {
            let size = *config.queue_sizes_bits.choose(&mut rng).expect("nonempty");
            queues.push(QueueSpec {
                id: format!("q{}", queues.len()),
                link: l.id.clone(),
                size_bits: size,
                policy: if sp { Policy::Sp } else { Policy::Fifo },
                // Class 0 is the highest priority.
                priority: classes - 1 - c,
            });
        }
    }
    // Queue lookup: queue index = link index * classes + class.
    let queue_of = |li: usize, class: u32| -> String {
        format!("q{}", li * classes as usize + class as usize)
    };

    let mut out_links = vec![Vec::new(); n];
    for (li, l) in links.iter().enumerate() {
        let u = l.from[1..].parse::<usize>().expect("router name");
        let v = l.to[1..].parse::<usize>().expect("router name");
        out_links[u].push((v, li));
    }
    for o in &mut out_links {
        o.sort_unstable();
    }
    let weights: Option<Vec<f64>> = match config.routing {
        Routing::ShortestPath => None,
        Routing::RandomWeighted => {
            Some((0..links.len()).map(|_| rng.gen_range(0.5..2.0)).collect())
        }
    };

    // Flows: distinct (src, dst) pairs, routed, ToS-mapped to a queue at
    // every hop.
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(config.flows);

    let traffic_kind = *config.traffic_models.choose(&mut rng).expect("nonempty");
    let mut flows = Vec::new();
    for (fi, &(src, dst)) in pairs.iter().enumerate() {
        let hops = route(n, &out_links, weights.as_deref(), src, dst);
        let tos = rng.gen_range(0..8u32);
        let class = tos % classes;
        let mut path = Vec::with_capacity(hops.len() - 1);
        for w in hops.windows(2) {
            let (u, v) = (w[0], w[1]);
            let li = out_links[u]
                .iter()
                .find(|&&(nbr, _)| nbr == v)
                .expect("routed along existing links")
                .1;
            path.push((queue_of(li, class), links[li].id.clone()));
        }
        let base_pps = rng.gen_range(50.0..200.0);
        let traffic = match traffic_kind {
            TrafficKind::Poisson => TrafficModel::Poisson { rate_pps: base_pps },
            TrafficKind::Deterministic => TrafficModel::Deterministic { rate_pps: base_pps },
            TrafficKind::OnOff => TrafficModel::OnOff {
                rate_pps: base_pps,
                mean_on_s: rng.gen_range(0.35..0.55),
                mean_off_s: rng.gen_range(0.35..0.55),
            },
            TrafficKind::AutocorrExp => TrafficModel::AutocorrExp {
                rate_pps: base_pps,
                rho: rng.gen_range(0.1..0.7),
            },
            TrafficKind::ModulatedExp => TrafficModel::ModulatedExp {
                rate_pps: base_pps,
                rho: rng.gen_range(0.1..0.7),
                levels: vec![0.5, 1.0, 2.0],
                period_s: rng.gen_range(0.5..2.0),
            },
        };
        flows.push(FlowSpec {
            id: format!("f{fi}"),
            src: routers[src].clone(),
            dst: routers[dst].clone(),
            path,
            avg_rate_bps: traffic.mean_rate_pps() * config.packet_size_bits,
            traffic,
            packet_size_bits: config.packet_size_bits,
            tos,
        });
    }

    let scenario = NetworkScenario {
        routers,
        links,
        queues,
        flows,
    };
    scenario.validate()?;

    let target_util = rng.gen_range(config.util_range.0..=config.util_range.1);
    let (calibrated, _) = calibrate_intensity(&scenario, target_util, derive_seed(seed, 2, 0))?;
    Ok(GeneratedScenario {
        scenario: calibrated,
        traffic: traffic_kind,
        target_util,
    })
}

/// Simulation settings used for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub duration_s: f64,
    pub warmup_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub id: String,
    pub file: String,
    pub traffic: TrafficKind,
    pub target_util: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: GenConfig,
    pub sim: SimMeta,
    pub scenarios: Vec<ScenarioMeta>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// One labels.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub scenario: String,
    pub flow_id: String,
    pub metrics: FlowMetrics,
    pub sent: u64,
    pub dropped: u64,
}

/// A materialized dataset: scenarios, labels, manifest, splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub splits: Splits,
    pub scenarios: Vec<NetworkScenario>,
    pub labels: Vec<Vec<LabelRow>>,
}

impl Dataset {
    pub fn scenario_by_id(&self, id: &str) -> Option<(&NetworkScenario, &[LabelRow])> {
        let i = self.manifest.scenarios.iter().position(|m| m.id == id)?;
        Some((&self.scenarios[i], &self.labels[i]))
    }
}

/// Generates, labels (in parallel across scenarios with derived seeds and
/// an ordered merge), and splits a dataset.
pub fn build_dataset(
    config: &GenConfig,
    seed: u64,
    sim: SimMeta,
    split_sizes: (usize, usize, usize),
    jobs: usize,
) -> Result<Dataset, DatasetError> {
    let (ntrain, nval, ntest) = split_sizes;
    if ntrain + nval + ntest != config.count {
        return Err(DatasetError::BadConfig(format!(
            "splits {ntrain}+{nval}+{ntest} must sum to count {}",
            config.count
        )));
    }
    if !(sim.duration_s > sim.warmup_s && sim.warmup_s >= 0.0) {
        return Err(DatasetError::BadConfig(
            "need sim duration > warmup >= 0".into(),
        ));
    }
    let generated = generate_scenarios(config, seed)?;

    let label_one = |(i, g): (usize, &GeneratedScenario)| -> Result<Vec<LabelRow>, DatasetError> {
        let res = simulate(
            &g.scenario,
            derive_seed(seed, 3, i as u64),
            sim.duration_s,
            sim.warmup_s,
        )?;
        Ok(res
            .flows
            .iter()
            .map(|f| LabelRow {
                scenario: format!("s{i:03}"),
                flow_id: f.flow_id.clone(),
                metrics: f.metrics,
                sent: f.sent,
                dropped: f.dropped,
            })
            .collect())
    };
    let labels: Vec<Vec<LabelRow>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| DatasetError::BadConfig(e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            generated
                .par_iter()
                .enumerate()
                .map(label_one)
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        generated
            .iter()
            .enumerate()
            .map(label_one)
            .collect::<Result<Vec<_>, _>>()?
    };

    let ids: Vec<String> = (0..config.count).map(|i| format!("s{i:03}")).collect();
    let manifest = Manifest {
        seed,
        config: config.clone(),
        sim,
        scenarios: generated
            .iter()
            .enumerate()
            .map(|(i, g)| ScenarioMeta {
                id: ids[i].clone(),
                file: format!("scenarios/s{i:03}.json"),
                traffic: g.traffic,
                target_util: g.target_util,
            })
            .collect(),
    };
    let splits = Splits {
        train: ids[..ntrain].to_vec(),
        val: ids[ntrain..ntrain + nval].to_vec(),
        test: ids[ntrain + nval..].to_vec(),
    };
    Ok(Dataset {
        manifest,
        splits,
        scenarios: generated.into_iter().map(|g| g.scenario).collect(),
        labels,
    })
}

pub fn labels_csv(labels: &[Vec<LabelRow>]) -> String {
    let mut out = String::from("scenario,flow_id,mean_delay_s,jitter_s,loss_rate,sent,dropped\n");
    for rows in labels {
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scenario,
                r.flow_id,
                r.metrics.mean_delay_s,
                r.metrics.jitter_s,
                r.metrics.loss_rate,
                r.sent,
                r.dropped
            ));
        }
    }
    out
}

fn parse_labels_csv(text: &str) -> Result<Vec<LabelRow>, DatasetError> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(DatasetError::Parse(format!(
                "labels.csv line {} has {} fields",
                ln + 1,
                parts.len()
            )));
        }
        let num = |s: &str| -> Result<f64, DatasetError> {
            s.parse()
                .map_err(|e| DatasetError::Parse(format!("line {}: {e}", ln + 1)))
        };
        rows.push(LabelRow {
            scenario: parts[0].to_string(),
            flow_id: parts[1].to_string(),
            metrics: FlowMetrics {
                mean_delay_s: num(parts[2])?,
                jitter_s: num(parts[3])?,
                loss_rate: num(parts[4])?,
            },
            sent: parts[5]
                .parse()
                .map_err(|e| DatasetError::Parse(format!("line {}: {e}", ln + 1)))?,
            dropped: parts[6]
                .parse()
                .map_err(|e| DatasetError::Parse(format!("line {}: {e}", ln + 1)))?,
        });
    }
    Ok(rows)
}

/// Writes `manifest.json`, `scenarios/*.json`, `labels.csv`, `splits.json`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join("scenarios"))?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes"),
    )?;
    std::fs::write(
        dir.join("splits.json"),
        serde_json::to_string_pretty(&ds.splits).expect("splits serialize"),
    )?;
    for (meta, scenario) in ds.manifest.scenarios.iter().zip(&ds.scenarios) {
        std::fs::write(dir.join(&meta.file), scenario.to_json_pretty())?;
    }
    std::fs::write(dir.join("labels.csv"), labels_csv(&ds.labels))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| DatasetError::Parse(format!("manifest.json: {e}")))?;
    let splits: Splits = serde_json::from_str(&std::fs::read_to_string(dir.join("splits.json"))?)
        .map_err(|e| DatasetError::Parse(format!("splits.json: {e}")))?;
    let mut scenarios = Vec::with_capacity(manifest.scenarios.len());
    for meta in &manifest.scenarios {
        let s = NetworkScenario::from_json(&std::fs::read_to_string(dir.join(&meta.file))?)
            .map_err(|e| DatasetError::Parse(format!("{}: {e}", meta.file)))?;
        scenarios.push(s);
    }
    let all_rows = parse_labels_csv(&std::fs::read_to_string(dir.join("labels.csv"))?)?;
    let mut labels: Vec<Vec<LabelRow>> = vec![Vec::new(); manifest.scenarios.len()];
    let index: BTreeMap<&str, usize> = manifest
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, m)| (m.id.as_str(), i))
        .collect();
    for row in all_rows {
        let &i = index.get(row.scenario.as_str()).ok_or_else(|| {
            DatasetError::Parse(format!(
                "labels.csv references unknown scenario {}",
                row.scenario
            ))
        })?;
        labels[i].push(row);
    }
    Ok(Dataset {
        manifest,
        splits,
        scenarios,
        labels,
    })
}

/// Prediction/label pairs keyed by (scenario id, flow id).
pub type Keyed = BTreeMap<(String, String), f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean absolute percentage error over labels > 0, in percent.
    pub mape_percent: f64,
    pub mse: f64,
    pub mae: f64,
    pub count: usize,
    /// Per-scenario MAPE breakdown, in percent.
    pub per_scenario: Vec<(String, f64)>,
}

/// Computes MAPE/MSE/MAE of predictions against labels. Every label must
/// have a prediction; labels of exactly zero are excluded from MAPE (they
/// still count toward MSE and MAE).
pub fn evaluate(predictions: &Keyed, labels: &Keyed) -> Result<MetricReport, DatasetError> {
    let mut ape_sum = 0.0;
    let mut ape_n = 0usize;
    let mut se_sum = 0.0;
    let mut ae_sum = 0.0;
    let mut per_scenario: BTreeMap<String, (f64, usize)> = BTreeMap::new();

    for ((scenario, flow), &y) in labels {
        let Some(&yhat) = predictions.get(&(scenario.clone(), flow.clone())) else {
            return Err(DatasetError::MissingPrediction {
                scenario: scenario.clone(),
                flow: flow.clone(),
            });
        };
        let err = yhat - y;
        se_sum += err * err;
        ae_sum += err.abs();
        if y > 0.0 {
            let ape = err.abs() / y;
            ape_sum += ape;
            ape_n += 1;
            let e = per_scenario.entry(scenario.clone()).or_insert((0.0, 0));
            e.0 += ape;
            e.1 += 1;
        }
    }
    let n = labels.len();
    if n == 0 || ape_n == 0 {
        return Err(DatasetError::ZeroLabel);
    }
    Ok(MetricReport {
        mape_percent: 100.0 * ape_sum / ape_n as f64,
        mse: se_sum / n as f64,
        mae: ae_sum / n as f64,
        count: n,
        per_scenario: per_scenario
            .into_iter()
            .map(|(s, (sum, k))| (s, 100.0 * sum / k as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::complexify;

    fn quick_config(count: usize) -> GenConfig {
        GenConfig {
            count,
            flows: 4,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = quick_config(3);
        let a = generate_scenarios(&cfg, 77).unwrap();
        let b = generate_scenarios(&cfg, 77).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scenario.to_json_pretty(), y.scenario.to_json_pretty());
        }
        let c = generate_scenarios(&cfg, 78).unwrap();
        assert_ne!(
            a[0].scenario.to_json_pretty(),
            c[0].scenario.to_json_pretty()
        );
    }

    #[test]
    fn fifo_only_config_yields_single_fifo_queues() {
        let cfg = quick_config(2);
        for g in generate_scenarios(&cfg, 5).unwrap() {
            let idx = g.scenario.index().unwrap();
            for queues in &idx.link_queues {
                assert_eq!(queues.len(), 1);
            }
            assert!(g.scenario.queues.iter().all(|q| q.policy == Policy::Fifo));
        }
    }

    #[test]
    fn sp_config_yields_multiqueue_ports() {
        let cfg = GenConfig {
            allow_sp: true,
            count: 8,
            flows: 4,
            ..GenConfig::default()
        };
        let gens = generate_scenarios(&cfg, 9).unwrap();
        let any_sp = gens
            .iter()
            .any(|g| g.scenario.queues.iter().any(|q| q.policy == Policy::Sp));
        assert!(
            any_sp,
            "with allow_sp over 8 scenarios, some should sample SP"
        );
        for g in &gens {
            if g.scenario.queues[0].policy == Policy::Sp {
                let idx = g.scenario.index().unwrap();
                assert!(idx.link_queues.iter().all(|qs| qs.len() >= 2));
            }
        }
    }

    #[test]
    fn generated_scenarios_complexify_cleanly() {
        let cfg = GenConfig {
            count: 15,
            flows: 6,
            allow_sp: true,
            ..GenConfig::default()
        };
        for g in generate_scenarios(&cfg, 13).unwrap() {
            let cx = complexify(&g.scenario).unwrap();
            assert!(cx.complex.validate().is_empty());
        }
    }

    #[test]
    fn paths_are_loop_free() {
        let cfg = GenConfig {
            count: 5,
            flows: 8,
            nodes: 8,
            ..GenConfig::default()
        };
        for g in generate_scenarios(&cfg, 21).unwrap() {
            for f in &g.scenario.flows {
                let mut seen = BTreeSet::new();
                for (_, lid) in &f.path {
                    assert!(seen.insert(lid.clone()), "link repeated on {}", f.id);
                }
            }
        }
    }

    #[test]
    fn weighted_routing_differs_sometimes() {
        let base = GenConfig {
            count: 6,
            flows: 8,
            nodes: 8,
            ..GenConfig::default()
        };
        let weighted = GenConfig {
            routing: Routing::RandomWeighted,
            ..base.clone()
        };
        let a = generate_scenarios(&base, 4).unwrap();
        let b = generate_scenarios(&weighted, 4).unwrap();
        let differs = a.iter().zip(&b).any(|(x, y)| {
            x.scenario
                .flows
                .iter()
                .zip(&y.scenario.flows)
                .any(|(f, g)| f.path != g.path)
        });
        assert!(differs, "random weights never changed any route");
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let cfg = quick_config(3);
        let sim = SimMeta {
            duration_s: 4.0,
            warmup_s: 0.4,
        };
        let ds = build_dataset(&cfg, 99, sim, (2, 1, 0), 1).unwrap();
        assert_eq!(ds.splits.train.len(), 2);
        assert_eq!(ds.splits.val.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.scenarios, ds.scenarios);
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn parallel_labeling_matches_serial() {
        let cfg = quick_config(4);
        let sim = SimMeta {
            duration_s: 3.0,
            warmup_s: 0.3,
        };
        let serial = build_dataset(&cfg, 55, sim, (4, 0, 0), 1).unwrap();
        let parallel = build_dataset(&cfg, 55, sim, (4, 0, 0), 4).unwrap();
        assert_eq!(labels_csv(&serial.labels), labels_csv(&parallel.labels));
    }

    #[test]
    fn splits_partition_the_scenarios() {
        let cfg = quick_config(5);
        let sim = SimMeta {
            duration_s: 2.0,
            warmup_s: 0.2,
        };
        let ds = build_dataset(&cfg, 1, sim, (3, 1, 1), 1).unwrap();
        let mut all: Vec<&String> = ds
            .splits
            .train
            .iter()
            .chain(&ds.splits.val)
            .chain(&ds.splits.test)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn evaluate_exact_predictions_are_zero_error() {
        let mut labels = Keyed::new();
        let mut preds = Keyed::new();
        for i in 0..4 {
            let k = (format!("s{i}"), "f0".to_string());
            labels.insert(k.clone(), 0.5 + i as f64);
            preds.insert(k, 0.5 + i as f64);
        }
        let r = evaluate(&preds, &labels).unwrap();
        assert_eq!(r.mape_percent, 0.0);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.count, 4);
    }

    #[test]
    fn evaluate_double_prediction_closed_form() {
        let mut labels = Keyed::new();
        let mut preds = Keyed::new();
        labels.insert(("s0".into(), "f0".into()), 1.0);
        preds.insert(("s0".into(), "f0".into()), 2.0);
        let r = evaluate(&preds, &labels).unwrap();
        assert_eq!(r.mape_percent, 100.0);
        assert_eq!(r.mse, 1.0);
        assert_eq!(r.mae, 1.0);
    }

    #[test]
    fn evaluate_is_order_independent_and_strict() {
        let mut labels = Keyed::new();
        let mut preds = Keyed::new();
        for (i, y) in [(0, 1.0), (1, 2.0), (2, 4.0)] {
            labels.insert((format!("s{i}"), "f".into()), y);
        }
        for (i, y) in [(2, 5.0), (0, 1.5), (1, 2.0)] {
            preds.insert((format!("s{i}"), "f".into()), y);
        }
        let a = evaluate(&preds, &labels).unwrap();
        let b = evaluate(&preds.clone(), &labels.clone()).unwrap();
        assert_eq!(a, b);

        preds.remove(&("s1".into(), "f".into()));
        assert!(matches!(
            evaluate(&preds, &labels),
            Err(DatasetError::MissingPrediction { .. })
        ));
    }

    #[test]
    fn evaluate_zero_labels_skip_mape_but_count_mae() {
        let mut labels = Keyed::new();
        let mut preds = Keyed::new();
        labels.insert(("s0".into(), "a".into()), 0.0);
        preds.insert(("s0".into(), "a".into()), 0.5);
        labels.insert(("s0".into(), "b".into()), 1.0);
        preds.insert(("s0".into(), "b".into()), 1.0);
        let r = evaluate(&preds, &labels).unwrap();
        assert_eq!(r.mape_percent, 0.0);
        assert_eq!(r.mae, 0.25);

        labels.remove(&("s0".into(), "b".into()));
        preds.remove(&("s0".into(), "b".into()));
        assert!(matches!(
            evaluate(&preds, &labels),
            Err(DatasetError::ZeroLabel)
        ));
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            GenConfig {
                nodes: 3,
                ..GenConfig::default()
            },
            GenConfig {
                nodes: 13,
                ..GenConfig::default()
            },
            GenConfig {
                flows: 0,
                ..GenConfig::default()
            },
            GenConfig {
                util_range: (0.0, 0.5),
                ..GenConfig::default()
            },
            GenConfig {
                util_range: (0.5, 0.99),
                ..GenConfig::default()
            },
            GenConfig {
                flows: 100,
                nodes: 4,
                ..GenConfig::default()
            },
        ] {
            assert!(matches!(
                generate_scenarios(&cfg, 1),
                Err(DatasetError::BadConfig(_))
            ));
        }
    }
}
