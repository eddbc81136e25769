//! Desk-scale packet-level discrete-event simulator.
//!
//! Packets are generated per flow from its traffic model with exponential
//! (or constant) sizes, buffered drop-tail at each hop's queue, and served
//! FIFO within a queue at `size / capacity` seconds per packet; strict
//! priority picks the highest-priority nonempty queue of a link first.
//! Delay is queuing plus transmission only (zero propagation). Generation
//! stops at `duration`, in-flight packets drain to completion, and a packet
//! contributes to the statistics iff it was generated at or after `warmup`,
//! which makes `sent == delivered + dropped` an exact identity per flow.

mod traffic;

pub use traffic::{sample_interarrivals, ArrivalProcess, TrafficModel};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{FlowMetrics, NetworkScenario, Policy, ScenarioError, ScenarioIndex};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("bad scenario: {0}")]
    BadScenario(#[from] ScenarioError),
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
}

/// Per-flow simulation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSim {
    pub flow_id: String,
    pub metrics: FlowMetrics,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Mean end-to-end delay per batch of 1000 delivered packets, for
    /// standard-error estimation in the presence of queueing correlation.
    pub batch_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub flows: Vec<FlowSim>,
    /// Fraction of the measured window each link spent transmitting.
    pub link_utilization: Vec<f64>,
    /// (flow index, generation time, delivery time) per delivered packet,
    /// populated only when departure tracking is enabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub departures: Vec<(usize, f64, f64)>,
}

/// Packet size distribution around the flow's mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeDist {
    Exponential,
    Constant,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub packet_sizes: SizeDist,
    pub track_departures: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            packet_sizes: SizeDist::Exponential,
            track_departures: false,
        }
    }
}

const BATCH: u64 = 1000;

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: usize,
    gen: f64,
    size: f64,
    hop: usize,
    counted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EvKind {
    NextPacket { flow: usize },
    ServiceComplete { link: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for the max-heap: earliest time first, insertion order
        // breaking ties so runs are reproducible.
        other
            .time
            .partial_cmp(&self.time)
            .expect("event times are finite")
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
    fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Queues of a link in service order: strict priority serves descending
/// priority (declaration order breaking ties); FIFO ports serve their
/// single queue, or declaration order if several were configured.
pub fn service_order(scenario: &NetworkScenario, index: &ScenarioIndex, link: usize) -> Vec<usize> {
    let mut qs = index.link_queues[link].clone();
    let sp = qs.iter().any(|&q| scenario.queues[q].policy == Policy::Sp);
    if sp {
        qs.sort_by_key(|&q| (std::cmp::Reverse(scenario.queues[q].priority), q));
    }
    qs
}

struct QueueState {
    occupied_bits: f64,
    buf: VecDeque<Packet>,
}

struct LinkState {
    busy: bool,
    current: Option<Packet>,
    busy_in_window: f64,
    order: Vec<usize>,
}

struct Sim<'a> {
    scenario: &'a NetworkScenario,
    opts: SimOptions,
    duration: f64,
    warmup: f64,
    heap: BinaryHeap<Event>,
    seq: u64,
    queues: Vec<QueueState>,
    links: Vec<LinkState>,
    /// Resolved (queue, link) indices per flow hop.
    paths: Vec<Vec<(usize, usize)>>,
    rngs: Vec<ChaCha8Rng>,
    arrivals: Vec<ArrivalProcess>,
    sent: Vec<u64>,
    delivered: Vec<u64>,
    dropped: Vec<u64>,
    delay_stats: Vec<Welford>,
    batch_acc: Vec<(f64, u64)>,
    batch_means: Vec<Vec<f64>>,
    departures: Vec<(usize, f64, f64)>,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: f64, kind: EvKind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn sample_size(&mut self, flow: usize) -> f64 {
        let mean = self.scenario.flows[flow].packet_size_bits;
        match self.opts.packet_sizes {
            SizeDist::Constant => mean,
            SizeDist::Exponential => {
                let d = Exp::new(1.0 / mean).expect("positive mean size");
                d.sample(&mut self.rngs[flow])
            }
        }
    }

    fn next_packet(&mut self, flow: usize, t: f64) {
        if t >= self.duration {
            return;
        }
        let counted = t >= self.warmup;
        if counted {
            self.sent[flow] += 1;
        }
        let size = self.sample_size(flow);
        let pkt = Packet {
            flow,
            gen: t,
            size,
            hop: 0,
            counted,
        };
        self.arrive(pkt, t);
        let gap = self.arrivals[flow].next_gap(&mut self.rngs[flow]);
        self.schedule(t + gap, EvKind::NextPacket { flow });
    }

    fn arrive(&mut self, pkt: Packet, t: f64) {
        let (qi, li) = self.paths[pkt.flow][pkt.hop];
        let q = &mut self.queues[qi];
        if q.occupied_bits + pkt.size > self.scenario.queues[qi].size_bits {
            if pkt.counted {
                self.dropped[pkt.flow] += 1;
            }
            return;
        }
        q.occupied_bits += pkt.size;
        q.buf.push_back(pkt);
        if !self.links[li].busy {
            self.begin_service(li, t);
        }
    }

    fn begin_service(&mut self, li: usize, t: f64) {
        if self.links[li].busy {
            return;
        }
        let Some(qi) = self.links[li]
            .order
            .iter()
            .copied()
            .find(|&q| !self.queues[q].buf.is_empty())
        else {
            return;
        };
        let pkt = self.queues[qi].buf.pop_front().expect("nonempty queue");
        self.queues[qi].occupied_bits -= pkt.size;
        let finish = t + pkt.size / self.scenario.links[li].capacity_bps;
        let lo = t.max(self.warmup);
        let hi = finish.min(self.duration);
        if hi > lo {
            self.links[li].busy_in_window += hi - lo;
        }
        self.links[li].busy = true;
        self.links[li].current = Some(pkt);
        self.schedule(finish, EvKind::ServiceComplete { link: li });
    }

    fn service_complete(&mut self, li: usize, t: f64) {
        let mut pkt = self.links[li].current.take().expect("link was serving");
        self.links[li].busy = false;
        pkt.hop += 1;
        if pkt.hop == self.paths[pkt.flow].len() {
            if pkt.counted {
                self.delivered[pkt.flow] += 1;
                let delay = t - pkt.gen;
                self.delay_stats[pkt.flow].push(delay);
                let (sum, n) = &mut self.batch_acc[pkt.flow];
                *sum += delay;
                *n += 1;
                if *n == BATCH {
                    let mean = *sum / BATCH as f64;
                    self.batch_means[pkt.flow].push(mean);
                    self.batch_acc[pkt.flow] = (0.0, 0);
                }
                if self.opts.track_departures {
                    self.departures.push((pkt.flow, pkt.gen, t));
                }
            }
            self.begin_service(li, t);
            return;
        }
        self.arrive(pkt, t);
        self.begin_service(li, t);
    }
}

/// Runs the simulator with default options (exponential packet sizes).
pub fn simulate(
    scenario: &NetworkScenario,
    seed: u64,
    duration: f64,
    warmup: f64,
) -> Result<SimResult, SimError> {
    simulate_with_options(scenario, seed, duration, warmup, SimOptions::default())
}

pub fn simulate_with_options(
    scenario: &NetworkScenario,
    seed: u64,
    duration: f64,
    warmup: f64,
    opts: SimOptions,
) -> Result<SimResult, SimError> {
    if duration.is_nan() || warmup.is_nan() || duration <= 0.0 || warmup < 0.0 || warmup >= duration
    {
        return Err(SimError::BadParams(format!(
            "need duration > warmup >= 0, got duration {duration}, warmup {warmup}"
        )));
    }
    let index = scenario.validate()?;

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

    let nf = scenario.flows.len();
    let mut sim = Sim {
        scenario,
        opts,
        duration,
        warmup,
        heap: BinaryHeap::new(),
        seq: 0,
        queues: scenario
            .queues
            .iter()
            .map(|_| QueueState {
                occupied_bits: 0.0,
                buf: VecDeque::new(),
            })
            .collect(),
        links: (0..scenario.links.len())
            .map(|li| LinkState {
                busy: false,
                current: None,
                busy_in_window: 0.0,
                order: service_order(scenario, &index, li),
            })
            .collect(),
        paths,
        rngs: (0..nf)
            .map(|i| {
                ChaCha8Rng::seed_from_u64(seed ^ (0x9E3779B97F4A7C15u64.wrapping_mul(i as u64 + 1)))
            })
            .collect(),
        arrivals: scenario
            .flows
            .iter()
            .map(|f| ArrivalProcess::new(f.traffic.clone()))
            .collect::<Result<_, _>>()?,
        sent: vec![0; nf],
        delivered: vec![0; nf],
        dropped: vec![0; nf],
        delay_stats: (0..nf).map(|_| Welford::default()).collect(),
        batch_acc: vec![(0.0, 0); nf],
        batch_means: vec![Vec::new(); nf],
        departures: Vec::new(),
    };

    for flow in 0..nf {
        let first = sim.arrivals[flow].next_gap(&mut sim.rngs[flow]);
        sim.schedule(first, EvKind::NextPacket { flow });
    }

    while let Some(ev) = sim.heap.pop() {
        match ev.kind {
            EvKind::NextPacket { flow } => sim.next_packet(flow, ev.time),
            EvKind::ServiceComplete { link } => sim.service_complete(link, ev.time),
        }
    }

    let flows = (0..nf)
        .map(|i| {
            let loss_rate = if sim.sent[i] == 0 {
                0.0
            } else {
                sim.dropped[i] as f64 / sim.sent[i] as f64
            };
            FlowSim {
                flow_id: scenario.flows[i].id.clone(),
                metrics: FlowMetrics {
                    mean_delay_s: sim.delay_stats[i].mean,
                    jitter_s: sim.delay_stats[i].std(),
                    loss_rate,
                },
                sent: sim.sent[i],
                delivered: sim.delivered[i],
                dropped: sim.dropped[i],
                batch_means: sim.batch_means[i].clone(),
            }
        })
        .collect();
    let window = duration - warmup;
    let link_utilization = sim
        .links
        .iter()
        .map(|l| l.busy_in_window / window)
        .collect();
    Ok(SimResult {
        flows,
        link_utilization,
        departures: sim.departures,
    })
}

/// Labels in CSV form: `flow_id,mean_delay_s,jitter_s,loss_rate,sent,dropped`.
pub fn labels_csv(result: &SimResult) -> String {
    let mut out = String::from("flow_id,mean_delay_s,jitter_s,loss_rate,sent,dropped\n");
    for f in &result.flows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.flow_id,
            f.metrics.mean_delay_s,
            f.metrics.jitter_s,
            f.metrics.loss_rate,
            f.sent,
            f.dropped
        ));
    }
    out
}

/// Analytical per-link utilizations implied by the nominal flow rates.
pub fn analytic_utilization(scenario: &NetworkScenario) -> Result<Vec<f64>, SimError> {
    let index = scenario.index()?;
    let mut load = vec![0.0; scenario.links.len()];
    for f in &scenario.flows {
        for (_, lid) in &f.path {
            let li = *index
                .link
                .get(lid)
                .ok_or_else(|| ScenarioError::UnknownRef(lid.clone()))?;
            load[li] += f.avg_rate_bps;
        }
    }
    Ok(load
        .iter()
        .zip(&scenario.links)
        .map(|(l, spec)| l / spec.capacity_bps)
        .collect())
}

const MAX_LOSS: f64 = 0.03;

/// Scales all flow rates uniformly so the maximum analytical link
/// utilization hits `target`, then lowers the scale until a pilot
/// simulation keeps every flow's loss at or below 3%. Returns the scaled
/// scenario and the final scale factor.
pub fn calibrate_intensity(
    scenario: &NetworkScenario,
    target_max_utilization: f64,
    seed: u64,
) -> Result<(NetworkScenario, f64), SimError> {
    if !(target_max_utilization > 0.0 && target_max_utilization <= 0.95) {
        return Err(SimError::BadParams(format!(
            "target utilization must be in (0, 0.95], got {target_max_utilization}"
        )));
    }
    scenario.validate()?;
    let utils = analytic_utilization(scenario)?;
    let max_util = utils.iter().cloned().fold(0.0, f64::max);
    if max_util <= 0.0 {
        return Err(SimError::Infeasible("no flow traverses any link".into()));
    }

    let mut scale = target_max_utilization / max_util;
    for _ in 0..25 {
        let mut candidate = scenario.clone();
        candidate.scale_rates(scale);
        let slowest = candidate
            .flows
            .iter()
            .map(|f| f.traffic.mean_rate_pps())
            .fold(f64::INFINITY, f64::min);
        let pilot_duration = (600.0 / slowest).clamp(0.5, 20.0);
        let pilot = simulate(&candidate, seed, pilot_duration, pilot_duration * 0.1)?;
        let worst_loss = pilot
            .flows
            .iter()
            .map(|f| f.metrics.loss_rate)
            .fold(0.0, f64::max);
        if worst_loss <= MAX_LOSS {
            return Ok((candidate, scale));
        }
        scale *= 0.9;
    }
    Err(SimError::Infeasible(
        "pilot loss stayed above 3% after repeated rate reductions".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::scenario::testutil::line_scenario;
    use crate::netmodel::{FlowSpec, LinkSpec, NetworkScenario, Policy, QueueSpec};

    /// One link, one queue, one flow: the M/M/1 testbed.
    fn mm1(rate_pps: f64, queue_bits: f64) -> NetworkScenario {
        NetworkScenario {
            routers: vec!["A".into(), "B".into()],
            links: vec![LinkSpec {
                id: "l0".into(),
                from: "A".into(),
                to: "B".into(),
                capacity_bps: 1e6,
            }],
            queues: vec![QueueSpec {
                id: "q0".into(),
                link: "l0".into(),
                size_bits: queue_bits,
                policy: Policy::Fifo,
                priority: 0,
            }],
            flows: vec![FlowSpec {
                id: "f0".into(),
                src: "A".into(),
                dst: "B".into(),
                path: vec![("q0".into(), "l0".into())],
                traffic: TrafficModel::Poisson { rate_pps },
                avg_rate_bps: rate_pps * 1000.0,
                packet_size_bits: 1000.0,
                tos: 0,
            }],
        }
    }

    /// Batch-means standard error, robust to queueing autocorrelation.
    fn batch_se(batches: &[f64]) -> f64 {
        let k = batches.len() as f64;
        let mean = batches.iter().sum::<f64>() / k;
        let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    }

    #[test]
    fn mm1_sojourn_matches_theory_at_half_load() {
        // mu = capacity / mean size = 1000 pkt/s; rho = 0.5.
        let s = mm1(500.0, 1e12);
        let res = simulate(&s, 42, 240.0, 24.0).unwrap();
        let f = &res.flows[0];
        assert!(
            f.delivered > 100_000,
            "need 1e5 packets, got {}",
            f.delivered
        );
        assert_eq!(f.sent, f.delivered + f.dropped);
        assert_eq!(f.dropped, 0);
        let expect = 1.0 / (1000.0 - 500.0);
        let se = batch_se(&f.batch_means);
        assert!(
            (f.metrics.mean_delay_s - expect).abs() <= 3.0 * se,
            "mean {} vs theory {expect}, 3se {}",
            f.metrics.mean_delay_s,
            3.0 * se
        );
    }

    #[test]
    fn underloaded_deterministic_flow_sees_pure_transmission() {
        let mut s = mm1(50.0, 1e9);
        s.flows[0].traffic = TrafficModel::Deterministic { rate_pps: 50.0 };
        let opts = SimOptions {
            packet_sizes: SizeDist::Constant,
            track_departures: false,
        };
        let res = simulate_with_options(&s, 7, 20.0, 2.0, opts).unwrap();
        let f = &res.flows[0];
        // 1000 bits over 1 Mbps: exactly 1 ms, no queueing, no variation.
        assert!((f.metrics.mean_delay_s - 1e-3).abs() < 1e-12);
        assert!(f.metrics.jitter_s < 1e-12);
        assert_eq!(f.metrics.loss_rate, 0.0);
    }

    #[test]
    fn zero_capacity_queue_drops_all_packets() {
        let s = mm1(500.0, 0.0);
        let res = simulate(&s, 3, 10.0, 1.0).unwrap();
        let f = &res.flows[0];
        assert!(f.sent > 0);
        assert_eq!(f.metrics.loss_rate, 1.0);
        assert_eq!(f.delivered, 0);
        assert_eq!(f.sent, f.delivered + f.dropped);
    }

    #[test]
    fn conservation_holds_under_congestion() {
        // Overloaded link with a small buffer: plenty of drops.
        let mut s = mm1(1500.0, 8000.0);
        s.flows[0].avg_rate_bps = 1.5e6;
        let res = simulate(&s, 9, 20.0, 2.0).unwrap();
        let f = &res.flows[0];
        assert!(f.dropped > 0, "expected drops at 150% load");
        assert_eq!(f.sent, f.delivered + f.dropped);
    }

    #[test]
    fn multihop_conservation_and_positive_delay() {
        let s = line_scenario(3, 2e5);
        let res = simulate(&s, 11, 30.0, 3.0).unwrap();
        for f in &res.flows {
            assert_eq!(f.sent, f.delivered + f.dropped);
            assert!(
                f.metrics.mean_delay_s > 2.0 * 1000.0 / 1e6,
                "two transmission times"
            );
        }
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let s = line_scenario(2, 3e5);
        let a = simulate(&s, 123, 12.0, 1.2).unwrap();
        let b = simulate(&s, 123, 12.0, 1.2).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = simulate(&s, 124, 12.0, 1.2).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn fifo_departures_preserve_arrival_order() {
        let s = mm1(800.0, 1e9);
        let opts = SimOptions {
            packet_sizes: SizeDist::Exponential,
            track_departures: true,
        };
        let res = simulate_with_options(&s, 5, 10.0, 0.0, opts).unwrap();
        let deps = &res.departures;
        assert!(deps.len() > 1000);
        for w in deps.windows(2) {
            assert!(w[0].1 <= w[1].1, "generation order");
            assert!(w[0].2 <= w[1].2, "departure order must match arrival order");
        }
    }

    #[test]
    fn work_conservation_shows_in_utilization() {
        let s = mm1(500.0, 1e12);
        let res = simulate(&s, 21, 120.0, 12.0).unwrap();
        // Offered load is rho = 0.5 of the link.
        assert!((res.link_utilization[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn strict_priority_starves_low_priority_traffic() {
        // Two queues on one link; the high-priority flow nearly saturates it.
        let mut s = mm1(900.0, 1e9);
        s.queues[0].policy = Policy::Sp;
        s.queues[0].priority = 7;
        s.queues.push(QueueSpec {
            id: "q1".into(),
            link: "l0".into(),
            size_bits: 1e9,
            policy: Policy::Sp,
            priority: 1,
        });
        s.flows.push(FlowSpec {
            id: "f1".into(),
            src: "A".into(),
            dst: "B".into(),
            path: vec![("q1".into(), "l0".into())],
            traffic: TrafficModel::Poisson { rate_pps: 80.0 },
            avg_rate_bps: 8e4,
            packet_size_bits: 1000.0,
            tos: 1,
        });
        let res = simulate(&s, 17, 60.0, 6.0).unwrap();
        let high = &res.flows[0];
        let low = &res.flows[1];
        assert!(
            low.metrics.mean_delay_s > 2.0 * high.metrics.mean_delay_s,
            "low priority ({}) should wait much longer than high ({})",
            low.metrics.mean_delay_s,
            high.metrics.mean_delay_s
        );
    }

    #[test]
    fn calibration_hits_target_and_is_idempotent() {
        let s = mm1(100.0, 1e9);
        let (scaled, scale) = calibrate_intensity(&s, 0.5, 1).unwrap();
        assert!((scaled.flows[0].avg_rate_bps - 5e5).abs() < 1e-6);
        assert!(scale > 0.0);
        let (_, again) = calibrate_intensity(&scaled, 0.5, 1).unwrap();
        assert!((again - 1.0).abs() < 1e-9, "recalibration scale {again}");
    }

    #[test]
    fn calibration_backs_off_when_pilot_loses_packets() {
        // A buffer of ~6 mean packets loses well over 3% near saturation
        // but recovers once the rate is scaled down.
        let s = mm1(100.0, 6000.0);
        let (_, scale) = calibrate_intensity(&s, 0.95, 2).unwrap();
        let analytic_scale = 0.95 / analytic_utilization(&s).unwrap()[0];
        assert!(
            scale < analytic_scale,
            "pilot must back the scale off: {scale} vs {analytic_scale}"
        );
    }

    #[test]
    fn calibration_rejects_bad_target() {
        let s = mm1(100.0, 1e9);
        assert!(matches!(
            calibrate_intensity(&s, 0.96, 1),
            Err(SimError::BadParams(_))
        ));
    }

    #[test]
    fn labels_csv_schema() {
        let s = mm1(200.0, 1e9);
        let res = simulate(&s, 2, 5.0, 0.5).unwrap();
        let csv = labels_csv(&res);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "flow_id,mean_delay_s,jitter_s,loss_rate,sent,dropped"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("f0,"));
        assert_eq!(row.split(',').count(), 6);
    }
}
