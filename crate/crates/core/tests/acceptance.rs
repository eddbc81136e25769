//! Acceptance suite, library half. Each test prints one PASS/FAIL line;
//! the CLI crate's acceptance suite covers the command-level criteria.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ordnet::datasets::{generate_scenarios, GenConfig, TrafficKind};
use ordnet::gccn::{gccn_layer, CellStates, LayerConfig};
use ordnet::netmodel::{
    complexify, encode_features, fit_stats, message_passing, readout, routenet_as_ordgccn,
    Hyperparams, NetworkScenario,
};
use ordnet::netsim::{simulate, TrafficModel};
use ordnet::tensornn::{grad_check, gru_step, linear, mlp, Activation, ParamStore, Tape, Tensor};
use ordnet::topology::{build_complex, NeighborhoodSpec};

fn report<F: FnOnce() + std::panic::UnwindSafe>(id: u32, name: &str, f: F) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(f);
    let status = if result.is_ok() { "PASS" } else { "FAIL" };
    println!(
        "ACCEPTANCE {id} {name}: {status} ({:.2}s)",
        start.elapsed().as_secs_f64()
    );
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

/// Criterion 2: complexification of 100 seeded random scenarios passes
/// validation with zero violations, in under 10 seconds.
#[test]
fn criterion_2_proposition_one_property_suite() {
    report(2, "prop1-complexify-validates", || {
        let start = Instant::now();
        let mut checked = 0;
        for (i, nodes) in [4usize, 6, 8, 10].iter().enumerate() {
            let cfg = GenConfig {
                count: 25,
                nodes: *nodes,
                flows: 6,
                allow_sp: i % 2 == 1,
                traffic_models: vec![TrafficKind::Poisson, TrafficKind::OnOff],
                ..GenConfig::default()
            };
            for g in generate_scenarios(&cfg, 1000 + i as u64).unwrap() {
                let cx = complexify(&g.scenario).unwrap();
                let violations = cx.complex.validate();
                assert!(
                    violations.is_empty(),
                    "scenario violates axioms: {violations:?}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 100);
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 10.0, "took {elapsed:.1}s, budget 10s");
    });
}

/// Criterion 3: the direct message-passing implementation and the
/// ordered-complex path agree elementwise within 1e-9 for 20 random
/// scenarios at T in {1, 2, 4, 8} with shared parameters, under 60 seconds.
#[test]
fn criterion_3_proposition_two_equivalence() {
    report(3, "prop2-equivalence", || {
        let start = Instant::now();
        let cfg = GenConfig {
            count: 20,
            nodes: 6,
            flows: 6,
            allow_sp: true,
            traffic_models: vec![TrafficKind::Poisson, TrafficKind::OnOff],
            ..GenConfig::default()
        };
        let scenarios = generate_scenarios(&cfg, 2024).unwrap();
        let stats = fit_stats(
            &scenarios
                .iter()
                .map(|g| g.scenario.clone())
                .collect::<Vec<_>>(),
        )
        .unwrap();

        for (si, g) in scenarios.iter().enumerate() {
            let cx = complexify(&g.scenario).unwrap();
            for t in [1usize, 2, 4, 8] {
                let hyper = Hyperparams {
                    dim: 16,
                    iterations: t,
                    head_scale: 15.0,
                };
                let mut params = ParamStore::new(42 + si as u64);

                let mut tape_a = Tape::new();
                let h0a =
                    encode_features(&mut params, &hyper, Some(&stats), &mut tape_a, &g.scenario)
                        .unwrap();
                let a =
                    message_passing(&mut params, &hyper, &mut tape_a, &g.scenario, &h0a).unwrap();

                let mut tape_b = Tape::new();
                let h0b =
                    encode_features(&mut params, &hyper, Some(&stats), &mut tape_b, &g.scenario)
                        .unwrap();
                let b =
                    routenet_as_ordgccn(&mut params, &hyper, &mut tape_b, &g.scenario, &cx, &h0b)
                        .unwrap();

                let mut max_diff = 0.0f64;
                let sides = [
                    (&a.flows, &b.flows),
                    (&a.queues, &b.queues),
                    (&a.links, &b.links),
                ];
                for (xs, ys) in sides {
                    for (&x, &y) in xs.iter().zip(ys.iter()) {
                        for (p, q) in tape_a.value(x).data().iter().zip(tape_b.value(y).data()) {
                            max_diff = max_diff.max((p - q).abs());
                        }
                    }
                }
                for (xs, ys) in a.face.iter().zip(&b.face) {
                    for (&x, &y) in xs.iter().zip(ys) {
                        for (p, q) in tape_a.value(x).data().iter().zip(tape_b.value(y).data()) {
                            max_diff = max_diff.max((p - q).abs());
                        }
                    }
                }
                assert!(
                    max_diff <= 1e-9,
                    "scenario {si}, T={t}: paths diverge by {max_diff}"
                );
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!(elapsed < 60.0, "took {elapsed:.1}s, budget 60s");
    });
}

/// Criterion 4: gradient checks at relative tolerance 1e-4 for the linear
/// layer, the MLP, the GRU cell, and the end-to-end pipeline
/// (encode -> two message-passing rounds -> delay readout).
#[test]
fn criterion_4_gradient_correctness() {
    report(4, "gradcheck-1e-4", || {
        let tol = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rand_vec = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };

        let x5 = Tensor::vector(rand_vec(5, &mut rng)).unwrap();
        let mut p1 = ParamStore::new(1);
        let r = grad_check(&mut p1, tol, 200, 1, |p, t| {
            let x = t.constant(x5.clone());
            let y = linear(t, p, "lin", x, 4)?;
            let sq = t.mul(y, y)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.passed(), "linear: {}", r.max_rel_err);

        let x3 = Tensor::vector(rand_vec(3, &mut rng)).unwrap();
        let mut p2 = ParamStore::new(2);
        let r = grad_check(&mut p2, tol, 200, 2, |p, t| {
            let x = t.constant(x3.clone());
            let y = mlp(t, p, "m", &[6, 5, 1], Activation::Tanh, x)?;
            Ok(t.sum(y))
        })
        .unwrap();
        assert!(r.passed(), "mlp: {}", r.max_rel_err);

        let xin = Tensor::vector(rand_vec(4, &mut rng)).unwrap();
        let hin = Tensor::vector(rand_vec(3, &mut rng)).unwrap();
        let mut p3 = ParamStore::new(3);
        let r = grad_check(&mut p3, tol, 200, 3, |p, t| {
            let x = t.constant(xin.clone());
            let h = t.constant(hin.clone());
            let out = gru_step(t, p, "g", x, h)?;
            let sq = t.mul(out, out)?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.passed(), "gru: {}", r.max_rel_err);

        // End to end on a generated scenario.
        let cfg = GenConfig {
            count: 1,
            nodes: 5,
            flows: 4,
            ..GenConfig::default()
        };
        let scenario = generate_scenarios(&cfg, 7).unwrap().remove(0).scenario;
        let stats = fit_stats(std::slice::from_ref(&scenario)).unwrap();
        let hyper = Hyperparams {
            dim: 6,
            iterations: 2,
            head_scale: 15.0,
        };
        let mut p4 = ParamStore::new(4);
        let r = grad_check(&mut p4, tol, 200, 4, |p, t| {
            let h0 =
                encode_features(p, &hyper, Some(&stats), t, &scenario).map_err(|e| match e {
                    ordnet::netmodel::NetModelError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
            let mp = message_passing(p, &hyper, t, &scenario, &h0).map_err(|e| match e {
                ordnet::netmodel::NetModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let heads = readout(p, &hyper, t, &scenario, &mp).map_err(|e| match e {
                ordnet::netmodel::NetModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let mut acc = t.constant(Tensor::scalar(0.0));
            for &d in &heads.delay {
                let scaled = t.affine(d, 1e4, 0.0);
                let sq = t.mul(scaled, scaled)?;
                acc = t.add(acc, sq)?;
            }
            Ok(t.sum(acc))
        })
        .unwrap();
        assert!(r.passed(), "end-to-end: {}", r.max_rel_err);
    });
}

/// Criterion 5: M/M/1 mean sojourn within 3 batch-means standard errors of
/// 1/(mu - lambda) at rho in {0.3, 0.5, 0.7} with at least 1e5 post-warmup
/// packets, and exact conservation in every run.
#[test]
fn criterion_5_simulator_oracle() {
    report(5, "mm1-oracle", || {
        use ordnet::netmodel::{FlowSpec, LinkSpec, Policy, QueueSpec};
        let mu = 1000.0; // capacity 1e6, mean size 1000 bits
        for (i, rho) in [0.3f64, 0.5, 0.7].iter().enumerate() {
            let lambda = rho * mu;
            let scenario = NetworkScenario {
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
                    size_bits: 1e12,
                    policy: Policy::Fifo,
                    priority: 0,
                }],
                flows: vec![FlowSpec {
                    id: "f0".into(),
                    src: "A".into(),
                    dst: "B".into(),
                    path: vec![("q0".into(), "l0".into())],
                    traffic: TrafficModel::Poisson { rate_pps: lambda },
                    avg_rate_bps: lambda * 1000.0,
                    packet_size_bits: 1000.0,
                    tos: 0,
                }],
            };
            let needed = 1.1e5 / lambda;
            let warmup = 0.1 * needed;
            let res = simulate(&scenario, 4242 + i as u64, warmup + needed, warmup).unwrap();
            let f = &res.flows[0];
            assert_eq!(f.sent, f.delivered + f.dropped, "conservation at rho={rho}");
            assert!(f.delivered >= 100_000, "rho={rho}: {} packets", f.delivered);

            let expect = 1.0 / (mu - lambda);
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
                (f.metrics.mean_delay_s - expect).abs() <= 3.0 * se,
                "rho={rho}: sim {} vs theory {expect} (3se {})",
                f.metrics.mean_delay_s,
                3.0 * se
            );
        }
    });
}

/// Criterion 6: (a) reversing a multi-hop flow's path moves some final
/// flow-state coordinate by more than 1e-6; (b) permuting the flows feeding
/// a queue moves queue states by at most 1e-12; (c) the unordered layer is
/// invariant under neighbor storage permutation to 1e-12.
#[test]
fn criterion_6_order_sensitivity_and_invariance() {
    report(6, "order-sensitivity", || {
        // (a) and (b) on a shared two-link line with distinct capacities,
        // so the two hops present genuinely different inputs.
        use ordnet::netmodel::{FlowSpec, LinkSpec, Policy, QueueSpec};
        let scenario = NetworkScenario {
            routers: vec!["A".into(), "B".into(), "C".into()],
            links: vec![
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
                    capacity_bps: 4e6,
                },
            ],
            queues: vec![
                QueueSpec {
                    id: "q0".into(),
                    link: "l0".into(),
                    size_bits: 32000.0,
                    policy: Policy::Fifo,
                    priority: 0,
                },
                QueueSpec {
                    id: "q1".into(),
                    link: "l1".into(),
                    size_bits: 64000.0,
                    policy: Policy::Fifo,
                    priority: 0,
                },
            ],
            flows: (0..4)
                .map(|i| FlowSpec {
                    id: format!("f{i}"),
                    src: "A".into(),
                    dst: "C".into(),
                    path: vec![("q0".into(), "l0".into()), ("q1".into(), "l1".into())],
                    traffic: TrafficModel::Poisson {
                        rate_pps: 100.0 + 40.0 * i as f64,
                    },
                    avg_rate_bps: (100.0 + 40.0 * i as f64) * 1000.0,
                    packet_size_bits: 1000.0,
                    tos: 0,
                })
                .collect(),
        };
        let hyper = Hyperparams {
            dim: 8,
            iterations: 2,
            head_scale: 15.0,
        };
        let run = |s: &NetworkScenario, params: &mut ParamStore| {
            let stats = fit_stats(std::slice::from_ref(s)).unwrap();
            let mut tape = Tape::new();
            let h0 = encode_features(params, &hyper, Some(&stats), &mut tape, s).unwrap();
            let mp = message_passing(params, &hyper, &mut tape, s, &h0).unwrap();
            (
                mp.flows
                    .iter()
                    .map(|&v| tape.value(v).data().to_vec())
                    .collect::<Vec<_>>(),
                mp.queues
                    .iter()
                    .map(|&v| tape.value(v).data().to_vec())
                    .collect::<Vec<_>>(),
            )
        };
        let mut params = ParamStore::new(606);
        let (flows_fwd, _) = run(&scenario, &mut params);
        let mut reversed = scenario.clone();
        reversed.flows[0].path.reverse();
        let (flows_rev, _) = run(&reversed, &mut params);
        let diff = flows_fwd[0]
            .iter()
            .zip(&flows_rev[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6, "(a) path reversal changed nothing: {diff}");

        let (_, queues_base) = run(&scenario, &mut params);
        let mut permuted = scenario.clone();
        permuted.flows.reverse();
        let (_, queues_perm) = run(&permuted, &mut params);
        let qdiff = queues_base
            .iter()
            .zip(&queues_perm)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(
            qdiff <= 1e-12,
            "(b) queue aggregation should be invariant: {qdiff}"
        );

        // (c) storage permutation of the same complex.
        let build = |flip: bool| {
            let mut higher = vec![
                (vec![0, 1], 1, None),
                (vec![1, 2], 1, None),
                (vec![0, 2], 1, None),
                (vec![0, 1, 2], 2, None),
            ];
            if flip {
                higher.reverse();
                higher.swap(1, 2);
            }
            build_complex(0..3u32, higher).unwrap()
        };
        let ca = build(false);
        let cb = build(true);
        let cfg = LayerConfig::unordered(
            "l",
            vec![
                NeighborhoodSpec::incidence_up(1),
                NeighborhoodSpec::incidence_down(1),
            ],
            4,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let feats: Vec<(Vec<u32>, u32, Vec<f64>)> = ca
            .cells()
            .iter()
            .map(|cell| {
                (
                    cell.support.clone(),
                    cell.rank,
                    (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let layer = |c: &ordnet::topology::CombinatorialComplex| {
            let mut params = ParamStore::new(66);
            let mut tape = Tape::new();
            let mut states = CellStates::new();
            for (support, rank, v) in &feats {
                let id = c.find_cell(support, *rank).unwrap();
                states.insert(id, tape.constant(Tensor::vector(v.clone()).unwrap()));
            }
            let out = gccn_layer(c, &mut tape, &mut params, &states, &cfg).unwrap();
            feats
                .iter()
                .map(|(s, r, _)| {
                    tape.value(out.get(c.find_cell(s, *r).unwrap()).unwrap())
                        .data()
                        .to_vec()
                })
                .collect::<Vec<_>>()
        };
        let ra = layer(&ca);
        let rb = layer(&cb);
        let cdiff = ra
            .iter()
            .zip(&rb)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(
            cdiff <= 1e-12,
            "(c) storage permutation moved outputs: {cdiff}"
        );
    });
}
