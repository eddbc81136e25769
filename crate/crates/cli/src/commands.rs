//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use ordnet::baselines::qt_predict;
use ordnet::datasets::{
    build_dataset, evaluate, load_dataset, save_dataset, Dataset, GenConfig, Keyed, MetricReport,
    Routing, SimMeta, TopologyKind, TrafficKind,
};
use ordnet::netmodel::{
    complexify, encode_features, fit_stats, message_passing, predict, readout, train, Hyperparams,
    LabeledScenario, NetworkScenario, RouteNetModel, Target, TrainConfig,
};
use ordnet::tensornn::{
    grad_check_with_hook, gru_step, linear, mlp, Activation, ParamStore, Tensor,
};
use ordnet::topology::{CombinatorialComplex, NeighborhoodKind, NeighborhoodSpec};
use ordnet::wl::{ccwl_refine, ord_ccwl_refine, Fixture};

use crate::{CliError, SeedArg};

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn internal<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(e.to_string())
}

// ---------------------------------------------------------------- gen ----

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    nodes: usize,
    #[arg(long, default_value_t = 8)]
    flows: usize,
    /// Total number of scenarios (train + val + test).
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Split sizes; zero means "the remainder goes to train".
    #[arg(long, default_value_t = 0)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    /// Comma-separated traffic models:
    /// poisson,deterministic,onoff,autocorr,modulated.
    #[arg(long, default_value = "poisson")]
    traffic: String,
    /// Sample strict-priority multi-queue ports alongside FIFO.
    #[arg(long)]
    sp: bool,
    #[arg(long, default_value_t = 0.3)]
    util_lo: f64,
    #[arg(long, default_value_t = 0.8)]
    util_hi: f64,
    /// Topology family: er (Erdos-Renyi) or pa (preferential attachment).
    #[arg(long, default_value = "er")]
    topology: String,
    /// Routing: spf (hop-count shortest path) or weighted (random weights).
    #[arg(long, default_value = "spf")]
    routing: String,
    /// Simulated seconds per scenario for labeling.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Warmup seconds excluded from the label statistics.
    #[arg(long, default_value_t = 1.0)]
    warmup: f64,
    /// Parallel labeling jobs (results are merged in order).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    seed: SeedArg,
}

pub fn run_gen(args: GenArgs, json: bool) -> Result<u8, CliError> {
    let seed = args.seed.resolve()?;
    let traffic_models: Vec<TrafficKind> = args
        .traffic
        .split(',')
        .map(|s| s.trim().parse().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    let topology = match args.topology.as_str() {
        "er" => TopologyKind::ErdosRenyi,
        "pa" => TopologyKind::PreferentialAttachment,
        other => {
            return Err(CliError::Usage(format!(
                "unknown topology {other:?} (er|pa)"
            )))
        }
    };
    let routing = match args.routing.as_str() {
        "spf" => Routing::ShortestPath,
        "weighted" => Routing::RandomWeighted,
        other => {
            return Err(CliError::Usage(format!(
                "unknown routing {other:?} (spf|weighted)"
            )))
        }
    };
    let (train, val, test) = match (args.train, args.val, args.test) {
        (0, 0, 0) => (args.count, 0, 0),
        (0, v, t) if v + t <= args.count => (args.count - v - t, v, t),
        (tr, v, t) => (tr, v, t),
    };
    let config = GenConfig {
        count: args.count,
        nodes: args.nodes,
        flows: args.flows,
        traffic_models,
        allow_sp: args.sp,
        util_range: (args.util_lo, args.util_hi),
        topology,
        routing,
        ..GenConfig::default()
    };
    let sim = SimMeta {
        duration_s: args.duration,
        warmup_s: args.warmup,
    };
    let ds =
        build_dataset(&config, seed, sim, (train, val, test), args.jobs.max(1)).map_err(usage)?;
    save_dataset(&args.out, &ds).map_err(usage)?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "scenarios": ds.manifest.scenarios.len(),
                "out": args.out,
                "splits": {"train": train, "val": val, "test": test},
            })
        );
    } else {
        println!(
            "wrote {} scenarios ({} train / {} val / {} test) to {}",
            ds.manifest.scenarios.len(),
            train,
            val,
            test,
            args.out.display()
        );
    }
    Ok(0)
}

// -------------------------------------------------------------- train ----

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training history CSV path (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value = "delay")]
    target: String,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    iterations: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[command(flatten)]
    seed: SeedArg,
}

fn split_samples(ds: &Dataset, ids: &[String]) -> Result<Vec<LabeledScenario>, CliError> {
    ids.iter()
        .map(|id| {
            let (scenario, rows) = ds.scenario_by_id(id).ok_or_else(|| {
                CliError::Usage(format!("split references unknown scenario {id}"))
            })?;
            let index = scenario.index().map_err(usage)?;
            let mut labels = vec![None; scenario.flows.len()];
            for row in rows {
                let fi = *index.flow.get(&row.flow_id).ok_or_else(|| {
                    CliError::Usage(format!("label for unknown flow {} in {id}", row.flow_id))
                })?;
                labels[fi] = Some(row.metrics);
            }
            let labels = labels
                .into_iter()
                .enumerate()
                .map(|(fi, m)| {
                    m.ok_or_else(|| {
                        CliError::Usage(format!(
                            "flow {} of {id} has no label",
                            scenario.flows[fi].id
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(LabeledScenario {
                scenario: scenario.clone(),
                labels,
            })
        })
        .collect()
}

pub fn run_train(args: TrainArgs, json: bool) -> Result<u8, CliError> {
    let seed = args.seed.resolve()?;
    let target: Target = args.target.parse().map_err(CliError::Usage)?;
    let ds = load_dataset(&args.data).map_err(usage)?;
    let train_set = split_samples(&ds, &ds.splits.train)?;
    let val_set = split_samples(&ds, &ds.splits.val)?;
    if train_set.is_empty() {
        return Err(CliError::Usage("dataset has an empty train split".into()));
    }

    let hyper = Hyperparams {
        dim: args.dim,
        iterations: args.iterations,
        ..Hyperparams::default()
    };
    let mut model = RouteNetModel::new(seed, hyper);
    let config = TrainConfig {
        target,
        epochs: args.epochs,
        lr: args.lr,
        patience: args.patience,
        seed,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &train_set, &val_set, &config).map_err(internal)?;

    std::fs::write(&args.out, model.checkpoint(target))?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    std::fs::write(
        &history_path,
        ordnet::netmodel::train::history_csv(&history),
    )?;

    let best = history
        .iter()
        .map(|h| h.val_loss)
        .fold(f64::INFINITY, f64::min);
    if json {
        println!(
            "{}",
            serde_json::json!({
                "epochs_run": history.len(),
                "best_val_loss": best,
                "checkpoint": args.out,
                "history": history_path,
            })
        );
    } else {
        println!(
            "trained {} epochs, best val loss {:.4}; checkpoint at {}",
            history.len(),
            best,
            args.out.display()
        );
    }
    Ok(0)
}

// --------------------------------------------------------------- eval ----

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for per-flow prediction CSVs (model and baseline share
    /// the schema `scenario,flow_id,prediction`).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn keyed_labels(ds: &Dataset, ids: &[String], target: Target) -> Keyed {
    let mut out = Keyed::new();
    for id in ids {
        if let Some((_, rows)) = ds.scenario_by_id(id) {
            for row in rows {
                let y = match target {
                    Target::Delay => row.metrics.mean_delay_s,
                    Target::Jitter => row.metrics.jitter_s,
                    Target::Loss => row.metrics.loss_rate,
                };
                out.insert((id.clone(), row.flow_id.clone()), y);
            }
        }
    }
    out
}

fn subset(keyed: &Keyed, ids: &[String]) -> Keyed {
    keyed
        .iter()
        .filter(|((s, _), _)| ids.contains(s))
        .map(|(k, v)| (k.clone(), *v))
        .collect()
}

fn report_json(r: &MetricReport) -> serde_json::Value {
    serde_json::json!({
        "mape_percent": r.mape_percent,
        "mse": r.mse,
        "mae": r.mae,
        "count": r.count,
    })
}

pub fn run_eval(args: EvalArgs, json: bool) -> Result<u8, CliError> {
    let ds = load_dataset(&args.data).map_err(usage)?;
    let ids = match args.split.as_str() {
        "train" => &ds.splits.train,
        "val" => &ds.splits.val,
        "test" => &ds.splits.test,
        other => return Err(CliError::Usage(format!("unknown split {other:?}"))),
    };
    if ids.is_empty() {
        return Err(CliError::Usage(format!("split {:?} is empty", args.split)));
    }
    let text = std::fs::read_to_string(&args.checkpoint)?;
    let (mut model, target) = RouteNetModel::from_checkpoint(&text).map_err(usage)?;

    let labels = keyed_labels(&ds, ids, target);
    let mut model_preds = Keyed::new();
    let mut qt_preds = Keyed::new();
    for id in ids {
        let (scenario, _) = ds.scenario_by_id(id).expect("split ids are validated");
        let predictions = predict(&mut model, scenario).map_err(internal)?;
        for (fi, m) in predictions.iter().enumerate() {
            let yhat = match target {
                Target::Delay => m.mean_delay_s,
                Target::Jitter => m.jitter_s,
                Target::Loss => m.loss_rate,
            };
            model_preds.insert((id.clone(), scenario.flows[fi].id.clone()), yhat);
        }
        if target == Target::Delay {
            let qt = qt_predict(scenario).map_err(internal)?;
            for (flow, d) in &qt.flow_delays {
                qt_preds.insert((id.clone(), flow.clone()), *d);
            }
        }
    }

    let model_report = evaluate(&model_preds, &labels).map_err(internal)?;
    let qt_report = if target == Target::Delay {
        Some(evaluate(&qt_preds, &labels).map_err(internal)?)
    } else {
        None
    };

    if let Some(dir) = &args.predictions {
        std::fs::create_dir_all(dir)?;
        let dump = |keyed: &Keyed| -> String {
            let mut out = String::from("scenario,flow_id,prediction\n");
            for ((s, f), v) in keyed {
                out.push_str(&format!("{s},{f},{v}\n"));
            }
            out
        };
        std::fs::write(dir.join("model_predictions.csv"), dump(&model_preds))?;
        if target == Target::Delay {
            std::fs::write(dir.join("qt_predictions.csv"), dump(&qt_preds))?;
        }
    }

    // Per traffic model breakdown over this split.
    let mut by_traffic: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for meta in &ds.manifest.scenarios {
        if ids.contains(&meta.id) {
            let key = serde_json::to_value(meta.traffic)
                .expect("traffic kind serializes")
                .as_str()
                .expect("string tag")
                .to_string();
            by_traffic.entry(key).or_default().push(meta.id.clone());
        }
    }
    let mut per_traffic = serde_json::Map::new();
    for (kind, kind_ids) in &by_traffic {
        let sub_labels = subset(&labels, kind_ids);
        let m = evaluate(&subset(&model_preds, kind_ids), &sub_labels).map_err(internal)?;
        let mut entry = serde_json::json!({"model": report_json(&m)});
        if target == Target::Delay {
            let q = evaluate(&subset(&qt_preds, kind_ids), &sub_labels).map_err(internal)?;
            entry["qt"] = report_json(&q);
        }
        per_traffic.insert(kind.clone(), entry);
    }

    if json {
        let mut doc = serde_json::json!({
            "split": args.split,
            "target": target.as_str(),
            "model": report_json(&model_report),
            "per_traffic": per_traffic,
        });
        if let Some(q) = &qt_report {
            doc["qt"] = report_json(q);
        }
        println!("{doc}");
    } else {
        println!(
            "split {} | target {} | {} flows",
            args.split,
            target.as_str(),
            model_report.count
        );
        println!("{:<8} {:>10} {:>14} {:>14}", "", "MAPE", "MSE", "MAE");
        println!(
            "{:<8} {:>9.2}% {:>14.6e} {:>14.6e}",
            "model", model_report.mape_percent, model_report.mse, model_report.mae
        );
        if let Some(q) = &qt_report {
            println!(
                "{:<8} {:>9.2}% {:>14.6e} {:>14.6e}",
                "qt", q.mape_percent, q.mse, q.mae
            );
        }
        for (kind, entry) in &per_traffic {
            let m = entry["model"]["mape_percent"].as_f64().unwrap_or(f64::NAN);
            match entry.get("qt") {
                Some(q) => println!(
                    "  {kind}: model {:.2}% | qt {:.2}%",
                    m,
                    q["mape_percent"].as_f64().unwrap_or(f64::NAN)
                ),
                None => println!("  {kind}: model {m:.2}%"),
            }
        }
    }
    Ok(0)
}

// ----------------------------------------------------------------- wl ----

#[derive(Debug, Args)]
pub struct WlArgs {
    /// Fixture bundle (one path) or two complex JSON files.
    paths: Vec<PathBuf>,
    /// Use declared cell orders (tuple signatures) instead of multisets.
    #[arg(long)]
    ordered: bool,
    /// Neighborhoods for two-file mode, e.g. `up:1` or `down:2`
    /// (default: up:1,down:1). Fixture bundles carry their own.
    #[arg(long = "spec")]
    specs: Vec<String>,
}

fn parse_spec(s: &str) -> Result<NeighborhoodSpec, CliError> {
    let (kind, r) = s
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("spec {s:?} must look like up:1 or down:2")))?;
    let kind = match kind {
        "up" => NeighborhoodKind::IncidenceUp,
        "down" => NeighborhoodKind::IncidenceDown,
        "adj-up" => NeighborhoodKind::AdjacencyUp,
        "adj-down" => NeighborhoodKind::AdjacencyDown,
        other => {
            return Err(CliError::Usage(format!(
                "unknown neighborhood {other:?} (up|down|adj-up|adj-down)"
            )))
        }
    };
    let r: u32 = r
        .parse()
        .map_err(|_| CliError::Usage(format!("spec {s:?}: bad rank step")))?;
    Ok(NeighborhoodSpec {
        kind,
        r,
        source_rank: None,
    })
}

pub fn run_wl(args: WlArgs, json: bool) -> Result<u8, CliError> {
    let (left, right, specs) = match args.paths.len() {
        1 => {
            let text = std::fs::read_to_string(&args.paths[0])?;
            let fx: Fixture = serde_json::from_str(&text).map_err(usage)?;
            (fx.left, fx.right, fx.specs)
        }
        2 => {
            let mut specs = Vec::new();
            if args.specs.is_empty() {
                specs.push(NeighborhoodSpec::incidence_up(1));
                specs.push(NeighborhoodSpec::incidence_down(1));
            } else {
                for s in &args.specs {
                    specs.push(parse_spec(s)?);
                }
            }
            let load = |p: &PathBuf| -> Result<CombinatorialComplex, CliError> {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(usage)
            };
            (load(&args.paths[0])?, load(&args.paths[1])?, specs)
        }
        n => {
            return Err(CliError::Usage(format!(
                "expected one fixture bundle or two complex files, got {n} paths"
            )))
        }
    };

    let verdict = if args.ordered {
        ord_ccwl_refine(&left, &right, &specs, left.orders(), right.orders()).map_err(internal)?
    } else {
        ccwl_refine(&left, &right, &specs).map_err(internal)?
    };

    if json {
        println!(
            "{}",
            serde_json::json!({
                "ordered": args.ordered,
                "distinguishable": verdict.distinguishable,
                "rounds": verdict.rounds,
            })
        );
    } else {
        println!(
            "{}: {} after {} round(s)",
            if args.ordered {
                "ord-refinement"
            } else {
                "refinement"
            },
            if verdict.distinguishable {
                "distinguishable"
            } else {
                "indistinguishable"
            },
            verdict.rounds
        );
    }
    Ok(u8::from(verdict.distinguishable))
}

// --------------------------------------------------------- complexify ----

#[derive(Debug, Args)]
pub struct ComplexifyArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run_complexify(args: ComplexifyArgs, json: bool) -> Result<u8, CliError> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let scenario = NetworkScenario::from_json(&text).map_err(usage)?;
    let cx = complexify(&scenario).map_err(usage)?;
    let violations: Vec<String> = cx
        .complex
        .validate()
        .iter()
        .map(|v| v.to_string())
        .collect();
    let doc = serde_json::json!({
        "complex": cx.complex,
        "violations": violations,
        "vertex_names": cx.maps.vertex_names,
    });
    let rendered = if json {
        doc.to_string()
    } else {
        serde_json::to_string_pretty(&doc).expect("report serializes")
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => println!("{rendered}"),
    }
    Ok(0)
}

// ---------------------------------------------------------- gradcheck ----

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    seed: SeedArg,
    /// Deliberately corrupt the backward pass (negative-control hook).
    #[arg(long, hide = true)]
    corrupt_backward: bool,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

pub fn run_gradcheck(args: GradcheckArgs, json: bool) -> Result<u8, CliError> {
    let seed = args
        .seed
        .seed
        .or_else(|| std::env::var("ORDNET_SEED").ok()?.parse().ok());
    let seed = seed.unwrap_or(0);
    let corrupt = args.corrupt_backward;
    let tol = args.tol;

    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rand_vec =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    let mut results: Vec<(String, f64, bool)> = Vec::new();

    let x5 = Tensor::vector(rand_vec(5)).map_err(internal)?;
    let mut p = ParamStore::new(seed ^ 1);
    let r = grad_check_with_hook(&mut p, tol, 200, seed | 1, corrupt, |p, t| {
        let x = t.constant(x5.clone());
        let y = linear(t, p, "lin", x, 4)?;
        let sq = t.mul(y, y)?;
        Ok(t.sum(sq))
    })
    .map_err(internal)?;
    results.push(("linear".into(), r.max_rel_err, r.passed()));

    let x3 = Tensor::vector(rand_vec(3)).map_err(internal)?;
    let mut p = ParamStore::new(seed ^ 2);
    let r = grad_check_with_hook(&mut p, tol, 200, seed | 2, corrupt, |p, t| {
        let x = t.constant(x3.clone());
        let y = mlp(t, p, "m", &[6, 5, 1], Activation::Tanh, x)?;
        Ok(t.sum(y))
    })
    .map_err(internal)?;
    results.push(("mlp".into(), r.max_rel_err, r.passed()));

    let xg = Tensor::vector(rand_vec(4)).map_err(internal)?;
    let hg = Tensor::vector(rand_vec(3)).map_err(internal)?;
    let mut p = ParamStore::new(seed ^ 3);
    let r = grad_check_with_hook(&mut p, tol, 200, seed | 3, corrupt, |p, t| {
        let x = t.constant(xg.clone());
        let h = t.constant(hg.clone());
        let out = gru_step(t, p, "g", x, h)?;
        let sq = t.mul(out, out)?;
        Ok(t.sum(sq))
    })
    .map_err(internal)?;
    results.push(("gru".into(), r.max_rel_err, r.passed()));

    let cfg = GenConfig {
        count: 1,
        nodes: 5,
        flows: 4,
        ..GenConfig::default()
    };
    let scenario = ordnet::datasets::generate_scenarios(&cfg, seed)
        .map_err(internal)?
        .remove(0)
        .scenario;
    let stats = fit_stats(std::slice::from_ref(&scenario)).map_err(internal)?;
    let hyper = Hyperparams {
        dim: 6,
        iterations: 2,
        head_scale: 15.0,
    };
    let mut p = ParamStore::new(seed ^ 4);
    let r = grad_check_with_hook(&mut p, tol, 200, seed | 4, corrupt, |p, t| {
        let flatten = |e: ordnet::netmodel::NetModelError| match e {
            ordnet::netmodel::NetModelError::Tensor(t) => t,
            other => panic!("non-tensor failure in pipeline: {other}"),
        };
        let h0 = encode_features(p, &hyper, Some(&stats), t, &scenario).map_err(flatten)?;
        let mp = message_passing(p, &hyper, t, &scenario, &h0).map_err(flatten)?;
        let heads = readout(p, &hyper, t, &scenario, &mp).map_err(flatten)?;
        let mut acc = t.constant(Tensor::scalar(0.0));
        for &d in &heads.delay {
            let scaled = t.affine(d, 1e4, 0.0);
            let sq = t.mul(scaled, scaled)?;
            acc = t.add(acc, sq)?;
        }
        Ok(t.sum(acc))
    })
    .map_err(internal)?;
    results.push(("end_to_end".into(), r.max_rel_err, r.passed()));

    let all_pass = results.iter().all(|(_, _, ok)| *ok);
    if json {
        let doc: Vec<serde_json::Value> = results
            .iter()
            .map(|(name, err, ok)| {
                serde_json::json!({"component": name, "max_rel_err": err, "pass": ok})
            })
            .collect();
        println!(
            "{}",
            serde_json::json!({"tol": tol, "components": doc, "pass": all_pass})
        );
    } else {
        for (name, err, ok) in &results {
            println!(
                "{name:<12} max rel err {err:.3e}  {}",
                if *ok { "pass" } else { "FAIL" }
            );
        }
        println!("overall: {}", if all_pass { "pass" } else { "FAIL" });
    }
    if all_pass {
        Ok(0)
    } else {
        Err(CliError::Internal(format!(
            "gradient check failed at tolerance {tol}"
        )))
    }
}
