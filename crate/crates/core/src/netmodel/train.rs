//! Training: per-scenario Adam steps on a relative-error loss (binary
//! cross-entropy for the loss-rate head), early stopping on the validation
//! metric, and checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensornn::{ParamStore, Tape, ValueId};

use super::model::{encode_features, fit_stats, message_passing, readout, Hyperparams, NormStats};
use super::{FlowMetrics, NetModelError, NetworkScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Delay,
    Jitter,
    Loss,
}

impl Target {
    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Delay => "delay",
            Target::Jitter => "jitter",
            Target::Loss => "loss",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delay" => Ok(Target::Delay),
            "jitter" => Ok(Target::Jitter),
            "loss" => Ok(Target::Loss),
            other => Err(format!("unknown target {other:?} (delay|jitter|loss)")),
        }
    }
}

/// A scenario with simulator ground truth, labels aligned by flow index.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub scenario: NetworkScenario,
    pub labels: Vec<FlowMetrics>,
}

/// Model parameters plus the frozen pieces needed to reproduce inference.
#[derive(Debug, Clone)]
pub struct RouteNetModel {
    pub params: ParamStore,
    pub hyper: Hyperparams,
    pub stats: Option<NormStats>,
}

impl RouteNetModel {
    pub fn new(seed: u64, hyper: Hyperparams) -> Self {
        RouteNetModel {
            params: ParamStore::new(seed),
            hyper,
            stats: None,
        }
    }

    /// Serializes to the checkpoint JSON with the normalization statistics
    /// and hyperparameters in the metadata.
    pub fn checkpoint(&self, target: Target) -> String {
        let meta = serde_json::json!({
            "seed": self.params.seed(),
            "dims": {"dim": self.hyper.dim, "iterations": self.hyper.iterations},
            "head_scale": self.hyper.head_scale,
            "stats": self.stats,
            "target": target,
        });
        self.params.to_checkpoint(meta)
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, Target), NetModelError> {
        let (params, meta) = ParamStore::from_checkpoint(text)
            .map_err(|e| NetModelError::BadCheckpoint(e.to_string()))?;
        let hyper = Hyperparams {
            dim: meta["dims"]["dim"]
                .as_u64()
                .ok_or_else(|| NetModelError::BadCheckpoint("missing dims.dim".into()))?
                as usize,
            iterations: meta["dims"]["iterations"]
                .as_u64()
                .ok_or_else(|| NetModelError::BadCheckpoint("missing dims.iterations".into()))?
                as usize,
            head_scale: meta["head_scale"]
                .as_f64()
                .ok_or_else(|| NetModelError::BadCheckpoint("missing head_scale".into()))?,
        };
        let stats: Option<NormStats> = serde_json::from_value(meta["stats"].clone())
            .map_err(|e| NetModelError::BadCheckpoint(format!("stats: {e}")))?;
        let target: Target = serde_json::from_value(meta["target"].clone())
            .map_err(|e| NetModelError::BadCheckpoint(format!("target: {e}")))?;
        Ok((
            RouteNetModel {
                params,
                hyper,
                stats,
            },
            target,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub target: Target,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            target: Target::Delay,
            epochs: 200,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 20,
            seed: 0,
        }
    }
}

/// One line of training history. The loss is mean |pred/label - 1| for
/// delay and jitter (MAPE as a fraction) and binary cross-entropy for the
/// loss-rate target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    out
}

fn scenario_loss(
    params: &mut ParamStore,
    hyper: &Hyperparams,
    stats: &NormStats,
    tape: &mut Tape,
    sample: &LabeledScenario,
    target: Target,
) -> Result<ValueId, NetModelError> {
    let s = &sample.scenario;
    let h0 = encode_features(params, hyper, Some(stats), tape, s)?;
    let mp = message_passing(params, hyper, tape, s, &h0)?;
    let heads = readout(params, hyper, tape, s, &mp)?;

    let mut terms: Vec<ValueId> = Vec::with_capacity(s.flows.len());
    match target {
        Target::Delay | Target::Jitter => {
            for (fi, f) in s.flows.iter().enumerate() {
                let (pred, y) = match target {
                    Target::Delay => (heads.delay[fi], sample.labels[fi].mean_delay_s),
                    _ => (heads.jitter[fi], sample.labels[fi].jitter_s),
                };
                if y.is_nan() || y <= 0.0 {
                    if target == Target::Delay {
                        return Err(NetModelError::NonPositiveLabel(f.id.clone()));
                    }
                    // Jitter can legitimately be zero; such flows carry no
                    // relative-error signal and are skipped.
                    continue;
                }
                let rel = tape.affine(pred, 1.0 / y, -1.0);
                terms.push(tape.abs(rel));
            }
            if terms.is_empty() {
                return Err(NetModelError::NonPositiveLabel(format!(
                    "all {} labels are zero in scenario",
                    target.as_str()
                )));
            }
        }
        Target::Loss => {
            for (fi, _) in s.flows.iter().enumerate() {
                let y = sample.labels[fi].loss_rate.clamp(0.0, 1.0);
                let p = heads.loss[fi];
                let ln_p = tape.ln(p);
                let one_minus_p = tape.affine(p, -1.0, 1.0);
                let ln_q = tape.ln(one_minus_p);
                let a = tape.affine(ln_p, -y, 0.0);
                let b = tape.affine(ln_q, -(1.0 - y), 0.0);
                terms.push(tape.add(a, b)?);
            }
        }
    }
    let cat = tape.concat(&terms);
    Ok(tape.mean(cat))
}

fn mean_loss_frozen(
    model: &mut RouteNetModel,
    set: &[LabeledScenario],
    target: Target,
) -> Result<f64, NetModelError> {
    let stats = model.stats.clone().ok_or(NetModelError::UnfittedStats)?;
    let mut total = 0.0;
    for sample in set {
        let mut tape = Tape::new();
        let loss = scenario_loss(
            &mut model.params,
            &model.hyper,
            &stats,
            &mut tape,
            sample,
            target,
        )?;
        total += tape.value(loss).item()?;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Trains with one Adam step per scenario, epoch order reshuffled from the
/// seed, and early stopping (with best-parameter restore) on the validation
/// loss. Normalization statistics are fitted on the training split if not
/// already present.
pub fn train(
    model: &mut RouteNetModel,
    train_set: &[LabeledScenario],
    val_set: &[LabeledScenario],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, NetModelError> {
    if model.stats.is_none() {
        let scenarios: Vec<NetworkScenario> =
            train_set.iter().map(|s| s.scenario.clone()).collect();
        model.stats = Some(fit_stats(&scenarios)?);
    }
    let stats = model.stats.clone().expect("fitted above");

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<ParamStore> = None;
    let mut since_best = 0usize;
    let mut lr = config.lr;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for &i in &order {
            let mut tape = Tape::new();
            let loss = scenario_loss(
                &mut model.params,
                &model.hyper,
                &stats,
                &mut tape,
                &train_set[i],
                config.target,
            )?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(NetModelError::Divergence(epoch));
            }
            epoch_loss += value;
            let grads = tape.backward(loss)?;
            model
                .params
                .adam_step(&grads, lr, config.beta1, config.beta2, config.eps);
        }
        let train_loss = epoch_loss / train_set.len().max(1) as f64;

        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss_frozen(model, val_set, config.target)?
        };
        if !val_loss.is_finite() {
            return Err(NetModelError::Divergence(epoch));
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = Some(model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            // The relative-error loss has no curvature near its optimum, so
            // Adam hovers at the learning-rate scale; halve it when the
            // validation loss stalls for half the patience window.
            if since_best == config.patience.div_ceil(2) {
                lr *= 0.5;
            }
            if since_best >= config.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(history)
}

/// Full-pipeline inference: per-flow (delay, jitter, loss) predictions.
pub fn predict(
    model: &mut RouteNetModel,
    scenario: &NetworkScenario,
) -> Result<Vec<FlowMetrics>, NetModelError> {
    let stats = model.stats.clone().ok_or(NetModelError::UnfittedStats)?;
    let mut tape = Tape::new();
    let h0 = encode_features(
        &mut model.params,
        &model.hyper,
        Some(&stats),
        &mut tape,
        scenario,
    )?;
    let mp = message_passing(&mut model.params, &model.hyper, &mut tape, scenario, &h0)?;
    let heads = readout(&mut model.params, &model.hyper, &mut tape, scenario, &mp)?;
    (0..scenario.flows.len())
        .map(|fi| {
            Ok(FlowMetrics {
                mean_delay_s: tape.value(heads.delay[fi]).item()?,
                jitter_s: tape.value(heads.jitter[fi]).item()?,
                loss_rate: tape.value(heads.loss[fi]).item()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::scenario::testutil::line_scenario;
    use crate::netsim::simulate;

    fn labeled(n_flows: usize, rate: f64, seed: u64) -> LabeledScenario {
        let scenario = line_scenario(n_flows, rate);
        let res = simulate(&scenario, seed, 30.0, 3.0).unwrap();
        let labels = res.flows.iter().map(|f| f.metrics).collect();
        LabeledScenario { scenario, labels }
    }

    fn small_config(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr,
            patience: epochs,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let data = vec![labeled(2, 2e5, 1)];
        let hyper = Hyperparams {
            dim: 6,
            iterations: 2,
            head_scale: 15.0,
        };
        let mut model = RouteNetModel::new(3, hyper);
        let history = train(&mut model, &data, &[], &small_config(5, 0.0)).unwrap();
        assert_eq!(history.len(), 5);
        for h in &history {
            assert_eq!(h.train_loss, history[0].train_loss);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = vec![labeled(2, 2e5, 1), labeled(3, 1.5e5, 2)];
        let run = || {
            let hyper = Hyperparams {
                dim: 6,
                iterations: 2,
                head_scale: 15.0,
            };
            let mut model = RouteNetModel::new(3, hyper);
            let history = train(&mut model, &data, &[], &small_config(8, 1e-3)).unwrap();
            (history, model.checkpoint(Target::Delay))
        };
        let (ha, ca) = run();
        let (hb, cb) = run();
        assert_eq!(ha, hb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn overfits_a_single_scenario_to_five_percent() {
        let data = vec![labeled(3, 3e5, 5)];
        let hyper = Hyperparams {
            dim: 8,
            iterations: 3,
            head_scale: 15.0,
        };
        let mut model = RouteNetModel::new(11, hyper);
        let config = small_config(500, 5e-3);
        let history = train(&mut model, &data, &[], &config).unwrap();
        let best = history
            .iter()
            .map(|h| h.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(
            best <= 0.05,
            "memorization failed: best train MAPE {:.2}% after {} epochs",
            best * 100.0,
            history.len()
        );
    }

    #[test]
    fn nonpositive_delay_label_is_rejected() {
        let mut data = labeled(1, 2e5, 1);
        data.labels[0].mean_delay_s = 0.0;
        let hyper = Hyperparams {
            dim: 4,
            iterations: 1,
            head_scale: 15.0,
        };
        let mut model = RouteNetModel::new(3, hyper);
        let err = train(&mut model, &[data], &[], &small_config(1, 1e-3)).unwrap_err();
        assert!(matches!(err, NetModelError::NonPositiveLabel(_)));
    }

    #[test]
    fn checkpoint_round_trips_with_stats() {
        let data = vec![labeled(2, 2e5, 1)];
        let hyper = Hyperparams {
            dim: 4,
            iterations: 1,
            head_scale: 15.0,
        };
        let mut model = RouteNetModel::new(3, hyper);
        let _ = train(&mut model, &data, &[], &small_config(2, 1e-3)).unwrap();
        let text = model.checkpoint(Target::Delay);
        let (mut loaded, target) = RouteNetModel::from_checkpoint(&text).unwrap();
        assert_eq!(target, Target::Delay);
        assert_eq!(loaded.hyper, model.hyper);
        assert_eq!(loaded.stats, model.stats);
        let a = predict(&mut loaded, &data[0].scenario).unwrap();
        let b = predict(&mut model, &data[0].scenario).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictions_are_physical() {
        let data = vec![labeled(2, 2e5, 1)];
        let hyper = Hyperparams {
            dim: 6,
            iterations: 2,
            head_scale: 15.0,
        };
        let mut model = RouteNetModel::new(3, hyper);
        let _ = train(&mut model, &data, &[], &small_config(3, 1e-3)).unwrap();
        for m in predict(&mut model, &data[0].scenario).unwrap() {
            assert!(m.mean_delay_s > 0.0);
            assert!(m.jitter_s >= 0.0);
            assert!(m.loss_rate > 0.0 && m.loss_rate < 1.0);
        }
    }

    #[test]
    fn jitter_and_loss_targets_train() {
        // Congested enough that jitter labels are positive and the
        // loss-rate target mixes zero and nonzero labels.
        let mut sample = labeled(3, 4e5, 13);
        sample.labels[0].loss_rate = 0.02;
        let hyper = Hyperparams {
            dim: 4,
            iterations: 1,
            head_scale: 15.0,
        };
        for target in [Target::Jitter, Target::Loss] {
            let mut model = RouteNetModel::new(5, hyper);
            let config = TrainConfig {
                target,
                ..small_config(3, 1e-3)
            };
            let history = train(&mut model, &[sample.clone()], &[], &config).unwrap();
            assert_eq!(history.len(), 3);
            assert!(history.iter().all(|h| h.train_loss.is_finite()));
            // Cross-entropy decreases from the untrained 0.5-probability
            // starting point within a few steps.
            if target == Target::Loss {
                assert!(history[2].train_loss < history[0].train_loss);
            }
        }
    }
}
