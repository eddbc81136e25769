//! Packet inter-arrival models.
//!
//! Five generators: memoryless Poisson, fixed-spacing deterministic, an
//! interrupted-Poisson on/off process, exponential gaps driven through a
//! Gaussian AR(1) copula (tunable lag-1 autocorrelation with exact
//! exponential marginals), and a modulated variant whose rate cycles
//! through a level schedule.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum TrafficModel {
    Poisson {
        rate_pps: f64,
    },
    Deterministic {
        rate_pps: f64,
    },
    /// Exponential gaps at `rate_pps` during ON periods (mean length
    /// `mean_on_s`), silence during OFF periods (mean `mean_off_s`); both
    /// period lengths are exponential.
    OnOff {
        rate_pps: f64,
        mean_on_s: f64,
        mean_off_s: f64,
    },
    /// Exponential marginals with lag-1 autocorrelation controlled by the
    /// AR coefficient `rho`.
    AutocorrExp {
        rate_pps: f64,
        rho: f64,
    },
    /// Autocorrelated exponentials whose rate is multiplied by the current
    /// entry of `levels`, advancing every `period_s` seconds.
    ModulatedExp {
        rate_pps: f64,
        rho: f64,
        levels: Vec<f64>,
        period_s: f64,
    },
}

impl TrafficModel {
    /// Long-run average packet rate, accounting for duty cycles and
    /// modulation levels.
    pub fn mean_rate_pps(&self) -> f64 {
        match self {
            TrafficModel::Poisson { rate_pps }
            | TrafficModel::Deterministic { rate_pps }
            | TrafficModel::AutocorrExp { rate_pps, .. } => *rate_pps,
            TrafficModel::OnOff {
                rate_pps,
                mean_on_s,
                mean_off_s,
            } => rate_pps * mean_on_s / (mean_on_s + mean_off_s),
            TrafficModel::ModulatedExp {
                rate_pps, levels, ..
            } => rate_pps * levels.iter().sum::<f64>() / levels.len() as f64,
        }
    }

    /// Scales the base packet rate in place; relative structure (duty cycle,
    /// autocorrelation, level multipliers) is preserved.
    pub fn scale_rate(&mut self, factor: f64) {
        match self {
            TrafficModel::Poisson { rate_pps }
            | TrafficModel::Deterministic { rate_pps }
            | TrafficModel::AutocorrExp { rate_pps, .. }
            | TrafficModel::ModulatedExp { rate_pps, .. }
            | TrafficModel::OnOff { rate_pps, .. } => *rate_pps *= factor,
        }
    }

    /// Parameter sanity: positive rates and durations, |rho| < 1, nonempty
    /// positive levels.
    pub fn check(&self) -> Result<(), String> {
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be positive, got {x}"))
            }
        };
        match self {
            TrafficModel::Poisson { rate_pps } | TrafficModel::Deterministic { rate_pps } => {
                positive(*rate_pps, "rate_pps")
            }
            TrafficModel::OnOff {
                rate_pps,
                mean_on_s,
                mean_off_s,
            } => {
                positive(*rate_pps, "rate_pps")?;
                positive(*mean_on_s, "mean_on_s")?;
                positive(*mean_off_s, "mean_off_s")
            }
            TrafficModel::AutocorrExp { rate_pps, rho } => {
                positive(*rate_pps, "rate_pps")?;
                if rho.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(format!("|rho| must be < 1, got {rho}"))
                }
            }
            TrafficModel::ModulatedExp {
                rate_pps,
                rho,
                levels,
                period_s,
            } => {
                positive(*rate_pps, "rate_pps")?;
                positive(*period_s, "period_s")?;
                if rho.abs() >= 1.0 {
                    return Err(format!("|rho| must be < 1, got {rho}"));
                }
                if levels.is_empty() {
                    return Err("levels must be nonempty".into());
                }
                for &l in levels {
                    positive(l, "level")?;
                }
                Ok(())
            }
        }
    }
}

/// Streaming gap generator carrying the model's internal state (remaining
/// ON time, AR(1) chain value, elapsed modulation time).
pub struct ArrivalProcess {
    model: TrafficModel,
    remaining_on: f64,
    ar_state: f64,
    ar_started: bool,
    elapsed: f64,
}

impl ArrivalProcess {
    pub fn new(model: TrafficModel) -> Result<Self, SimError> {
        model.check().map_err(SimError::BadParams)?;
        Ok(ArrivalProcess {
            model,
            remaining_on: 0.0,
            ar_state: 0.0,
            ar_started: false,
            elapsed: 0.0,
        })
    }

    /// Next inter-arrival gap in seconds.
    pub fn next_gap(&mut self, rng: &mut impl Rng) -> f64 {
        let gap = match self.model.clone() {
            TrafficModel::Poisson { rate_pps } => {
                Exp::new(rate_pps).expect("validated rate").sample(rng)
            }
            TrafficModel::Deterministic { rate_pps } => 1.0 / rate_pps,
            TrafficModel::OnOff {
                rate_pps,
                mean_on_s,
                mean_off_s,
            } => {
                let on = Exp::new(1.0 / mean_on_s).expect("validated mean");
                let off = Exp::new(1.0 / mean_off_s).expect("validated mean");
                let within = Exp::new(rate_pps).expect("validated rate");
                if self.remaining_on <= 0.0 {
                    self.remaining_on = on.sample(rng);
                }
                let mut gap = 0.0;
                loop {
                    let e = within.sample(rng);
                    if e <= self.remaining_on {
                        self.remaining_on -= e;
                        break gap + e;
                    }
                    // ON period expires before the next packet; spend the
                    // rest of it, sit out an OFF period, and continue (the
                    // exponential clock is memoryless).
                    gap += self.remaining_on + off.sample(rng);
                    self.remaining_on = on.sample(rng);
                }
            }
            TrafficModel::AutocorrExp { rate_pps, rho } => self.ar_exponential(rng, rate_pps, rho),
            TrafficModel::ModulatedExp {
                rate_pps,
                rho,
                levels,
                period_s,
            } => {
                let slot = (self.elapsed / period_s) as usize % levels.len();
                let rate = rate_pps * levels[slot];
                self.ar_exponential(rng, rate, rho)
            }
        };
        self.elapsed += gap;
        gap
    }

    /// AR(1) standard normals pushed through the normal CDF and the
    /// exponential quantile: marginals stay Exp(rate) for any |rho| < 1.
    fn ar_exponential(&mut self, rng: &mut impl Rng, rate: f64, rho: f64) -> f64 {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let eps: f64 = {
            // Box-Muller free: sample via inverse CDF of a uniform keeps a
            // single rng draw per gap for the innovation.
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            std_normal.inverse_cdf(u)
        };
        if !self.ar_started {
            self.ar_state = eps;
            self.ar_started = true;
        } else {
            self.ar_state = rho * self.ar_state + (1.0 - rho * rho).sqrt() * eps;
        }
        let u = std_normal.cdf(self.ar_state).clamp(1e-12, 1.0 - 1e-12);
        -(-u).ln_1p() / rate
    }
}

/// Draws `n` inter-arrival gaps from a fresh process.
pub fn sample_interarrivals(
    model: &TrafficModel,
    rng: &mut impl Rng,
    n: usize,
) -> Result<Vec<f64>, SimError> {
    if n == 0 {
        return Err(SimError::BadParams("need at least one sample".into()));
    }
    let mut proc = ArrivalProcess::new(model.clone())?;
    Ok((0..n).map(|_| proc.next_gap(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    fn lag1_autocorr(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let cov = xs
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1.0);
        cov / var
    }

    #[test]
    fn deterministic_gaps_are_constant() {
        let model = TrafficModel::Deterministic { rate_pps: 100.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gaps = sample_interarrivals(&model, &mut rng, 50).unwrap();
        assert!(gaps.iter().all(|&g| (g - 0.01).abs() < 1e-15));
    }

    #[test]
    fn poisson_mean_matches_rate() {
        let lambda = 250.0;
        let model = TrafficModel::Poisson { rate_pps: lambda };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gaps = sample_interarrivals(&model, &mut rng, 100_000).unwrap();
        let (mean, se) = mean_and_se(&gaps);
        assert!(
            (mean - 1.0 / lambda).abs() <= 3.0 * se,
            "mean {mean}, expected {} within {}",
            1.0 / lambda,
            3.0 * se
        );
    }

    #[test]
    fn autocorr_with_zero_rho_is_iid_exponential() {
        let lambda = 100.0;
        let model = TrafficModel::AutocorrExp {
            rate_pps: lambda,
            rho: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gaps = sample_interarrivals(&model, &mut rng, 100_000).unwrap();
        let (mean, se) = mean_and_se(&gaps);
        assert!((mean - 0.01).abs() <= 3.0 * se, "mean {mean} se {se}");
        let r1 = lag1_autocorr(&gaps);
        let se_r = 1.0 / (gaps.len() as f64).sqrt();
        assert!(
            r1.abs() <= 3.0 * se_r,
            "lag-1 autocorr {r1} exceeds 3 SE {se_r}"
        );
    }

    #[test]
    fn autocorr_with_positive_rho_correlates_gaps() {
        let model = TrafficModel::AutocorrExp {
            rate_pps: 100.0,
            rho: 0.8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gaps = sample_interarrivals(&model, &mut rng, 50_000).unwrap();
        assert!(
            lag1_autocorr(&gaps) > 0.3,
            "expected visible autocorrelation"
        );
    }

    #[test]
    fn onoff_mean_rate_includes_off_time() {
        let model = TrafficModel::OnOff {
            rate_pps: 200.0,
            mean_on_s: 0.5,
            mean_off_s: 0.5,
        };
        assert_eq!(model.mean_rate_pps(), 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gaps = sample_interarrivals(&model, &mut rng, 100_000).unwrap();
        let (mean, se) = mean_and_se(&gaps);
        assert!(
            (mean - 0.01).abs() <= 4.0 * se,
            "on/off mean gap {mean} (se {se}) should be ~1/mean_rate"
        );
    }

    #[test]
    fn modulated_levels_change_throughput() {
        let model = TrafficModel::ModulatedExp {
            rate_pps: 100.0,
            rho: 0.0,
            levels: vec![0.5, 2.0],
            period_s: 1.0,
        };
        assert_eq!(model.mean_rate_pps(), 125.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gaps = sample_interarrivals(&model, &mut rng, 20_000).unwrap();
        assert!(gaps.iter().all(|g| g.is_finite() && *g > 0.0));
    }

    #[test]
    fn bad_params_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for model in [
            TrafficModel::Poisson { rate_pps: 0.0 },
            TrafficModel::AutocorrExp {
                rate_pps: 10.0,
                rho: 1.0,
            },
            TrafficModel::OnOff {
                rate_pps: 10.0,
                mean_on_s: -1.0,
                mean_off_s: 1.0,
            },
            TrafficModel::ModulatedExp {
                rate_pps: 10.0,
                rho: 0.0,
                levels: vec![],
                period_s: 1.0,
            },
        ] {
            assert!(
                sample_interarrivals(&model, &mut rng, 5).is_err(),
                "{model:?}"
            );
        }
        assert!(
            sample_interarrivals(&TrafficModel::Poisson { rate_pps: 10.0 }, &mut rng, 0).is_err()
        );
    }
}
