//! Central finite-difference verification of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, TensorError, ValueId};

const FD_STEP: f64 = 1e-5;

/// Result of one gradient check run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter name, coordinate) realizing the maximum.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    // Coordinates the loss genuinely does not depend on show up as a pair of
    // near-zeros; treat those as exact.
    if m < 1e-6 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Compares tape gradients against central differences with step 1e-5 on a
/// seeded random subsample of at most `max_coords` parameter coordinates.
/// `model_fn` must be a deterministic function of the store contents.
pub fn grad_check<F>(
    params: &mut ParamStore,
    tol: f64,
    max_coords: usize,
    seed: u64,
    model_fn: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut ParamStore, &mut Tape) -> Result<ValueId, TensorError>,
{
    grad_check_with_hook(params, tol, max_coords, seed, false, model_fn)
}

/// As [`grad_check`], with an optional corruption hook that perturbs the
/// analytic gradients before comparison. The hook exists as a negative
/// control: a corrupted backward pass must fail the check.
pub fn grad_check_with_hook<F>(
    params: &mut ParamStore,
    tol: f64,
    max_coords: usize,
    seed: u64,
    corrupt_backward: bool,
    mut model_fn: F,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut ParamStore, &mut Tape) -> Result<ValueId, TensorError>,
{
    let mut tape = Tape::new();
    let loss_id = model_fn(params, &mut tape)?;
    let loss0 = tape.value(loss_id).item()?;
    if !loss0.is_finite() {
        return Err(TensorError::NonFinite("grad_check loss"));
    }
    let grads = tape.backward(loss_id)?;

    let mut coords: Vec<(String, usize)> = Vec::new();
    for name in params.names() {
        let n = params.get(name).expect("listed name exists").len();
        for i in 0..n {
            coords.push((name.to_string(), i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_coords);
    coords.sort();

    let mut max_rel = 0.0f64;
    let mut worst = None;
    for (k, (name, i)) in coords.iter().enumerate() {
        let x0 = params.get_coord(name, *i)?;

        params.set_coord(name, *i, x0 + FD_STEP)?;
        let mut t_plus = Tape::new();
        let plus_id = model_fn(params, &mut t_plus)?;
        let l_plus = t_plus.value(plus_id).item()?;

        params.set_coord(name, *i, x0 - FD_STEP)?;
        let mut t_minus = Tape::new();
        let minus_id = model_fn(params, &mut t_minus)?;
        let l_minus = t_minus.value(minus_id).item()?;

        params.set_coord(name, *i, x0)?;
        if !l_plus.is_finite() || !l_minus.is_finite() {
            return Err(TensorError::NonFinite("grad_check finite differences"));
        }

        let fd = (l_plus - l_minus) / (2.0 * FD_STEP);
        let mut analytic = grads.get(name).map(|g| g.data()[*i]).unwrap_or(0.0);
        if corrupt_backward && k == 0 {
            analytic = analytic * 1.5 + 0.01;
        }
        let e = rel_err(analytic, fd);
        if e > max_rel {
            max_rel = e;
            worst = Some((name.clone(), *i));
        }
    }

    Ok(GradCheckReport {
        max_rel_err: max_rel,
        worst,
        coords_checked: coords.len(),
        tol,
    })
}
