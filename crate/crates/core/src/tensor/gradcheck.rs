//! Central finite differences as an independent check on [`GradientTape`].

use super::params::ModelParams;
use super::rng::RngStream;
use super::tape::{GradientTape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const MIN_COORDINATES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Block name, flat index, analytic and numeric derivative at the worst
    /// coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Max relative error between tape gradients and central differences over a
/// sample of at least [`MIN_COORDINATES`] coordinates (all of them if fewer).
pub fn finite_diff_check<F>(loss_fn: F, params: &ModelParams, step: f64) -> Result<f64>
where
    F: Fn(&mut GradientTape, &ModelParams) -> Result<Var>,
{
    Ok(finite_diff_report(loss_fn, params, step, MIN_COORDINATES, 0)?.max_rel_error)
}

pub fn finite_diff_report<F>(
    loss_fn: F,
    params: &ModelParams,
    step: f64,
    min_coordinates: usize,
    sample_seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut GradientTape, &ModelParams) -> Result<Var>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    let mut tape = GradientTape::new();
    let loss = loss_fn(&mut tape, params)?;
    if !tape.scalar(loss)?.is_finite() {
        return Err(Error::NonFinite("finite_diff_check"));
    }
    let grads = tape.backward(loss)?;

    let mut coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    if coords.len() > min_coordinates {
        RngStream::new(sample_seed, 0x6772_6164).shuffle(&mut coords);
        coords.truncate(min_coordinates);
    }

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut t = GradientTape::new();
        let l = loss_fn(&mut t, p)?;
        let v = t.scalar(l)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite_diff_check"))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: coords.len(),
        worst: None,
    };
    let mut probe = params.clone();
    for (name, i) in coords {
        let orig = params.get(&name)?.data()[i];
        let set = |p: &mut ModelParams, v: f64| {
            p.get_mut(&name).expect("block exists").data_mut()[i] = v;
        };
        let (hi, lo) = (orig + step, orig - step);
        set(&mut probe, hi);
        let up = eval(&probe)?;
        set(&mut probe, lo);
        let down = eval(&probe)?;
        set(&mut probe, orig);

        // Divide by the step actually taken after rounding.
        let numeric = (up - down) / (hi - lo);
        let analytic = grads.get(&name).map_or(0.0, |g| g.data()[i]);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((name, i, analytic, numeric));
        }
    }
    Ok(report)
}
