//! Finite-difference verification of tape gradients.

use crate::scalar::{real, Real};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig<T> {
    /// Central-difference step.
    pub step: T,
    /// Relative tolerance.
    pub rel_tol: T,
    /// Absolute floor below which differences are ignored.
    pub abs_floor: T,
}

impl<T: Real> Default for GradCheckConfig<T> {
    fn default() -> Self {
        GradCheckConfig {
            step: real(1e-5),
            rel_tol: real(1e-4),
            abs_floor: real(1e-8),
        }
    }
}

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    /// Per-parameter maximum normalized deviation
    /// `|fd - analytic| / (abs_floor + rel_tol * max(|fd|, |analytic|))`;
    /// values at or below one pass.
    pub per_param: Vec<T>,
    pub max_deviation: T,
    pub pass: bool,
}

/// Compares tape gradients against central finite differences.
///
/// `build` must deterministically construct the loss from the parameter vars
/// it is handed (dropout disabled); it is re-invoked for every perturbed
/// evaluation. A zero-parameter closure passes vacuously.
pub fn grad_check<T: Real>(
    params: &[Tensor<T>],
    mut build: impl FnMut(&mut Tape<T>, &[Var]) -> Result<Var, NumericsError>,
    cfg: GradCheckConfig<T>,
) -> Result<GradCheckReport<T>, NumericsError> {
    // Analytic gradients from one taped evaluation.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).item().is_finite() {
        return Err(NumericsError::NonFiniteLoss);
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let eval = |ps: &[Tensor<T>], build: &mut dyn FnMut(&mut Tape<T>, &[Var]) -> Result<Var, NumericsError>|
     -> Result<T, NumericsError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(NumericsError::NonFiniteLoss);
        }
        Ok(value)
    };

    let mut perturbed: Vec<Tensor<T>> = params.to_vec();
    let two_h = cfg.step + cfg.step;
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_dev = T::zero();
    for (pi, p) in params.iter().enumerate() {
        let mut worst = T::zero();
        for ei in 0..p.numel() {
            let orig = p.values()[ei];
            perturbed[pi].values_mut()[ei] = orig + cfg.step;
            let up = eval(&perturbed, &mut build)?;
            perturbed[pi].values_mut()[ei] = orig - cfg.step;
            let down = eval(&perturbed, &mut build)?;
            perturbed[pi].values_mut()[ei] = orig;

            let fd = (up - down) / two_h;
            let an = analytic[pi].values()[ei];
            let scale = cfg.abs_floor + cfg.rel_tol * fd.abs().max(an.abs());
            let dev = (fd - an).abs() / scale;
            if dev > worst {
                worst = dev;
            }
        }
        if worst > max_dev {
            max_dev = worst;
        }
        per_param.push(worst);
    }

    Ok(GradCheckReport {
        per_param,
        max_deviation: max_dev,
        pass: max_dev <= T::one(),
    })
}
