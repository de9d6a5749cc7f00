//! Adam optimizer and the cosine-annealing learning-rate schedule.

use crate::scalar::{real, Real};

use super::tensor::Tensor;
use super::NumericsError;

/// Per-parameter Adam moment accumulators.
///
/// Updates are lazy per entry: an entry whose gradient is exactly zero is
/// skipped entirely (no moment decay, no parameter change), so sparse
/// gradients such as embedding rows leave untouched entries unchanged.
#[derive(Clone)]
pub struct AdamState<T> {
    beta1: T,
    beta2: T,
    epsilon: T,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Moment buffers shaped after the given parameters; β1=0.9, β2=0.999,
    /// ε=1e-8.
    pub fn new(params: &[&Tensor<T>]) -> Self {
        AdamState {
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Restore previously serialized state.
    pub fn restore(first: Vec<Tensor<T>>, second: Vec<Tensor<T>>, step: u64) -> Self {
        AdamState {
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-8),
            step,
            first,
            second,
        }
    }

    /// One bias-corrected Adam step over all parameters. `grads[i] == None`
    /// skips parameter `i` wholesale.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
        lr: T,
    ) -> Result<(), NumericsError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                details: format!(
                    "{} parameters, {} gradients, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(grad) = grads[i] else { continue };
            if grad.shape() != param.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step",
                    details: format!("parameter {} vs gradient {}", param.shape(), grad.shape()),
                });
            }
            let m = self.first[i].values_mut();
            let v = self.second[i].values_mut();
            for (((p, g), m), v) in param
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                if *g == T::zero() {
                    continue;
                }
                *m = self.beta1 * *m + (T::one() - self.beta1) * *g;
                *v = self.beta2 * *v + (T::one() - self.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Cosine-annealing learning-rate schedule over a fixed number of epochs.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule<T> {
    pub base_lr: T,
    pub min_lr: T,
    pub t_max: usize,
}

impl<T: Real> LrSchedule<T> {
    pub fn new(base_lr: T, t_max: usize) -> Self {
        LrSchedule {
            base_lr,
            min_lr: T::zero(),
            t_max,
        }
    }

    /// `lr = min + 0.5 (base - min) (1 + cos(pi * epoch / t_max))`.
    pub fn lr(&self, epoch: usize) -> Result<T, NumericsError> {
        cosine_lr(epoch, self.base_lr, self.min_lr, self.t_max)
    }
}

/// Cosine-annealed learning rate at `epoch` in `[0, t_max]`.
pub fn cosine_lr<T: Real>(
    epoch: usize,
    base_lr: T,
    min_lr: T,
    t_max: usize,
) -> Result<T, NumericsError> {
    if epoch > t_max {
        return Err(NumericsError::EpochOutOfRange { epoch, t_max });
    }
    let phase = real::<T>(std::f64::consts::PI) * real::<T>(epoch as f64) / real::<T>(t_max as f64);
    Ok(min_lr + real::<T>(0.5) * (base_lr - min_lr) * (T::one() + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Shape;

    #[test]
    fn lr_endpoints_and_midpoint() {
        let sched = LrSchedule::new(0.001f64, 2000);
        assert_eq!(sched.lr(0).unwrap(), 0.001);
        assert!(sched.lr(2000).unwrap().abs() < 1e-18);
        assert!((sched.lr(1000).unwrap() - 0.0005).abs() < 1e-12);
        assert!(sched.lr(2001).is_err());
    }

    #[test]
    fn zero_gradient_is_a_noop_for_any_state() {
        let mut p = Tensor::vector(vec![1.0f64, -2.0]);
        let g1 = Tensor::vector(vec![0.5, 0.25]);
        let zero = Tensor::vector(vec![0.0, 0.0]);
        let mut state = AdamState::new(&[&p]);
        // Build up nonzero moments first.
        state.step(&mut [&mut p], &[Some(&g1)], 0.01).unwrap();
        let after_real_step = p.clone();
        state.step(&mut [&mut p], &[Some(&zero)], 0.01).unwrap();
        assert_eq!(p, after_real_step);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn first_step_matches_bias_corrected_formula() {
        // Scalar gradient 2.0, lr 1e-3: delta = -lr * 2 / (2 + eps).
        let mut p = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(2.0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], &[Some(&g)], 1e-3).unwrap();
        let expected = -1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15, "{} vs {}", p.item(), expected);
    }

    #[test]
    fn repeated_steps_accumulate_moments() {
        let mut p = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(1.0);
        let mut state = AdamState::new(&[&p]);
        state.step(&mut [&mut p], &[Some(&g)], 1e-3).unwrap();
        let d1 = p.item();
        state.step(&mut [&mut p], &[Some(&g)], 1e-3).unwrap();
        let d2 = p.item() - d1;
        assert_ne!(d1, d2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::vector(vec![0.0f64; 3]);
        let g = Tensor::zeros(Shape::Vector(2));
        let mut state = AdamState::new(&[&p]);
        assert!(state.step(&mut [&mut p], &[Some(&g)], 1e-3).is_err());
    }
}
