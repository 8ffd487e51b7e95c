//! Parameters and SGD/Adam updates.

use crate::error::AutodiffError;
use crate::tensor::DenseTensor;

/// A trainable tensor living outside any single tape.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: DenseTensor,
    pub grad: Option<DenseTensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseTensor) -> Self {
        Self { name: name.into(), value, grad: None }
    }
}

pub fn zero_grad(params: &mut [Parameter]) {
    for p in params {
        p.grad = Some(DenseTensor::zeros(p.value.shape()));
    }
}

enum Moments {
    Sgd,
    Adam { t: u64, m: Vec<DenseTensor>, v: Vec<DenseTensor> },
}

/// SGD or Adam with the usual defaults (betas 0.9/0.999, epsilon 1e-8).
pub struct Optimizer {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    moments: Moments,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Self { lr, beta1: 0.0, beta2: 0.0, epsilon: 0.0, moments: Moments::Sgd }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: Moments::Adam { t: 0, m: Vec::new(), v: Vec::new() },
        }
    }

    /// Applies one update. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<(), AutodiffError> {
        for p in params.iter() {
            let g = p.grad.as_ref().ok_or(AutodiffError::MissingGrad)?;
            if g.shape() != p.value.shape() {
                return Err(AutodiffError::MissingGrad);
            }
        }
        match &mut self.moments {
            Moments::Sgd => {
                for p in params {
                    let g = p.grad.as_ref().unwrap();
                    for (w, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * gv;
                    }
                }
            }
            Moments::Adam { t, m, v } => {
                if m.is_empty() {
                    *m = params.iter().map(|p| DenseTensor::zeros(p.value.shape())).collect();
                    *v = params.iter().map(|p| DenseTensor::zeros(p.value.shape())).collect();
                }
                *t += 1;
                let bc1 = 1.0 - self.beta1.powi(*t as i32);
                let bc2 = 1.0 - self.beta2.powi(*t as i32);
                for (i, p) in params.iter_mut().enumerate() {
                    let g = p.grad.as_ref().unwrap();
                    for (((w, &gv), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m[i].data_mut())
                        .zip(v[i].data_mut())
                    {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gv;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gv * gv;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_unit_lr_subtracts_gradient() {
        let mut p = Parameter::new("w", DenseTensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        p.grad = Some(DenseTensor::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        Optimizer::sgd(1.0).step(std::slice::from_mut(&mut p)).unwrap();
        assert_eq!(p.value.data(), &[0.5, 3.0]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // After one step: theta -= lr * g / (|g| + eps') with exact
        // bias-correction algebra.
        let lr = 0.1;
        let g = 0.3;
        let mut p = Parameter::new("w", DenseTensor::from_vec(&[1], vec![1.0]).unwrap());
        p.grad = Some(DenseTensor::from_vec(&[1], vec![g]).unwrap());
        let mut opt = Optimizer::adam(lr);
        opt.step(std::slice::from_mut(&mut p)).unwrap();
        let mhat = (1.0 - 0.9) * g / (1.0 - 0.9f64);
        let vhat = (1.0 - 0.999) * g * g / (1.0 - 0.999f64);
        let want = 1.0 - lr * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.value.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_resets() {
        let mut p = Parameter::new("w", DenseTensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        p.grad = Some(DenseTensor::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        zero_grad(std::slice::from_mut(&mut p));
        assert!(p.grad.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_without_grad_errors() {
        let mut p = Parameter::new("w", DenseTensor::zeros(&[1]));
        assert!(matches!(
            Optimizer::sgd(0.1).step(std::slice::from_mut(&mut p)),
            Err(AutodiffError::MissingGrad)
        ));
    }
}
