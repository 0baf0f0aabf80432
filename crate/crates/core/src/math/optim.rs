use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
    pub step_count: u64,
    /// Set by a backward pass; a step only updates touched parameters.
    pub touched: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
            step_count: 0,
            touched: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
        self.touched = false;
    }
}

/// Anything that owns trainable parameters, visited in a fixed order.
pub trait Parameters {
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl Parameters for Vec<ParamTensor> {
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

/// Adam with decoupled weight decay.
///
/// `beta1`, `beta2` and `eps` default to 0.9, 0.999 and 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update of `p` from its accumulated gradient, which is then zeroed.
    ///
    /// The decay term uses the pre-update value:
    /// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
    pub fn step(&self, p: &mut ParamTensor) -> Result<()> {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let value = p.value.as_mut_slice();
        let m = p.adam_m.as_mut_slice();
        let v = p.adam_v.as_mut_slice();
        for (((theta, m), v), &g) in value.iter_mut().zip(m).zip(v).zip(p.grad.as_slice()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps) + self.lr * self.weight_decay * *theta;
        }
        p.zero_grad();
        Ok(())
    }

    /// Steps every touched parameter; untouched ones keep their moments.
    pub fn step_all<P: Parameters + ?Sized>(&self, model: &mut P) -> Result<()> {
        for p in model.params_mut() {
            if p.touched {
                self.step(p)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(value: f64, grad: f64) -> ParamTensor {
        let mut p = ParamTensor::new("theta", Tensor2::row_vector(&[value]));
        p.grad.set(0, 0, grad);
        p.touched = true;
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(1.0, 1.0);
        AdamW::new(0.1, 0.0).step(&mut p).unwrap();
        assert_abs_diff_eq!(p.value.get(0, 0), 0.9, epsilon = 1e-8);
        assert_eq!(p.step_count, 1);
        assert_eq!(p.grad.get(0, 0), 0.0);

        let mut p = scalar(1.0, 1.0);
        AdamW::new(0.1, 0.01).step(&mut p).unwrap();
        assert_abs_diff_eq!(p.value.get(0, 0), 0.899, epsilon = 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0, f64::NAN);
        p.name = "teacher2.meta.weight".into();
        let err = AdamW::new(0.1, 0.0).step(&mut p).unwrap_err();
        assert!(err.to_string().contains("teacher2.meta.weight"));
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn untouched_parameters_are_skipped() {
        let mut params = vec![scalar(1.0, 1.0), scalar(2.0, 0.0)];
        params[1].touched = false;
        AdamW::new(0.1, 0.5).step_all(&mut params).unwrap();
        assert_eq!(params[0].step_count, 1);
        assert_eq!(params[1].step_count, 0);
        assert_eq!(params[1].value.get(0, 0), 2.0);
    }

    proptest! {
        #[test]
        fn zero_grad_without_decay_is_identity(
            values in proptest::collection::vec(-10.0f64..10.0, 1..6),
            steps in 1usize..5,
            lr in 1e-4f64..1.0,
        ) {
            let mut p = ParamTensor::new("p", Tensor2::row_vector(&values));
            let opt = AdamW::new(lr, 0.0);
            for _ in 0..steps {
                p.touched = true;
                opt.step(&mut p).unwrap();
            }
            prop_assert_eq!(p.value.as_slice(), values.as_slice());
            prop_assert_eq!(p.step_count, steps as u64);
        }
    }
}
