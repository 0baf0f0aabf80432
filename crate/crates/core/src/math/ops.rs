use rand::Rng;

use super::optim::ParamTensor;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// `x·W + b` for a batch `x` of shape `B × in`.
pub fn affine(x: &Tensor2, weight: &ParamTensor, bias: &ParamTensor) -> Result<Tensor2> {
    if bias.value.shape() != (1, weight.value.cols()) {
        return Err(Error::Shape {
            op: "affine bias",
            left: weight.value.shape(),
            right: bias.value.shape(),
        });
    }
    let mut out = x.matmul(&weight.value)?;
    out.add_row_broadcast(&bias.value)?;
    Ok(out)
}

/// Accumulates `∂L/∂W = xᵀ·g` and `∂L/∂b = Σ_rows g`, returns `∂L/∂x = g·Wᵀ`.
pub fn affine_backward(
    x: &Tensor2,
    weight: &mut ParamTensor,
    bias: &mut ParamTensor,
    grad_out: &Tensor2,
) -> Result<Tensor2> {
    x.matmul_tn_into(grad_out, &mut weight.grad)?;
    grad_out.col_sums_into(&mut bias.grad)?;
    weight.touched = true;
    bias.touched = true;
    grad_out.matmul_nt(&weight.value)
}

/// A weight matrix `in × out` and a bias row `1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    pub fn zeros(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: ParamTensor::new(format!("{name}.weight"), Tensor2::zeros(inputs, outputs)),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor2::zeros(1, outputs)),
        }
    }

    /// Uniform `±1/√inputs` for weight and bias.
    pub fn fan_in_uniform(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut layer = Self::zeros(name, inputs, outputs);
        for w in layer.weight.value.as_mut_slice() {
            *w = rng.random_range(-bound..bound);
        }
        for b in layer.bias.value.as_mut_slice() {
            *b = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn from_values(name: &str, weight: Tensor2, bias: Tensor2) -> Result<Self> {
        if bias.shape() != (1, weight.cols()) {
            return Err(Error::Shape {
                op: "linear",
                left: weight.shape(),
                right: bias.shape(),
            });
        }
        Ok(Self {
            weight: ParamTensor::new(format!("{name}.weight"), weight),
            bias: ParamTensor::new(format!("{name}.bias"), bias),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        affine(x, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, x: &Tensor2, grad_out: &Tensor2) -> Result<Tensor2> {
        affine_backward(x, &mut self.weight, &mut self.bias, grad_out)
    }

    pub fn params_mut(&mut self) -> [&mut ParamTensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu(x: &Tensor2) -> Tensor2 {
    x.map(silu_scalar)
}

/// `grad_out ⊙ σ(x)(1 + x(1 − σ(x)))`, where `x` is the SiLU input.
pub fn silu_backward(x: &Tensor2, grad_out: &Tensor2) -> Result<Tensor2> {
    let local = x.map(|v| {
        let s = sigmoid(v);
        s * (1.0 + v * (1.0 - s))
    });
    local.hadamard(grad_out)
}

/// Softmax of `logits / temperature`, max-shifted.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - lse).collect()
}

pub fn softmax_rows(x: &Tensor2, temperature: f64) -> Tensor2 {
    assert!(temperature > 0.0, "temperature must be positive");
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(&softmax(x.row(r), temperature));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn linear(w: &[[f64; 2]; 2], b: [f64; 2]) -> Linear {
        Linear::from_values("l", Tensor2::from_rows(w), Tensor2::row_vector(&b)).unwrap()
    }

    #[test]
    fn affine_examples() {
        let id = linear(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert_eq!(id.forward(&Tensor2::row_vector(&[1.0, 2.0])).unwrap().as_slice(), &[1.0, 2.0]);

        let any = linear(&[[0.3, -7.0], [2.0, 1.5]], [3.0, -1.0]);
        assert_eq!(any.forward(&Tensor2::row_vector(&[0.0, 0.0])).unwrap().as_slice(), &[3.0, -1.0]);

        let diag = linear(&[[2.0, 0.0], [0.0, 3.0]], [1.0, 1.0]);
        assert_eq!(diag.forward(&Tensor2::row_vector(&[1.0, 1.0])).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_rejects_mismatched_input() {
        let l = Linear::zeros("l", 3, 2);
        let err = l.forward(&Tensor2::zeros(1, 2)).unwrap_err().to_string();
        assert!(err.contains("(1, 2)") && err.contains("(3, 2)"), "{err}");
    }

    #[test]
    fn affine_backward_accumulates() {
        let mut l = linear(&[[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0]);
        let x = Tensor2::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
        let g = Tensor2::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        let gx = l.backward(&x, &g).unwrap();
        assert_eq!(gx, Tensor2::from_rows(&[[3.0, 7.0], [1.0, 3.0]]));
        assert_eq!(l.weight.grad, Tensor2::from_rows(&[[1.0, 1.0], [2.0, 0.0]]));
        assert_eq!(l.bias.grad.as_slice(), &[2.0, 1.0]);
        l.backward(&x, &g).unwrap();
        assert_eq!(l.bias.grad.as_slice(), &[4.0, 2.0]);
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu_scalar(0.0), 0.0);
        assert_abs_diff_eq!(silu_scalar(100.0), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(silu_scalar(1.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert!(silu_scalar(-800.0).is_finite());
    }

    #[test]
    fn silu_gradient_matches_central_difference() {
        for &x in &[-4.0, -1.0, -0.1, 0.0, 0.3, 2.0, 7.5] {
            let h = 1e-6;
            let numeric = (silu_scalar(x + h) - silu_scalar(x - h)) / (2.0 * h);
            let analytic = silu_backward(&Tensor2::row_vector(&[x]), &Tensor2::row_vector(&[1.0])).unwrap();
            assert_abs_diff_eq!(analytic.get(0, 0), numeric, epsilon = 1e-9);
        }
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&Tensor2::row_vector(&[0.0; 4]), 1.0);
        assert_eq!(u.as_slice(), &[0.25; 4]);
        let p = softmax(&[1f64.ln(), 3f64.ln()], 1.0);
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        let big = softmax(&[1000.0, 1000.0], 1.0);
        assert_eq!(big, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized_and_shift_invariant(
            row in proptest::collection::vec(-30.0f64..30.0, 1..8),
            shift in -50.0f64..50.0,
            t in 0.2f64..5.0,
        ) {
            let p = softmax(&row, t);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = row.iter().map(|x| x + shift).collect();
            for (a, b) in p.iter().zip(softmax(&shifted, t)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let lp = log_softmax(&row, t);
            for (a, b) in p.iter().zip(lp) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a < 1e-300);
            }
        }
    }
}
