use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{silu, silu_backward, DropoutMask, Linear, ParamTensor, Tensor2};

/// Residual two-layer adapter over one expert's segment:
/// `e + dropout(up(SiLU(down(e))))`.
///
/// With a zero up-projection the module is exactly the identity, which is how
/// it is initialized.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjustmentModule {
    pub down: Linear,
    pub up: Linear,
    pub keep_probability: f64,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AdjustCache {
    input: Tensor2,
    pre: Tensor2,
    hidden: Tensor2,
    mask: Option<Tensor2>,
}

impl AdjustmentModule {
    pub fn new(name: &str, width: usize, hidden: usize, dropout_rate: f64, rng: &mut impl Rng) -> Self {
        Self {
            down: Linear::fan_in_uniform(&format!("{name}.down"), width, hidden, rng),
            up: Linear::zeros(&format!("{name}.up"), hidden, width),
            keep_probability: 1.0 - dropout_rate,
        }
    }

    pub fn width(&self) -> usize {
        self.down.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.down.outputs()
    }

    pub fn forward(&self, e: &Tensor2, mask: Option<&DropoutMask>) -> Result<(Tensor2, AdjustCache)> {
        if e.cols() != self.width() {
            return Err(Error::Shape {
                op: "adjust",
                left: e.shape(),
                right: (self.width(), self.width()),
            });
        }
        let pre = self.down.forward(e)?;
        let hidden = silu(&pre);
        let mut delta = self.up.forward(&hidden)?;
        if let Some(m) = mask {
            delta = delta.hadamard(&m.mask)?;
        }
        let mut out = e.clone();
        out.add_assign(&delta)?;
        Ok((
            out,
            AdjustCache {
                input: e.clone(),
                pre,
                hidden,
                mask: mask.map(|m| m.mask.clone()),
            },
        ))
    }

    /// Single-sample convenience: dropout is sampled from `train_rng` when
    /// given, otherwise the module runs in evaluation mode.
    pub fn apply<R: Rng + ?Sized>(&self, e: &[f64], train_rng: Option<&mut R>) -> Result<Vec<f64>> {
        let x = Tensor2::row_vector(e);
        let mask = train_rng.map(|rng| DropoutMask::sample(1, self.width(), self.keep_probability, rng));
        Ok(self.forward(&x, mask.as_ref())?.0.into_vec())
    }

    /// Accumulates parameter gradients. The input embedding is frozen, so no
    /// input gradient is returned.
    pub fn backward(&mut self, cache: &AdjustCache, grad_out: &Tensor2) -> Result<()> {
        let grad_delta = match &cache.mask {
            Some(m) => grad_out.hadamard(m)?,
            None => grad_out.clone(),
        };
        let grad_hidden = self.up.backward(&cache.hidden, &grad_delta)?;
        let grad_pre = silu_backward(&cache.pre, &grad_hidden)?;
        self.down.backward(&cache.input, &grad_pre)?;
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v: Vec<&mut ParamTensor> = self.down.params_mut().into_iter().collect();
        v.extend(self.up.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::silu_scalar;
    use crate::rng::{SeedStreams, Stream};
    use approx::assert_abs_diff_eq;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_up_projection_is_identity() {
        let mut rng = SeedStreams::new(3).rng(Stream::Init, 0);
        let m = AdjustmentModule::new("a", 5, 3, 0.75, &mut rng);
        let e = [0.3, -1.0, 2.5, 0.0, 7.0];
        assert_eq!(m.apply::<ChaCha8Rng>(&e, None).unwrap(), e.to_vec());
        // dropout only touches the (zero) residual branch
        assert_eq!(m.apply(&e, Some(&mut rng)).unwrap(), e.to_vec());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut rng = SeedStreams::new(4).rng(Stream::Init, 0);
        let mut m = AdjustmentModule::new("a", 3, 2, 0.75, &mut rng);
        m.down.bias.value.fill(0.0);
        m.up.weight.value.fill(1.0);
        assert_eq!(m.apply::<ChaCha8Rng>(&[0.0; 3], None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_evaluated_example() {
        let m = AdjustmentModule {
            down: Linear::from_values("d", Tensor2::from_rows(&[[1.0], [1.0]]), Tensor2::zeros(1, 1)).unwrap(),
            up: Linear::from_values("u", Tensor2::from_rows(&[[1.0, 0.0]]), Tensor2::zeros(1, 2)).unwrap(),
            keep_probability: 0.25,
        };
        let out = m.apply::<ChaCha8Rng>(&[1.0, 1.0], None).unwrap();
        let expected = 1.0 + 2.0 / (1.0 + (-2.0f64).exp());
        assert_abs_diff_eq!(out[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0], 2.761_594_155_955_765, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0], 1.0 + silu_scalar(2.0), epsilon = 1e-15);
        assert_eq!(out[1], 1.0);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = SeedStreams::new(3).rng(Stream::Init, 0);
        let m = AdjustmentModule::new("a", 4, 2, 0.75, &mut rng);
        assert!(m.apply::<ChaCha8Rng>(&[1.0; 3], None).is_err());
    }
}
