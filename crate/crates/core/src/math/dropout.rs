use rand::Rng;

use super::tensor::Tensor2;

/// Inverted dropout: kept entries are scaled by `1/keep_probability`, so
/// evaluation is a pass-through.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub keep_probability: f64,
    pub mask: Tensor2,
}

impl DropoutMask {
    /// The evaluation-mode mask: all ones.
    pub fn identity(rows: usize, cols: usize) -> Self {
        Self {
            keep_probability: 1.0,
            mask: Tensor2::filled(rows, cols, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(rows: usize, cols: usize, keep_probability: f64, rng: &mut R) -> Self {
        assert!((0.0..=1.0).contains(&keep_probability), "keep probability must be in [0, 1]");
        if keep_probability >= 1.0 {
            return Self::identity(rows, cols);
        }
        let mut mask = Tensor2::zeros(rows, cols);
        if keep_probability > 0.0 {
            let scale = 1.0 / keep_probability;
            for m in mask.as_mut_slice() {
                if rng.random::<f64>() < keep_probability {
                    *m = scale;
                }
            }
        }
        Self {
            keep_probability,
            mask,
        }
    }

    pub fn apply(&self, x: &Tensor2) -> Tensor2 {
        x.hadamard(&self.mask).expect("dropout mask shape")
    }
}
