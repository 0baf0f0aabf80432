use super::optim::Parameters;

/// Compares accumulated analytic gradients with central differences.
///
/// `loss` must compute the loss and accumulate its gradient into the model's
/// parameters; it is called once at the base point and twice per checked
/// coordinate. At most `max_coords_per_param` evenly spaced coordinates are
/// checked per parameter tensor. Returns the largest
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`, or 0 when the
/// model has no parameters. Gradients are left zeroed and values restored.
pub fn finite_diff_check<M, F>(model: &mut M, mut loss: F, epsilon: f64, max_coords_per_param: usize) -> f64
where
    M: Parameters + ?Sized,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grad();
    loss(model);
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .into_iter()
        .map(|p| p.grad.as_slice().to_vec())
        .collect();
    model.zero_grad();

    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let count = n.min(max_coords_per_param.max(1));
        for k in 0..count {
            let idx = k * n / count;
            let original = model.params_mut()[pi].value.as_slice()[idx];

            model.params_mut()[pi].value.as_mut_slice()[idx] = original + epsilon;
            let plus = loss(model);
            model.params_mut()[pi].value.as_mut_slice()[idx] = original - epsilon;
            let minus = loss(model);
            model.params_mut()[pi].value.as_mut_slice()[idx] = original;
            model.zero_grad();

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grads[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}
