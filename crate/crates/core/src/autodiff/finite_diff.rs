use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// This is the reference the tape's gradients are tested against, so it
/// deliberately shares nothing with the backward pass.
pub fn finite_diff<F>(mut f: F, point: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut probe = point.clone();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + step;
        let up = f(&probe)?;
        probe.data_mut()[i] = x - step;
        let down = f(&probe)?;
        probe.data_mut()[i] = x;
        grad.push((up - down) / (2.0 * step));
    }
    Tensor::new(point.shape().to_vec(), grad)
}

/// `|a - b| / max(|a|, |b|, floor)`: relative error that degrades to an
/// absolute comparison near zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
