//! Weight initialization helpers.

use rand::Rng;

use crate::tensor::{Scalar, Shape5, Tensor5};

/// Uniform(-b, b) with b = gain * sqrt(3 / fan_in). gain = sqrt(2) gives the
/// usual fan-in scaling for ReLU stacks; gain = 1 suits SELU layers.
pub fn uniform_fan_in<T: Scalar, R: Rng>(
    shape: Shape5,
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor5<T> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor5::from_vec(shape, data).expect("generated data matches shape")
}
