use rand::Rng;

use crate::numerics::Tensor;

/// Glorot/Xavier uniform initialization with gain 1: entries drawn from
/// `U(-b, b)` with `b = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}
