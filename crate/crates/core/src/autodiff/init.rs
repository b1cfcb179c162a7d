//! Parameter initialization: fan-in-scaled uniform for conv/linear weights,
//! orthogonal for square recurrent kernels.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};

/// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)].
pub fn fan_in_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let limit = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn zeros<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

pub fn constant<T: Scalar>(shape: &[usize], v: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, vec![T::from_f64(v); n])
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Orthogonal square matrix via Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Tensor<T> {
    let mut rows = vec![vec![0.0f64; n]; n];
    for row in rows.iter_mut() {
        for v in row.iter_mut() {
            *v = gaussian(rng);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| rows[i][k] * rows[j][k]).sum();
            for k in 0..n {
                rows[i][k] -= dot * rows[j][k];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Degenerate draw; fall back to a unit basis vector.
            for (k, v) in rows[i].iter_mut().enumerate() {
                *v = if k == i { 1.0 } else { 0.0 };
            }
        } else {
            for v in rows[i].iter_mut() {
                *v /= norm;
            }
        }
    }
    let data = rows
        .into_iter()
        .flatten()
        .map(|v| T::from_f64(v))
        .collect();
    Tensor::from_vec(&[n, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Tensor<f64> = orthogonal(&mut rng, 16);
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = (0..16).map(|k| m.data[i * 16 + k] * m.data[j * 16 + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "({i},{j}) dot {dot}");
            }
        }
    }
}
