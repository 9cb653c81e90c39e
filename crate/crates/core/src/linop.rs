//! Linear operators on flat `f64` vectors and power-iteration norm estimates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// `factor * I` on vectors of length `n`.
#[derive(Clone, Copy, Debug)]
pub struct ScaledIdentity {
    pub n: usize,
    pub factor: f64,
}

impl LinearOperator for ScaledIdentity {
    fn input_len(&self) -> usize {
        self.n
    }
    fn output_len(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.factor * v).collect()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

impl LinearOperator for DMatrix<f64> {
    fn input_len(&self) -> usize {
        self.ncols()
    }
    fn output_len(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self * DVector::from_column_slice(x)).as_slice().to_vec()
    }
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        (self.tr_mul(&DVector::from_column_slice(y))).as_slice().to_vec()
    }
}

/// Outcome of a power iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    /// Estimate of the largest singular value (a lower bound).
    pub value: f64,
    pub iterations: usize,
    /// Whether the relative change of the last two iterates fell below `1e-6`.
    pub converged: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Power iteration on `A^T A` from a seeded Gaussian start vector.
///
/// The returned sequence of estimates is nondecreasing in the iteration count.
pub fn operator_norm(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<NormEstimate> {
    const TOL: f64 = 1e-6;
    if iters < 10 {
        return Err(Error::invalid(format!("power iteration needs at least 10 iterations, got {iters}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.input_len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let mut lambda = 0.0;
    for k in 1..=iters {
        let y = op.apply_adjoint(&op.apply(&x));
        let next = norm(&y);
        if next == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: k,
                converged: true,
            });
        }
        let change = (next - lambda).abs() / next;
        lambda = next;
        x = y.into_iter().map(|v| v / next).collect();
        if change < TOL {
            return Ok(NormEstimate {
                value: lambda.sqrt(),
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(NormEstimate {
        value: lambda.sqrt(),
        iterations: iters,
        converged: false,
    })
}
