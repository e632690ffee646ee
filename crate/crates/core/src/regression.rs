//! Multi-output affine least squares with a ridge penalty on the slopes.

use nalgebra::{DMatrix, DVector};

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl AffineModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        (&self.weights * DVector::from_column_slice(x) + &self.intercept)
            .iter()
            .copied()
            .collect()
    }
}

/// Fits `inputs -> outputs` minimizing `||Y - XW' - b||^2 + lambda ||W||^2`.
/// The intercept is unpenalized (the problem is solved on centered data).
///
/// `refine_steps > 0` applies iterated Tikhonov refinement, which removes the
/// ridge bias along well-determined directions while leaving rank-deficient
/// directions regularized.
pub fn fit_affine(inputs: &[Vec<f64>], outputs: &[Vec<f64>], lambda: f64, refine_steps: usize) -> AffineModel {
    assert!(!inputs.is_empty() && inputs.len() == outputs.len());
    assert!(lambda > 0.0);
    let n = inputs.len();
    let d_in = inputs[0].len();
    let d_out = outputs[0].len();
    let x = DMatrix::from_fn(n, d_in, |r, c| inputs[r][c]);
    let y = DMatrix::from_fn(n, d_out, |r, c| outputs[r][c]);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let gram = xc.transpose() * &xc + DMatrix::identity(d_in, d_in) * lambda;
    let chol = gram.cholesky().expect("ridge gram matrix is positive definite");
    let xty = xc.transpose() * &yc;
    let mut w = chol.solve(&xty);
    for _ in 0..refine_steps {
        let residual = xty.clone() - xc.transpose() * &xc * &w;
        w += chol.solve(&residual);
    }
    // w is d_in x d_out
    let intercept = (y_mean - x_mean * &w).transpose();
    AffineModel {
        weights: w.transpose(),
        intercept,
    }
}
