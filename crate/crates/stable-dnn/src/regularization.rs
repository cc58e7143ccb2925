//! Smoothness regularizers on the layer parameters and classifier weights,
//! with gradients, curvature matvecs, and the tridiagonal time-direction
//! preconditioner used by the Gauss-Newton solver.

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::matrix::Matrix;
use crate::propagation::ParamVec;

/// `1/(2h) * sum_j ||K_j - K_{j-1}||_F^2 + (b_j - b_{j-1})^2`, penalizing
/// roughness of the parameters along the layer (time) axis.
pub fn time_smooth_value(p: &ParamVec, h: f64) -> f64 {
    let mut acc = 0.0;
    for j in 1..p.kernels.len() {
        let d = p.kernels[j].sub(&p.kernels[j - 1]);
        acc += d.dot(&d);
        let db = p.biases[j] - p.biases[j - 1];
        acc += db * db;
    }
    acc / (2.0 * h)
}

/// Gradient of [`time_smooth_value`]; because the value is quadratic this is
/// also the curvature matvec `(1/h) L_time p`.
pub fn time_smooth_grad(p: &ParamVec, h: f64) -> ParamVec {
    let n = p.kernels.len();
    let mut g = ParamVec::zeros_like(p);
    for j in 0..n {
        if j > 0 {
            g.kernels[j].axpy(1.0, &p.kernels[j].sub(&p.kernels[j - 1]));
            g.biases[j] += p.biases[j] - p.biases[j - 1];
        }
        if j + 1 < n {
            g.kernels[j].axpy(1.0, &p.kernels[j].sub(&p.kernels[j + 1]));
            g.biases[j] += p.biases[j] - p.biases[j + 1];
        }
    }
    g.scale(1.0 / h);
    g
}

/// `1/2 ||p||^2` over all kernels and biases.
pub fn weight_decay_value(p: &ParamVec) -> f64 {
    0.5 * p.dot(p)
}

pub fn weight_decay_grad(p: &ParamVec) -> ParamVec {
    let mut g = p.clone();
    g.scale(1.0);
    g
}

/// `1/2 sum_k ||L w_k||^2` over the columns of `w`, for a symmetric operator
/// `l` acting on the feature space (typically a grid Laplacian).
pub fn spatial_smooth_value(l: &LinearOperator, w: &Matrix) -> Result<f64> {
    let lw = l.apply(&w.transpose())?;
    Ok(0.5 * lw.dot(&lw))
}

/// Gradient `L^T L W` of [`spatial_smooth_value`]; also its curvature matvec.
pub fn spatial_smooth_grad(l: &LinearOperator, w: &Matrix) -> Result<Matrix> {
    let lw = l.apply(&w.transpose())?;
    Ok(l.apply_transpose(&lw)?.transpose())
}

/// Direct solver for `(alpha/h * L_time + shift I) x = r` applied entrywise
/// across the layer axis, where `L_time` is the second-difference matrix with
/// Neumann ends. The scalar Thomas factorization is shared by all entries.
pub struct TimePreconditioner {
    n: usize,
    sub: f64,
    /// Normalized superdiagonal after the forward sweep.
    cp: Vec<f64>,
    /// Reciprocal pivots of the forward sweep.
    inv_piv: Vec<f64>,
}

impl TimePreconditioner {
    pub fn build(layers: usize, alpha: f64, h: f64, shift: f64) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig("time preconditioner needs >= 1 layer".into()));
        }
        if !(h > 0.0) || alpha < 0.0 || !(shift > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "time preconditioner needs h > 0, alpha >= 0, shift > 0; got h={h}, alpha={alpha}, shift={shift}"
            )));
        }
        let t = alpha / h;
        let sub = -t;
        let diag = |j: usize| {
            let degree = if layers == 1 {
                0.0
            } else if j == 0 || j == layers - 1 {
                1.0
            } else {
                2.0
            };
            shift + t * degree
        };
        let mut cp = vec![0.0; layers];
        let mut inv_piv = vec![0.0; layers];
        let mut piv = diag(0);
        inv_piv[0] = 1.0 / piv;
        cp[0] = sub / piv;
        for j in 1..layers {
            piv = diag(j) - sub * cp[j - 1];
            inv_piv[j] = 1.0 / piv;
            cp[j] = sub / piv;
        }
        Ok(TimePreconditioner {
            n: layers,
            sub,
            cp,
            inv_piv,
        })
    }

    /// Solve the tridiagonal system for every kernel entry and bias.
    pub fn solve(&self, r: &ParamVec) -> ParamVec {
        assert_eq!(r.kernels.len(), self.n);
        let mut x = r.clone();
        // forward sweep, vectorized over all entries of a layer
        for j in 0..self.n {
            if j > 0 {
                let prev = x.kernels[j - 1].clone();
                x.kernels[j].axpy(-self.sub, &prev);
                let pb = x.biases[j - 1];
                x.biases[j] -= self.sub * pb;
            }
            x.kernels[j].scale(self.inv_piv[j]);
            x.biases[j] *= self.inv_piv[j];
        }
        // back substitution
        for j in (0..self.n.saturating_sub(1)).rev() {
            let next = x.kernels[j + 1].clone();
            x.kernels[j].axpy(-self.cp[j], &next);
            let nb = x.biases[j + 1];
            x.biases[j] -= self.cp[j] * nb;
        }
        x
    }

    /// Apply the operator being inverted (for verification and residuals).
    pub fn matvec(&self, p: &ParamVec, alpha: f64, h: f64, shift: f64) -> ParamVec {
        let mut out = time_smooth_grad(p, h);
        out.scale(alpha);
        out.axpy(shift, p);
        out
    }
}
