//! Hypothesis functions, cross-entropy losses, and the Newton-PCG solver for
//! the convex classification subproblem over `(W, mu)`.
//!
//! The loss is always evaluated fused with the hypothesis in log-sum-exp /
//! softplus form so that large logits cannot overflow.

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::matrix::Matrix;
use crate::pcg::{pcg_solve, PcgConfig};
use serde::{Deserialize, Serialize};

/// Weight matrix `W` (n x m) and bias vector `mu` (m) of the hypothesis
/// `h(Y_N W + e mu^T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub w: Matrix,
    pub mu: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(n: usize, m: usize) -> Self {
        ClassifierParams {
            w: Matrix::zeros(n, m),
            mu: vec![0.0; m],
        }
    }

    pub fn classes(&self) -> usize {
        self.mu.len()
    }

    /// Logits `Y W + e mu^T`.
    pub fn logits(&self, y: &Matrix) -> Result<Matrix> {
        if y.cols() != self.w.rows() {
            return Err(Error::dim("classifier logits", self.w.rows(), y.cols()));
        }
        let mut x = y.matmul(&self.w)?;
        for i in 0..x.rows() {
            for (j, v) in x.row_mut(i).iter_mut().enumerate() {
                *v += self.mu[j];
            }
        }
        Ok(x)
    }
}

/// Element-wise logistic function, computed via the non-overflowing branch.
pub fn logistic_hyp(x: &Matrix) -> Matrix {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Row-wise softmax with max subtraction; rows sum to 1.
pub fn softmax_hyp(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Which cross-entropy model ties logits to labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Element-wise logistic cross-entropy for `C` in {0,1}; mean over
    /// examples, sum over columns.
    Bernoulli,
    /// Row-wise softmax cross-entropy for one-hot `C`.
    Multinomial,
    /// Half sum-of-squares against the raw logits; exposed for testing only.
    LeastSquares,
}

impl Loss {
    /// Pick the loss the experiments use: logistic for 2 classes, softmax
    /// otherwise.
    pub fn for_classes(m: usize) -> Loss {
        if m <= 2 {
            Loss::Bernoulli
        } else {
            Loss::Multinomial
        }
    }

    /// Mean-over-examples loss value from raw logits (fused stable form).
    pub fn value(&self, logits: &Matrix, c: &Matrix) -> Result<f64> {
        if logits.rows() != c.rows() || logits.cols() != c.cols() {
            return Err(Error::dim(
                "loss shapes",
                format!("{}x{}", c.rows(), c.cols()),
                format!("{}x{}", logits.rows(), logits.cols()),
            ));
        }
        let s = logits.rows() as f64;
        let mut total = 0.0;
        match self {
            Loss::Bernoulli => {
                for i in 0..logits.rows() {
                    for (x, ci) in logits.row(i).iter().zip(c.row(i)) {
                        total += softplus(*x) - ci * x;
                    }
                }
            }
            Loss::Multinomial => {
                for i in 0..logits.rows() {
                    let row = logits.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    let fit: f64 = row.iter().zip(c.row(i)).map(|(x, ci)| ci * x).sum();
                    total += lse - fit;
                }
            }
            Loss::LeastSquares => {
                let d = logits.sub(c);
                total = 0.5 * d.dot(&d);
            }
        }
        Ok(total / s)
    }

    /// Gradient of `value` with respect to the logits.
    pub fn grad_logits(&self, logits: &Matrix, c: &Matrix) -> Result<Matrix> {
        let s = logits.rows() as f64;
        let p = match self {
            Loss::Bernoulli => logistic_hyp(logits),
            Loss::Multinomial => softmax_hyp(logits),
            Loss::LeastSquares => logits.clone(),
        };
        let mut g = p.sub(c);
        g.scale(1.0 / s);
        Ok(g)
    }

    /// Curvature matvec in logit space: `d -> H(logits) d`, symmetric PSD.
    pub fn curvature_matvec(&self, logits: &Matrix, d: &Matrix) -> Result<Matrix> {
        let s = logits.rows() as f64;
        match self {
            Loss::Bernoulli => {
                let p = logistic_hyp(logits);
                let mut out = d.clone();
                for i in 0..out.rows() {
                    for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                        let pi = p.get(i, j);
                        *v *= pi * (1.0 - pi) / s;
                    }
                }
                Ok(out)
            }
            Loss::Multinomial => {
                let p = softmax_hyp(logits);
                let mut out = Matrix::zeros(d.rows(), d.cols());
                for i in 0..d.rows() {
                    let pr = p.row(i);
                    let dr = d.row(i);
                    let pd: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    let orow = out.row_mut(i);
                    for j in 0..dr.len() {
                        orow[j] = pr[j] * (dr[j] - pd) / s;
                    }
                }
                Ok(out)
            }
            Loss::LeastSquares => Ok(d.scaled(1.0 / s)),
        }
    }
}

/// Cross-entropy between predicted probabilities and labels. For training the
/// fused `Loss::value` on logits is preferred; this direct form serves the
/// probability-space contract.
pub fn cross_entropy(cpred: &Matrix, c: &Matrix) -> Result<f64> {
    if cpred.rows() != c.rows() || cpred.cols() != c.cols() {
        return Err(Error::dim(
            "cross_entropy shapes",
            format!("{}x{}", c.rows(), c.cols()),
            format!("{}x{}", cpred.rows(), cpred.cols()),
        ));
    }
    let s = c.rows() as f64;
    let mut total = 0.0;
    for i in 0..c.rows() {
        for (p, ci) in cpred.row(i).iter().zip(c.row(i)) {
            if *ci > 0.0 {
                total -= ci * p.max(1e-300).ln();
            }
        }
    }
    Ok(total / s)
}

/// Settings for the classification subproblem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub newton_iterations: usize,
    pub pcg: PcgConfig,
    /// Weight of the spatial smoothness regularizer on `W` (never on `mu`).
    pub alpha_w: f64,
    /// Shift in the `(L^T L + shift I)^-1` preconditioner.
    pub precond_shift: f64,
}

impl ClassifyConfig {
    pub fn new(newton_iterations: usize, pcg: PcgConfig, alpha_w: f64) -> Self {
        ClassifyConfig {
            newton_iterations,
            pcg,
            alpha_w,
            precond_shift: 1e-3,
        }
    }
}

/// Cached direct solver for `(L^T L + shift I)` on one channel block,
/// applied per channel and class column.
pub struct SpatialPreconditioner {
    chol: Matrix,
    channels: usize,
    block: usize,
}

impl SpatialPreconditioner {
    pub fn build(l: &LinearOperator, shift: f64) -> Result<Self> {
        let (channels, block) = match l {
            LinearOperator::GridLaplacian {
                channels,
                height,
                width,
            } => (*channels, height * width),
            other => (1usize, other.in_dim()),
        };
        // One channel block of L^T L + shift I, built column by column.
        let single = match l {
            LinearOperator::GridLaplacian { height, width, .. } => {
                LinearOperator::grid_laplacian(1, *height, *width)
            }
            other => other.clone(),
        };
        let id = Matrix::identity(block);
        let lmat = single.apply(&id)?; // symmetric variants; rows are L columns
        let mut ltl = lmat.matmul_tn(&lmat)?;
        for i in 0..block {
            ltl.set(i, i, ltl.get(i, i) + shift);
        }
        Ok(SpatialPreconditioner {
            chol: ltl.cholesky()?,
            channels,
            block,
        })
    }

    /// Solve per channel block for every class column of the flattened
    /// `(W, mu)` vector; the `mu` tail is passed through unchanged.
    pub fn apply_flat(&self, n: usize, m: usize, r: &[f64]) -> Vec<f64> {
        let mut out = r.to_vec();
        for k in 0..m {
            for c in 0..self.channels {
                let mut col = vec![0.0; self.block];
                for i in 0..self.block {
                    col[i] = r[(c * self.block + i) * m + k];
                }
                let sol = Matrix::cholesky_solve(&self.chol, &col);
                for i in 0..self.block {
                    out[(c * self.block + i) * m + k] = sol[i];
                }
            }
        }
        debug_assert_eq!(n * m + m, r.len());
        out
    }
}

fn flatten(w: &Matrix, mu: &[f64]) -> Vec<f64> {
    let mut v = w.as_slice().to_vec();
    v.extend_from_slice(mu);
    v
}

fn unflatten(n: usize, m: usize, v: &[f64]) -> (Matrix, Vec<f64>) {
    let w = Matrix::from_vec(n, m, v[..n * m].to_vec()).expect("shape");
    (w, v[n * m..].to_vec())
}

/// Regularized objective of the classification subproblem.
fn clf_objective(
    yout: &Matrix,
    c: &Matrix,
    params: &ClassifierParams,
    loss: Loss,
    alpha_w: f64,
    l_op: Option<&LinearOperator>,
) -> Result<f64> {
    let logits = params.logits(yout)?;
    let mut val = loss.value(&logits, c)?;
    if alpha_w > 0.0 {
        if let Some(l) = l_op {
            let lw = l.apply(&params.w.transpose())?;
            val += alpha_w * 0.5 * lw.dot(&lw);
        } else {
            val += alpha_w * 0.5 * params.w.dot(&params.w);
        }
    }
    Ok(val)
}

/// Approximately minimize the convex classification subproblem with damped
/// Newton-PCG; the objective sequence is non-increasing by Armijo backtracking.
pub fn newton_pcg_classify(
    yout: &Matrix,
    c: &Matrix,
    init: &ClassifierParams,
    loss: Loss,
    cfg: &ClassifyConfig,
    l_op: Option<&LinearOperator>,
    precond: Option<&SpatialPreconditioner>,
) -> Result<ClassifierParams> {
    if yout.rows() != c.rows() {
        return Err(Error::dim("classify rows", c.rows(), yout.rows()));
    }
    let n = yout.cols();
    let m = c.cols();
    let mut params = init.clone();
    let mut obj = clf_objective(yout, c, &params, loss, cfg.alpha_w, l_op)?;
    if !obj.is_finite() {
        return Err(Error::NumericalBreakdown(format!(
            "non-finite classification objective {obj}"
        )));
    }

    for _ in 0..cfg.newton_iterations {
        let logits = params.logits(yout)?;
        let g_logits = loss.grad_logits(&logits, c)?;
        let mut gw = yout.matmul_tn(&g_logits)?;
        if cfg.alpha_w > 0.0 {
            if let Some(l) = l_op {
                let lw = l.apply(&params.w.transpose())?;
                gw.axpy(cfg.alpha_w, &l.apply(&lw)?.transpose());
            } else {
                gw.axpy(cfg.alpha_w, &params.w);
            }
        }
        let gmu = g_logits.col_sums();
        let grad = flatten(&gw, &gmu);
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-14 {
            break;
        }

        let mut apply_h = |v: &[f64]| -> Result<Vec<f64>> {
            let (dv, dmu) = unflatten(n, m, v);
            let mut dx = yout.matmul(&dv)?;
            for i in 0..dx.rows() {
                for (j, x) in dx.row_mut(i).iter_mut().enumerate() {
                    *x += dmu[j];
                }
            }
            let hd = loss.curvature_matvec(&logits, &dx)?;
            let mut hw = yout.matmul_tn(&hd)?;
            if cfg.alpha_w > 0.0 {
                if let Some(l) = l_op {
                    let lv = l.apply(&dv.transpose())?;
                    hw.axpy(cfg.alpha_w, &l.apply(&lv)?.transpose());
                } else {
                    hw.axpy(cfg.alpha_w, &dv);
                }
            }
            Ok(flatten(&hw, &hd.col_sums()))
        };

        let rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
        let mut prec = precond.map(|p| move |r: &[f64]| p.apply_flat(n, m, r));
        let sol = pcg_solve(
            &mut apply_h,
            &rhs,
            &cfg.pcg,
            prec.as_mut().map(|f| f as &mut dyn FnMut(&[f64]) -> Vec<f64>),
        )?;
        let (dw, dmu) = unflatten(n, m, &sol.solution);

        // Armijo backtracking on the regularized objective.
        let dir_dot_grad: f64 = sol
            .solution
            .iter()
            .zip(&grad)
            .map(|(d, g)| d * g)
            .sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let mut trial = params.clone();
            trial.w.axpy(t, &dw);
            for (mu, d) in trial.mu.iter_mut().zip(&dmu) {
                *mu += t * d;
            }
            let trial_obj = clf_objective(yout, c, &trial, loss, cfg.alpha_w, l_op)?;
            if trial_obj.is_finite() && trial_obj <= obj + 1e-4 * t * dir_dot_grad {
                params = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break; // step 0 fallback: keep the current iterate
        }
    }
    Ok(params)
}

/// Fraction of rows whose argmax prediction disagrees with the label argmax.
pub fn classification_error(logits: &Matrix, c: &Matrix) -> f64 {
    let mut wrong = 0usize;
    for i in 0..logits.rows() {
        let pred = argmax(logits.row(i));
        let truth = argmax(c.row(i));
        if pred != truth {
            wrong += 1;
        }
    }
    wrong as f64 / logits.rows().max(1) as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
