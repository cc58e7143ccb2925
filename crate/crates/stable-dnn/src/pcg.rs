//! Preconditioned conjugate gradient on flat parameter vectors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcgConfig {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
}

impl PcgConfig {
    pub fn new(max_iterations: usize, relative_tolerance: f64) -> Result<Self> {
        if max_iterations < 1 {
            return Err(Error::InvalidConfig("pcg max_iterations must be >= 1".into()));
        }
        if !(relative_tolerance > 0.0 && relative_tolerance < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pcg relative_tolerance must be in (0,1), got {relative_tolerance}"
            )));
        }
        Ok(PcgConfig {
            max_iterations,
            relative_tolerance,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Negative curvature was encountered (truncated CG: the last iterate is returned).
    pub breakdown: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = rhs` for a symmetric positive semidefinite operator given as a
/// matvec callback, optionally preconditioned by an approximation of `A^-1`.
pub fn pcg_solve(
    apply_a: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    config: &PcgConfig,
    precond: Option<&mut dyn FnMut(&[f64]) -> Vec<f64>>,
) -> Result<PcgResult> {
    let n = rhs.len();
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(PcgResult {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            breakdown: false,
        });
    }

    let mut precond = precond;
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = match precond.as_mut() {
        Some(m) => m(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut breakdown = false;

    for _ in 0..config.max_iterations {
        let ap = apply_a(&p)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite curvature in pcg after {iterations} iterations"
            )));
        }
        if pap <= 0.0 {
            // Negative or zero curvature (e.g. subsampling noise): stop with
            // the last iterate, as in truncated CG.
            breakdown = true;
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let res = dot(&r, &r).sqrt();
        if !res.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite residual in pcg after {iterations} iterations"
            )));
        }
        if res <= config.relative_tolerance * rhs_norm {
            return Ok(PcgResult {
                solution: x,
                iterations,
                relative_residual: res / rhs_norm,
                converged: true,
                breakdown: false,
            });
        }
        z = match precond.as_mut() {
            Some(m) => m(&r),
            None => r.clone(),
        };
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let res = dot(&r, &r).sqrt();
    Ok(PcgResult {
        solution: x,
        iterations,
        relative_residual: res / rhs_norm,
        converged: res <= config.relative_tolerance * rhs_norm,
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_apply(d: Vec<f64>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |v: &[f64]| Ok(v.iter().zip(&d).map(|(x, di)| x * di).collect())
    }

    #[test]
    fn identity_system_in_one_iteration() {
        let cfg = PcgConfig::new(10, 1e-12).unwrap();
        let mut a = diag_apply(vec![1.0, 1.0]);
        let out = pcg_solve(&mut a, &[3.0, 4.0], &cfg, None).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert!((out.solution[0] - 3.0).abs() < 1e-12);
        assert!((out.solution[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_system() {
        let cfg = PcgConfig::new(10, 1e-12).unwrap();
        let mut a = diag_apply(vec![1.0, 4.0]);
        let out = pcg_solve(&mut a, &[1.0, 4.0], &cfg, None).unwrap();
        assert!(out.converged);
        assert!((out.solution[0] - 1.0).abs() < 1e-10);
        assert!((out.solution[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn preconditioned_diagonal_converges_fast() {
        let cfg = PcgConfig::new(10, 1e-12).unwrap();
        let mut a = diag_apply(vec![1.0, 4.0]);
        let mut m = |r: &[f64]| vec![r[0], r[1] / 4.0];
        let out = pcg_solve(&mut a, &[1.0, 4.0], &cfg, Some(&mut m)).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let cfg = PcgConfig::new(10, 1e-10).unwrap();
        let mut a = diag_apply(vec![2.0, 2.0]);
        let out = pcg_solve(&mut a, &[0.0, 0.0], &cfg, None).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0, 0.0]);
    }

    #[test]
    fn negative_curvature_flags_breakdown() {
        let cfg = PcgConfig::new(10, 1e-10).unwrap();
        let mut a = diag_apply(vec![-1.0, -1.0]);
        let out = pcg_solve(&mut a, &[1.0, 1.0], &cfg, None).unwrap();
        assert!(out.breakdown);
        assert!(!out.converged);
    }

    #[test]
    fn spd_system_converges_within_dimension_iterations() {
        // Dense SPD 8x8 system: A = B^T B + I.
        use crate::matrix::Matrix;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let b = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let mut a = b.matmul_tn(&b).unwrap();
        for i in 0..8 {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        let rhs: Vec<f64> = (0..8).map(|i| (i as f64) - 3.0).collect();
        let cfg = PcgConfig::new(10, 1e-10).unwrap();
        let mut apply = |v: &[f64]| -> Result<Vec<f64>> {
            let vm = Matrix::from_vec(8, 1, v.to_vec()).unwrap();
            Ok(a.matmul(&vm).unwrap().as_slice().to_vec())
        };
        let out = pcg_solve(&mut apply, &rhs, &cfg, None).unwrap();
        assert!(out.converged, "residual {}", out.relative_residual);
        assert!(out.iterations <= 10); // n + 2 in floating point
    }
}
