//! Spectral stability diagnostics: layer Jacobian eigenvalues, forward-Euler
//! amplification factors, and phase-plane trajectory export.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::propagation::{forward, NetworkWeights, PropagationTrace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest feature dimension for which dense eigen decompositions are run.
const MAX_SPECTRUM_DIM: usize = 1024;

/// Tolerance band separating "zero real part" from growth/decay.
pub const REAL_PART_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: usize,
    /// Eigenvalues of the materialized kernel, as `(re, im)` pairs sorted by
    /// real then imaginary part.
    pub kernel_eigenvalues: Vec<(f64, f64)>,
    /// Eigenvalues of `diag(sigma'(a)) M^T` at the probe state.
    pub jacobian_eigenvalues: Vec<(f64, f64)>,
    pub max_real_part: f64,
    /// `max_i |1 + h lambda_i(J)|`, the forward-Euler growth factor.
    pub amplification: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub layers: Vec<LayerSpectrum>,
    pub max_real_part: f64,
    pub max_amplification: f64,
    /// `max_j ||K_{j+1} - K_j||_F / h`; large values invalidate the frozen-
    /// coefficients reading of the per-layer spectra.
    pub kernel_change_rate: f64,
    /// No eigenvalue real part exceeds the tolerance band: perturbations to
    /// the input cannot grow in the continuous dynamics.
    pub forward_stable: bool,
    /// All real parts also stay above the negative tolerance band, so no
    /// information is dissipated either.
    pub energy_preserving: bool,
}

fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::dim("eigenvalues", n, m.cols()));
    }
    let dm = DMatrix::from_row_slice(n, n, m.as_slice());
    let mut eigs: Vec<(f64, f64)> = dm
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eigs)
}

/// Jacobian of the layer update rate at state row `y`:
/// `diag(sigma'(y K_j + b_j)) M_j^T` with `M_j` the materialized kernel.
pub fn jacobian_at(weights: &NetworkWeights, layer: usize, y: &Matrix) -> Result<Matrix> {
    let n = weights.feature_dim();
    if n > MAX_SPECTRUM_DIM {
        return Err(Error::InvalidConfig(format!(
            "spectral analysis limited to feature dimension {MAX_SPECTRUM_DIM}, got {n}"
        )));
    }
    let k = &weights.kernels()[layer];
    if !k.is_square() {
        return Err(Error::InvalidConfig(
            "layer Jacobian requires a square kernel".into(),
        ));
    }
    if y.rows() != 1 || y.cols() != n {
        return Err(Error::dim("jacobian probe state", n, y.cols()));
    }
    let a = k.apply(y)?.add_scalar(weights.biases()[layer]);
    let d = weights.activation().deriv(&a);
    let m = k.materialize()?;
    let mut jac = m.transpose();
    for i in 0..n {
        let di = d.get(0, i);
        for v in jac.row_mut(i) {
            *v *= di;
        }
    }
    Ok(jac)
}

fn mean_row(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    let s = m.rows().max(1) as f64;
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            out.set(0, j, out.get(0, j) + v / s);
        }
    }
    out
}

/// Analyze the network spectra along the forward trajectory of `y0`, probing
/// each layer Jacobian at the batch-mean state.
pub fn assess(weights: &NetworkWeights, y0: &Matrix) -> Result<StabilityReport> {
    let trace = forward(weights, y0)?;
    let h = weights.step();
    let mut layers = Vec::with_capacity(weights.layers());
    let mut max_real = f64::NEG_INFINITY;
    let mut min_real = f64::INFINITY;
    let mut max_amp = 0.0f64;
    for j in 0..weights.layers() {
        let probe = mean_row(&trace.states[j]);
        let jac = jacobian_at(weights, j, &probe)?;
        let jac_eigs = eigenvalues(&jac)?;
        let kernel_eigs = eigenvalues(&weights.kernels()[j].materialize()?)?;
        let mut layer_max_real = f64::NEG_INFINITY;
        let mut amp = 0.0f64;
        for (re, im) in &jac_eigs {
            layer_max_real = layer_max_real.max(*re);
            min_real = min_real.min(*re);
            let g = ((1.0 + h * re).powi(2) + (h * im).powi(2)).sqrt();
            amp = amp.max(g);
        }
        max_real = max_real.max(layer_max_real);
        max_amp = max_amp.max(amp);
        layers.push(LayerSpectrum {
            layer: j,
            kernel_eigenvalues: kernel_eigs,
            jacobian_eigenvalues: jac_eigs,
            max_real_part: layer_max_real,
            amplification: amp,
        });
    }
    let mut change = 0.0f64;
    for j in 1..weights.layers() {
        let d = weights.kernels()[j]
            .param()
            .sub(&weights.kernels()[j - 1].param());
        change = change.max(d.frob_norm() / h);
    }
    Ok(StabilityReport {
        layers,
        max_real_part: max_real,
        max_amplification: max_amp,
        kernel_change_rate: change,
        forward_stable: max_real <= REAL_PART_TOLERANCE,
        energy_preserving: max_real <= REAL_PART_TOLERANCE && min_real >= -REAL_PART_TOLERANCE,
    })
}

/// Write one CSV row per example per layer: `point_id,layer,t,y1,y2,...`.
pub fn write_phase_trace(trace: &PropagationTrace, h: f64, out: &mut dyn Write) -> Result<()> {
    let dim = trace.states[0].cols();
    let header: Vec<String> = (1..=dim).map(|d| format!("y{d}")).collect();
    writeln!(out, "point_id,layer,t,{}", header.join(","))?;
    for (j, state) in trace.states.iter().enumerate() {
        let t = j as f64 * h;
        for i in 0..state.rows() {
            let coords: Vec<String> = state.row(i).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{i},{j},{t},{}", coords.join(","))?;
        }
    }
    Ok(())
}

/// Sample the layer-`j` update rate `sigma(y K_j + b_j)` on a regular grid of
/// 2-D states and write `x1,x2,f1,f2` rows.
pub fn write_vector_field(
    weights: &NetworkWeights,
    layer: usize,
    lo: f64,
    hi: f64,
    steps: usize,
    out: &mut dyn Write,
) -> Result<()> {
    if weights.feature_dim() != 2 {
        return Err(Error::InvalidConfig(
            "vector field export requires 2-D features".into(),
        ));
    }
    writeln!(out, "x1,x2,f1,f2")?;
    let k = &weights.kernels()[layer];
    let b = weights.biases()[layer];
    let act = weights.activation();
    let denom = steps.max(2) - 1;
    for iy in 0..steps.max(2) {
        for ix in 0..steps.max(2) {
            let x1 = lo + (hi - lo) * ix as f64 / denom as f64;
            let x2 = lo + (hi - lo) * iy as f64 / denom as f64;
            let y = Matrix::from_vec(1, 2, vec![x1, x2]).unwrap();
            let f = act.eval(&k.apply(&y)?.add_scalar(b));
            writeln!(out, "{x1},{x2},{},{}", f.get(0, 0), f.get(0, 1))?;
        }
    }
    Ok(())
}

/// Write `layer,re,im` rows of the Jacobian spectra from a report.
pub fn write_spectra(report: &StabilityReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "layer,re,im")?;
    for layer in &report.layers {
        for (re, im) in &layer.jacobian_eigenvalues {
            writeln!(out, "{},{re},{im}", layer.layer)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::linop::LinearOperator;
    use crate::propagation::Scheme;

    fn net_from_kernel(k: Vec<f64>, h: f64, layers: usize) -> NetworkWeights {
        let kernel = LinearOperator::dense(Matrix::from_vec(2, 2, k).unwrap());
        NetworkWeights::new(
            Scheme::Euler,
            h,
            vec![kernel; layers],
            vec![0.0; layers],
            Activation::TanH,
        )
        .unwrap()
    }

    /// Closed-form eigenvalues of a 2x2 matrix for cross-checking.
    fn eig2(m: &Matrix) -> Vec<(f64, f64)> {
        let (a, b, c, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        let tr = a + d;
        let disc = (a - d) * (a - d) + 4.0 * b * c;
        let mut out = if disc >= 0.0 {
            let s = disc.sqrt();
            vec![((tr - s) / 2.0, 0.0), ((tr + s) / 2.0, 0.0)]
        } else {
            let s = (-disc).sqrt() / 2.0;
            vec![(tr / 2.0, -s), (tr / 2.0, s)]
        };
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out
    }

    #[test]
    fn eigenvalues_match_closed_form_2x2() {
        for k in [
            vec![2.0, -2.0, 0.0, 2.0],
            vec![-2.0, 0.0, 2.0, -2.0],
            vec![0.0, -1.0, 1.0, 0.0],
            vec![1.0, 2.0, 3.0, 4.0],
        ] {
            let m = Matrix::from_vec(2, 2, k).unwrap();
            let got = eigenvalues(&m).unwrap();
            let want = eig2(&m);
            for (g, w) in got.iter().zip(&want) {
                assert!((g.0 - w.0).abs() < 1e-10 && (g.1 - w.1).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn growth_kernel_is_flagged_unstable() {
        // Upper-triangular kernel with double eigenvalue +2.
        let net = net_from_kernel(vec![2.0, -2.0, 0.0, 2.0], 0.1, 3);
        let y0 = Matrix::zeros(1, 2);
        let report = assess(&net, &y0).unwrap();
        assert!(!report.forward_stable);
        assert!((report.layers[0].max_real_part - 2.0).abs() < 1e-10);
        assert!((report.max_amplification - 1.2).abs() < 1e-12);
    }

    #[test]
    fn decay_kernel_is_stable_but_dissipative() {
        let net = net_from_kernel(vec![-2.0, 0.0, 2.0, -2.0], 0.1, 3);
        let report = assess(&net, &Matrix::zeros(1, 2)).unwrap();
        assert!(report.forward_stable);
        assert!(!report.energy_preserving);
        assert!((report.layers[0].max_real_part + 2.0).abs() < 1e-10);
        assert!((report.max_amplification - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rotation_kernel_preserves_energy() {
        let net = net_from_kernel(vec![0.0, -1.0, 1.0, 0.0], 0.1, 3);
        let report = assess(&net, &Matrix::zeros(1, 2)).unwrap();
        assert!(report.forward_stable);
        assert!(report.energy_preserving);
        assert!(report.max_real_part.abs() < 1e-10);
        assert!((report.max_amplification - 1.01f64.sqrt()).abs() < 1e-12);
        // spectrum is +-i
        let eigs = &report.layers[0].jacobian_eigenvalues;
        assert!((eigs[0].1 + 1.0).abs() < 1e-10 && (eigs[1].1 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobian_at_origin_is_kernel_transpose() {
        // tanh'(0) = 1, so the state-dependent scaling drops out.
        let net = net_from_kernel(vec![1.0, 2.0, 3.0, 4.0], 0.05, 1);
        let jac = jacobian_at(&net, 0, &Matrix::zeros(1, 2)).unwrap();
        let want = net.kernels()[0].materialize().unwrap().transpose();
        assert!(jac.sub(&want).max_abs() < 1e-14);
    }

    #[test]
    fn kernel_change_rate_detects_rough_weights() {
        let k0 = LinearOperator::dense(Matrix::zeros(2, 2));
        let k1 = LinearOperator::dense(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let net = NetworkWeights::new(
            Scheme::Euler,
            0.1,
            vec![k0, k1],
            vec![0.0, 0.0],
            Activation::TanH,
        )
        .unwrap();
        let report = assess(&net, &Matrix::zeros(1, 2)).unwrap();
        // ||I||_F / h = sqrt(2) / 0.1
        assert!((report.kernel_change_rate - 2.0f64.sqrt() / 0.1).abs() < 1e-12);
    }

    #[test]
    fn csv_exports_are_well_formed() {
        let net = net_from_kernel(vec![0.0, -1.0, 1.0, 0.0], 0.1, 4);
        let y0 = Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let trace = forward(&net, &y0).unwrap();

        let mut buf = Vec::new();
        write_phase_trace(&trace, net.step(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "point_id,layer,t,y1,y2");
        assert_eq!(text.lines().count(), 1 + 2 * 5); // header + 2 points x 5 states

        let mut buf = Vec::new();
        let report = assess(&net, &y0).unwrap();
        write_spectra(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "layer,re,im");
        assert_eq!(text.lines().count(), 1 + 4 * 2);

        let mut buf = Vec::new();
        write_vector_field(&net, 0, -1.0, 1.0, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,f1,f2");
        assert_eq!(text.lines().count(), 1 + 9);
    }
}
