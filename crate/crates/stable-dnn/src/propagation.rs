//! Forward propagation schemes and their exact derivatives.
//!
//! Four schemes are supported, all interpreted as time discretizations on a
//! uniform grid with step `h = T/N`:
//!
//! - `Euler`: the residual step `Y_{j+1} = Y_j + h sigma(Y_j K_j + b_j)`.
//! - `Antisym`: the same step with the kernel wrapped in an antisymmetric
//!   view `(K - K^T - gamma I)/2`, forcing near-imaginary Jacobian spectra.
//! - `Leapfrog`: the conservative discretization of the second-order system
//!   `y'' = sigma(K^T y + b)` with the first step `Y_1 = 2 Y_0 + h^2 sigma(.)`.
//! - `Verlet`: the staggered integration of the augmented Hamiltonian pair
//!   `(y, z)` with `Z_{-1/2} = 0`; kernels may be rectangular.
//!
//! Reverse-mode (`vjp`) and forward-mode (`jvp`) derivatives are derived
//! directly from these update rules by backward/forward substitution through
//! the block-triangular sensitivity system, and are validated against finite
//! differences in the test suite. Gradients of structured kernels are
//! projected onto the parametrization by the operator's `grad_accumulate`.

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Antisym,
    Leapfrog,
    Verlet,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Euler => "euler",
            Scheme::Antisym => "antisym",
            Scheme::Leapfrog => "leapfrog",
            Scheme::Verlet => "verlet",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Scheme::Euler),
            "antisym" => Ok(Scheme::Antisym),
            "leapfrog" => Ok(Scheme::Leapfrog),
            "verlet" => Ok(Scheme::Verlet),
            other => Err(format!(
                "unknown scheme '{other}' (expected euler, antisym, leapfrog, or verlet)"
            )),
        }
    }
}

/// The decision variables of forward propagation: one linear operator and one
/// scalar bias per layer, a step size, and the activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkWeights {
    scheme: Scheme,
    step: f64,
    kernels: Vec<LinearOperator>,
    biases: Vec<f64>,
    activation: Activation,
}

impl NetworkWeights {
    pub fn new(
        scheme: Scheme,
        step: f64,
        kernels: Vec<LinearOperator>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidConfig(format!("step must be > 0, got {step}")));
        }
        if kernels.len() != biases.len() {
            return Err(Error::dim("weights biases", kernels.len(), biases.len()));
        }
        let (din, dout) = (kernels[0].in_dim(), kernels[0].out_dim());
        for k in &kernels {
            if k.in_dim() != din || k.out_dim() != dout {
                return Err(Error::dim(
                    "kernel shapes",
                    format!("{din}x{dout}"),
                    format!("{}x{}", k.in_dim(), k.out_dim()),
                ));
            }
        }
        match scheme {
            Scheme::Euler | Scheme::Leapfrog => {
                if din != dout {
                    return Err(Error::InvalidConfig(format!(
                        "{scheme} requires square kernels, got {din}x{dout}"
                    )));
                }
            }
            Scheme::Antisym => {
                if !kernels
                    .iter()
                    .all(|k| matches!(k, LinearOperator::Antisymmetric { .. }))
                {
                    return Err(Error::InvalidConfig(
                        "antisym scheme requires antisymmetric-view kernels".into(),
                    ));
                }
            }
            Scheme::Verlet => {}
        }
        Ok(NetworkWeights {
            scheme,
            step,
            kernels,
            biases,
            activation,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn layers(&self) -> usize {
        self.kernels.len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn kernels(&self) -> &[LinearOperator] {
        &self.kernels
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn gamma(&self) -> Option<f64> {
        self.kernels.first().and_then(|k| k.gamma())
    }

    /// Feature dimension at the input/output layer.
    pub fn feature_dim(&self) -> usize {
        self.kernels[0].in_dim()
    }

    /// Auxiliary (z) dimension for the Verlet scheme.
    pub fn aux_dim(&self) -> usize {
        self.kernels[0].out_dim()
    }

    /// Current parameters as a flat algebraic vector (kernel parameter blocks
    /// plus biases).
    pub fn params(&self) -> ParamVec {
        ParamVec {
            kernels: self.kernels.iter().map(|k| k.param()).collect(),
            biases: self.biases.clone(),
        }
    }

    /// Same architecture with replaced parameters.
    pub fn with_params(&self, params: &ParamVec) -> Result<Self> {
        if params.kernels.len() != self.kernels.len() || params.biases.len() != self.biases.len() {
            return Err(Error::dim(
                "with_params",
                self.kernels.len(),
                params.kernels.len(),
            ));
        }
        let kernels = self
            .kernels
            .iter()
            .zip(&params.kernels)
            .map(|(k, p)| k.with_param(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        NetworkWeights::new(
            self.scheme,
            self.step,
            kernels,
            params.biases.clone(),
            self.activation,
        )
    }

    /// Same parameters with a different step size.
    pub fn with_step(&self, step: f64) -> Result<Self> {
        NetworkWeights::new(
            self.scheme,
            step,
            self.kernels.clone(),
            self.biases.clone(),
            self.activation,
        )
    }
}

/// Per-layer parameter blocks with vector-space operations; the coordinate
/// system for gradients, Gauss-Newton directions, and PCG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVec {
    pub kernels: Vec<Matrix>,
    pub biases: Vec<f64>,
}

impl ParamVec {
    pub fn zeros_like(other: &ParamVec) -> ParamVec {
        ParamVec {
            kernels: other
                .kernels
                .iter()
                .map(|k| Matrix::zeros(k.rows(), k.cols()))
                .collect(),
            biases: vec![0.0; other.biases.len()],
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &ParamVec) {
        for (a, b) in self.kernels.iter_mut().zip(&other.kernels) {
            a.axpy(alpha, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for k in &mut self.kernels {
            k.scale(alpha);
        }
        for b in &mut self.biases {
            *b *= alpha;
        }
    }

    pub fn dot(&self, other: &ParamVec) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.kernels.iter().zip(&other.kernels) {
            acc += a.dot(b);
        }
        for (a, b) in self.biases.iter().zip(&other.biases) {
            acc += a * b;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn flat_len(&self) -> usize {
        self.kernels.iter().map(|k| k.as_slice().len()).sum::<usize>() + self.biases.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for k in &self.kernels {
            out.extend_from_slice(k.as_slice());
        }
        out.extend_from_slice(&self.biases);
        out
    }

    pub fn from_flat(template: &ParamVec, flat: &[f64]) -> Result<ParamVec> {
        if flat.len() != template.flat_len() {
            return Err(Error::dim("ParamVec::from_flat", template.flat_len(), flat.len()));
        }
        let mut out = ParamVec::zeros_like(template);
        let mut off = 0;
        for k in &mut out.kernels {
            let len = k.as_slice().len();
            k.as_mut_slice().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        out.biases.copy_from_slice(&flat[off..]);
        Ok(out)
    }
}

/// All hidden-layer states retained for derivative computation.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    /// `Y_0 .. Y_N`.
    pub states: Vec<Matrix>,
    /// Verlet only: `Z_{1/2} .. Z_{N-1/2}` (index `j` holds `Z_{j+1/2}`;
    /// `Z_{-1/2} = 0` is implicit).
    pub z_half: Vec<Matrix>,
}

impl PropagationTrace {
    pub fn output(&self) -> &Matrix {
        self.states.last().expect("nonempty trace")
    }
}

/// Gradient of a scalar functional of the output layer with respect to every
/// kernel parameter block, bias, and the input features.
#[derive(Debug, Clone)]
pub struct WeightGradient {
    pub params: ParamVec,
    pub input_grad: Matrix,
}

fn check_input(weights: &NetworkWeights, y0: &Matrix) -> Result<()> {
    if y0.cols() != weights.feature_dim() {
        return Err(Error::dim("forward input", weights.feature_dim(), y0.cols()));
    }
    Ok(())
}

fn check_finite(m: &Matrix, layer: usize) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::Divergence { layer });
    }
    Ok(())
}

/// Run the scheme's recurrence, retaining every state.
pub fn forward(weights: &NetworkWeights, y0: &Matrix) -> Result<PropagationTrace> {
    check_input(weights, y0)?;
    let n = weights.layers();
    let h = weights.step;
    let act = weights.activation;
    let mut states = Vec::with_capacity(n + 1);
    let mut z_half = Vec::new();
    states.push(y0.clone());
    match weights.scheme {
        Scheme::Euler | Scheme::Antisym => {
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&states[j])?
                    .add_scalar(weights.biases[j]);
                let mut next = states[j].clone();
                next.axpy(h, &act.eval(&a));
                check_finite(&next, j + 1)?;
                states.push(next);
            }
        }
        Scheme::Leapfrog => {
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&states[j])?
                    .add_scalar(weights.biases[j]);
                let mut next = states[j].scaled(2.0);
                if j >= 1 {
                    next.axpy(-1.0, &states[j - 1]);
                }
                next.axpy(h * h, &act.eval(&a));
                check_finite(&next, j + 1)?;
                states.push(next);
            }
        }
        Scheme::Verlet => {
            let mut z = Matrix::zeros(y0.rows(), weights.aux_dim());
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&states[j])?
                    .add_scalar(weights.biases[j]);
                z.axpy(-h, &act.eval(&a));
                let b = weights.kernels[j]
                    .apply_transpose(&z)?
                    .add_scalar(weights.biases[j]);
                let mut next = states[j].clone();
                next.axpy(h, &act.eval(&b));
                check_finite(&next, j + 1)?;
                z_half.push(z.clone());
                states.push(next);
            }
        }
    }
    Ok(PropagationTrace { states, z_half })
}

/// Output layer only, without storing intermediate states. Used for cheap
/// objective evaluations (line searches, validation error) on large batches.
pub fn output(weights: &NetworkWeights, y0: &Matrix) -> Result<Matrix> {
    check_input(weights, y0)?;
    let n = weights.layers();
    let h = weights.step;
    let act = weights.activation;
    match weights.scheme {
        Scheme::Euler | Scheme::Antisym => {
            let mut y = y0.clone();
            for j in 0..n {
                let a = weights.kernels[j].apply(&y)?.add_scalar(weights.biases[j]);
                y.axpy(h, &act.eval(&a));
                check_finite(&y, j + 1)?;
            }
            Ok(y)
        }
        Scheme::Leapfrog => {
            let mut prev = Matrix::zeros(0, 0);
            let mut y = y0.clone();
            for j in 0..n {
                let a = weights.kernels[j].apply(&y)?.add_scalar(weights.biases[j]);
                let mut next = y.scaled(2.0);
                if j >= 1 {
                    next.axpy(-1.0, &prev);
                }
                next.axpy(h * h, &act.eval(&a));
                check_finite(&next, j + 1)?;
                prev = y;
                y = next;
            }
            Ok(y)
        }
        Scheme::Verlet => {
            let mut z = Matrix::zeros(y0.rows(), weights.aux_dim());
            let mut y = y0.clone();
            for j in 0..n {
                let a = weights.kernels[j].apply(&y)?.add_scalar(weights.biases[j]);
                z.axpy(-h, &act.eval(&a));
                let b = weights.kernels[j]
                    .apply_transpose(&z)?
                    .add_scalar(weights.biases[j]);
                y.axpy(h, &act.eval(&b));
                check_finite(&y, j + 1)?;
            }
            Ok(y)
        }
    }
}

fn check_trace(weights: &NetworkWeights, trace: &PropagationTrace) -> Result<()> {
    let n = weights.layers();
    if trace.states.len() != n + 1 {
        return Err(Error::ModelMismatch(format!(
            "trace has {} states for a {n}-layer network",
            trace.states.len()
        )));
    }
    if weights.scheme == Scheme::Verlet && trace.z_half.len() != n {
        return Err(Error::ModelMismatch(format!(
            "verlet trace has {} auxiliary states for {n} layers",
            trace.z_half.len()
        )));
    }
    Ok(())
}

/// Gradient of `<cotangent, Y_N>` with respect to all kernel parameters,
/// biases, and `Y_0`, by backward substitution through the sensitivity system.
pub fn vjp(
    weights: &NetworkWeights,
    trace: &PropagationTrace,
    cotangent: &Matrix,
) -> Result<WeightGradient> {
    check_trace(weights, trace)?;
    if cotangent.rows() != trace.states[0].rows() || cotangent.cols() != weights.feature_dim() {
        return Err(Error::dim(
            "vjp cotangent",
            format!("{}x{}", trace.states[0].rows(), weights.feature_dim()),
            format!("{}x{}", cotangent.rows(), cotangent.cols()),
        ));
    }
    let n = weights.layers();
    let h = weights.step;
    let act = weights.activation;
    let mut grads = ParamVec::zeros_like(&weights.params());

    match weights.scheme {
        Scheme::Euler | Scheme::Antisym => {
            let mut lam = cotangent.clone();
            for j in (0..n).rev() {
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let p = lam.hadamard(&act.deriv(&a)).scaled(h);
                weights.kernels[j].grad_accumulate(&trace.states[j], &p, 1.0, &mut grads.kernels[j])?;
                grads.biases[j] += p.sum();
                lam.axpy(1.0, &weights.kernels[j].apply_transpose(&p)?);
            }
            Ok(WeightGradient {
                params: grads,
                input_grad: lam,
            })
        }
        Scheme::Leapfrog => {
            // lam[j] accumulates dL/dY_j; the two-step recurrence couples
            // three adjacent layers.
            let s = cotangent.rows();
            let dim = weights.feature_dim();
            let mut lam: Vec<Matrix> = (0..=n).map(|_| Matrix::zeros(s, dim)).collect();
            lam[n] = cotangent.clone();
            for j in (0..n).rev() {
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let p = lam[j + 1].hadamard(&act.deriv(&a)).scaled(h * h);
                weights.kernels[j].grad_accumulate(&trace.states[j], &p, 1.0, &mut grads.kernels[j])?;
                grads.biases[j] += p.sum();
                let carry = lam[j + 1].scaled(2.0);
                lam[j].axpy(1.0, &carry);
                lam[j].axpy(1.0, &weights.kernels[j].apply_transpose(&p)?);
                if j >= 1 {
                    let back = lam[j + 1].clone();
                    lam[j - 1].axpy(-1.0, &back);
                }
            }
            Ok(WeightGradient {
                params: grads,
                input_grad: lam[0].clone(),
            })
        }
        Scheme::Verlet => {
            let s = cotangent.rows();
            let m = weights.aux_dim();
            let mut lam = cotangent.clone();
            let mut zeta = Matrix::zeros(s, m);
            for j in (0..n).rev() {
                // y-update: Y_{j+1} = Y_j + h sigma(Z_{j+1/2} K_j^T + b_j)
                let b = weights.kernels[j]
                    .apply_transpose(&trace.z_half[j])?
                    .add_scalar(weights.biases[j]);
                let q = lam.hadamard(&act.deriv(&b)).scaled(h);
                zeta.axpy(1.0, &weights.kernels[j].apply(&q)?);
                // adjoint of the transposed action: swap the argument roles
                weights.kernels[j].grad_accumulate(&q, &trace.z_half[j], 1.0, &mut grads.kernels[j])?;
                grads.biases[j] += q.sum();
                // z-update: Z_{j+1/2} = Z_{j-1/2} - h sigma(Y_j K_j + b_j)
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let p = zeta.hadamard(&act.deriv(&a)).scaled(-h);
                lam.axpy(1.0, &weights.kernels[j].apply_transpose(&p)?);
                weights.kernels[j].grad_accumulate(&trace.states[j], &p, 1.0, &mut grads.kernels[j])?;
                grads.biases[j] += p.sum();
                // zeta carries over to Z_{j-1/2}; at j=0 it is discarded
                // because Z_{-1/2} = 0 is fixed.
            }
            Ok(WeightGradient {
                params: grads,
                input_grad: lam,
            })
        }
    }
}

/// Directional derivative of `Y_N` in the parameters (forward substitution
/// through the sensitivity system). Adjoint-consistent with [`vjp`].
pub fn jvp(
    weights: &NetworkWeights,
    trace: &PropagationTrace,
    tangent: &ParamVec,
) -> Result<Matrix> {
    check_trace(weights, trace)?;
    let n = weights.layers();
    let h = weights.step;
    let act = weights.activation;
    let s = trace.states[0].rows();
    let dim = weights.feature_dim();

    match weights.scheme {
        Scheme::Euler | Scheme::Antisym => {
            let mut dy = Matrix::zeros(s, dim);
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let mut da = weights.kernels[j].apply(&dy)?;
                da.axpy(
                    1.0,
                    &weights.kernels[j].tangent_apply(&trace.states[j], &tangent.kernels[j])?,
                );
                let da = da.add_scalar(tangent.biases[j]);
                dy.axpy(h, &da.hadamard(&act.deriv(&a)));
            }
            Ok(dy)
        }
        Scheme::Leapfrog => {
            let mut dy_prev = Matrix::zeros(s, dim);
            let mut dy = Matrix::zeros(s, dim);
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let mut da = weights.kernels[j].apply(&dy)?;
                da.axpy(
                    1.0,
                    &weights.kernels[j].tangent_apply(&trace.states[j], &tangent.kernels[j])?,
                );
                let da = da.add_scalar(tangent.biases[j]);
                let mut next = dy.scaled(2.0);
                if j >= 1 {
                    next.axpy(-1.0, &dy_prev);
                }
                next.axpy(h * h, &da.hadamard(&act.deriv(&a)));
                dy_prev = dy;
                dy = next;
            }
            Ok(dy)
        }
        Scheme::Verlet => {
            let m = weights.aux_dim();
            let mut dy = Matrix::zeros(s, dim);
            let mut dz = Matrix::zeros(s, m);
            for j in 0..n {
                let a = weights.kernels[j]
                    .apply(&trace.states[j])?
                    .add_scalar(weights.biases[j]);
                let mut da = weights.kernels[j].apply(&dy)?;
                da.axpy(
                    1.0,
                    &weights.kernels[j].tangent_apply(&trace.states[j], &tangent.kernels[j])?,
                );
                let da = da.add_scalar(tangent.biases[j]);
                dz.axpy(-h, &da.hadamard(&act.deriv(&a)));

                let b = weights.kernels[j]
                    .apply_transpose(&trace.z_half[j])?
                    .add_scalar(weights.biases[j]);
                let mut db = weights.kernels[j].apply_transpose(&dz)?;
                db.axpy(
                    1.0,
                    &weights.kernels[j]
                        .tangent_apply_transpose(&trace.z_half[j], &tangent.kernels[j])?,
                );
                let db = db.add_scalar(tangent.biases[j]);
                dy.axpy(h, &db.hadamard(&act.deriv(&b)));
            }
            Ok(dy)
        }
    }
}

/// Gauss-Newton curvature matvec `J^T H J v`, where `J` is the sensitivity of
/// the output layer in the parameters and `H` is the (PSD) loss curvature in
/// output space supplied as a callback.
pub fn gauss_newton_matvec(
    weights: &NetworkWeights,
    trace: &PropagationTrace,
    loss_curvature: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
    direction: &ParamVec,
) -> Result<ParamVec> {
    let jv = jvp(weights, trace, direction)?;
    let hjv = loss_curvature(&jv)?;
    let grad = vjp(weights, trace, &hjv)?;
    Ok(grad.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::LinearOperator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k0_op() -> LinearOperator {
        LinearOperator::dense(Matrix::from_vec(2, 2, vec![0.0, -1.0, 1.0, 0.0]).unwrap())
    }

    fn single_layer(scheme: Scheme, op: LinearOperator, h: f64) -> NetworkWeights {
        NetworkWeights::new(scheme, h, vec![op], vec![0.0], Activation::TanH).unwrap()
    }

    #[test]
    fn euler_zero_kernel_is_identity_map() {
        let w = single_layer(
            Scheme::Euler,
            LinearOperator::dense(Matrix::zeros(2, 2)),
            0.1,
        );
        let y0 = Matrix::from_vec(2, 2, vec![0.3, -0.7, 1.5, 2.0]).unwrap();
        let t = forward(&w, &y0).unwrap();
        assert_eq!(t.output().as_slice(), y0.as_slice());
    }

    #[test]
    fn euler_single_step_hand_value() {
        let w = single_layer(Scheme::Euler, k0_op(), 0.1);
        let y0 = Matrix::from_vec(1, 2, vec![0.1, 0.1]).unwrap();
        let t = forward(&w, &y0).unwrap();
        let y1 = t.output();
        assert!((y1.get(0, 0) - (0.1 + 0.1 * 0.1f64.tanh())).abs() < 1e-15);
        assert!((y1.get(0, 1) - (0.1 + 0.1 * (-0.1f64).tanh())).abs() < 1e-15);
        assert!((y1.get(0, 0) - 0.1099668).abs() < 1e-7);
        assert!((y1.get(0, 1) - 0.0900332).abs() < 1e-7);
    }

    #[test]
    fn verlet_origin_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = single_layer(
            Scheme::Verlet,
            LinearOperator::dense(Matrix::random_normal(2, 3, 1.0, &mut rng)),
            0.1,
        );
        let y0 = Matrix::zeros(1, 2);
        let t = forward(&w, &y0).unwrap();
        assert_eq!(t.output().max_abs(), 0.0);
        assert_eq!(t.z_half[0].max_abs(), 0.0);
    }

    #[test]
    fn output_matches_forward_for_all_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scheme in [Scheme::Euler, Scheme::Antisym, Scheme::Leapfrog, Scheme::Verlet] {
            let w = random_net(scheme, 3, &mut rng);
            let y0 = Matrix::random_normal(4, 2, 0.5, &mut rng);
            let t = forward(&w, &y0).unwrap();
            let out = output(&w, &y0).unwrap();
            assert_eq!(t.output().as_slice(), out.as_slice(), "{scheme}");
        }
    }

    #[test]
    fn vjp_bias_gradient_at_zero_point() {
        // K = 0, b = 0, tanh, one Euler layer: d<E, Y1>/db = h * sum(E).
        let w = single_layer(
            Scheme::Euler,
            LinearOperator::dense(Matrix::zeros(2, 2)),
            0.1,
        );
        let y0 = Matrix::zeros(3, 2);
        let t = forward(&w, &y0).unwrap();
        let e = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = vjp(&w, &t, &e).unwrap();
        assert!((g.params.biases[0] - 0.1 * 21.0).abs() < 1e-14);
    }

    #[test]
    fn vjp_zero_cotangent_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scheme in [Scheme::Euler, Scheme::Antisym, Scheme::Leapfrog, Scheme::Verlet] {
            let w = random_net(scheme, 2, &mut rng);
            let y0 = Matrix::random_normal(3, 2, 0.5, &mut rng);
            let t = forward(&w, &y0).unwrap();
            let g = vjp(&w, &t, &Matrix::zeros(3, 2)).unwrap();
            assert_eq!(g.params.norm(), 0.0);
            assert_eq!(g.input_grad.max_abs(), 0.0);
        }
    }

    pub(crate) fn random_net(scheme: Scheme, n_layers: usize, rng: &mut ChaCha8Rng) -> NetworkWeights {
        let kernels: Vec<LinearOperator> = (0..n_layers)
            .map(|_| {
                let base = Matrix::random_normal(2, 2, 0.8, rng);
                match scheme {
                    Scheme::Antisym => {
                        LinearOperator::antisymmetric(LinearOperator::dense(base), 0.05).unwrap()
                    }
                    _ => LinearOperator::dense(base),
                }
            })
            .collect();
        let biases: Vec<f64> = (0..n_layers).map(|i| 0.1 * (i as f64) - 0.05).collect();
        NetworkWeights::new(scheme, 0.2, kernels, biases, Activation::TanH).unwrap()
    }

    /// Independent finite-difference oracle for d<E, Y_N>/dparams.
    pub(crate) fn fd_gradient(
        weights: &NetworkWeights,
        y0: &Matrix,
        cot: &Matrix,
        step: f64,
    ) -> ParamVec {
        let p0 = weights.params();
        let mut grad = ParamVec::zeros_like(&p0);
        let flat = p0.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += step;
            let mut fm = flat.clone();
            fm[i] -= step;
            let wp = weights
                .with_params(&ParamVec::from_flat(&p0, &fp).unwrap())
                .unwrap();
            let wm = weights
                .with_params(&ParamVec::from_flat(&p0, &fm).unwrap())
                .unwrap();
            let fp_val = output(&wp, y0).unwrap().dot(cot);
            let fm_val = output(&wm, y0).unwrap().dot(cot);
            let g = (fp_val - fm_val) / (2.0 * step);
            let mut gflat = grad.to_flat();
            gflat[i] = g;
            grad = ParamVec::from_flat(&p0, &gflat).unwrap();
        }
        grad
    }

    #[test]
    fn vjp_matches_finite_differences_all_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scheme in [Scheme::Euler, Scheme::Antisym, Scheme::Leapfrog, Scheme::Verlet] {
            for n_layers in [1usize, 3] {
                let w = random_net(scheme, n_layers, &mut rng);
                let y0 = Matrix::random_normal(4, 2, 0.5, &mut rng);
                let cot = Matrix::random_normal(4, 2, 1.0, &mut rng);
                let t = forward(&w, &y0).unwrap();
                let an = vjp(&w, &t, &cot).unwrap();
                let fd = fd_gradient(&w, &y0, &cot, 1e-6);
                let an_flat = an.params.to_flat();
                let fd_flat = fd.to_flat();
                for (i, (a, f)) in an_flat.iter().zip(&fd_flat).enumerate() {
                    let denom = f.abs().max(1e-4);
                    assert!(
                        (a - f).abs() / denom <= 1e-5,
                        "{scheme} N={n_layers} entry {i}: analytic {a} vs fd {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn vjp_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for scheme in [Scheme::Euler, Scheme::Verlet, Scheme::Leapfrog] {
            let w = random_net(scheme, 2, &mut rng);
            let y0 = Matrix::random_normal(3, 2, 0.5, &mut rng);
            let cot = Matrix::random_normal(3, 2, 1.0, &mut rng);
            let t = forward(&w, &y0).unwrap();
            let g = vjp(&w, &t, &cot).unwrap();
            let eps = 1e-6;
            for i in 0..3 {
                for j in 0..2 {
                    let mut yp = y0.clone();
                    yp.set(i, j, yp.get(i, j) + eps);
                    let mut ym = y0.clone();
                    ym.set(i, j, ym.get(i, j) - eps);
                    let fd = (output(&w, &yp).unwrap().dot(&cot)
                        - output(&w, &ym).unwrap().dot(&cot))
                        / (2.0 * eps);
                    let an = g.input_grad.get(i, j);
                    assert!(
                        (an - fd).abs() / fd.abs().max(1e-4) <= 1e-5,
                        "{scheme} input grad ({i},{j}): {an} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn jvp_vjp_adjoint_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for scheme in [Scheme::Euler, Scheme::Antisym, Scheme::Leapfrog, Scheme::Verlet] {
            let w = random_net(scheme, 3, &mut rng);
            let y0 = Matrix::random_normal(4, 2, 0.5, &mut rng);
            let t = forward(&w, &y0).unwrap();
            let p0 = w.params();
            for _ in 0..50 {
                let tangent = ParamVec::from_flat(
                    &p0,
                    &Matrix::random_normal(1, p0.flat_len(), 1.0, &mut rng)
                        .as_slice()
                        .to_vec(),
                )
                .unwrap();
                let cot = Matrix::random_normal(4, 2, 1.0, &mut rng);
                let lhs = jvp(&w, &t, &tangent).unwrap().dot(&cot);
                let rhs = vjp(&w, &t, &cot).unwrap().params.dot(&tangent);
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                    "{scheme}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn jvp_zero_tangent_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_net(Scheme::Verlet, 3, &mut rng);
        let y0 = Matrix::random_normal(4, 2, 0.5, &mut rng);
        let t = forward(&w, &y0).unwrap();
        let zero = ParamVec::zeros_like(&w.params());
        assert_eq!(jvp(&w, &t, &zero).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn jvp_bias_only_zero_kernel() {
        // K = 0 net: each layer contributes h * sigma'(b_acc=0) * db broadcast.
        let n = 3;
        let kernels = (0..n)
            .map(|_| LinearOperator::dense(Matrix::zeros(2, 2)))
            .collect();
        let w = NetworkWeights::new(Scheme::Euler, 0.1, kernels, vec![0.0; n], Activation::TanH)
            .unwrap();
        let y0 = Matrix::zeros(2, 2);
        let t = forward(&w, &y0).unwrap();
        let mut tangent = ParamVec::zeros_like(&w.params());
        tangent.biases = vec![1.0, 2.0, 3.0];
        let dy = jvp(&w, &t, &tangent).unwrap();
        // dY = h * (1 + 2 + 3) broadcast over all entries
        for &v in dy.as_slice() {
            assert!((v - 0.6).abs() < 1e-14);
        }
    }

    #[test]
    fn gauss_newton_matvec_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for scheme in [Scheme::Euler, Scheme::Verlet] {
            let w = random_net(scheme, 2, &mut rng);
            let y0 = Matrix::random_normal(4, 2, 0.5, &mut rng);
            let t = forward(&w, &y0).unwrap();
            let p0 = w.params();
            let mut ident = |m: &Matrix| -> Result<Matrix> { Ok(m.clone()) };
            for _ in 0..10 {
                let v = ParamVec::from_flat(
                    &p0,
                    &Matrix::random_normal(1, p0.flat_len(), 1.0, &mut rng)
                        .as_slice()
                        .to_vec(),
                )
                .unwrap();
                let u = ParamVec::from_flat(
                    &p0,
                    &Matrix::random_normal(1, p0.flat_len(), 1.0, &mut rng)
                        .as_slice()
                        .to_vec(),
                )
                .unwrap();
                let gv = gauss_newton_matvec(&w, &t, &mut ident, &v).unwrap();
                let gu = gauss_newton_matvec(&w, &t, &mut ident, &u).unwrap();
                let s1 = gv.dot(&u);
                let s2 = gu.dot(&v);
                assert!((s1 - s2).abs() <= 1e-9 * s1.abs().max(1.0), "{scheme}");
                assert!(gv.dot(&v) >= -1e-10);
            }
        }
    }

    #[test]
    fn divergence_reports_layer() {
        // Strong positive eigenvalues with a huge step blow up quickly; ReLU
        // keeps the growth unbounded.
        let k = LinearOperator::dense(Matrix::from_vec(2, 2, vec![1e8, 0.0, 0.0, 1e8]).unwrap());
        let kernels = vec![k.clone(), k.clone(), k];
        let w = NetworkWeights::new(Scheme::Euler, 1e300, kernels, vec![0.0; 3], Activation::ReLU)
            .unwrap();
        let y0 = Matrix::from_vec(1, 2, vec![1e8, 1e8]).unwrap();
        match forward(&w, &y0) {
            Err(Error::Divergence { layer }) => assert!(layer >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
