//! Linear operators acting on row-stacked feature matrices.
//!
//! The convention everywhere is right multiplication: an operator with
//! `in_dim = n` and `out_dim = m` maps an `s x n` matrix `X` to `X * M`
//! (`s x m`), where `M` is the materialized `n x m` matrix of the operator.
//!
//! Besides the plain action, every variant exposes its trainable parameter
//! block as a dense matrix together with the directional derivative of the
//! action in that parameter (`tangent_apply`) and its adjoint
//! (`grad_accumulate`). Structured variants project gradients back onto
//! their parametrization:
//!
//! - `Antisymmetric` materializes `(K - K^T - gamma*I) / 2`,
//! - `NegDef` materializes `-C^T C` (symmetric negative semidefinite),
//! - `Conv3x3` is a zero-padded cross-correlation, fully connected across
//!   channels, whose parameters are the per channel-pair 3x3 stencils,
//! - `GridLaplacian` is the parameter-free 5-point Neumann Laplacian used
//!   for spatial regularization.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearOperator {
    Dense {
        weight: Matrix,
    },
    Conv3x3 {
        channels_in: usize,
        channels_out: usize,
        height: usize,
        width: usize,
        /// `(channels_out * channels_in) x 9` stencil bank, row `co*channels_in + ci`,
        /// column `(dy+1)*3 + (dx+1)`.
        stencils: Matrix,
    },
    Antisymmetric {
        base: Box<LinearOperator>,
        gamma: f64,
    },
    NegDef {
        base: Matrix,
    },
    GridLaplacian {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl LinearOperator {
    pub fn dense(weight: Matrix) -> Self {
        LinearOperator::Dense { weight }
    }

    pub fn conv3x3(
        channels_in: usize,
        channels_out: usize,
        height: usize,
        width: usize,
        stencils: Matrix,
    ) -> Result<Self> {
        if stencils.rows() != channels_out * channels_in || stencils.cols() != 9 {
            return Err(Error::dim(
                "conv3x3 stencils",
                format!("{}x9", channels_out * channels_in),
                format!("{}x{}", stencils.rows(), stencils.cols()),
            ));
        }
        Ok(LinearOperator::Conv3x3 {
            channels_in,
            channels_out,
            height,
            width,
            stencils,
        })
    }

    pub fn antisymmetric(base: LinearOperator, gamma: f64) -> Result<Self> {
        if base.in_dim() != base.out_dim() {
            return Err(Error::dim(
                "antisymmetric base",
                "square operator",
                format!("{}x{}", base.in_dim(), base.out_dim()),
            ));
        }
        if !(gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(LinearOperator::Antisymmetric {
            base: Box::new(base),
            gamma,
        })
    }

    pub fn negdef(base: Matrix) -> Result<Self> {
        if base.rows() != base.cols() {
            return Err(Error::dim(
                "negdef base",
                "square matrix",
                format!("{}x{}", base.rows(), base.cols()),
            ));
        }
        Ok(LinearOperator::NegDef { base })
    }

    pub fn grid_laplacian(channels: usize, height: usize, width: usize) -> Self {
        LinearOperator::GridLaplacian {
            channels,
            height,
            width,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearOperator::Dense { weight } => weight.rows(),
            LinearOperator::Conv3x3 {
                channels_in,
                height,
                width,
                ..
            } => channels_in * height * width,
            LinearOperator::Antisymmetric { base, .. } => base.in_dim(),
            LinearOperator::NegDef { base } => base.rows(),
            LinearOperator::GridLaplacian {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearOperator::Dense { weight } => weight.cols(),
            LinearOperator::Conv3x3 {
                channels_out,
                height,
                width,
                ..
            } => channels_out * height * width,
            LinearOperator::Antisymmetric { base, .. } => base.out_dim(),
            LinearOperator::NegDef { base } => base.rows(),
            LinearOperator::GridLaplacian {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_square(&self) -> bool {
        self.in_dim() == self.out_dim()
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            LinearOperator::Antisymmetric { gamma, .. } => Some(*gamma),
            _ => None,
        }
    }

    /// `X * M` for the materialized matrix `M`.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim("operator apply", self.in_dim(), x.cols()));
        }
        Ok(match self {
            LinearOperator::Dense { weight } => x.matmul(weight)?,
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                stencils,
            } => conv_apply(stencils, *channels_in, *channels_out, *height, *width, x, false),
            LinearOperator::Antisymmetric { base, gamma } => {
                let mut out = base.apply(x)?;
                out.axpy(-1.0, &base.apply_transpose(x)?);
                out.scale(0.5);
                out.axpy(-0.5 * gamma, x);
                out
            }
            LinearOperator::NegDef { base } => {
                // X * (-C^T C) = -(X C^T) C
                let mut out = x.matmul_nt(base)?.matmul(base)?;
                out.scale(-1.0);
                out
            }
            LinearOperator::GridLaplacian {
                channels,
                height,
                width,
            } => laplacian_apply(*channels, *height, *width, x),
        })
    }

    /// `X * M^T`.
    pub fn apply_transpose(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.out_dim() {
            return Err(Error::dim("operator apply_transpose", self.out_dim(), x.cols()));
        }
        Ok(match self {
            LinearOperator::Dense { weight } => x.matmul_nt(weight)?,
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                stencils,
            } => conv_apply(stencils, *channels_in, *channels_out, *height, *width, x, true),
            LinearOperator::Antisymmetric { base, gamma } => {
                // M^T = (K^T - K - gamma I)/2 = -M - gamma I
                let mut out = base.apply_transpose(x)?;
                out.axpy(-1.0, &base.apply(x)?);
                out.scale(0.5);
                out.axpy(-0.5 * gamma, x);
                out
            }
            LinearOperator::NegDef { .. } | LinearOperator::GridLaplacian { .. } => {
                self.apply(x)?
            }
        })
    }

    /// The trainable parameter block. Empty for parameter-free operators.
    pub fn param(&self) -> Matrix {
        match self {
            LinearOperator::Dense { weight } => weight.clone(),
            LinearOperator::Conv3x3 { stencils, .. } => stencils.clone(),
            LinearOperator::Antisymmetric { base, .. } => base.param(),
            LinearOperator::NegDef { base } => base.clone(),
            LinearOperator::GridLaplacian { .. } => Matrix::zeros(0, 0),
        }
    }

    /// Same structure with the parameter block replaced.
    pub fn with_param(&self, param: Matrix) -> Result<Self> {
        let (pr, pc) = {
            let p = self.param();
            (p.rows(), p.cols())
        };
        if param.rows() != pr || param.cols() != pc {
            return Err(Error::dim(
                "with_param",
                format!("{pr}x{pc}"),
                format!("{}x{}", param.rows(), param.cols()),
            ));
        }
        Ok(match self {
            LinearOperator::Dense { .. } => LinearOperator::Dense { weight: param },
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                ..
            } => LinearOperator::Conv3x3 {
                channels_in: *channels_in,
                channels_out: *channels_out,
                height: *height,
                width: *width,
                stencils: param,
            },
            LinearOperator::Antisymmetric { base, gamma } => LinearOperator::Antisymmetric {
                base: Box::new(base.with_param(param)?),
                gamma: *gamma,
            },
            LinearOperator::NegDef { .. } => LinearOperator::NegDef { base: param },
            LinearOperator::GridLaplacian { .. } => self.clone(),
        })
    }

    /// Directional derivative of `apply` in the parameter: `d/dt X * M(p + t dp)`.
    pub fn tangent_apply(&self, x: &Matrix, dp: &Matrix) -> Result<Matrix> {
        Ok(match self {
            LinearOperator::Dense { .. } => x.matmul(dp)?,
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                ..
            } => conv_apply(dp, *channels_in, *channels_out, *height, *width, x, false),
            LinearOperator::Antisymmetric { base, .. } => {
                let mut out = base.tangent_apply(x, dp)?;
                out.axpy(-1.0, &base.tangent_apply_transpose(x, dp)?);
                out.scale(0.5);
                out
            }
            LinearOperator::NegDef { base } => {
                // d(-C^T C) = -(dC^T C + C^T dC)
                let mut out = x.matmul_nt(dp)?.matmul(base)?;
                out.axpy(1.0, &x.matmul_nt(base)?.matmul(dp)?);
                out.scale(-1.0);
                out
            }
            LinearOperator::GridLaplacian { .. } => Matrix::zeros(x.rows(), self.out_dim()),
        })
    }

    /// Directional derivative of `apply_transpose` in the parameter.
    pub fn tangent_apply_transpose(&self, x: &Matrix, dp: &Matrix) -> Result<Matrix> {
        Ok(match self {
            LinearOperator::Dense { .. } => x.matmul_nt(dp)?,
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                ..
            } => conv_apply(dp, *channels_in, *channels_out, *height, *width, x, true),
            LinearOperator::Antisymmetric { .. } => {
                // dM^T = -dM (the gamma term carries no parameter)
                let mut out = self.tangent_apply(x, dp)?;
                out.scale(-1.0);
                out
            }
            LinearOperator::NegDef { .. } => self.tangent_apply(x, dp)?,
            LinearOperator::GridLaplacian { .. } => Matrix::zeros(x.rows(), self.in_dim()),
        })
    }

    /// Accumulate `scale * dL/dparam` into `acc`, where `L = <p, tangent_apply(x, .)>`.
    ///
    /// The adjoint identity `<q, tangent_apply_transpose(z, dp)> = <z, tangent_apply(q, dp)>`
    /// means the transposed action is covered by swapping the arguments.
    pub fn grad_accumulate(&self, x: &Matrix, p: &Matrix, scale: f64, acc: &mut Matrix) -> Result<()> {
        match self {
            LinearOperator::Dense { .. } => {
                let g = x.matmul_tn(p)?;
                acc.axpy(scale, &g);
            }
            LinearOperator::Conv3x3 {
                channels_in,
                channels_out,
                height,
                width,
                ..
            } => {
                conv_grad_accumulate(*channels_in, *channels_out, *height, *width, x, p, scale, acc);
            }
            LinearOperator::Antisymmetric { base, .. } => {
                base.grad_accumulate(x, p, 0.5 * scale, acc)?;
                base.grad_accumulate(p, x, -0.5 * scale, acc)?;
            }
            LinearOperator::NegDef { base } => {
                // dL/dC = -C (G + G^T) with G = X^T P
                let g = x.matmul_tn(p)?;
                let sym = g.add(&g.transpose());
                let upd = base.matmul(&sym)?;
                acc.axpy(-scale, &upd);
            }
            LinearOperator::GridLaplacian { .. } => {}
        }
        Ok(())
    }

    /// Dense `in_dim x out_dim` matrix of the operator.
    pub fn materialize(&self) -> Result<Matrix> {
        match self {
            LinearOperator::Dense { weight } => Ok(weight.clone()),
            LinearOperator::NegDef { base } => {
                let mut m = base.matmul_tn(base)?;
                m.scale(-1.0);
                Ok(m)
            }
            LinearOperator::Antisymmetric { base, gamma } => {
                let b = base.materialize()?;
                let bt = b.transpose();
                let n = b.rows();
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let d = if i == j { *gamma } else { 0.0 };
                        m.set(i, j, (b.get(i, j) - bt.get(i, j) - d) / 2.0);
                    }
                }
                Ok(m)
            }
            _ => {
                // Fall back to applying the operator to the identity.
                let id = Matrix::identity(self.in_dim());
                self.apply(&id)
            }
        }
    }
}

fn conv_apply(
    stencils: &Matrix,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    x: &Matrix,
    transpose: bool,
) -> Matrix {
    let (src_ch, dst_ch) = if transpose { (c_out, c_in) } else { (c_in, c_out) };
    let mut out = Matrix::zeros(x.rows(), dst_ch * h * w);
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for dc in 0..dst_ch {
            for sc in 0..src_ch {
                let srow = if transpose {
                    stencils.row(sc * c_in + dc)
                } else {
                    stencils.row(dc * c_in + sc)
                };
                let plane = &src[sc * h * w..(sc + 1) * h * w];
                let oplane = &mut dst[dc * h * w..(dc + 1) * h * w];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let s = srow[((dy + 1) * 3 + (dx + 1)) as usize];
                        if s == 0.0 {
                            continue;
                        }
                        // forward: out(y,x) += s * in(y+dy, x+dx)
                        // transpose: out(y,x) += s * in(y-dy, x-dx)
                        let (ody, odx) = if transpose { (-dy, -dx) } else { (dy, dx) };
                        for y in 0..h as i64 {
                            let sy = y + ody;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let x_lo = 0.max(-odx);
                            let x_hi = (w as i64).min(w as i64 - odx);
                            for xx in x_lo..x_hi {
                                oplane[(y * w as i64 + xx) as usize] +=
                                    s * plane[(sy * w as i64 + xx + odx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_grad_accumulate(
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    x: &Matrix,
    p: &Matrix,
    scale: f64,
    acc: &mut Matrix,
) {
    for r in 0..x.rows() {
        let xin = x.row(r);
        let pot = p.row(r);
        for co in 0..c_out {
            let pplane = &pot[co * h * w..(co + 1) * h * w];
            for ci in 0..c_in {
                let xplane = &xin[ci * h * w..(ci + 1) * h * w];
                let arow = acc.row_mut(co * c_in + ci);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let mut g = 0.0;
                        for y in 0..h as i64 {
                            let sy = y + dy;
                            if sy < 0 || sy >= h as i64 {
                                continue;
                            }
                            let x_lo = 0.max(-dx);
                            let x_hi = (w as i64).min(w as i64 - dx);
                            for xx in x_lo..x_hi {
                                g += pplane[(y * w as i64 + xx) as usize]
                                    * xplane[(sy * w as i64 + xx + dx) as usize];
                            }
                        }
                        arow[((dy + 1) * 3 + (dx + 1)) as usize] += scale * g;
                    }
                }
            }
        }
    }
}

/// 5-point Neumann (graph) Laplacian applied independently per channel to
/// each row of `x`. Symmetric positive semidefinite; constants are in the
/// null space.
fn laplacian_apply(channels: usize, h: usize, w: usize, x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for c in 0..channels {
            let plane = &src[c * h * w..(c + 1) * h * w];
            let oplane = &mut dst[c * h * w..(c + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let center = plane[y * w + xx];
                    let mut acc = 0.0;
                    if y > 0 {
                        acc += center - plane[(y - 1) * w + xx];
                    }
                    if y + 1 < h {
                        acc += center - plane[(y + 1) * w + xx];
                    }
                    if xx > 0 {
                        acc += center - plane[y * w + xx - 1];
                    }
                    if xx + 1 < w {
                        acc += center - plane[y * w + xx + 1];
                    }
                    oplane[y * w + xx] = acc;
                }
            }
        }
    }
    out
}
