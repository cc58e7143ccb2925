//! Block coordinate descent training: alternate a Newton-PCG solve of the
//! convex classification subproblem with a subsampled Gauss-Newton-PCG step on
//! the propagation parameters, optionally refined across levels of
//! increasingly fine layer grids.

use crate::activation::Activation;
use crate::classifier::{
    classification_error, newton_pcg_classify, ClassifierParams, ClassifyConfig, Loss,
    SpatialPreconditioner,
};
use crate::datasets::{Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::matrix::Matrix;
use crate::pcg::{pcg_solve, PcgConfig};
use crate::propagation::{
    forward, gauss_newton_matvec, output, vjp, NetworkWeights, ParamVec, Scheme,
};
use crate::regularization::{time_smooth_grad, time_smooth_value, TimePreconditioner};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Alternations between the classifier solve and the Gauss-Newton step.
    pub bcd_iterations: usize,
    pub classify: ClassifyConfig,
    pub gn_pcg: PcgConfig,
    /// Weight of the time-smoothness regularizer on the layer parameters.
    pub alpha_time: f64,
    /// Rows used for the Gauss-Newton curvature; `None` keeps the full batch.
    pub hess_subsample: Option<usize>,
    /// Row-block size for chunked forward/backward passes over large batches.
    pub chunk_rows: usize,
    /// Shift in the time preconditioner.
    pub precond_shift: f64,
    pub line_search_max: usize,
    /// Cap on the norm of a Gauss-Newton trial step.
    pub max_step_norm: f64,
    /// Evaluate every iterate with an accurately solved classifier when
    /// selecting the best snapshot. Worthwhile when the classifier is small
    /// relative to the propagation; disable when the classifier solve itself
    /// is expensive (wide feature spaces).
    pub eval_refit: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(bcd_iterations: usize, classify: ClassifyConfig, gn_pcg: PcgConfig) -> Self {
        TrainConfig {
            bcd_iterations,
            classify,
            gn_pcg,
            alpha_time: 1e-3,
            hess_subsample: None,
            chunk_rows: 1000,
            precond_shift: 1e-3,
            line_search_max: 10,
            max_step_norm: 1.0,
            eval_refit: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterStat {
    pub iteration: usize,
    /// Data-fit loss plus the time-smoothness penalty on the training batch.
    pub objective: f64,
    pub train_error: f64,
    pub validation_error: f64,
    pub step_size: f64,
    pub pcg_iterations: usize,
    pub curvature_breakdown: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub layers: usize,
    pub step: f64,
    pub history: Vec<IterStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub levels: Vec<LevelReport>,
    pub best_validation_error: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub weights: NetworkWeights,
    pub classifier: ClassifierParams,
    pub report: TrainReport,
}

/// Gaussian layer initialization with standard deviation
/// `1e-2 * min(1, 1/sqrt(n))`; biases start at zero.
pub fn init_std(dim: usize) -> f64 {
    1e-2 * 1.0f64.min(1.0 / (dim as f64).sqrt())
}

/// Fresh dense network of `layers` square kernels covering `[0, final_time]`.
pub fn init_dense(
    scheme: Scheme,
    layers: usize,
    final_time: f64,
    dim: usize,
    gamma: f64,
    activation: Activation,
    rng: &mut ChaCha8Rng,
) -> Result<NetworkWeights> {
    if layers == 0 || !(final_time > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need layers >= 1 and final_time > 0; got {layers}, {final_time}"
        )));
    }
    let std = init_std(dim);
    let kernels = (0..layers)
        .map(|_| {
            let base = Matrix::random_normal(dim, dim, std, rng);
            match scheme {
                Scheme::Antisym => {
                    LinearOperator::antisymmetric(LinearOperator::dense(base), gamma)
                }
                _ => Ok(LinearOperator::dense(base)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkWeights::new(
        scheme,
        final_time / layers as f64,
        kernels,
        vec![0.0; layers],
        activation,
    )
}

/// Fresh network of 3x3 convolution stencil banks on a
/// `channels x height x width` feature grid.
pub fn init_conv(
    scheme: Scheme,
    layers: usize,
    final_time: f64,
    channels: usize,
    height: usize,
    width: usize,
    gamma: f64,
    activation: Activation,
    rng: &mut ChaCha8Rng,
) -> Result<NetworkWeights> {
    if layers == 0 || !(final_time > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need layers >= 1 and final_time > 0; got {layers}, {final_time}"
        )));
    }
    let dim = channels * height * width;
    let std = init_std(dim);
    let kernels = (0..layers)
        .map(|_| {
            let stencils = Matrix::random_normal(channels * channels, 9, std, rng);
            let conv = LinearOperator::conv3x3(channels, channels, height, width, stencils)?;
            match scheme {
                Scheme::Antisym => LinearOperator::antisymmetric(conv, gamma),
                _ => Ok(conv),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkWeights::new(
        scheme,
        final_time / layers as f64,
        kernels,
        vec![0.0; layers],
        activation,
    )
}

/// Forward the whole batch in row chunks, assembling the output layer.
pub fn chunked_output(weights: &NetworkWeights, y0: &Matrix, chunk: usize) -> Result<Matrix> {
    let s = y0.rows();
    let chunk = chunk.max(1);
    let mut out = Matrix::zeros(s, weights.feature_dim());
    let mut start = 0;
    while start < s {
        let end = (start + chunk).min(s);
        let rows: Vec<usize> = (start..end).collect();
        let block = output(weights, &y0.select_rows(&rows))?;
        for (local, global) in (start..end).enumerate() {
            out.row_mut(global).copy_from_slice(block.row(local));
        }
        start = end;
    }
    Ok(out)
}

/// Mean data-fit loss over the batch, evaluated in row chunks.
fn chunked_loss(
    weights: &NetworkWeights,
    clf: &ClassifierParams,
    set: &LabeledSet,
    loss: Loss,
    chunk: usize,
) -> Result<f64> {
    let s = set.len();
    let chunk = chunk.max(1);
    let mut total = 0.0;
    let mut start = 0;
    while start < s {
        let end = (start + chunk).min(s);
        let rows: Vec<usize> = (start..end).collect();
        let yout = output(weights, &set.features.select_rows(&rows))?;
        let logits = clf.logits(&yout)?;
        let v = loss.value(&logits, &set.labels.select_rows(&rows))?;
        total += v * (end - start) as f64 / s as f64;
        start = end;
    }
    Ok(total)
}

/// Data-fit loss plus the time-smoothness penalty.
fn propagation_objective(
    weights: &NetworkWeights,
    clf: &ClassifierParams,
    set: &LabeledSet,
    loss: Loss,
    alpha_time: f64,
    chunk: usize,
) -> Result<f64> {
    let fit = chunked_loss(weights, clf, set, loss, chunk)?;
    Ok(fit + alpha_time * time_smooth_value(&weights.params(), weights.step()))
}

/// Full-batch gradient of the data-fit loss in the layer parameters,
/// accumulated over row chunks.
fn batch_gradient(
    weights: &NetworkWeights,
    clf: &ClassifierParams,
    set: &LabeledSet,
    loss: Loss,
    chunk: usize,
) -> Result<(f64, ParamVec)> {
    let s = set.len();
    let chunk = chunk.max(1);
    let mut grad = ParamVec::zeros_like(&weights.params());
    let mut fit = 0.0;
    let mut start = 0;
    while start < s {
        let end = (start + chunk).min(s);
        let rows: Vec<usize> = (start..end).collect();
        let trace = forward(weights, &set.features.select_rows(&rows))?;
        let labels = set.labels.select_rows(&rows);
        let logits = clf.logits(trace.output())?;
        let frac = (end - start) as f64 / s as f64;
        fit += loss.value(&logits, &labels)? * frac;
        // loss gradients normalize by the chunk size; rescale to the batch
        let mut glogits = loss.grad_logits(&logits, &labels)?;
        glogits.scale(frac);
        let cot = glogits.matmul_nt(&clf.w)?;
        let g = vjp(weights, &trace, &cot)?;
        grad.axpy(1.0, &g.params);
        start = end;
    }
    Ok((fit, grad))
}

#[derive(Debug, Clone, Copy)]
struct GnStats {
    step_size: f64,
    pcg_iterations: usize,
    breakdown: bool,
}

/// One damped Gauss-Newton step on the propagation parameters.
fn gauss_newton_step(
    weights: &NetworkWeights,
    clf: &ClassifierParams,
    set: &LabeledSet,
    loss: Loss,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkWeights, GnStats)> {
    let params = weights.params();
    let h = weights.step();
    let (fit, mut grad) = batch_gradient(weights, clf, set, loss, cfg.chunk_rows)?;
    let objective = fit + cfg.alpha_time * time_smooth_value(&params, h);
    grad.axpy(cfg.alpha_time, &time_smooth_grad(&params, h));
    if std::env::var_os("STABLE_DNN_DEBUG").is_some() {
        eprintln!("gn: obj={objective:.6e} fit={fit:.6e} |g|={:.6e}", grad.norm());
    }

    // curvature on a subsample to bound the per-matvec cost
    let sub = match cfg.hess_subsample {
        Some(k) if k < set.len() => {
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.shuffle(rng);
            order.truncate(k);
            set.select(&order)
        }
        _ => set.clone(),
    };
    let trace = forward(weights, &sub.features)?;
    let logits = clf.logits(trace.output())?;

    let mut apply_h = |v: &[f64]| -> Result<Vec<f64>> {
        let d = ParamVec::from_flat(&params, v)?;
        let mut curvature = |dy: &Matrix| -> Result<Matrix> {
            let dl = dy.matmul(&clf.w)?;
            let hl = loss.curvature_matvec(&logits, &dl)?;
            hl.matmul_nt(&clf.w)
        };
        let mut gn = gauss_newton_matvec(weights, &trace, &mut curvature, &d)?;
        gn.axpy(cfg.alpha_time, &time_smooth_grad(&d, h));
        Ok(gn.to_flat())
    };

    let pre = TimePreconditioner::build(weights.layers(), cfg.alpha_time, h, cfg.precond_shift)?;
    let mut precond = |r: &[f64]| {
        let rp = ParamVec::from_flat(&params, r).expect("preconditioner shape");
        pre.solve(&rp).to_flat()
    };
    let rhs: Vec<f64> = grad.to_flat().iter().map(|v| -v).collect();
    let sol = pcg_solve(&mut apply_h, &rhs, &cfg.gn_pcg, Some(&mut precond))?;
    let mut direction = ParamVec::from_flat(&params, &sol.solution)?;

    // near-flat curvature subspaces can produce enormous steps that no
    // reasonable number of backtracks can rescue; cap the trial step length
    let cap = cfg.max_step_norm.max(params.norm());
    let dnorm = direction.norm();
    if dnorm > cap {
        direction.scale(cap / dnorm);
    }

    let mut slope = grad.dot(&direction);
    if !(slope < 0.0) {
        // subsampled curvature failed to produce descent: fall back to the
        // preconditioned negative gradient
        direction = ParamVec::from_flat(&params, &precond(&rhs))?;
        slope = grad.dot(&direction);
        if !(slope < 0.0) {
            return Ok((
                weights.clone(),
                GnStats {
                    step_size: 0.0,
                    pcg_iterations: sol.iterations,
                    breakdown: true,
                },
            ));
        }
    }

    let mut t = 1.0;
    for _ in 0..cfg.line_search_max {
        let mut trial = params.clone();
        trial.axpy(t, &direction);
        let candidate = weights.with_params(&trial)?;
        match propagation_objective(&candidate, clf, set, loss, cfg.alpha_time, cfg.chunk_rows) {
            Ok(value) if value.is_finite() && value <= objective + 1e-4 * t * slope => {
                return Ok((
                    candidate,
                    GnStats {
                        step_size: t,
                        pcg_iterations: sol.iterations,
                        breakdown: sol.breakdown,
                    },
                ));
            }
            // divergence along the trial step just shortens it
            Ok(_) | Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
        t *= 0.5;
    }
    Ok((
        weights.clone(),
        GnStats {
            step_size: 0.0,
            pcg_iterations: sol.iterations,
            breakdown: sol.breakdown,
        },
    ))
}

fn error_on(
    weights: &NetworkWeights,
    clf: &ClassifierParams,
    set: &LabeledSet,
    chunk: usize,
) -> Result<f64> {
    let yout = chunked_output(weights, &set.features, chunk)?;
    let logits = clf.logits(&yout)?;
    Ok(classification_error(&logits, &set.labels))
}

/// Alternate classifier solves with Gauss-Newton steps; returns the final
/// iterate together with the best-validation-error snapshot statistics.
pub fn bcd_train(
    initial: &NetworkWeights,
    clf_init: &ClassifierParams,
    data: &Dataset,
    loss: Loss,
    cfg: &TrainConfig,
    spatial_op: Option<&LinearOperator>,
) -> Result<(NetworkWeights, ClassifierParams, LevelReport)> {
    let mut weights = initial.clone();
    let mut clf = clf_init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let spatial_pre = match spatial_op {
        Some(l) => Some(SpatialPreconditioner::build(l, cfg.classify.precond_shift)?),
        None => None,
    };
    let mut history = Vec::with_capacity(cfg.bcd_iterations);
    let mut best: Option<(f64, NetworkWeights, ClassifierParams)> = None;

    // The deliberately crude per-iteration classifier solves keep the
    // alternation moving; whenever an iterate is *evaluated* (snapshot
    // selection, final result) the convex subproblem is solved accurately.
    let refit = ClassifyConfig {
        newton_iterations: cfg.classify.newton_iterations.max(20),
        pcg: PcgConfig::new(cfg.classify.pcg.max_iterations.max(50), 1e-10)?,
        ..cfg.classify.clone()
    };
    let mut yout = chunked_output(&weights, &data.train.features, cfg.chunk_rows)?;

    for iteration in 0..cfg.bcd_iterations {
        clf = newton_pcg_classify(
            &yout,
            &data.train.labels,
            &clf,
            loss,
            &cfg.classify,
            spatial_op,
            spatial_pre.as_ref(),
        )?;

        let (next, stats) = gauss_newton_step(&weights, &clf, &data.train, loss, cfg, &mut rng)?;
        weights = next;
        yout = chunked_output(&weights, &data.train.features, cfg.chunk_rows)?;

        let objective = loss.value(&clf.logits(&yout)?, &data.train.labels)?
            + cfg.alpha_time * time_smooth_value(&weights.params(), weights.step());
        let eval_clf = if cfg.eval_refit {
            newton_pcg_classify(
                &yout,
                &data.train.labels,
                &clf,
                loss,
                &refit,
                spatial_op,
                spatial_pre.as_ref(),
            )?
        } else {
            clf.clone()
        };
        let train_error = classification_error(&eval_clf.logits(&yout)?, &data.train.labels);
        let validation_error = error_on(&weights, &eval_clf, &data.validation, cfg.chunk_rows)?;
        if best.as_ref().map_or(true, |(e, _, _)| validation_error < *e) {
            best = Some((validation_error, weights.clone(), eval_clf));
        }
        history.push(IterStat {
            iteration,
            objective,
            train_error,
            validation_error,
            step_size: stats.step_size,
            pcg_iterations: stats.pcg_iterations,
            curvature_breakdown: stats.breakdown,
        });
    }

    // Accurate refit of the last iterate (covers eval_refit = false and an
    // empty iteration budget), then settle on the best snapshot.
    clf = newton_pcg_classify(
        &yout,
        &data.train.labels,
        &clf,
        loss,
        &refit,
        spatial_op,
        spatial_pre.as_ref(),
    )?;
    let validation_error = error_on(&weights, &clf, &data.validation, cfg.chunk_rows)?;
    if best.as_ref().map_or(true, |(e, _, _)| validation_error < *e) {
        best = Some((validation_error, weights.clone(), clf.clone()));
    }
    if let Some((be, bw, bc)) = best {
        if cfg.eval_refit {
            // snapshots were already evaluated with accurately refit classifiers
            weights = bw;
            clf = bc;
        } else {
            let yout = chunked_output(&bw, &data.train.features, cfg.chunk_rows)?;
            let rbc = newton_pcg_classify(
                &yout,
                &data.train.labels,
                &bc,
                loss,
                &refit,
                spatial_op,
                spatial_pre.as_ref(),
            )?;
            let rve = error_on(&bw, &rbc, &data.validation, cfg.chunk_rows)?;
            weights = bw;
            clf = if rve <= be { rbc } else { bc };
        }
    }
    Ok((
        weights,
        clf,
        LevelReport {
            layers: initial.layers(),
            step: initial.step(),
            history,
        },
    ))
}

/// Refine the layer grid to `new_layers` by piecewise-linear interpolation of
/// the parameters at cell-centered times, keeping the total time unchanged.
pub fn prolongate(weights: &NetworkWeights, new_layers: usize) -> Result<NetworkWeights> {
    let old_n = weights.layers();
    if new_layers < old_n {
        return Err(Error::InvalidConfig(format!(
            "prolongation cannot coarsen: {old_n} -> {new_layers} layers"
        )));
    }
    let total_time = weights.step() * old_n as f64;
    let h_new = total_time / new_layers as f64;
    let params = weights.params();
    let mut kernels = Vec::with_capacity(new_layers);
    let mut biases = Vec::with_capacity(new_layers);
    for i in 0..new_layers {
        let t = (i as f64 + 0.5) * h_new;
        let u = t / weights.step() - 0.5;
        let (j0, j1, w) = if u <= 0.0 {
            (0, 0, 0.0)
        } else if u >= (old_n - 1) as f64 {
            (old_n - 1, old_n - 1, 0.0)
        } else {
            let j0 = u.floor() as usize;
            (j0, j0 + 1, u - j0 as f64)
        };
        let mut p = params.kernels[j0].scaled(1.0 - w);
        p.axpy(w, &params.kernels[j1]);
        kernels.push(weights.kernels()[j0].with_param(p)?);
        biases.push((1.0 - w) * params.biases[j0] + w * params.biases[j1]);
    }
    NetworkWeights::new(
        weights.scheme(),
        h_new,
        kernels,
        biases,
        weights.activation(),
    )
}

/// Train across a sequence of layer counts, prolongating between levels.
pub fn multilevel_train(
    initial: &NetworkWeights,
    data: &Dataset,
    loss: Loss,
    levels: &[usize],
    cfg: &TrainConfig,
    spatial_op: Option<&LinearOperator>,
) -> Result<Trained> {
    if levels.is_empty() || levels[0] != initial.layers() {
        return Err(Error::InvalidConfig(format!(
            "level schedule must start at the initial layer count {}",
            initial.layers()
        )));
    }
    let mut weights = initial.clone();
    let mut clf = ClassifierParams::zeros(weights.feature_dim(), data.train.classes());
    let mut reports = Vec::with_capacity(levels.len());
    let mut best = f64::INFINITY;
    for (li, &layers) in levels.iter().enumerate() {
        if layers != weights.layers() {
            weights = prolongate(&weights, layers)?;
        }
        let mut level_cfg = cfg.clone();
        level_cfg.seed = cfg.seed.wrapping_add(li as u64);
        let (w, c, report) = bcd_train(&weights, &clf, data, loss, &level_cfg, spatial_op)?;
        weights = w;
        clf = c;
        if let Some(stat) = report.history.iter().map(|s| s.validation_error).fold(
            None::<f64>,
            |acc, e| Some(acc.map_or(e, |a| a.min(e))),
        ) {
            best = best.min(stat);
        }
        reports.push(report);
    }
    best = best.min(error_on(&weights, &clf, &data.validation, cfg.chunk_rows)?);
    Ok(Trained {
        weights,
        classifier: clf,
        report: TrainReport {
            levels: reports,
            best_validation_error: best,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_ellipses;
    use rand::Rng;

    fn blob_dataset() -> Dataset {
        // two well-separated Gaussian-ish blobs
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let s = 80;
        let mut features = Matrix::zeros(s, 2);
        let mut labels = Matrix::zeros(s, 2);
        for i in 0..s {
            let class = i % 2;
            let cx = if class == 0 { -1.5 } else { 1.5 };
            features.set(i, 0, cx + 0.3 * rng.gen::<f64>());
            features.set(i, 1, 0.3 * rng.gen::<f64>() - 0.15);
            labels.set(i, class, 1.0);
        }
        let all = LabeledSet { features, labels };
        let train: Vec<usize> = (0..60).collect();
        let valid: Vec<usize> = (60..s).collect();
        Dataset {
            train: all.select(&train),
            validation: all.select(&valid),
        }
    }

    fn small_config() -> TrainConfig {
        let classify = ClassifyConfig::new(2, PcgConfig::new(10, 1e-8).unwrap(), 0.0);
        let mut cfg = TrainConfig::new(5, classify, PcgConfig::new(10, 1e-3).unwrap());
        cfg.alpha_time = 1e-3;
        cfg.chunk_rows = 32;
        cfg
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = init_dense(Scheme::Euler, 4, 1.0, 2, 0.0, Activation::TanH, &mut r1).unwrap();
        let b = init_dense(Scheme::Euler, 4, 1.0, 2, 0.0, Activation::TanH, &mut r2).unwrap();
        for (ka, kb) in a.kernels().iter().zip(b.kernels()) {
            assert_eq!(ka.param().as_slice(), kb.param().as_slice());
            assert!(ka.param().max_abs() < 0.1);
        }
        assert_eq!(a.biases(), &[0.0; 4]);
        assert!((init_std(100) - 1e-3).abs() < 1e-18);
        assert!((init_std(1) - 1e-2).abs() < 1e-18);
    }

    #[test]
    fn chunked_output_matches_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = init_dense(Scheme::Verlet, 3, 1.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        let y0 = Matrix::random_normal(17, 2, 1.0, &mut rng);
        let full = output(&net, &y0).unwrap();
        let chunked = chunked_output(&net, &y0, 5).unwrap();
        assert_eq!(full.as_slice(), chunked.as_slice());
    }

    #[test]
    fn batch_gradient_matches_unchunked() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = init_dense(Scheme::Euler, 3, 1.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        let d = blob_dataset();
        let clf = ClassifierParams {
            w: Matrix::random_normal(2, 2, 1.0, &mut rng),
            mu: vec![0.1, -0.1],
        };
        let (f1, g1) = batch_gradient(&net, &clf, &d.train, Loss::Bernoulli, 7).unwrap();
        let (f2, g2) = batch_gradient(&net, &clf, &d.train, Loss::Bernoulli, 1000).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
        let mut diff = g1;
        diff.axpy(-1.0, &g2);
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn prolongation_reference_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k0 = Matrix::random_normal(2, 2, 1.0, &mut rng);
        let k1 = Matrix::random_normal(2, 2, 1.0, &mut rng);
        let net = NetworkWeights::new(
            Scheme::Euler,
            0.5,
            vec![
                LinearOperator::dense(k0.clone()),
                LinearOperator::dense(k1.clone()),
            ],
            vec![1.0, 3.0],
            Activation::TanH,
        )
        .unwrap();
        let fine = prolongate(&net, 4).unwrap();
        assert!((fine.step() - 0.25).abs() < 1e-15);
        let p = fine.params();
        let mix = |a: f64| {
            let mut m = k0.scaled(1.0 - a);
            m.axpy(a, &k1);
            m
        };
        assert!(p.kernels[0].sub(&k0).max_abs() < 1e-14);
        assert!(p.kernels[1].sub(&mix(0.25)).max_abs() < 1e-14);
        assert!(p.kernels[2].sub(&mix(0.75)).max_abs() < 1e-14);
        assert!(p.kernels[3].sub(&k1).max_abs() < 1e-14);
        assert_eq!(p.biases, vec![1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn prolongation_preserves_constant_parameters() {
        let k = Matrix::from_vec(2, 2, vec![0.3, -0.1, 0.2, 0.5]).unwrap();
        let net = NetworkWeights::new(
            Scheme::Euler,
            1.0 / 3.0,
            vec![LinearOperator::dense(k.clone()); 3],
            vec![0.7; 3],
            Activation::TanH,
        )
        .unwrap();
        let fine = prolongate(&net, 7).unwrap();
        for kj in &fine.params().kernels {
            assert!(kj.sub(&k).max_abs() < 1e-14);
        }
        for b in fine.biases() {
            assert!((b - 0.7).abs() < 1e-14);
        }
        // total time is preserved
        assert!((fine.step() * 7.0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn prolongation_rejects_coarsening() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = init_dense(Scheme::Euler, 4, 1.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        assert!(prolongate(&net, 2).is_err());
    }

    #[test]
    fn gauss_newton_step_decreases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = init_dense(Scheme::Euler, 4, 2.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        let d = blob_dataset();
        let cfg = small_config();
        let clf = newton_pcg_classify(
            &chunked_output(&net, &d.train.features, 1000).unwrap(),
            &d.train.labels,
            &ClassifierParams::zeros(2, 2),
            Loss::Bernoulli,
            &cfg.classify,
            None,
            None,
        )
        .unwrap();
        let before =
            propagation_objective(&net, &clf, &d.train, Loss::Bernoulli, cfg.alpha_time, 1000)
                .unwrap();
        let (next, stats) =
            gauss_newton_step(&net, &clf, &d.train, Loss::Bernoulli, &cfg, &mut rng).unwrap();
        let after =
            propagation_objective(&next, &clf, &d.train, Loss::Bernoulli, cfg.alpha_time, 1000)
                .unwrap();
        assert!(stats.step_size > 0.0);
        assert!(after < before);
    }

    #[test]
    fn bcd_fits_separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = init_dense(Scheme::Verlet, 4, 2.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        let d = blob_dataset();
        let cfg = small_config();
        let (w, c, report) = bcd_train(
            &net,
            &ClassifierParams::zeros(2, 2),
            &d,
            Loss::Bernoulli,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(report.history.len(), cfg.bcd_iterations);
        let err = error_on(&w, &c, &d.validation, 1000).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let d = gen_ellipses(2);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let net =
                init_dense(Scheme::Verlet, 4, 5.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
            let mut cfg = small_config();
            cfg.bcd_iterations = 2;
            cfg.hess_subsample = Some(200);
            multilevel_train(&net, &d, Loss::Bernoulli, &[4, 8], &cfg, None).unwrap()
        };
        let a = run();
        let b = run();
        for (ka, kb) in a.weights.params().kernels.iter().zip(&b.weights.params().kernels) {
            assert_eq!(ka.as_slice(), kb.as_slice());
        }
        assert_eq!(a.classifier.w.as_slice(), b.classifier.w.as_slice());
        assert_eq!(
            a.report.best_validation_error,
            b.report.best_validation_error
        );
    }

    #[test]
    fn multilevel_requires_matching_first_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let net = init_dense(Scheme::Euler, 4, 1.0, 2, 0.0, Activation::TanH, &mut rng).unwrap();
        let d = blob_dataset();
        let cfg = small_config();
        assert!(multilevel_train(&net, &d, Loss::Bernoulli, &[8, 16], &cfg, None).is_err());
    }
}
