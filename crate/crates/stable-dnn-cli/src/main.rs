//! Command-line driver: train the benchmark experiments, analyze model
//! stability, and evaluate saved models. Every run writes a manifest with the
//! resolved configuration and a content hash so results can be reproduced.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use stable_dnn::activation::Activation;
use stable_dnn::classifier::{classification_error, ClassifyConfig, Loss};
use stable_dnn::datasets::{
    gen_ellipses, gen_peaks, gen_swiss_roll, load_idx_split, Dataset, LabeledSet,
};
use stable_dnn::error::Error;
use stable_dnn::matrix::Matrix;
use stable_dnn::model::Model;
use stable_dnn::pcg::PcgConfig;
use stable_dnn::propagation::{forward, NetworkWeights, Scheme};
use stable_dnn::stability::{assess, write_phase_trace, write_spectra, write_vector_field};
use stable_dnn::training::{
    chunked_output, init_conv, init_dense, multilevel_train, TrainConfig, Trained,
};
use stable_dnn::LinearOperator;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "stable-dnn", version, about = "Stability-guaranteed deep network trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on one of the benchmark datasets
    Train(TrainArgs),
    /// Report layer Jacobian spectra and stability verdicts
    Analyze(AnalyzeArgs),
    /// Print training/validation error of a saved model
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DatasetKind {
    Ellipse,
    Swissroll,
    Peaks,
    Mnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SchemeArg {
    Euler,
    Antisym,
    Leapfrog,
    Verlet,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Antisym => Scheme::Antisym,
            SchemeArg::Leapfrog => Scheme::Leapfrog,
            SchemeArg::Verlet => Scheme::Verlet,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Comma-separated layer counts, e.g. 4,8,16
    #[arg(long)]
    levels: Option<String>,
    /// Feature duplication factor (channels for mnist)
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    final_time: Option<f64>,
    /// Time-smoothness weight on the layer parameters
    #[arg(long)]
    alpha_time: Option<f64>,
    /// Smoothness weight on the classifier W
    #[arg(long)]
    alpha_w: Option<f64>,
    /// Antisymmetric shift
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    /// Row-block size for chunked passes
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    hess_subsample: Option<usize>,
    #[arg(long)]
    bcd_iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// IDX files for the mnist dataset (also MNIST_DIR env, default data/mnist)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Training/validation subset sizes for mnist
    #[arg(long, default_value_t = 10000)]
    train_size: usize,
    #[arg(long, default_value_t = 2000)]
    valid_size: usize,
    /// Also export phase-plane trajectories of the validation set
    #[arg(long)]
    phase: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Saved model container
    #[arg(long, conflicts_with = "kernel")]
    model: Option<PathBuf>,
    /// Literal kernel rows, e.g. "2,-2;0,2"
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 10000)]
    train_size: usize,
    #[arg(long, default_value_t = 2000)]
    valid_size: usize,
}

/// Fully resolved training configuration, echoed into the manifest.
#[derive(Serialize, Clone)]
struct ResolvedConfig {
    dataset: DatasetKind,
    scheme: SchemeArg,
    levels: Vec<usize>,
    width: usize,
    final_time: f64,
    alpha_time: f64,
    alpha_w: f64,
    gamma: f64,
    batch: usize,
    hess_subsample: Option<usize>,
    bcd_iters: usize,
    classifier_newton: usize,
    classifier_pcg: usize,
    gn_pcg: usize,
    seed: u64,
    threads: usize,
    train_size: Option<usize>,
    valid_size: Option<usize>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    config_hash: String,
    outputs: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::NumericalBreakdown(_) | Error::Divergence { .. } => 1u8,
                _ => 2u8,
            };
            ExitCode::from(code)
        }
    }
}

fn worker_threads() -> usize {
    // STABLE_DNN_THREADS caps the worker pool; the numeric kernels currently
    // run on one thread, so this only validates and records the request.
    std::env::var("STABLE_DNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
        .min(1)
}

fn parse_levels(text: &str) -> Result<Vec<usize>, Error> {
    let levels: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("bad --levels '{text}': {e}")))?;
    if levels.is_empty() || levels.iter().any(|&l| l == 0) {
        return Err(Error::InvalidConfig(format!("bad --levels '{text}'")));
    }
    for w in levels.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidConfig(
                "--levels must be non-decreasing".into(),
            ));
        }
    }
    Ok(levels)
}

fn mnist_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("MNIST_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn resolve(args: &TrainArgs) -> Result<ResolvedConfig, Error> {
    let d = args.dataset;
    let scheme = args.scheme.unwrap_or(match d {
        DatasetKind::Mnist => SchemeArg::Antisym,
        _ => SchemeArg::Verlet,
    });
    let levels = match &args.levels {
        Some(text) => parse_levels(text)?,
        None => match d {
            DatasetKind::Ellipse => vec![4, 8, 16, 32, 64, 128],
            DatasetKind::Swissroll => vec![4, 8, 16, 32, 64],
            DatasetKind::Peaks => vec![4, 8, 16, 32, 64, 128, 256],
            DatasetKind::Mnist => vec![4],
        },
    };
    let final_time = args.final_time.unwrap_or(match d {
        DatasetKind::Peaks => 5.0,
        DatasetKind::Mnist => 6.0,
        _ => 20.0,
    });
    let alpha_time = args.alpha_time.unwrap_or(match d {
        DatasetKind::Peaks => 5e-6,
        DatasetKind::Swissroll => 5e-3,
        DatasetKind::Mnist => 5e-3,
        DatasetKind::Ellipse => 1e-3,
    });
    let alpha_w = args.alpha_w.unwrap_or(match d {
        DatasetKind::Mnist => 1e-2,
        _ => 0.0,
    });
    let width = args.width.unwrap_or(match d {
        DatasetKind::Mnist => 6,
        _ => 1,
    });
    let (bcd, newton, clf_pcg, gn_pcg) = match d {
        DatasetKind::Mnist => (args.bcd_iters.unwrap_or(6), 5, 10, 10),
        _ => (args.bcd_iters.unwrap_or(50), 2, 2, 20),
    };
    Ok(ResolvedConfig {
        dataset: d,
        scheme,
        levels,
        width,
        final_time,
        alpha_time,
        alpha_w,
        gamma: args.gamma,
        batch: args.batch.unwrap_or(1000),
        hess_subsample: args.hess_subsample.or(match d {
            DatasetKind::Mnist => Some(1000),
            _ => None,
        }),
        bcd_iters: bcd,
        classifier_newton: newton,
        classifier_pcg: clf_pcg,
        gn_pcg,
        seed: args.seed,
        threads: worker_threads(),
        train_size: (d == DatasetKind::Mnist).then_some(args.train_size),
        valid_size: (d == DatasetKind::Mnist).then_some(args.valid_size),
    })
}

fn build_dataset(cfg: &ResolvedConfig, data_dir: &Option<PathBuf>) -> Result<Dataset, Error> {
    let mut data = match cfg.dataset {
        DatasetKind::Ellipse => gen_ellipses(cfg.seed),
        DatasetKind::Swissroll => gen_swiss_roll(),
        DatasetKind::Peaks => gen_peaks(cfg.seed),
        DatasetKind::Mnist => {
            let dir = mnist_dir(data_dir);
            load_idx_split(
                &dir,
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                cfg.train_size.unwrap_or(10000),
                cfg.valid_size.unwrap_or(2000),
                cfg.seed,
            )?
        }
    };
    if cfg.width > 1 {
        data.train = data.train.widened(cfg.width);
        data.validation = data.validation.widened(cfg.width);
    }
    Ok(data)
}

fn build_initial(cfg: &ResolvedConfig, dim: usize) -> Result<NetworkWeights, Error> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.dataset {
        DatasetKind::Mnist => init_conv(
            cfg.scheme.into(),
            cfg.levels[0],
            cfg.final_time,
            cfg.width,
            28,
            28,
            cfg.gamma,
            Activation::TanH,
            &mut rng,
        ),
        _ => init_dense(
            cfg.scheme.into(),
            cfg.levels[0],
            cfg.final_time,
            dim,
            cfg.gamma,
            Activation::TanH,
            &mut rng,
        ),
    }
}

fn train_config(cfg: &ResolvedConfig) -> Result<TrainConfig, Error> {
    let classify = ClassifyConfig::new(
        cfg.classifier_newton,
        PcgConfig::new(cfg.classifier_pcg, 1e-8)?,
        cfg.alpha_w,
    );
    let mut tc = TrainConfig::new(cfg.bcd_iters, classify, PcgConfig::new(cfg.gn_pcg, 1e-8)?);
    tc.alpha_time = cfg.alpha_time;
    tc.hess_subsample = cfg.hess_subsample;
    tc.chunk_rows = cfg.batch;
    // per-iterate classifier refits are cheap for the 2-D problems but not for
    // the wide convolutional feature space
    tc.eval_refit = cfg.dataset != DatasetKind::Mnist;
    tc.seed = cfg.seed;
    Ok(tc)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    outputs: &[String],
) -> Result<(), Error> {
    let hash = sha256_hex(serde_json::to_string(&config)?.as_bytes());
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        config_hash: hash,
        outputs: outputs.to_vec(),
    };
    let mut f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_report_csv(trained: &Trained, path: &Path) -> Result<(), Error> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "level_layers,iteration,objective,train_error,validation_error,step_size,pcg_iterations"
    )?;
    for level in &trained.report.levels {
        for s in &level.history {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                level.layers,
                s.iteration,
                s.objective,
                s.train_error,
                s.validation_error,
                s.step_size,
                s.pcg_iterations
            )?;
        }
    }
    Ok(())
}

/// Class-probability raster over the 2-D domain of `set` (the colored
/// background of the decision plots).
fn write_prediction_grid(
    trained: &Trained,
    set: &LabeledSet,
    width: usize,
    steps: usize,
    path: &Path,
) -> Result<(), Error> {
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for i in 0..set.len() {
        x_lo = x_lo.min(set.features.get(i, 0));
        x_hi = x_hi.max(set.features.get(i, 0));
        y_lo = y_lo.min(set.features.get(i, 1));
        y_hi = y_hi.max(set.features.get(i, 1));
    }
    let pad = 0.2 * (x_hi - x_lo).max(y_hi - y_lo);
    let (x_lo, x_hi, y_lo, y_hi) = (x_lo - pad, x_hi + pad, y_lo - pad, y_hi + pad);

    let m = trained.classifier.classes();
    let mut grid = Matrix::zeros(steps * steps, 2);
    for iy in 0..steps {
        for ix in 0..steps {
            let x = x_lo + (x_hi - x_lo) * ix as f64 / (steps - 1) as f64;
            let y = y_lo + (y_hi - y_lo) * iy as f64 / (steps - 1) as f64;
            grid.set(iy * steps + ix, 0, x);
            grid.set(iy * steps + ix, 1, y);
        }
    }
    let wide = grid.repeat_cols(width);
    let yout = chunked_output(&trained.weights, &wide, 2000)?;
    let logits = trained.classifier.logits(&yout)?;
    let probs = stable_dnn::classifier::softmax_hyp(&logits);

    let mut f = std::fs::File::create(path)?;
    let cols: Vec<String> = (0..m).map(|k| format!("p{k}")).collect();
    writeln!(f, "x1,x2,{},class", cols.join(","))?;
    for i in 0..probs.rows() {
        let row: Vec<String> = probs.row(i).iter().map(|v| format!("{v}")).collect();
        let class = probs
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap_or(0);
        writeln!(f, "{},{},{},{class}", grid.get(i, 0), grid.get(i, 1), row.join(","))?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal SVG scatter of 2-D points colored by class.
fn write_scatter_svg(points: &[(f64, f64, usize)], path: &Path) -> Result<(), Error> {
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for (x, y, _) in points {
        lo = lo.min(*x).min(*y);
        hi = hi.max(*x).max(*y);
    }
    let span = (hi - lo).max(1e-9);
    let size = 600.0;
    let map = |v: f64| 20.0 + (v - lo) / span * (size - 40.0);
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    )?;
    writeln!(f, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>")?;
    for (x, y, c) in points {
        writeln!(
            f,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>",
            map(*x),
            size - map(*y),
            PALETTE[c % PALETTE.len()]
        )?;
    }
    writeln!(f, "</svg>")?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let cfg = resolve(&args)?;
    std::fs::create_dir_all(&args.out)?;
    let data = build_dataset(&cfg, &args.data_dir)?;
    let loss = Loss::for_classes(data.train.classes());
    let initial = build_initial(&cfg, data.train.features.cols())?;
    let tc = train_config(&cfg)?;
    let spatial = match cfg.dataset {
        DatasetKind::Mnist => Some(LinearOperator::grid_laplacian(cfg.width, 28, 28)),
        _ => None,
    };
    let trained = multilevel_train(&initial, &data, loss, &cfg.levels, &tc, spatial.as_ref())?;

    let mut outputs = Vec::new();
    let model_path = args.out.join("model.json");
    Model::from_parts(&trained.weights, Some(trained.classifier.clone())).save(&model_path)?;
    outputs.push(model_path.display().to_string());

    let report_path = args.out.join("report.csv");
    write_report_csv(&trained, &report_path)?;
    outputs.push(report_path.display().to_string());

    let is_2d = cfg.dataset != DatasetKind::Mnist;
    if is_2d {
        // grid is built over the un-widened 2-D coordinates
        let narrow = LabeledSet::new(
            select_cols(&data.validation.features, 2),
            data.validation.labels.clone(),
        )?;
        let grid_path = args.out.join("prediction_grid.csv");
        write_prediction_grid(&trained, &narrow, cfg.width, 120, &grid_path)?;
        outputs.push(grid_path.display().to_string());

        let yout = chunked_output(&trained.weights, &data.validation.features, tc.chunk_rows)?;
        let logits = trained.classifier.logits(&yout)?;
        let points: Vec<(f64, f64, usize)> = (0..narrow.len())
            .map(|i| {
                let class = argmax_row(logits.row(i));
                (narrow.features.get(i, 0), narrow.features.get(i, 1), class)
            })
            .collect();
        let svg_path = args.out.join("validation_scatter.svg");
        write_scatter_svg(&points, &svg_path)?;
        outputs.push(svg_path.display().to_string());

        if args.phase {
            let trace = forward(&trained.weights, &data.validation.features)?;
            let phase_path = args.out.join("phase.csv");
            let mut f = std::fs::File::create(&phase_path)?;
            write_phase_trace(&trace, trained.weights.step(), &mut f)?;
            outputs.push(phase_path.display().to_string());
        }
    }

    let train_err = eval_error(&trained, &data.train, tc.chunk_rows)?;
    let valid_err = eval_error(&trained, &data.validation, tc.chunk_rows)?;
    println!("TE {:.2}%", 100.0 * train_err);
    println!("VE {:.2}%", 100.0 * valid_err);
    println!(
        "best VE {:.2}% over {} level(s)",
        100.0 * trained.report.best_validation_error,
        trained.report.levels.len()
    );

    write_manifest(
        &args.out,
        "train",
        serde_json::to_value(&cfg)?,
        cfg.seed,
        &outputs,
    )?;
    Ok(())
}

fn select_cols(m: &Matrix, cols: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), cols);
    for i in 0..m.rows() {
        for j in 0..cols {
            out.set(i, j, m.get(i, j));
        }
    }
    out
}

fn argmax_row(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(j, _)| j)
        .unwrap_or(0)
}

fn eval_error(trained: &Trained, set: &LabeledSet, chunk: usize) -> Result<f64, Error> {
    let yout = chunked_output(&trained.weights, &set.features, chunk)?;
    let logits = trained.classifier.logits(&yout)?;
    Ok(classification_error(&logits, &set.labels))
}

fn parse_kernel(text: &str) -> Result<Matrix, Error> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("bad --kernel '{text}': {e}")))?;
    Matrix::from_rows(&rows)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let weights = match (&args.model, &args.kernel) {
        (Some(path), None) => Model::load(path)?.network()?,
        (None, Some(spec)) => {
            let k = parse_kernel(spec)?;
            if k.rows() != k.cols() {
                return Err(Error::InvalidConfig("--kernel must be square".into()));
            }
            NetworkWeights::new(
                Scheme::Euler,
                args.h,
                vec![LinearOperator::dense(k); args.layers],
                vec![0.0; args.layers],
                Activation::TanH,
            )?
        }
        _ => {
            return Err(Error::InvalidConfig(
                "analyze needs exactly one of --model or --kernel".into(),
            ))
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let dim = weights.feature_dim();
    // probe states: origin plus a small ring in the first two coordinates
    let mut probes = vec![vec![0.0; dim]];
    if dim >= 2 {
        for i in 0..8 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
            let mut p = vec![0.0; dim];
            p[0] = 0.5 * t.cos();
            p[1] = 0.5 * t.sin();
            probes.push(p);
        }
    }
    let y0 = Matrix::from_rows(&probes)?;
    let report = assess(&weights, &y0)?;

    let mut outputs = Vec::new();
    let report_path = args.out.join("stability.json");
    let mut f = std::fs::File::create(&report_path)?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.write_all(b"\n")?;
    outputs.push(report_path.display().to_string());

    let spectra_path = args.out.join("spectra.csv");
    write_spectra(&report, &mut std::fs::File::create(&spectra_path)?)?;
    outputs.push(spectra_path.display().to_string());

    let trace = forward(&weights, &y0)?;
    let phase_path = args.out.join("phase.csv");
    write_phase_trace(&trace, weights.step(), &mut std::fs::File::create(&phase_path)?)?;
    outputs.push(phase_path.display().to_string());

    if dim == 2 {
        let field_path = args.out.join("field.csv");
        write_vector_field(&weights, 0, -2.0, 2.0, 21, &mut std::fs::File::create(&field_path)?)?;
        outputs.push(field_path.display().to_string());
    }

    println!("layers {}  h {}", weights.layers(), weights.step());
    println!("max Re(lambda)      {:.6e}", report.max_real_part);
    println!("max amplification   {:.6}", report.max_amplification);
    println!("kernel change rate  {:.6e}", report.kernel_change_rate);
    let verdict = if !report.forward_stable {
        "discrete-unstable (growing modes)"
    } else if report.energy_preserving {
        "stable, energy-preserving"
    } else {
        "stable, dissipative"
    };
    println!("verdict             {verdict}");

    let config = serde_json::json!({
        "model": args.model.as_ref().map(|p| p.display().to_string()),
        "kernel": args.kernel,
        "h": args.h,
        "layers": args.layers,
    });
    write_manifest(&args.out, "analyze", config, 0, &outputs)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let model = Model::load(&args.model)?;
    let weights = model.network()?;
    let clf = model.classifier.ok_or_else(|| {
        Error::ModelMismatch("model has no trained classifier; run train first".into())
    })?;

    let width = args.width.unwrap_or_else(|| match args.dataset {
        DatasetKind::Mnist => weights.feature_dim() / 784,
        _ => weights.feature_dim() / 2,
    });
    let cfg = ResolvedConfig {
        dataset: args.dataset,
        scheme: SchemeArg::Euler, // unused for data generation
        levels: vec![weights.layers()],
        width,
        final_time: weights.step() * weights.layers() as f64,
        alpha_time: 0.0,
        alpha_w: 0.0,
        gamma: 0.0,
        batch: 1000,
        hess_subsample: None,
        bcd_iters: 0,
        classifier_newton: 0,
        classifier_pcg: 1,
        gn_pcg: 1,
        seed: args.seed,
        threads: worker_threads(),
        train_size: (args.dataset == DatasetKind::Mnist).then_some(args.train_size),
        valid_size: (args.dataset == DatasetKind::Mnist).then_some(args.valid_size),
    };
    let data = build_dataset(&cfg, &args.data_dir)?;
    if data.train.features.cols() != weights.feature_dim() {
        return Err(Error::ModelMismatch(format!(
            "model expects {} features, dataset has {}",
            weights.feature_dim(),
            data.train.features.cols()
        )));
    }
    if data.train.classes() != clf.classes() {
        return Err(Error::ModelMismatch(format!(
            "model predicts {} classes, dataset has {}",
            clf.classes(),
            data.train.classes()
        )));
    }
    let trained = Trained {
        weights,
        classifier: clf,
        report: stable_dnn::training::TrainReport {
            levels: vec![],
            best_validation_error: f64::NAN,
        },
    };
    println!("TE {:.2}%", 100.0 * eval_error(&trained, &data.train, 1000)?);
    println!("VE {:.2}%", 100.0 * eval_error(&trained, &data.validation, 1000)?);
    Ok(())
}
