//! Deterministic benchmark data: concentric ellipses, interleaved spirals,
//! quantile-binned peaks-function classes, and an IDX-format image loader.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::io::{Read as _, Write};
use std::path::Path;

/// Features (rows are examples) with matching one-hot labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Matrix,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Matrix) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::dim("labeled set rows", labels.rows(), features.rows()));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
        }
    }

    /// Duplicate every feature column `times` times, widening the network
    /// input without adding information.
    pub fn widened(&self, times: usize) -> LabeledSet {
        LabeledSet {
            features: self.features.repeat_cols(times),
            labels: self.labels.clone(),
        }
    }
}

/// Train/validation pair drawn from one generator.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: LabeledSet,
    pub validation: LabeledSet,
}

fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut c = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        c.set(i, l, 1.0);
    }
    c
}

fn split_shuffled(
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    train_count: usize,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let total = features.rows();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let all = LabeledSet {
        features,
        labels: one_hot(&labels, classes),
    };
    Dataset {
        train: all.select(&order[..train_count]),
        validation: all.select(&order[train_count..]),
    }
}

/// Two concentric ellipse shells, 600 points each with radial jitter, split
/// 1000 training / 200 validation.
pub fn gen_ellipses(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Matrix::zeros(1200, 2);
    let mut labels = Vec::with_capacity(1200);
    let axes = [(1.0, 0.5), (2.0, 1.0)];
    let mut row = 0;
    for (class, (a, b)) in axes.iter().enumerate() {
        for _ in 0..600 {
            let theta = rng.gen::<f64>() * 2.0 * PI;
            let r = 1.0 + 0.05 * normal(&mut rng);
            features.set(row, 0, a * r * theta.cos());
            features.set(row, 1, b * r * theta.sin());
            labels.push(class);
            row += 1;
        }
    }
    split_shuffled(features, labels, 2, 1000, &mut rng)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Two interleaved Archimedean spirals, 513 points per curve at uniformly
/// spaced angles in `[0, 4 pi]`; odd sample indices form the validation set.
pub fn gen_swiss_roll() -> Dataset {
    let per_curve = 513usize;
    let total = 2 * per_curve;
    let mut features = Matrix::zeros(total, 2);
    let mut labels = Vec::with_capacity(total);
    for class in 0..2 {
        for i in 0..per_curve {
            let theta = 4.0 * PI * i as f64 / (per_curve - 1) as f64;
            let r = theta / (4.0 * PI) + 0.2 * class as f64;
            let row = class * per_curve + i;
            features.set(row, 0, r * theta.cos());
            features.set(row, 1, r * theta.sin());
            labels.push(class);
        }
    }
    let all = LabeledSet {
        features,
        labels: one_hot(&labels, 2),
    };
    let train: Vec<usize> = (0..total).filter(|i| i % 2 == 0).collect();
    let valid: Vec<usize> = (0..total).filter(|i| i % 2 == 1).collect();
    Dataset {
        train: all.select(&train),
        validation: all.select(&valid),
    }
}

/// The classic two-dimensional peaks test function.
pub fn peaks(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp()
}

/// Five classes from 20%-quantile level sets of [`peaks`] on a 256x256 grid
/// over `[-3,3]^2`; 1000 samples per class, split 80/20.
pub fn gen_peaks(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = 256usize;
    let mut points = Vec::with_capacity(grid * grid);
    let mut values = Vec::with_capacity(grid * grid);
    for iy in 0..grid {
        for ix in 0..grid {
            let x = -3.0 + 6.0 * ix as f64 / (grid - 1) as f64;
            let y = -3.0 + 6.0 * iy as f64 / (grid - 1) as f64;
            points.push((x, y));
            values.push(peaks(x, y));
        }
    }
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds: Vec<f64> = (1..5)
        .map(|k| sorted[k * sorted.len() / 5])
        .collect();
    let classify = |v: f64| thresholds.iter().filter(|t| v >= **t).count();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 5];
    for (i, v) in values.iter().enumerate() {
        by_class[classify(*v)].push(i);
    }
    let per_class = 1000usize;
    let mut features = Matrix::zeros(5 * per_class, 2);
    let mut labels = Vec::with_capacity(5 * per_class);
    let mut row = 0;
    for (class, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(per_class) {
            features.set(row, 0, points[i].0);
            features.set(row, 1, points[i].1);
            labels.push(class);
            row += 1;
        }
    }
    split_shuffled(features, labels, 5, 4 * per_class, &mut rng)
}

fn read_u32_be(data: &[u8], offset: usize) -> Result<u32> {
    let bytes: [u8; 4] = data
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: "unexpected end of file".into(),
        })?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(bytes))
}

/// Load an IDX image file (magic 0x00000803) into an `s x (rows*cols)` matrix
/// with pixel values scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let magic = read_u32_be(&data, 0)?;
    if magic != 0x0000_0803 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x00000803"),
        });
    }
    let count = read_u32_be(&data, 4)? as usize;
    let rows = read_u32_be(&data, 8)? as usize;
    let cols = read_u32_be(&data, 12)? as usize;
    let pixels = count * rows * cols;
    if data.len() != 16 + pixels {
        return Err(Error::Parse {
            offset: 16,
            message: format!("expected {} pixel bytes, found {}", pixels, data.len() - 16),
        });
    }
    let body: Vec<f64> = data[16..].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(count, rows * cols, body)
}

/// Load an IDX label file (magic 0x00000801) into one-hot rows over 10 classes.
pub fn load_idx_labels(path: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let magic = read_u32_be(&data, 0)?;
    if magic != 0x0000_0801 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad label magic 0x{magic:08x}, expected 0x00000801"),
        });
    }
    let count = read_u32_be(&data, 4)? as usize;
    if data.len() != 8 + count {
        return Err(Error::Parse {
            offset: 8,
            message: format!("expected {} label bytes, found {}", count, data.len() - 8),
        });
    }
    let mut labels = Matrix::zeros(count, 10);
    for (i, &b) in data[8..].iter().enumerate() {
        if b > 9 {
            return Err(Error::Parse {
                offset: (8 + i) as u64,
                message: format!("label {b} out of range 0..=9"),
            });
        }
        labels.set(i, b as usize, 1.0);
    }
    Ok(labels)
}

/// Load image/label IDX pairs from `dir` and draw a seeded train/validation
/// split of the requested sizes from the training archive.
pub fn load_idx_split(
    dir: &Path,
    image_file: &str,
    label_file: &str,
    train_count: usize,
    valid_count: usize,
    seed: u64,
) -> Result<Dataset> {
    let features = load_idx_images(&dir.join(image_file))?;
    let labels = load_idx_labels(&dir.join(label_file))?;
    if features.rows() != labels.rows() {
        return Err(Error::ModelMismatch(format!(
            "{} images but {} labels",
            features.rows(),
            labels.rows()
        )));
    }
    if train_count + valid_count > features.rows() {
        return Err(Error::InvalidConfig(format!(
            "split {}+{} exceeds {} examples",
            train_count,
            valid_count,
            features.rows()
        )));
    }
    let all = LabeledSet { features, labels };
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(Dataset {
        train: all.select(&order[..train_count]),
        validation: all.select(&order[train_count..train_count + valid_count]),
    })
}

/// Write `x1,..,xn,label` CSV rows (label is the one-hot argmax).
pub fn write_csv(set: &LabeledSet, out: &mut dyn Write) -> Result<()> {
    let dim = set.features.cols();
    let header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    for i in 0..set.len() {
        let coords: Vec<String> = set.features.row(i).iter().map(|v| format!("{v}")).collect();
        let label = set
            .labels
            .row(i)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap_or(0);
        writeln!(out, "{},{label}", coords.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipses_shape_and_shells() {
        let d = gen_ellipses(7);
        assert_eq!(d.train.len(), 1000);
        assert_eq!(d.validation.len(), 200);
        assert_eq!(d.train.classes(), 2);
        // every point sits near its ellipse: (x/a)^2 + (y/b)^2 ~ 1
        for set in [&d.train, &d.validation] {
            for i in 0..set.len() {
                let (x, y) = (set.features.get(i, 0), set.features.get(i, 1));
                let class = if set.labels.get(i, 1) > 0.5 { 1 } else { 0 };
                let (a, b) = if class == 0 { (1.0, 0.5) } else { (2.0, 1.0) };
                let r = ((x / a).powi(2) + (y / b).powi(2)).sqrt();
                assert!((r - 1.0).abs() < 0.4, "point ({x},{y}) class {class}");
            }
        }
    }

    #[test]
    fn ellipses_same_seed_reproduces() {
        let a = gen_ellipses(3);
        let b = gen_ellipses(3);
        assert_eq!(a.train.features.as_slice(), b.train.features.as_slice());
        assert_eq!(a.validation.labels.as_slice(), b.validation.labels.as_slice());
    }

    #[test]
    fn swiss_roll_endpoints_and_split() {
        let d = gen_swiss_roll();
        assert_eq!(d.train.len() + d.validation.len(), 1026);
        assert_eq!(d.train.len(), 513); // even indices of both curves
        // first curve starts at the origin, second ends at (1.2, 0)
        let f = &d.train.features;
        assert!(f.get(0, 0).abs() < 1e-12 && f.get(0, 1).abs() < 1e-12);
        let mut found = false;
        for set in [&d.train, &d.validation] {
            for i in 0..set.len() {
                if (set.features.get(i, 0) - 1.2).abs() < 1e-12
                    && set.features.get(i, 1).abs() < 1e-9
                {
                    found = true;
                }
            }
        }
        assert!(found, "outer spiral endpoint (1.2, 0) missing");
    }

    #[test]
    fn peaks_reference_value() {
        // f(0,0) = 3 e^{-1} - (1/3) e^{-1} = (8/3) e^{-1}
        let want = 8.0 / 3.0 * (-1.0f64).exp();
        assert!((peaks(0.0, 0.0) - want).abs() < 1e-14);
        assert!((want - 0.9810).abs() < 1e-4);
    }

    #[test]
    fn peaks_classes_are_balanced_quantiles() {
        let d = gen_peaks(1);
        assert_eq!(d.train.len(), 4000);
        assert_eq!(d.validation.len(), 1000);
        assert_eq!(d.train.classes(), 5);
        let mut counts = [0usize; 5];
        for set in [&d.train, &d.validation] {
            for i in 0..set.len() {
                for c in 0..5 {
                    if set.labels.get(i, c) > 0.5 {
                        counts[c] += 1;
                    }
                }
            }
        }
        assert_eq!(counts, [1000; 5]);
    }

    #[test]
    fn widened_duplicates_columns() {
        let set = LabeledSet::new(
            Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap(),
            Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let wide = set.widened(3);
        assert_eq!(wide.features.cols(), 6);
        assert_eq!(wide.features.as_slice(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    fn write_idx_pair(dir: &Path, count: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut img = vec![];
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&(count as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for i in 0..count * 4 {
            img.push((i % 256) as u8);
        }
        let mut lbl = vec![];
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&(count as u32).to_be_bytes());
        for i in 0..count {
            lbl.push((i % 10) as u8);
        }
        let ip = dir.join("img.idx");
        let lp = dir.join("lbl.idx");
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx_pair(dir.path(), 12);
        let x = load_idx_images(&ip).unwrap();
        assert_eq!(x.rows(), 12);
        assert_eq!(x.cols(), 4);
        assert_eq!(x.get(0, 0), 0.0);
        assert!((x.get(0, 1) - 1.0 / 255.0).abs() < 1e-15);
        let c = load_idx_labels(&lp).unwrap();
        assert_eq!(c.rows(), 12);
        assert_eq!(c.get(3, 3), 1.0);
        assert_eq!(c.get(11, 1), 1.0);

        let d = load_idx_split(dir.path(), "img.idx", "lbl.idx", 8, 4, 5).unwrap();
        assert_eq!(d.train.len(), 8);
        assert_eq!(d.validation.len(), 4);
    }

    #[test]
    fn idx_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("bad.idx");
        std::fs::write(&bad_magic, 0x12345678u32.to_be_bytes()).unwrap();
        match load_idx_images(&bad_magic) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("expected magic parse error, got {other:?}"),
        }

        let truncated = dir.path().join("trunc.idx");
        let mut img = vec![];
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&5u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[1, 2, 3]); // far too short
        std::fs::write(&truncated, img).unwrap();
        match load_idx_images(&truncated) {
            Err(Error::Parse { offset: 16, .. }) => {}
            other => panic!("expected length parse error, got {other:?}"),
        }

        let bad_label = dir.path().join("lbl.idx");
        let mut lbl = vec![];
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(17);
        std::fs::write(&bad_label, lbl).unwrap();
        assert!(matches!(load_idx_labels(&bad_label), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_export_shape() {
        let d = gen_swiss_roll();
        let mut buf = Vec::new();
        write_csv(&d.validation, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,label");
        assert_eq!(text.lines().count(), 1 + d.validation.len());
    }
}
