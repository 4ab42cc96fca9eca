//! Dataset ingestion, standardization, splits and synthetic data.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, ParseLocation, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Default augmentation noise, in standardized units.
pub const DEFAULT_AUGMENT_NOISE: f64 = 0.05;

/// Per-feature statistics from a training set. Population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// 1 for constant features.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(y: &DMatrix<f64>) -> Result<Self> {
        let (d, n) = y.shape();
        if n < 2 {
            return Err(Error::invalid(format!("standardizing needs at least 2 samples, got {n}")));
        }
        let mut mean = Vec::with_capacity(d);
        let mut std = Vec::with_capacity(d);
        for row in y.row_iter() {
            let first = row[0];
            if row.iter().all(|&v| v == first) {
                mean.push(first);
                std.push(1.0);
                continue;
            }
            let m = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension vs standardizer",
                expected: self.dim(),
                got: y.nrows(),
            });
        }
        Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
            (y[(i, j)] - self.mean[i]) / self.std[i]
        }))
    }
}

/// Columns of `y` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub y: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Original label text for each class id.
    pub label_names: Vec<String>,
    /// Present once the data has been standardized.
    pub standardizer: Option<Standardizer>,
}

impl LabeledDataset {
    pub fn new(y: DMatrix<f64>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if labels.len() != y.ncols() {
            return Err(Error::DimensionMismatch {
                what: "labels vs samples",
                expected: y.ncols(),
                got: labels.len(),
            });
        }
        let n_classes = label_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Self {
            y,
            labels,
            n_classes,
            label_names,
            standardizer: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples at `idx`, in that order, sharing this dataset's classes.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            y: self.y.select_columns(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            label_names: self.label_names.clone(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn is_standardized(&self) -> bool {
        self.standardizer.is_some()
    }
}

/// Raw unsigned-byte IDX image tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn parse_err(source: &str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        location: ParseLocation::ByteOffset(offset as u64),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, source: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(source, bytes.len(), "file ends inside the header"))
}

/// Parses an unsigned-byte IDX tensor with the expected magic; returns its
/// dimensions and payload.
fn parse_idx(bytes: &[u8], magic: u32, source: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    let got = be_u32(bytes, 0, source)?;
    if got != magic {
        return Err(parse_err(
            source,
            0,
            format!("bad magic number {got:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        dims.push(be_u32(bytes, 4 + 4 * i, source)? as usize);
    }
    let start = 4 + 4 * ndims;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(source, 4, "dimensions overflow"))?;
    let available = bytes.len() - start;
    if available < len {
        return Err(parse_err(
            source,
            bytes.len(),
            format!("truncated payload: expected {len} bytes, found {available}"),
        ));
    }
    if available > len {
        return Err(parse_err(
            source,
            start + len,
            format!("{} trailing bytes after payload", available - len),
        ));
    }
    Ok((dims, bytes[start..].to_vec()))
}

pub fn parse_idx_images(bytes: &[u8], source: &str) -> Result<IdxImages> {
    let (dims, pixels) = parse_idx(bytes, IDX_IMAGES_MAGIC, source)?;
    Ok(IdxImages {
        count: dims[0],
        rows: dims[1],
        cols: dims[2],
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], source: &str) -> Result<Vec<u8>> {
    Ok(parse_idx(bytes, IDX_LABELS_MAGIC, source)?.1)
}

pub fn encode_idx_images(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::invalid("pixel buffer does not match image dimensions"));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let n = u32::try_from(labels.len()).map_err(|_| Error::invalid("label count exceeds u32"))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

pub fn write_idx(images_path: &Path, labels_path: &Path, images: &IdxImages, labels: &[u8]) -> Result<()> {
    if labels.len() != images.count {
        return Err(Error::DimensionMismatch {
            what: "label count vs image count",
            expected: images.count,
            got: labels.len(),
        });
    }
    fs::write(images_path, encode_idx_images(images)?).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, encode_idx_labels(labels)?).map_err(|e| Error::io(labels_path, e))
}

/// Flattens each image row-major into a column, scaled to [0, 1].
pub fn idx_to_matrix(images: &IdxImages) -> DMatrix<f64> {
    let d = images.rows * images.cols;
    DMatrix::from_fn(d, images.count, |i, j| images.pixels[j * d + i] as f64 / 255.0)
}

pub fn load_idx_images(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = read_file(path)?;
    Ok(idx_to_matrix(&parse_idx_images(&bytes, &path.display().to_string())?))
}

/// Label values are re-indexed densely in ascending order; names keep the
/// original values.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let image_bytes = read_file(images_path)?;
    let images = parse_idx_images(&image_bytes, &images_path.display().to_string())?;
    let label_src = labels_path.display().to_string();
    let raw = parse_idx_labels(&read_file(labels_path)?, &label_src)?;
    if raw.len() != images.count {
        return Err(parse_err(
            &label_src,
            4,
            format!("{} labels for {} images", raw.len(), images.count),
        ));
    }
    let mut distinct: Vec<u8> = raw.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels = raw
        .iter()
        .map(|v| distinct.binary_search(v).unwrap())
        .collect();
    let names = distinct.iter().map(|v| v.to_string()).collect();
    LabeledDataset::new(idx_to_matrix(&images), labels, names)
}

/// Numeric CSV with a header. Returns the feature columns as a `d × N`
/// matrix, the header names of those columns, and the raw label cells.
fn read_csv_table(
    path: &Path,
    label_column: Option<&str>,
) -> Result<(DMatrix<f64>, Vec<String>, Vec<String>)> {
    let source = path.display().to_string();
    let bytes = read_file(path)?;
    let perr = |line: u64, message: String| Error::Parse {
        source_name: source.clone(),
        location: ParseLocation::Line(line),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => return Err(perr(1, e.to_string())),
    };
    if header.iter().all(|h| h.is_empty()) && label_column.is_none() {
        // an empty file holds no samples
        return Ok((DMatrix::zeros(0, 0), Vec::new(), Vec::new()));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| perr(1, format!("no column named {name:?} in header")))?,
        ),
        None => None,
    };
    let width = header.len();
    let d = width - label_idx.map_or(0, |_| 1);
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            perr(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() && width > 1 {
            continue;
        }
        if record.len() != width {
            return Err(perr(line, format!("expected {width} fields, found {}", record.len())));
        }
        for (i, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(i) == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| perr(line, format!("non-numeric value {cell:?} in column {}", i + 1)))?;
            if !v.is_finite() {
                return Err(perr(line, format!("non-finite value {cell:?} in column {}", i + 1)));
            }
            values.push(v);
        }
    }
    let n = values.len() / d.max(1);
    let y = if d == 0 {
        DMatrix::zeros(0, raw_labels.len())
    } else {
        DMatrix::from_column_slice(d, n, &values)
    };
    Ok((y, feature_names, raw_labels))
}

/// Loads a labeled CSV. Labels are re-indexed in first-seen order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let (y, _, raw) = read_csv_table(path, Some(label_column))?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .into_iter()
        .map(|name| {
            *ids.entry(name.clone()).or_insert_with(|| {
                names.push(name);
                names.len() - 1
            })
        })
        .collect();
    LabeledDataset::new(y, labels, names)
}

/// Loads unlabeled CSV features, dropping `label_column` if present.
pub fn load_csv_features(path: &Path, label_column: Option<&str>) -> Result<DMatrix<f64>> {
    let header_has = |name: &str| -> Result<bool> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text.lines().next().unwrap_or("");
        Ok(first.split(',').any(|h| h.trim() == name))
    };
    let label = match label_column {
        Some(name) if header_has(name)? => Some(name),
        _ => None,
    };
    Ok(read_csv_table(path, label)?.0)
}

/// Population-variance standardization; keeps the statistics for test data.
pub fn standardize(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let st = Standardizer::fit(&ds.y)?;
    let mut out = ds.clone();
    out.y = st.apply(&ds.y)?;
    out.standardizer = Some(st);
    Ok(out)
}

/// Stratified `k`-fold split. Returns `(train, test)` index lists, sorted.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; labels.len()];
    let mut offset = 0;
    for (c, m) in members.iter_mut().enumerate() {
        if m.is_empty() {
            continue;
        }
        if m.len() < k {
            return Err(Error::invalid(format!(
                "class {c} has {} members, fewer than {k} folds",
                m.len()
            )));
        }
        m.shuffle(&mut rng);
        for (r, &i) in m.iter().enumerate() {
            fold_of[i] = (offset + r) % k;
        }
        offset += m.len();
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| fold_of[i] == f);
            (train, test)
        })
        .collect())
}

/// Gaussian clusters around class means with pairwise mean distance
/// `separation`. Samples are grouped by class.
pub fn synth_clusters(
    d: usize,
    n_classes: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if d == 0 || n_classes == 0 || per_class == 0 {
        return Err(Error::invalid("synthetic data needs positive counts"));
    }
    if !(separation >= 0.0) {
        return Err(Error::invalid(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let directions = if n_classes <= d {
        // scaled simplex: orthonormal directions in a random orientation
        let g = DMatrix::from_fn(d, n_classes, |_, _| StandardNormal.sample(&mut rng));
        g.qr().q()
    } else {
        let mut g = DMatrix::from_fn(d, n_classes, |_, _| StandardNormal.sample(&mut rng));
        crate::linalg::normalize_columns(&mut g);
        g
    };
    let n = n_classes * per_class;
    let mut y = DMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        let mean = directions.column(c) * radius;
        for s in 0..per_class {
            let j = c * per_class + s;
            for i in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                y[(i, j)] = mean[i] + e;
            }
            labels.push(c);
        }
    }
    let names = (0..n_classes).map(|c| c.to_string()).collect();
    LabeledDataset::new(y, labels, names)
}

/// Raises every class below `target_count` to exactly that size with noisy
/// copies of random members.
pub fn augment_minority(
    ds: &LabeledDataset,
    target_count: usize,
    noise_std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid(format!("noise std must be positive, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no members to augment")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut new_cols: Vec<DVector<f64>> = Vec::new();
    let mut new_labels = Vec::new();
    for (c, &count) in counts.iter().enumerate() {
        if count >= target_count {
            continue;
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        for _ in count..target_count {
            let src = members[rng.random_range(0..members.len())];
            let col = ds.y.column(src).map(|v| v + noise.sample(&mut rng));
            new_cols.push(col);
            new_labels.push(c);
        }
    }
    if new_cols.is_empty() {
        return Ok(ds.clone());
    }
    let n = ds.len();
    let mut y = ds.y.clone().resize_horizontally(n + new_cols.len(), 0.0);
    for (a, col) in new_cols.iter().enumerate() {
        y.set_column(n + a, col);
    }
    let mut out = ds.clone();
    out.y = y;
    out.labels.extend(new_labels);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_fixture() {
        let images = IdxImages {
            count: 4,
            rows: 2,
            cols: 2,
            pixels: (0..16).map(|v| v * 17).collect(),
        };
        let bytes = encode_idx_images(&images).unwrap();
        let parsed = parse_idx_images(&bytes, "mem").unwrap();
        let m = idx_to_matrix(&parsed);
        assert_eq!(m.shape(), (4, 4));
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(3, 3)], 1.0);
        assert_eq!(m[(1, 0)], 17.0 / 255.0);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let mut bytes = encode_idx_images(&IdxImages {
            count: 2,
            rows: 1,
            cols: 3,
            pixels: vec![1; 6],
        })
        .unwrap();
        bytes[3] = 0x01;
        match parse_idx_images(&bytes, "x") {
            Err(Error::Parse { location, .. }) => assert_eq!(location, ParseLocation::ByteOffset(0)),
            other => panic!("{other:?}"),
        }
        bytes[3] = 0x03;
        bytes.pop();
        match parse_idx_images(&bytes, "x") {
            Err(Error::Parse { location, .. }) => {
                assert_eq!(location, ParseLocation::ByteOffset(bytes.len() as u64))
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_labels(&[0, 0, 8], "x").is_err());
    }

    #[test]
    fn standardizer_constant_feature() {
        let y = DMatrix::from_row_slice(2, 3, &[0.1, 0.1, 0.1, 1.0, 2.0, 3.0]);
        let st = Standardizer::fit(&y).unwrap();
        let z = st.apply(&y).unwrap();
        assert!(z.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(st.std[0], 1.0);
        let expected = (2.0f64 / 3.0).sqrt();
        assert!((st.std[1] - expected).abs() < 1e-15);
        assert!(Standardizer::fit(&DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn kfold_rejects_small_classes() {
        assert!(stratified_kfold(&[0, 0, 1, 1, 1], 3, 0).is_err());
        assert!(stratified_kfold(&[0, 0, 1, 1], 1, 0).is_err());
    }

    #[test]
    fn synth_zero_separation_shares_mean() {
        let ds = synth_clusters(3, 4, 5, 0.0, 1).unwrap();
        assert_eq!(ds.class_counts(), vec![5; 4]);
        assert_eq!(ds.n_classes, 4);
    }
}
