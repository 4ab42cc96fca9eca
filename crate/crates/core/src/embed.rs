//! Label-aware orthonormal projections.
//!
//! The linear projection keeps the top eigenvectors of `Y L Yᵀ`, where
//! `L = Hᵀ H` is the label kernel of the one-hot matrix `H`. The scatter is
//! formed through the `d × C` factor `Y Hᵀ`, so `L` itself is never built.
//! The kernel variant solves the same problem on kernel-PCA coordinates of the
//! training set and is used when the requested dimensionality exceeds `d`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sign_normalize, sym_eigen_desc};

/// Eigenvalues at or below this fraction of the trace count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Ridge used for the kernel Gram matrix, relative to `trace(K) / N`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

pub const HISTOGRAM_BINS: usize = 20;

/// One-hot label matrix `H` (`C × N`) and the per-class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelKernelFactors {
    pub h: DMatrix<f64>,
    pub class_counts: Vec<usize>,
}

impl LabelKernelFactors {
    pub fn n_classes(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.h.ncols()
    }

    /// The dense `N × N` label kernel `Hᵀ H`. Only meant for small inputs.
    pub fn label_kernel(&self) -> DMatrix<f64> {
        self.h.transpose() * &self.h
    }
}

pub fn one_hot_labels(labels: &[usize], n_classes: usize) -> Result<LabelKernelFactors> {
    let mut h = DMatrix::zeros(n_classes, labels.len());
    let mut class_counts = vec![0; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::invalid(format!(
                "label {c} at position {i} is outside [0, {n_classes})"
            )));
        }
        h[(c, i)] = 1.0;
        class_counts[c] += 1;
    }
    Ok(LabelKernelFactors { h, class_counts })
}

/// `S = (Y Hᵀ)(Y Hᵀ)ᵀ`, the label-weighted scatter `Y L Yᵀ`.
pub fn scatter_matrix(y: &DMatrix<f64>, labels: &LabelKernelFactors) -> Result<DMatrix<f64>> {
    if y.ncols() != labels.n_samples() {
        return Err(Error::DimensionMismatch {
            what: "samples in data vs label matrix",
            expected: labels.n_samples(),
            got: y.ncols(),
        });
    }
    let class_sums = y * labels.h.transpose();
    let s = &class_sums * class_sums.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(−‖x − y‖² / (2 h²))`.
    Gaussian { bandwidth: f64 },
    /// Plain inner product; the kernel path then reproduces the linear fit.
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Gaussian { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// Cross-kernel matrix `κ(A, B)` with `A`, `B` holding samples as columns.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
            self.eval(a.column(i).as_slice(), b.column(j).as_slice())
        })
    }

    pub fn gram(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.ncols();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = self.eval(a.column(i).as_slice(), a.column(j).as_slice());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Median pairwise Euclidean distance, a scale-aware default bandwidth.
///
/// Uses every pair up to 2000 samples and an evenly strided subset beyond.
pub fn median_bandwidth(y: &DMatrix<f64>) -> f64 {
    let n = y.ncols();
    let stride = n.div_ceil(2000).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push((y.column(i) - y.column(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionKind {
    /// `Z = Uᵀ Y` with `U` of shape `d × p`.
    Linear { u: DMatrix<f64> },
    /// `Z = Vᵀ κ(Y_train, Y)` with `V` of shape `N × p`.
    Kernel {
        v: DMatrix<f64>,
        kernel: Kernel,
        train_features: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub kind: ProjectionKind,
    pub p: usize,
    /// Distortion budget the dimensionality was derived from.
    pub epsilon: f64,
    /// Divide projected vectors by `√p`.
    pub scale_jl: bool,
    /// Objective value carried by each retained direction, descending for the
    /// label-driven directions.
    pub eigenvalues: Vec<f64>,
}

impl ProjectionModel {
    pub fn input_dim(&self) -> usize {
        match &self.kind {
            ProjectionKind::Linear { u } => u.nrows(),
            ProjectionKind::Kernel { train_features, .. } => train_features.nrows(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ProjectionKind::Linear { .. })
    }

    pub fn mode_name(&self) -> &'static str {
        match self.kind {
            ProjectionKind::Linear { .. } => "linear",
            ProjectionKind::Kernel { .. } => "kernel",
        }
    }
}

/// Orthonormal `r × p` basis maximizing `tr(Wᵀ F L Fᵀ W)`, where `F` holds
/// samples as columns. Directions the labels leave undetermined are filled
/// from the deflated plain scatter `F Fᵀ`.
fn supervised_basis(
    features: &DMatrix<f64>,
    labels: &LabelKernelFactors,
    p: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let r = features.nrows();
    let s = scatter_matrix(features, labels)?;
    let (values, vectors) = sym_eigen_desc(&s)?;
    let tol = RANK_TOL * s.trace().max(0.0);
    let supervised = values.iter().take_while(|&&v| v > tol).count().min(p);

    let mut cols: Vec<DVector<f64>> = (0..supervised)
        .map(|i| vectors.column(i).into_owned())
        .collect();
    let mut eigenvalues: Vec<f64> = values[..supervised].to_vec();

    if supervised < p {
        let mut deflate = DMatrix::<f64>::identity(r, r);
        if supervised > 0 {
            let chosen = DMatrix::from_columns(&cols);
            deflate -= &chosen * chosen.transpose();
        }
        let plain = features * features.transpose();
        let residual = &deflate * plain * &deflate;
        let (_, candidates) = sym_eigen_desc(&residual)?;
        for cand in candidates.column_iter() {
            if cols.len() == p {
                break;
            }
            let mut v = cand.into_owned();
            // two Gram-Schmidt passes against the chosen columns
            for _ in 0..2 {
                for c in &cols {
                    let dot = c.dot(&v);
                    v.axpy(-dot, c, 1.0);
                }
            }
            let norm = v.norm();
            if norm < 0.5 {
                continue;
            }
            v /= norm;
            sign_normalize(v.as_mut_slice());
            eigenvalues.push(v.dot(&(&s * &v)));
            cols.push(v);
        }
        if cols.len() < p {
            return Err(Error::numerical(format!(
                "could only complete {} of {p} orthonormal directions",
                cols.len()
            )));
        }
    }
    Ok((DMatrix::from_columns(&cols), eigenvalues))
}

/// Linear projection: top-`p` eigenvectors of the label-weighted scatter.
///
/// `y` is expected to be standardized per feature.
pub fn fit_mspca(y: &DMatrix<f64>, labels: &LabelKernelFactors, p: usize) -> Result<ProjectionModel> {
    let d = y.nrows();
    if p == 0 || p > d {
        return Err(Error::invalid(format!(
            "linear projection needs 1 <= p <= d = {d}, got p = {p}"
        )));
    }
    let (u, eigenvalues) = supervised_basis(y, labels, p)?;
    Ok(ProjectionModel {
        kind: ProjectionKind::Linear { u },
        p,
        epsilon: f64::NAN,
        scale_jl: false,
        eigenvalues,
    })
}

/// Kernel projection solving `(K L K) v = λ K v` subject to `Vᵀ K V = I`.
///
/// The problem is solved on the eigen-range of the Gram matrix `K` above
/// `ridge` (default `1e-8 · trace(K) / N`): writing `K = Q Λ Qᵀ`, the linear fit
/// runs on coordinates `Λ^{1/2} Qᵀ` and `V = Q Λ^{-1/2} W`. With `ridge = 0`
/// the Gram matrix must be numerically non-singular.
pub fn fit_mkspca(
    y: &DMatrix<f64>,
    labels: &LabelKernelFactors,
    p: usize,
    kernel: Kernel,
    ridge: Option<f64>,
) -> Result<ProjectionModel> {
    let n = y.ncols();
    if labels.n_samples() != n {
        return Err(Error::DimensionMismatch {
            what: "samples in data vs label matrix",
            expected: labels.n_samples(),
            got: n,
        });
    }
    if p == 0 || p > n {
        return Err(Error::invalid(format!(
            "kernel projection needs 1 <= p <= N = {n}, got p = {p}"
        )));
    }
    if let Kernel::Gaussian { bandwidth } = kernel {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
    }
    let gram = kernel.gram(y);
    let ridge = ridge.unwrap_or(DEFAULT_RIDGE_SCALE * gram.trace() / n as f64);
    if !(ridge >= 0.0) {
        return Err(Error::invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    let (lambda, q) = sym_eigen_desc(&gram)?;
    let cutoff = if ridge > 0.0 {
        ridge
    } else {
        let floor = n as f64 * f64::EPSILON * lambda[0].abs();
        if lambda[n - 1] <= floor {
            return Err(Error::numerical(
                "kernel Gram matrix is singular; use a ridge > 0",
            ));
        }
        floor
    };
    let rank = lambda.iter().take_while(|&&l| l > cutoff).count();
    if p > rank {
        return Err(Error::invalid(format!(
            "p = {p} exceeds the numerical rank {rank} of the kernel Gram matrix"
        )));
    }
    let sqrt_l: Vec<f64> = lambda[..rank].iter().map(|l| l.sqrt()).collect();
    let mut coords = q.columns(0, rank).transpose();
    for (i, mut row) in coords.row_iter_mut().enumerate() {
        row *= sqrt_l[i];
    }
    let (w, eigenvalues) = supervised_basis(&coords, labels, p)?;
    let mut q_scaled = q.columns(0, rank).into_owned();
    for (i, mut col) in q_scaled.column_iter_mut().enumerate() {
        col /= sqrt_l[i];
    }
    let v = q_scaled * w;
    Ok(ProjectionModel {
        kind: ProjectionKind::Kernel {
            v,
            kernel,
            train_features: y.clone(),
        },
        p,
        epsilon: f64::NAN,
        scale_jl: false,
        eigenvalues,
    })
}

/// Maps the columns of `yq` into the `p`-dimensional projected space.
pub fn transform(model: &ProjectionModel, yq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = model.input_dim();
    if yq.nrows() != d {
        return Err(Error::DimensionMismatch {
            what: "feature dimension of query vs projection",
            expected: d,
            got: yq.nrows(),
        });
    }
    let mut z = match &model.kind {
        ProjectionKind::Linear { u } => u.transpose() * yq,
        ProjectionKind::Kernel {
            v,
            kernel,
            train_features,
        } => v.transpose() * kernel.cross(train_features, yq),
    };
    if model.scale_jl {
        z /= (model.p as f64).sqrt();
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Empirical distortion of squared pairwise distances under a projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionReport {
    pub epsilon: f64,
    pub pairs: Vec<(usize, usize)>,
    pub ratios: Vec<f64>,
    /// Sampled pairs skipped because the two samples coincide.
    pub skipped_identical: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub outside_fraction: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Draws up to `n_pairs` distinct index pairs `i < j` from `0..n`.
pub fn sample_pairs(n: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let want = n_pairs.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if want * 2 >= total {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        for k in 0..want {
            let pick = rng.random_range(k..all.len());
            all.swap(k, pick);
        }
        all.truncate(want);
        return all;
    }
    let mut seen = HashSet::with_capacity(want);
    let mut pairs = Vec::with_capacity(want);
    while pairs.len() < want {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if seen.insert(key) {
            pairs.push(key);
        }
    }
    pairs
}

/// Ratio `‖f(x_i) − f(x_j)‖² / ‖x_i − x_j‖²` over sampled pairs, where `f` is
/// [`transform`] with the model's own scaling.
pub fn distortion_report(
    model: &ProjectionModel,
    y: &DMatrix<f64>,
    n_pairs: usize,
    seed: u64,
) -> Result<DistortionReport> {
    let n = y.ncols();
    if n < 2 {
        return Err(Error::invalid("distortion needs at least two samples"));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("distortion needs at least one pair"));
    }
    let z = transform(model, y)?;
    let sampled = sample_pairs(n, n_pairs, seed);
    let mut pairs = Vec::with_capacity(sampled.len());
    let mut ratios = Vec::with_capacity(sampled.len());
    let mut skipped = 0;
    for (i, j) in sampled {
        let orig = (y.column(i) - y.column(j)).norm_squared();
        if orig == 0.0 {
            skipped += 1;
            continue;
        }
        let mapped = (z.column(i) - z.column(j)).norm_squared();
        pairs.push((i, j));
        ratios.push(mapped / orig);
    }
    if ratios.is_empty() {
        return Err(Error::invalid(
            "all sampled pairs are identical samples; distortion is undefined",
        ));
    }
    let epsilon = if model.epsilon.is_finite() {
        model.epsilon
    } else {
        0.0
    };
    Ok(summarize_ratios(epsilon, pairs, ratios, skipped))
}

pub(crate) fn summarize_ratios(
    epsilon: f64,
    pairs: Vec<(usize, usize)>,
    ratios: Vec<f64>,
    skipped_identical: usize,
) -> DistortionReport {
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (ratios.iter().sum::<f64>() / ratios.len() as f64).clamp(min, max);
    let outside = ratios
        .iter()
        .filter(|&&r| r <= 1.0 - epsilon || r >= 1.0 + epsilon)
        .count();
    let lo = min.min(1.0 - epsilon);
    let hi = max.max(1.0 + epsilon);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == HISTOGRAM_BINS {
                hi
            } else {
                lo + (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &r in &ratios {
        let b = if width > 0.0 {
            (((r - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        histogram[b].count += 1;
    }
    DistortionReport {
        epsilon,
        outside_fraction: outside as f64 / ratios.len() as f64,
        pairs,
        ratios,
        skipped_identical,
        min,
        max,
        mean,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn one_hot_basic() {
        let f = one_hot_labels(&[0, 1, 0], 2).unwrap();
        assert_eq!(f.h, mat(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        assert_eq!(f.class_counts, vec![2, 1]);
        assert!(one_hot_labels(&[0, 2], 2).is_err());

        let single = one_hot_labels(&[0; 5], 1).unwrap();
        assert!(single.label_kernel().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn label_kernel_matches_pairwise_equality() {
        let labels = [2, 0, 1, 2, 2, 0, 1];
        let l = one_hot_labels(&labels, 3).unwrap().label_kernel();
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                let expected = if labels[i] == labels[j] { 1.0 } else { 0.0 };
                assert_eq!(l[(i, j)], expected);
            }
        }
    }

    #[test]
    fn scatter_hand_instance() {
        // columns (1,2), (3,-1) in class 0 and (0,4) in class 1
        let y = mat(2, 3, &[1.0, 3.0, 0.0, 2.0, -1.0, 4.0]);
        let f = one_hot_labels(&[0, 0, 1], 2).unwrap();
        let s = scatter_matrix(&y, &f).unwrap();
        // class sums (4,1) and (0,4)
        let expected = mat(2, 2, &[16.0, 4.0, 4.0, 17.0]);
        assert!((&s - &expected).abs().max() < 1e-12);
        let direct = &y * f.label_kernel() * y.transpose();
        assert!((&s - direct).abs().max() < 1e-12);
    }

    #[test]
    fn scatter_one_sample_per_class() {
        let y = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = one_hot_labels(&[1, 0], 2).unwrap();
        let s = scatter_matrix(&y, &f).unwrap();
        assert!((s - &y * y.transpose()).abs().max() < 1e-12);
        assert!(scatter_matrix(&y, &one_hot_labels(&[0], 1).unwrap()).is_err());
    }

    #[test]
    fn mspca_two_orthogonal_class_directions() {
        // class 0 along e1 (sum 3), class 1 along e2 (sum 2)
        let y = mat(2, 4, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, -1.0, 3.0]);
        let f = one_hot_labels(&[0, 0, 1, 1], 2).unwrap();
        let m = fit_mspca(&y, &f, 2).unwrap();
        let ProjectionKind::Linear { u } = &m.kind else { panic!() };
        assert!((u[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((u[(1, 1)].abs() - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[0] - 9.0).abs() < 1e-9);
        assert!((m.eigenvalues[1] - 4.0).abs() < 1e-9);
        assert!(fit_mspca(&y, &f, 3).is_err());
        assert!(fit_mspca(&y, &f, 0).is_err());
    }

    #[test]
    fn rank_deficient_fill_is_orthonormal() {
        // single class: scatter has rank one, remaining columns come from Y Yᵀ
        let y = mat(3, 4, &[1.0, 2.0, 0.5, -1.0, 0.0, 1.0, 2.0, 1.0, 3.0, 0.0, 1.0, 1.0]);
        let f = one_hot_labels(&[0; 4], 1).unwrap();
        let m = fit_mspca(&y, &f, 3).unwrap();
        let ProjectionKind::Linear { u } = &m.kind else { panic!() };
        let gram = u.transpose() * u;
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        let sum = y.column_sum();
        let lead = u.column(0);
        assert!((lead.dot(&sum).abs() - sum.norm()).abs() < 1e-9);
        for col in u.column_iter() {
            let mut v: Vec<f64> = col.iter().copied().collect();
            assert_eq!(sign_normalize(&mut v), 1.0);
        }
    }

    #[test]
    fn transform_zero_and_mismatch() {
        let y = mat(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0]);
        let f = one_hot_labels(&[0, 1, 1], 2).unwrap();
        let m = fit_mspca(&y, &f, 1).unwrap();
        let z = transform(&m, &DMatrix::zeros(2, 1)).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
        assert!(matches!(
            transform(&m, &DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_constraint_and_ordering() {
        let y = DMatrix::from_fn(3, 12, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let labels: Vec<usize> = (0..12).map(|j| j % 3).collect();
        let f = one_hot_labels(&labels, 3).unwrap();
        let m = fit_mkspca(&y, &f, 5, Kernel::Gaussian { bandwidth: 2.0 }, None).unwrap();
        let ProjectionKind::Kernel { v, .. } = &m.kind else { panic!() };
        let k = Kernel::Gaussian { bandwidth: 2.0 }.gram(&y);
        let c = v.transpose() * k * v;
        assert!((c - DMatrix::identity(5, 5)).abs().max() < 1e-6);
        for w in m.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] - 1e-9);
        }
        assert!(m.eigenvalues.iter().all(|&l| l >= -1e-9));
        assert_eq!(transform(&m, &y).unwrap().shape(), (5, 12));
    }

    #[test]
    fn kernel_singular_without_ridge() {
        // duplicated sample makes the Gram matrix singular
        let y = mat(1, 3, &[1.0, 1.0, 2.0]);
        let f = one_hot_labels(&[0, 0, 1], 2).unwrap();
        let err = fit_mkspca(&y, &f, 1, Kernel::Gaussian { bandwidth: 1.0 }, Some(0.0));
        assert!(matches!(err, Err(Error::NumericalFailure(_))));
        assert!(fit_mkspca(&y, &f, 1, Kernel::Gaussian { bandwidth: 1.0 }, None).is_ok());
    }

    #[test]
    fn pair_sampling_distinct_and_deterministic() {
        for (n, k) in [(10, 45), (10, 20), (1000, 50), (5, 100)] {
            let a = sample_pairs(n, k, 7);
            assert_eq!(a, sample_pairs(n, k, 7));
            assert_eq!(a.len(), k.min(n * (n - 1) / 2));
            let set: HashSet<_> = a.iter().collect();
            assert_eq!(set.len(), a.len());
            assert!(a.iter().all(|&(i, j)| i < j && j < n));
        }
    }

    #[test]
    fn distortion_identity_map() {
        let y = DMatrix::from_fn(3, 8, |i, j| (i as f64 + 1.0) * (j as f64).sin());
        let model = ProjectionModel {
            kind: ProjectionKind::Linear {
                u: DMatrix::identity(3, 3),
            },
            p: 3,
            epsilon: 0.3,
            scale_jl: false,
            eigenvalues: vec![1.0; 3],
        };
        let r = distortion_report(&model, &y, 100, 1).unwrap();
        assert!(r.ratios.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert_eq!(r.outside_fraction, 0.0);
        assert!(r.min <= r.mean && r.mean <= r.max);
        assert_eq!(r.histogram.iter().map(|b| b.count).sum::<usize>(), r.ratios.len());

        let flat = DMatrix::from_element(3, 4, 2.0);
        assert!(distortion_report(&model, &flat, 10, 1).is_err());
    }
}
