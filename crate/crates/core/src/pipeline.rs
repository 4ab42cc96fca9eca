//! End-to-end fitting: standardize, choose p, project, learn the dictionary,
//! compute medoids.

use std::time::Instant;

use log::info;

use crate::classify::{compute_medoids, evaluate, ClassifierModel, Metrics, DEFAULT_TAU};
use crate::data::{augment_minority, standardize, LabeledDataset, DEFAULT_AUGMENT_NOISE};
use crate::dict::{code_by_class, train, TrainConfig, TrainReport};
use crate::dimsel::{
    epsilon_for_dimension, jl_min_dimension, select_dimension, PerturbationBudget,
    DEFAULT_FLATNESS_TOL,
};
use crate::embed::{fit_mkspca, fit_mspca, median_bandwidth, one_hot_labels, transform, Kernel};
use crate::error::{Error, Result};
use crate::sparse::SparseCoderConfig;

/// How the projection dimensionality is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionChoice {
    Epsilon(f64),
    /// ε from the flatness of the bound.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dimension: DimensionChoice,
    pub atoms_per_class: usize,
    pub coder: SparseCoderConfig,
    pub tau: f64,
    /// Gaussian bandwidth for kernel mode; median pairwise distance if unset.
    pub kernel_bandwidth: Option<f64>,
    pub seed: u64,
    pub max_outer: usize,
    pub train_tol: f64,
    pub min_rel_change: f64,
    pub augment_to: Option<usize>,
    pub augment_noise: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dimension: DimensionChoice::Auto,
            atoms_per_class: 10,
            coder: SparseCoderConfig::default(),
            tau: DEFAULT_TAU,
            kernel_bandwidth: None,
            seed: 0,
            max_outer: TrainConfig::default().max_outer,
            train_tol: TrainConfig::default().tol,
            min_rel_change: TrainConfig::default().min_rel_change,
            augment_to: None,
            augment_noise: DEFAULT_AUGMENT_NOISE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ClassifierModel,
    pub report: TrainReport,
    pub train_seconds: f64,
}

/// Resolves `(p, ε)` for `n` training samples; ε is NaN when no ε in (0, 1)
/// yields a fixed `p`.
pub fn resolve_dimension(choice: DimensionChoice, n: usize) -> Result<(usize, f64)> {
    match choice {
        DimensionChoice::Epsilon(e) => {
            let eps = PerturbationBudget::new(e)?;
            Ok((jl_min_dimension(n, eps)?, e))
        }
        DimensionChoice::Auto => {
            let sel = select_dimension(n, DEFAULT_FLATNESS_TOL)?;
            Ok((sel.p, sel.epsilon.value()))
        }
        DimensionChoice::Fixed(p) => {
            if p == 0 {
                return Err(Error::invalid("p must be at least 1"));
            }
            let e = epsilon_for_dimension(n, p)?.map_or(f64::NAN, |e| e.value());
            Ok((p, e))
        }
    }
}

/// Fits the whole classifier on `ds` (raw features).
pub fn fit(ds: &LabeledDataset, cfg: &PipelineConfig) -> Result<FitOutcome> {
    let start = Instant::now();
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {}", cfg.tau)));
    }
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::invalid(format!("class {c} has no training samples")));
    }
    let mut train_set = standardize(ds)?;
    if let Some(target) = cfg.augment_to {
        train_set = augment_minority(&train_set, target, cfg.augment_noise, cfg.seed)?;
    }
    let (d, n) = train_set.y.shape();
    let (p, epsilon) = resolve_dimension(cfg.dimension, n)?;
    let labels = one_hot_labels(&train_set.labels, train_set.n_classes)?;
    let mut projection = if p > d {
        let bandwidth = match cfg.kernel_bandwidth {
            Some(h) => h,
            None => median_bandwidth(&train_set.y),
        };
        info!("p = {p} exceeds d = {d}: kernel projection, bandwidth {bandwidth:.4}");
        fit_mkspca(&train_set.y, &labels, p, Kernel::Gaussian { bandwidth }, None)?
    } else {
        info!("p = {p}, d = {d}: linear projection");
        fit_mspca(&train_set.y, &labels, p)?
    };
    projection.epsilon = epsilon;
    let z = transform(&projection, &train_set.y)?;

    let train_cfg = TrainConfig {
        atoms_per_class: cfg.atoms_per_class,
        tol: cfg.train_tol,
        max_outer: cfg.max_outer,
        min_rel_change: cfg.min_rel_change,
        seed: cfg.seed,
        coder: cfg.coder,
    };
    let (dictionary, _, report) = train(&z, &train_set.labels, &train_cfg)?;
    info!(
        "dictionary {}x{} after {} outer iterations, loss {:.6e}",
        dictionary.atom_dim(),
        dictionary.atom_count(),
        report.outer_iterations,
        report.loss_trajectory.last().copied().unwrap_or(f64::NAN)
    );
    let codes = code_by_class(&dictionary, &z, &train_set.labels, &cfg.coder)?;
    let medoids = compute_medoids(&codes, &train_set.labels)?;
    let model = ClassifierModel {
        projection,
        dictionary,
        medoids,
        tau: cfg.tau,
        coder: cfg.coder,
        standardizer: train_set.standardizer.clone(),
        label_names: train_set.label_names.clone(),
    };
    model.validate()?;
    Ok(FitOutcome {
        model,
        report,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub p: usize,
    pub epsilon: f64,
    pub mode: &'static str,
    pub metrics: Metrics,
    pub train_seconds: f64,
    pub outer_iterations: usize,
}

/// Fits on `train_idx` and evaluates on `test_idx`.
pub fn run_fold(
    ds: &LabeledDataset,
    cfg: &PipelineConfig,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<FoldResult> {
    let train_set = ds.subset(train_idx);
    let test_set = ds.subset(test_idx);
    let fitted = fit(&train_set, cfg)?;
    let metrics = evaluate(&fitted.model, &test_set.y, &test_set.labels)?;
    Ok(FoldResult {
        fold,
        p: fitted.model.projection.p,
        epsilon: fitted.model.projection.epsilon,
        mode: fitted.model.projection.mode_name(),
        metrics,
        train_seconds: fitted.train_seconds,
        outer_iterations: fitted.report.outer_iterations,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_choices() {
        assert_eq!(resolve_dimension(DimensionChoice::Epsilon(0.4), 50000).unwrap(), (320, 0.4));
        let (p, e) = resolve_dimension(DimensionChoice::Auto, 50000).unwrap();
        assert!((0.3..=0.4).contains(&e));
        assert_eq!(p, jl_min_dimension(50000, PerturbationBudget::new(e).unwrap()).unwrap());
        let (p, e) = resolve_dimension(DimensionChoice::Fixed(300), 1000).unwrap();
        assert_eq!(p, 300);
        assert!(e > 0.0 && e < 1.0);
        assert!(resolve_dimension(DimensionChoice::Fixed(3), 1000).unwrap().1.is_nan());
        assert!(resolve_dimension(DimensionChoice::Epsilon(1.2), 1000).is_err());
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[1.0, 1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
