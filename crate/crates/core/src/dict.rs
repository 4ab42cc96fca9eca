//! Shared dictionary learning in the projected space.
//!
//! Alternates class-blocked M-SBL coding with K-SVD atom updates on
//! `‖Z − D X‖_F²`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{normalize_columns, sign_normalize};
use crate::sparse::{residual_error, MsblCoder, SparseCoderConfig};

/// Atoms must have unit norm within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Suggested stagnation threshold for [`TrainConfig::min_rel_change`].
pub const MIN_REL_IMPROVEMENT: f64 = 1e-4;

/// A `p × K` matrix whose columns (atoms) have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps `atoms`, checking the unit-norm invariant.
    pub fn from_matrix(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::invalid("dictionary must have at least one atom"));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            let n = col.norm();
            if !((n - 1.0).abs() <= 1e-8) {
                return Err(Error::invalid(format!("atom {j} has norm {n}, expected 1")));
            }
        }
        Ok(Self { atoms })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom_dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub atoms_per_class: usize,
    /// Absolute loss below which training stops.
    pub tol: f64,
    pub max_outer: usize,
    /// Stop once `|Δloss| / loss` falls below this; 0 disables the check.
    pub min_rel_change: f64,
    pub seed: u64,
    pub coder: SparseCoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            atoms_per_class: 10,
            tol: 1e-6,
            max_outer: 30,
            min_rel_change: 0.0,
            seed: 0,
            coder: SparseCoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `‖Z − D X‖_F²` after each accepted outer iteration.
    pub loss_trajectory: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub replaced_atoms: usize,
}

/// `K = samples_per_class × n_classes`.
pub fn dictionary_size(samples_per_class: usize, n_classes: usize) -> Result<usize> {
    if samples_per_class == 0 || n_classes == 0 {
        return Err(Error::invalid(format!(
            "dictionary size needs positive inputs, got {samples_per_class} x {n_classes}"
        )));
    }
    samples_per_class
        .checked_mul(n_classes)
        .ok_or_else(|| Error::invalid("dictionary size overflows"))
}

/// Gaussian random `p × K` dictionary with unit-norm columns.
pub fn init_dictionary(p: usize, k: usize, seed: u64) -> Result<Dictionary> {
    if p == 0 || k < p {
        return Err(Error::invalid(format!(
            "dictionary must be overcomplete with p >= 1, got p = {p}, K = {k}"
        )));
    }
    Ok(gaussian_atoms(p, k, seed))
}

fn gaussian_atoms(p: usize, k: usize, seed: u64) -> Dictionary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = DMatrix::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    normalize_columns(&mut atoms);
    Dictionary { atoms }
}

/// One K-SVD pass over all atoms in index order. Each used atom becomes the
/// leading left singular vector of its restricted residual and its
/// coefficients the matching scaled right singular vector. Unused atoms are
/// replaced by the worst-represented signal.
pub fn ksvd_sweep(
    dict: &Dictionary,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<(Dictionary, DMatrix<f64>)> {
    let (d, x, _) = ksvd_sweep_counted(dict, z, x)?;
    Ok((d, x))
}

pub(crate) fn ksvd_sweep_counted(
    dict: &Dictionary,
    z: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<(Dictionary, DMatrix<f64>, usize)> {
    let (p, k) = dict.atoms.shape();
    if z.nrows() != p {
        return Err(Error::DimensionMismatch {
            what: "signal dimension vs atom dimension",
            expected: p,
            got: z.nrows(),
        });
    }
    if x.nrows() != k || x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch {
            what: "coefficient shape vs K x N",
            expected: k * z.ncols(),
            got: x.nrows() * x.ncols(),
        });
    }
    let mut atoms = dict.atoms.clone();
    let mut x = x.clone();
    let mut err = z - &atoms * &x;
    let mut replaced = 0;

    for j in 0..k {
        let omega: Vec<usize> = (0..x.ncols()).filter(|&n| x[(j, n)] != 0.0).collect();
        if omega.is_empty() {
            if replace_unused_atom(j, z, &mut atoms, &mut x, &mut err) {
                replaced += 1;
            }
            continue;
        }
        let atom = atoms.column(j).into_owned();
        let mut restricted = err.select_columns(&omega);
        for (c, &n) in omega.iter().enumerate() {
            restricted.column_mut(c).axpy(x[(j, n)], &atom, 1.0);
        }
        let svd = nalgebra::SVD::try_new(restricted.clone(), true, true, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::numerical(format!("SVD failed while updating atom {j}")))?;
        let (lead, sigma) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        if !(sigma > 0.0) {
            // nothing left to explain on this support
            for &n in &omega {
                x[(j, n)] = 0.0;
            }
            for (c, &n) in omega.iter().enumerate() {
                err.set_column(n, &restricted.column(c));
            }
            continue;
        }
        let mut new_atom: Vec<f64> = u.column(lead).iter().copied().collect();
        let sign = sign_normalize(&mut new_atom);
        let new_atom = DVector::from_vec(new_atom);
        if new_atom.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite update for atom {j}")));
        }
        atoms.set_column(j, &new_atom);
        for (c, &n) in omega.iter().enumerate() {
            let coef = sign * sigma * v_t[(lead, c)];
            x[(j, n)] = coef;
            let mut col = restricted.column(c).into_owned();
            col.axpy(-coef, &new_atom, 1.0);
            err.set_column(n, &col);
        }
    }
    Ok((Dictionary { atoms }, x, replaced))
}

/// Points atom `j` at the signal with the largest residual and gives it the
/// least-squares coefficient there. Returns false when every signal is
/// already represented exactly.
fn replace_unused_atom(
    j: usize,
    z: &DMatrix<f64>,
    atoms: &mut DMatrix<f64>,
    x: &mut DMatrix<f64>,
    err: &mut DMatrix<f64>,
) -> bool {
    let mut worst = 0;
    let mut worst_sq = -1.0;
    for (n, col) in err.column_iter().enumerate() {
        let sq = col.norm_squared();
        if sq > worst_sq {
            worst = n;
            worst_sq = sq;
        }
    }
    if !(worst_sq > 0.0) {
        return false;
    }
    let residual = err.column(worst).into_owned();
    let signal = z.column(worst);
    let mut atom = signal.into_owned();
    let norm = atom.norm();
    if norm > 0.0 {
        atom /= norm;
    }
    let mut coef = atom.dot(&residual);
    if !(coef.abs() > 1e-12 * worst_sq.sqrt()) {
        atom = &residual / worst_sq.sqrt();
        coef = worst_sq.sqrt();
    }
    let mut a: Vec<f64> = atom.iter().copied().collect();
    coef *= sign_normalize(&mut a);
    let atom = DVector::from_vec(a);
    atoms.set_column(j, &atom);
    x[(j, worst)] = coef;
    err.column_mut(worst).axpy(-coef, &atom, 1.0);
    true
}

/// Codes each class's columns jointly so they share row sparsity.
pub fn code_by_class(
    dict: &Dictionary,
    z: &DMatrix<f64>,
    labels: &[usize],
    coder: &SparseCoderConfig,
) -> Result<DMatrix<f64>> {
    if labels.len() != z.ncols() {
        return Err(Error::DimensionMismatch {
            what: "labels vs signals",
            expected: z.ncols(),
            got: labels.len(),
        });
    }
    let coder = MsblCoder::new(dict.matrix(), *coder)?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut x = DMatrix::zeros(dict.atom_count(), z.ncols());
    for c in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let block = coder.code(&z.select_columns(&members))?;
        for (a, &i) in members.iter().enumerate() {
            x.set_column(i, &block.x.column(a));
        }
    }
    Ok(x)
}

/// Learns a shared dictionary for `z` (`p × N`).
///
/// The dictionary has `atoms_per_class × C` atoms. Training stops once the
/// loss is at most `tol`, once its relative change falls below
/// `min_rel_change`, or after `max_outer` iterations. M-SBL coding does not
/// minimize the Frobenius loss, so the loss may rise between iterations.
pub fn train(
    z: &DMatrix<f64>,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(Dictionary, DMatrix<f64>, TrainReport)> {
    let (p, n) = z.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels vs signals",
            expected: n,
            got: labels.len(),
        });
    }
    if config.max_outer == 0 {
        return Err(Error::invalid("max_outer must be at least 1"));
    }
    if !(config.min_rel_change >= 0.0) {
        return Err(Error::invalid("min_rel_change must be non-negative"));
    }
    config.coder.validate()?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let k = dictionary_size(config.atoms_per_class, n_classes)?;
    if p == 0 {
        return Err(Error::invalid("signals have zero dimension"));
    }
    if k < p {
        warn!("dictionary with {k} atoms of dimension {p} is undercomplete");
    }
    if n < k {
        warn!("only {n} training signals for {k} atoms");
    }

    let mut dict = gaussian_atoms(p, k, config.seed);
    let mut x = DMatrix::zeros(k, n);
    let mut report = TrainReport {
        loss_trajectory: Vec::new(),
        outer_iterations: 0,
        converged: false,
        replaced_atoms: 0,
    };
    for outer in 0..config.max_outer {
        let coded = code_by_class(&dict, z, labels, &config.coder)?;
        let (next_dict, next_x, replaced) = ksvd_sweep_counted(&dict, z, &coded)?;
        let loss = residual_error(z, next_dict.matrix(), &next_x)?;
        debug!("outer iteration {}: loss {loss:.6e}, {replaced} atoms replaced", outer + 1);
        let prev = report.loss_trajectory.last().copied();
        dict = next_dict;
        x = next_x;
        report.loss_trajectory.push(loss);
        report.outer_iterations += 1;
        report.replaced_atoms += replaced;
        if loss <= config.tol {
            report.converged = true;
            break;
        }
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - loss).abs() / prev < config.min_rel_change {
                report.converged = true;
                break;
            }
        }
    }
    Ok((dict, x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(dictionary_size(10, 28).unwrap(), 280);
        assert_eq!(dictionary_size(1, 1).unwrap(), 1);
        assert!(dictionary_size(0, 3).is_err());
        assert!(dictionary_size(3, 0).is_err());
    }

    #[test]
    fn init_is_unit_norm_and_deterministic() {
        let a = init_dictionary(8, 20, 42).unwrap();
        for col in a.matrix().column_iter() {
            assert!((col.norm() - 1.0).abs() <= UNIT_NORM_TOL);
        }
        let b = init_dictionary(8, 20, 42).unwrap();
        assert!(a
            .matrix()
            .iter()
            .zip(b.matrix().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, init_dictionary(8, 20, 43).unwrap());
        assert!(init_dictionary(8, 7, 0).is_err());
        assert!(init_dictionary(0, 7, 0).is_err());
    }

    #[test]
    fn init_coherence_not_degenerate() {
        for seed in 0..10 {
            let d = init_dictionary(64, 256, seed).unwrap();
            let g = d.matrix().tr_mul(d.matrix());
            let mut worst = 0.0f64;
            for i in 0..256 {
                for j in 0..i {
                    worst = worst.max(g[(i, j)].abs());
                }
            }
            assert!(worst < 0.99, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn single_atom_rank_one_exact() {
        let u = DVector::from_vec(vec![3.0, 4.0]);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let z = &u * v.transpose();
        let d = Dictionary::from_matrix(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let (d2, x2) = ksvd_sweep(&d, &z, &x).unwrap();
        assert!(residual_error(&z, d2.matrix(), &x2).unwrap() < 1e-10);
        assert!((d2.matrix().column(0).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unused_atom_is_replaced() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let d = Dictionary::from_matrix(DMatrix::identity(2, 2)).unwrap();
        // atom 1 unused, column 1 unexplained
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let before = residual_error(&z, d.matrix(), &x).unwrap();
        let (d2, x2, replaced) = ksvd_sweep_counted(&d, &z, &x).unwrap();
        assert_eq!(replaced, 1);
        assert!(x2.row(1).iter().any(|&v| v != 0.0));
        assert!(residual_error(&z, d2.matrix(), &x2).unwrap() < before);
    }

    #[test]
    fn train_single_outer_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::from_fn(4, 30, |_, _| StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cfg = TrainConfig {
            atoms_per_class: 2,
            max_outer: 1,
            ..Default::default()
        };
        let (d, x, report) = train(&z, &labels, &cfg).unwrap();
        assert_eq!(report.loss_trajectory.len(), 1);
        assert_eq!(report.outer_iterations, 1);
        assert_eq!(d.atom_count(), 6);
        assert_eq!(x.shape(), (6, 30));
        assert!(train(&z, &labels[..5], &cfg).is_err());
    }
}
