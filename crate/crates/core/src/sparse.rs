//! Multi-snapshot sparse Bayesian learning (M-SBL).
//!
//! Every row `i` of the coefficient matrix carries a variance hyperparameter
//! `γ_i` shared by all snapshots (columns). Given `γ`, the coefficients have a
//! Gaussian posterior with covariance `Σ = (Γ⁻¹ + DᵀD/σ²)⁻¹` and mean
//! `μ = Σ DᵀZ/σ²`; the hyperparameters are then re-estimated and rows whose
//! variance collapses are pruned for good.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::order_free_sum_sq;

/// How `γ` is re-estimated from the current posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Expectation-maximization: `γ_i ← ‖μ_i‖²/M + Σ_ii`. Monotone in the
    /// marginal likelihood, but irrelevant rows shrink only like `1/t`.
    Em,
    /// MacKay fixed point: `γ_i ← (‖μ_i‖²/M) / (1 − Σ_ii/γ_i)`. Same fixed
    /// points as EM; irrelevant rows collapse within a few iterations.
    FixedPoint,
}

impl UpdateRule {
    pub fn name(self) -> &'static str {
        match self {
            UpdateRule::Em => "em",
            UpdateRule::FixedPoint => "fixed-point",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "em" => Some(UpdateRule::Em),
            "fixed-point" => Some(UpdateRule::FixedPoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseCoderConfig {
    /// Noise variance of the observation model.
    pub sigma2: f64,
    pub max_iters: usize,
    /// Rows with `γ` below this are pruned.
    pub prune_threshold: f64,
    /// Convergence threshold on the largest relative change of `γ`.
    pub tol: f64,
    pub rule: UpdateRule,
}

impl Default for SparseCoderConfig {
    fn default() -> Self {
        Self {
            sigma2: 0.03,
            max_iters: 200,
            prune_threshold: 1e-6,
            tol: 1e-4,
            rule: UpdateRule::FixedPoint,
        }
    }
}

impl SparseCoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma2", self.sigma2)?;
        positive("prune_threshold", self.prune_threshold)?;
        positive("tol", self.tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodingResult {
    /// `K × M` posterior mean; pruned rows are exactly zero.
    pub x: DMatrix<f64>,
    pub gammas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// A row counts as relevant when its variance exceeds the noise variance by
/// this factor. Rows that only explain noise settle at `γ` of order `σ²`
/// rather than at zero when few snapshots are available.
pub const RELEVANCE_FACTOR: f64 = 10.0;

impl CodingResult {
    /// Rows still active, i.e. with `γ > 0`.
    pub fn support(&self) -> Vec<usize> {
        (0..self.gammas.len()).filter(|&i| self.gammas[i] > 0.0).collect()
    }

    /// Rows with `γ > RELEVANCE_FACTOR · σ²`.
    pub fn relevant_support(&self, sigma2: f64) -> Vec<usize> {
        let cut = RELEVANCE_FACTOR * sigma2;
        (0..self.gammas.len()).filter(|&i| self.gammas[i] > cut).collect()
    }
}

/// Snapshot of one EM / fixed-point iteration, handed to observers.
pub struct IterationState<'a> {
    pub iteration: usize,
    /// Active rows before the update.
    pub active: &'a [usize],
    /// Posterior covariance restricted to `active`.
    pub covariance: &'a DMatrix<f64>,
    /// All `K` hyperparameters after the update and pruning.
    pub gammas: &'a [f64],
}

/// Sparse coder bound to one dictionary; caches `DᵀD` across calls.
pub struct MsblCoder<'a> {
    dict: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    config: SparseCoderConfig,
}

struct Posterior {
    mean: DMatrix<f64>,
    cov_diag: Vec<f64>,
    cov: Option<DMatrix<f64>>,
}

impl<'a> MsblCoder<'a> {
    pub fn new(dict: &'a DMatrix<f64>, config: SparseCoderConfig) -> Result<Self> {
        config.validate()?;
        if dict.ncols() == 0 || dict.nrows() == 0 {
            return Err(Error::invalid("dictionary is empty"));
        }
        Ok(Self {
            dict,
            gram: dict.tr_mul(dict),
            config,
        })
    }

    pub fn config(&self) -> &SparseCoderConfig {
        &self.config
    }

    pub fn code(&self, z: &DMatrix<f64>) -> Result<CodingResult> {
        self.run(z, None)
    }

    pub fn code_observed(
        &self,
        z: &DMatrix<f64>,
        observer: &mut dyn FnMut(&IterationState<'_>),
    ) -> Result<CodingResult> {
        self.run(z, Some(observer))
    }

    fn run(
        &self,
        z: &DMatrix<f64>,
        mut observer: Option<&mut dyn FnMut(&IterationState<'_>)>,
    ) -> Result<CodingResult> {
        let (p, k) = self.dict.shape();
        if z.nrows() != p {
            return Err(Error::DimensionMismatch {
                what: "signal dimension vs dictionary rows",
                expected: p,
                got: z.nrows(),
            });
        }
        let m = z.ncols();
        if m == 0 {
            return Err(Error::invalid("no snapshots to code"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite value in signals"));
        }
        // per-column products keep every snapshot's arithmetic independent of
        // its position in the batch
        let mut dtz = DMatrix::zeros(k, m);
        for j in 0..m {
            dtz.set_column(j, &self.dict.tr_mul(&z.column(j)));
        }

        let cfg = &self.config;
        let mut gammas = vec![1.0; k];
        let mut active: Vec<usize> = (0..k).collect();
        let mut iterations = 0;
        let mut converged = false;

        while iterations < cfg.max_iters {
            if active.is_empty() {
                converged = true;
                break;
            }
            iterations += 1;
            let post = self.posterior(&active, &gammas, z, &dtz, observer.is_some())?;
            let mut max_rel = 0.0f64;
            let mut next = Vec::with_capacity(active.len());
            for (a, &i) in active.iter().enumerate() {
                let g = gammas[i];
                let mean_sq = order_free_sum_sq(post.mean.row(a).iter().copied()) / m as f64;
                let sii = post.cov_diag[a];
                let updated = match cfg.rule {
                    UpdateRule::Em => mean_sq + sii,
                    UpdateRule::FixedPoint => {
                        let shrink = g - sii;
                        if shrink > 0.0 {
                            mean_sq * g / shrink
                        } else {
                            mean_sq + sii
                        }
                    }
                };
                if !updated.is_finite() {
                    return Err(Error::numerical(format!(
                        "hyperparameter of row {i} became non-finite at iteration {iterations}"
                    )));
                }
                max_rel = max_rel.max((updated - g).abs() / g);
                if updated < cfg.prune_threshold {
                    gammas[i] = 0.0;
                } else {
                    gammas[i] = updated;
                    next.push(i);
                }
            }
            if let (Some(obs), Some(cov)) = (observer.as_mut(), post.cov.as_ref()) {
                obs(&IterationState {
                    iteration: iterations,
                    active: &active,
                    covariance: cov,
                    gammas: &gammas,
                });
            }
            active = next;
            if max_rel < cfg.tol {
                converged = true;
                break;
            }
        }
        if active.is_empty() {
            converged = true;
        }

        let mut x = DMatrix::zeros(k, m);
        if !active.is_empty() {
            let post = self.posterior(&active, &gammas, z, &dtz, false)?;
            for (a, &i) in active.iter().enumerate() {
                x.set_row(i, &post.mean.row(a));
            }
        }
        Ok(CodingResult {
            x,
            gammas,
            iterations,
            converged,
        })
    }

    /// Posterior moments restricted to `active`, using whichever of the
    /// `|A| × |A|` or `p × p` systems is smaller.
    fn posterior(
        &self,
        active: &[usize],
        gammas: &[f64],
        z: &DMatrix<f64>,
        dtz: &DMatrix<f64>,
        want_cov: bool,
    ) -> Result<Posterior> {
        let sigma2 = self.config.sigma2;
        let n_act = active.len();
        let p = self.dict.nrows();
        let m = z.ncols();
        let g: Vec<f64> = active.iter().map(|&i| gammas[i]).collect();
        let not_pd = || Error::numerical("posterior covariance is not positive definite");

        if n_act <= p {
            let mut prec = DMatrix::from_fn(n_act, n_act, |a, b| {
                self.gram[(active[a], active[b])] / sigma2
            });
            for a in 0..n_act {
                prec[(a, a)] += 1.0 / g[a];
            }
            let cov = Cholesky::new(prec).ok_or_else(not_pd)?.inverse();
            let mut mean = DMatrix::zeros(n_act, m);
            for j in 0..m {
                let b = DVector::from_fn(n_act, |a, _| dtz[(active[a], j)] / sigma2);
                mean.set_column(j, &(&cov * b));
            }
            let cov_diag = (0..n_act).map(|a| cov[(a, a)]).collect();
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical("non-finite posterior mean"));
            }
            return Ok(Posterior {
                mean,
                cov_diag,
                cov: want_cov.then_some(cov),
            });
        }

        let d_act = self.dict.select_columns(active);
        let mut scaled = d_act.clone();
        for (a, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g[a];
        }
        let mut sigma_z = &scaled * d_act.transpose();
        for i in 0..p {
            sigma_z[(i, i)] += sigma2;
        }
        let chol = Cholesky::new(sigma_z).ok_or_else(not_pd)?;
        // Σ_z⁻¹ D_A
        let solved = chol.solve(&d_act);
        let cov_diag: Vec<f64> = (0..n_act)
            .map(|a| g[a] - g[a] * g[a] * d_act.column(a).dot(&solved.column(a)))
            .collect();
        let mut mean = DMatrix::zeros(n_act, m);
        for j in 0..m {
            let mut col = solved.tr_mul(&z.column(j));
            for a in 0..n_act {
                col[a] *= g[a];
            }
            mean.set_column(j, &col);
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite posterior mean"));
        }
        let cov = want_cov.then(|| {
            let inner = d_act.tr_mul(&solved);
            DMatrix::from_fn(n_act, n_act, |a, b| {
                let diag = if a == b { g[a] } else { 0.0 };
                diag - g[a] * inner[(a, b)] * g[b]
            })
        });
        Ok(Posterior {
            mean,
            cov_diag,
            cov,
        })
    }
}

/// Codes the columns of `z` jointly against `dict` with shared row sparsity.
pub fn msbl_code(
    dict: &DMatrix<f64>,
    z: &DMatrix<f64>,
    config: &SparseCoderConfig,
) -> Result<CodingResult> {
    MsblCoder::new(dict, *config)?.code(z)
}

/// Codes a single signal; same as [`msbl_code`] on a one-column batch.
pub fn code_single(
    dict: &DMatrix<f64>,
    z: &DVector<f64>,
    config: &SparseCoderConfig,
) -> Result<DVector<f64>> {
    let batch = DMatrix::from_column_slice(z.len(), 1, z.as_slice());
    Ok(msbl_code(dict, &batch, config)?.x.column(0).into_owned())
}

/// Negative log marginal likelihood (up to constants) of the M-SBL model:
/// `log|Σ_z| + tr(Σ_z⁻¹ Z Zᵀ)/M` with `Σ_z = σ² I + D Γ Dᵀ`.
pub fn sbl_objective(
    dict: &DMatrix<f64>,
    z: &DMatrix<f64>,
    gammas: &[f64],
    sigma2: f64,
) -> Result<f64> {
    let p = dict.nrows();
    let mut scaled = dict.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= gammas[i];
    }
    let mut sigma_z = &scaled * dict.transpose();
    for i in 0..p {
        sigma_z[(i, i)] += sigma2;
    }
    let chol = Cholesky::new(sigma_z)
        .ok_or_else(|| Error::numerical("marginal covariance is not positive definite"))?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let solved = chol.solve(z);
    let fit = z.dot(&solved) / z.ncols() as f64;
    Ok(logdet + fit)
}

/// Orthogonal greedy pursuit: picks the atom most correlated with the
/// residual, refits all picked atoms by least squares, `sparsity` times.
pub fn greedy_code(dict: &DMatrix<f64>, z: &DMatrix<f64>, sparsity: usize) -> Result<DMatrix<f64>> {
    let (p, k) = dict.shape();
    if z.nrows() != p {
        return Err(Error::DimensionMismatch {
            what: "signal dimension vs dictionary rows",
            expected: p,
            got: z.nrows(),
        });
    }
    if sparsity == 0 || sparsity > p {
        return Err(Error::invalid(format!(
            "sparsity must lie in [1, {p}], got {sparsity}"
        )));
    }
    let mut x = DMatrix::zeros(k, z.ncols());
    for (j, col) in z.column_iter().enumerate() {
        let target = col.into_owned();
        let scale = target.norm();
        let mut residual = target.clone();
        let mut picked: Vec<usize> = Vec::with_capacity(sparsity);
        let mut coef = DVector::zeros(0);
        for _ in 0..sparsity.min(k) {
            let corr = dict.tr_mul(&residual);
            let mut best: Option<usize> = None;
            for i in 0..k {
                if picked.contains(&i) {
                    continue;
                }
                if best.is_none_or(|b| corr[i].abs() > corr[b].abs()) {
                    best = Some(i);
                }
            }
            let Some(best) = best else { break };
            if corr[best].abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                break;
            }
            picked.push(best);
            let sub = dict.select_columns(&picked);
            coef = sub
                .clone()
                .svd(true, true)
                .solve(&target, 1e-12)
                .map_err(|e| Error::numerical(format!("least-squares refit failed: {e}")))?;
            residual = &target - &sub * &coef;
        }
        for (a, &i) in picked.iter().enumerate() {
            x[(i, j)] = coef[a];
        }
    }
    Ok(x)
}

/// `‖Z − D X‖_F²`.
pub fn residual_error(z: &DMatrix<f64>, dict: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    if dict.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch {
            what: "dictionary atoms vs coefficient rows",
            expected: dict.ncols(),
            got: x.nrows(),
        });
    }
    if z.nrows() != dict.nrows() || z.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "signal shape vs D X",
            expected: dict.nrows() * x.ncols(),
            got: z.nrows() * z.ncols(),
        });
    }
    Ok((z - dict * x).norm_squared())
}

/// Mean Jaccard similarity of coefficient supports within and across classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSimilarity {
    pub within_class: f64,
    pub across_class: f64,
}

pub fn support_similarity(x: &DMatrix<f64>, labels: &[usize]) -> Result<SupportSimilarity> {
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "labels vs coefficient columns",
            expected: x.ncols(),
            got: labels.len(),
        });
    }
    let supports: Vec<Vec<bool>> = x
        .column_iter()
        .map(|c| c.iter().map(|v| *v != 0.0).collect())
        .collect();
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..supports.len() {
        for j in i + 1..supports.len() {
            let (mut inter, mut union) = (0usize, 0usize);
            for (a, b) in supports[i].iter().zip(&supports[j]) {
                inter += (*a && *b) as usize;
                union += (*a || *b) as usize;
            }
            let jac = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            if labels[i] == labels[j] {
                within += jac;
                nw += 1;
            } else {
                across += jac;
                na += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    Ok(SupportSimilarity {
        within_class: mean(within, nw),
        across_class: mean(across, na),
    })
}
