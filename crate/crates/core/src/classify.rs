//! Medoid-based classification of sparse codes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::data::Standardizer;
use crate::dict::Dictionary;
use crate::embed::{sample_pairs, transform, ProjectionModel};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::sparse::{MsblCoder, SparseCoderConfig};

pub const DEFAULT_TAU: f64 = 0.35;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
struct ClassState {
    members: Vec<DVector<f64>>,
    /// Sum of distances from each member to all others.
    sums: Vec<f64>,
    medoid: DVector<f64>,
    medoid_member: Option<usize>,
}

impl ClassState {
    fn refresh_medoid(&mut self) {
        let mut best = 0;
        for (i, &s) in self.sums.iter().enumerate() {
            if s < self.sums[best] {
                best = i;
            }
        }
        self.medoid = self.members[best].clone();
        self.medoid_member = Some(best);
    }
}

/// One medoid per class, plus the member caches needed for online updates
/// when built from training codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMedoids {
    dim: usize,
    classes: Vec<ClassState>,
}

impl ClassMedoids {
    /// Medoids only (columns of `m`); online updates are unavailable.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::invalid("need at least one medoid"));
        }
        Ok(Self {
            dim: m.nrows(),
            classes: m
                .column_iter()
                .map(|c| ClassState {
                    members: Vec::new(),
                    sums: Vec::new(),
                    medoid: c.into_owned(),
                    medoid_member: None,
                })
                .collect(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn medoid(&self, class: usize) -> &DVector<f64> {
        &self.classes[class].medoid
    }

    /// `K × C` matrix of medoids.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.classes.iter().map(|c| c.medoid.clone()).collect::<Vec<_>>())
    }

    /// Index of the medoid among the class members, in insertion order.
    pub fn medoid_member(&self, class: usize) -> Option<usize> {
        self.classes[class].medoid_member
    }

    pub fn distance_sums(&self, class: usize) -> &[f64] {
        &self.classes[class].sums
    }

    /// Adds `x_new` to `class`, updating every cached sum by one distance.
    /// The medoid moves only if some member's sum becomes strictly smaller
    /// than that of every earlier member.
    pub fn insert(&mut self, x_new: &DVector<f64>, class: usize) -> Result<()> {
        if x_new.len() != self.dim {
            return Err(Error::invalid(format!(
                "coefficient length {} does not match medoid length {}",
                x_new.len(),
                self.dim
            )));
        }
        let n_classes = self.classes.len();
        let state = self
            .classes
            .get_mut(class)
            .ok_or_else(|| Error::invalid(format!("class {class} outside [0, {n_classes})")))?;
        if state.members.is_empty() {
            return Err(Error::invalid(format!(
                "class {class} has no member cache; online updates need medoids computed from codes"
            )));
        }
        let mut own = 0.0;
        for (i, m) in state.members.iter().enumerate() {
            let dist = distance(m.as_slice(), x_new.as_slice());
            state.sums[i] += dist;
            own += dist;
        }
        state.members.push(x_new.clone());
        state.sums.push(own);
        state.refresh_medoid();
        Ok(())
    }
}

/// Per class, the member minimizing the summed Euclidean distance to the
/// other members; ties go to the lowest column index.
pub fn compute_medoids(x: &DMatrix<f64>, labels: &[usize]) -> Result<ClassMedoids> {
    if labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "labels vs coefficient columns",
            expected: x.ncols(),
            got: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes == 0 {
        return Err(Error::invalid("no samples to compute medoids from"));
    }
    let mut classes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let members: Vec<DVector<f64>> = (0..labels.len())
            .filter(|&j| labels[j] == c)
            .map(|j| x.column(j).into_owned())
            .collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("class {c} has no members")));
        }
        let n = members.len();
        let mut sums = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sums[i] += distance(members[i].as_slice(), members[j].as_slice());
                }
            }
        }
        let mut state = ClassState {
            medoid: members[0].clone(),
            members,
            sums,
            medoid_member: None,
        };
        state.refresh_medoid();
        classes.push(state);
    }
    Ok(ClassMedoids {
        dim: x.nrows(),
        classes,
    })
}

/// Functional form of [`ClassMedoids::insert`].
pub fn update_medoid_online(
    mut medoids: ClassMedoids,
    x_new: &DVector<f64>,
    class: usize,
) -> Result<ClassMedoids> {
    medoids.insert(x_new, class)?;
    Ok(medoids)
}

/// Class whose medoid is closest to `x`; ties go to the lowest class id.
pub fn nearest_medoid(medoids: &ClassMedoids, x: &DVector<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..medoids.n_classes() {
        let d = sq_dist(x.as_slice(), medoids.medoid(c).as_slice());
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub projection: ProjectionModel,
    pub dictionary: Dictionary,
    pub medoids: ClassMedoids,
    pub tau: f64,
    pub coder: SparseCoderConfig,
    /// Applied to raw queries before projection.
    pub standardizer: Option<Standardizer>,
    pub label_names: Vec<String>,
}

impl ClassifierModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        self.coder.validate()?;
        if self.dictionary.atom_dim() != self.projection.p {
            return Err(Error::DimensionMismatch {
                what: "atom dimension vs projection dimension",
                expected: self.projection.p,
                got: self.dictionary.atom_dim(),
            });
        }
        if self.medoids.dim() != self.dictionary.atom_count() {
            return Err(Error::DimensionMismatch {
                what: "medoid length vs atom count",
                expected: self.dictionary.atom_count(),
                got: self.medoids.dim(),
            });
        }
        if self.label_names.len() != self.medoids.n_classes() {
            return Err(Error::DimensionMismatch {
                what: "label names vs classes",
                expected: self.medoids.n_classes(),
                got: self.label_names.len(),
            });
        }
        if let Some(st) = &self.standardizer {
            if st.dim() != self.projection.input_dim() {
                return Err(Error::DimensionMismatch {
                    what: "standardizer vs projection input dimension",
                    expected: self.projection.input_dim(),
                    got: st.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.projection.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.medoids.n_classes()
    }

    /// Standardized and projected queries.
    pub fn project(&self, yq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.standardizer {
            Some(st) => transform(&self.projection, &st.apply(yq)?),
            None => transform(&self.projection, yq),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// `‖z − D x‖² + τ‖x − m_c‖²` per class.
    pub scores: Vec<f64>,
    pub code: DVector<f64>,
}

impl Prediction {
    pub fn best_score(&self) -> f64 {
        self.scores[self.label]
    }

    /// Gap between the best and second-best scores; infinite with one class.
    pub fn margin(&self) -> f64 {
        let best = self.best_score();
        self.scores
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != self.label)
            .map(|(_, &s)| s - best)
            .fold(f64::INFINITY, f64::min)
    }
}

fn score_code(model: &ClassifierModel, z: &DVector<f64>, x: DVector<f64>) -> Prediction {
    let recon = (z - model.dictionary.matrix() * &x).norm_squared();
    let mut scores = Vec::with_capacity(model.n_classes());
    for c in 0..model.n_classes() {
        let dist = sq_dist(x.as_slice(), model.medoids.medoid(c).as_slice());
        scores.push(recon + model.tau * dist);
    }
    // the reconstruction term is shared by every class, so the argmin is
    // taken on the medoid term alone to keep it exact
    let label = nearest_medoid(&model.medoids, &x);
    Prediction {
        label,
        scores,
        code: x,
    }
}

/// Classifies the columns of `yq` (raw features), coding each query alone.
pub fn classify_batch(model: &ClassifierModel, yq: &DMatrix<f64>) -> Result<Vec<Prediction>> {
    classify_timed(model, yq).map(|(p, _)| p)
}

fn classify_timed(model: &ClassifierModel, yq: &DMatrix<f64>) -> Result<(Vec<Prediction>, f64)> {
    model.validate()?;
    let start = Instant::now();
    let z = model.project(yq)?;
    let coder = MsblCoder::new(model.dictionary.matrix(), model.coder)?;
    let mut out = Vec::with_capacity(yq.ncols());
    for j in 0..z.ncols() {
        let zq = z.column(j).into_owned();
        let x = coder.code(&DMatrix::from_column_slice(zq.len(), 1, zq.as_slice()))?.x;
        out.push(score_code(model, &zq, x.column(0).into_owned()));
    }
    Ok((out, start.elapsed().as_secs_f64()))
}

pub fn classify(model: &ClassifierModel, q: &DVector<f64>) -> Result<Prediction> {
    let batch = DMatrix::from_column_slice(q.len(), 1, q.as_slice());
    Ok(classify_batch(model, &batch)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Averaged over classes that occur in the truth or the predictions.
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub mean_seconds_per_sample: f64,
    pub predictions: Vec<usize>,
}

pub fn metrics_from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions vs labels",
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    if let Some(&bad) = truth.iter().chain(predicted).find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {n_classes})")));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let mut precision = vec![0.0; n_classes];
    let mut recall = vec![0.0; n_classes];
    let mut f1_sum = 0.0;
    let mut used = 0;
    for c in 0..n_classes {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
        if actual == 0 && predicted_c == 0 {
            continue;
        }
        used += 1;
        precision[c] = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
        recall[c] = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let denom = precision[c] + recall[c];
        if denom > 0.0 {
            f1_sum += 2.0 * precision[c] * recall[c] / denom;
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: f1_sum / used as f64,
        precision,
        recall,
        confusion,
        mean_seconds_per_sample: 0.0,
        predictions: predicted.to_vec(),
    })
}

/// Classifies every column of `yt` and scores against `labels`.
pub fn evaluate(model: &ClassifierModel, yt: &DMatrix<f64>, labels: &[usize]) -> Result<Metrics> {
    if labels.len() != yt.ncols() {
        return Err(Error::invalid(format!(
            "{} labels for {} samples",
            labels.len(),
            yt.ncols()
        )));
    }
    if yt.ncols() == 0 {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let (preds, seconds) = classify_timed(model, yt)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let mut m = metrics_from_predictions(labels, &predicted, model.n_classes())?;
    m.mean_seconds_per_sample = seconds / yt.ncols() as f64;
    Ok(m)
}

/// `|cos(z_i, z_j) − cos(x_i, x_j)|` over sampled pairs of projected signals
/// and their codes. Pairs with a zero vector are skipped.
pub fn cosine_gaps(z: &DMatrix<f64>, x: &DMatrix<f64>, n_pairs: usize, seed: u64) -> Result<Vec<f64>> {
    if z.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "signals vs codes",
            expected: z.ncols(),
            got: x.ncols(),
        });
    }
    let cos = |m: &DMatrix<f64>, i: usize, j: usize| {
        let (a, b) = (m.column(i), m.column(j));
        let denom = a.norm() * b.norm();
        (denom > 0.0).then(|| a.dot(&b) / denom)
    };
    Ok(sample_pairs(z.ncols(), n_pairs, seed)
        .into_iter()
        .filter_map(|(i, j)| Some((cos(z, i, j)? - cos(x, i, j)?).abs()))
        .collect())
}
