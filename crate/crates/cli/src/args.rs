use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "jldict", version, about = "JL-sized supervised projection + dictionary learning classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick the projection dimension p from the JL bound.
    SelectDim(SelectDimArgs),
    /// Fit a model and write it to --out.
    Train(TrainArgs),
    /// Classify samples with a saved model.
    Predict(PredictArgs),
    /// Stratified k-fold cross-validation.
    Eval(EvalArgs),
    /// Cross-validated grid over sigma2, tau, p and atoms per class.
    Sweep(SweepArgs),
    /// Pairwise distance distortion of a linear model's projection.
    Distortion(DistortionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Idx,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// IDX images file or CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX labels file, or the CSV label column name (default "label").
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
}

/// Pipeline settings. Unset fields fall back to the config file, then to
/// the defaults.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct PipelineArgs {
    /// JL distortion budget ε in (0, 1).
    #[arg(long, conflicts_with_all = ["auto_eps", "p"])]
    pub eps: Option<f64>,
    /// Choose ε where the bound flattens (the default).
    #[arg(long, conflicts_with = "p")]
    pub auto_eps: bool,
    /// Fixed projection dimension.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub atoms_per_class: Option<usize>,
    /// SBL noise variance [default: 0.03].
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Weight of the medoid term [default: 0.35].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Gaussian kernel bandwidth; median pairwise distance if unset.
    #[arg(long)]
    pub kernel_bandwidth: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Oversample smaller classes up to this many samples.
    #[arg(long)]
    pub augment_to: Option<usize>,
    #[arg(long)]
    pub augment_noise: Option<f64>,
    /// SBL hyperparameter update: fixed-point or em.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// Stop training once the relative loss change falls below this (0 = off).
    #[arg(long)]
    pub min_rel_change: Option<f64>,
}

impl PipelineArgs {
    fn dimension_set(&self) -> bool {
        self.eps.is_some() || self.auto_eps || self.p.is_some()
    }

    /// Field-wise `self` over `fallback`; the dimension choice is taken as a
    /// unit from whichever side sets it.
    pub fn or(&self, fallback: &PipelineArgs) -> PipelineArgs {
        let dim_src = if self.dimension_set() { self } else { fallback };
        PipelineArgs {
            eps: dim_src.eps,
            auto_eps: dim_src.auto_eps,
            p: dim_src.p,
            atoms_per_class: self.atoms_per_class.or(fallback.atoms_per_class),
            sigma2: self.sigma2.or(fallback.sigma2),
            tau: self.tau.or(fallback.tau),
            kernel_bandwidth: self.kernel_bandwidth.or(fallback.kernel_bandwidth),
            seed: self.seed.or(fallback.seed),
            augment_to: self.augment_to.or(fallback.augment_to),
            augment_noise: self.augment_noise.or(fallback.augment_noise),
            rule: self.rule.clone().or_else(|| fallback.rule.clone()),
            max_outer: self.max_outer.or(fallback.max_outer),
            min_rel_change: self.min_rel_change.or(fallback.min_rel_change),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelectDimArgs {
    /// Number of training samples.
    #[arg(long)]
    pub n: usize,
    #[arg(long, conflicts_with = "auto")]
    pub eps: Option<f64>,
    #[arg(long, alias = "auto-eps")]
    pub auto: bool,
    /// Write the (ε, p, dp/dε) curve here as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Flat `key: value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Prediction CSV; stdout if unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of folds [default: 10].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Parallel folds; 0 uses every core [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for the per-fold and confusion CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sigma2_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub atoms_grid: Vec<usize>,
    /// Number of folds per cell [default: 3].
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Result CSV; stdout if unset.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DistortionArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for distortion_histogram.csv and distortion.svg.
    #[arg(long)]
    pub out: PathBuf,
}
