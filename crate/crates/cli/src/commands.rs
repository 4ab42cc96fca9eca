use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use jldict::classify::{classify_batch, evaluate, Metrics};
use jldict::data::{load_csv, load_csv_features, load_idx, load_idx_images, stratified_kfold, LabeledDataset};
use jldict::dimsel::{
    emit_dimension_curve, jl_dimension_derivative, jl_min_dimension, select_dimension, write_curve_csv,
    PerturbationBudget, DEFAULT_FLATNESS_TOL,
};
use jldict::embed::distortion_report;
use jldict::fmt::format_f64;
use jldict::pipeline::{fit, mean_std, run_fold, DimensionChoice, FoldResult, PipelineConfig};
use jldict::sparse::UpdateRule;
use jldict::{Error, Result};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::args::*;
use crate::config::{self, FileConfig};
use crate::container;
use crate::svg::histogram_svg;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_CORRUPT: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

pub const DEFAULT_EVAL_FOLDS: usize = 10;
pub const DEFAULT_SWEEP_FOLDS: usize = 3;
pub const DEFAULT_LABEL_COLUMN: &str = "label";

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::DimensionMismatch { .. } | Error::Parse { .. } => EXIT_MISMATCH,
        Error::CorruptModel(_) => EXIT_CORRUPT,
        Error::NumericalFailure(_) => EXIT_NUMERICAL,
        Error::Io { .. } => EXIT_IO,
    }
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|error| Failure { stage: name, error })
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::SelectDim(a) => select_dim(&a),
        Command::Train(a) => train(&a),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Distortion(a) => distortion(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    path.map_or_else(|| Ok(FileConfig::default()), config::load)
}

/// Turns merged settings into a pipeline configuration.
pub fn pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.dimension = match (a.eps, a.auto_eps, a.p) {
        (Some(e), false, None) => DimensionChoice::Epsilon(e),
        (None, _, None) => DimensionChoice::Auto,
        (None, false, Some(p)) => DimensionChoice::Fixed(p),
        _ => return Err(invalid("set only one of eps, auto-eps and p")),
    };
    if let Some(k) = a.atoms_per_class {
        cfg.atoms_per_class = k;
    }
    if let Some(s) = a.sigma2 {
        cfg.coder.sigma2 = s;
    }
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    cfg.kernel_bandwidth = a.kernel_bandwidth;
    if let Some(h) = cfg.kernel_bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!("kernel bandwidth must be positive, got {h}")));
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.augment_to = a.augment_to;
    if let Some(n) = a.augment_noise {
        cfg.augment_noise = n;
    }
    if let Some(r) = &a.rule {
        cfg.coder.rule = UpdateRule::from_name(r)
            .ok_or_else(|| invalid(format!("unknown rule {r:?}; use fixed-point or em")))?;
    }
    if let Some(m) = a.max_outer {
        cfg.max_outer = m;
    }
    if let Some(m) = a.min_rel_change {
        cfg.min_rel_change = m;
    }
    if !(cfg.tau > 0.0) {
        return Err(invalid(format!("tau must be positive, got {}", cfg.tau)));
    }
    cfg.coder.validate()?;
    Ok(cfg)
}

fn data_format(data: &DataArgs, file: &FileConfig) -> DataFormat {
    data.format.or(file.format).unwrap_or(DataFormat::Csv)
}

pub fn load_dataset(data: &DataArgs, format: DataFormat) -> Result<LabeledDataset> {
    match format {
        DataFormat::Idx => {
            let labels = data
                .labels
                .as_ref()
                .ok_or_else(|| invalid("--labels <file> is required with --format idx"))?;
            load_idx(&data.data, Path::new(labels))
        }
        DataFormat::Csv => load_csv(
            &data.data,
            data.labels.as_deref().unwrap_or(DEFAULT_LABEL_COLUMN),
        ),
    }
}

fn load_features(data: &DataArgs, format: DataFormat) -> Result<DMatrix<f64>> {
    match format {
        DataFormat::Idx => load_idx_images(&data.data),
        DataFormat::Csv => load_csv_features(
            &data.data,
            Some(data.labels.as_deref().unwrap_or(DEFAULT_LABEL_COLUMN)),
        ),
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn select_dim(a: &SelectDimArgs) -> CmdResult {
    let (eps, p, derivative) = match a.eps {
        Some(e) => {
            let eps = PerturbationBudget::new(e).stage("select dimension")?;
            (
                eps,
                jl_min_dimension(a.n, eps).stage("select dimension")?,
                jl_dimension_derivative(a.n, eps).stage("select dimension")?,
            )
        }
        None => {
            let sel = select_dimension(a.n, DEFAULT_FLATNESS_TOL).stage("select dimension")?;
            (sel.epsilon, sel.p, sel.derivative)
        }
    };
    println!("n={} epsilon={} p={} dp/deps={:.6}", a.n, eps.value(), p, derivative);
    if let Some(out) = &a.out {
        let grid: Vec<PerturbationBudget> = (10..=190)
            .map(|i| PerturbationBudget::new(i as f64 * 0.005))
            .collect::<Result<_>>()
            .stage("select dimension")?;
        let rows = emit_dimension_curve(a.n, &grid).stage("select dimension")?;
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).expect("writing to memory");
        write_file(out, &buf).stage("write output")?;
    }
    Ok(())
}

fn train(a: &TrainArgs) -> CmdResult {
    let file = load_config(a.config.as_deref()).stage("config")?;
    let cfg = pipeline_config(&a.pipeline.or(&file.pipeline)).stage("config")?;
    let ds = load_dataset(&a.data, data_format(&a.data, &file)).stage("load data")?;
    info!("loaded {} samples of dimension {} in {} classes", ds.len(), ds.dim(), ds.n_classes);
    let outcome = fit(&ds, &cfg).stage("fit")?;
    container::save(&outcome.model, &a.out).stage("save model")?;

    let m = &outcome.model;
    let r = &outcome.report;
    let traj = &r.loss_trajectory;
    let min = traj.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "mode={} p={} epsilon={} atoms={} classes={}",
        m.projection.mode_name(),
        m.projection.p,
        m.projection.epsilon,
        m.dictionary.atom_count(),
        m.n_classes()
    );
    println!(
        "outer iterations={} converged={} loss first={:.6e} last={:.6e} min={:.6e} replaced atoms={}",
        r.outer_iterations,
        r.converged,
        traj.first().copied().unwrap_or(f64::NAN),
        traj.last().copied().unwrap_or(f64::NAN),
        min,
        r.replaced_atoms
    );
    println!("train seconds={:.3} model={}", outcome.train_seconds, a.out.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> CmdResult {
    let model = container::load(&a.model).stage("load model")?;
    let format = a.data.format.unwrap_or(DataFormat::Csv);
    let y = load_features(&a.data, format).stage("load data")?;
    let mut text = String::from("index,predicted_label,score_best,score_margin\n");
    if y.ncols() > 0 {
        if y.nrows() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input features vs model",
                expected: model.input_dim(),
                got: y.nrows(),
            })
            .stage("predict");
        }
        let preds = classify_batch(&model, &y).stage("predict")?;
        for (i, p) in preds.iter().enumerate() {
            text.push_str(&format!(
                "{i},{},{},{}\n",
                csv_field(&model.label_names[p.label]),
                format_f64(p.best_score()),
                format_f64(p.margin())
            ));
        }
    }
    write_text(a.out.as_deref(), &text).stage("write output")
}

fn check_folds(ds: &LabeledDataset, folds: usize) -> Result<()> {
    if folds < 2 {
        return Err(invalid(format!("need at least 2 folds, got {folds}")));
    }
    for (c, &n) in ds.class_counts().iter().enumerate() {
        if n < folds {
            return Err(invalid(format!(
                "class {:?} has {n} samples, fewer than {folds} folds",
                ds.label_names[c]
            )));
        }
    }
    Ok(())
}

fn confusion_csv(m: &Metrics, names: &[String]) -> String {
    let mut s = String::from("true_label");
    for n in names {
        s.push(',');
        s.push_str(&csv_field(n));
    }
    s.push('\n');
    for (row, name) in m.confusion.iter().zip(names) {
        s.push_str(&csv_field(name));
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn eval(a: &EvalArgs) -> CmdResult {
    let file = load_config(a.config.as_deref()).stage("config")?;
    let cfg = pipeline_config(&a.pipeline.or(&file.pipeline)).stage("config")?;
    let folds = a.folds.or(file.folds).unwrap_or(DEFAULT_EVAL_FOLDS);
    let jobs = a.jobs.or(file.jobs).unwrap_or(1);
    let ds = load_dataset(&a.data, data_format(&a.data, &file)).stage("load data")?;
    check_folds(&ds, folds).stage("config")?;
    let splits = stratified_kfold(&ds.labels, folds, cfg.seed).stage("split")?;
    let results: Vec<Result<FoldResult>> = with_pool(jobs, || {
        splits
            .par_iter()
            .enumerate()
            .map(|(f, (tr, te))| run_fold(&ds, &cfg, f, tr, te))
            .collect()
    })
    .stage("config")?;
    let results: Vec<FoldResult> = results.into_iter().collect::<Result<_>>().stage("evaluate")?;

    let mut table = String::from(
        "fold,p,epsilon,mode,accuracy,macro_f1,train_seconds,test_ms_per_sample,outer_iterations\n",
    );
    for r in &results {
        println!(
            "fold {}: accuracy={:.4} macro_f1={:.4} p={} mode={} outer={}",
            r.fold, r.metrics.accuracy, r.metrics.macro_f1, r.p, r.mode, r.outer_iterations
        );
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.fold,
            r.p,
            format_f64(r.epsilon),
            r.mode,
            format_f64(r.metrics.accuracy),
            format_f64(r.metrics.macro_f1),
            format_f64(r.train_seconds),
            format_f64(r.metrics.mean_seconds_per_sample * 1e3),
            r.outer_iterations
        ));
    }
    let acc: Vec<f64> = results.iter().map(|r| r.metrics.accuracy).collect();
    let f1: Vec<f64> = results.iter().map(|r| r.metrics.macro_f1).collect();
    let (am, asd) = mean_std(&acc);
    let (fm, fsd) = mean_std(&f1);
    println!("accuracy {am:.4} ± {asd:.4}");
    println!("macro_f1 {fm:.4} ± {fsd:.4}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e)).stage("write output")?;
        write_file(&dir.join("eval_folds.csv"), table.as_bytes()).stage("write output")?;
        let summary = format!(
            "metric,mean,std\naccuracy,{},{}\nmacro_f1,{},{}\n",
            format_f64(am),
            format_f64(asd),
            format_f64(fm),
            format_f64(fsd)
        );
        write_file(&dir.join("eval_summary.csv"), summary.as_bytes()).stage("write output")?;
        for r in &results {
            let path = dir.join(format!("confusion_fold{}.csv", r.fold));
            write_file(&path, confusion_csv(&r.metrics, &ds.label_names).as_bytes()).stage("write output")?;
        }
    }
    Ok(())
}

struct UnitResult {
    p: usize,
    epsilon: f64,
    train_seconds: f64,
    /// Per τ: accuracy, macro-F1, seconds per test sample.
    per_tau: Vec<(f64, f64, f64)>,
}

fn sweep(a: &SweepArgs) -> CmdResult {
    let file = load_config(a.config.as_deref()).stage("config")?;
    let base = pipeline_config(&a.pipeline.or(&file.pipeline)).stage("config")?;
    let folds = a.folds.or(file.folds).unwrap_or(DEFAULT_SWEEP_FOLDS);
    let jobs = a.jobs.or(file.jobs).unwrap_or(1);
    let or_base = |grid: &[f64], v: f64| if grid.is_empty() { vec![v] } else { grid.to_vec() };
    let sigma2s = or_base(&a.sigma2_grid, base.coder.sigma2);
    let taus = or_base(&a.tau_grid, base.tau);
    let dims: Vec<DimensionChoice> = if a.p_grid.is_empty() {
        vec![base.dimension]
    } else {
        a.p_grid.iter().map(|&p| DimensionChoice::Fixed(p)).collect()
    };
    let atoms = if a.atoms_grid.is_empty() {
        vec![base.atoms_per_class]
    } else {
        a.atoms_grid.clone()
    };
    for &t in &taus {
        if !(t > 0.0) {
            return Err(invalid(format!("tau must be positive, got {t}"))).stage("config");
        }
    }
    let ds = load_dataset(&a.data, data_format(&a.data, &file)).stage("load data")?;
    check_folds(&ds, folds).stage("config")?;
    let splits = stratified_kfold(&ds.labels, folds, base.seed).stage("split")?;

    // τ only affects scoring, so each (σ², p, K, fold) is fitted once
    let mut fits = Vec::new();
    for &s in &sigma2s {
        for &d in &dims {
            for &k in &atoms {
                let mut cfg = base.clone();
                cfg.coder.sigma2 = s;
                cfg.dimension = d;
                cfg.atoms_per_class = k;
                fits.push(cfg);
            }
        }
    }
    let units: Vec<(usize, usize)> = (0..fits.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let results: Vec<Result<UnitResult>> = with_pool(jobs, || {
        units
            .par_iter()
            .map(|&(c, f)| {
                let (tr, te) = &splits[f];
                let train_set = ds.subset(tr);
                let test_set = ds.subset(te);
                let fitted = fit(&train_set, &fits[c])?;
                let mut per_tau = Vec::with_capacity(taus.len());
                let mut model = fitted.model;
                for &t in &taus {
                    model.tau = t;
                    let m = evaluate(&model, &test_set.y, &test_set.labels)?;
                    per_tau.push((m.accuracy, m.macro_f1, m.mean_seconds_per_sample));
                }
                Ok(UnitResult {
                    p: model.projection.p,
                    epsilon: model.projection.epsilon,
                    train_seconds: fitted.train_seconds,
                    per_tau,
                })
            })
            .collect()
    })
    .stage("config")?;
    let results: Vec<UnitResult> = results.into_iter().collect::<Result<_>>().stage("evaluate")?;

    let mut text = String::from(
        "cell,sigma2,tau,p,epsilon,atoms_per_class,accuracy,macro_f1,train_seconds,test_ms_per_sample\n",
    );
    let mut cell = 0;
    for (c, cfg) in fits.iter().enumerate() {
        let unit = &results[c * folds..(c + 1) * folds];
        let train_s = unit.iter().map(|u| u.train_seconds).sum::<f64>() / folds as f64;
        for (ti, &t) in taus.iter().enumerate() {
            let mean = |pick: fn(&(f64, f64, f64)) -> f64| {
                unit.iter().map(|u| pick(&u.per_tau[ti])).sum::<f64>() / folds as f64
            };
            let (acc, f1, secs) = (mean(|v| v.0), mean(|v| v.1), mean(|v| v.2));
            text.push_str(&format!(
                "{cell},{},{},{},{},{},{},{},{},{}\n",
                format_f64(cfg.coder.sigma2),
                format_f64(t),
                unit[0].p,
                format_f64(unit[0].epsilon),
                cfg.atoms_per_class,
                format_f64(acc),
                format_f64(f1),
                format_f64(train_s),
                format_f64(secs * 1e3)
            ));
            info!("cell {cell}: sigma2={} tau={t} p={} accuracy={acc:.4}", cfg.coder.sigma2, unit[0].p);
            cell += 1;
        }
    }
    write_text(a.out.as_deref(), &text).stage("write output")
}

fn distortion(a: &DistortionArgs) -> CmdResult {
    let model = container::load(&a.model).stage("load model")?;
    if !model.projection.is_linear() {
        return Err(invalid("distortion is defined for linear-mode models only")).stage("distortion");
    }
    let y = load_features(&a.data, a.data.format.unwrap_or(DataFormat::Csv)).stage("load data")?;
    let y = match &model.standardizer {
        Some(st) => st.apply(&y).stage("distortion")?,
        None => y,
    };
    let report = distortion_report(&model.projection, &y, a.pairs, a.seed).stage("distortion")?;
    println!(
        "pairs={} skipped={} min={:.6} mean={:.6} max={:.6} outside(1±{})={:.4}",
        report.ratios.len(),
        report.skipped_identical,
        report.min,
        report.mean,
        report.max,
        report.epsilon,
        report.outside_fraction
    );
    fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e)).stage("write output")?;
    let mut csv = String::from("bin_lo,bin_hi,count\n");
    for b in &report.histogram {
        csv.push_str(&format!("{},{},{}\n", format_f64(b.lo), format_f64(b.hi), b.count));
    }
    write_file(&a.out.join("distortion_histogram.csv"), csv.as_bytes()).stage("write output")?;
    let title = format!("Pairwise distortion, p = {}", model.projection.p);
    write_file(&a.out.join("distortion.svg"), histogram_svg(&report, &title).as_bytes())
        .stage("write output")?;
    Ok(())
}
