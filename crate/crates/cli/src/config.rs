//! Flat `key: value` config files. Flags override file values, which
//! override built-in defaults.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use jldict::error::ParseLocation;
use jldict::{Error, Result};

use crate::args::{DataFormat, PipelineArgs};

/// Everything a config file may set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub pipeline: PipelineArgs,
    pub folds: Option<usize>,
    pub jobs: Option<usize>,
    pub format: Option<DataFormat>,
}

pub const KEYS: &[&str] = &[
    "eps",
    "auto-eps",
    "p",
    "atoms-per-class",
    "sigma2",
    "tau",
    "kernel-bandwidth",
    "seed",
    "augment-to",
    "augment-noise",
    "rule",
    "max-outer",
    "min-rel-change",
    "folds",
    "jobs",
    "format",
];

fn value<T: FromStr>(source: &str, line: u64, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse {
        source_name: source.to_string(),
        location: ParseLocation::Line(line),
        message: format!("bad value {raw:?} for {key}"),
    })
}

/// Parses config text. Blank lines and lines starting with `#` are ignored.
pub fn parse(text: &str, source: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, raw)) = line.split_once(':') else {
            return Err(Error::Parse {
                source_name: source.to_string(),
                location: ParseLocation::Line(line_no),
                message: format!("expected `key: value`, got {line:?}"),
            });
        };
        let (key, raw) = (key.trim(), raw.trim());
        let p = &mut cfg.pipeline;
        match key {
            "eps" => p.eps = Some(value(source, line_no, key, raw)?),
            "auto-eps" => p.auto_eps = value(source, line_no, key, raw)?,
            "p" => p.p = Some(value(source, line_no, key, raw)?),
            "atoms-per-class" => p.atoms_per_class = Some(value(source, line_no, key, raw)?),
            "sigma2" => p.sigma2 = Some(value(source, line_no, key, raw)?),
            "tau" => p.tau = Some(value(source, line_no, key, raw)?),
            "kernel-bandwidth" => p.kernel_bandwidth = Some(value(source, line_no, key, raw)?),
            "seed" => p.seed = Some(value(source, line_no, key, raw)?),
            "augment-to" => p.augment_to = Some(value(source, line_no, key, raw)?),
            "augment-noise" => p.augment_noise = Some(value(source, line_no, key, raw)?),
            "rule" => p.rule = Some(raw.to_string()),
            "max-outer" => p.max_outer = Some(value(source, line_no, key, raw)?),
            "min-rel-change" => p.min_rel_change = Some(value(source, line_no, key, raw)?),
            "folds" => cfg.folds = Some(value(source, line_no, key, raw)?),
            "jobs" => cfg.jobs = Some(value(source, line_no, key, raw)?),
            "format" => {
                cfg.format = Some(match raw {
                    "idx" => DataFormat::Idx,
                    "csv" => DataFormat::Csv,
                    _ => return Err(Error::Parse {
                        source_name: source.to_string(),
                        location: ParseLocation::Line(line_no),
                        message: format!("format must be idx or csv, got {raw:?}"),
                    }),
                })
            }
            _ => {
                return Err(Error::Parse {
                    source_name: source.to_string(),
                    location: ParseLocation::Line(line_no),
                    message: format!("unknown key {key:?}; known keys: {}", KEYS.join(", ")),
                })
            }
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse(&text, &path.display().to_string())
}
