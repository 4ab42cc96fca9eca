//! Model file: a `key: value` text header, row-major little-endian `f64`
//! blocks, and a trailing FNV-1a 64-bit checksum of everything before it.

use std::fs;
use std::path::Path;

use jldict::classify::{ClassMedoids, ClassifierModel};
use jldict::data::Standardizer;
use jldict::dict::Dictionary;
use jldict::embed::{Kernel, ProjectionKind, ProjectionModel};
use jldict::fmt::format_f64;
use jldict::sparse::{SparseCoderConfig, UpdateRule};
use jldict::{Error, Result};
use nalgebra::DMatrix;

pub const MAGIC: &str = "JLDICT-MODEL 1";
const END: &str = "end";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(corrupt(format!("bad escape in label name: \\{other:?}"))),
        }
    }
    Ok(out)
}

struct Block<'a> {
    name: &'static str,
    matrix: &'a DMatrix<f64>,
}

fn row_vector(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

/// Serializes `model` to bytes.
pub fn encode(model: &ClassifierModel) -> Result<Vec<u8>> {
    model.validate()?;
    let proj = &model.projection;
    let mut header = vec![MAGIC.to_string()];
    let mut kv = |k: &str, v: String| header.push(format!("{k}: {v}"));
    kv("mode", proj.mode_name().to_string());
    kv("p", proj.p.to_string());
    kv("epsilon", format_f64(proj.epsilon));
    kv("scale_jl", proj.scale_jl.to_string());
    if let ProjectionKind::Kernel { kernel, .. } = &proj.kind {
        match kernel {
            Kernel::Gaussian { bandwidth } => {
                kv("kernel", "gaussian".into());
                kv("bandwidth", format_f64(*bandwidth));
            }
            Kernel::Linear => kv("kernel", "linear".into()),
        }
    }
    kv("tau", format_f64(model.tau));
    kv("sigma2", format_f64(model.coder.sigma2));
    kv("max_iters", model.coder.max_iters.to_string());
    kv("prune_threshold", format_f64(model.coder.prune_threshold));
    kv("tol", format_f64(model.coder.tol));
    kv("rule", model.coder.rule.name().into());
    kv("standardized", model.standardizer.is_some().to_string());
    kv("classes", model.label_names.len().to_string());
    for name in &model.label_names {
        kv("label", escape(name));
    }

    let eig = row_vector(&proj.eigenvalues);
    let medoids = model.medoids.matrix();
    let (mean, std);
    let mut blocks: Vec<Block> = Vec::new();
    match &proj.kind {
        ProjectionKind::Linear { u } => blocks.push(Block { name: "U", matrix: u }),
        ProjectionKind::Kernel {
            v, train_features, ..
        } => {
            blocks.push(Block { name: "V", matrix: v });
            blocks.push(Block {
                name: "train_features",
                matrix: train_features,
            });
        }
    }
    blocks.push(Block { name: "eigenvalues", matrix: &eig });
    blocks.push(Block {
        name: "D",
        matrix: model.dictionary.matrix(),
    });
    blocks.push(Block {
        name: "medoids",
        matrix: &medoids,
    });
    if let Some(st) = &model.standardizer {
        mean = row_vector(&st.mean);
        std = row_vector(&st.std);
        blocks.push(Block { name: "mean", matrix: &mean });
        blocks.push(Block { name: "std", matrix: &std });
    }
    for b in &blocks {
        header.push(format!("block: {} {} {}", b.name, b.matrix.nrows(), b.matrix.ncols()));
    }
    header.push(END.to_string());

    let mut out = header.join("\n").into_bytes();
    out.push(b'\n');
    for b in &blocks {
        let m = b.matrix;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Header {
    fields: Vec<(String, String)>,
    labels: Vec<String>,
    blocks: Vec<(String, usize, usize)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| corrupt(format!("header lacks {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| corrupt(format!("header field {key:?} has bad value {v:?}")))
    }
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.split('\n');
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing model magic line"));
    }
    let mut h = Header {
        fields: Vec::new(),
        labels: Vec::new(),
        blocks: Vec::new(),
    };
    for line in lines {
        if line == END {
            return Ok(h);
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| corrupt(format!("malformed header line {line:?}")))?;
        match key {
            "label" => h.labels.push(unescape(value)?),
            "block" => {
                let parts: Vec<&str> = value.split(' ').collect();
                let dims = |s: &str| s.parse::<usize>().map_err(|_| corrupt(format!("bad block line {line:?}")));
                if parts.len() != 3 {
                    return Err(corrupt(format!("bad block line {line:?}")));
                }
                h.blocks.push((parts[0].to_string(), dims(parts[1])?, dims(parts[2])?));
            }
            _ => h.fields.push((key.to_string(), value.to_string())),
        }
    }
    Err(corrupt("header is not terminated"))
}

/// Parses and verifies a model file's bytes.
pub fn decode(bytes: &[u8]) -> Result<ClassifierModel> {
    if bytes.len() < 8 {
        return Err(corrupt("file too short for a checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let marker = format!("\n{END}\n");
    let end = body
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| corrupt("header is not terminated"))?
        + marker.len();
    let text = std::str::from_utf8(&body[..end]).map_err(|_| corrupt("header is not UTF-8"))?;
    let header = parse_header(text)?;
    let mut payload = &body[end..];
    let expected: usize = header
        .blocks
        .iter()
        .map(|(_, r, c)| r.checked_mul(*c).and_then(|n| n.checked_mul(8)))
        .try_fold(0usize, |acc, n| n.and_then(|n| acc.checked_add(n)))
        .ok_or_else(|| corrupt("block sizes overflow"))?;
    if expected != payload.len() {
        return Err(corrupt(format!(
            "header declares {expected} payload bytes, file holds {}",
            payload.len()
        )));
    }
    let mut blocks: Vec<(String, DMatrix<f64>)> = Vec::new();
    for (name, rows, cols) in &header.blocks {
        let mut m = DMatrix::zeros(*rows, *cols);
        for i in 0..*rows {
            for j in 0..*cols {
                let (head, rest) = payload.split_at(8);
                m[(i, j)] = f64::from_le_bytes(head.try_into().unwrap());
                payload = rest;
            }
        }
        blocks.push((name.clone(), m));
    }
    let mut take = |name: &str| -> Result<DMatrix<f64>> {
        let i = blocks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| corrupt(format!("missing block {name:?}")))?;
        Ok(blocks.remove(i).1)
    };
    let row = |m: DMatrix<f64>, what: &str| -> Result<Vec<f64>> {
        if m.nrows() != 1 {
            return Err(corrupt(format!("block {what:?} must be a single row")));
        }
        Ok(m.iter().copied().collect())
    };

    let p: usize = header.parse("p")?;
    let kind = match header.get("mode")? {
        "linear" => ProjectionKind::Linear { u: take("U")? },
        "kernel" => {
            let kernel = match header.get("kernel")? {
                "gaussian" => Kernel::Gaussian {
                    bandwidth: header.parse("bandwidth")?,
                },
                "linear" => Kernel::Linear,
                other => return Err(corrupt(format!("unknown kernel {other:?}"))),
            };
            ProjectionKind::Kernel {
                v: take("V")?,
                kernel,
                train_features: take("train_features")?,
            }
        }
        other => return Err(corrupt(format!("unknown mode {other:?}"))),
    };
    let projection = ProjectionModel {
        kind,
        p,
        epsilon: header.parse("epsilon")?,
        scale_jl: header.parse("scale_jl")?,
        eigenvalues: row(take("eigenvalues")?, "eigenvalues")?,
    };
    match &projection.kind {
        ProjectionKind::Linear { u } if u.ncols() != p => {
            return Err(corrupt("projection width does not match p"))
        }
        ProjectionKind::Kernel {
            v, train_features, ..
        } if v.ncols() != p || v.nrows() != train_features.ncols() => {
            return Err(corrupt("kernel projection shape does not match p and N"))
        }
        _ => {}
    }
    let dictionary = Dictionary::from_matrix(take("D")?).map_err(|e| corrupt(e.to_string()))?;
    let medoids = ClassMedoids::from_matrix(&take("medoids")?).map_err(|e| corrupt(e.to_string()))?;
    let rule_name = header.get("rule")?;
    let coder = SparseCoderConfig {
        sigma2: header.parse("sigma2")?,
        max_iters: header.parse("max_iters")?,
        prune_threshold: header.parse("prune_threshold")?,
        tol: header.parse("tol")?,
        rule: UpdateRule::from_name(rule_name)
            .ok_or_else(|| corrupt(format!("unknown update rule {rule_name:?}")))?,
    };
    let standardizer = if header.parse::<bool>("standardized")? {
        Some(Standardizer {
            mean: row(take("mean")?, "mean")?,
            std: row(take("std")?, "std")?,
        })
    } else {
        None
    };
    let classes: usize = header.parse("classes")?;
    if header.labels.len() != classes {
        return Err(corrupt(format!(
            "{} label names for {classes} classes",
            header.labels.len()
        )));
    }
    if let Some((name, _)) = blocks.first() {
        return Err(corrupt(format!("unexpected block {name:?}")));
    }
    let model = ClassifierModel {
        projection,
        dictionary,
        medoids,
        tau: header.parse("tau")?,
        coder,
        standardizer,
        label_names: header.labels,
    };
    model.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(model)
}

pub fn save(model: &ClassifierModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load(path: &Path) -> Result<ClassifierModel> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn escaping_round_trips() {
        for s in ["plain", "a\\b", "line\nbreak", "\r\\n"] {
            assert_eq!(unescape(&escape(s)).unwrap(), s);
            assert!(!escape(s).contains('\n'));
        }
        assert!(unescape("bad\\x").is_err());
    }
}
