//! Dataset CSV:
//!
//! ```text
//! #dim=<d>,classes=<C>
//! id,domain,label,f_1,...,f_d
//! ```
//!
//! `domain` is `S` or `T`, `label` an integer or `-`. An empty `id` field is
//! replaced by the 0-based data-row index. Floats are written in Rust's
//! shortest round-trip form, so save then load reproduces every bit.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{Domain, FeatureSample};
use crate::error::{Error, ParseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub dim: usize,
    pub classes: usize,
}

pub fn load_feature_dataset(path: impl AsRef<Path>) -> Result<(Vec<FeatureSample>, DatasetMeta)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_dataset(&text)?)
}

pub fn save_feature_dataset(path: impl AsRef<Path>, samples: &[FeatureSample], meta: DatasetMeta) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_dataset(samples, meta)).map_err(|e| Error::io(path, e))
}

pub fn format_dataset(samples: &[FeatureSample], meta: DatasetMeta) -> String {
    let mut out = format!("#dim={},classes={}\n", meta.dim, meta.classes);
    for s in samples {
        let _ = write!(out, "{},{},", s.id, s.domain.tag());
        match s.label {
            Some(l) => {
                let _ = write!(out, "{l}");
            }
            None => out.push('-'),
        }
        for v in &s.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn parse_header(line: &str) -> Option<DatasetMeta> {
    let rest = line.trim().strip_prefix('#')?;
    let (mut dim, mut classes) = (None, None);
    for part in rest.split(',') {
        let (key, value) = part.split_once('=')?;
        let value: usize = value.trim().parse().ok()?;
        match key.trim() {
            "dim" => dim = Some(value),
            "classes" => classes = Some(value),
            _ => return None,
        }
    }
    Some(DatasetMeta {
        dim: dim?,
        classes: classes?,
    })
}

pub fn parse_dataset(text: &str) -> Result<(Vec<FeatureSample>, DatasetMeta), ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let meta = lines
        .next()
        .and_then(|(_, l)| parse_header(l))
        .ok_or(ParseError::Header { row: 1 })?;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut width: Option<usize> = None;
    for (row, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => {
                if fields.len() < 3 || fields.len() - 3 != meta.dim {
                    return Err(ParseError::InconsistentDim {
                        row,
                        declared: meta.dim,
                        found: fields.len().saturating_sub(3),
                    });
                }
                width = Some(fields.len());
            }
            Some(w) if w != fields.len() => {
                return Err(ParseError::RaggedRow {
                    row,
                    expected: w,
                    found: fields.len(),
                });
            }
            Some(_) => {}
        }

        let numeric = |field: usize| ParseError::NonNumeric {
            row,
            field: field + 1,
            value: fields[field].to_string(),
        };
        let id = if fields[0].is_empty() {
            samples.len() as u64
        } else {
            fields[0].parse::<u64>().map_err(|_| numeric(0))?
        };
        let domain = match fields[1] {
            "S" | "s" => Domain::Source,
            "T" | "t" => Domain::Target,
            other => {
                return Err(ParseError::UnknownDomain {
                    row,
                    value: other.to_string(),
                })
            }
        };
        let label = match fields[2] {
            "-" => None,
            f => {
                let l = f.parse::<usize>().map_err(|_| numeric(2))?;
                if l >= meta.classes {
                    return Err(ParseError::LabelOutOfRange {
                        row,
                        label: l,
                        classes: meta.classes,
                    });
                }
                Some(l)
            }
        };
        let features = fields[3..]
            .iter()
            .enumerate()
            .map(|(j, f)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(numeric(j + 3)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !seen.insert((domain, id)) {
            return Err(ParseError::DuplicateId { row, id });
        }
        samples.push(FeatureSample {
            id,
            domain,
            label,
            features,
        });
    }
    Ok((samples, meta))
}
