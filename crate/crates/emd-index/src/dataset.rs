//! Reading and writing distribution databases.
//!
//! The native format is line-delimited text, one record per line:
//!
//! ```text
//! id<TAB>d<TAB>n<TAB>x_1,...,x_d;...;x_1,...,x_d<TAB>w_1,...,w_n
//! ```
//!
//! with `#`-prefixed comment lines and blank lines ignored. A JSON-lines
//! file (objects with `id`, `bins`, `weights`) is detected by its first
//! meaningful character and accepted too. Floats are written in shortest
//! round-trip form, so write → read reproduces a dataset bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};

/// Tolerance on a stored record's weight sum. Files further off than this
/// are rejected unless the caller asks for renormalization.
pub const FILE_WEIGHT_TOL: f64 = 1e-6;

#[derive(Deserialize)]
struct JsonRecord {
    id: u64,
    bins: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

/// Loads a dataset file (native or JSON-lines).
pub fn load_dataset(path: impl AsRef<Path>, renormalize: bool) -> Result<Vec<DiscreteDistribution>> {
    let file = File::open(path)?;
    parse_dataset(BufReader::new(file), renormalize)
}

/// Parses a dataset from any buffered reader.
pub fn parse_dataset(
    reader: impl BufRead,
    renormalize: bool,
) -> Result<Vec<DiscreteDistribution>> {
    let mut records: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        records.push((idx + 1, trimmed.to_string()));
    }
    let json = records
        .first()
        .map(|(_, l)| l.starts_with('{'))
        .unwrap_or(false);

    let mut out = Vec::with_capacity(records.len());
    let mut dataset_dim: Option<usize> = None;
    for (line_no, text) in records {
        let dist = if json {
            parse_json_record(line_no, &text, renormalize)?
        } else {
            parse_native_record(line_no, &text, renormalize)?
        };
        match dataset_dim {
            None => dataset_dim = Some(dist.dim()),
            Some(d) if d != dist.dim() => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!(
                        "record dimension {} differs from the dataset dimension {}",
                        dist.dim(),
                        d
                    ),
                });
            }
            _ => {}
        }
        if out
            .iter()
            .any(|existing: &DiscreteDistribution| existing.id() == dist.id())
        {
            return Err(Error::DuplicateId(dist.id()));
        }
        out.push(dist);
    }
    Ok(out)
}

fn build_record(
    id: u64,
    dim: usize,
    bins: Vec<f64>,
    weights: Vec<f64>,
    renormalize: bool,
) -> Result<DiscreteDistribution> {
    let sum: f64 = weights.iter().sum();
    if !renormalize && (sum - 1.0).abs() > FILE_WEIGHT_TOL {
        return Err(Error::WeightSum { id, sum });
    }
    if !renormalize && (sum - 1.0).abs() <= crate::distribution::WEIGHT_SUM_TOL {
        // Already normalized to working precision: keep the stored bits so
        // that write -> read round-trips exactly.
        DiscreteDistribution::new(id, dim, bins, weights)
    } else {
        // Off by more than working precision (or renormalization was asked
        // for): canonicalize so the in-memory invariant holds.
        DiscreteDistribution::new_renormalized(id, dim, bins, weights)
    }
}

fn parse_native_record(
    line_no: usize,
    text: &str,
    renormalize: bool,
) -> Result<DiscreteDistribution> {
    let fail = |reason: String| Error::Parse {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() != 5 {
        return Err(fail(format!(
            "expected 5 tab-separated fields, found {}",
            fields.len()
        )));
    }
    let id: u64 = fields[0]
        .parse()
        .map_err(|_| fail(format!("invalid id {:?}", fields[0])))?;
    let dim: usize = fields[1]
        .parse()
        .map_err(|_| fail(format!("invalid dimension {:?}", fields[1])))?;
    let n: usize = fields[2]
        .parse()
        .map_err(|_| fail(format!("invalid bin count {:?}", fields[2])))?;
    if dim == 0 || n == 0 {
        return Err(fail("dimension and bin count must be positive".into()));
    }

    let groups: Vec<&str> = fields[3].split(';').collect();
    if groups.len() != n {
        return Err(fail(format!("expected {n} bins, found {}", groups.len())));
    }
    let mut bins = Vec::with_capacity(n * dim);
    for group in groups {
        let coords: Vec<&str> = group.split(',').collect();
        if coords.len() != dim {
            return Err(fail(format!(
                "bin {:?} has {} coordinates, expected {dim}",
                group,
                coords.len()
            )));
        }
        for c in coords {
            bins.push(
                c.parse::<f64>()
                    .map_err(|_| fail(format!("invalid coordinate {c:?}")))?,
            );
        }
    }

    let weights = fields[4]
        .split(',')
        .map(|w| {
            w.parse::<f64>()
                .map_err(|_| fail(format!("invalid weight {w:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if weights.len() != n {
        return Err(fail(format!(
            "expected {n} weights, found {}",
            weights.len()
        )));
    }
    build_record(id, dim, bins, weights, renormalize)
}

fn parse_json_record(
    line_no: usize,
    text: &str,
    renormalize: bool,
) -> Result<DiscreteDistribution> {
    let rec: JsonRecord = serde_json::from_str(text).map_err(|source| Error::Json {
        line: line_no,
        source,
    })?;
    let dim = rec.bins.first().map(|b| b.len()).unwrap_or(0);
    if dim == 0 {
        return Err(Error::Parse {
            line: line_no,
            reason: "record has no bins".into(),
        });
    }
    if let Some(bad) = rec.bins.iter().find(|b| b.len() != dim) {
        return Err(Error::Parse {
            line: line_no,
            reason: format!(
                "bin {:?} has {} coordinates, expected {dim}",
                bad,
                bad.len()
            ),
        });
    }
    let bins: Vec<f64> = rec.bins.into_iter().flatten().collect();
    build_record(rec.id, dim, bins, rec.weights, renormalize)
}

/// Writes a dataset in the native format.
pub fn write_dataset(mut w: impl Write, dists: &[DiscreteDistribution]) -> Result<()> {
    for d in dists {
        let bins = (0..d.len())
            .map(|i| {
                d.bin(i)
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join(";");
        let weights = d
            .weights()
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{}\t{}\t{}\t{}\t{}", d.id(), d.dim(), d.len(), bins, weights)?;
    }
    Ok(())
}

/// Writes a dataset file, overwriting any existing file at `path`.
pub fn save_dataset(path: impl AsRef<Path>, dists: &[DiscreteDistribution]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, dists)?;
    w.flush()?;
    Ok(())
}
