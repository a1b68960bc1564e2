//! CSV interchange for shift streams.
//!
//! Schema: `id,split,truth_index,label,f0,...,f{d-1}` with one row per
//! example; `split` is `source`, `intermediate`, or `target`; `truth_index`
//! is empty outside the intermediate split. Floats are printed in Rust's
//! shortest round-trip form, so export → import is lossless.

use super::{GeneratorSpec, LabeledSet, ShiftStream, UnlabeledSet};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use std::fmt::Write as _;
use std::path::Path;

pub fn stream_to_csv<P: AsRef<Path>>(stream: &ShiftStream, path: P) -> Result<()> {
    stream.validate()?;
    let dim = stream.source.feature_dim();
    let mut out = String::from("id,split,truth_index,label");
    for j in 0..dim {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    let mut id = 0usize;
    let mut push_row = |id: usize, split: &str, truth: Option<f64>, label: usize, row: &[f64]| {
        write!(out, "{id},{split},").unwrap();
        if let Some(t) = truth {
            write!(out, "{t}").unwrap();
        }
        write!(out, ",{label}").unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    };
    for i in 0..stream.source.len() {
        push_row(id, "source", None, stream.source.labels()[i], stream.source.features().row(i));
        id += 1;
    }
    for i in 0..stream.intermediate.len() {
        push_row(
            id,
            "intermediate",
            Some(stream.truth_index[i]),
            stream.intermediate_labels[i],
            stream.intermediate.features().row(i),
        );
        id += 1;
    }
    for i in 0..stream.target.len() {
        push_row(id, "target", None, stream.target.labels()[i], stream.target.features().row(i));
        id += 1;
    }
    crate::report::write_atomic(path.as_ref(), &out)
}

pub fn stream_from_csv<P: AsRef<Path>>(path: P) -> Result<ShiftStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() < 5 {
        return Err(Error::format(0, "stream CSV needs at least one feature column"));
    }
    for (i, name) in ["id", "split", "truth_index", "label"].iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::format(
                0,
                format!("column {i} must be '{name}', found '{}'", headers.get(i).unwrap_or("")),
            ));
        }
    }
    let dim = headers.len() - 4;

    let mut source_rows = Vec::new();
    let mut source_labels = Vec::new();
    let mut inter_rows = Vec::new();
    let mut inter_labels = Vec::new();
    let mut truth_index = Vec::new();
    let mut target_rows = Vec::new();
    let mut target_labels = Vec::new();

    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != dim + 4 {
            return Err(Error::format(
                offset,
                format!("expected {} fields, found {}", dim + 4, record.len()),
            ));
        }
        let split = &record[1];
        let label: usize = record[3]
            .parse()
            .map_err(|_| Error::format(offset, format!("bad label '{}'", &record[3])))?;
        let mut row = Vec::with_capacity(dim);
        for j in 0..dim {
            let v: f64 = record[4 + j]
                .parse()
                .map_err(|_| Error::format(offset, format!("bad feature '{}'", &record[4 + j])))?;
            row.push(v);
        }
        match split {
            "source" => {
                source_rows.push(row);
                source_labels.push(label);
            }
            "intermediate" => {
                let t: f64 = record[2].parse().map_err(|_| {
                    Error::format(offset, format!("bad truth_index '{}'", &record[2]))
                })?;
                truth_index.push(t);
                inter_rows.push(row);
                inter_labels.push(label);
            }
            "target" => {
                target_rows.push(row);
                target_labels.push(label);
            }
            other => {
                return Err(Error::format(offset, format!("unknown split '{other}'")));
            }
        }
    }

    let to_matrix = |rows: Vec<Vec<f64>>| -> Result<DenseMatrix> {
        if rows.is_empty() {
            Ok(DenseMatrix::zeros(0, dim))
        } else {
            DenseMatrix::from_rows(&rows)
        }
    };
    let stream = ShiftStream {
        source: LabeledSet::new(to_matrix(source_rows)?, source_labels)?,
        target: LabeledSet::new(to_matrix(target_rows)?, target_labels)?,
        intermediate: UnlabeledSet::new(to_matrix(inter_rows)?),
        truth_index,
        intermediate_labels: inter_labels,
        spec: GeneratorSpec::External,
        seed: 0,
    };
    stream.validate()?;
    Ok(stream)
}

fn csv_err(e: csv::Error) -> Error {
    let offset = match e.position() {
        Some(p) => p.byte(),
        None => 0,
    };
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io(io);
        }
        unreachable!("is_io_error guarantees an Io kind");
    }
    Error::format(offset, e.to_string())
}
