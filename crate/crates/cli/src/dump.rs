//! Prediction dumps: `sample_id,label,logit_0,...,logit_{C-1}` with label -1
//! for unlabeled rows.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use seval_core::LogitMatrix;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDump {
    pub sample_ids: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub logits: LogitMatrix,
}

impl PredictionDump {
    pub fn n_classes(&self) -> usize {
        self.logits.n_classes()
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// All labels, or an error naming the first unlabeled row.
    pub fn require_labels(&self) -> CliResult<Vec<usize>> {
        self.labels
            .iter()
            .zip(&self.sample_ids)
            .map(|(l, id)| l.ok_or_else(|| CliError::bad(format!("sample {id} has no label"))))
            .collect()
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_label(field: &str, n_classes: usize, line: u64) -> CliResult<Option<usize>> {
    let v: i64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::bad(format!("line {line}: label {field:?} is not an integer")))?;
    match v {
        -1 => Ok(None),
        v if v >= 0 && (v as usize) < n_classes => Ok(Some(v as usize)),
        v => Err(CliError::bad(format!("line {line}: label {v} outside 0..{n_classes} (or -1)"))),
    }
}

pub fn parse_dump<R: Read>(input: R) -> CliResult<PredictionDump> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(CliError::bad(
            "line 1: header must be sample_id,label,logit_0,...,logit_{C-1} with C >= 2",
        ));
    }
    let n_classes = header.len() - 2;
    for (c, name) in header.iter().skip(2).enumerate() {
        if name != format!("logit_{c}") {
            return Err(CliError::bad(format!("line 1: expected column logit_{c}, found {name:?}")));
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::bad(format!("malformed CSV: {e}")))?;
        let line = line_of(&record);
        if record.len() != n_classes + 2 {
            return Err(CliError::bad(format!(
                "line {line}: expected {} columns, found {}",
                n_classes + 2,
                record.len()
            )));
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(CliError::bad(format!("line {line}: duplicate sample_id {id:?}")));
        }
        labels.push(parse_label(&record[1], n_classes, line)?);
        for field in record.iter().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::bad(format!("line {line}: logit {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::bad(format!("line {line}: non-finite logit {field:?}")));
            }
            values.push(v);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(CliError::bad("dump has no rows"));
    }
    let logits = LogitMatrix::new(values, ids.len(), n_classes)?;
    Ok(PredictionDump { sample_ids: ids, labels, logits })
}

pub fn read_dump(path: &Path) -> CliResult<PredictionDump> {
    let file = std::fs::File::open(path).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
    parse_dump(file).map_err(|e| match e {
        CliError::BadInput(m) => CliError::BadInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_dump<W: Write>(out: W, dump: &PredictionDump) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..dump.n_classes()).map(|c| format!("logit_{c}")));
    w.write_record(&header)?;
    for ((id, label), row) in dump.sample_ids.iter().zip(&dump.labels).zip(dump.logits.rows()) {
        let mut rec = vec![id.clone(), label.map_or("-1".to_string(), |l| l.to_string())];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `(sample_id, label)` pairs from any CSV whose first two columns are
/// `sample_id,label`; further columns are ignored.
pub fn read_oracle_labels(path: &Path) -> CliResult<Vec<(String, usize)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "sample_id" || &header[1] != "label" {
        return Err(CliError::bad(format!("{}: line 1: header must start with sample_id,label", path.display())));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let label: usize = record
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| CliError::bad(format!("{}: line {line}: oracle label must be a non-negative integer", path.display())))?;
        out.push((record[0].to_string(), label));
    }
    Ok(out)
}
