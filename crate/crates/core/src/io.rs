//! File formats: labeled datasets (CSV or NDJSON), lifted measures and class
//! moments (NDJSON, one record per line) and label lists (CSV).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::{ClassMoment, ClassMoments, LabeledDataset};
use crate::manifold::{Particle, SpdMatrix};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads `label,f0,f1,...` rows. The first row is a header whose first
/// column must be `label`.
pub fn read_dataset_csv<T: Real, R: Read>(reader: R) -> Result<LabeledDataset<T>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(parse_error(1, "expected a header `label,f0,...` with at least one feature"));
    }
    let width = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width + 1 {
            return Err(parse_error(line, format!("expected {} fields, found {}", width + 1, record.len())));
        }
        let x = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(T::lit)
                    .ok_or_else(|| parse_error(line, format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<T>>>()?;
        labels.push(record[0].to_string());
        features.push(DVector::from_vec(x));
    }
    if features.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    LabeledDataset::new(features, labels)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelValue {
    Text(String),
    Integer(i64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    label: LabelValue,
    x: Vec<f64>,
}

/// Reads one `{"label": ..., "x": [...]}` object per line; blank lines are
/// skipped and integer labels are kept as their decimal text.
pub fn read_dataset_ndjson<T: Real, R: BufRead>(reader: R) -> Result<LabeledDataset<T>> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| parse_error(lineno, e.to_string()))?;
        if rec.x.iter().any(|v| !v.is_finite()) {
            return Err(parse_error(lineno, "non-finite feature"));
        }
        match width {
            None => width = Some(rec.x.len()),
            Some(w) if w != rec.x.len() => {
                return Err(parse_error(lineno, format!("expected {w} features, found {}", rec.x.len())))
            }
            _ => {}
        }
        labels.push(match rec.label {
            LabelValue::Text(s) => s,
            LabelValue::Integer(i) => i.to_string(),
        });
        features.push(DVector::from_iterator(rec.x.len(), rec.x.into_iter().map(T::lit)));
    }
    if features.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    LabeledDataset::new(features, labels)
}

/// Picks the dataset reader by extension: `.csv` or NDJSON otherwise.
pub fn read_dataset<T: Real>(path: &Path) -> Result<LabeledDataset<T>> {
    let file = File::open(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        read_dataset_csv(file)
    } else {
        read_dataset_ndjson(BufReader::new(file))
    }
}

fn rows_of<T: Real>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows<T: Real>(rows: &[Vec<T>], n: usize, line: usize) -> Result<DMatrix<T>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(parse_error(line, format!("sigma must be {n}×{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Serialize, Deserialize)]
struct ParticleRecord<T> {
    x: Vec<T>,
    mu: Vec<T>,
    sigma: Vec<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

pub fn write_measure_ndjson<T: Real, W: Write>(mut out: W, measure: &EmpiricalMeasure<T>) -> Result<()> {
    for (i, z) in measure.particles().iter().enumerate() {
        let rec = ParticleRecord {
            x: z.x.iter().copied().collect(),
            mu: z.mu.iter().copied().collect(),
            sigma: rows_of(z.sigma.as_matrix()),
            label: measure.labels().map(|l| l[i].clone()),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a measure; labels are kept only if every record carries one.
pub fn read_measure_ndjson<T: Real, R: BufRead>(reader: R) -> Result<EmpiricalMeasure<T>> {
    let mut particles = Vec::new();
    let mut labels = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ParticleRecord<T> = serde_json::from_str(&line).map_err(|e| parse_error(lineno, e.to_string()))?;
        let sigma = matrix_from_rows(&rec.sigma, rec.mu.len(), lineno)?;
        let sigma = SpdMatrix::try_new(sigma).map_err(|e| parse_error(lineno, e.to_string()))?;
        let z = Particle::new(DVector::from_vec(rec.x), DVector::from_vec(rec.mu), sigma)
            .map_err(|e| parse_error(lineno, e.to_string()))?;
        if let Some(first) = particles.first() {
            z.same_shape(first).map_err(|e| parse_error(lineno, e.to_string()))?;
        }
        particles.push(z);
        labels.push(rec.label);
    }
    if particles.is_empty() {
        return Err(Error::Empty("measure file"));
    }
    if labels.iter().all(Option::is_some) {
        EmpiricalMeasure::with_labels(particles, labels.into_iter().flatten().collect())
    } else {
        EmpiricalMeasure::new(particles)
    }
}

pub fn read_measure<T: Real>(path: &Path) -> Result<EmpiricalMeasure<T>> {
    read_measure_ndjson(BufReader::new(File::open(path)?))
}

pub fn write_measure<T: Real>(path: &Path, measure: &EmpiricalMeasure<T>) -> Result<()> {
    write_measure_ndjson(BufWriter::new(File::create(path)?), measure)
}

#[derive(Serialize, Deserialize)]
struct MomentRecord<T> {
    label: String,
    mu: Vec<T>,
    sigma: Vec<Vec<T>>,
    count: usize,
}

pub fn write_moments_ndjson<T: Real, W: Write>(mut out: W, moments: &ClassMoments<T>) -> Result<()> {
    for c in moments.classes() {
        let rec = MomentRecord {
            label: c.label.clone(),
            mu: c.mu.iter().copied().collect(),
            sigma: rows_of(c.sigma.as_matrix()),
            count: c.count,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_moments_ndjson<T: Real, R: BufRead>(reader: R) -> Result<ClassMoments<T>> {
    let mut classes = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MomentRecord<T> = serde_json::from_str(&line).map_err(|e| parse_error(lineno, e.to_string()))?;
        let sigma = matrix_from_rows(&rec.sigma, rec.mu.len(), lineno)?;
        let sigma = SpdMatrix::try_new(sigma).map_err(|e| parse_error(lineno, e.to_string()))?;
        classes.push(ClassMoment {
            label: rec.label,
            mu: DVector::from_vec(rec.mu),
            sigma,
            count: rec.count,
        });
    }
    ClassMoments::new(classes)
}

pub fn read_moments<T: Real>(path: &Path) -> Result<ClassMoments<T>> {
    read_moments_ndjson(BufReader::new(File::open(path)?))
}

pub fn write_moments<T: Real>(path: &Path, moments: &ClassMoments<T>) -> Result<()> {
    write_moments_ndjson(BufWriter::new(File::create(path)?), moments)
}

/// Writes `index,label` rows under a header.
pub fn write_labels_csv<W: Write>(out: W, labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "label"]).map_err(csv_io)?;
    for (i, y) in labels.iter().enumerate() {
        w.write_record([i.to_string().as_str(), y.as_str()]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<String>> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut labels = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let record = record.map_err(|e| parse_error(k + 2, e.to_string()))?;
        if record.get(0) != Some(k.to_string().as_str()) || record.len() != 2 {
            return Err(parse_error(k + 2, "expected `index,label` in order"));
        }
        labels.push(record[1].to_string());
    }
    Ok(labels)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
