//! Record-structured datasets: one row per record, many records per subject.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All records of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub is_case: bool,
    pub rows: Vec<usize>,
}

/// Feature matrix, per-record labels and per-record subject identifiers.
///
/// Immutable after construction. Rows of a subject need not be contiguous;
/// the subject grouping is computed when the dataset is built.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordDataset {
    features: Array2<f64>,
    labels: Vec<bool>,
    subject_ids: Vec<String>,
    feature_names: Vec<String>,
    subjects: Vec<Subject>,
    subject_of_row: Vec<usize>,
}

impl RecordDataset {
    /// Validates and groups the records. Labels are `true` for cases.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<bool>,
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no records".into()));
        }
        if labels.len() != n || subject_ids.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows, {} labels, {} subject ids",
                n,
                labels.len(),
                subject_ids.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Schema("at least one feature column is required".into()));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::InvalidDataset(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: feature_names[col].clone(),
                });
            }
        }

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut subjects: Vec<Subject> = Vec::new();
        let mut subject_of_row = Vec::with_capacity(n);
        for (row, (id, &label)) in subject_ids.iter().zip(&labels).enumerate() {
            let s = *index.entry(id.as_str()).or_insert_with(|| {
                subjects.push(Subject {
                    id: id.clone(),
                    is_case: label,
                    rows: Vec::new(),
                });
                subjects.len() - 1
            });
            if subjects[s].is_case != label {
                return Err(Error::InconsistentLabels(id.clone()));
            }
            subjects[s].rows.push(row);
            subject_of_row.push(s);
        }
        if subjects.iter().all(|s| s.is_case) || subjects.iter().all(|s| !s.is_case) {
            return Err(Error::SingleClass);
        }

        Ok(RecordDataset {
            features,
            labels,
            subject_ids,
            feature_names,
            subjects,
            subject_of_row,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    /// Index into [`RecordDataset::subjects`] for every row.
    pub fn subject_of_row(&self) -> &[usize] {
        &self.subject_of_row
    }

    pub fn n_records(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Same labels and subjects with a different feature matrix of equal shape.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::InvalidDataset(format!(
                "feature matrix shape {:?} does not match {:?}",
                features.dim(),
                self.features.dim()
            )));
        }
        Ok(RecordDataset {
            features,
            ..self.clone()
        })
    }

    pub fn summarize(&self) -> DatasetSummary {
        let sizes = self.subjects.iter().map(|s| s.rows.len());
        let n_cases = self.subjects.iter().filter(|s| s.is_case).count();
        DatasetSummary {
            records: self.n_records(),
            subjects: self.n_subjects(),
            cases: n_cases,
            controls: self.n_subjects() - n_cases,
            min_records_per_subject: sizes.clone().min().unwrap_or(0),
            max_records_per_subject: sizes.max().unwrap_or(0),
            features: self.n_features(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub subjects: usize,
    pub cases: usize,
    pub controls: usize,
    pub min_records_per_subject: usize,
    pub max_records_per_subject: usize,
    pub features: usize,
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub subject_column: String,
    pub label_column: String,
    /// Label value that marks a case; every other value must be one single control value.
    pub case_value: String,
    /// Feature columns in order. `None` takes every remaining column.
    pub feature_columns: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            subject_column: "subject_id".into(),
            label_column: "label".into(),
            case_value: "case".into(),
            feature_columns: None,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<RecordDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<RecordDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let subject_col = find(&schema.subject_column)?;
    let label_col = find(&schema.label_column)?;
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&i| i != subject_col && i != label_col)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    if feature_cols.contains(&subject_col) || feature_cols.contains(&label_col) {
        return Err(Error::Schema(
            "subject and label columns cannot double as features".into(),
        ));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut subject_ids = Vec::new();
    let mut control_value: Option<String> = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        subject_ids.push(field(subject_col).to_string());
        let label = field(label_col);
        if label == schema.case_value {
            labels.push(true);
        } else {
            match &control_value {
                Some(c) if c != label => {
                    return Err(Error::UnknownLabel {
                        row,
                        value: label.to_string(),
                    })
                }
                Some(_) => {}
                None => control_value = Some(label.to_string()),
            }
            labels.push(false);
        }
        for &c in &feature_cols {
            let cell = field(c);
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, feature_cols.len()), values)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    RecordDataset::new(features, labels, subject_ids, names)
}

/// Label strings used when writing a dataset.
#[derive(Debug, Clone, Copy)]
pub struct LabelNames<'a> {
    pub case: &'a str,
    pub control: &'a str,
}

impl Default for LabelNames<'static> {
    fn default() -> Self {
        LabelNames {
            case: "case",
            control: "control",
        }
    }
}

/// Writes `subject_id,label,<features...>`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_dataset<W: Write>(ds: &RecordDataset, writer: W, names: LabelNames) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    wtr.write_record(&header)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for (row, feats) in ds.features.rows().into_iter().enumerate() {
        fields.clear();
        fields.push(ds.subject_ids[row].clone());
        fields.push(if ds.labels[row] { names.case } else { names.control }.to_string());
        fields.extend(feats.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_dataset(ds: &RecordDataset, path: impl AsRef<Path>, names: LabelNames) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, std::io::BufWriter::new(file), names)
}
