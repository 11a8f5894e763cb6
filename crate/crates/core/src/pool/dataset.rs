use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// One annotatable record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub input: String,
    /// Acceptable gold outputs. More than one entry encodes answer aliases.
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input: input.into(),
            references: Vec::new(),
            annotation: None,
            annotator: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_references<I, S>(mut self, refs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.references = refs.into_iter().map(Into::into).collect();
        self
    }
}

/// Which source fields feed which instance fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMapping {
    pub input: String,
    #[serde(default)]
    pub references: Option<String>,
    #[serde(default)]
    pub id: Option<String>,
}

impl FieldMapping {
    pub fn new(input: impl Into<String>) -> Self {
        Self { input: input.into(), references: None, id: None }
    }

    pub fn references(mut self, field: impl Into<String>) -> Self {
        self.references = Some(field.into());
        self
    }

    pub fn id(mut self, field: impl Into<String>) -> Self {
        self.id = Some(field.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Json,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported dataset format for {0} (expected .csv or .json)")]
    UnknownFormat(PathBuf),
    #[error("schema error: field `{field}` not found{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    MissingField { field: String, row: Option<usize> },
    #[error("integrity error: duplicate ids {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

/// Load a CSV (header row) or JSON (top-level array of objects) dataset.
pub fn load_dataset(path: &Path, mapping: &FieldMapping) -> Result<Vec<Instance>, DatasetError> {
    let format = DatasetFormat::from_path(path).ok_or_else(|| DatasetError::UnknownFormat(path.to_path_buf()))?;
    let content = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    parse_dataset(&content, format, mapping)
}

/// Parse dataset content already in memory (used for uploads).
pub fn parse_dataset(content: &str, format: DatasetFormat, mapping: &FieldMapping) -> Result<Vec<Instance>, DatasetError> {
    let rows = match format {
        DatasetFormat::Csv => csv_rows(content, mapping)?,
        DatasetFormat::Json => json_rows(content, mapping)?,
    };
    assign_ids(rows)
}

/// A parsed row before id assignment.
struct Row {
    id: Option<String>,
    input: String,
    references: Vec<String>,
    meta: BTreeMap<String, String>,
}

fn csv_rows(content: &str, mapping: &FieldMapping) -> Result<Vec<Row>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Malformed(e.to_string()))?
        .clone();
    let position = |field: &str| headers.iter().position(|h| h == field);
    let input_col = position(&mapping.input).ok_or_else(|| DatasetError::MissingField { field: mapping.input.clone(), row: None })?;
    let ref_col = match &mapping.references {
        Some(f) => Some(position(f).ok_or_else(|| DatasetError::MissingField { field: f.clone(), row: None })?),
        None => None,
    };
    let id_col = match &mapping.id {
        Some(f) => Some(position(f).ok_or_else(|| DatasetError::MissingField { field: f.clone(), row: None })?),
        None => None,
    };

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| DatasetError::MalformedRow { row: row_no, message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(DatasetError::MalformedRow {
                row: row_no,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let references = match ref_col {
            Some(c) => parse_reference_cell(&record[c]).map_err(|message| DatasetError::MalformedRow { row: row_no, message })?,
            None => Vec::new(),
        };
        let meta = headers
            .iter()
            .zip(record.iter())
            .enumerate()
            .filter(|(c, _)| Some(*c) != ref_col && Some(*c) != id_col && *c != input_col)
            .map(|(_, (h, v))| (h.to_string(), v.to_string()))
            .collect();
        rows.push(Row {
            id: id_col.map(|c| record[c].to_string()),
            input: record[input_col].to_string(),
            references,
            meta,
        });
    }
    Ok(rows)
}

/// A CSV cell holding a JSON array is read as a list of aliases.
fn parse_reference_cell(cell: &str) -> Result<Vec<String>, String> {
    let trimmed = cell.trim();
    if trimmed.starts_with('[') {
        let value: Value = serde_json::from_str(trimmed).map_err(|e| format!("reference list is not valid JSON: {e}"))?;
        return Ok(value_to_references(&value));
    }
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    Ok(vec![cell.to_string()])
}

fn value_to_references(value: &Value) -> Vec<String> {
    match value {
        Value::Null => Vec::new(),
        Value::Array(items) => items.iter().filter(|v| !v.is_null()).map(value_to_string).collect(),
        other => vec![value_to_string(other)],
    }
}

fn value_to_string(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn json_rows(content: &str, mapping: &FieldMapping) -> Result<Vec<Row>, DatasetError> {
    let value: Value = serde_json::from_str(content).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(DatasetError::Malformed("expected a top-level array of objects".into()));
    };
    let mut rows = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let row_no = i + 1;
        let Value::Object(obj) = item else {
            return Err(DatasetError::MalformedRow { row: row_no, message: "expected an object".into() });
        };
        let input = match obj.get(&mapping.input) {
            Some(Value::Null) | None => {
                return Err(DatasetError::MissingField { field: mapping.input.clone(), row: Some(row_no) })
            }
            Some(v) => value_to_string(v),
        };
        let references = mapping
            .references
            .as_ref()
            .and_then(|f| obj.get(f))
            .map(value_to_references)
            .unwrap_or_default();
        let id = match &mapping.id {
            Some(f) => match obj.get(f) {
                Some(Value::Null) | None => {
                    return Err(DatasetError::MissingField { field: f.clone(), row: Some(row_no) })
                }
                Some(v) => Some(value_to_string(v)),
            },
            None => None,
        };
        let meta = obj
            .iter()
            .filter(|(k, _)| {
                **k != mapping.input && Some(*k) != mapping.references.as_ref() && Some(*k) != mapping.id.as_ref()
            })
            .map(|(k, v)| (k.clone(), value_to_string(v)))
            .collect();
        rows.push(Row { id, input, references, meta });
    }
    Ok(rows)
}

fn assign_ids(rows: Vec<Row>) -> Result<Vec<Instance>, DatasetError> {
    let width = rows.len().to_string().len();
    let instances: Vec<Instance> = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| Instance {
            id: row.id.unwrap_or_else(|| format!("{i:0width$}")),
            input: row.input,
            references: row.references,
            annotation: None,
            annotator: None,
            meta: row.meta,
        })
        .collect();

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for inst in &instances {
        *seen.entry(inst.id.as_str()).or_default() += 1;
    }
    let mut dups: Vec<String> = seen.into_iter().filter(|(_, n)| *n > 1).map(|(id, _)| id.to_string()).collect();
    if !dups.is_empty() {
        dups.sort();
        return Err(DatasetError::DuplicateIds(dups));
    }
    Ok(instances)
}
