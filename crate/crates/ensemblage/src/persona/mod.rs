//! Weighted survey rows turned into persona text.
//!
//! A [`PersonaDataset`] is a CSV of survey rows plus a JSON [`Codebook`]
//! that maps coded columns to human-readable sentences. Rows carry a
//! positive probability weight; [`PersonaDataset::sample_weighted`] draws a
//! row with probability proportional to that weight, so the chance of a
//! respondent being simulated matches their sample weight. Datasets are
//! immutable after load and safe to share across threads.

mod query;

pub use query::{PersonaQuery, QueryClause, QueryLiteral, QueryOp, QueryScalar};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown ideology label {0:?}")]
    UnknownLabel(String),
    #[error("query parse error: {0}")]
    QueryParse(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing CSV {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("parsing codebook {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One cell. Missing values are simply absent from the row's value map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Number(n) => {
                if n.fract() == 0.0 && n.abs() < 1e15 {
                    write!(f, "{}", *n as i64)
                } else {
                    write!(f, "{n}")
                }
            }
            CellValue::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub values: BTreeMap<String, CellValue>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub column: String,
    pub human_label: String,
    /// Raw value -> phrase substituted into the sentence template.
    #[serde(default)]
    pub value_labels: BTreeMap<String, String>,
    /// Sentence with a `${value}` placeholder, e.g. `"Your age is ${value}."`
    pub sentence_template: String,
}

/// Maps coded survey columns to human-readable persona sentences. Entry
/// order is the sentence order in rendered personas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub weight_column: String,
    pub ideology_column: String,
    pub entries: Vec<CodebookEntry>,
}

impl Codebook {
    fn validate(&self) -> Result<(), PersonaError> {
        for entry in &self.entries {
            let count = entry.sentence_template.matches("${value}").count();
            if count != 1 {
                return Err(PersonaError::CodebookMismatch(format!(
                    "entry {:?}: sentence_template must contain ${{value}} exactly once, found {count}",
                    entry.column
                )));
            }
        }
        Ok(())
    }

    fn entry(&self, column: &str) -> Option<&CodebookEntry> {
        self.entries.iter().find(|e| e.column == column)
    }
}

#[derive(Debug, Clone)]
pub struct PersonaDataset {
    pub rows: Vec<PersonaRecord>,
    pub weight_column: String,
    pub codebook: Codebook,
    pub source_label: String,
    columns: BTreeSet<String>,
    cumulative_weights: Vec<f64>,
}

fn cumulative(rows: &[PersonaRecord]) -> Vec<f64> {
    let mut acc = 0.0;
    rows.iter()
        .map(|r| {
            acc += r.weight;
            acc
        })
        .collect()
}

impl PersonaDataset {
    /// Build a dataset from in-memory rows, enforcing the same invariants
    /// as [`load_dataset`]: positive finite weights, a consistent column
    /// set, and a codebook entry for every non-weight column.
    pub fn from_rows(
        rows: Vec<PersonaRecord>,
        codebook: Codebook,
        source_label: impl Into<String>,
    ) -> Result<Self, PersonaError> {
        codebook.validate()?;
        let mut columns: BTreeSet<String> = BTreeSet::new();
        for entry in &codebook.entries {
            columns.insert(entry.column.clone());
        }
        columns.insert(codebook.weight_column.clone());
        for (i, row) in rows.iter().enumerate() {
            if !row.weight.is_finite() || row.weight <= 0.0 {
                return Err(PersonaError::Schema(format!(
                    "row {i}: weight must be finite and > 0, got {}",
                    row.weight
                )));
            }
            for column in row.values.keys() {
                if !columns.contains(column) {
                    return Err(PersonaError::CodebookMismatch(format!(
                        "row {i}: no codebook entry for column {column:?}"
                    )));
                }
            }
        }
        let cumulative_weights = cumulative(&rows);
        Ok(PersonaDataset {
            rows,
            weight_column: codebook.weight_column.clone(),
            codebook,
            source_label: source_label.into(),
            columns,
            cumulative_weights,
        })
    }
}

/// Load a CSV dataset and its JSON codebook.
///
/// Columns where every non-missing cell parses as a number are typed
/// numeric; everything else stays text. Empty cells are missing values.
pub fn load_dataset(
    path: impl AsRef<Path>,
    codebook_path: impl AsRef<Path>,
) -> Result<PersonaDataset, PersonaError> {
    let path = path.as_ref();
    let codebook_path = codebook_path.as_ref();

    let codebook_text =
        std::fs::read_to_string(codebook_path).map_err(|source| PersonaError::Io {
            path: codebook_path.display().to_string(),
            source,
        })?;
    let codebook: Codebook =
        serde_json::from_str(&codebook_text).map_err(|source| PersonaError::Json {
            path: codebook_path.display().to_string(),
            source,
        })?;
    codebook.validate()?;

    let mut reader = csv::Reader::from_path(path).map_err(|source| PersonaError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| PersonaError::Csv {
            path: path.display().to_string(),
            source,
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| PersonaError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        if record.len() != headers.len() {
            return Err(PersonaError::Schema(format!(
                "row {} has {} fields, header has {}",
                raw_rows.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        raw_rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }

    // Column typing: numeric iff every non-missing cell parses as f64.
    let mut numeric: Vec<bool> = vec![true; headers.len()];
    for row in &raw_rows {
        for (i, cell) in row.iter().enumerate() {
            if !cell.is_empty() && cell.parse::<f64>().is_err() {
                numeric[i] = false;
            }
        }
    }

    let weight_idx = headers
        .iter()
        .position(|h| *h == codebook.weight_column)
        .ok_or_else(|| {
            PersonaError::Schema(format!(
                "weight column {:?} not present in {}",
                codebook.weight_column,
                path.display()
            ))
        })?;
    if !headers.contains(&codebook.ideology_column) {
        return Err(PersonaError::Schema(format!(
            "ideology column {:?} not present in {}",
            codebook.ideology_column,
            path.display()
        )));
    }
    for entry in &codebook.entries {
        if !headers.contains(&entry.column) {
            return Err(PersonaError::CodebookMismatch(format!(
                "codebook entry {:?} has no matching dataset column",
                entry.column
            )));
        }
    }
    // Every non-weight column renders, so the codebook must describe it.
    for header in &headers {
        if *header != codebook.weight_column && codebook.entry(header).is_none() {
            return Err(PersonaError::CodebookMismatch(format!(
                "codebook has no entry for rendered column {header:?}"
            )));
        }
    }

    let mut rows = Vec::with_capacity(raw_rows.len());
    for (row_no, raw) in raw_rows.iter().enumerate() {
        let weight_cell = &raw[weight_idx];
        let weight: f64 = weight_cell.parse().map_err(|_| {
            PersonaError::Schema(format!(
                "row {}: weight {weight_cell:?} is not a number",
                row_no + 2
            ))
        })?;
        if !weight.is_finite() || weight <= 0.0 {
            return Err(PersonaError::Schema(format!(
                "row {}: weight must be finite and > 0, got {weight}",
                row_no + 2
            )));
        }
        let mut values = BTreeMap::new();
        for (i, cell) in raw.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let value = if numeric[i] {
                CellValue::Number(cell.parse().expect("checked during typing pass"))
            } else {
                CellValue::Text(cell.clone())
            };
            values.insert(headers[i].clone(), value);
        }
        rows.push(PersonaRecord { values, weight });
    }

    let cumulative_weights = cumulative(&rows);
    Ok(PersonaDataset {
        rows,
        weight_column: codebook.weight_column.clone(),
        codebook,
        source_label: path.display().to_string(),
        columns: headers.into_iter().collect(),
        cumulative_weights,
    })
}

fn scalar_matches(
    value: &CellValue,
    op: QueryOp,
    scalar: &QueryScalar,
) -> Result<bool, PersonaError> {
    use std::cmp::Ordering;
    let ordering = match (value, scalar) {
        (CellValue::Number(a), QueryScalar::Number(b)) => a.partial_cmp(b),
        (CellValue::Text(a), QueryScalar::Text(b)) => Some(a.as_str().cmp(b.as_str())),
        (CellValue::Number(_), QueryScalar::Text(t)) => {
            return Err(PersonaError::TypeMismatch(format!(
                "numeric column compared against string {t:?}"
            )))
        }
        (CellValue::Text(_), QueryScalar::Number(n)) => {
            return Err(PersonaError::TypeMismatch(format!(
                "text column compared against number {n}"
            )))
        }
    };
    let Some(ordering) = ordering else {
        return Ok(false); // NaN never matches
    };
    Ok(match op {
        QueryOp::Eq => ordering == Ordering::Equal,
        QueryOp::Ne => ordering != Ordering::Equal,
        QueryOp::Lt => ordering == Ordering::Less,
        QueryOp::Le => ordering != Ordering::Greater,
        QueryOp::Gt => ordering == Ordering::Greater,
        QueryOp::Ge => ordering != Ordering::Less,
        QueryOp::In => unreachable!("handled by caller"),
    })
}

fn clause_matches(record: &PersonaRecord, clause: &QueryClause) -> Result<bool, PersonaError> {
    let Some(value) = record.values.get(&clause.column) else {
        return Ok(false); // missing cells match nothing
    };
    match (&clause.literal, clause.op) {
        (QueryLiteral::List(items), QueryOp::In) => {
            for item in items {
                if scalar_matches(value, QueryOp::Eq, item)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        (QueryLiteral::List(_), op) => Err(PersonaError::TypeMismatch(format!(
            "list literal requires the in operator, got {op:?}"
        ))),
        (QueryLiteral::Scalar(_), QueryOp::In) => Err(PersonaError::TypeMismatch(
            "in operator requires a list literal".into(),
        )),
        (QueryLiteral::Scalar(s), op) => scalar_matches(value, op, s),
    }
}

impl PersonaDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> &BTreeSet<String> {
        &self.columns
    }

    fn check_query(&self, query: &PersonaQuery) -> Result<(), PersonaError> {
        for clause in &query.clauses {
            if !self.columns.contains(&clause.column) {
                return Err(PersonaError::UnknownColumn(clause.column.clone()));
            }
        }
        Ok(())
    }

    /// Rows where every clause holds, weights unchanged.
    pub fn filter(&self, query: &PersonaQuery) -> Result<PersonaDataset, PersonaError> {
        self.check_query(query)?;
        let mut rows = Vec::new();
        for record in &self.rows {
            let mut all = true;
            for clause in &query.clauses {
                if !clause_matches(record, clause)? {
                    all = false;
                    break;
                }
            }
            if all {
                rows.push(record.clone());
            }
        }
        let cumulative_weights = cumulative(&rows);
        Ok(PersonaDataset {
            rows,
            weight_column: self.weight_column.clone(),
            codebook: self.codebook.clone(),
            source_label: self.source_label.clone(),
            columns: self.columns.clone(),
            cumulative_weights,
        })
    }

    /// Draw one row with probability `weight / total weight` via inverse CDF
    /// over the cumulative weight array. The rng fully determines the draw.
    pub fn sample_weighted(&self, rng: &mut SeededRng) -> Result<&PersonaRecord, PersonaError> {
        if self.rows.is_empty() {
            return Err(PersonaError::EmptyDataset);
        }
        let total = *self
            .cumulative_weights
            .last()
            .expect("non-empty cumulative array");
        let target = rng.f64() * total;
        let idx = self
            .cumulative_weights
            .partition_point(|&cum| cum <= target)
            .min(self.rows.len() - 1);
        Ok(&self.rows[idx])
    }

    /// Convenience initializer: `label` filters the ideology column, then a
    /// weighted draw picks the persona. The special label `"random"` skips
    /// filtering. Matching is case-insensitive and a bucket label also
    /// catches its graded variants ("liberal" matches "Very liberal").
    pub fn ideology_shortcut(
        &self,
        label: &str,
        rng: &mut SeededRng,
    ) -> Result<PersonaRecord, PersonaError> {
        if label.eq_ignore_ascii_case("random") {
            return Ok(self.sample_weighted(rng)?.clone());
        }
        let column = self.codebook.ideology_column.clone();
        let wanted = label.to_lowercase();
        let matches_label = |value: &CellValue| {
            let raw = value.to_string().to_lowercase();
            raw == wanted || raw.ends_with(&format!(" {wanted}"))
        };
        let known = self
            .rows
            .iter()
            .any(|r| r.values.get(&column).is_some_and(matches_label));
        if !known {
            return Err(PersonaError::UnknownLabel(label.to_string()));
        }
        let rows: Vec<PersonaRecord> = self
            .rows
            .iter()
            .filter(|r| r.values.get(&column).is_some_and(matches_label))
            .cloned()
            .collect();
        let cumulative_weights = cumulative(&rows);
        let subset = PersonaDataset {
            rows,
            weight_column: self.weight_column.clone(),
            codebook: self.codebook.clone(),
            source_label: self.source_label.clone(),
            columns: self.columns.clone(),
            cumulative_weights,
        };
        Ok(subset.sample_weighted(rng)?.clone())
    }

    /// Human-readable mapping of dataset variables: one line per codebook
    /// entry with the column name, label, and allowed values.
    pub fn describe_variables(&self) -> String {
        let mut lines = Vec::new();
        for entry in &self.codebook.entries {
            let values: BTreeSet<String> = self
                .rows
                .iter()
                .filter_map(|r| r.values.get(&entry.column))
                .map(|v| v.to_string())
                .collect();
            let is_numeric = self
                .rows
                .iter()
                .filter_map(|r| r.values.get(&entry.column))
                .all(|v| matches!(v, CellValue::Number(_)));
            let values_text = if is_numeric && !values.is_empty() {
                let nums: Vec<f64> = self
                    .rows
                    .iter()
                    .filter_map(|r| r.values.get(&entry.column))
                    .filter_map(|v| match v {
                        CellValue::Number(n) => Some(*n),
                        CellValue::Text(_) => None,
                    })
                    .collect();
                let min = nums.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = nums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                format!("numeric in [{min}, {max}]")
            } else {
                values
                    .iter()
                    .map(|v| match entry.value_labels.get(v) {
                        Some(label) => format!("{v} ({label})"),
                        None => v.clone(),
                    })
                    .collect::<Vec<_>>()
                    .join(" | ")
            };
            lines.push(format!(
                "{}: {}. Values: {}",
                entry.column, entry.human_label, values_text
            ));
        }
        lines.join("\n")
    }
}

/// Render a sampled row into persona text: a fixed header line, then one
/// sentence per codebook entry in codebook order. Missing values are
/// skipped rather than rendered as "unknown" claims.
pub fn render_persona(record: &PersonaRecord, codebook: &Codebook) -> Result<String, PersonaError> {
    let mut lines = vec!["You are a person with the following characteristics.".to_string()];
    for entry in &codebook.entries {
        let Some(value) = record.values.get(&entry.column) else {
            continue;
        };
        let raw = value.to_string();
        let phrase = entry.value_labels.get(&raw).cloned().unwrap_or(raw);
        lines.push(entry.sentence_template.replace("${value}", &phrase));
    }
    // A record can carry columns the codebook does not describe (e.g. the
    // weight column); those simply do not render. The reverse direction,
    // codebook entries without a dataset column, is rejected at load time.
    for column in record.values.keys() {
        if codebook.entry(column).is_none() && *column != codebook.weight_column {
            return Err(PersonaError::CodebookMismatch(format!(
                "no codebook entry for rendered column {column:?}"
            )));
        }
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_codebook() -> Codebook {
        Codebook {
            weight_column: "weight".into(),
            ideology_column: "ideology".into(),
            entries: vec![
                CodebookEntry {
                    column: "age".into(),
                    human_label: "Age".into(),
                    value_labels: BTreeMap::new(),
                    sentence_template: "Your age is ${value}.".into(),
                },
                CodebookEntry {
                    column: "ideology".into(),
                    human_label: "Political ideology".into(),
                    value_labels: BTreeMap::new(),
                    sentence_template: "Politically, you identify as ${value}.".into(),
                },
            ],
        }
    }

    fn record(age: Option<f64>, ideology: Option<&str>) -> PersonaRecord {
        let mut values = BTreeMap::new();
        if let Some(a) = age {
            values.insert("age".into(), CellValue::Number(a));
        }
        if let Some(i) = ideology {
            values.insert("ideology".into(), CellValue::Text(i.into()));
        }
        PersonaRecord {
            values,
            weight: 1.0,
        }
    }

    #[test]
    fn render_substitutes_in_codebook_order() {
        let text = render_persona(&record(Some(34.0), Some("Liberal")), &small_codebook()).unwrap();
        assert_eq!(
            text,
            "You are a person with the following characteristics.\n\
             Your age is 34.\n\
             Politically, you identify as Liberal."
        );
    }

    #[test]
    fn render_skips_missing_values() {
        let text = render_persona(&record(None, None), &small_codebook()).unwrap();
        assert_eq!(text, "You are a person with the following characteristics.");
    }

    #[test]
    fn render_is_deterministic() {
        let r = record(Some(60.0), Some("Moderate"));
        let cb = small_codebook();
        assert_eq!(
            render_persona(&r, &cb).unwrap(),
            render_persona(&r, &cb).unwrap()
        );
    }

    #[test]
    fn render_never_leaks_placeholder() {
        let text =
            render_persona(&record(Some(29.0), Some("Conservative")), &small_codebook()).unwrap();
        assert!(!text.contains("${value}"));
    }

    #[test]
    fn render_rejects_undescribed_column() {
        let mut r = record(Some(34.0), None);
        r.values
            .insert("mystery".into(), CellValue::Text("x".into()));
        assert!(matches!(
            render_persona(&r, &small_codebook()),
            Err(PersonaError::CodebookMismatch(_))
        ));
    }

    #[test]
    fn empty_codebook_describes_nothing() {
        let codebook = Codebook {
            weight_column: "weight".into(),
            ideology_column: "ideology".into(),
            entries: vec![],
        };
        let dataset = PersonaDataset::from_rows(vec![], codebook, "empty").unwrap();
        assert_eq!(dataset.describe_variables(), "");
    }

    #[test]
    fn codebook_template_must_have_one_value_slot() {
        let mut cb = small_codebook();
        cb.entries[0].sentence_template = "no slot".into();
        assert!(cb.validate().is_err());
        cb.entries[0].sentence_template = "${value} and ${value}".into();
        assert!(cb.validate().is_err());
    }
}
