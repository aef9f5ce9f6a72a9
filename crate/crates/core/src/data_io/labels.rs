use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const LABELS_HEADER: [&str; 2] = ["patient_id", "label"];

/// Patient id to 0/1 diagnosis, iterated in id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    labels: BTreeMap<String, u8>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, patient_id: impl Into<String>, label: u8) -> Result<()> {
        let id = patient_id.into();
        if label > 1 {
            return Err(Error::InvalidArgument(format!("label for {id:?} must be 0 or 1, got {label}")));
        }
        if self.labels.contains_key(&id) {
            return Err(Error::DuplicatePatient(id));
        }
        self.labels.insert(id, label);
        Ok(())
    }

    pub fn get(&self, patient_id: &str) -> Option<u8> {
        self.labels.get(patient_id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.labels.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", LABELS_HEADER.join(","));
        for (id, l) in self.iter() {
            s.push_str(&format!("{id},{l}\n"));
        }
        s
    }
}

pub fn parse_labels(text: &str, path: &Path) -> Result<LabelTable> {
    let err = |detail: String| Error::Labels {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != LABELS_HEADER {
        return Err(err(format!(
            "missing or wrong header: expected `patient_id,label`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut table = LabelTable::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let (id, label) = (&record[0], &record[1]);
        if id.is_empty() {
            return Err(err(format!("row {}: empty patient_id", line + 2)));
        }
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(err(format!(
                    "row {}: label for {id:?} must be 0 or 1, got {other:?}",
                    line + 2
                )))
            }
        };
        table.insert(id, label)?;
    }
    Ok(table)
}

pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels(table: &LabelTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_csv()).map_err(|e| Error::io(path, e))
}
