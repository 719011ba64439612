use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassNames, Dataset, FeatureSchema};
use crate::error::{Error, Result};

/// JSON sidecar describing a dataset CSV: its feature schema, which column
/// holds the label and which label strings denote each class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSidecar {
    pub schema: FeatureSchema,
    pub label_column: String,
    pub class_names: ClassNames,
}

impl DataSidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: DataSidecar = serde_json::from_str(&text).map_err(|e| Error::Ingestion {
            line: e.line() as u64,
            column: "sidecar".into(),
            message: e.to_string(),
        })?;
        sidecar.schema.validate()?;
        Ok(sidecar)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reads a dataset whose header is exactly the schema's features plus the
/// label column, in any order.
pub fn load_csv(path: impl AsRef<Path>, sidecar: &DataSidecar) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (data, _) = read_csv(file, sidecar, &[])?;
    Ok(data)
}

/// Like [`load_csv`] but also tolerates (and returns, as raw strings) the
/// listed extra columns, e.g. an hsCRP column or a cohort tag.
pub fn load_csv_with_extras(
    path: impl AsRef<Path>,
    sidecar: &DataSidecar,
    extras: &[&str],
) -> Result<(Dataset, BTreeMap<String, Vec<String>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, sidecar, extras)
}

fn ingestion(line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Ingestion {
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

enum Slot {
    Feature(usize),
    Label,
    Extra(String),
}

pub(crate) fn read_csv<R: Read>(
    reader: R,
    sidecar: &DataSidecar,
    extras: &[&str],
) -> Result<(Dataset, BTreeMap<String, Vec<String>>)> {
    let schema = &sidecar.schema;
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| ingestion(1, "header", e.to_string()))?
        .clone();

    let mut slots = Vec::with_capacity(header.len());
    let mut seen_features = vec![false; schema.len()];
    let mut seen_label = false;
    for name in header.iter() {
        if name == sidecar.label_column {
            if seen_label {
                return Err(ingestion(1, name, "label column appears twice"));
            }
            seen_label = true;
            slots.push(Slot::Label);
        } else if let Some(j) = schema.index_of(name) {
            if seen_features[j] {
                return Err(ingestion(1, name, "feature column appears twice"));
            }
            seen_features[j] = true;
            slots.push(Slot::Feature(j));
        } else if extras.contains(&name) {
            slots.push(Slot::Extra(name.to_string()));
        } else {
            return Err(ingestion(1, name, "column is not in the schema"));
        }
    }
    if !seen_label {
        return Err(ingestion(1, &sidecar.label_column, "label column missing from header"));
    }
    if let Some(j) = seen_features.iter().position(|s| !s) {
        return Err(ingestion(1, &schema.features[j].name, "schema feature missing from header"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut extra_cols: BTreeMap<String, Vec<String>> =
        extras.iter().filter(|e| header.iter().any(|h| h == **e)).map(|e| (e.to_string(), Vec::new())).collect();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingestion(line, "?", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(ingestion(
                line,
                "*",
                format!("expected {} cells, found {}", header.len(), record.len()),
            ));
        }
        let mut row = vec![None; schema.len()];
        let mut label = None;
        for (cell, slot) in record.iter().zip(&slots) {
            match slot {
                Slot::Feature(j) => {
                    row[*j] = parse_cell(cell)
                        .map_err(|m| ingestion(line, &schema.features[*j].name, m))?;
                }
                Slot::Label => {
                    label = Some(sidecar.class_names.parse(cell).ok_or_else(|| {
                        ingestion(line, &sidecar.label_column, format!("unknown label '{cell}'"))
                    })?);
                }
                Slot::Extra(name) => {
                    extra_cols.get_mut(name).expect("registered").push(cell.to_string());
                }
            }
        }
        values.push(row);
        labels.push(label.expect("label slot present"));
    }

    let data = Dataset::new(schema.clone(), values, labels, sidecar.class_names.clone())?;
    Ok((data, extra_cols))
}

/// Reads the schema's feature columns from a CSV, in schema order, ignoring
/// any other column (a label, an identifier). Used for prediction input.
pub fn load_feature_rows(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<Vec<Option<f64>>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_feature_rows(file, schema)
}

pub fn read_feature_rows<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<Vec<Option<f64>>>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| ingestion(1, "header", e.to_string()))?
        .clone();
    let mut position = Vec::with_capacity(schema.len());
    for f in &schema.features {
        let mut hits = header.iter().enumerate().filter(|(_, h)| *h == f.name);
        match (hits.next(), hits.next()) {
            (Some((c, _)), None) => position.push(c),
            (None, _) => return Err(ingestion(1, &f.name, "schema feature missing from header")),
            (Some(_), Some(_)) => return Err(ingestion(1, &f.name, "feature column appears twice")),
        }
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingestion(line, "*", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = position
            .iter()
            .zip(&schema.features)
            .map(|(&c, f)| parse_cell(&record[c]).map_err(|m| ingestion(line, &f.name, m)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(format!("non-finite value '{cell}'")),
        Err(_) => Err(format!("not a number: '{cell}'")),
    }
}

/// Parses a raw extra column (empty cell = missing) into optional values.
pub fn parse_optional_column(name: &str, cells: &[String]) -> Result<Vec<Option<f64>>> {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| parse_cell(c).map_err(|m| ingestion(i as u64 + 2, name, m)))
        .collect()
}

/// Writes the dataset as CSV: schema columns in order, then the label column.
/// Missing values become empty cells; numbers use the shortest decimal form
/// that parses back to the same `f64`.
pub fn write_csv<W: Write>(data: &Dataset, label_column: &str, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| ingestion(0, "*", e.to_string());
    let mut header: Vec<&str> = data.schema().names().collect();
    header.push(label_column);
    w.write_record(&header).map_err(to_err)?;
    for (row, &label) in data.values().iter().zip(data.labels()) {
        let mut cells: Vec<String> = row
            .iter()
            .map(|v| v.map_or_else(String::new, |x| x.to_string()))
            .collect();
        cells.push(data.class_names().name(label).to_string());
        w.write_record(&cells).map_err(to_err)?;
    }
    w.flush().map_err(|e| ingestion(0, "*", e.to_string()))?;
    Ok(())
}
