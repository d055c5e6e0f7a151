//! Reading and writing result tables as files.
//!
//! Two offline formats are supported:
//! - JSON: an array of rows, each row an array of scalars; `null` is NULL.
//! - CSV: one record per row; an empty field is NULL; fields that parse as
//!   integers or floats become numbers, everything else is text.

use std::fs;
use std::path::Path;

use super::{CellValue, ResultTable};

#[derive(Debug, thiserror::Error)]
pub enum TableIoError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON table: {0}")]
    Json(String),
    #[error("invalid CSV table: {0}")]
    Csv(String),
    #[error("row {index} has {got} cells, expected {expected}")]
    Ragged {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("unsupported table file extension: {0} (expected .json or .csv)")]
    UnknownFormat(String),
}

/// On-disk table encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Json,
    /// `header: true` skips the first record.
    Csv { header: bool },
}

impl TableFormat {
    /// Pick a format from a file extension.
    pub fn from_path(path: &Path, csv_header: bool) -> Result<TableFormat, TableIoError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(TableFormat::Json),
            Some("csv") => Ok(TableFormat::Csv { header: csv_header }),
            other => Err(TableIoError::UnknownFormat(
                other.unwrap_or("<none>").to_string(),
            )),
        }
    }
}

/// Load a table file.
pub fn load_table(path: &Path, format: TableFormat) -> Result<ResultTable, TableIoError> {
    let text = fs::read_to_string(path).map_err(|source| TableIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_table(&text, format)
}

/// Parse table text in the given format.
pub fn parse_table(text: &str, format: TableFormat) -> Result<ResultTable, TableIoError> {
    match format {
        TableFormat::Json => parse_json_table(text),
        TableFormat::Csv { header } => parse_csv_table(text, header),
    }
}

fn parse_json_table(text: &str) -> Result<ResultTable, TableIoError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| TableIoError::Json(e.to_string()))?;
    table_from_json(&value)
}

/// Build a table from an already-parsed JSON array-of-arrays.
pub fn table_from_json(value: &serde_json::Value) -> Result<ResultTable, TableIoError> {
    let rows_json = value
        .as_array()
        .ok_or_else(|| TableIoError::Json("top level must be an array of rows".to_string()))?;
    let mut rows = Vec::with_capacity(rows_json.len());
    for (index, row_json) in rows_json.iter().enumerate() {
        let cells_json = row_json
            .as_array()
            .ok_or_else(|| TableIoError::Json(format!("row {index} is not an array")))?;
        let mut row = Vec::with_capacity(cells_json.len());
        for cell_json in cells_json {
            row.push(CellValue::from_json(cell_json).map_err(TableIoError::Json)?);
        }
        rows.push(row);
    }
    table_from_rows(rows)
}

fn parse_csv_table(text: &str, header: bool) -> Result<ResultTable, TableIoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TableIoError::Csv(e.to_string()))?;
        rows.push(record.iter().map(parse_csv_cell).collect());
    }
    table_from_rows(rows)
}

fn parse_csv_cell(field: &str) -> CellValue {
    if field.is_empty() {
        return CellValue::Null;
    }
    if let Ok(i) = field.parse::<i64>() {
        return CellValue::Integer(i);
    }
    if let Ok(f) = field.parse::<f64>() {
        return CellValue::from_f64(f);
    }
    CellValue::Text(field.to_string())
}

fn table_from_rows(rows: Vec<Vec<CellValue>>) -> Result<ResultTable, TableIoError> {
    ResultTable::from_rows(rows).map_err(|e| match e {
        super::TableError::RaggedRow {
            index,
            got,
            expected,
        } => TableIoError::Ragged {
            index,
            got,
            expected,
        },
    })
}

/// Serialize a table as a JSON array of rows.
pub fn table_to_json(table: &ResultTable) -> serde_json::Value {
    serde_json::Value::Array(
        table
            .rows()
            .iter()
            .map(|row| {
                serde_json::Value::Array(
                    row.iter()
                        .map(|cell| serde_json::to_value(cell).expect("cell serializes"))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// Write a table file in the given format.
pub fn save_table(
    table: &ResultTable,
    path: &Path,
    format: TableFormat,
) -> Result<(), TableIoError> {
    let text = match format {
        TableFormat::Json => {
            serde_json::to_string_pretty(&table_to_json(table)).expect("table serializes")
        }
        TableFormat::Csv { header } => {
            let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
            if header {
                let names: Vec<String> =
                    (0..table.columns()).map(|i| format!("col{i}")).collect();
                writer
                    .write_record(&names)
                    .map_err(|e| TableIoError::Csv(e.to_string()))?;
            }
            for row in table.rows() {
                let fields: Vec<String> = row.iter().map(csv_field).collect();
                writer
                    .write_record(&fields)
                    .map_err(|e| TableIoError::Csv(e.to_string()))?;
            }
            String::from_utf8(
                writer
                    .into_inner()
                    .map_err(|e| TableIoError::Csv(e.to_string()))?,
            )
            .expect("csv output is utf-8")
        }
    };
    fs::write(path, text).map_err(|source| TableIoError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn csv_field(cell: &CellValue) -> String {
    match cell {
        CellValue::Null => String::new(),
        CellValue::Integer(v) => v.to_string(),
        CellValue::Float(bits) => bits.value().to_string(),
        CellValue::Text(s) => s.clone(),
        CellValue::BlobDigest(d) => {
            let mut hex = String::from("$blob:");
            for b in d {
                hex.push_str(&format!("{b:02x}"));
            }
            hex
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let t = parse_table(r#"[[1, "a", null], [2.5, "b", 3]]"#, TableFormat::Json).unwrap();
        assert_eq!(t.columns(), 3);
        assert_eq!(t.rows()[0][2], CellValue::Null);
        assert_eq!(t.rows()[1][0], CellValue::from_f64(2.5));

        let json = table_to_json(&t);
        let back = table_from_json(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn json_integral_float_snaps() {
        let t = parse_table("[[1.0]]", TableFormat::Json).unwrap();
        assert_eq!(t.rows()[0][0], CellValue::Integer(1));
    }

    #[test]
    fn csv_null_is_empty_field() {
        let t = parse_table("1,,x\n2,3.5,y\n", TableFormat::Csv { header: false }).unwrap();
        assert_eq!(t.rows()[0][1], CellValue::Null);
        assert_eq!(t.rows()[0][2], CellValue::text("x"));
        assert_eq!(t.rows()[1][1], CellValue::from_f64(3.5));
    }

    #[test]
    fn csv_header_skipped() {
        let t = parse_table("a,b\n1,2\n", TableFormat::Csv { header: true }).unwrap();
        assert_eq!(t.row_count(), 1);
        assert_eq!(t.rows()[0][0], CellValue::Integer(1));
    }

    #[test]
    fn ragged_json_rejected() {
        let err = parse_table("[[1,2],[3]]", TableFormat::Json).unwrap_err();
        assert!(matches!(err, TableIoError::Ragged { index: 1, .. }));
    }
}
