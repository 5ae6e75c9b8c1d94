//! CSV loading and saving. One `<Table>.csv` per table, RFC 4180, UTF-8,
//! header row matching the schema's column names in order. Empty cells are
//! `Missing`; unparseable numeric/timestamp cells degrade to `Missing` and
//! are tallied in the [`LoadReport`].

use std::path::Path;

use super::schema::{ColumnKind, Schema};
use super::{Database, RdbError, Table, Value};

/// Count of cells coerced to `Missing` because they failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoercionCount {
    pub table: String,
    pub column: String,
    pub count: usize,
}

/// Per-column coercion tallies for one load.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub coercions: Vec<CoercionCount>,
}

impl LoadReport {
    pub fn total(&self) -> usize {
        self.coercions.iter().map(|c| c.count).sum()
    }

    fn bump(&mut self, table: &str, column: &str) {
        if let Some(c) = self
            .coercions
            .iter_mut()
            .find(|c| c.table == table && c.column == column)
        {
            c.count += 1;
        } else {
            self.coercions.push(CoercionCount {
                table: table.to_string(),
                column: column.to_string(),
                count: 1,
            });
        }
    }
}

fn parse_cell(
    raw: &str,
    kind: ColumnKind,
    table: &str,
    column: &str,
    report: &mut LoadReport,
) -> Value {
    if raw.is_empty() {
        return Value::Missing;
    }
    match kind {
        ColumnKind::Numeric => match raw.parse::<f64>() {
            // Non-finite parses (NaN, inf) are treated as failures: a NaN
            // cell would silently poison every downstream statistic.
            Ok(x) if x.is_finite() => Value::Number(x),
            _ => {
                report.bump(table, column);
                Value::Missing
            }
        },
        ColumnKind::Timestamp => match raw.parse::<i64>() {
            Ok(t) => Value::Timestamp(t),
            Err(_) => {
                report.bump(table, column);
                Value::Missing
            }
        },
        ColumnKind::Categorical | ColumnKind::PrimaryKey | ColumnKind::ForeignKey => {
            Value::Category(raw.to_string())
        }
        ColumnKind::Text => Value::Text(raw.to_string()),
    }
}

/// Loads `<Table>.csv` for every schema table from `dir`, validates keys and
/// referential integrity, and reports parse coercions.
pub fn load_database(schema: &Schema, dir: &Path) -> Result<(Database, LoadReport), RdbError> {
    schema.validate()?;
    let mut report = LoadReport::default();
    let mut tables = Vec::with_capacity(schema.tables.len());
    for td in &schema.tables {
        let path = dir.join(format!("{}.csv", td.name));
        if !path.exists() {
            return Err(RdbError::MissingTableFile {
                table: td.name.clone(),
                path: path.display().to_string(),
            });
        }
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
        let expected: Vec<String> = td.columns.iter().map(|c| c.name.clone()).collect();
        let actual: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        if actual != expected {
            return Err(RdbError::HeaderMismatch {
                table: td.name.clone(),
                expected,
                actual,
            });
        }
        let mut rows = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != td.columns.len() {
                return Err(RdbError::RowWidthMismatch {
                    table: td.name.clone(),
                    row: row_idx,
                    expected: td.columns.len(),
                    actual: record.len(),
                });
            }
            let cells = record
                .iter()
                .zip(&td.columns)
                .map(|(raw, cd)| parse_cell(raw, cd.kind, &td.name, &cd.name, &mut report))
                .collect();
            rows.push(cells);
        }
        tables.push(Table { rows });
    }
    let db = Database::new(schema.clone(), tables)?;
    Ok((db, report))
}

fn cell_to_string(value: &Value) -> String {
    match value {
        Value::Number(x) => format!("{x}"),
        Value::Category(s) | Value::Text(s) => s.clone(),
        Value::Timestamp(t) => format!("{t}"),
        Value::Missing => String::new(),
    }
}

/// Writes one `<Table>.csv` per table into `dir`, preserving row order.
/// Numbers use the shortest round-trip decimal form, so `save -> load ->
/// save` is a byte-level fixed point.
pub fn save_database(db: &Database, dir: &Path) -> Result<(), RdbError> {
    std::fs::create_dir_all(dir)?;
    for (td, table) in db.schema.tables.iter().zip(&db.tables) {
        let path = dir.join(format!("{}.csv", td.name));
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(td.columns.iter().map(|c| c.name.as_str()))?;
        for row in &table.rows {
            writer.write_record(row.iter().map(cell_to_string))?;
        }
        writer.flush()?;
    }
    Ok(())
}
