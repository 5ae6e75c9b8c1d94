//! Relational database core: typed values, schema descriptors, CSV-backed
//! loading with referential-integrity validation, and temporal splits.
//!
//! A [`Database`] is an immutable, fully materialized set of tables. Rows are
//! identified by their zero-based load position (`row id`); every ordering
//! rule in the crate breaks ties by ascending row id so results are
//! reproducible.

mod load;
mod schema;
mod split;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_database, save_database, CoercionCount, LoadReport};
pub use schema::{
    load_schema, ColumnDef, ColumnKind, FkTarget, Schema, TableDef, TargetSpec, Task,
};
pub use split::{temporal_split, Split};

/// A single cell. `Missing` is first-class: aggregations skip it, equality
/// matching never matches it, and encoders map it to zero vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Number(f64),
    Category(String),
    Text(String),
    /// Epoch seconds. Ordering comparisons are exact integer comparisons.
    Timestamp(i64),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<i64> {
        match self {
            Value::Timestamp(t) => Some(*t),
            _ => None,
        }
    }

    /// String payload of categorical, text, and key cells.
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Category(s) | Value::Text(s) => Some(s),
            _ => None,
        }
    }
}

/// Rows of one table, indexed as `rows[row_id][column_index]`.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// A validated database: schema plus one [`Table`] per schema table, aligned
/// by index, with a primary-key lookup map per keyed table.
#[derive(Debug, Clone)]
pub struct Database {
    pub schema: Schema,
    pub tables: Vec<Table>,
    pk_maps: Vec<Option<HashMap<String, usize>>>,
}

impl Database {
    /// Assembles a database from parts and runs full validation (schema
    /// consistency, PK uniqueness, FK referential integrity).
    pub fn new(schema: Schema, tables: Vec<Table>) -> Result<Self, RdbError> {
        schema.validate()?;
        if tables.len() != schema.tables.len() {
            return Err(RdbError::TableCountMismatch {
                expected: schema.tables.len(),
                actual: tables.len(),
            });
        }
        let pk_maps = build_pk_maps(&schema, &tables)?;
        let db = Database { schema, tables, pk_maps };
        db.check_foreign_keys()?;
        Ok(db)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.schema.table_index(name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    /// Row id holding the given primary-key value, if the table has a PK.
    pub fn pk_row(&self, table_idx: usize, key: &str) -> Option<usize> {
        self.pk_maps[table_idx].as_ref()?.get(key).copied()
    }

    /// Primary-key string of a row, if the table declares a PK.
    pub fn pk_value(&self, table_idx: usize, row: usize) -> Option<&str> {
        let pk_col = self.schema.tables[table_idx].pk_index()?;
        self.tables[table_idx].rows[row][pk_col].as_str()
    }

    /// Timestamp of a row under the table's designated timestamp column.
    pub fn row_timestamp(&self, table_idx: usize, row: usize) -> Option<i64> {
        let ts_col = self.schema.tables[table_idx].timestamp_index()?;
        self.tables[table_idx].rows[row][ts_col].as_timestamp()
    }

    fn check_foreign_keys(&self) -> Result<(), RdbError> {
        for (ti, td) in self.schema.tables.iter().enumerate() {
            for (ci, cd) in td.columns.iter().enumerate() {
                let Some(target) = &cd.fk_target else { continue };
                let target_idx = self
                    .schema
                    .table_index(&target.table)
                    .expect("validated schema");
                for (row, cells) in self.tables[ti].rows.iter().enumerate() {
                    let Some(key) = cells[ci].as_str() else { continue };
                    if self.pk_row(target_idx, key).is_none() {
                        return Err(RdbError::FkViolation {
                            table: td.name.clone(),
                            column: cd.name.clone(),
                            row,
                            key: key.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn build_pk_maps(
    schema: &Schema,
    tables: &[Table],
) -> Result<Vec<Option<HashMap<String, usize>>>, RdbError> {
    let mut maps = Vec::with_capacity(schema.tables.len());
    for (ti, td) in schema.tables.iter().enumerate() {
        let Some(pk_col) = td.pk_index() else {
            maps.push(None);
            continue;
        };
        let mut map = HashMap::with_capacity(tables[ti].len());
        for (row, cells) in tables[ti].rows.iter().enumerate() {
            let key = match cells[pk_col].as_str() {
                Some(k) => k,
                None => {
                    return Err(RdbError::MissingPrimaryKey { table: td.name.clone(), row })
                }
            };
            if map.insert(key.to_string(), row).is_some() {
                return Err(RdbError::DuplicatePrimaryKey {
                    table: td.name.clone(),
                    row,
                    key: key.to_string(),
                });
            }
        }
        maps.push(Some(map));
    }
    Ok(maps)
}

/// Errors raised while parsing schemas, loading tables, or splitting.
#[derive(Debug, Error)]
pub enum RdbError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema parse error: {0}")]
    SchemaParse(#[from] serde_json::Error),
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {table}.{column}")]
    DuplicateColumn { table: String, column: String },
    #[error("table {0} declares more than one primary key")]
    MultiplePrimaryKeys(String),
    #[error("column {table}.{column} is a foreign key but has no fk_target")]
    MissingFkTarget { table: String, column: String },
    #[error("column {table}.{column} has fk_target but is not a foreign key")]
    UnexpectedFkTarget { table: String, column: String },
    #[error("foreign key {table}.{column} references {target}.{target_column}, which is not a declared primary key")]
    DanglingFkTarget {
        table: String,
        column: String,
        target: String,
        target_column: String,
    },
    #[error("timestamp_column {column} of table {table} is absent or not of timestamp kind")]
    BadTimestampColumn { table: String, column: String },
    #[error("target table {0} does not exist")]
    UnknownTargetTable(String),
    #[error("target column {table}.{column} does not exist")]
    UnknownTargetColumn { table: String, column: String },
    #[error("target column {table}.{column} has kind {kind:?}, incompatible with task {task:?}")]
    TargetKind {
        table: String,
        column: String,
        kind: ColumnKind,
        task: Task,
    },
    #[error("expected {expected} tables, got {actual}")]
    TableCountMismatch { expected: usize, actual: usize },
    #[error("missing csv file for table {table}: {path}")]
    MissingTableFile { table: String, path: String },
    #[error("header mismatch in {table}: expected {expected:?}, got {actual:?}")]
    HeaderMismatch {
        table: String,
        expected: Vec<String>,
        actual: Vec<String>,
    },
    #[error("row {row} of {table} has {actual} cells, expected {expected}")]
    RowWidthMismatch {
        table: String,
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("missing primary key in {table} row {row}")]
    MissingPrimaryKey { table: String, row: usize },
    #[error("duplicate primary key {key:?} in {table} row {row}")]
    DuplicatePrimaryKey { table: String, row: usize, key: String },
    #[error("FK violation {table}.{column} row {row}: key {key:?} has no referent")]
    FkViolation {
        table: String,
        column: String,
        row: usize,
        key: String,
    },
    #[error("table {0} has no timestamp column; temporal split undefined")]
    NoTimestampColumn(String),
    #[error("invalid split fractions train={train} valid={valid}")]
    BadSplitFractions { train: f64, valid: f64 },
}

#[cfg(test)]
mod tests;
