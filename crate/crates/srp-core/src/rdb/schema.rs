//! Schema descriptors: table and column declarations plus the prediction
//! target. Schemas are stored as JSON files next to the table CSVs.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RdbError;

/// Column kind. Exactly one column per table may be `PrimaryKey`; foreign
/// keys must carry an [`FkTarget`] naming the referenced table's primary key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
    Timestamp,
    PrimaryKey,
    ForeignKey,
}

/// Referenced `(table, column)` of a foreign key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FkTarget {
    pub table: String,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fk_target: Option<FkTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    /// Designated temporal column (must exist with kind `timestamp`). Tables
    /// without one are treated as atemporal: their rows are visible at all
    /// times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_column: Option<String>,
}

impl TableDef {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Index of the primary-key column, if declared.
    pub fn pk_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == ColumnKind::PrimaryKey)
    }

    /// Index of the designated timestamp column, if declared.
    pub fn timestamp_index(&self) -> Option<usize> {
        let name = self.timestamp_column.as_deref()?;
        self.column_index(name)
    }

    /// Foreign-key columns as `(column_index, target)` in declaration order.
    pub fn fk_columns(&self) -> impl Iterator<Item = (usize, &FkTarget)> {
        self.columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.fk_target.as_ref().map(|t| (i, t)))
    }
}

/// Supervised task on the target column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multiclass,
    Regression,
}

/// Which `(table, column)` the model predicts, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub table: String,
    pub column: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<TableDef>,
    pub target: TargetSpec,
}

impl Schema {
    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn target_table_index(&self) -> usize {
        self.table_index(&self.target.table).expect("validated schema")
    }

    /// Structural validation: unique names, single PKs, FK targets that exist
    /// and are primary keys, timestamp designations of timestamp kind, and a
    /// target column compatible with the declared task.
    pub fn validate(&self) -> Result<(), RdbError> {
        let mut seen = HashSet::new();
        for td in &self.tables {
            if !seen.insert(td.name.as_str()) {
                return Err(RdbError::DuplicateTable(td.name.clone()));
            }
            let mut cols = HashSet::new();
            let mut pk_count = 0usize;
            for cd in &td.columns {
                if !cols.insert(cd.name.as_str()) {
                    return Err(RdbError::DuplicateColumn {
                        table: td.name.clone(),
                        column: cd.name.clone(),
                    });
                }
                if cd.kind == ColumnKind::PrimaryKey {
                    pk_count += 1;
                }
                match (cd.kind, &cd.fk_target) {
                    (ColumnKind::ForeignKey, None) => {
                        return Err(RdbError::MissingFkTarget {
                            table: td.name.clone(),
                            column: cd.name.clone(),
                        })
                    }
                    (ColumnKind::ForeignKey, Some(target)) => {
                        let ok = self.table(&target.table).is_some_and(|tt| {
                            tt.column_index(&target.column)
                                .is_some_and(|ci| tt.columns[ci].kind == ColumnKind::PrimaryKey)
                        });
                        if !ok {
                            return Err(RdbError::DanglingFkTarget {
                                table: td.name.clone(),
                                column: cd.name.clone(),
                                target: target.table.clone(),
                                target_column: target.column.clone(),
                            });
                        }
                    }
                    (_, Some(_)) => {
                        return Err(RdbError::UnexpectedFkTarget {
                            table: td.name.clone(),
                            column: cd.name.clone(),
                        })
                    }
                    _ => {}
                }
            }
            if pk_count > 1 {
                return Err(RdbError::MultiplePrimaryKeys(td.name.clone()));
            }
            if let Some(ts) = &td.timestamp_column {
                let ok = td
                    .column_index(ts)
                    .is_some_and(|ci| td.columns[ci].kind == ColumnKind::Timestamp);
                if !ok {
                    return Err(RdbError::BadTimestampColumn {
                        table: td.name.clone(),
                        column: ts.clone(),
                    });
                }
            }
        }
        let target_table = self
            .table(&self.target.table)
            .ok_or_else(|| RdbError::UnknownTargetTable(self.target.table.clone()))?;
        let ci = target_table.column_index(&self.target.column).ok_or_else(|| {
            RdbError::UnknownTargetColumn {
                table: self.target.table.clone(),
                column: self.target.column.clone(),
            }
        })?;
        let kind = target_table.columns[ci].kind;
        let compatible = match self.target.task {
            Task::Binary | Task::Multiclass => kind == ColumnKind::Categorical,
            Task::Regression => kind == ColumnKind::Numeric,
        };
        if !compatible {
            return Err(RdbError::TargetKind {
                table: self.target.table.clone(),
                column: self.target.column.clone(),
                kind,
                task: self.target.task,
            });
        }
        Ok(())
    }
}

/// Parses and validates a schema descriptor file.
pub fn load_schema(path: &Path) -> Result<Schema, RdbError> {
    let text = std::fs::read_to_string(path)?;
    let schema: Schema = serde_json::from_str(&text)?;
    schema.validate()?;
    Ok(schema)
}
