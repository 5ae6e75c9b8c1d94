//! Leakage-safe temporal splits of the target table.

use super::{Database, RdbError, Value};

/// Row-id lists for train/validation/test, each sorted by (timestamp, row id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
    }
}

/// Splits the target table's rows chronologically: the earliest
/// `floor(train_frac * n)` rows train, the next `floor(valid_frac * n)`
/// validate, and the remainder tests. Ties on timestamp break by ascending
/// row id; rows with a Missing timestamp sort before everything; rows with a
/// Missing target label are excluded entirely.
pub fn temporal_split(
    db: &Database,
    train_frac: f64,
    valid_frac: f64,
) -> Result<Split, RdbError> {
    if !(train_frac > 0.0 && valid_frac >= 0.0 && train_frac + valid_frac < 1.0) {
        return Err(RdbError::BadSplitFractions {
            train: train_frac,
            valid: valid_frac,
        });
    }
    let ti = db.schema.target_table_index();
    let td = &db.schema.tables[ti];
    if td.timestamp_index().is_none() {
        return Err(RdbError::NoTimestampColumn(td.name.clone()));
    }
    let label_col = td
        .column_index(&db.schema.target.column)
        .expect("validated schema");

    let mut keyed: Vec<(i64, usize)> = db.tables[ti]
        .rows
        .iter()
        .enumerate()
        .filter(|(_, cells)| !matches!(cells[label_col], Value::Missing))
        .map(|(row, _)| {
            let ts = db.row_timestamp(ti, row).unwrap_or(i64::MIN);
            (ts, row)
        })
        .collect();
    keyed.sort(); // (timestamp, row id) ascending

    let n = keyed.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_valid = (valid_frac * n as f64).floor() as usize;
    let ids: Vec<usize> = keyed.into_iter().map(|(_, row)| row).collect();
    Ok(Split {
        train: ids[..n_train].to_vec(),
        valid: ids[n_train..n_train + n_valid].to_vec(),
        test: ids[n_train + n_valid..].to_vec(),
    })
}
