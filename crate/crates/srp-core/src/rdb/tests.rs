use proptest::prelude::*;

use super::*;
use crate::fixtures::{cat, col, fk, num, review_db, ts};
use crate::rdb::schema::{ColumnKind, Schema, TableDef, TargetSpec, Task};

fn event_schema(n_tables: bool) -> Schema {
    // Single-table Event(id, at, label) target schema for split tests.
    let _ = n_tables;
    Schema {
        tables: vec![TableDef {
            name: "Event".into(),
            columns: vec![
                col("id", ColumnKind::PrimaryKey),
                col("at", ColumnKind::Timestamp),
                col("label", ColumnKind::Categorical),
            ],
            timestamp_column: Some("at".into()),
        }],
        target: TargetSpec { table: "Event".into(), column: "label".into(), task: Task::Binary },
    }
}

fn event_db(stamps: &[Option<i64>], labels: &[Option<&str>]) -> Database {
    let rows = stamps
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (st, lb))| {
            vec![
                cat(&format!("e{i}")),
                st.map(ts).unwrap_or(Value::Missing),
                lb.map(cat).unwrap_or(Value::Missing),
            ]
        })
        .collect();
    Database::new(event_schema(true), vec![Table { rows }]).unwrap()
}

#[test]
fn three_table_fixture_loads_with_keys_intact() {
    let db = review_db();
    assert_eq!(db.tables.len(), 3);
    let review_idx = db.table_index("Review").unwrap();
    // Every FK resolves to a row.
    assert_eq!(db.pk_row(0, "u1"), Some(0));
    assert_eq!(db.pk_row(1, "i2"), Some(1));
    assert_eq!(db.row_timestamp(review_idx, 3), Some(30));
}

#[test]
fn dangling_fk_reports_table_column_and_row() {
    let db = review_db();
    let mut tables = db.tables.clone();
    // Fifth review (row id 4) points at an absent user.
    tables[2].rows[4][1] = cat("u99");
    let err = Database::new(db.schema.clone(), tables).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("FK violation Review.user_id row 4"), "got: {msg}");
}

#[test]
fn duplicate_primary_key_rejected() {
    let db = review_db();
    let mut tables = db.tables.clone();
    tables[0].rows[2][0] = cat("u1");
    let err = Database::new(db.schema.clone(), tables).unwrap_err();
    assert!(matches!(err, RdbError::DuplicatePrimaryKey { .. }), "got: {err}");
}

#[test]
fn missing_primary_key_rejected() {
    let db = review_db();
    let mut tables = db.tables.clone();
    tables[1].rows[0][0] = Value::Missing;
    let err = Database::new(db.schema.clone(), tables).unwrap_err();
    assert!(matches!(err, RdbError::MissingPrimaryKey { .. }), "got: {err}");
}

#[test]
fn multiple_primary_keys_rejected() {
    let mut schema = event_schema(true);
    schema.tables[0].columns[1] = col("at", ColumnKind::PrimaryKey);
    schema.tables[0].timestamp_column = None;
    let err = schema.validate().unwrap_err();
    assert!(matches!(err, RdbError::MultiplePrimaryKeys(_)), "got: {err}");
}

#[test]
fn fk_target_must_be_primary_key() {
    let mut schema = review_db().schema;
    // Point Review.user_id at a non-PK column.
    schema.tables[2].columns[1] = fk("user_id", "User", "age");
    let err = schema.validate().unwrap_err();
    assert!(matches!(err, RdbError::DanglingFkTarget { .. }), "got: {err}");
}

#[test]
fn timestamp_designation_must_be_timestamp_kind() {
    let mut schema = review_db().schema;
    schema.tables[0].timestamp_column = Some("age".into());
    let err = schema.validate().unwrap_err();
    assert!(matches!(err, RdbError::BadTimestampColumn { .. }), "got: {err}");
}

#[test]
fn split_six_two_two() {
    let stamps: Vec<Option<i64>> = (1..=10).map(Some).collect();
    let labels = vec![Some("x"); 10];
    let db = event_db(&stamps, &labels);
    let split = temporal_split(&db, 0.6, 0.2).unwrap();
    assert_eq!(split.train, (0..6).collect::<Vec<_>>());
    assert_eq!(split.valid, vec![6, 7]);
    assert_eq!(split.test, vec![8, 9]);
}

#[test]
fn split_breaks_timestamp_ties_by_row_id() {
    let db = event_db(&[Some(5), Some(5), Some(5), Some(5)], &[Some("x"); 4]);
    let split = temporal_split(&db, 0.5, 0.25).unwrap();
    assert_eq!(split.train, vec![0, 1]);
    assert_eq!(split.valid, vec![2]);
    assert_eq!(split.test, vec![3]);
}

#[test]
fn split_excludes_rows_with_missing_labels() {
    let stamps: Vec<Option<i64>> = (1..=6).map(Some).collect();
    let labels = vec![Some("x"), None, Some("x"), Some("x"), None, Some("x")];
    let db = event_db(&stamps, &labels);
    let split = temporal_split(&db, 0.5, 0.25).unwrap();
    assert_eq!(split.all().count(), 4);
    assert!(split.all().all(|r| ![1usize, 4].contains(&r)));
}

#[test]
fn split_requires_timestamp_column() {
    let mut db = review_db();
    db.schema.target = TargetSpec { table: "User".into(), column: "churn".into(), task: Task::Binary };
    let err = temporal_split(&db, 0.6, 0.2).unwrap_err();
    assert!(matches!(err, RdbError::NoTimestampColumn(_)), "got: {err}");
}

#[test]
fn split_rejects_bad_fractions() {
    let db = event_db(&[Some(1), Some(2)], &[Some("x"), Some("x")]);
    assert!(temporal_split(&db, 0.0, 0.2).is_err());
    assert!(temporal_split(&db, 0.8, 0.2).is_err());
    assert!(temporal_split(&db, 0.8, -0.1).is_err());
}

#[test]
fn save_load_save_is_a_byte_level_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let db = review_db();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    save_database(&db, &first).unwrap();
    let (reloaded, report) = load_database(&db.schema, &first).unwrap();
    assert_eq!(report.total(), 0);
    save_database(&reloaded, &second).unwrap();
    for td in &db.schema.tables {
        let a = std::fs::read(first.join(format!("{}.csv", td.name))).unwrap();
        let b = std::fs::read(second.join(format!("{}.csv", td.name))).unwrap();
        assert_eq!(a, b, "{} round-trip differs", td.name);
    }
}

#[test]
fn unparseable_numerics_become_missing_and_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let schema = event_schema(true);
    std::fs::write(
        dir.path().join("Event.csv"),
        "id,at,label\ne0,10,x\ne1,notatime,y\ne2,30,z\n",
    )
    .unwrap();
    let mut schema2 = schema.clone();
    schema2.tables[0].columns.push(col("score", ColumnKind::Numeric));
    std::fs::write(
        dir.path().join("Event2.csv"),
        "id,at,label,score\ne0,10,x,1.5\ne1,20,y,oops\ne2,30,z,NaN\n",
    )
    .unwrap();
    schema2.tables[0].name = "Event2".into();
    schema2.target.table = "Event2".into();

    let (db, report) = load_database(&schema, dir.path()).unwrap();
    assert_eq!(db.tables[0].rows[1][1], Value::Missing);
    assert_eq!(report.total(), 1);

    let (db2, report2) = load_database(&schema2, dir.path()).unwrap();
    assert_eq!(db2.tables[0].rows[1][3], Value::Missing);
    assert_eq!(db2.tables[0].rows[2][3], Value::Missing, "NaN must not survive");
    assert_eq!(report2.total(), 2);
    assert_eq!(db2.tables[0].rows[0][3], num(1.5));
}

#[test]
fn header_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("Event.csv"), "id,when,label\ne0,10,x\n").unwrap();
    let err = load_database(&event_schema(true), dir.path()).unwrap_err();
    assert!(matches!(err, RdbError::HeaderMismatch { .. }), "got: {err}");
}

#[test]
fn missing_table_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_database(&event_schema(true), dir.path()).unwrap_err();
    assert!(matches!(err, RdbError::MissingTableFile { .. }), "got: {err}");
}

#[test]
fn empty_cells_load_as_missing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("Event.csv"), "id,at,label\ne0,,\n").unwrap();
    let (db, report) = load_database(&event_schema(true), dir.path()).unwrap();
    assert_eq!(db.tables[0].rows[0][1], Value::Missing);
    assert_eq!(db.tables[0].rows[0][2], Value::Missing);
    assert_eq!(report.total(), 0, "empty cells are not coercions");
}

proptest! {
    /// Split partitions the labeled rows and is chronologically ordered:
    /// every train timestamp <= every valid timestamp <= every test one.
    #[test]
    fn split_partitions_and_orders(
        stamps in prop::collection::vec(0i64..50, 1..60),
        train_frac in 0.05f64..0.9,
        valid_part in 0.0f64..1.0,
    ) {
        let valid_frac = (1.0 - train_frac) * valid_part * 0.9;
        prop_assume!(train_frac + valid_frac < 1.0);
        let labels = vec![Some("x"); stamps.len()];
        let stamps: Vec<Option<i64>> = stamps.into_iter().map(Some).collect();
        let db = event_db(&stamps, &labels);
        let split = temporal_split(&db, train_frac, valid_frac).unwrap();

        let mut seen: Vec<usize> = split.all().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..stamps.len()).collect::<Vec<_>>());

        let ts_of = |rows: &[usize]| -> Vec<i64> {
            rows.iter().map(|&r| db.row_timestamp(0, r).unwrap()).collect()
        };
        let (tr, va, te) = (ts_of(&split.train), ts_of(&split.valid), ts_of(&split.test));
        if let (Some(a), Some(b)) = (tr.iter().max(), va.iter().min()) {
            prop_assert!(a <= b);
        }
        if let (Some(a), Some(b)) = (va.iter().max(), te.iter().min()) {
            prop_assert!(a <= b);
        }
        if let (Some(a), Some(b)) = (tr.iter().max(), te.iter().min()) {
            prop_assert!(a <= b);
        }
    }
}
