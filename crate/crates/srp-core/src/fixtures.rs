//! Hand-built miniature databases shared by unit tests.

use crate::rdb::{
    ColumnDef, ColumnKind, Database, FkTarget, Schema, Table, TableDef, TargetSpec, Task, Value,
};

pub fn col(name: &str, kind: ColumnKind) -> ColumnDef {
    ColumnDef { name: name.into(), kind, fk_target: None }
}

pub fn fk(name: &str, table: &str, column: &str) -> ColumnDef {
    ColumnDef {
        name: name.into(),
        kind: ColumnKind::ForeignKey,
        fk_target: Some(FkTarget { table: table.into(), column: column.into() }),
    }
}

pub fn num(x: f64) -> Value {
    Value::Number(x)
}

pub fn cat(s: &str) -> Value {
    Value::Category(s.into())
}

pub fn text(s: &str) -> Value {
    Value::Text(s.into())
}

pub fn ts(t: i64) -> Value {
    Value::Timestamp(t)
}

/// Session <- Click, both timestamped. Target: Session.outcome (binary).
/// Session s1 (at 20) owns clicks at 5, 15, 25; s2 (at 10) owns clicks at 5
/// and 12; s3 (at 40) owns none.
pub fn click_db() -> Database {
    let schema = Schema {
        tables: vec![
            TableDef {
                name: "Session".into(),
                columns: vec![
                    col("id", ColumnKind::PrimaryKey),
                    col("at", ColumnKind::Timestamp),
                    col("outcome", ColumnKind::Categorical),
                ],
                timestamp_column: Some("at".into()),
            },
            TableDef {
                name: "Click".into(),
                columns: vec![
                    col("id", ColumnKind::PrimaryKey),
                    fk("session_id", "Session", "id"),
                    col("at", ColumnKind::Timestamp),
                    col("dwell", ColumnKind::Numeric),
                ],
                timestamp_column: Some("at".into()),
            },
        ],
        target: TargetSpec {
            table: "Session".into(),
            column: "outcome".into(),
            task: Task::Binary,
        },
    };
    let sessions = Table {
        rows: vec![
            vec![cat("s1"), ts(20), cat("yes")],
            vec![cat("s2"), ts(10), cat("no")],
            vec![cat("s3"), ts(40), cat("yes")],
        ],
    };
    let clicks = Table {
        rows: vec![
            vec![cat("c1"), cat("s1"), ts(5), num(1.0)],
            vec![cat("c2"), cat("s1"), ts(15), num(2.0)],
            vec![cat("c3"), cat("s1"), ts(25), num(4.0)],
            vec![cat("c4"), cat("s2"), ts(5), num(8.0)],
            vec![cat("c5"), cat("s2"), ts(12), num(16.0)],
        ],
    };
    Database::new(schema, vec![sessions, clicks]).expect("fixture is valid")
}

/// User <- Review -> Item. Target: User.churn (binary). Reviews carry a
/// timestamp, a rating, a category, and free text; users own 0..=3 reviews.
///
/// Review layout: (id, user_id, item_id, when, rating, mood, body)
pub fn review_db() -> Database {
    let schema = Schema {
        tables: vec![
            TableDef {
                name: "User".into(),
                columns: vec![
                    col("id", ColumnKind::PrimaryKey),
                    col("age", ColumnKind::Numeric),
                    col("churn", ColumnKind::Categorical),
                ],
                timestamp_column: None,
            },
            TableDef {
                name: "Item".into(),
                columns: vec![
                    col("id", ColumnKind::PrimaryKey),
                    col("price", ColumnKind::Numeric),
                    col("kind", ColumnKind::Categorical),
                ],
                timestamp_column: None,
            },
            TableDef {
                name: "Review".into(),
                columns: vec![
                    col("id", ColumnKind::PrimaryKey),
                    fk("user_id", "User", "id"),
                    fk("item_id", "Item", "id"),
                    col("when", ColumnKind::Timestamp),
                    col("rating", ColumnKind::Numeric),
                    col("mood", ColumnKind::Categorical),
                    col("body", ColumnKind::Text),
                ],
                timestamp_column: Some("when".into()),
            },
        ],
        target: TargetSpec { table: "User".into(), column: "churn".into(), task: Task::Binary },
    };
    let users = Table {
        rows: vec![
            vec![cat("u1"), num(34.0), cat("yes")],
            vec![cat("u2"), num(27.0), cat("no")],
            vec![cat("u3"), Value::Missing, cat("no")],
        ],
    };
    let items = Table {
        rows: vec![
            vec![cat("i1"), num(10.0), cat("book")],
            vec![cat("i2"), num(30.0), cat("game")],
        ],
    };
    let reviews = Table {
        rows: vec![
            vec![cat("r1"), cat("u1"), cat("i1"), ts(10), num(10.0), cat("A"), text("solid")],
            vec![cat("r2"), cat("u1"), cat("i2"), ts(20), num(30.0), cat("B"), text("fun")],
            vec![cat("r3"), cat("u2"), cat("i2"), ts(15), num(40.0), cat("B"), text("ok game")],
            vec![cat("r4"), cat("u1"), cat("i1"), ts(30), Value::Missing, cat("A"), Value::Missing],
            vec![cat("r5"), cat("u2"), cat("i1"), ts(15), num(20.0), Value::Missing, text("meh")],
        ],
    };
    Database::new(schema, vec![users, items, reviews]).expect("fixture is valid")
}
