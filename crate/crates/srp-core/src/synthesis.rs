//! Flat feature synthesis along FK-PK paths.
//!
//! Starting from the target table, a depth-first enumeration produces every
//! simple path (no table visited twice) of bounded length whose hops either
//! follow a foreign key forward (row -> referenced row, a join) or backward
//! (row -> all rows referencing it, a grouping). Evaluating a path for a
//! target row yields either joined cell values (pure-forward paths) or one
//! aggregate per applicable aggregator and source column (paths with at
//! least one backward hop), plus a row-group COUNT.
//!
//! With `cutoff_aware` set, a row participates only when it is verifiably in
//! the target row's past: rows of timestamped tables need a timestamp
//! strictly below the target's, and rows of timestampless tables that
//! reference timestamped rows (retrieval link rows, say) count only when
//! their latest referenced timestamp is at or before the target's. Features
//! for a row therefore never depend on the row itself or on anything later.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{row_visibility, Visibility};
use crate::rdb::{ColumnKind, Database, Schema, Value};

/// Category -> occurrence count for one row group. Ordered so downstream
/// iteration and serialization are deterministic.
pub type FrequencyMap = BTreeMap<String, u64>;

/// Aggregators over a row group's column values. `Missing` values are
/// dropped before aggregation; an empty remainder aggregates to `Missing`
/// (COUNT aggregates to 0 instead).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Number of non-Missing values (row-group size when applied per path).
    Count,
    Mean,
    Max,
    Min,
    /// Text concatenation with single spaces, in the order given (callers
    /// pass groups in ascending row-id order).
    JoinText,
    /// Most frequent category; ties break to the lexicographically smallest.
    Mode,
    /// Frequency-aware aggregation: the full category histogram, encoded
    /// downstream as a weighted one-hot mixture.
    Fa,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Count => "COUNT",
            AggregatorKind::Mean => "MEAN",
            AggregatorKind::Max => "MAX",
            AggregatorKind::Min => "MIN",
            AggregatorKind::JoinText => "JOIN_TEXT",
            AggregatorKind::Mode => "MODE",
            AggregatorKind::Fa => "FA",
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("aggregator {agg} cannot consume a {found} value")]
    TypeMismatch { agg: &'static str, found: &'static str },
    #[error("unknown table index {0}")]
    UnknownTable(usize),
}

/// One FK traversal. `Forward` leaves the FK-owning table toward the
/// referenced primary key; `Backward` enters the FK-owning table, grouping
/// every row that references the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopDirection {
    Forward,
    Backward,
}

/// A single hop of a synthesis path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    /// Table owning the FK column.
    pub fk_table: usize,
    /// FK column index within `fk_table`.
    pub fk_column: usize,
    /// Table the hop arrives at.
    pub to: usize,
    pub direction: HopDirection,
}

/// FK-PK path rooted at the target table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisPath {
    pub hops: Vec<Hop>,
}

impl SynthesisPath {
    /// Whether evaluating the path groups rows (any backward hop) rather
    /// than joining a single row.
    pub fn is_aggregating(&self) -> bool {
        self.hops.iter().any(|h| h.direction == HopDirection::Backward)
    }

    /// Final table of the path.
    pub fn last_table(&self) -> usize {
        self.hops.last().expect("paths are non-empty").to
    }

    /// Compact label, e.g. `<Review:user_id>Item:item_id`: `<` enters the
    /// named table by grouping, `>` joins into it through the named FK.
    pub fn label(&self, schema: &Schema) -> String {
        let mut out = String::new();
        for hop in &self.hops {
            let fk_name = &schema.tables[hop.fk_table].columns[hop.fk_column].name;
            let to_name = &schema.tables[hop.to].name;
            let mark = match hop.direction {
                HopDirection::Forward => '>',
                HopDirection::Backward => '<',
            };
            let _ = write!(out, "{mark}{to_name}:{fk_name}");
        }
        out
    }

    /// Tables visited, starting at the target table.
    pub fn visited(&self, start: usize) -> Vec<usize> {
        let mut v = vec![start];
        v.extend(self.hops.iter().map(|h| h.to));
        v
    }
}

/// Enumerates every simple FK-PK path from the target table up to
/// `max_depth` hops, depth-first, visiting candidate hops in schema order
/// (tables, then columns). Each prefix of a deeper path is itself emitted,
/// parent before child.
pub fn find_synthesis_paths(db: &Database, max_depth: usize) -> Vec<SynthesisPath> {
    let schema = &db.schema;
    let start = schema.target_table_index();
    let mut paths = Vec::new();
    let mut visited = vec![start];
    let mut hops: Vec<Hop> = Vec::new();
    dfs(schema, start, max_depth, &mut visited, &mut hops, &mut paths);
    paths
}

fn dfs(
    schema: &Schema,
    current: usize,
    remaining: usize,
    visited: &mut Vec<usize>,
    hops: &mut Vec<Hop>,
    paths: &mut Vec<SynthesisPath>,
) {
    if remaining == 0 {
        return;
    }
    for (ti, td) in schema.tables.iter().enumerate() {
        for (ci, target) in td.fk_columns() {
            let target_idx = schema.table_index(&target.table).expect("validated schema");
            // Forward: current table owns the FK.
            if ti == current && !visited.contains(&target_idx) {
                descend(
                    schema,
                    Hop { fk_table: ti, fk_column: ci, to: target_idx, direction: HopDirection::Forward },
                    remaining,
                    visited,
                    hops,
                    paths,
                );
            }
            // Backward: the FK references the current table.
            if target_idx == current && !visited.contains(&ti) {
                descend(
                    schema,
                    Hop { fk_table: ti, fk_column: ci, to: ti, direction: HopDirection::Backward },
                    remaining,
                    visited,
                    hops,
                    paths,
                );
            }
        }
    }
}

fn descend(
    schema: &Schema,
    hop: Hop,
    remaining: usize,
    visited: &mut Vec<usize>,
    hops: &mut Vec<Hop>,
    paths: &mut Vec<SynthesisPath>,
) {
    visited.push(hop.to);
    hops.push(hop);
    paths.push(SynthesisPath { hops: hops.clone() });
    dfs(schema, hop.to, remaining - 1, visited, hops, paths);
    hops.pop();
    visited.pop();
}

/// Aggregated or joined cell of a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Plain(Value),
    Freq(FrequencyMap),
}

impl FeatureValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Plain(Value::Missing))
    }
}

/// Applies one aggregator to a group of column values (ascending row-id
/// order). `Missing` values are dropped first; an empty remainder yields
/// `Missing` for every aggregator except COUNT, which yields 0.
pub fn aggregate(values: &[Value], kind: AggregatorKind) -> Result<FeatureValue, SynthesisError> {
    let present: Vec<&Value> = values.iter().filter(|v| !v.is_missing()).collect();
    if kind == AggregatorKind::Count {
        return Ok(FeatureValue::Plain(Value::Number(present.len() as f64)));
    }
    if present.is_empty() {
        return Ok(FeatureValue::Plain(Value::Missing));
    }
    let type_err = |found: &'static str| SynthesisError::TypeMismatch { agg: kind.name(), found };
    match kind {
        AggregatorKind::Count => unreachable!("handled above"),
        AggregatorKind::Mean | AggregatorKind::Max | AggregatorKind::Min => {
            let mut nums = Vec::with_capacity(present.len());
            for v in &present {
                match v {
                    Value::Number(x) => nums.push(*x),
                    other => return Err(type_err(kind_name(other))),
                }
            }
            let out = match kind {
                AggregatorKind::Mean => nums.iter().sum::<f64>() / nums.len() as f64,
                AggregatorKind::Max => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                AggregatorKind::Min => nums.iter().copied().fold(f64::INFINITY, f64::min),
                _ => unreachable!(),
            };
            Ok(FeatureValue::Plain(Value::Number(out)))
        }
        AggregatorKind::JoinText => {
            let mut parts = Vec::with_capacity(present.len());
            for v in &present {
                match v {
                    Value::Text(s) => parts.push(s.as_str()),
                    other => return Err(type_err(kind_name(other))),
                }
            }
            Ok(FeatureValue::Plain(Value::Text(parts.join(" "))))
        }
        AggregatorKind::Mode | AggregatorKind::Fa => {
            let mut freq = FrequencyMap::new();
            for v in &present {
                match v {
                    Value::Category(s) => *freq.entry(s.clone()).or_insert(0) += 1,
                    other => return Err(type_err(kind_name(other))),
                }
            }
            if kind == AggregatorKind::Fa {
                return Ok(FeatureValue::Freq(freq));
            }
            // BTreeMap iterates lexicographically, so the first maximum is
            // the tie-break winner.
            let mode = freq
                .iter()
                .max_by_key(|(cat, count)| (*count, std::cmp::Reverse(cat.as_str())))
                .map(|(cat, _)| cat.clone())
                .expect("non-empty");
            Ok(FeatureValue::Plain(Value::Category(mode)))
        }
    }
}

fn kind_name(v: &Value) -> &'static str {
    match v {
        Value::Number(_) => "number",
        Value::Category(_) => "category",
        Value::Text(_) => "text",
        Value::Timestamp(_) => "timestamp",
        Value::Missing => "missing",
    }
}

/// How a feature column should be encoded downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
    Text,
    /// FA output: a [`FrequencyMap`] per row.
    Frequency,
}

/// Where a feature column came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Copied from the target table (non-key, non-timestamp, non-label).
    Original { column: usize },
    /// Joined through a pure-forward path.
    Joined { path: SynthesisPath, source_column: usize },
    /// Aggregated over a path's row group; `source_column` is `None` for
    /// the per-path row-group COUNT.
    Aggregated {
        path: SynthesisPath,
        source_column: Option<usize>,
        agg: AggregatorKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    /// Export header: the plain column name for originals,
    /// `path__column__AGG` for synthesized columns.
    pub name: String,
    pub kind: FeatureKind,
    pub source: FeatureSource,
}

impl FeatureColumn {
    /// Hops of the path the column was drawn through (empty for originals).
    pub fn hops(&self) -> &[Hop] {
        match &self.source {
            FeatureSource::Original { .. } => &[],
            FeatureSource::Joined { path, .. } | FeatureSource::Aggregated { path, .. } => {
                &path.hops
            }
        }
    }
}

/// One row per target row (aligned by row id), original feature columns
/// first, then synthesized columns in path order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub target_table: usize,
    pub columns: Vec<FeatureColumn>,
    pub rows: Vec<Vec<FeatureValue>>,
}

/// Target-table columns that act as raw features: everything except keys,
/// timestamps, and the target label itself.
pub fn original_feature_columns(db: &Database) -> Vec<usize> {
    let ti = db.schema.target_table_index();
    let td = &db.schema.tables[ti];
    let label = td.column_index(&db.schema.target.column);
    td.columns
        .iter()
        .enumerate()
        .filter(|(ci, cd)| {
            Some(*ci) != label
                && matches!(
                    cd.kind,
                    ColumnKind::Numeric | ColumnKind::Categorical | ColumnKind::Text
                )
        })
        .map(|(ci, _)| ci)
        .collect()
}

fn feature_kind_of(kind: ColumnKind) -> Option<FeatureKind> {
    match kind {
        ColumnKind::Numeric => Some(FeatureKind::Numeric),
        ColumnKind::Categorical => Some(FeatureKind::Categorical),
        ColumnKind::Text => Some(FeatureKind::Text),
        _ => None,
    }
}

/// Source columns of a table that aggregators can consume, with the
/// aggregators applicable to each, in schema order.
fn aggregations_for(db: &Database, table: usize) -> Vec<(usize, FeatureKind, Vec<AggregatorKind>)> {
    db.schema.tables[table]
        .columns
        .iter()
        .enumerate()
        .filter_map(|(ci, cd)| {
            let kind = feature_kind_of(cd.kind)?;
            let aggs = match kind {
                FeatureKind::Numeric => vec![AggregatorKind::Mean, AggregatorKind::Max, AggregatorKind::Min],
                FeatureKind::Categorical => vec![AggregatorKind::Mode, AggregatorKind::Fa],
                FeatureKind::Text => vec![AggregatorKind::JoinText],
                FeatureKind::Frequency => unreachable!("tables never store frequency cells"),
            };
            Some((ci, kind, aggs))
        })
        .collect()
}

fn agg_output_kind(agg: AggregatorKind, source: FeatureKind) -> FeatureKind {
    match agg {
        AggregatorKind::Count | AggregatorKind::Mean | AggregatorKind::Max | AggregatorKind::Min => {
            FeatureKind::Numeric
        }
        AggregatorKind::JoinText => FeatureKind::Text,
        AggregatorKind::Mode => FeatureKind::Categorical,
        AggregatorKind::Fa => {
            debug_assert_eq!(source, FeatureKind::Categorical);
            FeatureKind::Frequency
        }
    }
}

/// Materializes the feature table for every target row.
///
/// With `cutoff_aware`, each hop drops arriving rows that are not visible
/// from the target row's own timestamp (see the module docs; rows whose
/// relevant timestamp is Missing are dropped too, as they cannot be shown to
/// be in the past). Target rows without a usable timestamp are left
/// unfiltered.
pub fn synthesize_features(
    db: &Database,
    paths: &[SynthesisPath],
    cutoff_aware: bool,
) -> FeatureTable {
    let target = db.schema.target_table_index();
    let reverse = ReverseIndex::build(db);
    let visibility: Vec<Vec<Visibility>> = (0..db.tables.len())
        .map(|t| row_visibility(db, t))
        .collect();

    // Fixed column layout: originals, then per-path synthesized columns.
    let mut columns = Vec::new();
    for ci in original_feature_columns(db) {
        let cd = &db.schema.tables[target].columns[ci];
        columns.push(FeatureColumn {
            name: cd.name.clone(),
            kind: feature_kind_of(cd.kind).expect("filtered to feature kinds"),
            source: FeatureSource::Original { column: ci },
        });
    }
    for path in paths {
        let label = path.label(&db.schema);
        if path.is_aggregating() {
            columns.push(FeatureColumn {
                name: format!("{label}__*__COUNT"),
                kind: FeatureKind::Numeric,
                source: FeatureSource::Aggregated {
                    path: path.clone(),
                    source_column: None,
                    agg: AggregatorKind::Count,
                },
            });
            for (ci, kind, aggs) in aggregations_for(db, path.last_table()) {
                let col_name = &db.schema.tables[path.last_table()].columns[ci].name;
                for agg in aggs {
                    columns.push(FeatureColumn {
                        name: format!("{label}__{col_name}__{}", agg.name()),
                        kind: agg_output_kind(agg, kind),
                        source: FeatureSource::Aggregated {
                            path: path.clone(),
                            source_column: Some(ci),
                            agg,
                        },
                    });
                }
            }
        } else {
            for (ci, kind, _) in aggregations_for(db, path.last_table()) {
                let col_name = &db.schema.tables[path.last_table()].columns[ci].name;
                columns.push(FeatureColumn {
                    name: format!("{label}__{col_name}__JOIN"),
                    kind,
                    source: FeatureSource::Joined { path: path.clone(), source_column: ci },
                });
            }
        }
    }

    let n_rows = db.tables[target].len();
    let mut rows = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let cutoff = if cutoff_aware { db.row_timestamp(target, r) } else { None };
        let mut cells = Vec::with_capacity(columns.len());
        for ci in original_feature_columns(db) {
            cells.push(FeatureValue::Plain(db.tables[target].rows[r][ci].clone()));
        }
        for path in paths {
            let group = evaluate_path(db, &reverse, &visibility, path, r, cutoff);
            if path.is_aggregating() {
                cells.push(FeatureValue::Plain(Value::Number(group.len() as f64)));
                for (ci, _, aggs) in aggregations_for(db, path.last_table()) {
                    let values: Vec<Value> = group
                        .iter()
                        .map(|&row| db.tables[path.last_table()].rows[row][ci].clone())
                        .collect();
                    for agg in aggs {
                        cells.push(aggregate(&values, agg).expect("kinds matched by construction"));
                    }
                }
            } else {
                for (ci, _, _) in aggregations_for(db, path.last_table()) {
                    let v = group
                        .first()
                        .map(|&row| db.tables[path.last_table()].rows[row][ci].clone())
                        .unwrap_or(Value::Missing);
                    cells.push(FeatureValue::Plain(v));
                }
            }
        }
        rows.push(cells);
    }

    FeatureTable { target_table: target, columns, rows }
}

/// Row multiset reached by walking `path` from target row `r`, sorted by
/// ascending row id (duplicates preserved: a row joined through two current
/// rows counts twice).
fn evaluate_path(
    db: &Database,
    reverse: &ReverseIndex,
    visibility: &[Vec<Visibility>],
    path: &SynthesisPath,
    r: usize,
    cutoff: Option<i64>,
) -> Vec<usize> {
    let mut current: Vec<usize> = vec![r];
    for hop in &path.hops {
        let mut next = Vec::new();
        match hop.direction {
            HopDirection::Forward => {
                for &row in &current {
                    let cell = &db.tables[hop.fk_table].rows[row][hop.fk_column];
                    if let Some(key) = cell.as_str() {
                        if let Some(dst) = db.pk_row(hop.to, key) {
                            next.push(dst);
                        }
                    }
                }
            }
            HopDirection::Backward => {
                let adj = reverse.adjacency(db, hop.fk_table, hop.fk_column);
                for &row in &current {
                    if let Some(pk_rows) = adj.get(&row) {
                        next.extend_from_slice(pk_rows);
                    }
                }
            }
        }
        if cutoff.is_some() {
            next.retain(|&row| visibility[hop.to][row].admits(cutoff));
        }
        current = next;
    }
    current.sort_unstable();
    current
}

/// Lazy per-(table, FK column) reverse adjacency: referenced row -> rows
/// referencing it, ascending.
struct ReverseIndex {
    maps: std::cell::RefCell<std::collections::HashMap<(usize, usize), std::rc::Rc<std::collections::HashMap<usize, Vec<usize>>>>>,
}

impl ReverseIndex {
    fn build(_db: &Database) -> Self {
        ReverseIndex { maps: Default::default() }
    }

    fn adjacency(
        &self,
        db: &Database,
        fk_table: usize,
        fk_column: usize,
    ) -> std::rc::Rc<std::collections::HashMap<usize, Vec<usize>>> {
        if let Some(m) = self.maps.borrow().get(&(fk_table, fk_column)) {
            return m.clone();
        }
        let target = db.schema.tables[fk_table].columns[fk_column]
            .fk_target
            .as_ref()
            .expect("reverse index is only built for FK columns");
        let target_idx = db.schema.table_index(&target.table).expect("validated schema");
        let mut map: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
        for (row, cells) in db.tables[fk_table].rows.iter().enumerate() {
            if let Some(key) = cells[fk_column].as_str() {
                if let Some(dst) = db.pk_row(target_idx, key) {
                    map.entry(dst).or_default().push(row);
                }
            }
        }
        let rc = std::rc::Rc::new(map);
        self.maps.borrow_mut().insert((fk_table, fk_column), rc.clone());
        rc
    }
}

/// Writes the feature table as CSV: one row per target row, feature columns
/// in layout order. Frequency cells serialize as compact JSON objects.
pub fn write_feature_csv(ft: &FeatureTable, path: &std::path::Path) -> Result<(), crate::rdb::RdbError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(ft.columns.iter().map(|c| c.name.as_str()))?;
    for row in &ft.rows {
        let mut record = Vec::with_capacity(row.len());
        for cell in row {
            record.push(match cell {
                FeatureValue::Plain(Value::Number(x)) => format!("{x}"),
                FeatureValue::Plain(Value::Category(s)) | FeatureValue::Plain(Value::Text(s)) => {
                    s.clone()
                }
                FeatureValue::Plain(Value::Timestamp(t)) => format!("{t}"),
                FeatureValue::Plain(Value::Missing) => String::new(),
                FeatureValue::Freq(map) => serde_json::to_string(map).expect("string keys"),
            });
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
