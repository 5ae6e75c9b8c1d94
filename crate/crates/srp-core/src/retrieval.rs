//! Similarity retrieval within a table.
//!
//! Every feature column is reduced to an exactly-matchable token — numeric
//! values by quantile binning, categorical and text values verbatim — and
//! rows are scored against each other with an inverse-frequency match
//! kernel: matching on a rare value counts for a lot, matching on a
//! near-ubiquitous one for little (or negatively). Each row's top-K most
//! similar peers are then materialized as a two-column dummy table whose
//! columns both point back at the source table's primary key, so every
//! downstream consumer sees an ordinary relational table.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdb::{
    ColumnDef, ColumnKind, Database, FkTarget, RdbError, Table, TableDef,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("quantile binning needs at least 2 bins, got {0}")]
    BadBins(usize),
    #[error("cannot fit quantiles: no non-missing values")]
    NoValues,
    #[error("column {table}.{column} has no non-missing values to discretize")]
    AllMissing { table: String, column: String },
    #[error("top-K retrieval needs K >= 1")]
    BadK,
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("table {0} has no primary key; retrieval links rows by primary key")]
    NoPrimaryKey(String),
    #[error(transparent)]
    Rdb(#[from] RdbError),
}

/// Quantile thresholds for one numeric column: `bins` nondecreasing cut
/// points where the k-th (1-based) is the smallest order statistic whose
/// cumulative fraction reaches k/bins. The last threshold is always the
/// column maximum, so no finite value escapes the top bin.
pub fn fit_quantiles(values: &[f64], bins: usize) -> Result<Vec<f64>, RetrievalError> {
    if bins < 2 {
        return Err(RetrievalError::BadBins(bins));
    }
    if values.is_empty() {
        return Err(RetrievalError::NoValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((1..=bins).map(|k| sorted[(n * k).div_ceil(bins) - 1]).collect())
}

/// Maps a number to its 1-based bin: the smallest k with v <= thresholds[k-1].
/// Values above the top threshold clamp into the last bin.
pub fn discretize(v: f64, thresholds: &[f64]) -> u32 {
    let k = thresholds.partition_point(|t| *t < v) as u32 + 1;
    k.min(thresholds.len() as u32)
}

/// A row's value in one feature column, reduced to a token that either
/// matches another row's token exactly or not at all: numeric values
/// match on the bin index, categorical and text values on the string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchKey {
    Bin(u32),
    Cat(String),
}

/// Fitted bin thresholds for the numeric feature columns of one table,
/// keyed by schema column index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Discretization {
    pub bins: usize,
    pub thresholds: BTreeMap<usize, Vec<f64>>,
}

/// Columns that take part in similarity matching: numeric, categorical, and
/// text columns. Keys and timestamps never participate (matching rows on an
/// identifier is degenerate) and the label column is excluded via `exclude`
/// so retrieval can never read the quantity being predicted.
pub fn feature_columns(def: &TableDef, exclude: Option<usize>) -> Vec<usize> {
    def.columns
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            Some(*i) != exclude
                && matches!(
                    c.kind,
                    ColumnKind::Numeric | ColumnKind::Categorical | ColumnKind::Text
                )
        })
        .map(|(i, _)| i)
        .collect()
}

/// A table takes part in retrieval when its rows are addressable (it has a
/// primary key) and at least two columns can participate in matching.
pub fn retrieval_eligible(def: &TableDef, exclude: Option<usize>) -> bool {
    def.pk_index().is_some() && feature_columns(def, exclude).len() >= 2
}

/// Fits quantile thresholds for every numeric column in `columns`. `scope`
/// limits which rows the thresholds see (None means all rows).
pub fn fit_discretization(
    db: &Database,
    table: usize,
    columns: &[usize],
    scope: Option<&[usize]>,
    bins: usize,
) -> Result<Discretization, RetrievalError> {
    let def = &db.schema.tables[table];
    let rows = &db.tables[table].rows;
    let mut thresholds = BTreeMap::new();
    for &col in columns {
        if def.columns[col].kind != ColumnKind::Numeric {
            continue;
        }
        let values: Vec<f64> = match scope {
            Some(ids) => ids.iter().filter_map(|&r| rows[r][col].as_number()).collect(),
            None => rows.iter().filter_map(|r| r[col].as_number()).collect(),
        };
        let t = fit_quantiles(&values, bins).map_err(|e| match e {
            RetrievalError::NoValues => RetrievalError::AllMissing {
                table: def.name.clone(),
                column: def.columns[col].name.clone(),
            },
            other => other,
        })?;
        thresholds.insert(col, t);
    }
    Ok(Discretization { bins, thresholds })
}

/// Tokenizes every row of a table, one entry per feature column. Missing
/// values become None and never match anything.
pub fn compute_match_keys(
    db: &Database,
    table: usize,
    columns: &[usize],
    disc: &Discretization,
) -> Vec<Vec<Option<MatchKey>>> {
    let def = &db.schema.tables[table];
    db.tables[table]
        .rows
        .iter()
        .map(|row| {
            columns
                .iter()
                .map(|&col| match def.columns[col].kind {
                    ColumnKind::Numeric => row[col]
                        .as_number()
                        .map(|v| MatchKey::Bin(discretize(v, &disc.thresholds[&col]))),
                    _ => row[col].as_str().map(|s| MatchKey::Cat(s.to_string())),
                })
                .collect()
        })
        .collect()
}

/// Per-column value frequencies over the rows the index was built from.
/// `total` is the number of scoped rows; a value absent from a map was never
/// seen in scope and scores with a zero count (i.e. maximal rarity).
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub total: usize,
    /// Schema column index behind each feature position.
    pub columns: Vec<usize>,
    /// counts[i] holds the value frequencies of feature position i.
    pub counts: Vec<BTreeMap<MatchKey, u64>>,
    /// Floor negative weights at zero. Off by default: matching on a value
    /// present in most rows genuinely argues against similarity.
    pub clamp_idf: bool,
}

/// Counts value occurrences per feature position. `scope` limits which rows
/// are counted (None means all); Missing values are never counted, so column
/// totals may fall short of `total`.
pub fn build_index(
    keys: &[Vec<Option<MatchKey>>],
    columns: &[usize],
    scope: Option<&[usize]>,
) -> RetrievalIndex {
    let mut counts = vec![BTreeMap::new(); columns.len()];
    let ids: Vec<usize> = match scope {
        Some(ids) => ids.to_vec(),
        None => (0..keys.len()).collect(),
    };
    for &r in &ids {
        for (i, key) in keys[r].iter().enumerate() {
            if let Some(k) = key {
                *counts[i].entry(k.clone()).or_insert(0) += 1;
            }
        }
    }
    RetrievalIndex { total: ids.len(), columns: columns.to_vec(), counts, clamp_idf: false }
}

impl RetrievalIndex {
    /// Inverse-frequency weight of matching on `key` at feature position
    /// `position`: ln((N - n + 0.5) / (n + 0.5)) where n is the value's
    /// occurrence count and N the scoped row total. Rare values weigh a lot;
    /// values in more than half the rows weigh negatively.
    pub fn weight(&self, position: usize, key: &MatchKey) -> f64 {
        let n = self.counts[position].get(key).copied().unwrap_or(0) as f64;
        let total = self.total as f64;
        let w = ((total - n + 0.5) / (n + 0.5)).ln();
        if self.clamp_idf {
            w.max(0.0)
        } else {
            w
        }
    }
}

/// Match-kernel score between two tokenized rows: the sum of inverse-
/// frequency weights over feature positions where both rows carry the same
/// non-missing token. Symmetric in its two row arguments.
pub fn similarity(
    index: &RetrievalIndex,
    query: &[Option<MatchKey>],
    row: &[Option<MatchKey>],
) -> f64 {
    let mut score = 0.0;
    for i in 0..index.columns.len() {
        if let (Some(q), Some(r)) = (&query[i], &row[i]) {
            if q == r {
                score += index.weight(i, q);
            }
        }
    }
    score
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    score: f64,
    id: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Higher score wins; on equal scores the lower row id wins.
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

/// Top-K retrieval for every row, returning (query, retrieved) row-id pairs
/// grouped by query in row order and by descending score within a query.
pub fn retrieve_topk(
    keys: &[Vec<Option<MatchKey>>],
    index: &RetrievalIndex,
    k: usize,
    cutoffs: Option<&[Option<i64>]>,
) -> Result<Vec<(usize, usize)>, RetrievalError> {
    Ok(retrieve_topk_with_scores(keys, index, k, cutoffs)?
        .into_iter()
        .map(|(q, r, _)| (q, r))
        .collect())
}

/// [`retrieve_topk`] with each pair's score attached. Candidates are all
/// other rows; with `cutoffs` given, only candidates strictly earlier than
/// the query participate, and a query without a timestamp retrieves nothing.
/// Rows that match the query nowhere still compete with a score of 0.0,
/// which can beat a negative-scoring match.
///
/// Scores accumulate per candidate in ascending feature-position order, so
/// they are bit-identical to a plain pairwise [`similarity`] sum.
pub fn retrieve_topk_with_scores(
    keys: &[Vec<Option<MatchKey>>],
    index: &RetrievalIndex,
    k: usize,
    cutoffs: Option<&[Option<i64>]>,
) -> Result<Vec<(usize, usize, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::BadK);
    }
    let n = keys.len();
    let positions = index.columns.len();

    // Dense per-position code tables so the hot loop touches integers, not
    // strings: code_of interns every token seen anywhere in the table,
    // postings lists the rows carrying each code, weights caches the IDF
    // term per code.
    let mut code_of: Vec<HashMap<MatchKey, u32>> = vec![HashMap::new(); positions];
    let mut codes: Vec<Vec<Option<u32>>> = vec![vec![None; n]; positions];
    for (row, key_row) in keys.iter().enumerate() {
        for i in 0..positions {
            if let Some(key) = &key_row[i] {
                let next = code_of[i].len() as u32;
                let c = *code_of[i].entry(key.clone()).or_insert(next);
                codes[i][row] = Some(c);
            }
        }
    }
    let mut postings: Vec<Vec<Vec<u32>>> =
        (0..positions).map(|i| vec![Vec::new(); code_of[i].len()]).collect();
    for i in 0..positions {
        for row in 0..n {
            if let Some(c) = codes[i][row] {
                postings[i][c as usize].push(row as u32);
            }
        }
    }
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); positions];
    for i in 0..positions {
        let mut by_code = vec![0.0; code_of[i].len()];
        for (key, &c) in &code_of[i] {
            by_code[c as usize] = index.weight(i, key);
        }
        weights[i] = by_code;
    }

    // Epoch-stamped dense accumulators avoid clearing N slots per query.
    let mut scores = vec![0.0f64; n];
    let mut stamp = vec![0u32; n];
    let mut epoch = 0u32;
    let mut out = Vec::new();
    for q in 0..n {
        let q_ts = match cutoffs {
            Some(ts) => match ts[q] {
                Some(t) => Some(t),
                None => continue, // no timestamp: no admissible past
            },
            None => None,
        };
        epoch += 1;
        for i in 0..positions {
            if let Some(c) = codes[i][q] {
                let w = weights[i][c as usize];
                for &cand in &postings[i][c as usize] {
                    let cand = cand as usize;
                    if stamp[cand] == epoch {
                        scores[cand] += w;
                    } else {
                        stamp[cand] = epoch;
                        scores[cand] = w;
                    }
                }
            }
        }
        let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for cand in 0..n {
            if cand == q {
                continue;
            }
            if let Some(t) = q_ts {
                match cutoffs.unwrap()[cand] {
                    Some(ct) if ct < t => {}
                    _ => continue,
                }
            }
            let score = if stamp[cand] == epoch { scores[cand] } else { 0.0 };
            let item = Ranked { score, id: cand };
            if heap.len() < k {
                heap.push(Reverse(item));
            } else if item > heap.peek().unwrap().0 {
                heap.pop();
                heap.push(Reverse(item));
            }
        }
        let mut picked: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
        picked.sort_by(|a, b| b.cmp(a));
        out.extend(picked.into_iter().map(|r| (q, r.id, r.score)));
    }
    Ok(out)
}

/// Top-K retrieval results for one table: (query, retrieved) pairs of row
/// indices into the source table. Registered into a database it becomes an
/// ordinary table named `<source>__retrieval` whose two columns are both
/// foreign keys into the source table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DummyTable {
    pub source_table: String,
    pub name: String,
    pub pairs: Vec<(usize, usize)>,
}

pub fn dummy_table_name(table: &str) -> String {
    format!("{table}__retrieval")
}

/// Everything fitted for one table's retrieval pass: the participating
/// columns, quantile thresholds, frequency index, and per-row match keys.
#[derive(Debug, Clone)]
pub struct TableRetrieval {
    pub table: usize,
    pub columns: Vec<usize>,
    pub discretization: Discretization,
    pub index: RetrievalIndex,
    pub keys: Vec<Vec<Option<MatchKey>>>,
}

impl TableRetrieval {
    /// Fits discretization and the frequency index. `scope` limits the rows
    /// the statistics see (e.g. the training split); match keys are computed
    /// for every row so any row can act as a query.
    pub fn fit(
        db: &Database,
        table: usize,
        exclude: Option<usize>,
        scope: Option<&[usize]>,
        bins: usize,
    ) -> Result<Self, RetrievalError> {
        let def = &db.schema.tables[table];
        if def.pk_index().is_none() {
            return Err(RetrievalError::NoPrimaryKey(def.name.clone()));
        }
        let columns = feature_columns(def, exclude);
        let discretization = fit_discretization(db, table, &columns, scope, bins)?;
        let keys = compute_match_keys(db, table, &columns, &discretization);
        let index = build_index(&keys, &columns, scope);
        Ok(TableRetrieval { table, columns, discretization, index, keys })
    }

    /// Runs top-K retrieval for every row. When `time_filtered` is set and
    /// the table carries a timestamp column, candidates are restricted to
    /// rows strictly earlier than the query.
    pub fn retrieve(
        &self,
        db: &Database,
        k: usize,
        time_filtered: bool,
    ) -> Result<DummyTable, RetrievalError> {
        let def = &db.schema.tables[self.table];
        let cutoffs: Option<Vec<Option<i64>>> = if time_filtered && def.timestamp_index().is_some() {
            Some(
                (0..db.tables[self.table].rows.len())
                    .map(|r| db.row_timestamp(self.table, r))
                    .collect(),
            )
        } else {
            None
        };
        let pairs = retrieve_topk(&self.keys, &self.index, k, cutoffs.as_deref())?;
        Ok(DummyTable {
            source_table: def.name.clone(),
            name: dummy_table_name(&def.name),
            pairs,
        })
    }
}

/// Appends dummy tables to a database as first-class tables: two foreign-key
/// columns pointing at the source table's primary key, no primary key or
/// timestamp of their own. The combined database is validated from scratch,
/// so referential integrity of the new tables is checked, not assumed.
pub fn register_dummy_tables(
    db: &Database,
    dummies: &[DummyTable],
) -> Result<Database, RetrievalError> {
    let mut schema = db.schema.clone();
    let mut tables: Vec<Table> = db.tables.clone();
    for d in dummies {
        let src = db
            .table_index(&d.source_table)
            .ok_or_else(|| RetrievalError::UnknownTable(d.source_table.clone()))?;
        let src_def = &db.schema.tables[src];
        let pk = src_def
            .pk_index()
            .ok_or_else(|| RetrievalError::NoPrimaryKey(src_def.name.clone()))?;
        let pk_name = &src_def.columns[pk].name;
        let fk = |name: &str| ColumnDef {
            name: name.into(),
            kind: ColumnKind::ForeignKey,
            fk_target: Some(FkTarget {
                table: d.source_table.clone(),
                column: pk_name.clone(),
            }),
        };
        schema.tables.push(TableDef {
            name: d.name.clone(),
            columns: vec![fk("query_id"), fk("retrieved_id")],
            timestamp_column: None,
        });
        let rows = d
            .pairs
            .iter()
            .map(|&(q, r)| {
                vec![
                    db.tables[src].rows[q][pk].clone(),
                    db.tables[src].rows[r][pk].clone(),
                ]
            })
            .collect();
        tables.push(Table { rows });
    }
    Ok(Database::new(schema, tables)?)
}

/// Writes a dummy table as CSV with header `query_id,retrieved_id`,
/// resolving row indices to the source table's primary keys.
pub fn write_dummy_csv(
    db: &Database,
    dummy: &DummyTable,
    path: &Path,
) -> Result<(), RetrievalError> {
    let src = db
        .table_index(&dummy.source_table)
        .ok_or_else(|| RetrievalError::UnknownTable(dummy.source_table.clone()))?;
    let mut w = csv::Writer::from_path(path).map_err(RdbError::from)?;
    w.write_record(["query_id", "retrieved_id"]).map_err(RdbError::from)?;
    for &(q, r) in &dummy.pairs {
        let qk = db.pk_value(src, q).expect("validated primary keys are strings");
        let rk = db.pk_value(src, r).expect("validated primary keys are strings");
        w.write_record([qk, rk]).map_err(RdbError::from)?;
    }
    w.flush().map_err(RdbError::from)?;
    Ok(())
}
