//! End-to-end predictive modeling over a relational database.
//!
//! `prepare` runs the offline stages for one configuration — similarity
//! retrieval materialized as link tables, path-based feature synthesis,
//! encoder fitting on the training period, graph construction — and `train`
//! fits the fused model on top: the encoded feature vector of each target
//! row and its propagated node embedding are concatenated and pushed through
//! an MLP head (sigmoid for binary targets, row softmax for multiclass,
//! identity for regression). `ablate` sweeps all eight module-toggle
//! combinations and `random_search` tunes hyperparameters, both fully
//! deterministic given their seeds.

use std::collections::HashMap;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{encode_rows, fit_encoders, ColumnEncoderSpec, EncodingConfig};
use crate::graph::{build_graph, sample_block, GraphMode, HeteroGraph, SampledBlock};
use crate::nn::tensor;
use crate::nn::{dropout_mask, NodeId, ParamId, Params, Tape, Tensor};
use crate::propagation::{MaskedFeatures, PropagationError, Propagator};
use crate::rdb::{temporal_split, ColumnKind, Database, RdbError, Split, Task, Value};
use crate::retrieval::{register_dummy_tables, DummyTable, RetrievalError, TableRetrieval};
use crate::synthesis::{
    find_synthesis_paths, synthesize_features, FeatureColumn, FeatureKind, FeatureSource,
    FeatureTable, FeatureValue,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("prediction needs the feature branch or the node branch; both are absent")]
    NoBranches,
    #[error(transparent)]
    Rdb(#[from] RdbError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("config file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One full pipeline configuration: which modules run, how the graph is
/// built, and every tunable knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrpConfig {
    /// Synthesize path features onto the target table.
    pub synthesis: bool,
    /// Materialize per-table similarity links as extra tables.
    pub retrieval: bool,
    /// Propagate node embeddings over the heterogeneous graph.
    pub propagation: bool,
    pub graph_mode: GraphMode,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Node embedding width (the propagated branch).
    pub embedding_size: usize,
    /// Hidden width of the prediction head.
    pub hidden_size: usize,
    /// Dropout rate on hidden activations, in [0, 1).
    pub dropout: f64,
    /// Total layers in the prediction head (the last one is linear).
    pub mlp_layers: usize,
    /// Message-passing depth.
    pub gnn_layers: usize,
    /// Neighbors sampled per node and edge type, per hop.
    pub fanout: usize,
    /// Similar rows retrieved per query row.
    pub retrieved_k: usize,
    /// Top categories a frequency histogram keeps when encoded.
    pub fa_m: usize,
    /// Quantile buckets for discretizing numerics before retrieval.
    pub bins: usize,
    /// Longest synthesis path, in foreign-key hops.
    pub max_hops: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
    /// Restrict every stage to information from each row's past.
    pub time_filter: bool,
    pub seed: u64,
}

impl Default for SrpConfig {
    fn default() -> Self {
        SrpConfig {
            synthesis: true,
            retrieval: true,
            propagation: true,
            graph_mode: GraphMode::RowToNode,
            learning_rate: 1e-3,
            batch_size: 256,
            embedding_size: 32,
            hidden_size: 64,
            dropout: 0.1,
            mlp_layers: 2,
            gnn_layers: 2,
            fanout: 10,
            retrieved_k: 10,
            fa_m: 2,
            bins: 10,
            max_hops: 2,
            epochs: 100,
            patience: 10,
            train_frac: 0.7,
            valid_frac: 0.15,
            time_filter: true,
            seed: 0,
        }
    }
}

impl SrpConfig {
    /// Short name of the enabled-module combination, e.g. `S+P` or `NONE`.
    pub fn combo(&self) -> String {
        let mut parts = Vec::new();
        if self.synthesis {
            parts.push("S");
        }
        if self.retrieval {
            parts.push("R");
        }
        if self.propagation {
            parts.push("P");
        }
        if parts.is_empty() {
            "NONE".into()
        } else {
            parts.join("+")
        }
    }

    pub fn with_toggles(&self, synthesis: bool, retrieval: bool, propagation: bool) -> SrpConfig {
        SrpConfig { synthesis, retrieval, propagation, ..self.clone() }
    }

    /// Structural sanity checks; an all-off toggle set is allowed (the
    /// ablation baseline trains on target-table features alone).
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.mlp_layers == 0 {
            return bad("the prediction head needs at least 1 layer");
        }
        if self.mlp_layers > 1 && self.hidden_size == 0 {
            return bad("hidden_size must be at least 1 for a multi-layer head");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.epochs == 0 || self.patience == 0 {
            return bad("epochs and patience must be at least 1");
        }
        if self.propagation && (self.gnn_layers == 0 || self.embedding_size == 0) {
            return bad("propagation needs gnn_layers >= 1 and embedding_size >= 1");
        }
        if self.retrieval && (self.retrieved_k == 0 || self.bins < 2) {
            return bad("retrieval needs retrieved_k >= 1 and bins >= 2");
        }
        if self.synthesis && self.fa_m == 0 {
            return bad("synthesis needs fa_m >= 1");
        }
        if !(self.train_frac > 0.0
            && self.valid_frac >= 0.0
            && self.train_frac + self.valid_frac < 1.0)
        {
            return bad("split fractions must satisfy 0 < train, 0 <= valid, train + valid < 1");
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<SrpConfig, ModelError> {
    Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
}

pub fn save_config(path: &Path, config: &SrpConfig) -> Result<(), ModelError> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, config)?;
    writeln!(file)?;
    Ok(())
}

/// Hyperparameter ranges for `random_search`. Scalar pairs are inclusive
/// bounds (learning rate is drawn log-uniformly, dropout's upper end is
/// exclusive unless the range is a single point); list fields are drawn
/// uniformly from the listed choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchGrid {
    pub learning_rate: (f64, f64),
    pub batch_size: (usize, usize),
    pub embedding_size: (usize, usize),
    pub hidden_size: (usize, usize),
    pub dropout: (f64, f64),
    pub mlp_layers: (usize, usize),
    pub gnn_layers: Vec<usize>,
    pub fanout: Vec<usize>,
    pub retrieved_k: (usize, usize),
    pub graph_modes: Vec<GraphMode>,
}

impl Default for SearchGrid {
    /// The published search ranges this project tunes within.
    fn default() -> Self {
        SearchGrid {
            learning_rate: (1e-4, 1e-2),
            batch_size: (128, 4096),
            embedding_size: (8, 256),
            hidden_size: (16, 256),
            dropout: (0.0, 1.0),
            mlp_layers: (1, 8),
            gnn_layers: vec![1, 2, 3],
            fanout: vec![1, 5, 10, 20],
            retrieved_k: (1, 10),
            graph_modes: vec![GraphMode::RowToNode, GraphMode::RowToNodeOrEdge],
        }
    }
}

impl SearchGrid {
    /// A grid is usable when every range is ordered and stays within the
    /// published bounds.
    pub fn validate(&self) -> Result<(), ModelError> {
        let full = SearchGrid::default();
        fn within_f(name: &str, r: (f64, f64), full: (f64, f64)) -> Result<(), ModelError> {
            if r.0 <= r.1 && r.0 >= full.0 && r.1 <= full.1 {
                Ok(())
            } else {
                Err(ModelError::Config(format!(
                    "grid range for {name} must lie within [{}, {}]",
                    full.0, full.1
                )))
            }
        }
        fn within_u(name: &str, r: (usize, usize), full: (usize, usize)) -> Result<(), ModelError> {
            if r.0 <= r.1 && r.0 >= full.0 && r.1 <= full.1 {
                Ok(())
            } else {
                Err(ModelError::Config(format!(
                    "grid range for {name} must lie within [{}, {}]",
                    full.0, full.1
                )))
            }
        }
        within_f("learning_rate", self.learning_rate, full.learning_rate)?;
        within_u("batch_size", self.batch_size, full.batch_size)?;
        within_u("embedding_size", self.embedding_size, full.embedding_size)?;
        within_u("hidden_size", self.hidden_size, full.hidden_size)?;
        within_f("dropout", self.dropout, full.dropout)?;
        within_u("mlp_layers", self.mlp_layers, full.mlp_layers)?;
        within_u("retrieved_k", self.retrieved_k, full.retrieved_k)?;
        for (name, choices, allowed) in [
            ("gnn_layers", &self.gnn_layers, &full.gnn_layers),
            ("fanout", &self.fanout, &full.fanout),
        ] {
            if choices.is_empty() || choices.iter().any(|c| !allowed.contains(c)) {
                return Err(ModelError::Config(format!(
                    "grid choices for {name} must be a non-empty subset of {allowed:?}"
                )));
            }
        }
        if self.graph_modes.is_empty() {
            return Err(ModelError::Config("grid needs at least one graph mode".into()));
        }
        Ok(())
    }

    /// Draws one configuration; toggles, split fractions, epoch budget, and
    /// the training seed are inherited from `base`.
    pub fn sample(&self, base: &SrpConfig, rng: &mut ChaCha8Rng) -> SrpConfig {
        fn uniform(range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
            if range.0 == range.1 {
                range.0
            } else {
                rng.gen_range(range.0..range.1)
            }
        }
        let mut c = base.clone();
        c.learning_rate = if self.learning_rate.0 == self.learning_rate.1 {
            self.learning_rate.0
        } else {
            uniform((self.learning_rate.0.ln(), self.learning_rate.1.ln()), rng).exp()
        };
        c.batch_size = rng.gen_range(self.batch_size.0..=self.batch_size.1);
        c.embedding_size = rng.gen_range(self.embedding_size.0..=self.embedding_size.1);
        c.hidden_size = rng.gen_range(self.hidden_size.0..=self.hidden_size.1);
        c.dropout = uniform(self.dropout, rng);
        c.mlp_layers = rng.gen_range(self.mlp_layers.0..=self.mlp_layers.1);
        c.gnn_layers = self.gnn_layers[rng.gen_range(0..self.gnn_layers.len())];
        c.fanout = self.fanout[rng.gen_range(0..self.fanout.len())];
        c.retrieved_k = rng.gen_range(self.retrieved_k.0..=self.retrieved_k.1);
        c.graph_mode = self.graph_modes[rng.gen_range(0..self.graph_modes.len())];
        c
    }
}

pub fn load_grid(path: &Path) -> Result<SearchGrid, ModelError> {
    Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
}

pub fn save_grid(path: &Path, grid: &SearchGrid) -> Result<(), ModelError> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, grid)?;
    writeln!(file)?;
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("AUC undefined: the split contains a single class")]
    SingleClass,
    #[error("empty evaluation split")]
    Empty,
}

/// Area under the ROC curve via the rank statistic; tied scores share the
/// average of their ranks, so equal scores on a balanced split give 0.5.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j all collapse to their average.
        let rank = (i + 1 + j) as f64 / 2.0;
        positive_rank_sum += rank * order[i..j].iter().filter(|&&x| labels[x]).count() as f64;
        i = j;
    }
    let pos = n_pos as f64;
    Ok((positive_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * n_neg as f64))
}

/// Fraction of predictions matching their labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    assert_eq!(predicted.len(), labels.len(), "one label per prediction");
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Index of the row maximum; ties resolve to the smallest index.
pub fn argmax_row(t: &Tensor, row: usize) -> usize {
    let r = t.row(row);
    let mut best = 0;
    for (i, &v) in r.iter().enumerate().skip(1) {
        if v > r[best] {
            best = i;
        }
    }
    best
}

/// The metric each task optimizes and reports first.
pub fn primary_metric_name(task: Task) -> &'static str {
    match task {
        Task::Binary => "auc",
        Task::Multiclass => "acc",
        Task::Regression => "mse",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub combo: String,
    pub seed: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "combo,seed,split,metric,value")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.combo, r.seed, r.split, r.metric, r.value)?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("reports are ASCII")
    }

    /// Mean of all matching values, if any.
    pub fn mean(&self, combo: &str, split: &str, metric: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.combo == combo && r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

/// Target labels in trainable form: class indices (as exact floats) for
/// classification against the sorted class list, raw values for regression.
/// `None` marks rows without a usable label.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub classes: Vec<String>,
    pub by_row: Vec<Option<f64>>,
}

fn label_string(v: &Value) -> Option<String> {
    match v {
        Value::Missing => None,
        Value::Category(s) | Value::Text(s) => Some(s.clone()),
        Value::Number(x) => Some(format!("{x}")),
        Value::Timestamp(t) => Some(format!("{t}")),
    }
}

fn extract_labels(db: &Database, target: usize, label_col: usize) -> Result<Labels, ModelError> {
    let rows = &db.tables[target].rows;
    match db.schema.target.task {
        Task::Binary | Task::Multiclass => {
            let mut classes: Vec<String> =
                rows.iter().filter_map(|r| label_string(&r[label_col])).collect();
            classes.sort();
            classes.dedup();
            if db.schema.target.task == Task::Binary && classes.len() != 2 {
                return Err(ModelError::Config(format!(
                    "a binary target needs exactly 2 label values, found {}",
                    classes.len()
                )));
            }
            if classes.len() < 2 {
                return Err(ModelError::Config(
                    "a classification target needs at least 2 label values".into(),
                ));
            }
            let lookup: HashMap<&str, usize> =
                classes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let by_row = rows
                .iter()
                .map(|r| label_string(&r[label_col]).map(|s| lookup[s.as_str()] as f64))
                .collect();
            Ok(Labels { classes, by_row })
        }
        Task::Regression => Ok(Labels {
            classes: Vec::new(),
            by_row: rows.iter().map(|r| r[label_col].as_number()).collect(),
        }),
    }
}

/// Everything the offline stages produce for one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// The database with any retrieval link tables registered.
    pub db: Database,
    pub split: Split,
    /// Earliest non-training timestamp; statistics only see rows before it.
    pub boundary: Option<i64>,
    pub dummies: Vec<DummyTable>,
    pub feature_table: FeatureTable,
    pub feature_specs: Vec<ColumnEncoderSpec>,
    /// Encoded feature matrix, one row per target row (the unary branch).
    pub features: Tensor,
    pub graph: Option<HeteroGraph>,
    /// Target node features with the label contribution blanked, substituted
    /// for each seed's own occurrences during propagation.
    pub masked_features: Option<Tensor>,
    pub target_type: Option<usize>,
    pub labels: Labels,
}

impl Prepared {
    pub fn masked_view(&self) -> MaskedFeatures<'_> {
        match (self.target_type, &self.masked_features) {
            (Some(t), Some(m)) => Some((t, m)),
            _ => None,
        }
    }

    pub fn task(&self) -> Task {
        self.db.schema.target.task
    }
}

fn plain_feature_kind(kind: ColumnKind) -> Option<FeatureKind> {
    match kind {
        ColumnKind::Numeric => Some(FeatureKind::Numeric),
        ColumnKind::Categorical => Some(FeatureKind::Categorical),
        ColumnKind::Text => Some(FeatureKind::Text),
        _ => None,
    }
}

/// Feature-bearing columns of one table (keys and timestamps never qualify).
fn plain_feature_columns(db: &Database, table: usize) -> Vec<usize> {
    db.schema.tables[table]
        .columns
        .iter()
        .enumerate()
        .filter(|(_, cd)| plain_feature_kind(cd.kind).is_some())
        .map(|(ci, _)| ci)
        .collect()
}

/// A table's rows as a feature table of its own columns; `mask` blanks one
/// column to Missing everywhere (used to hide the target label).
fn table_feature_view(db: &Database, table: usize, cols: &[usize], mask: Option<usize>) -> FeatureTable {
    let td = &db.schema.tables[table];
    let columns = cols
        .iter()
        .map(|&ci| FeatureColumn {
            name: td.columns[ci].name.clone(),
            kind: plain_feature_kind(td.columns[ci].kind).expect("filtered to feature kinds"),
            source: FeatureSource::Original { column: ci },
        })
        .collect();
    let rows = db.tables[table]
        .rows
        .iter()
        .map(|row| {
            cols.iter()
                .map(|&ci| {
                    if mask == Some(ci) {
                        FeatureValue::Plain(Value::Missing)
                    } else {
                        FeatureValue::Plain(row[ci].clone())
                    }
                })
                .collect()
        })
        .collect();
    FeatureTable { target_table: table, columns, rows }
}

/// Rows of `table` known before `boundary`; `None` means unrestricted
/// (atemporal table or no boundary in force).
fn visible_scope(db: &Database, table: usize, boundary: Option<i64>) -> Option<Vec<usize>> {
    let b = boundary?;
    db.schema.tables[table].timestamp_index()?;
    Some(
        (0..db.tables[table].len())
            .filter(|&r| matches!(db.row_timestamp(table, r), Some(ts) if ts < b))
            .collect(),
    )
}

fn scope_or_all(db: &Database, table: usize, boundary: Option<i64>) -> Vec<usize> {
    visible_scope(db, table, boundary).unwrap_or_else(|| (0..db.tables[table].len()).collect())
}

/// Boundary timestamp below which offline statistics may look, or `None`
/// when the temporal filter is off (or the target is atemporal).
fn stats_cutoff(db: &Database, config: &SrpConfig) -> Result<Option<i64>, ModelError> {
    if !config.time_filter {
        return Ok(None);
    }
    let target = db.schema.target_table_index();
    let split = temporal_split(db, config.train_frac, config.valid_frac)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(ModelError::Config(
            "not enough labeled rows to form train and test splits".into(),
        ));
    }
    Ok(split
        .valid
        .first()
        .or(split.test.first())
        .map(|&r| db.row_timestamp(target, r).unwrap_or(i64::MIN)))
}

/// Offline retrieval stage: fits per-table similarity statistics — on the
/// training period when the temporal filter is in force — and materializes
/// one dummy link table per eligible table. Empty when retrieval is
/// toggled off.
pub fn offline_dummies(db: &Database, config: &SrpConfig) -> Result<Vec<DummyTable>, ModelError> {
    config.validate()?;
    if !config.retrieval {
        return Ok(Vec::new());
    }
    let target = db.schema.target_table_index();
    let label_col = db.schema.tables[target]
        .column_index(&db.schema.target.column)
        .expect("validated schema");
    let stats_boundary = stats_cutoff(db, config)?;
    let mut dummies = Vec::new();
    for t in 0..db.tables.len() {
        if db.schema.tables[t].pk_index().is_none() {
            continue; // links reference rows by primary key
        }
        let exclude = (t == target).then_some(label_col);
        let scope = visible_scope(db, t, stats_boundary);
        let fitted = match TableRetrieval::fit(db, t, exclude, scope.as_deref(), config.bins) {
            Ok(f) => f,
            // A table whose training period holds no usable values has no
            // statistics to retrieve with; skip it.
            Err(RetrievalError::NoValues | RetrievalError::AllMissing { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        if fitted.columns.len() < 2 {
            continue; // single-column similarity is just equality
        }
        dummies.push(fitted.retrieve(db, config.retrieved_k, config.time_filter)?);
    }
    Ok(dummies)
}

/// Offline synthesis stage over the (possibly dummy-augmented) database:
/// the target table's original feature columns plus one column per
/// synthesis path, or originals only when synthesis is toggled off.
pub fn offline_features(db_aug: &Database, config: &SrpConfig) -> FeatureTable {
    let paths = if config.synthesis {
        find_synthesis_paths(db_aug, config.max_hops)
    } else {
        Vec::new()
    };
    synthesize_features(db_aug, &paths, config.time_filter)
}

/// Runs every offline stage the configuration asks for.
pub fn prepare(db: &Database, config: &SrpConfig) -> Result<Prepared, ModelError> {
    config.validate()?;
    let target = db.schema.target_table_index();
    let label_col = db.schema.tables[target]
        .column_index(&db.schema.target.column)
        .expect("validated schema");
    let split = temporal_split(db, config.train_frac, config.valid_frac)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(ModelError::Config(
            "not enough labeled rows to form train and test splits".into(),
        ));
    }
    let boundary = split
        .valid
        .first()
        .or(split.test.first())
        .map(|&r| db.row_timestamp(target, r).unwrap_or(i64::MIN));
    // Statistics (retrieval index, quantiles, encoder vocabularies) fit on
    // rows from the training period only — unless the leakage filter is
    // deliberately disabled, which is what the negative controls exercise.
    let stats_boundary = if config.time_filter { boundary } else { None };

    let dummies = offline_dummies(db, config)?;
    let db_aug = if dummies.is_empty() {
        db.clone()
    } else {
        register_dummy_tables(db, &dummies)?
    };

    let feature_table = offline_features(&db_aug, config);

    let enc = EncodingConfig { fa_m: config.fa_m, ..EncodingConfig::default() };
    let feature_specs = fit_encoders(&feature_table, &scope_or_all(db, target, stats_boundary), &enc);
    let features = encode_rows(&feature_table, &feature_specs, None);

    let labels = extract_labels(db, target, label_col)?;

    let (graph, masked_features, target_type) = if config.propagation {
        let mut g = build_graph(&db_aug, config.graph_mode);
        let Some(tt) = g.type_of_table[target] else {
            return Err(ModelError::Config(
                "the target table collapses to edges under row_to_node_or_edge; use row_to_node"
                    .into(),
            ));
        };
        let mut masked = None;
        for nt in 0..g.node_types.len() {
            let t = g.node_types[nt].table;
            let cols = plain_feature_columns(&db_aug, t);
            if cols.is_empty() {
                continue; // featureless types learn a constant embedding
            }
            let view = table_feature_view(&db_aug, t, &cols, None);
            let specs = fit_encoders(&view, &scope_or_all(&db_aug, t, stats_boundary), &enc);
            g.attach_features(nt, encode_rows(&view, &specs, None));
            if t == target {
                let hidden = table_feature_view(&db_aug, t, &cols, Some(label_col));
                masked = Some(encode_rows(&hidden, &specs, None));
            }
        }
        (Some(g), masked, Some(tt))
    } else {
        (None, None, None)
    };

    Ok(Prepared {
        db: db_aug,
        split,
        boundary,
        dummies,
        feature_table,
        feature_specs,
        features,
        graph,
        masked_features,
        target_type,
        labels,
    })
}

/// The trainable pieces: propagation network (when enabled) plus the fused
/// prediction head.
#[derive(Debug)]
pub struct SrpModel {
    pub params: Params,
    pub propagator: Option<Propagator>,
    /// (weight, bias) per head layer; all but the last apply relu.
    pub head: Vec<(ParamId, ParamId)>,
    pub out_dim: usize,
}

impl SrpModel {
    pub fn init(
        config: &SrpConfig,
        prepared: &Prepared,
        rng: &mut ChaCha8Rng,
    ) -> Result<SrpModel, ModelError> {
        let mut params = Params::new();
        let propagator = prepared.graph.as_ref().map(|g| {
            Propagator::init(&mut params, rng, g, config.embedding_size, config.gnn_layers, config.dropout)
        });
        let fused = prepared.features.cols + propagator.as_ref().map_or(0, |_| config.embedding_size);
        if fused == 0 {
            return Err(ModelError::NoBranches);
        }
        let out_dim = match prepared.task() {
            Task::Binary | Task::Regression => 1,
            Task::Multiclass => prepared.labels.classes.len(),
        };
        let mut head = Vec::with_capacity(config.mlp_layers);
        let mut width = fused;
        for l in 0..config.mlp_layers {
            let next = if l + 1 == config.mlp_layers { out_dim } else { config.hidden_size };
            let w = params.glorot_uniform(&format!("head.l{l}.w"), width, next, rng);
            let b = params.zeros(&format!("head.l{l}.b"), 1, next);
            head.push((w, b));
            width = next;
        }
        Ok(SrpModel { params, propagator, head, out_dim })
    }

    /// Replaces the parameter values with a checkpoint saved from a model of
    /// the same architecture.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), ModelError> {
        let loaded = Params::load(path)?;
        if loaded.len() != self.params.len() {
            return Err(ModelError::Config(format!(
                "checkpoint holds {} parameters, the model {}",
                loaded.len(),
                self.params.len()
            )));
        }
        for id in self.params.ids() {
            if loaded.name(id) != self.params.name(id)
                || loaded.value(id).shape() != self.params.value(id).shape()
            {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter {} does not match the model architecture",
                    loaded.name(id)
                )));
            }
        }
        self.params = loaded;
        Ok(())
    }

    /// Task-shaped outputs for the given target rows — a probability column
    /// for binary, class probabilities for multiclass, raw values for
    /// regression — via the tape-free inference path.
    pub fn predict(
        &self,
        prepared: &Prepared,
        config: &SrpConfig,
        rows: &[usize],
    ) -> Result<Tensor, ModelError> {
        let (batches, blocks) = batch_plan(prepared, config, rows, None);
        predict_batches(self, prepared, &batches, &blocks)
    }
}

/// Samples the message-passing block for one batch of target rows, if a
/// graph is in play.
fn block_for(prepared: &Prepared, config: &SrpConfig, rows: &[usize]) -> Option<SampledBlock> {
    let g = prepared.graph.as_ref()?;
    let seeds: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    Some(sample_block(
        g,
        prepared.target_type.expect("a graph implies a target node type"),
        &seeds,
        &vec![config.fanout; config.gnn_layers],
        config.seed,
        config.time_filter,
    ))
}

type BatchPlan = (Vec<Vec<usize>>, Vec<Option<SampledBlock>>);

/// Splits rows into batches (shuffling first when an RNG is given) and
/// samples each batch's block once.
fn batch_plan(
    prepared: &Prepared,
    config: &SrpConfig,
    rows: &[usize],
    shuffle: Option<&mut ChaCha8Rng>,
) -> BatchPlan {
    let mut rows = rows.to_vec();
    if let Some(rng) = shuffle {
        rows.shuffle(rng);
    }
    let batches: Vec<Vec<usize>> = rows.chunks(config.batch_size).map(<[usize]>::to_vec).collect();
    let blocks = batches.iter().map(|b| block_for(prepared, config, b)).collect();
    (batches, blocks)
}

/// Differentiable forward pass producing head outputs (pre-activation) for
/// one batch. Taking the parameters explicitly keeps the same code usable
/// under finite-difference probing.
#[allow(clippy::too_many_arguments)]
pub fn model_logits(
    tape: &mut Tape,
    params: &Params,
    propagator: Option<&Propagator>,
    head: &[(ParamId, ParamId)],
    prepared: &Prepared,
    config: &SrpConfig,
    rows: &[usize],
    block: Option<&SampledBlock>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, ModelError> {
    let unary = (prepared.features.cols > 0)
        .then(|| tape.constant(tensor::gather_rows(&prepared.features, rows)));
    let node = match (propagator, block, &prepared.graph) {
        (Some(p), Some(b), Some(g)) => Some(match dropout_rng.as_deref_mut() {
            Some(rng) if config.dropout > 0.0 => {
                p.forward_with_dropout(tape, params, g, b, prepared.masked_view(), rng)?
            }
            _ => p.forward(tape, params, g, b, prepared.masked_view())?,
        }),
        _ => None,
    };
    let mut h = match (unary, node) {
        (Some(u), Some(n)) => tape.concat(u, n),
        (Some(u), None) => u,
        (None, Some(n)) => n,
        (None, None) => return Err(ModelError::NoBranches),
    };
    for (l, &(w, b)) in head.iter().enumerate() {
        let wid = tape.param(params, w);
        let bid = tape.param(params, b);
        h = tape.linear(h, wid, bid);
        if l + 1 < head.len() {
            h = tape.relu(h);
            if let Some(rng) = dropout_rng.as_deref_mut() {
                if config.dropout > 0.0 {
                    let width = params.value(b).cols;
                    h = tape.mul_const(h, dropout_mask(rows.len(), width, config.dropout, rng));
                }
            }
        }
    }
    Ok(h)
}

/// `model_logits` plus the task's loss over the batch labels.
#[allow(clippy::too_many_arguments)]
pub fn model_loss(
    tape: &mut Tape,
    params: &Params,
    propagator: Option<&Propagator>,
    head: &[(ParamId, ParamId)],
    prepared: &Prepared,
    config: &SrpConfig,
    rows: &[usize],
    block: Option<&SampledBlock>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, ModelError> {
    let logits = model_logits(tape, params, propagator, head, prepared, config, rows, block, dropout_rng)?;
    let label = |r: usize| prepared.labels.by_row[r].expect("batches draw from labeled splits");
    Ok(match prepared.task() {
        Task::Binary => {
            let y: Vec<f64> = rows.iter().map(|&r| label(r)).collect();
            tape.bce_logits(logits, &y)
        }
        Task::Multiclass => {
            let y: Vec<usize> = rows.iter().map(|&r| label(r) as usize).collect();
            tape.softmax_cross_entropy(logits, &y)
        }
        Task::Regression => {
            let y = Tensor::from_vec(rows.len(), 1, rows.iter().map(|&r| label(r)).collect());
            tape.mse(logits, y)
        }
    })
}

/// Tape-free twin of `model_logits`, bit-identical op for op.
fn plain_logits(
    params: &Params,
    propagator: Option<&Propagator>,
    head: &[(ParamId, ParamId)],
    prepared: &Prepared,
    rows: &[usize],
    block: Option<&SampledBlock>,
) -> Result<Tensor, ModelError> {
    let unary = (prepared.features.cols > 0).then(|| tensor::gather_rows(&prepared.features, rows));
    let node = match (propagator, block, &prepared.graph) {
        (Some(p), Some(b), Some(g)) => Some(p.infer(params, g, b, prepared.masked_view())?),
        _ => None,
    };
    let mut h = match (unary, node) {
        (Some(u), Some(n)) => tensor::concat_cols(&u, &n),
        (Some(u), None) => u,
        (None, Some(n)) => n,
        (None, None) => return Err(ModelError::NoBranches),
    };
    for (l, &(w, b)) in head.iter().enumerate() {
        h = tensor::add(&tensor::matmul(&h, params.value(w)), params.value(b));
        if l + 1 < head.len() {
            h = tensor::relu(&h);
        }
    }
    Ok(h)
}

fn output_activation(task: Task, logits: Tensor) -> Tensor {
    match task {
        Task::Binary => tensor::sigmoid(&logits),
        Task::Multiclass => tensor::softmax_rows(&logits),
        Task::Regression => logits,
    }
}

fn predict_batches(
    model: &SrpModel,
    prepared: &Prepared,
    batches: &[Vec<usize>],
    blocks: &[Option<SampledBlock>],
) -> Result<Tensor, ModelError> {
    let total: usize = batches.iter().map(Vec::len).sum();
    let mut out = Tensor::zeros(total, model.out_dim);
    let mut at = 0;
    for (batch, block) in batches.iter().zip(blocks) {
        let logits = plain_logits(
            &model.params,
            model.propagator.as_ref(),
            &model.head,
            prepared,
            batch,
            block.as_ref(),
        )?;
        let scored = output_activation(prepared.task(), logits);
        for i in 0..batch.len() {
            out.row_mut(at + i).copy_from_slice(scored.row(i));
        }
        at += batch.len();
    }
    Ok(out)
}

/// The score early stopping maximizes: AUC, accuracy, or negated MSE.
fn primary_score(
    task: Task,
    outputs: &Tensor,
    rows: &[usize],
    labels: &Labels,
) -> Result<f64, ModelError> {
    let label = |r: usize| labels.by_row[r].expect("scored splits are labeled");
    match task {
        Task::Binary => {
            let scores: Vec<f64> = (0..rows.len()).map(|i| outputs.get(i, 0)).collect();
            let truth: Vec<bool> = rows.iter().map(|&r| label(r) == 1.0).collect();
            Ok(auc(&scores, &truth)?)
        }
        Task::Multiclass => {
            let predicted: Vec<usize> = (0..rows.len()).map(|i| argmax_row(outputs, i)).collect();
            let truth: Vec<usize> = rows.iter().map(|&r| label(r) as usize).collect();
            Ok(accuracy(&predicted, &truth)?)
        }
        Task::Regression => {
            if rows.is_empty() {
                return Err(EvalError::Empty.into());
            }
            let mse = rows
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let d = outputs.get(i, 0) - label(r);
                    d * d
                })
                .sum::<f64>()
                / rows.len() as f64;
            Ok(-mse)
        }
    }
}

/// Metric rows for one split of a trained model. Errors if AUC is requested
/// on a single-class split.
pub fn evaluate(
    model: &SrpModel,
    prepared: &Prepared,
    config: &SrpConfig,
    split_name: &str,
    rows: &[usize],
) -> Result<Vec<EvalRow>, ModelError> {
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let outputs = model.predict(prepared, config, rows)?;
    let label = |r: usize| prepared.labels.by_row[r].expect("scored splits are labeled");
    let mk = |metric: &str, value: f64| EvalRow {
        combo: config.combo(),
        seed: config.seed,
        split: split_name.to_string(),
        metric: metric.to_string(),
        value,
    };
    Ok(match prepared.task() {
        Task::Binary => {
            let scores: Vec<f64> = (0..rows.len()).map(|i| outputs.get(i, 0)).collect();
            let truth: Vec<bool> = rows.iter().map(|&r| label(r) == 1.0).collect();
            let predicted: Vec<usize> = scores.iter().map(|&s| (s > 0.5) as usize).collect();
            let classes: Vec<usize> = truth.iter().map(|&b| b as usize).collect();
            vec![
                mk("auc", auc(&scores, &truth)?),
                mk("acc", accuracy(&predicted, &classes)?),
            ]
        }
        Task::Multiclass => {
            let predicted: Vec<usize> = (0..rows.len()).map(|i| argmax_row(&outputs, i)).collect();
            let truth: Vec<usize> = rows.iter().map(|&r| label(r) as usize).collect();
            vec![mk("acc", accuracy(&predicted, &truth)?)]
        }
        Task::Regression => {
            let mse = -primary_score(Task::Regression, &outputs, rows, &prepared.labels)?;
            vec![mk("mse", mse)]
        }
    })
}

/// A finished training run: the model with its best-validation parameters
/// restored, the prepared pipeline state, metrics on all three splits, and
/// the per-epoch validation trace.
#[derive(Debug)]
pub struct TrainedRun {
    pub model: SrpModel,
    pub prepared: Prepared,
    pub report: EvalReport,
    pub best_epoch: usize,
    /// Early-stopping score after each epoch (higher is better).
    pub history: Vec<f64>,
}

/// Cheap integer mix for carving independent RNG streams out of one seed.
pub(crate) fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut x = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(c.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Offline preparation plus `train_prepared`.
pub fn train(db: &Database, config: &SrpConfig) -> Result<TrainedRun, ModelError> {
    train_prepared(prepare(db, config)?, config)
}

/// Mini-batch Adam with early stopping on the validation score (training
/// score when the validation split is empty); the best epoch's parameters
/// are restored before the final evaluation.
pub fn train_prepared(prepared: Prepared, config: &SrpConfig) -> Result<TrainedRun, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = SrpModel::init(config, &prepared, &mut rng)?;
    let task = prepared.task();

    // Batches and their sampled blocks are fixed for the whole run; batch
    // membership is shuffled once so chronological label drift does not
    // align with batch boundaries.
    let (train_batches, train_blocks) =
        batch_plan(&prepared, config, &prepared.split.train, Some(&mut rng));
    let stop_rows: Vec<usize> = if prepared.split.valid.is_empty() {
        prepared.split.train.clone()
    } else {
        prepared.split.valid.clone()
    };
    let (stop_batches, stop_blocks) = batch_plan(&prepared, config, &stop_rows, None);

    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.params.snapshot();
    let mut stale = 0;
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        for (bi, batch) in train_batches.iter().enumerate() {
            let mut drop = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64, bi as u64));
            let mut tape = Tape::new();
            let loss = model_loss(
                &mut tape,
                &model.params,
                model.propagator.as_ref(),
                &model.head,
                &prepared,
                config,
                batch,
                train_blocks[bi].as_ref(),
                Some(&mut drop),
            )?;
            if !tape.value(loss).item().is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            tape.backward(loss, &mut model.params);
            model.params.adam_step(config.learning_rate);
        }
        let outputs = predict_batches(&model, &prepared, &stop_batches, &stop_blocks)?;
        let score = primary_score(task, &outputs, &stop_rows, &prepared.labels)?;
        history.push(score);
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_params = model.params.snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.params.restore(&best_params);

    let mut report = EvalReport::default();
    for (name, rows) in [
        ("train", &prepared.split.train),
        ("valid", &prepared.split.valid),
        ("test", &prepared.split.test),
    ] {
        report.rows.extend(evaluate(&model, &prepared, config, name, rows)?);
    }
    Ok(TrainedRun { model, prepared, report, best_epoch, history })
}

/// The eight module-toggle combinations, all-off first, all-on last.
pub const TOGGLE_COMBOS: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, true, false),
    (true, false, true),
    (false, true, true),
    (true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub combo: String,
    /// Mean test value of the primary metric over the seeds.
    pub mean: f64,
    /// Mean of the combination's per-seed rank (1 = best that seed).
    pub average_rank: f64,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub metric: String,
    pub summary: Vec<AblationRow>,
    /// Every per-seed, per-split metric row from the underlying runs.
    pub report: EvalReport,
}

impl AblationResult {
    pub fn write_summary_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "combo,mean_test_{},average_rank", self.metric)?;
        for row in &self.summary {
            writeln!(w, "{},{},{}", row.combo, row.mean, row.average_rank)?;
        }
        Ok(())
    }
}

/// Ranks with ties averaged; rank 1 is the best score.
fn average_ranks(scores: &[f64], higher_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        if higher_better {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        }
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Trains every toggle combination over the given seeds (offline stages run
/// once per combination) and summarizes mean test metric and average rank.
pub fn ablate(db: &Database, base: &SrpConfig, seeds: &[u64]) -> Result<AblationResult, ModelError> {
    if seeds.is_empty() {
        return Err(ModelError::Config("ablation needs at least one seed".into()));
    }
    let metric = primary_metric_name(db.schema.target.task);
    let mut report = EvalReport::default();
    let mut scores = vec![vec![0.0; seeds.len()]; TOGGLE_COMBOS.len()];
    for (ci, &(s, r, p)) in TOGGLE_COMBOS.iter().enumerate() {
        let combo_config = base.with_toggles(s, r, p);
        let prepared = prepare(db, &combo_config)?;
        for (si, &seed) in seeds.iter().enumerate() {
            let run_config = SrpConfig { seed, ..combo_config.clone() };
            let run = train_prepared(prepared.clone(), &run_config)?;
            scores[ci][si] = run
                .report
                .rows
                .iter()
                .find(|row| row.split == "test" && row.metric == metric)
                .expect("test split is never empty")
                .value;
            report.rows.extend(run.report.rows);
        }
    }
    let higher_better = metric != "mse";
    let mut rank_sums = vec![0.0; TOGGLE_COMBOS.len()];
    for si in 0..seeds.len() {
        let per_combo: Vec<f64> = scores.iter().map(|s| s[si]).collect();
        for (ci, rank) in average_ranks(&per_combo, higher_better).into_iter().enumerate() {
            rank_sums[ci] += rank;
        }
    }
    let summary = TOGGLE_COMBOS
        .iter()
        .enumerate()
        .map(|(ci, &(s, r, p))| AblationRow {
            combo: base.with_toggles(s, r, p).combo(),
            mean: scores[ci].iter().sum::<f64>() / seeds.len() as f64,
            average_rank: rank_sums[ci] / seeds.len() as f64,
        })
        .collect();
    Ok(AblationResult { metric: metric.into(), summary, report })
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub config: SrpConfig,
    /// Best validation score the trial reached (its selection key).
    pub valid_score: f64,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: SrpConfig,
    pub best_score: f64,
    pub metric: String,
    pub trials: Vec<TrialResult>,
}

impl SearchOutcome {
    pub fn write_trials_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(
            w,
            "trial,learning_rate,batch_size,embedding_size,hidden_size,dropout,mlp_layers,\
             gnn_layers,fanout,retrieved_k,graph_mode,valid_{}",
            self.metric
        )?;
        for (i, t) in self.trials.iter().enumerate() {
            let c = &t.config;
            let mode = match c.graph_mode {
                GraphMode::RowToNode => "r2n",
                GraphMode::RowToNodeOrEdge => "r2ne",
            };
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{},{},{mode},{}",
                c.learning_rate,
                c.batch_size,
                c.embedding_size,
                c.hidden_size,
                c.dropout,
                c.mlp_layers,
                c.gnn_layers,
                c.fanout,
                c.retrieved_k,
                t.valid_score,
            )?;
        }
        Ok(())
    }
}

/// Samples `trials` configurations from the grid (log-uniform learning
/// rate), trains each — fanned out over worker threads — and selects the one
/// with the best validation score; ties keep the earliest trial.
pub fn random_search(
    db: &Database,
    base: &SrpConfig,
    grid: &SearchGrid,
    trials: usize,
    master_seed: u64,
) -> Result<SearchOutcome, ModelError> {
    if trials == 0 {
        return Err(ModelError::Config("random search needs at least one trial".into()));
    }
    if !(base.synthesis || base.retrieval || base.propagation) {
        return Err(ModelError::Config("random search needs at least one module enabled".into()));
    }
    grid.validate()?;
    let configs: Vec<SrpConfig> = (0..trials)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(master_seed, i as u64, 0x7472_6961));
            grid.sample(base, &mut rng)
        })
        .collect();

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<TrialResult> = Vec::with_capacity(trials);
    for wave in configs.chunks(workers) {
        let outcomes: Vec<Result<TrainedRun, ModelError>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                wave.iter().map(|c| scope.spawn(move || train(db, c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("search worker panicked"))
                .collect()
        });
        for (config, outcome) in wave.iter().zip(outcomes) {
            let run = outcome?;
            results.push(TrialResult {
                config: config.clone(),
                valid_score: run.history[run.best_epoch],
                rows: run.report.rows,
            });
        }
    }
    let mut best = 0;
    for i in 1..results.len() {
        if results[i].valid_score > results[best].valid_score {
            best = i;
        }
    }
    Ok(SearchOutcome {
        best: results[best].config.clone(),
        best_score: results[best].valid_score,
        metric: primary_metric_name(db.schema.target.task).into(),
        trials: results,
    })
}
