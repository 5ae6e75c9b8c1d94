//! Idempotent pipeline stages over one output directory.
//!
//! Every stage follows the same shape: hash what it is about to read
//! (upstream data plus the configuration fields that steer it), skip the
//! work if the manifest already records that hash and the artifacts are
//! still on disk, otherwise recompute, write, and update the manifest.
//! Stage artifacts are derived by the same library calls the in-memory
//! training path uses, so a staged run and a one-shot `train` produce
//! bitwise-identical results.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use srp_core::graph::{build_graph, write_edge_list, GraphMode};
use srp_core::model::{
    ablate, evaluate, load_grid, offline_dummies, offline_features, prepare, random_search,
    save_config, save_grid, train, EvalReport, ModelError, SearchGrid, SrpConfig, SrpModel,
};
use srp_core::rdb::{load_database, load_schema, save_database, Database, RdbError};
use srp_core::retrieval::{register_dummy_tables, write_dummy_csv};
use srp_core::synthesis::write_feature_csv;
use srp_core::synthgen::{generate, SynthConfig, SynthError};

use crate::manifest::{Manifest, ManifestError};

/// One error class per diagnostic line; the class picks the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Divergence(_) => "divergence",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Json(_) => CliError::Config(e.to_string()),
            ModelError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RdbError> for CliError {
    fn from(e: RdbError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
    }
    s
}

/// SHA-256 over length-delimited parts, so part boundaries cannot alias.
fn digest_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

/// Content hash of a database directory: every `.json` and `.csv` file,
/// sorted by name, manifest excluded.
pub fn digest_db_dir(dir: &Path) -> Result<String, CliError> {
    let mut names: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("database directory {}: {e}", dir.display())))?;
    for entry in entries {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") || name.ends_with(".json") {
            names.push(name);
        }
    }
    names.sort();
    let mut h = Sha256::new();
    for name in &names {
        let bytes = std::fs::read(dir.join(name))?;
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    Ok(hex(&h.finalize()))
}

fn config_json(config: &SrpConfig) -> String {
    serde_json::to_string(config).expect("a config always serializes")
}

/// Everything an artifact-producing command needs: the loaded database,
/// its content hash, the effective configuration, and the output
/// directory's manifest.
pub struct Run {
    pub db: Database,
    pub db_digest: String,
    pub config: SrpConfig,
    pub out: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn open(db_dir: &Path, out: &Path, config: SrpConfig) -> Result<Run, CliError> {
        config.validate().map_err(CliError::from)?;
        let schema = load_schema(&db_dir.join("schema.json")).map_err(|e| {
            CliError::Data(format!("loading {}/schema.json: {e}", db_dir.display()))
        })?;
        let (db, report) = load_database(&schema, db_dir)?;
        if report.total() > 0 {
            println!("loaded database: {} cells coerced to Missing", report.total());
        }
        let db_digest = digest_db_dir(db_dir)?;
        let mut manifest = Manifest::load(out)?;
        manifest.config = digest_parts(&[config_json(&config).as_bytes()]);
        Ok(Run { db, db_digest, config, out: out.to_path_buf(), manifest })
    }

    fn save_manifest(&self) -> Result<(), CliError> {
        Ok(self.manifest.save(&self.out)?)
    }

    fn retrieve_inputs(&self) -> String {
        let c = &self.config;
        digest_parts(&[
            b"retrieve",
            self.db_digest.as_bytes(),
            &c.retrieved_k.to_le_bytes(),
            &c.bins.to_le_bytes(),
            &[u8::from(c.time_filter)],
        ])
    }

    /// Materializes the dummy link tables retrieval adds to the schema.
    pub fn ensure_retrieve(&mut self) -> Result<(), CliError> {
        if !self.config.retrieval {
            println!("retrieve: skipped (toggled off)");
            return Ok(());
        }
        let inputs = self.retrieve_inputs();
        if self.manifest.is_fresh(&self.out, "retrieve", &inputs) {
            println!("retrieve: cached");
            return Ok(());
        }
        std::fs::create_dir_all(&self.out)?;
        let dummies = offline_dummies(&self.db, &self.config)?;
        let mut outputs = Vec::new();
        for d in &dummies {
            let file = format!("{}.csv", d.name);
            write_dummy_csv(&self.db, d, &self.out.join(&file))
                .map_err(|e| CliError::Data(e.to_string()))?;
            outputs.push(file);
        }
        println!(
            "retrieve: wrote {} dummy tables (k = {})",
            outputs.len(),
            self.config.retrieved_k
        );
        self.manifest.record("retrieve", &inputs, outputs);
        self.save_manifest()
    }

    fn synthesize_inputs(&self) -> String {
        let c = &self.config;
        digest_parts(&[
            b"synthesize",
            self.db_digest.as_bytes(),
            if c.retrieval { self.retrieve_inputs() } else { String::new() }.as_bytes(),
            &c.max_hops.to_le_bytes(),
            &[u8::from(c.time_filter), u8::from(c.synthesis)],
        ])
    }

    /// Materializes the synthesized feature table (originals plus one
    /// column per aggregation path, over the dummy-augmented database).
    pub fn ensure_synthesize(&mut self) -> Result<(), CliError> {
        let inputs = self.synthesize_inputs();
        if self.manifest.is_fresh(&self.out, "synthesize", &inputs) {
            println!("synthesize: cached");
            return Ok(());
        }
        if self.config.retrieval {
            self.ensure_retrieve()?;
        }
        std::fs::create_dir_all(&self.out)?;
        let features = offline_features(&self.augmented_db()?, &self.config);
        write_feature_csv(&features, &self.out.join("features.csv"))?;
        println!(
            "synthesize: wrote features.csv ({} rows × {} columns)",
            features.rows.len(),
            features.columns.len()
        );
        self.manifest.record("synthesize", &inputs, vec!["features.csv".into()]);
        self.save_manifest()
    }

    fn graph_inputs(&self) -> String {
        let c = &self.config;
        digest_parts(&[
            b"build-graph",
            self.db_digest.as_bytes(),
            if c.retrieval { self.retrieve_inputs() } else { String::new() }.as_bytes(),
            match c.graph_mode {
                GraphMode::RowToNode => b"r2n".as_slice(),
                GraphMode::RowToNodeOrEdge => b"r2ne".as_slice(),
            },
        ])
    }

    /// Materializes the heterogeneous graph as a summary plus one edge
    /// list per (non-mirror) edge type.
    pub fn ensure_graph(&mut self) -> Result<(), CliError> {
        let inputs = self.graph_inputs();
        if self.manifest.is_fresh(&self.out, "build-graph", &inputs) {
            println!("build-graph: cached");
            return Ok(());
        }
        if self.config.retrieval {
            self.ensure_retrieve()?;
        }
        std::fs::create_dir_all(&self.out)?;
        let db_aug = self.augmented_db()?;
        let graph = build_graph(&db_aug, self.config.graph_mode);
        let mut outputs = Vec::new();
        let mut summary = String::new();
        for nt in &graph.node_types {
            writeln!(summary, "node-type {} nodes {}", nt.name, nt.count).expect("string write");
        }
        for (i, et) in graph.edge_types.iter().enumerate() {
            writeln!(
                summary,
                "edge-type {} edges {}{}{}",
                et.name,
                et.edge_count(),
                if et.reversed { " (mirror)" } else { "" },
                if et.converted { " (converted table)" } else { "" },
            )
            .expect("string write");
            if et.reversed {
                continue; // mirrors are exact transposes of a listed type
            }
            let safe: String = et
                .name
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
                .collect();
            let file = format!("edges_{i:02}_{safe}.csv");
            let mut w = Vec::new();
            write_edge_list(&graph, &db_aug, i, &mut w)?;
            std::fs::write(self.out.join(&file), w)?;
            outputs.push(file);
        }
        std::fs::write(self.out.join("graph.txt"), summary)?;
        outputs.push("graph.txt".into());
        println!(
            "build-graph: {} node types ({} nodes), {} edge types ({} forward edges)",
            graph.node_types.len(),
            graph.total_nodes(),
            graph.edge_types.len(),
            graph.forward_edge_count()
        );
        self.manifest.record("build-graph", &inputs, outputs);
        self.save_manifest()
    }

    fn train_inputs(&self) -> String {
        digest_parts(&[b"train", self.db_digest.as_bytes(), config_json(&self.config).as_bytes()])
    }

    /// Runs the enabled offline stages, then training; skips everything
    /// when the checkpoint for these exact inputs already exists.
    pub fn ensure_train(&mut self) -> Result<(), CliError> {
        let inputs = self.train_inputs();
        if self.manifest.is_fresh(&self.out, "train", &inputs) {
            println!("train: cached");
            return Ok(());
        }
        if self.config.retrieval {
            self.ensure_retrieve()?;
        }
        if self.config.synthesis {
            self.ensure_synthesize()?;
        }
        if self.config.propagation {
            self.ensure_graph()?;
        }
        std::fs::create_dir_all(&self.out)?;
        let run = train(&self.db, &self.config)?;
        run.model.params.save(&self.out.join("checkpoint.bin"))?;
        let mut report = Vec::new();
        run.report.write_csv(&mut report)?;
        std::fs::write(self.out.join("report.csv"), report)?;
        save_config(&self.out.join("config.json"), &self.config)?;
        println!(
            "train: combo {}, best epoch {}, {} epochs run",
            self.config.combo(),
            run.best_epoch,
            run.history.len()
        );
        print_report(&run.report, &self.config);
        self.manifest.record(
            "train",
            &inputs,
            vec!["checkpoint.bin".into(), "report.csv".into(), "config.json".into()],
        );
        self.save_manifest()
    }

    /// Rebuilds the pipeline state, loads the trained checkpoint, and
    /// re-scores every split.
    pub fn evaluate_cmd(&mut self) -> Result<(), CliError> {
        let checkpoint = self.out.join("checkpoint.bin");
        if !checkpoint.exists() {
            return Err(CliError::Data(format!(
                "no checkpoint at {}; run train first",
                checkpoint.display()
            )));
        }
        let inputs = digest_parts(&[
            b"evaluate",
            self.db_digest.as_bytes(),
            config_json(&self.config).as_bytes(),
            &std::fs::read(&checkpoint)?,
        ]);
        if self.manifest.is_fresh(&self.out, "evaluate", &inputs) {
            println!("evaluate: cached");
            return Ok(());
        }
        let prepared = prepare(&self.db, &self.config)?;
        let mut rng = rand_seed(self.config.seed);
        let mut model = SrpModel::init(&self.config, &prepared, &mut rng)?;
        model.load_checkpoint(&checkpoint)?;
        let mut rows = Vec::new();
        for (name, split_rows) in [
            ("train", &prepared.split.train),
            ("valid", &prepared.split.valid),
            ("test", &prepared.split.test),
        ] {
            rows.extend(evaluate(&model, &prepared, &self.config, name, split_rows)?);
        }
        let report = EvalReport { rows };
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        std::fs::write(self.out.join("evaluation.csv"), csv)?;
        print_report(&report, &self.config);
        self.manifest.record("evaluate", &inputs, vec!["evaluation.csv".into()]);
        self.save_manifest()
    }

    /// Trains every module combination over `seeds` seeds and writes the
    /// mean-metric / average-rank summary.
    pub fn ablate_cmd(&mut self, seeds: u64) -> Result<(), CliError> {
        if seeds == 0 {
            return Err(CliError::Config("ablate needs at least one seed".into()));
        }
        let seed_list: Vec<u64> = (0..seeds).collect();
        let inputs = digest_parts(&[
            b"ablate",
            self.db_digest.as_bytes(),
            config_json(&self.config).as_bytes(),
            &seeds.to_le_bytes(),
        ]);
        if self.manifest.is_fresh(&self.out, "ablate", &inputs) {
            println!("ablate: cached");
            return Ok(());
        }
        std::fs::create_dir_all(&self.out)?;
        let result = ablate(&self.db, &self.config, &seed_list)?;
        let mut summary = Vec::new();
        result.write_summary_csv(&mut summary)?;
        std::fs::write(self.out.join("ablation.csv"), &summary)?;
        let mut runs = Vec::new();
        result.report.write_csv(&mut runs)?;
        std::fs::write(self.out.join("ablation_runs.csv"), runs)?;
        print!("{}", String::from_utf8_lossy(&summary));
        self.manifest
            .record("ablate", &inputs, vec!["ablation.csv".into(), "ablation_runs.csv".into()]);
        self.save_manifest()
    }

    /// Random hyper-parameter search over the grid (the published ranges
    /// unless `--grid` points at a file).
    pub fn search_cmd(&mut self, trials: usize, grid_path: Option<&Path>) -> Result<(), CliError> {
        let grid = match grid_path {
            Some(p) => load_grid(p)?,
            None => SearchGrid::default(),
        };
        let grid_json = serde_json::to_string(&grid)
            .map_err(|e| CliError::Config(format!("grid does not serialize: {e}")))?;
        let inputs = digest_parts(&[
            b"search",
            self.db_digest.as_bytes(),
            config_json(&self.config).as_bytes(),
            grid_json.as_bytes(),
            &trials.to_le_bytes(),
        ]);
        if self.manifest.is_fresh(&self.out, "search", &inputs) {
            println!("search: cached");
            return Ok(());
        }
        std::fs::create_dir_all(&self.out)?;
        let outcome = random_search(&self.db, &self.config, &grid, trials, self.config.seed)?;
        let mut csv = Vec::new();
        outcome.write_trials_csv(&mut csv)?;
        std::fs::write(self.out.join("trials.csv"), csv)?;
        save_grid(&self.out.join("grid.json"), &grid)?;
        save_config(&self.out.join("best_config.json"), &outcome.best)?;
        let best_trial = outcome
            .trials
            .iter()
            .position(|t| t.config == outcome.best)
            .map_or(0, |i| i + 1);
        println!(
            "search: best of {trials} trials is #{best_trial} ({} {:.6} on validation)",
            outcome.metric, outcome.best_score
        );
        self.manifest.record(
            "search",
            &inputs,
            vec!["trials.csv".into(), "grid.json".into(), "best_config.json".into()],
        );
        self.save_manifest()
    }

    /// The database with retrieval's dummy tables registered (when
    /// retrieval is on); the base database otherwise.
    fn augmented_db(&self) -> Result<Database, CliError> {
        let dummies = offline_dummies(&self.db, &self.config)?;
        if dummies.is_empty() {
            Ok(self.db.clone())
        } else {
            register_dummy_tables(&self.db, &dummies).map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

/// Generates the synthetic benchmark database into `out` (schema plus one
/// CSV per table), cached on the generator parameters.
pub fn gen_synthetic(out: &Path, config: &SynthConfig) -> Result<(), CliError> {
    let params = serde_json::to_string(config)
        .map_err(|e| CliError::Config(format!("generator config does not serialize: {e}")))?;
    let inputs = digest_parts(&[b"gen-synthetic", params.as_bytes()]);
    let mut manifest = Manifest::load(out)?;
    manifest.config = digest_parts(&[params.as_bytes()]);
    if manifest.is_fresh(out, "gen-synthetic", &inputs) {
        println!("gen-synthetic: cached");
        return Ok(());
    }
    let db = generate(config)?;
    std::fs::create_dir_all(out)?;
    let schema_json = serde_json::to_string_pretty(&db.schema)
        .map_err(|e| CliError::Data(format!("schema does not serialize: {e}")))?;
    std::fs::write(out.join("schema.json"), schema_json.as_bytes())?;
    save_database(&db, out)?;
    let mut outputs = vec!["schema.json".to_string()];
    outputs.extend(db.schema.tables.iter().map(|t| format!("{}.csv", t.name)));
    let rows: usize = db.tables.iter().map(srp_core::rdb::Table::len).sum();
    println!(
        "gen-synthetic: wrote {} tables, {} rows total (seed {})",
        db.tables.len(),
        rows,
        config.seed
    );
    manifest.record("gen-synthetic", &inputs, outputs);
    Ok(manifest.save(out)?)
}

/// One line per split with every metric the report carries for this
/// configuration's combo.
fn print_report(report: &EvalReport, config: &SrpConfig) {
    let combo = config.combo();
    for split in ["train", "valid", "test"] {
        let mut parts = Vec::new();
        for row in &report.rows {
            if row.combo == combo && row.split == split {
                parts.push(format!("{} {:.4}", row.metric, row.value));
            }
        }
        if !parts.is_empty() {
            println!("{split:>5}: {}", parts.join(", "));
        }
    }
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand_chacha::rand_core::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_parts_separates_boundaries() {
        assert_ne!(digest_parts(&[b"ab", b"c"]), digest_parts(&[b"a", b"bc"]));
        assert_eq!(digest_parts(&[b"ab", b"c"]), digest_parts(&[b"ab", b"c"]));
    }

    #[test]
    fn db_dir_digest_ignores_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
        std::fs::write(dir.path().join("schema.json"), "{}").unwrap();
        let before = digest_db_dir(dir.path()).unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "stage gen ...").unwrap();
        assert_eq!(digest_db_dir(dir.path()).unwrap(), before);
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,3\n").unwrap();
        assert_ne!(digest_db_dir(dir.path()).unwrap(), before);
    }

    #[test]
    fn error_classes_map_to_distinct_exit_codes() {
        let c = CliError::Config("bad".into());
        let d = CliError::Data("gone".into());
        let v = CliError::Divergence("nan".into());
        assert_eq!((c.exit_code(), d.exit_code(), v.exit_code()), (2, 3, 4));
        assert_eq!((c.class(), d.class(), v.class()), ("config", "data", "divergence"));
    }
}
