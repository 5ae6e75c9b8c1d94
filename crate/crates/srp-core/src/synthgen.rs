//! Synthetic relational databases with planted, tunable signal.
//!
//! The generator builds a three-table shop: users with an engagement level,
//! items, and timestamped interactions carrying a binary label. Two
//! independent signals steer that label:
//!
//! - the *unary* signal ties a row's label to its owner's engagement, so it
//!   is only reachable by joining the foreign key to the user table;
//! - the *composite* signal groups interactions into small ephemeral
//!   cohorts — contiguous runs sharing a one-off `(tag_a, tag_b)` pair —
//!   and shifts each row's label two ways: by the cohort's coin-flip
//!   *bias*, and by the cohort's *maturity* — whether at least
//!   [`MATURITY_KNEE`] cohort mates precede the row. Tag values never
//!   recur across cohorts, so memorizing them cannot transfer across a
//!   temporal split; the only route to either component is the earlier
//!   cohort mates (the rows matching on the rare pair). The bias shows in
//!   the mates' outcomes, the maturity in *how many* mates there are, so
//!   an average over the mates blurs the two together while a separate
//!   count splits them cleanly.
//!
//! The user's region and the item's category add faint additive shifts and
//! a faint multiplicative pairing shift, all scaled by the unary strength;
//! the item's price is pure noise.
//! Generation is fully deterministic per seed: every decision draws from a
//! purpose-keyed substream, so saved copies are byte identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::mix;
use crate::rdb::{
    ColumnDef, ColumnKind, Database, FkTarget, Schema, Table, TableDef, TargetSpec, Task, Value,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator settings: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Label pull toward the owner's engagement level, in [0, 1].
    pub unary_signal: f64,
    /// Label pull toward the row's cohort bias, in [0, 1].
    pub composite_signal: f64,
    /// Probability a label is replaced by a fair coin, in [0, 1].
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 200,
            items: 100,
            interactions: 5000,
            unary_signal: 0.8,
            composite_signal: 0.8,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.users == 0 || self.items == 0 || self.interactions == 0 {
            return Err(SynthError::Config("users, items, and interactions must be positive".into()));
        }
        for (name, v) in [
            ("unary_signal", self.unary_signal),
            ("composite_signal", self.composite_signal),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
const CATEGORIES: [&str; 6] = ["books", "games", "tools", "music", "food", "toys"];

/// How strongly the unary signal at full strength shifts P(label = 1) off 0.5.
const SIGNAL_SHIFT: f64 = 0.6;

/// Label shift carried by the cohort's coin-flip bias, scaled by the
/// composite strength.
const BIAS_SHIFT: f64 = 0.4;

/// Label shift carried by the cohort's maturity, scaled by the composite
/// strength. Kept below [`BIAS_SHIFT`] so the mates' outcomes stay the
/// stronger half of the composite signal.
const MATURITY_SHIFT: f64 = 0.3;

/// A row counts as mature when at least this many cohort mates precede it.
/// Sits near the median in-cohort position so both maturity classes carry
/// real mass, and is deliberately smaller than typical retrieval depths so
/// a capped tally of earlier mates still resolves the threshold.
const MATURITY_KNEE: usize = 7;

/// Faint label shift carried by the user's region and the item's category
/// (alternating sign across the value lists), scaled by the unary strength.
const ATTRIBUTE_SHIFT: f64 = 0.02;

/// Label shift carried by the *pairing* of region and category parities,
/// scaled by the unary strength. The pairing is multiplicative, so no single
/// joined attribute reveals it: a model must combine the user-side and
/// item-side encodings to read it, which separates architectures that fuse
/// raw per-column features from ones that only see pooled summaries.
const CROSS_SHIFT: f64 = 0.12;

fn shop_schema() -> Schema {
    let plain = |name: &str, kind: ColumnKind| ColumnDef { name: name.into(), kind, fk_target: None };
    let fk = |name: &str, table: &str| ColumnDef {
        name: name.into(),
        kind: ColumnKind::ForeignKey,
        fk_target: Some(FkTarget { table: table.into(), column: "id".into() }),
    };
    Schema {
        tables: vec![
            TableDef {
                name: "User".into(),
                columns: vec![
                    plain("id", ColumnKind::PrimaryKey),
                    plain("region", ColumnKind::Categorical),
                    plain("engagement", ColumnKind::Categorical),
                ],
                timestamp_column: None,
            },
            TableDef {
                name: "Item".into(),
                columns: vec![
                    plain("id", ColumnKind::PrimaryKey),
                    plain("category", ColumnKind::Categorical),
                    plain("price", ColumnKind::Numeric),
                ],
                timestamp_column: None,
            },
            TableDef {
                name: "Interaction".into(),
                columns: vec![
                    plain("id", ColumnKind::PrimaryKey),
                    fk("user_id", "User"),
                    fk("item_id", "Item"),
                    plain("ts", ColumnKind::Timestamp),
                    plain("tag_a", ColumnKind::Categorical),
                    plain("tag_b", ColumnKind::Categorical),
                    plain("label", ColumnKind::Categorical),
                ],
                timestamp_column: Some("ts".into()),
            },
        ],
        target: TargetSpec {
            table: "Interaction".into(),
            column: "label".into(),
            task: Task::Binary,
        },
    }
}

/// Contiguous interaction runs of 10-20 rows (the final run absorbs the
/// remainder), each with never-reused tag values and a coin-flip bias.
struct Cohort {
    start: usize,
    size: usize,
    tag_a: String,
    tag_b: String,
    bias: f64,
}

fn plan_cohorts(n: usize, rng: &mut ChaCha8Rng) -> Vec<Cohort> {
    // Tags are unique to their cohort: matching on them identifies cohort
    // mates exactly, and a model that memorizes tag-label pairings in the
    // training period finds only fresh values after the split boundary.
    let mut cohorts = Vec::new();
    let mut start = 0;
    while start < n {
        let size = rng.gen_range(10..=20).min(n - start);
        let serial = cohorts.len();
        cohorts.push(Cohort {
            start,
            size,
            tag_a: format!("a{:04}", rng.gen_range(0..10) * 10_000 + serial),
            tag_b: format!("b{:04}", rng.gen_range(0..10) * 10_000 + serial),
            bias: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
        });
        start += size;
    }
    cohorts
}

/// Builds the database. Labels are drawn from
/// `clamp(0.5 + unary·(0.6·e + 0.02·(r + i) + 0.12·r·i)
///            + composite·(0.4·c + 0.3·q), 0.02, 0.98)`
/// where `e` is ±1 by the owner's engagement, `r` and `i` are ±1 by the
/// region and category parities, `c` is the cohort bias, and `q` is ±1 by
/// the cohort's maturity at the row's position; the draw is then replaced
/// by a fair coin at the noise rate.
pub fn generate(config: &SynthConfig) -> Result<Database, SynthError> {
    config.validate()?;
    let seed = config.seed;
    let mut rng_users = ChaCha8Rng::seed_from_u64(mix(seed, 1, 0));
    let mut rng_items = ChaCha8Rng::seed_from_u64(mix(seed, 2, 0));
    let mut rng_structure = ChaCha8Rng::seed_from_u64(mix(seed, 3, 0));
    let mut rng_assign = ChaCha8Rng::seed_from_u64(mix(seed, 4, 0));
    let mut rng_labels = ChaCha8Rng::seed_from_u64(mix(seed, 5, 0));
    let mut rng_noise = ChaCha8Rng::seed_from_u64(mix(seed, 6, 0));

    let engaged: Vec<bool> = (0..config.users).map(|_| rng_users.gen_bool(0.5)).collect();
    let region_of: Vec<usize> =
        (0..config.users).map(|_| rng_users.gen_range(0..REGIONS.len())).collect();
    let users = Table {
        rows: (0..config.users)
            .map(|u| {
                vec![
                    Value::Category(format!("u{u}")),
                    Value::Category(REGIONS[region_of[u]].into()),
                    Value::Category(if engaged[u] { "high".into() } else { "low".into() }),
                ]
            })
            .collect(),
    };
    let category_of: Vec<usize> =
        (0..config.items).map(|_| rng_items.gen_range(0..CATEGORIES.len())).collect();
    let items = Table {
        rows: (0..config.items)
            .map(|i| {
                vec![
                    Value::Category(format!("i{i}")),
                    Value::Category(CATEGORIES[category_of[i]].into()),
                    Value::Number((rng_items.gen_range(1.0_f64..50.0) * 100.0).round() / 100.0),
                ]
            })
            .collect(),
    };

    let cohorts = plan_cohorts(config.interactions, &mut rng_structure);
    let mut rows = Vec::with_capacity(config.interactions);
    for cohort in &cohorts {
        for offset in 0..cohort.size {
            let idx = cohort.start + offset;
            let user = rng_assign.gen_range(0..config.users);
            let item = rng_assign.gen_range(0..config.items);
            let device = DEVICES[rng_assign.gen_range(0..DEVICES.len())];
            let amount = (rng_assign.gen_range(1.0_f64..100.0) * 100.0).round() / 100.0;
            let unary_sign = if engaged[user] { 1.0 } else { -1.0 };
            let parity = |index: usize| if index % 2 == 0 { 1.0 } else { -1.0 };
            let (r, i) = (parity(region_of[user]), parity(category_of[item]));
            let unary_mix = SIGNAL_SHIFT * unary_sign
                + ATTRIBUTE_SHIFT * (r + i)
                + CROSS_SHIFT * r * i;
            let p = (0.5
                + config.unary_signal * unary_mix
                + config.composite_signal * SIGNAL_SHIFT * cohort.bias)
                .clamp(0.02, 0.98);
            let mut label = rng_labels.gen_bool(p);
            if config.noise_rate > 0.0 && rng_noise.gen_bool(config.noise_rate) {
                label = rng_noise.gen_bool(0.5);
            }
            rows.push(vec![
                Value::Category(format!("e{idx}")),
                Value::Category(format!("u{user}")),
                Value::Category(format!("i{item}")),
                Value::Timestamp(idx as i64),
                Value::Category(cohort.tag_a.clone()),
                Value::Category(cohort.tag_b.clone()),
                Value::Category(device.into()),
                Value::Number(amount),
                Value::Category(if label { "1".into() } else { "0".into() }),
            ]);
        }
    }

    let db = Database::new(shop_schema(), vec![users, items, Table { rows }])
        .expect("generated rows satisfy the schema");
    Ok(db)
}
