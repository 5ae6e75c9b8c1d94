//! Diagnose the below-chance NONE AUC on the composite-only database.
use std::collections::HashMap;

use srp_core::model::{prepare, train, SrpConfig};
use srp_core::synthgen::{generate, SynthConfig};
use srp_core::rdb::Value;

fn main() {
    let db = generate(&SynthConfig {
        interactions: 5000,
        unary_signal: 0.0,
        composite_signal: 0.8,
        noise_rate: 0.1,
        ..SynthConfig::default()
    })
    .unwrap();

    let cfg = SrpConfig {
        synthesis: false,
        retrieval: false,
        propagation: false,
        learning_rate: 2e-3,
        batch_size: 256,
        embedding_size: 16,
        hidden_size: 32,
        dropout: 0.25,
        mlp_layers: 2,
        gnn_layers: 1,
        fanout: 20,
        retrieved_k: 10,
        bins: 10,
        max_hops: 2,
        epochs: 150,
        patience: 40,
        seed: 0,
        ..SrpConfig::default()
    };
    let run = train(&db, &cfg).unwrap();
    for row in &run.report.rows {
        println!("{} {} {:.4}", row.split, row.metric, row.value);
    }

    // Value-level transfer: does a tag value's train label mean predict its
    // test label mean?
    let prep = prepare(&db, &cfg).unwrap();
    let rows = &db.tables[2].rows;
    let label = |r: usize| match &rows[r][8] {
        Value::Category(s) => (s == "1") as i32 as f64,
        _ => unreachable!(),
    };
    let tag = |r: usize, c: usize| match &rows[r][c] {
        Value::Text(s) => s.clone(),
        other => panic!("{other:?}"),
    };
    for col in [4usize, 5] {
        let mut train_stats: HashMap<String, (f64, f64)> = HashMap::new();
        for &r in &prep.split.train {
            let e = train_stats.entry(tag(r, col)).or_default();
            e.0 += label(r);
            e.1 += 1.0;
        }
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db2 = 0.0;
        let mut n = 0.0;
        let mut pairs = Vec::new();
        for &r in &prep.split.test {
            if let Some(&(s, c)) = train_stats.get(&tag(r, col)) {
                pairs.push((s / c, label(r)));
            }
        }
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        for (a, b) in &pairs {
            num += (a - ma) * (b - mb);
            da += (a - ma) * (a - ma);
            db2 += (b - mb) * (b - mb);
            n += 1.0;
        }
        println!(
            "col {col}: test rows with train-seen value: {} / {}, corr {:.4}",
            pairs.len(),
            prep.split.test.len(),
            num / (da.sqrt() * db2.sqrt()).max(1e-12)
        );
        let _ = n;
    }
}
