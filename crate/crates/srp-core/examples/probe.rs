//! Scratch probe for tuning the planted-signal benchmark (not shipped).

use srp_core::graph::GraphMode;
use srp_core::model::{train, SrpConfig};
use srp_core::synthgen::{generate, SynthConfig};

fn base_config() -> SrpConfig {
    SrpConfig {
        graph_mode: GraphMode::RowToNodeOrEdge,
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
    }
}

fn main() {
    for db_seed in [0u64, 1] {
        let db = generate(&SynthConfig {
            interactions: 5000,
            unary_signal: 0.8,
            composite_signal: 0.8,
            noise_rate: 0.1,
            seed: db_seed,
            ..SynthConfig::default()
        })
        .unwrap();
        for lr in [2e-3f64, 3e-3, 4e-3] {
            for (s, r, p) in [(false, true, true), (true, true, true)] {
                let mut aucs = Vec::new();
                for seed in 0..5u64 {
                    let cfg = SrpConfig {
                        seed,
                        learning_rate: lr,
                        ..base_config().with_toggles(s, r, p)
                    };
                    let run = train(&db, &cfg).unwrap();
                    let test = run
                        .report
                        .rows
                        .iter()
                        .find(|row| row.split == "test" && row.metric == "auc")
                        .unwrap()
                        .value;
                    aucs.push(test);
                }
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                let name = SrpConfig::default().with_toggles(s, r, p).combo();
                println!(
                    "db {db_seed}  lr {lr:.0e}  {name:<7} mean {mean:.4}  ({})",
                    aucs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
                );
            }
        }
    }
}
