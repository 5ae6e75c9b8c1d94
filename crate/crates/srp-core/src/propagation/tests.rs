use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fixtures::{cat, click_db, col, fk, num, review_db};
use crate::graph::{build_graph, sample_block, GraphMode, HeteroGraph};
use crate::nn::gradcheck;
use crate::rdb::{ColumnKind, Database, Schema, Table, TableDef, TargetSpec, Task};
use crate::retrieval::{dummy_table_name, register_dummy_tables, DummyTable};

/// Deterministic features derived from row *content* (the primary key), so
/// relabeling rows carries the features along. Keyless tables stay
/// featureless.
fn attach_content_features(db: &Database, g: &mut HeteroGraph) {
    for t in 0..g.node_types.len() {
        let ti = g.node_types[t].table;
        if db.schema.tables[ti].pk_index().is_none() {
            continue;
        }
        let width = 3 + t;
        let rows: Vec<Vec<f64>> = (0..g.node_types[t].count)
            .map(|r| {
                let s: u32 = db.pk_value(ti, r).unwrap().bytes().map(u32::from).sum();
                (0..width).map(|c| ((s % 23) as f64 + 1.0) * 0.07 * (c as f64 + 1.0) - 0.5).collect()
            })
            .collect();
        g.attach_features(t, Tensor::from_rows(&rows));
    }
}

fn review_graph(mode: GraphMode, pairs: Vec<(usize, usize)>) -> (Database, HeteroGraph) {
    let db = register_dummy_tables(
        &review_db(),
        &[DummyTable {
            source_table: "Review".into(),
            name: dummy_table_name("Review"),
            pairs,
        }],
    )
    .unwrap();
    let mut g = build_graph(&db, mode);
    attach_content_features(&db, &mut g);
    (db, g)
}

fn new_propagator(g: &HeteroGraph, hidden: usize, layers: usize, seed: u64) -> (Params, Propagator) {
    let mut params = Params::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prop = Propagator::init(&mut params, &mut rng, g, hidden, layers, 0.0);
    (params, prop)
}

fn forward_value(
    prop: &Propagator,
    params: &Params,
    g: &HeteroGraph,
    block: &crate::graph::SampledBlock,
    masked: MaskedFeatures,
) -> Tensor {
    let mut tape = Tape::new();
    let h = prop.forward(&mut tape, params, g, block, masked).unwrap();
    tape.value(h).clone()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn all_types_project_to_the_hidden_width() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0), (3, 2)]);
    let review = g.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g, 8, 1, 3);
    let block = sample_block(&g, review, &[1, 3], &[10], 5, true);

    let mut tape = Tape::new();
    let h0 = prop.init_node_inputs(&mut tape, &params, &g, &block, None);
    assert_eq!(tape.value(h0).shape(), (block.levels[0].len(), 8));

    // The featureless link type enters as its learned constant row.
    let dummy = g.node_type_index("Review__retrieval").unwrap();
    let NodeInput::Constant(c) = prop.inputs[dummy] else { panic!("link type gets a constant") };
    let pos = block.levels[0]
        .iter()
        .position(|&id| block.node_ty[id as usize] as usize == dummy)
        .expect("block reaches a link node");
    assert_eq!(tape.value(h0).row(pos), params.value(c).row(0));
}

#[test]
fn empty_block_yields_empty_output() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0)]);
    let review = g.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g, 6, 2, 3);
    let block = sample_block(&g, review, &[], &[4, 4], 5, true);
    let out = forward_value(&prop, &params, &g, &block, None);
    assert_eq!(out.shape(), (0, 6));
}

#[test]
fn isolated_seed_reduces_to_the_self_path() {
    // Click c1 (t=5) precedes its own session: nothing is admissible.
    let db = click_db();
    let mut g = build_graph(&db, GraphMode::RowToNode);
    attach_content_features(&db, &mut g);
    let click = g.node_type_index("Click").unwrap();
    let (params, prop) = new_propagator(&g, 7, 1, 9);
    let block = sample_block(&g, click, &[0], &[10], 5, true);
    assert_eq!(block.num_nodes(), 1);

    let out = forward_value(&prop, &params, &g, &block, None);
    let NodeInput::Projection(w_in) = prop.inputs[click] else { panic!() };
    let x = Tensor::from_rows(&[g.node_features[click].as_ref().unwrap().row(0).to_vec()]);
    let h0 = tensor::matmul(&x, params.value(w_in));
    let expected = tensor::add(
        &tensor::matmul(&h0, params.value(prop.layers[0].w_self)),
        params.value(prop.layers[0].bias),
    );
    assert!(max_abs_diff(&out, &expected) <= 1e-12);
}

#[test]
fn edgeless_graph_equals_a_reference_mlp() {
    let schema = Schema {
        tables: vec![TableDef {
            name: "Plain".into(),
            columns: vec![
                col("id", ColumnKind::PrimaryKey),
                col("v", ColumnKind::Numeric),
                col("y", ColumnKind::Categorical),
            ],
            timestamp_column: None,
        }],
        target: TargetSpec { table: "Plain".into(), column: "y".into(), task: Task::Binary },
    };
    let rows = Table {
        rows: (0..4).map(|i| vec![cat(&format!("p{i}")), num(i as f64), cat("x")]).collect(),
    };
    let db = Database::new(schema, vec![rows]).unwrap();
    let mut g = build_graph(&db, GraphMode::RowToNode);
    attach_content_features(&db, &mut g);
    let (params, prop) = new_propagator(&g, 5, 2, 21);

    let block = sample_block(&g, 0, &[0, 1, 2, 3], &[3, 3], 5, true);
    let out = forward_value(&prop, &params, &g, &block, None);

    let NodeInput::Projection(w_in) = prop.inputs[0] else { panic!() };
    let mut h = tensor::matmul(g.node_features[0].as_ref().unwrap(), params.value(w_in));
    h = tensor::relu(&tensor::add(
        &tensor::matmul(&h, params.value(prop.layers[0].w_self)),
        params.value(prop.layers[0].bias),
    ));
    h = tensor::add(
        &tensor::matmul(&h, params.value(prop.layers[1].w_self)),
        params.value(prop.layers[1].bias),
    );
    assert!(max_abs_diff(&out, &h) <= 1e-12);
}

#[test]
fn duplicate_neighbors_average_to_one_message() {
    let build = |links: Vec<Vec<crate::rdb::Value>>| {
        let schema = Schema {
            tables: vec![
                TableDef {
                    name: "A".into(),
                    columns: vec![
                        col("id", ColumnKind::PrimaryKey),
                        col("y", ColumnKind::Categorical),
                    ],
                    timestamp_column: None,
                },
                TableDef {
                    name: "J".into(),
                    columns: vec![fk("left", "A", "id"), fk("right", "A", "id")],
                    timestamp_column: None,
                },
            ],
            target: TargetSpec { table: "A".into(), column: "y".into(), task: Task::Binary },
        };
        let a = Table { rows: vec![vec![cat("a1"), cat("x")], vec![cat("a2"), cat("x")]] };
        let db = Database::new(schema, vec![a, Table { rows: links }]).unwrap();
        let mut g = build_graph(&db, GraphMode::RowToNodeOrEdge);
        attach_content_features(&db, &mut g);
        g
    };
    let single = build(vec![vec![cat("a1"), cat("a2")]]);
    let doubled = build(vec![vec![cat("a1"), cat("a2")], vec![cat("a1"), cat("a2")]]);

    let (params, prop) = new_propagator(&single, 6, 1, 4);
    let block_s = sample_block(&single, 0, &[1], &[5], 2, true);
    let block_d = sample_block(&doubled, 0, &[1], &[5], 2, true);
    let out_s = forward_value(&prop, &params, &single, &block_s, None);
    let out_d = forward_value(&prop, &params, &doubled, &block_d, None);
    assert_eq!(out_s.data, out_d.data, "mean aggregation absorbs duplicates");
}

#[test]
fn identity_configuration_passes_inputs_through() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0)]);
    let review = g.node_type_index("Review").unwrap();
    let (mut params, prop) = new_propagator(&g, 6, 1, 8);
    let mut eye = Tensor::zeros(6, 6);
    for i in 0..6 {
        eye.set(i, i, 1.0);
    }
    *params.value_mut(prop.layers[0].w_self) = eye;
    for &wr in &prop.layers[0].w_rel {
        *params.value_mut(wr) = Tensor::zeros(6, 6);
    }

    let block = sample_block(&g, review, &[1], &[10], 5, true);
    let out = forward_value(&prop, &params, &g, &block, None);

    let mut tape = Tape::new();
    let h0 = prop.init_node_inputs(&mut tape, &params, &g, &block, None);
    let seed_pos = block.levels[0]
        .iter()
        .position(|&id| id == block.levels[1][0])
        .unwrap();
    assert_eq!(out.row(0), tape.value(h0).row(seed_pos));
}

#[test]
fn receptive_field_is_bounded_by_depth() {
    // Chain a—b—c—d as direct (converted) edges; depth 2 from `a` reaches
    // c but never d.
    let schema = Schema {
        tables: vec![
            TableDef {
                name: "N".into(),
                columns: vec![col("id", ColumnKind::PrimaryKey), col("y", ColumnKind::Categorical)],
                timestamp_column: None,
            },
            TableDef {
                name: "E".into(),
                columns: vec![fk("a", "N", "id"), fk("b", "N", "id")],
                timestamp_column: None,
            },
        ],
        target: TargetSpec { table: "N".into(), column: "y".into(), task: Task::Binary },
    };
    let nodes = Table {
        rows: ["a", "b", "c", "d"].iter().map(|s| vec![cat(s), cat("x")]).collect(),
    };
    let links = Table {
        rows: vec![
            vec![cat("a"), cat("b")],
            vec![cat("b"), cat("c")],
            vec![cat("c"), cat("d")],
        ],
    };
    let db = Database::new(schema, vec![nodes, links]).unwrap();
    let mut g = build_graph(&db, GraphMode::RowToNodeOrEdge);
    attach_content_features(&db, &mut g);
    let (params, prop) = new_propagator(&g, 5, 2, 17);
    let block = sample_block(&g, 0, &[0], &[5, 5], 3, true);
    let base = forward_value(&prop, &params, &g, &block, None);

    // d sits three hops out: any perturbation there is invisible.
    let mut far = g.clone();
    far.node_features[0].as_mut().unwrap().row_mut(3).fill(9.0);
    let block_far = sample_block(&far, 0, &[0], &[5, 5], 3, true);
    assert_eq!(block, block_far, "structure never depended on features");
    let out_far = forward_value(&prop, &params, &far, &block_far, None);
    assert_eq!(base.data, out_far.data);

    // c is exactly two hops out: its features reach the seed.
    let mut near = g.clone();
    near.node_features[0].as_mut().unwrap().row_mut(2).fill(9.0);
    let out_near = forward_value(&prop, &params, &near, &block, None);
    assert_ne!(base.data, out_near.data);
}

#[test]
fn retrieval_edge_knockout_changes_the_embedding() {
    // Same schema and parameters; only the link rows differ. With depth 1
    // the retrieved row's features reach the seed through the converted
    // edge or not at all.
    let (_, with_link) = review_graph(GraphMode::RowToNodeOrEdge, vec![(1, 0)]);
    let (_, without) = review_graph(GraphMode::RowToNodeOrEdge, vec![]);
    let review = with_link.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&with_link, 6, 1, 11);

    let linked = forward_value(
        &prop,
        &params,
        &with_link,
        &sample_block(&with_link, review, &[1], &[5], 2, true),
        None,
    );
    let cut = forward_value(
        &prop,
        &params,
        &without,
        &sample_block(&without, review, &[1], &[5], 2, true),
        None,
    );
    assert_ne!(linked.data, cut.data);
}

#[test]
fn relabeling_rows_permutes_embeddings() {
    let original = review_db();
    let mut shuffled = review_db();
    // Same content, different row order; FKs keep resolving by key.
    shuffled.tables[2].rows.rotate_left(2);
    let shuffled = Database::new(shuffled.schema, shuffled.tables).unwrap();

    let mut g1 = build_graph(&original, GraphMode::RowToNode);
    attach_content_features(&original, &mut g1);
    let mut g2 = build_graph(&shuffled, GraphMode::RowToNode);
    attach_content_features(&shuffled, &mut g2);

    let review = g1.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g1, 8, 2, 31);

    // Exhaustive fanouts: no randomness is consumed, so the same review
    // keeps the same neighborhood under either labeling.
    let out1 = forward_value(
        &prop,
        &params,
        &g1,
        &sample_block(&g1, review, &[1], &[10, 10], 6, true),
        None,
    );
    let r2_new = shuffled.pk_row(2, "r2").unwrap() as u32;
    let out2 = forward_value(
        &prop,
        &params,
        &g2,
        &sample_block(&g2, review, &[r2_new], &[10, 10], 6, true),
        None,
    );
    assert!(max_abs_diff(&out1, &out2) <= 1e-12);
}

#[test]
fn masked_occurrences_read_masked_features() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0)]);
    let review = g.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g, 6, 1, 13);
    let block = sample_block(&g, review, &[1], &[10], 5, true);

    let mut masked = g.node_features[review].as_ref().unwrap().clone();
    masked.row_mut(1).fill(0.0);

    let plain = forward_value(&prop, &params, &g, &block, None);
    let hidden = forward_value(&prop, &params, &g, &block, Some((review, &masked)));
    assert_ne!(plain.data, hidden.data, "the seed row must come from the masked matrix");

    // Masking a type absent from the mask override changes nothing.
    let item = g.node_type_index("Item").unwrap();
    let zeros = Tensor::zeros(g.node_types[item].count, g.node_features[item].as_ref().unwrap().cols);
    let _ = zeros; // only seed occurrences are masked, and the seed is a Review
    let untouched = forward_value(&prop, &params, &g, &block, Some((item, &zeros)));
    assert_eq!(plain.data, untouched.data);
}

#[test]
fn dropout_is_deterministic_per_stream_and_perturbs_hidden_states() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0)]);
    let review = g.node_type_index("Review").unwrap();
    let mut params = Params::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prop = Propagator::init(&mut params, &mut rng, &g, 8, 2, 0.5);
    let block = sample_block(&g, review, &[1], &[10, 10], 5, true);

    let run = |seed: u64| {
        let mut tape = Tape::new();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
        let h = prop
            .forward_with_dropout(&mut tape, &params, &g, &block, None, &mut drop_rng)
            .unwrap();
        tape.value(h).clone()
    };
    assert_eq!(run(7).data, run(7).data);
    let clean = forward_value(&prop, &params, &g, &block, None);
    assert_ne!(run(7).data, clean.data);
}

#[test]
fn depth_mismatch_is_an_error() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0)]);
    let review = g.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g, 6, 2, 3);
    let block = sample_block(&g, review, &[1], &[4], 5, true);
    let mut tape = Tape::new();
    let err = prop.forward(&mut tape, &params, &g, &block, None).unwrap_err();
    assert!(matches!(err, PropagationError::DepthMismatch { block: 1, net: 2 }));
}

#[test]
fn inference_path_is_bit_identical_to_the_tape() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0), (3, 2)]);
    let review = g.node_type_index("Review").unwrap();
    let (params, prop) = new_propagator(&g, 8, 2, 19);
    let block = sample_block(&g, review, &[1, 3, 4], &[3, 3], 5, true);

    let mut masked = g.node_features[review].as_ref().unwrap().clone();
    masked.row_mut(1).fill(0.0);
    let taped = forward_value(&prop, &params, &g, &block, Some((review, &masked)));
    let plain = prop.infer(&params, &g, &block, Some((review, &masked))).unwrap();
    assert_eq!(taped.shape(), plain.shape());
    for (a, b) in taped.data.iter().zip(&plain.data) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn every_parameter_passes_the_finite_difference_check() {
    let (_, g) = review_graph(GraphMode::RowToNode, vec![(1, 0), (3, 2)]);
    let review = g.node_type_index("Review").unwrap();
    let (mut params, prop) = new_propagator(&g, 5, 2, 23);
    let block = sample_block(&g, review, &[1, 3], &[2, 2], 5, true);

    let mut tape = Tape::new();
    let h = prop.forward(&mut tape, &params, &g, &block, None).unwrap();
    let loss = tape.mse(h, Tensor::zeros(2, 5));
    tape.backward(loss, &mut params);
    let analytic = gradcheck::collected_gradients(&params);

    let numeric = gradcheck::numeric_gradients(&mut params, 1e-5, |p| {
        let mut tape = Tape::new();
        let h = prop.forward(&mut tape, p, &g, &block, None).unwrap();
        let loss = tape.mse(h, Tensor::zeros(2, 5));
        tape.value(loss).item()
    });
    let err = gradcheck::max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "worst relative gradient error {err}");
}
