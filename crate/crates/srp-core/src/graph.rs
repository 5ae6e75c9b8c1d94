//! Heterogeneous graph construction and mini-batch neighbor sampling.
//!
//! Rows become typed nodes and FK-PK links become typed edges (each
//! direction is its own edge type so messages can flow both along and
//! against a foreign key). The alternative construction converts tables
//! with exactly two FK columns and no primary key — link tables such as
//! the materialized retrieval pairs — into direct edges between the
//! referenced rows instead of giving them nodes of their own.
//!
//! Sampling draws, per (node, edge type), up to a per-layer fanout of
//! neighbors uniformly without replacement, honoring temporal visibility:
//! a seed anchored at time `t` only reaches rows that provably exist
//! strictly before `t` (the seed itself is exempt so its own link rows
//! still connect). Candidates are filtered *before* any randomness is
//! consumed, so rows invisible to a seed can never perturb its sample.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::rdb::Database;

/// Which construction turned the database into a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Every table's rows become nodes.
    RowToNode,
    /// Tables with exactly two FK columns and no primary key collapse into
    /// edges between the referenced rows; everything else follows
    /// `RowToNode`. Any extra columns on a converted table are dropped.
    RowToNodeOrEdge,
}

/// When a node becomes visible to a seed anchored at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    /// No temporal constraint.
    Always,
    /// Rows with their own timestamp: visible strictly before `t` — a seed
    /// never sees contemporaneous or later events.
    Before(i64),
    /// Timestampless link rows: visible once every referenced endpoint
    /// exists, i.e. at or before the latest endpoint timestamp. The
    /// non-strict bound is what lets a seed reach link rows anchored at its
    /// own timestamp (its retrieval pairs) without seeing the future.
    AtOrBefore(i64),
    /// A timestamped table whose cell is missing: never provably past.
    Never,
}

impl Visibility {
    /// Whether a seed with reference time `seed_ts` may see this node.
    /// `None` means the seed carries no reference time (atemporal target or
    /// filtering disabled) and everything is admissible.
    pub fn admits(self, seed_ts: Option<i64>) -> bool {
        let Some(t) = seed_ts else { return true };
        match self {
            Visibility::Always => true,
            Visibility::Before(u) => u < t,
            Visibility::AtOrBefore(u) => u <= t,
            Visibility::Never => false,
        }
    }
}

/// One node type: all rows of one (non-converted) table.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeType {
    pub name: String,
    /// Index of the backing table in the database schema.
    pub table: usize,
    pub count: usize,
    pub visibility: Vec<Visibility>,
}

/// One directed edge type with both forward and reverse adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeType {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    /// True for the mirror of another edge type.
    pub reversed: bool,
    /// True when the edges come from a collapsed two-FK table.
    pub converted: bool,
    /// `fwd[src_row]` lists destination rows.
    pub fwd: Vec<Vec<u32>>,
    /// `rev[dst_row]` lists source rows (exact transpose of `fwd`).
    pub rev: Vec<Vec<u32>>,
}

impl EdgeType {
    pub fn edge_count(&self) -> usize {
        self.fwd.iter().map(Vec::len).sum()
    }
}

/// The full heterogeneous graph: immutable once built, shareable across
/// sampling passes. Messages over an edge type flow from `src_type` into
/// `dst_type`, so a node's neighborhood under type `r` is `r.rev[node]`.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pub mode: GraphMode,
    pub node_types: Vec<NodeType>,
    pub edge_types: Vec<EdgeType>,
    /// Encoded per-row features, attached after construction; `None` for
    /// featureless types such as link tables.
    pub node_features: Vec<Option<Tensor>>,
    /// Database table index -> node type index (`None` for converted tables).
    pub type_of_table: Vec<Option<usize>>,
}

impl HeteroGraph {
    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.count).sum()
    }

    /// Forward (non-mirror) edges across all types.
    pub fn forward_edge_count(&self) -> usize {
        self.edge_types.iter().filter(|t| !t.reversed).map(EdgeType::edge_count).sum()
    }

    /// Attaches an encoded feature matrix to a node type (one row per node).
    pub fn attach_features(&mut self, node_type: usize, features: Tensor) {
        assert_eq!(
            features.rows, self.node_types[node_type].count,
            "feature rows must match node count for {}",
            self.node_types[node_type].name
        );
        self.node_features[node_type] = Some(features);
    }
}

/// Resolves one FK cell to a row of the referenced table. Missing cells
/// resolve to `None`; dangling references cannot occur on a validated
/// database.
fn fk_endpoint(db: &Database, table: usize, row: usize, col: usize, ref_table: usize) -> Option<usize> {
    let cell = &db.tables[table].rows[row][col];
    let key = cell.as_str()?;
    db.pk_row(ref_table, key)
}

/// Per-row visibility for one table. Tables with their own timestamp column
/// use it strictly; timestampless tables inherit the latest timestamp among
/// their directly referenced rows (non-strict), or no constraint if nothing
/// they reference is timestamped.
pub fn row_visibility(db: &Database, table: usize) -> Vec<Visibility> {
    let def = &db.schema.tables[table];
    let n = db.tables[table].rows.len();
    if def.timestamp_index().is_some() {
        return (0..n)
            .map(|r| match db.row_timestamp(table, r) {
                Some(t) => Visibility::Before(t),
                None => Visibility::Never,
            })
            .collect();
    }
    let fks: Vec<(usize, usize, bool)> = def
        .fk_columns()
        .map(|(ci, tgt)| {
            let rt = db.table_index(&tgt.table).expect("validated FK table");
            let stamped = db.schema.tables[rt].timestamp_index().is_some();
            (ci, rt, stamped)
        })
        .collect();
    (0..n)
        .map(|r| {
            let mut latest: Option<i64> = None;
            for &(ci, rt, stamped) in &fks {
                if !stamped {
                    continue;
                }
                let Some(endpoint) = fk_endpoint(db, table, r, ci, rt) else { continue };
                match db.row_timestamp(rt, endpoint) {
                    Some(t) => latest = Some(latest.map_or(t, |x| x.max(t))),
                    None => return Visibility::Never,
                }
            }
            match latest {
                Some(t) => Visibility::AtOrBefore(t),
                None => Visibility::Always,
            }
        })
        .collect()
}

pub fn build_r2n(db: &Database) -> HeteroGraph {
    build_graph(db, GraphMode::RowToNode)
}

pub fn build_r2ne(db: &Database) -> HeteroGraph {
    build_graph(db, GraphMode::RowToNodeOrEdge)
}

pub fn build_graph(db: &Database, mode: GraphMode) -> HeteroGraph {
    let n_tables = db.schema.tables.len();
    let mut converted = vec![false; n_tables];
    if mode == GraphMode::RowToNodeOrEdge {
        for (ti, def) in db.schema.tables.iter().enumerate() {
            converted[ti] = def.pk_index().is_none() && def.fk_columns().count() == 2;
        }
    }

    let mut type_of_table = vec![None; n_tables];
    let mut node_types = Vec::new();
    for (ti, def) in db.schema.tables.iter().enumerate() {
        if converted[ti] {
            continue;
        }
        type_of_table[ti] = Some(node_types.len());
        node_types.push(NodeType {
            name: def.name.clone(),
            table: ti,
            count: db.tables[ti].rows.len(),
            visibility: row_visibility(db, ti),
        });
    }

    let mut edge_types: Vec<EdgeType> = Vec::new();
    let mut push_pair = |name: String, src: usize, dst: usize, conv: bool, links: Vec<(u32, u32)>| {
        let mut fwd = vec![Vec::new(); node_types[src].count];
        let mut rev = vec![Vec::new(); node_types[dst].count];
        for &(a, b) in &links {
            fwd[a as usize].push(b);
            rev[b as usize].push(a);
        }
        let mut rfwd = vec![Vec::new(); node_types[dst].count];
        let mut rrev = vec![Vec::new(); node_types[src].count];
        for &(a, b) in &links {
            rfwd[b as usize].push(a);
            rrev[a as usize].push(b);
        }
        edge_types.push(EdgeType {
            name: name.clone(),
            src_type: src,
            dst_type: dst,
            reversed: false,
            converted: conv,
            fwd,
            rev,
        });
        edge_types.push(EdgeType {
            name: format!("{name}:rev"),
            src_type: dst,
            dst_type: src,
            reversed: true,
            converted: conv,
            fwd: rfwd,
            rev: rrev,
        });
    };

    for (ti, def) in db.schema.tables.iter().enumerate() {
        let fks: Vec<(usize, usize)> = def
            .fk_columns()
            .map(|(ci, tgt)| (ci, db.table_index(&tgt.table).expect("validated FK table")))
            .collect();
        if converted[ti] {
            // Referenced tables carry a primary key, so they are always
            // node types themselves.
            let (ca, ta) = fks[0];
            let (cb, tb) = fks[1];
            let src = type_of_table[ta].expect("FK target is a node type");
            let dst = type_of_table[tb].expect("FK target is a node type");
            let mut links = Vec::new();
            for row in 0..db.tables[ti].rows.len() {
                let (Some(a), Some(b)) =
                    (fk_endpoint(db, ti, row, ca, ta), fk_endpoint(db, ti, row, cb, tb))
                else {
                    continue;
                };
                links.push((a as u32, b as u32));
            }
            let name = format!(
                "{}.{}->{}",
                def.name, def.columns[ca].name, def.columns[cb].name
            );
            push_pair(name, src, dst, true, links);
        } else {
            let src = type_of_table[ti].expect("non-converted table is a node type");
            for (ci, rt) in fks {
                let dst = type_of_table[rt].expect("FK target is a node type");
                let mut links = Vec::new();
                for row in 0..db.tables[ti].rows.len() {
                    if let Some(b) = fk_endpoint(db, ti, row, ci, rt) {
                        links.push((row as u32, b as u32));
                    }
                }
                push_pair(format!("{}.{}", def.name, def.columns[ci].name), src, dst, false, links);
            }
        }
    }

    let n_types = node_types.len();
    HeteroGraph {
        mode,
        node_types,
        edge_types,
        node_features: vec![None; n_types],
        type_of_table,
    }
}

/// Messages of one edge type feeding one propagation step: `src_pos[i]` is
/// a row of the previous level's state matrix, `dst_seg[i]` a row of the
/// level being computed.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageBundle {
    pub edge_type: u32,
    pub src_pos: Vec<u32>,
    pub dst_seg: Vec<u32>,
}

/// A sampled multi-layer neighborhood for a batch of seeds.
///
/// Block nodes are per-seed occurrences: the same graph node reached from
/// two different seeds appears twice, because admissibility and sampling
/// depend on the seed. `levels[d]` lists the block nodes whose depth-`d`
/// state is needed; `levels[0]` covers every block node exactly once and
/// `levels[layers]` is one entry per seed in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBlock {
    pub layers: usize,
    /// Node type per block node id.
    pub node_ty: Vec<u32>,
    /// Graph row per block node id.
    pub node_row: Vec<u32>,
    /// True for every occurrence of a seed inside its own neighborhood;
    /// such rows take label-masked input features.
    pub node_masked: Vec<bool>,
    pub levels: Vec<Vec<u32>>,
    /// `self_pos[d-1][j]`: row of `levels[d][j]`'s previous state within
    /// level `d-1`.
    pub self_pos: Vec<Vec<u32>>,
    /// `bundles[d-1]`: messages feeding depth-`d` states, grouped per edge
    /// type in ascending edge-type order.
    pub bundles: Vec<Vec<MessageBundle>>,
}

impl SampledBlock {
    pub fn num_nodes(&self) -> usize {
        self.node_ty.len()
    }

    pub fn seed_count(&self) -> usize {
        self.levels[self.layers].len()
    }
}

/// Picks up to `fanout` entries uniformly without replacement. Fewer
/// candidates than the fanout are taken verbatim without consuming
/// randomness, so the draw sequence only depends on the admissible pool.
fn sample_upto(cands: &[u32], fanout: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if cands.len() <= fanout {
        return cands.to_vec();
    }
    let mut pool = cands.to_vec();
    for i in 0..fanout {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(fanout);
    pool
}

fn slot_rng(global_seed: u64, seed_type: usize, seed_row: u32) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&global_seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(seed_type as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&(seed_row as u64).to_le_bytes());
    bytes[24..32].copy_from_slice(&0x6b636f6c_625f7072_u64.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

struct SlotBlock {
    nodes: Vec<(u32, u32, bool)>,
    levels: Vec<Vec<u32>>,
    self_pos: Vec<Vec<u32>>,
    bundles: Vec<BTreeMap<u32, (Vec<u32>, Vec<u32>)>>,
}

fn sample_slot(
    graph: &HeteroGraph,
    seed_type: usize,
    seed_row: u32,
    fanouts: &[usize],
    global_seed: u64,
    time_filter: bool,
) -> SlotBlock {
    let layers = fanouts.len();
    let seed_ts = if time_filter {
        match graph.node_types[seed_type].visibility[seed_row as usize] {
            Visibility::Before(t) | Visibility::AtOrBefore(t) => Some(t),
            // A seed without a reference time filters nothing.
            Visibility::Always | Visibility::Never => None,
        }
    } else {
        None
    };

    let mut rng = slot_rng(global_seed, seed_type, seed_row);
    let mut nodes: Vec<(u32, u32, bool)> = vec![(seed_type as u32, seed_row, true)];
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    index.insert((seed_type as u32, seed_row), 0);

    let mut levels: Vec<Vec<u32>> = vec![Vec::new(); layers + 1];
    let mut self_pos: Vec<Vec<u32>> = vec![Vec::new(); layers];
    let mut bundles: Vec<BTreeMap<u32, (Vec<u32>, Vec<u32>)>> =
        (0..layers).map(|_| BTreeMap::new()).collect();
    levels[layers] = vec![0];

    for d in (1..=layers).rev() {
        let fanout = fanouts[layers - d];
        let current = levels[d].clone();
        // Self paths first: the next level starts as a copy, so each node's
        // previous state sits at its own local position.
        let mut next = current.clone();
        let mut pos: HashMap<u32, u32> =
            next.iter().enumerate().map(|(p, &id)| (id, p as u32)).collect();
        self_pos[d - 1] = (0..current.len() as u32).collect();

        for (dst_seg, &v) in current.iter().enumerate() {
            let (vty, vrow, _) = nodes[v as usize];
            for (r, et) in graph.edge_types.iter().enumerate() {
                if et.dst_type != vty as usize {
                    continue;
                }
                let admissible: Vec<u32> = et.rev[vrow as usize]
                    .iter()
                    .copied()
                    .filter(|&u| {
                        (et.src_type == seed_type && u == seed_row)
                            || graph.node_types[et.src_type].visibility[u as usize]
                                .admits(seed_ts)
                    })
                    .collect();
                let chosen = sample_upto(&admissible, fanout, &mut rng);
                if chosen.is_empty() {
                    continue;
                }
                let (srcs, dsts) = bundles[d - 1].entry(r as u32).or_default();
                for u in chosen {
                    let key = (et.src_type as u32, u);
                    let id = *index.entry(key).or_insert_with(|| {
                        nodes.push((key.0, key.1, key.0 as usize == seed_type && key.1 == seed_row));
                        (nodes.len() - 1) as u32
                    });
                    let p = *pos.entry(id).or_insert_with(|| {
                        next.push(id);
                        (next.len() - 1) as u32
                    });
                    srcs.push(p);
                    dsts.push(dst_seg as u32);
                }
            }
        }
        levels[d - 1] = next;
    }

    SlotBlock { nodes, levels, self_pos, bundles }
}

/// Samples a fixed-fanout multi-layer block around `seed_rows` of
/// `seed_type`. `fanouts[0]` caps the first hop out from each seed,
/// `fanouts[k]` the `k+1`-th; the layer count is `fanouts.len()`.
/// Deterministic: each seed owns an rng stream derived from
/// `(global_seed, seed identity)` alone, so one seed's sample is
/// independent of batch composition.
pub fn sample_block(
    graph: &HeteroGraph,
    seed_type: usize,
    seed_rows: &[u32],
    fanouts: &[usize],
    global_seed: u64,
    time_filter: bool,
) -> SampledBlock {
    let layers = fanouts.len();
    let slots: Vec<SlotBlock> = seed_rows
        .iter()
        .map(|&row| sample_slot(graph, seed_type, row, fanouts, global_seed, time_filter))
        .collect();

    // Node id and per-level position offsets for each slot.
    let mut node_off = Vec::with_capacity(slots.len());
    let mut total_nodes = 0u32;
    for s in &slots {
        node_off.push(total_nodes);
        total_nodes += s.nodes.len() as u32;
    }
    let mut level_off = vec![vec![0u32; slots.len()]; layers + 1];
    for d in 0..=layers {
        let mut acc = 0u32;
        for (si, s) in slots.iter().enumerate() {
            level_off[d][si] = acc;
            acc += s.levels[d].len() as u32;
        }
    }

    let mut node_ty = Vec::with_capacity(total_nodes as usize);
    let mut node_row = Vec::with_capacity(total_nodes as usize);
    let mut node_masked = Vec::with_capacity(total_nodes as usize);
    for s in &slots {
        for &(ty, row, masked) in &s.nodes {
            node_ty.push(ty);
            node_row.push(row);
            node_masked.push(masked);
        }
    }

    let mut levels = vec![Vec::new(); layers + 1];
    for (d, level) in levels.iter_mut().enumerate() {
        for (si, s) in slots.iter().enumerate() {
            level.extend(s.levels[d].iter().map(|&id| id + node_off[si]));
        }
    }

    let mut self_pos = vec![Vec::new(); layers];
    for (d, sp) in self_pos.iter_mut().enumerate() {
        for (si, s) in slots.iter().enumerate() {
            sp.extend(s.self_pos[d].iter().map(|&p| p + level_off[d][si]));
        }
    }

    let mut bundles: Vec<Vec<MessageBundle>> = Vec::with_capacity(layers);
    for d in 0..layers {
        let mut per_type: BTreeMap<u32, MessageBundle> = BTreeMap::new();
        for (si, s) in slots.iter().enumerate() {
            for (&r, (srcs, dsts)) in &s.bundles[d] {
                let b = per_type.entry(r).or_insert_with(|| MessageBundle {
                    edge_type: r,
                    src_pos: Vec::new(),
                    dst_seg: Vec::new(),
                });
                b.src_pos.extend(srcs.iter().map(|&p| p + level_off[d][si]));
                b.dst_seg.extend(dsts.iter().map(|&p| p + level_off[d + 1][si]));
            }
        }
        bundles.push(per_type.into_values().collect());
    }

    SampledBlock { layers, node_ty, node_row, node_masked, levels, self_pos, bundles }
}

/// Writes one edge type as CSV lines `src_type,src_id,dst_type,dst_id`.
/// Ids are the backing rows' primary keys, or plain row indices for
/// keyless tables.
pub fn write_edge_list<W: Write>(
    graph: &HeteroGraph,
    db: &Database,
    edge_type: usize,
    w: &mut W,
) -> io::Result<()> {
    let et = &graph.edge_types[edge_type];
    let id_of = |ty: usize, row: u32| -> String {
        let table = graph.node_types[ty].table;
        match db.pk_value(table, row as usize) {
            Some(k) => k.to_string(),
            None => row.to_string(),
        }
    };
    writeln!(w, "src_type,src_id,dst_type,dst_id")?;
    let src_name = &graph.node_types[et.src_type].name;
    let dst_name = &graph.node_types[et.dst_type].name;
    for (src, dsts) in et.fwd.iter().enumerate() {
        for &dst in dsts {
            writeln!(
                w,
                "{},{},{},{}",
                src_name,
                id_of(et.src_type, src as u32),
                dst_name,
                id_of(et.dst_type, dst)
            )?;
        }
    }
    Ok(())
}
