//! Relational message passing over sampled blocks.
//!
//! Each node type's raw feature vector passes through a type-specific
//! dense projection into a shared hidden width (featureless types — link
//! tables — get a learned constant vector instead). Stacked relational
//! layers then update every node as
//!
//! ```text
//! h_v <- act( W0 h_v  +  sum_r mean_{u in N_r(v)} W_r h_u  +  b )
//! ```
//!
//! with one weight per edge type, relu on hidden layers and identity on
//! the last. The final states of the seed nodes are the per-seed composite
//! embedding batch.
//!
//! Training goes through [`Propagator::forward`] (tape-recorded, optional
//! dropout); inference can use [`Propagator::infer`], which performs the
//! identical arithmetic without recording and returns bit-equal outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{HeteroGraph, SampledBlock};
use crate::nn::tensor;
use crate::nn::{dropout_mask, NodeId, ParamId, Params, Tape, Tensor};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("sampled block has {block} layers but the network has {net}")]
    DepthMismatch { block: usize, net: usize },
}

/// How one node type enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeInput {
    /// Dense projection of the type's raw features to the hidden width.
    Projection(ParamId),
    /// Learned constant row for featureless types.
    Constant(ParamId),
}

/// One message-passing layer: a self weight, one weight per edge type,
/// and a bias. All weights share the hidden width.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalLayer {
    pub w_self: ParamId,
    pub w_rel: Vec<ParamId>,
    pub bias: ParamId,
}

/// The full propagation network for one graph's type signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub hidden: usize,
    pub inputs: Vec<NodeInput>,
    pub layers: Vec<RelationalLayer>,
    /// Hidden-state dropout rate; applied only in
    /// [`Propagator::forward_with_dropout`].
    pub dropout: f64,
}

/// Label-masked replacement features for one node type: every block node
/// flagged as a seed occurrence reads its row from this tensor instead of
/// the graph's full feature matrix.
pub type MaskedFeatures<'a> = Option<(usize, &'a Tensor)>;

impl Propagator {
    /// Registers all parameters for `graph`'s type signature. Node types
    /// with attached features get projections sized to their feature
    /// width; the rest get learned constants.
    pub fn init(
        params: &mut Params,
        rng: &mut impl Rng,
        graph: &HeteroGraph,
        hidden: usize,
        layers: usize,
        dropout: f64,
    ) -> Propagator {
        let inputs = graph
            .node_types
            .iter()
            .enumerate()
            .map(|(t, nt)| match &graph.node_features[t] {
                Some(f) => NodeInput::Projection(params.glorot_uniform(
                    &format!("prop.in.{}", nt.name),
                    f.cols,
                    hidden,
                    rng,
                )),
                None => NodeInput::Constant(params.glorot_uniform(
                    &format!("prop.const.{}", nt.name),
                    1,
                    hidden,
                    rng,
                )),
            })
            .collect();
        let layers = (0..layers)
            .map(|l| RelationalLayer {
                w_self: params.glorot_uniform(&format!("prop.l{l}.self"), hidden, hidden, rng),
                w_rel: graph
                    .edge_types
                    .iter()
                    .map(|et| {
                        params.glorot_uniform(
                            &format!("prop.l{l}.rel.{}", et.name),
                            hidden,
                            hidden,
                            rng,
                        )
                    })
                    .collect(),
                bias: params.zeros(&format!("prop.l{l}.bias"), 1, hidden),
            })
            .collect();
        Propagator { hidden, inputs, layers, dropout }
    }

    /// Raw feature row for one block node, honoring the label mask.
    fn feature_row<'a>(
        graph: &'a HeteroGraph,
        masked: MaskedFeatures<'a>,
        ty: usize,
        row: usize,
        is_masked: bool,
    ) -> &'a [f64] {
        if is_masked {
            if let Some((mt, m)) = masked {
                if mt == ty {
                    return m.row(row);
                }
            }
        }
        graph.node_features[ty].as_ref().expect("projection type has features").row(row)
    }

    /// Groups the block's base level by node type; returns, per type, the
    /// list of `(level-0 position, graph row, masked)` entries.
    fn group_by_type(
        &self,
        block: &SampledBlock,
    ) -> Vec<Vec<(usize, usize, bool)>> {
        let mut groups: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); self.inputs.len()];
        for (pos, &id) in block.levels[0].iter().enumerate() {
            let id = id as usize;
            groups[block.node_ty[id] as usize].push((
                pos,
                block.node_row[id] as usize,
                block.node_masked[id],
            ));
        }
        groups
    }

    /// Projects every base-level node to the hidden width, in level-0
    /// order: type-specific dense projections for featured types, learned
    /// constants for the rest.
    pub fn init_node_inputs(
        &self,
        tape: &mut Tape,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
    ) -> NodeId {
        let n0 = block.levels[0].len();
        if n0 == 0 {
            return tape.constant(Tensor::zeros(0, self.hidden));
        }
        let groups = self.group_by_type(block);
        let mut stacked: Option<NodeId> = None;
        let mut perm = vec![0usize; n0];
        let mut offset = 0usize;
        for (t, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let chunk = match self.inputs[t] {
                NodeInput::Projection(w) => {
                    let rows: Vec<Vec<f64>> = group
                        .iter()
                        .map(|&(_, row, m)| Self::feature_row(graph, masked, t, row, m).to_vec())
                        .collect();
                    let x = tape.constant(Tensor::from_rows(&rows));
                    let w = tape.param(params, w);
                    tape.matmul(x, w)
                }
                NodeInput::Constant(c) => {
                    let c = tape.param(params, c);
                    tape.broadcast_row(c, group.len())
                }
            };
            for (i, &(pos, _, _)) in group.iter().enumerate() {
                perm[pos] = offset + i;
            }
            offset += group.len();
            stacked = Some(match stacked {
                Some(prev) => tape.stack_rows(prev, chunk),
                None => chunk,
            });
        }
        let stacked = stacked.expect("non-empty block has at least one type group");
        tape.gather_rows(stacked, &perm)
    }

    /// Tapeless twin of [`Propagator::init_node_inputs`].
    fn init_node_inputs_plain(
        &self,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
    ) -> Tensor {
        let n0 = block.levels[0].len();
        if n0 == 0 {
            return Tensor::zeros(0, self.hidden);
        }
        let groups = self.group_by_type(block);
        let mut stacked: Option<Tensor> = None;
        let mut perm = vec![0usize; n0];
        let mut offset = 0usize;
        for (t, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let chunk = match self.inputs[t] {
                NodeInput::Projection(w) => {
                    let rows: Vec<Vec<f64>> = group
                        .iter()
                        .map(|&(_, row, m)| Self::feature_row(graph, masked, t, row, m).to_vec())
                        .collect();
                    tensor::matmul(&Tensor::from_rows(&rows), params.value(w))
                }
                NodeInput::Constant(c) => tensor::broadcast_row(params.value(c), group.len()),
            };
            for (i, &(pos, _, _)) in group.iter().enumerate() {
                perm[pos] = offset + i;
            }
            offset += group.len();
            stacked = Some(match stacked {
                Some(prev) => tensor::stack_rows(&prev, &chunk),
                None => chunk,
            });
        }
        tensor::gather_rows(&stacked.expect("non-empty block"), &perm)
    }

    fn check_depth(&self, block: &SampledBlock) -> Result<(), PropagationError> {
        if block.layers != self.layers.len() {
            return Err(PropagationError::DepthMismatch {
                block: block.layers,
                net: self.layers.len(),
            });
        }
        Ok(())
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, PropagationError> {
        self.check_depth(block)?;
        let mut h = self.init_node_inputs(tape, params, graph, block, masked);
        for d in 1..=block.layers {
            let layer = &self.layers[d - 1];
            let n_d = block.levels[d].len();
            let self_pos: Vec<usize> =
                block.self_pos[d - 1].iter().map(|&p| p as usize).collect();
            let self_h = tape.gather_rows(h, &self_pos);
            let w0 = tape.param(params, layer.w_self);
            let mut acc = tape.matmul(self_h, w0);
            for mb in &block.bundles[d - 1] {
                let src: Vec<usize> = mb.src_pos.iter().map(|&p| p as usize).collect();
                let seg: Vec<usize> = mb.dst_seg.iter().map(|&p| p as usize).collect();
                let gathered = tape.gather_rows(h, &src);
                let mean = tape.segment_mean(gathered, &seg, n_d);
                let wr = tape.param(params, layer.w_rel[mb.edge_type as usize]);
                let msg = tape.matmul(mean, wr);
                acc = tape.add(acc, msg);
            }
            let bias = tape.param(params, layer.bias);
            acc = tape.add(acc, bias);
            let last = d == block.layers;
            h = if last { acc } else { tape.relu(acc) };
            if !last && self.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let mask = dropout_mask(n_d, self.hidden, self.dropout, rng);
                    h = tape.mul_const(h, mask);
                }
            }
        }
        Ok(h)
    }

    /// Tape-recorded forward pass without dropout; the returned node holds
    /// one embedding row per seed, in batch order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
    ) -> Result<NodeId, PropagationError> {
        self.forward_impl(tape, params, graph, block, masked, None)
    }

    /// Training forward pass: hidden states are dropout-masked with this
    /// network's rate, drawing from `rng`.
    pub fn forward_with_dropout(
        &self,
        tape: &mut Tape,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, PropagationError> {
        self.forward_impl(tape, params, graph, block, masked, Some(rng))
    }

    /// Inference fast path: the same arithmetic as [`Propagator::forward`]
    /// with no tape bookkeeping. Outputs are bit-identical.
    pub fn infer(
        &self,
        params: &Params,
        graph: &HeteroGraph,
        block: &SampledBlock,
        masked: MaskedFeatures,
    ) -> Result<Tensor, PropagationError> {
        self.check_depth(block)?;
        let mut h = self.init_node_inputs_plain(params, graph, block, masked);
        for d in 1..=block.layers {
            let layer = &self.layers[d - 1];
            let n_d = block.levels[d].len();
            let self_pos: Vec<usize> =
                block.self_pos[d - 1].iter().map(|&p| p as usize).collect();
            let self_h = tensor::gather_rows(&h, &self_pos);
            let mut acc = tensor::matmul(&self_h, params.value(layer.w_self));
            for mb in &block.bundles[d - 1] {
                let src: Vec<usize> = mb.src_pos.iter().map(|&p| p as usize).collect();
                let seg: Vec<usize> = mb.dst_seg.iter().map(|&p| p as usize).collect();
                let gathered = tensor::gather_rows(&h, &src);
                let mean = tensor::segment_mean(&gathered, &seg, n_d);
                let msg = tensor::matmul(&mean, params.value(layer.w_rel[mb.edge_type as usize]));
                acc = tensor::add(&acc, &msg);
            }
            acc = tensor::add(&acc, params.value(layer.bias));
            h = if d == block.layers { acc } else { tensor::relu(&acc) };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests;
