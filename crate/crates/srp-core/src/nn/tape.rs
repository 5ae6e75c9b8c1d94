//! Reverse-mode differentiation over a flat, topologically ordered tape.
//!
//! Every forward call pushes one node holding the computed value and enough
//! of the op to replay its local gradient. `backward` walks the tape once in
//! reverse, accumulating gradients into the referenced [`Params`] entries,
//! and consumes the tape. One tape serves one training step; inference goes
//! through the plain functions in [`super::tensor`] and never builds a tape.

use super::params::{ParamId, Params};
use super::tensor::{self, clamp_prob, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat(NodeId, NodeId),
    StackRows(NodeId, NodeId),
    MeanRows(NodeId),
    GatherRows { input: NodeId, idx: Vec<usize> },
    SegmentMean { input: NodeId, seg: Vec<usize>, counts: Vec<u32> },
    BroadcastRow { input: NodeId, rows: usize },
    MulConst { input: NodeId, factor: Tensor },
    Scale { input: NodeId, factor: f64 },
    Bce { probs: NodeId, targets: Vec<f64> },
    BceLogits { logits: NodeId, targets: Vec<f64> },
    CrossEntropy { probs: NodeId, labels: Vec<usize> },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
    Mse { pred: NodeId, targets: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// A leaf the gradient does not flow past.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// A leaf bound to a parameter: backward accumulates into its gradient.
    pub fn param(&mut self, params: &Params, id: ParamId) -> NodeId {
        self.push(params.value(id).clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Elementwise sum; a 1-row right operand broadcasts as a bias.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::add(self.value(a), self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = tensor::relu(self.value(a));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = tensor::sigmoid(self.value(a));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = tensor::softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::concat_cols(self.value(a), self.value(b));
        self.push(value, Op::Concat(a, b))
    }

    /// Vertical concatenation: `a`'s rows above `b`'s.
    pub fn stack_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = tensor::stack_rows(self.value(a), self.value(b));
        self.push(value, Op::StackRows(a, b))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let value = tensor::mean_rows(self.value(a));
        self.push(value, Op::MeanRows(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let value = tensor::gather_rows(self.value(a), idx);
        self.push(value, Op::GatherRows { input: a, idx: idx.to_vec() })
    }

    pub fn segment_mean(&mut self, a: NodeId, seg: &[usize], groups: usize) -> NodeId {
        let value = tensor::segment_mean(self.value(a), seg, groups);
        let mut counts = vec![0u32; groups];
        for &g in seg {
            counts[g] += 1;
        }
        self.push(value, Op::SegmentMean { input: a, seg: seg.to_vec(), counts })
    }

    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> NodeId {
        let value = tensor::broadcast_row(self.value(a), rows);
        self.push(value, Op::BroadcastRow { input: a, rows })
    }

    /// Elementwise product with a constant tensor (dropout masks and the
    /// like); the gradient flows only into the variable operand.
    pub fn mul_const(&mut self, a: NodeId, factor: Tensor) -> NodeId {
        let value = tensor::mul_elem(self.value(a), &factor);
        self.push(value, Op::MulConst { input: a, factor })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = tensor::scale(self.value(a), factor);
        self.push(value, Op::Scale { input: a, factor })
    }

    /// X·W + b with the bias broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Binary cross-entropy on probabilities, averaged over the batch.
    /// Probabilities are clamped to [1e-12, 1 - 1e-12] before the logs.
    pub fn bce(&mut self, probs: NodeId, targets: &[f64]) -> NodeId {
        let p = self.value(probs);
        assert_eq!(p.cols, 1, "bce expects one probability column, got {}", p.cols);
        assert_eq!(p.rows, targets.len(), "bce target count mismatch");
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let p = clamp_prob(p.data[i]);
            loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        self.push(Tensor::scalar(loss / n), Op::Bce { probs, targets: targets.to_vec() })
    }

    /// Binary cross-entropy straight from logits via the stable
    /// max(z,0) - z·y + ln(1 + e^-|z|) form; preferred in training loops.
    pub fn bce_logits(&mut self, logits: NodeId, targets: &[f64]) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.cols, 1, "bce_logits expects one logit column, got {}", z.cols);
        assert_eq!(z.rows, targets.len(), "bce_logits target count mismatch");
        let n = targets.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let z = z.data[i];
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        self.push(Tensor::scalar(loss / n), Op::BceLogits { logits, targets: targets.to_vec() })
    }

    /// Negative log-likelihood of the labeled class under given
    /// probabilities (clamped), averaged over the batch.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize]) -> NodeId {
        let p = self.value(probs);
        assert_eq!(p.rows, labels.len(), "cross_entropy label count mismatch");
        let n = labels.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= clamp_prob(p.get(i, y)).ln();
        }
        self.push(Tensor::scalar(loss / n), Op::CrossEntropy { probs, labels: labels.to_vec() })
    }

    /// Fused softmax + cross-entropy on logits, the numerically stable path
    /// for multiclass training.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.rows, labels.len(), "softmax_cross_entropy label count mismatch");
        let n = labels.len() as f64;
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        self.push(
            Tensor::scalar(loss / n),
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec() },
        )
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: NodeId, targets: Tensor) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), targets.shape(), "mse shape mismatch");
        let n = targets.data.len() as f64;
        let loss: f64 = p
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&x, &t)| (x - t) * (x - t))
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Mse { pred, targets })
    }

    /// Reverse pass from a scalar loss: local gradients flow backwards
    /// through every recorded op and accumulate (+=) into the parameters
    /// each leaf was bound to. Consumes the tape.
    pub fn backward(self, loss: NodeId, params: &mut Params) {
        assert!(
            self.nodes[loss.0].value.is_scalar(),
            "backward needs a scalar loss, got {}x{}",
            self.nodes[loss.0].value.rows,
            self.nodes[loss.0].value.cols
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        params.accumulate_grad(*id, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, &self.nodes[b.0].value);
                    let db = tensor::matmul_tn(&self.nodes[a.0].value, &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    let vb = &self.nodes[b.0].value;
                    if vb.rows == 1 && g.rows != 1 {
                        let mut db = Tensor::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (o, &v) in db.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    } else {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let input = &self.nodes[a.0].value;
                    let mut da = g;
                    for (dv, &x) in da.data.iter_mut().zip(&input.data) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    let mut da = g;
                    for (dv, &y) in da.data.iter_mut().zip(&s.data) {
                        *dv *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let s = &node.value;
                    let mut da = Tensor::zeros(s.rows, s.cols);
                    for r in 0..s.rows {
                        let srow = s.row(r);
                        let grow = g.row(r);
                        let dot: f64 = srow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                        for (o, (&sv, &gv)) in da.row_mut(r).iter_mut().zip(srow.iter().zip(grow)) {
                            *o = sv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[a.0].value.cols;
                    let mut da = Tensor::zeros(g.rows, ca);
                    let mut db = Tensor::zeros(g.rows, g.cols - ca);
                    for r in 0..g.rows {
                        da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::StackRows(a, b) => {
                    let ra = self.nodes[a.0].value.rows;
                    let na = ra * g.cols;
                    let mut da = Tensor::zeros(ra, g.cols);
                    da.data.copy_from_slice(&g.data[..na]);
                    let mut db = Tensor::zeros(g.rows - ra, g.cols);
                    db.data.copy_from_slice(&g.data[na..]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[a.0].value.rows;
                    let mut da = Tensor::zeros(rows, g.cols);
                    let inv = 1.0 / rows as f64;
                    for r in 0..rows {
                        for (o, &v) in da.row_mut(r).iter_mut().zip(&g.data) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::GatherRows { input, idx } => {
                    let src = &self.nodes[input.0].value;
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for (r, &srcrow) in idx.iter().enumerate() {
                        for (o, &v) in da.row_mut(srcrow).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::SegmentMean { input, seg, counts } => {
                    let src = &self.nodes[input.0].value;
                    let mut da = Tensor::zeros(src.rows, src.cols);
                    for (r, &gr) in seg.iter().enumerate() {
                        let inv = 1.0 / counts[gr] as f64;
                        for (o, &v) in da.row_mut(r).iter_mut().zip(g.row(gr)) {
                            *o = v * inv;
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::BroadcastRow { input, rows } => {
                    let mut da = Tensor::zeros(1, g.cols);
                    for r in 0..*rows {
                        for (o, &v) in da.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *input, da);
                }
                Op::MulConst { input, factor } => {
                    accumulate(&mut grads, *input, tensor::mul_elem(&g, factor));
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads, *input, tensor::scale(&g, *factor));
                }
                Op::Bce { probs, targets } => {
                    let p = &self.nodes[probs.0].value;
                    let gs = g.item();
                    let n = targets.len() as f64;
                    let mut da = Tensor::zeros(p.rows, 1);
                    for (i, &y) in targets.iter().enumerate() {
                        let raw = p.data[i];
                        // The clamp has zero slope outside the safe band.
                        if raw > tensor::PROB_FLOOR && raw < 1.0 - tensor::PROB_FLOOR {
                            da.data[i] = gs * ((1.0 - y) / (1.0 - raw) - y / raw) / n;
                        }
                    }
                    accumulate(&mut grads, *probs, da);
                }
                Op::BceLogits { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let gs = g.item();
                    let n = targets.len() as f64;
                    let s = tensor::sigmoid(z);
                    let mut da = Tensor::zeros(z.rows, 1);
                    for (i, &y) in targets.iter().enumerate() {
                        da.data[i] = gs * (s.data[i] - y) / n;
                    }
                    accumulate(&mut grads, *logits, da);
                }
                Op::CrossEntropy { probs, labels } => {
                    let p = &self.nodes[probs.0].value;
                    let gs = g.item();
                    let n = labels.len() as f64;
                    let mut da = Tensor::zeros(p.rows, p.cols);
                    for (i, &y) in labels.iter().enumerate() {
                        let raw = p.get(i, y);
                        if raw > tensor::PROB_FLOOR && raw < 1.0 - tensor::PROB_FLOOR {
                            da.set(i, y, -gs / (raw * n));
                        }
                    }
                    accumulate(&mut grads, *probs, da);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let z = &self.nodes[logits.0].value;
                    let gs = g.item();
                    let n = labels.len() as f64;
                    let mut da = tensor::softmax_rows(z);
                    for (i, &y) in labels.iter().enumerate() {
                        da.set(i, y, da.get(i, y) - 1.0);
                    }
                    for v in &mut da.data {
                        *v *= gs / n;
                    }
                    accumulate(&mut grads, *logits, da);
                }
                Op::Mse { pred, targets } => {
                    let p = &self.nodes[pred.0].value;
                    let gs = g.item();
                    let n = targets.data.len() as f64;
                    let mut da = Tensor::zeros(p.rows, p.cols);
                    for i in 0..p.data.len() {
                        da.data[i] = gs * 2.0 * (p.data[i] - targets.data[i]) / n;
                    }
                    accumulate(&mut grads, *pred, da);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
