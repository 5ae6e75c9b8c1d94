//! Dense row-major float64 matrices and the forward math shared by the
//! differentiation tape and the tape-free inference path.
//!
//! Shape mismatches panic: they are programming errors, not runtime
//! conditions, and every message names the offending shapes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length {} != {rows}x{cols}", data.len());
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows in tensor literal");
        Tensor { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// In-place elementwise addition of a same-shaped tensor.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn assert_same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op} shape mismatch: {}x{} vs {}x{}",
        a.rows,
        a.cols,
        b.rows,
        b.cols
    );
}

/// C = A · B. The inner loop skips zero entries of A, which makes one-hot
/// heavy inputs cheap without changing any nonzero accumulation order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols, b.rows,
        "matmul shape mismatch: {}x{} . {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// C = A · Bᵀ without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols, b.cols,
        "matmul_nt shape mismatch: {}x{} . ({}x{})ᵀ",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// C = Aᵀ · B without materializing the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.rows, b.rows,
        "matmul_tn shape mismatch: ({}x{})ᵀ . {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Tensor::zeros(a.cols, b.cols);
    for i in 0..a.rows {
        let brow = b.row(i);
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// Elementwise sum; a 1-row `b` broadcasts over every row of `a` (bias add).
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    if b.rows == 1 && a.rows != 1 {
        assert_eq!(a.cols, b.cols, "broadcast add shape mismatch: {}x{} + 1x{}", a.rows, a.cols, b.cols);
        let mut out = a.clone();
        for r in 0..out.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        return out;
    }
    assert_same_shape("add", a, b);
    let mut out = a.clone();
    out.add_assign(b);
    out
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Row-wise softmax with max-subtraction stabilization.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Horizontal concatenation: [A | B] for equal row counts.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "concat_cols row mismatch: {} vs {}", a.rows, b.rows);
    let cols = a.cols + b.cols;
    let mut out = Tensor::zeros(a.rows, cols);
    for r in 0..a.rows {
        out.row_mut(r)[..a.cols].copy_from_slice(a.row(r));
        out.row_mut(r)[a.cols..].copy_from_slice(b.row(r));
    }
    out
}

/// Vertical concatenation: `a`'s rows followed by `b`'s.
pub fn stack_rows(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "stack_rows col mismatch: {} vs {}", a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows + b.rows, a.cols);
    out.data[..a.data.len()].copy_from_slice(&a.data);
    out.data[a.data.len()..].copy_from_slice(&b.data);
    out
}

/// Column means over all rows, yielding a single row.
pub fn mean_rows(a: &Tensor) -> Tensor {
    assert!(a.rows > 0, "mean_rows on an empty tensor");
    let mut out = Tensor::zeros(1, a.cols);
    for r in 0..a.rows {
        for (o, &v) in out.data.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    let n = a.rows as f64;
    for o in &mut out.data {
        *o /= n;
    }
    out
}

/// Selects rows by index, duplicates allowed.
pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), a.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(a.row(i));
    }
    out
}

/// Mean of row groups: out[g] averages the rows i with seg[i] == g, in row
/// order; a group no row points at stays all-zero.
pub fn segment_mean(a: &Tensor, seg: &[usize], groups: usize) -> Tensor {
    assert_eq!(seg.len(), a.rows, "segment_mean needs one segment id per row");
    let mut out = Tensor::zeros(groups, a.cols);
    let mut counts = vec![0u32; groups];
    for (r, &g) in seg.iter().enumerate() {
        counts[g] += 1;
        for (o, &v) in out.row_mut(g).iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    for g in 0..groups {
        if counts[g] > 1 {
            let n = counts[g] as f64;
            for o in out.row_mut(g) {
                *o /= n;
            }
        }
    }
    out
}

/// Repeats a single row n times.
pub fn broadcast_row(a: &Tensor, n: usize) -> Tensor {
    assert_eq!(a.rows, 1, "broadcast_row expects a single row, got {}x{}", a.rows, a.cols);
    let mut out = Tensor::zeros(n, a.cols);
    for r in 0..n {
        out.row_mut(r).copy_from_slice(&a.data);
    }
    out
}

pub fn mul_elem(a: &Tensor, b: &Tensor) -> Tensor {
    assert_same_shape("mul_elem", a, b);
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(),
    }
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    a.map(|v| v * factor)
}

pub const PROB_FLOOR: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}
