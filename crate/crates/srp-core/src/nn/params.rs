//! Named trainable parameters with gradient accumulators, Adam state, and
//! a flat binary checkpoint format.

use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// The trainable state of one model: parameter values, their gradient
/// accumulators, and per-parameter Adam moments. One `Params` belongs to
/// one training context; nothing here is shared.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<Entry>,
    step: u64,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let (rows, cols) = value.shape();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(rows, cols),
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
        });
        ParamId(self.entries.len() - 1)
    }

    /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), the usual
    /// variance-preserving bound for layers of this shape.
    pub fn glorot_uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor) {
        self.entries[id.0].grad.add_assign(delta);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data.fill(0.0);
        }
    }

    /// One Adam update over every parameter with the standard defaults
    /// (beta1 0.9, beta2 0.999, epsilon 1e-8); gradients are zeroed after.
    pub fn adam_step(&mut self, lr: f64) {
        self.adam_step_with(lr, 0.9, 0.999, 1e-8);
    }

    pub fn adam_step_with(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for e in &mut self.entries {
            for i in 0..e.value.data.len() {
                let g = e.grad.data[i];
                e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
                e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
                let m_hat = e.m.data[i] / bc1;
                let v_hat = e.v.data[i] / bc2;
                e.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            e.grad.data.fill(0.0);
        }
    }

    /// Copies of all parameter values, for best-epoch restore.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot size mismatch");
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(e.value.shape(), t.shape(), "snapshot shape mismatch for {}", e.name);
            e.value = t.clone();
        }
    }

    /// Writes a checkpoint: magic + version, a header of (name, rows, cols)
    /// entries, then every tensor's row-major float64 payload in the same
    /// order, all little-endian. Optimizer state is deliberately not saved.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(e.value.rows as u64).to_le_bytes())?;
            w.write_all(&(e.value.cols as u64).to_le_bytes())?;
        }
        for e in &self.entries {
            for v in &e.value.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    /// Reads a checkpoint written by [`Params::save`]. Gradients and Adam
    /// moments start fresh.
    pub fn load(path: &Path) -> io::Result<Params> {
        let mut r = io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad_data("not a parameter checkpoint"));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(bad_data(&format!("unsupported checkpoint version {version}")));
        }
        let count = read_u64(&mut r)? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad_data("non-UTF8 parameter name"))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            shapes.push((name, rows, cols));
        }
        let mut params = Params::new();
        for (name, rows, cols) in shapes {
            let mut data = vec![0.0; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            params.add(&name, Tensor::from_vec(rows, cols, data));
        }
        Ok(params)
    }
}

const MAGIC: &[u8; 4] = b"SRPK";

fn bad_data(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
