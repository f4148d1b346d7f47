//! Named trainable parameters, the AdamW update, and checkpoint IO.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Result, SebotError};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))` with `fan_in` = rows.
    UniformFanIn,
    Constant(f64),
}

#[derive(Clone, Debug)]
struct ParamEntry {
    name: String,
    value: Matrix,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Registry of named parameters with Adam moment state. Registration order
/// is the update order, so runs are reproducible.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) {
        assert!(
            !self.index.contains_key(name),
            "parameter {name} registered twice"
        );
        let value = match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Constant(c) => Matrix::filled(rows, cols, c),
            Init::UniformFanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
            }
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: Matrix::zeros(rows, cols),
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
        });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn entry(&self, name: &str) -> &ParamEntry {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[idx]
    }

    fn entry_mut(&mut self, name: &str) -> &mut ParamEntry {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[idx]
    }

    pub fn value(&self, name: &str) -> &Matrix {
        &self.entry(name).value
    }

    pub fn grad_of(&self, name: &str) -> &Matrix {
        &self.entry(name).grad
    }

    pub fn set_value(&mut self, name: &str, value: Matrix) {
        let e = self.entry_mut(name);
        assert_eq!(e.value.shape(), value.shape(), "set_value shape mismatch");
        e.value = value;
    }

    /// Nudge one entry; used by the finite-difference checker.
    pub fn perturb(&mut self, name: &str, flat_index: usize, delta: f64) {
        let e = self.entry_mut(name);
        e.value.data_mut()[flat_index] += delta;
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Matrix) {
        let e = self.entry_mut(name);
        e.grad.add_assign(grad);
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = Matrix::zeros(e.grad.rows(), e.grad.cols());
        }
    }

    pub fn grads_are_zero(&self) -> bool {
        self.entries.iter().all(|e| e.grad.max_abs() == 0.0)
    }

    /// Copy of all parameter values in registration order.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Matrix]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot size mismatch");
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(e.value.shape(), s.shape(), "snapshot shape mismatch");
            e.value = s.clone();
        }
    }

    /// Decoupled-weight-decay Adam step over every registered parameter.
    /// Gradients are cleared afterwards.
    pub fn adamw_step(&mut self, cfg: &AdamWConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for e in &mut self.entries {
            let n = e.value.data().len();
            for i in 0..n {
                let g = e.grad.data()[i];
                let m = cfg.beta1 * e.m.data()[i] + (1.0 - cfg.beta1) * g;
                let v = cfg.beta2 * e.v.data()[i] + (1.0 - cfg.beta2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                let w = e.value.data()[i];
                e.value.data_mut()[i] =
                    w - cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w);
            }
            e.grad = Matrix::zeros(e.grad.rows(), e.grad.cols());
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 0.01,
            weight_decay: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SBOTCKPT";

/// Sidecar JSON written next to the binary parameter blob.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub config_hash: String,
}

/// Write `<prefix>.bin` (shape-headed parameter blob) and `<prefix>.json`
/// (manifest with names, shapes and the config hash).
pub fn save_checkpoint(store: &ParamStore, prefix: &Path, config_hash: &str) -> Result<()> {
    let bin_path = prefix.with_extension("bin");
    let file = File::create(&bin_path).map_err(|e| SebotError::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| SebotError::io(&bin_path, e);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&(store.entries.len() as u32).to_le_bytes())
        .map_err(io)?;
    for e in &store.entries {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&(e.value.rows() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(e.value.cols() as u32).to_le_bytes()).map_err(io)?;
        for v in e.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let manifest = CheckpointManifest {
        names: store.entries.iter().map(|e| e.name.clone()).collect(),
        shapes: store.entries.iter().map(|e| e.value.shape()).collect(),
        config_hash: config_hash.to_string(),
    };
    let json_path = prefix.with_extension("json");
    let file = File::create(&json_path).map_err(|e| SebotError::io(&json_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`]. Moment state starts
/// fresh; only values are persisted.
pub fn load_checkpoint(prefix: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let json_path = prefix.with_extension("json");
    let file = File::open(&json_path).map_err(|e| SebotError::io(&json_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(file))?;

    let bin_path = prefix.with_extension("bin");
    let file = File::open(&bin_path).map_err(|e| SebotError::io(&bin_path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| SebotError::io(&bin_path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SebotError::CheckpointMismatch(format!(
            "{} is not a checkpoint file",
            bin_path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    if count != manifest.names.len() {
        return Err(SebotError::CheckpointMismatch(format!(
            "blob has {count} parameters, manifest lists {}",
            manifest.names.len()
        )));
    }

    let mut store = ParamStore::new();
    for k in 0..count {
        r.read_exact(&mut u32buf).map_err(io)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes).map_err(|e| {
            SebotError::CheckpointMismatch(format!("parameter name not utf-8: {e}"))
        })?;
        r.read_exact(&mut u32buf).map_err(io)?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(io)?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        if manifest.names[k] != name || manifest.shapes[k] != (rows, cols) {
            return Err(SebotError::CheckpointMismatch(format!(
                "parameter {k} mismatch between blob ({name}, {rows}x{cols}) and manifest"
            )));
        }
        let mut data = vec![0.0f64; rows * cols];
        let mut f64buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut f64buf).map_err(io)?;
            *v = f64::from_le_bytes(f64buf);
        }
        let mut dummy_rng = NoRandom;
        store.register(&name, rows, cols, Init::Zeros, &mut dummy_rng);
        store.set_value(&name, Matrix::from_vec(rows, cols, data));
    }
    Ok((store, manifest))
}

/// Zero-init registration never draws randomness; this stub makes that
/// explicit.
struct NoRandom;

impl rand::RngCore for NoRandom {
    fn next_u32(&mut self) -> u32 {
        unreachable!("checkpoint loading must not draw randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("checkpoint loading must not draw randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("checkpoint loading must not draw randomness")
    }
}
