use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use super::tensor::Tensor;
use super::AutodiffError;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    frozen: bool,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable tensors with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
    step: u64,
}

const MAGIC: &str = "CTES-PARAMS v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let (r, c) = value.shape();
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            frozen: false,
        });
        Ok(ParamId(id))
    }

    /// Adds a `rows x cols` tensor drawn from uniform(-bound, bound).
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, AutodiffError> {
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
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

    /// Replaces a parameter tensor, possibly with a new shape, and clears
    /// its gradient and optimizer moments.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        let (r, c) = value.shape();
        let e = &mut self.entries[id.0];
        e.value = value;
        e.grad = Tensor::zeros(r, c);
        e.m = Tensor::zeros(r, c);
        e.v = Tensor::zeros(r, c);
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.entries[id.0].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Drops Adam moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.step = 0;
        for e in &mut self.entries {
            e.m.fill(0.0);
            e.v.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries.iter().filter(|e| !e.frozen).map(|e| e.grad.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// One bias-corrected Adam update on every unfrozen parameter, then zero
    /// all gradients. Frozen parameters are left bit-identical.
    pub fn adam_step(&mut self, opt: &Adam) -> Result<(), AutodiffError> {
        if let Some(e) = self.entries.iter().find(|e| !e.frozen && !e.grad.is_finite()) {
            return Err(AutodiffError::NonFinite(format!("gradient of `{}`", e.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for e in self.entries.iter_mut().filter(|e| !e.frozen) {
            let g = e.grad.data();
            let m = e.m.data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * gi;
            }
            let v = e.v.data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * gi * gi;
            }
            let (m, v) = (e.m.data(), e.v.data());
            for ((w, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
        self.zero_grad();
        Ok(())
    }

    /// Writes every tensor as text. Values use Rust's shortest round-trip
    /// float formatting, so reloading is bit-exact.
    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "count {}", self.entries.len())?;
        for e in &self.entries {
            writeln!(w, "param {} {} {}", e.name, e.value.rows(), e.value.cols())?;
            let line: Vec<String> = e.value.data().iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`] into a fresh store.
    pub fn load<R: BufRead>(r: R) -> Result<Self, AutodiffError> {
        let bad = |msg: String| AutodiffError::Checkpoint(msg);
        let mut lines = r.lines();
        let mut next = || -> Result<String, AutodiffError> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of checkpoint".into()))?
                .map_err(|e| bad(e.to_string()))
        };
        let magic = next()?;
        if magic.trim() != MAGIC {
            return Err(bad(format!("bad magic string `{}`", magic.trim())));
        }
        let count_line = next()?;
        let count: usize = count_line
            .strip_prefix("count ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad count line `{count_line}`")))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let header = next()?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let [tag, name, rows, cols] = parts[..] else {
                return Err(bad(format!("bad param header `{header}`")));
            };
            if tag != "param" {
                return Err(bad(format!("bad param header `{header}`")));
            }
            let rows: usize = rows.parse().map_err(|_| bad(format!("bad rows in `{header}`")))?;
            let cols: usize = cols.parse().map_err(|_| bad(format!("bad cols in `{header}`")))?;
            let body = next()?;
            let data: Vec<f64> = body
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("bad value for `{name}`: {e}")))?;
            if data.len() != rows * cols {
                return Err(bad(format!(
                    "`{name}` declares {rows}x{cols} but has {} values",
                    data.len()
                )));
            }
            store.add(name, Tensor::from_vec(rows, cols, data))?;
        }
        Ok(store)
    }

    /// Copies values from `other` into this store, matching by name.
    /// Every parameter here must exist in `other` with the same shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), AutodiffError> {
        if other.len() != self.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .map(|id| other.value(id))
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing tensor `{}`", e.name)))?;
            if src.shape() != e.value.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        Ok(())
    }
}
