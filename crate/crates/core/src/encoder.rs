//! Gated recurrent history encoder.
//!
//! Each event is featurized as `[embed(mark); ln dt; ln(dd + 1)]` and
//! projected linearly to the cell input. The cell is a GRU:
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! c  = tanh(Wc x + Uc (r * h) + bc)
//! h' = z * h + (1 - z) * c
//! ```
//!
//! The first event of a sequence has no predecessor, so its time and
//! distance features are both 0 (as if `dt = 1`, `dd = 0`). This keeps every
//! state a function of gaps only, never of absolute timestamps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{compute_deltas, Sequence};
use crate::heads::init_bound;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_emb: usize,
    pub d_in: usize,
    pub d_h: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_emb: 16, d_in: 16, d_h: 32 }
    }
}

/// Per-event encoder input before projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventInput {
    pub mark: usize,
    /// `ln dt`, or 0 for a first event.
    pub log_dt: f64,
    /// `ln(dd + 1)`, or 0 when locations are absent.
    pub log_dd1: f64,
}

impl EventInput {
    pub fn new(mark: usize, dt: f64, dd: Option<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("encoder input needs dt > 0, got {dt}")));
        }
        let log_dd1 = match dd {
            Some(d) if d >= 0.0 => d.ln_1p(),
            Some(d) => return Err(Error::invalid(format!("encoder input needs dd >= 0, got {d}"))),
            None => 0.0,
        };
        Ok(Self { mark, log_dt: dt.ln(), log_dd1 })
    }

    /// Input for an event without a predecessor.
    pub fn first(mark: usize) -> Self {
        Self { mark, log_dt: 0.0, log_dd1: 0.0 }
    }
}

/// Encoder inputs for every event of a sequence.
pub fn sequence_inputs(seq: &Sequence) -> Result<Vec<EventInput>> {
    let deltas = compute_deltas(seq)?;
    seq.events
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if k == 0 {
                Ok(EventInput::first(e.mark))
            } else {
                EventInput::new(e.mark, deltas.dt[k], deltas.dd_at(k))
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub num_marks: usize,
    pub embedding: ParamId,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_c: ParamId,
    pub u_c: ParamId,
    pub b_c: ParamId,
    pub s0: ParamId,
}

impl Encoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        num_marks: usize,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let EncoderConfig { d_emb, d_in, d_h } = config;
        if num_marks == 0 || d_emb == 0 || d_in == 0 || d_h == 0 {
            return Err(Error::invalid("encoder dimensions and vocabulary must be non-zero"));
        }
        let raw = d_emb + 2;
        let gate = init_bound(d_in + d_h);
        let mut add = |name: &str, r: usize, c: usize, b: f64| store.add_uniform(format!("{prefix}.{name}"), r, c, b, rng);
        Ok(Self {
            config,
            num_marks,
            embedding: add("embedding", num_marks, d_emb, 1.0)?,
            w_in: add("w_in", d_in, raw, init_bound(raw))?,
            b_in: add("b_in", d_in, 1, init_bound(raw))?,
            w_z: add("w_z", d_h, d_in, gate)?,
            u_z: add("u_z", d_h, d_h, gate)?,
            b_z: add("b_z", d_h, 1, gate)?,
            w_r: add("w_r", d_h, d_in, gate)?,
            u_r: add("u_r", d_h, d_h, gate)?,
            b_r: add("b_r", d_h, 1, gate)?,
            w_c: add("w_c", d_h, d_in, gate)?,
            u_c: add("u_c", d_h, d_h, gate)?,
            b_c: add("b_c", d_h, 1, gate)?,
            s0: add("s0", d_h, 1, gate)?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![
            self.embedding,
            self.w_in,
            self.b_in,
            self.w_z,
            self.u_z,
            self.b_z,
            self.w_r,
            self.u_r,
            self.b_r,
            self.w_c,
            self.u_c,
            self.b_c,
            self.s0,
        ]
    }

    /// Draws a fresh embedding for a (possibly different) vocabulary.
    pub fn reset_embedding<R: Rng>(&mut self, store: &mut ParamStore, num_marks: usize, rng: &mut R) {
        let d = self.config.d_emb;
        let data = (0..num_marks * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        store.replace(self.embedding, Tensor::from_vec(num_marks, d, data));
        self.num_marks = num_marks;
    }

    pub fn initial_state_var(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        tape.param(store, self.s0)
    }

    /// Projected input vector for one event.
    pub fn featurize_var(&self, tape: &mut Tape, store: &ParamStore, input: EventInput) -> Result<Var> {
        let log_dt = tape.constant_scalar(input.log_dt);
        self.featurize_parts_var(tape, store, input.mark, log_dt, input.log_dd1)
    }

    /// Like [`Encoder::featurize_var`] with `ln dt` supplied as a tape node,
    /// so gradients can reach sampled gaps.
    pub fn featurize_parts_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mark: usize,
        log_dt: Var,
        log_dd1: f64,
    ) -> Result<Var> {
        if mark >= self.num_marks {
            return Err(Error::invalid(format!("mark {mark} outside encoder vocabulary {}", self.num_marks)));
        }
        let emb = tape.param(store, self.embedding);
        let e = tape.row(emb, mark)?;
        let dd = tape.constant_scalar(log_dd1);
        let raw = tape.concat(&[e, log_dt, dd])?;
        let w = tape.param(store, self.w_in);
        let b = tape.param(store, self.b_in);
        Ok(tape.affine(w, raw, b)?)
    }

    pub fn featurize(&self, store: &ParamStore, input: EventInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.featurize_var(&mut tape, store, input)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// One gated update of `state` with input `x`.
    pub fn step_var(&self, tape: &mut Tape, store: &ParamStore, state: Var, x: Var) -> Result<Var> {
        let d_h = self.config.d_h;
        if tape.value(state).shape() != (d_h, 1) {
            return Err(Error::invalid(format!("state shape {:?}, expected ({d_h}, 1)", tape.value(state).shape())));
        }
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, h: Var| -> Result<Var> {
            let w = tape.param(store, w);
            let u = tape.param(store, u);
            let b = tape.param(store, b);
            let wx = tape.matvec(w, x)?;
            let uh = tape.matvec(u, h)?;
            let s = tape.add(wx, uh)?;
            Ok(tape.add(s, b)?)
        };
        let z = gate(tape, self.w_z, self.u_z, self.b_z, state)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, self.w_r, self.u_r, self.b_r, state)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, state)?;
        let c = gate(tape, self.w_c, self.u_c, self.b_c, rh)?;
        let c = tape.tanh(c);
        // h' = c + z * (h - c)
        let diff = tape.sub(state, c)?;
        let zd = tape.mul(z, diff)?;
        Ok(tape.add(c, zd)?)
    }

    pub fn step(&self, store: &ParamStore, state: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let s = tape.constant_vector(state.to_vec());
        let xv = tape.constant_vector(x.to_vec());
        let out = self.step_var(&mut tape, store, s, xv)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `s_1 .. s_K` as tape nodes, starting from the learned initial state.
    pub fn encode_inputs_var(&self, tape: &mut Tape, store: &ParamStore, inputs: &[EventInput]) -> Result<Vec<Var>> {
        let mut state = self.initial_state_var(tape, store);
        let mut out = Vec::with_capacity(inputs.len());
        for &inp in inputs {
            let x = self.featurize_var(tape, store, inp)?;
            state = self.step_var(tape, store, state, x)?;
            out.push(state);
        }
        Ok(out)
    }

    pub fn encode_sequence(&self, store: &ParamStore, seq: &Sequence) -> Result<Vec<Vec<f64>>> {
        if seq.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let inputs = sequence_inputs(seq)?;
        let mut tape = Tape::new();
        let states = self.encode_inputs_var(&mut tape, store, &inputs)?;
        Ok(states.iter().map(|&s| tape.value(s).data().to_vec()).collect())
    }
}
