//! Network building blocks: pre-norm multi-head attention blocks, the gated
//! recurrent (LSTM) cell, and parameter registration helpers. Layers own
//! parameter names; forward passes look the leaves up in a [`TapeBinding`].

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Value};
use crate::nn::params::{Init, ParamStore, TapeBinding};
use crate::scalar::Scalar;

/// Registers a linear layer `name.w` [out, in] (+ `name.b`).
pub fn register_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    input: usize,
    output: usize,
    bias: bool,
) {
    store.add(&format!("{name}.w"), vec![output, input], Init::Xavier { fan_in: input, fan_out: output }, rng);
    if bias {
        store.add(&format!("{name}.b"), vec![output], Init::Zeros, rng);
    }
}

pub fn linear_fwd<T: Scalar>(tape: &Tape<T>, bind: &TapeBinding, name: &str, x: Value, bias: bool) -> Value {
    let w = bind.get(&format!("{name}.w"));
    let b = if bias { Some(bind.get(&format!("{name}.b"))) } else { None };
    tape.linear(x, w, b)
}

pub fn register_layernorm<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, width: usize) {
    store.add(&format!("{name}.g"), vec![width], Init::Ones, rng);
    store.add(&format!("{name}.b"), vec![width], Init::Zeros, rng);
}

pub fn layernorm_fwd<T: Scalar>(tape: &Tape<T>, bind: &TapeBinding, name: &str, x: Value) -> Value {
    tape.layernorm_rows(x, bind.get(&format!("{name}.g")), bind.get(&format!("{name}.b")))
}

/// One pre-norm transformer block: x + MHA(LN(x)), then x + FF(LN(x)).
pub struct AttentionBlock {
    pub name: String,
    pub width: usize,
    pub heads: usize,
    pub ff_width: usize,
}

impl AttentionBlock {
    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let d = self.width;
        register_layernorm(store, rng, &format!("{}.ln1", self.name), d);
        for proj in ["q", "k", "v"] {
            register_linear(store, rng, &format!("{}.{proj}", self.name), d, d, false);
        }
        register_linear(store, rng, &format!("{}.out", self.name), d, d, true);
        register_layernorm(store, rng, &format!("{}.ln2", self.name), d);
        register_linear(store, rng, &format!("{}.ff1", self.name), d, self.ff_width, true);
        register_linear(store, rng, &format!("{}.ff2", self.name), self.ff_width, d, true);
    }

    /// `mask`, when given, marks valid key positions; masked keys receive
    /// zero attention everywhere.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        x: Value,
        mask: Option<Rc<Vec<bool>>>,
    ) -> Value {
        let d_head = self.width / self.heads;
        let scale = T::from_f64(1.0 / (d_head as f64).sqrt());

        let normed = layernorm_fwd(tape, bind, &format!("{}.ln1", self.name), x);
        let q = linear_fwd(tape, bind, &format!("{}.q", self.name), normed, false);
        let k = linear_fwd(tape, bind, &format!("{}.k", self.name), normed, false);
        let v = linear_fwd(tape, bind, &format!("{}.v", self.name), normed, false);

        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * d_head, d_head);
            let kh = tape.slice_cols(k, h * d_head, d_head);
            let vh = tape.slice_cols(v, h * d_head, d_head);
            // q . k^T via the x.w^T form of linear.
            let scores = tape.mul_scalar(tape.linear(qh, kh, None), scale);
            let probs = tape.softmax_rows(scores, mask.clone());
            heads.push(tape.matmul(probs, vh));
        }
        let ctx = tape.concat_cols(&heads);
        let attn = linear_fwd(tape, bind, &format!("{}.out", self.name), ctx, true);
        let x = tape.add(x, attn);

        let normed = layernorm_fwd(tape, bind, &format!("{}.ln2", self.name), x);
        let ff = linear_fwd(tape, bind, &format!("{}.ff1", self.name), normed, true);
        let ff = tape.relu(ff);
        let ff = linear_fwd(tape, bind, &format!("{}.ff2", self.name), ff, true);
        tape.add(x, ff)
    }
}

/// LSTM cell state on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Value,
    pub cell: Value,
}

/// Single-layer LSTM cell; gate order in the stacked weights is
/// (input, forget, candidate, output).
pub struct LstmCell {
    pub name: String,
    pub input_width: usize,
    pub hidden_width: usize,
}

impl LstmCell {
    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let (i, h) = (self.input_width, self.hidden_width);
        store.add(&format!("{}.w_ih", self.name), vec![4 * h, i], Init::Xavier { fan_in: i, fan_out: h }, rng);
        store.add(&format!("{}.w_hh", self.name), vec![4 * h, h], Init::Xavier { fan_in: h, fan_out: h }, rng);
        store.add(&format!("{}.b", self.name), vec![4 * h], Init::LstmBias, rng);
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        state: LstmState,
        input: Value,
    ) -> LstmState {
        let h = self.hidden_width;
        let from_in = tape.linear(input, bind.get(&format!("{}.w_ih", self.name)), Some(bind.get(&format!("{}.b", self.name))));
        let from_h = tape.linear(state.hidden, bind.get(&format!("{}.w_hh", self.name)), None);
        let gates = tape.add(from_in, from_h);
        let i_gate = tape.sigmoid(tape.slice_cols(gates, 0, h));
        let f_gate = tape.sigmoid(tape.slice_cols(gates, h, h));
        let g_gate = tape.tanh(tape.slice_cols(gates, 2 * h, h));
        let o_gate = tape.sigmoid(tape.slice_cols(gates, 3 * h, h));
        let cell = tape.add(tape.mul(f_gate, state.cell), tape.mul(i_gate, g_gate));
        let hidden = tape.mul(o_gate, tape.tanh(cell));
        LstmState { hidden, cell }
    }
}

/// Sinusoidal position encoding rows for a sequence, as a constant leaf.
pub fn positional_encoding<T: Scalar>(tape: &Tape<T>, steps: usize, width: usize) -> Value {
    let mut values = Vec::with_capacity(steps * width);
    for pos in 0..steps {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let rate = (pos as f64) / 10000f64.powf(2.0 * pair / width as f64);
            values.push(T::from_f64(if i % 2 == 0 { rate.sin() } else { rate.cos() }));
        }
    }
    tape.leaf(values, vec![steps, width])
}
