//! Shared-weight recurrent action decoder.
//!
//! One gated recurrent (LSTM) cell, applied K times with shared weights. The
//! hidden state starts from the agent's merged latent; each step consumes an
//! environment snapshot (own last action, own position, mean position of the
//! other participants) and emits two raw action features, optionally squashed
//! onto the expert bounds by a sigmoid-affine head.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Value};
use crate::nn::layers::{linear_fwd, register_linear, LstmCell, LstmState};
use crate::nn::params::{ParamStore, TapeBinding};
use crate::objectives::BoundSpec;
use crate::scalar::Scalar;

/// Environment snapshot width fed to the cell each step.
pub const ENV_FEATURES: usize = 6;

pub struct ActionDecoder {
    pub hidden_width: usize,
    pub embed_width: usize,
    cell: LstmCell,
}

impl ActionDecoder {
    pub fn new(hidden_width: usize, embed_width: usize) -> Self {
        Self {
            hidden_width,
            embed_width,
            cell: LstmCell {
                name: "dec.lstm".to_string(),
                input_width: embed_width,
                hidden_width,
            },
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        register_linear(store, rng, "dec.in", ENV_FEATURES, self.embed_width, true);
        self.cell.register(store, rng);
        register_linear(store, rng, "dec.head", self.hidden_width, 2, true);
    }

    /// Initial recurrent state from an agent's merged latent.
    pub fn init_state<T: Scalar>(&self, tape: &Tape<T>, latent: Value) -> LstmState {
        LstmState {
            hidden: latent,
            cell: tape.leaf(vec![T::zero(); self.hidden_width], vec![self.hidden_width]),
        }
    }

    /// One decode step: env snapshot in, raw two-feature head out.
    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        state: LstmState,
        env: Value,
    ) -> (LstmState, Value) {
        let embedded = tape.tanh(linear_fwd(tape, bind, "dec.in", env, true));
        let next = self.cell.step(tape, bind, state, embedded);
        let head = linear_fwd(tape, bind, "dec.head", next.hidden, true);
        (next, head)
    }

    /// Sigmoid-affine squash of the raw head onto [lower, upper]: emitted
    /// features are strictly inside the bounds.
    pub fn squash<T: Scalar>(tape: &Tape<T>, raw: Value, bounds: &BoundSpec) -> Value {
        let lower = tape.leaf(
            vec![T::from_f64(bounds.lower[0]), T::from_f64(bounds.lower[1])],
            vec![2],
        );
        let range = tape.leaf(
            vec![
                T::from_f64(bounds.upper[0] - bounds.lower[0]),
                T::from_f64(bounds.upper[1] - bounds.lower[1]),
            ],
            vec![2],
        );
        tape.add(lower, tape.mul(range, tape.sigmoid(raw)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::ModelKind;
    use rand::SeedableRng;

    #[test]
    fn squash_stays_inside_bounds_even_when_saturated() {
        let bounds = BoundSpec::default_for(ModelKind::Ctra);
        let tape = Tape::<f64>::new();
        let raw = tape.leaf(vec![1e6, -1e6], vec![2]);
        let squashed = ActionDecoder::squash(&tape, raw, &bounds);
        let v = tape.value_vec(squashed);
        assert!(v[0] >= bounds.lower[0] && v[0] <= bounds.upper[0]);
        assert!(v[1] >= bounds.lower[1] && v[1] <= bounds.upper[1]);
    }

    #[test]
    fn decode_steps_are_deterministic() {
        let dec = ActionDecoder::new(8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::<f64>::new();
        dec.register(&mut store, &mut rng);
        let run = || {
            let tape = Tape::new();
            let bind = TapeBinding::bind(&store, &tape);
            let latent = tape.leaf((0..8).map(|i| (i as f64 * 0.2).sin()).collect(), vec![8]);
            let mut state = dec.init_state(&tape, latent);
            let mut outs = Vec::new();
            for step in 0..5 {
                let env = tape.leaf(vec![0.1 * step as f64; ENV_FEATURES], vec![ENV_FEATURES]);
                let (next, head) = dec.step(&tape, &bind, state, env);
                state = next;
                outs.extend(tape.value_vec(head));
            }
            outs
        };
        assert_eq!(run(), run());
    }
}
