//! Traffic scenario encoding: per-object sequence encoder, compact
//! convolutional map encoder, and the cross-attention merger that lets the
//! per-object and map latents interact.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Value};
use crate::error::{Error, Result};
use crate::nn::layers::{
    layernorm_fwd, linear_fwd, positional_encoding, register_layernorm, register_linear,
    AttentionBlock,
};
use crate::nn::params::{Init, ParamStore, TapeBinding};
use crate::scalar::Scalar;

/// Input features per history step: (x, y) position plus the five derived
/// attributes (vx, vy, accel, yaw, yaw rate), in normalized units.
pub const OBJECT_FEATURES: usize = 7;

/// Self-attention sequence encoder over one object's history; weights are
/// shared across all objects of a scenario.
pub struct ObjectEncoder {
    pub width: usize,
    pub blocks: Vec<AttentionBlock>,
}

impl ObjectEncoder {
    pub fn new(width: usize, blocks: usize, heads: usize, ff_width: usize) -> Self {
        Self {
            width,
            blocks: (0..blocks)
                .map(|i| AttentionBlock { name: format!("obj.blk{i}"), width, heads, ff_width })
                .collect(),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        register_linear(store, rng, "obj.embed", OBJECT_FEATURES, self.width, true);
        for block in &self.blocks {
            block.register(store, rng);
        }
        register_layernorm(store, rng, "obj.final_ln", self.width);
    }

    /// Encodes a history window (a [steps, OBJECT_FEATURES] tape value)
    /// under a per-step validity mask into one latent of `width`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        features: Value,
        mask: &[bool],
    ) -> Result<Value> {
        let steps = mask.len();
        if tape.shape(features) != vec![steps, OBJECT_FEATURES] {
            return Err(Error::dimension("object encoder feature shape"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::empty("object history fully masked"));
        }
        let mut x = linear_fwd(tape, bind, "obj.embed", features, true);
        x = tape.add(x, positional_encoding(tape, steps, self.width));
        let mask = Rc::new(mask.to_vec());
        for block in &self.blocks {
            x = block.forward(tape, bind, x, Some(mask.clone()));
        }
        let x = layernorm_fwd(tape, bind, "obj.final_ln", x);
        Ok(tape.masked_mean_rows(x, mask))
    }
}

/// Strided convolutional encoder of the drivable-area raster.
pub struct MapEncoder {
    pub width: usize,
    pub channels: Vec<usize>,
    pub input_size: [usize; 2],
}

impl MapEncoder {
    pub fn new(width: usize, channels: Vec<usize>, input_size: [usize; 2]) -> Self {
        Self { width, channels, input_size }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let mut c_in = 1usize;
        for (i, &c_out) in self.channels.iter().enumerate() {
            store.add(
                &format!("map.conv{i}.k"),
                vec![c_out, c_in, 3, 3],
                Init::Xavier { fan_in: c_in * 9, fan_out: c_out * 9 },
                rng,
            );
            store.add(&format!("map.conv{i}.b"), vec![c_out], Init::Zeros, rng);
            c_in = c_out;
        }
        register_linear(store, rng, "map.proj", c_in, self.width, true);
    }

    /// Encodes a drivable image (a [1, height, width] tape value).
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        image: Value,
    ) -> Result<Value> {
        let shape = tape.shape(image);
        if shape != vec![1, self.input_size[0], self.input_size[1]] {
            return Err(Error::dimension(format!(
                "map encoder expects 1x{}x{}, got {shape:?}",
                self.input_size[0], self.input_size[1]
            )));
        }
        let mut x = image;
        for i in 0..self.channels.len() {
            let k = bind.get(&format!("map.conv{i}.k"));
            let b = bind.get(&format!("map.conv{i}.b"));
            x = tape.relu(tape.conv2d(x, k, b, 2, 1));
        }
        let pooled = tape.global_avg_pool(x);
        Ok(linear_fwd(tape, bind, "map.proj", pooled, true))
    }
}

/// Cross-attention merger over the map latent and the per-object latents.
///
/// Tokens carry only a learned map/object type embedding (no positional
/// encoding), so outputs are equivariant under permutation of the object
/// tokens while the map token stays put.
pub struct LatentMerger {
    pub width: usize,
    pub blocks: Vec<AttentionBlock>,
}

/// Merged per-token latents.
pub struct MergedLatents {
    pub map: Value,
    pub objects: Vec<Value>,
}

impl LatentMerger {
    pub fn new(width: usize, blocks: usize, heads: usize, ff_width: usize) -> Self {
        Self {
            width,
            blocks: (0..blocks)
                .map(|i| AttentionBlock { name: format!("merge.blk{i}"), width, heads, ff_width })
                .collect(),
        }
    }

    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        store.add(
            "merge.type_map",
            vec![self.width],
            Init::Xavier { fan_in: self.width, fan_out: self.width },
            rng,
        );
        store.add(
            "merge.type_obj",
            vec![self.width],
            Init::Xavier { fan_in: self.width, fan_out: self.width },
            rng,
        );
        for block in &self.blocks {
            block.register(store, rng);
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        map_latent: Value,
        object_latents: &[Value],
    ) -> Result<MergedLatents> {
        if object_latents.is_empty() {
            return Err(Error::empty("merger needs at least one object latent"));
        }
        let type_map = bind.get("merge.type_map");
        let type_obj = bind.get("merge.type_obj");
        let mut rows = Vec::with_capacity(object_latents.len() + 1);
        rows.push(tape.add(map_latent, type_map));
        for &z in object_latents {
            rows.push(tape.add(z, type_obj));
        }
        let mut tokens = tape.stack_rows(&rows);
        for block in &self.blocks {
            tokens = block.forward(tape, bind, tokens, None);
        }
        Ok(MergedLatents {
            map: tape.row(tokens, 0),
            objects: (0..object_latents.len()).map(|i| tape.row(tokens, i + 1)).collect(),
        })
    }
}
