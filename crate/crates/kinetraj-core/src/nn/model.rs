//! The full prediction network: encoders, merger, recurrent decoder, and the
//! motion-model integration of decoded actions into trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value};
use crate::error::{Error, Result};
use crate::motion::taped::{taped_cv_step, taped_ctra_step, taped_init, TapedState};
use crate::motion::{KinematicState, ModelKind};
use crate::nn::decoder::{ActionDecoder, ENV_FEATURES};
use crate::nn::encoder::{LatentMerger, MapEncoder, ObjectEncoder, OBJECT_FEATURES};
use crate::nn::params::{ParamStore, TapeBinding};
use crate::objectives::BoundSpec;
use crate::scalar::Scalar;

/// Input feature normalization (kept fixed, not learned).
pub const POS_SCALE: f64 = 0.1;
pub const VEL_SCALE: f64 = 0.1;
pub const ACC_SCALE: f64 = 0.125;
pub const YAW_SCALE: f64 = std::f64::consts::FRAC_1_PI;
pub const YAW_RATE_SCALE: f64 = 1.0 / 0.7;

/// Architecture and head configuration; part of the checkpoint fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Motion model integrating the decoded actions; None bypasses the
    /// motion model and decodes per-step position displacements directly.
    pub motion: Option<ModelKind>,
    /// Squash the action head onto the expert bounds.
    pub bounded_head: bool,
    pub bounds: BoundSpec,
    pub hidden_width: usize,
    pub encoder_blocks: usize,
    pub merger_blocks: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub conv_channels: Vec<usize>,
    /// Expected square raster edge, pixels.
    pub map_size: usize,
    pub decoder_embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            motion: Some(ModelKind::Ctra),
            bounded_head: true,
            bounds: BoundSpec::default_for(ModelKind::Ctra),
            hidden_width: 128,
            encoder_blocks: 2,
            merger_blocks: 2,
            heads: 4,
            ff_width: 256,
            conv_channels: vec![8, 16, 32, 64],
            map_size: 96,
            decoder_embed: 32,
        }
    }
}

impl ModelConfig {
    /// Env-feature scale of the two action slots.
    fn action_scale(&self) -> [f64; 2] {
        match self.motion {
            Some(ModelKind::Cv) => [VEL_SCALE, VEL_SCALE],
            Some(ModelKind::Ctra) => [ACC_SCALE, YAW_RATE_SCALE],
            None => [1.0, 1.0],
        }
    }
}

/// One agent's model-ready window.
#[derive(Debug, Clone)]
pub struct AgentInput {
    /// Normalized history features, row-major [steps, OBJECT_FEATURES].
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    /// Active agents are decoded and rolled out; the rest only provide
    /// context through the encoder and merger.
    pub active: bool,
    /// State at the window anchor (last history step), scenario frame.
    pub init: KinematicState<f64>,
    /// Action implied at the anchor, used as the first "previous action".
    pub anchor_action: [f64; 2],
}

/// One scenario's model-ready input.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub agents: Vec<AgentInput>,
    /// Drivable image in [0, 1], row-major, map_size^2 entries.
    pub map_image: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
}

/// Normalizes one history step into encoder features.
pub fn normalize_features(position: [f64; 2], attrs: &crate::scenario::Attributes) -> [f64; OBJECT_FEATURES] {
    [
        position[0] * POS_SCALE,
        position[1] * POS_SCALE,
        attrs.vx * VEL_SCALE,
        attrs.vy * VEL_SCALE,
        attrs.accel * ACC_SCALE,
        attrs.yaw * YAW_SCALE,
        attrs.yaw_rate * YAW_RATE_SCALE,
    ]
}

/// Decoded outputs for one active agent, as tape nodes.
pub struct AgentForward {
    /// Index into `ModelInput::agents`.
    pub agent: usize,
    /// Per-step bounded/raw action vectors (shape [2]); empty without a
    /// motion model.
    pub actions: Vec<Value>,
    /// Per-step positions after each step.
    pub positions: Vec<[Value; 2]>,
}

pub struct ForwardPass {
    pub agents: Vec<AgentForward>,
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    object_encoder: ObjectEncoder,
    map_encoder: MapEncoder,
    merger: LatentMerger,
    decoder: ActionDecoder,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let object_encoder = ObjectEncoder::new(
            config.hidden_width,
            config.encoder_blocks,
            config.heads,
            config.ff_width,
        );
        let map_encoder = MapEncoder::new(
            config.hidden_width,
            config.conv_channels.clone(),
            [config.map_size, config.map_size],
        );
        let merger = LatentMerger::new(
            config.hidden_width,
            config.merger_blocks,
            config.heads,
            config.ff_width,
        );
        let decoder = ActionDecoder::new(config.hidden_width, config.decoder_embed);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        object_encoder.register(&mut params, &mut rng);
        map_encoder.register(&mut params, &mut rng);
        merger.register(&mut params, &mut rng);
        decoder.register(&mut params, &mut rng);

        Self { config, params, object_encoder, map_encoder, merger, decoder }
    }

    /// Rebuilds the architecture around restored parameters.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Self {
        let mut model = Self::new(config, 0);
        assert_eq!(model.params.len(), params.len(), "parameter set mismatch");
        model.params = params;
        model
    }

    /// Casts parameters to another scalar type (e.g. f32 training weights
    /// into an f64 gradient-check model).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model::from_parts(self.config.clone(), self.params.cast())
    }

    /// Runs the full encoder/merger/decoder/motion stack on one scenario
    /// window, recording everything on `tape`.
    pub fn forward(&self, tape: &Tape<T>, input: &ModelInput) -> Result<ForwardPass> {
        let bind = TapeBinding::bind(&self.params, tape);
        self.forward_bound(tape, &bind, input)
    }

    /// As [`Self::forward`], with an existing parameter binding.
    pub fn forward_bound(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        input: &ModelInput,
    ) -> Result<ForwardPass> {
        if input.steps == 0 {
            return Err(Error::invalid_config("decode steps must be >= 1"));
        }
        if input.agents.is_empty() {
            return Err(Error::empty("model input has no agents"));
        }

        // Per-object latents (weights shared across objects).
        let mut latents = Vec::with_capacity(input.agents.len());
        for agent in &input.agents {
            let steps = agent.mask.len();
            let features = tape.leaf(
                agent.features.iter().map(|&v| T::from_f64(v)).collect(),
                vec![steps, OBJECT_FEATURES],
            );
            latents.push(self.object_encoder.forward(tape, bind, features, &agent.mask)?);
        }

        let image = tape.leaf(
            input.map_image.iter().map(|&v| T::from_f64(v)).collect(),
            vec![1, self.config.map_size, self.config.map_size],
        );
        let map_latent = self.map_encoder.forward(tape, bind, image)?;
        let merged = self.merger.forward(tape, bind, map_latent, &latents)?;

        self.decode_rollout(tape, bind, input, &merged.objects)
    }

    fn decode_rollout(
        &self,
        tape: &Tape<T>,
        bind: &TapeBinding,
        input: &ModelInput,
        latents: &[Value],
    ) -> Result<ForwardPass> {
        let active: Vec<usize> = (0..input.agents.len()).filter(|&i| input.agents[i].active).collect();
        if active.is_empty() {
            return Err(Error::empty("no active agents to decode"));
        }
        let dt = T::from_f64(input.dt);
        let action_scale = self.config.action_scale();

        struct AgentCtx {
            agent: usize,
            lstm: crate::nn::layers::LstmState,
            motion: TapedState,
            last_action: Value,
            actions: Vec<Value>,
            positions: Vec<[Value; 2]>,
        }

        let mut contexts: Vec<AgentCtx> = active
            .iter()
            .map(|&i| {
                let a = &input.agents[i];
                let motion = taped_init(tape, &cast_state::<T>(&a.init));
                AgentCtx {
                    agent: i,
                    lstm: self.decoder.init_state(tape, latents[i]),
                    motion,
                    last_action: tape.leaf(
                        vec![T::from_f64(a.anchor_action[0]), T::from_f64(a.anchor_action[1])],
                        vec![2],
                    ),
                    actions: Vec::with_capacity(input.steps),
                    positions: Vec::with_capacity(input.steps),
                }
            })
            .collect();

        // Context agents contribute their anchor position to the pooled
        // neighbor summary throughout.
        let held: Vec<[Value; 2]> = (0..input.agents.len())
            .filter(|i| !input.agents[*i].active)
            .map(|i| {
                let a = &input.agents[i];
                [tape.scalar_leaf(T::from_f64(a.init.x)), tape.scalar_leaf(T::from_f64(a.init.y))]
            })
            .collect();

        let scale_leaf = tape.leaf(
            vec![T::from_f64(action_scale[0]), T::from_f64(action_scale[1])],
            vec![2],
        );

        for _step in 0..input.steps {
            // Snapshot all positions before anyone moves this step.
            let snapshot: Vec<[Value; 2]> = contexts
                .iter()
                .map(|c| [c.motion.x, c.motion.y])
                .chain(held.iter().copied())
                .collect();

            for (slot, ctx) in contexts.iter_mut().enumerate() {
                let env = {
                    let normed_action = tape.mul(ctx.last_action, scale_leaf);
                    let own_x = tape.mul_scalar(ctx.motion.x, T::from_f64(POS_SCALE));
                    let own_y = tape.mul_scalar(ctx.motion.y, T::from_f64(POS_SCALE));
                    let (mean_x, mean_y) = if snapshot.len() > 1 {
                        let others_x: Vec<Value> = snapshot
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != slot)
                            .map(|(_, p)| p[0])
                            .collect();
                        let others_y: Vec<Value> = snapshot
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != slot)
                            .map(|(_, p)| p[1])
                            .collect();
                        let inv = T::from_f64(POS_SCALE / others_x.len() as f64);
                        (
                            tape.mul_scalar(tape.sum(tape.concat_flat(&others_x)), inv),
                            tape.mul_scalar(tape.sum(tape.concat_flat(&others_y)), inv),
                        )
                    } else {
                        (tape.scalar_leaf(T::zero()), tape.scalar_leaf(T::zero()))
                    };
                    let env = tape.concat_flat(&[normed_action, own_x, own_y, mean_x, mean_y]);
                    debug_assert_eq!(tape.shape(env), vec![ENV_FEATURES]);
                    env
                };

                let (next_lstm, head) = self.decoder.step(tape, bind, ctx.lstm, env);
                ctx.lstm = next_lstm;

                match self.config.motion {
                    Some(kind) => {
                        let action = if self.config.bounded_head {
                            ActionDecoder::squash(tape, head, &self.config.bounds)
                        } else {
                            head
                        };
                        let a0 = tape.index(action, 0);
                        let a1 = tape.index(action, 1);
                        ctx.motion = match kind {
                            ModelKind::Cv => taped_cv_step(tape, &ctx.motion, [a0, a1], dt),
                            ModelKind::Ctra => taped_ctra_step(tape, &ctx.motion, [a0, a1], dt),
                        };
                        ctx.actions.push(action);
                        ctx.last_action = action;
                    }
                    None => {
                        // Direct trajectory head: per-step displacement.
                        let dx = tape.index(head, 0);
                        let dy = tape.index(head, 1);
                        ctx.motion = TapedState {
                            x: tape.add(ctx.motion.x, dx),
                            y: tape.add(ctx.motion.y, dy),
                            yaw: ctx.motion.yaw,
                            speed: ctx.motion.speed,
                        };
                        ctx.last_action = head;
                    }
                }
                ctx.positions.push([ctx.motion.x, ctx.motion.y]);
            }
        }

        Ok(ForwardPass {
            agents: contexts
                .into_iter()
                .map(|c| AgentForward { agent: c.agent, actions: c.actions, positions: c.positions })
                .collect(),
        })
    }
}

fn cast_state<T: Scalar>(s: &KinematicState<f64>) -> KinematicState<T> {
    KinematicState {
        x: T::from_f64(s.x),
        y: T::from_f64(s.y),
        yaw: T::from_f64(s.yaw),
        speed: T::from_f64(s.speed),
        vx: T::from_f64(s.vx),
        vy: T::from_f64(s.vy),
    }
}
