//! The full lifting network: input Flex-GConv + GELU, residual blocks of three
//! Flex-GConv layers, global response normalization and a linear Flex-GConv
//! head producing `N×3` coordinates.

mod checkpoint;
mod params;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use params::{CensusRow, ModelParams, ParameterCensus};

use crate::error::{Error, Result};
use crate::graph::{
    init_modulation, normalize_adjacency, BoundPropagation, PropagationOperator, SkeletonGraph,
};
use crate::layers::{
    dropout_on, flex_gconv_on, grn_on, layer_norm_on, Activation, FlexGConvLayer, FlexGConvVars,
    GrnLayer, GrnVars, LayerNormLayer, LayerNormVars, Mode,
};
use crate::numerics::{Matrix, Tape, Var};

/// Input width: normalized 2D joint coordinates.
pub const INPUT_WIDTH: usize = 2;
/// Output width: 3D joint coordinates.
pub const OUTPUT_WIDTH: usize = 3;

/// What the initial residual term `X·W̃` of layers after the first one sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    /// The raw `N×2` network input.
    Input,
    /// The output of the input layer (`N×F`).
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub s: f64,
    pub irc: bool,
    pub modulation: bool,
    pub symmetry: bool,
    pub per_layer_modulation: bool,
    pub block_residual: bool,
    pub residual_source: ResidualSource,
    pub dropout: f64,
    pub q_init_bound: f64,
    pub ln_eps: f64,
    pub grn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 384,
            blocks: 4,
            s: 0.2,
            irc: true,
            modulation: true,
            symmetry: true,
            per_layer_modulation: false,
            block_residual: true,
            residual_source: ResidualSource::Input,
            dropout: 0.2,
            q_init_bound: 0.01,
            ln_eps: LayerNormLayer::DEFAULT_EPS,
            grn_eps: GrnLayer::DEFAULT_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Config(format!("s = {} outside [0, 1]", self.s)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout = {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn residual_width_after_input(&self) -> usize {
        match self.residual_source {
            ResidualSource::Input => INPUT_WIDTH,
            ResidualSource::Embedding => self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub convs: [FlexGConvLayer; 3],
    pub norms: [LayerNormLayer; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexGcnModel {
    config: ModelConfig,
    skeleton: SkeletonGraph,
    prop: PropagationOperator,
    input_layer: FlexGConvLayer,
    blocks: Vec<ResidualBlock>,
    grn: GrnLayer,
    output_layer: FlexGConvLayer,
    /// One `Q` per graph convolution when `per_layer_modulation` is set.
    layer_q: Vec<Matrix>,
}

fn conv_prefixes(blocks: usize) -> Vec<String> {
    let mut names = vec!["input".to_string()];
    for b in 0..blocks {
        for k in 0..3 {
            names.push(format!("block{b}.conv{k}"));
        }
    }
    names.push("output".to_string());
    names
}

/// Parameters registered on a tape, addressable by name.
pub struct BoundParams {
    vars: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    fn new() -> Self {
        Self {
            vars: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, name: String, var: Var) {
        self.index.insert(name.clone(), self.vars.len());
        self.vars.push((name, var));
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i].1)
    }

    fn require(&self, name: &str) -> Result<Var> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

impl FlexGcnModel {
    /// Builds a model with seeded initialization: Glorot-uniform weights,
    /// LayerNorm scale 1 / shift 0, GRN gamma = beta = 0 and symmetric `Q`
    /// uniform in `±q_init_bound`.
    pub fn new(config: ModelConfig, skeleton: SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = skeleton.n_joints();
        let f = config.hidden;
        let a_hat = normalize_adjacency(&skeleton)?;
        let mut prop = PropagationOperator::new(a_hat, config.s)?;
        if config.modulation {
            let q = if config.per_layer_modulation {
                Matrix::zeros(n, n)
            } else {
                init_modulation(n, config.q_init_bound, &mut rng)
            };
            prop = prop.with_modulation(q, config.symmetry)?;
        }

        let irc = |width: usize| config.irc.then_some(width);
        let rw = config.residual_width_after_input();
        let input_layer = FlexGConvLayer::new(INPUT_WIDTH, f, irc(INPUT_WIDTH), &mut rng);
        let blocks = (0..config.blocks)
            .map(|_| ResidualBlock {
                convs: [
                    FlexGConvLayer::new(f, f, irc(rw), &mut rng),
                    FlexGConvLayer::new(f, f, irc(rw), &mut rng),
                    FlexGConvLayer::new(f, f, irc(rw), &mut rng),
                ],
                norms: [LayerNormLayer::new(f), LayerNormLayer::new(f)].map(|mut ln| {
                    ln.eps = config.ln_eps;
                    ln
                }),
            })
            .collect();
        let mut grn = GrnLayer::new(f);
        grn.eps = config.grn_eps;
        let output_layer = FlexGConvLayer::new(f, OUTPUT_WIDTH, irc(rw), &mut rng);
        let layer_q = if config.modulation && config.per_layer_modulation {
            (0..config.blocks * 3 + 2)
                .map(|_| init_modulation(n, config.q_init_bound, &mut rng))
                .collect()
        } else {
            Vec::new()
        };

        Ok(Self {
            config,
            skeleton,
            prop,
            input_layer,
            blocks,
            grn,
            output_layer,
            layer_q,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn skeleton(&self) -> &SkeletonGraph {
        &self.skeleton
    }

    pub fn n_joints(&self) -> usize {
        self.skeleton.n_joints()
    }

    pub fn propagation(&self) -> &PropagationOperator {
        &self.prop
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn input_layer(&self) -> &FlexGConvLayer {
        &self.input_layer
    }

    pub fn output_layer(&self) -> &FlexGConvLayer {
        &self.output_layer
    }

    pub fn grn(&self) -> &GrnLayer {
        &self.grn
    }

    fn conv_slots<'a>(
        prefix: &str,
        layer: &'a FlexGConvLayer,
        q: Option<&'a Matrix>,
        out: &mut Vec<(String, &'a Matrix)>,
    ) {
        if let Some(q) = q {
            out.push((format!("{prefix}.q"), q));
        }
        out.push((format!("{prefix}.w"), &layer.w));
        if let Some(wt) = &layer.w_tilde {
            out.push((format!("{prefix}.w_tilde"), wt));
        }
    }

    /// Every learnable tensor in a fixed order.
    fn slots(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        let prefixes = conv_prefixes(self.blocks.len());
        let q_of = |i: usize| self.layer_q.get(i);
        if self.prop.modulation_enabled() && self.layer_q.is_empty() {
            out.push(("q".to_string(), self.prop.q()));
        }
        Self::conv_slots(&prefixes[0], &self.input_layer, q_of(0), &mut out);
        for (b, block) in self.blocks.iter().enumerate() {
            for k in 0..3 {
                let i = 1 + 3 * b + k;
                Self::conv_slots(&prefixes[i], &block.convs[k], q_of(i), &mut out);
                if k < 2 {
                    out.push((format!("block{b}.norm{k}.scale"), &block.norms[k].scale));
                    out.push((format!("block{b}.norm{k}.shift"), &block.norms[k].shift));
                }
            }
        }
        out.push(("grn.gamma".to_string(), &self.grn.gamma));
        out.push(("grn.beta".to_string(), &self.grn.beta));
        let last = prefixes.len() - 1;
        Self::conv_slots(&prefixes[last], &self.output_layer, q_of(last), &mut out);
        out
    }

    /// Snapshot of all learnable tensors, including `Q`.
    pub fn params(&self) -> ModelParams {
        ModelParams::from_entries(
            self.slots()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
        )
        .expect("parameter names are unique")
    }

    /// Replaces every learnable tensor. Names and shapes must match
    /// [`params`](Self::params) exactly.
    pub fn set_params(&mut self, params: &ModelParams) -> Result<()> {
        let current = self.params();
        current.check_same_layout(params)?;
        let get = |name: &str| params.get(name).expect("layout checked").clone();

        if self.prop.modulation_enabled() && self.layer_q.is_empty() {
            self.prop.set_q(get("q"))?;
        }
        let prefixes = conv_prefixes(self.blocks.len());
        let assign = |prefix: &str, layer: &mut FlexGConvLayer| {
            layer.w = get(&format!("{prefix}.w"));
            if layer.w_tilde.is_some() {
                layer.w_tilde = Some(get(&format!("{prefix}.w_tilde")));
            }
        };
        assign(&prefixes[0], &mut self.input_layer);
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for k in 0..3 {
                assign(&prefixes[1 + 3 * b + k], &mut block.convs[k]);
            }
            for k in 0..2 {
                block.norms[k].scale = get(&format!("block{b}.norm{k}.scale"));
                block.norms[k].shift = get(&format!("block{b}.norm{k}.shift"));
            }
        }
        assign(&prefixes[prefixes.len() - 1], &mut self.output_layer);
        self.grn.gamma = get("grn.gamma");
        self.grn.beta = get("grn.beta");
        for (i, q) in self.layer_q.iter_mut().enumerate() {
            *q = get(&format!("{}.q", prefixes[i]));
        }
        Ok(())
    }

    pub fn parameter_census(&self) -> ParameterCensus {
        ParameterCensus::of(&self.params())
    }

    /// Registers all parameters on `tape` as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut bound = BoundParams::new();
        for (name, m) in self.slots() {
            let v = tape.param(m.clone());
            bound.push(name, v);
        }
        bound
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.n_joints(), INPUT_WIDTH) {
            return Err(Error::shape(
                "model input",
                (self.n_joints(), INPUT_WIDTH),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Records the forward pass on `tape` with parameters from `bound`.
    pub fn record<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.check_input(x)?;
        let cfg = &self.config;
        let prefixes = conv_prefixes(self.blocks.len());

        let shared = if self.layer_q.is_empty() {
            let q = if self.prop.modulation_enabled() {
                Some(bound.require("q")?)
            } else {
                None
            };
            Some(self.prop.bind(tape, q)?)
        } else {
            None
        };
        let prop_for = |tape: &mut Tape, prefix: &str| -> Result<BoundPropagation> {
            match shared {
                Some(p) => Ok(p),
                None => {
                    let q = bound.require(&format!("{prefix}.q"))?;
                    self.prop.bind(tape, Some(q))
                }
            }
        };
        let conv_vars = |prefix: &str, irc: bool| -> Result<FlexGConvVars> {
            Ok(FlexGConvVars {
                w: bound.require(&format!("{prefix}.w"))?,
                w_tilde: if irc {
                    Some(bound.require(&format!("{prefix}.w_tilde"))?)
                } else {
                    None
                },
            })
        };

        let x = tape.constant(x.clone());
        let p = prop_for(tape, &prefixes[0])?;
        let h0 = flex_gconv_on(
            tape,
            &p,
            &conv_vars(&prefixes[0], cfg.irc)?,
            x,
            x,
            Activation::Gelu,
        )?;
        let x0 = match cfg.residual_source {
            ResidualSource::Input => x,
            ResidualSource::Embedding => h0,
        };
        let mut h = dropout_on(tape, h0, cfg.dropout, mode, rng)?;

        for b in 0..self.blocks.len() {
            let block_in = h;
            for k in 0..3 {
                let prefix = &prefixes[1 + 3 * b + k];
                let p = prop_for(tape, prefix)?;
                let act = if k == 2 {
                    Activation::Gelu
                } else {
                    Activation::None
                };
                h = flex_gconv_on(tape, &p, &conv_vars(prefix, cfg.irc)?, h, x0, act)?;
                if k < 2 {
                    let ln = LayerNormVars {
                        scale: bound.require(&format!("block{b}.norm{k}.scale"))?,
                        shift: bound.require(&format!("block{b}.norm{k}.shift"))?,
                    };
                    h = layer_norm_on(tape, &ln, h, self.blocks[b].norms[k].eps)?;
                }
                h = dropout_on(tape, h, cfg.dropout, mode, rng)?;
            }
            if cfg.block_residual {
                h = tape.add(block_in, h)?;
            }
        }

        let grn = GrnVars {
            gamma: bound.require("grn.gamma")?,
            beta: bound.require("grn.beta")?,
        };
        h = grn_on(tape, &grn, h, self.grn.eps)?;
        let last = &prefixes[prefixes.len() - 1];
        let p = prop_for(tape, last)?;
        flex_gconv_on(
            tape,
            &p,
            &conv_vars(last, cfg.irc)?,
            h,
            x0,
            Activation::None,
        )
    }

    /// Predicted `N×3` coordinates (in training units).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, mode: Mode, rng: &mut R) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.record(&mut tape, &bound, x, mode, rng)?;
        Ok(tape.value(out).clone())
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        // eval mode never draws from the rng
        self.forward(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Weighted MSE/MAE loss against `y` and its gradient for every parameter.
    pub fn backward_step<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        y: &Matrix,
        alpha: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, ModelParams)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let y_hat = self.record(&mut tape, &bound, x, mode, rng)?;
        let loss = crate::training::loss_on(&mut tape, y_hat, y, alpha)?;
        let value = tape.value(loss).get(0, 0);
        let mut grads = tape.backward(loss)?;
        let entries = bound
            .iter()
            .map(|(name, v)| {
                let g = grads.take(v).expect("every bound parameter has a gradient");
                (name.to_string(), g)
            })
            .collect();
        Ok((value, ModelParams::from_entries(entries)?))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.config, &self.skeleton, &self.params())
    }

    /// Rebuilds a model from a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.verify_hash()?;
        let mut model = Self::new(ckpt.config.clone(), ckpt.skeleton.clone(), 0)?;
        model.load_checkpoint(ckpt)?;
        Ok(model)
    }

    /// Loads parameters, rejecting checkpoints written for another topology.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let expected = Checkpoint::hash_of(&self.config, &self.skeleton);
        if ckpt.config_hash != expected {
            return Err(Error::Topology(format!(
                "checkpoint hash {} does not match model hash {expected}",
                ckpt.config_hash
            )));
        }
        self.set_params(&ckpt.params()?)
    }
}
