//! GRU cell with graph-convolutional gates, and the encoder-decoder model
//! built from it.

mod sampling;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use sampling::{sampling_probability, SamplingMode, SamplingSchedule};

use crate::cgc::{glorot, CgcConfig, CgcStack, Census, FactorIds, LayerGraph};
use crate::error::{invalid, shape_err, Result};
use crate::graphgen::FactorPair;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// Initial value of the reset and update gate biases.
pub const GATE_BIAS_INIT: f64 = 1.0;

/// Architecture hyperparameters of the forecaster.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub num_nodes: usize,
    /// Demand channels per node (pick-up, drop-off).
    pub channels: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub diffusion_steps: usize,
    pub horizon: usize,
    pub layer_graph: LayerGraph,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.num_nodes, self.channels, self.hidden_dim, self.embed_dim, self.layers, self.horizon].contains(&0) {
            return invalid(format!("model dimensions must be positive: {self:?}"));
        }
        if self.embed_dim > self.num_nodes {
            return invalid(format!("embedding dimension {} exceeds node count {}", self.embed_dim, self.num_nodes));
        }
        Ok(())
    }

    fn gate_config(&self) -> CgcConfig {
        CgcConfig {
            num_nodes: self.num_nodes,
            input_dim: self.channels + self.hidden_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            layers: self.layers,
            diffusion_steps: self.diffusion_steps,
        }
    }
}

/// Intermediate values of one recurrent step.
#[derive(Clone, Copy, Debug)]
pub struct GateTrace<'t, T: Scalar> {
    pub reset: Var<'t, T>,
    pub update: Var<'t, T>,
    pub candidate: Var<'t, T>,
    pub hidden: Var<'t, T>,
}

/// Three gate stacks sharing one learned graph, plus gate biases.
#[derive(Clone, Debug)]
pub struct CcgruCell {
    pub reset: CgcStack,
    pub update: CgcStack,
    pub candidate: CgcStack,
    pub reset_bias: ParamId,
    pub update_bias: ParamId,
    pub candidate_bias: ParamId,
    pub graph: Vec<FactorIds>,
    pub hidden_dim: usize,
}

impl CcgruCell {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &ModelConfig,
        graph_init: &FactorPair<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let gate = config.gate_config();
        let graph = match config.layer_graph {
            LayerGraph::Coupled => vec![FactorIds::register(store, &format!("{prefix}.graph"), graph_init)?],
            LayerGraph::Independent => (0..config.layers)
                .map(|m| FactorIds::register(store, &format!("{prefix}.graph{m}"), graph_init))
                .collect::<Result<_>>()?,
        };
        let mut stack = |name: &str| CgcStack::register(store, &format!("{prefix}.{name}"), gate, &graph, config.layer_graph, rng);
        let reset = stack("reset")?;
        let update = stack("update")?;
        let candidate = stack("candidate")?;
        let b = config.hidden_dim;
        let gate_bias = T::lit(GATE_BIAS_INIT);
        Ok(Self {
            reset,
            update,
            candidate,
            reset_bias: store.add(format!("{prefix}.reset.bias"), Tensor::full(vec![b], gate_bias), true)?,
            update_bias: store.add(format!("{prefix}.update.bias"), Tensor::full(vec![b], gate_bias), true)?,
            candidate_bias: store.add(format!("{prefix}.candidate.bias"), Tensor::zeros(vec![b]), true)?,
            graph,
            hidden_dim: b,
        })
    }

    /// Parameter census of the cell: shared graph counted once.
    pub fn census<T: Scalar>(&self, store: &ParamStore<T>) -> Census {
        let stacks = [&self.reset, &self.update, &self.candidate].map(|s| s.census(store));
        let biases = [self.reset_bias, self.update_bias, self.candidate_bias].iter().map(|&id| store.get(id).len()).sum::<usize>();
        Census {
            factors: stacks[0].factors,
            couplings: stacks.iter().map(|c| c.couplings).sum(),
            filters: stacks.iter().map(|c| c.filters).sum::<usize>() + biases,
            aggregation: stacks.iter().map(|c| c.aggregation).sum(),
        }
    }

    pub fn step<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.step_traced(tape, store, x, h)?.hidden)
    }

    /// One recurrent step on `x: [B, N, d_in]`, `h: [B, N, β]`.
    pub fn step_traced<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
    ) -> Result<GateTrace<'t, T>> {
        let (xs, hs) = (x.shape(), h.shape());
        if xs.len() != 3 || hs.len() != 3 || xs[..2] != hs[..2] || hs[2] != self.hidden_dim {
            return shape_err(format!("cell input {xs:?} and hidden state {hs:?} do not conform"));
        }
        let xh = tape.concat(&[x, h], 2)?;
        let (r_pre, _) = self.reset.forward_aggregated(tape, store, xh)?;
        let reset = r_pre.add(tape.param(store, self.reset_bias))?.sigmoid();
        let (u_pre, _) = self.update.forward_aggregated(tape, store, xh)?;
        let update = u_pre.add(tape.param(store, self.update_bias))?.sigmoid();
        let xrh = tape.concat(&[x, reset.mul(h)?], 2)?;
        let (c_pre, _) = self.candidate.forward_aggregated(tape, store, xrh)?;
        let candidate = c_pre.add(tape.param(store, self.candidate_bias))?.tanh();
        let hidden = update.mul(h)?.add(update.one_minus().mul(candidate)?)?;
        Ok(GateTrace { reset, update, candidate, hidden })
    }
}

/// Parameter handles of the encoder-decoder network.
#[derive(Clone, Debug)]
pub struct Seq2SeqParams {
    pub encoder: CcgruCell,
    pub decoder: CcgruCell,
    pub projection_weight: ParamId,
    pub projection_bias: ParamId,
}

/// The full forecaster: configuration, parameter values and their layout.
#[derive(Clone, Debug)]
pub struct Ccrnn<T: Scalar = f64> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub net: Seq2SeqParams,
}

impl<T: Scalar> Ccrnn<T> {
    /// Builds a model whose encoder and decoder graphs both start at `graph_init`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, graph_init: &FactorPair<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if graph_init.source.shape() != [config.num_nodes, config.embed_dim] {
            return shape_err(format!(
                "initial factors {:?} do not match N={} L={}",
                graph_init.source.shape(),
                config.num_nodes,
                config.embed_dim
            ));
        }
        let mut store = ParamStore::new();
        let encoder = CcgruCell::register(&mut store, "encoder", &config, graph_init, rng)?;
        let decoder = CcgruCell::register(&mut store, "decoder", &config, graph_init, rng)?;
        let projection_weight = store.add("projection.weight", glorot(config.hidden_dim, config.channels, rng), true)?;
        let projection_bias = store.add("projection.bias", Tensor::zeros(vec![config.channels]), true)?;
        Ok(Self { config, store, net: Seq2SeqParams { encoder, decoder, projection_weight, projection_bias } })
    }

    /// A model with the parameter layout of `config`, meant to be filled
    /// from stored values.
    pub fn skeleton(config: ModelConfig) -> Result<Self> {
        let blank = FactorPair::new(
            Tensor::zeros(vec![config.num_nodes, config.embed_dim]),
            Tensor::zeros(vec![config.num_nodes, config.embed_dim]),
        )?;
        Self::new(config, &blank, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Final encoder state for `inputs: [B, P, N, d]`, starting from zeros.
    pub fn encode<'t>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, inputs: &Tensor<T>) -> Result<Var<'t, T>> {
        let s = inputs.shape();
        if s.len() != 4 || s[2] != self.config.num_nodes || s[3] != self.config.channels {
            return shape_err(format!("encoder input must be [B, P, {}, {}], got {s:?}", self.config.num_nodes, self.config.channels));
        }
        if s[1] == 0 {
            return invalid("history length must be at least 1");
        }
        let mut h = tape.constant(Tensor::zeros(vec![s[0], s[2], self.config.hidden_dim]));
        for p in 0..s[1] {
            let x = tape.constant(inputs.select(1, p)?);
            h = self.net.encoder.step(tape, store, x, h)?;
        }
        Ok(h)
    }

    /// Per-node projection of a hidden state to demand channels.
    pub fn project<'t>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, h: Var<'t, T>) -> Result<Var<'t, T>> {
        h.matmul(tape.param(store, self.net.projection_weight))?
            .add(tape.param(store, self.net.projection_bias))
    }

    /// Runs the decoder for `horizon` steps from state `h`.
    ///
    /// The first input is the zero GO symbol. Afterwards the previous ground
    /// truth is fed with probability `teacher_prob`, otherwise the previous
    /// prediction; one coin is flipped per step. Returns `[B, Q, N, d]`.
    pub fn decode<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        horizon: usize,
        ground_truth: Option<&Tensor<T>>,
        teacher_prob: f64,
        rng: &mut R,
    ) -> Result<Var<'t, T>> {
        if !(0.0..=1.0).contains(&teacher_prob) {
            return invalid(format!("teacher forcing probability {teacher_prob} outside [0, 1]"));
        }
        let hs = h.shape();
        let (batch, n, d) = (hs[0], self.config.num_nodes, self.config.channels);
        if teacher_prob > 0.0 {
            match ground_truth {
                None => return invalid("teacher forcing requested without ground truth"),
                Some(gt) if gt.shape() != [batch, horizon, n, d] => {
                    return shape_err(format!("ground truth must be [{batch}, {horizon}, {n}, {d}], got {:?}", gt.shape()));
                }
                Some(_) => {}
            }
        }
        let mut input = tape.constant(Tensor::zeros(vec![batch, n, d]));
        let mut state = h;
        let mut outputs = Vec::with_capacity(horizon);
        for q in 0..horizon {
            state = self.net.decoder.step(tape, store, input, state)?;
            let pred = self.project(tape, store, state)?;
            outputs.push(pred.reshape(vec![batch, 1, n, d])?);
            if q + 1 < horizon {
                let use_truth = match teacher_prob {
                    p if p <= 0.0 => false,
                    p if p >= 1.0 => true,
                    p => rng.random::<f64>() < p,
                };
                input = match (use_truth, ground_truth) {
                    (true, Some(gt)) => tape.constant(gt.select(1, q)?),
                    _ => pred,
                };
            }
        }
        tape.concat(&outputs, 1)
    }

    /// Encoder then decoder: `[B, P, N, d]` history to `[B, Q, N, d]` forecast.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        inputs: &Tensor<T>,
        ground_truth: Option<&Tensor<T>>,
        teacher_prob: f64,
        rng: &mut R,
    ) -> Result<Var<'t, T>> {
        let h = self.encode(tape, store, inputs)?;
        self.decode(tape, store, h, self.config.horizon, ground_truth, teacher_prob, rng)
    }

    /// Free-running forecast using the model's own parameters.
    pub fn predict(&self, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        // Free-running decoding never draws from the generator.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&tape, &self.store, inputs, None, 0.0, &mut unused)?;
        let value = out.value();
        Ok((*value).clone())
    }
}
