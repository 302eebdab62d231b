//! Coupled layer-wise graph convolution.
//!
//! Each layer diffuses its input through a learned adjacency that is never
//! materialised: it exists only as the factor pair `E1·E2ᵀ`, applied
//! right-to-left so one diffusion step costs `O(N·L·F)`. The first layer's
//! factors are parameters; deeper layers derive theirs through a shared
//! affine map. Layer outputs are combined by a softmax attention over levels.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::graphgen::FactorPair;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::Scalar;

/// How deeper layers obtain their node embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGraph {
    /// Layer m+1 factors are `E^(m)·W^(m) + b^(m)` of layer m's.
    Coupled,
    /// Every layer has its own free factor pair and there is no coupling map.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgcConfig {
    pub num_nodes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub diffusion_steps: usize,
}

impl CgcConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.num_nodes, self.input_dim, self.hidden_dim, self.embed_dim, self.layers];
        if dims.contains(&0) {
            return invalid(format!("graph convolution dimensions must be positive: {self:?}"));
        }
        if self.embed_dim > self.num_nodes {
            return invalid(format!("embedding dimension {} exceeds node count {}", self.embed_dim, self.num_nodes));
        }
        Ok(())
    }
}

/// Parameter handles of a source/target factor pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorIds {
    pub source: ParamId,
    pub target: ParamId,
}

impl FactorIds {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, init: &FactorPair<T>) -> Result<Self> {
        Ok(Self {
            source: store.add(format!("{prefix}.source"), init.source.clone(), init.trainable)?,
            target: store.add(format!("{prefix}.target"), init.target.clone(), init.trainable)?,
        })
    }
}

/// Diffusion filters `θ_0..θ_K` of one layer, each `[dim_in × β]`.
#[derive(Clone, Debug)]
pub struct CgcLayerParams {
    pub thetas: Vec<ParamId>,
}

/// Shared affine map `E ↦ E·W + b` with `W: [L × L]`, `b: [L]`.
#[derive(Clone, Copy, Debug)]
pub struct CouplingParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Scoring map `W_α: [(N·β) × 1]`, `b_α: [1]`.
#[derive(Clone, Copy, Debug)]
pub struct AggregationParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub enum StackGraph {
    Coupled { base: FactorIds, couplings: Vec<CouplingParams> },
    Independent { per_layer: Vec<FactorIds> },
}

/// M graph-convolution layers plus their level aggregation.
#[derive(Clone, Debug)]
pub struct CgcStack {
    pub config: CgcConfig,
    pub layers: Vec<CgcLayerParams>,
    pub graph: StackGraph,
    pub aggregation: AggregationParams,
}

/// Parameter counts of one stack, split by role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Census {
    pub factors: usize,
    pub couplings: usize,
    pub filters: usize,
    pub aggregation: usize,
}

impl Census {
    pub fn graph_structure(&self) -> usize {
        self.factors + self.couplings
    }

    pub fn total(&self) -> usize {
        self.factors + self.couplings + self.filters + self.aggregation
    }
}

/// Glorot-uniform matrix.
pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(vec![rows, cols], |_| T::lit(rng.random_range(-limit..limit)))
}

impl CgcStack {
    /// Registers filters, couplings (identity weight, zero bias) and
    /// aggregation parameters under `prefix`. Factor pairs are registered by
    /// the caller so several stacks can share them.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: CgcConfig,
        graph_factors: &[FactorIds],
        mode: LayerGraph,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (n, l, m, b) = (config.num_nodes, config.embed_dim, config.layers, config.hidden_dim);
        let graph = match mode {
            LayerGraph::Coupled => {
                let [base] = graph_factors else {
                    return invalid("coupled stacks take exactly one base factor pair");
                };
                let couplings = (0..m - 1)
                    .map(|i| {
                        Ok(CouplingParams {
                            weight: store.add(format!("{prefix}.coupling{i}.weight"), Tensor::eye(l), true)?,
                            bias: store.add(format!("{prefix}.coupling{i}.bias"), Tensor::zeros(vec![l]), true)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                StackGraph::Coupled { base: *base, couplings }
            }
            LayerGraph::Independent => {
                if graph_factors.len() != m {
                    return invalid(format!("independent stacks need {m} factor pairs, got {}", graph_factors.len()));
                }
                StackGraph::Independent { per_layer: graph_factors.to_vec() }
            }
        };
        for f in graph_factors {
            let shape = store.get(f.source).shape();
            if shape != [n, l] || store.get(f.target).shape() != [n, l] {
                return shape_err(format!("factor pair must be [{n}, {l}], got {shape:?}"));
            }
        }
        let layers = (0..m)
            .map(|layer| {
                let dim_in = if layer == 0 { config.input_dim } else { b };
                let thetas = (0..=config.diffusion_steps)
                    .map(|i| store.add(format!("{prefix}.layer{layer}.theta{i}"), glorot(dim_in, b, rng), true))
                    .collect::<Result<_>>()?;
                Ok(CgcLayerParams { thetas })
            })
            .collect::<Result<_>>()?;
        let aggregation = AggregationParams {
            weight: store.add(format!("{prefix}.attention.weight"), glorot(n * b, 1, rng), true)?,
            bias: store.add(format!("{prefix}.attention.bias"), Tensor::zeros(vec![1]), true)?,
        };
        Ok(Self { config, layers, graph, aggregation })
    }

    pub fn census<T: Scalar>(&self, store: &ParamStore<T>) -> Census {
        let len = |id: ParamId| store.get(id).len();
        let (factors, couplings) = match &self.graph {
            StackGraph::Coupled { base, couplings } => (
                len(base.source) + len(base.target),
                couplings.iter().map(|c| len(c.weight) + len(c.bias)).sum(),
            ),
            StackGraph::Independent { per_layer } => (per_layer.iter().map(|f| len(f.source) + len(f.target)).sum(), 0),
        };
        Census {
            factors,
            couplings,
            filters: self.layers.iter().flat_map(|l| &l.thetas).map(|&id| len(id)).sum(),
            aggregation: len(self.aggregation.weight) + len(self.aggregation.bias),
        }
    }

    /// Factor pair used by each layer, in layer order.
    pub fn layer_factors<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>) -> Result<Vec<(Var<'t, T>, Var<'t, T>)>> {
        match &self.graph {
            StackGraph::Coupled { base, couplings } => {
                let mut e1 = tape.param(store, base.source);
                let mut e2 = tape.param(store, base.target);
                let mut out = vec![(e1, e2)];
                for c in couplings {
                    let w = tape.param(store, c.weight);
                    let b = tape.param(store, c.bias);
                    (e1, e2) = couple_embeddings(e1, e2, w, b)?;
                    out.push((e1, e2));
                }
                Ok(out)
            }
            StackGraph::Independent { per_layer } => Ok(per_layer
                .iter()
                .map(|f| (tape.param(store, f.source), tape.param(store, f.target)))
                .collect()),
        }
    }

    /// Outputs of every layer, `[Z^(1), ..., Z^(M)]`.
    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let factors = self.layer_factors(tape, store)?;
        let mut z = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for (layer, (e1, e2)) in self.layers.iter().zip(factors) {
            let thetas: Vec<Var<'t, T>> = layer.thetas.iter().map(|&id| tape.param(store, id)).collect();
            z = propagate_layer(z, e1, e2, &thetas)?;
            outs.push(z);
        }
        Ok(outs)
    }

    /// Layer outputs combined by level attention. Returns `(h, α)`.
    pub fn forward_aggregated<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let zs = self.forward(tape, store, x)?;
        let w = tape.param(store, self.aggregation.weight);
        let b = tape.param(store, self.aggregation.bias);
        aggregate_levels(&zs, w, b)
    }
}

/// `(E1·W + b, E2·W + b)` with the bias broadcast over rows.
pub fn couple_embeddings<'t, T: Scalar>(
    e1: Var<'t, T>,
    e2: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let l = weight.shape();
    if l.len() != 2 || l[0] != l[1] || bias.shape() != [l[1]] {
        return shape_err(format!("coupling weight {l:?} and bias {:?} do not form an L×L map", bias.shape()));
    }
    Ok((e1.matmul(weight)?.add(bias)?, e2.matmul(weight)?.add(bias)?))
}

/// `Σ_i (E1·E2ᵀ)^i · Z · θ_i` evaluated as repeated `E1·(E2ᵀ·S)`.
///
/// `z` is `[N, F]` or batched `[B, N, F]`.
pub fn propagate_layer<'t, T: Scalar>(z: Var<'t, T>, e1: Var<'t, T>, e2: Var<'t, T>, thetas: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let Some((first, rest)) = thetas.split_first() else {
        return invalid("a layer needs at least one filter");
    };
    let zs = z.shape();
    let n = e1.shape()[0];
    if zs.len() < 2 || zs[zs.len() - 2] != n {
        return shape_err(format!("layer input {zs:?} does not have {n} nodes"));
    }
    let e2t = e2.transpose()?;
    let mut s = z;
    let mut acc = s.matmul(*first)?;
    for theta in rest {
        s = e1.matmul(e2t.matmul(s)?)?;
        acc = acc.add(s.matmul(*theta)?)?;
    }
    Ok(acc)
}

/// Softmax-weighted sum of layer outputs.
///
/// Each `Z^(m)` (`[N, β]` or `[B, N, β]`) is flattened, scored by the shared
/// linear map, and the scores normalised across levels. Returns `(h, α)` with
/// `α` of shape `[B, M]` (`[1, M]` for unbatched input).
pub fn aggregate_levels<'t, T: Scalar>(zs: &[Var<'t, T>], weight: Var<'t, T>, bias: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let Some(first) = zs.first() else {
        return invalid("aggregation over zero levels");
    };
    let shape = first.shape();
    if zs.iter().any(|z| z.shape() != shape) {
        return shape_err("all levels must share one shape");
    }
    let (batch, n, beta, batched) = match shape[..] {
        [n, b] => (1, n, b, false),
        [bs, n, b] => (bs, n, b, true),
        _ => return shape_err(format!("levels must be [N, β] or [B, N, β], got {shape:?}")),
    };
    if weight.shape() != [n * beta, 1] {
        return shape_err(format!("attention weight {:?} does not match levels {shape:?}", weight.shape()));
    }
    let w = weight.reshape(vec![n, beta])?;
    let zs: Vec<Var<'t, T>> = zs.iter().map(|z| z.reshape(vec![batch, n, beta])).collect::<Result<_>>()?;
    let scores = zs
        .iter()
        .map(|z| z.mul(w)?.sum_axis(2)?.sum_axis(1)?.reshape(vec![batch, 1]))
        .collect::<Result<Vec<_>>>()?;
    let scores = first.tape().concat(&scores, 1)?.add(bias)?;
    let alpha = scores.softmax(1)?;
    let mut h: Option<Var<'t, T>> = None;
    for (m, z) in zs.iter().enumerate() {
        let a = alpha.select(1, m)?.reshape(vec![batch, 1, 1])?;
        let term = z.mul(a)?;
        h = Some(match h {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let h = h.expect("at least one level");
    let h = if batched { h } else { h.reshape(vec![n, beta])? };
    Ok((h, alpha))
}
