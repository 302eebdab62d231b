use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::PreparedData;
use super::evaluate::evaluate;
use super::metrics::{fmt_opt, Metrics};
use super::train::{seeded, train, TrainConfig, STREAM_INIT};
use crate::ccgru::{Ccrnn, ModelConfig};
use crate::cgc::LayerGraph;
use crate::error::{Error, Result};
use crate::geo::LonLat;
use crate::graphgen::{ablation_init, data_driven_graph, FactorPair, InitInputs, InitVariant};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoAdaptive,
    NoCoupling,
    RandomInit,
    DistanceInit,
    PccInit,
}

impl AblationVariant {
    pub const ALL: [Self; 6] = [Self::Full, Self::NoAdaptive, Self::NoCoupling, Self::RandomInit, Self::DistanceInit, Self::PccInit];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAdaptive => "no_adaptive",
            Self::NoCoupling => "no_coupling",
            Self::RandomInit => "random_init",
            Self::DistanceInit => "distance_init",
            Self::PccInit => "pcc_init",
        }
    }

    pub fn layer_graph(self) -> LayerGraph {
        match self {
            Self::NoCoupling => LayerGraph::Independent,
            _ => LayerGraph::Coupled,
        }
    }

    fn init_variant(self) -> Option<InitVariant> {
        match self {
            Self::RandomInit => Some(InitVariant::Random),
            Self::DistanceInit => Some(InitVariant::Distance),
            Self::PccInit => Some(InitVariant::Pcc),
            _ => None,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`; expected one of full, no_adaptive, no_coupling, random_init, distance_init, pcc_init")))
    }
}

/// What the graph initialisers may look at.
#[derive(Clone, Debug)]
pub struct GraphSource {
    /// Raw demand restricted to the training range.
    pub training_demand: Tensor<f64>,
    pub centroids: Vec<LonLat>,
    pub xi: usize,
    pub epsilon: Option<f64>,
}

impl GraphSource {
    pub fn from_data(data: &PreparedData, centroids: Vec<LonLat>, xi: usize, epsilon: Option<f64>) -> Result<Self> {
        Ok(Self { training_demand: data.training_demand()?, centroids, xi, epsilon })
    }
}

/// Initial factors for `variant`.
pub fn initial_factors(variant: AblationVariant, source: &GraphSource, rank: usize, seed: u64) -> Result<FactorPair<f64>> {
    match variant.init_variant() {
        None => Ok(data_driven_graph(&source.training_demand, source.xi, rank, source.epsilon)?.factors),
        Some(init) => {
            let inputs = InitInputs { training_demand: &source.training_demand, centroids: &source.centroids, rank };
            // a stream of its own so the network weights match the other variants
            ablation_init(init, &inputs, &mut seeded(seed, STREAM_INIT + 100))
        }
    }
}

/// Builds the network for `variant` from precomputed initial factors.
pub fn build_model_from_factors(variant: AblationVariant, mut config: ModelConfig, factors: &FactorPair<f64>, seed: u64) -> Result<Ccrnn<f64>> {
    config.layer_graph = variant.layer_graph();
    let mut model = Ccrnn::new(config, factors, &mut seeded(seed, STREAM_INIT))?;
    if variant == AblationVariant::NoAdaptive {
        for cell in [&model.net.encoder, &model.net.decoder] {
            for ids in &cell.graph {
                model.store.set_trainable(ids.source, false);
                model.store.set_trainable(ids.target, false);
            }
        }
    }
    Ok(model)
}

pub fn build_model(variant: AblationVariant, config: ModelConfig, source: &GraphSource, seed: u64) -> Result<Ccrnn<f64>> {
    let factors = initial_factors(variant, source, config.embed_dim, seed)?;
    build_model_from_factors(variant, config, &factors, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub metrics: Metrics,
    pub parameters: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,rmse,mae,pcc,parameters,best_epoch\n");
        for r in &self.rows {
            let m = &r.metrics;
            out += &format!("{},{},{},{},{},{}\n", r.variant, m.rmse, m.mae, fmt_opt(m.pcc), r.parameters, r.best_epoch);
        }
        out
    }
}

/// Trains every variant with the same seed and configuration and reports
/// original-scale test metrics.
pub fn run_ablation(
    variants: &[AblationVariant],
    data: &PreparedData,
    model_config: ModelConfig,
    source: &GraphSource,
    config: &TrainConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let model = build_model(variant, model_config, source, config.seed)?;
        let outcome = train(model, data, &TrainConfig { variant, ..config.clone() })?;
        let report = evaluate(&outcome.model, data, &data.split.test)?;
        rows.push(AblationRow {
            variant,
            metrics: report.overall,
            parameters: outcome.model.store.trainable_count(),
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(AblationTable { rows })
}
