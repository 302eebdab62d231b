//! Optimisation, loss, metrics, the historical-average baseline and the
//! ablation harness.

mod ablation;
mod adam;
mod baseline;
mod data;
mod evaluate;
mod loss;
mod metrics;
mod synthetic;
mod train;

#[cfg(test)]
mod tests;

pub use ablation::{
    build_model, build_model_from_factors, initial_factors, run_ablation, AblationRow, AblationTable, AblationVariant, GraphSource,
};
pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use baseline::ha_baseline;
pub use data::PreparedData;
pub use evaluate::{evaluate, forecast_range, Forecaster, HistoricalAverage, EVAL_BATCH};
pub use loss::{rmse_loss, LOSS_EPSILON};
pub use metrics::{horizon_label, mae, pcc, rmse, HorizonMetrics, MetricScale, Metrics, MetricsReport};
pub use synthetic::SyntheticRing;
pub use train::{
    history_csv, train, train_with, EpochRecord, TrainConfig, TrainOutcome, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_PATIENCE,
    DEFAULT_SAMPLING_DECAY,
};
