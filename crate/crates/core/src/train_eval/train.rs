use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ablation::AblationVariant;
use super::adam::{adam_step, AdamState};
use super::data::PreparedData;
use super::evaluate::forecast_range;
use super::loss::rmse_loss;
use super::metrics::{fmt_opt, rmse};
use crate::ccgru::{sampling_probability, Ccrnn, SamplingSchedule};
use crate::error::{invalid, Error, Result};
use crate::tensor::{GradientMap, ParamStore, Tape};

pub const DEFAULT_LEARNING_RATE: f64 = 0.0015;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_SAMPLING_DECAY: f64 = 2000.0;
pub const DEFAULT_PATIENCE: usize = 10;

/// Independent generator streams derived from one seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_SHUFFLE: u64 = 1;
pub(crate) const STREAM_COINS: u64 = 2;

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Constant `s` of the inverse-sigmoid teacher-forcing decay.
    pub sampling_decay: f64,
    /// Epochs without validation improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub variant: AblationVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 100,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            sampling_decay: DEFAULT_SAMPLING_DECAY,
            patience: DEFAULT_PATIENCE,
            variant: AblationVariant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if !(self.sampling_decay >= 1.0) {
            return invalid(format!("sampling_decay must be at least 1, got {}", self.sampling_decay));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    /// Teacher-forcing probability at the last batch of the epoch.
    pub teacher_prob: f64,
    pub iterations: u64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_rmse,teacher_prob,iterations\n");
    for r in history {
        let val = fmt_opt(r.val_rmse);
        out += &format!("{},{},{},{},{}\n", r.epoch, r.train_loss, val, r.teacher_prob, r.iterations);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch (by validation RMSE, else the last).
    pub model: Ccrnn<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub adam: AdamState<f64>,
    pub stopped_early: bool,
}

fn batch_gradients(model: &Ccrnn<f64>, data: &PreparedData, starts: &[usize], teacher_prob: f64, coins: &mut ChaCha8Rng) -> Result<(f64, GradientMap<f64>)> {
    let (x, y) = data.batch(starts)?;
    let tape = Tape::new();
    let out = model.forward(&tape, &model.store, &x, Some(&y), teacher_prob, coins)?;
    let loss = rmse_loss(out, tape.constant(y))?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Ok((value, GradientMap::new()));
    }
    Ok((value, tape.backward(loss)?))
}

pub fn train(model: Ccrnn<f64>, data: &PreparedData, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, config, |_| {})
}

/// Mini-batch training with scheduled sampling, validation after every
/// epoch, best-checkpoint retention and early stopping. `on_epoch` sees each
/// history record as it is produced.
pub fn train_with(mut model: Ccrnn<f64>, data: &PreparedData, config: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    config.validate()?;
    let mut starts = data.window_starts(&data.split.train);
    if starts.is_empty() {
        return invalid("training range holds no complete window");
    }
    let has_val = !data.window_starts(&data.split.val).is_empty();
    let schedule = SamplingSchedule::train(config.sampling_decay);
    let mut shuffle = seeded(config.seed, STREAM_SHUFFLE);
    let mut coins = seeded(config.seed, STREAM_COINS);
    let mut adam = AdamState::new();
    let mut history = Vec::new();
    let mut iteration = 0u64;
    let mut best: Option<(Option<f64>, usize, ParamStore<f64>)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        starts.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut teacher_prob = 0.0;
        for (b, chunk) in starts.chunks(config.batch_size).enumerate() {
            teacher_prob = sampling_probability(iteration, &schedule);
            let (loss, grads) = batch_gradients(&model, data, chunk, teacher_prob, &mut coins)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut model.store, &grads, &mut adam, config.learning_rate)?;
            iteration += 1;
            loss_sum += loss;
            batches += 1;
        }
        let val_rmse = if has_val {
            let (pred, truth) = forecast_range(&model, data, &data.split.val)?;
            Some(rmse(&pred, &truth)?)
        } else {
            None
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / batches as f64, val_rmse, teacher_prob, iterations: iteration };
        on_epoch(&record);
        history.push(record);

        let improved = match (&best, val_rmse) {
            (Some((Some(b), _, _)), Some(v)) => v < *b,
            _ => true,
        };
        if improved {
            best = Some((val_rmse, epoch, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (score, best_epoch, store) = best.expect("at least one epoch ran");
    model.store.copy_values_from(&store)?;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_rmse: score,
        adam,
        stopped_early,
    })
}
