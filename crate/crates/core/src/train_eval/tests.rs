use std::cell::Cell;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ccgru::ModelConfig;
use crate::cgc::LayerGraph;
use crate::error::Error;
use crate::ingest::split_dataset;
use crate::tensor::{GradientMap, ParamStore, Tape};

type Tensor = crate::tensor::Tensor<f64>;

fn v(x: &[f64]) -> Tensor {
    Tensor::vector(x.to_vec())
}

#[test]
fn perfect_prediction_metrics() {
    let t = v(&[1.0, 3.0, 2.0, 5.0]);
    assert_eq!(rmse(&t, &t).unwrap(), 0.0);
    assert_eq!(mae(&t, &t).unwrap(), 0.0);
    assert!((pcc(&t, &t).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn constant_offset_metrics() {
    let t = v(&[1.0, 3.0, 2.0, 5.0]);
    let p = t.map(|x| x + 1.0);
    assert!((rmse(&p, &t).unwrap() - 1.0).abs() < 1e-12);
    assert!((mae(&p, &t).unwrap() - 1.0).abs() < 1e-12);
    assert!((pcc(&p, &t).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn two_point_metrics() {
    let (p, t) = (v(&[1.0, 2.0]), v(&[2.0, 4.0]));
    assert!((pcc(&p, &t).unwrap() - 1.0).abs() < 1e-12);
    assert!((rmse(&p, &t).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
}

#[test]
fn pcc_of_constant_series_is_an_error() {
    assert!(matches!(pcc(&v(&[1.0, 1.0]), &v(&[1.0, 2.0])), Err(Error::Numerical(_))));
    assert!(rmse(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
}

fn loss_of(pred: Tensor, truth: Tensor) -> (f64, Tensor) {
    let mut store = ParamStore::new();
    let id = store.add("pred", pred, true).unwrap();
    let tape = Tape::new();
    let loss = rmse_loss(tape.param(&store, id), tape.constant(truth)).unwrap();
    let value = loss.value().item().unwrap();
    let grads = tape.backward(loss).unwrap();
    (value, grads.get(id).unwrap().clone())
}

#[test]
fn loss_examples() {
    let truth = Tensor::from_fn([2, 3, 4], |i| i as f64 * 0.1);
    let (zero, grad) = loss_of(truth.clone(), truth.clone());
    // sqrt of the regularizer itself
    assert!((zero - LOSS_EPSILON.sqrt()).abs() < 1e-15 && zero <= 1e-4);
    assert!(grad.data().iter().all(|&g| g == 0.0));

    let (two, _) = loss_of(truth.map(|x| x + 2.0), truth);
    assert!((two - 2.0).abs() < 1e-8);
}

fn single_param(value: Tensor) -> (ParamStore<f64>, crate::tensor::ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("w", value, true).unwrap();
    (store, id)
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let (mut store, id) = single_param(v(&[0.3, -1.2]));
    let mut grads = GradientMap::new();
    grads.insert(id, Tensor::zeros([2]));
    let mut state = AdamState::new();
    for k in 1..=3 {
        adam_step(&mut store, &grads, &mut state, 0.01).unwrap();
        assert_eq!(state.step, k);
    }
    assert_eq!(store.get(id), &v(&[0.3, -1.2]));
}

#[test]
fn adam_first_step_moves_by_lr_against_the_gradient() {
    let (mut store, id) = single_param(v(&[0.0, 0.0, 0.0]));
    let mut grads = GradientMap::new();
    let g = [0.37, -4.0, 1e-3];
    grads.insert(id, v(&g));
    let mut state = AdamState::new();
    let lr = 0.01;
    adam_step(&mut store, &grads, &mut state, lr).unwrap();
    for (p, g) in store.get(id).data().iter().zip(g) {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expected = -lr * g / (g.abs() + ADAM_EPSILON);
        assert!((p - expected).abs() < 1e-15);
        assert!((p + lr * g.signum()).abs() < 1e-7);
    }
}

#[test]
fn adam_steady_state_step_approaches_lr() {
    let (mut store, id) = single_param(v(&[0.0]));
    let mut grads = GradientMap::new();
    grads.insert(id, v(&[0.5]));
    let mut state = AdamState::new();
    let lr = 1e-3;
    let mut prev = 0.0;
    let mut last_step = 0.0;
    for _ in 0..5000 {
        adam_step(&mut store, &grads, &mut state, lr).unwrap();
        let now = store.get(id).data()[0];
        last_step = prev - now;
        prev = now;
    }
    assert!((last_step - lr).abs() < 1e-6 * lr.max(1.0), "{last_step}");
}

#[test]
fn adam_requires_every_trainable_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", v(&[1.0]), true).unwrap();
    store.add("b", v(&[1.0]), true).unwrap();
    let frozen = store.add("c", v(&[1.0]), false).unwrap();
    let mut grads = GradientMap::new();
    grads.insert(a, v(&[1.0]));
    let err = adam_step(&mut store, &grads, &mut AdamState::new(), 0.1).unwrap_err();
    assert!(matches!(err, Error::MissingGradient(ref n) if n == "b"));
    let _ = frozen;
}

#[test]
fn historical_average_examples() {
    let constant = Tensor::full([4, 3, 2], 2.5);
    let f = ha_baseline(&constant, 5).unwrap();
    assert_eq!(f.shape(), &[5, 3, 2]);
    assert!(f.data().iter().all(|&x| x == 2.5));

    let two = Tensor::stack(&[&Tensor::zeros([2, 2]), &Tensor::full([2, 2], 2.0)]).unwrap();
    assert!(ha_baseline(&two, 3).unwrap().data().iter().all(|&x| x == 1.0));

    // period 4 divides P = 12, so every window averages to the period mean
    let pattern = [1.0, 5.0, -2.0, 4.0];
    let hist = Tensor::from_fn([12, 1, 1], |t| pattern[t % 4]);
    let mean = pattern.iter().sum::<f64>() / 4.0;
    assert!(ha_baseline(&hist, 2).unwrap().data().iter().all(|&x| (x - mean).abs() < 1e-12));
    assert!(ha_baseline(&Tensor::zeros([0, 1, 1]), 2).is_err());
}

#[test]
fn horizon_labels_at_half_hour_bins() {
    let labels: Vec<_> = [1, 5, 9, 12].iter().map(|&q| horizon_label(q, 30)).collect();
    assert_eq!(labels, ["0.5h", "2.5h", "4.5h", "6.0h"]);
}

fn tiny_data(bins: usize, seed: u64) -> PreparedData {
    let ring = SyntheticRing { stations: 4, bins, seed, ..SyntheticRing::default() };
    let split = split_dataset(bins, 3, 2, 12, 12).unwrap();
    PreparedData::new(ring.generate(), split, 30).unwrap()
}

/// Replays the standardized truth of each requested window in order.
struct Oracle<'a> {
    data: &'a PreparedData,
    starts: Vec<usize>,
    next: Cell<usize>,
}

impl Forecaster for Oracle<'_> {
    fn forecast(&self, history: &Tensor, _horizon: usize) -> crate::Result<Tensor> {
        let b = history.shape()[0];
        let chunk = &self.starts[self.next.get()..self.next.get() + b];
        self.next.set(self.next.get() + b);
        Ok(self.data.batch(chunk)?.1)
    }
}

#[test]
fn oracle_forecaster_scores_zero_at_every_horizon() {
    let data = tiny_data(120, 1);
    let oracle = Oracle { data: &data, starts: data.window_starts(&data.split.test), next: Cell::new(0) };
    let report = evaluate(&oracle, &data, &data.split.test).unwrap();
    assert_eq!(report.scale, MetricScale::Original);
    assert!(report.overall.rmse < 1e-12);
    assert!(report.per_horizon.iter().all(|h| h.metrics.rmse < 1e-12 && h.metrics.mae < 1e-12));
    assert_eq!(report.per_horizon.len(), 2);
}

#[test]
fn per_horizon_mae_averages_to_overall() {
    let data = tiny_data(120, 2);
    let report = evaluate(&HistoricalAverage, &data, &data.split.test).unwrap();
    let mean = report.per_horizon.iter().map(|h| h.metrics.mae).sum::<f64>() / report.per_horizon.len() as f64;
    assert!((mean - report.overall.mae).abs() < 1e-12);
    assert!(report.overall.rmse >= report.overall.mae);
    assert!(report.to_csv().starts_with("horizon,label,rmse,mae,pcc\nall,overall,"));
}

fn tiny_config(layer_graph: LayerGraph) -> ModelConfig {
    ModelConfig { num_nodes: 4, channels: 2, hidden_dim: 3, embed_dim: 2, layers: 2, diffusion_steps: 1, horizon: 2, layer_graph }
}

fn tiny_source(data: &PreparedData) -> GraphSource {
    let ring = SyntheticRing { stations: 4, ..SyntheticRing::default() };
    GraphSource::from_data(data, ring.centroids(), 2, None).unwrap()
}

#[test]
fn one_epoch_of_one_batch_takes_one_step() {
    let data = tiny_data(80, 3);
    let n_train = data.window_starts(&data.split.train).len();
    let model = build_model(AblationVariant::Full, tiny_config(LayerGraph::Coupled), &tiny_source(&data), 0).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: n_train, ..TrainConfig::default() };
    let out = train(model, &data, &cfg).unwrap();
    assert_eq!(out.adam.step, 1);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history[0].iterations, 1);
}

#[test]
fn zero_epochs_rejected() {
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    assert!(cfg.validate().is_err());
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = tiny_data(90, 4);
    let run = || {
        let model = build_model(AblationVariant::Full, tiny_config(LayerGraph::Coupled), &tiny_source(&data), 11).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 8, seed: 11, sampling_decay: 5.0, ..TrainConfig::default() };
        train(model, &data, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    for (id, entry) in a.model.store.iter() {
        assert_eq!(entry.value.data(), b.model.store.get(id).data(), "{}", entry.name);
    }
    assert!(a.history.iter().all(|r| r.val_rmse.is_some()));
}

#[test]
fn non_finite_loss_aborts_with_the_batch_index() {
    let mut data = tiny_data(80, 5);
    let starts = data.window_starts(&data.split.train);
    let n = data.num_stations() * data.channels();
    for s in &mut data.standardized.data_mut()[..starts.len() * n] {
        *s = f64::NAN;
    }
    let model = build_model(AblationVariant::Full, tiny_config(LayerGraph::Coupled), &tiny_source(&data), 0).unwrap();
    let err = train(model, &data, &TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() }).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, .. }), "{err}");
}

#[test]
fn frozen_graph_factors_never_move() {
    let data = tiny_data(80, 6);
    let model = build_model(AblationVariant::NoAdaptive, tiny_config(LayerGraph::Coupled), &tiny_source(&data), 0).unwrap();
    let before = model.store.clone();
    let out = train(model, &data, &TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() }).unwrap();
    let mut moved = 0;
    for (id, entry) in out.model.store.iter() {
        let same = entry.value == *before.get(id);
        if entry.name.contains(".graph.") {
            assert!(same && !entry.trainable, "{}", entry.name);
        } else if !same {
            moved += 1;
        }
    }
    assert!(moved > 0);
}

#[test]
fn variant_tags_round_trip() {
    for v in AblationVariant::ALL {
        assert_eq!(v.tag().parse::<AblationVariant>().unwrap(), v);
    }
    assert!("bogus".parse::<AblationVariant>().is_err());
}

#[test]
fn no_coupling_trades_couplings_for_per_layer_factors() {
    let data = tiny_data(80, 7);
    let src = tiny_source(&data);
    let c = tiny_config(LayerGraph::Coupled);
    let full = build_model(AblationVariant::Full, c, &src, 0).unwrap();
    let indep = build_model(AblationVariant::NoCoupling, c, &src, 0).unwrap();
    let (n, l, m) = (c.num_nodes, c.embed_dim, c.layers);
    // per cell: M-1 extra factor pairs, and each of the three gate stacks drops its couplings
    let per_cell = (m - 1) * 2 * n * l;
    let couplings = 3 * (m - 1) * l * (l + 1);
    assert_eq!(indep.store.trainable_count() + 2 * couplings, full.store.trainable_count() + 2 * per_cell);
    let stack_full = full.net.encoder.reset.census(&full.store).graph_structure();
    let stack_indep = indep.net.encoder.reset.census(&indep.store).graph_structure();
    assert_eq!(stack_indep, stack_full + (m - 1) * 2 * n * l - (m - 1) * l * (l + 1));
}

#[test]
fn single_variant_ablation_is_one_row() {
    let data = tiny_data(80, 8);
    let table = run_ablation(
        &[AblationVariant::Full],
        &data,
        tiny_config(LayerGraph::Coupled),
        &tiny_source(&data),
        &TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() },
    )
    .unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.to_csv().starts_with("variant,rmse,mae,pcc,parameters,best_epoch\nfull,"));
}

#[test]
fn synthetic_ring_is_seeded() {
    let ring = SyntheticRing { bins: 50, ..SyntheticRing::default() };
    assert_eq!(ring.generate(), ring.generate());
    assert_ne!(ring.generate(), SyntheticRing { seed: 1, ..ring }.generate());
    assert_eq!(ring.generate().shape(), &[50, 20, 2]);
}

proptest! {
    #[test]
    fn rmse_dominates_mae(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Tensor::from_fn([n], |_| rng.random_range(-5.0..5.0));
        let t = Tensor::from_fn([n], |_| rng.random_range(-5.0..5.0));
        prop_assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() - 1e-12);
    }

    #[test]
    fn pcc_is_affine_invariant(seed in any::<u64>(), n in 3usize..50, a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Tensor::from_fn([n], |_| rng.random_range(-5.0..5.0));
        let t = Tensor::from_fn([n], |_| rng.random_range(-5.0..5.0));
        let r = pcc(&p, &t).unwrap();
        let r2 = pcc(&p.map(|x| a * x + b), &t.map(|x| a * x + b)).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - r2).abs() < 1e-9);
    }
}
