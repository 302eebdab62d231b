use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ccrnn::ingest::{
    build_demand_tensor, dock_stations, parse_trip_records, read_demand_blob, read_tensor_blob, select_top_stations, split_dataset,
    virtual_stations, write_demand_blob, write_stations_csv, write_tensor_blob, DatasetSplit, DemandSeries, GuardedSeries, ParseTally,
    SeriesMetadata, StationSet, TimeSpan, TripRecord,
};
use ccrnn::graphgen::FactorPair;
use ccrnn::train_eval::{
    build_model_from_factors, evaluate, history_csv, initial_factors, run_ablation, train_with, AblationVariant, Forecaster, GraphSource,
    HistoricalAverage, MetricsReport, PreparedData,
};

use crate::checkpoint::{Checkpoint, TENSOR_MAGIC};
use crate::config::{ConfigError, DataConfig, RunConfig, StationMode};

pub const DEMAND_FILE: &str = "demand.dmd1";
pub const METADATA_FILE: &str = "demand.json";
pub const STATIONS_FILE: &str = "stations.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const GRAPH_DIR: &str = "graph";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("{} is missing; run `ccrnn {producer}` first", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestReport {
    files: Vec<PathBuf>,
    parse: ParseTally,
    binning: ccrnn::ingest::BinTally,
    stations: usize,
    bins: usize,
}

pub fn ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.data.trips.is_empty() {
        return Err(ConfigError("data.trips lists no input files".into()).into());
    }
    let mut records: Vec<TripRecord> = Vec::new();
    let mut tally = ParseTally::default();
    for path in &cfg.data.trips {
        let file = File::open(path).with_context(|| format!("cannot read trip file {}", path.display()))?;
        let (mut recs, t) = parse_trip_records(BufReader::new(file), &cfg.data.columns, cfg.data.region.as_ref())
            .with_context(|| format!("while parsing {}", path.display()))?;
        records.append(&mut recs);
        tally.accepted += t.accepted;
        tally.malformed += t.malformed;
        tally.bad_timestamp += t.bad_timestamp;
        tally.time_reversed += t.time_reversed;
        tally.out_of_region += t.out_of_region;
    }
    records.sort_by_key(|r| r.pickup.time);
    println!(
        "parsed {} records; skipped {} malformed, {} bad timestamps, {} time-reversed, {} outside region",
        tally.accepted, tally.malformed, tally.bad_timestamp, tally.time_reversed, tally.out_of_region
    );
    if records.is_empty() {
        bail!("no usable trip records");
    }

    let s = &cfg.stations;
    let stations = match s.mode {
        StationMode::DockBased => {
            let docks = dock_stations(&records)?;
            let keep = s.keep.min(docks.len());
            if keep < s.keep {
                eprintln!("warning: only {} docks present, keeping all of them", docks.len());
            }
            select_top_stations(&records, &docks, keep)?
        }
        StationMode::Virtual => virtual_stations(&records, s.num_stations, s.dc_quantile, s.sample_size, cfg.train.seed)?,
    };

    let span = match (DataConfig::parse_time(&cfg.data.start)?, DataConfig::parse_time(&cfg.data.end)?) {
        (Some(a), Some(b)) => TimeSpan::between(a, b, cfg.data.bin_minutes)?,
        (None, None) => TimeSpan::covering(&records, cfg.data.bin_minutes)?,
        (Some(a), None) => {
            let cover = TimeSpan::covering(&records, cfg.data.bin_minutes)?;
            TimeSpan::between(a, cover.end(), cfg.data.bin_minutes)?
        }
        (None, Some(b)) => {
            let cover = TimeSpan::covering(&records, cfg.data.bin_minutes)?;
            TimeSpan::between(cover.start, b, cfg.data.bin_minutes)?
        }
    };
    let (series, bins) = build_demand_tensor(&records, &stations, span)?;
    println!(
        "{} stations ({:?}), {} bins of {} min; {} trip ends outside the span, {} at unknown stations",
        stations.len(),
        stations.kind,
        series.num_bins(),
        span.bin_minutes,
        bins.outside_span,
        bins.unknown_station
    );

    write_demand_blob(BufWriter::new(File::create(out.join(DEMAND_FILE))?), &series.values)?;
    fs::write(out.join(METADATA_FILE), SeriesMetadata::describe(&series, &stations).to_json()?)?;
    write_stations_csv(File::create(out.join(STATIONS_FILE))?, &stations)?;
    write_json(
        &out.join(INGEST_REPORT),
        &IngestReport { files: cfg.data.trips.clone(), parse: tally, binning: bins, stations: stations.len(), bins: series.num_bins() },
    )
}

/// Demand series, its station table and the configured split.
pub struct Dataset {
    pub series: DemandSeries,
    pub stations: StationSet,
    pub split: DatasetSplit,
}

pub fn load_dataset(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let blob = out.join(DEMAND_FILE);
    let meta_path = out.join(METADATA_FILE);
    require(&blob, "ingest")?;
    require(&meta_path, "ingest")?;
    let meta = SeriesMetadata::from_json(&fs::read_to_string(&meta_path)?)?;
    let values = read_demand_blob(BufReader::new(File::open(&blob)?))?;
    let series = meta.attach(values)?;
    let split = split_dataset(series.num_bins(), cfg.model.history, cfg.model.horizon, cfg.data.val_bins(), cfg.data.test_bins())
        .map_err(|e| ConfigError(format!("split: {e}")))?;
    Ok(Dataset { series, stations: meta.stations, split })
}

fn graph_dir(out: &Path, variant: AblationVariant) -> PathBuf {
    out.join(GRAPH_DIR).join(variant.tag())
}

#[derive(Serialize)]
struct GraphReport {
    variant: AblationVariant,
    rank: usize,
    training_bins: usize,
    bins_read: usize,
    epsilon: Option<f64>,
    zero_variance_stations: Vec<usize>,
}

/// Graph inputs built strictly from the training range.
fn graph_source(cfg: &RunConfig, data: &Dataset) -> Result<(GraphSource, usize)> {
    let guard = GuardedSeries::new(&data.series, data.split.train.end);
    let training_demand = guard.bins(data.split.train.clone())?;
    let source = GraphSource { training_demand, centroids: data.stations.centroids(), xi: cfg.model.xi, epsilon: cfg.model.epsilon };
    Ok((source, guard.high_water()))
}

fn zero_variance_stations(demand: &ccrnn::Tensor64) -> Vec<usize> {
    let (t, n, d) = (demand.shape()[0], demand.shape()[1], demand.shape()[2]);
    (0..n)
        .filter(|&s| {
            (0..d).any(|c| {
                let first = demand.data()[s * d + c];
                (1..t).all(|k| demand.data()[(k * n + s) * d + c] == first)
            })
        })
        .collect()
}

pub fn build_graph(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg, out)?;
    let (source, bins_read) = graph_source(cfg, &data)?;
    let flat = zero_variance_stations(&source.training_demand);
    for s in &flat {
        eprintln!("warning: station {s} has a zero-variance channel over the training range; station retained");
    }
    let variant = cfg.train.variant;
    let factors = initial_factors(variant, &source, cfg.model.embed_dim, cfg.train.seed)?;
    let epsilon = match variant {
        AblationVariant::Full | AblationVariant::NoAdaptive | AblationVariant::NoCoupling => {
            let g = ccrnn::graphgen::data_driven_graph(&source.training_demand, source.xi, cfg.model.embed_dim, source.epsilon)?;
            println!("gaussian kernel epsilon = {}", g.epsilon);
            Some(g.epsilon)
        }
        _ => None,
    };
    let dir = graph_dir(out, variant);
    fs::create_dir_all(&dir)?;
    write_tensor_blob(BufWriter::new(File::create(dir.join("source.bin"))?), TENSOR_MAGIC, &factors.source)?;
    write_tensor_blob(BufWriter::new(File::create(dir.join("target.bin"))?), TENSOR_MAGIC, &factors.target)?;
    write_json(
        &dir.join("graph.json"),
        &GraphReport {
            variant,
            rank: factors.embedding_dim(),
            training_bins: data.split.train.len(),
            bins_read,
            epsilon,
            zero_variance_stations: flat,
        },
    )?;
    println!("wrote {} factors of rank {} to {}", variant, factors.embedding_dim(), dir.display());
    Ok(())
}

fn load_factors(out: &Path, variant: AblationVariant) -> Result<FactorPair<f64>> {
    let dir = graph_dir(out, variant);
    let read = |name: &str| -> Result<ccrnn::Tensor64> {
        let path = dir.join(name);
        require(&path, &format!("build-graph --variant {variant}"))?;
        Ok(read_tensor_blob(BufReader::new(File::open(&path)?), TENSOR_MAGIC, 2)?)
    };
    Ok(FactorPair::new(read("source.bin")?, read("target.bin")?)?)
}

fn prepared(data: &Dataset) -> Result<PreparedData> {
    Ok(PreparedData::new(data.series.values.clone(), data.split.clone(), data.series.span.bin_minutes)?)
}

#[derive(Serialize)]
struct TrainSummary {
    variant: AblationVariant,
    epochs_run: usize,
    best_epoch: usize,
    best_val_rmse: Option<f64>,
    stopped_early: bool,
    trainable_parameters: usize,
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg, out)?;
    let factors = load_factors(out, cfg.train.variant)?;
    let prepared = prepared(&data)?;
    let model_config = cfg.model_config(data.series.num_stations(), data.series.channels());
    let model = build_model_from_factors(cfg.train.variant, model_config, &factors, cfg.train.seed)?;
    let trainable = model.store.trainable_count();
    println!("training {} with {} trainable parameters", cfg.train.variant, trainable);
    let outcome = train_with(model, &prepared, &cfg.train_config(), |r| {
        let val = r.val_rmse.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        println!("epoch {:>3}  train loss {:.6}  val rmse {}  teacher p {:.4}", r.epoch, r.train_loss, val, r.teacher_prob);
    })?;
    fs::write(out.join(HISTORY_FILE), history_csv(&outcome.history))?;
    let checkpoint = Checkpoint {
        config: RunConfig { output: None, ..cfg.clone() },
        model: outcome.model.config,
        variant: cfg.train.variant,
        scaler: prepared.scaler.clone(),
        stations: data.stations.clone(),
        best_epoch: outcome.best_epoch,
        best_val_rmse: outcome.best_val_rmse,
        params: Checkpoint::from_store(&outcome.model.store),
        adam: Some(outcome.adam.clone()),
    };
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_json(
        &out.join(TRAIN_SUMMARY),
        &TrainSummary {
            variant: cfg.train.variant,
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            best_val_rmse: outcome.best_val_rmse,
            stopped_early: outcome.stopped_early,
            trainable_parameters: trainable,
        },
    )?;
    println!("best epoch {}; checkpoint written to {}", outcome.best_epoch, out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn load_checkpoint(out: &Path, data: &Dataset) -> Result<(Checkpoint, ccrnn::ccgru::Ccrnn<f64>)> {
    let path = out.join(CHECKPOINT_FILE);
    require(&path, "train")?;
    let ckpt = Checkpoint::load(&path).with_context(|| format!("cannot load {}", path.display()))?;
    if ckpt.model.num_nodes != data.series.num_stations() || ckpt.model.channels != data.series.channels() {
        bail!(
            "checkpoint expects {} stations x {} channels, data has {} x {}",
            ckpt.model.num_nodes,
            ckpt.model.channels,
            data.series.num_stations(),
            data.series.channels()
        );
    }
    let model = ckpt.to_model()?;
    Ok((ckpt, model))
}

#[derive(Serialize)]
struct EvaluationFile {
    variant: AblationVariant,
    model: MetricsReport,
    historical_average: MetricsReport,
}

fn print_report(name: &str, r: &MetricsReport) {
    let pcc = r.overall.pcc.map_or("n/a".into(), |p| format!("{p:.4}"));
    println!("{name:<20} rmse {:.4}  mae {:.4}  pcc {pcc}", r.overall.rmse, r.overall.mae);
}

pub fn evaluate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg, out)?;
    let (ckpt, model) = load_checkpoint(out, &data)?;
    let mut prepared = prepared(&data)?;
    if prepared.scaler != ckpt.scaler {
        eprintln!("warning: scaler refitted on this data differs from the checkpoint; using the checkpoint's");
        prepared.standardized = ckpt.scaler.transform(&prepared.raw)?;
        prepared.scaler = ckpt.scaler.clone();
    }
    let range = prepared.split.test.clone();
    let report = evaluate(&model, &prepared, &range)?;
    let baseline = evaluate(&HistoricalAverage, &prepared, &range)?;
    print_report(ckpt.variant.tag(), &report);
    print_report("historical average", &baseline);
    for h in &report.per_horizon {
        println!("  {:>5}  rmse {:.4}  mae {:.4}", h.label, h.metrics.rmse, h.metrics.mae);
    }
    fs::write(out.join(METRICS_CSV), report.to_csv())?;
    write_json(&out.join(METRICS_JSON), &EvaluationFile { variant: ckpt.variant, model: report, historical_average: baseline })
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg, out)?;
    let (ckpt, model) = load_checkpoint(out, &data)?;
    let t = data.series.num_bins();
    let p = cfg.model.history;
    if t < p {
        bail!("series of {t} bins is shorter than the {p}-bin history");
    }
    let window = data.series.values.slice_axis(0, t - p..t)?;
    let input = ckpt.scaler.transform(&window)?.reshape(vec![1, p, data.series.num_stations(), data.series.channels()])?;
    let forecast = ckpt.scaler.inverse(&model.forecast(&input, ckpt.model.horizon)?)?;
    let (q, n, d) = (ckpt.model.horizon, data.series.num_stations(), data.series.channels());
    let mut csv = String::from("time_bin,station_id,pickup,dropoff\n");
    let f = forecast.data();
    for step in 0..q {
        for s in 0..n {
            let base = (step * n + s) * d;
            csv += &format!("{},{},{},{}\n", t + step, s, f[base], f[base + 1]);
        }
    }
    fs::write(out.join(FORECAST_FILE), csv)?;
    println!("wrote {} forecast rows for bins {}..{} to {}", q * n, t, t + q, out.join(FORECAST_FILE).display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg, out)?;
    let (source, _) = graph_source(cfg, &data)?;
    let prepared = prepared(&data)?;
    let model_config = cfg.model_config(data.series.num_stations(), data.series.channels());
    let table = run_ablation(&cfg.ablation.variants, &prepared, model_config, &source, &cfg.train_config())?;
    for r in &table.rows {
        let pcc = r.metrics.pcc.map_or("n/a".into(), |p| format!("{p:.4}"));
        println!("{:<14} rmse {:.4}  mae {:.4}  pcc {pcc}", r.variant.tag(), r.metrics.rmse, r.metrics.mae);
    }
    fs::write(out.join(ABLATION_FILE), table.to_csv())?;
    Ok(())
}
