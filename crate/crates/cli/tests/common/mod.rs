#![allow(dead_code)]

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ccrnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccrnn")).current_dir(dir).args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[track_caller]
pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout:\n{}\nstderr:\n{}", o.status, stdout(o), stderr(o));
}

/// Trips around `clusters` pick-up hot spots over `days` days with a daily
/// cycle whose phase differs per hot spot.
pub fn write_trip_csv(path: &Path, clusters: usize, days: i64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<(f64, f64)> = (0..clusters).map(|i| (-73.99 + 0.01 * i as f64, 40.74 + 0.012 * (i % 3) as f64)).collect();
    let start = NaiveDate::from_ymd_opt(2016, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut out = String::from("pickup_time,dropoff_time,pickup_lon,pickup_lat,dropoff_lon,dropoff_lat\n");
    let fmt = "%Y-%m-%d %H:%M:%S";
    for bin in 0..days * 48 {
        for (c, &(lon, lat)) in centres.iter().enumerate() {
            let rate = 2.0 + 1.5 * (2.0 * PI * (bin as f64 / 48.0 + c as f64 / clusters as f64)).sin();
            let count = (rate + rng.random_range(0.0..2.0)).floor() as usize;
            for _ in 0..count {
                let t = start + Duration::seconds(bin * 1800 + rng.random_range(0..1790));
                let d = centres[rng.random_range(0..clusters)];
                let t1 = t + Duration::seconds(rng.random_range(300..1500));
                let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.001..0.001);
                let (plon, plat) = (lon + jitter(&mut rng), lat + jitter(&mut rng));
                let (dlon, dlat) = (d.0 + jitter(&mut rng), d.1 + jitter(&mut rng));
                writeln!(out, "{},{},{plon:.6},{plat:.6},{dlon:.6},{dlat:.6}", t.format(fmt), t1.format(fmt)).unwrap();
            }
        }
    }
    std::fs::write(path, out).unwrap();
}

/// A small virtual-station pipeline config reading `trips.csv` beside it.
pub fn small_config(epochs: usize) -> String {
    format!(
        r#"[data]
trips = ["trips.csv"]
val_bins = 48
test_bins = 48

[stations]
mode = "virtual"
num_stations = 5

[model]
history = 4
horizon = 4
xi = 4
embed_dim = 3
layers = 2
diffusion_steps = 2
hidden_dim = 4

[train]
epochs = {epochs}
batch_size = 16
learning_rate = 0.01
seed = 5
"#
    )
}
