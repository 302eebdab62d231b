use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type Tensor = crate::tensor::Tensor<f64>;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(vec![r, c], |_| rng.random_range(-1.0f64..1.0))
}

/// Singular values from the eigenvalues of MᵀM, independent of the Jacobi path.
fn oracle_singular_values(m: &Tensor) -> Vec<f64> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mat = DMatrix::from_row_slice(r, c, m.data());
    let gram = mat.transpose() * &mat;
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

#[test]
fn truncation_error_matches_discarded_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = random_matrix(&mut rng, 8, 6);
    let dec = truncated_svd(&m, 3).unwrap();
    let oracle = oracle_singular_values(&m);
    let tail = oracle[3..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let err = dec.reconstruct().sub(&m).unwrap().frobenius_norm();
    assert!((err - tail).abs() < 1e-8, "{err} vs {tail}");
    for (a, b) in dec.s.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10);
    }
    let utu = dec.u.transpose().unwrap().matmul(&dec.u).unwrap();
    assert!(utu.max_abs_diff(&Tensor::eye(3)).unwrap() < 1e-8);
    let vtv = dec.v.transpose().unwrap().matmul(&dec.v).unwrap();
    assert!(vtv.max_abs_diff(&Tensor::eye(3)).unwrap() < 1e-8);
}

fn demand(tau: usize, n: usize, d: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
    Tensor::from_fn(vec![tau, n, d], |i| f(i / (n * d), (i / d) % n, i % d))
}

#[test]
fn duplicate_stations_share_features() {
    let x = demand(30, 4, 2, |t, s, c| {
        let s = if s == 3 { 1 } else { s };
        ((t as f64) * 0.3 + s as f64).sin() + c as f64 * 0.5 + s as f64 * 0.1
    });
    let emb = station_representations(&x, 3).unwrap();
    let row = |i: usize| emb.features.slice_axis(0, i..i + 1).unwrap();
    assert!(row(1).max_abs_diff(&row(3)).unwrap() < 1e-8);
}

#[test]
fn full_rank_features_reconstruct_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(vec![5, 4, 2], |_| rng.random_range(-1.0f64..1.0));
    let emb = station_representations(&x, 4).unwrap();
    // Xs·Xsᵀ = V S Vᵀ, whose square is (XaᵀXa): checks the column space is complete.
    let flat = flatten_demand(&x).unwrap();
    let gram = flat.transpose().unwrap().matmul(&flat).unwrap();
    let k = emb.features.matmul(&emb.features.transpose().unwrap()).unwrap();
    let k2 = k.matmul(&k).unwrap();
    assert!(k2.max_abs_diff(&gram).unwrap() < 1e-8);
}

#[test]
fn station_representation_errors() {
    let x = Tensor::zeros(vec![10, 3, 2]);
    assert!(station_representations(&x, 4).is_err());
    let short = Tensor::from_fn(vec![1, 5, 2], |i| i as f64);
    assert!(station_representations(&short, 3).is_err());
}

#[test]
fn bike_scale_feature_shape() {
    let x = demand(200, 250, 2, |t, s, c| ((t * (s % 17 + 1)) as f64 * 0.01 + c as f64).sin());
    let emb = station_representations(&x, 20).unwrap();
    assert_eq!(emb.features.shape(), &[250, 20]);
}

#[test]
fn gaussian_kernel_examples() {
    let feats = Tensor::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]]);
    let (a, eps) = gaussian_adjacency(&feats, Some(5.0)).unwrap();
    assert_eq!(eps, 5.0);
    assert_eq!(a.weights.at(&[0, 2]), 1.0);
    assert!((a.weights.at(&[0, 1]) - (-1.0f64).exp()).abs() < 1e-15);
    let (wide, _) = gaussian_adjacency(&feats, Some(1e9)).unwrap();
    assert!(wide.weights.data().iter().all(|&w| (w - 1.0).abs() < 1e-12));
    assert!(gaussian_adjacency(&feats, Some(0.0)).is_err());
    assert!(gaussian_adjacency(&Tensor::zeros(vec![3, 2]), None).is_err());
}

#[test]
fn default_epsilon_is_pairwise_distance_std() {
    let feats = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]);
    let (_, eps) = gaussian_adjacency(&feats, None).unwrap();
    // distances 1, 3, 2 → population std sqrt(2/3)
    assert!((eps - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn random_walk_examples() {
    let a = Adjacency::new(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
    assert_eq!(normalize_random_walk(&a).unwrap(), a.weights);
    let b = Adjacency::new(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 2.0]])).unwrap();
    assert_eq!(normalize_random_walk(&b).unwrap().data(), &[0.5, 0.5, 0.0, 1.0]);
    let z = Adjacency::new(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]])).unwrap();
    let err = normalize_random_walk(&z).unwrap_err().to_string();
    assert!(err.contains("station 1"), "{err}");
}

#[test]
fn factorization_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feats = random_matrix(&mut rng, 6, 3);
    let (adj, _) = gaussian_adjacency(&feats, None).unwrap();
    let norm = normalize_random_walk(&adj).unwrap();
    let full = factorize_adjacency(&norm, 6).unwrap();
    assert!(full.implied_adjacency().max_abs_diff(&norm).unwrap() < 1e-8);
    assert!(full.trainable);

    let u = [0.2, 0.5, 0.3];
    let r1 = Tensor::from_fn(vec![3, 3], |i| u[i / 3] * [1.0, 2.0, 3.0][i % 3]);
    let f1 = factorize_adjacency(&r1, 1).unwrap();
    assert!(f1.implied_adjacency().max_abs_diff(&r1).unwrap() < 1e-12);
    assert!(factorize_adjacency(&r1, 4).is_err());
}

#[test]
fn taxi_scale_parameter_reduction() {
    let n = 266;
    let l = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f: FactorPair = random_factors(n, l, &mut rng).unwrap();
    assert_eq!(f.source.shape(), &[266, 50]);
    assert_eq!(f.source.len() + f.target.len(), 26_600);
    assert_eq!(n * n, 70_756);
}

#[test]
fn pcc_self_correlation_is_one() {
    let x = demand(40, 3, 2, |t, s, _| ((t as f64) * (0.2 + s as f64 * 0.1)).sin());
    let a = pcc_adjacency(&x).unwrap();
    for i in 0..3 {
        assert_eq!(a.weights.at(&[i, i]), 1.0);
    }
    assert!(a.weights.data().iter().all(|&w| (0.0..=1.0).contains(&w)));
    let constant = demand(10, 2, 2, |t, s, _| if s == 0 { t as f64 } else { 1.0 });
    assert!(pcc_adjacency(&constant).is_err());
}

#[test]
fn distance_variant_colocated_stations() {
    let c = [LonLat::new(-73.99, 40.73), LonLat::new(-73.99, 40.73), LonLat::new(-73.90, 40.80)];
    let a: Adjacency = distance_adjacency(&c).unwrap();
    assert_eq!(a.weights.at(&[0, 1]), 1.0);
    assert!(a.weights.data().iter().all(|&w| w == 0.0 || w >= DISTANCE_KERNEL_THRESHOLD));
}

#[test]
fn random_variant_is_seed_deterministic() {
    let x = Tensor::zeros(vec![4, 5, 2]);
    let inputs = InitInputs { training_demand: &x, centroids: &[], rank: 3 };
    let a: FactorPair = ablation_init(InitVariant::Random, &inputs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b: FactorPair = ablation_init(InitVariant::Random, &inputs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!(a.source.data().iter().all(|v| v.abs() < RANDOM_INIT_RANGE));
}

fn eckart_young_holds(seed: u64, n: usize, rank: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Tensor::from_fn(vec![n, n], |_| rng.random_range(0.0f64..1.0));
    let f = factorize_adjacency(&m, rank).unwrap();
    let best = f.implied_adjacency().sub(&m).unwrap().frobenius_norm();
    for _ in 0..20 {
        let a = random_matrix(&mut rng, n, rank);
        let b = random_matrix(&mut rng, n, rank);
        let other = a.matmul(&b.transpose().unwrap()).unwrap().sub(&m).unwrap().frobenius_norm();
        assert!(best <= other + 1e-12);
    }
}

#[test]
fn eckart_young_spot_check() {
    for seed in 0..5 {
        eckart_young_holds(seed, 10, 3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gaussian_kernel_is_symmetric_unit_diagonal(seed in 0u64..10_000, n in 3usize..9, f in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = random_matrix(&mut rng, n, f);
        let (adj, _) = gaussian_adjacency(&feats, None).unwrap();
        for i in 0..n {
            prop_assert_eq!(adj.weights.at(&[i, i]), 1.0);
            for j in 0..n {
                let w = adj.weights.at(&[i, j]);
                prop_assert!(w > 0.0 && w <= 1.0);
                prop_assert_eq!(w, adj.weights.at(&[j, i]));
            }
        }
    }

    #[test]
    fn normalized_rows_sum_to_one(seed in 0u64..10_000, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Adjacency::new(Tensor::from_fn(vec![n, n], |_| rng.random_range(0.01f64..10.0))).unwrap();
        let norm = normalize_random_walk(&a).unwrap();
        for i in 0..n {
            let s: f64 = norm.data()[i * n..(i + 1) * n].iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn station_features_are_permutation_equivariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tau, n, d) = (12, 6, 2);
        let x = Tensor::from_fn(vec![tau, n, d], |_| rng.random_range(-1.0f64..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed % n as u64) as usize);
        perm.swap(0, n - 1);
        let px = Tensor::from_fn(vec![tau, n, d], |i| {
            let (t, s, c) = (i / (n * d), (i / d) % n, i % d);
            x.at(&[t, perm[s], c])
        });
        let k = |e: &StationEmbedding| e.features.matmul(&e.features.transpose().unwrap()).unwrap();
        let a = k(&station_representations(&x, 3).unwrap());
        let b = k(&station_representations(&px, 3).unwrap());
        for i in 0..n {
            for j in 0..n {
                prop_assert!((b.at(&[i, j]) - a.at(&[perm[i], perm[j]])).abs() < 1e-8);
            }
        }
    }
}
