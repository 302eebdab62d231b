//! Data-driven adjacency construction and its low-rank factorisation.
//!
//! Training demand is flattened to a `(τ·d) × N` matrix whose truncated SVD
//! yields one feature row per station. A Gaussian kernel over those rows gives
//! a symmetric adjacency, which is row-normalised and factorised into the
//! source/target embeddings that seed the learned graph.

mod svd;

use rand::Rng;

pub use svd::{svd, truncated_svd, Svd};

use crate::error::{invalid, Error, Result};
use crate::geo::{haversine_km, LonLat};
use crate::tensor::Tensor;
use crate::Scalar;

/// Kernel entries below this are zeroed in the distance-based initialisation.
pub const DISTANCE_KERNEL_THRESHOLD: f64 = 0.1;

/// Half-width of the uniform distribution used for random factor initialisation.
pub const RANDOM_INIT_RANGE: f64 = 0.1;

/// Compact per-station features from the station-wise SVD factor.
#[derive(Clone, Debug)]
pub struct StationEmbedding<T: Scalar = f64> {
    /// `N × ξ`, columns in descending singular-value order.
    pub features: Tensor<T>,
    pub singular_values: Vec<T>,
}

/// Nonnegative `N × N` edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency<T: Scalar = f64> {
    pub weights: Tensor<T>,
}

impl<T: Scalar> Adjacency<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 || weights.shape()[0] != weights.shape()[1] {
            return invalid(format!("adjacency must be square, got {:?}", weights.shape()));
        }
        if weights.data().iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return invalid("adjacency weights must be finite and nonnegative");
        }
        Ok(Self { weights })
    }

    pub fn num_nodes(&self) -> usize {
        self.weights.shape()[0]
    }
}

/// Source and target node embeddings whose product is the implied adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair<T: Scalar = f64> {
    pub source: Tensor<T>,
    pub target: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> FactorPair<T> {
    pub fn new(source: Tensor<T>, target: Tensor<T>) -> Result<Self> {
        if source.rank() != 2 || source.shape() != target.shape() {
            return invalid(format!(
                "factor shapes must be equal N×L matrices, got {:?} and {:?}",
                source.shape(),
                target.shape()
            ));
        }
        Ok(Self { source, target, trainable: true })
    }

    pub fn num_nodes(&self) -> usize {
        self.source.shape()[0]
    }

    pub fn embedding_dim(&self) -> usize {
        self.source.shape()[1]
    }

    /// Dense `E1 · E2ᵀ`.
    pub fn implied_adjacency(&self) -> Tensor<T> {
        self.source
            .matmul(&self.target.transpose().expect("matrix"))
            .expect("conformable factors")
    }
}

/// Flattens `[τ, N, d]` demand into the `(τ·d) × N` matrix with row index `t·d + c`.
pub fn flatten_demand<T: Scalar>(demand: &Tensor<T>) -> Result<Tensor<T>> {
    if demand.rank() != 3 {
        return invalid(format!("demand must be [time, stations, channels], got {:?}", demand.shape()));
    }
    let (tau, n, d) = (demand.shape()[0], demand.shape()[1], demand.shape()[2]);
    let src = demand.data();
    Ok(Tensor::from_fn(vec![tau * d, n], |idx| {
        let (row, station) = (idx / n, idx % n);
        let (t, c) = (row / d, row % d);
        src[(t * n + station) * d + c]
    }))
}

/// Station features `V · diag(√S)` from the rank-ξ SVD of the flattened demand.
pub fn station_representations<T: Scalar>(training_demand: &Tensor<T>, xi: usize) -> Result<StationEmbedding<T>> {
    let flat = flatten_demand(training_demand)?;
    let (rows, n) = (flat.shape()[0], flat.shape()[1]);
    if xi == 0 {
        return invalid("station feature dimension must be positive");
    }
    if xi > n {
        return invalid(format!("station feature dimension {xi} exceeds station count {n}"));
    }
    if xi > rows {
        return invalid(format!("station feature dimension {xi} exceeds time·channel length {rows}"));
    }
    let dec = truncated_svd(&flat, xi)?;
    let mut features = dec.v.clone();
    for i in 0..n {
        for j in 0..xi {
            features.data_mut()[i * xi + j] *= dec.s[j].sqrt();
        }
    }
    Ok(StationEmbedding { features, singular_values: dec.s })
}

fn pairwise_sq_distances<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let rows = x.data();
    let mut out = vec![T::zero(); n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d: T = (0..f).map(|k| (rows[a * f + k] - rows[b * f + k]).powi(2)).sum();
            out[a * n + b] = d;
            out[b * n + a] = d;
        }
    }
    out
}

/// Population standard deviation of the off-diagonal pairwise values (each
/// unordered pair counted once).
fn pair_std<T: Scalar>(values: &[T], n: usize) -> T {
    let mut sum = T::zero();
    let mut count = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            sum += values[a * n + b];
            count += 1;
        }
    }
    if count == 0 {
        return T::zero();
    }
    let mean = sum / T::from_usize_lossy(count);
    let mut var = T::zero();
    for a in 0..n {
        for b in a + 1..n {
            var += (values[a * n + b] - mean).powi(2);
        }
    }
    (var / T::from_usize_lossy(count)).sqrt()
}

/// Gaussian-kernel similarity `exp(-‖x_a - x_b‖² / ε²)` between feature rows.
///
/// When `epsilon` is `None` it defaults to the standard deviation of all
/// pairwise Euclidean distances. Returns the adjacency and the ε used.
pub fn gaussian_adjacency<T: Scalar>(features: &Tensor<T>, epsilon: Option<T>) -> Result<(Adjacency<T>, T)> {
    if features.rank() != 2 {
        return invalid(format!("features must be a matrix, got {:?}", features.shape()));
    }
    let n = features.shape()[0];
    if n < 2 {
        return invalid("gaussian adjacency needs at least two stations");
    }
    let sq = pairwise_sq_distances(features);
    let eps = match epsilon {
        Some(e) => e,
        None => {
            let dist: Vec<T> = sq.iter().map(|v| v.sqrt()).collect();
            pair_std(&dist, n)
        }
    };
    if !(eps > T::zero()) || !eps.is_finite() {
        return invalid(format!("kernel width must be positive and finite, got {eps}"));
    }
    let e2 = eps * eps;
    let weights = Tensor::from_fn(vec![n, n], |i| (-sq[i] / e2).exp());
    Ok((Adjacency::new(weights)?, eps))
}

/// Random-walk normalisation `D⁻¹A`.
pub fn normalize_random_walk<T: Scalar>(adj: &Adjacency<T>) -> Result<Tensor<T>> {
    let n = adj.num_nodes();
    let mut out = adj.weights.clone();
    for i in 0..n {
        let row = &mut out.data_mut()[i * n..(i + 1) * n];
        let degree: T = row.iter().copied().sum();
        if !(degree > T::zero()) {
            return Err(Error::Numerical(format!("station {i} has zero degree; cannot normalise")));
        }
        for v in row.iter_mut() {
            *v /= degree;
        }
    }
    Ok(out)
}

/// Rank-L factorisation `Â ≈ E1·E2ᵀ` with `E1 = U√S`, `E2 = V√S`.
pub fn factorize_adjacency<T: Scalar>(normalized: &Tensor<T>, rank: usize) -> Result<FactorPair<T>> {
    if normalized.rank() != 2 || normalized.shape()[0] != normalized.shape()[1] {
        return invalid(format!("adjacency must be square, got {:?}", normalized.shape()));
    }
    let n = normalized.shape()[0];
    if rank == 0 || rank > n {
        return invalid(format!("embedding dimension {rank} must be in 1..={n}"));
    }
    let dec = truncated_svd(normalized, rank)?;
    let mut source = dec.u.clone();
    let mut target = dec.v.clone();
    for i in 0..n {
        for j in 0..rank {
            let r = dec.s[j].sqrt();
            source.data_mut()[i * rank + j] *= r;
            target.data_mut()[i * rank + j] *= r;
        }
    }
    FactorPair::new(source, target)
}

/// Result of the data-driven graph pipeline, kept for inspection and persistence.
#[derive(Clone, Debug)]
pub struct GraphBuild<T: Scalar = f64> {
    pub embedding: StationEmbedding<T>,
    pub adjacency: Adjacency<T>,
    pub epsilon: T,
    pub normalized: Tensor<T>,
    pub factors: FactorPair<T>,
}

/// Station features → Gaussian adjacency → random-walk normalisation → rank-L factors.
pub fn data_driven_graph<T: Scalar>(
    training_demand: &Tensor<T>,
    xi: usize,
    rank: usize,
    epsilon: Option<T>,
) -> Result<GraphBuild<T>> {
    let embedding = station_representations(training_demand, xi)?;
    let (adjacency, epsilon) = gaussian_adjacency(&embedding.features, epsilon)?;
    let normalized = normalize_random_walk(&adjacency)?;
    let factors = factorize_adjacency(&normalized, rank)?;
    Ok(GraphBuild { embedding, adjacency, epsilon, normalized, factors })
}

/// Adjacency initialisation used by the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitVariant {
    Distance,
    Pcc,
    Random,
}

/// Thresholded Gaussian kernel over haversine distances between station
/// centroids; the kernel width is the standard deviation of those distances.
pub fn distance_adjacency<T: Scalar>(centroids: &[LonLat]) -> Result<Adjacency<T>> {
    let n = centroids.len();
    if n < 2 {
        return invalid("distance adjacency needs at least two stations");
    }
    let mut dist = vec![0.0f64; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = haversine_km(centroids[a], centroids[b]);
            dist[a * n + b] = d;
            dist[b * n + a] = d;
        }
    }
    let sigma = pair_std(&dist, n);
    let weights = Tensor::from_fn(vec![n, n], |i| {
        let w = if sigma > 0.0 { (-(dist[i] / sigma).powi(2)).exp() } else { 1.0 };
        T::lit(if w < DISTANCE_KERNEL_THRESHOLD { 0.0 } else { w })
    });
    Adjacency::new(weights)
}

/// Pearson correlation between per-station total-demand series (channels
/// summed), with negative correlations clipped to zero.
pub fn pcc_adjacency<T: Scalar>(training_demand: &Tensor<T>) -> Result<Adjacency<T>> {
    if training_demand.rank() != 3 {
        return invalid(format!("demand must be [time, stations, channels], got {:?}", training_demand.shape()));
    }
    let (tau, n, d) = (training_demand.shape()[0], training_demand.shape()[1], training_demand.shape()[2]);
    let src = training_demand.data();
    let series: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..tau).map(|t| (0..d).map(|c| src[(t * n + s) * d + c].as_f64()).sum()).collect())
        .collect();
    let centered: Vec<(Vec<f64>, f64)> = series
        .iter()
        .enumerate()
        .map(|(s, x)| {
            let mean = x.iter().sum::<f64>() / tau as f64;
            let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(Error::Numerical(format!("station {s} has a constant demand series; correlation undefined")))
            } else {
                Ok((c, norm))
            }
        })
        .collect::<Result<_>>()?;
    let mut weights = Tensor::zeros(vec![n, n]);
    for a in 0..n {
        weights.set(&[a, a], T::one());
        for b in a + 1..n {
            let (ca, na) = &centered[a];
            let (cb, nb) = &centered[b];
            let r = ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            let w = T::lit(r.clamp(0.0, 1.0));
            weights.set(&[a, b], w);
            weights.set(&[b, a], w);
        }
    }
    Adjacency::new(weights)
}

/// Factors drawn uniformly from `(-0.1, 0.1)`.
pub fn random_factors<T: Scalar, R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> Result<FactorPair<T>> {
    if n == 0 || rank == 0 {
        return invalid("random factors need positive dimensions");
    }
    let mut draw = || Tensor::from_fn(vec![n, rank], |_| T::lit(rng.random_range(-RANDOM_INIT_RANGE..RANDOM_INIT_RANGE)));
    let source = draw();
    let target = draw();
    FactorPair::new(source, target)
}

/// Inputs available to the ablation initialisers.
pub struct InitInputs<'a, T: Scalar = f64> {
    pub training_demand: &'a Tensor<T>,
    pub centroids: &'a [LonLat],
    pub rank: usize,
}

/// Initial factors for a non-default adjacency initialisation.
pub fn ablation_init<T: Scalar, R: Rng + ?Sized>(
    variant: InitVariant,
    inputs: &InitInputs<'_, T>,
    rng: &mut R,
) -> Result<FactorPair<T>> {
    match variant {
        InitVariant::Distance => {
            let adj = distance_adjacency(inputs.centroids)?;
            factorize_adjacency(&normalize_random_walk(&adj)?, inputs.rank)
        }
        InitVariant::Pcc => {
            let adj = pcc_adjacency(inputs.training_demand)?;
            factorize_adjacency(&normalize_random_walk(&adj)?, inputs.rank)
        }
        InitVariant::Random => random_factors(inputs.training_demand.shape()[1], inputs.rank, rng),
    }
}

#[cfg(test)]
mod tests;
