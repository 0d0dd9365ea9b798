//! Training-free initialization: cluster a small sampled subset of the data
//! with an off-the-shelf method, then use raw data points from each partition
//! as the initial dictionary columns.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{Dataset, HyperParams, MixtureModel, PriorMode};
use crate::numkernel::{soft_threshold_scalar, spectral_norm_sq, Matrix};
use crate::{Error, Result};

/// Seed perturbation used for the single retry after a degenerate partition
/// and for deriving per-stage streams inside [`initialize`].
const RESEED: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Kmeans,
    Spectral,
    SscLite,
}

impl std::str::FromStr for InitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(InitMethod::Kmeans),
            "spectral" => Ok(InitMethod::Spectral),
            "ssc_lite" | "ssc-lite" => Ok(InitMethod::SscLite),
            other => Err(Error::InvalidArgument(format!(
                "unknown init method '{other}' (expected kmeans, spectral, or ssc_lite)"
            ))),
        }
    }
}

/// Uniform sample of `size` distinct indices, deterministic per seed.
pub fn sample_subset(data: &Dataset, size: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.len();
    if size == 0 || size > n {
        return Err(Error::InvalidArgument(format!(
            "subset size {size} outside 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, size).into_vec())
}

/// Partition the subset points into `k` groups. Retries once with a derived
/// seed if any group comes back empty, then reports a degenerate partition.
pub fn cluster_subset(
    data: &Dataset,
    subset: &[usize],
    k: usize,
    method: InitMethod,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || subset.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} points into {k} clusters",
            subset.len()
        )));
    }
    let points: Vec<&[f64]> = subset.iter().map(|&i| data.sample(i)).collect();
    for (attempt, s) in [(0, seed), (1, seed ^ RESEED)] {
        let labels = match method {
            InitMethod::Kmeans => kmeans(&points, k, 100, s),
            InitMethod::Spectral => spectral_knn(&points, k, 10, s)?,
            InitMethod::SscLite => ssc_lite(&points, k, s)?,
        };
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            return Ok(labels);
        }
        if attempt == 1 {
            break;
        }
    }
    Err(Error::InvalidState("degenerate partition".into()))
}

/// For each group, draw `atoms` member points as dictionary columns. Groups
/// smaller than `atoms` are sampled with replacement and repeated picks get
/// small Gaussian perturbations so no two columns are exactly collinear.
pub fn build_dictionaries(
    data: &Dataset,
    subset: &[usize],
    partition: &[usize],
    k: usize,
    atoms: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if partition.len() != subset.len() {
        return Err(Error::ShapeMismatch(format!(
            "partition of {} labels for {} subset points",
            partition.len(),
            subset.len()
        )));
    }
    let dim = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = rand_distr::Normal::new(0.0, 1e-3).expect("valid sigma");
    let mut dictionaries = Vec::with_capacity(k);
    for cluster in 0..k {
        let members: Vec<usize> = subset
            .iter()
            .zip(partition)
            .filter(|&(_, &l)| l == cluster)
            .map(|(&idx, _)| idx)
            .collect();
        if members.is_empty() {
            return Err(Error::InvalidState(format!(
                "degenerate partition: group {cluster} is empty"
            )));
        }
        let picks: Vec<usize> = if members.len() >= atoms {
            rand::seq::index::sample(&mut rng, members.len(), atoms)
                .into_iter()
                .map(|i| members[i])
                .collect()
        } else {
            (0..atoms).map(|_| members[rng.gen_range(0..members.len())]).collect()
        };
        let mut a = Matrix::zeros(dim, atoms);
        let mut seen: Vec<usize> = Vec::new();
        for (col, &point) in picks.iter().enumerate() {
            let repeat = seen.contains(&point);
            seen.push(point);
            let sample = data.sample(point);
            for (row, &value) in sample.iter().enumerate() {
                let jitter = if repeat { noise.sample(&mut rng) } else { 0.0 };
                a.set(row, col, value + jitter);
            }
        }
        dictionaries.push(a);
    }
    Ok(dictionaries)
}

/// Outcome of the full initialization pipeline.
#[derive(Clone, Debug)]
pub struct InitOutcome {
    pub model: MixtureModel,
    pub subset: Vec<usize>,
    pub partition: Vec<usize>,
}

/// Sample a subset, cluster it, and assemble a model with a uniform prior.
pub fn initialize(
    data: &Dataset,
    hyper: &HyperParams,
    prior_mode: PriorMode,
    method: InitMethod,
    subset_size: usize,
    seed: u64,
) -> Result<InitOutcome> {
    if data.dim() != hyper.data_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} but model expects {}",
            data.dim(),
            hyper.data_dim
        )));
    }
    let subset = sample_subset(data, subset_size, seed)?;
    let partition = cluster_subset(data, &subset, hyper.clusters, method, seed ^ (RESEED >> 1))?;
    let dictionaries = build_dictionaries(
        data,
        &subset,
        &partition,
        hyper.clusters,
        hyper.atoms,
        seed ^ RESEED.rotate_left(17),
    )?;
    let k = hyper.clusters;
    let model = MixtureModel::new(
        *hyper,
        dictionaries,
        vec![-(k as f64).ln(); k],
        prior_mode,
    )?;
    Ok(InitOutcome { model, subset, partition })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; assignment ties break toward
/// the lowest center index.
fn kmeans(points: &[&[f64]], k: usize, max_iters: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let n = points.len();
    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].to_vec());
        let latest = centers.last().unwrap();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, latest));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = squared_distance(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, &v) in sums[labels[i]].iter_mut().zip(*p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *dst = s / counts[c] as f64;
                }
            }
            // An empty cluster keeps its previous center.
        }
    }
    labels
}

/// Spectral clustering on a mutual/OR k-nearest-neighbor graph.
fn spectral_knn(points: &[&[f64]], k: usize, neighbors: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    let nn = neighbors.min(n - 1).max(1);
    let mut affinity = vec![0.0f64; n * n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            squared_distance(points[i], points[a])
                .partial_cmp(&squared_distance(points[i], points[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(nn) {
            affinity[i * n + j] = 1.0;
            affinity[j * n + i] = 1.0;
        }
    }
    spectral_from_affinity(&affinity, n, k, seed)
}

/// Normalized-Laplacian spectral clustering on a symmetric nonnegative
/// affinity: embed into the K bottom eigenvectors, row-normalize, k-means.
fn spectral_from_affinity(affinity: &[f64], n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut inv_sqrt_deg = vec![0.0f64; n];
    for i in 0..n {
        let d: f64 = affinity[i * n..(i + 1) * n].iter().sum();
        inv_sqrt_deg[i] = if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
    }
    let laplacian = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        base - inv_sqrt_deg[i] * affinity[i * n + j] * inv_sqrt_deg[j]
    });
    let eig = nalgebra::SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition produced non-finite values".into()));
    }
    let mut embedding = vec![vec![0.0f64; k]; n];
    for (col, &which) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(which);
        for i in 0..n {
            embedding[i][col] = v[i];
        }
    }
    for row in &mut embedding {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    let rows: Vec<&[f64]> = embedding.iter().map(|r| r.as_slice()).collect();
    Ok(kmeans(&rows, k, 100, seed))
}

/// Self-expressive affinity: each point is sparsely coded against the other
/// subset points, and |C| + |C|^T feeds spectral clustering.
fn ssc_lite(points: &[&[f64]], k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    let dim = points[0].len();
    let mut s = Matrix::zeros(dim, n);
    for (j, p) in points.iter().enumerate() {
        for (i, &v) in p.iter().enumerate() {
            s.set(i, j, v);
        }
    }
    let sigma_sq = spectral_norm_sq(&s);
    if sigma_sq <= 0.0 {
        return Err(Error::InvalidArgument(
            "all subset points are zero; self-expressive coding is undefined".into(),
        ));
    }
    let eta = 1.0 / (2.0 * sigma_sq);
    // Penalty scaled to the largest correlation so codes are sparse but not
    // uniformly dead.
    let mut max_corr = 0.0f64;
    let mut corr = vec![0.0; n];
    for p in points {
        s.matvec_t_into(p, &mut corr);
        for &c in &corr {
            max_corr = max_corr.max(c.abs());
        }
    }
    let lambda = 0.1 * max_corr;
    let alpha = eta * lambda;
    let iters = 100;

    let codes: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = points[i];
            let mut x = vec![0.0f64; n];
            let mut x_prev = vec![0.0f64; n];
            let mut z = vec![0.0f64; n];
            let mut resid = vec![0.0f64; dim];
            let mut grad = vec![0.0f64; n];
            let mut t_prev = 1.0f64;
            let mut t = 1.0f64;
            for l in 1..=iters {
                let beta = if l == 1 { 0.0 } else { (t_prev - 1.0) / t };
                for j in 0..n {
                    z[j] = x[j] + beta * (x[j] - x_prev[j]);
                }
                z[i] = 0.0;
                s.matvec_into(&z, &mut resid);
                for (r, &yv) in resid.iter_mut().zip(y) {
                    *r = yv - *r;
                }
                s.matvec_t_into(&resid, &mut grad);
                x_prev.copy_from_slice(&x);
                for j in 0..n {
                    x[j] = soft_threshold_scalar(z[j] + 2.0 * eta * grad[j], alpha);
                }
                x[i] = 0.0;
                t_prev = t;
                t = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            }
            x
        })
        .collect();

    let mut affinity = vec![0.0f64; n * n];
    for (i, code) in codes.iter().enumerate() {
        for (j, &c) in code.iter().enumerate() {
            let w = c.abs();
            affinity[i * n + j] += w;
            affinity[j * n + i] += w;
        }
    }
    spectral_from_affinity(&affinity, n, k, seed)
}
