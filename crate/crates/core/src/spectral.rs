//! Normalization, eigen-embedding and K-means: the back half of the
//! clustering pipeline, plus [`run_tscc`] which ties everything together.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{weight_matrix, TensorSpec, TensorVariant, WeightMatrix};
use crate::linalg::symmetric_eigen_desc;
use crate::{Error, Partition, Result};

/// Eigenvalues closer than this are reported as an eigengap collapse.
pub const EIGENGAP_COLLAPSE_TOL: f64 = 1e-8;

/// `Z = D^{-1/2} W D^{-1/2}`.
pub fn normalize_symmetric(w: &WeightMatrix) -> Result<DMatrix<f64>> {
    if !w.isolated().is_empty() {
        return Err(Error::IsolatedPoints(w.isolated().to_vec()));
    }
    let scale: Vec<f64> = w.degrees().iter().map(|d| d.sqrt().recip()).collect();
    let n = w.n();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        w.entries()[(i, j)] * scale[i] * scale[j]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Normalized,
    Unnormalized,
}

/// Top-`K` eigenvectors of `Z` together with its full spectrum.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// `N x K`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// All eigenvalues of `Z`, descending.
    pub eigenvalues: Vec<f64>,
    pub mode: EmbeddingMode,
    /// Set when `lambda_K` and `lambda_{K+1}` coincide within
    /// [`EIGENGAP_COLLAPSE_TOL`]; the top-`K` space is then not unique.
    pub eigengap_collapse: bool,
}

impl Embedding {
    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    /// `lambda_K - lambda_{K+1}`, or `lambda_K` when `K = N`.
    pub fn eigengap(&self) -> f64 {
        let k = self.k();
        self.eigenvalues[k - 1] - self.eigenvalues.get(k).copied().unwrap_or(0.0)
    }
}

pub fn spectral_embedding(z: &DMatrix<f64>, k: usize, mode: EmbeddingMode) -> Result<Embedding> {
    let n = z.nrows();
    if z.ncols() != n {
        return Err(Error::invalid("embedding input must be square"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entries in Z".into()));
    }
    let (eigenvalues, vectors) = symmetric_eigen_desc(z);
    if eigenvalues.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("eigensolver returned non-finite values".into()));
    }
    let eigengap_collapse = k < n && (eigenvalues[k - 1] - eigenvalues[k]).abs() < EIGENGAP_COLLAPSE_TOL;
    Ok(Embedding {
        u: vectors.columns(0, k).into_owned(),
        eigenvalues,
        mode,
        eigengap_collapse,
    })
}

/// `T` rows: `sqrt(N_k) u^(i)` for `i` in cluster `k`.
pub fn row_normalize_t(u: &DMatrix<f64>, partition: &Partition) -> Result<DMatrix<f64>> {
    if partition.n() != u.nrows() {
        return Err(Error::invalid("partition does not match the number of rows"));
    }
    let mut t = u.clone();
    for (i, mut row) in t.row_iter_mut().enumerate() {
        row *= (partition.size_of_group_containing(i) as f64).sqrt();
    }
    Ok(t)
}

/// `V` rows: `u^(i) / |u^(i)|`.
pub fn row_normalize_v(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let zero: Vec<usize> = u
        .row_iter()
        .enumerate()
        .filter(|(_, r)| r.norm() == 0.0)
        .map(|(i, _)| i)
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroRows(zero));
    }
    let mut v = u.clone();
    for mut row in v.row_iter_mut() {
        let len = row.norm();
        row /= len;
    }
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Cluster label of each row, in `1..=K`, numbered by first appearance.
    pub labels: Vec<usize>,
    /// `K` centers, one per row, in label order.
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    /// Seeded initializations that ran (including re-seeds).
    pub restarts_used: usize,
}

impl ClusteringResult {
    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }
}

#[derive(Debug, Clone)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Converged once no center moves farther than this.
    pub tol: f64,
    /// Re-seeds allowed per restart when a cluster ends up empty.
    pub max_reseeds: usize,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iter: 300,
            tol: 1e-9,
            max_reseeds: 10,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (w, r) in nearest.iter_mut().zip(rows) {
            *w = w.min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn assign(rows: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (r, l) in rows.iter().zip(labels.iter_mut()) {
        let mut best = (0, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let dd = sq_dist(r, center);
            if dd < best.1 {
                best = (c, dd);
            }
        }
        *l = best.0;
        inertia += best.1;
    }
    inertia
}

struct Lloyd {
    labels: Vec<usize>,
    centers: Vec<Vec<f64>>,
    inertia: f64,
    empty: bool,
}

fn lloyd(rows: &[Vec<f64>], mut centers: Vec<Vec<f64>>, opts: &KMeansOptions) -> Lloyd {
    let k = centers.len();
    let dim = rows[0].len();
    let mut labels = vec![0; rows.len()];
    for _ in 0..opts.max_iter {
        assign(rows, &centers, &mut labels);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(r) {
                *s += x;
            }
        }
        let mut shift = 0.0_f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centers[c]).sqrt());
            centers[c] = next;
        }
        if shift < opts.tol {
            break;
        }
    }
    let inertia = assign(rows, &centers, &mut labels);
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    Lloyd {
        labels,
        centers,
        inertia,
        empty: counts.contains(&0),
    }
}

/// Best-of-restarts K-means on the rows of `rows`.
///
/// Restart `r` draws from its own ChaCha stream, so the result depends only
/// on `opts.seed`. Ties in inertia go to the lower restart index.
pub fn kmeans_cluster(rows: &DMatrix<f64>, k: usize, opts: &KMeansOptions) -> Result<ClusteringResult> {
    let n = rows.nrows();
    if k == 0 || n < k {
        return Err(Error::invalid(format!("need 1 <= K <= N, got K={k}, N={n}")));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    let data: Vec<Vec<f64>> = rows.row_iter().map(|r| r.iter().copied().collect()).collect();

    let outcomes: Vec<(Option<Lloyd>, usize)> = (0..opts.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(restart as u64);
            let mut attempts = 0;
            loop {
                attempts += 1;
                let run = lloyd(&data, seed_centers(&data, k, &mut rng), opts);
                if !run.empty {
                    return (Some(run), attempts);
                }
                if attempts > opts.max_reseeds {
                    return (None, attempts);
                }
            }
        })
        .collect();

    let restarts_used = outcomes.iter().map(|(_, a)| a).sum();
    let best = outcomes
        .into_iter()
        .filter_map(|(run, _)| run)
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .ok_or_else(|| {
            Error::Numerical("every K-means restart ended with an empty cluster".into())
        })?;

    // Relabel by first appearance.
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &best.labels {
        if relabel[l] == usize::MAX {
            relabel[l] = next;
            next += 1;
        }
    }
    let mut centers = vec![Vec::new(); k];
    for (old, &new) in relabel.iter().enumerate() {
        centers[new] = best.centers[old].clone();
    }
    Ok(ClusteringResult {
        labels: best.labels.iter().map(|&l| relabel[l] + 1).collect(),
        centers,
        inertia: best.inertia,
        restarts_used,
    })
}

/// Optional row normalization of `U` before K-means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowNorm {
    #[default]
    None,
    /// Scale by `sqrt(N_k)`; needs cluster sizes.
    T,
    /// Scale to unit length.
    V,
}

/// Affinity tensor used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineVariant {
    /// Polar tensor on `(d+2)`-tuples.
    #[default]
    Affine,
    /// Linear-subspace tensor on `(d+1)`-tuples plus the origin.
    Linear,
    /// Powers `c_p^q` of the polar curvature.
    Power(f64),
}

#[derive(Debug, Clone)]
pub struct TsccOptions {
    pub variant: PipelineVariant,
    pub row_norm: RowNorm,
    /// Skip degree normalization and embed `W` directly.
    pub unnormalized: bool,
    pub restarts: usize,
    pub seed: u64,
    /// Cluster sizes for the `T` normalization. Without them a preliminary
    /// K-means pass on the raw rows supplies the sizes.
    pub cluster_sizes_from: Option<Partition>,
}

impl Default for TsccOptions {
    fn default() -> Self {
        Self {
            variant: PipelineVariant::Affine,
            row_norm: RowNorm::None,
            unnormalized: false,
            restarts: 20,
            seed: 0,
            cluster_sizes_from: None,
        }
    }
}

/// Every intermediate of one clustering run.
#[derive(Debug, Clone)]
pub struct TsccRun {
    pub spec: TensorSpec,
    pub weights: WeightMatrix,
    /// The matrix that was embedded: normalized `Z`, or `W` itself.
    pub z: DMatrix<f64>,
    pub embedding: Embedding,
    /// Rows K-means ran on (after any row normalization).
    pub rows: DMatrix<f64>,
    pub clustering: ClusteringResult,
}

pub fn tensor_spec_for(variant: PipelineVariant, d: usize, sigma: f64) -> TensorSpec {
    match variant {
        PipelineVariant::Affine => TensorSpec::polar(d, sigma),
        PipelineVariant::Linear => TensorSpec::linear(d, sigma),
        PipelineVariant::Power(q) => TensorSpec::power(d, sigma, q),
    }
}

/// Full clustering pipeline on `points`.
pub fn run_tscc(points: &[Vec<f64>], d: usize, k: usize, sigma: f64, opts: &TsccOptions) -> Result<TsccRun> {
    let spec = tensor_spec_for(opts.variant, d, sigma);
    if spec.variant == TensorVariant::PolarLinear && d == 0 && k > 1 {
        // rank-one W; nothing to separate
        return Err(Error::invalid("the linear variant needs d >= 1 to separate clusters"));
    }
    let weights = weight_matrix(&spec, points)?;
    let (z, mode) = if opts.unnormalized {
        (weights.entries().clone(), EmbeddingMode::Unnormalized)
    } else {
        (normalize_symmetric(&weights)?, EmbeddingMode::Normalized)
    };
    let embedding = spectral_embedding(&z, k, mode)?;
    let km = KMeansOptions {
        restarts: opts.restarts,
        seed: opts.seed,
        ..KMeansOptions::default()
    };
    let rows = match opts.row_norm {
        RowNorm::None => embedding.u.clone(),
        RowNorm::V => row_normalize_v(&embedding.u)?,
        RowNorm::T => {
            let sizes = match &opts.cluster_sizes_from {
                Some(p) => p.clone(),
                None => kmeans_cluster(&embedding.u, k, &km)?.partition(),
            };
            row_normalize_t(&embedding.u, &sizes)?
        }
    };
    let clustering = kmeans_cluster(&rows, k, &km)?;
    Ok(TsccRun {
        spec,
        weights,
        z,
        embedding,
        rows,
        clustering,
    })
}

/// Recomputes the within-cluster sum of squares for the given labels (1-based).
pub fn inertia_of(rows: &DMatrix<f64>, labels: &[usize], centers: &[Vec<f64>]) -> f64 {
    rows.row_iter()
        .zip(labels)
        .map(|(r, &l)| {
            let c = DVector::from_column_slice(&centers[l - 1]);
            (r.transpose() - c).norm_squared()
        })
        .sum()
}
