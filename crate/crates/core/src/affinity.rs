//! Affinity tensors and their collapse to the weight matrix `W = A A'`.
//!
//! The `(d+2)`-way tensor is never materialized. Affinities are
//! super-symmetric and vanish on repeated indices, so one value per unordered
//! subset of `order` distinct indices is enough. These are computed once into
//! a table ranked in colexicographic order; `W` is then accumulated by
//! streaming over unordered `(order-1)`-subsets `S`, forming the column
//! `a_S[i] = A(i, S)` and adding `(order-1)! * a_S a_S'`.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{polar_curvature, polar_curvature_linear};
use crate::linalg::Compensated;
use crate::{Error, Partition, Result};

/// Which affinity tensor to build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TensorVariant {
    /// `exp(-c_p / sigma)` over `(d+2)`-tuples.
    PolarAffine,
    /// `exp(-c_p(0, ...) / sigma)` over `(d+1)`-tuples, for linear subspaces.
    PolarLinear,
    /// `exp(-c_p^q / sigma)` over `(d+2)`-tuples.
    PolarPower { q: f64 },
    /// 1 on distinct tuples inside one ground-truth cluster, 0 elsewhere.
    Perfect,
}

impl TensorVariant {
    pub fn name(&self) -> &'static str {
        match self {
            TensorVariant::PolarAffine => "polar_affine",
            TensorVariant::PolarLinear => "polar_linear",
            TensorVariant::PolarPower { .. } => "polar_power",
            TensorVariant::Perfect => "perfect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub variant: TensorVariant,
    pub sigma: f64,
    pub d: usize,
    pub ground_truth: Option<Partition>,
}

impl TensorSpec {
    pub fn polar(d: usize, sigma: f64) -> Self {
        Self {
            variant: TensorVariant::PolarAffine,
            sigma,
            d,
            ground_truth: None,
        }
    }

    pub fn linear(d: usize, sigma: f64) -> Self {
        Self {
            variant: TensorVariant::PolarLinear,
            ..Self::polar(d, sigma)
        }
    }

    pub fn power(d: usize, sigma: f64, q: f64) -> Self {
        Self {
            variant: TensorVariant::PolarPower { q },
            ..Self::polar(d, sigma)
        }
    }

    pub fn perfect(d: usize, truth: Partition) -> Self {
        Self {
            variant: TensorVariant::Perfect,
            sigma: 1.0,
            d,
            ground_truth: Some(truth),
        }
    }

    /// Number of indices per tensor entry.
    pub fn order(&self) -> usize {
        match self.variant {
            TensorVariant::PolarLinear => self.d + 1,
            _ => self.d + 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            TensorVariant::Perfect => {
                if self.ground_truth.is_none() {
                    return Err(Error::invalid("the perfect tensor needs a ground-truth partition"));
                }
            }
            TensorVariant::PolarPower { q } if !(q >= 1.0 && q.is_finite()) => {
                return Err(Error::invalid(format!("power q must be >= 1, got {q}")));
            }
            _ => {}
        }
        if self.variant != TensorVariant::Perfect && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    fn check_points(&self, points: &[Vec<f64>]) -> Result<()> {
        self.validate()?;
        let order = self.order();
        if points.len() < order {
            return Err(Error::invalid(format!(
                "need at least {order} points for a {order}-way tensor, got {}",
                points.len()
            )));
        }
        if let Some(truth) = &self.ground_truth {
            if truth.n() != points.len() {
                return Err(Error::invalid(format!(
                    "ground truth covers {} points, dataset has {}",
                    truth.n(),
                    points.len()
                )));
            }
        }
        let dim = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        Ok(())
    }

    /// Affinity of distinct indices, no validation.
    fn entry(&self, points: &[Vec<f64>], indices: &[usize]) -> Result<f64> {
        if self.variant == TensorVariant::Perfect {
            let truth = self.ground_truth.as_ref().expect("validated");
            let g = truth.group_of(indices[0]);
            let same = indices.iter().all(|&i| truth.group_of(i) == g);
            return Ok(if same { 1.0 } else { 0.0 });
        }
        let tuple: Vec<&[f64]> = indices.iter().map(|&i| points[i].as_slice()).collect();
        let c = match self.variant {
            TensorVariant::PolarLinear => polar_curvature_linear(&tuple)?,
            TensorVariant::PolarPower { q } => polar_curvature(&tuple)?.powf(q),
            _ => polar_curvature(&tuple)?,
        };
        Ok((-c / self.sigma).exp())
    }
}

/// Number of ordered selections of `r` out of `n`: `n (n-1) ... (n-r+1)`.
///
/// Returns 0 when `r > n`; saturates at `u64::MAX`.
pub fn perm(n: u64, r: u64) -> u64 {
    if r > n {
        return 0;
    }
    (0..r).fold(1_u64, |acc, i| acc.saturating_mul(n - i))
}

fn perm_f64(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    (0..r).map(|i| (n - i) as f64).product()
}

/// One entry of the affinity tensor. Repeated indices give 0.
pub fn affinity_value(spec: &TensorSpec, points: &[Vec<f64>], indices: &[usize]) -> Result<f64> {
    spec.check_points(points)?;
    if indices.len() != spec.order() {
        return Err(Error::invalid(format!(
            "expected {} indices, got {}",
            spec.order(),
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= points.len()) {
        return Err(Error::invalid(format!("index {bad} out of range")));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Ok(0.0);
    }
    spec.entry(points, indices)
}

/// Binomial coefficients `C(n, k)` for `n <= max_n`, `k <= max_k`.
struct Binomial {
    max_k: usize,
    table: Vec<u64>,
}

impl Binomial {
    fn new(max_n: usize, max_k: usize) -> Self {
        let mut table = vec![0_u64; (max_n + 1) * (max_k + 1)];
        for n in 0..=max_n {
            table[n * (max_k + 1)] = 1;
            for k in 1..=max_k.min(n) {
                let a = table[(n - 1) * (max_k + 1) + k - 1];
                let b = if k <= n - 1 { table[(n - 1) * (max_k + 1) + k] } else { 0 };
                table[n * (max_k + 1) + k] = a.saturating_add(b);
            }
        }
        Self { max_k, table }
    }

    #[inline]
    fn get(&self, n: usize, k: usize) -> u64 {
        if k > self.max_k {
            return 0;
        }
        self.table[n * (self.max_k + 1) + k]
    }

    /// Colexicographic rank of a strictly increasing subset.
    #[inline]
    fn rank(&self, subset: &[usize]) -> usize {
        subset
            .iter()
            .enumerate()
            .map(|(j, &c)| self.get(c, j + 1) as usize)
            .sum()
    }

    fn unrank(&self, mut rank: u64, k: usize, n: usize) -> Vec<usize> {
        let mut out = vec![0; k];
        let mut hi = n;
        for j in (0..k).rev() {
            let mut c = hi - 1;
            while self.get(c, j + 1) > rank {
                c -= 1;
            }
            rank -= self.get(c, j + 1);
            out[j] = c;
            hi = c;
        }
        out
    }
}

/// Advances a strictly increasing subset of `0..n` to its colex successor.
fn next_colex(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    for j in 0..k {
        let limit = if j + 1 < k { subset[j + 1] } else { n };
        if subset[j] + 1 < limit {
            subset[j] += 1;
            for (i, s) in subset.iter_mut().enumerate().take(j) {
                *s = i;
            }
            return true;
        }
    }
    false
}

fn checked_binomial(n: usize, k: usize) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return Err(Error::MemoryCap {
                needed: u128::MAX,
                cap: u64::MAX as u128,
            });
        }
    }
    Ok(acc as u64)
}

/// Execution knobs for [`weight_matrix_with`].
#[derive(Debug, Clone)]
pub struct WeightOptions {
    /// Reject before allocating when the estimate exceeds this many bytes.
    pub memory_cap_bytes: u128,
    /// Number of contiguous chunks the column stream is split into. Results
    /// are deterministic for a fixed chunk count.
    pub chunks: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self {
            memory_cap_bytes: 1 << 31,
            chunks: 16,
        }
    }
}

const TABLE_BLOCK: usize = 1 << 12;

/// One affinity per unordered `order`-subset, ranked in colex order.
fn affinity_table(spec: &TensorSpec, points: &[Vec<f64>], len: usize) -> Result<Vec<f64>> {
    let n = points.len();
    let order = spec.order();
    let binom = Binomial::new(n, order);
    let mut table = vec![0.0; len];
    table
        .par_chunks_mut(TABLE_BLOCK)
        .enumerate()
        .try_for_each(|(block, slots)| -> Result<()> {
            let mut subset = binom.unrank((block * TABLE_BLOCK) as u64, order, n);
            let len = slots.len();
            for (pos, slot) in slots.iter_mut().enumerate() {
                *slot = spec.entry(points, &subset)?;
                if pos + 1 < len {
                    next_colex(&mut subset, n);
                }
            }
            Ok(())
        })?;
    Ok(table)
}

/// Symmetric nonnegative weight matrix and its degrees.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    degrees: Vec<f64>,
    isolated: Vec<usize>,
}

impl WeightMatrix {
    /// Wraps a square matrix, computing degrees as row sums.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::invalid(format!(
                "weight matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let degrees: Vec<f64> = entries.row_iter().map(|r| r.iter().sum()).collect();
        let isolated = degrees
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            entries,
            degrees,
            isolated,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Rows whose degree is exactly zero.
    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Row-major CSV dump: a `#` header line, then one row of `W` per line
    /// followed by its degree.
    pub fn write_csv<W: Write>(&self, mut out: W, d: usize, variant: &str, sigma: f64) -> Result<()> {
        writeln!(out, "# n={} d={} variant={} sigma={}", self.n(), d, variant, sigma)?;
        for (i, row) in self.entries.row_iter().enumerate() {
            let mut line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            line.push(format!("{:e}", self.degrees[i]));
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Streams the exact `W = A A'` of the unfolded tensor with default options.
pub fn weight_matrix(spec: &TensorSpec, points: &[Vec<f64>]) -> Result<WeightMatrix> {
    weight_matrix_with(spec, points, &WeightOptions::default())
}

pub fn weight_matrix_with(
    spec: &TensorSpec,
    points: &[Vec<f64>],
    opts: &WeightOptions,
) -> Result<WeightMatrix> {
    spec.check_points(points)?;
    let n = points.len();
    let order = spec.order();
    let table_len = checked_binomial(n, order)?;
    let columns = checked_binomial(n, order - 1)?;
    let chunks = opts.chunks.max(1).min(columns as usize);
    let needed = table_len as u128 * 8 + (chunks as u128 + 2) * (n * n) as u128 * 16;
    if needed > opts.memory_cap_bytes {
        return Err(Error::MemoryCap {
            needed,
            cap: opts.memory_cap_bytes,
        });
    }

    let table = affinity_table(spec, points, table_len as usize)?;
    let binom = Binomial::new(n, order);
    let per_chunk = (columns as usize).div_ceil(chunks);

    let partials: Vec<Vec<Compensated>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Compensated::default(); n * n];
            let start = c * per_chunk;
            let end = ((c + 1) * per_chunk).min(columns as usize);
            if start >= end {
                return acc;
            }
            let mut subset = binom.unrank(start as u64, order - 1, n);
            let mut merged = vec![0; order];
            let mut nz: Vec<(usize, f64)> = Vec::with_capacity(n);
            for pos in start..end {
                nz.clear();
                let mut p = 0;
                for i in 0..n {
                    if p < subset.len() && subset[p] == i {
                        p += 1;
                        continue;
                    }
                    merged[..p].copy_from_slice(&subset[..p]);
                    merged[p] = i;
                    merged[p + 1..].copy_from_slice(&subset[p..]);
                    let a = table[binom.rank(&merged)];
                    if a != 0.0 {
                        nz.push((i, a));
                    }
                }
                for (x, &(i, ai)) in nz.iter().enumerate() {
                    for &(j, aj) in &nz[x..] {
                        acc[i * n + j].add(ai * aj);
                    }
                }
                if pos + 1 < end {
                    next_colex(&mut subset, n);
                }
            }
            acc
        })
        .collect();

    let total = tree_reduce(partials);
    let factor = perm_f64(order - 1, order - 1);
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = factor * total[i * n + j].value();
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    WeightMatrix::from_entries(entries)
}

/// Pairwise reduction in fixed order: (0,1), (2,3), ... then repeat.
fn tree_reduce(mut parts: Vec<Vec<Compensated>>) -> Vec<Compensated> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.merge(y);
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Closed-form `W` of the perfect tensor for contiguous clusters of the given
/// sizes: block-diagonal with diagonal `P(N_k-1, d+1)` and off-diagonal
/// `P(N_k-2, d+1)`.
pub fn perfect_weight_matrix(cluster_sizes: &[usize], d: usize) -> Result<WeightMatrix> {
    if cluster_sizes.is_empty() {
        return Err(Error::invalid("no clusters"));
    }
    if let Some(&bad) = cluster_sizes.iter().find(|&&s| s < d + 2) {
        return Err(Error::invalid(format!(
            "cluster size {bad} is below d+2 = {}",
            d + 2
        )));
    }
    let n: usize = cluster_sizes.iter().sum();
    let mut entries = DMatrix::zeros(n, n);
    let mut start = 0;
    for &size in cluster_sizes {
        let diag = perm_f64(size - 1, d + 1);
        let off = perm_f64(size - 2, d + 1);
        for i in start..start + size {
            for j in start..start + size {
                entries[(i, j)] = if i == j { diag } else { off };
            }
        }
        start += size;
    }
    WeightMatrix::from_entries(entries)
}

/// Degree `(N_k - d - 1) P(N_k - 1, d + 1)` of every point of a perfect
/// cluster of size `N_k`.
pub fn perfect_degree(size: usize, d: usize) -> f64 {
    if size < d + 1 {
        return 0.0;
    }
    (size - d - 1) as f64 * perm_f64(size - 1, d + 1)
}

/// Deviation of a tensor from the perfect tensor of the same order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `||E||_F`.
    pub frobenius: f64,
    /// `||E||_F^2`.
    pub squared: f64,
    /// `N^{-order} ||E||_F^2`.
    pub normalized: f64,
}

pub fn deviation_norm(spec: &TensorSpec, points: &[Vec<f64>], truth: &Partition) -> Result<Deviation> {
    spec.check_points(points)?;
    if truth.n() != points.len() {
        return Err(Error::invalid("partition size does not match the dataset"));
    }
    let n = points.len();
    let order = spec.order();
    let len = checked_binomial(n, order)?;
    if len as u128 * 8 > WeightOptions::default().memory_cap_bytes {
        return Err(Error::MemoryCap {
            needed: len as u128 * 8,
            cap: WeightOptions::default().memory_cap_bytes,
        });
    }
    let table = affinity_table(spec, points, len as usize)?;
    Ok(deviation_from_table(&table, truth, n, order))
}

fn deviation_from_table(table: &[f64], truth: &Partition, n: usize, order: usize) -> Deviation {
    let mut subset: Vec<usize> = (0..order).collect();
    let mut sum = Compensated::default();
    for &a in table {
        let g = truth.group_of(subset[0]);
        let perfect = if subset.iter().all(|&i| truth.group_of(i) == g) { 1.0 } else { 0.0 };
        let e = a - perfect;
        sum.add(e * e);
        next_colex(&mut subset, n);
    }
    let squared = perm_f64(order, order) * sum.value();
    Deviation {
        frobenius: squared.sqrt(),
        squared,
        normalized: squared / (n as f64).powi(order as i32),
    }
}
