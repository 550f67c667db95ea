//! Goodness-of-clustering measures, perfect-tensor spectra and the
//! constants of the perturbation bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affinity::{deviation_norm, perfect_degree, TensorSpec};
use crate::spectral::{EmbeddingMode, TsccRun};
use crate::{Error, Partition, Result};

/// Roundoff allowance below which principal angles snap to `0` or `pi/2`.
pub const ANGLE_TOL: f64 = 1e-10;

/// Absolute slack on `TV` when checking the perturbation inequality. The
/// eigensolver cannot resolve `TV` below this even when `E = 0`.
pub const TV_ROUNDOFF_FLOOR: f64 = 1e-12;

fn check_rows(rows: &DMatrix<f64>, partition: &Partition) -> Result<()> {
    if rows.nrows() != partition.n() {
        return Err(Error::DimensionMismatch {
            expected: partition.n(),
            found: rows.nrows(),
        });
    }
    Ok(())
}

/// Mean row of each group, in partition order.
pub fn cluster_centers(rows: &DMatrix<f64>, partition: &Partition) -> Result<Vec<DVector<f64>>> {
    check_rows(rows, partition)?;
    Ok(partition
        .groups()
        .iter()
        .map(|g| {
            let mut c = DVector::zeros(rows.ncols());
            for &i in g {
                c += rows.row(i).transpose();
            }
            c / g.len() as f64
        })
        .collect())
}

/// Sum of squared distances of rows to their group centers.
pub fn total_variation(u: &DMatrix<f64>, partition: &Partition) -> Result<f64> {
    let centers = cluster_centers(u, partition)?;
    Ok((0..u.nrows())
        .map(|i| (u.row(i).transpose() - &centers[partition.group_of(i)]).norm_squared())
        .sum())
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `|U_a U_a' - U_b U_b'|_F` for orthonormal-column inputs.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(a, b)?;
    let k = a.ncols() as f64;
    let overlap = (a.transpose() * b).norm_squared();
    Ok((2.0 * k - 2.0 * overlap).max(0.0).sqrt())
}

/// Principal angles between `span(a)` and `span(b)`, ascending.
///
/// Small angles come from the sines (singular values of `b - a a'b`) and
/// large ones from the cosines, which keeps both ends accurate.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_same_shape(a, b)?;
    let ab = a.transpose() * b;
    let mut cos: Vec<f64> = ab.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    let residual = b - a * &ab;
    let mut sin: Vec<f64> = residual
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    let half_pi = std::f64::consts::FRAC_PI_2;
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| {
            let theta = if c > std::f64::consts::FRAC_1_SQRT_2 { s.asin() } else { c.acos() };
            if theta < ANGLE_TOL {
                0.0
            } else if half_pi - theta < ANGLE_TOL {
                half_pi
            } else {
                theta
            }
        })
        .collect())
}

/// `sum_{i<j} <c_i, c_j>^2 / (sum_k |c_k|^2)^2` over group centers of `rows`.
pub fn separation_factor(rows: &DMatrix<f64>, partition: &Partition) -> Result<f64> {
    let centers = cluster_centers(rows, partition)?;
    let total: f64 = centers.iter().map(|c| c.norm_squared()).sum();
    if total == 0.0 {
        return Err(Error::Numerical("all cluster centers are zero".into()));
    }
    let mut cross = 0.0;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            cross += centers[i].dot(&centers[j]).powi(2);
        }
    }
    Ok(cross / (total * total))
}

/// Fraction of rows at least half the center separation away from their own
/// center. Defined for two groups only.
pub fn identification_error(rows: &DMatrix<f64>, partition: &Partition) -> Result<f64> {
    if partition.k() != 2 {
        return Err(Error::Unsupported(format!(
            "identification error needs K = 2, got {}",
            partition.k()
        )));
    }
    let centers = cluster_centers(rows, partition)?;
    let half = 0.5 * (&centers[0] - &centers[1]).norm();
    let bad = (0..rows.nrows())
        .filter(|&i| (rows.row(i).transpose() - &centers[partition.group_of(i)]).norm() >= half)
        .count();
    Ok(bad as f64 / rows.nrows() as f64)
}

/// Column `k` is the indicator of group `k` divided by `sqrt(N_k)`.
pub fn perfect_embedding(partition: &Partition) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(partition.n(), partition.k());
    for (k, g) in partition.groups().iter().enumerate() {
        let v = (g.len() as f64).sqrt().recip();
        for &i in g {
            u[(i, k)] = v;
        }
    }
    u
}

/// `(d+1) perm(N-2, d)`, the repeated eigenvalue of a perfect unnormalized block.
pub fn perfect_nu(size: usize, d: usize) -> f64 {
    let mut p = (d + 1) as f64;
    for j in 0..d {
        p *= (size as f64) - 2.0 - j as f64;
    }
    p
}

/// Closed-form spectrum of the perfect `Z~` (or `W~`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerfectSpectrum {
    /// All `N` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// `lambda_K - lambda_{K+1}`.
    pub eigengap: f64,
}

pub fn perfect_spectrum(sizes: &[usize], d: usize, mode: EmbeddingMode) -> Result<PerfectSpectrum> {
    if sizes.is_empty() {
        return Err(Error::invalid("no clusters"));
    }
    let min = match mode {
        EmbeddingMode::Normalized => d + 3,
        EmbeddingMode::Unnormalized => d + 2,
    };
    if let Some(&bad) = sizes.iter().find(|&&n| n < min) {
        return Err(Error::AssumptionViolated(format!(
            "cluster size {bad} is below the minimum {min} for d={d}"
        )));
    }
    let mut eigenvalues = Vec::new();
    for &n in sizes {
        let (top, rest) = match mode {
            EmbeddingMode::Normalized => (
                1.0,
                (d + 1) as f64 / (((n - 1) * (n - d - 1)) as f64),
            ),
            EmbeddingMode::Unnormalized => (perfect_degree(n, d), perfect_nu(n, d)),
        };
        eigenvalues.push(top);
        eigenvalues.extend(std::iter::repeat_n(rest, n - 1));
    }
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let k = sizes.len();
    let eigengap = eigenvalues[k - 1] - eigenvalues.get(k).copied().unwrap_or(0.0);
    Ok(PerfectSpectrum {
        eigenvalues,
        eigengap,
    })
}

/// `min(1, K min_k N_k / N)`: the largest `eps` with `N_k >= eps N / K`.
pub fn size_ratio(sizes: &[usize]) -> f64 {
    let n: usize = sizes.iter().sum();
    let min = *sizes.iter().min().unwrap_or(&0);
    (sizes.len() as f64 * min as f64 / n as f64).min(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundConstants {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Eigengap of the perfect normalized matrix.
    pub delta_k_tilde: f64,
    pub alpha: Option<f64>,
}

/// `degrees` and `perfect_degrees` are per point, in the same order.
pub fn bound_constants(
    k: usize,
    d: usize,
    sizes: &[usize],
    degrees: &[f64],
    perfect_degrees: &[f64],
) -> Result<BoundConstants> {
    if sizes.len() != k {
        return Err(Error::invalid("number of sizes differs from K"));
    }
    if degrees.len() != perfect_degrees.len() || degrees.is_empty() {
        return Err(Error::invalid("degree vectors must be nonempty and of equal length"));
    }
    let min = *sizes.iter().min().unwrap_or(&0);
    if min < 2 * d + 3 {
        return Err(Error::AssumptionViolated(format!(
            "smallest cluster has {min} points, fewer than 2d+3 = {}",
            2 * d + 3
        )));
    }
    if degrees.iter().chain(perfect_degrees).any(|&x| !(x > 0.0)) {
        return Err(Error::invalid("degrees must be strictly positive"));
    }
    let epsilon1 = size_ratio(sizes);
    let epsilon2 = degrees
        .iter()
        .zip(perfect_degrees)
        .map(|(a, b)| a / b)
        .fold(f64::INFINITY, f64::min);
    let df = d as f64;
    let r = 2.0 * k as f64 / epsilon1;
    let c0 = 16.0 / epsilon2 * r.powf(2.0 * df + 5.0)
        + 8.0 * (2.0 * k as f64).sqrt() / epsilon2.sqrt() * r.powf(df + 2.5);
    let delta_k_tilde = perfect_spectrum(sizes, d, EmbeddingMode::Normalized)?.eigengap;
    Ok(BoundConstants {
        epsilon1,
        epsilon2,
        c0,
        c1: 32.0 / 9.0 * c0 * c0,
        c2: 32.0 * r.powf(2.0 * (df + 2.0)),
        delta_k_tilde,
        alpha: None,
    })
}

/// Minimum sample size for the unnormalized bound.
pub fn unnormalized_min_n(k: usize, d: usize, epsilon1: f64) -> f64 {
    let kf = k as f64;
    (2.0 * (d + 1) as f64
        * (1.0 - (kf - 1.0) / kf * epsilon1).powi(d as i32)
        * (2.0 * kf / epsilon1).powi(d as i32 + 2))
    .sqrt()
}

/// `TV / (K - TV)^2`, the ceiling on the separation factor in `T` space.
pub fn separation_bound(tv: f64, k: usize) -> f64 {
    tv / (k as f64 - tv).powi(2)
}

/// Ceiling on `e_id(T)`, or `None` when `TV` is too large for it to apply.
pub fn id_error_bound_t(tv: f64) -> Option<f64> {
    let threshold = (3f64.sqrt() - 1.0).powi(2);
    (tv < threshold).then(|| 4.0 * tv / (2.0 - tv - 2.0 * tv.sqrt()))
}

/// Ceiling on `e_id(U)`, or `None` when `TV` is too large for it to apply.
pub fn id_error_bound_u(tv: f64, epsilon1: f64) -> Option<f64> {
    let threshold = ((2.0 + 4.0 / (epsilon1 * epsilon1)).sqrt() - 2.0 / epsilon1).powi(2);
    (tv < threshold).then(|| 4.0 * tv / (2.0 - tv - 4.0 / epsilon1 * tv.sqrt()))
}

/// Lower bound on `min D_ii / D~_ii` for data inside a ball of diameter `diam`.
pub fn epsilon2_ball_bound(d: usize, diam: f64, sigma: f64) -> f64 {
    (-2.0 * ((d + 2) as f64).sqrt() * diam / sigma).exp()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Misclassification {
    pub count: usize,
    pub rate: f64,
    /// `mapping[p - 1]` is the ground-truth group (0-based) matched to
    /// predicted label `p`.
    pub mapping: Vec<usize>,
}

/// Misclassified points under the best bijection between predicted labels
/// (`1..=K'`) and ground-truth groups, found by exhaustive search.
pub fn misclassification(predicted: &[usize], truth: &Partition) -> Result<Misclassification> {
    if predicted.len() != truth.n() {
        return Err(Error::invalid("label count differs from ground truth"));
    }
    if predicted.contains(&0) {
        return Err(Error::invalid("labels must start at 1"));
    }
    let kp = predicted.iter().copied().max().unwrap_or(1);
    let k = kp.max(truth.k());
    if k > 9 {
        return Err(Error::Unsupported(format!("exhaustive alignment of {k} labels")));
    }
    let mut table = vec![vec![0usize; k]; k];
    for (i, &p) in predicted.iter().enumerate() {
        table[p - 1][truth.group_of(i)] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (0usize, perm.clone());
    let score = |p: &[usize]| (0..k).map(|a| table[a][p[a]]).sum::<usize>();
    // Heap's algorithm
    let mut c = vec![0usize; k];
    best.0 = score(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best.0 {
                best = (s, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let count = predicted.len() - best.0;
    Ok(Misclassification {
        count,
        rate: count as f64 / predicted.len() as f64,
        mapping: best.1[..kp].to_vec(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundStatus {
    Holds,
    Violated,
    HypothesisNotMet { reason: String },
}

/// Outcome of checking `TV <= C x` with `x = N^{-order} |E|_F^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub mode: EmbeddingMode,
    pub n: usize,
    /// Dimension entering the constants (`d - 1` for the linear variant).
    pub effective_d: usize,
    pub x: f64,
    pub tv: f64,
    /// `C1` or `C2`.
    pub constant: Option<f64>,
    pub threshold: Option<f64>,
    pub bound: Option<f64>,
    pub constants: Option<BoundConstants>,
    pub status: BoundStatus,
    /// `|Z - Z~|_F`, for inspection only.
    pub z_deviation_frobenius: f64,
}

/// Perfect weight matrix laid out in the point order of `truth`.
fn perfect_weights_for(truth: &Partition, d: usize) -> DMatrix<f64> {
    let n = truth.n();
    DMatrix::from_fn(n, n, |i, j| {
        if truth.group_of(i) != truth.group_of(j) {
            return 0.0;
        }
        let size = truth.size_of_group_containing(i) as f64;
        let first = if i == j { 1.0 } else { 2.0 };
        (0..=d).map(|t| size - first - t as f64).product::<f64>()
    })
}

/// Checks the perturbation bound for one pipeline run against `truth`.
pub fn verify_perturbation_bound(run: &TsccRun, points: &[Vec<f64>], truth: &Partition) -> Result<PerturbationReport> {
    let spec: &TensorSpec = &run.spec;
    let effective_d = spec.order() - 2;
    let n = truth.n();
    let k = truth.k();
    let deviation = deviation_norm(spec, points, truth)?;
    let x = deviation.normalized;
    let tv = total_variation(&run.embedding.u, truth)?;
    let mode = run.embedding.mode;

    let w_tilde = perfect_weights_for(truth, effective_d);
    let perfect_degrees: Vec<f64> = (0..n)
        .map(|i| perfect_degree(truth.size_of_group_containing(i), effective_d))
        .collect();
    let z_tilde = match mode {
        EmbeddingMode::Normalized => DMatrix::from_fn(n, n, |i, j| {
            w_tilde[(i, j)] / (perfect_degrees[i] * perfect_degrees[j]).sqrt()
        }),
        EmbeddingMode::Unnormalized => w_tilde,
    };
    let z_deviation_frobenius = (&run.z - z_tilde).norm();

    let mut report = PerturbationReport {
        mode,
        n,
        effective_d,
        x,
        tv,
        constant: None,
        threshold: None,
        bound: None,
        constants: None,
        status: BoundStatus::HypothesisNotMet {
            reason: String::new(),
        },
        z_deviation_frobenius,
    };
    let constants = match bound_constants(k, effective_d, &truth.sizes(), run.weights.degrees(), &perfect_degrees) {
        Ok(c) => c,
        Err(e) => {
            report.status = BoundStatus::HypothesisNotMet { reason: e.to_string() };
            return Ok(report);
        }
    };
    let c = match mode {
        EmbeddingMode::Normalized => constants.c1,
        EmbeddingMode::Unnormalized => constants.c2,
    };
    report.constant = Some(c);
    report.threshold = Some(1.0 / (8.0 * c));
    report.bound = Some(c * x);
    let min_n = unnormalized_min_n(k, effective_d, constants.epsilon1);
    report.status = if mode == EmbeddingMode::Unnormalized && (n as f64) < min_n {
        BoundStatus::HypothesisNotMet {
            reason: format!("N = {n} is below the required {min_n:.4e}"),
        }
    } else if x > 1.0 / (8.0 * c) {
        BoundStatus::HypothesisNotMet {
            reason: format!("x = {x:.4e} exceeds 1/(8C) = {:.4e}", 1.0 / (8.0 * c)),
        }
    } else if tv <= c * x + TV_ROUNDOFF_FLOOR {
        BoundStatus::Holds
    } else {
        BoundStatus::Violated
    };
    report.constants = Some(constants);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn perfect_embedding_has_zero_tv_and_beta() {
        let p = Partition::from_labels(&[1, 1, 2, 2, 2, 3, 3, 3, 3]);
        let u = perfect_embedding(&p);
        assert!((u.transpose() * &u - DMatrix::identity(3, 3)).norm() < 1e-15);
        assert!(total_variation(&u, &p).unwrap() < 1e-30);
        assert!(separation_factor(&u, &p).unwrap() < 1e-30);
    }

    #[test]
    fn tv_matches_direct_sum() {
        let u = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 0.0, 2.0]);
        let p = Partition::from_groups(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        assert!((total_variation(&u, &p).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn distance_and_angle_examples() {
        let e1 = col(&[1.0, 0.0]);
        let e2 = col(&[0.0, 1.0]);
        assert_eq!(principal_angles(&e1, &e2).unwrap(), vec![FRAC_PI_2]);
        assert_eq!(principal_angles(&e1, &e1).unwrap(), vec![0.0]);
        let phi = 0.3_f64;
        let v = col(&[phi.cos(), phi.sin()]);
        assert!((principal_angles(&e1, &v).unwrap()[0] - phi).abs() < 1e-10);
        let tiny = 1e-9_f64;
        let v = col(&[tiny.cos(), tiny.sin()]);
        assert!((principal_angles(&e1, &v).unwrap()[0] - tiny).abs() < 1e-18);

        let a = DMatrix::from_fn(4, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let b = DMatrix::from_fn(4, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
        assert!((subspace_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        assert!(subspace_distance(&a, &b.columns(0, 1).into_owned()).is_err());
    }

    #[test]
    fn rotated_basis_has_zero_distance() {
        let a = DMatrix::from_fn(3, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let t = 0.7_f64;
        let r = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert!(subspace_distance(&a, &(&a * r)).unwrap() < 1e-7);
    }

    #[test]
    fn separation_factor_two_centers() {
        let phi = 1.1_f64;
        let rows = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, phi.cos(), phi.sin(), phi.cos(), phi.sin()]);
        let p = Partition::contiguous(&[2, 2]).unwrap();
        let beta = separation_factor(&rows, &p).unwrap();
        assert!((beta - phi.cos().powi(2) / 4.0).abs() < 1e-15);
        assert!(separation_factor(&DMatrix::zeros(4, 2), &p).is_err());
    }

    #[test]
    fn identification_error_planted() {
        // centers end up 1 apart; one row displaced 0.6 from its center
        let rows = DMatrix::from_row_slice(6, 1, &[0.6, -0.3, -0.3, 1.0, 1.0, 1.0]);
        let p = Partition::contiguous(&[3, 3]).unwrap();
        assert!((identification_error(&rows, &p).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let p3 = Partition::contiguous(&[2, 2, 2]).unwrap();
        assert!(matches!(identification_error(&rows, &p3), Err(Error::Unsupported(_))));
    }

    #[test]
    fn perfect_spectrum_examples() {
        let s = perfect_spectrum(&[5, 5], 1, EmbeddingMode::Normalized).unwrap();
        assert_eq!(&s.eigenvalues[..2], &[1.0, 1.0]);
        assert!(s.eigenvalues[2..].iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(s.eigenvalues.len(), 10);
        assert!((s.eigengap - 5.0 / 6.0).abs() < 1e-15);

        let s = perfect_spectrum(&[5], 1, EmbeddingMode::Unnormalized).unwrap();
        assert_eq!(s.eigenvalues[0], 36.0);
        assert!(s.eigenvalues[1..].iter().all(|&v| v == 6.0));
        assert!(perfect_spectrum(&[3], 1, EmbeddingMode::Normalized).is_err());
    }

    #[test]
    fn eigengap_floor_when_sizes_large_enough() {
        for d in 0..3 {
            for n in 2 * d + 3..15 {
                let gap = perfect_spectrum(&[n, n + 1], d, EmbeddingMode::Normalized).unwrap().eigengap;
                assert!(gap >= (2 * d + 3) as f64 / (2 * d + 4) as f64 - 1e-15);
            }
        }
    }

    #[test]
    fn bound_constant_arithmetic() {
        let c = bound_constants(2, 1, &[5, 5], &[1.0; 10], &[1.0; 10]).unwrap();
        assert_eq!(c.epsilon1, 1.0);
        assert_eq!(c.epsilon2, 1.0);
        assert!((c.c0 - 264192.0).abs() < 1e-6);
        assert!((c.c1 - 32.0 / 9.0 * 264192.0f64.powi(2)).abs() < 1e-3);
        assert!((c.c2 - 32.0 * 4f64.powi(6)).abs() < 1e-9);
        assert!(matches!(
            bound_constants(2, 1, &[4, 6], &[1.0; 10], &[1.0; 10]),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn misclassification_alignment() {
        let truth = Partition::from_labels(&[1, 1, 1, 2, 2, 2, 3, 3, 3]);
        let m = misclassification(&[3, 3, 3, 1, 1, 2, 2, 2, 2], &truth).unwrap();
        assert_eq!(m.count, 1);
        let m = misclassification(&[1; 9], &truth).unwrap();
        assert_eq!(m.count, 6);
        assert!(misclassification(&[0; 9], &truth).is_err());
    }

    #[test]
    fn id_error_bounds_domains() {
        assert!(id_error_bound_t(0.6).is_none());
        assert!(id_error_bound_t(0.0) == Some(0.0));
        assert!(id_error_bound_u(0.01, 1.0).is_some());
        assert!(id_error_bound_u(1.0, 1.0).is_none());
        assert!((epsilon2_ball_bound(0, 0.0, 1.0) - 1.0).abs() < 1e-15);
    }
}
