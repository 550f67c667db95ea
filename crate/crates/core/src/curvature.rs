//! Geometric kernels on small point tuples.
//!
//! A tuple is a slice of `m` points of a common ambient dimension `D`. For the
//! affine kernels `m = d + 2`, where `d` is the intrinsic dimension of the
//! flats being detected; the linear kernel takes `d + 1` points and prepends
//! the origin.
//!
//! Volumes go through the Gram determinant of the edge vectors `z_j - z_0`,
//! evaluated as the squared product of the diagonal of their QR factor. This
//! keeps the cost at `O(m^2 D)` and returns exact zeros for exactly co-flat
//! input instead of the `sqrt(eps)` noise an explicitly formed determinant
//! would leave behind.

use nalgebra::DMatrix;

use crate::linalg::{dist, dot, norm, project_out, symmetric_eigen_desc};
use crate::{Error, Result};

/// Alternative curvatures of a `(d+2)`-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureKind {
    /// Polar curvature, see [`polar_curvature`].
    Polar,
    /// Root of the least-squares error of fitting a `d`-flat to the tuple.
    Dls,
    /// Smallest distance from a vertex to the affine hull of the others.
    H,
}

fn check_dims(points: &[&[f64]]) -> Result<usize> {
    let dim = points.first().map(|p| p.len()).unwrap_or(0);
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
    }
    Ok(dim)
}

/// Pairwise distances, failing when two points coincide.
///
/// Points count as repeated when their distance is below
/// `1e-12 * (1 + max |coordinate|)` over the tuple.
fn pairwise_distances(points: &[&[f64]]) -> Result<Vec<f64>> {
    let m = points.len();
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let tol = 1e-12 * (1.0 + scale);
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let r = dist(points[i], points[j]);
            if r < tol {
                return Err(Error::DegenerateTuple(format!(
                    "points {i} and {j} coincide"
                )));
            }
            out[i * m + j] = r;
            out[j * m + i] = r;
        }
    }
    Ok(out)
}

/// `sqrt(det G)` for the Gram matrix `G` of the edge vectors `z_j - z_0`,
/// i.e. `(m-1)!` times the volume of the simplex.
pub(crate) fn gram_root(points: &[&[f64]]) -> f64 {
    let base = points[0];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    let mut prod = 1.0;
    for p in &points[1..] {
        let mut v: Vec<f64> = p.iter().zip(base).map(|(a, b)| a - b).collect();
        project_out(&mut v, &basis);
        let r = norm(&v);
        if r == 0.0 {
            return 0.0;
        }
        prod *= r;
        v.iter_mut().for_each(|x| *x /= r);
        basis.push(v);
    }
    prod
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Volume of the simplex spanned by the points, `sqrt(det G) / (m-1)!`.
pub fn simplex_volume(points: &[&[f64]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("a simplex needs at least two vertices"));
    }
    check_dims(points)?;
    Ok(gram_root(points) / factorial(points.len() - 1))
}

/// Polar sine of the tuple at `vertex` (0-based).
pub fn polar_sine(points: &[&[f64]], vertex: usize) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("a polar sine needs at least two points"));
    }
    if vertex >= points.len() {
        return Err(Error::invalid(format!(
            "vertex {vertex} out of range for a {}-tuple",
            points.len()
        )));
    }
    check_dims(points)?;
    let m = points.len();
    let dists = pairwise_distances(points)?;
    let denom: f64 = (0..m)
        .filter(|&j| j != vertex)
        .map(|j| dists[vertex * m + j])
        .product();
    Ok((gram_root(points) / denom).min(1.0))
}

/// Polar curvature: `diam * sqrt(sum_i psin_i^2)` over all vertices.
pub fn polar_curvature(points: &[&[f64]]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("polar curvature needs at least two points"));
    }
    check_dims(points)?;
    let m = points.len();
    let dists = pairwise_distances(points)?;
    let root = gram_root(points);
    if root == 0.0 {
        return Ok(0.0);
    }
    let diam = dists.iter().copied().fold(0.0_f64, f64::max);
    let mut sum_sq = 0.0;
    for i in 0..m {
        let denom: f64 = (0..m).filter(|&j| j != i).map(|j| dists[i * m + j]).product();
        let s = (root / denom).min(1.0);
        sum_sq += s * s;
    }
    Ok(diam * sum_sq.sqrt())
}

/// Polar curvature of the origin together with the given points.
pub fn polar_curvature_linear(points: &[&[f64]]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("linear polar curvature needs at least one point"));
    }
    let dim = check_dims(points)?;
    let origin = vec![0.0; dim];
    let mut with_origin: Vec<&[f64]> = Vec::with_capacity(points.len() + 1);
    with_origin.push(&origin);
    with_origin.extend_from_slice(points);
    polar_curvature(&with_origin)
}

/// Evaluates one of the curvatures of a `(d+2)`-tuple (`d = m - 2`).
pub fn alt_curvature(points: &[&[f64]], kind: CurvatureKind) -> Result<f64> {
    match kind {
        CurvatureKind::Polar => polar_curvature(points),
        CurvatureKind::Dls => dls_curvature(points),
        CurvatureKind::H => h_curvature(points),
    }
}

fn dls_curvature(points: &[&[f64]]) -> Result<f64> {
    let m = points.len();
    if m < 2 {
        return Err(Error::invalid("c_dls needs at least two points"));
    }
    let dim = check_dims(points)?;
    pairwise_distances(points)?;
    let d = m - 2;
    let mut centroid = vec![0.0; dim];
    for p in points {
        for (c, x) in centroid.iter_mut().zip(p.iter()) {
            *c += x / m as f64;
        }
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&centroid).map(|(x, c)| x - c).collect())
        .collect();
    // The m x m Gram matrix of centered points shares its nonzero spectrum
    // with the D x D scatter matrix.
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&centered[i], &centered[j]));
    let (values, _) = symmetric_eigen_desc(&gram);
    let residual: f64 = values[d..].iter().map(|v| v.max(0.0)).sum();
    Ok(residual.sqrt())
}

/// Distance from `p` to the affine hull of `hull`.
pub(crate) fn distance_to_hull(p: &[f64], hull: &[&[f64]]) -> f64 {
    let base = hull[0];
    let scale = hull
        .iter()
        .map(|q| dist(q, base))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for q in &hull[1..] {
        let mut v: Vec<f64> = q.iter().zip(base).map(|(a, b)| a - b).collect();
        project_out(&mut v, &basis);
        let r = norm(&v);
        if r > 1e-13 * scale {
            v.iter_mut().for_each(|x| *x /= r);
            basis.push(v);
        }
    }
    let mut v: Vec<f64> = p.iter().zip(base).map(|(a, b)| a - b).collect();
    project_out(&mut v, &basis);
    norm(&v)
}

fn h_curvature(points: &[&[f64]]) -> Result<f64> {
    let m = points.len();
    if m < 2 {
        return Err(Error::invalid("c_h needs at least two points"));
    }
    check_dims(points)?;
    pairwise_distances(points)?;
    let mut best = f64::INFINITY;
    for i in 0..m {
        let others: Vec<&[f64]> = (0..m).filter(|&j| j != i).map(|j| points[j]).collect();
        best = best.min(distance_to_hull(points[i], &others));
    }
    Ok(best)
}

/// Largest pairwise distance.
pub fn diameter(points: &[&[f64]]) -> f64 {
    let mut diam = 0.0_f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            diam = diam.max(dist(points[i], points[j]));
        }
    }
    diam
}
