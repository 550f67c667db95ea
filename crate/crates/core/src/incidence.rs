//! Monte Carlo curvature moments of measures, incidence constants, the
//! constant `alpha`, and closed-form incidence bounds for the example
//! configurations.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{polar_curvature, polar_curvature_linear};
use crate::modelgen::{BuiltinMeasure, Measure, Orientation};
use crate::{Error, Result};

/// Which integral of the curvature is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentKind {
    /// `sqrt(E c_p^2)` over `(d+2)`-tuples.
    Polar,
    /// `sqrt(E c_p^2(0, z_1..z_{d+1}))`.
    PolarLinear,
    /// `E c_p^{2q}` over `(d+2)`-tuples.
    PolarPower { q: f64 },
    /// `sqrt(max_{z_1} E c_p^2(z_1, z_2..z_{d+2}))`, maximized over sampled pivots.
    Hat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub kind: MomentKind,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    /// Tuples per estimate.
    pub samples: usize,
    pub seed: u64,
    /// Independent streams the draws are split over; fixes the reduction order.
    pub chunks: usize,
    /// Candidate pivots for [`MomentKind::Hat`].
    pub pivots: usize,
    /// Inner tuples per pivot when screening pivots (shared by all pivots).
    pub screen: usize,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            chunks: 16,
            pivots: 200,
            screen: 1000,
        }
    }
}

impl MonteCarloOptions {
    pub fn with_samples(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            ..Self::default()
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids: `purpose` in the top 16 bits, `index` in the middle, chunk low.
fn stream_id(purpose: u64, index: u64, chunk: u64) -> u64 {
    (purpose << 48) | (index << 24) | chunk
}

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }
}

/// Mean and standard error of `f` over `samples` draws split into chunks,
/// each with its own stream; chunks merge in index order.
fn mc_mean<F>(samples: usize, chunks: usize, seed: u64, purpose: u64, index: u64, f: F) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = chunks.clamp(1, samples.max(1));
    let per = samples.div_ceil(chunks);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = per.min(samples.saturating_sub(c * per));
            let mut rng = rng_for(seed, stream_id(purpose, index, c as u64));
            let mut m = Moments::default();
            for _ in 0..count {
                m.push(f(&mut rng));
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if total.n > 1.0 { total.m2 / (total.n - 1.0) } else { 0.0 };
    (total.mean, (var / total.n).sqrt())
}

/// `c_p` of the tuple, with or without the origin. Coinciding draws (a null
/// event for continuous measures) count as co-flat.
fn tuple_curvature(points: &[Vec<f64>], linear: bool) -> f64 {
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let c = if linear {
        polar_curvature_linear(&refs)
    } else {
        polar_curvature(&refs)
    };
    match c {
        Ok(v) => v,
        Err(Error::DegenerateTuple(_)) => 0.0,
        Err(e) => panic!("curvature of a sampled tuple failed: {e}"),
    }
}

fn draw(measure: &dyn Measure, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = measure.sample(rng);
    assert!(measure.contains(&p), "sampler left its support: {p:?}");
    p
}

/// Root of a mean with its delta-method standard error.
fn sqrt_estimate(mean: f64, se: f64) -> (f64, f64) {
    let value = mean.max(0.0).sqrt();
    let se = if value > 0.0 { se / (2.0 * value) } else { 0.0 };
    (value, se)
}

/// Estimates a curvature moment of `measure` for `d`-flats.
pub fn mc_curvature_moment(
    measure: &dyn Measure,
    d: usize,
    kind: MomentKind,
    opts: &MonteCarloOptions,
) -> Result<MomentEstimate> {
    if opts.samples < 100 {
        return Err(Error::invalid("at least 100 samples are required"));
    }
    let (value, std_error) = match kind {
        MomentKind::Polar | MomentKind::PolarLinear => {
            let linear = kind == MomentKind::PolarLinear;
            let m = if linear { d + 1 } else { d + 2 };
            let (mean, se) = mc_mean(opts.samples, opts.chunks, opts.seed, 1, 0, |rng| {
                let tuple: Vec<Vec<f64>> = (0..m).map(|_| draw(measure, rng)).collect();
                tuple_curvature(&tuple, linear).powi(2)
            });
            sqrt_estimate(mean, se)
        }
        MomentKind::PolarPower { q } => {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(Error::invalid("power moments need q >= 1"));
            }
            mc_mean(opts.samples, opts.chunks, opts.seed, 2, 0, |rng| {
                let tuple: Vec<Vec<f64>> = (0..d + 2).map(|_| draw(measure, rng)).collect();
                tuple_curvature(&tuple, false).powf(2.0 * q)
            })
        }
        MomentKind::Hat => {
            let pivot = best_pivot(measure, d, opts)?;
            let (mean, se) = mc_mean(opts.samples, opts.chunks, opts.seed, 4, 0, |rng| {
                let mut tuple = vec![pivot.clone()];
                tuple.extend((0..d + 1).map(|_| draw(measure, rng)));
                tuple_curvature(&tuple, false).powi(2)
            });
            sqrt_estimate(mean, se)
        }
    };
    Ok(MomentEstimate {
        kind,
        value,
        std_error,
        samples: opts.samples,
    })
}

/// Screens `opts.pivots` sampled pivots against one shared set of
/// `opts.screen` inner tuples and returns the pivot with the largest mean.
/// The supremum over the support can only be larger.
fn best_pivot(measure: &dyn Measure, d: usize, opts: &MonteCarloOptions) -> Result<Vec<f64>> {
    if opts.pivots == 0 || opts.screen == 0 {
        return Err(Error::invalid("hat moments need pivots and screen samples"));
    }
    let mut rng = rng_for(opts.seed, stream_id(3, 0, 0));
    let pivots: Vec<Vec<f64>> = (0..opts.pivots).map(|_| draw(measure, &mut rng)).collect();
    let mut rng = rng_for(opts.seed, stream_id(3, 1, 0));
    let inner: Vec<Vec<Vec<f64>>> = (0..opts.screen)
        .map(|_| (0..d + 1).map(|_| draw(measure, &mut rng)).collect())
        .collect();
    let scores: Vec<f64> = pivots
        .par_iter()
        .map(|z| {
            inner
                .iter()
                .map(|rest| {
                    let mut tuple = vec![z.clone()];
                    tuple.extend(rest.iter().cloned());
                    tuple_curvature(&tuple, false).powi(2)
                })
                .sum::<f64>()
        })
        .collect();
    let best = (0..pivots.len())
        .reduce(|a, b| if scores[b] > scores[a] { b } else { a })
        .unwrap_or(0);
    Ok(pivots[best].clone())
}

/// Multisets of size `m` over `0..k`, excluding the constant ones, in
/// lexicographic order.
pub fn mixed_patterns(k: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, m: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            if cur.first() != cur.last() {
                out.push(cur.clone());
            }
            return;
        }
        for v in start..k {
            cur.push(v);
            rec(k, m, v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, m, 0, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Estimate of one mixed integral of the incidence constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternEstimate {
    /// Measure index (0-based) of each tuple slot.
    pub pattern: Vec<usize>,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncidenceEstimate {
    /// The largest pattern estimate.
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub sigma: f64,
    pub linear: bool,
    pub patterns: Vec<PatternEstimate>,
}

/// Estimates the incidence constant: the largest mixed expectation of
/// `exp(-c_p / sigma)`. Each multiset of measure indices is estimated once,
/// since `c_p` is symmetric in its arguments.
pub fn mc_incidence_constant(
    measures: &[&dyn Measure],
    d: usize,
    sigma: f64,
    linear: bool,
    opts: &MonteCarloOptions,
) -> Result<IncidenceEstimate> {
    if measures.len() < 2 {
        return Err(Error::invalid("the incidence constant needs K >= 2 measures"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if linear && d == 0 {
        return Err(Error::invalid("the linear variant needs d >= 1"));
    }
    if opts.samples < 100 {
        return Err(Error::invalid("at least 100 samples are required"));
    }
    let dim = measures[0].dim();
    if let Some(m) = measures.iter().find(|m| m.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: m.dim(),
        });
    }
    let m = if linear { d + 1 } else { d + 2 };
    let patterns: Vec<PatternEstimate> = mixed_patterns(measures.len(), m)
        .into_iter()
        .enumerate()
        .map(|(idx, pattern)| {
            let (value, std_error) = mc_mean(opts.samples, opts.chunks, opts.seed, 5, idx as u64, |rng| {
                let tuple: Vec<Vec<f64>> = pattern.iter().map(|&k| draw(measures[k], rng)).collect();
                (-tuple_curvature(&tuple, linear) / sigma).exp()
            });
            PatternEstimate {
                pattern,
                value,
                std_error,
            }
        })
        .collect();
    let best = patterns
        .iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .expect("K >= 2 gives at least one mixed pattern");
    Ok(IncidenceEstimate {
        value: best.value,
        std_error: best.std_error,
        samples: opts.samples,
        sigma,
        linear,
        patterns,
    })
}

/// `alpha = sum_k c_p(mu_k)^2 / sigma^2 + C_in(mu_1..mu_K; sigma/2)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaDecomposition {
    pub within_term: f64,
    pub incidence_term: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub linear: bool,
    pub within: Vec<MomentEstimate>,
    pub incidence: IncidenceEstimate,
}

impl AlphaDecomposition {
    /// Standard error of `alpha`, treating the pieces as independent.
    pub fn std_error(&self) -> f64 {
        let within: f64 = self
            .within
            .iter()
            .map(|m| (2.0 * m.value * m.std_error / (self.sigma * self.sigma)).powi(2))
            .sum();
        (within + self.incidence.std_error.powi(2)).sqrt()
    }
}

/// With `linear`, the origin-anchored curvature is used throughout.
pub fn alpha_constant(
    measures: &[&dyn Measure],
    d: usize,
    sigma: f64,
    linear: bool,
    opts: &MonteCarloOptions,
) -> Result<AlphaDecomposition> {
    let kind = if linear {
        MomentKind::PolarLinear
    } else {
        MomentKind::Polar
    };
    let incidence = mc_incidence_constant(measures, d, sigma / 2.0, linear, opts)?;
    let within: Vec<MomentEstimate> = measures
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let o = MonteCarloOptions {
                seed: opts.seed.wrapping_add(1 + k as u64),
                ..opts.clone()
            };
            mc_curvature_moment(*m, d, kind, &o)
        })
        .collect::<Result<_>>()?;
    let within_term = within.iter().map(|m| m.value * m.value).sum::<f64>() / (sigma * sigma);
    Ok(AlphaDecomposition {
        within_term,
        incidence_term: incidence.value,
        alpha: within_term + incidence.value,
        sigma,
        linear,
        within,
        incidence,
    })
}

/// Configurations with closed-form incidence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "example", rename_all = "snake_case")]
pub enum AnalyticExample {
    /// Segments `[0,L] x {0}` and `{0} x [0,L]`, polar tensor, lines.
    OrthogonalLinesTscc { length: f64 },
    /// Segments of length `L` at angle `theta`, linear variant.
    AngledLinesTlscc { length: f64, theta: f64 },
    /// Strips of length `L` and width `eps` around the axes, linear variant.
    RectanglesTlscc { length: f64, eps: f64 },
    /// Perpendicular unit half-disks in `R^3`, linear variant.
    HalfDisksTlscc,
}

impl AnalyticExample {
    pub fn name(&self) -> &'static str {
        match self {
            Self::OrthogonalLinesTscc { .. } => "orthogonal_lines_tscc",
            Self::AngledLinesTlscc { .. } => "angled_lines_tlscc",
            Self::RectanglesTlscc { .. } => "rectangles_tlscc",
            Self::HalfDisksTlscc => "half_disks_tlscc",
        }
    }

    /// Flat dimension of the configuration.
    pub fn d(&self) -> usize {
        match self {
            Self::HalfDisksTlscc => 2,
            _ => 1,
        }
    }

    pub fn linear(&self) -> bool {
        !matches!(self, Self::OrthogonalLinesTscc { .. })
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::OrthogonalLinesTscc { length } => length > 0.0 && length.is_finite(),
            Self::AngledLinesTlscc { length, theta } => {
                length > 0.0 && length.is_finite() && theta > 0.0 && theta <= PI / 2.0
            }
            Self::RectanglesTlscc { length, eps } => {
                length > 0.0 && eps > 0.0 && (length / eps).is_finite()
            }
            Self::HalfDisksTlscc => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid parameters for {}", self.name())))
        }
    }

    /// The two measures of the configuration.
    pub fn measures(&self) -> Result<[BuiltinMeasure; 2]> {
        self.validate()?;
        Ok(match *self {
            Self::OrthogonalLinesTscc { length } => [
                BuiltinMeasure::Segment {
                    length,
                    orientation: Orientation::First,
                },
                BuiltinMeasure::Segment {
                    length,
                    orientation: Orientation::Second,
                },
            ],
            Self::AngledLinesTlscc { length, theta } => [
                BuiltinMeasure::Segment {
                    length,
                    orientation: Orientation::First,
                },
                BuiltinMeasure::AngledLine { length, theta },
            ],
            Self::RectanglesTlscc { length, eps } => [
                BuiltinMeasure::RectangleStrip {
                    length,
                    eps,
                    orientation: Orientation::First,
                },
                BuiltinMeasure::RectangleStrip {
                    length,
                    eps,
                    orientation: Orientation::Second,
                },
            ],
            Self::HalfDisksTlscc => [
                BuiltinMeasure::HalfDisk3d {
                    orientation: Orientation::First,
                },
                BuiltinMeasure::HalfDisk3d {
                    orientation: Orientation::Second,
                },
            ],
        })
    }
}

/// Closed-form upper bound on the incidence constant of `example` at `sigma`.
pub fn analytic_bound(example: &AnalyticExample, sigma: f64) -> Result<f64> {
    example.validate()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be positive"));
    }
    Ok(match *example {
        AnalyticExample::OrthogonalLinesTscc { length } => {
            let a = 2f64.sqrt() * length / sigma;
            -(-a).exp_m1() / a
        }
        AnalyticExample::AngledLinesTlscc { length, theta } => {
            let a = length * theta.sin() / sigma;
            2.0 / (a * a) * (1.0 - (-a).exp() * (1.0 + a))
        }
        AnalyticExample::RectanglesTlscc { length, eps } => {
            let omega = length / eps;
            let s34 = sigma.powf(0.75);
            sigma.sqrt() / (omega * omega)
                + 2.0 * sigma.powf(0.25) / omega * (-1.0 / (2.0 * s34)).exp()
                + (-1.0 / s34).exp()
        }
        AnalyticExample::HalfDisksTlscc => {
            let r = sigma.powf(0.25);
            8.0 * sigma.sqrt() / (PI * PI) + 8.0 * r / PI + 4.0 * sigma * sigma / r.sin().powi(4)
        }
    })
}

/// Machine-readable record of one estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncidenceRecord {
    pub kind: String,
    pub params: serde_json::Value,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// Estimates the incidence constant of `example` and pairs it with its bound.
pub fn example_record(example: &AnalyticExample, sigma: f64, opts: &MonteCarloOptions) -> Result<IncidenceRecord> {
    let [a, b] = example.measures()?;
    let est = mc_incidence_constant(&[&a, &b], example.d(), sigma, example.linear(), opts)?;
    let mut params = serde_json::to_value(example)?;
    params["sigma"] = serde_json::json!(sigma);
    params["seed"] = serde_json::json!(opts.seed);
    Ok(IncidenceRecord {
        kind: example.name().to_string(),
        params,
        value: est.value,
        std_error: est.std_error,
        samples: est.samples,
        bound: Some(analytic_bound(example, sigma)?),
    })
}
