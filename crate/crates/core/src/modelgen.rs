//! Synthetic mixtures of flats, the named example measures, least-squares
//! flat fitting and dataset CSV I/O.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, project_out, symmetric_eigen_desc};
use crate::{Error, Partition, Result};

const FRAME_TOL: f64 = 1e-10;
const SUPPORT_TOL: f64 = 1e-12;

/// An affine `d`-flat: `base + span(frame)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flat {
    pub base: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
}

impl Flat {
    /// Validates dimensions and orthonormality of `frame`.
    pub fn new(base: Vec<f64>, frame: Vec<Vec<f64>>) -> Result<Self> {
        let dim = base.len();
        if frame.len() >= dim {
            return Err(Error::invalid(format!(
                "a flat needs d < D, got d={} in R^{dim}",
                frame.len()
            )));
        }
        for (a, u) in frame.iter().enumerate() {
            if u.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: u.len(),
                });
            }
            for (b, v) in frame.iter().enumerate().take(a + 1) {
                let target = if a == b { 1.0 } else { 0.0 };
                if (dot(u, v) - target).abs() > FRAME_TOL {
                    return Err(Error::invalid("flat frame is not orthonormal"));
                }
            }
        }
        if base.iter().chain(frame.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite flat coordinates"));
        }
        Ok(Self { base, frame })
    }

    /// Orthonormalizes `directions` (which must be independent) first.
    pub fn from_directions(base: Vec<f64>, directions: &[Vec<f64>]) -> Result<Self> {
        let mut frame: Vec<Vec<f64>> = Vec::with_capacity(directions.len());
        for v in directions {
            let mut w = v.clone();
            let scale = norm(&w);
            project_out(&mut w, &frame);
            let len = norm(&w);
            if !(len > 1e-12 * scale) {
                return Err(Error::invalid("flat directions are linearly dependent"));
            }
            w.iter_mut().for_each(|x| *x /= len);
            frame.push(w);
        }
        Self::new(base, frame)
    }

    pub fn d(&self) -> usize {
        self.frame.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// `base + sum_j t_j frame_j`.
    pub fn point_at(&self, coords: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (t, u) in coords.iter().zip(&self.frame) {
            p.iter_mut().zip(u).for_each(|(x, ui)| *x += t * ui);
        }
        p
    }

    /// Euclidean distance from `x` to the flat.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = x.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        project_out(&mut r, &self.frame);
        norm(&r)
    }
}

/// One mixture component: a flat, a sample count and the half-width of the
/// symmetric box of in-flat coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatComponent {
    pub base: Vec<f64>,
    pub frame: Vec<Vec<f64>>,
    pub size: usize,
    pub half_width: f64,
}

impl FlatComponent {
    pub fn flat(&self) -> Result<Flat> {
        Flat::new(self.base.clone(), self.frame.clone())
    }

    /// Diameter of the in-flat support box.
    pub fn support_diameter(&self) -> f64 {
        2.0 * self.half_width * (self.frame.len() as f64).sqrt()
    }
}

/// A hybrid linear model. `noise` is the standard deviation of the
/// orthogonal Gaussian offset as a fraction of each flat's support diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
    pub flats: Vec<FlatComponent>,
}

impl MixtureModel {
    pub fn from_toml(text: &str) -> Result<Self> {
        let model: Self = toml::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn k(&self) -> usize {
        self.flats.len()
    }

    pub fn d(&self) -> usize {
        self.flats.first().map_or(0, |f| f.frame.len())
    }

    pub fn ambient_dim(&self) -> usize {
        self.flats.first().map_or(0, |f| f.base.len())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.flats.iter().map(|f| f.size).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.flats.is_empty() {
            return Err(Error::invalid("a model needs at least one flat"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a finite nonnegative number"));
        }
        let (d, dim) = (self.d(), self.ambient_dim());
        for f in &self.flats {
            f.flat()?;
            if f.base.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.base.len(),
                });
            }
            if f.frame.len() != d {
                return Err(Error::invalid("all flats must have the same dimension"));
            }
            if f.size < d + 2 {
                return Err(Error::invalid(format!(
                    "each flat needs at least d+2 = {} points, got {}",
                    d + 2,
                    f.size
                )));
            }
            if !(f.half_width > 0.0 && f.half_width.is_finite()) {
                return Err(Error::invalid("half_width must be positive"));
            }
        }
        Ok(())
    }

    /// One-line description used as dataset provenance.
    pub fn describe(&self) -> String {
        format!(
            "mixture K={} d={} D={} sizes={:?} noise={} seed={}",
            self.k(),
            self.d(),
            self.ambient_dim(),
            self.sizes(),
            self.noise,
            self.seed
        )
    }
}

/// `K` random `d`-flats in `R^D`: base uniform in the unit cube, directions
/// uniform on the sphere, in-flat coordinates uniform on `[-1/2, 1/2]^d`.
pub fn random_flats_model(
    ambient: usize,
    d: usize,
    sizes: &[usize],
    noise: f64,
    seed: u64,
) -> Result<MixtureModel> {
    if d >= ambient {
        return Err(Error::invalid("need d < D"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flats = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let base: Vec<f64> = (0..ambient).map(|_| rng.random::<f64>()).collect();
        let flat = loop {
            let dirs: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..ambient).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            if let Ok(f) = Flat::from_directions(base.clone(), &dirs) {
                break f;
            }
        };
        flats.push(FlatComponent {
            base,
            frame: flat.frame,
            size,
            half_width: 0.5,
        });
    }
    let model = MixtureModel { seed, noise, flats };
    model.validate()?;
    Ok(model)
}

/// Three random lines in the plane, 25 points each.
pub fn three_lines(noise: f64, seed: u64) -> Result<MixtureModel> {
    random_flats_model(2, 1, &[25, 25, 25], noise, seed)
}

/// Two random lines in the plane with 80 and 20 points.
pub fn two_lines_unbalanced(noise: f64, seed: u64) -> Result<MixtureModel> {
    random_flats_model(2, 1, &[80, 20], noise, seed)
}

/// Models addressable by name from the command line.
pub fn named_model(name: &str, noise: f64, seed: u64) -> Result<MixtureModel> {
    match name {
        "three_lines" => three_lines(noise, seed),
        "two_lines_80_20" => two_lines_unbalanced(noise, seed),
        _ => Err(Error::invalid(format!(
            "unknown model {name:?} (expected three_lines or two_lines_80_20)"
        ))),
    }
}

/// A point set with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub truth: Option<Partition>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, truth: Option<Partition>, provenance: impl Into<String>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::invalid("dataset has no coordinates"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite coordinate in dataset"));
            }
        }
        if let Some(t) = &truth {
            if t.n() != points.len() {
                return Err(Error::invalid("ground truth does not match the number of points"));
            }
        }
        Ok(Self {
            points,
            truth,
            provenance: provenance.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Ground-truth labels in `1..=K`, following the partition's group order.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.truth
            .as_ref()
            .map(|t| t.membership().iter().map(|g| g + 1).collect())
    }

    /// Writes `x1,..,xD[,label]` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        let labels = self.labels();
        if labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            if let Some(l) = &labels {
                row.push(l[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`]. A final column
    /// named `label` becomes the ground truth.
    pub fn read_csv<R: Read>(input: R, provenance: impl Into<String>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = r.headers()?.clone();
        let has_label = header.iter().last() == Some("label");
        let dim = header.len() - usize::from(has_label);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {}: bad number {:?}", line + 2, &rec[j]))
                })
            };
            points.push((0..dim).map(parse).collect::<Result<Vec<f64>>>()?);
            if has_label {
                labels.push(rec[dim].parse::<usize>().map_err(|_| {
                    Error::Parse(format!("row {}: bad label {:?}", line + 2, &rec[dim]))
                })?);
            }
        }
        if points.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let truth = has_label.then(|| Partition::from_labels(&labels));
        Self::new(points, truth, provenance)
    }
}

/// Draws a dataset from `model`. Flat `k` uses ChaCha stream `k`, so each
/// component is reproducible on its own.
pub fn sample_mixture(model: &MixtureModel) -> Result<Dataset> {
    model.validate()?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (k, comp) in model.flats.iter().enumerate() {
        let flat = comp.flat()?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(k as u64 + 1);
        let std = model.noise * comp.support_diameter();
        for _ in 0..comp.size {
            let coords: Vec<f64> = (0..flat.d())
                .map(|_| rng.random_range(-comp.half_width..=comp.half_width))
                .collect();
            let mut p = flat.point_at(&coords);
            if std > 0.0 {
                let mut offset: Vec<f64> = (0..flat.ambient_dim())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                project_out(&mut offset, &flat.frame);
                p.iter_mut().zip(&offset).for_each(|(x, o)| *x += std * o);
            }
            points.push(p);
            labels.push(k);
        }
    }
    Dataset::new(points, Some(Partition::from_labels(&labels)), model.describe())
}

/// A probability measure that can be sampled.
pub trait Measure: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Support membership, up to roundoff.
    fn contains(&self, x: &[f64]) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Along the x axis (`L1`, `R1`) or the plane `x = 0` (`D1`).
    First,
    /// Along the y axis (`L2`, `R2`) or the plane `z = 0` (`D2`).
    Second,
}

/// The example measures, all uniform on their support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BuiltinMeasure {
    /// `[0, L] x {0}`, or `{0} x [0, L]`.
    Segment { length: f64, orientation: Orientation },
    /// `r (cos theta, sin theta)` for `r` in `[0, L]`.
    AngledLine { length: f64, theta: f64 },
    /// `[eps, L+eps] x [0, eps]`, or `[0, eps] x [eps, L+eps]`.
    RectangleStrip {
        length: f64,
        eps: f64,
        orientation: Orientation,
    },
    /// `(0, rho cos phi, rho sin phi)` with `phi` in `[0, pi]`, or
    /// `(r cos theta, r sin theta, 0)` with `theta` in `[-pi/2, pi/2]`.
    HalfDisk3d { orientation: Orientation },
    /// Uniform on `[-h, h]^d` in the flat's own coordinates.
    FlatPatch { flat: Flat, half_width: f64 },
}

impl BuiltinMeasure {
    fn validate(&self) -> Result<()> {
        let positive = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive")))
            }
        };
        match self {
            Self::Segment { length, .. } => positive(*length, "L"),
            Self::AngledLine { length, theta } => {
                positive(*length, "L")?;
                if !(*theta > 0.0 && *theta <= PI / 2.0) {
                    return Err(Error::invalid("theta must lie in (0, pi/2]"));
                }
                Ok(())
            }
            Self::RectangleStrip { length, eps, .. } => {
                positive(*length, "L")?;
                positive(*eps, "eps")
            }
            Self::HalfDisk3d { .. } => Ok(()),
            Self::FlatPatch { half_width, .. } => positive(*half_width, "half_width"),
        }
    }
}

impl Measure for BuiltinMeasure {
    fn dim(&self) -> usize {
        match self {
            Self::HalfDisk3d { .. } => 3,
            Self::FlatPatch { flat, .. } => flat.ambient_dim(),
            _ => 2,
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut u = || rng.random::<f64>();
        match self {
            Self::Segment { length, orientation } => {
                let t = length * u();
                match orientation {
                    Orientation::First => vec![t, 0.0],
                    Orientation::Second => vec![0.0, t],
                }
            }
            Self::AngledLine { length, theta } => {
                let r = length * u();
                vec![r * theta.cos(), r * theta.sin()]
            }
            Self::RectangleStrip {
                length,
                eps,
                orientation,
            } => {
                let along = eps + length * u();
                let across = eps * u();
                match orientation {
                    Orientation::First => vec![along, across],
                    Orientation::Second => vec![across, along],
                }
            }
            Self::HalfDisk3d { orientation } => {
                let rho = u().sqrt();
                match orientation {
                    Orientation::First => {
                        let phi = PI * u();
                        vec![0.0, rho * phi.cos(), rho * phi.sin()]
                    }
                    Orientation::Second => {
                        let theta = PI * (u() - 0.5);
                        vec![rho * theta.cos(), rho * theta.sin(), 0.0]
                    }
                }
            }
            Self::FlatPatch { flat, half_width } => {
                let coords: Vec<f64> = (0..flat.d()).map(|_| half_width * (2.0 * u() - 1.0)).collect();
                flat.point_at(&coords)
            }
        }
    }

    fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let tol = SUPPORT_TOL;
        let within = |v: f64, lo: f64, hi: f64| v >= lo - tol && v <= hi + tol;
        match self {
            Self::Segment { length, orientation } => {
                let (along, across) = match orientation {
                    Orientation::First => (x[0], x[1]),
                    Orientation::Second => (x[1], x[0]),
                };
                across.abs() <= tol && within(along, 0.0, *length)
            }
            Self::AngledLine { length, theta } => {
                let along = x[0] * theta.cos() + x[1] * theta.sin();
                let across = -x[0] * theta.sin() + x[1] * theta.cos();
                across.abs() <= tol * (1.0 + length) && within(along, 0.0, *length)
            }
            Self::RectangleStrip {
                length,
                eps,
                orientation,
            } => {
                let (along, across) = match orientation {
                    Orientation::First => (x[0], x[1]),
                    Orientation::Second => (x[1], x[0]),
                };
                within(along, *eps, eps + length) && within(across, 0.0, *eps)
            }
            Self::HalfDisk3d { orientation } => {
                let r2 = x.iter().map(|v| v * v).sum::<f64>();
                let in_disk = r2.sqrt() <= 1.0 + tol;
                match orientation {
                    Orientation::First => x[0].abs() <= tol && x[2] >= -tol && in_disk,
                    Orientation::Second => x[2].abs() <= tol && x[0] >= -tol && in_disk,
                }
            }
            Self::FlatPatch { flat, half_width } => {
                let r: Vec<f64> = x.iter().zip(&flat.base).map(|(a, b)| a - b).collect();
                let scale = 1.0 + half_width;
                flat.distance(x) <= tol * scale
                    && flat.frame.iter().all(|u| dot(&r, u).abs() <= half_width + tol * scale)
            }
        }
    }
}

/// Parses `name[:key=value,...]`.
///
/// | name | keys |
/// |------|------|
/// | `segment` | `L` (1), `orientation` (`horizontal`/`vertical`) |
/// | `angled_line` | `L` (1), `theta` (radians) |
/// | `rectangle_strip` | `L` (1), `eps`, `orientation` (`horizontal`/`vertical`) |
/// | `half_disk_3d` | `orientation` (`d1`/`d2`) |
pub fn builtin_sampler(spec: &str) -> Result<BuiltinMeasure> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut length = 1.0;
    let mut theta = None;
    let mut eps = None;
    let mut orientation = Orientation::First;
    for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {kv:?}")))?;
        let number = || {
            value
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("{key}: not a number: {value:?}")))
        };
        match key {
            "L" | "length" => length = number()?,
            "theta" => theta = Some(number()?),
            "eps" => eps = Some(number()?),
            "orientation" => {
                orientation = match value {
                    "horizontal" | "d1" | "first" | "1" => Orientation::First,
                    "vertical" | "d2" | "second" | "2" => Orientation::Second,
                    _ => return Err(Error::invalid(format!("unknown orientation {value:?}"))),
                }
            }
            _ => return Err(Error::invalid(format!("unknown parameter {key:?} for {name}"))),
        }
    }
    let m = match name {
        "segment" => BuiltinMeasure::Segment { length, orientation },
        "angled_line" => BuiltinMeasure::AngledLine {
            length,
            theta: theta.ok_or_else(|| Error::invalid("angled_line needs theta"))?,
        },
        "rectangle_strip" => BuiltinMeasure::RectangleStrip {
            length,
            eps: eps.ok_or_else(|| Error::invalid("rectangle_strip needs eps"))?,
            orientation,
        },
        "half_disk_3d" => BuiltinMeasure::HalfDisk3d { orientation },
        _ => return Err(Error::invalid(format!("unknown measure {name:?}"))),
    };
    m.validate()?;
    Ok(m)
}

/// Total-least-squares `d`-flat through `points` and the root mean squared
/// orthogonal distance to it.
pub fn fit_lsq_flat(points: &[Vec<f64>], d: usize) -> Result<(Flat, f64)> {
    let n = points.len();
    if n < d + 1 {
        return Err(Error::invalid(format!("need at least d+1 = {} points, got {n}", d + 1)));
    }
    let dim = points[0].len();
    if d >= dim {
        return Err(Error::invalid("need d < D"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut base = vec![0.0; dim];
    for p in points {
        base.iter_mut().zip(p).for_each(|(b, x)| *b += x / n as f64);
    }
    let mut scatter = DMatrix::zeros(dim, dim);
    for p in points {
        let c: Vec<f64> = p.iter().zip(&base).map(|(x, b)| x - b).collect();
        for i in 0..dim {
            for j in 0..dim {
                scatter[(i, j)] += c[i] * c[j];
            }
        }
    }
    let (_, vectors) = symmetric_eigen_desc(&scatter);
    let frame: Vec<Vec<f64>> = (0..d)
        .map(|j| vectors.column(j).iter().copied().collect())
        .collect();
    let flat = Flat::from_directions(base, &frame)?;
    // Residuals directly; tail eigenvalues can be slightly negative.
    let mean_sq = points.iter().map(|p| flat.distance(p).powi(2)).sum::<f64>() / n as f64;
    Ok((flat, mean_sq.sqrt()))
}
