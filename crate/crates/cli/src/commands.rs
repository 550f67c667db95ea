use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use tscc::diagnostics::{
    epsilon2_ball_bound, id_error_bound_t, id_error_bound_u, identification_error, misclassification,
    perfect_embedding, perfect_spectrum, principal_angles, separation_bound, separation_factor, size_ratio,
    subspace_distance, total_variation, verify_perturbation_bound, Misclassification, PerturbationReport,
};
use tscc::incidence::{
    alpha_constant, example_record, mc_curvature_moment, AlphaDecomposition, AnalyticExample,
    IncidenceRecord, MomentEstimate, MomentKind, MonteCarloOptions,
};
use tscc::modelgen::{builtin_sampler, named_model, sample_mixture, BuiltinMeasure, Dataset, Measure, MixtureModel};
use tscc::spectral::{
    row_normalize_t, row_normalize_v, run_tscc, EmbeddingMode, PipelineVariant, RowNorm, TsccOptions, TsccRun,
};

use crate::args::{invalid, ClusterArgs, DiagnoseArgs, ExampleArg, GenerateArgs, IncidenceArgs, PipelineArgs};
use crate::error::{CliError, CliResult};
use crate::output::{read_dataset, write_dataset, write_json, write_labelled_points};

pub fn generate(out_dir: &Path, a: &GenerateArgs) -> CliResult<Vec<PathBuf>> {
    if let Some(noise) = a.noise {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(invalid("--noise must be nonnegative"));
        }
    }
    let (mut model, stem) = match (&a.model, &a.config) {
        (Some(name), _) => (named_model(name, a.noise.unwrap_or(0.0), a.seed.unwrap_or(0))?, name.clone()),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let stem = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            (MixtureModel::from_toml(&text)?, stem)
        }
        (None, None) => return Err(CliError::usage("one of --model or --config is required")),
    };
    if let Some(noise) = a.noise {
        model.noise = noise;
    }
    if let Some(seed) = a.seed {
        model.seed = seed;
    }
    model.validate()?;
    let data = sample_mixture(&model)?;
    let path = a.output.clone().unwrap_or_else(|| out_dir.join(format!("{stem}.csv")));
    let model_path = path.with_extension("model.toml");
    let csv = write_dataset(&path, &data)?;
    std::fs::write(&model_path, model.to_toml()?).map_err(|e| CliError::io(&model_path, e))?;
    Ok(vec![csv, model_path])
}

/// Everything `cluster` records about one run.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub input: String,
    pub n: usize,
    pub ambient_dim: usize,
    pub d: usize,
    pub k: usize,
    pub sigma: f64,
    pub variant: PipelineVariant,
    pub row_norm: RowNorm,
    pub mode: EmbeddingMode,
    pub restarts: usize,
    pub seed: u64,
    /// Full spectrum, descending.
    pub eigenvalues: Vec<f64>,
    pub eigengap: f64,
    pub eigengap_collapse: bool,
    pub inertia: f64,
    pub restarts_used: usize,
    /// Points per predicted label `1..=K`.
    pub cluster_sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<Misclassification>,
}

pub fn summarize(data: &Dataset, d: usize, k: usize, sigma: f64, opts: &TsccOptions, run: &TsccRun) -> CliResult<RunSummary> {
    let mut cluster_sizes = vec![0; k];
    for &l in &run.clustering.labels {
        cluster_sizes[l - 1] += 1;
    }
    let misclassification = match &data.truth {
        Some(t) if t.k() == k => Some(misclassification(&run.clustering.labels, t)?),
        _ => None,
    };
    Ok(RunSummary {
        input: data.provenance.clone(),
        n: data.n(),
        ambient_dim: data.dim(),
        d,
        k,
        sigma,
        variant: opts.variant,
        row_norm: opts.row_norm,
        mode: run.embedding.mode,
        restarts: opts.restarts,
        seed: opts.seed,
        eigenvalues: run.embedding.eigenvalues.clone(),
        eigengap: run.embedding.eigengap(),
        eigengap_collapse: run.embedding.eigengap_collapse,
        inertia: run.clustering.inertia,
        restarts_used: run.clustering.restarts_used,
        cluster_sizes,
        misclassification,
    })
}

fn cluster_one(out_dir: &Path, data: &Dataset, p: &PipelineArgs, stem: &str) -> CliResult<Vec<PathBuf>> {
    p.validate()?;
    let opts = p.options();
    let run = run_tscc(&data.points, p.d, p.k, p.sigma, &opts)?;
    let summary = summarize(data, p.d, p.k, p.sigma, &opts, &run)?;
    let labels = write_labelled_points(&out_dir.join(format!("{stem}.labels.csv")), &data.points, &run.clustering.labels)?;
    let metrics = write_json(&out_dir.join(format!("{stem}.metrics.json")), &summary)?;
    Ok(vec![labels, metrics])
}

/// One grid point of a sweep: `(key, value)` assignments.
type SweepPoint = Vec<(String, String)>;

fn sweep_grid(specs: &[String]) -> CliResult<Vec<SweepPoint>> {
    let mut grid: Vec<SweepPoint> = vec![Vec::new()];
    for spec in specs {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--sweep expects key=v1,v2,..; got {spec:?}")))?;
        if !matches!(key, "sigma" | "seed" | "restarts") {
            return Err(CliError::usage(format!("cannot sweep over {key:?}; use sigma, seed or restarts")));
        }
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::usage(format!("--sweep {key} has no values")));
        }
        grid = grid
            .into_iter()
            .flat_map(|point| {
                values.iter().map(move |v| {
                    let mut p = point.clone();
                    p.push((key.to_string(), v.to_string()));
                    p
                })
            })
            .collect();
    }
    Ok(grid)
}

fn apply_sweep(base: &PipelineArgs, point: &SweepPoint) -> CliResult<PipelineArgs> {
    let mut p = base.clone();
    for (key, value) in point {
        let bad = || CliError::usage(format!("--sweep {key}: cannot parse {value:?}"));
        match key.as_str() {
            "sigma" => p.sigma = value.parse().map_err(|_| bad())?,
            "seed" => p.seed = value.parse().map_err(|_| bad())?,
            "restarts" => p.restarts = value.parse().map_err(|_| bad())?,
            _ => unreachable!("keys are checked when the grid is built"),
        }
    }
    Ok(p)
}

#[derive(Serialize)]
struct SweepEntry {
    params: serde_json::Map<String, serde_json::Value>,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn cluster(out_dir: &Path, a: &ClusterArgs) -> CliResult<Vec<PathBuf>> {
    a.pipeline.validate()?;
    let data = read_dataset(&a.pipeline.input)?;
    let stem = a.pipeline.stem();
    if a.sweep.is_empty() {
        return cluster_one(out_dir, &data, &a.pipeline, &stem);
    }
    let grid = sweep_grid(&a.sweep)?;
    let runs: Vec<(PipelineArgs, String)> = grid
        .iter()
        .map(|point| {
            let tag: Vec<String> = point.iter().map(|(k, v)| format!("{k}-{v}")).collect();
            Ok((apply_sweep(&a.pipeline, point)?, format!("{stem}.{}", tag.join("."))))
        })
        .collect::<CliResult<_>>()?;
    let results: Vec<CliResult<Vec<PathBuf>>> = runs
        .par_iter()
        .map(|(p, run_stem)| cluster_one(out_dir, &data, p, run_stem))
        .collect();

    let mut entries = Vec::new();
    let mut written = Vec::new();
    let mut first_error = None;
    for (point, result) in grid.iter().zip(results) {
        let params = point
            .iter()
            .map(|(k, v)| {
                let value = v.parse::<f64>().map_or(serde_json::json!(v), |x| serde_json::json!(x));
                (k.clone(), value)
            })
            .collect();
        match result {
            Ok(files) => {
                entries.push(SweepEntry {
                    params,
                    files: files.iter().map(|f| f.display().to_string()).collect(),
                    error: None,
                });
                written.extend(files);
            }
            Err(e) => {
                entries.push(SweepEntry {
                    params,
                    files: Vec::new(),
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    written.push(write_json(&out_dir.join(format!("{stem}.sweep.json")), &entries)?);
    match first_error {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

#[derive(Debug, Serialize)]
pub struct SpaceReport {
    /// Separation factor of the true cluster centers.
    pub beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identification_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identification_bound: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub run: RunSummary,
    pub total_variation: f64,
    /// Projector distance between the embedding and the perfect embedding.
    pub subspace_distance: f64,
    pub principal_angles: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perfect_eigenvalues: Option<Vec<f64>>,
    pub u: SpaceReport,
    pub t: SpaceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<SpaceReport>,
    /// Upper bound on `beta(T)` from TV.
    pub separation_bound_t: f64,
    pub epsilon2_ball: BallCheck,
    pub perturbation: PerturbationReport,
}

#[derive(Debug, Serialize)]
pub struct BallCheck {
    /// Diameter of the centroid-centered ball holding the data.
    pub diameter: f64,
    pub lower_bound: f64,
    pub epsilon2: Option<f64>,
    pub holds: Option<bool>,
}

/// Smallest centroid-centered ball containing `points`.
fn ball_diameter(points: &[Vec<f64>]) -> f64 {
    let dim = points[0].len();
    let n = points.len() as f64;
    let centroid: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let radius = points
        .iter()
        .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    2.0 * radius
}

pub fn diagnose_run(data: &Dataset, d: usize, k: usize, sigma: f64, opts: &TsccOptions, run: &TsccRun) -> CliResult<DiagnoseReport> {
    let truth = data
        .truth
        .as_ref()
        .ok_or_else(|| invalid("diagnostics need a label column in the input"))?;
    if truth.k() != k {
        return Err(invalid(format!("input has {} labelled clusters but --K is {k}", truth.k())));
    }
    let u = &run.embedding.u;
    let tv = total_variation(u, truth)?;
    let perfect = perfect_embedding(truth);
    let t_rows = row_normalize_t(u, truth)?;
    let v_rows = row_normalize_v(u).ok();

    let mut u_space = SpaceReport {
        beta: separation_factor(u, truth)?,
        identification_error: None,
        identification_bound: None,
    };
    let mut t_space = SpaceReport {
        beta: separation_factor(&t_rows, truth)?,
        identification_error: None,
        identification_bound: None,
    };
    let mut v_space = match &v_rows {
        Some(v) => Some(SpaceReport {
            beta: separation_factor(v, truth)?,
            identification_error: None,
            identification_bound: None,
        }),
        None => None,
    };
    if k == 2 {
        u_space.identification_error = Some(identification_error(u, truth)?);
        u_space.identification_bound = id_error_bound_u(tv, size_ratio(&truth.sizes()));
        t_space.identification_error = Some(identification_error(&t_rows, truth)?);
        t_space.identification_bound = id_error_bound_t(tv);
        if let (Some(v), Some(space)) = (&v_rows, v_space.as_mut()) {
            space.identification_error = Some(identification_error(v, truth)?);
        }
    }

    let perturbation = verify_perturbation_bound(run, &data.points, truth)?;
    let effective_d = perturbation.effective_d;
    let perfect_eigenvalues = perfect_spectrum(&truth.sizes(), effective_d, run.embedding.mode)
        .ok()
        .map(|s| s.eigenvalues);
    let diameter = ball_diameter(&data.points);
    let lower_bound = epsilon2_ball_bound(d, diameter, sigma);
    let epsilon2 = perturbation.constants.as_ref().map(|c| c.epsilon2);
    Ok(DiagnoseReport {
        run: summarize(data, d, k, sigma, opts, run)?,
        total_variation: tv,
        subspace_distance: subspace_distance(u, &perfect)?,
        principal_angles: principal_angles(u, &perfect)?,
        perfect_eigenvalues,
        u: u_space,
        t: t_space,
        v: v_space,
        separation_bound_t: separation_bound(tv, k),
        epsilon2_ball: BallCheck {
            diameter,
            lower_bound,
            epsilon2,
            holds: epsilon2.map(|e| e >= lower_bound),
        },
        perturbation,
    })
}

pub fn diagnose(out_dir: &Path, a: &DiagnoseArgs) -> CliResult<Vec<PathBuf>> {
    let p = &a.pipeline;
    p.validate()?;
    let data = read_dataset(&p.input)?;
    let opts = p.options();
    let run = run_tscc(&data.points, p.d, p.k, p.sigma, &opts)?;
    let report = diagnose_run(&data, p.d, p.k, p.sigma, &opts, &run)?;
    Ok(vec![write_json(&out_dir.join(format!("{}.diagnose.json", p.stem())), &report)?])
}

/// An incidence estimate next to its closed-form bound.
#[derive(Debug, Serialize)]
pub struct BoundRow {
    #[serde(flatten)]
    pub record: IncidenceRecord,
    /// `value <= bound + 3 std_error`.
    pub holds: Option<bool>,
}

pub fn bound_row(example: &AnalyticExample, sigma: f64, opts: &MonteCarloOptions) -> CliResult<BoundRow> {
    let record = example_record(example, sigma, opts)?;
    let holds = record.bound.map(|b| record.value <= b + 3.0 * record.std_error);
    Ok(BoundRow { record, holds })
}

pub fn example_for(a: &IncidenceArgs, which: ExampleArg) -> AnalyticExample {
    match which {
        ExampleArg::OrthogonalLinesTscc => AnalyticExample::OrthogonalLinesTscc { length: a.length },
        ExampleArg::AngledLinesTlscc => AnalyticExample::AngledLinesTlscc {
            length: a.length,
            theta: a.theta,
        },
        ExampleArg::RectanglesTlscc => AnalyticExample::RectanglesTlscc {
            length: a.length,
            eps: a.eps,
        },
        ExampleArg::HalfDisksTlscc => AnalyticExample::HalfDisksTlscc,
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum MeasureReport {
    Moments {
        measure: BuiltinMeasure,
        d: usize,
        moments: Vec<MomentEstimate>,
    },
    Alpha {
        measures: Vec<BuiltinMeasure>,
        d: usize,
        alpha: Vec<AlphaDecomposition>,
    },
}

fn check_sigmas(sigmas: &[f64]) -> CliResult<()> {
    if sigmas.is_empty() {
        return Err(CliError::usage("--sigma is required here"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(invalid(format!("--sigma must be positive, got {s}")));
    }
    Ok(())
}

pub fn incidence(out_dir: &Path, a: &IncidenceArgs) -> CliResult<Vec<PathBuf>> {
    let opts = MonteCarloOptions::with_samples(a.samples, a.seed);
    if let Some(which) = a.example {
        check_sigmas(&a.sigma)?;
        let example = example_for(a, which);
        let rows = a
            .sigma
            .iter()
            .map(|&s| bound_row(&example, s, &opts))
            .collect::<CliResult<Vec<_>>>()?;
        let path = a
            .output
            .clone()
            .unwrap_or_else(|| out_dir.join(format!("incidence-{}.json", example.name())));
        return Ok(vec![write_json(&path, &rows)?]);
    }
    let measures = a
        .measure
        .iter()
        .map(|m| builtin_sampler(m))
        .collect::<tscc::Result<Vec<_>>>()?;
    let report = if let [m] = measures.as_slice() {
        let kinds = if a.linear {
            vec![MomentKind::PolarLinear]
        } else {
            vec![MomentKind::Polar, MomentKind::Hat]
        };
        let moments = kinds
            .into_iter()
            .map(|kind| mc_curvature_moment(m, a.d, kind, &opts))
            .collect::<tscc::Result<Vec<_>>>()?;
        MeasureReport::Moments {
            measure: m.clone(),
            d: a.d,
            moments,
        }
    } else {
        check_sigmas(&a.sigma)?;
        let refs: Vec<&dyn Measure> = measures.iter().map(|m| m as &dyn Measure).collect();
        let alpha = a
            .sigma
            .iter()
            .map(|&s| alpha_constant(&refs, a.d, s, a.linear, &opts))
            .collect::<tscc::Result<Vec<_>>>()?;
        MeasureReport::Alpha {
            measures: measures.clone(),
            d: a.d,
            alpha,
        }
    };
    let path = a.output.clone().unwrap_or_else(|| out_dir.join("incidence-measures.json"));
    Ok(vec![write_json(&path, &report)?])
}
