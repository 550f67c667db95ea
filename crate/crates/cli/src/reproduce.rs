//! Fixed-seed reference scenarios. Each writes its files under
//! `<out-dir>/<scenario>/`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tscc::affinity::perfect_weight_matrix;
use tscc::diagnostics::{misclassification, perfect_spectrum, Misclassification};
use tscc::incidence::{AnalyticExample, MonteCarloOptions};
use tscc::modelgen::{sample_mixture, three_lines, two_lines_unbalanced};
use tscc::spectral::{
    kmeans_cluster, normalize_symmetric, row_normalize_t, row_normalize_v, run_tscc, spectral_embedding,
    EmbeddingMode, KMeansOptions, TsccOptions,
};

use crate::args::{invalid, ReproduceArgs, Scenario};
use crate::commands::{bound_row, diagnose_run, BoundRow, DiagnoseReport};
use crate::error::CliResult;
use crate::output::{ensure_dir, write_csv, write_dataset, write_json, write_labelled_points};

/// Seed shared by every data-driven scenario.
pub const SEED: u64 = 7;

const INCIDENCE_SIGMAS: [f64; 3] = [0.05, 0.1, 0.2];

pub fn run(out_dir: &Path, a: &ReproduceArgs) -> CliResult<Vec<PathBuf>> {
    if a.samples < 100 {
        return Err(invalid("--samples must be at least 100"));
    }
    let scenarios = match a.scenario {
        Scenario::All => vec![
            Scenario::Fig1,
            Scenario::Fig2,
            Scenario::Utv,
            Scenario::Ex51,
            Scenario::Ex52,
            Scenario::Ex53,
            Scenario::Ex54,
            Scenario::Spectra,
        ],
        s => vec![s],
    };
    let mut written = Vec::new();
    for s in scenarios {
        let dir = out_dir.join(name(s));
        ensure_dir(&dir)?;
        written.extend(match s {
            Scenario::Fig1 => lines(&dir, 0.0, 1e-5)?,
            Scenario::Fig2 => lines(&dir, 0.025, 0.1840)?,
            Scenario::Utv => utv(&dir)?,
            Scenario::Ex51 => incidence_table(&dir, &[AnalyticExample::OrthogonalLinesTscc { length: 1.0 }], a.samples)?,
            Scenario::Ex52 => incidence_table(
                &dir,
                &[
                    AnalyticExample::AngledLinesTlscc {
                        length: 1.0,
                        theta: PI / 6.0,
                    },
                    AnalyticExample::AngledLinesTlscc {
                        length: 1.0,
                        theta: PI / 2.0,
                    },
                ],
                a.samples,
            )?,
            Scenario::Ex53 => incidence_table(&dir, &[AnalyticExample::RectanglesTlscc { length: 1.0, eps: 0.05 }], a.samples)?,
            Scenario::Ex54 => incidence_table(&dir, &[AnalyticExample::HalfDisksTlscc], a.samples)?,
            Scenario::Spectra => spectra(&dir)?,
            Scenario::All => unreachable!(),
        });
    }
    Ok(written)
}

fn name(s: Scenario) -> &'static str {
    match s {
        Scenario::Fig1 => "fig1",
        Scenario::Fig2 => "fig2",
        Scenario::Utv => "utv",
        Scenario::Ex51 => "ex51",
        Scenario::Ex52 => "ex52",
        Scenario::Ex53 => "ex53",
        Scenario::Ex54 => "ex54",
        Scenario::Spectra => "spectra",
        Scenario::All => "all",
    }
}

fn fmt_rows(rows: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<String>> {
    rows.map(|r| r.iter().map(|x| x.to_string()).collect()).collect()
}

fn eigenvalue_file(path: &Path, eigenvalues: &[f64]) -> CliResult<PathBuf> {
    let rows: Vec<Vec<String>> = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1).to_string(), v.to_string()])
        .collect();
    write_csv(path, &["index".into(), "eigenvalue".into()], &rows)
}

/// Embedding rows with the true and the K-means label.
fn embedding_file(
    path: &Path,
    rows: &[Vec<f64>],
    truth: &[usize],
    predicted: &[usize],
) -> CliResult<PathBuf> {
    let k = rows.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=k).map(|j| format!("u{j}")).collect();
    header.push("truth".into());
    header.push("label".into());
    let mut out = fmt_rows(rows.iter().cloned());
    for (i, r) in out.iter_mut().enumerate() {
        r.push(truth[i].to_string());
        r.push(predicted[i].to_string());
    }
    write_csv(path, &header, &out)
}

#[derive(Serialize)]
struct LinesReport {
    checks: serde_json::Value,
    diagnostics: DiagnoseReport,
}

fn lines(dir: &Path, noise: f64, sigma: f64) -> CliResult<Vec<PathBuf>> {
    let data = sample_mixture(&three_lines(noise, SEED)?)?;
    let (d, k) = (1, 3);
    let opts = TsccOptions {
        seed: SEED,
        ..TsccOptions::default()
    };
    let run = run_tscc(&data.points, d, k, sigma, &opts)?;
    let report = diagnose_run(&data, d, k, sigma, &opts, &run)?;
    let ev = &run.embedding.eigenvalues;
    let rate = report.run.misclassification.as_ref().map_or(f64::NAN, |m| m.rate);
    let checks = if noise == 0.0 {
        json!({
            "top_k_above_0.999": ev[..k].iter().all(|&x| x > 0.999),
            "next_below_0.1": ev[k] < 0.1,
            "misclassification_rate": rate,
        })
    } else {
        json!({
            "misclassification_rate": rate,
            "within_8_percent": rate <= 0.08,
        })
    };
    let truth = data.labels().expect("generated data is labelled");
    let u: Vec<Vec<f64>> = run.embedding.u.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(vec![
        write_dataset(&dir.join("data.csv"), &data)?,
        eigenvalue_file(&dir.join("eigenvalues.csv"), ev)?,
        embedding_file(&dir.join("embedding.csv"), &u, &truth, &run.clustering.labels)?,
        write_labelled_points(&dir.join("labels.csv"), &data.points, &run.clustering.labels)?,
        write_json(&dir.join("report.json"), &LinesReport { checks, diagnostics: report })?,
    ])
}

#[derive(Serialize)]
struct SpaceOutcome {
    beta: f64,
    identification_error: Option<f64>,
    identification_bound: Option<f64>,
    kmeans: Misclassification,
}

#[derive(Serialize)]
struct UtvReport {
    sigma: f64,
    noise: f64,
    u: SpaceOutcome,
    t: SpaceOutcome,
    v: SpaceOutcome,
    /// `beta(U) <= beta(T) <= beta(V)` on this draw.
    ordering_holds: bool,
    diagnostics: DiagnoseReport,
}

const UTV_NOISE: f64 = 0.025;
const UTV_SIGMA: f64 = 0.1840;

fn utv(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let data = sample_mixture(&two_lines_unbalanced(UTV_NOISE, SEED)?)?;
    let truth = data.truth.clone().expect("generated data is labelled");
    let truth_labels = data.labels().expect("generated data is labelled");
    let (d, k) = (1, 2);
    let opts = TsccOptions {
        seed: SEED,
        ..TsccOptions::default()
    };
    let run = run_tscc(&data.points, d, k, UTV_SIGMA, &opts)?;
    let report = diagnose_run(&data, d, k, UTV_SIGMA, &opts, &run)?;
    let km = KMeansOptions {
        seed: SEED,
        ..KMeansOptions::default()
    };
    // U is scaled by sqrt(N/K) so its rows are comparable to T and V.
    let scale = (data.n() as f64 / k as f64).sqrt();
    let spaces = [
        ("u", &run.embedding.u * scale),
        ("t", row_normalize_t(&run.embedding.u, &truth)?),
        ("v", row_normalize_v(&run.embedding.u)?),
    ];
    let mut written = vec![write_dataset(&dir.join("data.csv"), &data)?];
    let mut outcomes = Vec::new();
    for (tag, rows) in &spaces {
        let labels = kmeans_cluster(rows, k, &km)?.labels;
        let rows_vec: Vec<Vec<f64>> = rows.row_iter().map(|r| r.iter().copied().collect()).collect();
        written.push(embedding_file(&dir.join(format!("embedding_{tag}.csv")), &rows_vec, &truth_labels, &labels)?);
        outcomes.push(misclassification(&labels, &truth)?);
    }
    let [mu, mt, mv]: [Misclassification; 3] = outcomes.try_into().expect("three spaces");
    let v_report = report.v.as_ref().expect("V rows exist when the normalization succeeded");
    let u = SpaceOutcome {
        beta: report.u.beta,
        identification_error: report.u.identification_error,
        identification_bound: report.u.identification_bound,
        kmeans: mu,
    };
    let t = SpaceOutcome {
        beta: report.t.beta,
        identification_error: report.t.identification_error,
        identification_bound: report.t.identification_bound,
        kmeans: mt,
    };
    let v = SpaceOutcome {
        beta: v_report.beta,
        identification_error: v_report.identification_error,
        identification_bound: v_report.identification_bound,
        kmeans: mv,
    };
    let ordering_holds = u.beta <= t.beta && t.beta <= v.beta;
    written.push(write_json(
        &dir.join("report.json"),
        &UtvReport {
            sigma: UTV_SIGMA,
            noise: UTV_NOISE,
            u,
            t,
            v,
            ordering_holds,
            diagnostics: report,
        },
    )?);
    Ok(written)
}

fn incidence_table(dir: &Path, examples: &[AnalyticExample], samples: usize) -> CliResult<Vec<PathBuf>> {
    let mut rows: Vec<BoundRow> = Vec::new();
    for ex in examples {
        for (j, &sigma) in INCIDENCE_SIGMAS.iter().enumerate() {
            let opts = MonteCarloOptions::with_samples(samples, 100 + j as u64);
            rows.push(bound_row(ex, sigma, &opts)?);
        }
    }
    let header: Vec<String> = ["example", "params", "sigma", "estimate", "std_error", "bound", "holds"]
        .map(String::from)
        .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut params = r.record.params.clone();
            let sigma = params["sigma"].clone();
            if let Some(obj) = params.as_object_mut() {
                obj.retain(|k, _| !matches!(k.as_str(), "example" | "sigma" | "seed"));
            }
            vec![
                r.record.kind.clone(),
                params.to_string(),
                sigma.to_string(),
                r.record.value.to_string(),
                r.record.std_error.to_string(),
                r.record.bound.map_or(String::new(), |b| b.to_string()),
                r.holds.map_or(String::new(), |h| h.to_string()),
            ]
        })
        .collect();
    Ok(vec![
        write_csv(&dir.join("table.csv"), &header, &table)?,
        write_json(&dir.join("table.json"), &rows)?,
    ])
}

const SPECTRA_CASES: [&[usize]; 4] = [&[5, 5], &[5, 8], &[6, 7, 9], &[10]];

#[derive(Serialize)]
struct SpectrumCase {
    sizes: Vec<usize>,
    d: usize,
    mode: EmbeddingMode,
    max_abs_error: f64,
    trace_closed_form: f64,
    trace_dense: f64,
}

fn spectra(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for sizes in SPECTRA_CASES {
        for d in 0..=2 {
            for mode in [EmbeddingMode::Normalized, EmbeddingMode::Unnormalized] {
                let Ok(closed) = perfect_spectrum(sizes, d, mode) else {
                    continue;
                };
                let w = perfect_weight_matrix(sizes, d)?;
                let z = match mode {
                    EmbeddingMode::Normalized => normalize_symmetric(&w)?,
                    EmbeddingMode::Unnormalized => w.entries().clone(),
                };
                let n = z.nrows();
                let dense = spectral_embedding(&z, n, mode)?.eigenvalues;
                let mut max_abs_error = 0.0_f64;
                for (i, (c, e)) in closed.eigenvalues.iter().zip(&dense).enumerate() {
                    max_abs_error = max_abs_error.max((c - e).abs());
                    rows.push(vec![
                        format!("{sizes:?}"),
                        d.to_string(),
                        json!(mode).as_str().unwrap_or_default().to_string(),
                        (i + 1).to_string(),
                        c.to_string(),
                        e.to_string(),
                    ]);
                }
                cases.push(SpectrumCase {
                    sizes: sizes.to_vec(),
                    d,
                    mode,
                    max_abs_error,
                    trace_closed_form: closed.eigenvalues.iter().sum(),
                    trace_dense: z.trace(),
                });
            }
        }
    }
    let header: Vec<String> = ["sizes", "d", "mode", "index", "closed_form", "dense"]
        .map(String::from)
        .to_vec();
    Ok(vec![
        write_csv(&dir.join("spectra.csv"), &header, &rows)?,
        write_json(&dir.join("spectra.json"), &cases)?,
    ])
}
