//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p tscc-core --test acceptance -- --nocapture`
//! (output is printed either way since this target has no harness).

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tscc::affinity::{affinity_value, perfect_degree, perfect_weight_matrix, weight_matrix, TensorSpec};
use tscc::diagnostics::{
    cluster_centers, id_error_bound_t, id_error_bound_u, identification_error, misclassification,
    perfect_embedding, perfect_spectrum, principal_angles, size_ratio, subspace_distance, total_variation,
    verify_perturbation_bound, BoundStatus, PerturbationReport,
};
use tscc::incidence::{analytic_bound, example_record, mc_curvature_moment, AnalyticExample, MomentKind, MonteCarloOptions};
use tscc::modelgen::{builtin_sampler, random_flats_model, sample_mixture, three_lines, Dataset};
use tscc::spectral::{normalize_symmetric, row_normalize_t, run_tscc, EmbeddingMode, TsccOptions, TsccRun};
use tscc::Partition;

/// Seed of the shipped three-line model.
const LINES_SEED: u64 = 7;

struct Outcome {
    passed: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: true,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        passed: false,
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { passed: ok, detail }
}

/// Non-decreasing size tuples of length `k` with entries in `lo..=hi`.
fn size_tuples(k: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in size_tuples(k - 1, lo, hi) {
        let start = rest.last().copied().unwrap_or(lo);
        for s in start..=hi {
            let mut t = rest.clone();
            t.push(s);
            out.push(t);
        }
    }
    out
}

fn dense_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn perfect_spectrum_exactness() -> Outcome {
    let mut configs = 0;
    let mut worst = 0.0_f64;
    for d in 0..=2 {
        for k in 1..=3 {
            for sizes in size_tuples(k, d + 3, 10) {
                configs += 1;
                let w = perfect_weight_matrix(&sizes, d).unwrap();
                let z = normalize_symmetric(&w).unwrap();
                let got = dense_eigenvalues(&z);
                let ones = got.iter().filter(|&&x| (x - 1.0).abs() < 1e-9).count();
                if ones != k {
                    return fail(format!("sizes {sizes:?}, d={d}: {ones} eigenvalues at 1, expected {k}"));
                }
                let want = perfect_spectrum(&sizes, d, EmbeddingMode::Normalized).unwrap().eigenvalues;
                for (a, b) in got.iter().zip(&want) {
                    worst = worst.max((a - b).abs());
                }
                if worst > 1e-9 {
                    return fail(format!("sizes {sizes:?}, d={d}: eigenvalue error {worst:.2e}"));
                }
            }
        }
    }
    pass(format!("{configs} configurations, max eigenvalue error {worst:.1e}"))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

/// `A A'` from the explicitly unfolded tensor: one column per ordered tuple
/// of the remaining indices.
fn unfolded_oracle(spec: &TensorSpec, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let rest = spec.order() - 1;
    let cols = n.pow(rest as u32);
    let mut a = DMatrix::zeros(n, cols);
    let mut idx = vec![0usize; rest + 1];
    for i in 0..n {
        for c in 0..cols {
            idx[0] = i;
            let mut r = c;
            for slot in idx[1..].iter_mut() {
                *slot = r % n;
                r /= n;
            }
            a[(i, c)] = affinity_value(spec, points, &idx).unwrap();
        }
    }
    &a * a.transpose()
}

fn streaming_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0;
    let mut worst = 0.0_f64;
    for d in 0..=2 {
        for n in (d + 2).max(3)..=8 {
            for variant in 0..3 {
                if variant == 1 && d == 0 {
                    continue;
                }
                let sigma = 0.05 + 0.5 * rng.random::<f64>();
                let spec = match variant {
                    0 => TensorSpec::polar(d, sigma),
                    1 => TensorSpec::linear(d, sigma),
                    _ => TensorSpec::power(d, sigma, 2.0),
                };
                let points = random_points(&mut rng, n, d + 2);
                let w = weight_matrix(&spec, &points).unwrap();
                let oracle = unfolded_oracle(&spec, &points);
                let scale = oracle.amax();
                let err = (w.entries() - &oracle).amax() / scale;
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("{cases} cases, max relative error {worst:.1e}"))
}

fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, k).into_owned()
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Partition {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let p = Partition::from_labels(&labels);
        if p.k() == k {
            return p;
        }
    }
}

fn identity_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut e_dist_tv, mut e_angles, mut e_centers) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut worst_slack = f64::INFINITY;
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(3 * k..=30);
        let u = random_orthonormal(&mut rng, n, k);
        let p = random_partition(&mut rng, n, k);
        let tv = total_variation(&u, &p).unwrap();
        let perfect = perfect_embedding(&p);
        let dist = subspace_distance(&u, &perfect).unwrap();
        e_dist_tv = e_dist_tv.max((dist * dist - 2.0 * tv).abs());

        let other = random_orthonormal(&mut rng, n, k);
        let dist = subspace_distance(&u, &other).unwrap();
        let sines: f64 = principal_angles(&u, &other).unwrap().iter().map(|t| t.sin().powi(2)).sum();
        e_angles = e_angles.max((dist * dist - 2.0 * sines).abs());

        let centers = cluster_centers(&u, &p).unwrap();
        let sizes = p.sizes();
        let weighted: f64 = centers.iter().zip(&sizes).map(|(c, &s)| s as f64 * c.norm_squared()).sum();
        e_centers = e_centers.max((weighted + tv - k as f64).abs());
        let mut cross = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                cross += (sizes[a] * sizes[b]) as f64 * centers[a].dot(&centers[b]).powi(2);
            }
        }
        worst_slack = worst_slack.min(tv + 1e-9 - cross);
    }
    check(
        e_dist_tv <= 1e-9 && e_angles <= 1e-9 && e_centers <= 1e-9 && worst_slack >= 0.0,
        format!(
            "100 trials: |dist^2-2TV| {e_dist_tv:.1e}, |dist^2-2sum sin^2| {e_angles:.1e}, \
             |sum N|c|^2 + TV - K| {e_centers:.1e}, min inner-product slack {worst_slack:.2e}"
        ),
    )
}

fn lines_dataset(noise: f64) -> Dataset {
    sample_mixture(&three_lines(noise, LINES_SEED).unwrap()).unwrap()
}

fn lines_run(data: &Dataset, sigma: f64) -> TsccRun {
    let opts = TsccOptions {
        seed: LINES_SEED,
        ..TsccOptions::default()
    };
    run_tscc(&data.points, 1, 3, sigma, &opts).unwrap()
}

fn clean_segmentation(data: &Dataset, run: &TsccRun) -> Outcome {
    let truth = data.truth.as_ref().unwrap();
    let m = misclassification(&run.clustering.labels, truth).unwrap();
    let ev = &run.embedding.eigenvalues;
    check(
        m.count == 0 && ev[..3].iter().all(|&x| x > 0.999) && ev[3] < 0.1,
        format!(
            "{} misclassified; eigenvalues {:.6}, {:.6}, {:.6}, then {:.3e}",
            m.count, ev[0], ev[1], ev[2], ev[3]
        ),
    )
}

fn noisy_segmentation(data: &Dataset, run: &TsccRun) -> Outcome {
    let truth = data.truth.as_ref().unwrap();
    let m = misclassification(&run.clustering.labels, truth).unwrap();
    check(
        m.rate <= 0.08,
        format!("{} of {} misclassified ({:.1}%)", m.count, truth.n(), 100.0 * m.rate),
    )
}

fn describe_report(label: &str, r: &PerturbationReport) -> String {
    let status = match &r.status {
        BoundStatus::Holds => "holds".to_string(),
        BoundStatus::Violated => "VIOLATED".to_string(),
        BoundStatus::HypothesisNotMet { reason } => format!("hypothesis not met ({reason})"),
    };
    format!("{label}: x={:.3e}, TV={:.3e}, {status}", r.x, r.tv)
}

fn perturbation_bound(runs: &[(&str, &Dataset, &TsccRun)]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, data, run) in runs {
        let r = verify_perturbation_bound(run, &data.points, data.truth.as_ref().unwrap()).unwrap();
        ok &= r.status != BoundStatus::Violated;
        parts.push(describe_report(label, &r));
    }
    check(ok, parts.join("; "))
}

fn clean_degrees_dominate() -> Outcome {
    let mut checked = 0;
    let mut worst = f64::INFINITY;
    let models = [
        three_lines(0.0, LINES_SEED).unwrap(),
        random_flats_model(3, 2, &[9, 10], 0.0, 5).unwrap(),
        random_flats_model(3, 1, &[6, 8, 10], 0.0, 6).unwrap(),
    ];
    for model in &models {
        let data = sample_mixture(model).unwrap();
        let truth = data.truth.as_ref().unwrap();
        for sigma in [0.05, 0.1, 1.0] {
            let w = weight_matrix(&TensorSpec::polar(model.d(), sigma), &data.points).unwrap();
            for (i, &deg) in w.degrees().iter().enumerate() {
                let perfect = perfect_degree(truth.size_of_group_containing(i), model.d());
                worst = worst.min(deg / perfect);
                checked += 1;
            }
        }
    }
    check(worst >= 1.0, format!("{checked} degrees, min D_ii / D~_ii = {worst:.6}"))
}

fn incidence_bounds() -> Outcome {
    let examples = [
        AnalyticExample::OrthogonalLinesTscc { length: 1.0 },
        AnalyticExample::AngledLinesTlscc {
            length: 1.0,
            theta: PI / 6.0,
        },
        AnalyticExample::AngledLinesTlscc {
            length: 1.0,
            theta: PI / 2.0,
        },
        AnalyticExample::RectanglesTlscc { length: 1.0, eps: 0.05 },
        AnalyticExample::HalfDisksTlscc,
    ];
    let reference = analytic_bound(&examples[0], 0.1).unwrap();
    let mut ok = (reference - 0.0707107).abs() <= 1e-6;
    let mut margins = Vec::new();
    let mut rows = 0;
    for ex in &examples {
        let mut worst_margin = f64::INFINITY;
        for (j, sigma) in [0.05, 0.1, 0.2].into_iter().enumerate() {
            let opts = MonteCarloOptions::with_samples(100_000, 100 + j as u64);
            let r = example_record(ex, sigma, &opts).unwrap();
            let margin = r.bound.unwrap() + 3.0 * r.std_error - r.value;
            if margin < 0.0 {
                println!("      {} sigma={sigma}: estimate {:.5} > bound {:.5}", ex.name(), r.value, r.bound.unwrap());
                ok = false;
            }
            worst_margin = worst_margin.min(margin);
            rows += 1;
        }
        margins.push(format!("{} {worst_margin:.4}", ex.name()));
    }
    check(
        ok,
        format!(
            "{rows} estimates; min (bound + 3se - estimate) per example: {}; reference bound {reference:.7}",
            margins.join(", ")
        ),
    )
}

fn moment_oracles() -> Outcome {
    let seg = builtin_sampler("segment:L=1").unwrap();
    let plain = mc_curvature_moment(&seg, 0, MomentKind::Polar, &MonteCarloOptions::with_samples(100_000, 3)).unwrap();
    // A fine pivot grid keeps the pivot's distance to the endpoint well
    // below the sampling error.
    let hat_opts = MonteCarloOptions {
        pivots: 20_000,
        screen: 500,
        ..MonteCarloOptions::with_samples(100_000, 4)
    };
    let hat = mc_curvature_moment(&seg, 0, MomentKind::Hat, &hat_opts).unwrap();
    let a = (plain.value - (1.0f64 / 3.0).sqrt()).abs() / plain.std_error;
    let b = (hat.value - (2.0f64 / 3.0).sqrt()).abs() / hat.std_error;
    check(
        a <= 3.0 && b <= 3.0,
        format!(
            "c_p = {:.5} +- {:.5} ({a:.2} se), hat c_p = {:.5} +- {:.5} ({b:.2} se)",
            plain.value, plain.std_error, hat.value, hat.std_error
        ),
    )
}

fn id_error_bounds() -> Outcome {
    let configs = [[15, 15], [12, 20], [10, 25], [14, 18]];
    let noises = [0.0, 0.01, 0.02, 0.04];
    let sigmas = [0.05, 0.1, 0.2];
    let mut instances = 0;
    let (mut t_checks, mut u_checks) = (0, 0);
    let mut ok = true;
    // Draw instances until 50 satisfy at least one smallness condition.
    for attempt in 0..1000u64 {
        if instances == 50 {
            break;
        }
        let sizes = configs[attempt as usize % configs.len()];
        let noise = noises[(attempt as usize / configs.len()) % noises.len()];
        let sigma = sigmas[attempt as usize % sigmas.len()];
        let seed = 1000 + attempt;
        let data = sample_mixture(&random_flats_model(2, 1, &sizes, noise, seed).unwrap()).unwrap();
        let truth = data.truth.as_ref().unwrap();
        let opts = TsccOptions {
            seed,
            restarts: 5,
            ..TsccOptions::default()
        };
        let run = run_tscc(&data.points, 1, 2, sigma, &opts).unwrap();
        let u = &run.embedding.u;
        let tv = total_variation(u, truth).unwrap();
        let eps1 = size_ratio(&truth.sizes());
        let (bt, bu) = (id_error_bound_t(tv), id_error_bound_u(tv, eps1));
        if bt.is_none() && bu.is_none() {
            continue;
        }
        instances += 1;
        if let Some(b) = bt {
            let t = row_normalize_t(u, truth).unwrap();
            let e = identification_error(&t, truth).unwrap();
            ok &= e <= b;
            t_checks += 1;
        }
        if let Some(b) = bu {
            let e = identification_error(u, truth).unwrap();
            ok &= e <= b;
            u_checks += 1;
        }
    }
    check(
        ok && instances == 50,
        format!("{instances} instances, {t_checks} T-space and {u_checks} U-space checks"),
    )
}

fn unnormalized_spectrum() -> Outcome {
    let mut configs = 0;
    let mut worst = 0.0_f64;
    let mut worst_trace_alt = f64::INFINITY;
    for d in 0..=2 {
        for k in 1..=3 {
            for sizes in size_tuples(k, d + 2, 10) {
                configs += 1;
                let w = perfect_weight_matrix(&sizes, d).unwrap();
                let got = dense_eigenvalues(w.entries());
                let want = perfect_spectrum(&sizes, d, EmbeddingMode::Unnormalized).unwrap().eigenvalues;
                let scale = want[0];
                for (a, b) in got.iter().zip(&want) {
                    worst = worst.max((a - b).abs() / scale);
                }
                let trace = w.entries().trace();
                let closed: f64 = want.iter().sum();
                if ((trace - closed) / trace).abs() > 1e-8 {
                    return fail(format!("sizes {sizes:?}, d={d}: trace {trace} vs closed form {closed}"));
                }
                // Reading the repeated eigenvalue with multiplicity N_k.
                let alt: f64 = closed
                    + sizes
                        .iter()
                        .map(|&n| tscc::diagnostics::perfect_nu(n, d))
                        .sum::<f64>();
                worst_trace_alt = worst_trace_alt.min(((alt - trace) / trace).abs());
            }
        }
    }
    check(
        worst <= 1e-9,
        format!(
            "{configs} configurations, max relative eigenvalue error {worst:.1e}; trace holds with \
             multiplicity N_k - 1, multiplicity N_k misses it by at least {worst_trace_alt:.1e} relative"
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "[{}] {id:>2} {name}: {} ({secs:.2} s)",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((id, name, outcome, secs));
    };

    timed(1, "perfect normalized spectrum", &mut perfect_spectrum_exactness);
    timed(2, "streamed W equals unfolded A A'", &mut streaming_matches_oracle);
    timed(3, "embedding identities", &mut identity_suite);

    let clean = lines_dataset(0.0);
    let noisy = lines_dataset(0.025);
    let mut clean_run = None;
    let mut noisy_run = None;
    timed(4, "clean three lines", &mut || {
        let run = lines_run(&clean, 1e-5);
        let o = clean_segmentation(&clean, &run);
        clean_run = Some(run);
        o
    });
    timed(5, "noisy three lines", &mut || {
        let run = lines_run(&noisy, 0.1840);
        let o = noisy_segmentation(&noisy, &run);
        noisy_run = Some(run);
        o
    });
    let (clean_run, noisy_run) = (clean_run.unwrap(), noisy_run.unwrap());
    timed(6, "perturbation bound", &mut || {
        perturbation_bound(&[("clean", &clean, &clean_run), ("noisy", &noisy, &noisy_run)])
    });
    timed(7, "clean-flat degrees dominate perfect degrees", &mut clean_degrees_dominate);
    timed(8, "incidence estimates within closed-form bounds", &mut incidence_bounds);
    timed(9, "segment curvature moments", &mut moment_oracles);
    timed(10, "identification error bounds", &mut id_error_bounds);
    timed(11, "perfect unnormalized spectrum", &mut unnormalized_spectrum);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
