//! The five subcommands. Each returns `Ok(exit_code)`; I/O and argument
//! problems surface as errors.
//!
//! Reproducibility rule: everything written to stdout or to output files is
//! deterministic for a fixed configuration; wall-clock timings go to stderr
//! (or into the bench report only with `--timings`).

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gocor::objective::{conv_adjoint, conv_apply, ChannelField, ObjectiveParams};
use gocor::oracle::{brute_corr, line_search_oracle, naive_conv4d_seq, numeric_grad};
use gocor::synthbench::{make_repetitive_scene, run_disambiguation_experiment};
use gocor::{
    corr_adjoint, correlate, grad_total, run_gocor, step_length, total_loss,
    CorrespondenceVolume, FeatureMap, SolverConfig, VolumeKind,
};

use crate::config::RunConfig;
use crate::formats;
use crate::heatmap;

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
    let data = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::new(h, w, d, data).unwrap()
}

/// `gradcheck`: analytic gradient against central finite differences.
///
/// With `eta = 0` the penalty derivative has a kink at zero correlation, so
/// the evaluation point is resampled until every correlation entry is well
/// away from zero (a warning explains this). `corrupt` is a test hook that
/// perturbs one analytic gradient entry to demonstrate the failure path.
pub fn cmd_gradcheck(config: &RunConfig, corrupt: bool) -> Result<i32> {
    let eta = config.eta()?;
    if eta == 0.0 {
        eprintln!(
            "warning: eta=0 makes the penalty derivative discontinuous at zero correlation; \
             evaluation points are nudged away from the kink"
        );
    }
    let params = config.objective_params()?;
    let base = config.solver_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6C41);
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    println!("command: gradcheck");
    println!("eta: {eta}");
    for case in 0..8u64 {
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local { radius: 2 }
        };
        let use_query = (case / 2) % 2 == 1;
        let cfg = SolverConfig {
            mode: kind,
            use_query,
            ..base.clone()
        };
        let (h, w, d) = (4, 4, 3);
        let f_r = random_map(&mut rng, h, w, d);
        let f_q = random_map(&mut rng, h, w, d);
        let mut w_at = random_map(&mut rng, h, w, d);
        if eta == 0.0 {
            // Keep every correlation entry away from the kink so central
            // differences stay on one side of it.
            for _ in 0..64 {
                let c = correlate(&w_at, &f_r, kind)?;
                let min_abs = c
                    .data()
                    .iter()
                    .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
                if min_abs > 1e-3 {
                    break;
                }
                w_at = random_map(&mut rng, h, w, d);
            }
        }
        let mut analytic = grad_total(&w_at, &f_r, &f_q, &params, &cfg)?;
        if corrupt {
            analytic.data_mut()[0] += 1e-3;
        }
        let numeric = numeric_grad(
            |m| total_loss(m, &f_r, &f_q, &params, cfg.lambda, cfg.mode, cfg.use_query).unwrap(),
            &w_at,
            1e-6,
        );
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            diff_sq += (a - n) * (a - n);
            norm_sq += n * n;
        }
        let rel = (diff_sq / norm_sq.max(1e-300)).sqrt();
        worst = worst.max(rel);
        let pass = rel <= 1e-5;
        if !pass {
            failures += 1;
        }
        println!(
            "case.{case}: mode={} query={} rel_err={rel:.3e} {}",
            match kind {
                VolumeKind::Global => "global",
                VolumeKind::Local { .. } => "local",
            },
            use_query,
            if pass { "ok" } else { "FAIL" }
        );
    }
    println!("worst_rel_err: {worst:.3e}");
    println!("result: {}", if failures == 0 { "pass" } else { "fail" });
    Ok(if failures == 0 { 0 } else { 2 })
}

/// `solve`: read two feature maps, run the full pipeline, write the volume
/// and optionally a loss-trace report.
pub fn cmd_solve(
    reference: &Path,
    query: &Path,
    out: &Path,
    trace_out: Option<&Path>,
    config: &RunConfig,
) -> Result<i32> {
    let f_r = formats::read_fmap(reference)?;
    let f_q = formats::read_fmap(query)?;
    let params = config.objective_params()?;
    let cfg = config.solver_config()?;
    let init = config.initializer(config.default_initializer_name()?)?;

    let start = Instant::now();
    let (w, trace) = run_gocor(&f_r, &f_q, &params, &cfg, &init)?;
    let volume = correlate(&w, &f_q, cfg.mode)?;
    eprintln!(
        "solve: {} iterations in {:.1} ms",
        cfg.num_iter,
        start.elapsed().as_secs_f64() * 1e3
    );

    formats::write_cvol(out, &volume, config.precision()?)?;

    let mut report = String::new();
    report.push_str("command: solve\n");
    report.push_str(&format!(
        "mode: {}\n",
        match cfg.mode {
            VolumeKind::Global => "global".to_string(),
            VolumeKind::Local { radius } => format!("local radius {radius}"),
        }
    ));
    report.push_str(&format!("iterations: {}\n", cfg.num_iter));
    report.push_str(&format!("init_fallbacks: {}\n", trace.init_fallbacks));
    for (n, entry) in trace.entries.iter().enumerate() {
        report.push_str(&format!("iter.{n}.loss: {}\n", entry.loss));
        if let Some(alpha) = entry.alpha {
            report.push_str(&format!("iter.{n}.alpha: {alpha}\n"));
        }
        if let Some(g) = entry.grad_norm {
            report.push_str(&format!("iter.{n}.grad_norm: {g}\n"));
        }
    }
    match trace_out {
        Some(path) => std::fs::write(path, &report)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{report}"),
    }
    Ok(0)
}

#[derive(Serialize)]
struct BenchSeedReport {
    seed: u64,
    margins: Vec<f64>,
    argmax_correct: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_ms: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct BenchSummary {
    mean_margin_by_iteration: Vec<f64>,
    final_argmax_accuracy: f64,
    margin_improved_fraction: f64,
}

#[derive(Serialize)]
struct BenchReport {
    command: &'static str,
    scene: crate::config::SceneConfig,
    num_iter: usize,
    lambda: f64,
    use_query: bool,
    curvature_scale: f64,
    initializer: String,
    rho_excl: f64,
    seeds: u64,
    per_seed: Vec<BenchSeedReport>,
    summary: BenchSummary,
}

/// `bench`: the disambiguation experiment over a set of scene seeds.
pub fn cmd_bench(config: &RunConfig, out: Option<&Path>, timings: bool) -> Result<i32> {
    let scene_cfg = config.scene()?;
    let cfg = config.bench_solver_config()?;
    let params = config.objective_params()?;
    let init = config.initializer("simple")?;
    let rho_excl = config.rho_excl()?;
    let seeds = config.seeds()?;

    let start = Instant::now();
    let mut per_seed = Vec::new();
    for seed in 0..seeds {
        let scene = make_repetitive_scene(
            scene_cfg.h,
            scene_cfg.w,
            scene_cfg.d,
            scene_cfg.n_repeats,
            scene_cfg.shift,
            scene_cfg.noise_std,
            seed,
        )?;
        let report = run_disambiguation_experiment(&scene, &params, &cfg, &init, rho_excl)?;
        eprintln!(
            "bench seed {seed}: margins {:?} ({:.1} ms)",
            report.margins,
            report.elapsed_ms.iter().sum::<f64>()
        );
        per_seed.push(BenchSeedReport {
            seed,
            margins: report.margins,
            argmax_correct: report.argmax_correct,
            elapsed_ms: timings.then_some(report.elapsed_ms),
        });
    }
    eprintln!(
        "bench: {seeds} seeds in {:.1} ms",
        start.elapsed().as_secs_f64() * 1e3
    );

    let iterations = cfg.num_iter + 1;
    let mean_margin_by_iteration: Vec<f64> = (0..iterations)
        .map(|n| per_seed.iter().map(|s| s.margins[n]).sum::<f64>() / seeds as f64)
        .collect();
    let final_argmax_accuracy = per_seed
        .iter()
        .filter(|s| *s.argmax_correct.last().unwrap())
        .count() as f64
        / seeds as f64;
    let margin_improved_fraction = per_seed
        .iter()
        .filter(|s| s.margins.last().unwrap() > s.margins.first().unwrap())
        .count() as f64
        / seeds as f64;

    let report = BenchReport {
        command: "bench",
        scene: scene_cfg,
        num_iter: cfg.num_iter,
        lambda: cfg.lambda,
        use_query: cfg.use_query,
        curvature_scale: cfg.curvature_scale,
        initializer: format!("{init:?}"),
        rho_excl,
        seeds,
        per_seed,
        summary: BenchSummary {
            mean_margin_by_iteration,
            final_argmax_accuracy,
            margin_improved_fraction,
        },
    };
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => {
            std::fs::write(path, json.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => println!("{json}"),
    }
    Ok(0)
}

/// `export-heatmap`: slice a stored volume at a probe location.
pub fn cmd_export_heatmap(
    volume_path: &Path,
    probe: (usize, usize),
    out: &Path,
    csv: Option<&Path>,
) -> Result<i32> {
    let volume = formats::read_cvol(volume_path)?;
    heatmap::export_heatmap(&volume, probe, out, csv)?;
    Ok(0)
}

/// `oracle`: the full equivalence suite between the production kernels and
/// the brute-force references.
pub fn cmd_oracle(config: &RunConfig) -> Result<i32> {
    let seeds = config.seeds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1);
    let mut all_ok = true;
    println!("command: oracle");

    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{name}: {} {detail}", if ok { "ok" } else { "FAIL" });
        all_ok &= ok;
    };

    // Correlation vs the triple-loop transcription, exact.
    let mut corr_exact = true;
    for case in 0..seeds {
        let (h, w, d) = (
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
            rng.gen_range(1..=5),
        );
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local {
                radius: rng.gen_range(0..=3),
            }
        };
        let wmap = random_map(&mut rng, h, w, d);
        let fmap = random_map(&mut rng, h, w, d);
        corr_exact &=
            correlate(&wmap, &fmap, kind)?.data() == brute_corr(&wmap, &fmap, kind)?.data();
    }
    check("correlation_vs_brute", corr_exact, format!("({seeds} seeds, exact)"));

    // Factorized convolution vs the sequential transcription, exact.
    let mut conv_exact = true;
    for case in 0..seeds {
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local {
                radius: rng.gen_range(0..=2),
            }
        };
        let params = gocor::QueryObjectiveParams::seeded(
            3,
            rng.gen_range(1..=4),
            rng.gen_range(1..=4),
            case,
        )?;
        let mut vol = CorrespondenceVolume::zeros(h, w, kind);
        for v in vol.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        conv_exact &= conv_apply(&params, &vol).data() == naive_conv4d_seq(&vol, &params).data();
    }
    check("convolution_vs_naive", conv_exact, format!("({seeds} seeds, exact)"));

    // Adjoint identities.
    let mut worst_adj: f64 = 0.0;
    for case in 0..seeds {
        let (h, w, d) = (
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
            rng.gen_range(1..=5),
        );
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local {
                radius: rng.gen_range(0..=3),
            }
        };
        let wmap = random_map(&mut rng, h, w, d);
        let fmap = random_map(&mut rng, h, w, d);
        let corr = correlate(&wmap, &fmap, kind)?;
        let mut v = CorrespondenceVolume::zeros(h, w, kind);
        for x in v.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let g = corr_adjoint(&v, &fmap)?;
        worst_adj = worst_adj.max((corr.dot(&v)? - wmap.dot(&g)?).abs());

        let params = gocor::QueryObjectiveParams::seeded(3, 3, 3, case)?;
        let ax = conv_apply(&params, &corr);
        let mut y = ChannelField::zeros(3, h, w, kind);
        for x in y.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let aty = conv_adjoint(&params, &y)?;
        worst_adj = worst_adj.max((ax.dot(&y)? - corr.dot(&aty)?).abs());
    }
    check(
        "adjoint_identities",
        worst_adj <= 1e-10,
        format!("(worst gap {worst_adj:.2e})"),
    );

    // Analytic gradient vs finite differences at eta = 0.1.
    let params = ObjectiveParams {
        reference: gocor::ReferenceObjectiveParams::paper_init().with_eta(0.1),
        query: gocor::QueryObjectiveParams::seeded(3, 3, 3, 0x0AC2)?,
    };
    let mut worst_grad: f64 = 0.0;
    for case in 0..4u64 {
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local { radius: 1 }
        };
        let cfg = SolverConfig {
            mode: kind,
            num_iter: 1,
            lambda: 0.3,
            use_query: case >= 2,
            curvature_scale: 2.0,
        };
        let f_r = random_map(&mut rng, 4, 4, 3);
        let f_q = random_map(&mut rng, 4, 4, 3);
        let w_at = random_map(&mut rng, 4, 4, 3);
        let analytic = grad_total(&w_at, &f_r, &f_q, &params, &cfg)?;
        let numeric = numeric_grad(
            |m| total_loss(m, &f_r, &f_q, &params, cfg.lambda, cfg.mode, cfg.use_query).unwrap(),
            &w_at,
            1e-6,
        );
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            diff_sq += (a - n) * (a - n);
            norm_sq += n * n;
        }
        worst_grad = worst_grad.max((diff_sq / norm_sq.max(1e-300)).sqrt());
    }
    check(
        "gradient_vs_finite_differences",
        worst_grad <= 1e-5,
        format!("(worst rel err {worst_grad:.2e})"),
    );

    // Step length vs the independent line-search solve on convex instances.
    let convex = ObjectiveParams {
        reference: gocor::ReferenceObjectiveParams::linear_regression(),
        query: gocor::QueryObjectiveParams::seeded(3, 2, 2, 0x0AC3)?,
    };
    let mut worst_alpha: f64 = 0.0;
    for case in 0..8u64 {
        let kind = if case % 2 == 0 {
            VolumeKind::Global
        } else {
            VolumeKind::Local { radius: 1 }
        };
        let cfg = SolverConfig {
            mode: kind,
            num_iter: 1,
            lambda: 0.4,
            use_query: case % 4 == 0,
            curvature_scale: 2.0,
        };
        let f_r = random_map(&mut rng, 4, 4, 3);
        let f_q = random_map(&mut rng, 4, 4, 3);
        let w_at = random_map(&mut rng, 4, 4, 3);
        let g = grad_total(&w_at, &f_r, &f_q, &convex, &cfg)?;
        let alpha = step_length(&w_at, &g, &f_r, &f_q, &convex, &cfg)?;
        let reference = line_search_oracle(&w_at, &g, &f_r, &f_q, &convex, &cfg)?;
        worst_alpha = worst_alpha.max((alpha - reference).abs() / reference.abs().max(1e-300));
    }
    check(
        "step_length_vs_line_search",
        worst_alpha <= 1e-8,
        format!("(worst rel err {worst_alpha:.2e})"),
    );

    println!("result: {}", if all_ok { "pass" } else { "fail" });
    Ok(if all_ok { 0 } else { 2 })
}

/// Shared validation for probe arguments.
pub fn parse_probe(values: &[usize]) -> Result<(usize, usize)> {
    match values {
        [i, j] => Ok((*i, *j)),
        _ => bail!("--probe takes exactly two indices: I J"),
    }
}
