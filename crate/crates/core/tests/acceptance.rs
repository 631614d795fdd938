//! Acceptance suite. Runs every headline criterion at its stated tolerance,
//! prints one PASS/FAIL line per criterion and checks the runtime budgets.
//!
//! Run with `cargo test -p cliplab --test acceptance --release` for realistic
//! timings; the workspace test profile is optimized as well.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use cliplab::data::{ModelConfig, SamplerConfig, SamplerKind};
use cliplab::eval::{default_gamma_grid, zero_shot_trials, MarginPairPool, ZeroShotSpec};
use cliplab::experiments::{run_experiment, ExperimentConfig, ExperimentId, ExperimentSummary};
use cliplab::loss::{contrastive_loss_from_scores, population_estimate, regularized_loss, RegKind};
use cliplab::par::{self, Mode};
use cliplab::rng::{stream, SampleRng};
use cliplab::score::{completeness_weights, shared_projection, LinearScoreModel, Scorer};
use cliplab::trainer::{clip_gradient, finite_diff_gradient, train_gd, InitKind, TrainConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Writes straight to stdout so the lines survive test output capture.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Outcome {
    pass: bool,
    detail: String,
}

struct Ledger {
    failures: Vec<String>,
}

impl Ledger {
    fn check(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let in_budget = budget.is_none_or(|b| took < b);
        let pass = out.pass && in_budget;
        let budget_text = budget.map_or(String::new(), |b| format!(" / budget {}s", b.as_secs()));
        report(&format!(
            "[{}] {name}: {} ({:.1}s{budget_text})",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        ));
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-12)
}

fn gradient_correctness() -> Outcome {
    let mut rng = stream(101, "acceptance-gradient", 0);
    let mut worst: f64 = 0.0;
    let kinds = [RegKind::None, RegKind::Positive, RegKind::Negative];
    for i in 0..50 {
        let gen = ModelConfig {
            k: 4,
            k1: Some(5),
            k2: 1,
            k3: 2,
            d1: Some(7),
            d2: Some(8),
            mixing: true,
            seed: i,
            ..ModelConfig::default()
        }
        .build()
        .unwrap();
        let b = rng.random_range(2..=12);
        let batch = gen.sample_batch(b, &mut SampleRng::substream(7, i)).unwrap();
        let scale = rng.random_range(0.1..1.0);
        let w = DMatrix::from_fn(8, 7, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let tau = rng.random_range(0.05..1.0);
        let kind = kinds[i as usize % 3];
        let lambda = if kind == RegKind::None { 0.0 } else { rng.random_range(0.0..0.5) };
        let model = LinearScoreModel::inner(w.clone(), tau).unwrap();
        let g = clip_gradient(&model, &batch, lambda, kind).unwrap();
        let loss_at = |m: &DMatrix<f64>, t: f64| {
            let mm = LinearScoreModel::inner(m.clone(), t).unwrap();
            regularized_loss(&mm, &batch, lambda, kind).unwrap().value
        };
        let fd = finite_diff_gradient(|m| loss_at(m, tau), &w, 1e-6).unwrap();
        worst = worst.max(max_rel_err(&g.w, &fd));
        let h = 1e-6;
        let fd_tau = (loss_at(&w, (tau.ln() + h).exp()) - loss_at(&w, (tau.ln() - h).exp())) / (2.0 * h);
        worst = worst.max((g.log_tau - fd_tau).abs() / fd_tau.abs().max(1e-12));
    }
    Outcome {
        pass: worst < 1e-6,
        detail: format!("50 configurations, max relative error {worst:.2e} (< 1e-6)"),
    }
}

fn loss_bounds() -> Outcome {
    let gen = ModelConfig::default().build().unwrap();
    let mut rng = stream(102, "acceptance-bounds", 0);
    let (mut stated, mut positive, mut corrected, mut lipschitz) = (0, 0, 0, 0);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..200u64 {
        let b = rng.random_range(2..=32);
        let batch = gen.sample_batch(b, &mut SampleRng::substream(8, i)).unwrap();
        let scale = rng.random_range(0.1..2.0);
        let w = DMatrix::from_fn(16, 16, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let tau = rng.random_range(0.01..0.1);
        let s = LinearScoreModel::inner(w, tau).unwrap().score_matrix(&batch).unwrap();
        let m = s.abs().max();
        let l = contrastive_loss_from_scores(&s, tau).unwrap().value;
        let bf = b as f64;
        positive += usize::from(l > 0.0);
        stated += usize::from(l <= 4.0 * m * bf.ln() / tau);
        corrected += usize::from(l <= 2.0 * bf.ln() + 4.0 * m / tau);
        worst_ratio = worst_ratio.max(l / (4.0 * m * bf.ln() / tau));

        let eps = rng.random_range(1e-4..0.5);
        let delta = DMatrix::from_fn(b, b, |_, _| rng.random_range(-eps..eps));
        let sup = delta.abs().max();
        let l2 = contrastive_loss_from_scores(&(&s + &delta), tau).unwrap().value;
        lipschitz += usize::from((l2 - l).abs() <= 4.0 * sup / tau * (1.0 + 1e-12) + 1e-12);
    }
    // The stated bound fails for flat scores: 2 log B > 0 = 4M log B/τ.
    let flat = contrastive_loss_from_scores(&DMatrix::zeros(16, 16), 0.07).unwrap().value;
    report(&format!(
        "       note: flat 16x16 scores give L = {flat:.4} = 2 log B against a stated bound of 0; \
         the bound that always holds is 2 log B + 4M/τ"
    ));
    Outcome {
        pass: stated == 200 && positive == 200 && lipschitz == 200 && corrected == 200,
        detail: format!(
            "0 < L: {positive}/200, L <= 4M log B/τ: {stated}/200 (max L/bound {worst_ratio:.3}), \
             L <= 2 log B + 4M/τ: {corrected}/200, Lipschitz: {lipschitz}/200"
        ),
    }
}

fn separable(mixing: bool) -> cliplab::data::GenerativeModel {
    ModelConfig {
        k2: 4,
        k3: 4,
        radius: 0.0,
        mixing,
        seed: 5,
        xi: SamplerConfig {
            kind: SamplerKind::Zero,
            ..Default::default()
        },
        zeta: SamplerConfig {
            kind: SamplerKind::Zero,
            ..Default::default()
        },
        ..ModelConfig::default()
    }
    .build()
    .unwrap()
}

fn completeness() -> Outcome {
    let mut residual: f64 = 0.0;
    let mut errors = 0;
    let mut margin_dev: f64 = 0.0;
    for mixing in [false, true] {
        let full = ModelConfig {
            mixing,
            seed: 5,
            ..ModelConfig::default()
        }
        .build()
        .unwrap();
        let w = completeness_weights(&full).unwrap();
        let r = full.h().transpose() * &w * full.g() - shared_projection(&full);
        residual = residual.max(r.abs().max());

        let gen = separable(mixing);
        let model = LinearScoreModel::inner(completeness_weights(&gen).unwrap(), 0.07).unwrap();
        let outcomes = zero_shot_trials(&model, &gen, &ZeroShotSpec::new(10_000, 11)).unwrap();
        errors += outcomes.iter().filter(|o| o.rank != 0).count();
        for o in &outcomes {
            margin_dev = margin_dev.max((o.margin - gen.gamma()).abs());
        }
    }
    Outcome {
        pass: residual < 1e-8 && errors == 0 && margin_dev < 1e-12,
        detail: format!(
            "max |HᵀW*G − P| = {residual:.1e}, top-1 errors {errors}/20000, max |margin − γ| = {margin_dev:.1e}"
        ),
    }
}

fn convergence() -> Outcome {
    let gen = ModelConfig::default().build().unwrap();
    let cfg = TrainConfig {
        eta_scale: 100.0,
        iterations: 1000,
        init: InitKind::Zero,
        ..TrainConfig::default()
    };
    let (trained, traj) = train_gd(&gen, &cfg, 31).unwrap();
    let star = LinearScoreModel::inner(completeness_weights(&gen).unwrap(), cfg.tau).unwrap();
    // Paired estimate on common batches: L(trained) − L(W*).
    let diff = population_estimate(&gen, 16, 20_000, 32, |b| {
        let a = cliplab::loss::clip_batch_loss(&trained, b)?.value;
        let s = cliplab::loss::clip_batch_loss(&star, b)?.value;
        Ok(a - s)
    })
    .unwrap();
    let outcomes = zero_shot_trials(&trained, &gen, &ZeroShotSpec::new(10_000, 33)).unwrap();
    let err = outcomes.iter().filter(|o| o.rank != 0).count() as f64 / outcomes.len() as f64;
    Outcome {
        pass: diff.mean <= 0.05 + 3.0 * diff.standard_error && err < 0.02,
        detail: format!(
            "{} iterations, L(trained) − L(W*) = {:+.4} ± {:.4} (<= 0.05), top-1 error {err:.4} (< 0.02)",
            traj.records.len(),
            diff.mean,
            diff.standard_error
        ),
    }
}

fn run(id: ExperimentId, dir: &Path) -> ExperimentSummary {
    let mut cfg = ExperimentConfig::new(id, 2024);
    cfg.output_dir = Some(dir.to_path_buf());
    run_experiment(&cfg).unwrap().summary
}

fn square_loss_failure(dir: &Path) -> Outcome {
    let ExperimentSummary::ClipVsSquare(s) = run(ExperimentId::ClipVsSquare, dir) else {
        unreachable!()
    };
    let bound = s.square_loss_lower_bound;
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &s.rows {
        let ok = if r.method == "clip" {
            r.error < 0.01
        } else {
            r.error >= bound - 3.0 * r.se
        };
        pass &= ok;
        parts.push(format!("{}/{} {:.4}", r.method, r.similarity, r.error));
    }
    Outcome {
        pass,
        detail: format!("1/(3K) = {bound:.4}; {}", parts.join(", ")),
    }
}

fn sandwich() -> Outcome {
    let gen = ModelConfig::default().build().unwrap();
    let mut rng = stream(106, "acceptance-sandwich", 0);
    // W* plus a small random perturbation: scores with continuous noise.
    let w = completeness_weights(&gen).unwrap()
        + DMatrix::from_fn(16, 16, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
    let model = LinearScoreModel::inner(w, 0.07).unwrap();
    let pool = MarginPairPool::sample(|x, y| model.score(x, y), &gen, 200_000, 7).unwrap();
    let sum_p2 = gen.latent().collision_probability();
    let grid = default_gamma_grid();
    let curve = pool.curve(&grid);

    let mut upper_ok = true;
    let mut corrected_ok = true;
    let mut literal_violations = Vec::new();
    for p in &curve {
        upper_ok &= p.alpha_hat >= p.alpha_exact;
        corrected_ok &= p.alpha_exact >= p.alpha_hat - 2.0 * sum_p2;
        if p.alpha_exact < p.alpha_hat - sum_p2 - 3.0 * p.se_gap {
            literal_violations.push(p.gamma);
        }
    }
    let p0 = pool.point(0.0);
    let gap0 = p0.alpha_hat - p0.alpha_exact;
    let zero_ok = (gap0 - sum_p2).abs() <= 3.0 * p0.se_gap;

    let literal = literal_violations.is_empty();
    report(&format!(
        "[{}] margin-violation sandwich, literal lower bound α >= α̂ − Σp²: violated at {}/{} grid points{} \
         (known defect: for γ > 0 the gap α̂ − α tends to 2Σp², so only α >= α̂ − 2Σp² holds)",
        if literal { "PASS" } else { "FAIL" },
        literal_violations.len(),
        grid.len(),
        literal_violations
            .first()
            .map_or(String::new(), |g| format!(", first at γ = {g:.2}")),
    ));
    Outcome {
        pass: upper_ok && corrected_ok && zero_ok,
        detail: format!(
            "α̂ >= α on all {} points: {upper_ok}; α >= α̂ − 2Σp²: {corrected_ok}; \
             γ = 0 gap {gap0:.4} ± {:.4} vs Σp² = {sum_p2:.4}",
            grid.len(),
            p0.se_gap
        ),
    }
}

fn e1(dir: &Path) -> Outcome {
    let ExperimentSummary::TempMargin(s) = run(ExperimentId::TempMargin, dir) else {
        unreachable!()
    };
    let med = |t: f64| s.trained_medians.iter().find(|p| p.0 == t).unwrap().1;
    let (hot, cold, untrained) = (med(0.07), med(0.01), s.untrained_median);
    Outcome {
        pass: untrained < cold && cold < hot,
        detail: format!(
            "median margin untrained {untrained:.4} < τ=0.01 {cold:.4} < τ=0.07 {hot:.4}"
        ),
    }
}

fn e3(dir: &Path) -> Outcome {
    let ExperimentSummary::Regularization(s) = run(ExperimentId::Regularization, dir) else {
        unreachable!()
    };
    let frac = |name: &str| s.runs.iter().find(|r| r.name == name).unwrap().fraction_at_half_gamma;
    let (none, pos, neg) = (frac("unregularized"), frac("positive"), frac("negative"));
    Outcome {
        pass: none < 0.5 && pos >= 0.95,
        detail: format!(
            "fraction correct with margin >= γ/2: unregularized {none:.4} (< 0.5), \
             positive λ=0.1 {pos:.4} (>= 0.95); negative-pair ablation {neg:.4}"
        ),
    }
}

fn e4(dir: &Path) -> Outcome {
    let ExperimentSummary::Concentration(s) = run(ExperimentId::Concentration, dir) else {
        unreachable!()
    };
    let decreasing = s.points.windows(2).all(|w| w[1].mean_abs_gap < w[0].mean_abs_gap);
    let parts: Vec<_> = s
        .points
        .iter()
        .map(|p| format!("n={} {:.4}", p.n, p.mean_abs_gap))
        .collect();
    Outcome {
        pass: decreasing && s.scaled_spread <= 2.0,
        detail: format!(
            "mean |L̂ − L| {}; √n-scaled spread {:.3} (<= 2)",
            parts.join(", "),
            s.scaled_spread
        ),
    }
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Reruns every experiment sequentially and compares against the first runs,
/// which used the default execution mode.
fn determinism(first: &Path, second: &Path) -> Outcome {
    par::set_mode(Mode::Sequential);
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for id in ExperimentId::ALL {
        let a = first.join(id.name());
        let b = second.join(id.name());
        run(id, &b);
        let (fa, fb) = (outputs(&a), outputs(&b));
        compared += fa.len();
        if fa != fb {
            mismatched.push(id.name());
        }
    }
    par::set_mode(Mode::Parallel);
    Outcome {
        pass: mismatched.is_empty(),
        detail: format!("{compared} CSV/weight files byte-identical across reruns; mismatches {mismatched:?}"),
    }
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().unwrap();
    let first = root.path().join("first");
    let second = root.path().join("second");
    let at = |id: ExperimentId| first.join(id.name());
    let mut ledger = Ledger { failures: Vec::new() };

    report("");
    ledger.check("gradient correctness", secs(30), gradient_correctness);
    ledger.check("loss bounds and Lipschitz contract", secs(30), loss_bounds);
    ledger.check("completeness weights", secs(60), completeness);
    ledger.check("convergence from zero init", secs(300), convergence);
    ledger.check("square-loss failure vs contrastive training", secs(300), || {
        square_loss_failure(&at(ExperimentId::ClipVsSquare))
    });
    ledger.check("margin-violation sandwich (corrected)", secs(60), sandwich);
    ledger.check("E1 temperature-margin ordering", secs(300), || e1(&at(ExperimentId::TempMargin)));
    ledger.check("regularization contrast", secs(300), || e3(&at(ExperimentId::Regularization)));
    ledger.check("concentration in pool size", secs(300), || e4(&at(ExperimentId::Concentration)));
    // E5 is not a criterion on its own; it is run here so determinism covers it.
    run(ExperimentId::ShiftedPrompts, &at(ExperimentId::ShiftedPrompts));
    ledger.check("determinism", None, || determinism(&first, &second));

    assert!(ledger.failures.is_empty(), "failed criteria: {:?}", ledger.failures);
}
