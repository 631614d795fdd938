use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentId, OutputDir};
use crate::data::GenerativeModel;
use crate::error::{Error, Result};
use crate::eval::{
    correct_with_margin, default_gamma_grid, conditional_variance, pooled_margins, soft_margin_expectation,
    top_r_errors, zero_shot_trials, EvalReport, FractionPoint, Histogram, MarginPairPool, PromptSource,
    ZeroShotPoint, ZeroShotSpec,
};
use crate::loss::{default_negative_lambda, population_loss_estimate, RegKind, DEFAULT_POSITIVE_LAMBDA};
use crate::par;
use crate::rng::derive_seed;
use crate::score::{
    completeness_weights, write_weights_bin, BayesSquareEncoder, EncoderScorer, LinearScoreModel, Scorer,
    Similarity,
};
use crate::trainer::{initial_weights, train_gd, TrainConfig, TrainTrajectory};

/// Per-experiment results, also written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment")]
pub enum ExperimentSummary {
    #[serde(rename = "E1_temp_margin")]
    TempMargin(E1Summary),
    #[serde(rename = "E2_clip_vs_square")]
    ClipVsSquare(E2Summary),
    #[serde(rename = "E3_regularization")]
    Regularization(E3Summary),
    #[serde(rename = "E4_concentration")]
    Concentration(E4Summary),
    #[serde(rename = "E5_shifted_prompts")]
    ShiftedPrompts(E5Summary),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E1Summary {
    pub untrained_median: f64,
    /// `(τ, median margin)` per trained model, in config order.
    pub trained_medians: Vec<(f64, f64)>,
    pub final_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E2Row {
    pub method: String,
    pub similarity: String,
    pub error: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E2Summary {
    pub rows: Vec<E2Row>,
    /// `1 / (3K)`.
    pub square_loss_lower_bound: f64,
    pub clip_final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E3Run {
    pub name: String,
    pub reg_kind: RegKind,
    pub lambda: f64,
    /// Fraction correct with margin at least `γ/2`.
    pub fraction_at_half_gamma: f64,
    pub se: f64,
    pub initial_fraction_at_half_gamma: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E3Summary {
    pub runs: Vec<E3Run>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E4Point {
    pub n: usize,
    pub mean_abs_gap: f64,
    pub se: f64,
    /// `mean_abs_gap · √n`; flat under `1/√n` scaling.
    pub scaled_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E4Summary {
    pub population_loss: f64,
    pub population_se: f64,
    pub points: Vec<E4Point>,
    /// Largest over smallest `scaled_gap`.
    pub scaled_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E5Point {
    pub scale: f64,
    pub radius: f64,
    pub r: usize,
    pub error: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E5Summary {
    pub points: Vec<E5Point>,
    pub final_loss: f64,
}

pub(super) fn run(config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<ExperimentSummary> {
    let gen = config.model().build()?;
    match config.experiment {
        ExperimentId::TempMargin => e1(config, &gen, seed, out).map(ExperimentSummary::TempMargin),
        ExperimentId::ClipVsSquare => e2(config, &gen, seed, out).map(ExperimentSummary::ClipVsSquare),
        ExperimentId::Regularization => e3(config, &gen, seed, out).map(ExperimentSummary::Regularization),
        ExperimentId::Concentration => e4(config, &gen, seed, out).map(ExperimentSummary::Concentration),
        ExperimentId::ShiftedPrompts => e5(config, &gen, seed, out).map(ExperimentSummary::ShiftedPrompts),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn thresholds(config: &ExperimentConfig, gen: &GenerativeModel) -> Vec<f64> {
    config.eval.thresholds.clone().unwrap_or_else(|| {
        let g = gen.gamma();
        (0..=20).map(|i| g * i as f64 / 20.0).collect()
    })
}

fn trial_spec(config: &ExperimentConfig, seed: u64, tau: f64) -> ZeroShotSpec {
    ZeroShotSpec::new(config.eval.n_trials, derive_seed(seed, "eval-trials"))
        .fixed(config.eval.fixed_prompts)
        .with_tau(tau)
}

/// Full evaluation of a linear model; returns the report and the pooled
/// within-batch margins it was built from.
fn evaluate(
    model: &LinearScoreModel,
    gen: &GenerativeModel,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(EvalReport, Vec<f64>)> {
    let eval = &config.eval;
    let outcomes = zero_shot_trials(model, gen, &trial_spec(config, seed, model.tau()))?;
    let margins = pooled_margins(
        model,
        gen,
        config.train().batch_size,
        eval.margin_batches,
        derive_seed(seed, "eval-margins"),
    )?;
    let score = |x: &_, y: &_| model.score(x, y);
    let grid = eval.gamma_grid.clone().unwrap_or_else(default_gamma_grid);
    let alpha = MarginPairPool::sample(score, gen, eval.alpha_pairs, derive_seed(seed, "eval-alpha"))?;
    let variance = conditional_variance(
        score,
        gen,
        eval.variance_samples,
        eval.variance_inner,
        derive_seed(seed, "eval-variance"),
    )?;
    let report = EvalReport {
        top_r_error: top_r_errors(&outcomes, &eval.top_r),
        margin_histogram: Some(Histogram::from_values(&margins, eval.histogram_bins)?),
        alpha_curve: alpha.curve(&grid),
        conditional_variance: Some(variance),
        margin_of_correct_fraction: correct_with_margin(&outcomes, &thresholds(config, gen)),
        soft_margin_expectation: Some(soft_margin_expectation(&outcomes)),
    };
    Ok((report, margins))
}

fn write_training(
    out: &mut OutputDir,
    label: &str,
    model: &LinearScoreModel,
    traj: &TrainTrajectory,
) -> Result<()> {
    let p = out.claim(&format!("{label}_trajectory.csv"));
    traj.write_csv(&p)?;
    let p = out.claim(&format!("{label}_weights.bin"));
    write_weights_bin(&p, model.w())
}

fn write_report(
    out: &mut OutputDir,
    label: &str,
    report: &EvalReport,
    margins: &[f64],
) -> Result<()> {
    let dir = out.path("");
    let written = report.write(&dir, &format!("{label}_"), Some(margins));
    // Register whatever exists, even on a partial failure.
    let names = ["report.json", "zeroshot.csv", "alpha.csv", "margins.csv"];
    out.adopt(
        names
            .iter()
            .map(|n| out.path(&format!("{label}_{n}")))
            .filter(|p| p.exists())
            .collect(),
    );
    written.map(|_| ())
}

fn write_fractions(out: &mut OutputDir, name: &str, rows: &[(String, Vec<FractionPoint>)]) -> Result<()> {
    let p = out.claim(name);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["run", "threshold", "fraction", "se"])?;
    for (run, points) in rows {
        for f in points {
            w.write_record([run.clone(), fmt(f.threshold), fmt(f.fraction), fmt(f.se)])?;
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))
}

fn tau_label(tau: f64) -> String {
    format!("tau{tau:?}")
}

fn e1(config: &ExperimentConfig, gen: &GenerativeModel, seed: u64, out: &mut OutputDir) -> Result<E1Summary> {
    let base = config.train();
    let train_seed = derive_seed(seed, "train");
    let eval_seed = derive_seed(seed, "eval");

    // Untrained: the initialization every trained model starts from.
    let w0 = initial_weights(gen, &base, train_seed)?;
    let untrained = LinearScoreModel::inner(w0, config.e1.taus[0])?;
    let (report, margins) = evaluate(&untrained, gen, config, eval_seed)?;
    write_report(out, "untrained", &report, &margins)?;
    let mut all = vec![("untrained".to_string(), margins)];

    let mut trained_medians = Vec::new();
    let mut final_losses = Vec::new();
    for &tau in &config.e1.taus {
        let cfg = TrainConfig { tau, ..base.clone() };
        let (model, traj) = train_gd(gen, &cfg, train_seed)?;
        let label = tau_label(tau);
        write_training(out, &label, &model, &traj)?;
        let (report, margins) = evaluate(&model, gen, config, eval_seed)?;
        write_report(out, &label, &report, &margins)?;
        trained_medians.push((tau, median(&margins)));
        final_losses.push(traj.final_loss().unwrap_or(f64::NAN));
        all.push((label, margins));
    }

    // Histograms on one shared range so the models are directly comparable.
    let lo = all.iter().flat_map(|(_, m)| m.iter().copied()).fold(f64::INFINITY, f64::min);
    let hi = all.iter().flat_map(|(_, m)| m.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let p = out.claim("margin_histograms.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["model", "bin_lo", "bin_hi", "count"])?;
    for (label, m) in &all {
        let h = Histogram::with_range(m, config.eval.histogram_bins, lo, hi)?;
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([label.clone(), fmt(h.edges[i]), fmt(h.edges[i + 1]), c.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    Ok(E1Summary {
        untrained_median: median(&all[0].1),
        trained_medians,
        final_losses,
    })
}

fn e2(config: &ExperimentConfig, gen: &GenerativeModel, seed: u64, out: &mut OutputDir) -> Result<E2Summary> {
    let train = config.train();
    let (clip, traj) = train_gd(gen, &train, derive_seed(seed, "train"))?;
    write_training(out, "clip", &clip, &traj)?;
    let encoder = BayesSquareEncoder::new(gen)?;
    let spec = ZeroShotSpec::new(config.e2.n_trials, derive_seed(seed, "eval-trials"))
        .fixed(config.eval.fixed_prompts)
        .with_tau(train.tau);

    let mut rows = Vec::new();
    for sim in Similarity::ALL {
        let scorers: [(&str, Box<dyn Scorer>); 2] = [
            ("clip", Box::new(clip.with_similarity(sim))),
            (
                "square_loss",
                Box::new(EncoderScorer {
                    encoder: encoder.clone(),
                    similarity: sim,
                }),
            ),
        ];
        for (method, scorer) in scorers {
            let outcomes = zero_shot_trials(scorer.as_ref(), gen, &spec)?;
            let ZeroShotPoint { error, se, .. } = top_r_errors(&outcomes, &[1])[0];
            rows.push(E2Row {
                method: method.to_string(),
                similarity: sim.name().to_string(),
                error,
                se,
            });
        }
    }

    let p = out.claim("errors.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["method", "similarity", "error", "se"])?;
    for r in &rows {
        w.write_record([r.method.clone(), r.similarity.clone(), fmt(r.error), fmt(r.se)])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    Ok(E2Summary {
        rows,
        square_loss_lower_bound: 1.0 / (3.0 * gen.num_classes() as f64),
        clip_final_loss: traj.final_loss().unwrap_or(f64::NAN),
    })
}

fn e3(config: &ExperimentConfig, gen: &GenerativeModel, seed: u64, out: &mut OutputDir) -> Result<E3Summary> {
    let base = config.train();
    let train_seed = derive_seed(seed, "train");
    let eval_seed = derive_seed(seed, "eval");
    let positive_lambda = if base.reg_kind == RegKind::Positive && base.lambda > 0.0 {
        base.lambda
    } else {
        DEFAULT_POSITIVE_LAMBDA
    };
    let negative_lambda = config
        .e3
        .negative_lambda
        .unwrap_or_else(|| default_negative_lambda(base.batch_size));
    let runs = [
        ("unregularized", RegKind::None, 0.0),
        ("positive", RegKind::Positive, positive_lambda),
        ("negative", RegKind::Negative, negative_lambda),
    ];

    let half = 0.5 * gen.gamma();
    let ths = thresholds(config, gen);
    let w0 = initial_weights(gen, &base, train_seed)?;
    let init_model = LinearScoreModel::inner(w0.clone(), base.tau)?;
    let init_outcomes = zero_shot_trials(&init_model, gen, &trial_spec(config, eval_seed, base.tau))?;
    let init_half = correct_with_margin(&init_outcomes, &[half])[0].fraction;
    let mut curves = vec![("init".to_string(), correct_with_margin(&init_outcomes, &ths))];

    let mut summary = Vec::new();
    for (name, kind, lambda) in runs {
        let cfg = TrainConfig {
            reg_kind: kind,
            lambda,
            ..base.clone()
        };
        let (model, traj) = crate::trainer::train_from(gen, &cfg, train_seed, w0.clone())?;
        write_training(out, name, &model, &traj)?;
        let (report, margins) = evaluate(&model, gen, config, eval_seed)?;
        write_report(out, name, &report, &margins)?;
        let outcomes = zero_shot_trials(&model, gen, &trial_spec(config, eval_seed, base.tau))?;
        let at_half = correct_with_margin(&outcomes, &[half])[0];
        summary.push(E3Run {
            name: name.to_string(),
            reg_kind: kind,
            lambda,
            fraction_at_half_gamma: at_half.fraction,
            se: at_half.se,
            initial_fraction_at_half_gamma: init_half,
            final_loss: traj.final_loss().unwrap_or(f64::NAN),
        });
        curves.push((name.to_string(), report.margin_of_correct_fraction));
    }
    write_fractions(out, "margin_fractions.csv", &curves)?;
    Ok(E3Summary { runs: summary })
}

fn e4(config: &ExperimentConfig, gen: &GenerativeModel, seed: u64, out: &mut OutputDir) -> Result<E4Summary> {
    let train = config.train();
    let model = LinearScoreModel::inner(completeness_weights(gen)?, train.tau)?;
    let b = train.batch_size;
    let opts = &config.e4;
    let pop = population_loss_estimate(
        &model,
        gen,
        b,
        opts.population_batches,
        derive_seed(seed, "population"),
    )?;

    let p = out.claim("gaps.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["n", "seed_index", "empirical_loss", "gap"])?;
    let mut points = Vec::new();
    for &n in &opts.pool_sizes {
        let losses = par::try_map_indexed(opts.seeds, |s| {
            let pool_seed = derive_seed(seed, &format!("pool-{n}-{s}"));
            // The pool itself is sampled sequentially inside each task.
            let batches = (0..n)
                .map(|i| gen.sample_batch_indexed(b, pool_seed, i as u64))
                .collect::<Result<Vec<_>>>()?;
            let total = batches
                .iter()
                .map(|batch| crate::loss::clip_batch_loss(&model, batch).map(|l| l.value))
                .sum::<Result<f64>>()?;
            Ok::<_, Error>(total / n as f64)
        })?;
        let gaps: Vec<f64> = losses.iter().map(|l| (l - pop.mean).abs()).collect();
        for (s, (l, g)) in losses.iter().zip(&gaps).enumerate() {
            w.write_record([n.to_string(), s.to_string(), fmt(*l), fmt(*g)])?;
        }
        let m = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / m;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (m - 1.0);
        points.push(E4Point {
            n,
            mean_abs_gap: mean,
            se: (var / m).sqrt(),
            scaled_gap: mean * (n as f64).sqrt(),
        });
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let p = out.claim("concentration.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["n", "mean_abs_gap", "se", "scaled_gap"])?;
    for pt in &points {
        w.write_record([pt.n.to_string(), fmt(pt.mean_abs_gap), fmt(pt.se), fmt(pt.scaled_gap)])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;

    let hi = points.iter().map(|p| p.scaled_gap).fold(f64::NEG_INFINITY, f64::max);
    let lo = points.iter().map(|p| p.scaled_gap).fold(f64::INFINITY, f64::min);
    Ok(E4Summary {
        population_loss: pop.mean,
        population_se: pop.standard_error,
        points,
        scaled_spread: hi / lo,
    })
}

fn e5(config: &ExperimentConfig, gen: &GenerativeModel, seed: u64, out: &mut OutputDir) -> Result<E5Summary> {
    let train = config.train();
    let (model, traj) = train_gd(gen, &train, derive_seed(seed, "train"))?;
    write_training(out, "model", &model, &traj)?;
    let eval_seed = derive_seed(seed, "eval");
    let (report, margins) = evaluate(&model, gen, config, eval_seed)?;
    write_report(out, "in_distribution", &report, &margins)?;

    let mut points = Vec::new();
    for &scale in &config.e5.shift_scales {
        let sampler = gen.zeta_sampler().scaled(scale)?;
        let radius = sampler.radius();
        let spec = trial_spec(config, eval_seed, train.tau).with_source(PromptSource::Shifted(sampler));
        let outcomes = zero_shot_trials(&model, gen, &spec)?;
        for pt in top_r_errors(&outcomes, &config.eval.top_r) {
            points.push(E5Point {
                scale,
                radius,
                r: pt.r,
                error: pt.error,
                se: pt.se,
            });
        }
    }
    let p = out.claim("shift_errors.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["scale", "radius", "r", "error", "se"])?;
    for pt in &points {
        w.write_record([fmt(pt.scale), fmt(pt.radius), pt.r.to_string(), fmt(pt.error), fmt(pt.se)])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(E5Summary {
        points,
        final_loss: traj.final_loss().unwrap_or(f64::NAN),
    })
}
