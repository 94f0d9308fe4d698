//! Toy-scale experiment presets: the cross-model grid against a
//! random-initialization baseline, convergence trajectories, the
//! model-data angle grid with gap prediction, and the SVD benchmarks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, correlate, mi_score, model_data_angle, predict_gap, trajectory, worker_pool, AngleGrid,
    AngleTrajectory, CorrelationReport, GapCandidate, GapPredictionConfig, GapPredictionReport,
    Pooling, SpearmanResult, MEASURE_ANGLE, MEASURE_PSEUDO_VAL, MEASURE_PSEUDO_VAL_PLUS_ANGLE,
};
use crate::error::{validate, Result};
use crate::linalg::{
    full_svd, householder_qr, randomized_svd, DenseMatrix, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS,
};
use crate::rng::SeededRng;
use crate::subspace::{angle_between, Split};
use crate::toynets::{
    evaluate_accuracy, relu_random_features, train, GaussianMixture, ModelKind, ModelSpec, Run,
    ToyDataset, TrainConfig,
};

/// Parameters of a Gaussian-mixture dataset with train and test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
    pub spread: f64,
}

impl MixtureConfig {
    pub fn build(&self) -> Result<(ToyDataset, ToyDataset)> {
        let gm = GaussianMixture::new(self.seed, self.dim, self.classes, self.spread)?;
        Ok((
            gm.sample(self.n_train, Split::Train)?,
            gm.sample(self.n_test, Split::Test)?,
        ))
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn train_all(jobs: &[(String, ModelSpec, TrainConfig)], ds: &ToyDataset) -> Result<Vec<Run>> {
    worker_pool().install(|| {
        jobs.par_iter()
            .map(|(_, spec, cfg)| train(ds, spec, cfg))
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Cross-model grid
// ---------------------------------------------------------------------------

/// One architecture of the cross-model suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMember {
    pub name: String,
    pub spec: ModelSpec,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelConfig {
    pub data: MixtureConfig,
    pub seeds: Vec<u64>,
    pub members: Vec<SuiteMember>,
}

impl Default for CrossModelConfig {
    fn default() -> Self {
        let d = 32;
        let k = 4;
        let base = TrainConfig {
            epochs: 150,
            weight_decay: 5e-3,
            ..TrainConfig::default()
        };
        let unsup = TrainConfig {
            learning_rate: 0.01,
            ..base.clone()
        };
        let member =
            |name: &str, kind, widths: Vec<usize>, classes, config: &TrainConfig| SuiteMember {
                name: name.into(),
                spec: ModelSpec::new(kind, d, widths, classes).expect("valid preset spec"),
                config: config.clone(),
            };
        Self {
            data: MixtureConfig {
                seed: 1,
                n_train: 2000,
                n_test: 2000,
                dim: d,
                classes: k,
                spread: 3.0,
            },
            seeds: (1..=5).collect(),
            members: vec![
                member(
                    "mlp-w64",
                    ModelKind::MlpClassifier,
                    vec![64, 64],
                    Some(k),
                    &base,
                ),
                member(
                    "mlp-w128",
                    ModelKind::MlpClassifier,
                    vec![128, 128],
                    Some(k),
                    &base,
                ),
                member("ae", ModelKind::Autoencoder, vec![64, 16], None, &unsup),
                member(
                    "dae",
                    ModelKind::DenoiseAutoencoder,
                    vec![64, 16],
                    None,
                    &unsup,
                ),
                member(
                    "contrastive",
                    ModelKind::Contrastive,
                    vec![64, 32],
                    None,
                    &unsup,
                ),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelReport {
    /// Grid over the well-trained checkpoints.
    pub trained: AngleGrid,
    /// Grid over the random-initialization checkpoints.
    pub initial: AngleGrid,
    /// Off-diagonal baseline cosines, excluding pairs whose initial
    /// parameters are bit-identical.
    pub baseline_pairs: Vec<f64>,
    pub identical_init_pairs: usize,
    pub trained_pairs: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub baseline_p99: f64,
    pub trained_mean: f64,
    pub trained_min: f64,
    pub run_ids: Vec<String>,
}

impl CrossModelReport {
    pub fn all_above_baseline_p99(&self) -> bool {
        self.trained_pairs.iter().all(|&c| c > self.baseline_p99)
    }

    pub fn mean_above_baseline(&self, sds: f64) -> bool {
        self.trained_mean > self.baseline_mean + sds * self.baseline_std
    }
}

/// Trains every member for every seed on one dataset and compares the
/// P-vectors of well-trained and freshly initialized checkpoints.
pub fn cross_model_suite(cfg: &CrossModelConfig) -> Result<CrossModelReport> {
    validate(!cfg.seeds.is_empty() && !cfg.members.is_empty(), || {
        "empty suite".into()
    })?;
    let (ds, _) = cfg.data.build()?;
    let jobs: Vec<(String, ModelSpec, TrainConfig)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| {
            cfg.members.iter().map(move |m| {
                (
                    format!("{}/s{seed}", m.name),
                    m.spec.clone(),
                    TrainConfig {
                        seed,
                        ..m.config.clone()
                    },
                )
            })
        })
        .collect();
    let runs = train_all(&jobs, &ds)?;
    let labels: Vec<String> = jobs.iter().map(|j| j.0.clone()).collect();
    let finals = runs
        .iter()
        .map(|r| r.final_checkpoint().expect("completed run"))
        .collect::<Vec<_>>();
    let inits = runs
        .iter()
        .map(|r| r.initial().expect("initial checkpoint"))
        .collect::<Vec<_>>();
    let mut trained = analysis::cross_model_angle_grid(&finals, &ds)?;
    let mut initial = analysis::cross_model_angle_grid(&inits, &ds)?;
    trained.labels = labels.clone();
    initial.labels = labels;

    let n = runs.len();
    let mut baseline_pairs = Vec::new();
    let mut identical_init_pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            if inits[i].parameters == inits[j].parameters {
                identical_init_pairs += 1;
            } else {
                baseline_pairs.push(initial.cosines[i][j]);
            }
        }
    }
    let trained_pairs = trained.pairs();
    let (baseline_mean, baseline_std) = mean_std(&baseline_pairs);
    let (trained_mean, _) = mean_std(&trained_pairs);
    Ok(CrossModelReport {
        baseline_p99: percentile(&baseline_pairs, 0.99),
        trained_min: trained_pairs.iter().copied().fold(f64::INFINITY, f64::min),
        trained,
        initial,
        baseline_pairs,
        identical_init_pairs,
        trained_pairs,
        baseline_mean,
        baseline_std,
        trained_mean,
        run_ids: runs.iter().map(|r| r.run_id().to_string()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Convergence trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub data: MixtureConfig,
    pub seeds: Vec<u64>,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    /// Singular-vector indices traced for the seed-`seeds[0]` run.
    pub topk: Vec<usize>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let data = CrossModelConfig::default().data;
        Self {
            spec: ModelSpec::new(
                ModelKind::MlpClassifier,
                data.dim,
                vec![64, 64],
                Some(data.classes),
            )
            .expect("valid preset spec"),
            data,
            seeds: (1..=5).collect(),
            config: TrainConfig::default(),
            topk: (2..=6).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub seed: u64,
    pub run_id: String,
    pub trajectory: AngleTrajectory,
    /// Spearman of (epoch, angle to own final) over epochs >= 1.
    pub spearman: SpearmanResult,
    pub first_epoch_max: Option<f64>,
    pub first_epoch_reversals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub runs: Vec<TrajectorySummary>,
    /// Traces for `k` in `topk` on the first run; reported, not constrained.
    pub topk: Vec<(AngleTrajectory, Option<SpearmanResult>)>,
}

fn summarize(seed: u64, run: &Run, t: AngleTrajectory) -> Result<TrajectorySummary> {
    Ok(TrajectorySummary {
        seed,
        run_id: run.run_id().to_string(),
        spearman: t.epoch_spearman(1)?,
        first_epoch_max: t.first_epoch_max(),
        first_epoch_reversals: t.first_epoch_reversals(),
        trajectory: t,
    })
}

/// Angle of every checkpoint to the run's own final checkpoint, for `k = 1`
/// on every seed and for the extra `topk` indices on the first seed.
pub fn convergence_trajectories(cfg: &TrajectoryConfig) -> Result<TrajectoryReport> {
    validate(!cfg.seeds.is_empty(), || "no seeds".into())?;
    let (ds, _) = cfg.data.build()?;
    let jobs: Vec<(String, ModelSpec, TrainConfig)> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            (
                format!("s{seed}"),
                cfg.spec.clone(),
                TrainConfig {
                    seed,
                    ..cfg.config.clone()
                },
            )
        })
        .collect();
    let runs = train_all(&jobs, &ds)?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (seed, run) in cfg.seeds.iter().zip(&runs) {
        let fin = run.final_checkpoint().expect("completed run");
        summaries.push(summarize(*seed, run, trajectory(run, fin, &ds, 1)?)?);
    }
    let first = &runs[0];
    let fin = first.final_checkpoint().expect("completed run");
    let mut topk = Vec::new();
    for &k in &cfg.topk {
        let t = trajectory(first, fin, &ds, k)?;
        // Constant or too-short sequences have no defined correlation.
        let s = t.epoch_spearman(1).ok();
        topk.push((t, s));
    }
    Ok(TrajectoryReport {
        runs: summaries,
        topk,
    })
}

// ---------------------------------------------------------------------------
// Model-data angle grid and gap prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub data: MixtureConfig,
    pub widths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub depth: usize,
    pub base: TrainConfig,
    pub gap: GapPredictionConfig,
    pub shuffles: usize,
    pub shuffle_seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            data: MixtureConfig {
                seed: 1,
                n_train: 200,
                n_test: 2000,
                dim: 32,
                classes: 4,
                spread: 3.0,
            },
            widths: vec![32, 128],
            learning_rates: vec![0.01, 0.03, 0.1],
            epochs: vec![5, 40],
            depth: 2,
            base: TrainConfig {
                batch_size: 32,
                ..TrainConfig::default()
            },
            gap: GapPredictionConfig::default(),
            shuffles: 200,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub model_id: String,
    pub run_id: String,
    pub width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub initial_angle: f64,
    pub final_angle: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub degenerate_points: usize,
    pub trajectory: AngleTrajectory,
}

impl GridRun {
    pub fn gap(&self) -> f64 {
        self.train_accuracy - self.test_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub runs: Vec<GridRun>,
    /// Final model-data angle (train split) vs test accuracy, pooled
    /// across runs.
    pub angle_vs_test: CorrelationReport,
    pub decreasing_runs: usize,
    pub gap_prediction: GapPredictionReport,
    /// MI of the angle measure with each shuffled copy of itself.
    pub shuffled_mi: Vec<f64>,
    pub shuffled_mi_p95: f64,
}

impl GridReport {
    pub fn angle_mi(&self) -> f64 {
        self.gap_prediction.mi_scores[MEASURE_ANGLE]
    }

    pub fn pseudo_val_mi(&self) -> f64 {
        self.gap_prediction.mi_scores[MEASURE_PSEUDO_VAL]
    }

    pub fn combined_mi(&self) -> f64 {
        self.gap_prediction.mi_scores[MEASURE_PSEUDO_VAL_PLUS_ANGLE]
    }
}

/// Trains the widths × learning rates × epoch budgets grid, traces the
/// model-data angle of every run on the training split and scores the
/// gap-prediction measures.
pub fn model_data_grid(cfg: &GridConfig) -> Result<GridReport> {
    let (train_ds, test_ds) = cfg.data.build()?;
    let mut jobs = Vec::new();
    let mut shape = Vec::new();
    for &w in &cfg.widths {
        for &lr in &cfg.learning_rates {
            for &ep in &cfg.epochs {
                let spec = ModelSpec::new(
                    ModelKind::MlpClassifier,
                    cfg.data.dim,
                    vec![w; cfg.depth],
                    Some(cfg.data.classes),
                )?;
                let tc = TrainConfig {
                    epochs: ep,
                    learning_rate: lr,
                    ..cfg.base.clone()
                };
                jobs.push((format!("w{w}-lr{lr}-e{ep}"), spec, tc));
                shape.push((w, lr, ep));
            }
        }
    }
    validate(jobs.len() >= 3, || "grid needs at least 3 runs".into())?;
    let runs = train_all(&jobs, &train_ds)?;

    let mut grid_runs = Vec::with_capacity(runs.len());
    for ((job, run), &(width, learning_rate, epochs)) in jobs.iter().zip(&runs).zip(&shape) {
        let t = model_data_angle(run, &train_ds)?;
        let fin = run.final_checkpoint().expect("completed run");
        grid_runs.push(GridRun {
            model_id: job.0.clone(),
            run_id: run.run_id().to_string(),
            width,
            learning_rate,
            epochs,
            initial_angle: t.points.first().map_or(f64::NAN, |p| p.degrees),
            final_angle: t.points.last().map_or(f64::NAN, |p| p.degrees),
            train_accuracy: evaluate_accuracy(fin, &train_ds)?,
            test_accuracy: evaluate_accuracy(fin, &test_ds)?,
            degenerate_points: t.degenerate_count(),
            trajectory: t,
        });
    }

    let angles: Vec<f64> = grid_runs.iter().map(|r| r.final_angle).collect();
    let tests: Vec<f64> = grid_runs.iter().map(|r| r.test_accuracy).collect();
    let angle_vs_test = correlate(
        &angles,
        &tests,
        ["final_model_data_angle_deg", "test_accuracy"],
        false,
        Pooling::AcrossRuns,
        grid_runs.iter().filter(|r| r.degenerate_points > 0).count(),
    )?;
    let decreasing_runs = grid_runs
        .iter()
        .filter(|r| r.final_angle < r.initial_angle)
        .count();

    let cands: Vec<GapCandidate<'_>> = runs
        .iter()
        .zip(&grid_runs)
        .map(|(run, g)| GapCandidate {
            model_id: g.model_id.clone(),
            final_ckpt: run.final_checkpoint().expect("completed run"),
            init_ckpt: run.initial().expect("initial checkpoint"),
            observed_gap: Some(g.gap()),
        })
        .collect();
    let gap_prediction = predict_gap(&cands, &train_ds, &cfg.gap)?;

    let gaps: Vec<f64> = grid_runs.iter().map(|r| r.gap()).collect();
    let measure: Vec<f64> = gap_prediction
        .rows
        .iter()
        .map(|r| r.measures[MEASURE_ANGLE])
        .collect();
    let mut rng = SeededRng::new(cfg.shuffle_seed);
    let mut shuffled_mi = Vec::with_capacity(cfg.shuffles);
    let mut perm = measure.clone();
    for _ in 0..cfg.shuffles {
        rng.shuffle(&mut perm);
        shuffled_mi.push(mi_score(&perm, &gaps, gap_prediction.bins)?);
    }
    Ok(GridReport {
        shuffled_mi_p95: percentile(&shuffled_mi, 0.95),
        runs: grid_runs,
        angle_vs_test,
        decreasing_runs,
        gap_prediction,
        shuffled_mi,
    })
}

// ---------------------------------------------------------------------------
// SVD benchmarks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdBenchReport {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub seed: u64,
    pub oversample: usize,
    pub power_iters: usize,
    pub exact_seconds: f64,
    pub randomized_seconds: f64,
    pub speedup: f64,
    /// `|cos|` between the leading left singular vectors.
    pub cosine_abs: f64,
    pub sigma1_relative_error: f64,
}

/// Latent dimension of the benchmark matrix.
pub const BENCH_LATENT: usize = 16;

/// Times exact and randomized top-`k` SVD on a seeded ReLU random-feature
/// matrix, a stand-in for a deep feature matrix with a dominant direction.
pub fn svd_bench(
    rows: usize,
    cols: usize,
    k: usize,
    seed: u64,
    oversample: usize,
    power_iters: usize,
) -> Result<SvdBenchReport> {
    validate(rows >= 2 && cols >= 2, || {
        "matrix must be at least 2x2".into()
    })?;
    let a = relu_random_features(rows, cols, BENCH_LATENT.min(cols), seed);
    let t0 = Instant::now();
    let exact = full_svd(&a, k)?;
    let exact_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let approx = randomized_svd(&a, k, oversample, power_iters, seed)?;
    let randomized_seconds = t1.elapsed().as_secs_f64();
    let cosine_abs = angle_between(&exact.u.column(0), &approx.u.column(0))?.cosine_abs;
    Ok(SvdBenchReport {
        rows,
        cols,
        k,
        seed,
        oversample,
        power_iters,
        exact_seconds,
        randomized_seconds,
        speedup: exact_seconds / randomized_seconds.max(1e-12),
        cosine_abs,
        sigma1_relative_error: (approx.sigma[0] - exact.sigma[0]).abs() / exact.sigma[0],
    })
}

/// Random orthonormal `n × k` factor.
fn random_orthonormal(n: usize, k: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    let (q, _) = householder_qr(&DenseMatrix::gaussian(n, k, rng))?;
    Ok(q.leading_columns(k))
}

/// Seeded test matrix `U diag(σ) Vᵀ` with `σ₁ = 1`, `σ₂ ≤ 0.9` and a
/// geometric tail.
pub fn gapped_matrix(rows: usize, cols: usize, seed: u64) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut rng = SeededRng::new(seed);
    let r = rows.min(cols);
    let s2 = rng.uniform_range(0.5, 0.9);
    let decay = rng.uniform_range(0.7, 0.95);
    let sigma: Vec<f64> = (0..r)
        .map(|j| {
            if j == 0 {
                1.0
            } else {
                s2 * decay.powi(j as i32 - 1)
            }
        })
        .collect();
    let u = random_orthonormal(rows, r, &mut rng)?;
    let v = random_orthonormal(cols, r, &mut rng)?;
    let mut us = u;
    for i in 0..rows {
        for (j, s) in sigma.iter().enumerate() {
            us[(i, j)] *= s;
        }
    }
    Ok((us.matmul(&v.transpose())?, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub cosine_abs: f64,
    pub sigma1_relative_error: f64,
}

/// Randomized vs exact top singular pair over `count` seeded gapped
/// matrices of at most `max_rows × max_cols`.
pub fn svd_oracle_suite(
    count: usize,
    max_rows: usize,
    max_cols: usize,
    seed: u64,
) -> Result<Vec<OracleCase>> {
    let min_dim = 1 + DEFAULT_OVERSAMPLE;
    validate(max_rows >= min_dim && max_cols >= min_dim, || {
        format!("matrices must be at least {min_dim} on each side")
    })?;
    let mut rng = SeededRng::new(seed);
    let shapes: Vec<(u64, usize, usize)> = (0..count)
        .map(|i| {
            let cols = min_dim + rng.below(max_cols - min_dim + 1);
            let rows = cols + rng.below(max_rows - cols + 1);
            (
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                rows,
                cols,
            )
        })
        .collect();
    worker_pool().install(|| {
        shapes
            .par_iter()
            .map(|&(s, rows, cols)| {
                let (a, _) = gapped_matrix(rows, cols, s)?;
                let exact = full_svd(&a, 1)?;
                let approx = randomized_svd(&a, 1, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS, s)?;
                Ok(OracleCase {
                    seed: s,
                    rows,
                    cols,
                    cosine_abs: angle_between(&exact.u.column(0), &approx.u.column(0))?.cosine_abs,
                    sigma1_relative_error: (approx.sigma[0] - exact.sigma[0]).abs()
                        / exact.sigma[0],
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gapped_matrix_has_requested_spectrum() {
        let (a, sigma) = gapped_matrix(40, 15, 3).unwrap();
        let svd = full_svd(&a, 3).unwrap();
        for (got, want) in svd.sigma.iter().zip(&sigma) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(sigma[1] <= 0.9 * sigma[0]);
    }

    #[test]
    fn small_oracle_suite() {
        for c in svd_oracle_suite(5, 60, 20, 9).unwrap() {
            assert!(c.cols >= 11 && c.rows >= c.cols && c.rows <= 60);
            assert!(c.cosine_abs > 0.999);
        }
    }
}
