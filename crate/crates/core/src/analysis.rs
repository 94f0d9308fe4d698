//! Experiment-level computations on top of P-vectors: angle grids,
//! convergence trajectories, model-data angles, rank correlations and the
//! generalization-gap prediction pipeline.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{validate, Error, Result};
use crate::linalg::SvdMethod;
use crate::subspace::{
    angle_between, data_pvector, pvector, topk_left_singular, Angle, PVector, Split,
};
use crate::toynets::{
    augment, evaluate_accuracy, extract_features, AugmentPolicy, Checkpoint, Run, ToyDataset,
};

/// Environment variable capping worker pools.
pub const THREADS_ENV: &str = "SUBSPECTRA_THREADS";
/// Default weight of the secondary list in [`aggregate_ranks`].
pub const DEFAULT_AGGREGATION_WEIGHT: f64 = 0.05;

/// Thread pool sized by `SUBSPECTRA_THREADS` (default: all cores).
pub fn worker_pool() -> rayon::ThreadPool {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

// ---------------------------------------------------------------------------
// Grids and trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub labels: Vec<String>,
    /// Symmetric matrix of `|cos|`, unit diagonal.
    pub cosines: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
    pub split: Option<Split>,
}

impl AngleGrid {
    /// Off-diagonal entries `(i < j)`.
    pub fn pairs(&self) -> Vec<f64> {
        let n = self.labels.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.cosines[i][j]);
            }
        }
        out
    }
}

/// Pairwise `|cos|` between P-vectors computed on the same samples.
pub fn angle_grid(pvectors: &[PVector], labels: Vec<String>) -> Result<AngleGrid> {
    validate(labels.len() == pvectors.len(), || {
        "one label per P-vector".into()
    })?;
    let n = pvectors.len();
    let mut cosines = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = angle_between(&pvectors[i].values, &pvectors[j].values)?.cosine_abs;
            cosines[i][j] = c;
            cosines[j][i] = c;
        }
    }
    Ok(AngleGrid {
        labels,
        cosines,
        degenerate: pvectors.iter().map(|p| p.degenerate).collect(),
        split: pvectors.first().map(|p| p.source.split),
    })
}

/// `|cos|` grid between the P-vectors of several checkpoints trained on one
/// dataset, with features extracted from `ds`.
pub fn cross_model_angle_grid(ckpts: &[&Checkpoint], ds: &ToyDataset) -> Result<AngleGrid> {
    validate(!ckpts.is_empty(), || "no checkpoints".into())?;
    let dataset = &ckpts[0].dataset_id;
    if let Some(c) = ckpts.iter().find(|c| &c.dataset_id != dataset) {
        return Err(Error::Validation(format!(
            "{} was trained on dataset {}, expected {}",
            c.label(),
            c.dataset_id,
            dataset
        )));
    }
    let pvs = worker_pool().install(|| {
        ckpts
            .par_iter()
            .map(|c| pvector(&extract_features(c, ds, None)?, SvdMethod::Exact, None))
            .collect::<Result<Vec<_>>>()
    })?;
    angle_grid(&pvs, ckpts.iter().map(|c| c.label()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TrajectoryReference {
    Checkpoint {
        run_id: String,
        epoch: u32,
        iteration: Option<u32>,
    },
    Data {
        dataset_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: u32,
    pub iteration: Option<u32>,
    pub degrees: f64,
    pub cosine_abs: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGap {
    pub epoch: u32,
    pub iteration: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleTrajectory {
    pub run_id: String,
    pub reference: TrajectoryReference,
    pub split: Split,
    /// Singular-vector index, 1 = P-vector.
    pub k: usize,
    /// Sorted by `(epoch, iteration)`; within epoch 0 the per-step points
    /// come first.
    pub points: Vec<TrajectoryPoint>,
    pub gaps: Vec<TrajectoryGap>,
}

impl AngleTrajectory {
    /// End-of-epoch points with `epoch >= min_epoch`.
    pub fn epoch_points(&self, min_epoch: u32) -> Vec<&TrajectoryPoint> {
        self.points
            .iter()
            .filter(|p| p.iteration.is_none() && p.epoch >= min_epoch)
            .collect()
    }

    /// Per-step points of the first epoch.
    pub fn first_epoch_iterations(&self) -> Vec<&TrajectoryPoint> {
        self.points
            .iter()
            .filter(|p| p.iteration.is_some())
            .collect()
    }

    /// Largest angle reached during the first epoch, which charts use to
    /// stand for epoch 0.
    pub fn first_epoch_max(&self) -> Option<f64> {
        self.first_epoch_iterations()
            .iter()
            .map(|p| p.degrees)
            .max_by(f64::total_cmp)
    }

    /// Number of direction changes in the first-epoch step sequence.
    pub fn first_epoch_reversals(&self) -> usize {
        let d: Vec<f64> = self
            .first_epoch_iterations()
            .iter()
            .map(|p| p.degrees)
            .collect();
        d.windows(3)
            .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
            .count()
    }

    /// Spearman correlation between epoch index and angle over end-of-epoch
    /// points with `epoch >= min_epoch`.
    pub fn epoch_spearman(&self, min_epoch: u32) -> Result<SpearmanResult> {
        let pts = self.epoch_points(min_epoch);
        let x: Vec<f64> = pts.iter().map(|p| p.epoch as f64).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.degrees).collect();
        spearman(&x, &y)
    }

    pub fn degenerate_count(&self) -> usize {
        self.points.iter().filter(|p| p.degenerate).count()
    }
}

/// Reference direction plus the function that compares a checkpoint to it.
fn trace(
    run: &Run,
    ds: &ToyDataset,
    k: usize,
    reference: TrajectoryReference,
    target: &[f64],
    target_degenerate: bool,
) -> Result<AngleTrajectory> {
    let results = worker_pool().install(|| {
        run.checkpoints
            .par_iter()
            .map(
                |c| -> Result<std::result::Result<TrajectoryPoint, TrajectoryGap>> {
                    let f = extract_features(c, ds, None)?;
                    let dirs = match topk_left_singular(&f, k, SvdMethod::Exact, None) {
                        Ok(d) => d,
                        Err(Error::Degenerate(msg)) => {
                            return Ok(Err(TrajectoryGap {
                                epoch: c.epoch,
                                iteration: c.iteration,
                                reason: msg,
                            }))
                        }
                        Err(e) => return Err(e),
                    };
                    let dir = &dirs[k - 1];
                    let a = angle_between(&dir.values, target)?;
                    Ok(Ok(TrajectoryPoint {
                        epoch: c.epoch,
                        iteration: c.iteration,
                        degrees: a.degrees,
                        cosine_abs: a.cosine_abs,
                        degenerate: dir.degenerate || target_degenerate,
                    }))
                },
            )
            .collect::<Result<Vec<_>>>()
    })?;
    let mut points = Vec::new();
    let mut gaps: Vec<TrajectoryGap> = run
        .missing
        .iter()
        .map(|&(epoch, iteration)| TrajectoryGap {
            epoch,
            iteration,
            reason: "checkpoint file missing".into(),
        })
        .collect();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(g) => gaps.push(g),
        }
    }
    let key = |e: u32, i: Option<u32>| (e, i.map_or(u64::MAX, u64::from));
    points.sort_by_key(|p| key(p.epoch, p.iteration));
    gaps.sort_by_key(|g| key(g.epoch, g.iteration));
    Ok(AngleTrajectory {
        run_id: run.run_id().to_string(),
        reference,
        split: ds.split,
        k,
        points,
        gaps,
    })
}

/// Angle between the `k`-th left singular vector of every stored checkpoint
/// and that of `reference`.
pub fn trajectory(
    run: &Run,
    reference: &Checkpoint,
    ds: &ToyDataset,
    k: usize,
) -> Result<AngleTrajectory> {
    validate(k >= 1, || "k must be >= 1".into())?;
    let rf = extract_features(reference, ds, None)?;
    let dirs = topk_left_singular(&rf, k, SvdMethod::Exact, None)?;
    let target = &dirs[k - 1];
    trace(
        run,
        ds,
        k,
        TrajectoryReference::Checkpoint {
            run_id: reference.run_id.clone(),
            epoch: reference.epoch,
            iteration: reference.iteration,
        },
        &target.values,
        target.degenerate,
    )
}

/// Angle between every checkpoint's P-vector and the data P-vector of `ds`.
pub fn model_data_angle(run: &Run, ds: &ToyDataset) -> Result<AngleTrajectory> {
    let data = data_pvector(&ds.raw_matrix()?)?;
    trace(
        run,
        ds,
        1,
        TrajectoryReference::Data {
            dataset_id: ds.dataset_id.clone(),
        },
        &data.values,
        data.degenerate,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAngle {
    pub layer: usize,
    /// `None` when the layer's features are all zero.
    pub angle: Option<Angle>,
    pub degenerate: bool,
}

/// Angle to the data P-vector for every hidden layer of `ckpt`.
pub fn per_layer_angles(ckpt: &Checkpoint, ds: &ToyDataset) -> Result<Vec<LayerAngle>> {
    let data = data_pvector(&ds.raw_matrix()?)?;
    (0..ckpt.spec.hidden_layers())
        .map(|layer| {
            let f = extract_features(ckpt, ds, Some(layer))?;
            match pvector(&f, SvdMethod::Exact, None) {
                Ok(p) => Ok(LayerAngle {
                    layer,
                    angle: Some(angle_between(&p.values, &data.values)?),
                    degenerate: p.degenerate || data.degenerate,
                }),
                Err(Error::Degenerate(_)) => Ok(LayerAngle {
                    layer,
                    angle: None,
                    degenerate: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    validate(x.len() == y.len(), || {
        format!("length mismatch: {} vs {}", x.len(), y.len())
    })?;
    validate(x.len() >= 3, || format!("need n >= 3, got {}", x.len()))?;
    validate(x.iter().chain(y).all(|v| v.is_finite()), || {
        "non-finite value".into()
    })
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined for constant input".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sample correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson_unchecked(x, y)
}

/// Pearson correlation of `(ln x, ln y)`.
pub fn pearson_log_log(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    validate(x.iter().chain(y).all(|&v| v > 0.0), || {
        "log-log correlation needs strictly positive values".into()
    })?;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    pearson_unchecked(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// `true` when `p` comes from full permutation enumeration.
    pub exact: bool,
}

/// Largest `n` for which p-values are computed by enumerating permutations.
pub const SPEARMAN_EXACT_MAX_N: usize = 8;

/// Spearman rank correlation with a two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    check_pair(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson_unchecked(&rx, &ry)?;
    let n = x.len();
    if n <= SPEARMAN_EXACT_MAX_N {
        return Ok(SpearmanResult {
            rho,
            p: permutation_p(&rx, &ry, rho),
            exact: true,
        });
    }
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult {
        rho,
        p,
        exact: false,
    })
}

/// Fraction of rank permutations whose |rho| reaches the observed one.
fn permutation_p(rx: &[f64], ry: &[f64], rho: f64) -> f64 {
    let n = ry.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut buf = vec![0.0; n];
    let target = rho.abs() - 1e-12;
    let mut hits = 0u64;
    let mut total = 0u64;
    loop {
        for (b, &p) in buf.iter_mut().zip(&perm) {
            *b = ry[p];
        }
        let r = pearson_unchecked(rx, &buf).unwrap_or(0.0);
        total += 1;
        if r.abs() >= target {
            hits += 1;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    hits as f64 / total as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// How the samples of a correlation were pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    AcrossEpochs,
    AcrossRuns,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub spearman_rho: f64,
    pub spearman_p: f64,
    pub spearman_exact: bool,
    pub pearson_r: f64,
    pub n: usize,
    pub variables: [String; 2],
    pub log_log: bool,
    pub pooling: Pooling,
    pub degenerate_points: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Spearman and Pearson (optionally on log-log axes) for one pair of series.
pub fn correlate(
    x: &[f64],
    y: &[f64],
    names: [&str; 2],
    log_log: bool,
    pooling: Pooling,
    degenerate_points: usize,
) -> Result<CorrelationReport> {
    let s = spearman(x, y)?;
    let r = if log_log {
        pearson_log_log(x, y)?
    } else {
        pearson(x, y)?
    };
    Ok(CorrelationReport {
        spearman_rho: s.rho,
        spearman_p: s.p,
        spearman_exact: s.exact,
        pearson_r: r,
        n: x.len(),
        variables: [names[0].to_string(), names[1].to_string()],
        log_log,
        pooling,
        degenerate_points,
        x: x.to_vec(),
        y: y.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Generalization-gap prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleMeasure {
    pub model_id: String,
    pub degrees: f64,
    pub degenerate: bool,
}

/// Angle between each model's final P-vector and the data P-vector, both on
/// the training set. Test data is not an input.
pub fn measure_angle_gap(
    models: &[&Checkpoint],
    train_ds: &ToyDataset,
) -> Result<Vec<AngleMeasure>> {
    validate(train_ds.split == Split::Train, || {
        format!(
            "angle measure uses the training split, got {}",
            train_ds.split
        )
    })?;
    let data = data_pvector(&train_ds.raw_matrix()?)?;
    worker_pool().install(|| {
        models
            .par_iter()
            .map(|c| {
                let p = pvector(
                    &extract_features(c, train_ds, None)?,
                    SvdMethod::Exact,
                    None,
                )?;
                let a = angle_between(&p.values, &data.values)?;
                Ok(AngleMeasure {
                    model_id: c.label(),
                    degrees: a.degrees,
                    degenerate: p.degenerate || data.degenerate,
                })
            })
            .collect()
    })
}

/// Accuracy on an augmented copy of the training set.
pub fn pseudo_validation_accuracy(
    ckpt: &Checkpoint,
    train_ds: &ToyDataset,
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<f64> {
    evaluate_accuracy(ckpt, &augment(train_ds, policy, seed)?)
}

/// Euclidean distance between the flat parameter vectors of a checkpoint
/// and its run's initialization.
pub fn distance_to_init(final_ckpt: &Checkpoint, init: &Checkpoint) -> Result<f64> {
    validate(final_ckpt.spec == init.spec, || {
        "checkpoints have different specs".into()
    })?;
    validate(init.is_initial(), || {
        format!("{} is not an initialization checkpoint", init.label())
    })?;
    validate(final_ckpt.parameters.len() == init.parameters.len(), || {
        "parameter counts differ".into()
    })?;
    Ok(final_ckpt
        .parameters
        .iter()
        .zip(&init.parameters)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankAggregation {
    /// Model indices, best first.
    pub order: Vec<usize>,
    /// `rank_primary + weight · rank_secondary` per model (lower is better).
    pub combined: Vec<f64>,
    pub primary_ranks: Vec<f64>,
    pub secondary_ranks: Vec<f64>,
    pub weight: f64,
}

/// Rank 1 = highest score, ties averaged.
fn descending_ranks(scores: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
    average_ranks(&neg)
}

/// Weighted rank aggregation of two score lists (higher score = better
/// predicted generalization). Ties in the combined score fall back to
/// `ids` order.
pub fn aggregate_ranks(
    ids: &[String],
    primary: &[f64],
    secondary: &[f64],
    weight: f64,
) -> Result<RankAggregation> {
    validate(
        primary.len() == secondary.len() && ids.len() == primary.len(),
        || {
            format!(
                "length mismatch: {} ids, {} primary, {} secondary",
                ids.len(),
                primary.len(),
                secondary.len()
            )
        },
    )?;
    validate(weight.is_finite() && weight >= 0.0, || {
        "weight must be >= 0".into()
    })?;
    let pr = descending_ranks(primary);
    let sr = descending_ranks(secondary);
    let combined: Vec<f64> = pr.iter().zip(&sr).map(|(p, s)| p + weight * s).collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        combined[a]
            .total_cmp(&combined[b])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    Ok(RankAggregation {
        order,
        combined,
        primary_ranks: pr,
        secondary_ranks: sr,
        weight,
    })
}

/// Default bin count: `max(2, ⌊√n⌋)`.
pub fn default_mi_bins(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(2)
}

/// Equal-frequency bin index per element: the element of ordinal rank `r`
/// (ties broken by position) goes to bin `⌊r · bins / n⌋`.
fn equal_frequency_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut out = vec![0; n];
    for (r, &i) in idx.iter().enumerate() {
        out[i] = r * bins / n;
    }
    out
}

/// Plug-in mutual information (nats) between equal-frequency
/// discretizations of `measure` and `gap`.
///
/// This is the unconditional form; it does not condition on
/// hyper-parameter groups.
pub fn mi_score(measure: &[f64], gap: &[f64], bins: usize) -> Result<f64> {
    validate(measure.len() == gap.len(), || {
        format!("length mismatch: {} vs {}", measure.len(), gap.len())
    })?;
    validate(bins >= 2, || format!("need at least 2 bins, got {bins}"))?;
    validate(measure.len() >= bins, || {
        format!("n={} smaller than bins={bins}", measure.len())
    })?;
    let n = measure.len() as f64;
    let a = equal_frequency_bins(measure, bins);
    let b = equal_frequency_bins(gap, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for (&i, &j) in a.iter().zip(&b) {
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij * n * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// One model entering the gap-prediction pipeline.
#[derive(Debug, Clone)]
pub struct GapCandidate<'a> {
    pub model_id: String,
    pub final_ckpt: &'a Checkpoint,
    pub init_ckpt: &'a Checkpoint,
    /// Train accuracy minus test accuracy, when known.
    pub observed_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPredictionConfig {
    pub weight: f64,
    pub bins: Option<usize>,
    pub pseudo_policy: AugmentPolicy,
    pub pseudo_seed: u64,
}

impl Default for GapPredictionConfig {
    fn default() -> Self {
        Self {
            weight: DEFAULT_AGGREGATION_WEIGHT,
            bins: None,
            pseudo_policy: AugmentPolicy::default(),
            pseudo_seed: 0,
        }
    }
}

pub const MEASURE_ANGLE: &str = "pvector_angle";
pub const MEASURE_PSEUDO_VAL: &str = "pseudo_validation_accuracy";
pub const MEASURE_DISTANCE: &str = "distance_to_init";
pub const MEASURE_PSEUDO_VAL_PLUS_ANGLE: &str = "pseudo_validation_accuracy+pvector";
pub const MEASURE_DISTANCE_PLUS_ANGLE: &str = "distance_to_init+pvector";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub model_id: String,
    /// Raw measure values (combined measures hold the aggregated rank
    /// score, lower = better).
    pub measures: BTreeMap<String, f64>,
    pub observed_gap: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPredictionReport {
    pub rows: Vec<GapRow>,
    /// Model ids, best predicted generalization first.
    pub rankings: BTreeMap<String, Vec<String>>,
    /// Present when every row has an observed gap.
    pub mi_scores: BTreeMap<String, f64>,
    pub aggregation_weight: f64,
    pub bins: usize,
    pub degenerate_count: usize,
}

/// Orientation so that a higher value predicts better generalization.
fn oriented(name: &str, v: f64) -> f64 {
    match name {
        MEASURE_PSEUDO_VAL => v,
        // angle, distance and aggregated rank scores: smaller is better
        _ => -v,
    }
}

/// Computes every measure on the training set only, ranks the models and,
/// when gaps are known, scores each measure by mutual information.
pub fn predict_gap(
    cands: &[GapCandidate<'_>],
    train_ds: &ToyDataset,
    cfg: &GapPredictionConfig,
) -> Result<GapPredictionReport> {
    validate(cands.len() >= 2, || "need at least two models".into())?;
    let finals: Vec<&Checkpoint> = cands.iter().map(|c| c.final_ckpt).collect();
    let angles = measure_angle_gap(&finals, train_ds)?;
    let pseudo = cands
        .iter()
        .map(|c| {
            pseudo_validation_accuracy(c.final_ckpt, train_ds, &cfg.pseudo_policy, cfg.pseudo_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let dist = cands
        .iter()
        .map(|c| distance_to_init(c.final_ckpt, c.init_ckpt))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = cands.iter().map(|c| c.model_id.clone()).collect();
    let angle_vals: Vec<f64> = angles.iter().map(|a| a.degrees).collect();

    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    columns.insert(MEASURE_ANGLE.into(), angle_vals.clone());
    columns.insert(MEASURE_PSEUDO_VAL.into(), pseudo.clone());
    columns.insert(MEASURE_DISTANCE.into(), dist.clone());
    let angle_score: Vec<f64> = angle_vals
        .iter()
        .map(|v| oriented(MEASURE_ANGLE, *v))
        .collect();
    let pv_score: Vec<f64> = pseudo
        .iter()
        .map(|v| oriented(MEASURE_PSEUDO_VAL, *v))
        .collect();
    let dist_score: Vec<f64> = dist
        .iter()
        .map(|v| oriented(MEASURE_DISTANCE, *v))
        .collect();
    columns.insert(
        MEASURE_PSEUDO_VAL_PLUS_ANGLE.into(),
        aggregate_ranks(&ids, &pv_score, &angle_score, cfg.weight)?.combined,
    );
    columns.insert(
        MEASURE_DISTANCE_PLUS_ANGLE.into(),
        aggregate_ranks(&ids, &dist_score, &angle_score, cfg.weight)?.combined,
    );

    let mut rankings = BTreeMap::new();
    for (name, vals) in &columns {
        let scores: Vec<f64> = vals.iter().map(|v| oriented(name, *v)).collect();
        let agg = aggregate_ranks(&ids, &scores, &scores, 0.0)?;
        rankings.insert(
            name.clone(),
            agg.order.iter().map(|&i| ids[i].clone()).collect(),
        );
    }

    let bins = cfg.bins.unwrap_or_else(|| default_mi_bins(cands.len()));
    let mut mi_scores = BTreeMap::new();
    if let Some(gaps) = cands
        .iter()
        .map(|c| c.observed_gap)
        .collect::<Option<Vec<f64>>>()
    {
        for (name, vals) in &columns {
            mi_scores.insert(name.clone(), mi_score(vals, &gaps, bins)?);
        }
    }

    let rows: Vec<GapRow> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| GapRow {
            model_id: c.model_id.clone(),
            measures: columns.iter().map(|(k, v)| (k.clone(), v[i])).collect(),
            observed_gap: c.observed_gap,
            degenerate: angles[i].degenerate,
        })
        .collect();
    Ok(GapPredictionReport {
        degenerate_count: rows.iter().filter(|r| r.degenerate).count(),
        rows,
        rankings,
        mi_scores,
        aggregation_weight: cfg.weight,
        bins,
    })
}
