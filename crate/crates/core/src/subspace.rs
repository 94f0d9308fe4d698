//! P-vectors and per-matrix spectral statistics.
//!
//! A [`FeatureMatrix`] holds one row per sample. Its P-vector is the top left
//! singular vector, i.e. one coordinate per sample, so P-vectors computed on
//! the same ordered sample set can be compared by angle regardless of how
//! many features produced them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::linalg::{
    self, full_svd, randomized_svd, DenseMatrix, SvdMethod, SvdResult, DEFAULT_OVERSAMPLE,
    DEFAULT_POWER_ITERS,
};

/// Spectral gap `(σ₁ − σ₂)/σ₁` below which a P-vector is flagged degenerate.
pub const DEGENERATE_GAP: f64 = 1e-6;
/// Matrices whose smaller side exceeds this use the randomized path in
/// [`spectrum_summary`].
pub const EXACT_ROUTING_MAX_DIM: usize = 1024;
/// Seed used when a randomized path is taken without an explicit seed.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Raw,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Raw => "raw",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "raw" => Ok(Split::Raw),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a feature matrix came from. Unknown keys written by other tools
/// are preserved in `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default)]
    pub dataset_id: String,
    pub split: Split,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(dataset_id: impl Into<String>, split: Split) -> Self {
        Self {
            run_id: None,
            epoch: None,
            iteration: None,
            layer: None,
            dataset_id: dataset_id.into(),
            split,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: DenseMatrix,
    pub source: Provenance,
}

impl FeatureMatrix {
    pub fn new(data: DenseMatrix, source: Provenance) -> Result<Self> {
        validate(data.rows() >= 2, || {
            format!(
                "feature matrix needs at least 2 samples, got {}",
                data.rows()
            )
        })?;
        Ok(Self { data, source })
    }

    pub fn samples(&self) -> usize {
        self.data.rows()
    }

    pub fn features(&self) -> usize {
        self.data.cols()
    }

    /// Column-mean-centered copy. Not part of the standard P-vector
    /// pipeline, which works on the raw (uncentered) matrix.
    pub fn centered(&self) -> FeatureMatrix {
        let (n, d) = self.data.shape();
        let mut means = vec![0.0; d];
        for r in 0..n {
            for (m, v) in means.iter_mut().zip(self.data.row(r)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut data = self.data.clone();
        for r in 0..n {
            for (v, m) in data.row_mut(r).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        let mut source = self.source.clone();
        source
            .extra
            .insert("centered".into(), serde_json::Value::Bool(true));
        FeatureMatrix { data, source }
    }

    fn ensure_nonzero(&self) -> Result<()> {
        if self.data.as_slice().iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!(
                "all-zero {}x{} feature matrix has no principal direction",
                self.samples(),
                self.features()
            )));
        }
        Ok(())
    }

    fn rows_identical(&self) -> bool {
        let first = self.data.row(0);
        (1..self.samples()).all(|r| self.data.row(r) == first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PVectorKind {
    Model,
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PVector {
    pub values: Vec<f64>,
    pub kind: PVectorKind,
    pub source: Provenance,
    pub svd_method: SvdMethod,
    pub seed: Option<u64>,
    pub sigma1: f64,
    /// Leading singular value is (numerically) tied with the next one.
    pub degenerate: bool,
    /// Every sample has the same feature row; the vector is ≈ 1/√n.
    pub trivial: bool,
}

impl PVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn truncated_svd(
    f: &FeatureMatrix,
    k: usize,
    method: SvdMethod,
    seed: Option<u64>,
) -> Result<SvdResult> {
    let min_dim = f.samples().min(f.features());
    let oversample = DEFAULT_OVERSAMPLE.min(min_dim.saturating_sub(k));
    sketched_svd(f, k, method, seed, oversample, DEFAULT_POWER_ITERS)
}

fn sketched_svd(
    f: &FeatureMatrix,
    k: usize,
    method: SvdMethod,
    seed: Option<u64>,
    oversample: usize,
    power_iters: usize,
) -> Result<SvdResult> {
    let min_dim = f.samples().min(f.features());
    validate(k >= 1 && k <= min_dim, || {
        format!("k={k} outside 1..={min_dim}")
    })?;
    match method {
        SvdMethod::Exact => full_svd(&f.data, (k + 1).min(min_dim)),
        SvdMethod::Randomized => randomized_svd(
            &f.data,
            k,
            oversample,
            power_iters,
            seed.unwrap_or(DEFAULT_SEED),
        ),
    }
}

fn gap_degenerate(svd: &SvdResult, j: usize) -> bool {
    let s = svd.sigma[j];
    let next = svd.sigma.get(j + 1).copied().or(svd.next_sigma);
    svd.degenerate[j] || next.is_some_and(|n| s <= 0.0 || (s - n) / s < DEGENERATE_GAP)
}

/// Top left singular vector of `f.data` under the sign convention.
pub fn pvector(f: &FeatureMatrix, method: SvdMethod, seed: Option<u64>) -> Result<PVector> {
    f.ensure_nonzero()?;
    let svd = truncated_svd(f, 1, method, seed)?;
    Ok(pvector_from(f, svd, method))
}

/// [`pvector`] with explicit sketch parameters for the randomized method.
pub fn pvector_sketched(
    f: &FeatureMatrix,
    method: SvdMethod,
    seed: Option<u64>,
    oversample: usize,
    power_iters: usize,
) -> Result<PVector> {
    f.ensure_nonzero()?;
    let svd = sketched_svd(f, 1, method, seed, oversample, power_iters)?;
    Ok(pvector_from(f, svd, method))
}

fn pvector_from(f: &FeatureMatrix, svd: SvdResult, method: SvdMethod) -> PVector {
    PVector {
        degenerate: gap_degenerate(&svd, 0),
        values: svd.u.column(0),
        kind: if f.source.split == Split::Raw {
            PVectorKind::Data
        } else {
            PVectorKind::Model
        },
        source: f.source.clone(),
        svd_method: method,
        seed: svd.seed,
        sigma1: svd.sigma[0],
        trivial: f.rows_identical(),
    }
}

/// P-vector of a raw data matrix.
pub fn data_pvector(raw: &FeatureMatrix) -> Result<PVector> {
    validate(raw.source.split == Split::Raw, || {
        format!("data P-vector needs split=raw, got {}", raw.source.split)
    })?;
    pvector(raw, SvdMethod::Exact, None)
}

/// One left singular vector together with its degeneracy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularDirection {
    pub values: Vec<f64>,
    pub sigma: f64,
    pub degenerate: bool,
}

/// Leading `k` left singular vectors, in descending σ order.
pub fn topk_left_singular(
    f: &FeatureMatrix,
    k: usize,
    method: SvdMethod,
    seed: Option<u64>,
) -> Result<Vec<SingularDirection>> {
    f.ensure_nonzero()?;
    let svd = truncated_svd(f, k, method, seed)?;
    Ok((0..k)
        .map(|j| SingularDirection {
            values: svd.u.column(j),
            sigma: svd.sigma[j],
            degenerate: gap_degenerate(&svd, j),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle {
    /// `|u·v|` clamped to `[0, 1]`.
    pub cosine_abs: f64,
    /// Raw `u·v`, for diagnostics.
    pub cosine_signed: f64,
    pub degrees: f64,
}

/// Angle between two unit vectors, insensitive to their signs.
pub fn angle_between(u: &[f64], v: &[f64]) -> Result<Angle> {
    validate(u.len() == v.len(), || {
        format!(
            "vectors of length {} and {} come from different sample sets",
            u.len(),
            v.len()
        )
    })?;
    for (name, x) in [("first", u), ("second", v)] {
        let n = linalg::norm(x);
        validate((n - 1.0).abs() <= 1e-8, || {
            format!("{name} vector is not unit norm (|x| = {n})")
        })?;
    }
    let signed = linalg::dot(u, v);
    let cosine_abs = signed.abs().clamp(0.0, 1.0);
    Ok(Angle {
        cosine_abs,
        cosine_signed: signed,
        degrees: cosine_abs.acos().to_degrees(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    pub explained_variance_ratios: Vec<f64>,
    pub cumulative_ratios: Vec<f64>,
    pub total_sq_frobenius: f64,
    /// `E(k) = ‖X‖_F² − Σ_{j≤k} σ_j²` for `k = 1..=k_max`.
    pub reconstruction_errors: Vec<f64>,
    pub svd_method: SvdMethod,
}

/// Leading singular values, explained-variance ratios and the
/// reconstruction-error curve of `f`.
pub fn spectrum_summary(f: &FeatureMatrix, k_max: usize) -> Result<SpectrumSummary> {
    f.ensure_nonzero()?;
    let min_dim = f.samples().min(f.features());
    validate(k_max >= 1 && k_max <= min_dim, || {
        format!("k_max={k_max} outside 1..={min_dim}")
    })?;
    let (sigma, method) = if min_dim <= EXACT_ROUTING_MAX_DIM {
        (full_svd(&f.data, k_max)?.sigma, SvdMethod::Exact)
    } else {
        let oversample = DEFAULT_OVERSAMPLE.min(min_dim - k_max);
        let svd = randomized_svd(
            &f.data,
            k_max,
            oversample,
            DEFAULT_POWER_ITERS,
            DEFAULT_SEED,
        )?;
        (svd.sigma, SvdMethod::Randomized)
    };
    let total = f.data.frobenius_sq();
    let ratios: Vec<f64> = sigma.iter().map(|s| s * s / total).collect();
    let mut cumulative = Vec::with_capacity(k_max);
    let mut errors = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    for s in &sigma {
        acc += s * s;
        cumulative.push(acc / total);
        errors.push((total - acc).max(0.0));
    }
    Ok(SpectrumSummary {
        singular_values: sigma,
        explained_variance_ratios: ratios,
        cumulative_ratios: cumulative,
        total_sq_frobenius: total,
        reconstruction_errors: errors,
        svd_method: method,
    })
}

/// `‖X − U_k Σ_k V_kᵀ‖_F²`, computed from the explicit residual and checked
/// against the spectral-tail identity.
pub fn reconstruction_error(f: &FeatureMatrix, k: usize) -> Result<f64> {
    f.ensure_nonzero()?;
    let min_dim = f.samples().min(f.features());
    validate(k >= 1 && k <= min_dim, || {
        format!("k={k} outside 1..={min_dim}")
    })?;
    let svd = full_svd(&f.data, k)?;
    let direct = svd.reconstruct().sub(&f.data)?.frobenius_sq();
    let total = f.data.frobenius_sq();
    let identity = (total - svd.sigma.iter().map(|s| s * s).sum::<f64>()).max(0.0);
    if (direct - identity).abs() > 1e-8 * total {
        return Err(Error::Numerical(format!(
            "reconstruction error mismatch: residual {direct:e} vs spectral tail {identity:e}"
        )));
    }
    Ok(direct)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum KdeBandwidth {
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub smoothed_density: Option<Vec<f64>>,
    pub bandwidth: Option<f64>,
    /// The input was constant; a single zero-width bin holds every entry.
    pub degenerate: bool,
}

/// Equal-width histogram of the entries of `values`, optionally with a
/// Gaussian-kernel density evaluated at the bin centers.
pub fn value_histogram(
    values: &[f64],
    bins: usize,
    kde: Option<KdeBandwidth>,
) -> Result<Histogram> {
    validate(bins >= 2, || format!("need at least 2 bins, got {bins}"))?;
    validate(!values.is_empty(), || "empty vector".into())?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Histogram {
            bin_edges: vec![lo, hi],
            counts: vec![values.len()],
            smoothed_density: None,
            bandwidth: None,
            degenerate: true,
        });
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let (smoothed_density, bandwidth) = match kde {
        None => (None, None),
        Some(rule) => {
            let h = match rule {
                KdeBandwidth::Fixed(h) => {
                    validate(h > 0.0, || "bandwidth must be positive".into())?;
                    h
                }
                KdeBandwidth::Silverman => silverman_bandwidth(values),
            };
            let centers: Vec<f64> = bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            (Some(gaussian_kde(values, &centers, h)), Some(h))
        }
    };
    Ok(Histogram {
        bin_edges,
        counts,
        smoothed_density,
        bandwidth,
        degenerate: false,
    })
}

fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn gaussian_kde(values: &[f64], at: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    at.iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}
