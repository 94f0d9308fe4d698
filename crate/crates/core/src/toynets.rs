//! Desk-scale datasets and fully-connected networks.
//!
//! Four model kinds share one dense-layer engine: a supervised classifier,
//! an autoencoder with a mirrored decoder, a denoising autoencoder and a
//! contrastive encoder with a two-layer projection head. Training is plain
//! mini-batch SGD with momentum and weight decay; gradients are hand-derived
//! and checked against finite differences in the test suite.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{validate, Error, FormatError, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{RngState, SeededRng};
use crate::store::{self, CheckpointEntry, RunManifest, RunStatus};
use crate::subspace::{FeatureMatrix, Provenance, Split};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub x: DenseMatrix,
    pub labels: Option<Vec<usize>>,
    pub num_classes: Option<usize>,
    pub dataset_id: String,
    pub split: Split,
    pub augmentation_of: Option<String>,
}

impl ToyDataset {
    /// Builds a dataset and derives its content hash.
    pub fn new(x: DenseMatrix, labels: Option<Vec<usize>>, split: Split) -> Result<Self> {
        let num_classes = match &labels {
            Some(l) => {
                validate(l.len() == x.rows(), || {
                    format!("{} labels for {} samples", l.len(), x.rows())
                })?;
                let k = l.iter().max().map_or(0, |m| m + 1);
                validate(k >= 2, || "labelled data needs at least 2 classes".into())?;
                Some(k)
            }
            None => None,
        };
        let dataset_id = content_hash(&x, labels.as_deref());
        Ok(Self {
            x,
            labels,
            num_classes,
            dataset_id,
            split,
            augmentation_of: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// The raw `#samples × #dimensions` matrix, tagged `split=raw`.
    pub fn raw_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(
            self.x.clone(),
            Provenance::new(self.dataset_id.clone(), Split::Raw),
        )
    }

    /// Copy with the rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut values = Vec::with_capacity(order.len() * d);
        for &i in order {
            values.extend_from_slice(self.x.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&i| l[i]).collect());
        let mut out = ToyDataset::new(
            DenseMatrix::new(order.len(), d, values)?,
            labels,
            self.split,
        )?;
        out.num_classes = self.num_classes;
        Ok(out)
    }
}

fn content_hash(x: &DenseMatrix, labels: Option<&[usize]>) -> String {
    let mut h = Sha256::new();
    h.update((x.rows() as u64).to_le_bytes());
    h.update((x.cols() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_le_bytes());
    }
    if let Some(l) = labels {
        for &c in l {
            h.update((c as u64).to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

/// Mixture of `K` isotropic unit-variance Gaussians whose means lie on a
/// sphere of radius `spread`.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    pub means: DenseMatrix,
    pub spread: f64,
    seed: u64,
}

impl GaussianMixture {
    pub fn new(seed: u64, d: usize, k: usize, spread: f64) -> Result<Self> {
        validate(k >= 2, || format!("need at least 2 classes, got {k}"))?;
        validate(d >= 2, || format!("need at least 2 dimensions, got {d}"))?;
        validate(spread > 0.0, || "spread must be positive".into())?;
        let mut rng = SeededRng::new(seed).split(0);
        let mut means = DenseMatrix::gaussian(k, d, &mut rng);
        for c in 0..k {
            let row = means.row_mut(c);
            let n = crate::linalg::norm(row);
            row.iter_mut().for_each(|v| *v *= spread / n);
        }
        Ok(Self {
            means,
            spread,
            seed,
        })
    }

    pub fn classes(&self) -> usize {
        self.means.rows()
    }

    /// Balanced sample: sample `i` belongs to class `i mod K`.
    pub fn sample(&self, n: usize, split: Split) -> Result<ToyDataset> {
        let k = self.classes();
        validate(n >= k, || format!("n={n} smaller than K={k}"))?;
        let stream = match split {
            Split::Train => 1,
            Split::Test => 2,
            Split::Raw => 3,
        };
        let mut rng = SeededRng::new(self.seed).split(stream);
        let d = self.means.cols();
        let mut values = vec![0.0; n * d];
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for (i, row) in values.chunks_exact_mut(d).enumerate() {
            for (v, m) in row.iter_mut().zip(self.means.row(labels[i])) {
                *v = m + rng.gaussian();
            }
        }
        let mut ds = ToyDataset::new(DenseMatrix::new(n, d, values)?, Some(labels), split)?;
        ds.num_classes = Some(k);
        Ok(ds)
    }
}

/// Balanced Gaussian-mixture training set.
pub fn gen_gaussian_mixture(
    seed: u64,
    n: usize,
    d: usize,
    k: usize,
    spread: f64,
) -> Result<ToyDataset> {
    GaussianMixture::new(seed, d, k, spread)?.sample(n, Split::Train)
}

/// Non-negative random features `max(0, Z W)` with a low-dimensional latent
/// `Z`; their spectrum has the steep leading "cliff" typical of trained
/// feature matrices.
pub fn relu_random_features(rows: usize, cols: usize, latent: usize, seed: u64) -> DenseMatrix {
    let mut rng = SeededRng::new(seed);
    let z = DenseMatrix::gaussian(rows, latent, &mut rng);
    let w = DenseMatrix::gaussian(latent, cols, &mut rng).scaled(1.0 / (latent as f64).sqrt());
    let mut a = z.matmul(&w).expect("shapes agree");
    for r in 0..rows {
        a.row_mut(r).iter_mut().for_each(|v| *v = v.max(0.0));
    }
    a
}

/// Reads an FMAT raw matrix plus an optional labels file (one class id per
/// line).
pub fn load_raw_matrix(path: &Path, labels_path: Option<&Path>) -> Result<ToyDataset> {
    let fm = store::read_fmat(path)?;
    let labels = match labels_path {
        Some(p) => Some(read_labels(p)?),
        None => None,
    };
    let split = match fm.source.split {
        Split::Test => Split::Test,
        _ => Split::Train,
    };
    ToyDataset::new(fm.data, labels, split)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                kind: FormatError::Labels(format!("line {}: {:?} is not a class id", i + 1, l)),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    store::write_atomic(path, text.as_bytes())
}

/// Per-sample perturbation used for pseudo-validation sets and contrastive
/// views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub noise_sigma: f64,
    pub mask_prob: f64,
    pub scale_jitter: f64,
}

impl AugmentPolicy {
    pub const IDENTITY: AugmentPolicy = AugmentPolicy {
        noise_sigma: 0.0,
        mask_prob: 0.0,
        scale_jitter: 0.0,
    };

    fn validate(&self) -> Result<()> {
        validate(self.noise_sigma >= 0.0, || {
            "noise_sigma must be >= 0".into()
        })?;
        validate((0.0..=1.0).contains(&self.mask_prob), || {
            "mask_prob must lie in [0, 1]".into()
        })?;
        validate((0.0..=1.0).contains(&self.scale_jitter), || {
            "scale_jitter must lie in [0, 1]".into()
        })
    }

    fn apply_row(&self, src: &[f64], dst: &mut [f64], rng: &mut SeededRng) {
        let scale = rng.uniform_range(1.0 - self.scale_jitter, 1.0 + self.scale_jitter);
        for (o, &x) in dst.iter_mut().zip(src) {
            let noisy = x + self.noise_sigma * rng.gaussian();
            let kept = if rng.bernoulli(self.mask_prob) {
                0.0
            } else {
                noisy
            };
            *o = scale * kept;
        }
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            noise_sigma: 0.5,
            mask_prob: 0.1,
            scale_jitter: 0.2,
        }
    }
}

/// Augmented copy of `ds`: additive noise, then coordinate masking, then a
/// per-sample scale drawn from `[1 − jitter, 1 + jitter]`.
pub fn augment(ds: &ToyDataset, policy: &AugmentPolicy, seed: u64) -> Result<ToyDataset> {
    policy.validate()?;
    let mut rng = SeededRng::new(seed);
    let d = ds.dim();
    let mut values = vec![0.0; ds.len() * d];
    for (r, dst) in values.chunks_exact_mut(d).enumerate() {
        policy.apply_row(ds.x.row(r), dst, &mut rng);
    }
    let mut out = ToyDataset::new(
        DenseMatrix::new(ds.len(), d, values)?,
        ds.labels.clone(),
        ds.split,
    )?;
    out.num_classes = ds.num_classes;
    out.augmentation_of = Some(ds.dataset_id.clone());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MlpClassifier,
    Autoencoder,
    DenoiseAutoencoder,
    Contrastive,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "mlp_classifier" | "mlp" => Ok(Self::MlpClassifier),
            "autoencoder" | "ae" => Ok(Self::Autoencoder),
            "denoise_autoencoder" | "dae" => Ok(Self::DenoiseAutoencoder),
            "contrastive" => Ok(Self::Contrastive),
            other => Err(Error::Validation(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Linear hidden units.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Hidden widths of the encoder / classifier trunk.
    pub layer_widths: Vec<usize>,
    /// Classes for classifiers; ignored otherwise.
    pub num_classes: Option<usize>,
    pub activation: Activation,
    /// Hidden layer whose output is the designated feature representation.
    pub feature_layer: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
}

impl ModelSpec {
    /// Spec with the conventional feature layer for `kind`: the last trunk
    /// layer, i.e. the input of the classifier head, the autoencoder
    /// bottleneck, or the contrastive encoder output before the projection
    /// head.
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        layer_widths: Vec<usize>,
        num_classes: Option<usize>,
    ) -> Result<Self> {
        let feature_layer = layer_widths.len().saturating_sub(1);
        let spec = Self {
            kind,
            input_dim,
            layer_widths,
            num_classes,
            activation: Activation::Relu,
            feature_layer,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate(!self.layer_widths.is_empty(), || {
            "layer_widths is empty".into()
        })?;
        validate(self.layer_widths.iter().all(|&w| w >= 1), || {
            "layer widths must be >= 1".into()
        })?;
        validate(self.input_dim >= 1, || "input_dim must be >= 1".into())?;
        if self.kind == ModelKind::MlpClassifier {
            validate(self.num_classes.is_some_and(|k| k >= 2), || {
                "classifier needs num_classes >= 2".into()
            })?;
        }
        validate(self.feature_layer < self.hidden_layers(), || {
            format!(
                "feature_layer {} outside 0..{}",
                self.feature_layer,
                self.hidden_layers()
            )
        })
    }

    pub fn is_classifier(&self) -> bool {
        self.kind == ModelKind::MlpClassifier
    }

    /// Dense layers in forward order. Autoencoder decoders mirror the
    /// encoder widths exactly; the bottleneck is linear.
    pub fn layers(&self) -> Vec<LayerShape> {
        let act = self.activation == Activation::Relu;
        let w = &self.layer_widths;
        let last = *w.last().expect("validated non-empty");
        let mut layers = Vec::new();
        let mut prev = self.input_dim;
        let mut push = |out: usize, relu: bool, layers: &mut Vec<LayerShape>| {
            layers.push(LayerShape {
                inputs: prev,
                outputs: out,
                relu,
            });
            prev = out;
        };
        match self.kind {
            ModelKind::MlpClassifier => {
                for &h in w {
                    push(h, act, &mut layers);
                }
                push(self.num_classes.unwrap_or(2), false, &mut layers);
            }
            ModelKind::Autoencoder | ModelKind::DenoiseAutoencoder => {
                for (i, &h) in w.iter().enumerate() {
                    push(h, act && i + 1 < w.len(), &mut layers);
                }
                for &h in w.iter().rev().skip(1) {
                    push(h, act, &mut layers);
                }
                push(self.input_dim, false, &mut layers);
            }
            ModelKind::Contrastive => {
                for &h in w {
                    push(h, act, &mut layers);
                }
                push(last, act, &mut layers);
                push(last, false, &mut layers);
            }
        }
        layers
    }

    /// Number of layers whose outputs can be extracted (all but the output).
    pub fn hidden_layers(&self) -> usize {
        let l = self.layer_widths.len();
        match self.kind {
            ModelKind::MlpClassifier => l,
            ModelKind::Autoencoder | ModelKind::DenoiseAutoencoder => 2 * l - 1,
            ModelKind::Contrastive => l + 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.inputs * l.outputs + l.outputs)
            .sum()
    }

    /// Mirror of the encoder widths used by the decoder.
    pub fn decoder_widths(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Autoencoder | ModelKind::DenoiseAutoencoder => {
                let mut v: Vec<usize> = self.layer_widths.iter().rev().skip(1).copied().collect();
                v.push(self.input_dim);
                v
            }
            _ => Vec::new(),
        }
    }
}

/// One mini-batch in the shape each loss expects. Inputs are row-major
/// `batch × input_dim`.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Classify {
        x: &'a [f64],
        labels: &'a [usize],
    },
    Reconstruct {
        input: &'a [f64],
        target: &'a [f64],
    },
    Contrast {
        view_a: &'a [f64],
        view_b: &'a [f64],
        temperature: f64,
    },
}

/// Forward/backward engine for a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    layers: Vec<LayerShape>,
    offsets: Vec<usize>,
    n_params: usize,
}

impl Network {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for l in &layers {
            offsets.push(off);
            off += l.inputs * l.outputs + l.outputs;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            offsets,
            n_params: off,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.layers
    }

    /// Offset of layer `l`'s weight block (`outputs × inputs`, row-major);
    /// its bias follows immediately.
    pub fn weight_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// He-scaled Gaussian weights, zero biases.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for (l, shape) in self.layers.iter().enumerate() {
            let std = (2.0 / shape.inputs as f64).sqrt();
            let off = self.offsets[l];
            rng.fill_gaussian(&mut p[off..off + shape.inputs * shape.outputs], std);
        }
        p
    }

    /// `true` for weight entries, `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params];
        for (l, shape) in self.layers.iter().enumerate() {
            let off = self.offsets[l];
            mask[off..off + shape.inputs * shape.outputs].fill(true);
        }
        mask
    }

    fn weights<'p>(&self, params: &'p [f64], l: usize) -> (&'p [f64], &'p [f64]) {
        let s = self.layers[l];
        let off = self.offsets[l];
        let w_end = off + s.inputs * s.outputs;
        (&params[off..w_end], &params[w_end..w_end + s.outputs])
    }

    /// Post-activation outputs of every layer, input excluded.
    fn forward_all(&self, params: &[f64], x: &[f64], upto: usize) -> Vec<Vec<f64>> {
        let batch = x.len() / self.spec.input_dim;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(upto + 1);
        for l in 0..=upto {
            let s = self.layers[l];
            let (w, b) = self.weights(params, l);
            let input = if l == 0 { x } else { &acts[l - 1] };
            let mut out = vec![0.0; batch * s.outputs];
            for r in 0..batch {
                let xr = &input[r * s.inputs..(r + 1) * s.inputs];
                let yr = &mut out[r * s.outputs..(r + 1) * s.outputs];
                for (o, y) in yr.iter_mut().enumerate() {
                    let z = b[o] + crate::linalg::dot(xr, &w[o * s.inputs..(o + 1) * s.inputs]);
                    *y = if s.relu { z.max(0.0) } else { z };
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Output of layer `layer` for a row-major batch.
    pub fn forward_to(&self, params: &[f64], x: &[f64], layer: usize) -> Vec<f64> {
        self.forward_all(params, x, layer)
            .pop()
            .expect("at least one layer")
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_to(params, x, self.layers.len() - 1)
    }

    /// Backpropagates `d_out` (gradient w.r.t. the final layer output).
    fn backward(&self, params: &[f64], x: &[f64], acts: &[Vec<f64>], d_out: Vec<f64>) -> Vec<f64> {
        let batch = x.len() / self.spec.input_dim;
        let mut grad = vec![0.0; self.n_params];
        let mut delta = d_out;
        for l in (0..self.layers.len()).rev() {
            let s = self.layers[l];
            if s.relu {
                for (d, a) in delta.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = if l == 0 { x } else { &acts[l - 1] };
            let (w, _) = self.weights(params, l);
            let off = self.offsets[l];
            let w_len = s.inputs * s.outputs;
            let (gw, gb) = grad[off..off + w_len + s.outputs].split_at_mut(w_len);
            let mut d_in = if l > 0 {
                vec![0.0; batch * s.inputs]
            } else {
                Vec::new()
            };
            for r in 0..batch {
                let xr = &input[r * s.inputs..(r + 1) * s.inputs];
                let dr = &delta[r * s.outputs..(r + 1) * s.outputs];
                for (o, &g) in dr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for (gwi, xi) in gw[o * s.inputs..(o + 1) * s.inputs].iter_mut().zip(xr) {
                        *gwi += g * xi;
                    }
                    if l > 0 {
                        let di = &mut d_in[r * s.inputs..(r + 1) * s.inputs];
                        for (dii, wi) in di.iter_mut().zip(&w[o * s.inputs..(o + 1) * s.inputs]) {
                            *dii += g * wi;
                        }
                    }
                }
            }
            delta = d_in;
        }
        grad
    }

    /// Mean loss over the batch and its gradient w.r.t. all parameters.
    pub fn loss_and_grad(&self, params: &[f64], batch: &Batch<'_>) -> (f64, Vec<f64>) {
        let last = self.layers.len() - 1;
        match *batch {
            Batch::Classify { x, labels } => {
                let acts = self.forward_all(params, x, last);
                let (loss, d) = cross_entropy(&acts[last], labels, self.layers[last].outputs);
                (loss, self.backward(params, x, &acts, d))
            }
            Batch::Reconstruct { input, target } => {
                let acts = self.forward_all(params, input, last);
                let (loss, d) = mean_squared_error(&acts[last], target);
                (loss, self.backward(params, input, &acts, d))
            }
            Batch::Contrast {
                view_a,
                view_b,
                temperature,
            } => {
                let mut both = Vec::with_capacity(view_a.len() + view_b.len());
                both.extend_from_slice(view_a);
                both.extend_from_slice(view_b);
                let acts = self.forward_all(params, &both, last);
                let (loss, d) = nt_xent(&acts[last], self.layers[last].outputs, temperature);
                (loss, self.backward(params, &both, &acts, d))
            }
        }
    }

    /// Class scores for every row of `x`.
    pub fn predict(&self, params: &[f64], x: &DenseMatrix) -> Vec<usize> {
        let k = self.layers.last().expect("non-empty").outputs;
        let logits = self.forward(params, x.as_slice());
        logits.chunks_exact(k).map(argmax_lowest).collect()
    }
}

/// Analytic gradient compared against central finite differences of the
/// loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub params: usize,
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)`.
    pub relative_error: f64,
    /// Largest coordinate-wise `|a − n| / max(|a|, |n|, 1e-8)`.
    pub max_coordinate_error: f64,
}

/// Central-difference check of [`Network::loss_and_grad`] with step `eps`.
pub fn gradient_check(net: &Network, params: &[f64], batch: &Batch<'_>, eps: f64) -> GradientCheck {
    let (_, analytic) = net.loss_and_grad(params, batch);
    let mut p = params.to_vec();
    let mut numeric = vec![0.0; p.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = net.loss_and_grad(&p, batch).0;
        p[i] = orig - eps;
        let down = net.loss_and_grad(&p, batch).0;
        p[i] = orig;
        numeric[i] = (up - down) / (2.0 * eps);
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = crate::linalg::norm(&analytic).max(crate::linalg::norm(&numeric));
    let max_coordinate_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max);
    GradientCheck {
        params: p.len(),
        relative_error: if scale == 0.0 { 0.0 } else { diff / scale },
        max_coordinate_error,
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy averaged over the batch.
fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut d = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let z = &logits[r * k..(r + 1) * k];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - z[y];
        for (c, dv) in d[r * k..(r + 1) * k].iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            *dv = (p - if c == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, d)
}

/// Mean over all entries of the squared reconstruction error.
fn mean_squared_error(out: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = out.len() as f64;
    let mut loss = 0.0;
    let d = out
        .iter()
        .zip(target)
        .map(|(o, t)| {
            let e = o - t;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    (loss / n, d)
}

/// Normalized-temperature cross-entropy over `2B` embeddings where rows `i`
/// and `i + B` are the two views of one sample.
fn nt_xent(z: &[f64], dim: usize, temperature: f64) -> (f64, Vec<f64>) {
    let n = z.len() / dim;
    let half = n / 2;
    let norms: Vec<f64> = z
        .chunks_exact(dim)
        .map(|r| crate::linalg::norm(r).max(1e-12))
        .collect();
    let zh: Vec<f64> = z
        .chunks_exact(dim)
        .zip(&norms)
        .flat_map(|(r, nr)| r.iter().map(move |v| v / nr))
        .collect();
    let row = |i: usize| &zh[i * dim..(i + 1) * dim];
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = crate::linalg::dot(row(i), row(j)) / temperature;
        }
    }
    // g[i][k] = dL/dsim[i][k] from row i's term
    let mut g = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let pos = if i < half { i + half } else { i - half };
        let s = &sim[i * n..(i + 1) * n];
        let m = s
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = s
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, v)| (v - m).exp())
            .sum();
        let lse = m + sum.ln();
        loss += lse - s[pos];
        for k in 0..n {
            if k == i {
                continue;
            }
            let p = (s[k] - lse).exp();
            g[i * n + k] = (p - if k == pos { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let mut dz = vec![0.0; z.len()];
    for i in 0..n {
        let mut dzh = vec![0.0; dim];
        for k in 0..n {
            let coeff = (g[i * n + k] + g[k * n + i]) / temperature;
            if coeff != 0.0 {
                for (d, v) in dzh.iter_mut().zip(row(k)) {
                    *d += coeff * v;
                }
            }
        }
        let zi = row(i);
        let proj = crate::linalg::dot(zi, &dzh);
        for ((o, d), v) in dz[i * dim..(i + 1) * dim].iter_mut().zip(&dzh).zip(zi) {
            *o = (d - v * proj) / norms[i];
        }
    }
    (loss / n as f64, dz)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub per_epoch: bool,
    pub per_iteration_in_epoch0: bool,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        Self {
            per_epoch: true,
            per_iteration_in_epoch0: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub denoise_sigma: f64,
    pub contrastive_temperature: f64,
    pub contrastive_views: AugmentPolicy,
    pub checkpoint_policy: CheckpointPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 1,
            denoise_sigma: 0.5,
            contrastive_temperature: 0.5,
            contrastive_views: AugmentPolicy::default(),
            checkpoint_policy: CheckpointPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self.epochs >= 1, || "epochs must be >= 1".into())?;
        validate(self.batch_size >= 1, || "batch_size must be >= 1".into())?;
        validate(self.learning_rate >= 0.0, || {
            "learning_rate must be >= 0".into()
        })?;
        validate(self.contrastive_temperature > 0.0, || {
            "temperature must be > 0".into()
        })?;
        validate(self.denoise_sigma >= 0.0, || {
            "denoise_sigma must be >= 0".into()
        })?;
        self.contrastive_views.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub dataset_id: String,
    pub spec: ModelSpec,
    pub epoch: u32,
    /// Step index within epoch 0 (parameters after that many updates);
    /// `None` for end-of-epoch snapshots.
    pub iteration: Option<u32>,
    pub parameters: Vec<f64>,
    /// Data-order and augmentation generators at snapshot time.
    pub rng_state: Vec<RngState>,
    pub well_trained: bool,
}

impl Checkpoint {
    pub fn is_initial(&self) -> bool {
        self.epoch == 0 && self.iteration == Some(0)
    }

    pub fn label(&self) -> String {
        match self.iteration {
            Some(i) => format!("{}@e{}i{}", self.run_id, self.epoch, i),
            None => format!("{}@e{}", self.run_id, self.epoch),
        }
    }
}

/// A trained run held in memory: its manifest and every checkpoint, in
/// `(epoch, iteration)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub manifest: RunManifest,
    pub checkpoints: Vec<Checkpoint>,
    /// Checkpoints listed in the manifest whose files could not be found.
    pub missing: Vec<(u32, Option<u32>)>,
}

impl Run {
    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn initial(&self) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.is_initial())
    }

    /// The well-trained checkpoint (last completed epoch).
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.iter().rev().find(|c| c.well_trained)
    }

    pub fn epoch_checkpoints(&self) -> impl Iterator<Item = &Checkpoint> {
        self.checkpoints.iter().filter(|c| c.iteration.is_none())
    }
}

/// `hash(spec, config, dataset_id)`.
pub fn run_id(spec: &ModelSpec, cfg: &TrainConfig, dataset_id: &str) -> String {
    let payload = serde_json::to_vec(&(spec, cfg, dataset_id)).expect("serializable");
    hex::encode(&Sha256::digest(&payload)[..8])
}

/// Mini-batch SGD with momentum and decoupled-from-bias weight decay.
///
/// Checkpoints: the initial parameters `(0, 0)`, the parameters after every
/// step of the first epoch `(0, i)`, and the end of every epoch `(e, None)`
/// for `e = 1..=epochs`. A non-finite loss stops training; the run is
/// returned with [`RunStatus::Diverged`] and the checkpoints taken so far.
pub fn train(ds: &ToyDataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<Run> {
    cfg.validate()?;
    let net = Network::new(spec)?;
    validate(spec.input_dim == ds.dim(), || {
        format!(
            "model expects {} inputs, dataset has {}",
            spec.input_dim,
            ds.dim()
        )
    })?;
    let labels = if spec.is_classifier() {
        let labels = ds
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("classifier training needs labels".into()))?;
        let k = spec.num_classes.unwrap_or(0);
        validate(labels.iter().all(|&l| l < k), || {
            format!("labels exceed the model's {k} classes")
        })?;
        Some(labels.as_slice())
    } else {
        None
    };

    let id = run_id(spec, cfg, &ds.dataset_id);
    let root = SeededRng::new(cfg.seed);
    let mut init_rng = root.split(1);
    let mut order_rng = root.split(2);
    let mut aug_rng = root.split(3);

    let mut params = net.init_params(&mut init_rng);
    let mask = net.weight_mask();
    let mut velocity = vec![0.0; params.len()];
    let n = ds.len();
    let d = ds.dim();
    let steps = n.div_ceil(cfg.batch_size);

    let mut checkpoints = Vec::new();
    let snapshot =
        |params: &[f64], epoch: u32, iteration: Option<u32>, o: &SeededRng, a: &SeededRng| {
            Checkpoint {
                run_id: id.clone(),
                dataset_id: ds.dataset_id.clone(),
                spec: spec.clone(),
                epoch,
                iteration,
                parameters: params.to_vec(),
                rng_state: vec![o.state(), a.state()],
                well_trained: false,
            }
        };
    checkpoints.push(snapshot(&params, 0, Some(0), &order_rng, &aug_rng));

    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut accuracy_history = Vec::new();
    let mut status = RunStatus::Completed;
    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * d);
    let mut xb2 = Vec::with_capacity(cfg.batch_size * d);
    let mut lb = Vec::with_capacity(cfg.batch_size);

    'epochs: for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for step in 0..steps {
            let idx = &order[step * cfg.batch_size..((step + 1) * cfg.batch_size).min(n)];
            xb.clear();
            lb.clear();
            for &i in idx {
                xb.extend_from_slice(ds.x.row(i));
                if let Some(l) = labels {
                    lb.push(l[i]);
                }
            }
            let (loss, mut grad) = match spec.kind {
                ModelKind::MlpClassifier => net.loss_and_grad(
                    &params,
                    &Batch::Classify {
                        x: &xb,
                        labels: &lb,
                    },
                ),
                ModelKind::Autoencoder => net.loss_and_grad(
                    &params,
                    &Batch::Reconstruct {
                        input: &xb,
                        target: &xb,
                    },
                ),
                ModelKind::DenoiseAutoencoder => {
                    xb2.clear();
                    xb2.extend(
                        xb.iter()
                            .map(|v| v + cfg.denoise_sigma * aug_rng.gaussian()),
                    );
                    net.loss_and_grad(
                        &params,
                        &Batch::Reconstruct {
                            input: &xb2,
                            target: &xb,
                        },
                    )
                }
                ModelKind::Contrastive => {
                    let mut va = vec![0.0; xb.len()];
                    let mut vb = vec![0.0; xb.len()];
                    for ((src, a), b) in xb
                        .chunks_exact(d)
                        .zip(va.chunks_exact_mut(d))
                        .zip(vb.chunks_exact_mut(d))
                    {
                        cfg.contrastive_views.apply_row(src, a, &mut aug_rng);
                        cfg.contrastive_views.apply_row(src, b, &mut aug_rng);
                    }
                    net.loss_and_grad(
                        &params,
                        &Batch::Contrast {
                            view_a: &va,
                            view_b: &vb,
                            temperature: cfg.contrastive_temperature,
                        },
                    )
                }
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                status = RunStatus::Diverged {
                    epoch: epoch as u32,
                    iteration: step as u32,
                };
                break 'epochs;
            }
            epoch_loss += loss * idx.len() as f64;
            for ((g, &is_w), p) in grad.iter_mut().zip(&mask).zip(&params) {
                if is_w {
                    *g += cfg.weight_decay * p;
                }
            }
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            if epoch == 0 && step + 1 < steps && cfg.checkpoint_policy.per_iteration_in_epoch0 {
                checkpoints.push(snapshot(
                    &params,
                    0,
                    Some(step as u32 + 1),
                    &order_rng,
                    &aug_rng,
                ));
            }
        }
        loss_history.push(epoch_loss / n as f64);
        if spec.is_classifier() {
            let pred = net.predict(&params, &ds.x);
            let l = labels.expect("classifier has labels");
            accuracy_history.push(accuracy_of(&pred, l));
        }
        if cfg.checkpoint_policy.per_epoch || epoch + 1 == cfg.epochs {
            checkpoints.push(snapshot(
                &params,
                epoch as u32 + 1,
                None,
                &order_rng,
                &aug_rng,
            ));
        }
    }

    if status == RunStatus::Completed {
        if let Some(last) = checkpoints.last_mut() {
            last.well_trained = true;
        }
    }
    let entries = checkpoints
        .iter()
        .map(CheckpointEntry::for_checkpoint)
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        run_id: id,
        dataset_id: ds.dataset_id.clone(),
        spec: spec.clone(),
        config: cfg.clone(),
        checkpoints: entries,
        loss_history,
        accuracy_history,
        status,
    };
    Ok(Run {
        manifest,
        checkpoints,
        missing: Vec::new(),
    })
}

fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

fn check_compatible(ckpt: &Checkpoint, ds: &ToyDataset) -> Result<Network> {
    let net = Network::new(&ckpt.spec)?;
    validate(net.param_count() == ckpt.parameters.len(), || {
        format!(
            "checkpoint has {} parameters, spec needs {}",
            ckpt.parameters.len(),
            net.param_count()
        )
    })?;
    validate(ckpt.spec.input_dim == ds.dim(), || {
        format!(
            "checkpoint expects {} inputs, dataset has {}",
            ckpt.spec.input_dim,
            ds.dim()
        )
    })?;
    Ok(net)
}

/// Evaluation-mode features of every sample, in dataset order.
pub fn extract_features(
    ckpt: &Checkpoint,
    ds: &ToyDataset,
    layer: Option<usize>,
) -> Result<FeatureMatrix> {
    let net = check_compatible(ckpt, ds)?;
    let layer = layer.unwrap_or(ckpt.spec.feature_layer);
    let hidden = ckpt.spec.hidden_layers();
    validate(layer < hidden, || {
        format!("layer {layer} outside 0..{hidden}")
    })?;
    let width = net.layer_shapes()[layer].outputs;
    const BLOCK: usize = 512;
    let mut values = Vec::with_capacity(ds.len() * width);
    let d = ds.dim();
    for start in (0..ds.len()).step_by(BLOCK) {
        let end = (start + BLOCK).min(ds.len());
        let x = &ds.x.as_slice()[start * d..end * d];
        values.extend(net.forward_to(&ckpt.parameters, x, layer));
    }
    let data = DenseMatrix::new(ds.len(), width, values)
        .map_err(|e| Error::Numerical(format!("features of {}: {e}", ckpt.label())))?;
    let source = Provenance {
        run_id: Some(ckpt.run_id.clone()),
        epoch: Some(ckpt.epoch),
        iteration: ckpt.iteration,
        layer: Some(layer.to_string()),
        ..Provenance::new(ds.dataset_id.clone(), ds.split)
    };
    FeatureMatrix::new(data, source)
}

/// Argmax accuracy of a classifier checkpoint (ties go to the lowest class).
pub fn evaluate_accuracy(ckpt: &Checkpoint, ds: &ToyDataset) -> Result<f64> {
    validate(ckpt.spec.is_classifier(), || {
        format!("{:?} checkpoint has no class scores", ckpt.spec.kind)
    })?;
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("accuracy needs a labelled dataset".into()))?;
    let net = check_compatible(ckpt, ds)?;
    Ok(accuracy_of(&net.predict(&ckpt.parameters, &ds.x), labels))
}
