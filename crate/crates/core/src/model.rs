//! Feed-forward classifiers over a flat parameter vector, with hand-written
//! backpropagation, isotropic Gaussian parameter distributions and
//! evaluation metrics.
//!
//! Parameter layout: for each layer in order, the `out × in` weight matrix
//! (row-major) followed by the `out` biases.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SubgroupPartition};
use crate::risk::{constrained_weights, RiskError, RiskSpec, SubgroupLosses, DEFAULT_TOL};

/// Default clamp of the bounded cross-entropy.
pub const DEFAULT_L_MAX: f64 = 4.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    BadArch(String),
    #[error("variance must be positive, got {0}")]
    BadVariance(f64),
    #[error("weights must be non-negative")]
    NegativeWeight,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

fn mismatch(what: &'static str, expected: usize, got: usize) -> ModelError {
    ModelError::DimensionMismatch {
        what,
        expected,
        got,
    }
}

/// Layer widths from input to output, and the leaky-ReLU negative slope
/// applied after every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub layer_sizes: Vec<usize>,
    #[serde(default = "MlpArch::default_slope")]
    pub leaky_slope: f64,
}

impl MlpArch {
    fn default_slope() -> f64 {
        0.01
    }

    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, ModelError> {
        let arch = Self {
            layer_sizes,
            leaky_slope: Self::default_slope(),
        };
        arch.validate()?;
        Ok(arch)
    }

    /// `input → hidden… → classes`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self, ModelError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_sizes.len() < 2 {
            return Err(ModelError::BadArch("need input and output sizes".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(ModelError::BadArch("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(fan_in, fan_out, weight offset, bias offset)` per layer.
    fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let layer = (i, o, offset, offset + i * o);
                offset += i * o + o;
                layer
            })
            .collect()
    }
}

/// Flat vector of all weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sq_dist(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// `N(mean, sigma2 · I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParamDist {
    pub mean: ParamVector,
    pub sigma2: f64,
}

impl GaussianParamDist {
    pub fn new(mean: ParamVector, sigma2: f64) -> Result<Self, ModelError> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ModelError::BadVariance(sigma2));
        }
        Ok(Self { mean, sigma2 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Xavier-uniform weights, zero biases.
pub fn xavier_init(arch: &MlpArch, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; arch.n_params()];
    for (fan_in, fan_out, w_off, _) in arch.layers() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut theta[w_off..w_off + fan_in * fan_out] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    ParamVector(theta)
}

/// Draws `θ̃ = θ + σ ε` with `ε ~ N(0, I)`; `ε` is returned for
/// reparameterized gradients.
pub fn sample_params(dist: &GaussianParamDist, seed: u64) -> (ParamVector, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = dist.sigma2.sqrt();
    let noise: Vec<f64> = (0..dist.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let theta = dist
        .mean
        .as_slice()
        .iter()
        .zip(&noise)
        .map(|(m, e)| m + sigma * e)
        .collect();
    (ParamVector(theta), noise)
}

/// `(‖θ̃ − θ_P‖² − ‖θ̃ − θ‖²) / (2σ²)`, the log density ratio of
/// `N(θ, σ²I)` to `N(θ_P, σ²I)` at `θ̃`. Not clamped.
pub fn disintegrated_kl(
    theta_tilde: &ParamVector,
    theta: &ParamVector,
    theta_prior: &ParamVector,
    sigma2: f64,
) -> Result<f64, ModelError> {
    if !(sigma2 > 0.0) {
        return Err(ModelError::BadVariance(sigma2));
    }
    let d = theta_tilde.len();
    if theta.len() != d {
        return Err(mismatch("posterior mean", d, theta.len()));
    }
    if theta_prior.len() != d {
        return Err(mismatch("prior mean", d, theta_prior.len()));
    }
    Ok((theta_tilde.sq_dist(theta_prior) - theta_tilde.sq_dist(theta)) / (2.0 * sigma2))
}

/// `KL(N(θ, σ²I) ‖ N(θ_P, σ²I)) = ‖θ − θ_P‖² / (2σ²)`.
pub fn gaussian_kl(theta: &ParamVector, theta_prior: &ParamVector, sigma2: f64) -> Result<f64, ModelError> {
    if !(sigma2 > 0.0) {
        return Err(ModelError::BadVariance(sigma2));
    }
    if theta.len() != theta_prior.len() {
        return Err(mismatch("prior mean", theta.len(), theta_prior.len()));
    }
    Ok(theta.sq_dist(theta_prior) / (2.0 * sigma2))
}

fn check_params(arch: &MlpArch, params: &ParamVector) -> Result<(), ModelError> {
    if params.len() != arch.n_params() {
        return Err(mismatch("parameters", arch.n_params(), params.len()));
    }
    Ok(())
}

/// Activations kept for the backward pass: the input and every layer's
/// pre-activation; the last entry holds the softmax output.
struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn run(arch: &MlpArch, theta: &[f64], x: &[f64]) -> Trace {
    let layers = arch.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = x.to_vec();
    for (k, &(fan_in, fan_out, w_off, b_off)) in layers.iter().enumerate() {
        let w = &theta[w_off..w_off + fan_in * fan_out];
        let b = &theta[b_off..b_off + fan_out];
        let z: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                b[o] + row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect();
        let next = if k + 1 < layers.len() {
            z.iter().map(|&v| leaky(v, arch.leaky_slope)).collect()
        } else {
            softmax(&z)
        };
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }
    Trace {
        inputs,
        pre,
        probs: h,
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Class probabilities for one input.
pub fn forward(arch: &MlpArch, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_params(arch, params)?;
    if x.len() != arch.input_dim() {
        return Err(mismatch("input", arch.input_dim(), x.len()));
    }
    Ok(run(arch, params.as_slice(), x).probs)
}

/// `min(-ln max(p_y, e^{-l_max}), l_max) / l_max`, in `[0, 1]`.
pub fn bounded_cross_entropy(probs: &[f64], y: usize, l_max: f64) -> f64 {
    let floor = (-l_max).exp();
    let nll = -probs[y].max(floor).ln();
    (nll.min(l_max) / l_max).clamp(0.0, 1.0)
}

/// Per-example bounded cross-entropy of the rows `indices`.
pub fn example_losses(
    arch: &MlpArch,
    params: &ParamVector,
    data: &Dataset,
    indices: &[usize],
    l_max: f64,
) -> Result<Vec<f64>, ModelError> {
    check_params(arch, params)?;
    if data.dim() != arch.input_dim() {
        return Err(mismatch("input", arch.input_dim(), data.dim()));
    }
    Ok(indices
        .iter()
        .map(|&i| {
            let p = run(arch, params.as_slice(), data.row(i)).probs;
            bounded_cross_entropy(&p, data.label(i), l_max)
        })
        .collect())
}

/// Gradient of `Σ_k w_k · ℓ(h(x_{i_k}), y_{i_k})` with respect to the
/// parameters, where `i_k = indices[k]`. The loss clamp contributes no
/// gradient where it is active.
pub fn backward(
    arch: &MlpArch,
    params: &ParamVector,
    data: &Dataset,
    indices: &[usize],
    weights: &[f64],
    l_max: f64,
) -> Result<ParamVector, ModelError> {
    check_params(arch, params)?;
    if data.dim() != arch.input_dim() {
        return Err(mismatch("input", arch.input_dim(), data.dim()));
    }
    if weights.len() != indices.len() {
        return Err(mismatch("weights", indices.len(), weights.len()));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(ModelError::NegativeWeight);
    }
    let theta = params.as_slice();
    let layers = arch.layers();
    let floor = (-l_max).exp();
    let mut grad = vec![0.0; theta.len()];
    for (&i, &w) in indices.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let y = data.label(i);
        let t = run(arch, theta, data.row(i));
        if t.probs[y] <= floor {
            continue;
        }
        // d(-ln p_y / l_max)/dz = (p - e_y) / l_max
        let mut delta: Vec<f64> = t.probs.iter().map(|p| w * p / l_max).collect();
        delta[y] -= w / l_max;
        for k in (0..layers.len()).rev() {
            let (fan_in, fan_out, w_off, b_off) = layers[k];
            let input = &t.inputs[k];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + o] += d;
                let g = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (gj, xj) in g.iter_mut().zip(input) {
                    *gj += d * xj;
                }
            }
            if k == 0 {
                break;
            }
            let wmat = &theta[w_off..w_off + fan_in * fan_out];
            let below = &t.pre[k - 1];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (nj, wj) in next.iter_mut().zip(&wmat[o * fan_in..(o + 1) * fan_in]) {
                    *nj += d * wj;
                }
            }
            for (nj, zj) in next.iter_mut().zip(below) {
                if *zj <= 0.0 {
                    *nj *= arch.leaky_slope;
                }
            }
            delta = next;
        }
    }
    Ok(ParamVector(grad))
}

/// Test-time summary of a deterministic classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Risk measure of the per-subgroup mean losses.
    pub risk: f64,
    pub subgroup_losses: Vec<f64>,
    /// Macro F1; for two classes, F1 of the minority class.
    pub f_score: f64,
    pub class_errors: Vec<f64>,
    pub error_rate: f64,
}

pub fn predict(arch: &MlpArch, params: &ParamVector, x: &[f64]) -> Result<usize, ModelError> {
    let p = forward(arch, params, x)?;
    Ok(argmax(&p))
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

pub fn evaluate(
    arch: &MlpArch,
    params: &ParamVector,
    data: &Dataset,
    partition: &SubgroupPartition,
    spec: &RiskSpec,
    l_max: f64,
) -> Result<Metrics, ModelError> {
    check_params(arch, params)?;
    if partition.m() != data.len() {
        return Err(mismatch("partition", data.len(), partition.m()));
    }
    if data.dim() != arch.input_dim() {
        return Err(mismatch("input", arch.input_dim(), data.dim()));
    }
    let k = arch.n_classes();
    let mut losses = Vec::with_capacity(data.len());
    let mut confusion = vec![vec![0usize; k]; k];
    for i in 0..data.len() {
        let p = run(arch, params.as_slice(), data.row(i)).probs;
        let y = data.label(i);
        losses.push(bounded_cross_entropy(&p, y, l_max));
        confusion[y][argmax(&p)] += 1;
    }
    let subgroup_losses = partition.subgroup_means(&losses);
    let sol = constrained_weights(
        &SubgroupLosses::new(subgroup_losses.clone())?,
        partition.pi(),
        spec,
        DEFAULT_TOL,
    )?;

    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let class_errors: Vec<f64> = (0..k)
        .map(|c| {
            if support[c] == 0 {
                0.0
            } else {
                1.0 - confusion[c][c] as f64 / support[c] as f64
            }
        })
        .collect();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let f1 = |c: usize| -> f64 {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let denom = predicted as f64 + support[c] as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    };
    let f_score = if k == 2 {
        // ties go to the higher class index
        let minority = if support[0] < support[1] { 0 } else { 1 };
        f1(minority)
    } else {
        (0..k).map(f1).sum::<f64>() / k as f64
    };
    Ok(Metrics {
        risk: sol.value,
        subgroup_losses,
        f_score,
        class_errors,
        error_rate: 1.0 - correct as f64 / data.len() as f64,
    })
}

/// Serialized model: the deployed parameters plus, when known, the
/// distributions needed to re-certify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: MlpArch,
    pub class_names: Vec<String>,
    pub params: ParamVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<GaussianParamDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianParamDist>,
    #[serde(default = "one")]
    pub n_priors: usize,
}

fn one() -> usize {
    1
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Self = serde_json::from_reader(f)?;
        ckpt.arch.validate()?;
        check_params(&ckpt.arch, &ckpt.params)?;
        for dist in ckpt.posterior.iter().chain(&ckpt.prior) {
            check_params(&ckpt.arch, &dist.mean)?;
        }
        Ok(ckpt)
    }

    /// Posterior and prior for certification. A checkpoint without stored
    /// distributions is treated as its own prior: both become `N(params, σ²I)`
    /// with `σ²` taken from whichever distribution is present, else `sigma2`.
    pub fn distributions(&self, sigma2: f64) -> Result<(GaussianParamDist, GaussianParamDist), ModelError> {
        let sigma2 = self
            .posterior
            .as_ref()
            .or(self.prior.as_ref())
            .map_or(sigma2, |d| d.sigma2);
        let point = GaussianParamDist::new(self.params.clone(), sigma2)?;
        let posterior = self.posterior.clone().unwrap_or_else(|| point.clone());
        let prior = self.prior.clone().unwrap_or(point);
        Ok((posterior, prior))
    }
}
