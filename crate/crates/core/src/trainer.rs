//! Self-bounding posterior training, prior learning over a learning-rate
//! grid, reference-aware mini-batch sampling and Adam.
//!
//! Gradients use the reparameterization `θ̃ = θ + σε` with `ε` fixed for a
//! step: the risk term flows through `θ̃` (Danskin weights times
//! per-example loss gradients) and the divergence term contributes
//! `(θ̃ − θ_P)/σ²` for the disintegrated form, `(θ − θ_P)/σ²` for the
//! classical one.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundContext, BoundError, BoundKind, BoundReport};
use crate::data::{partition_per_example, DataError, Dataset, SubgroupPartition};
use crate::model::{
    backward, disintegrated_kl, example_losses, gaussian_kl, sample_params, xavier_init,
    GaussianParamDist, MlpArch, ModelError, ParamVector,
};
use crate::risk::{
    constrained_weights, RiskError, RiskKind, RiskSolution, RiskSpec, SubgroupLosses, DEFAULT_TOL,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch size {batch_size} cannot cover {subgroups} subgroups")]
    BatchTooSmall { batch_size: usize, subgroups: usize },
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Child seed `k` of `seed` (SplitMix64 finalizer over the pair).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        Self {
            m: vec![0.0; d],
            v: vec![0.0; d],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64], lr: f64, adam: &AdamParams) {
    assert_eq!(params.len(), grad.len(), "adam_step: gradient dimension");
    assert_eq!(state.m.len(), grad.len(), "adam_step: state dimension");
    state.t += 1;
    let c1 = 1.0 - adam.beta1.powi(state.t as i32);
    let c2 = 1.0 - adam.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
        *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + adam.eps);
    }
}

/// Draws batches over the examples of a partition: one example from every
/// subgroup, then slots filled by drawing a subgroup from `π` and an
/// example from it, never repeating an example inside a batch.
///
/// Within a subgroup examples come off a reshuffled queue, so each example
/// is equally likely and every one is reached within a pass over the
/// subgroup. An epoch ends once every example has been in some batch.
#[derive(Debug, Clone)]
pub struct MinibatchSampler {
    members: Vec<Vec<usize>>,
    pi: Vec<f64>,
    batch_size: usize,
    rng: ChaCha8Rng,
    queues: Vec<Vec<usize>>,
}

impl MinibatchSampler {
    pub fn new(partition: &SubgroupPartition, batch_size: usize, seed: u64) -> Result<Self, TrainError> {
        let n = partition.n();
        if batch_size < n {
            return Err(TrainError::BatchTooSmall {
                batch_size,
                subgroups: n,
            });
        }
        let members = partition.members();
        Ok(Self {
            queues: vec![Vec::new(); members.len()],
            members,
            pi: partition.pi().probs().to_vec(),
            batch_size: batch_size.min(partition.m()),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn pop(&mut self, a: usize, in_batch: &[bool]) -> Option<usize> {
        for _ in 0..2 {
            while let Some(i) = self.queues[a].pop() {
                if !in_batch[i] {
                    return Some(i);
                }
            }
            let mut fresh = self.members[a].clone();
            for k in (1..fresh.len()).rev() {
                fresh.swap(k, self.rng.gen_range(0..=k));
            }
            // anything skipped above is already in this batch
            self.queues[a] = fresh;
        }
        None
    }

    fn pick_subgroup(&mut self, open: &[bool]) -> usize {
        let total: f64 = self.pi.iter().zip(open).filter(|(_, &o)| o).map(|(p, _)| p).sum();
        let mut u = self.rng.gen::<f64>() * total;
        let mut last = 0;
        for (a, (&p, &o)) in self.pi.iter().zip(open).enumerate() {
            if !o {
                continue;
            }
            last = a;
            if u < p {
                return a;
            }
            u -= p;
        }
        last
    }

    /// One batch of example indices, in draw order.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let m: usize = self.members.iter().map(Vec::len).sum();
        let mut in_batch = vec![false; m];
        let mut used = vec![0usize; self.members.len()];
        let mut batch = Vec::with_capacity(self.batch_size);
        #[allow(clippy::needless_range_loop)]
        for a in 0..self.members.len() {
            let i = self.pop(a, &in_batch).expect("subgroups are non-empty");
            in_batch[i] = true;
            used[a] += 1;
            batch.push(i);
        }
        while batch.len() < self.batch_size {
            let open: Vec<bool> = self
                .members
                .iter()
                .zip(&used)
                .map(|(g, &u)| u < g.len())
                .collect();
            let a = self.pick_subgroup(&open);
            let i = self.pop(a, &in_batch).expect("open subgroup has a free example");
            in_batch[i] = true;
            used[a] += 1;
            batch.push(i);
        }
        batch
    }

    /// Batches until every example has appeared at least once.
    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let m: usize = self.members.iter().map(Vec::len).sum();
        let mut seen = vec![false; m];
        let mut left = m;
        let mut batches = Vec::new();
        while left > 0 {
            let b = self.next_batch();
            for &i in &b {
                if !seen[i] {
                    seen[i] = true;
                    left -= 1;
                }
            }
            batches.push(b);
        }
        batches
    }
}

/// Hyperparameters of one posterior training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub sigma2: f64,
    pub alpha: f64,
    pub risk: RiskKind,
    pub bound: BoundKind,
    pub lambda: f64,
    pub delta: f64,
    pub l_max: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-8,
            adam: AdamParams::default(),
            sigma2: 1e-6,
            alpha: 0.5,
            risk: RiskKind::Cvar,
            bound: BoundKind::SubgroupsSqrt,
            lambda: 1.0,
            delta: 0.05,
            l_max: crate::model::DEFAULT_L_MAX,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be non-negative", self.learning_rate));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 {} must be positive", self.sigma2));
        }
        if !(self.l_max > 0.0 && self.l_max.is_finite()) {
            return bad(format!("l_max {} must be positive", self.l_max));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.bound == BoundKind::MhammediEstimate && self.risk != RiskKind::Cvar {
            return bad("mhammedi_estimate only holds for cvar".into());
        }
        self.risk_spec()?;
        Ok(())
    }

    pub fn risk_spec(&self) -> Result<RiskSpec, TrainError> {
        let spec = self.risk.spec(self.alpha);
        spec.validate()?;
        Ok(spec)
    }
}

/// Risk of a model on some examples, in class-subgroup or per-example
/// form, together with the per-example weights of the maximizing `ρ`.
struct BatchRisk {
    solution: RiskSolution,
    example_weights: Vec<f64>,
    counts: Vec<usize>,
}

fn batch_risk(
    losses: &[f64],
    batch: &[usize],
    partition: &SubgroupPartition,
    per_example: bool,
    spec: &RiskSpec,
) -> Result<BatchRisk, TrainError> {
    if per_example {
        let pi = crate::risk::ReferenceDistribution::uniform(batch.len())?;
        let solution = constrained_weights(&SubgroupLosses::new(losses.to_vec())?, &pi, spec, DEFAULT_TOL)?;
        let example_weights = solution.weights.clone();
        return Ok(BatchRisk {
            solution,
            example_weights,
            counts: vec![1; batch.len()],
        });
    }
    let n = partition.n();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (&i, &l) in batch.iter().zip(losses) {
        let a = partition.subgroup_of(i);
        sums[a] += l;
        counts[a] += 1;
    }
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::InvalidConfig(format!("subgroup {a} missing from batch")));
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| (s / c as f64).min(1.0)).collect();
    let solution = constrained_weights(&SubgroupLosses::new(means)?, partition.pi(), spec, DEFAULT_TOL)?;
    let example_weights = batch
        .iter()
        .map(|&i| {
            let a = partition.subgroup_of(i);
            solution.weights[a] / counts[a] as f64
        })
        .collect();
    Ok(BatchRisk {
        solution,
        example_weights,
        counts,
    })
}

fn context(
    kind: BoundKind,
    counts: Vec<usize>,
    partition_pi: &[f64],
    config: &TrainConfig,
    n_priors: usize,
    kl_term: f64,
) -> BoundContext {
    if kind.per_example() {
        BoundContext::per_example(
            counts.len(),
            config.alpha,
            config.delta,
            config.lambda,
            n_priors,
            kl_term,
        )
    } else {
        let mut ctx = BoundContext::subgroups(
            counts,
            partition_pi.to_vec(),
            config.alpha,
            config.delta,
            n_priors,
            kl_term,
        );
        ctx.lambda = config.lambda;
        ctx
    }
}

fn kl_for(
    kind: BoundKind,
    theta_tilde: &ParamVector,
    posterior: &GaussianParamDist,
    prior: &GaussianParamDist,
) -> Result<f64, ModelError> {
    if kind.uses_classical_kl() {
        gaussian_kl(&posterior.mean, &prior.mean, posterior.sigma2)
    } else {
        disintegrated_kl(theta_tilde, &posterior.mean, &prior.mean, posterior.sigma2)
    }
}

/// One optimization step of posterior training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch_size: usize,
    pub batch_risk: f64,
    pub bound: BoundReport,
}

/// Output of posterior training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPosterior {
    pub posterior: GaussianParamDist,
    /// The returned model, drawn from the final posterior.
    pub model: ParamVector,
    pub trace: Vec<TraceRecord>,
    /// Bound of `model` on the full learning set.
    pub certificate: BoundReport,
}

/// Settings for certifying a sampled model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifySettings {
    pub risk: RiskKind,
    pub delta: f64,
    pub lambda: f64,
    pub l_max: f64,
    pub n_priors: usize,
}

impl CertifySettings {
    pub fn from_config(config: &TrainConfig, n_priors: usize) -> Self {
        Self {
            risk: config.risk,
            delta: config.delta,
            lambda: config.lambda,
            l_max: config.l_max,
            n_priors,
        }
    }
}

/// Bound of the fixed model `model` (drawn from `posterior`) on all of
/// `data`, with true subgroup sizes in class mode and `m = |data|` per
/// example.
#[allow(clippy::too_many_arguments)]
pub fn certify(
    arch: &MlpArch,
    model: &ParamVector,
    posterior: &GaussianParamDist,
    prior: &GaussianParamDist,
    kind: BoundKind,
    alpha: f64,
    data: &Dataset,
    class_partition: &SubgroupPartition,
    settings: &CertifySettings,
) -> Result<BoundReport, TrainError> {
    if kind == BoundKind::MhammediEstimate && settings.risk != RiskKind::Cvar {
        return Err(TrainError::InvalidConfig("mhammedi_estimate only holds for cvar".into()));
    }
    let spec = settings.risk.spec(alpha);
    spec.validate()?;
    let all: Vec<usize> = (0..data.len()).collect();
    let losses = example_losses(arch, model, data, &all, settings.l_max)?;
    let kl = kl_for(kind, model, posterior, prior)?;
    let (risk, ctx) = if kind.per_example() {
        let per = partition_per_example(data)?;
        let sol = constrained_weights(&SubgroupLosses::new(losses)?, per.pi(), &spec, DEFAULT_TOL)?;
        let ctx = BoundContext::per_example(data.len(), alpha, settings.delta, settings.lambda, settings.n_priors, kl);
        (sol.value, ctx)
    } else {
        let means = class_partition.subgroup_means(&losses);
        let sol = constrained_weights(&SubgroupLosses::new(means)?, class_partition.pi(), &spec, DEFAULT_TOL)?;
        let mut ctx = BoundContext::subgroups(
            class_partition.sizes().to_vec(),
            class_partition.pi().probs().to_vec(),
            alpha,
            settings.delta,
            settings.n_priors,
            kl,
        );
        ctx.lambda = settings.lambda;
        (sol.value, ctx)
    };
    Ok(kind.evaluate(risk.clamp(0.0, 1.0), &ctx)?)
}

/// Self-bounding training: starts at the prior mean and takes one Adam
/// step per batch on the gradient of the configured bound.
///
/// `partition` is the class partition of `data`; it drives batch
/// sampling in both modes, and supplies subgroups and `π` in class mode.
/// When `trace_out` is given, each step is written as a JSON line.
pub fn train_posterior(
    config: &TrainConfig,
    arch: &MlpArch,
    prior: &GaussianParamDist,
    n_priors: usize,
    data: &Dataset,
    partition: &SubgroupPartition,
    mut trace_out: Option<&mut dyn Write>,
) -> Result<TrainedPosterior, TrainError> {
    config.validate()?;
    arch.validate()?;
    if prior.dim() != arch.n_params() {
        return Err(ModelError::DimensionMismatch {
            what: "prior mean",
            expected: arch.n_params(),
            got: prior.dim(),
        }
        .into());
    }
    if partition.m() != data.len() {
        return Err(TrainError::InvalidConfig("partition does not match data".into()));
    }
    let spec = config.risk_spec()?;
    let kind = config.bound;
    let per_example = kind.per_example();
    let prior = GaussianParamDist::new(prior.mean.clone(), config.sigma2)?;
    let mut posterior = prior.clone();
    let mut adam = AdamState::new(arch.n_params());
    let mut sampler = MinibatchSampler::new(partition, config.batch_size, derive_seed(config.seed, 0))?;
    let noise_seed = derive_seed(config.seed, 1);
    let mut trace = Vec::new();
    let mut step = 0usize;
    let sigma2 = config.sigma2;

    for epoch in 0..config.epochs {
        for batch in sampler.epoch() {
            let (theta_tilde, _) = sample_params(&posterior, derive_seed(noise_seed, step as u64));
            let losses = example_losses(arch, &theta_tilde, data, &batch, config.l_max)?;
            let br = batch_risk(&losses, &batch, partition, per_example, &spec)?;
            let kl = kl_for(kind, &theta_tilde, &posterior, &prior)?;
            let ctx = context(kind, br.counts.clone(), partition.pi().probs(), config, n_priors, kl);
            let risk = br.solution.value.clamp(0.0, 1.0);
            let obj = kind.objective(risk, &ctx)?;

            let weights: Vec<f64> = br.example_weights.iter().map(|w| w * obj.d_risk).collect();
            let mut grad = backward(arch, &theta_tilde, data, &batch, &weights, config.l_max)?.into_inner();
            if obj.d_kl != 0.0 {
                let anchor = if kind.uses_classical_kl() {
                    posterior.mean.as_slice()
                } else {
                    theta_tilde.as_slice()
                };
                for ((g, a), p) in grad.iter_mut().zip(anchor).zip(prior.mean.as_slice()) {
                    *g += obj.d_kl * (a - p) / sigma2;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteGradient { step });
            }
            adam_step(
                &mut adam,
                posterior.mean.as_mut_slice(),
                &grad,
                config.learning_rate,
                &config.adam,
            );

            let record = TraceRecord {
                step,
                epoch,
                batch_size: batch.len(),
                batch_risk: risk,
                bound: obj.report,
            };
            if let Some(out) = trace_out.as_deref_mut() {
                serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            trace.push(record);
            step += 1;
        }
    }

    let (model, _) = sample_params(&posterior, derive_seed(config.seed, 2));
    let certificate = certify(
        arch,
        &model,
        &posterior,
        &prior,
        kind,
        config.alpha,
        data,
        partition,
        &CertifySettings::from_config(config, n_priors),
    )?;
    Ok(TrainedPosterior {
        posterior,
        model,
        trace,
        certificate,
    })
}

/// Candidate learning rates and epochs for prior learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorGrid {
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
}

impl Default for PriorGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.01, 0.001],
            epochs: 20,
        }
    }
}

impl PriorGrid {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rates.is_empty() {
            return Err(TrainError::InvalidConfig("prior grid is empty".into()));
        }
        if self.learning_rates.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(TrainError::InvalidConfig("prior learning rates must be non-negative".into()));
        }
        Ok(())
    }

    /// Candidate count `T·K` entering the bounds' union term; a grid
    /// trained for zero epochs still yields its `K` initializations.
    pub fn n_priors(&self) -> usize {
        self.epochs.max(1) * self.learning_rates.len()
    }
}

/// Selected prior and the selection record.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPrior {
    pub prior: GaussianParamDist,
    pub n_priors: usize,
    pub learning_rate: f64,
    pub epoch: usize,
    pub selection_risk: f64,
}

#[allow(clippy::too_many_arguments)]
/// Sampled-model risk of `dist` on all of `data`, in the mode of `per_example`.
fn sampled_risk(
    arch: &MlpArch,
    dist: &GaussianParamDist,
    seed: u64,
    data: &Dataset,
    partition: &SubgroupPartition,
    per_example: bool,
    spec: &RiskSpec,
    l_max: f64,
) -> Result<f64, TrainError> {
    let (theta, _) = sample_params(dist, seed);
    let all: Vec<usize> = (0..data.len()).collect();
    let losses = example_losses(arch, &theta, data, &all, l_max)?;
    Ok(batch_risk(&losses, &all, partition, per_example, spec)?.solution.value)
}

/// Learns the prior on `prior_data` by risk-only training from a Xavier
/// initialization for each grid learning rate, snapshotting after every
/// epoch, and keeps the candidate whose sampled model has the lowest risk
/// on `posterior_data`.
///
/// `config` supplies batch size, Adam constants, `σ²`, the risk measure,
/// `α`, `l_max`, the seed and (through `config.bound`) the subgroup mode.
#[allow(clippy::too_many_arguments)]
pub fn learn_prior(
    grid: &PriorGrid,
    config: &TrainConfig,
    arch: &MlpArch,
    prior_data: &Dataset,
    prior_partition: &SubgroupPartition,
    posterior_data: &Dataset,
    posterior_partition: &SubgroupPartition,
) -> Result<LearnedPrior, TrainError> {
    grid.validate()?;
    config.validate()?;
    arch.validate()?;
    let spec = config.risk_spec()?;
    let per_example = config.bound.per_example();
    let eval_seed = derive_seed(config.seed, 10);
    let mut best: Option<LearnedPrior> = None;
    let mut consider = |dist: &GaussianParamDist, lr: f64, epoch: usize| -> Result<(), TrainError> {
        let r = sampled_risk(
            arch,
            dist,
            eval_seed,
            posterior_data,
            posterior_partition,
            per_example,
            &spec,
            config.l_max,
        )?;
        if best.as_ref().is_none_or(|b| r < b.selection_risk) {
            best = Some(LearnedPrior {
                prior: dist.clone(),
                n_priors: grid.n_priors(),
                learning_rate: lr,
                epoch,
                selection_risk: r,
            });
        }
        Ok(())
    };

    for (k, &lr) in grid.learning_rates.iter().enumerate() {
        let run_seed = derive_seed(config.seed, 100 + k as u64);
        let init = xavier_init(arch, derive_seed(run_seed, 0));
        let mut dist = GaussianParamDist::new(init, config.sigma2)?;
        if grid.epochs == 0 {
            consider(&dist, lr, 0)?;
            continue;
        }
        let mut adam = AdamState::new(arch.n_params());
        let mut sampler = MinibatchSampler::new(prior_partition, config.batch_size, derive_seed(run_seed, 1))?;
        let noise_seed = derive_seed(run_seed, 2);
        let mut step = 0u64;
        for epoch in 1..=grid.epochs {
            for batch in sampler.epoch() {
                let (theta_tilde, _) = sample_params(&dist, derive_seed(noise_seed, step));
                let losses = example_losses(arch, &theta_tilde, prior_data, &batch, config.l_max)?;
                let br = batch_risk(&losses, &batch, prior_partition, per_example, &spec)?;
                let grad = backward(arch, &theta_tilde, prior_data, &batch, &br.example_weights, config.l_max)?;
                if !grad.is_finite() {
                    return Err(TrainError::NonFiniteGradient { step: step as usize });
                }
                adam_step(&mut adam, dist.mean.as_mut_slice(), grad.as_slice(), lr, &config.adam);
                step += 1;
            }
            consider(&dist, lr, epoch)?;
        }
    }
    Ok(best.expect("grid is non-empty"))
}
