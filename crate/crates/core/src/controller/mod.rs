//! Policy-gradient architecture adjuster.
//!
//! The policy reads the previous architecture (one-hot tokens through a
//! two-layer tanh encoder) and a learned embedding of the bucketed data shift
//! `d_t`, initializes a GRU from them and emits decisions autoregressively:
//! per unit a depth, then a kernel and an expansion for every active layer.
//! Training is REINFORCE with an optional moving-average baseline, an entropy
//! bonus and L2 weight decay, stepped by Adam (or plain SGD).

mod optim;
mod params;
mod policy;

use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotMeta;
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::rng::rng_from_seed;
use crate::search_space::{madds, Architecture, LayerSpec, SpaceConfig, UnitSpec};

pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ControllerParams, ControllerShape, NetworkSizes, Tensor, FORMAT_VERSION, MAGIC};
pub use policy::{DecisionKind, EncodedState, StateInput};

use policy::{backward, encode, rollout, Chooser, Pass};

/// Everything the adjuster's training loop needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub entropy_weight: f64,
    /// Fraction of the iterations over which the entropy weight decays
    /// linearly to zero; 0 keeps it constant.
    pub entropy_anneal: f64,
    pub lambda: f64,
    pub baseline_decay: f64,
    pub use_baseline: bool,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub n_buckets: usize,
    /// Explicit `n_buckets − 1` edges; empty means derive from the plan.
    pub bucket_edges: Vec<f64>,
    pub hidden: usize,
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub bucket_dim: usize,
    pub token_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 5e-4,
            iterations: 6000,
            entropy_weight: 2e-4,
            entropy_anneal: 0.0,
            lambda: 0.5e-4,
            baseline_decay: 0.95,
            use_baseline: true,
            batch_size: 1,
            optimizer: OptimizerKind::Adam,
            n_buckets: 8,
            bucket_edges: Vec::new(),
            hidden: 64,
            encoder_hidden: 32,
            encoder_out: 32,
            bucket_dim: 16,
            token_dim: 16,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("trainer.learning_rate must be positive");
        }
        if self.iterations == 0 {
            return bad("trainer.iterations must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("trainer.lambda must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("trainer.weight_decay must be finite and >= 0");
        }
        if !self.entropy_weight.is_finite() {
            return bad("trainer.entropy_weight must be finite");
        }
        if !(0.0..=1.0).contains(&self.entropy_anneal) {
            return bad("trainer.entropy_anneal must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("trainer.baseline_decay must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("trainer.batch_size must be at least 1");
        }
        if self.n_buckets == 0 {
            return bad("trainer.n_buckets must be at least 1");
        }
        if !self.bucket_edges.is_empty() {
            BucketEdges::new(self.bucket_edges.clone())?;
            if self.bucket_edges.len() + 1 != self.n_buckets {
                return bad("trainer.bucket_edges must hold n_buckets - 1 values");
            }
        }
        if [
            self.hidden,
            self.encoder_hidden,
            self.encoder_out,
            self.bucket_dim,
            self.token_dim,
        ]
        .contains(&0)
        {
            return bad("controller layer sizes must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("trainer.init_scale must be finite and >= 0");
        }
        Ok(())
    }

    /// Settings that make the search reliable on small spaces whose rewards
    /// are a few hundredths: a larger step, batches of 8, an entropy bonus
    /// annealed to zero over the first half, and no L2 term (which at the
    /// default strength swamps gradients of that size).
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 0.0,
            iterations: 2000,
            entropy_weight: 0.1,
            entropy_anneal: 0.5,
            batch_size: 8,
            ..Self::default()
        }
    }

    /// Entropy weight used by the update of 1-based `iteration`.
    pub fn entropy_weight_at(&self, iteration: usize) -> f64 {
        if self.entropy_anneal <= 0.0 {
            return self.entropy_weight;
        }
        let span = self.entropy_anneal * self.iterations as f64;
        self.entropy_weight * (1.0 - (iteration as f64 - 1.0) / span).max(0.0)
    }

    pub fn network_sizes(&self) -> NetworkSizes {
        NetworkSizes {
            encoder_hidden: self.encoder_hidden,
            encoder_out: self.encoder_out,
            n_buckets: self.n_buckets,
            bucket_dim: self.bucket_dim,
            token_dim: self.token_dim,
            hidden: self.hidden,
        }
    }

    pub fn shape(&self, space: &SpaceConfig) -> ControllerShape {
        ControllerShape::new(space, self.network_sizes())
    }

    /// Uniform initial policy: random body, zero heads.
    pub fn init_params(&self, space: &SpaceConfig, seed: u64) -> ControllerParams {
        ControllerParams::init(space, self.shape(space), seed, self.init_scale)
    }
}

/// `R = (v_new − v_prev) − (λ / d_t)(c_new − c_prev)`, MAdds in millions.
pub fn reward(v_new: f64, v_prev: f64, c_new: f64, c_prev: f64, lambda: f64, d_t: f64) -> Result<f64> {
    if d_t == 0.0 {
        return Err(Error::DivisionByZeroShift);
    }
    if !(d_t > 0.0 && d_t.is_finite()) {
        return Err(Error::InvalidData(format!("d_t must be positive and finite, got {d_t}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok((v_new - v_prev) - (lambda / d_t) * (c_new - c_prev))
}

/// Sorted thresholds splitting `d_t` into buckets. A value belongs to the
/// bucket equal to the number of edges `<=` it, so values below the first
/// edge land in bucket 0 and values above the last in the final bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketEdges {
    edges: Vec<f64>,
}

impl BucketEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidConfig("bucket edges must be finite".into()));
        }
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("bucket edges must be non-decreasing".into()));
        }
        Ok(Self { edges })
    }

    /// `n_buckets − 1` edges spaced evenly in `ln d` from `d_min` to `d_max`.
    pub fn log_spaced(d_min: f64, d_max: f64, n_buckets: usize) -> Result<Self> {
        if n_buckets == 0 {
            return Err(Error::InvalidConfig("need at least one bucket".into()));
        }
        if !(d_min > 0.0 && d_max.is_finite() && d_max >= d_min) {
            return Err(Error::InvalidConfig(format!(
                "log-spaced edges need 0 < d_min <= d_max, got {d_min} and {d_max}"
            )));
        }
        let n = n_buckets - 1;
        let (lo, hi) = (d_min.ln(), d_max.ln());
        let edges = (0..n)
            .map(|i| {
                if n == 1 {
                    (0.5 * (lo + hi)).exp()
                } else {
                    (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_buckets(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bucket(&self, d_t: f64) -> usize {
        self.edges.partition_point(|&e| e <= d_t)
    }
}

/// One-hot tokens of `prev_arch` plus the bucket of `d_t`.
pub fn state_input(
    params: &ControllerParams,
    prev_arch: &Architecture,
    d_t: f64,
    edges: &BucketEdges,
) -> Result<StateInput> {
    let space = params.space();
    let shape = params.shape();
    prev_arch.validate(space)?;
    if !(d_t >= 0.0 && d_t.is_finite()) {
        return Err(Error::InvalidData(format!("d_t must be finite and >= 0, got {d_t}")));
    }
    if edges.n_buckets() != shape.n_buckets {
        return Err(Error::Shape(format!(
            "{} bucket edges for {} embedding rows",
            edges.edges().len(),
            shape.n_buckets
        )));
    }
    let choices = arch_choices(prev_arch, space)?;
    let (nk, ne) = (shape.n_kernel, shape.n_expansion);
    let slot = nk + 1 + ne + 1;
    let mut active = Vec::with_capacity(shape.n_units * (1 + 2 * shape.max_depth));
    let mut it = choices.iter();
    for (u, unit) in prev_arch.units.iter().enumerate() {
        let base = u * shape.unit_block();
        active.push(base + it.next().copied().unwrap_or(0));
        for l in 0..shape.max_depth {
            let at = base + shape.n_depth + l * slot;
            if l < unit.layers.len() {
                let k = *it.next().unwrap();
                let e = *it.next().unwrap();
                active.push(at + k);
                active.push(at + nk + 1 + e);
            } else {
                active.push(at + nk);
                active.push(at + nk + 1 + ne);
            }
        }
    }
    Ok(StateInput {
        active,
        dim: shape.input_dim(),
        bucket: edges.bucket(d_t),
    })
}

/// Encoder features of `prev_arch` concatenated with the embedding of the
/// bucket holding `d_t`.
pub fn embed_state(
    params: &ControllerParams,
    prev_arch: &Architecture,
    d_t: f64,
    edges: &BucketEdges,
) -> Result<EncodedState> {
    Ok(encode(params, &state_input(params, prev_arch, d_t, edges)?))
}

/// Re-encodes a stored input under the current parameters.
pub fn encode_input(params: &ControllerParams, input: &StateInput) -> EncodedState {
    encode(params, input)
}

/// Decision indices along the path that generates `arch`.
pub fn arch_choices(arch: &Architecture, space: &SpaceConfig) -> Result<Vec<usize>> {
    arch.validate(space)?;
    let index = |set: &[u32], v: u32, what: &str| {
        set.iter().position(|&c| c == v).ok_or_else(|| Error::InvalidToken {
            token: v.to_string(),
            message: format!("not a {what} choice"),
        })
    };
    let mut out = Vec::new();
    for unit in &arch.units {
        out.push(index(&space.depth_choices, unit.depth(), "depth")?);
        for layer in &unit.layers {
            out.push(index(&space.kernel_choices, layer.kernel, "kernel")?);
            out.push(index(&space.expansion_choices, layer.expansion, "expansion")?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub kind: DecisionKind,
    pub unit: usize,
    /// Layer index within the unit; 0 for depth decisions.
    pub layer: usize,
    pub choice: usize,
    pub log_prob: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub arch: Architecture,
    pub decisions: Vec<Decision>,
    pub total_log_prob: f64,
    pub total_entropy: f64,
}

impl Trajectory {
    pub fn choices(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.choice).collect()
    }

    fn from_pass(pass: &Pass, space: &SpaceConfig) -> Self {
        let mut units: Vec<UnitSpec> = Vec::new();
        let mut decisions = Vec::with_capacity(pass.steps.len());
        for s in &pass.steps {
            match s.kind {
                DecisionKind::Depth => units.push(UnitSpec { layers: Vec::new() }),
                DecisionKind::Kernel => units.last_mut().unwrap().layers.push(LayerSpec {
                    kernel: space.kernel_choices[s.choice],
                    expansion: 0,
                }),
                DecisionKind::Expansion => {
                    let layer = units.last_mut().unwrap().layers.last_mut().unwrap();
                    layer.expansion = space.expansion_choices[s.choice];
                }
            }
            decisions.push(Decision {
                kind: s.kind,
                unit: s.unit,
                layer: s.layer,
                choice: s.choice,
                log_prob: s.log_prob(),
                entropy: s.entropy,
            });
        }
        Self {
            arch: Architecture { units },
            total_log_prob: decisions.iter().map(|d| d.log_prob).sum(),
            total_entropy: decisions.iter().map(|d| d.entropy).sum(),
            decisions,
        }
    }
}

pub fn sample(params: &ControllerParams, state: &EncodedState, rng: &mut dyn RngCore) -> Result<Trajectory> {
    let pass = rollout(params, state.clone(), Chooser::Sample(rng))?;
    Ok(Trajectory::from_pass(&pass, params.space()))
}

/// Argmax at every decision; ties go to the lowest choice index, so a
/// uniform policy decodes to the minimal architecture.
pub fn greedy_decode(params: &ControllerParams, state: &EncodedState) -> Result<Architecture> {
    let pass = rollout(params, state.clone(), Chooser::Greedy)?;
    Ok(Trajectory::from_pass(&pass, params.space()).arch)
}

/// The trajectory that generates `arch`, with its probabilities.
pub fn score(params: &ControllerParams, state: &EncodedState, arch: &Architecture) -> Result<Trajectory> {
    let choices = arch_choices(arch, params.space())?;
    let pass = rollout(params, state.clone(), Chooser::Replay(&choices))?;
    Ok(Trajectory::from_pass(&pass, params.space()))
}

/// `advantage · Σ log p + entropy_weight · Σ H − weight_decay · ½‖θ‖²` along
/// the path given by `choices`.
pub fn objective(
    params: &ControllerParams,
    input: &StateInput,
    choices: &[usize],
    advantage: f64,
    entropy_weight: f64,
    weight_decay: f64,
) -> Result<f64> {
    let pass = rollout(params, encode(params, input), Chooser::Replay(choices))?;
    let lp: f64 = pass.steps.iter().map(|s| s.log_prob()).sum();
    let h: f64 = pass.steps.iter().map(|s| s.entropy).sum();
    Ok(advantage * lp + entropy_weight * h - 0.5 * weight_decay * params.squared_norm())
}

/// Analytic gradient of [`objective`].
pub fn objective_gradient(
    params: &ControllerParams,
    input: &StateInput,
    choices: &[usize],
    advantage: f64,
    entropy_weight: f64,
    weight_decay: f64,
) -> Result<ControllerParams> {
    let pass = rollout(params, encode(params, input), Chooser::Replay(choices))?;
    let mut grad = params.zeros_like();
    backward(params, &pass, advantage, entropy_weight, 1.0, &mut grad);
    apply_weight_decay(params, weight_decay, &mut grad);
    Ok(grad)
}

fn apply_weight_decay(params: &ControllerParams, wd: f64, grad: &mut ControllerParams) {
    if wd != 0.0 {
        for (g, p) in grad.as_mut_slice().iter_mut().zip(params.as_slice()) {
            *g -= wd * p;
        }
    }
}

/// Exponential moving average of rewards, starting at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
    pub enabled: bool,
}

impl Baseline {
    pub fn new(cfg: &TrainerConfig) -> Self {
        Self {
            value: 0.0,
            decay: cfg.baseline_decay,
            enabled: cfg.use_baseline,
        }
    }

    pub fn advantage(&self, r: f64) -> f64 {
        if self.enabled {
            r - self.value
        } else {
            r
        }
    }

    pub fn update(&mut self, r: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * r;
    }
}

/// One ascent step on the mean objective over `batch` (trajectory, reward)
/// pairs, all sampled from `input` under the current `params`. Advantages use
/// the baseline from before the batch; the baseline then absorbs each reward.
pub fn reinforce_step(
    params: &mut ControllerParams,
    input: &StateInput,
    batch: &[(Trajectory, f64)],
    cfg: &TrainerConfig,
    optimizer: &mut Optimizer,
    baseline: &mut Baseline,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let state = encode(params, input);
    let scale = 1.0 / batch.len() as f64;
    for (traj, r) in batch {
        if !r.is_finite() {
            return Err(Error::Numerical(format!("non-finite reward {r}")));
        }
        let pass = rollout(params, state.clone(), Chooser::Replay(&traj.choices()))?;
        backward(params, &pass, baseline.advantage(*r), cfg.entropy_weight, scale, &mut grad);
    }
    apply_weight_decay(params, cfg.weight_decay, &mut grad);
    if !grad.all_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    optimizer.step(params.as_mut_slice(), grad.as_slice());
    for (_, r) in batch {
        baseline.update(*r);
    }
    Ok(())
}

/// Batch means for one training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub reward: f64,
    pub entropy: f64,
    pub madds: f64,
}

/// `iterations` rounds of sample, evaluate, reward and update, starting from
/// `params` in place. Optimizer moments and the baseline start fresh.
#[allow(clippy::too_many_arguments)]
pub fn train(
    params: &mut ControllerParams,
    prev_arch: &Architecture,
    d_t: f64,
    meta: &SnapshotMeta,
    evaluator: &dyn Evaluator,
    space: &SpaceConfig,
    cfg: &TrainerConfig,
    edges: &BucketEdges,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    if params.space() != space {
        return Err(Error::Shape("controller was built for a different search space".into()));
    }
    let input = state_input(params, prev_arch, d_t, edges)?;
    let v_prev = evaluator.accuracy(prev_arch, meta)?;
    let c_prev = madds(prev_arch, space);
    let mut rng = rng_from_seed(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut baseline = Baseline::new(cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut step_cfg = cfg.clone();
    for iteration in 1..=cfg.iterations {
        let state = encode(params, &input);
        batch.clear();
        let (mut sum_r, mut sum_h, mut sum_c) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch_size {
            let traj = sample(params, &state, &mut rng)?;
            let v = evaluator.accuracy(&traj.arch, meta)?;
            let c = madds(&traj.arch, space);
            let r = reward(v, v_prev, c, c_prev, cfg.lambda, d_t)?;
            sum_r += r;
            sum_h += traj.total_entropy;
            sum_c += c;
            batch.push((traj, r));
        }
        step_cfg.entropy_weight = cfg.entropy_weight_at(iteration);
        reinforce_step(params, &input, &batch, &step_cfg, &mut optimizer, &mut baseline)?;
        let n = cfg.batch_size as f64;
        trace.push(TraceRow {
            iteration,
            reward: sum_r / n,
            entropy: sum_h / n,
            madds: sum_c / n,
        });
    }
    Ok(trace)
}

pub fn trace_csv_string(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,reward,entropy,madds\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.reward, r.entropy, r.madds);
    }
    out
}

pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trace_csv_string(trace))?;
    Ok(())
}

#[cfg(test)]
mod tests;
