//! Accuracy evaluation.
//!
//! [`Evaluator`] is the boundary between the search machinery and whatever
//! scores an architecture on a dataset. [`Surrogate`] is a closed-form
//! landscape whose optimum moves with dataset complexity: larger or more
//! diverse datasets favour larger capacity and deeper units.

use serde::{Deserialize, Serialize};

use crate::controller::reward;
use crate::datagen::SnapshotMeta;
use crate::error::{Error, Result};
use crate::search_space::{enumerate, madds, Architecture, SpaceConfig};

/// Enumeration cap for [`oracle_best`].
pub const ORACLE_CAP: u128 = 1_000_000;

/// Scores an architecture on a dataset described by its metadata.
pub trait Evaluator {
    fn accuracy(&self, arch: &Architecture, meta: &SnapshotMeta) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub peak_height: f64,
    pub floor: f64,
    pub bump_width: f64,
    /// Optimal capacity `c* = opt_intercept + opt_slope · s`.
    pub opt_intercept: f64,
    pub opt_slope: f64,
    /// Optimal depth `d* = round(depth_intercept + depth_slope · s)`.
    pub depth_intercept: f64,
    pub depth_slope: f64,
    pub depth_penalty: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            peak_height: 0.45,
            floor: 0.5,
            bump_width: 0.15,
            opt_intercept: 0.3,
            opt_slope: 0.6,
            depth_intercept: 2.0,
            depth_slope: 2.0,
            depth_penalty: 0.02,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bump_width > 0.0) {
            return Err(Error::InvalidConfig("surrogate.bump_width must be positive".into()));
        }
        if self.floor + self.peak_height > 1.0 || self.floor < 0.0 || self.peak_height < 0.0 {
            return Err(Error::InvalidConfig(
                "surrogate floor and peak_height must be non-negative with floor + peak_height <= 1"
                    .into(),
            ));
        }
        if self.depth_penalty < 0.0 {
            return Err(Error::InvalidConfig("surrogate.depth_penalty must be >= 0".into()));
        }
        Ok(())
    }

    pub fn optimal_capacity(&self, s: f64) -> f64 {
        self.opt_intercept + self.opt_slope * s
    }

    pub fn optimal_depth(&self, s: f64) -> f64 {
        (self.depth_intercept + self.depth_slope * s).round()
    }
}

/// `s = ½·volume_fraction + ½·log₂(C)/log₂(C_max)`, clamped to `[0, 1]`.
pub fn complexity_score(meta: &SnapshotMeta) -> Result<f64> {
    if meta.max_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "max_classes must be at least 2, got {}",
            meta.max_classes
        )));
    }
    let class_term = (meta.n_classes.max(1) as f64).log2() / (meta.max_classes as f64).log2();
    Ok((0.5 * meta.volume_fraction + 0.5 * class_term).clamp(0.0, 1.0))
}

/// `V = clamp(floor + a₀·exp(−(cap − c*)²/(2w²)) − penalty·Σ_u |d_u − d*|, 0, 1)`
/// with `cap = MAdds(a) / MAdds(max arch)`.
pub fn surrogate_accuracy(
    a: &Architecture,
    meta: &SnapshotMeta,
    cfg: &SurrogateConfig,
    space: &SpaceConfig,
) -> Result<f64> {
    let cap = madds(a, space) / madds(&space.max_arch(), space);
    accuracy_at_capacity(a, cap, meta, cfg)
}

fn accuracy_at_capacity(
    a: &Architecture,
    cap: f64,
    meta: &SnapshotMeta,
    cfg: &SurrogateConfig,
) -> Result<f64> {
    let s = complexity_score(meta)?;
    let c_opt = cfg.optimal_capacity(s);
    let d_opt = cfg.optimal_depth(s);
    let bump = cfg.peak_height * (-(cap - c_opt).powi(2) / (2.0 * cfg.bump_width.powi(2))).exp();
    let depth_gap: f64 = a.depths().map(|d| (d as f64 - d_opt).abs()).sum();
    Ok((cfg.floor + bump - cfg.depth_penalty * depth_gap).clamp(0.0, 1.0))
}

/// The surrogate landscape bound to a search space.
#[derive(Debug, Clone)]
pub struct Surrogate {
    space: SpaceConfig,
    cfg: SurrogateConfig,
    max_madds: f64,
}

impl Surrogate {
    pub fn new(space: SpaceConfig, cfg: SurrogateConfig) -> Result<Self> {
        space.validate()?;
        cfg.validate()?;
        let max_madds = madds(&space.max_arch(), &space);
        Ok(Self {
            space,
            cfg,
            max_madds,
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.cfg
    }

    pub fn capacity(&self, a: &Architecture) -> f64 {
        madds(a, &self.space) / self.max_madds
    }
}

impl Evaluator for Surrogate {
    fn accuracy(&self, arch: &Architecture, meta: &SnapshotMeta) -> Result<f64> {
        accuracy_at_capacity(arch, self.capacity(arch), meta, &self.cfg)
    }
}

/// What [`oracle_best`] maximizes.
#[derive(Debug, Clone)]
pub enum Objective {
    Accuracy,
    /// The adjuster's reward relative to `prev`.
    Reward {
        prev: Architecture,
        d_t: f64,
        lambda: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub arch: Architecture,
    /// Objective value.
    pub value: f64,
    pub accuracy: f64,
    pub madds: f64,
}

/// Exhaustive search. Ties go to lower MAdds, then to the lexicographically
/// smallest encoding.
pub fn oracle_best(
    space: &SpaceConfig,
    meta: &SnapshotMeta,
    evaluator: &dyn Evaluator,
    objective: &Objective,
) -> Result<OracleResult> {
    let candidates = enumerate(space, ORACLE_CAP)?;
    let baseline = match objective {
        Objective::Accuracy => None,
        Objective::Reward { prev, .. } => {
            Some((evaluator.accuracy(prev, meta)?, madds(prev, space)))
        }
    };
    let mut best: Option<OracleResult> = None;
    for arch in candidates {
        let accuracy = evaluator.accuracy(&arch, meta)?;
        let cost = madds(&arch, space);
        let value = match (objective, baseline) {
            (Objective::Reward { d_t, lambda, .. }, Some((v_prev, c_prev))) => {
                reward(accuracy, v_prev, cost, c_prev, *lambda, *d_t)?
            }
            _ => accuracy,
        };
        let better = match &best {
            None => true,
            Some(b) => value > b.value || (value == b.value && cost < b.madds),
        };
        if better {
            best = Some(OracleResult {
                arch,
                value,
                accuracy,
                madds: cost,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidConfig("search space is empty".into()))
}
