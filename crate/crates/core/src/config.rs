//! Flat `key=value` run configuration.
//!
//! One assignment per line, `#` starts a comment, keys carry a section prefix
//! (`trainer.lambda=2.5e-4`). Lists are comma-separated. The `*.preset` keys
//! are applied before any other key so individual keys refine a preset no
//! matter where they appear.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::controller::TrainerConfig;
use crate::datagen::Scenario;
use crate::error::{Error, Result};
use crate::orchestrator::{InitArch, RunConfig};
use crate::search_space::SpaceConfig;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("run.seed", "master seed (integer)"),
    ("run.init", "first architecture: oracle, min or an encoding"),
    ("run.out", "output directory"),
    ("plan.scenario", "volume or class"),
    ("plan.steps", "volume fractions or class counts, comma-separated, non-decreasing"),
    ("plan.feature_dim", "feature dimension q"),
    ("plan.sigma", "within-class standard deviation"),
    ("plan.radius", "prototype radius (class separation)"),
    ("plan.base_samples", "rows at fraction 1.0 (volume) or rows per class (class)"),
    ("plan.n_classes", "class count for volume growth"),
    ("plan.max_classes", "largest class count of the plan"),
    ("space.preset", "default or toy; applied before other space keys"),
    ("space.n_units", "number of units"),
    ("space.depth_choices", "allowed layers per unit"),
    ("space.kernel_choices", "allowed kernel sizes"),
    ("space.expansion_choices", "allowed expansion ratios"),
    ("space.input_resolution", "input side length in pixels"),
    ("space.stem_channels", "stem output channels"),
    ("space.unit_out_channels", "output channels per unit"),
    ("space.unit_strides", "first-layer stride per unit"),
    ("surrogate.peak_height", "height of the capacity bump"),
    ("surrogate.floor", "accuracy far from the optimum"),
    ("surrogate.bump_width", "width of the capacity bump"),
    ("surrogate.opt_intercept", "optimal capacity at complexity 0"),
    ("surrogate.opt_slope", "optimal capacity slope in complexity"),
    ("surrogate.depth_intercept", "optimal depth at complexity 0"),
    ("surrogate.depth_slope", "optimal depth slope in complexity"),
    ("surrogate.depth_penalty", "accuracy lost per layer of depth mismatch"),
    ("gate.epsilon", "adapt when the accuracy drop exceeds this (inf disables)"),
    ("trainer.preset", "default or desk; applied before other trainer keys"),
    ("trainer.learning_rate", "step size"),
    ("trainer.weight_decay", "L2 coefficient on controller parameters"),
    ("trainer.iterations", "policy-gradient iterations per adaptation"),
    ("trainer.entropy_weight", "entropy bonus coefficient"),
    ("trainer.entropy_anneal", "fraction of iterations over which the entropy weight decays to 0"),
    ("trainer.lambda", "MAdds penalty coefficient"),
    ("trainer.baseline_decay", "moving-average decay of the reward baseline"),
    ("trainer.use_baseline", "true or false"),
    ("trainer.batch_size", "sampled architectures per update"),
    ("trainer.optimizer", "adam or sgd"),
    ("trainer.n_buckets", "number of shift buckets"),
    ("trainer.bucket_edges", "explicit n_buckets-1 edges; empty derives them from the plan"),
    ("trainer.hidden", "recurrent hidden size"),
    ("trainer.encoder_hidden", "first encoder layer width"),
    ("trainer.encoder_out", "encoder output width"),
    ("trainer.bucket_dim", "bucket embedding width"),
    ("trainer.token_dim", "token embedding width"),
    ("trainer.init_scale", "uniform init range of the non-head weights"),
];

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_preset(v: &str) -> std::result::Result<SpaceConfig, String> {
    match v {
        "default" => Ok(SpaceConfig::default()),
        "toy" => Ok(SpaceConfig::toy()),
        _ => Err(format!("unknown space preset `{v}` (expected default or toy)")),
    }
}

/// Sets one key on `cfg`.
pub fn apply(cfg: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    let (p, s, sp, t) = (&mut cfg.plan, &mut cfg.surrogate, &mut cfg.space, &mut cfg.trainer);
    match key {
        "run.seed" => cfg.seed = parse(v)?,
        "run.init" => cfg.init = InitArch::parse(v).map_err(|e| e.to_string())?,
        "run.out" => cfg.out_dir = Some(PathBuf::from(v)),
        "plan.scenario" => {
            p.scenario = match v {
                "volume" => Scenario::VolumeGrowth,
                "class" => Scenario::ClassGrowth,
                _ => return Err(format!("expected volume or class, got `{v}`")),
            }
        }
        "plan.steps" => p.steps = parse_list(v)?,
        "plan.feature_dim" => p.feature_dim = parse(v)?,
        "plan.sigma" => p.sigma = parse(v)?,
        "plan.radius" => p.radius = parse(v)?,
        "plan.base_samples" => p.base_samples = parse(v)?,
        "plan.n_classes" => p.n_classes = parse(v)?,
        "plan.max_classes" => p.max_classes = parse(v)?,
        "space.preset" => *sp = parse_preset(v)?,
        "space.n_units" => sp.n_units = parse(v)?,
        "space.depth_choices" => sp.depth_choices = parse_list(v)?,
        "space.kernel_choices" => sp.kernel_choices = parse_list(v)?,
        "space.expansion_choices" => sp.expansion_choices = parse_list(v)?,
        "space.input_resolution" => sp.input_resolution = parse(v)?,
        "space.stem_channels" => sp.stem_channels = parse(v)?,
        "space.unit_out_channels" => sp.unit_out_channels = parse_list(v)?,
        "space.unit_strides" => sp.unit_strides = parse_list(v)?,
        "surrogate.peak_height" => s.peak_height = parse(v)?,
        "surrogate.floor" => s.floor = parse(v)?,
        "surrogate.bump_width" => s.bump_width = parse(v)?,
        "surrogate.opt_intercept" => s.opt_intercept = parse(v)?,
        "surrogate.opt_slope" => s.opt_slope = parse(v)?,
        "surrogate.depth_intercept" => s.depth_intercept = parse(v)?,
        "surrogate.depth_slope" => s.depth_slope = parse(v)?,
        "surrogate.depth_penalty" => s.depth_penalty = parse(v)?,
        "gate.epsilon" => cfg.gate.epsilon = parse(v)?,
        "trainer.preset" => {
            *t = match v {
                "default" => TrainerConfig::default(),
                "desk" => TrainerConfig::desk_scale(),
                _ => return Err(format!("unknown trainer preset `{v}` (expected default or desk)")),
            }
        }
        "trainer.learning_rate" => t.learning_rate = parse(v)?,
        "trainer.weight_decay" => t.weight_decay = parse(v)?,
        "trainer.iterations" => t.iterations = parse(v)?,
        "trainer.entropy_weight" => t.entropy_weight = parse(v)?,
        "trainer.entropy_anneal" => t.entropy_anneal = parse(v)?,
        "trainer.lambda" => t.lambda = parse(v)?,
        "trainer.baseline_decay" => t.baseline_decay = parse(v)?,
        "trainer.use_baseline" => t.use_baseline = parse_bool(v)?,
        "trainer.batch_size" => t.batch_size = parse(v)?,
        "trainer.optimizer" => t.optimizer = parse(v)?,
        "trainer.n_buckets" => t.n_buckets = parse(v)?,
        "trainer.bucket_edges" => t.bucket_edges = parse_list(v)?,
        "trainer.hidden" => t.hidden = parse(v)?,
        "trainer.encoder_hidden" => t.encoder_hidden = parse(v)?,
        "trainer.encoder_out" => t.encoder_out = parse(v)?,
        "trainer.bucket_dim" => t.bucket_dim = parse(v)?,
        "trainer.token_dim" => t.token_dim = parse(v)?,
        "trainer.init_scale" => t.init_scale = parse(v)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// A parsed assignment with its 1-based source line (0 for overrides).
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_assignment(text: &str, line: usize) -> Result<Option<Assignment>> {
    let body = text.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        return Ok(None);
    }
    let Some((k, v)) = body.split_once('=') else {
        return Err(Error::ConfigKey {
            line,
            key: body.to_string(),
            message: "expected key=value".into(),
        });
    };
    Ok(Some(Assignment {
        line,
        key: k.trim().to_string(),
        value: v.trim().to_string(),
    }))
}

pub fn parse_text(text: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        out.extend(parse_assignment(l, i + 1)?);
    }
    Ok(out)
}

/// Applies assignments over `base` (presets first), then validates.
pub fn build(base: RunConfig, assignments: &[Assignment]) -> Result<RunConfig> {
    let mut cfg = base;
    let (presets, rest): (Vec<_>, Vec<_>) = assignments.iter().partition(|a| a.key.ends_with(".preset"));
    for a in presets.into_iter().chain(rest) {
        apply(&mut cfg, &a.key, &a.value).map_err(|message| Error::ConfigKey {
            line: a.line,
            key: a.key.clone(),
            message,
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a config text plus `key=value` overrides (applied after the file).
pub fn from_text(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut assignments = parse_text(text)?;
    for o in overrides {
        if let Some(a) = parse_assignment(o, 0)? {
            assignments.push(a);
        }
    }
    build(RunConfig::default(), &assignments)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    from_text(&text, overrides)
}
