//! The adaptation loop over a growth plan, plus the comparison harnesses:
//! distance metrics, λ sweep and the shift-penalty ablation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::controller::{
    greedy_decode, embed_state, train, trace_csv_string, BucketEdges, ControllerParams, TraceRow,
    TrainerConfig,
};
use crate::datagen::{gen_all, FeatureExtractor, GrowthPlan, IdentityExtractor, Snapshot, SnapshotMeta};
use crate::error::{Error, Result};
use crate::evaluator::{oracle_best, Evaluator, Objective, Surrogate, SurrogateConfig};
use crate::gate::{accuracy_drop, should_adapt, GateConfig};
use crate::gaussian::{fit_gaussian_default, js_divergence_mc, wasserstein2_gaussian, GaussianSummary};
use crate::rng::{derive_seed, Purpose};
use crate::search_space::{madds, Architecture, SpaceConfig};

/// How the first architecture is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitArch {
    /// Best accuracy on the first snapshot by exhaustive search.
    Oracle,
    /// The smallest architecture of the space.
    Min,
    Fixed(Architecture),
}

impl std::fmt::Display for InitArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitArch::Oracle => f.write_str("oracle"),
            InitArch::Min => f.write_str("min"),
            InitArch::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for InitArch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InitArch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        InitArch::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl InitArch {
    /// `oracle`, `min`, or an architecture encoding (checked against the
    /// space later).
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "oracle" => Ok(InitArch::Oracle),
            "min" => Ok(InitArch::Min),
            other => Ok(InitArch::Fixed(other.parse()?)),
        }
    }

    pub fn resolve(&self, space: &SpaceConfig, meta: &SnapshotMeta, eval: &dyn Evaluator) -> Result<Architecture> {
        match self {
            InitArch::Oracle => Ok(oracle_best(space, meta, eval, &Objective::Accuracy)?.arch),
            InitArch::Min => Ok(space.min_arch()),
            InitArch::Fixed(a) => {
                a.validate(space)?;
                Ok(a.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub plan: GrowthPlan,
    pub space: SpaceConfig,
    pub surrogate: SurrogateConfig,
    pub gate: GateConfig,
    pub trainer: TrainerConfig,
    pub init: InitArch,
    /// Where results go; not part of the experiment, so not echoed.
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plan: GrowthPlan::default(),
            space: SpaceConfig::default(),
            surrogate: SurrogateConfig::default(),
            gate: GateConfig::default(),
            trainer: TrainerConfig::default(),
            init: InitArch::Oracle,
            out_dir: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.space.validate()?;
        self.surrogate.validate()?;
        self.gate.validate()?;
        self.trainer.validate()?;
        if let InitArch::Fixed(a) = &self.init {
            a.validate(&self.space)?;
        }
        Ok(())
    }

    /// The plan with its seed replaced by the one derived from the master seed.
    pub fn seeded_plan(&self) -> GrowthPlan {
        GrowthPlan {
            seed: derive_seed(self.seed, 0, Purpose::Data),
            ..self.plan.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationRecord {
    pub t: usize,
    pub d_t: f64,
    pub h_t: f64,
    pub adapted: bool,
    pub prev_arch: Architecture,
    pub new_arch: Architecture,
    /// Both accuracies are measured on the current snapshot.
    pub v_prev: f64,
    pub v_new: f64,
    pub madds_prev: f64,
    pub madds_new: f64,
    /// Trace file name relative to the output directory.
    pub trace: Option<String>,
    /// Kept out of the records file so that reruns are byte-identical.
    #[serde(skip)]
    pub duration_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial_arch: Architecture,
    pub records: Vec<AdaptationRecord>,
    /// One entry per record; empty when the step did not adapt.
    pub traces: Vec<Vec<TraceRow>>,
    pub edges: BucketEdges,
    pub params: ControllerParams,
}

impl RunOutput {
    pub fn final_arch(&self) -> &Architecture {
        self.records.last().map_or(&self.initial_arch, |r| &r.new_arch)
    }
}

/// Snapshots and their Gaussian fits for a plan.
pub struct PreparedPlan {
    pub snapshots: Vec<Snapshot>,
    pub fits: Vec<GaussianSummary>,
}

pub fn prepare_plan(plan: &GrowthPlan, extractor: &dyn FeatureExtractor) -> Result<PreparedPlan> {
    let snapshots = gen_all(plan)?;
    let fits = snapshots
        .iter()
        .map(|s| fit_gaussian_default(&extractor.extract(s)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedPlan { snapshots, fits })
}

/// Log-spaced bucket edges between the smallest positive and the largest
/// pairwise W2² of the plan's snapshots.
pub fn plan_bucket_edges(fits: &[GaussianSummary], n_buckets: usize) -> Result<BucketEdges> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..fits.len() {
        for j in (i + 1)..fits.len() {
            let d = wasserstein2_gaussian(&fits[i], &fits[j])?;
            if d > 0.0 {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    if !lo.is_finite() {
        lo = 1.0;
        hi = 1.0;
    }
    BucketEdges::log_spaced(lo, hi, n_buckets)
}

fn edges_for(cfg: &TrainerConfig, fits: &[GaussianSummary]) -> Result<BucketEdges> {
    if cfg.bucket_edges.is_empty() {
        plan_bucket_edges(fits, cfg.n_buckets)
    } else {
        BucketEdges::new(cfg.bucket_edges.clone())
    }
}

/// The full loop: for every step after the first, measure the shift, gate on
/// the accuracy drop, and when it fires train the adjuster (warm-started from
/// the previous round) and take its greedy architecture.
pub fn run_adaptation(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let eval = Surrogate::new(cfg.space.clone(), cfg.surrogate.clone())?;
    let prepared = prepare_plan(&cfg.seeded_plan(), &IdentityExtractor)?;
    run_prepared(cfg, &prepared, &eval)
}

pub fn run_prepared(cfg: &RunConfig, prepared: &PreparedPlan, eval: &dyn Evaluator) -> Result<RunOutput> {
    let space = &cfg.space;
    let snaps = &prepared.snapshots;
    let edges = edges_for(&cfg.trainer, &prepared.fits)?;
    let initial_arch = cfg
        .init
        .resolve(space, &snaps[0].meta, eval)
        .map_err(|e| Error::at_step(1, e))?;
    let mut params = cfg
        .trainer
        .init_params(space, derive_seed(cfg.seed, 0, Purpose::ControllerInit));

    let mut prev_arch = initial_arch.clone();
    let mut records = Vec::with_capacity(snaps.len().saturating_sub(1));
    let mut traces = Vec::with_capacity(snaps.len().saturating_sub(1));
    for i in 1..snaps.len() {
        let t = i + 1;
        let started = Instant::now();
        let mut step = || -> Result<(AdaptationRecord, Vec<TraceRow>)> {
            let (prev_meta, cur_meta) = (&snaps[i - 1].meta, &snaps[i].meta);
            let d_t = wasserstein2_gaussian(&prepared.fits[i], &prepared.fits[i - 1])?;
            let h_t = accuracy_drop(&prev_arch, prev_meta, cur_meta, eval)?;
            let adapted = should_adapt(h_t, &cfg.gate);
            let (new_arch, trace) = if adapted {
                let trainer = TrainerConfig {
                    seed: derive_seed(cfg.seed, t as u64, Purpose::Training),
                    ..cfg.trainer.clone()
                };
                let trace = train(&mut params, &prev_arch, d_t, cur_meta, eval, space, &trainer, &edges)?;
                let state = embed_state(&params, &prev_arch, d_t, &edges)?;
                (greedy_decode(&params, &state)?, trace)
            } else {
                (prev_arch.clone(), Vec::new())
            };
            let record = AdaptationRecord {
                t,
                d_t,
                h_t,
                adapted,
                v_prev: eval.accuracy(&prev_arch, cur_meta)?,
                v_new: eval.accuracy(&new_arch, cur_meta)?,
                madds_prev: madds(&prev_arch, space),
                madds_new: madds(&new_arch, space),
                prev_arch: prev_arch.clone(),
                new_arch,
                trace: adapted.then(|| trace_file_name(t)),
                duration_secs: 0.0,
            };
            Ok((record, trace))
        };
        let (mut record, trace) = step().map_err(|e| Error::at_step(t, e))?;
        record.duration_secs = started.elapsed().as_secs_f64();
        prev_arch = record.new_arch.clone();
        records.push(record);
        traces.push(trace);
    }
    Ok(RunOutput {
        initial_arch,
        records,
        traces,
        edges,
        params,
    })
}

pub fn trace_file_name(t: usize) -> String {
    format!("trace_t{t}.csv")
}

pub const RECORDS_FILE: &str = "records.json";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const CONTROLLER_FILE: &str = "controller.axpt";

/// The records document: config echo, initial architecture, bucket edges and
/// records. Keys come out sorted.
pub fn records_json(cfg: &RunConfig, out: &RunOutput) -> Result<String> {
    let doc: Value = json!({
        "config": serde_json::to_value(cfg)?,
        "initial_arch": out.initial_arch.to_string(),
        "bucket_edges": out.edges.edges(),
        "records": serde_json::to_value(&out.records)?,
    });
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Writes the records JSON, one trace CSV per adapted step, the trained
/// controller and a separate wall-clock timings file.
pub fn write_run(dir: impl AsRef<Path>, cfg: &RunConfig, out: &RunOutput) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let path = dir.join(RECORDS_FILE);
    std::fs::write(&path, records_json(cfg, out)?)?;
    let mut timings = String::from("t,seconds\n");
    for (r, trace) in out.records.iter().zip(&out.traces) {
        if let Some(name) = &r.trace {
            std::fs::write(dir.join(name), trace_csv_string(trace))?;
        }
        timings.push_str(&format!("{},{:.6}\n", r.t, r.duration_secs));
    }
    std::fs::write(dir.join(TIMINGS_FILE), timings)?;
    out.params.save(dir.join(CONTROLLER_FILE))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceRow {
    pub step: usize,
    pub w2: f64,
    pub js: f64,
}

/// Distances from snapshot `base_step` (0-based) to it and every later
/// snapshot under W2² and Monte-Carlo JS, averaged over plan seeds.
pub fn compare_distance_metrics(
    plan: &GrowthPlan,
    base_step: usize,
    seeds: &[u64],
    js_samples: usize,
) -> Result<Vec<DistanceRow>> {
    plan.validate()?;
    if base_step >= plan.steps.len() {
        return Err(Error::InvalidStep {
            step: base_step,
            len: plan.steps.len(),
        });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let n = plan.steps.len() - base_step;
    let mut rows: Vec<DistanceRow> = (0..n)
        .map(|k| DistanceRow {
            step: base_step + k,
            w2: 0.0,
            js: 0.0,
        })
        .collect();
    for &seed in seeds {
        let p = GrowthPlan {
            seed,
            ..plan.clone()
        };
        let prepared = prepare_plan(&p, &IdentityExtractor)?;
        let base = &prepared.fits[base_step];
        for row in rows.iter_mut() {
            let other = &prepared.fits[row.step];
            row.w2 += wasserstein2_gaussian(base, other)?;
            let js_seed = derive_seed(seed, row.step as u64, Purpose::JsEstimate);
            row.js += js_divergence_mc(base, other, js_samples, js_seed)?;
        }
    }
    let k = seeds.len() as f64;
    for row in rows.iter_mut() {
        row.w2 /= k;
        row.js /= k;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub arch: Architecture,
    pub v: f64,
    pub madds: f64,
}

/// One adaptation step per λ on the plan's first transition, all sharing the
/// same seeds and starting point. The step always trains, whatever the gate
/// says, so that every λ yields an adjusted architecture.
pub fn lambda_sweep(cfg: &RunConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if lambdas.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least two lambdas".into()));
    }
    if cfg.plan.steps.len() < 2 {
        return Err(Error::InvalidConfig("a sweep needs a plan with at least two steps".into()));
    }
    let eval = Surrogate::new(cfg.space.clone(), cfg.surrogate.clone())?;
    let prepared = prepare_plan(&cfg.seeded_plan(), &IdentityExtractor)?;
    let space = &cfg.space;
    let snaps = &prepared.snapshots;
    let prev = cfg.init.resolve(space, &snaps[0].meta, &eval)?;
    let d_t = wasserstein2_gaussian(&prepared.fits[1], &prepared.fits[0])?;
    let edges = edges_for(&cfg.trainer, &prepared.fits)?;
    let meta = &snaps[1].meta;
    lambdas
        .iter()
        .map(|&lambda| {
            let trainer = TrainerConfig {
                lambda,
                seed: derive_seed(cfg.seed, 2, Purpose::Training),
                ..cfg.trainer.clone()
            };
            trainer.validate()?;
            let mut params = trainer.init_params(space, derive_seed(cfg.seed, 0, Purpose::ControllerInit));
            train(&mut params, &prev, d_t, meta, &eval, space, &trainer, &edges)?;
            let arch = greedy_decode(&params, &embed_state(&params, &prev, d_t, &edges)?)?;
            Ok(SweepRow {
                lambda,
                v: eval.accuracy(&arch, meta)?,
                madds: madds(&arch, space),
                arch,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub t: usize,
    pub adapted_with: bool,
    pub adapted_without: bool,
    pub madds_with: f64,
    pub madds_without: f64,
    pub v_with: f64,
    pub v_without: f64,
}

/// Two full runs sharing every seed: one with the configured λ, one with
/// λ = 0 (accuracy only).
pub fn wd_ablation(cfg: &RunConfig) -> Result<(RunOutput, RunOutput, Vec<AblationRow>)> {
    cfg.validate()?;
    let eval = Surrogate::new(cfg.space.clone(), cfg.surrogate.clone())?;
    let prepared = prepare_plan(&cfg.seeded_plan(), &IdentityExtractor)?;
    let with = run_prepared(cfg, &prepared, &eval)?;
    let no_penalty = RunConfig {
        trainer: TrainerConfig {
            lambda: 0.0,
            ..cfg.trainer.clone()
        },
        ..cfg.clone()
    };
    let without = run_prepared(&no_penalty, &prepared, &eval)?;
    let rows = with
        .records
        .iter()
        .zip(&without.records)
        .map(|(a, b)| AblationRow {
            t: a.t,
            adapted_with: a.adapted,
            adapted_without: b.adapted,
            madds_with: a.madds_new,
            madds_without: b.madds_new,
            v_with: a.v_new,
            v_without: b.v_new,
        })
        .collect();
    Ok((with, without, rows))
}

/// Fixed-width text table of a records document.
pub fn render_report(records_json: &str) -> Result<String> {
    let doc: Value = serde_json::from_str(records_json)?;
    let records = doc
        .get("records")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidData("records document has no `records` array".into()))?;
    let mut out = String::new();
    if let Some(a) = doc.get("initial_arch").and_then(Value::as_str) {
        out.push_str(&format!("initial architecture: {a}\n"));
    }
    out.push_str(&format!(
        "{:>3}  {:>10}  {:>8}  {:>7}  {:>7}  {:>7}  {:>9}  {:>9}  {}\n",
        "t", "d_t", "H_t", "adapted", "V_prev", "V_new", "MAdds_prv", "MAdds_new", "architecture"
    ));
    for r in records {
        let num = |k: &str| r.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{:>3}  {:>10.4}  {:>8.4}  {:>7}  {:>7.4}  {:>7.4}  {:>9.2}  {:>9.2}  {}\n",
            r.get("t").and_then(Value::as_u64).unwrap_or(0),
            num("d_t"),
            num("h_t"),
            r.get("adapted").and_then(Value::as_bool).unwrap_or(false),
            num("v_prev"),
            num("v_new"),
            num("madds_prev"),
            num("madds_new"),
            r.get("new_arch").and_then(Value::as_str).unwrap_or("?"),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Scenario;

    fn toy_run(seed: u64) -> RunConfig {
        RunConfig {
            plan: GrowthPlan::class_growth(vec![2, 4, 8], 8, 0),
            space: SpaceConfig::toy(),
            trainer: TrainerConfig {
                iterations: 100,
                ..TrainerConfig::default()
            },
            seed,
            ..RunConfig::default()
        }
    }

    #[test]
    fn repeated_snapshot_does_not_adapt() {
        let cfg = RunConfig {
            plan: GrowthPlan {
                scenario: Scenario::ClassGrowth,
                steps: vec![4.0, 4.0],
                ..GrowthPlan::class_growth(vec![4, 4], 8, 0)
            },
            ..toy_run(1)
        };
        let out = run_adaptation(&cfg).unwrap();
        let r = &out.records[0];
        assert_eq!(r.t, 2);
        assert!(r.d_t.abs() < 1e-9, "{}", r.d_t);
        assert_eq!(r.h_t, 0.0);
        assert!(!r.adapted);
        assert_eq!(r.new_arch, out.initial_arch);
        assert!(out.traces[0].is_empty());
        assert!(r.trace.is_none());
    }

    #[test]
    fn infinite_epsilon_never_adapts() {
        let cfg = RunConfig {
            gate: GateConfig {
                epsilon: f64::INFINITY,
            },
            ..toy_run(2)
        };
        let out = run_adaptation(&cfg).unwrap();
        assert!(out.records.iter().all(|r| !r.adapted && r.new_arch == out.initial_arch));
    }

    #[test]
    fn lineage_and_gate_soundness() {
        let cfg = RunConfig {
            init: InitArch::Min,
            gate: GateConfig { epsilon: 0.0 },
            ..toy_run(3)
        };
        let out = run_adaptation(&cfg).unwrap();
        let mut prev = out.initial_arch.clone();
        for (r, tr) in out.records.iter().zip(&out.traces) {
            assert_eq!(r.prev_arch, prev);
            assert_eq!(r.adapted, r.h_t > cfg.gate.epsilon);
            assert_eq!(tr.len(), if r.adapted { 100 } else { 0 });
            prev = r.new_arch.clone();
        }
    }

    #[test]
    fn records_are_reproducible() {
        let cfg = toy_run(4);
        let a = records_json(&cfg, &run_adaptation(&cfg).unwrap()).unwrap();
        let b = records_json(&cfg, &run_adaptation(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let report = render_report(&a).unwrap();
        assert_eq!(report.lines().count(), 2 + 2);
    }

    #[test]
    fn failures_name_the_step() {
        let cfg = RunConfig {
            init: InitArch::Oracle,
            space: SpaceConfig::default(),
            ..toy_run(0)
        };
        let err = run_adaptation(&cfg).unwrap_err();
        assert!(matches!(err, Error::Step { step: 1, .. }), "{err}");
    }

    #[test]
    fn distance_table_starts_at_zero() {
        let plan = GrowthPlan::class_growth(vec![2, 4], 4, 0);
        let rows = compare_distance_metrics(&plan, 0, &[1, 2], 2000).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].w2, 0.0);
        assert!(rows[0].js < 0.01);
        assert!(rows[1].w2 > 0.0 && rows[1].js > rows[0].js);
        assert!(compare_distance_metrics(&plan, 2, &[1], 2000).is_err());
    }

    #[test]
    fn sweep_rows_repeat_for_duplicate_lambdas() {
        let cfg = toy_run(5);
        let rows = lambda_sweep(&cfg, &[1e-3, 1e-3]).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert!(lambda_sweep(&cfg, &[1e-3]).is_err());
    }

    #[test]
    fn ablation_without_penalty_is_accuracy_only() {
        let cfg = RunConfig {
            gate: GateConfig { epsilon: 0.0 },
            ..toy_run(6)
        };
        let (with, without, rows) = wd_ablation(&cfg).unwrap();
        assert_eq!(rows.len(), with.records.len());
        assert_eq!(without.records.len(), with.records.len());
        assert_eq!(with.initial_arch, without.initial_arch);
    }
}
