//! Command-line bindings. Every command parses its inputs, calls into the
//! library and prints; no numerics live here.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config;
use crate::datagen::{gen_all, SnapshotMeta};
use crate::error::{Error, Result};
use crate::evaluator::{oracle_best, Objective, Surrogate};
use crate::gate::{accuracy_drop, should_adapt};
use crate::gaussian::{fit_gaussian_default, js_divergence_mc, wasserstein2_gaussian, FeatureMatrix};
use crate::orchestrator::{
    lambda_sweep, render_report, run_adaptation, wd_ablation, write_run, InitArch, RunConfig,
};
use crate::rng::{derive_seed, Purpose};
use crate::search_space::{madds, Architecture};

#[derive(Debug, Parser)]
#[command(name = "archadapt", version, about = "Shift-aware architecture adaptation on a surrogate evaluator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// key=value config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides run.seed (which defaults to 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the growth plan's snapshots (CSV plus .labels and .meta sidecars)
    Simulate,
    /// Print the W2² distance (and optionally JS) between two feature CSVs
    Distance {
        a: PathBuf,
        b: PathBuf,
        /// Also estimate JS divergence with this many samples per side
        #[arg(long, value_name = "N")]
        js: Option<usize>,
    },
    /// Print the accuracy drop of an architecture between two snapshots
    Gate {
        prev: PathBuf,
        cur: PathBuf,
        /// Architecture encoding; defaults to run.init resolved on PREV
        #[arg(long)]
        arch: Option<String>,
        /// Threshold; overrides gate.epsilon
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run the adaptation loop and write records, traces and the controller
    Adapt,
    /// Exhaustive best architecture on one plan step
    Oracle {
        /// 1-based plan step
        #[arg(long, default_value_t = 1)]
        step: usize,
        /// Score by reward against this previous architecture instead of accuracy
        #[arg(long, requires = "d_t")]
        prev: Option<String>,
        /// Data shift for the reward objective
        #[arg(long = "d-t", requires = "prev")]
        d_t: Option<f64>,
    },
    /// One forced adaptation step per λ on the first transition
    SweepLambda {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-4, 1e-3, 1e-2])]
        lambdas: Vec<f64>,
    },
    /// Paired runs with the configured λ and with λ = 0
    AblateWd,
    /// Render a records JSON file as a table
    Report { records: PathBuf },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code: 0 success, 1 usage error, 2 runtime error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = config::load(c.config.as_deref(), &c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig, fallback: &str) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(&path, s)?;
    Ok(path)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let common = &cli.common;
    match &cli.command {
        Command::Simulate => {
            let cfg = load_config(common)?;
            let dir = out_dir(&cfg, "snapshots");
            for snap in gen_all(&cfg.seeded_plan())? {
                let path = snap.write(&dir, &format!("snapshot_t{}", snap.meta.t))?;
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Distance { a, b, js } => {
            let ga = fit_gaussian_default(&FeatureMatrix::read_csv(a)?)?;
            let gb = fit_gaussian_default(&FeatureMatrix::read_csv(b)?)?;
            writeln!(out, "d={:.6}", wasserstein2_gaussian(&ga, &gb)?)?;
            if let Some(n) = js {
                let seed = derive_seed(common.seed.unwrap_or(0), 0, Purpose::JsEstimate);
                writeln!(out, "js={:.6}", js_divergence_mc(&ga, &gb, *n, seed)?)?;
            }
        }
        Command::Gate {
            prev,
            cur,
            arch,
            epsilon,
        } => {
            let mut cfg = load_config(common)?;
            if let Some(e) = epsilon {
                cfg.gate.epsilon = *e;
                cfg.gate.validate()?;
            }
            let prev_meta = SnapshotMeta::read(prev.with_extension("meta"))?;
            let cur_meta = SnapshotMeta::read(cur.with_extension("meta"))?;
            let eval = Surrogate::new(cfg.space.clone(), cfg.surrogate.clone())?;
            let init = match arch {
                Some(a) => InitArch::Fixed(a.parse()?),
                None => cfg.init.clone(),
            };
            let a = init.resolve(&cfg.space, &prev_meta, &eval)?;
            let h = accuracy_drop(&a, &prev_meta, &cur_meta, &eval)?;
            writeln!(out, "H_t={h:.4} adapt={}", should_adapt(h, &cfg.gate))?;
        }
        Command::Adapt => {
            let cfg = load_config(common)?;
            let dir = out_dir(&cfg, "run");
            let run = run_adaptation(&cfg)?;
            let path = write_run(&dir, &cfg, &run)?;
            write!(out, "{}", render_report(&std::fs::read_to_string(&path)?)?)?;
            writeln!(out, "records: {}", path.display())?;
        }
        Command::Oracle { step, prev, d_t } => {
            let cfg = load_config(common)?;
            let snaps = gen_all(&cfg.seeded_plan())?;
            let meta = &snaps
                .get(step.wrapping_sub(1))
                .ok_or(Error::InvalidStep {
                    step: *step,
                    len: snaps.len(),
                })?
                .meta;
            let eval = Surrogate::new(cfg.space.clone(), cfg.surrogate.clone())?;
            let objective = match (prev, d_t) {
                (Some(p), Some(d)) => {
                    let prev: Architecture = p.parse()?;
                    prev.validate(&cfg.space)?;
                    Objective::Reward {
                        prev,
                        d_t: *d,
                        lambda: cfg.trainer.lambda,
                    }
                }
                _ => Objective::Accuracy,
            };
            let best = oracle_best(&cfg.space, meta, &eval, &objective)?;
            writeln!(
                out,
                "arch={} value={:.6} V={:.6} madds={:.3}",
                best.arch, best.value, best.accuracy, best.madds
            )?;
        }
        Command::SweepLambda { lambdas } => {
            let cfg = load_config(common)?;
            let rows = lambda_sweep(&cfg, lambdas)?;
            writeln!(out, "{:>10}  {:>7}  {:>9}  architecture", "lambda", "V", "MAdds")?;
            for r in &rows {
                writeln!(out, "{:>10.2e}  {:>7.4}  {:>9.2}  {}", r.lambda, r.v, r.madds, r.arch)?;
            }
            if let Some(dir) = &cfg.out_dir {
                let doc = json!({ "config": serde_json::to_value(&cfg)?, "rows": serde_json::to_value(&rows)? });
                writeln!(out, "sweep: {}", write_json(dir, "sweep.json", &doc)?.display())?;
            }
        }
        Command::AblateWd => {
            let cfg = load_config(common)?;
            let (with, _, rows) = wd_ablation(&cfg)?;
            writeln!(
                out,
                "{:>3}  {:>12}  {:>12}  {:>8}  {:>8}",
                "t", "MAdds_lambda", "MAdds_0", "V_lambda", "V_0"
            )?;
            for r in &rows {
                writeln!(
                    out,
                    "{:>3}  {:>12.2}  {:>12.2}  {:>8.4}  {:>8.4}",
                    r.t, r.madds_with, r.madds_without, r.v_with, r.v_without
                )?;
            }
            writeln!(out, "initial: {} ({:.2} MAdds)", with.initial_arch, madds(&with.initial_arch, &cfg.space))?;
            if let Some(dir) = &cfg.out_dir {
                let doc = json!({ "config": serde_json::to_value(&cfg)?, "rows": serde_json::to_value(&rows)? });
                writeln!(out, "ablation: {}", write_json(dir, "ablation.json", &doc)?.display())?;
            }
        }
        Command::Report { records } => {
            write!(out, "{}", render_report(&std::fs::read_to_string(records)?)?)?;
        }
    }
    Ok(())
}
