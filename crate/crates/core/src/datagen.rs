//! Synthetic growing-data snapshots.
//!
//! Each class `c` is an isotropic Gaussian `N(p_c, σ²I)` around a prototype
//! on the radius-`R` sphere. Two growth scenarios are supported: volume growth
//! (fixed classes, more samples) and class growth (new classes appear). In
//! both, the rows of an earlier snapshot are an exact prefix of every later
//! one, so `D_t = D_{t-1} ∪ D_t^new` holds by construction.
//!
//! The pooled moments are analytic: mean = average prototype, covariance =
//! `σ²I` + prototype scatter (up to sampling noise).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::FeatureMatrix;
use crate::rng::{derive_seed, rng_from_seed, Purpose};

pub const DEFAULT_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Fixed label set; `steps` are volume fractions in `(0, 1]`.
    VolumeGrowth,
    /// Growing label set; `steps` are class counts.
    ClassGrowth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPlan {
    pub scenario: Scenario,
    pub steps: Vec<f64>,
    pub feature_dim: usize,
    pub sigma: f64,
    pub radius: f64,
    /// Volume growth: total rows at fraction 1.0. Class growth: rows per class.
    pub base_samples: usize,
    /// Class count for volume growth (ignored for class growth).
    pub n_classes: usize,
    pub max_classes: usize,
    pub seed: u64,
}

impl Default for GrowthPlan {
    /// Volume growth over `{10, 20, 40, 80, 100}%` with 10 classes.
    fn default() -> Self {
        Self {
            scenario: Scenario::VolumeGrowth,
            steps: vec![0.1, 0.2, 0.4, 0.8, 1.0],
            feature_dim: 8,
            sigma: 1.0,
            radius: DEFAULT_RADIUS,
            base_samples: 2000,
            n_classes: 10,
            max_classes: 10,
            seed: 0,
        }
    }
}

impl GrowthPlan {
    pub fn class_growth(steps: Vec<usize>, feature_dim: usize, seed: u64) -> Self {
        let max_classes = steps.last().copied().unwrap_or(2).max(2);
        Self {
            scenario: Scenario::ClassGrowth,
            steps: steps.into_iter().map(|c| c as f64).collect(),
            feature_dim,
            base_samples: 100,
            n_classes: max_classes,
            max_classes,
            seed,
            ..Self::default()
        }
    }

    pub fn volume_growth(steps: Vec<f64>, n_classes: usize, base_samples: usize, seed: u64) -> Self {
        Self {
            scenario: Scenario::VolumeGrowth,
            steps,
            base_samples,
            n_classes,
            max_classes: n_classes.max(2),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps.is_empty() {
            return bad("growth plan has no steps".into());
        }
        if self.steps.windows(2).any(|w| w[1] < w[0]) {
            return bad("growth steps must be non-decreasing".into());
        }
        if self.feature_dim < 2 {
            return bad("feature dimension must be at least 2".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive".into());
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return bad("radius must be non-negative".into());
        }
        if self.base_samples == 0 {
            return bad("base sample count must be positive".into());
        }
        match self.scenario {
            Scenario::VolumeGrowth => {
                if self.steps.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                    return bad("volume fractions must lie in (0, 1]".into());
                }
                if self.n_classes == 0 || self.n_classes > self.max_classes {
                    return bad("n_classes must be in 1..=max_classes".into());
                }
            }
            Scenario::ClassGrowth => {
                for &c in &self.steps {
                    if c < 1.0 || c.fract() != 0.0 || c > self.max_classes as f64 {
                        return bad(format!(
                            "class count {c} must be an integer in 1..={}",
                            self.max_classes
                        ));
                    }
                }
            }
        }
        if self.max_classes < 2 {
            return bad("max_classes must be at least 2".into());
        }
        Ok(())
    }

    fn rows_at(&self, step: f64) -> usize {
        match self.scenario {
            Scenario::VolumeGrowth => ((step * self.base_samples as f64).round() as usize).max(2),
            Scenario::ClassGrowth => step as usize * self.base_samples,
        }
    }

    fn classes_at(&self, step: f64) -> usize {
        match self.scenario {
            Scenario::VolumeGrowth => self.n_classes,
            Scenario::ClassGrowth => step as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    /// 1-based time step.
    pub t: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub volume_fraction: f64,
    pub max_classes: usize,
}

impl SnapshotMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.volume_fraction > 0.0 && self.volume_fraction <= 1.0) {
            return Err(Error::InvalidData(format!(
                "volume fraction {} outside (0, 1]",
                self.volume_fraction
            )));
        }
        if self.n_classes == 0 || self.n_classes > self.max_classes {
            return Err(Error::InvalidData(format!(
                "n_classes {} outside 1..={}",
                self.n_classes, self.max_classes
            )));
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "t={}", self.t);
        let _ = writeln!(s, "n_classes={}", self.n_classes);
        let _ = writeln!(s, "n_samples={}", self.n_samples);
        let _ = writeln!(s, "volume_fraction={}", self.volume_fraction);
        let _ = writeln!(s, "max_classes={}", self.max_classes);
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut t = None;
        let mut n_classes = None;
        let mut n_samples = None;
        let mut volume_fraction = None;
        let mut max_classes = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigKey {
                line: i + 1,
                key: line.to_string(),
                message: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |m: &str| Error::ConfigKey {
                line: i + 1,
                key: key.to_string(),
                message: m.to_string(),
            };
            let int = || value.parse::<usize>().map_err(|_| err("expected an integer"));
            match key {
                "t" => t = Some(int()?),
                "n_classes" => n_classes = Some(int()?),
                "n_samples" => n_samples = Some(int()?),
                "max_classes" => max_classes = Some(int()?),
                "volume_fraction" => {
                    volume_fraction = Some(value.parse::<f64>().map_err(|_| err("expected a number"))?)
                }
                _ => return Err(err("unknown metadata key")),
            }
        }
        let missing = |k: &str| Error::InvalidData(format!("metadata is missing `{k}`"));
        let meta = Self {
            t: t.ok_or_else(|| missing("t"))?,
            n_classes: n_classes.ok_or_else(|| missing("n_classes"))?,
            n_samples: n_samples.ok_or_else(|| missing("n_samples"))?,
            volume_fraction: volume_fraction.ok_or_else(|| missing("volume_fraction"))?,
            max_classes: max_classes.ok_or_else(|| missing("max_classes"))?,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub meta: SnapshotMeta,
}

impl Snapshot {
    /// Writes `<stem>.csv`, `<stem>.labels` and `<stem>.meta` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        self.features.write_csv(&csv)?;
        let labels: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(dir.join(format!("{stem}.labels")), labels)?;
        std::fs::write(dir.join(format!("{stem}.meta")), self.meta.to_kv_string())?;
        Ok(csv)
    }

    /// Reads a snapshot from its CSV path; the `.labels` and `.meta`
    /// sidecars must sit next to it.
    pub fn read(csv: impl AsRef<Path>) -> Result<Self> {
        let csv = csv.as_ref();
        let features = FeatureMatrix::read_csv(csv)?;
        let meta = SnapshotMeta::read(csv.with_extension("meta"))?;
        let labels = std::fs::read_to_string(csv.with_extension("labels"))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse()
                    .map_err(|_| Error::InvalidData(format!("label line {}: `{l}`", i + 1)))
            })
            .collect::<Result<Vec<usize>>>()?;
        let snap = Self {
            features,
            labels,
            meta,
        };
        snap.check()?;
        Ok(snap)
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() || self.meta.n_samples != self.features.rows() {
            return Err(Error::InvalidData(format!(
                "{} labels, {} rows, meta says {}",
                self.labels.len(),
                self.features.rows(),
                self.meta.n_samples
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.meta.n_classes) {
            return Err(Error::InvalidData(format!(
                "label {l} outside 0..{}",
                self.meta.n_classes
            )));
        }
        Ok(())
    }
}

/// Maps a snapshot to the feature matrix whose Gaussian fit is compared.
pub trait FeatureExtractor {
    fn extract(&self, snapshot: &Snapshot) -> Result<FeatureMatrix>;
}

/// Uses the raw snapshot features.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, snapshot: &Snapshot) -> Result<FeatureMatrix> {
        Ok(snapshot.features.clone())
    }
}

/// Class prototypes on the sphere of radius [`DEFAULT_RADIUS`].
pub fn gen_prototypes(n_classes: usize, q: usize, seed: u64) -> DMatrix<f64> {
    gen_prototypes_with_radius(n_classes, q, seed, DEFAULT_RADIUS)
}

/// Row `c` depends only on `(seed, c)`, so a smaller request is a prefix of
/// any larger one.
pub fn gen_prototypes_with_radius(n_classes: usize, q: usize, seed: u64, radius: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n_classes, q);
    for c in 0..n_classes {
        let mut rng = rng_from_seed(derive_seed(seed, c as u64, Purpose::Prototype));
        let v = loop {
            let v = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        out.set_row(c, &(v * radius).transpose());
    }
    out
}

pub fn gen_snapshot(plan: &GrowthPlan, step_index: usize) -> Result<Snapshot> {
    if step_index >= plan.steps.len() {
        return Err(Error::InvalidStep {
            step: step_index,
            len: plan.steps.len(),
        });
    }
    plan.validate()?;
    let step = plan.steps[step_index];
    let q = plan.feature_dim;
    let n_classes = plan.classes_at(step);
    let rows = plan.rows_at(step);
    let protos = gen_prototypes_with_radius(n_classes, q, plan.seed, plan.radius);

    let mut data = Vec::with_capacity(rows * q);
    let mut labels = Vec::with_capacity(rows);
    let mut push = |label: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        for j in 0..q {
            data.push(protos[(label, j)] + plan.sigma * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(label);
    };
    match plan.scenario {
        Scenario::VolumeGrowth => {
            let mut rng = rng_from_seed(derive_seed(plan.seed, 0, Purpose::Data));
            for i in 0..rows {
                push(i % n_classes, &mut rng);
            }
        }
        Scenario::ClassGrowth => {
            for c in 0..n_classes {
                let mut rng = rng_from_seed(derive_seed(plan.seed, c as u64, Purpose::ClassSamples));
                for _ in 0..plan.base_samples {
                    push(c, &mut rng);
                }
            }
        }
    }
    let volume_fraction = match plan.scenario {
        Scenario::VolumeGrowth => step,
        Scenario::ClassGrowth => 1.0,
    };
    Ok(Snapshot {
        features: FeatureMatrix::new(rows, q, data)?,
        labels,
        meta: SnapshotMeta {
            t: step_index + 1,
            n_classes,
            n_samples: rows,
            volume_fraction,
            max_classes: plan.max_classes,
        },
    })
}

pub fn gen_all(plan: &GrowthPlan) -> Result<Vec<Snapshot>> {
    (0..plan.steps.len()).map(|i| gen_snapshot(plan, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{fit_gaussian_default, wasserstein2_gaussian};
    use std::collections::BTreeSet;

    #[test]
    fn prototypes_are_deterministic_prefixed_and_on_sphere() {
        let a = gen_prototypes(20, 8, 1);
        assert_eq!(a, gen_prototypes(20, 8, 1));
        let b = gen_prototypes(10, 8, 1);
        assert_eq!(a.rows(0, 10), b.rows(0, 10));
        for r in a.row_iter() {
            assert!((r.norm() - DEFAULT_RADIUS).abs() <= 1e-9);
        }
    }

    #[test]
    fn volume_growth_nests() {
        let plan = GrowthPlan::volume_growth(vec![0.2, 1.0], 4, 1000, 3);
        let s0 = gen_snapshot(&plan, 0).unwrap();
        let s1 = gen_snapshot(&plan, 1).unwrap();
        assert_eq!(s0.features.rows(), 200);
        assert_eq!(s1.features.rows(), 1000);
        assert_eq!(s0.features, s1.features.head(200).unwrap());
        assert_eq!(s0.labels[..], s1.labels[..200]);
        assert_eq!(s0.meta.volume_fraction, 0.2);
    }

    #[test]
    fn class_growth_nests_labels() {
        let plan = GrowthPlan::class_growth(vec![2, 4], 8, 3);
        let s0 = gen_snapshot(&plan, 0).unwrap();
        let s1 = gen_snapshot(&plan, 1).unwrap();
        let l0: BTreeSet<_> = s0.labels.iter().collect();
        let l1: BTreeSet<_> = s1.labels.iter().collect();
        assert!(l1.is_superset(&l0));
        assert_eq!(l1.len(), 4);
        assert_eq!(s0.features, s1.features.head(s0.features.rows()).unwrap());
    }

    #[test]
    fn out_of_range_step() {
        let plan = GrowthPlan::class_growth(vec![2, 4], 8, 3);
        assert!(matches!(gen_snapshot(&plan, 2), Err(Error::InvalidStep { step: 2, len: 2 })));
    }

    #[test]
    fn class_growth_shifts_more_than_volume_growth() {
        // 400 -> 800 rows in both scenarios.
        let vol = GrowthPlan {
            feature_dim: 8,
            sigma: 1.0,
            ..GrowthPlan::volume_growth(vec![0.5, 1.0], 4, 800, 3)
        };
        let cls = GrowthPlan {
            base_samples: 200,
            ..GrowthPlan::class_growth(vec![2, 4], 8, 3)
        };
        let shift = |plan: &GrowthPlan| {
            let a = fit_gaussian_default(&gen_snapshot(plan, 0).unwrap().features).unwrap();
            let b = fit_gaussian_default(&gen_snapshot(plan, 1).unwrap().features).unwrap();
            assert_eq!(gen_snapshot(plan, 1).unwrap().features.rows(), 800);
            wasserstein2_gaussian(&b, &a).unwrap()
        };
        let (v, c) = (shift(&vol), shift(&cls));
        assert!(c > v, "class shift {c} <= volume shift {v}");
    }

    #[test]
    fn class_growth_shift_is_monotone_on_average() {
        let steps = vec![2, 4, 6, 8];
        let mut mean = vec![0.0; steps.len()];
        for seed in 0..10 {
            let plan = GrowthPlan::class_growth(steps.clone(), 8, seed);
            let snaps = gen_all(&plan).unwrap();
            let base = fit_gaussian_default(&snaps[0].features).unwrap();
            for (i, s) in snaps.iter().enumerate() {
                let g = fit_gaussian_default(&s.features).unwrap();
                mean[i] += wasserstein2_gaussian(&g, &base).unwrap() / 10.0;
            }
        }
        assert!(mean.windows(2).all(|w| w[1] >= w[0]), "{mean:?}");
    }

    #[test]
    fn snapshot_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = GrowthPlan::class_growth(vec![2, 3], 4, 1);
        let snap = gen_snapshot(&plan, 1).unwrap();
        let csv = snap.write(dir.path(), "snap").unwrap();
        assert_eq!(Snapshot::read(&csv).unwrap(), snap);
    }

    #[test]
    fn meta_parse_errors_name_the_line() {
        let err = SnapshotMeta::from_kv_str("t=1\nn_classes=x\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { line: 2, .. }), "{err}");
    }
}
