//! Adaptation condition: adapt only when the previous architecture loses
//! more than `ε` accuracy on the grown dataset.

use serde::{Deserialize, Serialize};

use crate::datagen::SnapshotMeta;
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::search_space::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub epsilon: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { epsilon: 0.02 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        // +inf is allowed and disables adaptation.
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gate.epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `H_t = Φ(D_{t−1}; α_{t−1}) − Φ(D_t; α_{t−1})`. Negative when the previous
/// architecture does better on the new data.
pub fn accuracy_drop(
    prev_arch: &Architecture,
    prev_meta: &SnapshotMeta,
    cur_meta: &SnapshotMeta,
    eval: &dyn Evaluator,
) -> Result<f64> {
    Ok(eval.accuracy(prev_arch, prev_meta)? - eval.accuracy(prev_arch, cur_meta)?)
}

/// Strict `h > ε`.
pub fn should_adapt(h: f64, cfg: &GateConfig) -> bool {
    h > cfg.epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{complexity_score, oracle_best, Objective, Surrogate, SurrogateConfig};
    use crate::search_space::SpaceConfig;

    fn meta_with_score(volume_fraction: f64) -> SnapshotMeta {
        SnapshotMeta {
            t: 1,
            n_classes: 1,
            n_samples: 10,
            volume_fraction,
            max_classes: 2,
        }
    }

    fn surrogate() -> Surrogate {
        Surrogate::new(SpaceConfig::toy(), SurrogateConfig::default()).unwrap()
    }

    #[test]
    fn boundary_is_strict() {
        let cfg = GateConfig::default();
        assert!(should_adapt(0.021, &cfg));
        assert!(!should_adapt(0.02, &cfg));
        assert!(!should_adapt(-0.5, &cfg));
        assert!(!should_adapt(1e9, &GateConfig { epsilon: f64::INFINITY }));
    }

    #[test]
    fn identical_metas_give_zero_drop() {
        let sur = surrogate();
        let m = meta_with_score(0.6);
        let a = SpaceConfig::toy().max_arch();
        assert_eq!(accuracy_drop(&a, &m, &m, &sur).unwrap(), 0.0);
    }

    #[test]
    fn moving_away_from_the_optimum_drops_accuracy() {
        let sur = surrogate();
        let space = SpaceConfig::toy();
        // s = 0.3 -> s = 0.9
        let prev = meta_with_score(0.6);
        let cur = SnapshotMeta {
            n_classes: 8,
            max_classes: 10,
            volume_fraction: 1.0,
            ..prev.clone()
        };
        assert!((complexity_score(&prev).unwrap() - 0.3).abs() < 1e-12);
        assert!(complexity_score(&cur).unwrap() > 0.9);
        let best = oracle_best(&space, &prev, &sur, &Objective::Accuracy).unwrap();
        assert!(accuracy_drop(&best.arch, &prev, &cur, &sur).unwrap() > 0.0);
    }

    #[test]
    fn moving_towards_the_peak_gives_negative_drop() {
        let sur = surrogate();
        let big = SpaceConfig::toy().max_arch();
        // The max arch peaks at high complexity.
        let prev = meta_with_score(0.2);
        let cur = meta_with_score(1.0);
        let h = accuracy_drop(&big, &prev, &cur, &sur).unwrap();
        assert!(h < 0.0, "{h}");
        assert!(!should_adapt(h, &GateConfig::default()));
    }

    #[test]
    fn monotone_in_h_and_antitone_in_epsilon() {
        let hs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.005).collect();
        for eps in [0.0, 0.01, 0.02, 0.05] {
            let cfg = GateConfig { epsilon: eps };
            let d: Vec<bool> = hs.iter().map(|&h| should_adapt(h, &cfg)).collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
        for &h in &hs {
            let d: Vec<bool> = [0.0, 0.01, 0.02, 0.05]
                .iter()
                .map(|&e| should_adapt(h, &GateConfig { epsilon: e }))
                .collect();
            assert!(d.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
