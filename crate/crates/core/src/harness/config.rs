use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::learner::UpdateMode;
use crate::policy::MMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MModeKind {
    PlainInverse,
    PseudoInverse,
}

/// Every experiment setting. All keys are required in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: u8,
    /// Gain of the real system matrix.
    pub kappa: f64,
    pub beta_deg: f64,
    pub beta_hat_deg: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Exploration shape `Σ`, row-major rows.
    pub exploration_shape: Vec<Vec<f64>>,
    pub tau: f64,
    pub horizon: usize,
    pub n_models: usize,
    /// `S`.
    pub rollouts: usize,
    /// `N_t`.
    pub rollout_steps: usize,
    pub rl_steps: usize,
    pub seed: u64,
    pub out_dir: String,
    pub m_mode: MModeKind,
    pub pinv_floor: f64,
    pub corrections: bool,
    pub dataset_window: usize,
    pub update_mode: UpdateMode,
    pub update_tau: f64,
    pub critic_floor: f64,
    pub residual_tolerance: f64,
    pub s0: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub x_bar: Vec<f64>,
    pub noise_cov: Vec<Vec<f64>>,
    pub clip_radius: f64,
    pub w_half_width: f64,
    pub lqr_state_weight: f64,
    pub lqr_input_weight: f64,
    /// Abort when fresh data fall outside `W` before the update.
    pub abort_on_outside_data: bool,
}

impl ExperimentConfig {
    /// Defaults for case 1 (`κ = 0.95`, `α = 0.05`) or case 2
    /// (`κ = 1.05`, `α = 0.01`).
    pub fn case_defaults(case: u8) -> Result<Self, HarnessError> {
        let (kappa, alpha) = match case {
            1 => (0.95, 0.05),
            2 => (1.05, 0.01),
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown case {other}, expected 1 or 2"
                )))
            }
        };
        let r = 0.95 * std::f64::consts::FRAC_1_SQRT_2;
        let s0 = 60f64.to_radians();
        Ok(Self {
            case,
            kappa,
            beta_deg: 22.0,
            beta_hat_deg: 20.0,
            alpha,
            gamma: 0.99,
            sigma: 1e-3,
            exploration_shape: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            tau: 1e-2,
            horizon: 10,
            n_models: 4,
            rollouts: 30,
            rollout_steps: 20,
            rl_steps: 100,
            seed: 1,
            out_dir: format!("out/case{case}"),
            m_mode: MModeKind::PseudoInverse,
            pinv_floor: 1e-8,
            corrections: true,
            dataset_window: 600,
            update_mode: UpdateMode::SafeConstrained,
            update_tau: 1e-8,
            critic_floor: 1e-6,
            residual_tolerance: 1e-10,
            s0: vec![s0.cos(), s0.sin()],
            x_ref: vec![r, r],
            x_bar: vec![r, r],
            noise_cov: vec![vec![1.0 / 300.0, 0.0], vec![0.0, 1.0 / 300.0]],
            clip_radius: 0.5e-2,
            w_half_width: 0.1,
            lqr_state_weight: 0.05,
            lqr_input_weight: 0.5,
            abort_on_outside_data: false,
        })
    }

    fn known_keys() -> BTreeSet<String> {
        let v =
            toml::Value::try_from(Self::case_defaults(1).expect("case 1")).expect("serializable");
        v.as_table().expect("table").keys().cloned().collect()
    }

    /// Parses TOML text, reporting every missing and unknown key at once.
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let known = Self::known_keys();
        let present: BTreeSet<String> = table.keys().cloned().collect();
        let missing: Vec<_> = known.difference(&present).cloned().collect();
        let unknown: Vec<_> = present.difference(&known).cloned().collect();
        if !missing.is_empty() || !unknown.is_empty() {
            let mut msg = String::new();
            if !missing.is_empty() {
                msg += &format!("missing keys: {}", missing.join(", "));
            }
            if !unknown.is_empty() {
                if !msg.is_empty() {
                    msg += "; ";
                }
                msg += &format!("unknown keys: {}", unknown.join(", "));
            }
            return Err(HarnessError::Config(msg));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    /// Switches to the other case preset, keeping every non-case setting.
    pub fn apply_case(&mut self, case: u8) -> Result<(), HarnessError> {
        let preset = Self::case_defaults(case)?;
        self.case = case;
        self.kappa = preset.kappa;
        self.alpha = preset.alpha;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        let positive = [
            ("kappa", self.kappa),
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("pinv_floor", self.pinv_floor),
            ("update_tau", self.update_tau),
            ("critic_floor", self.critic_floor),
            ("residual_tolerance", self.residual_tolerance),
            ("clip_radius", self.clip_radius),
            ("w_half_width", self.w_half_width),
            ("lqr_state_weight", self.lqr_state_weight),
            ("lqr_input_weight", self.lqr_input_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return err(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !matches!(self.case, 1 | 2) {
            return err(format!("case must be 1 or 2, got {}", self.case));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("n_models", self.n_models),
            ("rollouts", self.rollouts),
            ("rollout_steps", self.rollout_steps),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        if self.n_models != 4 {
            return err(format!(
                "n_models must be 4 (square polytope), got {}",
                self.n_models
            ));
        }
        if self.dataset_window < self.rollouts * self.rollout_steps {
            return err(format!(
                "dataset_window ({}) must cover one batch ({})",
                self.dataset_window,
                self.rollouts * self.rollout_steps
            ));
        }
        for (name, v) in [
            ("s0", &self.s0),
            ("x_ref", &self.x_ref),
            ("x_bar", &self.x_bar),
        ] {
            if v.len() != 2 {
                return err(format!("{name} must have 2 entries, got {}", v.len()));
            }
        }
        let shape = matrix("exploration_shape", &self.exploration_shape)?;
        if shape.clone().cholesky().is_none() || (&shape - shape.transpose()).amax() > 1e-12 {
            return err("exploration_shape must be symmetric positive definite".into());
        }
        let noise = matrix("noise_cov", &self.noise_cov)?;
        if (&noise - noise.transpose()).amax() > 1e-12
            || noise.symmetric_eigen().eigenvalues.min() < 0.0
        {
            return err("noise_cov must be symmetric positive semidefinite".into());
        }
        Ok(())
    }

    pub fn shape_matrix(&self) -> DMatrix<f64> {
        matrix("exploration_shape", &self.exploration_shape).expect("validated")
    }

    pub fn noise_matrix(&self) -> DMatrix<f64> {
        matrix("noise_cov", &self.noise_cov).expect("validated")
    }

    pub fn m_mode(&self) -> MMode {
        match self.m_mode {
            MModeKind::PlainInverse => MMode::PlainInverse,
            MModeKind::PseudoInverse => MMode::PseudoInverse {
                floor: self.pinv_floor,
            },
        }
    }

    pub fn vector(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
        return Err(HarnessError::Config(format!("{name} must be a 2×2 matrix")));
    }
    Ok(DMatrix::from_fn(2, 2, |r, c| rows[r][c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::case_defaults(2).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_config_lists_missing_keys() {
        let err = ExperimentConfig::from_toml_str("").unwrap_err().to_string();
        assert!(err.contains("missing keys"));
        for key in ["alpha", "kappa", "seed", "x_ref", "noise_cov"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = ExperimentConfig::case_defaults(1).unwrap().to_toml_string() + "bogus = 1\n";
        let err = ExperimentConfig::from_toml_str(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("unknown keys: bogus"), "{err}");
    }

    #[test]
    fn range_checks() {
        let mut cfg = ExperimentConfig::case_defaults(1).unwrap();
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::case_defaults(1).unwrap();
        cfg.exploration_shape = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(cfg.validate().is_err());
    }
}
