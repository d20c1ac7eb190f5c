//! Allocation policies and their trainers.
//!
//! A [`Policy`] maps the observation `[r_t, ρ_t, 1]` linearly to one logit per asset
//! and takes the softmax, so every action lies on the simplex. In stochastic mode
//! Gaussian noise with std `sigma` is added to the logits before the softmax; the
//! score of that noise drives [`reinforce_train`]. [`cem_train`] is a derivative-free
//! cross-check over the same parameterization.

mod ablation;
mod baseline;
mod train;

use std::io::Write;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::ReturnPanel;
use crate::env::{Observation, PortfolioWeights};
use crate::seed::{self, StreamRng};
use crate::{Error, Result};

pub use ablation::{run_ablations, AblationAggregate, AblationReport, AblationRow, Trainer, Variant};
pub use baseline::{BaselineSample, RegimeValueBaseline, BASELINE_RIDGE};
pub use train::{
    cem_train, cem_update, expected_reward, reinforce_train, score_gradient, write_progress_csv, ProgressRow,
    TrainOutcome,
};

/// Parameter norm beyond which training aborts.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub schema_version: u32,
    pub n_assets: usize,
    pub n_regimes: usize,
    /// Names of the input columns, in order: `r_*`, `rho_*`, `bias`.
    pub feature_layout: Vec<String>,
    /// `n_assets` rows of `n_assets + n_regimes + 1` weights.
    pub theta: Vec<Vec<f64>>,
    pub sigma: f64,
    /// Free-form pointer to the regime model the policy was trained against.
    #[serde(default)]
    pub regime_model: Option<String>,
}

impl Policy {
    /// All-zero parameters: the deterministic action is equal weight.
    pub fn zeros(n_assets: usize, n_regimes: usize, sigma: f64) -> Result<Self> {
        let d = n_assets + n_regimes + 1;
        Self::from_theta(vec![vec![0.0; d]; n_assets], n_regimes, sigma)
    }

    pub fn from_theta(theta: Vec<Vec<f64>>, n_regimes: usize, sigma: f64) -> Result<Self> {
        let n_assets = theta.len();
        let mut feature_layout: Vec<String> = (0..n_assets).map(|i| format!("r_{i}")).collect();
        feature_layout.extend((0..n_regimes).map(|k| format!("rho_{k}")));
        feature_layout.push("bias".into());
        let p = Self {
            schema_version: crate::SCHEMA_VERSION,
            n_assets,
            n_regimes,
            feature_layout,
            theta,
            sigma,
            regime_model: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 {
            return Err(Error::validation("policy needs at least one asset"));
        }
        let d = self.n_features();
        if self.theta.len() != self.n_assets || self.theta.iter().any(|row| row.len() != d) {
            return Err(Error::validation(format!("theta must be {} x {d}", self.n_assets)));
        }
        if self.theta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("theta has non-finite entries"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::validation("sigma must be finite and > 0"));
        }
        if self.feature_layout.len() != d {
            return Err(Error::validation("feature layout does not match theta"));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_assets + self.n_regimes + 1
    }

    /// `[r, ρ, 1]`.
    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        if obs.returns.len() != self.n_assets {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets,
                got: obs.returns.len(),
            });
        }
        if obs.regime_probs.len() != self.n_regimes {
            return Err(Error::DimensionMismatch {
                expected: self.n_regimes,
                got: obs.regime_probs.len(),
            });
        }
        let mut phi = Vec::with_capacity(self.n_features());
        phi.extend_from_slice(&obs.returns);
        phi.extend_from_slice(&obs.regime_probs);
        phi.push(1.0);
        Ok(phi)
    }

    pub fn logits(&self, phi: &[f64]) -> Vec<f64> {
        self.theta
            .iter()
            .map(|row| row.iter().zip(phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn act_deterministic(&self, obs: &Observation) -> Result<PortfolioWeights> {
        let phi = self.features(obs)?;
        PortfolioWeights::new(softmax(&self.logits(&phi)))
    }

    /// Stochastic action; also returns the standard-normal draws used.
    pub fn act_stochastic(&self, obs: &Observation, rng: &mut StreamRng) -> Result<(PortfolioWeights, Vec<f64>)> {
        let phi = self.features(obs)?;
        let eps: Vec<f64> = (0..self.n_assets).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = self
            .logits(&phi)
            .iter()
            .zip(&eps)
            .map(|(m, e)| m + self.sigma * e)
            .collect();
        Ok((PortfolioWeights::new(softmax(&z))?, eps))
    }

    pub fn param_norm(&self) -> f64 {
        self.theta.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn flat_theta(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }

    pub fn with_flat_theta(&self, flat: &[f64]) -> Result<Self> {
        let d = self.n_features();
        if flat.len() != self.n_assets * d {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets * d,
                got: flat.len(),
            });
        }
        let mut p = self.clone();
        p.theta = flat.chunks(d).map(|c| c.to_vec()).collect();
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.schema_version != crate::SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported policy schema version {}",
                p.schema_version
            )));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Deterministic action when `rng` is `None`, otherwise a noisy one.
pub fn policy_act(policy: &Policy, obs: &Observation, rng: Option<&mut StreamRng>) -> Result<PortfolioWeights> {
    match rng {
        None => policy.act_deterministic(obs),
        Some(rng) => Ok(policy.act_stochastic(obs, rng)?.0),
    }
}

pub fn equal_weight_policy(n_assets: usize, n_regimes: usize) -> Result<Policy> {
    Policy::zeros(n_assets, n_regimes, 1.0)
}

/// Best in-sample Sharpe ratio among equal weight, the N vertices and
/// `n_candidates` uniform draws from the simplex, in that order (first wins ties).
/// Falls back to equal weight when no candidate has a defined Sharpe ratio.
pub fn sharpe_optimal_static(panel: &ReturnPanel, n_candidates: usize, seed: u64) -> Result<PortfolioWeights> {
    let n = panel.n_assets();
    let mut candidates = vec![vec![1.0 / n as f64; n]];
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        candidates.push(v);
    }
    let mut rng = seed::stream(seed, "sharpe-opt", 0);
    for _ in 0..n_candidates {
        let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = draws.iter().sum();
        candidates.push(draws.into_iter().map(|d| d / s).collect());
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, w) in candidates.iter().enumerate() {
        let series: Vec<f64> = panel
            .returns()
            .iter()
            .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect();
        if let Ok(s) = crate::metrics::sharpe(&series) {
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, i));
            }
        }
    }
    let idx = best.map_or(0, |(_, i)| i);
    PortfolioWeights::from_action(&candidates[idx])
}

/// Per-step hinge terms `ψ_t = max(0, −ΔU_t − η)` with
/// `ΔU_t = U_{t:T} − U_{t+1:T}` and `U_{t:T} = Σ_τ δ^{τ−t} R_τ`.
///
/// Defined for `t < T−1` (the last step has no successor); its entry is 0.
pub fn utility_penalty_terms(rewards: &[f64], delta: f64, eta: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let mut u_next = vec![0.0; t_len + 1];
    for t in (0..t_len).rev() {
        u_next[t] = rewards[t] + delta * u_next[t + 1];
    }
    (0..t_len)
        .map(|t| {
            if t + 1 >= t_len {
                0.0
            } else {
                (-(u_next[t] - u_next[t + 1]) - eta).max(0.0)
            }
        })
        .collect()
}

/// `Σ_t ψ_t` over the reward path.
pub fn utility_path_penalty(rewards: &[f64], delta: f64, eta: f64) -> f64 {
    utility_penalty_terms(rewards, delta, eta).iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_episodes: usize,
    pub delta: f64,
    pub eta: f64,
    pub penalty_weight: f64,
    pub seed: u64,
    /// Exploration std in logit space.
    pub sigma: f64,
    pub cem_population: usize,
    pub cem_elite_frac: f64,
    pub cem_init_std: f64,
    pub cem_min_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 250_000,
            learning_rate: 1e-4,
            gamma: 0.99,
            batch_episodes: 8,
            delta: 0.99,
            eta: 0.05,
            penalty_weight: 0.1,
            seed: 0,
            sigma: 0.3,
            cem_population: 32,
            cem_elite_frac: 0.2,
            cem_init_std: 1.0,
            cem_min_std: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation("gamma must be in (0, 1]"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::validation("learning_rate must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::validation("delta must be in (0, 1]"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::validation("eta must be >= 0"));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::validation("penalty_weight must be >= 0"));
        }
        if self.batch_episodes == 0 || self.cem_population == 0 {
            return Err(Error::validation("batch_episodes and cem_population must be >= 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::validation("sigma must be > 0"));
        }
        if !(self.cem_elite_frac > 0.0 && self.cem_elite_frac <= 1.0) {
            return Err(Error::validation("cem_elite_frac must be in (0, 1]"));
        }
        if !(self.cem_init_std >= 0.0 && self.cem_min_std >= 0.0) {
            return Err(Error::validation("CEM std settings must be >= 0"));
        }
        Ok(())
    }
}
