//! Regime-aware portfolio environment.
//!
//! The agent observes `[r_t, ρ_t]`, picks simplex weights, and receives either a
//! Sharpe-style step reward on a trailing window of realized portfolio returns or
//! the regime-aware reward built from per-regime moments. Rewards are clipped;
//! capital takes scheduled shocks and periodic resets.
//!
//! Step numbering is 1-based: the `t`-th call to [`PortfolioEnv::step`] is step `t`,
//! so with the default schedule shocks land on steps 25, 50, ... and resets on 30, 60, ...
//! Within one step the order is shock, return, reward, reset.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::ReturnPanel;
use crate::regimes::RegimePosterior;
use crate::seed::{self, StreamRng};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;
const ACTION_TOL: f64 = 1e-6;
const CAPITAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    SharpeStep,
    RegimeAware,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharpe_step" => Ok(RewardMode::SharpeStep),
            "regime_aware" => Ok(RewardMode::RegimeAware),
            other => Err(Error::validation(format!("unknown reward mode {other:?}"))),
        }
    }
}

/// `fixed` applies the shock on every `shock_interval`-th step; `bernoulli` applies
/// it independently on each step with probability `1 / shock_interval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockMode {
    Fixed,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub lambda_cost: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub reset_interval: usize,
    pub shock_interval: usize,
    pub shock_size: f64,
    pub epsilon: f64,
    pub var_window: usize,
    /// Per-regime risk aversion. Empty means: spread linearly over [1, 3] with
    /// regimes ordered from calmest to most volatile.
    pub gamma_k: Vec<f64>,
    pub no_clip: bool,
    pub no_cost: bool,
    pub no_reset: bool,
    pub no_shock: bool,
    pub reward_mode: RewardMode,
    pub initial_capital: f64,
    pub shock_mode: ShockMode,
    pub shock_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            lambda_cost: 0.002,
            clip_lo: -0.03,
            clip_hi: 0.03,
            reset_interval: 30,
            shock_interval: 25,
            shock_size: -0.05,
            epsilon: 1e-8,
            var_window: 10,
            gamma_k: Vec::new(),
            no_clip: false,
            no_cost: false,
            no_reset: false,
            no_shock: false,
            reward_mode: RewardMode::SharpeStep,
            initial_capital: 1.0,
            shock_mode: ShockMode::Fixed,
            shock_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_lo < self.clip_hi) {
            return Err(Error::validation("clip_lo must be < clip_hi"));
        }
        if self.reset_interval == 0 || self.shock_interval == 0 || self.var_window == 0 {
            return Err(Error::validation("intervals and var_window must be >= 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be > 0"));
        }
        if !(self.lambda_cost >= 0.0) {
            return Err(Error::validation("lambda_cost must be >= 0"));
        }
        if self.gamma_k.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::validation("gamma_k entries must be > 0"));
        }
        if !(self.initial_capital > 0.0) {
            return Err(Error::validation("initial_capital must be > 0"));
        }
        if !(self.shock_size > -1.0) {
            return Err(Error::validation("shock_size must be > -1"));
        }
        Ok(())
    }

    /// Flat `key = value` rendering (TOML syntax), keys named as the fields.
    pub fn to_kv_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_kv_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// γ_k to use with `stats`: the configured list, or the variance-ordered default.
    pub fn resolved_gamma(&self, stats: &RegimeStats) -> Result<Vec<f64>> {
        if self.gamma_k.is_empty() {
            Ok(stats.default_gamma_k())
        } else if self.gamma_k.len() == stats.k() {
            Ok(self.gamma_k.clone())
        } else {
            Err(Error::validation(format!(
                "gamma_k has {} entries but there are {} regimes",
                self.gamma_k.len(),
                stats.k()
            )))
        }
    }
}

/// Long-only fully-invested portfolio weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    /// Accepts weights on the simplex within 1e-9.
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidAction("weights must be finite and non-negative".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidAction(format!("weights sum to {s}")));
        }
        Ok(Self(w))
    }

    /// Accepts an action within 1e-6 of the simplex and renormalizes the drift.
    pub fn from_action(w: &[f64]) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !v.is_finite() || *v < -ACTION_TOL) {
            return Err(Error::InvalidAction(format!("action {w:?} is off the simplex")));
        }
        let clamped: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
        let s: f64 = clamped.iter().sum();
        if (s - 1.0).abs() > ACTION_TOL {
            return Err(Error::InvalidAction(format!("action weights sum to {s}")));
        }
        Ok(Self(clamped.into_iter().map(|v| v / s).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Agent input `s_t = [r_t, ρ_t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub returns: Vec<f64>,
    pub regime_probs: Vec<f64>,
}

/// Per-regime mean vector μ_k and diagonal covariance Σ_k of asset returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl RegimeStats {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if means.is_empty() || means.len() != variances.len() {
            return Err(Error::validation(
                "regime stats need matching non-empty means and variances",
            ));
        }
        let n = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != n) {
            return Err(Error::validation("regime stats rows differ in length"));
        }
        if variances.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(Error::validation("regime variances must be >= 0"));
        }
        Ok(Self { means, variances })
    }

    /// Sample moments of `rows` grouped by hard `labels`. Regimes with fewer than
    /// two observations fall back to the pooled moments of all rows.
    pub fn estimate(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(Error::validation("regime stats need aligned non-empty rows and labels"));
        }
        let n = rows[0].len();
        let moments = |sel: &[&Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
            let m = sel.len() as f64;
            let mean: Vec<f64> = (0..n).map(|j| sel.iter().map(|r| r[j]).sum::<f64>() / m).collect();
            let var = (0..n)
                .map(|j| {
                    if sel.len() < 2 {
                        return 0.0;
                    }
                    sel.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (m - 1.0)
                })
                .collect();
            (mean, var)
        };
        let all: Vec<&Vec<f64>> = rows.iter().collect();
        let pooled = moments(&all);
        let mut means = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for c in 0..k {
            let sel: Vec<&Vec<f64>> = rows
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(r, _)| r)
                .collect();
            let (m, v) = if sel.len() >= 2 { moments(&sel) } else { pooled.clone() };
            means.push(m);
            variances.push(v);
        }
        Self::new(means, variances)
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn n_assets(&self) -> usize {
        self.means[0].len()
    }

    /// γ_k linearly spaced over [1, 3], assigned by ascending mean asset variance.
    pub fn default_gamma_k(&self) -> Vec<f64> {
        let k = self.k();
        if k == 1 {
            return vec![1.0];
        }
        let level: Vec<f64> = self
            .variances
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| level[a].total_cmp(&level[b]).then(a.cmp(&b)));
        let mut gamma = vec![0.0; k];
        for (rank, &regime) in order.iter().enumerate() {
            gamma[regime] = 1.0 + 2.0 * rank as f64 / (k - 1) as f64;
        }
        gamma
    }
}

/// `λ · ‖w − w_prev‖₁`.
pub fn transaction_cost(w: &[f64], w_prev: &[f64], lambda: f64) -> f64 {
    lambda * w.iter().zip(w_prev).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Sharpe-style step reward `(gross − cost) / (std(trailing) + ε)`.
///
/// `trailing` already contains the current gross return. With fewer than two
/// entries the volatility is undefined and the raw net return is returned.
pub fn sharpe_step_reward(gross: f64, cost: f64, trailing: &[f64], epsilon: f64) -> f64 {
    let net = gross - cost;
    if trailing.len() < 2 {
        return net;
    }
    net / (crate::dataio::sample_std(trailing) + epsilon)
}

/// Intermediate terms of the regime-aware reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRewardTerms {
    /// μ_t = Σ_k ρ_k wᵀμ_k
    pub regime_mu: f64,
    /// σ²_t = Σ_k ρ_k Σ_i w_i² Σ_k,ii
    pub regime_var: f64,
    /// Σ_k ρ_k γ_k σ_k²
    pub risk_weighted_var: f64,
    pub cost: f64,
    pub reward: f64,
}

/// `R_t = (μ_t − λ‖w − w_prev‖₁) / (sqrt(Σ_k ρ_k γ_k σ_k²) + ε)`.
///
/// The cost term is dropped when `cfg.no_cost` is set.
pub fn regime_aware_reward(
    w: &[f64],
    w_prev: &[f64],
    rho: &[f64],
    stats: &RegimeStats,
    cfg: &EnvConfig,
) -> Result<RegimeRewardTerms> {
    let gamma = cfg.resolved_gamma(stats)?;
    regime_aware_reward_with(w, w_prev, rho, stats, &gamma, cfg)
}

fn regime_aware_reward_with(
    w: &[f64],
    w_prev: &[f64],
    rho: &[f64],
    stats: &RegimeStats,
    gamma: &[f64],
    cfg: &EnvConfig,
) -> Result<RegimeRewardTerms> {
    if rho.len() != stats.k() {
        return Err(Error::DimensionMismatch {
            expected: stats.k(),
            got: rho.len(),
        });
    }
    if w.len() != stats.n_assets() || w_prev.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: stats.n_assets(),
            got: w.len(),
        });
    }
    let mut mu = 0.0;
    let mut var = 0.0;
    let mut weighted = 0.0;
    for k in 0..stats.k() {
        let e_k: f64 = w.iter().zip(&stats.means[k]).map(|(a, m)| a * m).sum();
        let v_k: f64 = w.iter().zip(&stats.variances[k]).map(|(a, s)| a * a * s).sum();
        mu += rho[k] * e_k;
        var += rho[k] * v_k;
        weighted += rho[k] * gamma[k] * v_k;
    }
    let cost = if cfg.no_cost {
        0.0
    } else {
        transaction_cost(w, w_prev, cfg.lambda_cost)
    };
    Ok(RegimeRewardTerms {
        regime_mu: mu,
        regime_var: var,
        risk_weighted_var: weighted,
        cost,
        reward: (mu - cost) / (weighted.sqrt() + cfg.epsilon),
    })
}

/// Everything that went into one emitted reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub gross_return: f64,
    /// Cost charged to the reward (0 with `no_cost`).
    pub cost: f64,
    pub sharpe_reward: f64,
    pub regime_mu: f64,
    pub regime_var: f64,
    pub regime_reward: f64,
    /// Reward of the configured mode before clipping.
    pub raw_reward: f64,
    pub clipped_reward: f64,
    pub shock_applied: bool,
    pub reset_applied: bool,
}

/// Returns and regime posteriors replayed by the environment, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub years: Vec<i32>,
    pub returns: Vec<Vec<f64>>,
    pub regime_probs: Vec<Vec<f64>>,
}

impl MarketData {
    pub fn new(panel: &ReturnPanel, posterior: &RegimePosterior) -> Result<Self> {
        if panel.n_periods() != posterior.probs.len() {
            return Err(Error::validation(format!(
                "panel has {} rows but posterior has {}",
                panel.n_periods(),
                posterior.probs.len()
            )));
        }
        if panel.n_periods() == 0 {
            return Err(Error::validation("empty market data"));
        }
        for p in &posterior.probs {
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-8 {
                return Err(Error::validation("posterior rows must sum to 1"));
            }
        }
        Ok(Self {
            years: panel.years().to_vec(),
            returns: panel.returns().to_vec(),
            regime_probs: posterior.probs.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.returns[0].len()
    }

    pub fn k(&self) -> usize {
        self.regime_probs[0].len()
    }
}

/// Mutable episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Completed steps.
    pub t: usize,
    pub capital: f64,
    pub prev_weights: PortfolioWeights,
    pub trailing_returns: VecDeque<f64>,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub breakdown: RewardBreakdown,
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub weights: Vec<f64>,
    pub gross: f64,
    pub cost: f64,
    pub reward: f64,
    pub capital: f64,
    pub shock_applied: bool,
    pub reset_applied: bool,
}

/// CSV columns: `t, w_0..w_{N-1}, gross, cost, reward, capital, shock_applied, reset_applied`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = rows.first().map_or(0, |r| r.weights.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("w_{i}")));
    header.extend(
        ["gross", "cost", "reward", "capital", "shock_applied", "reset_applied"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.weights.iter().map(|v| v.to_string()));
        rec.extend([
            r.gross.to_string(),
            r.cost.to_string(),
            r.reward.to_string(),
            r.capital.to_string(),
            r.shock_applied.to_string(),
            r.reset_applied.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    cfg: EnvConfig,
    data: Arc<MarketData>,
    stats: Arc<RegimeStats>,
    gamma: Vec<f64>,
    state: EnvState,
    shock_rng: StreamRng,
}

impl PortfolioEnv {
    /// Builds an environment over an aligned panel and posterior.
    pub fn new(cfg: EnvConfig, panel: &ReturnPanel, posterior: &RegimePosterior, stats: RegimeStats) -> Result<Self> {
        Self::from_shared(cfg, Arc::new(MarketData::new(panel, posterior)?), Arc::new(stats))
    }

    /// Builds an environment over shared read-only data; cheap to call per episode.
    pub fn from_shared(cfg: EnvConfig, data: Arc<MarketData>, stats: Arc<RegimeStats>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::validation("empty market data"));
        }
        if stats.k() != data.k() {
            return Err(Error::validation(format!(
                "regime stats cover {} regimes but posterior has {}",
                stats.k(),
                data.k()
            )));
        }
        if stats.n_assets() != data.n_assets() {
            return Err(Error::validation(format!(
                "regime stats cover {} assets but panel has {}",
                stats.n_assets(),
                data.n_assets()
            )));
        }
        let gamma = cfg.resolved_gamma(&stats)?;
        let state = Self::fresh_state(&cfg, data.n_assets());
        let shock_rng = seed::stream(cfg.shock_seed, "env-shock", 0);
        Ok(Self {
            cfg,
            data,
            stats,
            gamma,
            state,
            shock_rng,
        })
    }

    fn fresh_state(cfg: &EnvConfig, n: usize) -> EnvState {
        EnvState {
            t: 0,
            capital: cfg.initial_capital,
            prev_weights: PortfolioWeights::uniform(n),
            trailing_returns: VecDeque::with_capacity(cfg.var_window),
            cursor: 0,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn data(&self) -> &Arc<MarketData> {
        &self.data
    }

    pub fn regime_stats(&self) -> &Arc<RegimeStats> {
        &self.stats
    }

    pub fn gamma_k(&self) -> &[f64] {
        &self.gamma
    }

    pub fn n_assets(&self) -> usize {
        self.data.n_assets()
    }

    pub fn n_regimes(&self) -> usize {
        self.data.k()
    }

    /// Episode length (one step per data row).
    pub fn horizon(&self) -> usize {
        self.data.len()
    }

    pub fn is_done(&self) -> bool {
        self.state.cursor >= self.data.len()
    }

    pub fn reset(&mut self) -> Observation {
        self.state = Self::fresh_state(&self.cfg, self.data.n_assets());
        self.shock_rng = seed::stream(self.cfg.shock_seed, "env-shock", 0);
        self.observation()
    }

    /// Observation at the cursor (the last row once the episode is done).
    pub fn observation(&self) -> Observation {
        let i = self.state.cursor.min(self.data.len() - 1);
        Observation {
            returns: self.data.returns[i].clone(),
            regime_probs: self.data.regime_probs[i].clone(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::validation("step called on a finished episode"));
        }
        if action.len() != self.n_assets() {
            return Err(Error::DimensionMismatch {
                expected: self.n_assets(),
                got: action.len(),
            });
        }
        let w = PortfolioWeights::from_action(action)?;
        let cfg = &self.cfg;
        let step_no = self.state.t + 1;
        let i = self.state.cursor;
        let r = &self.data.returns[i];
        let rho = &self.data.regime_probs[i];

        let gross: f64 = w.as_slice().iter().zip(r).map(|(a, b)| a * b).sum();

        let shock_applied = !cfg.no_shock
            && match cfg.shock_mode {
                ShockMode::Fixed => step_no.is_multiple_of(cfg.shock_interval),
                ShockMode::Bernoulli => self.shock_rng.random::<f64>() < 1.0 / cfg.shock_interval as f64,
            };
        let mut capital = self.state.capital;
        if shock_applied {
            capital = (capital * (1.0 + cfg.shock_size)).max(CAPITAL_FLOOR);
        }
        capital = (capital * (1.0 + gross)).max(CAPITAL_FLOOR);

        if self.state.trailing_returns.len() == cfg.var_window {
            self.state.trailing_returns.pop_front();
        }
        self.state.trailing_returns.push_back(gross);
        let trailing: Vec<f64> = self.state.trailing_returns.iter().copied().collect();

        let terms = regime_aware_reward_with(
            w.as_slice(),
            self.state.prev_weights.as_slice(),
            rho,
            &self.stats,
            &self.gamma,
            cfg,
        )?;
        let cost = terms.cost;
        let sharpe = sharpe_step_reward(gross, cost, &trailing, cfg.epsilon);
        let raw = match cfg.reward_mode {
            RewardMode::SharpeStep => sharpe,
            RewardMode::RegimeAware => terms.reward,
        };
        let clipped = if cfg.no_clip {
            raw
        } else {
            raw.clamp(cfg.clip_lo, cfg.clip_hi)
        };

        let reset_applied = !cfg.no_reset && step_no.is_multiple_of(cfg.reset_interval);
        if reset_applied {
            capital = cfg.initial_capital;
        }

        self.state.capital = capital;
        self.state.prev_weights = w;
        self.state.t = step_no;
        self.state.cursor += 1;
        let done = self.is_done();
        Ok(StepOutcome {
            observation: self.observation(),
            reward: clipped,
            done,
            breakdown: RewardBreakdown {
                gross_return: gross,
                cost,
                sharpe_reward: sharpe,
                regime_mu: terms.regime_mu,
                regime_var: terms.regime_var,
                regime_reward: terms.reward,
                raw_reward: raw,
                clipped_reward: clipped,
                shock_applied,
                reset_applied,
            },
        })
    }

    pub fn trace_row(&self, outcome: &StepOutcome) -> TraceRow {
        TraceRow {
            t: self.state.t,
            weights: self.state.prev_weights.as_slice().to_vec(),
            gross: outcome.breakdown.gross_return,
            cost: outcome.breakdown.cost,
            reward: outcome.reward,
            capital: self.state.capital,
            shock_applied: outcome.breakdown.shock_applied,
            reset_applied: outcome.breakdown.reset_applied,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_stats(k: usize, n: usize) -> RegimeStats {
        RegimeStats::new(vec![vec![0.01; n]; k], vec![vec![0.01; n]; k]).unwrap()
    }

    fn make_env(cfg: EnvConfig, rows: Vec<Vec<f64>>) -> PortfolioEnv {
        let t = rows.len();
        let years: Vec<i32> = (0..t as i32).map(|y| 1900 + y).collect();
        let n = rows[0].len();
        let panel = ReturnPanel::new(years.clone(), (0..n).map(|j| format!("A{j}")).collect(), rows).unwrap();
        let post = RegimePosterior::from_probs(years, vec![vec![0.7, 0.3]; t], 0.0);
        PortfolioEnv::new(cfg, &panel, &post, flat_stats(2, n)).unwrap()
    }

    #[test]
    fn transaction_cost_examples() {
        assert_eq!(transaction_cost(&[0.3, 0.7], &[0.3, 0.7], 0.002), 0.0);
        assert!((transaction_cost(&[1.0, 0.0], &[0.0, 1.0], 0.002) - 0.004).abs() < 1e-18);
        assert!((transaction_cost(&[0.6, 0.4], &[0.5, 0.5], 0.002) - 0.0004).abs() < 1e-15);
    }

    #[test]
    fn sharpe_step_examples() {
        assert_eq!(sharpe_step_reward(0.0, 0.0, &[], 1e-8), 0.0);
        // Sample std of {0.01, 0.02, 0.03} is exactly 0.01 in real arithmetic.
        let buf = [0.01, 0.02, 0.03];
        let r = sharpe_step_reward(0.02, 0.0, &buf, 1e-8);
        assert!((r - 0.02 / (0.01 + 1e-8)).abs() < 1e-9);
        assert!((r - 2.0).abs() < 1e-5);
        let r = sharpe_step_reward(0.01, 0.0, &[0.01, 0.01, 0.01], 1e-8);
        assert!((r - 1e6).abs() < 1e-3);
        assert_eq!(r.clamp(-0.03, 0.03), 0.03);
    }

    #[test]
    fn regime_aware_examples() {
        let stats = RegimeStats::new(
            vec![vec![0.04, 0.02], vec![-0.05, 0.01]],
            vec![vec![0.01, 0.01], vec![0.09, 0.02]],
        )
        .unwrap();
        let cfg = EnvConfig {
            gamma_k: vec![1.0, 3.0],
            ..EnvConfig::default()
        };
        let w = [0.5, 0.5];
        let t = regime_aware_reward(&w, &w, &[1.0, 0.0], &stats, &cfg).unwrap();
        let want = 0.03 / (0.005f64.sqrt() + 1e-8);
        assert!((t.reward - want).abs() < 1e-12);
        assert!((t.reward - 0.4243).abs() < 1e-4);

        let mut doubled = cfg.clone();
        doubled.gamma_k = vec![2.0, 6.0];
        doubled.epsilon = 1e-300;
        let mut base = cfg.clone();
        base.epsilon = 1e-300;
        let rho = [0.4, 0.6];
        let wp = [0.9, 0.1];
        let a = regime_aware_reward(&w, &wp, &rho, &stats, &base).unwrap().reward;
        let b = regime_aware_reward(&w, &wp, &rho, &stats, &doubled).unwrap().reward;
        assert!((b - a / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn default_gamma_orders_by_variance() {
        let stats = RegimeStats::new(vec![vec![0.0]; 3], vec![vec![0.09], vec![0.01], vec![0.04]]).unwrap();
        assert_eq!(stats.default_gamma_k(), vec![3.0, 1.0, 2.0]);
        assert_eq!(flat_stats(1, 2).default_gamma_k(), vec![1.0]);
    }

    #[test]
    fn construction_checks() {
        let env = make_env(EnvConfig::default(), vec![vec![0.1, 0.0], vec![0.0, 0.1]]);
        let obs = env.observation();
        assert_eq!(obs.returns, vec![0.1, 0.0]);
        assert_eq!(obs.regime_probs, vec![0.7, 0.3]);
        assert_eq!(env.state().capital, 1.0);

        let years = vec![1, 2, 3];
        let panel = ReturnPanel::new(years.clone(), vec!["A".into()], vec![vec![0.0]; 3]).unwrap();
        let short = RegimePosterior::from_probs(vec![1, 2], vec![vec![1.0]; 2], 0.0);
        assert!(PortfolioEnv::new(EnvConfig::default(), &panel, &short, flat_stats(1, 1)).is_err());
        let post = RegimePosterior::from_probs(years, vec![vec![0.5, 0.5]; 3], 0.0);
        assert!(PortfolioEnv::new(EnvConfig::default(), &panel, &post, flat_stats(3, 1)).is_err());
    }

    #[test]
    fn action_tolerance() {
        let mut env = make_env(EnvConfig::default(), vec![vec![0.1, 0.0]; 3]);
        assert!(matches!(env.step(&[0.6, 0.6]), Err(Error::InvalidAction(_))));
        assert!(env.step(&[0.5 + 4e-7, 0.5]).is_ok());
        assert!(matches!(env.step(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn schedule_and_clipping() {
        let rows: Vec<Vec<f64>> = (0..150).map(|i| vec![0.01 * ((i % 7) as f64 - 3.0), 0.02]).collect();
        let mut env = make_env(EnvConfig::default(), rows);
        let mut flags = Vec::new();
        loop {
            let out = env.step(&[0.5, 0.5]).unwrap();
            assert!((-0.03..=0.03).contains(&out.reward));
            flags.push((env.state().t, out.breakdown.shock_applied, out.breakdown.reset_applied));
            if env.state().t == 150 {
                assert_eq!(env.state().capital, 1.0);
            }
            if out.done {
                break;
            }
        }
        assert_eq!(flags.len(), 150);
        let shocks: Vec<usize> = flags.iter().filter(|f| f.1).map(|f| f.0).collect();
        let resets: Vec<usize> = flags.iter().filter(|f| f.2).map(|f| f.0).collect();
        assert_eq!(shocks, vec![25, 50, 75, 100, 125, 150]);
        assert_eq!(resets, vec![30, 60, 90, 120, 150]);
        assert!(env.step(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn empty_buffer_reward_is_gross_without_shaping() {
        let cfg = EnvConfig {
            no_clip: true,
            no_cost: true,
            no_reset: true,
            no_shock: true,
            var_window: 1,
            ..EnvConfig::default()
        };
        let mut env = make_env(cfg, vec![vec![0.07, -0.02], vec![0.03, 0.05], vec![-0.2, 0.1]]);
        for w in [[0.2, 0.8], [1.0, 0.0], [0.5, 0.5]] {
            let out = env.step(&w).unwrap();
            assert_eq!(out.reward, out.breakdown.gross_return);
        }
    }

    #[test]
    fn bernoulli_shocks_are_seeded() {
        let cfg = EnvConfig {
            shock_mode: ShockMode::Bernoulli,
            shock_seed: 17,
            ..EnvConfig::default()
        };
        let run = |cfg: &EnvConfig| {
            let mut env = make_env(cfg.clone(), vec![vec![0.01, 0.0]; 500]);
            let mut n = Vec::new();
            while !env.is_done() {
                if env.step(&[0.5, 0.5]).unwrap().breakdown.shock_applied {
                    n.push(env.state().t);
                }
            }
            n
        };
        let a = run(&cfg);
        assert_eq!(a, run(&cfg));
        assert!(a.len() > 5 && a.len() < 40, "{}", a.len());
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = EnvConfig {
            gamma_k: vec![1.0, 2.0, 3.0],
            no_clip: true,
            reward_mode: RewardMode::RegimeAware,
            ..EnvConfig::default()
        };
        let s = cfg.to_kv_string().unwrap();
        assert!(s.contains("lambda_cost = 0.002"));
        assert!(s.contains("reward_mode = \"regime_aware\""));
        assert_eq!(EnvConfig::from_kv_str(&s).unwrap(), cfg);
        assert_eq!(EnvConfig::from_kv_str("clip_hi = 0.05").unwrap().clip_hi, 0.05);
        assert!(EnvConfig::from_kv_str("clip_lo = 0.1\nclip_hi = 0.0").is_err());
    }

    proptest! {
        #[test]
        fn rewards_stay_within_clip_bounds(
            rows in proptest::collection::vec(proptest::collection::vec(-0.6f64..0.8, 3), 1..80),
            actions in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 80),
            regime_aware in any::<bool>(),
        ) {
            let cfg = EnvConfig {
                reward_mode: if regime_aware { RewardMode::RegimeAware } else { RewardMode::SharpeStep },
                ..EnvConfig::default()
            };
            let mut env = make_env(cfg, rows);
            let mut i = 0;
            while !env.is_done() {
                let a = &actions[i % actions.len()];
                let s: f64 = a.iter().sum::<f64>() + 1e-9;
                let w: Vec<f64> = a.iter().map(|v| (v + 1e-9 / 3.0) / s).collect();
                let out = env.step(&w).unwrap();
                prop_assert!(out.reward >= -0.03 && out.reward <= 0.03);
                prop_assert!(out.breakdown.cost >= 0.0);
                prop_assert!(env.state().capital > 0.0);
                i += 1;
            }
            prop_assert_eq!(i, env.horizon());
        }
    }
}
