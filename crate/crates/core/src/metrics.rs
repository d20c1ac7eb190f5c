//! Performance metrics and deterministic backtests.
//!
//! Metrics use simple per-period returns with no annualization and no risk-free
//! adjustment; pass excess returns if that is wanted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::Policy;
use crate::env::{Observation, PortfolioEnv, TraceRow};
use crate::{Error, Result};

/// `mean / sample std`.
pub fn sharpe(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::UndefinedMetric("sharpe needs at least two returns".into()));
    }
    let sd = crate::dataio::sample_std(returns);
    if sd == 0.0 {
        return Err(Error::UndefinedMetric("sharpe of a zero-variance series".into()));
    }
    Ok(returns.iter().sum::<f64>() / returns.len() as f64 / sd)
}

/// `(mean − target) / sqrt(mean_t min(r_t − target, 0)²)`, averaging over all periods.
pub fn sortino(returns: &[f64], target: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::UndefinedMetric("sortino needs at least two returns".into()));
    }
    let n = returns.len() as f64;
    let dd = (returns.iter().map(|r| (r - target).min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    if dd == 0.0 {
        return Err(Error::UndefinedMetric("sortino with no returns below target".into()));
    }
    Ok((returns.iter().sum::<f64>() / n - target) / dd)
}

/// Most negative `wealth[t] / running_peak[t] − 1`; 0 for a curve that never dips.
pub fn max_drawdown(wealth: &[f64]) -> Result<f64> {
    if wealth.is_empty() {
        return Err(Error::validation("max drawdown of an empty curve"));
    }
    if wealth.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::validation("wealth must be positive and finite"));
    }
    let mut peak = wealth[0];
    let mut worst = 0.0f64;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.min(w / peak - 1.0);
    }
    Ok(worst)
}

/// `(wealth[s+window] / wealth[s])^{1/window} − 1` for every start `s`, keyed by the
/// first year of the window. `wealth` holds one more point than `years`.
pub fn rolling_cagr(wealth: &[f64], years: &[i32], window: usize) -> Result<Vec<(i32, f64)>> {
    if years.len() + 1 != wealth.len() {
        return Err(Error::validation(format!(
            "wealth has {} points but {} years were given",
            wealth.len(),
            years.len()
        )));
    }
    if window == 0 || window >= wealth.len() {
        return Err(Error::validation(format!(
            "CAGR window {window} does not fit a curve of {} points",
            wealth.len()
        )));
    }
    if wealth.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::validation("wealth must be positive"));
    }
    Ok((0..wealth.len() - window)
        .map(|s| {
            let ratio = wealth[s + window] / wealth[s];
            let cagr = if window == 1 {
                ratio - 1.0
            } else {
                ratio.powf(1.0 / window as f64) - 1.0
            };
            (years[s], cagr)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestOptions {
    pub cagr_window: usize,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self { cagr_window: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub schema_version: u32,
    pub years: Vec<i32>,
    /// Capital before the first step followed by capital after each step.
    pub wealth_curve: Vec<f64>,
    pub per_step_returns: Vec<f64>,
    /// `None` when undefined (zero variance).
    pub sharpe: Option<f64>,
    /// `None` when undefined (no downside).
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub final_log_value: f64,
    pub cagr_window: usize,
    pub rolling_cagr: Vec<(i32, f64)>,
    pub reward_trace: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub shock_steps: Vec<usize>,
    pub reset_steps: Vec<usize>,
    /// Per-step environment trace; written separately as CSV.
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl BacktestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns: `step, year, wealth, return, reward`. Row 0 is the starting capital.
    pub fn write_wealth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "year", "wealth", "return", "reward"])?;
        w.write_record(["0", "", &self.wealth_curve[0].to_string(), "", ""])?;
        for t in 0..self.per_step_returns.len() {
            w.write_record([
                (t + 1).to_string(),
                self.years[t].to_string(),
                self.wealth_curve[t + 1].to_string(),
                self.per_step_returns[t].to_string(),
                self.reward_trace[t].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: `year, cagr`.
    pub fn write_cagr_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["year", "cagr"])?;
        for (y, c) in &self.rolling_cagr {
            w.write_record([y.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Spans of consecutive crisis years inside `years`, as `(start, end)` inclusive.
pub fn stress_spans(years: &[i32], crisis_years: &[i32]) -> Vec<(i32, i32)> {
    let mut hits: Vec<i32> = years.iter().copied().filter(|y| crisis_years.contains(y)).collect();
    hits.sort_unstable();
    hits.dedup();
    let mut spans: Vec<(i32, i32)> = Vec::new();
    for y in hits {
        match spans.last_mut() {
            Some(last) if last.1 + 1 == y => last.1 = y,
            _ => spans.push((y, y)),
        }
    }
    spans
}

/// Columns: `start_year, end_year, label`.
pub fn write_stress_overlay_csv<W: Write>(spans: &[(i32, i32)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start_year", "end_year", "label"])?;
    for (a, b) in spans {
        w.write_record([a.to_string(), b.to_string(), "stress".to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one deterministic episode from reset, choosing actions with `act`.
pub fn backtest_with<F>(env: &mut PortfolioEnv, opts: &BacktestOptions, mut act: F) -> Result<BacktestReport>
where
    F: FnMut(&Observation) -> Result<Vec<f64>>,
{
    let mut obs = env.reset();
    let initial = env.state().capital;
    let mut wealth = vec![initial];
    let mut returns = Vec::with_capacity(env.horizon());
    let mut rewards = Vec::with_capacity(env.horizon());
    let mut weights = Vec::with_capacity(env.horizon());
    let mut shock_steps = Vec::new();
    let mut reset_steps = Vec::new();
    let mut trace = Vec::with_capacity(env.horizon());
    loop {
        let a = act(&obs)?;
        let out = env.step(&a)?;
        let t = env.state().t;
        trace.push(env.trace_row(&out));
        wealth.push(env.state().capital);
        returns.push(out.breakdown.gross_return);
        rewards.push(out.reward);
        weights.push(env.state().prev_weights.as_slice().to_vec());
        if out.breakdown.shock_applied {
            shock_steps.push(t);
        }
        if out.breakdown.reset_applied {
            reset_steps.push(t);
        }
        obs = out.observation;
        if out.done {
            break;
        }
    }
    let years = env.data().years.clone();
    let rolling = if opts.cagr_window < wealth.len() {
        rolling_cagr(&wealth, &years, opts.cagr_window)?
    } else {
        Vec::new()
    };
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(BacktestReport {
        schema_version: crate::SCHEMA_VERSION,
        sharpe: defined(sharpe(&returns))?,
        sortino: defined(sortino(&returns, 0.0))?,
        max_drawdown: max_drawdown(&wealth)?,
        final_log_value: (wealth[wealth.len() - 1] / initial).ln(),
        cagr_window: opts.cagr_window,
        rolling_cagr: rolling,
        years,
        wealth_curve: wealth,
        per_step_returns: returns,
        reward_trace: rewards,
        weights,
        shock_steps,
        reset_steps,
        trace,
    })
}

/// Backtest of `policy` in deterministic mode.
pub fn backtest(policy: &Policy, env: &mut PortfolioEnv, opts: &BacktestOptions) -> Result<BacktestReport> {
    backtest_with(env, opts, |obs| Ok(policy.act_deterministic(obs)?.into_inner()))
}

/// Backtest of a fixed allocation held every step.
pub fn backtest_static(weights: &[f64], env: &mut PortfolioEnv, opts: &BacktestOptions) -> Result<BacktestReport> {
    backtest_with(env, opts, |_| Ok(weights.to_vec()))
}
