//! Regime-switching Monte Carlo over bootstrapped regime return pools.
//!
//! Each path simulates a regime chain, draws one historical cross-asset return
//! vector per step from the current regime's pool, and compounds a fixed-weight
//! strategy rebalanced every step. Paths run in parallel on independent RNG
//! streams derived from `(seed, path_index)`, so summaries are bit-identical at
//! any thread count.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result, SCHEMA_VERSION};

const ROW_TOL: f64 = 1e-12;

/// Row-stochastic K×K regime transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix(Vec<Vec<f64>>);

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::validation("transition matrix is empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::validation("transition matrix must be square"));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::validation(format!(
                    "transition row {i} has entries outside [0,1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::validation(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(Self(rows))
    }

    /// Renormalizes rows before validating; for matrices estimated elsewhere
    /// (e.g. a fitted HMM, row-stochastic only to ~1e-9).
    pub fn normalized(mut rows: Vec<Vec<f64>>) -> Result<Self> {
        for row in rows.iter_mut() {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
        Self::new(rows)
    }

    /// The two-regime normal/stress chain: 90% normal persistence, 60% stress persistence.
    pub fn normal_stress() -> Self {
        Self(vec![vec![0.9, 0.1], vec![0.4, 0.6]])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.0
    }
}

/// Starting regime of every simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialRegime {
    Fixed(usize),
    Distribution(Vec<f64>),
}

/// Draws an index from a probability row by inverse CDF. Zero-probability
/// entries are never returned.
fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    // Rounding left u above the accumulated mass: take the last reachable state.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn initial_state<R: Rng + ?Sized>(initial: &InitialRegime, k: usize, rng: &mut R) -> Result<usize> {
    match initial {
        InitialRegime::Fixed(i) if *i < k => Ok(*i),
        InitialRegime::Fixed(i) => Err(Error::validation(format!(
            "initial regime {i} out of range for K = {k}"
        ))),
        InitialRegime::Distribution(p) => {
            if p.len() != k || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|v| *v < 0.0) {
                return Err(Error::validation(
                    "initial regime distribution is not a length-K simplex",
                ));
            }
            Ok(sample_categorical(p, rng))
        }
    }
}

/// Simulates a length-`t` regime path.
pub fn simulate_chain<R: Rng + ?Sized>(
    t: usize,
    p: &TransitionMatrix,
    initial: &InitialRegime,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut path = Vec::with_capacity(t);
    if t == 0 {
        return Ok(path);
    }
    let mut z = initial_state(initial, p.k(), rng)?;
    path.push(z);
    for _ in 1..t {
        z = sample_categorical(p.row(z), rng);
        path.push(z);
    }
    Ok(path)
}

/// Historical cross-asset return vectors grouped by regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReturnPools {
    pools: Vec<Vec<Vec<f64>>>,
}

impl RegimeReturnPools {
    pub fn new(pools: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = pools
            .iter()
            .flatten()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::validation("all regime pools are empty"))?;
        for (k, pool) in pools.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::validation(format!("regime {k} has an empty return pool")));
            }
            if pool.iter().any(|v| v.len() != n) {
                return Err(Error::validation("pool vectors differ in length"));
            }
        }
        Ok(Self { pools })
    }

    /// Groups `rows` by `labels` into `k` pools.
    pub fn from_labels(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::validation("rows and labels differ in length"));
        }
        let mut pools = vec![Vec::new(); k];
        for (row, &l) in rows.iter().zip(labels) {
            if l >= k {
                return Err(Error::validation(format!("label {l} out of range for K = {k}")));
            }
            pools[l].push(row.clone());
        }
        Self::new(pools)
    }

    pub fn k(&self) -> usize {
        self.pools.len()
    }

    pub fn n_assets(&self) -> usize {
        self.pools[0][0].len()
    }

    pub fn pool(&self, k: usize) -> &[Vec<f64>] {
        &self.pools[k]
    }
}

/// Draws one pooled return vector per step, uniformly with replacement from the
/// current regime's pool.
pub fn sample_regime_returns<R: Rng + ?Sized>(
    path: &[usize],
    pools: &RegimeReturnPools,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    path.iter()
        .map(|&z| {
            let pool = pools
                .pools
                .get(z)
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::validation(format!("no return pool for regime {z}")))?;
            Ok(pool[rng.random_range(0..pool.len())].clone())
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Coefficients (a0, a1, a2) of the macro-driven stress-entry logit.
pub type MacroCoeffs = (f64, f64, f64);

/// Intercept logit(0.1) keeps the 10% base stress entry at zero macro signals.
pub fn default_macro_coeffs() -> MacroCoeffs {
    (logit(0.1), -5.0, -5.0)
}

/// Transition row for a two-regime (0 = normal, 1 = stress) macro-driven chain.
///
/// From the normal regime the stress-entry probability becomes
/// `logistic(a0 + a1 * risk_premium + a2 * yield_spread)`. From the stress regime
/// the persistence probability is the base persistence shifted on the logit scale
/// by the same signal terms `a1 * risk_premium + a2 * yield_spread`.
pub fn macro_adjusted_row(
    p_base: &TransitionMatrix,
    regime: usize,
    risk_premium: f64,
    yield_spread: f64,
    coeffs: MacroCoeffs,
) -> Result<Vec<f64>> {
    if p_base.k() != 2 {
        return Err(Error::Unsupported(format!(
            "macro-driven transitions need exactly 2 regimes, got {}",
            p_base.k()
        )));
    }
    if regime > 1 {
        return Err(Error::validation(format!("regime {regime} out of range for K = 2")));
    }
    let (a0, a1, a2) = coeffs;
    let signal = a1 * risk_premium + a2 * yield_spread;
    let z = if regime == 0 {
        a0 + signal
    } else {
        logit(p_base.row(1)[1]) + signal
    };
    if z.is_nan() {
        return Err(Error::Numerical("macro transition logit is NaN".into()));
    }
    let stress = logistic(z);
    Ok(vec![1.0 - stress, stress])
}

/// Macro signal configuration: asset column indices for the two spreads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSpec {
    pub coeffs: MacroCoeffs,
    /// (equity, t-bill) column indices.
    pub risk_premium: (usize, usize),
    /// (corporate, long treasury) column indices.
    pub yield_spread: (usize, usize),
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|v| *v < 0.0 || !v.is_finite()) || (w.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
        return Err(Error::validation("strategy weights must lie on the simplex"));
    }
    Ok(())
}

/// Terminal cumulative return `exp(Σ ln(1 + wᵀr_t)) - 1` with fixed weights.
///
/// A step whose portfolio return is `<= -1` wipes the path out and yields exactly `-1`.
pub fn compound_strategy(returns: &[Vec<f64>], weights: &[f64]) -> Result<f64> {
    let n = weights.len();
    let mut log_wealth = 0.0;
    for r in returns {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
        let port: f64 = weights.iter().zip(r).map(|(w, x)| w * x).sum();
        if port <= -1.0 {
            return Ok(-1.0);
        }
        log_wealth += port.ln_1p();
    }
    Ok(log_wealth.exp_m1())
}

/// Wealth after each step (length T+1, starting at `initial`), fixed weights.
pub fn wealth_path(returns: &[Vec<f64>], weights: &[f64], initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len() + 1);
    let mut w = initial;
    out.push(w);
    for r in returns {
        let port: f64 = weights.iter().zip(r).map(|(a, b)| a * b).sum();
        w *= 1.0 + port;
        out.push(w);
    }
    out
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub horizon_years: usize,
    pub n_paths: usize,
    pub transition: TransitionMatrix,
    pub initial_regime: InitialRegime,
    pub pools: RegimeReturnPools,
    pub strategy_weights: Vec<f64>,
    pub seed: u64,
    pub macro_spec: Option<MacroSpec>,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_years == 0 {
            return Err(Error::validation("horizon must be >= 1"));
        }
        if self.n_paths == 0 {
            return Err(Error::validation("n_paths must be >= 1"));
        }
        if self.transition.k() != self.pools.k() {
            return Err(Error::validation(format!(
                "transition has {} regimes but pools have {}",
                self.transition.k(),
                self.pools.k()
            )));
        }
        check_weights(&self.strategy_weights, self.pools.n_assets())?;
        if let Some(m) = &self.macro_spec {
            let n = self.pools.n_assets();
            let cols = [m.risk_premium.0, m.risk_premium.1, m.yield_spread.0, m.yield_spread.1];
            if cols.iter().any(|&c| c >= n) {
                return Err(Error::validation("macro signal column out of range"));
            }
            if self.transition.k() != 2 {
                return Err(Error::Unsupported("macro-driven simulation needs K = 2".into()));
            }
        }
        Ok(())
    }
}

/// Terminal-return distribution summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub schema_version: u32,
    pub mean: f64,
    pub median: f64,
    /// 2.5% empirical quantile.
    pub ci_low: f64,
    /// 97.5% empirical quantile.
    pub ci_high: f64,
    pub var5: f64,
    pub cvar5: f64,
    pub n_paths: usize,
    pub horizon: usize,
    pub total_loss_paths: usize,
    #[serde(skip)]
    pub terminal_returns: Vec<f64>,
}

impl McSummary {
    /// Summarizes terminal returns (one per path, in path order).
    pub fn from_terminals(terminal_returns: Vec<f64>, horizon: usize, total_loss_paths: usize) -> Result<Self> {
        let n = terminal_returns.len();
        if n == 0 {
            return Err(Error::validation("no terminal returns to summarize"));
        }
        let mean = terminal_returns.iter().sum::<f64>() / n as f64;
        let mut sorted = terminal_returns.clone();
        sorted.sort_by(f64::total_cmp);
        let (var5, cvar5) = empirical_var_cvar(&terminal_returns, 0.05)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            mean,
            median: quantile_sorted(&sorted, 0.5),
            ci_low: quantile_sorted(&sorted, 0.025),
            ci_high: quantile_sorted(&sorted, 0.975),
            var5,
            cvar5,
            n_paths: n,
            horizon,
            total_loss_paths,
            terminal_returns,
        })
    }

    /// CSV with columns `path, terminal_return`.
    pub fn write_terminal_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["path", "terminal_return"])?;
        for (i, v) in self.terminal_returns.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical lower `alpha`-quantile and the mean of all samples at or below it.
///
/// VaR is the ascending order statistic at index `ceil(alpha * n) - 1` (clamped at 0).
/// Both are reported on the return scale, so CVaR can be positive when even the tail gains.
pub fn empirical_var_cvar(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::validation("VaR of an empty sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must be in (0,1), got {alpha}")));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("non-finite sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((alpha * samples.len() as f64).ceil() as usize).saturating_sub(1);
    let var = sorted[idx];
    let (sum, count) = samples
        .iter()
        .filter(|&&s| s <= var)
        .fold((0.0, 0usize), |(s, c), &x| (s + x, c + 1));
    Ok((var, sum / count as f64))
}

fn simulate_path(cfg: &McConfig, index: usize) -> Result<f64> {
    let mut rng = seed::stream(cfg.seed, "mc-path", index as u64);
    let returns = match &cfg.macro_spec {
        None => {
            let path = simulate_chain(cfg.horizon_years, &cfg.transition, &cfg.initial_regime, &mut rng)?;
            sample_regime_returns(&path, &cfg.pools, &mut rng)?
        }
        Some(m) => {
            let mut z = initial_state(&cfg.initial_regime, cfg.transition.k(), &mut rng)?;
            let mut out = Vec::with_capacity(cfg.horizon_years);
            for _ in 0..cfg.horizon_years {
                let pool = cfg.pools.pool(z);
                let r = pool[rng.random_range(0..pool.len())].clone();
                let rp = r[m.risk_premium.0] - r[m.risk_premium.1];
                let ys = r[m.yield_spread.0] - r[m.yield_spread.1];
                let row = macro_adjusted_row(&cfg.transition, z, rp, ys, m.coeffs)?;
                out.push(r);
                z = sample_categorical(&row, &mut rng);
            }
            out
        }
    };
    compound_strategy(&returns, &cfg.strategy_weights)
}

/// Runs `n_paths` independent paths and summarizes their terminal returns.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let terminals: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(cfg, i))
        .collect::<Result<_>>()?;
    let losses = terminals.iter().filter(|&&v| v == -1.0).count();
    McSummary::from_terminals(terminals, cfg.horizon_years, losses)
}
