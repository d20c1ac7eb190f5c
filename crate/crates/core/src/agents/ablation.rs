use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cem_train, reinforce_train, TrainConfig};
use crate::env::{EnvConfig, PortfolioEnv};
use crate::metrics::{backtest, BacktestOptions, BacktestReport};
use crate::{Error, Result};

/// Environment variant used for training. `Baseline` leaves the config unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    NoClip,
    NoCost,
    NoReset,
    NoShock,
}

impl Variant {
    pub fn apply(self, cfg: &EnvConfig) -> EnvConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Baseline => {}
            Variant::NoClip => c.no_clip = true,
            Variant::NoCost => c.no_cost = true,
            Variant::NoReset => c.no_reset = true,
            Variant::NoShock => c.no_shock = true,
        }
        c
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoClip => "noclip",
            Variant::NoCost => "nocost",
            Variant::NoReset => "noreset",
            Variant::NoShock => "noshock",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Variant::Baseline),
            "noclip" => Ok(Variant::NoClip),
            "nocost" => Ok(Variant::NoCost),
            "noreset" => Ok(Variant::NoReset),
            "noshock" => Ok(Variant::NoShock),
            other => Err(Error::validation(format!("unknown ablation variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainer {
    Reinforce,
    Cem,
}

impl std::str::FromStr for Trainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(Trainer::Reinforce),
            "cem" => Ok(Trainer::Cem),
            other => Err(Error::validation(format!("unknown trainer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub final_log_value: f64,
    pub backtest: BacktestReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAggregate {
    pub variant: Variant,
    pub n_seeds: usize,
    /// Mean over seeds where the metric is defined.
    pub mean_sharpe: Option<f64>,
    pub mean_sortino: Option<f64>,
    pub mean_max_drawdown: f64,
    pub mean_final_log_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub trainer: Trainer,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Training environment config per variant.
    pub env_configs: Vec<EnvConfig>,
    pub rows: Vec<AblationRow>,
    pub aggregate: Vec<AblationAggregate>,
}

impl AblationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Trains one agent per (variant, seed) on `train_env` with the variant's flags
/// applied, then backtests every agent on `eval_env` as given, so all variants
/// are scored under the same evaluation dynamics. The baseline is always run first.
pub fn run_ablations(
    train_env: &PortfolioEnv,
    eval_env: &PortfolioEnv,
    cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    trainer: Trainer,
    opts: &BacktestOptions,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::validation("ablation needs at least one seed"));
    }
    let mut vs = vec![Variant::Baseline];
    for v in variants {
        if !vs.contains(v) {
            vs.push(*v);
        }
    }
    let mut rows = Vec::new();
    let mut env_configs = Vec::new();
    for &v in &vs {
        let env_cfg = v.apply(train_env.config());
        env_configs.push(env_cfg.clone());
        for &seed in seeds {
            let mut c = env_cfg.clone();
            c.shock_seed = seed;
            let env = PortfolioEnv::from_shared(c, Arc::clone(train_env.data()), Arc::clone(train_env.regime_stats()))?;
            let tc = TrainConfig { seed, ..cfg.clone() };
            let out = match trainer {
                Trainer::Reinforce => reinforce_train(&env, &tc)?,
                Trainer::Cem => cem_train(&env, &tc)?,
            };
            let mut eval = eval_env.clone();
            let report = backtest(&out.policy, &mut eval, opts)?;
            rows.push(AblationRow {
                variant: v,
                seed,
                sharpe: report.sharpe,
                sortino: report.sortino,
                max_drawdown: report.max_drawdown,
                final_log_value: report.final_log_value,
                backtest: report,
            });
        }
    }
    let aggregate = vs
        .iter()
        .map(|&v| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v).collect();
            let n = sel.len() as f64;
            AblationAggregate {
                variant: v,
                n_seeds: sel.len(),
                mean_sharpe: mean_defined(sel.iter().map(|r| r.sharpe)),
                mean_sortino: mean_defined(sel.iter().map(|r| r.sortino)),
                mean_max_drawdown: sel.iter().map(|r| r.max_drawdown).sum::<f64>() / n,
                mean_final_log_value: sel.iter().map(|r| r.final_log_value).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(AblationReport {
        schema_version: crate::SCHEMA_VERSION,
        trainer,
        seeds: seeds.to_vec(),
        variants: vs,
        env_configs,
        rows,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ReturnPanel;
    use crate::env::RegimeStats;
    use crate::regimes::RegimePosterior;

    fn env() -> PortfolioEnv {
        let t = 20;
        let years: Vec<i32> = (0..t as i32).collect();
        let rows: Vec<Vec<f64>> = (0..t).map(|i| vec![0.05 * ((i % 3) as f64 - 1.0), 0.02]).collect();
        let panel = ReturnPanel::new(years.clone(), vec!["A".into(), "B".into()], rows.clone()).unwrap();
        let post = RegimePosterior::from_probs(years, vec![vec![1.0]; t], 0.0);
        let stats = RegimeStats::estimate(&rows, &vec![0; t], 1).unwrap();
        PortfolioEnv::new(EnvConfig::default(), &panel, &post, stats).unwrap()
    }

    #[test]
    fn variant_flags() {
        let base = EnvConfig::default();
        let c = Variant::NoClip.apply(&base);
        assert_eq!(
            EnvConfig {
                no_clip: false,
                ..c.clone()
            },
            base
        );
        assert!(c.no_clip && !c.no_cost && !c.no_reset && !c.no_shock);
        assert_eq!(Variant::Baseline.apply(&base), base);
        assert_eq!("NoReset".parse::<Variant>().unwrap(), Variant::NoReset);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn report_structure() {
        let e = env();
        let cfg = TrainConfig {
            total_steps: 2 * 20 * 2,
            batch_episodes: 2,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let opts = BacktestOptions::default();
        let r = run_ablations(&e, &e, &cfg, &[], &[1, 2], Trainer::Reinforce, &opts).unwrap();
        assert_eq!(r.variants, vec![Variant::Baseline]);
        assert_eq!(r.rows.len(), 2);
        let seeds = [1, 2, 3, 4, 5];
        let r = run_ablations(
            &e,
            &e,
            &cfg,
            &[Variant::NoClip, Variant::NoCost, Variant::NoReset],
            &seeds,
            Trainer::Reinforce,
            &opts,
        )
        .unwrap();
        assert_eq!(r.rows.len(), 4 * 5);
        assert_eq!(r.aggregate.len(), 4);
        assert!(r.aggregate.iter().all(|a| a.n_seeds == 5));
        assert!(r.env_configs[1].no_clip);
    }
}
