//! Run configuration: defaults, an optional TOML file and command-line overrides,
//! applied in that order.

use std::path::Path;

use regimerl::agents::Trainer;
use regimerl::regimes::DEFAULT_CRISIS_YEARS;
use regimerl::stats::StatsOptions;
use regimerl::{EnvConfig, Error, RegimeKind, Result, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::cli::{EnvFlags, TrainFlags};

/// Keys accepted in the config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub model: Option<RegimeKind>,
    pub k: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub crisis_years: Option<Vec<i32>>,
    pub horizons: Option<Vec<usize>>,
    pub paths: Option<usize>,
    pub strategies: Option<Vec<String>>,
    pub macro_driven: Option<bool>,
    pub transitions: Option<String>,
    pub train_frac: Option<f64>,
    pub trainer: Option<Trainer>,
    pub cagr_window: Option<usize>,
    pub env: Option<EnvConfig>,
    pub train: Option<TrainConfig>,
    pub stats: Option<StatsOptions>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Ok(toml::from_str(&text)?)
            }
        }
    }
}

/// Fully resolved settings. This is what the manifest records and hashes.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub window: usize,
    pub model: RegimeKind,
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub crisis_years: Vec<i32>,
    pub horizons: Vec<usize>,
    pub paths: usize,
    pub strategies: Vec<String>,
    pub macro_driven: bool,
    pub transitions: String,
    pub train_frac: f64,
    pub trainer: Trainer,
    pub cagr_window: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub stats: StatsOptions,
}

impl RunConfig {
    pub fn from_file(f: FileConfig) -> Self {
        Self {
            seed: f.seed.unwrap_or(42),
            window: f.window.unwrap_or(regimerl::dataio::DEFAULT_WINDOW),
            model: f.model.unwrap_or(RegimeKind::Hmm),
            k: f.k.unwrap_or(3),
            max_iter: f.max_iter.unwrap_or(200),
            tol: f.tol.unwrap_or(1e-6),
            crisis_years: f.crisis_years.unwrap_or_else(|| DEFAULT_CRISIS_YEARS.to_vec()),
            horizons: f.horizons.unwrap_or_else(|| vec![10, 20, 30]),
            paths: f.paths.unwrap_or(10_000),
            strategies: f.strategies.unwrap_or_else(|| vec!["equal".into(), "sharpe".into()]),
            macro_driven: f.macro_driven.unwrap_or(false),
            transitions: f.transitions.unwrap_or_else(|| "auto".into()),
            train_frac: f.train_frac.unwrap_or(0.7),
            trainer: f.trainer.unwrap_or(Trainer::Reinforce),
            cagr_window: f.cagr_window.unwrap_or(5),
            env: f.env.unwrap_or_default(),
            train: f.train.unwrap_or_default(),
            stats: f.stats.unwrap_or_default(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        Ok(Self::from_file(FileConfig::load(path)?))
    }

    pub fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.env.shock_seed = self.seed;
    }

    pub fn apply_env_flags(&mut self, f: &EnvFlags) {
        if let Some(m) = f.reward_mode {
            self.env.reward_mode = m;
        }
        self.env.no_clip |= f.no_clip;
        self.env.no_cost |= f.no_cost;
        self.env.no_reset |= f.no_reset;
        self.env.no_shock |= f.no_shock;
        if let Some(t) = f.train_frac {
            self.train_frac = t;
        }
    }

    pub fn apply_train_flags(&mut self, f: &TrainFlags) {
        if let Some(t) = f.trainer {
            self.trainer = t;
        }
        if let Some(v) = f.total_steps {
            self.train.total_steps = v;
        }
        if let Some(v) = f.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = f.batch_episodes {
            self.train.batch_episodes = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Validation("window must be >= 2".into()));
        }
        if self.k == 0 {
            return Err(Error::Validation("k must be >= 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Validation("horizons must be >= 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::Validation("paths must be >= 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Validation("train_frac must be in (0, 1)".into()));
        }
        if self.cagr_window == 0 {
            return Err(Error::Validation("cagr_window must be >= 1".into()));
        }
        if !matches!(self.transitions.as_str(), "auto" | "model" | "empirical") {
            return Err(Error::Validation(format!(
                "transitions must be auto, model or empirical, got {:?}",
                self.transitions
            )));
        }
        self.env.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let f: FileConfig =
            toml::from_str("seed = 7\nk = 2\n[env]\nlambda_cost = 0.01\nno_clip = false\n[train]\ntotal_steps = 500\n")
                .unwrap();
        let mut c = RunConfig::from_file(f);
        assert_eq!(c.k, 2);
        assert_eq!(c.env.lambda_cost, 0.01);
        assert_eq!(c.env.clip_hi, 0.03);
        assert_eq!(c.train.total_steps, 500);
        c.set_seed(Some(9));
        assert_eq!((c.seed, c.train.seed), (9, 9));
        c.apply_env_flags(&EnvFlags {
            no_clip: true,
            ..EnvFlags::default()
        });
        assert!(c.env.no_clip);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 1").is_err());
    }
}
