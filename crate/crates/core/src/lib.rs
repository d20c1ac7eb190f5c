//! Regime-aware market simulation and portfolio-policy engine.
//!
//! The crate is organised as a pipeline:
//!
//! - [`dataio`]: annual return panels and the regime-detection feature set
//! - [`regimes`]: KMeans / GMM / HMM regime models, posteriors, Viterbi, crisis alignment
//! - [`mcsim`]: regime-switching Monte Carlo over bootstrapped regime return pools
//! - [`env`]: the portfolio environment with shaped, clipped rewards, shocks and resets
//! - [`agents`]: linear-softmax policies, score-function and CEM trainers, ablations
//! - [`metrics`]: Sharpe, Sortino, drawdown, rolling CAGR and backtests
//! - [`stats`]: ANOVA, two-group mean test, mutual information, CRRA/CARA utilities
//!
//! All randomness is derived from a master seed through [`seed::stream`], so every
//! result is reproducible regardless of the rayon thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agents;
pub mod dataio;
pub mod env;
mod error;
pub mod mcsim;
pub mod metrics;
pub mod regimes;
pub mod seed;
pub mod stats;

pub use error::{Error, ErrorKind, Result};

pub use agents::{Policy, RegimeValueBaseline, TrainConfig};
pub use dataio::{FeatureMatrix, ReturnPanel};
pub use env::{EnvConfig, Observation, PortfolioEnv, PortfolioWeights, RegimeStats, RewardBreakdown};
pub use mcsim::{McConfig, McSummary, TransitionMatrix};
pub use metrics::BacktestReport;
pub use regimes::{RegimeKind, RegimeModel, RegimePosterior};
pub use stats::StatsReport;

/// Version tag written into every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
