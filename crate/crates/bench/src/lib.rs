//! Shared fixtures for the criterion benchmarks.

use regimerl::dataio::{compute_features, default_spread_pairs, DEFAULT_WINDOW};
use regimerl::dataio::{synthetic_panel, SynthSpec};
use regimerl::env::RegimeStats;
use regimerl::regimes::{self, FitOptions};
use regimerl::{EnvConfig, FeatureMatrix, PortfolioEnv, RegimeKind, ReturnPanel};

pub fn panel(n_years: usize) -> ReturnPanel {
    let spec = SynthSpec {
        n_years,
        ..SynthSpec::default()
    };
    synthetic_panel(&spec).expect("synthetic panel").0
}

pub fn features(panel: &ReturnPanel) -> FeatureMatrix {
    compute_features(panel, DEFAULT_WINDOW, &default_spread_pairs(panel)).expect("features")
}

/// Environment over the feature-aligned tail of `panel` with a fitted 2-state HMM.
pub fn environment(panel: &ReturnPanel) -> PortfolioEnv {
    let x = features(panel);
    let model = regimes::fit(RegimeKind::Hmm, &x, &FitOptions::new(2, 1)).expect("fit");
    let post = regimes::posterior(&model, &x).expect("posterior");
    let tail = panel.select_years(&x.years).expect("aligned panel");
    let stats = RegimeStats::estimate(tail.returns(), &post.labels, 2).expect("stats");
    PortfolioEnv::new(EnvConfig::default(), &tail, &post, stats).expect("env")
}
