//! Synthetic regime-switching annual return panels used as fixtures.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ReturnPanel;
use crate::seed;
use crate::Result;

/// Parameters of the synthetic panel generator.
///
/// Two latent regimes (calm, stress) follow a Markov chain; each year draws a common
/// market factor and per-asset noise whose moments depend on the regime.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub start_year: i32,
    pub n_years: usize,
    pub seed: u64,
    /// Row-stochastic regime transition matrix (calm = 0, stress = 1).
    pub transition: [[f64; 2]; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            start_year: 1928,
            n_years: 96,
            seed: 42,
            transition: [[0.9, 0.1], [0.4, 0.6]],
        }
    }
}

struct AssetProfile {
    name: &'static str,
    // (mean, vol, market beta) per regime
    calm: (f64, f64, f64),
    stress: (f64, f64, f64),
}

const ASSETS: [AssetProfile; 6] = [
    AssetProfile {
        name: "SP500",
        calm: (0.12, 0.14, 1.0),
        stress: (-0.12, 0.22, 1.0),
    },
    AssetProfile {
        name: "SmallCap",
        calm: (0.15, 0.20, 1.3),
        stress: (-0.18, 0.30, 1.4),
    },
    AssetProfile {
        name: "T10Y",
        calm: (0.04, 0.06, -0.1),
        stress: (0.07, 0.09, -0.3),
    },
    AssetProfile {
        name: "Baa",
        calm: (0.07, 0.07, 0.2),
        stress: (0.01, 0.12, 0.4),
    },
    AssetProfile {
        name: "Gold",
        calm: (0.04, 0.15, 0.0),
        stress: (0.10, 0.20, -0.2),
    },
    AssetProfile {
        name: "TBill",
        calm: (0.035, 0.01, 0.0),
        stress: (0.025, 0.012, 0.0),
    },
];

/// Generates a panel plus the true regime label of every year.
pub fn synthetic_panel(spec: &SynthSpec) -> Result<(ReturnPanel, Vec<usize>)> {
    let mut rng = seed::stream(spec.seed, "synth-panel", 0);
    let mut regime = 0usize;
    let mut years = Vec::with_capacity(spec.n_years);
    let mut rows = Vec::with_capacity(spec.n_years);
    let mut labels = Vec::with_capacity(spec.n_years);
    for i in 0..spec.n_years {
        if i > 0 {
            let u: f64 = rng.random();
            regime = if u < spec.transition[regime][0] { 0 } else { 1 };
        }
        let market: f64 = StandardNormal.sample(&mut rng);
        let row = ASSETS
            .iter()
            .map(|a| {
                let (mu, vol, beta) = if regime == 0 { a.calm } else { a.stress };
                let eps: f64 = StandardNormal.sample(&mut rng);
                let systematic = beta * 0.5 * vol * market;
                let idio = (1.0 - 0.25 * beta * beta).max(0.2).sqrt() * vol * eps;
                (mu + systematic + idio).max(-0.95)
            })
            .collect();
        years.push(spec.start_year + i as i32);
        rows.push(row);
        labels.push(regime);
    }
    let names = ASSETS.iter().map(|a| a.name.to_string()).collect();
    Ok((ReturnPanel::new(years, names, rows)?, labels))
}
