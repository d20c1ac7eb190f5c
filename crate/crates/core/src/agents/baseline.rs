use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ridge added to the normal equations.
pub const BASELINE_RIDGE: f64 = 1e-6;
const REFINE_STEPS: usize = 3;

/// One regression sample: features `[r, ρ, 1]`, regime posterior and target return.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSample {
    pub features: Vec<f64>,
    pub rho: Vec<f64>,
    pub target: f64,
}

/// `V(s) = Σ_k ρ_k · v_kᵀ φ(s)` with one linear head per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeValueBaseline {
    pub heads: Vec<Vec<f64>>,
}

impl RegimeValueBaseline {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            heads: vec![vec![0.0; d]; k],
        }
    }

    /// Ridge least squares of the targets on the ρ-weighted block design
    /// `[ρ_0 φ, ρ_1 φ, ..., ρ_{K−1} φ]`.
    pub fn fit(samples: &[BaselineSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::validation("value baseline needs at least one sample"))?;
        let (k, d) = (first.rho.len(), first.features.len());
        if k == 0 || d == 0 {
            return Err(Error::validation("value baseline needs non-empty features and regimes"));
        }
        let p = k * d;
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut row = vec![0.0; p];
        for s in samples {
            if s.rho.len() != k || s.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: s.rho.len() * s.features.len(),
                });
            }
            for (kk, rho) in s.rho.iter().enumerate() {
                for (j, f) in s.features.iter().enumerate() {
                    row[kk * d + j] = rho * f;
                }
            }
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                xty[a] += row[a] * s.target;
                for b in a..p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(a, b)] = xtx[(b, a)];
            }
            xtx[(a, a)] += BASELINE_RIDGE;
        }
        let chol = xtx
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("value baseline normal equations are not positive definite".into()))?;
        // A few rounds of iterated Tikhonov refinement remove most of the ridge
        // shrinkage on well-determined directions while leaving the null space alone.
        let mut beta = chol.solve(&xty);
        for a in 0..p {
            xtx[(a, a)] -= BASELINE_RIDGE;
        }
        for _ in 0..REFINE_STEPS {
            let resid = &xty - &xtx * &beta;
            beta += chol.solve(&resid);
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("value baseline produced non-finite weights".into()));
        }
        Ok(Self {
            heads: (0..k)
                .map(|kk| beta.rows(kk * d, d).iter().copied().collect())
                .collect(),
        })
    }

    pub fn predict(&self, features: &[f64], rho: &[f64]) -> f64 {
        self.heads
            .iter()
            .zip(rho)
            .map(|(h, r)| r * h.iter().zip(features).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn sample(features: Vec<f64>, rho: Vec<f64>, target: f64) -> BaselineSample {
        BaselineSample { features, rho, target }
    }

    #[test]
    fn single_regime_is_ols() {
        // y = 2 r + 1 exactly, K = 1, φ = [r, ρ, 1].
        let xs = [-1.0, -0.5, 0.0, 0.7, 1.3, 2.0];
        let s: Vec<_> = xs
            .iter()
            .map(|&r| sample(vec![r, 1.0, 1.0], vec![1.0], 2.0 * r + 1.0))
            .collect();
        let b = RegimeValueBaseline::fit(&s).unwrap();
        for &r in &xs {
            assert!((b.predict(&[r, 1.0, 1.0], &[1.0]) - (2.0 * r + 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_linear_targets_fit_exactly() {
        let mut rng = seed::stream(3, "baseline", 0);
        let heads = [[1.5, -2.0, 0.25], [-0.5, 3.0, -1.0]];
        let s: Vec<_> = (0..400)
            .map(|i| {
                let k = i % 2;
                let f = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 1.0];
                let mut rho = vec![0.0; 2];
                rho[k] = 1.0;
                let y: f64 = heads[k].iter().zip(&f).map(|(a, b)| a * b).sum();
                sample(f, rho, y)
            })
            .collect();
        let b = RegimeValueBaseline::fit(&s).unwrap();
        for x in &s {
            let e = (b.predict(&x.features, &x.rho) - x.target).abs();
            assert!(e < 1e-8, "{e}");
        }
    }

    #[test]
    fn constant_targets() {
        let s: Vec<_> = (0..50)
            .map(|i| {
                let a = (i as f64 / 49.0).clamp(0.0, 1.0);
                sample(vec![(i as f64).sin(), a, 1.0 - a, 1.0], vec![a, 1.0 - a], 0.37)
            })
            .collect();
        let b = RegimeValueBaseline::fit(&s).unwrap();
        for x in &s {
            assert!((b.predict(&x.features, &x.rho) - 0.37).abs() < 1e-5);
        }
        assert!(RegimeValueBaseline::fit(&[]).is_err());
    }

    #[test]
    fn relabeling_invariance() {
        let mut rng = seed::stream(9, "baseline", 1);
        let mut s = Vec::new();
        for _ in 0..120 {
            let a: f64 = rng.random();
            let b: f64 = rng.random::<f64>() * (1.0 - a);
            let rho = vec![a, b, 1.0 - a - b];
            let r: f64 = rng.random_range(-1.0..1.0);
            let mut f = vec![r];
            f.extend(&rho);
            f.push(1.0);
            let y = r * a - 2.0 * b + rng.random_range(-0.1..0.1);
            s.push(sample(f, rho, y));
        }
        let perm = [2, 0, 1];
        let relabel = |x: &BaselineSample| {
            let rho: Vec<f64> = perm.iter().map(|&p| x.rho[p]).collect();
            let mut f = vec![x.features[0]];
            f.extend(&rho);
            f.push(1.0);
            sample(f, rho, x.target)
        };
        let s2: Vec<_> = s.iter().map(relabel).collect();
        let b1 = RegimeValueBaseline::fit(&s).unwrap();
        let b2 = RegimeValueBaseline::fit(&s2).unwrap();
        for (x, y) in s.iter().zip(&s2) {
            assert!((b1.predict(&x.features, &x.rho) - b2.predict(&y.features, &y.rho)).abs() < 1e-8);
        }
    }
}
