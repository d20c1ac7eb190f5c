use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    softmax, utility_penalty_terms, BaselineSample, Policy, RegimeValueBaseline, TrainConfig, DIVERGENCE_NORM,
};
use crate::env::PortfolioEnv;
use crate::seed;
use crate::{Error, Result};

/// One line of the training progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub iteration: usize,
    /// Mean undiscounted episode reward.
    pub mean_return: f64,
    /// Mean per-episode utility penalty.
    pub penalty: f64,
    pub param_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub progress: Vec<ProgressRow>,
}

pub fn write_progress_csv<W: Write>(rows: &[ProgressRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct Rollout {
    features: Vec<Vec<f64>>,
    rho: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

fn rollout(policy: &Policy, template: &PortfolioEnv, rng: Option<&mut seed::StreamRng>) -> Result<Rollout> {
    let mut env = template.clone();
    let mut obs = env.reset();
    let h = env.horizon();
    let mut out = Rollout {
        features: Vec::with_capacity(h),
        rho: Vec::with_capacity(h),
        noise: Vec::with_capacity(h),
        rewards: Vec::with_capacity(h),
    };
    let mut rng = rng;
    loop {
        let phi = policy.features(&obs)?;
        let w = match rng.as_deref_mut() {
            Some(r) => {
                let (w, eps) = policy.act_stochastic(&obs, r)?;
                out.noise.push(eps);
                w
            }
            None => policy.act_deterministic(&obs)?,
        };
        let step = env.step(w.as_slice())?;
        out.rho.push(obs.regime_probs.clone());
        out.features.push(phi);
        out.rewards.push(step.reward);
        obs = step.observation;
        if step.done {
            return Ok(out);
        }
    }
}

fn check_divergence(policy: &Policy, iteration: usize) -> Result<()> {
    let norm = policy.param_norm();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Numerical(format!(
            "policy diverged at iteration {iteration}: parameter norm {norm:.3e}"
        )));
    }
    Ok(())
}

fn check_env(policy: &Policy, env: &PortfolioEnv) -> Result<()> {
    if env.n_assets() != policy.n_assets || env.n_regimes() != policy.n_regimes {
        return Err(Error::validation(format!(
            "policy expects {} assets and {} regimes, environment has {} and {}",
            policy.n_assets,
            policy.n_regimes,
            env.n_assets(),
            env.n_regimes()
        )));
    }
    Ok(())
}

fn iterations(total_steps: usize, per_iter: usize) -> usize {
    total_steps.div_ceil(per_iter.max(1))
}

/// Score-function policy gradient with a regime-weighted value baseline.
///
/// Each iteration rolls out `batch_episodes` noisy episodes (in parallel, each with
/// its own seeded stream), shapes the rewards with the utility penalty, fits the
/// baseline on the discounted returns, normalizes the advantages over the batch and
/// takes one gradient-ascent step.
pub fn reinforce_train(env: &PortfolioEnv, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut policy = Policy::zeros(env.n_assets(), env.n_regimes(), cfg.sigma)?;
    check_env(&policy, env)?;
    let n_iter = iterations(cfg.total_steps, cfg.batch_episodes * env.horizon());
    let mut progress = Vec::with_capacity(n_iter);
    for it in 0..n_iter {
        let batch: Vec<Rollout> = (0..cfg.batch_episodes)
            .into_par_iter()
            .map(|e| {
                let mut rng = seed::stream(cfg.seed, "reinforce-episode", (it * cfg.batch_episodes + e) as u64);
                rollout(&policy, env, Some(&mut rng))
            })
            .collect::<Result<_>>()?;

        let mut samples = Vec::new();
        let mut episode_returns = Vec::with_capacity(batch.len());
        let mut episode_penalties = Vec::with_capacity(batch.len());
        for ep in &batch {
            let psi = utility_penalty_terms(&ep.rewards, cfg.delta, cfg.eta);
            let mut g = 0.0;
            let mut targets = vec![0.0; ep.rewards.len()];
            for t in (0..ep.rewards.len()).rev() {
                g = ep.rewards[t] - cfg.penalty_weight * psi[t] + cfg.gamma * g;
                targets[t] = g;
            }
            for t in 0..ep.rewards.len() {
                samples.push(BaselineSample {
                    features: ep.features[t].clone(),
                    rho: ep.rho[t].clone(),
                    target: targets[t],
                });
            }
            episode_returns.push(ep.rewards.iter().sum::<f64>());
            episode_penalties.push(psi.iter().sum::<f64>());
        }

        let baseline = RegimeValueBaseline::fit(&samples)?;
        let mut adv: Vec<f64> = samples
            .iter()
            .map(|s| s.target - baseline.predict(&s.features, &s.rho))
            .collect();
        let m = adv.iter().sum::<f64>() / adv.len() as f64;
        let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / adv.len() as f64).sqrt();
        for a in &mut adv {
            *a = (*a - m) / (sd + 1e-8);
        }

        let d = policy.n_features();
        let mut grad = vec![vec![0.0; d]; policy.n_assets];
        let mut idx = 0;
        for ep in &batch {
            for (phi, eps) in ep.features.iter().zip(&ep.noise) {
                let a = adv[idx];
                idx += 1;
                for (i, e) in eps.iter().enumerate() {
                    let s = a * e / policy.sigma;
                    for (g, f) in grad[i].iter_mut().zip(phi) {
                        *g += s * f;
                    }
                }
            }
        }
        let scale = cfg.learning_rate / batch.len() as f64;
        for (row, g) in policy.theta.iter_mut().zip(&grad) {
            for (t, gv) in row.iter_mut().zip(g) {
                *t += scale * gv;
            }
        }
        check_divergence(&policy, it)?;
        let n = batch.len() as f64;
        progress.push(ProgressRow {
            iteration: it,
            mean_return: episode_returns.iter().sum::<f64>() / n,
            penalty: episode_penalties.iter().sum::<f64>() / n,
            param_norm: policy.param_norm(),
        });
    }
    Ok(TrainOutcome { policy, progress })
}

/// Mean and per-coordinate std of the top `elite_frac` of `population` by score.
/// Ties keep the earlier candidate; std is floored at `min_std`.
pub fn cem_update(population: &[Vec<f64>], scores: &[f64], elite_frac: f64, min_std: f64) -> (Vec<f64>, Vec<f64>) {
    let n = population.len();
    let n_elite = ((elite_frac * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let elite = &order[..n_elite];
    let d = population[0].len();
    let mut mean = vec![0.0; d];
    for &i in elite {
        for (m, v) in mean.iter_mut().zip(&population[i]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n_elite as f64;
    }
    let std = (0..d)
        .map(|j| {
            let v = elite.iter().map(|&i| (population[i][j] - mean[j]).powi(2)).sum::<f64>() / n_elite as f64;
            v.sqrt().max(min_std)
        })
        .collect();
    (mean, std)
}

fn episode_score(policy: &Policy, env: &PortfolioEnv, cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let ep = rollout(policy, env, None)?;
    let psi: f64 = utility_penalty_terms(&ep.rewards, cfg.delta, cfg.eta).iter().sum();
    let ret: f64 = ep.rewards.iter().sum();
    Ok((ret - cfg.penalty_weight * psi, ret, psi))
}

/// Cross-entropy method over the flattened policy parameters.
///
/// Candidates are scored by their deterministic episode return minus the weighted
/// utility penalty. Returns the best candidate seen, starting from the all-zero
/// mean policy.
pub fn cem_train(env: &PortfolioEnv, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = Policy::zeros(env.n_assets(), env.n_regimes(), cfg.sigma)?;
    check_env(&init, env)?;
    let mut mean = init.flat_theta();
    let mut std = vec![cfg.cem_init_std; mean.len()];
    let mut best = init.clone();
    let mut best_score = episode_score(&init, env, cfg)?.0;
    let n_iter = iterations(cfg.total_steps, cfg.cem_population * env.horizon());
    let mut progress = Vec::with_capacity(n_iter);
    for it in 0..n_iter {
        let population: Vec<Vec<f64>> = (0..cfg.cem_population)
            .map(|c| {
                let mut rng = seed::stream(cfg.seed, "cem-candidate", (it * cfg.cem_population + c) as u64);
                mean.iter()
                    .zip(&std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let evals: Vec<(f64, f64, f64)> = population
            .par_iter()
            .map(|theta| episode_score(&init.with_flat_theta(theta)?, env, cfg))
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = evals.iter().map(|e| e.0).collect();
        for (theta, &s) in population.iter().zip(&scores) {
            if s > best_score {
                best_score = s;
                best = init.with_flat_theta(theta)?;
            }
        }
        let (m, s) = cem_update(&population, &scores, cfg.cem_elite_frac, cfg.cem_min_std);
        mean = m;
        std = s;
        let mean_policy = init.with_flat_theta(&mean)?;
        check_divergence(&mean_policy, it)?;
        let n = evals.len() as f64;
        progress.push(ProgressRow {
            iteration: it,
            mean_return: evals.iter().map(|e| e.1).sum::<f64>() / n,
            penalty: evals.iter().map(|e| e.2).sum::<f64>() / n,
            param_norm: best.param_norm(),
        });
    }
    Ok(TrainOutcome { policy: best, progress })
}

fn perturbed_weights(policy: &Policy, mu: &[f64], eps: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = mu.iter().zip(eps).map(|(m, e)| m + policy.sigma * e).collect();
    softmax(&z)
}

/// Monte Carlo estimate of `E[R(w)]` for a single observation with features `phi`,
/// using the supplied standard-normal draws as the logit noise.
pub fn expected_reward<F: Fn(&[f64]) -> f64>(policy: &Policy, phi: &[f64], noise: &[Vec<f64>], reward: F) -> f64 {
    let mu = policy.logits(phi);
    noise
        .iter()
        .map(|eps| reward(&perturbed_weights(policy, &mu, eps)))
        .sum::<f64>()
        / noise.len() as f64
}

/// Score-function estimate of `∇_θ E[R(w)]`: the mean of
/// `(R − R̄) · ((z − μ)/σ²) φᵀ` over the supplied draws, with the sample mean
/// reward as baseline.
pub fn score_gradient<F: Fn(&[f64]) -> f64>(
    policy: &Policy,
    phi: &[f64],
    noise: &[Vec<f64>],
    reward: F,
) -> Vec<Vec<f64>> {
    let mu = policy.logits(phi);
    let rewards: Vec<f64> = noise
        .iter()
        .map(|eps| reward(&perturbed_weights(policy, &mu, eps)))
        .collect();
    let rbar = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let mut grad = vec![vec![0.0; phi.len()]; policy.n_assets];
    for (eps, r) in noise.iter().zip(&rewards) {
        for (i, e) in eps.iter().enumerate() {
            // (z − μ)/σ² = ε/σ
            let s = (r - rbar) * e / policy.sigma;
            for (g, f) in grad[i].iter_mut().zip(phi) {
                *g += s * f;
            }
        }
    }
    let n = noise.len() as f64;
    for row in &mut grad {
        for g in row.iter_mut() {
            *g /= n;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ReturnPanel;
    use crate::env::{EnvConfig, RegimeStats};
    use crate::regimes::RegimePosterior;

    fn dominance_env(t: usize) -> PortfolioEnv {
        let years: Vec<i32> = (0..t as i32).map(|y| 1950 + y).collect();
        let mut rng = seed::stream(11, "dominance", 0);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let a: f64 = rng.random_range(0.02..0.12);
                vec![a, a - 0.06]
            })
            .collect();
        let panel = ReturnPanel::new(years.clone(), vec!["A".into(), "B".into()], rows.clone()).unwrap();
        let post = RegimePosterior::from_probs(years, vec![vec![1.0]; t], 0.0);
        let stats = RegimeStats::estimate(&rows, &vec![0; t], 1).unwrap();
        let cfg = EnvConfig {
            no_clip: true,
            var_window: 1,
            ..EnvConfig::default()
        };
        PortfolioEnv::new(cfg, &panel, &post, stats).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            total_steps: 8 * 30 * 100,
            learning_rate: 0.05,
            batch_episodes: 8,
            sigma: 0.5,
            cem_population: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_policy() {
        let env = dominance_env(30);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let out = reinforce_train(&env, &cfg).unwrap();
        assert_eq!(out.policy, Policy::zeros(2, 1, cfg.sigma).unwrap());
        assert_eq!(out.progress.len(), 100);
    }

    #[test]
    fn training_is_deterministic() {
        let env = dominance_env(30);
        let cfg = TrainConfig {
            total_steps: 8 * 30 * 5,
            ..small_cfg()
        };
        let a = reinforce_train(&env, &cfg).unwrap();
        let b = reinforce_train(&env, &cfg).unwrap();
        assert_eq!(a, b);
        let c = cem_train(&env, &cfg).unwrap();
        let d = cem_train(&env, &cfg).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn zero_iterations_cem_returns_initial_mean() {
        let env = dominance_env(30);
        let cfg = TrainConfig {
            total_steps: 0,
            ..small_cfg()
        };
        let out = cem_train(&env, &cfg).unwrap();
        assert_eq!(out.policy, Policy::zeros(2, 1, cfg.sigma).unwrap());
        assert!(out.progress.is_empty());
    }

    #[test]
    fn full_elite_fraction_is_population_mean() {
        let pop = vec![vec![1.0, -2.0], vec![3.0, 0.0], vec![-1.0, 5.0]];
        let (m, s) = cem_update(&pop, &[0.3, -1.0, 2.0], 1.0, 0.0);
        assert_eq!(m, vec![1.0, 1.0]);
        assert!((s[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let (m, _) = cem_update(&pop, &[0.3, -1.0, 2.0], 0.33, 0.0);
        assert_eq!(m, vec![-1.0, 5.0]);
    }

    #[test]
    fn divergence_guard() {
        let env = dominance_env(30);
        let cfg = TrainConfig {
            learning_rate: 1e12,
            ..small_cfg()
        };
        assert!(matches!(reinforce_train(&env, &cfg), Err(Error::Numerical(_))));
    }

    #[test]
    fn both_trainers_find_dominant_asset() {
        let env = dominance_env(30);
        let cfg = small_cfg();
        for out in [reinforce_train(&env, &cfg).unwrap(), cem_train(&env, &cfg).unwrap()] {
            let mut e = env.clone();
            let mut obs = e.reset();
            loop {
                let w = out.policy.act_deterministic(&obs).unwrap();
                assert!(w.as_slice()[0] >= 0.9, "{:?}", w);
                let s = e.step(w.as_slice()).unwrap();
                obs = s.observation;
                if s.done {
                    break;
                }
            }
        }
    }
}
