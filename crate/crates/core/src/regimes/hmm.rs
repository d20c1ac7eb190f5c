use super::{
    check_fit_input, count_distinct_rows, init_from_kmeans, FitOptions, RegimeKind, RegimeModel, Standardizer,
    VARIANCE_FLOOR,
};
use crate::dataio::FeatureMatrix;
use crate::{Error, Result, SCHEMA_VERSION};

pub(crate) struct ForwardBackward {
    pub gamma: Vec<Vec<f64>>,
    /// Σ_t ξ_t(i, j) over all transitions.
    pub xi_sum: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Scaled forward-backward pass.
///
/// Emission densities are shifted by their per-step maximum before
/// exponentiation; the shift is added back into the log-likelihood.
pub(crate) fn forward_backward(model: &RegimeModel, xs: &[Vec<f64>]) -> ForwardBackward {
    let k = model.k;
    let n = xs.len();
    let a = model.transition.as_ref().expect("hmm transition");
    let pi = model.initial_dist.as_ref().expect("hmm initial_dist");
    let log_b = model.log_emissions(xs);

    let mut b = vec![vec![0.0; k]; n];
    let mut loglik = 0.0;
    for t in 0..n {
        let m = log_b[t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        loglik += m;
        for j in 0..k {
            b[t][j] = (log_b[t][j] - m).exp();
        }
    }

    let mut alpha = vec![vec![0.0; k]; n];
    let mut scale = vec![0.0; n];
    for t in 0..n {
        for j in 0..k {
            let prior = if t == 0 {
                pi[j]
            } else {
                (0..k).map(|i| alpha[t - 1][i] * a[i][j]).sum()
            };
            alpha[t][j] = prior * b[t][j];
        }
        let c: f64 = alpha[t].iter().sum();
        scale[t] = c;
        if c > 0.0 {
            alpha[t].iter_mut().for_each(|v| *v /= c);
        }
        loglik += c.ln();
    }

    let mut beta = vec![vec![1.0; k]; n];
    for t in (0..n.saturating_sub(1)).rev() {
        for i in 0..k {
            let s: f64 = (0..k).map(|j| a[i][j] * b[t + 1][j] * beta[t + 1][j]).sum();
            beta[t][i] = if scale[t + 1] > 0.0 { s / scale[t + 1] } else { 0.0 };
        }
    }

    let gamma = (0..n)
        .map(|t| {
            let mut g: Vec<f64> = (0..k).map(|j| alpha[t][j] * beta[t][j]).collect();
            let s: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= s);
            g
        })
        .collect();

    let mut xi_sum = vec![vec![0.0; k]; k];
    for t in 0..n.saturating_sub(1) {
        if scale[t + 1] <= 0.0 {
            continue;
        }
        for i in 0..k {
            for j in 0..k {
                xi_sum[i][j] += alpha[t][i] * a[i][j] * b[t + 1][j] * beta[t + 1][j] / scale[t + 1];
            }
        }
    }

    ForwardBackward { gamma, xi_sum, loglik }
}

fn m_step(model: &mut RegimeModel, xs: &[Vec<f64>], fb: &ForwardBackward) {
    let k = model.k;
    let f = xs[0].len();
    let n = xs.len();
    model.initial_dist = Some(fb.gamma[0].clone());

    let a = model.transition.as_mut().expect("hmm transition");
    for i in 0..k {
        let occupancy: f64 = fb.gamma[..n - 1].iter().map(|g| g[i]).sum();
        if occupancy > 1e-300 {
            let row_sum: f64 = fb.xi_sum[i].iter().sum();
            for j in 0..k {
                a[i][j] = fb.xi_sum[i][j] / row_sum;
            }
        }
    }

    let vars = model.variances.as_mut().expect("hmm variances");
    for c in 0..k {
        let nk: f64 = fb.gamma.iter().map(|g| g[c]).sum();
        if nk < 1e-300 {
            continue;
        }
        let mut mean = vec![0.0; f];
        for (x, g) in xs.iter().zip(&fb.gamma) {
            for j in 0..f {
                mean[j] += g[c] * x[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; f];
        for (x, g) in xs.iter().zip(&fb.gamma) {
            for j in 0..f {
                let d = x[j] - mean[j];
                var[j] += g[c] * d * d;
            }
        }
        vars[c] = var.into_iter().map(|v| (v / nk).max(VARIANCE_FLOOR)).collect();
        model.means[c] = mean;
    }
}

/// Uniform rows with 0.5 added to the diagonal, renormalized.
fn persistent_transition(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut row = vec![1.0 / k as f64; k];
            row[i] += 0.5;
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

/// Baum-Welch for a diagonal-Gaussian HMM.
///
/// Emissions start from kmeans clusters, the initial distribution is uniform and the
/// transition matrix is biased toward persistence.
pub fn hmm_fit(x: &FeatureMatrix, opts: &FitOptions) -> Result<RegimeModel> {
    check_fit_input(x, opts)?;
    if !(opts.tol > 0.0) {
        return Err(Error::validation("tol must be > 0"));
    }
    let standardizer = Standardizer::fit(&x.values);
    let xs = standardizer.apply_all(&x.values);
    let distinct = count_distinct_rows(&xs);
    if opts.k > distinct {
        return Err(Error::validation(format!(
            "K = {} exceeds the {} distinct feature rows",
            opts.k, distinct
        )));
    }
    let (means, vars, _) = init_from_kmeans(&xs, opts);
    let k = opts.k;
    let mut model = RegimeModel {
        schema_version: SCHEMA_VERSION,
        kind: RegimeKind::Hmm,
        k,
        feature_names: x.feature_names.clone(),
        standardizer,
        means,
        variances: Some(vars),
        mixing_weights: None,
        transition: Some(persistent_transition(k)),
        initial_dist: Some(vec![1.0 / k as f64; k]),
        objective_trace: Vec::new(),
    };
    let mut fb = forward_backward(&model, &xs);
    let mut ll = fb.loglik;
    let mut trace = vec![ll];
    for _ in 0..opts.max_iter {
        m_step(&mut model, &xs, &fb);
        fb = forward_backward(&model, &xs);
        if !fb.loglik.is_finite() {
            return Err(Error::Numerical("HMM log-likelihood became non-finite".into()));
        }
        trace.push(fb.loglik);
        let gain = fb.loglik - ll;
        ll = fb.loglik;
        if gain < opts.tol {
            break;
        }
    }
    model.objective_trace = trace;
    Ok(model)
}

/// Most likely state path (log-space Viterbi). Ties go to the lowest state index.
pub fn viterbi(model: &RegimeModel, x: &FeatureMatrix) -> Result<Vec<usize>> {
    if model.kind != RegimeKind::Hmm {
        return Err(Error::Unsupported(format!(
            "viterbi requires an hmm model, got {}",
            model.kind
        )));
    }
    let xs = model.standardized(x)?;
    let n = xs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let k = model.k;
    let log_a: Vec<Vec<f64>> = model
        .transition
        .as_ref()
        .expect("hmm transition")
        .iter()
        .map(|row| row.iter().map(|p| p.ln()).collect())
        .collect();
    let log_pi: Vec<f64> = model
        .initial_dist
        .as_ref()
        .expect("hmm initial_dist")
        .iter()
        .map(|p| p.ln())
        .collect();
    let log_b = model.log_emissions(&xs);

    let mut delta: Vec<f64> = (0..k).map(|j| log_pi[j] + log_b[0][j]).collect();
    let mut back = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; k];
        for j in 0..k {
            let mut best_i = 0;
            let mut best = delta[0] + log_a[0][j];
            for i in 1..k {
                let v = delta[i] + log_a[i][j];
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            next[j] = best + log_b[t][j];
            back[t][j] = best_i;
        }
        delta = next;
    }
    let mut path = vec![super::argmax(&delta); n];
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}
