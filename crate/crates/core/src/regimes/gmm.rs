use super::{
    check_fit_input, count_distinct_rows, diag_log_pdf, init_from_kmeans, log_sum_exp, FitOptions, RegimeKind,
    RegimeModel, Standardizer, VARIANCE_FLOOR,
};
use crate::dataio::FeatureMatrix;
use crate::{Error, Result, SCHEMA_VERSION};

struct Params {
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn e_step(p: &Params, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = p.weights.len();
    let mut ll = 0.0;
    let mut lp = vec![0.0; k];
    let resp = xs
        .iter()
        .map(|x| {
            for c in 0..k {
                lp[c] = p.weights[c].ln() + diag_log_pdf(x, &p.means[c], &p.vars[c]);
            }
            let lse = log_sum_exp(&lp);
            ll += lse;
            lp.iter().map(|v| (v - lse).exp()).collect()
        })
        .collect();
    (resp, ll)
}

fn m_step(p: &mut Params, xs: &[Vec<f64>], resp: &[Vec<f64>]) {
    let k = p.weights.len();
    let f = xs[0].len();
    let n = xs.len() as f64;
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        if nk < 1e-300 {
            p.weights[c] = 1e-300;
            continue;
        }
        p.weights[c] = nk / n;
        let mut mean = vec![0.0; f];
        for (x, r) in xs.iter().zip(resp) {
            for j in 0..f {
                mean[j] += r[c] * x[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; f];
        for (x, r) in xs.iter().zip(resp) {
            for j in 0..f {
                let d = x[j] - mean[j];
                var[j] += r[c] * d * d;
            }
        }
        p.vars[c] = var.into_iter().map(|v| (v / nk).max(VARIANCE_FLOOR)).collect();
        p.means[c] = mean;
    }
    let s: f64 = p.weights.iter().sum();
    p.weights.iter_mut().for_each(|w| *w /= s);
}

/// EM for a diagonal-covariance Gaussian mixture, initialized from kmeans.
///
/// Stops when the log-likelihood improves by less than `tol` or after `max_iter`
/// M-steps. Variances are floored at [`VARIANCE_FLOOR`] in standardized units.
pub fn gmm_fit(x: &FeatureMatrix, opts: &FitOptions) -> Result<RegimeModel> {
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
    let (means, vars, weights) = init_from_kmeans(&xs, opts);
    let mut p = Params { means, vars, weights };
    let (mut resp, mut ll) = e_step(&p, &xs);
    let mut trace = vec![ll];
    for _ in 0..opts.max_iter {
        m_step(&mut p, &xs, &resp);
        let (r, next) = e_step(&p, &xs);
        if !next.is_finite() {
            return Err(Error::Numerical("GMM log-likelihood became non-finite".into()));
        }
        resp = r;
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < opts.tol {
            break;
        }
    }
    Ok(RegimeModel {
        schema_version: SCHEMA_VERSION,
        kind: RegimeKind::Gmm,
        k: opts.k,
        feature_names: x.feature_names.clone(),
        standardizer,
        means: p.means,
        variances: Some(p.vars),
        mixing_weights: Some(p.weights),
        transition: None,
        initial_dist: None,
        objective_trace: trace,
    })
}

pub(crate) fn responsibilities(model: &RegimeModel, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let p = Params {
        means: model.means.clone(),
        vars: model.variances.clone().expect("gmm variances"),
        weights: model.mixing_weights.clone().expect("gmm weights"),
    };
    e_step(&p, xs)
}
