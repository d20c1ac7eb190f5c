//! Statistical and economic checks on regime signals: one-way ANOVA, a two-group
//! mean test, mutual information between regime labels and returns, and mean
//! CRRA / CARA utilities.

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::{Error, Result};

/// `I_x(a, b)`, the regularized incomplete beta function.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::validation(format!(
            "incomplete beta needs a, b > 0 and x in [0, 1], got a={a}, b={b}, x={x}"
        )));
    }
    checked_beta_reg(a, b, x).map_err(|e| Error::Numerical(e.to_string()))
}

/// Upper tail `P(F > f)` of an F(d1, d2) distribution.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> Result<f64> {
    if f.is_infinite() && f > 0.0 {
        return Ok(0.0);
    }
    if !(f >= 0.0) {
        return Err(Error::validation(format!("F statistic must be >= 0, got {f}")));
    }
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_groups(groups: &[&[f64]]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::validation("need at least two groups"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::validation("every group needs at least two values"));
    }
    if groups.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("group values must be finite"));
    }
    Ok(())
}

/// One-way ANOVA across `groups`.
pub fn anova_f(groups: &[&[f64]]) -> Result<AnovaResult> {
    check_groups(groups)?;
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    if ssw == 0.0 && ssb == 0.0 {
        return Err(Error::UndefinedMetric("all groups are constant and equal".into()));
    }
    let f = if ssw == 0.0 {
        f64::INFINITY
    } else {
        (ssb / df_between as f64) / (ssw / df_within as f64)
    };
    let p = f_survival(f, df_between as f64, df_within as f64)?;
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    /// mean(a) − mean(b)
    pub diff: f64,
    /// Studentized range statistic `q = √2·|t|`.
    pub q: f64,
    pub p: f64,
}

/// Two-group mean comparison with a pooled-variance t statistic. For two groups
/// the Tukey HSD p-value reduces to the two-sided t-test p-value.
pub fn pairwise_mean_test(a: &[f64], b: &[f64]) -> Result<PairwiseResult> {
    check_groups(&[a, b])?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let ss = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let diff = ma - mb;
    if ss == 0.0 && diff == 0.0 {
        return Err(Error::UndefinedMetric("both groups are constant and equal".into()));
    }
    let se = (ss / df * (1.0 / na + 1.0 / nb)).sqrt();
    let t = if se == 0.0 { f64::INFINITY } else { diff.abs() / se };
    let p = if t.is_infinite() {
        0.0
    } else {
        regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?
    };
    Ok(PairwiseResult {
        diff,
        q: std::f64::consts::SQRT_2 * t,
        p,
    })
}

/// Equal-frequency bin index per value. Tied values share the bin of their lowest
/// rank, so the assignment depends only on the ordering. When there are no more
/// distinct values than `bins`, each distinct value gets its own bin.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut distinct = 0usize;
    let mut out = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 || values[i] != values[order[rank - 1]] {
            first_rank = rank;
            distinct += 1;
        }
        out[i] = first_rank;
    }
    if distinct <= bins {
        // Map each distinct value's first rank to a dense index.
        let mut firsts: Vec<usize> = out.clone();
        firsts.sort_unstable();
        firsts.dedup();
        for v in out.iter_mut() {
            *v = firsts.binary_search(v).unwrap_or(0);
        }
    } else {
        for v in out.iter_mut() {
            *v = *v * bins / n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInfo {
    pub nats: f64,
    /// Non-empty return bins actually used.
    pub bins_used: usize,
}

/// Mutual information (nats) between regime labels and quantile-binned returns.
pub fn mutual_information(labels: &[usize], returns: &[f64], bins: usize) -> Result<MutualInfo> {
    if labels.len() != returns.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: returns.len(),
        });
    }
    if bins < 2 {
        return Err(Error::validation("mutual information needs bins >= 2"));
    }
    if labels.is_empty() {
        return Err(Error::validation("mutual information needs at least one sample"));
    }
    if returns.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("returns must be finite"));
    }
    let b = quantile_bins(returns, bins);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let nk = labels.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![vec![0usize; nb]; nk];
    for (&k, &j) in labels.iter().zip(&b) {
        joint[k][j] += 1;
    }
    let n = labels.len() as f64;
    let pk: Vec<f64> = joint.iter().map(|row| row.iter().sum::<usize>() as f64 / n).collect();
    let pb: Vec<f64> = (0..nb)
        .map(|j| joint.iter().map(|r| r[j]).sum::<usize>() as f64 / n)
        .collect();
    let mut mi = 0.0;
    for (k, row) in joint.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (pk[k] * pb[j])).ln();
            }
        }
    }
    Ok(MutualInfo {
        nats: mi.max(0.0),
        bins_used: pb.iter().filter(|p| **p > 0.0).count(),
    })
}

/// CRRA utility of a simple return: `((1+r)^{1−γ} − 1)/(1−γ)`, `ln(1+r)` at γ = 1.
pub fn crra(r: f64, gamma: f64) -> Result<f64> {
    if !(r > -1.0) {
        return Err(Error::validation(format!("CRRA utility needs r > -1, got {r}")));
    }
    let lg = r.ln_1p();
    if gamma == 1.0 {
        return Ok(lg);
    }
    let e = 1.0 - gamma;
    Ok((e * lg).exp_m1() / e)
}

/// CARA utility `−exp(−α·r)`.
pub fn cara(r: f64, alpha: f64) -> f64 {
    -(-alpha * r).exp()
}

pub fn crra_mean(returns: &[f64], gamma: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::validation("no returns"));
    }
    let mut s = 0.0;
    for &r in returns {
        s += crra(r, gamma)?;
    }
    Ok(s / returns.len() as f64)
}

pub fn cara_mean(returns: &[f64], alpha: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::validation("no returns"));
    }
    Ok(returns.iter().map(|&r| cara(r, alpha)).sum::<f64>() / returns.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsOptions {
    pub bins: usize,
    pub crra_gamma: f64,
    pub cara_alpha: f64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            bins: 5,
            crra_gamma: 3.0,
            cara_alpha: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub f_stat: f64,
    pub f_p_value: f64,
    pub df_between: usize,
    pub df_within: usize,
    /// Regimes compared by the pairwise test.
    pub pairwise_groups: [usize; 2],
    pub pairwise_diff: f64,
    pub pairwise_p: f64,
    pub mutual_info_nats: f64,
    pub mi_units: String,
    pub binning: String,
    pub bins: usize,
    pub bins_used: usize,
    pub crra_gamma: f64,
    pub crra_mean: f64,
    pub cara_alpha: f64,
    pub cara_mean: f64,
    /// Observations per regime label, including regimes left out of the tests.
    pub group_sizes: Vec<usize>,
    pub warnings: Vec<String>,
}

impl StatsReport {
    /// Groups `returns` by `labels`, runs the battery and collects the results.
    ///
    /// Regimes with fewer than two observations are left out of ANOVA and the
    /// pairwise test (with a warning). The pairwise test compares the two
    /// regimes with the most observations, lower label first.
    pub fn compute(labels: &[usize], returns: &[f64], opts: &StatsOptions) -> Result<Self> {
        if labels.len() != returns.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: returns.len(),
            });
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
        for (&l, &r) in labels.iter().zip(returns) {
            groups[l].push(r);
        }
        let group_sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let mut warnings = Vec::new();
        let kept: Vec<usize> = (0..k)
            .filter(|&i| {
                let ok = groups[i].len() >= 2;
                if !ok {
                    warnings.push(format!(
                        "regime {i} has {} observations; left out of tests",
                        groups[i].len()
                    ));
                }
                ok
            })
            .collect();
        let refs: Vec<&[f64]> = kept.iter().map(|&i| groups[i].as_slice()).collect();
        let anova = anova_f(&refs)?;
        let mut by_size = kept.clone();
        by_size.sort_by(|&a, &b| group_sizes[b].cmp(&group_sizes[a]).then(a.cmp(&b)));
        let (mut ga, mut gb) = (by_size[0], by_size[1]);
        if ga > gb {
            std::mem::swap(&mut ga, &mut gb);
        }
        let pair = pairwise_mean_test(&groups[ga], &groups[gb])?;
        let mi = mutual_information(labels, returns, opts.bins)?;
        if mi.bins_used < opts.bins {
            warnings.push(format!("returns support only {} of {} bins", mi.bins_used, opts.bins));
        }
        Ok(Self {
            schema_version: crate::SCHEMA_VERSION,
            f_stat: anova.f,
            f_p_value: anova.p,
            df_between: anova.df_between,
            df_within: anova.df_within,
            pairwise_groups: [ga, gb],
            pairwise_diff: pair.diff,
            pairwise_p: pair.p,
            mutual_info_nats: mi.nats,
            mi_units: "nats".into(),
            binning: "quantile".into(),
            bins: opts.bins,
            bins_used: mi.bins_used,
            crra_gamma: opts.crra_gamma,
            crra_mean: crra_mean(returns, opts.crra_gamma)?,
            cara_alpha: opts.cara_alpha,
            cara_mean: cara_mean(returns, opts.cara_alpha)?,
            group_sizes,
            warnings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
