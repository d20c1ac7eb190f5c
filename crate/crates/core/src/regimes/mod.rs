//! Latent regime models fitted on standardized feature matrices.
//!
//! Three model families share one parameter container, [`RegimeModel`]:
//! KMeans (hard clusters), a diagonal-covariance Gaussian mixture fitted by EM,
//! and a diagonal-Gaussian HMM fitted by Baum-Welch. Parameters are stored in
//! standardized feature units together with the [`Standardizer`] that produced
//! them, so inference on new data reuses the training-set statistics.

mod alignment;
mod gmm;
mod hmm;
mod kmeans;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::FeatureMatrix;
use crate::{Error, Result, SCHEMA_VERSION};

pub use alignment::{crisis_alignment, AlignmentReport, RegimeAlignment, DEFAULT_CRISIS_YEARS};
pub use gmm::gmm_fit;
pub use hmm::{hmm_fit, viterbi};
pub use kmeans::kmeans_fit;

/// Lower bound on every fitted variance, in standardized units.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    KMeans,
    Gmm,
    Hmm,
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeKind::KMeans => "kmeans",
            RegimeKind::Gmm => "gmm",
            RegimeKind::Hmm => "hmm",
        })
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(RegimeKind::KMeans),
            "gmm" => Ok(RegimeKind::Gmm),
            "hmm" => Ok(RegimeKind::Hmm),
            other => Err(Error::validation(format!("unknown regime model {other:?}"))),
        }
    }
}

/// Per-feature affine map to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let f = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; f];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for row in rows {
            for j in 0..f {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        // Constant columns keep scale 1 so they standardize to exactly 0.
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(f: usize) -> Self {
        Self {
            mean: vec![0.0; f],
            scale: vec![1.0; f],
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Fitted regime model. Means and variances are in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModel {
    pub schema_version: u32,
    pub kind: RegimeKind,
    pub k: usize,
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    /// K×F component means μ_k.
    pub means: Vec<Vec<f64>>,
    /// K×F diagonal variances σ_k² (gmm, hmm).
    pub variances: Option<Vec<Vec<f64>>>,
    /// Component weights (gmm).
    pub mixing_weights: Option<Vec<f64>>,
    /// Row-stochastic K×K transition matrix A (hmm).
    pub transition: Option<Vec<Vec<f64>>>,
    /// Initial state distribution π (hmm).
    pub initial_dist: Option<Vec<f64>>,
    /// Per-iteration objective: within-cluster sum of squares for kmeans,
    /// log-likelihood for gmm and hmm.
    pub objective_trace: Vec<f64>,
}

/// Shared fitting options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl FitOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

/// Per-step regime probabilities ρ_t and argmax labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePosterior {
    pub years: Vec<i32>,
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Model log-likelihood of the sequence (negative WCSS / 2 for kmeans).
    pub loglik: f64,
}

impl RegimePosterior {
    pub fn from_probs(years: Vec<i32>, probs: Vec<Vec<f64>>, loglik: f64) -> Self {
        let labels = probs.iter().map(|p| argmax(p)).collect();
        Self {
            years,
            probs,
            labels,
            loglik,
        }
    }

    pub fn k(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// CSV with columns `year, rho_0..rho_{K-1}, label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["year".to_string()];
        header.extend((0..self.k()).map(|k| format!("rho_{k}")));
        header.push("label".into());
        w.write_record(&header)?;
        for ((y, p), l) in self.years.iter().zip(&self.probs).zip(&self.labels) {
            let mut rec = vec![y.to_string()];
            rec.extend(p.iter().map(|v| v.to_string()));
            rec.push(l.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log density of a diagonal Gaussian.
pub(crate) fn diag_log_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        s += LN_2PI + vi.ln() + d * d / vi;
    }
    -0.5 * s
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_fit_input(x: &FeatureMatrix, opts: &FitOptions) -> Result<()> {
    if x.n_rows() == 0 || x.n_features() == 0 {
        return Err(Error::validation("empty feature matrix"));
    }
    if opts.k == 0 {
        return Err(Error::validation("K must be >= 1"));
    }
    if opts.k > x.n_rows() {
        return Err(Error::validation(format!(
            "K = {} exceeds the number of feature rows {}",
            opts.k,
            x.n_rows()
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::validation("max_iter must be >= 1"));
    }
    Ok(())
}

pub(crate) fn count_distinct_rows(rows: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.dedup();
    sorted.len()
}

/// Initial emission parameters shared by GMM and HMM: kmeans centers, within-cluster
/// (biased) variances floored, and cluster fractions as weights.
pub(crate) fn init_from_kmeans(xs: &[Vec<f64>], opts: &FitOptions) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let (centers, labels, _) = kmeans::lloyd(xs, opts.k, opts.seed, opts.max_iter);
    let f = xs[0].len();
    let k = opts.k;
    let mut counts = vec![0usize; k];
    let mut vars = vec![vec![0.0; f]; k];
    for (x, &l) in xs.iter().zip(&labels) {
        counts[l] += 1;
        for j in 0..f {
            let d = x[j] - centers[l][j];
            vars[l][j] += d * d;
        }
    }
    for c in 0..k {
        for v in vars[c].iter_mut() {
            *v = if counts[c] >= 2 {
                (*v / counts[c] as f64).max(VARIANCE_FLOOR)
            } else {
                1.0
            };
        }
    }
    let n = xs.len() as f64;
    let mut weights: Vec<f64> = counts.iter().map(|&c| (c as f64).max(0.5) / n).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    (centers, vars, weights)
}

impl RegimeModel {
    /// Builds an HMM from explicit parameters in raw feature units.
    pub fn hmm_from_parts(
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
        transition: Vec<Vec<f64>>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let f = means.first().map_or(0, Vec::len);
        let model = Self {
            schema_version: SCHEMA_VERSION,
            kind: RegimeKind::Hmm,
            k: means.len(),
            feature_names: (0..f).map(|i| format!("f{i}")).collect(),
            standardizer: Standardizer::identity(f),
            means,
            variances: Some(variances),
            mixing_weights: None,
            transition: Some(transition),
            initial_dist: Some(initial_dist),
            objective_trace: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Builds a GMM from explicit parameters in raw feature units.
    pub fn gmm_from_parts(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>, mixing_weights: Vec<f64>) -> Result<Self> {
        let f = means.first().map_or(0, Vec::len);
        let model = Self {
            schema_version: SCHEMA_VERSION,
            kind: RegimeKind::Gmm,
            k: means.len(),
            feature_names: (0..f).map(|i| format!("f{i}")).collect(),
            standardizer: Standardizer::identity(f),
            means,
            variances: Some(variances),
            mixing_weights: Some(mixing_weights),
            transition: None,
            initial_dist: None,
            objective_trace: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Component means mapped back to raw feature units.
    pub fn means_original(&self) -> Vec<Vec<f64>> {
        let s = &self.standardizer;
        self.means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(s.mean.iter().zip(&s.scale))
                    .map(|(v, (mu, sc))| v * sc + mu)
                    .collect()
            })
            .collect()
    }

    /// Component variances mapped back to raw feature units.
    pub fn variances_original(&self) -> Option<Vec<Vec<f64>>> {
        let s = &self.standardizer;
        self.variances.as_ref().map(|vs| {
            vs.iter()
                .map(|v| v.iter().zip(&s.scale).map(|(x, sc)| x * sc * sc).collect())
                .collect()
        })
    }

    fn check_simplex(name: &str, p: &[f64], k: usize) -> Result<()> {
        if p.len() != k {
            return Err(Error::validation(format!(
                "{name} has length {}, expected {k}",
                p.len()
            )));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("{name} is not a probability vector")));
        }
        Ok(())
    }

    /// Checks the structural invariants of a (possibly deserialized) model.
    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        let f = self.n_features();
        if k == 0 {
            return Err(Error::validation("K must be >= 1"));
        }
        if self.means.len() != k || self.means.iter().any(|m| m.len() != f) {
            return Err(Error::validation("means must be K×F"));
        }
        if self.standardizer.mean.len() != f || self.standardizer.scale.len() != f {
            return Err(Error::validation("standardizer width does not match features"));
        }
        if self.kind != RegimeKind::KMeans {
            let vars = self
                .variances
                .as_ref()
                .ok_or_else(|| Error::validation("variances missing"))?;
            if vars.len() != k || vars.iter().any(|v| v.len() != f || v.iter().any(|x| !(*x > 0.0))) {
                return Err(Error::validation("variances must be K×F and positive"));
            }
        }
        match self.kind {
            RegimeKind::Gmm => {
                let w = self
                    .mixing_weights
                    .as_ref()
                    .ok_or_else(|| Error::validation("mixing_weights missing"))?;
                Self::check_simplex("mixing_weights", w, k)?;
            }
            RegimeKind::Hmm => {
                let a = self
                    .transition
                    .as_ref()
                    .ok_or_else(|| Error::validation("transition missing"))?;
                if a.len() != k {
                    return Err(Error::validation("transition must be K×K"));
                }
                for row in a {
                    Self::check_simplex("transition row", row, k)?;
                }
                let pi = self
                    .initial_dist
                    .as_ref()
                    .ok_or_else(|| Error::validation("initial_dist missing"))?;
                Self::check_simplex("initial_dist", pi, k)?;
            }
            RegimeKind::KMeans => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "unsupported regime model schema_version {}",
                model.schema_version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    pub(crate) fn standardized(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        if x.n_features() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.n_features(),
            });
        }
        Ok(self.standardizer.apply_all(&x.values))
    }

    /// Log emission densities, T×K, on standardized rows.
    pub(crate) fn log_emissions(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let vars = self.variances.as_ref().expect("emission model has variances");
        xs.iter()
            .map(|x| (0..self.k).map(|c| diag_log_pdf(x, &self.means[c], &vars[c])).collect())
            .collect()
    }
}

/// Regime probabilities for every row of `x`.
///
/// KMeans yields one-hot rows (nearest center), GMM normalized responsibilities,
/// HMM smoothed forward-backward marginals.
pub fn posterior(model: &RegimeModel, x: &FeatureMatrix) -> Result<RegimePosterior> {
    let xs = model.standardized(x)?;
    if xs.is_empty() {
        return Err(Error::validation("empty feature matrix"));
    }
    let (probs, loglik) = match model.kind {
        RegimeKind::KMeans => kmeans::one_hot(&model.means, &xs),
        RegimeKind::Gmm => gmm::responsibilities(model, &xs),
        RegimeKind::Hmm => {
            let fb = hmm::forward_backward(model, &xs);
            (fb.gamma, fb.loglik)
        }
    };
    Ok(RegimePosterior::from_probs(x.years.clone(), probs, loglik))
}

/// Fits the requested model family.
pub fn fit(kind: RegimeKind, x: &FeatureMatrix, opts: &FitOptions) -> Result<RegimeModel> {
    match kind {
        RegimeKind::KMeans => kmeans_fit(x, opts.k, opts.seed, opts.max_iter),
        RegimeKind::Gmm => gmm_fit(x, opts),
        RegimeKind::Hmm => hmm_fit(x, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]]);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn model_json_round_trip() {
        let m = RegimeModel::hmm_from_parts(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![2.0]],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let back = RegimeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = RegimeModel::hmm_from_parts(
            vec![vec![0.0], vec![1.0]],
            vec![vec![1.0], vec![2.0]],
            vec![vec![0.9, 0.2], vec![0.2, 0.8]],
            vec![0.5, 0.5],
        );
        assert!(bad.is_err());
        let neg_var = RegimeModel::gmm_from_parts(vec![vec![0.0]], vec![vec![0.0]], vec![1.0]);
        assert!(neg_var.is_err());
    }

    #[test]
    fn posterior_dimension_mismatch() {
        let m = RegimeModel::gmm_from_parts(vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]], vec![1.0]).unwrap();
        let x = FeatureMatrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(matches!(posterior(&m, &x), Err(Error::DimensionMismatch { .. })));
    }
}
