use rand::Rng;

use super::{check_fit_input, sq_dist, RegimeKind, RegimeModel, Standardizer};
use crate::dataio::FeatureMatrix;
use crate::{seed, Result, SCHEMA_VERSION};

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, sq_dist(&centers[0], x));
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(center, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(centers: &[Vec<f64>], xs: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut wcss = 0.0;
    let labels = xs
        .iter()
        .map(|x| {
            let (c, d) = nearest(centers, x);
            wcss += d;
            c
        })
        .collect();
    (labels, wcss)
}

fn plus_plus_init(xs: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::stream(seed, "kmeans++", 0);
    let n = xs.len();
    let mut centers = vec![xs[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(xs[idx].clone());
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Lloyd iterations from a kmeans++ start on already-standardized rows.
///
/// Returns centers, labels and the WCSS after every assignment step. An empty
/// cluster keeps its previous center.
pub(crate) fn lloyd(xs: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>) {
    let f = xs[0].len();
    let mut centers = plus_plus_init(xs, k, seed);
    let (mut labels, wcss) = assign(&centers, xs);
    let mut trace = vec![wcss];
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; f]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in xs.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let (next, wcss) = assign(&centers, xs);
        trace.push(wcss);
        if next == labels {
            break;
        }
        labels = next;
    }
    (centers, labels, trace)
}

/// Lloyd's algorithm with kmeans++ seeding on standardized features.
pub fn kmeans_fit(x: &FeatureMatrix, k: usize, seed: u64, max_iter: usize) -> Result<RegimeModel> {
    let opts = super::FitOptions {
        k,
        seed,
        max_iter,
        tol: 1.0,
    };
    check_fit_input(x, &opts)?;
    let standardizer = Standardizer::fit(&x.values);
    let xs = standardizer.apply_all(&x.values);
    let (centers, _, trace) = lloyd(&xs, k, seed, max_iter);
    Ok(RegimeModel {
        schema_version: SCHEMA_VERSION,
        kind: RegimeKind::KMeans,
        k,
        feature_names: x.feature_names.clone(),
        standardizer,
        means: centers,
        variances: None,
        mixing_weights: None,
        transition: None,
        initial_dist: None,
        objective_trace: trace,
    })
}

pub(crate) fn one_hot(centers: &[Vec<f64>], xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let (labels, wcss) = assign(centers, xs);
    let probs = labels
        .iter()
        .map(|&l| {
            let mut row = vec![0.0; centers.len()];
            row[l] = 1.0;
            row
        })
        .collect();
    (probs, -0.5 * wcss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimes::posterior;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separable_points_recovered_exactly() {
        let x = FeatureMatrix::from_rows(vec![vec![0.0, 0.0], vec![10.0, 10.0]]).unwrap();
        let m = kmeans_fit(&x, 2, 1, 50).unwrap();
        let mut centers = m.means_original();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (c, want) in centers.iter().zip([[0.0, 0.0], [10.0, 10.0]]) {
            for (a, b) in c.iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(m.objective_trace.last().unwrap().abs() < 1e-20);
    }

    #[test]
    fn single_cluster_is_feature_mean() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 7.0], vec![6.0, 0.0]];
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let m = kmeans_fit(&x, 1, 9, 10).unwrap();
        let c = &m.means_original()[0];
        assert!((c[0] - 3.0).abs() < 1e-12);
        assert!((c[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_gaussians_six_sigma_apart_fully_separated() {
        let mut rng = seed::stream(5, "test", 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..60 {
            let g = i % 2;
            let off = if g == 0 { 0.0 } else { 6.0 };
            rows.push(vec![off + n.sample(&mut rng), off + n.sample(&mut rng)]);
            truth.push(g);
        }
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let m = kmeans_fit(&x, 2, 3, 100).unwrap();
        let post = posterior(&m, &x).unwrap();
        let agree = post.labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(agree == 60 || agree == 0, "agreement {agree}");
    }

    #[test]
    fn wcss_non_increasing_and_one_hot() {
        let mut rng = seed::stream(11, "test", 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![n.sample(&mut rng), n.sample(&mut rng)]).collect();
        let x = FeatureMatrix::from_rows(rows).unwrap();
        let m = kmeans_fit(&x, 4, 2, 100).unwrap();
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let post = posterior(&m, &x).unwrap();
        for row in &post.probs {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 3);
        }
        assert_eq!(kmeans_fit(&x, 4, 2, 100).unwrap(), m);
    }

    #[test]
    fn rejects_bad_k() {
        let x = FeatureMatrix::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(kmeans_fit(&x, 3, 0, 10).is_err());
        let empty = FeatureMatrix::from_rows(vec![]).unwrap();
        assert!(kmeans_fit(&empty, 1, 0, 10).is_err());
    }
}
