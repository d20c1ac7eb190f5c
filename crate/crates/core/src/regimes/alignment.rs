use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Crisis years covered by the bundled defaults (1931, 1974, 1987, 2001, 2008, 2020).
pub const DEFAULT_CRISIS_YEARS: [i32; 6] = [1931, 1974, 1987, 2001, 2008, 2020];

/// How well "regime k is active" detects crisis years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeAlignment {
    pub regime: usize,
    /// Fraction of crisis years labeled with this regime (the detector's recall).
    pub crisis_fraction: f64,
    /// Fraction of non-crisis years labeled with this regime.
    pub non_crisis_fraction: f64,
    /// Share of years labeled with this regime that are crisis years;
    /// `None` when the regime never occurs.
    pub precision: Option<f64>,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub crisis_years_used: Vec<i32>,
    pub regimes: Vec<RegimeAlignment>,
    pub warnings: Vec<String>,
}

impl AlignmentReport {
    /// Regime with the highest crisis recall (ties: higher precision, then lowest index).
    pub fn best_crisis_regime(&self) -> Option<&RegimeAlignment> {
        self.regimes
            .iter()
            .fold(None, |best: Option<&RegimeAlignment>, r| match best {
                None => Some(r),
                Some(b) => {
                    let key = |x: &RegimeAlignment| (x.recall, x.precision.unwrap_or(-1.0));
                    if key(r) > key(b) {
                        Some(r)
                    } else {
                        Some(b)
                    }
                }
            })
    }
}

/// Compares hard regime labels with a list of crisis years.
///
/// Crisis years that are not present in `years` are skipped and reported as warnings.
/// The number of regimes is `max(label) + 1`.
pub fn crisis_alignment(labels: &[usize], years: &[i32], crisis_years: &[i32]) -> Result<AlignmentReport> {
    if labels.len() != years.len() {
        return Err(Error::validation(format!(
            "{} labels but {} years",
            labels.len(),
            years.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("empty label sequence"));
    }
    let mut warnings = Vec::new();
    let mut used = Vec::new();
    let (lo, hi) = (years[0], years[years.len() - 1]);
    for &cy in crisis_years {
        if cy < lo || cy > hi {
            warnings.push(format!("crisis year {cy} outside panel range {lo}-{hi}; skipped"));
        } else if !years.contains(&cy) {
            warnings.push(format!("crisis year {cy} missing from panel years; skipped"));
        } else if !used.contains(&cy) {
            used.push(cy);
        }
    }
    let is_crisis: Vec<bool> = years.iter().map(|y| used.contains(y)).collect();
    let n_crisis = is_crisis.iter().filter(|&&c| c).count();
    let n_calm = years.len() - n_crisis;
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let regimes = (0..k)
        .map(|regime| {
            let mut hit = 0usize;
            let mut false_alarm = 0usize;
            for (&l, &c) in labels.iter().zip(&is_crisis) {
                if l == regime {
                    if c {
                        hit += 1;
                    } else {
                        false_alarm += 1;
                    }
                }
            }
            let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let labeled = hit + false_alarm;
            RegimeAlignment {
                regime,
                crisis_fraction: ratio(hit, n_crisis),
                non_crisis_fraction: ratio(false_alarm, n_calm),
                precision: (labeled > 0).then(|| ratio(hit, labeled)),
                recall: ratio(hit, n_crisis),
            }
        })
        .collect();
    Ok(AlignmentReport {
        crisis_years_used: used,
        regimes,
        warnings,
    })
}
