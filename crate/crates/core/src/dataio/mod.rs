//! Annual return panels and the feature set used for regime detection.
//!
//! Panel CSV format: UTF-8, one header row, a `year` column followed by one column
//! per asset. Values are decimal fractions (`0.07` is a 7% return), `.` is the
//! decimal separator and there are no thousands separators.

mod synth;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use synth::{synthetic_panel, SynthSpec};

/// T×N matrix of annual decimal-fraction returns indexed by calendar year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    years: Vec<i32>,
    asset_names: Vec<String>,
    returns: Vec<Vec<f64>>,
}

impl ReturnPanel {
    /// Validates and canonicalises a panel: rows are sorted by year, years must be
    /// unique, every return finite and strictly greater than -1.
    pub fn new(years: Vec<i32>, asset_names: Vec<String>, returns: Vec<Vec<f64>>) -> Result<Self> {
        if years.len() != returns.len() {
            return Err(Error::validation(format!(
                "{} years but {} return rows",
                years.len(),
                returns.len()
            )));
        }
        if asset_names.is_empty() {
            return Err(Error::validation("panel has no asset columns"));
        }
        for (i, row) in returns.iter().enumerate() {
            if row.len() != asset_names.len() {
                return Err(Error::validation(format!(
                    "row {} (year {}) has {} values, expected {}",
                    i,
                    years[i],
                    row.len(),
                    asset_names.len()
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                if !r.is_finite() || r <= -1.0 {
                    return Err(Error::validation(format!(
                        "year {} asset {}: return {} must be finite and > -1",
                        years[i], asset_names[j], r
                    )));
                }
            }
        }
        let mut order: Vec<usize> = (0..years.len()).collect();
        order.sort_by_key(|&i| years[i]);
        let years: Vec<i32> = order.iter().map(|&i| years[i]).collect();
        if let Some(w) = years.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(format!("duplicate year {}", w[0])));
        }
        let mut rows: Vec<Option<Vec<f64>>> = returns.into_iter().map(Some).collect();
        let returns = order.iter().map(|&i| rows[i].take().unwrap()).collect();
        Ok(Self {
            years,
            asset_names,
            returns,
        })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn asset_names(&self) -> &[String] {
        &self.asset_names
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn n_periods(&self) -> usize {
        self.years.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_names.len()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.asset_names.iter().position(|a| a == name)
    }

    /// Column `j` as a time series.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.iter().map(|row| row[j]).collect()
    }

    /// Rows `range` as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_periods() {
            return Err(Error::validation(format!(
                "row range {:?} invalid for panel of {} rows",
                range,
                self.n_periods()
            )));
        }
        Ok(Self {
            years: self.years[range.clone()].to_vec(),
            asset_names: self.asset_names.clone(),
            returns: self.returns[range].to_vec(),
        })
    }

    /// Rows whose year appears in `years` (in panel order).
    pub fn select_years(&self, years: &[i32]) -> Result<Self> {
        let mut ys = Vec::new();
        let mut rows = Vec::new();
        for y in years {
            let i = self
                .years
                .binary_search(y)
                .map_err(|_| Error::validation(format!("year {} not in panel", y)))?;
            ys.push(*y);
            rows.push(self.returns[i].clone());
        }
        Self::new(ys, self.asset_names.clone(), rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["year".to_string()];
        header.extend(self.asset_names.iter().cloned());
        w.write_record(&header)?;
        for (y, row) in self.years.iter().zip(&self.returns) {
            let mut rec = vec![y.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads and validates a return panel from a CSV file.
pub fn load_return_panel(path: impl AsRef<Path>) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_return_panel(file)
}

pub fn parse_return_panel<R: Read>(reader: R) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("year") {
        return Err(Error::validation(format!(
            "first column header must be `year`, found {:?}",
            header.get(0).unwrap_or("")
        )));
    }
    let asset_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut years = Vec::new();
    let mut returns = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Data rows are numbered from 1, matching line numbers after the header.
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::validation(format!(
                "row {} has {} fields, header has {}",
                row,
                rec.len(),
                header.len()
            )));
        }
        let year: i32 = rec[0].parse().map_err(|_| Error::Parse {
            row,
            column: "year".into(),
            message: format!("cannot parse {:?} as a year", &rec[0]),
        })?;
        let mut vals = Vec::with_capacity(asset_names.len());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: asset_names[j].clone(),
                message: format!("cannot parse {:?} as a decimal return", cell),
            })?;
            vals.push(v);
        }
        years.push(year);
        returns.push(vals);
    }
    if years.is_empty() {
        return Err(Error::validation("panel has no data rows"));
    }
    ReturnPanel::new(years, asset_names, returns)
}

/// Row-aligned feature matrix; row `t` only depends on panel rows `<= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub years: Vec<i32>,
    pub feature_names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(years: Vec<i32>, feature_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if years.len() != values.len() {
            return Err(Error::validation("feature years and rows differ in length"));
        }
        for row in &values {
            if row.len() != feature_names.len() {
                return Err(Error::validation("ragged feature matrix"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("non-finite feature value"));
            }
        }
        Ok(Self {
            years,
            feature_names,
            values,
        })
    }

    /// Builds an unnamed matrix from raw rows (years 0..T).
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self> {
        let f = values.first().map_or(0, Vec::len);
        let names = (0..f).map(|i| format!("f{i}")).collect();
        let years = (0..values.len() as i32).collect();
        Self::new(years, names, values)
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["year".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (y, row) in self.years.iter().zip(&self.values) {
            let mut rec = vec![y.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_WINDOW: usize = 5;

/// Sample standard deviation (divide by n-1); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 || xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Drawdown at the end of `window_returns` of wealth compounded from 1.0.
fn window_drawdown(window_returns: &[f64]) -> f64 {
    let mut wealth = 1.0;
    let mut peak = 1.0_f64;
    for r in window_returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
    }
    wealth / peak - 1.0
}

/// Rolling volatility, rolling drawdown, spreads and trailing mean returns.
///
/// Columns, in order: `vol_<asset>` for each asset, `dd_<asset>` for each asset,
/// `spread_<a>_<b>` for each spread pair, `mean_<asset>` for each asset. The first
/// `window - 1` panel rows are consumed as warm-up.
pub fn compute_features(
    panel: &ReturnPanel,
    window: usize,
    spread_pairs: &[(String, String)],
) -> Result<FeatureMatrix> {
    if window < 2 {
        return Err(Error::validation(format!("window must be >= 2, got {window}")));
    }
    let t_len = panel.n_periods();
    if window > t_len {
        return Err(Error::validation(format!(
            "window {} exceeds panel length {}",
            window, t_len
        )));
    }
    let pairs: Vec<(usize, usize)> = spread_pairs
        .iter()
        .map(|(a, b)| {
            let ia = panel
                .asset_index(a)
                .ok_or_else(|| Error::validation(format!("unknown spread asset {a}")))?;
            let ib = panel
                .asset_index(b)
                .ok_or_else(|| Error::validation(format!("unknown spread asset {b}")))?;
            Ok((ia, ib))
        })
        .collect::<Result<_>>()?;

    let names = panel.asset_names();
    let mut feature_names: Vec<String> = names.iter().map(|a| format!("vol_{a}")).collect();
    feature_names.extend(names.iter().map(|a| format!("dd_{a}")));
    feature_names.extend(spread_pairs.iter().map(|(a, b)| format!("spread_{a}_{b}")));
    feature_names.extend(names.iter().map(|a| format!("mean_{a}")));

    let columns: Vec<Vec<f64>> = (0..panel.n_assets()).map(|j| panel.column(j)).collect();
    let mut values = Vec::with_capacity(t_len + 1 - window);
    for t in (window - 1)..t_len {
        let lo = t + 1 - window;
        let mut row = Vec::with_capacity(feature_names.len());
        row.extend(columns.iter().map(|c| sample_std(&c[lo..=t])));
        row.extend(columns.iter().map(|c| window_drawdown(&c[lo..=t])));
        row.extend(
            pairs
                .iter()
                .map(|&(a, b)| panel.returns()[t][a] - panel.returns()[t][b]),
        );
        row.extend(columns.iter().map(|c| c[lo..=t].iter().sum::<f64>() / window as f64));
        values.push(row);
    }
    FeatureMatrix::new(panel.years()[window - 1..].to_vec(), feature_names, values)
}

fn find_asset(panel: &ReturnPanel, needles: &[&str]) -> Option<String> {
    panel
        .asset_names()
        .iter()
        .find(|name| {
            let n = name.to_ascii_lowercase().replace(['-', '_', ' ', '&', '.'], "");
            needles.iter().any(|k| n.contains(k))
        })
        .cloned()
}

/// Column names used for the macro risk-premium and yield-spread signals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacroColumns {
    pub equity: Option<String>,
    pub tbill: Option<String>,
    pub corporate: Option<String>,
    pub treasury: Option<String>,
}

impl MacroColumns {
    pub fn detect(panel: &ReturnPanel) -> Self {
        Self {
            equity: find_asset(panel, &["sp500", "sandp", "equity", "stock", "spx"]),
            tbill: find_asset(panel, &["tbill", "3m", "cash"]),
            corporate: find_asset(panel, &["baa", "corp", "credit"]),
            treasury: find_asset(panel, &["t10y", "10y", "treasury", "tbond", "govt"]),
        }
    }

    /// (equity, t-bill) pair, if both columns exist.
    pub fn risk_premium(&self) -> Option<(String, String)> {
        Some((self.equity.clone()?, self.tbill.clone()?))
    }

    /// (corporate, treasury) pair, if both columns exist.
    pub fn yield_spread(&self) -> Option<(String, String)> {
        Some((self.corporate.clone()?, self.treasury.clone()?))
    }

    /// Human-readable names of the roles that could not be matched.
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.equity.is_none() {
            out.push("equity (e.g. SP500)");
        }
        if self.tbill.is_none() {
            out.push("t-bill (e.g. TBill)");
        }
        if self.corporate.is_none() {
            out.push("corporate bond (e.g. Baa)");
        }
        if self.treasury.is_none() {
            out.push("long treasury (e.g. T10Y)");
        }
        out
    }
}

/// (corporate, long treasury) and (equity, t-bill) when those columns exist.
pub fn default_spread_pairs(panel: &ReturnPanel) -> Vec<(String, String)> {
    let cols = MacroColumns::detect(panel);
    cols.yield_spread().into_iter().chain(cols.risk_premium()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(cols: &[&str], rows: &[(i32, Vec<f64>)]) -> ReturnPanel {
        ReturnPanel::new(
            rows.iter().map(|r| r.0).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            rows.iter().map(|r| r.1.clone()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parses_minimal_csv() {
        let p = parse_return_panel("year,SP500,TBill\n1928,0.4381,0.0308\n".as_bytes()).unwrap();
        assert_eq!(p.n_periods(), 1);
        assert_eq!(p.n_assets(), 2);
        assert_eq!(p.returns()[0], vec![0.4381, 0.0308]);
    }

    #[test]
    fn sorts_rows_by_year() {
        let p = parse_return_panel("year,A\n1930,0.1\n1929,0.2\n".as_bytes()).unwrap();
        assert_eq!(p.years(), &[1929, 1930]);
        assert_eq!(p.returns()[0], vec![0.2]);
    }

    #[test]
    fn rejects_total_loss_exceeding_return() {
        let e = parse_return_panel("year,A\n1930,-1.5\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn malformed_cell_reports_row_and_column() {
        let e = parse_return_panel("year,A,B\n1930,0.1,abc\n".as_bytes()).unwrap_err();
        match e {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "B");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_year_and_ragged_rows_rejected() {
        let dup = parse_return_panel("year,A\n1930,0.1\n1930,0.2\n".as_bytes()).unwrap_err();
        assert!(matches!(dup, Error::Validation(_)));
        let ragged = parse_return_panel("year,A,B\n1930,0.1\n".as_bytes()).unwrap_err();
        assert!(matches!(ragged, Error::Validation(_)));
        let header = parse_return_panel("yr,A\n1930,0.1\n".as_bytes()).unwrap_err();
        assert!(matches!(header, Error::Validation(_)));
    }

    #[test]
    fn zero_variance_rolling_std() {
        let p = panel(&["A"], &[(1, vec![0.0]), (2, vec![0.0]), (3, vec![0.0])]);
        let f = compute_features(&p, 2, &[]).unwrap();
        assert_eq!(f.n_rows(), 2);
        assert_eq!(f.values[0][0], 0.0);
        assert_eq!(f.values[1][0], 0.0);
    }

    #[test]
    fn rolling_drawdown_compounds_from_window_start() {
        let p = panel(&["A"], &[(1, vec![0.10]), (2, vec![-0.10])]);
        let f = compute_features(&p, 2, &[]).unwrap();
        let dd = f.values[0][1];
        assert!((dd - (0.99 / 1.10 - 1.0)).abs() < 1e-15);
        assert!((dd + 0.10).abs() < 1e-12);
    }

    #[test]
    fn spread_column_is_return_difference() {
        let p = panel(&["Baa", "T10Y"], &[(1, vec![0.02, 0.01]), (2, vec![0.08, 0.05])]);
        let pairs = vec![("Baa".to_string(), "T10Y".to_string())];
        let f = compute_features(&p, 2, &pairs).unwrap();
        let col = f.feature_names.iter().position(|n| n == "spread_Baa_T10Y").unwrap();
        assert!((f.values[0][col] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn feature_errors() {
        let p = panel(&["A"], &[(1, vec![0.0]), (2, vec![0.0])]);
        assert!(compute_features(&p, 3, &[]).is_err());
        assert!(compute_features(&p, 1, &[]).is_err());
        let pairs = vec![("A".to_string(), "Z".to_string())];
        assert!(compute_features(&p, 2, &pairs).is_err());
    }

    #[test]
    fn default_pairs_detect_named_columns() {
        let p = panel(&["SP500", "TBill", "T10Y", "Baa"], &[(1, vec![0.1, 0.01, 0.02, 0.03])]);
        let pairs = default_spread_pairs(&p);
        assert_eq!(
            pairs,
            vec![
                ("Baa".to_string(), "T10Y".to_string()),
                ("SP500".to_string(), "TBill".to_string())
            ]
        );
        let none = panel(&["X", "Y"], &[(1, vec![0.1, 0.0])]);
        assert!(default_spread_pairs(&none).is_empty());
    }

    fn arb_panel() -> impl Strategy<Value = ReturnPanel> {
        (3usize..20, 1usize..4).prop_flat_map(|(t, n)| {
            proptest::collection::vec(proptest::collection::vec(-0.5f64..0.8, n), t).prop_map(move |rows| {
                let years = (0..t as i32).map(|y| 1950 + y).collect();
                let names = (0..n).map(|j| format!("A{j}")).collect();
                ReturnPanel::new(years, names, rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn shuffled_rows_load_identically(p in arb_panel(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..p.n_periods()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let years = idx.iter().map(|&i| p.years()[i]).collect();
            let rows = idx.iter().map(|&i| p.returns()[i].clone()).collect();
            let q = ReturnPanel::new(years, p.asset_names().to_vec(), rows).unwrap();
            prop_assert_eq!(p, q);
        }

        #[test]
        fn features_are_causal(p in arb_panel(), cut in 0usize..100) {
            let window = 2;
            let full = compute_features(&p, window, &[]).unwrap();
            let end = window + cut % (p.n_periods() - window + 1);
            let prefix = compute_features(&p.slice(0..end).unwrap(), window, &[]).unwrap();
            prop_assert_eq!(&full.values[..prefix.n_rows()], &prefix.values[..]);
        }

        #[test]
        fn constant_series_has_exactly_zero_vol(c in -0.5f64..0.5, t in 2usize..15, w in 2usize..15) {
            let rows: Vec<(i32, Vec<f64>)> = (0..t as i32).map(|y| (y, vec![c])).collect();
            let p = panel(&["A"], &rows);
            let f = compute_features(&p, w.min(t), &[]).unwrap();
            prop_assert!(f.values.iter().all(|r| r[0] == 0.0));
        }
    }
}
