//! Estimators: a Levenberg–Marquardt least-squares engine and the fits built on it
//! (ODMR line, background-corrected g², saturation curve), spot read-out and
//! classification, and Poisson estimation of conversion yield and single-defect
//! rate.

pub mod lm;
pub mod models;
mod g2;
mod odmr;
mod saturation;
mod spots;
mod yields;

use std::io::BufRead;

use crate::error::{Error, Result};

pub use g2::{background_correct_g2, fit_g2, FLAG_NOT_ANTIBUNCHED};
pub use lm::{least_squares_fit, FitOptions, FitResult, Model};
pub use odmr::{fit_odmr, OdmrSpectrum, FLAG_NO_RESONANCE};
pub use saturation::{fit_saturation, SaturationData, FLAG_LINEAR_REGIME};
pub use spots::{
    classify_spot, classify_spot_with_unit, detect_spots, Classification, SpotReadout, DOUBLE_G2_MAX,
    INTENSITY_UNIT_KCPS, SINGLE_G2_MAX,
};
pub use yields::{analyze_scan, fit_poisson, format_yield_table, yield_report, ArrayAnalysis, PoissonFit, YieldReport};

/// Reads comma-separated numeric columns, skipping a non-numeric header line and
/// blank lines. Every row needs at least `min_cols` values; the column count is
/// fixed by the first row.
pub fn read_columns<R: BufRead>(r: R, min_cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if cols.is_empty() && n == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", n + 1))),
        };
        if cols.is_empty() {
            if values.len() < min_cols {
                return Err(Error::Parse(format!("line {}: expected at least {min_cols} columns", n + 1)));
            }
            cols = vec![Vec::new(); values.len()];
        } else if values.len() != cols.len() {
            return Err(Error::Parse(format!("line {}: expected {} columns", n + 1, cols.len())));
        }
        for (c, v) in cols.iter_mut().zip(values) {
            c.push(v);
        }
    }
    if cols.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(cols)
}

/// Centred moving average over 2·half + 1 points, truncated at the ends.
pub(crate) fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(y.len());
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
