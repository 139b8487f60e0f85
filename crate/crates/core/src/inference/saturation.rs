use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::lm::{least_squares_fit, FitOptions, FitResult};
use super::models::Saturation;
use super::read_columns;

pub const FLAG_LINEAR_REGIME: &str = "linear_regime";

/// Intensity against excitation power, optionally with per-point uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationData {
    pub power_mw: Vec<f64>,
    pub intensity_kcps: Vec<f64>,
    pub sigma_kcps: Option<Vec<f64>>,
}

impl SaturationData {
    /// Reads `power_mw,intensity_kcps[,sigma_kcps]` rows.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut cols = read_columns(r, 2)?;
        let sigma = (cols.len() > 2).then(|| cols.swap_remove(2));
        Ok(Self {
            power_mw: cols[0].clone(),
            intensity_kcps: cols[1].clone(),
            sigma_kcps: sigma,
        })
    }
}

/// Starting point from the linearisation 1/I = 1/I_S + (P_S/I_S)(1/P).
fn initial_guess(p: &[f64], i: &[f64]) -> [f64; 2] {
    let n = p.len() as f64;
    let xs: Vec<f64> = p.iter().map(|v| 1.0 / v).collect();
    let ys: Vec<f64> = i.iter().map(|v| 1.0 / v).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let i_max = i.iter().copied().fold(0.0, f64::max);
    if intercept > 0.0 && slope > 0.0 && (1.0 / intercept).is_finite() {
        [1.0 / intercept, slope / intercept]
    } else {
        let mut sorted = p.to_vec();
        sorted.sort_by(f64::total_cmp);
        [2.0 * i_max, sorted[sorted.len() / 2]]
    }
}

/// Fits I(P) = I_S / (1 + P_S/P). Data that never reach saturation (all powers
/// below the fitted P_S, or P_S known to worse than 50 %) are flagged
/// `linear_regime`.
pub fn fit_saturation(data: &SaturationData) -> Result<FitResult> {
    let (p, i) = (&data.power_mw, &data.intensity_kcps);
    if p.len() != i.len() {
        return Err(invalid("power and intensity columns differ in length"));
    }
    if p.len() < 3 {
        return Err(invalid("a saturation fit needs at least three points"));
    }
    if p.iter().any(|&v| !(v > 0.0)) || i.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("powers and intensities must be positive"));
    }
    let p0 = initial_guess(p, i);
    let mut fit = least_squares_fit(&Saturation, p, i, data.sigma_kcps.as_deref(), &p0, &FitOptions::default())?;
    let ps = fit.values[1];
    let p_max = p.iter().copied().fold(0.0, f64::max);
    if p_max < ps || !(fit.sigma[1] < 0.5 * ps.abs()) {
        fit.flag(FLAG_LINEAR_REGIME);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::saturation_intensity;

    fn data(scale: f64, powers: &[f64]) -> SaturationData {
        SaturationData {
            power_mw: powers.to_vec(),
            intensity_kcps: powers.iter().map(|&p| scale * saturation_intensity(p, 14.86, 0.47).unwrap()).collect(),
            sigma_kcps: None,
        }
    }

    const POWERS: [f64; 8] = [0.05, 0.1, 0.2, 0.4, 0.6, 1.0, 1.5, 2.5];

    #[test]
    fn noiseless_recovery_and_homogeneity() {
        let fit = fit_saturation(&data(1.0, &POWERS)).unwrap();
        assert!(fit.converged);
        assert!((fit.values[0] / 14.86 - 1.0).abs() < 1e-9);
        assert!((fit.values[1] / 0.47 - 1.0).abs() < 1e-9);
        let twice = fit_saturation(&data(2.0, &POWERS)).unwrap();
        assert!((twice.values[0] / fit.values[0] - 2.0).abs() < 1e-9);
        assert!((twice.values[1] / fit.values[1] - 1.0).abs() < 1e-9);
        assert!(fit.flags.is_empty());
    }

    #[test]
    fn linear_regime_is_flagged() {
        let powers = [0.001, 0.002, 0.003, 0.004];
        let mut d = data(1.0, &powers);
        // tiny perturbations make the curvature unresolvable
        for (k, v) in d.intensity_kcps.iter_mut().enumerate() {
            *v *= 1.0 + 1e-3 * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        let fit = fit_saturation(&d).unwrap();
        assert!(fit.has_flag(FLAG_LINEAR_REGIME), "{fit:?}");
    }

    #[test]
    fn validation_and_csv() {
        assert!(fit_saturation(&data(1.0, &[0.1, 0.2])).is_err());
        let d = SaturationData::read_csv("power_mw,intensity_kcps\n0.1,2\n0.5,7\n1,10\n".as_bytes()).unwrap();
        assert_eq!(d.power_mw, vec![0.1, 0.5, 1.0]);
        assert!(d.sigma_kcps.is_none());
    }
}
