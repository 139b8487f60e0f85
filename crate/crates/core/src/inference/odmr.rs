use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::lm::{least_squares_fit, FitOptions, FitResult};
use super::models::Lorentzian;
use super::{moving_average, read_columns};

pub const FLAG_NO_RESONANCE: &str = "no_resonance";

/// ODMR spectrum: microwave frequency (MHz, strictly increasing) against relative
/// PL change ΔPL/PL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrSpectrum {
    frequency_mhz: Vec<f64>,
    contrast: Vec<f64>,
}

impl OdmrSpectrum {
    pub fn new(frequency_mhz: Vec<f64>, contrast: Vec<f64>) -> Result<Self> {
        if frequency_mhz.len() != contrast.len() {
            return Err(invalid("frequency and contrast axes differ in length"));
        }
        if frequency_mhz.iter().chain(&contrast).any(|v| !v.is_finite()) {
            return Err(invalid("spectrum values must be finite"));
        }
        if frequency_mhz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("frequencies must be strictly increasing"));
        }
        Ok(Self { frequency_mhz, contrast })
    }

    pub fn frequency_mhz(&self) -> &[f64] {
        &self.frequency_mhz
    }

    pub fn contrast(&self) -> &[f64] {
        &self.contrast
    }

    pub fn len(&self) -> usize {
        self.frequency_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency_mhz.is_empty()
    }

    /// Reads `frequency_mhz,contrast` rows.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let cols = read_columns(r, 2)?;
        Self::new(cols[0].clone(), cols[1].clone())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_mhz,contrast")?;
        for (f, c) in self.frequency_mhz.iter().zip(&self.contrast) {
            writeln!(w, "{f},{c}")?;
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting point: baseline from the median, f₀ at the largest excursion of the
/// smoothed spectrum (dip or peak), Γ from the width at half that excursion.
fn initial_guess(s: &OdmrSpectrum) -> [f64; 4] {
    let f = &s.frequency_mhz;
    let y = moving_average(&s.contrast, 2);
    let baseline = median(&y);
    let (imin, imax) = (0..y.len()).fold((0, 0), |(lo, hi), i| {
        (if y[i] < y[lo] { i } else { lo }, if y[i] > y[hi] { i } else { hi })
    });
    let centre = if (y[imax] - baseline).abs() > (baseline - y[imin]).abs() { imax } else { imin };
    let amplitude = y[centre] - baseline;
    let half = 0.5 * amplitude.abs();
    let beyond = |i: usize| (y[i] - baseline).abs() < half || (y[i] - baseline) * amplitude < 0.0;
    let left = (0..centre).rev().find(|&i| beyond(i)).unwrap_or(0);
    let right = (centre + 1..y.len()).find(|&i| beyond(i)).unwrap_or(y.len() - 1);
    let span = f[f.len() - 1] - f[0];
    let mut width = f[right] - f[left];
    if !(width > 0.0) {
        width = 0.25 * span;
    }
    [f[centre], width, amplitude, baseline]
}

/// Lorentzian fit of an ODMR line. Dips and peaks are both accepted (contrast may
/// take either sign); the returned FWHM is positive. A contrast not significant at
/// 3σ, or an unconstrained fit, is flagged `no_resonance`.
pub fn fit_odmr(spectrum: &OdmrSpectrum) -> Result<FitResult> {
    if spectrum.len() < 5 {
        return Err(invalid("an ODMR fit needs at least five points"));
    }
    let p0 = initial_guess(spectrum);
    let mut fit = least_squares_fit(
        &Lorentzian,
        &spectrum.frequency_mhz,
        &spectrum.contrast,
        None,
        &p0,
        &FitOptions::default(),
    )?;
    fit.values[1] = fit.values[1].abs();
    let c = fit.values[2];
    let sc = fit.sigma[2];
    let f = &spectrum.frequency_mhz;
    let inside = fit.values[0] >= f[0] && fit.values[0] <= f[f.len() - 1];
    if !(c.abs() > 3.0 * sc) || !inside || !fit.sigma[0].is_finite() {
        fit.flag(FLAG_NO_RESONANCE);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::lm::Model;

    fn synthetic(shift: f64) -> OdmrSpectrum {
        let f: Vec<f64> = (0..200).map(|i| 20.0 + shift + i as f64 * 0.5).collect();
        let c = f.iter().map(|&x| Lorentzian.eval(x, &[71.22 + shift, 17.87, 0.0028, 0.0])).collect();
        OdmrSpectrum::new(f, c).unwrap()
    }

    #[test]
    fn exact_recovery_and_translation() {
        let a = fit_odmr(&synthetic(0.0)).unwrap();
        assert!(a.converged, "{a:?}");
        assert!((a.values[0] - 71.22).abs() < 1e-8);
        assert!((a.values[1] - 17.87).abs() < 1e-8);
        assert!((a.values[2] - 0.0028).abs() < 1e-12);
        let b = fit_odmr(&synthetic(10.0)).unwrap();
        assert!((b.values[0] - a.values[0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn dip_is_accepted() {
        let f: Vec<f64> = (0..100).map(|i| 40.0 + i as f64).collect();
        let c = f.iter().map(|&x| Lorentzian.eval(x, &[90.0, 12.0, -0.01, 1.0])).collect();
        let fit = fit_odmr(&OdmrSpectrum::new(f, c).unwrap()).unwrap();
        assert!((fit.values[0] - 90.0).abs() < 1e-8 && (fit.values[2] + 0.01).abs() < 1e-12);
        assert!(fit.flags.is_empty());
    }

    #[test]
    fn flat_spectrum_is_flagged() {
        let f: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = fit_odmr(&OdmrSpectrum::new(f, vec![0.5; 50]).unwrap()).unwrap();
        assert!(fit.has_flag(FLAG_NO_RESONANCE));
        assert!(fit.values[2].abs() < 1e-9);
    }

    #[test]
    fn validation_and_csv() {
        assert!(OdmrSpectrum::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(OdmrSpectrum::new(vec![1.0], vec![0.0, 0.0]).is_err());
        let s = synthetic(0.0);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(OdmrSpectrum::read_csv(buf.as_slice()).unwrap(), s);
    }
}
