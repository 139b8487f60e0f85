use crate::error::{invalid, Result};
use crate::photonics::{signal_fraction, CorrelationHistogram};

use super::lm::{least_squares_fit, FitOptions, FitResult};
use super::models::G2Binned;
use super::moving_average;

pub const FLAG_NOT_ANTIBUNCHED: &str = "not_antibunched";

/// Removes uncorrelated background: g² = (C_N − (1 − ρ²)) / ρ², ρ = S/(S + B).
pub fn background_correct_g2(c_n: &[f64], signal_kcps: f64, background_kcps: f64) -> Result<Vec<f64>> {
    let rho = signal_fraction(signal_kcps, background_kcps)?;
    let r2 = rho * rho;
    Ok(c_n.iter().map(|c| (c - (1.0 - r2)) / r2).collect())
}

/// Starting points for the bunching time τ₂, as multiples of the τ₁ guess.
const TAU2_STARTS: [f64; 3] = [5.0, 15.0, 50.0];

/// Curve-extreme starting point `[a, b, τ₁]`: the dip depth from the central
/// bins, the bunching amplitude from the smoothed maximum, τ₁ from the delay at
/// which the curve recovers halfway out of the dip.
fn initial_guess(tau: &[f64], y: &[f64], bin_width: f64) -> [f64; 3] {
    let smooth = moving_average(y, 2);
    let mid = tau.len() / 2;
    let dip = 0.5 * (y[mid - 1] + y[mid]);
    let peak = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b = (peak - 1.0).max(0.01);
    let a = (b - dip).max(-0.99);
    let half = 0.5 * (dip + 1.0);
    let t_half = (mid..tau.len())
        .find(|&i| smooth[i] >= half)
        .map(|i| tau[i].abs())
        .unwrap_or(tau[tau.len() - 1] / 4.0);
    let tau1 = (t_half / std::f64::consts::LN_2).max(bin_width);
    [a, b, tau1]
}

/// Fits the three-level g² model (averaged over each bin) to a correlation
/// histogram, optionally after background correction with signal S and
/// background B. Points are weighted by their Poisson errors and the best of
/// several τ₂ starting values is kept. Appends `g2_at_zero` = b − a with
/// propagated uncertainty; a dip not significant at 3σ is flagged
/// `not_antibunched`.
pub fn fit_g2(hist: &CorrelationHistogram, signal_kcps: f64, background_kcps: f64, correct: bool) -> Result<FitResult> {
    if hist.n_bins() < 8 {
        return Err(invalid("a g² fit needs at least eight histogram bins"));
    }
    let tau = hist.centers_ns();
    let mut y = hist.c_n();
    let mut sigma = hist.c_n_sigma();
    if correct {
        y = background_correct_g2(&y, signal_kcps, background_kcps)?;
        let rho = signal_fraction(signal_kcps, background_kcps)?;
        sigma.iter_mut().for_each(|s| *s /= rho * rho);
    }
    let keep: Vec<usize> = (0..tau.len()).filter(|&i| sigma[i].is_finite()).collect();
    let x: Vec<f64> = keep.iter().map(|&i| tau[i]).collect();
    let yk: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let sk: Vec<f64> = keep.iter().map(|&i| sigma[i]).collect();
    let model = G2Binned {
        bin_width_ns: hist.bin_width_ns,
    };
    let [a0, b0, t1] = initial_guess(&tau, &y, hist.bin_width_ns);
    let mut best: Option<FitResult> = None;
    for m in TAU2_STARTS {
        let fit = least_squares_fit(&model, &x, &yk, Some(&sk), &[a0, b0, t1, m * t1], &FitOptions::default())?;
        let better = match &best {
            None => true,
            Some(b) => (fit.converged, -fit.rss) > (b.converged, -b.rss),
        };
        if better {
            best = Some(fit);
        }
    }
    let mut fit = best.expect("at least one start");
    let g0 = fit.values[1] - fit.values[0];
    let var = fit.sigma[0].powi(2) + fit.sigma[1].powi(2) - 2.0 * fit.covariance_of("a", "b").unwrap_or(0.0);
    let s0 = if var.is_finite() { var.max(0.0).sqrt() } else { f64::INFINITY };
    fit.push_derived("g2_at_zero", g0, s0);
    if !(g0 + 3.0 * s0 < 1.0) {
        fit.flag(FLAG_NOT_ANTIBUNCHED);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::lm::Model;
    use crate::photonics::{g2_model, mix_background};

    fn model_histogram(p: [f64; 4], mix: Option<(f64, f64)>) -> CorrelationHistogram {
        let w = 2.0;
        let n = 500;
        let model = G2Binned { bin_width_ns: w };
        let expected = vec![1e4; 2 * n];
        let counts = (0..2 * n)
            .map(|i| {
                let t = (i as f64 - n as f64 + 0.5) * w;
                let g = model.eval(t, &p);
                let c = match mix {
                    Some((s, b)) => mix_background(g, s, b).unwrap(),
                    None => g,
                };
                (c * 1e4).round() as u64
            })
            .collect();
        CorrelationHistogram {
            bin_width_ns: w,
            counts,
            expected,
        }
    }

    #[test]
    fn correction_examples() {
        let c = background_correct_g2(&[0.4544, 1.0], 6.0, 2.0).unwrap();
        assert!((c[0] - 0.0300).abs() < 1e-3);
        assert!((c[1] - 1.0).abs() < 1e-15);
        assert_eq!(background_correct_g2(&[0.3, 0.7], 6.0, 0.0).unwrap(), vec![0.3, 0.7]);
        assert!(background_correct_g2(&[1.0], 0.0, 2.0).is_err());
    }

    #[test]
    fn correction_inverts_mixing() {
        let tau: Vec<f64> = (-200..200).map(|i| i as f64 * 1.7).collect();
        let g: Vec<f64> = tau.iter().map(|&t| g2_model(t, 0.3, 0.33, 30.0, 500.0)).collect();
        let mixed: Vec<f64> = g.iter().map(|&v| mix_background(v, 6.0, 2.0).unwrap()).collect();
        let back = background_correct_g2(&mixed, 6.0, 2.0).unwrap();
        let dev = g.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn recovers_model_histogram() {
        let fit = fit_g2(&model_histogram([0.3, 0.33, 30.0, 500.0], None), 6.0, 0.0, false).unwrap();
        let g0 = fit.value("g2_at_zero").unwrap();
        assert!((g0 - 0.03).abs() < 0.01, "{fit:?}");
        assert!((fit.value("tau1_ns").unwrap() - 30.0).abs() < 1.0);
        assert!(!fit.has_flag(FLAG_NOT_ANTIBUNCHED));
    }

    #[test]
    fn corrected_mixed_matches_pure() {
        let pure = fit_g2(&model_histogram([0.3, 0.33, 30.0, 500.0], None), 6.0, 0.0, false).unwrap();
        let mixed = fit_g2(&model_histogram([0.3, 0.33, 30.0, 500.0], Some((6.0, 2.0))), 6.0, 2.0, true).unwrap();
        let (a, b) = (pure.value("g2_at_zero").unwrap(), mixed.value("g2_at_zero").unwrap());
        assert!((a - b).abs() < 0.02, "{a} {b}");
    }

    #[test]
    fn flat_histogram_is_not_antibunched() {
        let h = CorrelationHistogram {
            bin_width_ns: 2.0,
            counts: vec![10_000; 200],
            expected: vec![1e4; 200],
        };
        let fit = fit_g2(&h, 6.0, 0.0, false).unwrap();
        assert!(fit.has_flag(FLAG_NOT_ANTIBUNCHED), "{fit:?}");
    }
}
