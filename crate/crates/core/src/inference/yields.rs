use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::patterning::{poisson_pmf, SpotPattern};
use crate::photonics::ScanImage;

use super::lm::{least_squares_fit, FitOptions, FitResult};
use super::models::PoissonPmf;
use super::spots::{detect_spots, SpotReadout};

/// Poisson estimates of the mean number of defects per spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    /// Maximum likelihood: λ̂ = sample mean, σ = √(λ̂/N).
    pub mle: FitResult,
    /// Least-squares fit of P(k; λ) to the normalised histogram.
    pub histogram_fit: FitResult,
    /// Number of spots with k = 0, 1, 2, …
    pub histogram: Vec<u64>,
}

fn histogram(counts: &[usize]) -> Vec<u64> {
    let k_max = counts.iter().copied().max().unwrap_or(0);
    let mut h = vec![0u64; k_max + 1];
    for &k in counts {
        h[k] += 1;
    }
    h
}

/// Poisson fit of per-spot defect counts.
pub fn fit_poisson(counts: &[usize]) -> Result<PoissonFit> {
    if counts.is_empty() {
        return Err(invalid("a Poisson fit needs at least one spot"));
    }
    let n = counts.len() as f64;
    let lambda = counts.iter().sum::<usize>() as f64 / n;
    let hist = histogram(counts);
    let ks: Vec<f64> = (0..hist.len()).map(|k| k as f64).collect();
    let freq: Vec<f64> = hist.iter().map(|&c| c as f64 / n).collect();
    let rss = ks
        .iter()
        .zip(&freq)
        .map(|(&k, &f)| (f - poisson_pmf(k as u64, lambda).unwrap_or(0.0)).powi(2))
        .sum();
    let sigma = (lambda / n).sqrt();
    let mle = FitResult {
        names: vec!["lambda".into()],
        values: vec![lambda],
        sigma: vec![sigma],
        covariance: vec![sigma * sigma],
        rss,
        n_points: counts.len(),
        iterations: 0,
        converged: true,
        gradient_cosine: 0.0,
        flags: Vec::new(),
    };
    let histogram_fit = least_squares_fit(&PoissonPmf, &ks, &freq, None, &[lambda], &FitOptions::default())?;
    Ok(PoissonFit {
        mle,
        histogram_fit,
        histogram: hist,
    })
}

/// Conversion yield and single-defect rate at one dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    /// Ions per spot.
    pub dose: f64,
    pub n_spots: usize,
    pub lambda: f64,
    pub lambda_sigma: f64,
    /// Least-squares λ from the histogram, for comparison with the MLE.
    pub lambda_histogram_fit: f64,
    /// η̂ = λ̂ / dose.
    pub conversion_yield: f64,
    /// σ(λ̂)/dose; the dose uncertainty is not propagated.
    pub conversion_yield_sigma: f64,
    /// P(1; λ̂).
    pub single_rate: f64,
    pub single_rate_sigma: f64,
    /// Spots with k = 0, 1, 2, … defects.
    pub histogram: Vec<u64>,
    /// Dose uncertainty (ions/spot) from the dwell-time resolution, if known.
    pub dose_uncertainty: Option<f64>,
}

/// Yield report for per-spot defect counts at `dose` ions per spot.
pub fn yield_report(counts: &[usize], dose: f64) -> Result<YieldReport> {
    if !(dose > 0.0 && dose.is_finite()) {
        return Err(domain(format!("dose must be positive, got {dose}")));
    }
    let fit = fit_poisson(counts)?;
    let (lambda, sigma) = (fit.mle.values[0], fit.mle.sigma[0]);
    let eta = lambda / dose;
    if eta > 1.0 {
        return Err(domain(format!("estimated yield {eta} exceeds one defect per ion")));
    }
    let single = poisson_pmf(1, lambda)?;
    // d/dλ (λ e^(−λ)) = (1 − λ) e^(−λ)
    let single_sigma = ((1.0 - lambda) * (-lambda).exp()).abs() * sigma;
    Ok(YieldReport {
        dose,
        n_spots: counts.len(),
        lambda,
        lambda_sigma: sigma,
        lambda_histogram_fit: fit.histogram_fit.values[0],
        conversion_yield: eta,
        conversion_yield_sigma: sigma / dose,
        single_rate: single,
        single_rate_sigma: single_sigma,
        histogram: fit.histogram,
        dose_uncertainty: None,
    })
}

/// Text table with one row per dose: dose, λ̂ ± σ, η̂ %, single-defect rate %.
pub fn format_yield_table(reports: &[YieldReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>10}  {:>6}  {:>15}  {:>15}  {:>15}",
        "dose", "spots", "lambda", "yield %", "single %"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:>10.2}  {:>6}  {:>15}  {:>15}  {:>15}",
            r.dose,
            r.n_spots,
            format!("{:.3} ± {:.3}", r.lambda, r.lambda_sigma),
            format!("{:.2} ± {:.2}", 100.0 * r.conversion_yield, 100.0 * r.conversion_yield_sigma),
            format!("{:.1} ± {:.1}", 100.0 * r.single_rate, 100.0 * r.single_rate_sigma),
        );
    }
    out
}

/// Spot read-outs and the resulting yield report for one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayAnalysis {
    pub readouts: Vec<SpotReadout>,
    pub report: YieldReport,
}

/// detect_spots → classify → Poisson fit → yield report.
pub fn analyze_scan(image: &ScanImage, pattern: &SpotPattern, dose: f64, reference_power_mw: f64) -> Result<ArrayAnalysis> {
    let readouts = detect_spots(image, pattern, reference_power_mw)?;
    if readouts.is_empty() {
        return Err(invalid("no spot of the pattern lies on the image"));
    }
    let counts: Vec<usize> = readouts.iter().map(|r| r.n_defects).collect();
    let report = yield_report(&counts, dose)?;
    Ok(ArrayAnalysis { readouts, report })
}
