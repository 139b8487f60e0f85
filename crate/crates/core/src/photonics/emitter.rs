//! Three-level emitter whose detected photons reproduce the biexponential g².
//!
//! States: ground (1), excited (2), shelving (3), with rates k₁₂ (pump), k₂₁
//! (radiative), k₂₃ (intersystem crossing) and k₃₁ (shelf decay). Its intensity
//! correlation is g²₃(τ) = 1 − (1 + a′) e^(−γ₁τ) + a′ e^(−γ₂τ), where γ₁ + γ₂ = K + k₃₁
//! and γ₁γ₂ = Q + k₃₁K, with K = k₁₂ + k₂₁ + k₂₃ and Q = k₁₂k₂₃.
//!
//! The target shape 1 − (1 + a) e^(−τ/τ₁) + b e^(−τ/τ₂) has g²(0) = b − a ≥ 0, which a
//! pure three-level system cannot produce. The emitter's light is therefore a mix of
//! a three-level stream (fraction ρₑ of the counts) and uncorrelated light, with
//!
//! ```text
//! ρₑ² = 1 + a − b,        a′ = b / ρₑ².
//! ```
//!
//! Inverting the three-level correlation for given γ₁ = 1/τ₁, γ₂ = 1/τ₂, a′:
//!
//! ```text
//! k₃₁ = γ₁γ₂ / (γ₁ + a′(γ₁ − γ₂))
//! K   = γ₁ + γ₂ − k₃₁,   Q = γ₁γ₂ − k₃₁K
//! k₂₁ = (K − 2√Q) / 2
//! k₁₂, k₂₃ = roots of x² − (K − k₂₁)x + Q   (k₁₂ the larger)
//! ```
//!
//! The split of K into k₂₁ and k₁₂ + k₂₃ is not fixed by g² alone; the midpoint of the
//! admissible range is used. Detection is an independent thinning with efficiency
//! η = s_c / (k₂₁ n₂), where s_c is the requested three-level count rate and n₂ the
//! stationary excited population. A detection leaves the system in the ground state,
//! so detections form a renewal process. With
//!
//! ```text
//! D(s) = (s + k₁₂)(s + k₂₁ + k₂₃)(s + k₃₁) − k₁₂k₂₃k₃₁,   N(s) = k₁₂k₂₁(s + k₃₁)
//! ```
//!
//! the inter-detection density has Laplace transform ηN / (D − (1 − η)N). Its
//! three poles −rᵢ give f(t) = Σ Aᵢ e^(−rᵢ t) with Aᵢ = ηN(−rᵢ)/P′(−rᵢ), and samples
//! are drawn by rejection against the slowest exponential.

use nalgebra::Matrix3;
use rand::Rng;

use crate::error::{domain, Result};

/// Transition rates of the three-level system, in 1/ns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterRates {
    pub k12: f64,
    pub k21: f64,
    pub k23: f64,
    pub k31: f64,
}

impl EmitterRates {
    /// Rates reproducing 1 − (1 + a′) e^(−τ/τ₁) + a′ e^(−τ/τ₂) for the three-level part.
    pub fn from_correlation(a_prime: f64, tau1_ns: f64, tau2_ns: f64) -> Result<Self> {
        if !(tau1_ns > 0.0 && tau2_ns > 0.0) {
            return Err(domain("correlation times must be positive"));
        }
        if !(a_prime >= 0.0) {
            return Err(domain(format!("bunching amplitude must be ≥ 0, got {a_prime}")));
        }
        let (g1, g2) = (1.0 / tau1_ns, 1.0 / tau2_ns);
        if a_prime > 0.0 && !(g1 > g2) {
            return Err(domain("antibunching time must be shorter than the bunching time"));
        }
        let k31 = g1 * g2 / (g1 + a_prime * (g1 - g2));
        let k = g1 + g2 - k31;
        let q = (g1 * g2 - k31 * k).max(0.0);
        let k21 = (k - 2.0 * q.sqrt()) / 2.0;
        if !(k21 > 0.0) {
            return Err(domain("correlation shape has no three-level realisation"));
        }
        let s = k - k21;
        let disc = (s * s - 4.0 * q).max(0.0).sqrt();
        let k12 = (s + disc) / 2.0;
        let k23 = (s - disc) / 2.0;
        Ok(Self { k12, k21, k23, k31 })
    }

    /// Stationary population of the excited state.
    pub fn excited_population(&self) -> f64 {
        let Self { k12, k21, k23, k31 } = *self;
        k12 * k31 / (k31 * (k12 + k21 + k23) + k12 * k23)
    }

    /// Photon emission rate, 1/ns.
    pub fn emission_rate(&self) -> f64 {
        self.k21 * self.excited_population()
    }

    /// Correlation amplitudes and rates (a′, γ₁, γ₂) implied by these transition rates.
    pub fn correlation(&self) -> (f64, f64, f64) {
        let Self { k12, k21, k23, k31 } = *self;
        let sum = k12 + k21 + k23 + k31;
        let prod = k12 * k23 + k31 * (k12 + k21 + k23);
        let d = (sum * sum / 4.0 - prod).max(0.0).sqrt();
        let (g1, g2) = (sum / 2.0 + d, sum / 2.0 - d);
        // a′ from k₃₁ = γ₁γ₂ / (γ₁ + a′(γ₁ − γ₂))
        let a = if g1 > g2 { (g1 * g2 / k31 - g1) / (g1 - g2) } else { 0.0 };
        (a, g1, g2)
    }
}

/// Renewal sampler of inter-detection times for a thinned three-level emitter.
#[derive(Debug, Clone)]
pub struct InterArrivalSampler {
    /// Decay rates rᵢ (1/ns) and amplitudes Aᵢ of f(t) = Σ Aᵢ e^(−rᵢ t).
    rates: [f64; 3],
    amps: [f64; 3],
    slow: usize,
    bound: f64,
    efficiency: f64,
}

impl InterArrivalSampler {
    /// Sampler whose detections arrive at `rate_per_ns` on average.
    pub fn new(rates: EmitterRates, rate_per_ns: f64) -> Result<Self> {
        let emitted = rates.emission_rate();
        let eta = rate_per_ns / emitted;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(domain(format!(
                "requested rate {rate_per_ns}/ns exceeds the emission rate {emitted}/ns of the emitter"
            )));
        }
        let EmitterRates { k12, k21, k23, k31 } = rates;
        let u = k21 + k23;
        // monic cubic P(s) = D(s) − (1 − η)N(s) = s³ + c2 s² + c1 s + c0
        let c2 = k12 + u + k31;
        let c1 = k12 * u + k31 * (k12 + u) - (1.0 - eta) * k12 * k21;
        let c0 = eta * k12 * k21 * k31;
        let companion = Matrix3::new(-c2, -c1, -c0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let eig = companion.complex_eigenvalues();
        let poly = |s: f64| ((s + c2) * s + c1) * s + c0;
        let dpoly = |s: f64| (3.0 * s + 2.0 * c2) * s + c1;
        let mut roots = [0.0; 3];
        for (i, z) in eig.iter().enumerate() {
            if z.im.abs() > 1e-9 * z.norm().max(1e-300) {
                return Err(domain("inter-arrival density has oscillating terms"));
            }
            let mut s = z.re;
            for _ in 0..50 {
                let step = poly(s) / dpoly(s);
                s -= step;
                if step.abs() <= 1e-15 * s.abs() {
                    break;
                }
            }
            roots[i] = -s;
        }
        let numerator = |s: f64| eta * k12 * k21 * (s + k31);
        let mut amps = [0.0; 3];
        for i in 0..3 {
            let s = -roots[i];
            amps[i] = numerator(s) / dpoly(s);
        }
        if roots.iter().any(|&r| !(r > 0.0)) {
            return Err(domain("inter-arrival density is not normalisable"));
        }
        let slow = (0..3)
            .min_by(|&i, &j| roots[i].partial_cmp(&roots[j]).expect("finite roots"))
            .expect("three roots");
        let r0 = roots[slow];
        let bound = (0..3)
            .map(|i| if i == slow { amps[i] / r0 } else { (amps[i] / r0).max(0.0) })
            .sum();
        Ok(Self {
            rates: roots,
            amps,
            slow,
            bound,
            efficiency: eta,
        })
    }

    /// Detection efficiency η of the thinning.
    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    /// Expected proposals per accepted sample.
    pub fn rejection_bound(&self) -> f64 {
        self.bound
    }

    /// Inter-detection probability density at `t_ns`.
    pub fn density(&self, t_ns: f64) -> f64 {
        if t_ns < 0.0 {
            return 0.0;
        }
        (0..3).map(|i| self.amps[i] * (-self.rates[i] * t_ns).exp()).sum()
    }

    /// Mean inter-detection time, Σ Aᵢ / rᵢ².
    pub fn mean_ns(&self) -> f64 {
        (0..3).map(|i| self.amps[i] / (self.rates[i] * self.rates[i])).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let r0 = self.rates[self.slow];
        loop {
            let t = -(1.0 - rng.random::<f64>()).ln() / r0;
            let proposal = r0 * (-r0 * t).exp();
            if rng.random::<f64>() * self.bound * proposal <= self.density(t) {
                return t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// g² of the three-level chain by direct integration of the population equations,
    /// starting from the ground state.
    fn chain_g2(r: &EmitterRates, tau: f64) -> f64 {
        let gen = nalgebra::Matrix3::new(
            -r.k12, r.k21, r.k31, //
            r.k12, -(r.k21 + r.k23), 0.0, //
            0.0, r.k23, -r.k31,
        );
        let steps = 20_000;
        let h = tau / steps as f64;
        let mut p = nalgebra::Vector3::new(1.0, 0.0, 0.0);
        for _ in 0..steps {
            let k1 = gen * p;
            let k2 = gen * (p + k1 * (h / 2.0));
            let k3 = gen * (p + k2 * (h / 2.0));
            let k4 = gen * (p + k3 * h);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        p[1] / r.excited_population()
    }

    #[test]
    fn inversion_reproduces_correlation() {
        let (a, t1, t2) = (0.34, 30.0, 500.0);
        let r = EmitterRates::from_correlation(a, t1, t2).unwrap();
        assert!(r.k12 > 0.0 && r.k21 > 0.0 && r.k23 > 0.0 && r.k31 > 0.0);
        let (a2, g1, g2) = r.correlation();
        assert!((a2 - a).abs() < 1e-9);
        assert!((g1 - 1.0 / t1).abs() < 1e-12);
        assert!((g2 - 1.0 / t2).abs() < 1e-12);
        for &tau in &[5.0, 30.0, 120.0, 700.0] {
            let want = 1.0 - (1.0 + a) * (-tau / t1).exp() + a * (-tau / t2).exp();
            let got = chain_g2(&r, tau);
            assert!((got - want).abs() < 1e-6, "τ={tau}: {got} vs {want}");
        }
    }

    #[test]
    fn two_level_limit() {
        let r = EmitterRates::from_correlation(0.0, 10.0, 100.0).unwrap();
        assert!(r.k23.abs() < 1e-15);
        assert!((r.k12 + r.k21 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn density_is_normalised_and_antibunched() {
        let r = EmitterRates::from_correlation(0.34, 30.0, 500.0).unwrap();
        let s = InterArrivalSampler::new(r, 7e-6).unwrap();
        assert!(s.density(0.0).abs() < 1e-12);
        // ∫ f = Σ Aᵢ / rᵢ = 1; mean = 1/rate
        let total: f64 = (0..3).map(|i| s.amps[i] / s.rates[i]).sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
        assert!((s.mean_ns() * 7e-6 - 1.0).abs() < 1e-6);
        assert!(s.rejection_bound() >= 1.0 && s.rejection_bound() < 3.0);
    }

    #[test]
    fn sample_mean_matches() {
        let r = EmitterRates::from_correlation(0.34, 30.0, 500.0).unwrap();
        let s = InterArrivalSampler::new(r, 7e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        // exponential-like spread: relative standard error ≈ 1/√n
        assert!((mean * 7e-6 - 1.0).abs() < 5.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn rejects_rates_above_emission() {
        let r = EmitterRates::from_correlation(0.34, 30.0, 500.0).unwrap();
        assert!(InterArrivalSampler::new(r, 10.0 * r.emission_rate()).is_err());
    }
}
