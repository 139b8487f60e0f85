//! Built-in curve models with analytic gradients.

use super::lm::Model;

/// baseline + contrast · (Γ/2)² / ((f − f₀)² + (Γ/2)²); parameters
/// `[f0_mhz, fwhm_mhz, contrast, baseline]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorentzian;

impl Model for Lorentzian {
    fn names(&self) -> &'static [&'static str] {
        &["f0_mhz", "fwhm_mhz", "contrast", "baseline"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let h = 0.5 * p[1];
        let dx = x - p[0];
        p[3] + p[2] * h * h / (dx * dx + h * h)
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let h = 0.5 * p[1];
        let dx = x - p[0];
        let den = dx * dx + h * h;
        let den2 = den * den;
        g[0] = p[2] * h * h * 2.0 * dx / den2;
        g[1] = p[2] * h * dx * dx / den2;
        g[2] = h * h / den;
        g[3] = 1.0;
    }
}

/// I_S · P / (P + P_S); parameters `[saturation_kcps, saturation_power_mw]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Saturation;

impl Model for Saturation {
    fn names(&self) -> &'static [&'static str] {
        &["saturation_kcps", "saturation_power_mw"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x / (x + p[1])
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let den = x + p[1];
        g[0] = x / den;
        g[1] = -p[0] * x / (den * den);
    }
}

/// 1 − (1 + a) e^(−|τ|/τ₁) + b e^(−|τ|/τ₂) at the point τ; parameters
/// `[a, b, tau1_ns, tau2_ns]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct G2;

impl Model for G2 {
    fn names(&self) -> &'static [&'static str] {
        &["a", "b", "tau1_ns", "tau2_ns"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        crate::photonics::g2_model(x, p[0], p[1], p[2], p[3])
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let t = x.abs();
        let e1 = (-t / p[2]).exp();
        let e2 = (-t / p[3]).exp();
        g[0] = -e1;
        g[1] = e2;
        g[2] = -(1.0 + p[0]) * e1 * t / (p[2] * p[2]);
        g[3] = p[1] * e2 * t / (p[3] * p[3]);
    }
}

/// Mean of e^(−|t|/τ) over [lo, hi] and its derivative in τ.
fn mean_decay(lo: f64, hi: f64, tau: f64) -> (f64, f64) {
    // integral over [u, v] ⊂ [0, ∞) of e^(−t/τ) is τ(e^(−u/τ) − e^(−v/τ))
    let part = |u: f64, v: f64| {
        let (eu, ev) = ((-u / tau).exp(), (-v / tau).exp());
        let value = tau * (eu - ev);
        let deriv = (eu - ev) + (u * eu - v * ev) / tau;
        (value, deriv)
    };
    let width = hi - lo;
    let (v, d) = if lo >= 0.0 {
        part(lo, hi)
    } else if hi <= 0.0 {
        part(-hi, -lo)
    } else {
        let (a, da) = part(0.0, -lo);
        let (b, db) = part(0.0, hi);
        (a + b, da + db)
    };
    (v / width, d / width)
}

/// [`G2`] averaged over a histogram bin of the given width centred on τ.
#[derive(Debug, Clone, Copy)]
pub struct G2Binned {
    pub bin_width_ns: f64,
}

impl Model for G2Binned {
    fn names(&self) -> &'static [&'static str] {
        G2.names()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let (lo, hi) = (x - 0.5 * self.bin_width_ns, x + 0.5 * self.bin_width_ns);
        let (m1, _) = mean_decay(lo, hi, p[2]);
        let (m2, _) = mean_decay(lo, hi, p[3]);
        1.0 - (1.0 + p[0]) * m1 + p[1] * m2
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let (lo, hi) = (x - 0.5 * self.bin_width_ns, x + 0.5 * self.bin_width_ns);
        let (m1, d1) = mean_decay(lo, hi, p[2]);
        let (m2, d2) = mean_decay(lo, hi, p[3]);
        g[0] = -m1;
        g[1] = m2;
        g[2] = -(1.0 + p[0]) * d1;
        g[3] = p[1] * d2;
    }
}

/// Poisson probability mass P(k; λ) at integer-valued x = k; parameter `[lambda]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoissonPmf;

fn pmf(k: f64, lambda: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    if lambda == 0.0 {
        return if k == 0.0 { 1.0 } else { 0.0 };
    }
    (k * lambda.ln() - lambda - statrs::function::factorial::ln_factorial(k as u64)).exp()
}

impl Model for PoissonPmf {
    fn names(&self) -> &'static [&'static str] {
        &["lambda"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        pmf(x.round(), p[0])
    }

    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        // dP(k)/dλ = P(k − 1) − P(k)
        let k = x.round();
        g[0] = pmf(k - 1.0, p[0]) - pmf(k, p[0]);
    }
}
