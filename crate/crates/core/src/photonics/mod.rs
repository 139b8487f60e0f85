//! Forward model of the optical read-out: saturation response, confocal scan images
//! and two-detector (HBT) photon timestamp streams.
//!
//! Units: intensities and rates in kcps, powers in mW, lengths in µm (images) and
//! nm (defect offsets), times in ns for photon timestamps and s for durations.

mod correlation;
mod emitter;
pub(crate) mod scan;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

pub use correlation::{acquire_histogram, correlate, CorrelationHistogram, HbtAcquisition};
pub use emitter::{EmitterRates, InterArrivalSampler};
pub use scan::{expected_rates, render_scan, Optics, ScanImage, ScanSpec};
pub use trace::{simulate_photon_trace, PhotonTrace};

/// I(P) = I_S / (1 + P_S / P); zero at P = 0.
pub fn saturation_intensity(power_mw: f64, saturation_kcps: f64, saturation_power_mw: f64) -> Result<f64> {
    if !(power_mw >= 0.0) {
        return Err(domain(format!("excitation power must be ≥ 0, got {power_mw} mW")));
    }
    if power_mw == 0.0 {
        return Ok(0.0);
    }
    Ok(saturation_kcps / (1.0 + saturation_power_mw / power_mw))
}

/// g²(τ) = 1 − (1 + a) e^(−|τ|/τ₁) + b e^(−|τ|/τ₂).
pub fn g2_model(tau_ns: f64, a: f64, b: f64, tau1_ns: f64, tau2_ns: f64) -> f64 {
    let t = tau_ns.abs();
    1.0 - (1.0 + a) * (-t / tau1_ns).exp() + b * (-t / tau2_ns).exp()
}

/// Correlation measured on emitter light diluted by uncorrelated background:
/// C_N = 1 − ρ² + ρ² g², with ρ = S / (S + B).
pub fn mix_background(g2: f64, signal_kcps: f64, background_kcps: f64) -> Result<f64> {
    let rho = signal_fraction(signal_kcps, background_kcps)?;
    Ok(1.0 - rho * rho + rho * rho * g2)
}

/// ρ = S / (S + B).
pub fn signal_fraction(signal_kcps: f64, background_kcps: f64) -> Result<f64> {
    if !(signal_kcps > 0.0) {
        return Err(domain(format!("signal rate must be positive, got {signal_kcps} kcps")));
    }
    if !(background_kcps >= 0.0) {
        return Err(domain(format!("background rate must be ≥ 0, got {background_kcps} kcps")));
    }
    Ok(signal_kcps / (signal_kcps + background_kcps))
}

/// Saturation and photon-statistics parameters of one emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmitter")]
pub struct EmitterModel {
    saturation_kcps: f64,
    saturation_power_mw: f64,
    a: f64,
    b: f64,
    tau1_ns: f64,
    tau2_ns: f64,
}

#[derive(Deserialize)]
struct RawEmitter {
    saturation_kcps: f64,
    saturation_power_mw: f64,
    a: f64,
    b: f64,
    tau1_ns: f64,
    tau2_ns: f64,
}

impl TryFrom<RawEmitter> for EmitterModel {
    type Error = crate::Error;

    fn try_from(r: RawEmitter) -> Result<Self> {
        EmitterModel::new(r.saturation_kcps, r.saturation_power_mw, r.a, r.b, r.tau1_ns, r.tau2_ns)
    }
}

impl Default for EmitterModel {
    /// I_S = 14.86 kcps, P_S = 0.47 mW, g²(0) = b − a = 0.03, τ₁ = 30 ns, τ₂ = 500 ns.
    fn default() -> Self {
        Self::new(14.86, 0.47, 0.3, 0.33, 30.0, 500.0).expect("default emitter is valid")
    }
}

impl EmitterModel {
    pub fn new(saturation_kcps: f64, saturation_power_mw: f64, a: f64, b: f64, tau1_ns: f64, tau2_ns: f64) -> Result<Self> {
        let positive = [
            ("saturation intensity", saturation_kcps),
            ("saturation power", saturation_power_mw),
            ("tau1", tau1_ns),
            ("tau2", tau2_ns),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(a >= 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(invalid(format!("g² amplitudes must be ≥ 0, got a={a}, b={b}")));
        }
        Ok(Self {
            saturation_kcps,
            saturation_power_mw,
            a,
            b,
            tau1_ns,
            tau2_ns,
        })
    }

    pub fn saturation_kcps(&self) -> f64 {
        self.saturation_kcps
    }

    pub fn saturation_power_mw(&self) -> f64 {
        self.saturation_power_mw
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn tau1_ns(&self) -> f64 {
        self.tau1_ns
    }

    pub fn tau2_ns(&self) -> f64 {
        self.tau2_ns
    }

    /// Detected count rate at excitation power `power_mw`.
    pub fn intensity(&self, power_mw: f64) -> Result<f64> {
        saturation_intensity(power_mw, self.saturation_kcps, self.saturation_power_mw)
    }

    pub fn g2(&self, tau_ns: f64) -> f64 {
        g2_model(tau_ns, self.a, self.b, self.tau1_ns, self.tau2_ns)
    }

    /// g²(0) = b − a.
    pub fn g2_at_zero(&self) -> f64 {
        self.b - self.a
    }
}
