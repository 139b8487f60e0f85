//! ZBL universal interatomic potential and the MAGIC scattering-angle approximation.

use crate::error::{domain, Result};

use super::kinematics::{kinematic_factor, lab_deflection_angle};
use super::Component;

/// e²/(4πε₀) in eV·nm.
pub const COULOMB_CONSTANT_EV_NM: f64 = 1.439_964_548;
pub const BOHR_RADIUS_NM: f64 = 0.052_917_721_09;

const ZBL_COEFFS: [f64; 4] = [0.181_75, 0.509_86, 0.280_22, 0.028_171];
const ZBL_EXPONENTS: [f64; 4] = [3.1998, 0.942_29, 0.4029, 0.201_62];

// Biersack–Haggmark MAGIC constants fitted to the ZBL potential.
const MAGIC_C: [f64; 5] = [0.992_29, 0.011_615, 0.007_122_2, 9.3066, 14.813];

/// ZBL universal screening function φ(x) and its derivative, x = r/a.
pub fn zbl_screening(x: f64) -> (f64, f64) {
    let mut phi = 0.0;
    let mut dphi = 0.0;
    for (c, d) in ZBL_COEFFS.iter().zip(ZBL_EXPONENTS.iter()) {
        let e = c * (-d * x).exp();
        phi += e;
        dphi -= d * e;
    }
    (phi, dphi)
}

/// Universal screening length a_U = 0.8854 a₀ / (Z₁^0.23 + Z₂^0.23), in nm.
pub fn screening_length(z1: u32, z2: u32) -> f64 {
    0.8854 * BOHR_RADIUS_NM / ((z1 as f64).powf(0.23) + (z2 as f64).powf(0.23))
}

/// Dimensionless (Lindhard) reduced energy for a lab-frame projectile energy in eV.
pub fn reduced_energy(energy_ev: f64, z1: u32, m1: f64, z2: u32, m2: f64) -> f64 {
    let a = screening_length(z1, z2);
    a * energy_ev * m2 / ((m1 + m2) * (z1 * z2) as f64 * COULOMB_CONSTANT_EV_NM)
}

/// Reduced distance of closest approach R₀ solving 1 − φ(R)/(R ε) − (B/R)² = 0.
///
/// Safeguarded Newton iteration on g(R) = R² − Rφ(R)/ε − B², bracketed below by B
/// (or 0) and above by the unscreened Coulomb turning point.
pub fn closest_approach(reduced_energy: f64, reduced_impact: f64) -> f64 {
    let eps = reduced_energy;
    let b = reduced_impact;
    let g = |x: f64| {
        let (phi, dphi) = zbl_screening(x);
        (x * x - x * phi / eps - b * b, 2.0 * x - (phi + x * dphi) / eps)
    };
    let mut hi = 0.5 / eps + (0.25 / (eps * eps) + b * b).sqrt();
    let mut lo = b.max(0.0);
    let mut x = hi;
    for _ in 0..100 {
        let (f, df) = g(x);
        if f == 0.0 {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = x - f / df;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// Centre-of-mass scattering angle from the MAGIC approximation.
pub fn magic_cm_angle(reduced_energy: f64, reduced_impact: f64) -> f64 {
    let eps = reduced_energy;
    let b = reduced_impact;
    let r0 = closest_approach(eps, b);
    let (phi, dphi) = zbl_screening(r0);
    let v = phi / r0;
    let dv = (dphi * r0 - phi) / (r0 * r0);
    let rho = -2.0 * (eps - v) / dv;

    let sqrt_eps = eps.sqrt();
    let alpha = 1.0 + MAGIC_C[0] / sqrt_eps;
    let beta = (MAGIC_C[1] + sqrt_eps) / (MAGIC_C[2] + sqrt_eps);
    let gamma = (MAGIC_C[3] + eps) / (MAGIC_C[4] + eps);
    let a = 2.0 * alpha * eps * b.powf(beta);
    let g = gamma * ((1.0 + a * a).sqrt() - a);
    let delta = a * (r0 - b) * g / (1.0 + g);

    let cos_half = ((b + rho + delta) / (r0 + rho)).clamp(-1.0, 1.0);
    2.0 * cos_half.acos()
}

/// Projectile identity for a single collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projectile {
    pub z: u32,
    pub mass_amu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringOutcome {
    pub cm_angle: f64,
    /// Projectile deflection in the lab frame, rad.
    pub lab_angle: f64,
    pub transfer_ev: f64,
}

/// Per (projectile, partner) constants reused for every collision of a history.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CollisionPair {
    screening_length: f64,
    energy_scale: f64,
    kinematic_factor: f64,
    m1: f64,
    m2: f64,
}

impl CollisionPair {
    pub(crate) fn new(projectile: Projectile, partner: &Component) -> Self {
        let (z1, m1, z2, m2) = (projectile.z, projectile.mass_amu, partner.z, partner.mass_amu);
        let a = screening_length(z1, z2);
        Self {
            screening_length: a,
            energy_scale: a * m2 / ((m1 + m2) * (z1 * z2) as f64 * COULOMB_CONSTANT_EV_NM),
            kinematic_factor: kinematic_factor(m1, m2),
            m1,
            m2,
        }
    }

    pub(crate) fn scatter(&self, energy_ev: f64, impact_nm: f64) -> ScatteringOutcome {
        let eps = energy_ev * self.energy_scale;
        let theta = magic_cm_angle(eps, impact_nm / self.screening_length);
        let s = (0.5 * theta).sin();
        ScatteringOutcome {
            cm_angle: theta,
            lab_angle: lab_deflection_angle(theta, self.m1, self.m2),
            transfer_ev: self.kinematic_factor * energy_ev * s * s,
        }
    }
}

/// One elastic ion–atom collision at lab energy `energy_kev` and impact parameter
/// `impact_parameter_nm`.
pub fn scattering_event(
    energy_kev: f64,
    impact_parameter_nm: f64,
    projectile: Projectile,
    partner: &Component,
) -> Result<ScatteringOutcome> {
    if !(energy_kev > 0.0) {
        return Err(domain(format!("scattering energy must be positive, got {energy_kev} keV")));
    }
    if !(impact_parameter_nm >= 0.0) {
        return Err(domain(format!("impact parameter must be ≥ 0, got {impact_parameter_nm} nm")));
    }
    Ok(CollisionPair::new(projectile, partner).scatter(energy_kev * 1e3, impact_parameter_nm))
}
