use crate::error::{domain, Result};

/// Largest energy a projectile of mass `m1` can hand to a resting partner of mass
/// `m2` in one elastic collision: `4 m1 m2 / (m1 + m2)² · E`. Units follow `energy`.
pub fn max_energy_transfer(energy: f64, m1_amu: f64, m2_amu: f64) -> Result<f64> {
    if !(energy > 0.0) || !(m1_amu > 0.0) || !(m2_amu > 0.0) {
        return Err(domain(format!(
            "max_energy_transfer needs positive energy and masses (E={energy}, m1={m1_amu}, m2={m2_amu})"
        )));
    }
    Ok(kinematic_factor(m1_amu, m2_amu) * energy)
}

pub(crate) fn kinematic_factor(m1: f64, m2: f64) -> f64 {
    4.0 * m1 * m2 / ((m1 + m2) * (m1 + m2))
}

/// Projectile deflection in the lab frame for a centre-of-mass angle `theta_cm`.
pub fn lab_deflection_angle(theta_cm: f64, m1_amu: f64, m2_amu: f64) -> f64 {
    theta_cm.sin().atan2(theta_cm.cos() + m1_amu / m2_amu)
}

/// Modified Kinchin–Pease displacement count for a primary recoil of energy `recoil_ev`.
pub fn vacancies_from_recoil(recoil_ev: f64, displacement_energy_ev: f64) -> f64 {
    if recoil_ev < displacement_energy_ev {
        0.0
    } else if recoil_ev < 2.0 * displacement_energy_ev / 0.8 {
        1.0
    } else {
        0.8 * recoil_ev / (2.0 * displacement_energy_ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HE: f64 = 4.0026;
    const SI: f64 = 28.0855;
    const C: f64 = 12.011;

    #[test]
    fn helium_on_silicon_and_carbon() {
        // 4·4.0026·28.0855/32.0881² · 30 = 13.1013 keV
        assert!((max_energy_transfer(30.0, HE, SI).unwrap() - 13.1013).abs() < 1e-3);
        // 4·4.0026·12.011/16.0136² · 30 = 22.4970 keV
        assert!((max_energy_transfer(30.0, HE, C).unwrap() - 22.4970).abs() < 1e-3);
    }

    #[test]
    fn equal_masses_transfer_everything() {
        assert_eq!(max_energy_transfer(17.5, 12.0, 12.0).unwrap(), 17.5);
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(max_energy_transfer(0.0, HE, SI).is_err());
        assert!(max_energy_transfer(30.0, -1.0, SI).is_err());
        assert!(max_energy_transfer(30.0, HE, 0.0).is_err());
    }

    #[test]
    fn kinchin_pease_thresholds() {
        let ed = 35.0;
        assert_eq!(vacancies_from_recoil(0.0, ed), 0.0);
        assert_eq!(vacancies_from_recoil(ed - 1e-9, ed), 0.0);
        assert_eq!(vacancies_from_recoil(ed, ed), 1.0);
        assert_eq!(vacancies_from_recoil(2.0 * ed / 0.8 - 1e-9, ed), 1.0);
        assert!((vacancies_from_recoil(10.0 * ed, ed) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lab_angle_limits() {
        assert!(lab_deflection_angle(0.0, HE, SI).abs() < 1e-15);
        // backscatter in CM stays backscatter in the lab for a light projectile
        assert!((lab_deflection_angle(std::f64::consts::PI, HE, SI) - std::f64::consts::PI).abs() < 1e-12);
        // equal masses: ψ = Θ/2
        assert!((lab_deflection_angle(1.0, 5.0, 5.0) - 0.5).abs() < 1e-12);
    }
}
