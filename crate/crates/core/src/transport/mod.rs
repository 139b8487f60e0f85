//! Binary-collision-approximation (BCA) transport of light ions in an amorphous target.
//!
//! The model follows the "quick" TRIM recipe: a fixed free-flight path equal to the
//! mean interatomic spacing, impact parameters sampled uniformly in area up to
//! `p_max = (π N λ)^(-1/2)`, ZBL universal screening with the MAGIC scattering
//! approximation, velocity-proportional (Lindhard–Scharff) electronic stopping, and
//! modified Kinchin–Pease damage per primary recoil. Recoil cascades are not followed.
//!
//! Units inside this module: energies in eV, lengths in nm, masses in amu. Public
//! operations that take a beam energy accept keV where noted.

mod bca;
mod kinematics;
mod potential;
mod profile;
mod stopping;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use bca::{simulate_ion, simulate_profile, Collision, IonHistory, ProfileOptions, ION_CUTOFF_EV};
pub use kinematics::{lab_deflection_angle, max_energy_transfer, vacancies_from_recoil};
pub use potential::{
    closest_approach, magic_cm_angle, reduced_energy, scattering_event, screening_length, zbl_screening,
    Projectile, ScatteringOutcome, COULOMB_CONSTANT_EV_NM, BOHR_RADIUS_NM,
};
pub use profile::{ImplantProfile, ProfileSummary, SublatticeHistogram};
pub use stopping::{
    bohr_straggling_rate, electronic_stopping, straggling_rate, straggling_reduction, lindhard_scharff_cross_section,
};

/// Avogadro constant, 1/mol.
pub const AVOGADRO: f64 = 6.022_140_76e23;

/// One atomic species of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub z: u32,
    pub mass_amu: f64,
    /// Stoichiometric (atomic) fraction.
    pub fraction: f64,
    pub displacement_energy_ev: f64,
    pub surface_binding_ev: f64,
    /// Multiplier on the Lindhard–Scharff stopping cross section for this species.
    #[serde(default = "unit_correction")]
    pub electronic_correction: f64,
}

fn unit_correction() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
struct RawTarget {
    components: Vec<Component>,
    mass_density_g_cm3: f64,
}

/// Homogeneous amorphous target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget")]
pub struct TargetMaterial {
    components: Vec<Component>,
    mass_density_g_cm3: f64,
}

impl TryFrom<RawTarget> for TargetMaterial {
    type Error = Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        TargetMaterial::new(raw.components, raw.mass_density_g_cm3)
    }
}

impl TargetMaterial {
    pub fn new(components: Vec<Component>, mass_density_g_cm3: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("target needs at least one component"));
        }
        if !(mass_density_g_cm3 > 0.0 && mass_density_g_cm3.is_finite()) {
            return Err(invalid(format!("mass density must be positive, got {mass_density_g_cm3}")));
        }
        let total: f64 = components.iter().map(|c| c.fraction).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("stoichiometric fractions sum to {total}, expected 1")));
        }
        for c in &components {
            if c.z == 0 || !(c.mass_amu > 0.0) {
                return Err(invalid(format!("component Z={} has invalid Z or mass", c.z)));
            }
            if !(c.fraction >= 0.0) {
                return Err(invalid(format!("component Z={} has negative fraction", c.z)));
            }
            if !(c.displacement_energy_ev > 0.0) {
                return Err(invalid(format!("component Z={} needs E_d > 0", c.z)));
            }
            if !(c.surface_binding_ev >= 0.0) {
                return Err(invalid(format!("component Z={} has negative surface binding", c.z)));
            }
            if !(c.electronic_correction > 0.0) {
                return Err(invalid(format!("component Z={} needs a positive stopping correction", c.z)));
            }
        }
        Ok(Self {
            components,
            mass_density_g_cm3,
        })
    }

    /// Amorphous 4H-SiC: ρ = 3.21 g/cm³, E_d(Si) = 35 eV, E_d(C) = 20 eV.
    ///
    /// The stopping corrections bring the Lindhard–Scharff cross sections up to the
    /// tabulated He stopping in Si and C at 30 keV (see `stopping`).
    pub fn silicon_carbide() -> Self {
        Self::new(
            vec![
                Component {
                    z: 14,
                    mass_amu: 28.0855,
                    fraction: 0.5,
                    displacement_energy_ev: 35.0,
                    surface_binding_ev: 4.7,
                    electronic_correction: stopping::SIC_SI_CORRECTION,
                },
                Component {
                    z: 6,
                    mass_amu: 12.011,
                    fraction: 0.5,
                    displacement_energy_ev: 20.0,
                    surface_binding_ev: 7.4,
                    electronic_correction: stopping::SIC_C_CORRECTION,
                },
            ],
            3.21,
        )
        .expect("SiC preset is valid")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mass_density_g_cm3(&self) -> f64 {
        self.mass_density_g_cm3
    }

    pub fn mean_mass_amu(&self) -> f64 {
        self.components.iter().map(|c| c.fraction * c.mass_amu).sum()
    }

    /// Atomic number density in atoms/nm³.
    pub fn atomic_density(&self) -> f64 {
        // g/cm³ → atoms/cm³ → atoms/nm³ (1 cm³ = 1e21 nm³)
        self.mass_density_g_cm3 * AVOGADRO / self.mean_mass_amu() * 1e-21
    }

    /// Fixed free-flight path, N^(-1/3), in nm.
    pub fn mean_free_path(&self) -> f64 {
        self.atomic_density().powf(-1.0 / 3.0)
    }

    /// Largest sampled impact parameter, (π N λ)^(-1/2), in nm.
    pub fn max_impact_parameter(&self) -> f64 {
        (std::f64::consts::PI * self.atomic_density() * self.mean_free_path()).powf(-0.5)
    }

    /// Index of the component with atomic number `z`.
    pub fn component_index(&self, z: u32) -> Option<usize> {
        self.components.iter().position(|c| c.z == z)
    }
}

#[derive(Debug, Deserialize)]
struct RawBeam {
    ion_z: u32,
    ion_mass_amu: f64,
    energy_kev: f64,
    #[serde(default)]
    incidence_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeam")]
pub struct IonBeamSpec {
    ion_z: u32,
    ion_mass_amu: f64,
    energy_kev: f64,
    incidence_deg: f64,
}

impl TryFrom<RawBeam> for IonBeamSpec {
    type Error = Error;

    fn try_from(raw: RawBeam) -> Result<Self> {
        IonBeamSpec::new(raw.ion_z, raw.ion_mass_amu, raw.energy_kev, raw.incidence_deg)
    }
}

impl IonBeamSpec {
    pub fn new(ion_z: u32, ion_mass_amu: f64, energy_kev: f64, incidence_deg: f64) -> Result<Self> {
        if ion_z == 0 || !(ion_mass_amu > 0.0) {
            return Err(invalid("ion Z and mass must be positive"));
        }
        if !(energy_kev > 0.0 && energy_kev.is_finite()) {
            return Err(invalid(format!("beam energy must be positive, got {energy_kev} keV")));
        }
        if !(0.0..90.0).contains(&incidence_deg) {
            return Err(invalid(format!("incidence must lie in [0, 90) degrees, got {incidence_deg}")));
        }
        Ok(Self {
            ion_z,
            ion_mass_amu,
            energy_kev,
            incidence_deg,
        })
    }

    /// He⁺ at normal incidence.
    pub fn helium(energy_kev: f64) -> Result<Self> {
        Self::new(2, 4.0026, energy_kev, 0.0)
    }

    pub fn ion_z(&self) -> u32 {
        self.ion_z
    }

    pub fn ion_mass_amu(&self) -> f64 {
        self.ion_mass_amu
    }

    pub fn energy_kev(&self) -> f64 {
        self.energy_kev
    }

    pub fn incidence_deg(&self) -> f64 {
        self.incidence_deg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sic_density_and_flight_path() {
        let sic = TargetMaterial::silicon_carbide();
        let n = sic.atomic_density();
        // 3.21 g/cm³ · N_A / 20.048 amu = 9.642e22 cm⁻³
        assert!((n - 96.42).abs() < 0.05, "{n}");
        let lambda = sic.mean_free_path();
        assert!((lambda - 0.2181).abs() < 1e-3, "{lambda}");
        let pmax = sic.max_impact_parameter();
        assert!((pmax - 0.1231).abs() < 1e-3, "{pmax}");
    }

    #[test]
    fn target_validation() {
        let mut c = TargetMaterial::silicon_carbide().components().to_vec();
        c[0].fraction = 0.6;
        assert!(TargetMaterial::new(c.clone(), 3.21).is_err());
        c[0].fraction = 0.5;
        assert!(TargetMaterial::new(c.clone(), 0.0).is_err());
        c[1].displacement_energy_ev = 0.0;
        assert!(TargetMaterial::new(c, 3.21).is_err());
    }

    #[test]
    fn beam_validation() {
        assert!(IonBeamSpec::helium(30.0).is_ok());
        assert!(IonBeamSpec::helium(0.0).is_err());
        assert!(IonBeamSpec::new(2, 4.0026, 30.0, 90.0).is_err());
        assert!(IonBeamSpec::new(2, 4.0026, 30.0, -1.0).is_err());
    }

    #[test]
    fn target_json_is_validated() {
        let bad = r#"{"components":[{"z":14,"mass_amu":28.0855,"fraction":0.7,
            "displacement_energy_ev":35,"surface_binding_ev":4.7}],"mass_density_g_cm3":3.21}"#;
        assert!(serde_json::from_str::<TargetMaterial>(bad).is_err());
        let sic = TargetMaterial::silicon_carbide();
        let back: TargetMaterial = serde_json::from_str(&serde_json::to_string(&sic).unwrap()).unwrap();
        assert_eq!(back, sic);
    }
}
