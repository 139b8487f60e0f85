//! Dose calibration, spot patterns and seeded sampling of ground-truth defect arrays.
//!
//! Units: beam current in pA, dwell time in µs, positions in µm (pattern) and nm
//! (defect offsets and depth), dose in ions per spot.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{domain, invalid, Result};
use crate::rng::SeedPath;
use crate::transport::ImplantProfile;

/// Elementary charge in C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Dwell-time granularity of the beam blanker, µs.
pub const DWELL_RESOLUTION_US: f64 = 0.1;

/// Atomic number of the sublattice whose vacancies form the optically active defect.
pub const SILICON_Z: u32 = 14;

// pA · µs = 1e-12 A · 1e-6 s
const PA_US_IN_COULOMB: f64 = 1e-18;

/// Beam current and dwell time of one spot exposure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSpec {
    beam_current_pa: f64,
    dwell_us: f64,
}

impl DoseSpec {
    pub fn new(beam_current_pa: f64, dwell_us: f64) -> Result<Self> {
        check_current(beam_current_pa)?;
        if !(dwell_us >= 0.0 && dwell_us.is_finite()) {
            return Err(domain(format!("dwell time must be ≥ 0, got {dwell_us} µs")));
        }
        Ok(Self {
            beam_current_pa,
            dwell_us,
        })
    }

    pub fn beam_current_pa(&self) -> f64 {
        self.beam_current_pa
    }

    pub fn dwell_us(&self) -> f64 {
        self.dwell_us
    }

    /// Expected ions per spot, I·t/e.
    pub fn dose(&self) -> f64 {
        self.beam_current_pa * self.dwell_us * PA_US_IN_COULOMB / ELEMENTARY_CHARGE
    }
}

fn check_current(current_pa: f64) -> Result<()> {
    if !(current_pa > 0.0 && current_pa.is_finite()) {
        return Err(domain(format!("beam current must be positive, got {current_pa} pA")));
    }
    Ok(())
}

/// Expected ions per spot delivered by `current_pa` during `dwell_us`.
pub fn dose_from_dwell(current_pa: f64, dwell_us: f64) -> Result<f64> {
    Ok(DoseSpec::new(current_pa, dwell_us)?.dose())
}

/// Dwell time delivering `dose` at `current_pa`, rounded to the blanker resolution.
pub fn dwell_for_dose(current_pa: f64, dose: f64) -> Result<f64> {
    check_current(current_pa)?;
    if !(dose >= 0.0 && dose.is_finite()) {
        return Err(domain(format!("dose must be ≥ 0, got {dose}")));
    }
    let exact = dose * ELEMENTARY_CHARGE / (current_pa * PA_US_IN_COULOMB);
    Ok((exact / DWELL_RESOLUTION_US).round() * DWELL_RESOLUTION_US)
}

/// Dose change caused by one dwell-resolution step, in ions per spot.
pub fn dose_uncertainty(current_pa: f64, dwell_resolution_us: f64) -> Result<f64> {
    check_current(current_pa)?;
    if !(dwell_resolution_us > 0.0) {
        return Err(domain(format!("dwell resolution must be positive, got {dwell_resolution_us} µs")));
    }
    dose_from_dwell(current_pa, dwell_resolution_us)
}

/// Nominal position of one implantation spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub row: usize,
    pub col: usize,
    pub x_um: f64,
    pub y_um: f64,
}

/// Rectangular lattice of implantation spots; spot (0, 0) sits at `origin_um`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotPattern {
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
    pub origin_um: [f64; 2],
    pub spots: Vec<Spot>,
}

impl SpotPattern {
    /// Lattice with the first spot at `origin_um`; x grows with column, y with row.
    pub fn with_origin(rows: usize, cols: usize, pitch_um: f64, origin_um: [f64; 2]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("pattern needs at least one row and column, got {rows}×{cols}")));
        }
        if !(pitch_um > 0.0 && pitch_um.is_finite()) {
            return Err(invalid(format!("pitch must be positive, got {pitch_um} µm")));
        }
        let spots = (0..rows)
            .flat_map(|row| {
                (0..cols).map(move |col| Spot {
                    row,
                    col,
                    x_um: origin_um[0] + col as f64 * pitch_um,
                    y_um: origin_um[1] + row as f64 * pitch_um,
                })
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            pitch_um,
            origin_um,
            spots,
        })
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    /// Extent of the lattice, (width, height) in µm.
    pub fn span_um(&self) -> (f64, f64) {
        ((self.cols - 1) as f64 * self.pitch_um, (self.rows - 1) as f64 * self.pitch_um)
    }
}

/// `rows × cols` spots at `pitch_um`, starting at the origin.
pub fn build_pattern(rows: usize, cols: usize, pitch_um: f64) -> Result<SpotPattern> {
    SpotPattern::with_origin(rows, cols, pitch_um, [0.0, 0.0])
}

/// One optically active defect, relative to its spot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub dx_nm: f64,
    pub dy_nm: f64,
    pub depth_nm: f64,
    /// Brightness relative to a nominal single defect.
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub row: usize,
    pub col: usize,
    pub x_um: f64,
    pub y_um: f64,
    pub k: usize,
    pub defects: Vec<Defect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMetadata {
    pub dose: f64,
    pub conversion_yield: f64,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
    pub lateral_sigma_nm: f64,
    pub brightness_dispersion: f64,
}

/// Ground-truth defects of one implanted array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectArray {
    pub spots: Vec<SpotRecord>,
    pub metadata: ArrayMetadata,
}

impl DefectArray {
    pub fn counts(&self) -> Vec<usize> {
        self.spots.iter().map(|s| s.k).collect()
    }

    pub fn total_defects(&self) -> usize {
        self.spots.iter().map(|s| s.k).sum()
    }

    /// The pattern the array was sampled on, reconstructed from its spots.
    pub fn pattern(&self) -> SpotPattern {
        let first = self.spots.first().map(|s| [s.x_um, s.y_um]).unwrap_or([0.0, 0.0]);
        SpotPattern {
            rows: self.metadata.rows,
            cols: self.metadata.cols,
            pitch_um: self.metadata.pitch_um,
            origin_um: first,
            spots: self
                .spots
                .iter()
                .map(|s| Spot {
                    row: s.row,
                    col: s.col,
                    x_um: s.x_um,
                    y_um: s.y_um,
                })
                .collect(),
        }
    }
}

/// Optional knobs of [`sample_defect_array_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Log-normal σ of per-defect brightness; 0 gives every defect brightness 1.
    pub brightness_dispersion: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            brightness_dispersion: 0.0,
        }
    }
}

/// Samples per-spot defect counts k ~ Poisson(η·dose) and their positions.
///
/// Lateral offsets are Gaussian with the profile's per-axis lateral straggle; depths
/// follow the silicon-sublattice vacancy histogram (uniform within a bin). Spot
/// (r, c) draws from the stream `array/spot/<r>,<c>`, so each spot is independent of
/// iteration order.
pub fn sample_defect_array(
    pattern: &SpotPattern,
    dose: f64,
    conversion_yield: f64,
    profile: &ImplantProfile,
    seed: u64,
) -> Result<DefectArray> {
    sample_defect_array_with(pattern, dose, conversion_yield, profile, seed, SamplingOptions::default())
}

pub fn sample_defect_array_with(
    pattern: &SpotPattern,
    dose: f64,
    conversion_yield: f64,
    profile: &ImplantProfile,
    seed: u64,
    options: SamplingOptions,
) -> Result<DefectArray> {
    if !(0.0..=1.0).contains(&conversion_yield) {
        return Err(domain(format!("conversion yield must lie in [0, 1], got {conversion_yield}")));
    }
    if !(dose >= 0.0 && dose.is_finite()) {
        return Err(domain(format!("dose must be ≥ 0, got {dose}")));
    }
    if !(options.brightness_dispersion >= 0.0) {
        return Err(invalid("brightness dispersion must be ≥ 0"));
    }
    let lambda = conversion_yield * dose;
    let sigma = profile.lateral_straggle_per_axis_nm;
    let depth = DepthSampler::from_profile(profile)?;
    let lateral = Normal::new(0.0, sigma.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    // median-one log-normal keeps the nominal brightness as the typical value
    let brightness = if options.brightness_dispersion > 0.0 {
        Some(LogNormal::new(0.0, options.brightness_dispersion).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let counts = if lambda > 0.0 {
        Some(Poisson::new(lambda).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let root = SeedPath::root(seed).child("array").child("spot");

    let spots = pattern
        .spots
        .par_iter()
        .map(|spot| {
            let mut rng = root.child(format!("{},{}", spot.row, spot.col)).rng();
            let k = counts.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            let defects = (0..k)
                .map(|_| Defect {
                    dx_nm: lateral.sample(&mut rng),
                    dy_nm: lateral.sample(&mut rng),
                    depth_nm: depth.sample(&mut rng),
                    brightness: brightness.as_ref().map_or(1.0, |b| b.sample(&mut rng)),
                })
                .collect();
            SpotRecord {
                row: spot.row,
                col: spot.col,
                x_um: spot.x_um,
                y_um: spot.y_um,
                k,
                defects,
            }
        })
        .collect();

    Ok(DefectArray {
        spots,
        metadata: ArrayMetadata {
            dose,
            conversion_yield,
            seed,
            rows: pattern.rows,
            cols: pattern.cols,
            pitch_um: pattern.pitch_um,
            lateral_sigma_nm: sigma,
            brightness_dispersion: options.brightness_dispersion,
        },
    })
}

/// Inverse-CDF sampler over a depth histogram.
struct DepthSampler {
    bin_width: f64,
    cumulative: Vec<f64>,
}

impl DepthSampler {
    fn from_profile(profile: &ImplantProfile) -> Result<Self> {
        let weights: Vec<f64> = match profile.sublattice(SILICON_Z) {
            Some(h) if h.counts.iter().sum::<f64>() > 0.0 => h.counts.clone(),
            _ if profile.vacancy_counts.iter().sum::<f64>() > 0.0 => profile.vacancy_counts.clone(),
            _ => profile.depth_counts.iter().map(|&c| c as f64).collect(),
        };
        let mut acc = 0.0;
        let cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(invalid("profile has no vacancy or ion depth data"));
        }
        Ok(Self {
            bin_width: profile.bin_width_nm,
            cumulative,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        let bin = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        (bin as f64 + rng.random::<f64>()) * self.bin_width
    }
}

/// Poisson probability e^(−λ) λ^k / k!.
pub fn poisson_pmf(k: u64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(domain(format!("Poisson mean must be ≥ 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    Ok((k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{simulate_profile, IonBeamSpec, ProfileOptions, TargetMaterial};

    fn small_profile() -> ImplantProfile {
        simulate_profile(
            &IonBeamSpec::helium(30.0).unwrap(),
            &TargetMaterial::silicon_carbide(),
            200,
            3,
            ProfileOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn dose_examples() {
        // 0.420e-12 · 37.6e-6 / e = 98.566
        assert!((dose_from_dwell(0.420, 37.6).unwrap() - 98.566).abs() < 1e-3);
        // 0.412e-12 · 7.9e-6 / e = 20.315
        assert!((dose_from_dwell(0.412, 7.9).unwrap() - 20.315).abs() < 1e-3);
        assert_eq!(dose_from_dwell(0.4, 0.0).unwrap(), 0.0);
        assert!(dose_from_dwell(0.0, 1.0).is_err());
        assert!(dose_from_dwell(0.4, -1.0).is_err());
    }

    #[test]
    fn dose_resolution() {
        // 0.4e-12 · 0.1e-6 / e = 0.24966
        assert!((dose_uncertainty(0.4, 0.1).unwrap() - 0.249_66).abs() < 1e-5);
        assert!((dose_uncertainty(0.8, 0.1).unwrap() - 2.0 * dose_uncertainty(0.4, 0.1).unwrap()).abs() < 1e-12);
        assert!((dose_uncertainty(0.4, 0.2).unwrap() - 2.0 * dose_uncertainty(0.4, 0.1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dwell_round_trip() {
        for &(i, t) in &[(0.420, 37.6), (0.419, 31.2), (0.423, 23.8), (0.417, 15.6), (0.412, 7.9)] {
            let back = dwell_for_dose(i, dose_from_dwell(i, t).unwrap()).unwrap();
            assert!((back - t).abs() <= DWELL_RESOLUTION_US / 2.0 + 1e-9, "{t} → {back}");
        }
    }

    #[test]
    fn pattern_geometry() {
        let p = build_pattern(10, 10, 3.0).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p.span_um(), (27.0, 27.0));
        let one = build_pattern(1, 1, 5.0).unwrap();
        assert_eq!((one.spots[0].x_um, one.spots[0].y_um), (0.0, 0.0));
        let p = build_pattern(2, 3, 1.0).unwrap();
        let mut max_d: f64 = 0.0;
        for a in &p.spots {
            for b in &p.spots {
                max_d = max_d.max(((a.x_um - b.x_um).powi(2) + (a.y_um - b.y_um).powi(2)).sqrt());
            }
        }
        assert!((max_d - 5f64.sqrt()).abs() < 1e-12);
        assert!(build_pattern(0, 3, 1.0).is_err());
        assert!(build_pattern(2, 3, 0.0).is_err());
    }

    #[test]
    fn pmf_values() {
        // 1.39·e^(−1.39) = 0.346214
        assert!((poisson_pmf(1, 1.39).unwrap() - 0.346_214).abs() < 1e-6);
        assert_eq!(poisson_pmf(0, 0.0).unwrap(), 1.0);
        // e^(−5.442) = 4.3308e-3
        assert!((poisson_pmf(0, 5.442).unwrap() - 4.3308e-3).abs() < 1e-7);
        assert!(poisson_pmf(0, -1.0).is_err());
        let total: f64 = (0..=200).map(|k| poisson_pmf(k, 5.442).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_mean_and_zero_yield() {
        let profile = small_profile();
        let pattern = build_pattern(100, 100, 3.0).unwrap();
        let arr = sample_defect_array(&pattern, 20.0, 0.0695, &profile, 11).unwrap();
        let mean = arr.total_defects() as f64 / arr.spots.len() as f64;
        assert!((mean - 1.39).abs() < 0.04, "{mean}");
        for s in &arr.spots {
            assert_eq!(s.k, s.defects.len());
        }
        let none = sample_defect_array(&pattern, 20.0, 0.0, &profile, 11).unwrap();
        assert_eq!(none.total_defects(), 0);
        assert!(sample_defect_array(&pattern, 20.0, 1.5, &profile, 11).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let profile = small_profile();
        let pattern = build_pattern(5, 5, 3.0).unwrap();
        let a = sample_defect_array(&pattern, 100.0, 0.0544, &profile, 4).unwrap();
        let b = sample_defect_array(&pattern, 100.0, 0.0544, &profile, 4).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn depths_come_from_vacancy_histogram() {
        let profile = small_profile();
        let pattern = build_pattern(20, 20, 3.0).unwrap();
        let arr = sample_defect_array(&pattern, 100.0, 0.1, &profile, 9).unwrap();
        let max_depth = profile.depth_counts.len() as f64 * profile.bin_width_nm;
        for d in arr.spots.iter().flat_map(|s| &s.defects) {
            assert!(d.depth_nm >= 0.0 && d.depth_nm <= max_depth);
            assert_eq!(d.brightness, 1.0);
        }
    }
}
