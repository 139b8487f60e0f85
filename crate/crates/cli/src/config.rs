//! Run configuration: one JSON document with a versioned schema tag. Units are
//! fixed by the key suffixes (keV, pA, µs, µm, nm, ns, kcps, mW).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sivac_core::photonics::{EmitterModel, HbtAcquisition, Optics, ScanSpec};
use sivac_core::transport::{IonBeamSpec, TargetMaterial};

use crate::UsageError;

pub const SCHEMA: &str = "sivac-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub ion_z: u32,
    pub ion_mass_amu: f64,
    pub energy_kev: f64,
    #[serde(default)]
    pub incidence_deg: f64,
    pub current_pa: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            ion_z: 2,
            ion_mass_amu: 4.0026,
            energy_kev: 30.0,
            incidence_deg: 0.0,
            current_pa: 0.4,
        }
    }
}

/// A named preset or an explicit material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    Preset(String),
    Explicit(TargetMaterial),
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig::Preset("4H-SiC".into())
    }
}

impl TargetConfig {
    pub fn material(&self) -> Result<TargetMaterial> {
        match self {
            TargetConfig::Preset(name) if name.eq_ignore_ascii_case("4H-SiC") || name.eq_ignore_ascii_case("SiC") => {
                Ok(TargetMaterial::silicon_carbide())
            }
            TargetConfig::Preset(name) => bail!("unknown target preset {name:?} (known: \"4H-SiC\")"),
            TargetConfig::Explicit(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub n_ions: usize,
    pub bin_width_nm: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            n_ions: 10_000,
            bin_width_nm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            pitch_um: 3.0,
        }
    }
}

/// Conversion yield: one value for every dose, one per listed dose, or a trend of
/// `[dose, yield]` points interpolated linearly in dose (held constant beyond the ends).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YieldConfig {
    Single(f64),
    PerDose(Vec<f64>),
    Trend(Vec<[f64; 2]>),
}

impl Default for YieldConfig {
    /// Yield falling from 6.95 % at 20 ions/spot to 5.44 % at 100 ions/spot.
    fn default() -> Self {
        YieldConfig::Trend(vec![[20.0, 0.0695], [100.0, 0.0544]])
    }
}

impl YieldConfig {
    fn trend_at(points: &[[f64; 2]], dose: f64) -> f64 {
        let mut sorted = points.to_vec();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let (first, last) = (sorted[0], sorted[sorted.len() - 1]);
        if dose <= first[0] {
            return first[1];
        }
        if dose >= last[0] {
            return last[1];
        }
        let i = sorted.partition_point(|p| p[0] <= dose);
        let ([d0, y0], [d1, y1]) = (sorted[i - 1], sorted[i]);
        y0 + (y1 - y0) * (dose - d0) / (d1 - d0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub psf_fwhm_um: f64,
    pub background_kcps: f64,
    /// A scan is rendered at each power.
    pub powers_mw: Vec<f64>,
    /// Power whose scan is analysed; must be one of `powers_mw`.
    pub reference_power_mw: f64,
    #[serde(default)]
    pub brightness_dispersion: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        let o = Optics::default();
        Self {
            psf_fwhm_um: o.psf_fwhm_um,
            background_kcps: o.background_kcps,
            powers_mw: vec![0.5],
            reference_power_mw: 0.5,
            brightness_dispersion: 0.0,
        }
    }
}

impl OpticsConfig {
    pub fn optics(&self) -> Optics {
        Optics {
            psf_fwhm_um: self.psf_fwhm_um,
            background_kcps: self.background_kcps,
        }
    }
}

/// HBT acquisition; `signal_kcps` is per emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbtConfig {
    pub n_emitters: usize,
    pub signal_kcps: f64,
    pub background_kcps: f64,
    pub segment_s: f64,
    pub n_segments: usize,
    pub bin_width_ns: f64,
    pub max_lag_ns: f64,
}

impl Default for HbtConfig {
    fn default() -> Self {
        Self {
            n_emitters: 1,
            signal_kcps: 6.0,
            background_kcps: 2.0,
            segment_s: 100.0,
            n_segments: 1,
            bin_width_ns: 4.0,
            max_lag_ns: 2000.0,
        }
    }
}

impl HbtConfig {
    pub fn acquisition(&self) -> HbtAcquisition {
        HbtAcquisition {
            n_emitters: self.n_emitters,
            signal_kcps: self.signal_kcps,
            background_kcps: self.background_kcps,
            segment_s: self.segment_s,
            n_segments: self.n_segments,
            bin_width_ns: self.bin_width_ns,
            max_lag_ns: self.max_lag_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub seed: u64,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub pattern: PatternConfig,
    /// Ions per spot.
    #[serde(default = "default_doses")]
    pub doses: Vec<f64>,
    #[serde(default)]
    pub conversion_yield: YieldConfig,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default)]
    pub scan: ScanSpec,
    #[serde(default)]
    pub emitter: EmitterModel,
    #[serde(default)]
    pub hbt: HbtConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_doses() -> Vec<f64> {
    vec![100.0, 80.0, 60.0, 40.0, 20.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("sivac-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA.into(),
            seed: 1,
            beam: BeamConfig::default(),
            target: TargetConfig::default(),
            transport: TransportConfig::default(),
            pattern: PatternConfig::default(),
            doses: default_doses(),
            conversion_yield: YieldConfig::default(),
            optics: OpticsConfig::default(),
            scan: ScanSpec::default(),
            emitter: EmitterModel::default(),
            hbt: HbtConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Checks every physical value; an empty dose list is a usage error.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("config schema {:?} is not supported (expected {SCHEMA:?})", self.schema);
        }
        if self.doses.is_empty() {
            return Err(UsageError("the dose list is empty".into()).into());
        }
        if self.doses.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            bail!("doses must be positive");
        }
        self.beam()?;
        self.target.material()?;
        if !(self.beam.current_pa > 0.0) {
            bail!("beam current must be positive");
        }
        if self.transport.n_ions == 0 || !(self.transport.bin_width_nm > 0.0) {
            bail!("transport needs at least one ion and a positive bin width");
        }
        if self.pattern.rows == 0 || self.pattern.cols == 0 || !(self.pattern.pitch_um > 0.0) {
            bail!("pattern needs rows, columns and a positive pitch");
        }
        match &self.conversion_yield {
            YieldConfig::Single(y) if !(0.0..=1.0).contains(y) => bail!("conversion yield must lie in [0, 1]"),
            YieldConfig::PerDose(v) if v.len() != self.doses.len() => {
                bail!("{} conversion yields given for {} doses", v.len(), self.doses.len())
            }
            YieldConfig::PerDose(v) if v.iter().any(|y| !(0.0..=1.0).contains(y)) => {
                bail!("conversion yields must lie in [0, 1]")
            }
            YieldConfig::Trend(v) if v.is_empty() => bail!("yield trend needs at least one [dose, yield] point"),
            YieldConfig::Trend(v) if v.iter().any(|[d, y]| !(*d > 0.0 && d.is_finite()) || !(0.0..=1.0).contains(y)) => {
                bail!("yield trend points need a positive dose and a yield in [0, 1]")
            }
            YieldConfig::Trend(v) if (1..v.len()).any(|i| v[..i].iter().any(|p| p[0] == v[i][0])) => {
                bail!("yield trend doses must be distinct")
            }
            _ => {}
        }
        let o = &self.optics;
        if !(o.psf_fwhm_um >= 0.0) || !(o.background_kcps >= 0.0) || !(o.brightness_dispersion >= 0.0) {
            bail!("optics values must be non-negative");
        }
        if o.powers_mw.is_empty() || o.powers_mw.iter().any(|&p| !(p > 0.0)) {
            bail!("optics needs at least one positive power");
        }
        if !o.powers_mw.iter().any(|&p| p == o.reference_power_mw) {
            bail!("reference power {} mW is not among the scan powers", o.reference_power_mw);
        }
        if !(self.scan.pixel_um > 0.0 && self.scan.dwell_ms > 0.0 && self.scan.margin_um >= 0.0) {
            bail!("scan needs positive pixel size and dwell and a non-negative margin");
        }
        let h = &self.hbt;
        if !(h.signal_kcps >= 0.0 && h.background_kcps >= 0.0 && h.segment_s > 0.0 && h.n_segments > 0) {
            bail!("HBT rates must be non-negative with positive segment length and count");
        }
        if !(h.bin_width_ns > 0.0 && h.max_lag_ns >= h.bin_width_ns) {
            bail!("HBT binning needs 0 < bin width ≤ max lag");
        }
        Ok(())
    }

    pub fn beam(&self) -> Result<IonBeamSpec> {
        Ok(IonBeamSpec::new(
            self.beam.ion_z,
            self.beam.ion_mass_amu,
            self.beam.energy_kev,
            self.beam.incidence_deg,
        )?)
    }

    pub fn yield_for(&self, dose_index: usize) -> f64 {
        match &self.conversion_yield {
            YieldConfig::Single(y) => *y,
            YieldConfig::PerDose(v) => v[dose_index],
            YieldConfig::Trend(points) => YieldConfig::trend_at(points, self.doses[dose_index]),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output directory is
    /// left out: where results are written does not change what they are.
    pub fn hash(&self) -> String {
        let content = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&content).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trend_interpolates_in_dose() {
        let cfg = RunConfig::default();
        let eta: Vec<f64> = (0..cfg.doses.len()).map(|i| cfg.yield_for(i)).collect();
        let want = [0.0544, 0.058175, 0.06195, 0.065725, 0.0695];
        for (e, w) in eta.iter().zip(want) {
            assert!((e - w).abs() < 1e-12, "{eta:?}");
        }
        let out_of_range = RunConfig {
            doses: vec![5.0, 500.0],
            ..RunConfig::default()
        };
        assert_eq!((out_of_range.yield_for(0), out_of_range.yield_for(1)), (0.0695, 0.0544));
    }

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn minimal_document() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"schema":"sivac-run/1","seed":5,"doses":[20],"output_dir":"x"}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.target.material().unwrap(), TargetMaterial::silicon_carbide());
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.doses.clear();
        assert!(cfg.validate().unwrap_err().downcast_ref::<UsageError>().is_some());
        let mut cfg = RunConfig::default();
        cfg.conversion_yield = YieldConfig::PerDose(vec![0.05]);
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.optics.reference_power_mw = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.schema = "other/2".into();
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"schema":"sivac-run/1","seed":1,"doses":[1],"output_dir":"x","typo":1}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), c.hash());
    }
}
