//! Per-dose yield tables and the consolidated report with provenance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sivac_core::inference::{format_yield_table, YieldReport};
use sivac_core::transport::ProfileSummary;

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: config_hash.into(),
        }
    }
}

/// Yield analysis of one dose, with the simulated ground truth when available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseAnalysis {
    pub report: YieldReport,
    /// Mean true defect count per spot, if the ground-truth array was found.
    pub true_mean_defects: Option<f64>,
    /// Spots whose assigned count differs from the truth.
    pub misclassified_spots: Option<usize>,
}

/// Output of `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldTable {
    pub provenance: Provenance,
    pub reference_power_mw: f64,
    pub doses: Vec<DoseAnalysis>,
}

impl YieldTable {
    pub fn to_text(&self) -> String {
        let reports: Vec<YieldReport> = self.doses.iter().map(|d| d.report.clone()).collect();
        let mut out = format_yield_table(&reports);
        let _ = writeln!(out, "# seed={} config={}", self.provenance.seed, self.provenance.config_hash);
        out
    }
}

/// One simulated quantity next to its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub quantity: String,
    pub unit: String,
    pub simulated: f64,
    pub reference: f64,
    /// (simulated − reference) / reference.
    pub relative_deviation: f64,
}

impl ParityRow {
    fn new(quantity: &str, unit: &str, simulated: f64, reference: f64) -> Self {
        Self {
            quantity: quantity.into(),
            unit: unit.into(),
            simulated,
            reference,
            relative_deviation: (simulated - reference) / reference,
        }
    }
}

/// Reference values of the He⁺ → 4H-SiC experiment the defaults model.
const REF_MEAN_DEPTH_NM: f64 = 179.0;
const REF_LONG_STRAGGLE_NM: f64 = 47.4;
const REF_LAT_STRAGGLE_NM: f64 = 59.3;
const REF_YIELD_LOW_DOSE: (f64, f64) = (20.0, 0.0695);
const REF_YIELD_HIGH_DOSE: (f64, f64) = (100.0, 0.0544);
const REF_SINGLE_RATE_LOW_DOSE: f64 = 0.35;

/// Consolidated report: transport summary, yield table and parity comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub transport: Option<ProfileSummary>,
    pub yields: Option<YieldTable>,
    pub parity: Vec<ParityRow>,
}

impl Report {
    pub fn new(provenance: Provenance, transport: Option<ProfileSummary>, yields: Option<YieldTable>) -> Self {
        let mut parity = Vec::new();
        if let Some(t) = &transport {
            parity.push(ParityRow::new("mean depth", "nm", t.mean_depth_nm, REF_MEAN_DEPTH_NM));
            parity.push(ParityRow::new("longitudinal straggle", "nm", t.long_straggle_nm, REF_LONG_STRAGGLE_NM));
            parity.push(ParityRow::new("lateral straggle (radial)", "nm", t.lat_straggle_nm, REF_LAT_STRAGGLE_NM));
        }
        if let Some(y) = &yields {
            for d in &y.doses {
                let r = &d.report;
                if r.dose == REF_YIELD_LOW_DOSE.0 {
                    parity.push(ParityRow::new("conversion yield at 20 ions/spot", "1", r.conversion_yield, REF_YIELD_LOW_DOSE.1));
                    parity.push(ParityRow::new("single-defect rate at 20 ions/spot", "1", r.single_rate, REF_SINGLE_RATE_LOW_DOSE));
                }
                if r.dose == REF_YIELD_HIGH_DOSE.0 {
                    parity.push(ParityRow::new("conversion yield at 100 ions/spot", "1", r.conversion_yield, REF_YIELD_HIGH_DOSE.1));
                }
            }
        }
        Self {
            provenance,
            transport,
            yields,
            parity,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "{} {}  seed={}  config={}", p.tool, p.version, p.seed, p.config_hash);
        if let Some(t) = &self.transport {
            let _ = writeln!(out, "\ntransport ({} ions, {} backscattered)", t.n_ions, t.n_backscattered);
            let _ = writeln!(out, "  mean depth              {:>8.1} nm", t.mean_depth_nm);
            let _ = writeln!(out, "  longitudinal straggle   {:>8.1} nm", t.long_straggle_nm);
            let _ = writeln!(out, "  lateral straggle radial {:>8.1} nm", t.lat_straggle_nm);
            let _ = writeln!(out, "  lateral straggle axis   {:>8.1} nm", t.lat_straggle_per_axis_nm);
            let _ = writeln!(out, "  vacancies per ion       {:>8.1}", t.vacancies_per_ion);
        }
        if let Some(y) = &self.yields {
            let reports: Vec<YieldReport> = y.doses.iter().map(|d| d.report.clone()).collect();
            let _ = writeln!(out, "\nyields at {} mW", y.reference_power_mw);
            out.push_str(&format_yield_table(&reports));
        }
        if !self.parity.is_empty() {
            let _ = writeln!(out, "\n{:<38} {:>12} {:>12} {:>9}", "parity", "simulated", "reference", "dev %");
            for r in &self.parity {
                let _ = writeln!(
                    out,
                    "{:<38} {:>12.4} {:>12.4} {:>9.1}",
                    format!("{} [{}]", r.quantity, r.unit),
                    r.simulated,
                    r.reference,
                    100.0 * r.relative_deviation
                );
            }
        }
        out
    }
}
