//! Subcommand implementations. Each writes its files into the output directory
//! and records them in the manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sivac_core::inference::{
    analyze_scan, fit_g2, fit_odmr, fit_poisson, fit_saturation, OdmrSpectrum, SaturationData,
};
use sivac_core::patterning::{
    build_pattern, dose_uncertainty, sample_defect_array_with, DefectArray, SamplingOptions, SpotPattern,
    DWELL_RESOLUTION_US,
};
use sivac_core::photonics::{acquire_histogram, render_scan, simulate_photon_trace, CorrelationHistogram, ScanImage};
use sivac_core::rng::SeedPath;
use sivac_core::transport::{simulate_profile, ImplantProfile, ProfileOptions, ProfileSummary};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::report::{DoseAnalysis, Provenance, Report, YieldTable};

pub const PROFILE_CSV: &str = "transport_profile.csv";
pub const SUMMARY_JSON: &str = "transport_summary.json";
pub const PATTERN_JSON: &str = "pattern.json";
pub const HISTOGRAM_CSV: &str = "hbt_histogram.csv";
pub const TRACE_CSV: &str = "hbt_trace.csv";
pub const YIELDS_JSON: &str = "yields.json";
pub const YIELDS_TXT: &str = "yields.txt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

pub fn array_file(dose: f64) -> String {
    format!("array_dose{dose}.json")
}

pub fn scan_stem(dose: f64, power_mw: f64) -> String {
    format!("scan_dose{dose}_{power_mw}mW")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

/// Transport summary as written to disk, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TransportRecord {
    pub provenance: Provenance,
    pub beam_energy_kev: f64,
    pub bin_width_nm: f64,
    pub summary: ProfileSummary,
}

fn run_transport(cfg: &RunConfig) -> Result<ImplantProfile> {
    let started = Instant::now();
    let profile = simulate_profile(
        &cfg.beam()?,
        &cfg.target.material()?,
        cfg.transport.n_ions,
        cfg.seed,
        ProfileOptions {
            bin_width_nm: cfg.transport.bin_width_nm,
        },
    )?;
    log::info!("{} ion histories in {:.1} s", cfg.transport.n_ions, started.elapsed().as_secs_f64());
    Ok(profile)
}

/// Depth profile CSV and summary JSON.
pub fn simulate_transport(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let profile = run_transport(cfg)?;
    let csv = out.join(PROFILE_CSV);
    let mut w = BufWriter::new(File::create(&csv)?);
    profile.write_csv(&mut w, None)?;
    w.flush()?;
    let summary = out.join(SUMMARY_JSON);
    write_json(
        &summary,
        &TransportRecord {
            provenance: Provenance::new(cfg.seed, &cfg.hash()),
            beam_energy_kev: cfg.beam.energy_kev,
            bin_width_nm: cfg.transport.bin_width_nm,
            summary: profile.summary(),
        },
    )?;
    let files = vec![csv, summary];
    Manifest::record(out, "simulate transport", cfg.seed, &cfg.hash(), &files)?;
    Ok(files)
}

/// Seed of the per-dose ground truth and scans; keyed by dose value, not list position.
fn dose_seed(cfg: &RunConfig, dose: f64) -> u64 {
    SeedPath::root(cfg.seed).child("dose").child(dose).seed()
}

/// Ground-truth arrays and scans for every dose and power.
pub fn simulate_array(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let profile = run_transport(cfg)?;
    let pattern = build_pattern(cfg.pattern.rows, cfg.pattern.cols, cfg.pattern.pitch_um)?;
    let mut files = Vec::new();
    let pattern_path = out.join(PATTERN_JSON);
    write_json(&pattern_path, &pattern)?;
    files.push(pattern_path);
    let options = SamplingOptions {
        brightness_dispersion: cfg.optics.brightness_dispersion,
    };
    for (i, &dose) in cfg.doses.iter().enumerate() {
        let seed = dose_seed(cfg, dose);
        let array = sample_defect_array_with(&pattern, dose, cfg.yield_for(i), &profile, seed, options)?;
        let array_path = out.join(array_file(dose));
        write_json(&array_path, &array)?;
        files.push(array_path);
        for &power in &cfg.optics.powers_mw {
            let image = render_scan(&array, &cfg.optics.optics(), power, &cfg.emitter, &cfg.scan, seed)?;
            let (pgm, json) = image.write_files(out, &scan_stem(dose, power))?;
            files.push(pgm);
            files.push(json);
        }
        log::info!("dose {dose}: {} defects in {} spots", array.total_defects(), array.spots.len());
    }
    Manifest::record(out, "simulate array", cfg.seed, &cfg.hash(), &files)?;
    Ok(files)
}

/// Correlation histogram of an HBT acquisition (and the first segment's trace).
pub fn simulate_hbt(cfg: &RunConfig, out: &Path, write_trace: bool) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let acq = cfg.hbt.acquisition();
    let hist = acquire_histogram(&acq, &cfg.emitter, cfg.seed)?;
    let path = out.join(HISTOGRAM_CSV);
    let mut w = BufWriter::new(File::create(&path)?);
    hist.write_csv(&mut w)?;
    w.flush()?;
    let mut files = vec![path];
    if write_trace {
        let trace = simulate_photon_trace(
            acq.n_emitters,
            acq.signal_kcps,
            acq.background_kcps,
            &cfg.emitter,
            acq.segment_s,
            SeedPath::root(cfg.seed).child("segment").child(0).seed(),
        )?;
        let path = out.join(TRACE_CSV);
        let mut w = BufWriter::new(File::create(&path)?);
        trace.write_csv(&mut w)?;
        w.flush()?;
        files.push(path);
    }
    Manifest::record(out, "simulate hbt", cfg.seed, &cfg.hash(), &files)?;
    Ok(files)
}

/// Fit models selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitModel {
    Odmr,
    G2,
    Saturation,
    Poisson,
}

/// Options that only the g² fit uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Options {
    pub signal_kcps: f64,
    pub background_kcps: f64,
    pub correct: bool,
}

/// Per-spot defect counts: integers separated by commas, whitespace or newlines;
/// a non-numeric first line is treated as a header.
fn read_counts(text: &str) -> Result<Vec<usize>> {
    let mut counts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed: std::result::Result<Vec<usize>, _> = fields.iter().map(|f| f.parse::<usize>()).collect();
        match parsed {
            Ok(v) => counts.extend(v),
            Err(_) if n == 0 && counts.is_empty() => continue,
            Err(e) => bail!("line {}: {e}", n + 1),
        }
    }
    Ok(counts)
}

/// Fits `data` with the chosen model and returns the result JSON.
pub fn fit(model: FitModel, data: &Path, g2: G2Options) -> Result<serde_json::Value> {
    let file = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let reader = BufReader::new(file);
    Ok(match model {
        FitModel::Odmr => fit_odmr(&OdmrSpectrum::read_csv(reader)?)?.to_json(),
        FitModel::Saturation => fit_saturation(&SaturationData::read_csv(reader)?)?.to_json(),
        FitModel::G2 => {
            let hist = CorrelationHistogram::read_csv(reader)?;
            fit_g2(&hist, g2.signal_kcps, g2.background_kcps, g2.correct)?.to_json()
        }
        FitModel::Poisson => {
            let counts = read_counts(&fs::read_to_string(data)?)?;
            let fit = fit_poisson(&counts)?;
            let mut json = fit.mle.to_json();
            json["histogram_fit"] = fit.histogram_fit.to_json();
            json["histogram"] = serde_json::json!(fit.histogram);
            json
        }
    })
}

/// Detect → classify → Poisson fit → yield report for every dose.
pub fn analyze(cfg: &RunConfig, input: &Path, out: &Path) -> Result<YieldTable> {
    create_dir(out)?;
    let pattern_path = input.join(PATTERN_JSON);
    if !pattern_path.exists() {
        bail!("missing input {}", pattern_path.display());
    }
    let pattern: SpotPattern = read_json(&pattern_path)?;
    let power = cfg.optics.reference_power_mw;
    let mut doses = Vec::new();
    let mut files = Vec::new();
    for &dose in &cfg.doses {
        let pgm = input.join(format!("{}.pgm", scan_stem(dose, power)));
        if !pgm.exists() {
            bail!("missing input {}", pgm.display());
        }
        let image = ScanImage::read_files(&pgm)?;
        let mut analysis = analyze_scan(&image, &pattern, dose, power)?;
        analysis.report.dose_uncertainty = Some(dose_uncertainty(cfg.beam.current_pa, DWELL_RESOLUTION_US)?);
        let truth_path = input.join(array_file(dose));
        let (true_mean, wrong) = if truth_path.exists() {
            let truth: DefectArray = read_json(&truth_path)?;
            let mean = truth.total_defects() as f64 / truth.spots.len().max(1) as f64;
            let wrong = analysis
                .readouts
                .iter()
                .filter(|r| {
                    truth
                        .spots
                        .iter()
                        .find(|s| s.row == r.row && s.col == r.col)
                        .is_some_and(|s| s.k != r.n_defects)
                })
                .count();
            (Some(mean), Some(wrong))
        } else {
            (None, None)
        };
        let readouts = out.join(format!("readouts_dose{dose}.csv"));
        let mut w = BufWriter::new(File::create(&readouts)?);
        writeln!(w, "row,col,intensity_kcps,n_defects")?;
        for r in &analysis.readouts {
            writeln!(w, "{},{},{},{}", r.row, r.col, r.intensity_kcps, r.n_defects)?;
        }
        w.flush()?;
        files.push(readouts);
        doses.push(DoseAnalysis {
            report: analysis.report,
            true_mean_defects: true_mean,
            misclassified_spots: wrong,
        });
    }
    let table = YieldTable {
        provenance: Provenance::new(cfg.seed, &cfg.hash()),
        reference_power_mw: power,
        doses,
    };
    let json = out.join(YIELDS_JSON);
    write_json(&json, &table)?;
    let txt = out.join(YIELDS_TXT);
    fs::write(&txt, table.to_text())?;
    files.push(json);
    files.push(txt);
    Manifest::record(out, "analyze", cfg.seed, &cfg.hash(), &files)?;
    Ok(table)
}

/// Consolidated report from whatever transport and yield results `dir` holds.
pub fn report(cfg: &RunConfig, dir: &Path) -> Result<Report> {
    let summary = dir.join(SUMMARY_JSON);
    let yields = dir.join(YIELDS_JSON);
    if !summary.exists() && !yields.exists() {
        bail!("{} holds neither {SUMMARY_JSON} nor {YIELDS_JSON}", dir.display());
    }
    let transport = if summary.exists() {
        Some(read_json::<TransportRecord>(&summary)?.summary)
    } else {
        None
    };
    let table = if yields.exists() { Some(read_json::<YieldTable>(&yields)?) } else { None };
    let report = Report::new(Provenance::new(cfg.seed, &cfg.hash()), transport, table);
    let json = dir.join(REPORT_JSON);
    write_json(&json, &report)?;
    let txt = dir.join(REPORT_TXT);
    fs::write(&txt, report.to_text())?;
    Manifest::record(dir, "report", cfg.seed, &cfg.hash(), &[json, txt])?;
    Ok(report)
}
