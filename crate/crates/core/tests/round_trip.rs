//! Estimators applied to forward-simulated data recover the generating truth.

use sivac_core::inference::{analyze_scan, detect_spots, fit_g2, FLAG_NOT_ANTIBUNCHED};
use sivac_core::patterning::{build_pattern, ArrayMetadata, Defect, DefectArray, SpotRecord};
use sivac_core::photonics::{
    correlate, expected_rates, render_scan, simulate_photon_trace, EmitterModel, Optics, ScanImage, ScanSpec,
};

const POWER: f64 = 0.5;

/// 4×4 array at 3 µm pitch with k = (row + col) mod 4 centred defects.
fn known_array() -> DefectArray {
    let pattern = build_pattern(4, 4, 3.0).unwrap();
    let spots = pattern
        .spots
        .iter()
        .map(|s| {
            let k = (s.row + s.col) % 4;
            SpotRecord {
                row: s.row,
                col: s.col,
                x_um: s.x_um,
                y_um: s.y_um,
                k,
                defects: vec![
                    Defect {
                        dx_nm: 0.0,
                        dy_nm: 0.0,
                        depth_nm: 150.0,
                        brightness: 1.0,
                    };
                    k
                ],
            }
        })
        .collect();
    DefectArray {
        spots,
        metadata: ArrayMetadata {
            dose: 20.0,
            conversion_yield: 0.07,
            seed: 0,
            rows: 4,
            cols: 4,
            pitch_um: 3.0,
            lateral_sigma_nm: 0.0,
            brightness_dispersion: 0.0,
        },
    }
}

/// Shot-noise σ of a spot read-out: Poisson variance over the FWHM aperture,
/// divided by the aperture's peak-normalised PSF sum.
fn readout_sigma(image: &ScanImage, rates: &[f64], x: f64, y: f64, unit_signal: &[f64]) -> f64 {
    let (mut var, mut norm) = (0.0, 0.0);
    for r in 0..image.height {
        for c in 0..image.width {
            let (px, py) = image.pixel_center_um(c, r);
            if (px - x).powi(2) + (py - y).powi(2) <= image.psf_fwhm_um.powi(2) {
                var += rates[r * image.width + c] / (image.dwell_s * 1e3);
                norm += unit_signal[r * image.width + c];
            }
        }
    }
    var.sqrt() / norm
}

#[test]
fn spot_intensities_match_defect_counts() {
    let array = known_array();
    let emitter = EmitterModel::default();
    let optics = Optics::default();
    let image = render_scan(&array, &optics, POWER, &emitter, &ScanSpec::default(), 11).unwrap();
    let rates = expected_rates(&array, &optics, POWER, &emitter, &image).unwrap();
    // peak-normalised PSF of one defect, from a single-defect array
    let mut single = known_array();
    for s in &mut single.spots {
        s.defects.truncate(0);
    }
    single.spots[0].defects.push(array.spots[1].defects[0]);
    let no_bg = Optics {
        background_kcps: 0.0,
        ..optics
    };
    let unit = emitter.intensity(POWER).unwrap();
    let one: Vec<f64> = expected_rates(&single, &no_bg, POWER, &emitter, &image)
        .unwrap()
        .iter()
        .map(|r| r / unit)
        .collect();
    let readouts = detect_spots(&image, &array.pattern(), POWER).unwrap();
    assert_eq!(readouts.len(), 16);
    for (r, truth) in readouts.iter().zip(&array.spots) {
        // shift the unit PSF from spot (0, 0) onto this spot: same sub-pixel geometry
        let shift = (truth.row * 30) * image.width + truth.col * 30;
        let shifted: Vec<f64> = (0..one.len()).map(|i| if i >= shift { one[i - shift] } else { 0.0 }).collect();
        let sigma = readout_sigma(&image, &rates, truth.x_um, truth.y_um, &shifted);
        let want = truth.k as f64 * unit;
        assert!(
            (r.intensity_kcps - want).abs() <= 3.0 * sigma + 0.05,
            "spot ({}, {}): {} vs {} ± {}",
            r.row,
            r.col,
            r.intensity_kcps,
            want,
            sigma
        );
        assert_eq!(r.n_defects, truth.k);
    }
}

#[test]
fn empty_array_reads_zero() {
    let mut array = known_array();
    array.spots.iter_mut().for_each(|s| {
        s.defects.clear();
        s.k = 0;
    });
    let image = render_scan(&array, &Optics::default(), POWER, &EmitterModel::default(), &ScanSpec::default(), 12).unwrap();
    let readouts = detect_spots(&image, &array.pattern(), POWER).unwrap();
    for r in &readouts {
        assert!(r.intensity_kcps < 0.5, "{}", r.intensity_kcps);
        assert_eq!(r.n_defects, 0);
    }
}

#[test]
fn background_is_subtracted() {
    let array = known_array();
    let emitter = EmitterModel::default();
    let dark = Optics {
        background_kcps: 0.0,
        ..Optics::default()
    };
    let bright = Optics {
        background_kcps: 2.0,
        ..Optics::default()
    };
    let a = render_scan(&array, &dark, POWER, &emitter, &ScanSpec::default(), 13).unwrap();
    let b = render_scan(&array, &bright, POWER, &emitter, &ScanSpec::default(), 13).unwrap();
    let ra = detect_spots(&a, &array.pattern(), POWER).unwrap();
    let rb = detect_spots(&b, &array.pattern(), POWER).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x.intensity_kcps - y.intensity_kcps).abs() < 0.6, "{} vs {}", x.intensity_kcps, y.intensity_kcps);
        assert_eq!(x.n_defects, y.n_defects);
    }
}

#[test]
fn analysis_of_known_array() {
    let array = known_array();
    let image = render_scan(&array, &Optics::default(), POWER, &EmitterModel::default(), &ScanSpec::default(), 14).unwrap();
    let out = analyze_scan(&image, &array.pattern(), 20.0, POWER).unwrap();
    let true_mean = array.total_defects() as f64 / 16.0;
    assert!((out.report.lambda - true_mean).abs() < 1e-12);
    assert!(detect_spots(&image, &array.pattern(), 1.0).is_err());
}

#[test]
fn single_emitter_trace_is_antibunched() {
    let emitter = EmitterModel::default();
    let trace = simulate_photon_trace(1, 200.0, 0.0, &emitter, 10.0, 21).unwrap();
    let hist = correlate(&trace, 4.0, 2000.0).unwrap();
    let fit = fit_g2(&hist, 200.0, 0.0, false).unwrap();
    let g0 = fit.value("g2_at_zero").unwrap();
    assert!(g0 < 0.5, "{fit:?}");
    assert!(!fit.has_flag(FLAG_NOT_ANTIBUNCHED));
}

#[test]
fn correction_matches_pure_trace() {
    let emitter = EmitterModel::default();
    let pure = simulate_photon_trace(1, 150.0, 0.0, &emitter, 10.0, 22).unwrap();
    let mixed = simulate_photon_trace(1, 150.0, 50.0, &emitter, 10.0, 23).unwrap();
    let fp = fit_g2(&correlate(&pure, 4.0, 2000.0).unwrap(), 150.0, 0.0, false).unwrap();
    let fm = fit_g2(&correlate(&mixed, 4.0, 2000.0).unwrap(), 150.0, 50.0, true).unwrap();
    let (a, sa) = (fp.value("g2_at_zero").unwrap(), fp.sigma_of("g2_at_zero").unwrap());
    let (b, sb) = (fm.value("g2_at_zero").unwrap(), fm.sigma_of("g2_at_zero").unwrap());
    assert!((a - b).abs() <= 3.0 * (sa * sa + sb * sb).sqrt(), "{a} ± {sa} vs {b} ± {sb}");
}
