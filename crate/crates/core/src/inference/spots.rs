use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::patterning::SpotPattern;
use crate::photonics::scan::psf_stamp;
use crate::photonics::ScanImage;

/// Intensity (kcps at 0.5 mW) contributed by one defect.
pub const INTENSITY_UNIT_KCPS: f64 = 8.0;
/// Largest g²(0) compatible with a single emitter.
pub const SINGLE_G2_MAX: f64 = 0.32;
/// Largest g²(0) compatible with two emitters.
pub const DOUBLE_G2_MAX: f64 = 0.65;

/// Read-out of one implantation spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotReadout {
    pub row: usize,
    pub col: usize,
    /// Background-subtracted peak-equivalent intensity, kcps (≥ 0).
    pub intensity_kcps: f64,
    pub g2_at_zero: Option<f64>,
    pub g2_sigma: Option<f64>,
    /// Assigned number of defects.
    pub n_defects: usize,
    /// The g²(0) band disagrees with the intensity band.
    pub conflict: bool,
}

/// Outcome of [`classify_spot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub n_defects: usize,
    pub conflict: bool,
}

/// Defect count from intensity in units of `unit_kcps`: below ½ unit → 0,
/// [½, 1) → 1, [1, 2) → 2, otherwise max(3, round(I/unit)). A g²(0) outside the
/// band expected for that count sets `conflict`; the intensity decides.
pub fn classify_spot_with_unit(intensity_kcps: f64, g2_at_zero: Option<f64>, unit_kcps: f64) -> Result<Classification> {
    if !(intensity_kcps >= 0.0) {
        return Err(domain(format!("intensity must be ≥ 0, got {intensity_kcps} kcps")));
    }
    if !(unit_kcps > 0.0) {
        return Err(domain(format!("intensity unit must be positive, got {unit_kcps} kcps")));
    }
    let units = intensity_kcps / unit_kcps;
    let n = if units < 0.5 {
        0
    } else if units < 1.0 {
        1
    } else if units < 2.0 {
        2
    } else {
        (units.round() as usize).max(3)
    };
    let conflict = match g2_at_zero {
        None => false,
        Some(g) => {
            let from_g2 = if g <= SINGLE_G2_MAX {
                1
            } else if g <= DOUBLE_G2_MAX {
                2
            } else {
                3
            };
            match n {
                0 => true,
                1 | 2 => from_g2 != n,
                _ => from_g2 != 3,
            }
        }
    };
    Ok(Classification { n_defects: n, conflict })
}

/// [`classify_spot_with_unit`] with the 8 kcps unit.
pub fn classify_spot(intensity_kcps: f64, g2_at_zero: Option<f64>) -> Result<Classification> {
    classify_spot_with_unit(intensity_kcps, g2_at_zero, INTENSITY_UNIT_KCPS)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if v.len() % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Per-spot intensities of a scan at the nominal pattern positions.
///
/// The background is the median rate of pixels farther than 2·FWHM from every
/// spot. Each spot's intensity is the background-subtracted rate summed over an
/// aperture of radius FWHM, divided by the summed peak-normalised PSF over the same
/// pixels, so a single centred emitter reads its peak rate. Spots are classified
/// with [`classify_spot`]; spots off the image are omitted with a warning. The
/// scan must have been taken at `reference_power_mw`.
pub fn detect_spots(image: &ScanImage, pattern: &SpotPattern, reference_power_mw: f64) -> Result<Vec<SpotReadout>> {
    if (image.power_mw - reference_power_mw).abs() > 1e-9 * reference_power_mw.abs().max(1.0) {
        return Err(domain(format!(
            "scan taken at {} mW, classification needs {} mW",
            image.power_mw, reference_power_mw
        )));
    }
    let pix = image.pixel_um;
    let fwhm = image.psf_fwhm_um;
    let sigma = fwhm / 2.354_820_045_030_949_4;
    let aperture = fwhm.max(pix);
    let exclusion = (2.0 * fwhm).max(2.0 * pix);
    let to_rate = 1.0 / (image.dwell_s * 1e3);

    let mut near = vec![false; image.width * image.height];
    for s in &pattern.spots {
        disc(image, s.x_um, s.y_um, exclusion, |c, r| near[r * image.width + c] = true);
    }
    let mut far: Vec<f64> = near
        .iter()
        .zip(&image.counts)
        .filter(|(n, _)| !**n)
        .map(|(_, &c)| c as f64 * to_rate)
        .collect();
    if far.is_empty() {
        log::warn!("no pixels away from the spots; using the whole image for the background");
        far = image.counts.iter().map(|&c| c as f64 * to_rate).collect();
    }
    let background = median(&mut far);

    let mut out = Vec::with_capacity(pattern.len());
    for s in &pattern.spots {
        if image.pixel_at(s.x_um, s.y_um).is_none() {
            log::warn!("spot ({}, {}) at ({}, {}) µm is off the image; skipped", s.row, s.col, s.x_um, s.y_um);
            continue;
        }
        let Some((c0, r0, weights, span)) =
            psf_stamp(image.origin_um, pix, image.width, image.height, sigma, s.x_um, s.y_um)
        else {
            continue;
        };
        let (mut signal, mut norm) = (0.0, 0.0);
        disc(image, s.x_um, s.y_um, aperture, |c, r| {
            signal += image.count(c, r) as f64 * to_rate - background;
            if c >= c0 && r >= r0 && c - c0 < span {
                if let Some(w) = weights.get((r - r0) * span + (c - c0)) {
                    norm += w;
                }
            }
        });
        let intensity = if norm > 0.0 { (signal / norm).max(0.0) } else { 0.0 };
        let class = classify_spot(intensity, None)?;
        out.push(SpotReadout {
            row: s.row,
            col: s.col,
            intensity_kcps: intensity,
            g2_at_zero: None,
            g2_sigma: None,
            n_defects: class.n_defects,
            conflict: false,
        });
    }
    Ok(out)
}

/// Calls `f(col, row)` for every pixel whose centre lies within `radius` of (x, y).
fn disc(image: &ScanImage, x: f64, y: f64, radius: f64, mut f: impl FnMut(usize, usize)) {
    let pix = image.pixel_um;
    let c_lo = ((x - radius - image.origin_um[0]) / pix).floor().max(0.0) as usize;
    let r_lo = ((y - radius - image.origin_um[1]) / pix).floor().max(0.0) as usize;
    let c_hi = (((x + radius - image.origin_um[0]) / pix).ceil().max(-1.0) as isize).min(image.width as isize - 1);
    let r_hi = (((y + radius - image.origin_um[1]) / pix).ceil().max(-1.0) as isize).min(image.height as isize - 1);
    for r in r_lo as isize..=r_hi {
        for c in c_lo as isize..=c_hi {
            let (px, py) = image.pixel_center_um(c as usize, r as usize);
            if (px - x).powi(2) + (py - y).powi(2) <= radius * radius {
                f(c as usize, r as usize);
            }
        }
    }
}
