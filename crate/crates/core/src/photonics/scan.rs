use std::fs;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::patterning::DefectArray;
use crate::rng::SeedPath;

use super::EmitterModel;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4; // 2√(2 ln 2)

/// Microscope point-spread function and detector background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optics {
    /// Full width at half maximum of the Gaussian PSF, µm; 0 is a point probe.
    pub psf_fwhm_um: f64,
    pub background_kcps: f64,
}

impl Default for Optics {
    fn default() -> Self {
        Self {
            psf_fwhm_um: 0.5,
            background_kcps: 2.0,
        }
    }
}

impl Optics {
    pub fn psf_sigma_um(&self) -> f64 {
        self.psf_fwhm_um / FWHM_PER_SIGMA
    }

    fn validate(&self) -> Result<()> {
        if !(self.psf_fwhm_um >= 0.0 && self.psf_fwhm_um.is_finite()) {
            return Err(invalid(format!("PSF FWHM must be ≥ 0, got {}", self.psf_fwhm_um)));
        }
        if !(self.background_kcps >= 0.0 && self.background_kcps.is_finite()) {
            return Err(invalid(format!("background must be ≥ 0, got {}", self.background_kcps)));
        }
        Ok(())
    }
}

/// Pixel grid of a confocal scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub pixel_um: f64,
    pub dwell_ms: f64,
    /// Border added around the pattern on every side.
    pub margin_um: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            pixel_um: 0.1,
            dwell_ms: 20.0,
            margin_um: 3.0,
        }
    }
}

/// Photon counts of a raster scan. Pixel (i, j) is column i, row j, centred at
/// `origin_um + (i, j)·pixel_um`; counts are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanImage {
    pub width: usize,
    pub height: usize,
    pub pixel_um: f64,
    pub origin_um: [f64; 2],
    pub dwell_s: f64,
    pub power_mw: f64,
    pub psf_fwhm_um: f64,
    pub background_kcps: f64,
    pub seed: u64,
    #[serde(skip)]
    pub counts: Vec<u32>,
}

impl ScanImage {
    pub fn count(&self, col: usize, row: usize) -> u32 {
        self.counts[row * self.width + col]
    }

    /// Measured rate of one pixel in kcps.
    pub fn rate_kcps(&self, col: usize, row: usize) -> f64 {
        self.count(col, row) as f64 / (self.dwell_s * 1e3)
    }

    pub fn pixel_center_um(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_um[0] + col as f64 * self.pixel_um,
            self.origin_um[1] + row as f64 * self.pixel_um,
        )
    }

    /// Nearest pixel to a position, if it lies on the image.
    pub fn pixel_at(&self, x_um: f64, y_um: f64) -> Option<(usize, usize)> {
        let c = ((x_um - self.origin_um[0]) / self.pixel_um).round();
        let r = ((y_um - self.origin_um[1]) / self.pixel_um).round();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            None
        } else {
            Some((c as usize, r as usize))
        }
    }

    /// Plain (P2) PGM text with the seed in a comment line.
    pub fn to_pgm(&self) -> Result<String> {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        if max > u16::MAX as u32 {
            return Err(invalid(format!("pixel count {max} exceeds the PGM range")));
        }
        let mut out = format!("P2\n# seed={}\n{} {}\n{}\n", self.seed, self.width, self.height, max);
        for row in self.counts.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `<stem>.pgm` and the metadata sidecar `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let pgm = dir.join(format!("{stem}.pgm"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&pgm, self.to_pgm()?)?;
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        Ok((pgm, json))
    }

    /// Reads a PGM written by [`ScanImage::write_files`] together with its sidecar.
    pub fn read_files(pgm_path: &Path) -> Result<Self> {
        let sidecar = pgm_path.with_extension("json");
        let mut image: ScanImage = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
        let text = fs::read_to_string(pgm_path)?;
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("P2") {
            return Err(Error::Parse(format!("{} is not a plain PGM", pgm_path.display())));
        }
        let mut num = |what: &str| -> Result<u32> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("PGM ends before {what}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("PGM {what}: {e}")))
        };
        let (w, h) = (num("width")? as usize, num("height")? as usize);
        let _max = num("maxval")?;
        if w != image.width || h != image.height {
            return Err(Error::Parse("PGM size does not match its sidecar".into()));
        }
        image.counts = (0..w * h).map(|_| num("pixel")).collect::<Result<_>>()?;
        Ok(image)
    }
}

/// Probability mass of a unit Gaussian (σ, centre `mu`) inside [lo, hi).
fn interval_mass(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if mu >= lo && mu < hi { 1.0 } else { 0.0 };
    }
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (erf((hi - mu) / s) - erf((lo - mu) / s))
}

/// Pixel-averaged PSF of one emitter, scaled so a pixel centred on the emitter
/// reads 1. Returns (first column, first row, row-major weights, window width).
pub(crate) fn psf_stamp(
    image_origin: [f64; 2],
    pixel: f64,
    width: usize,
    height: usize,
    sigma: f64,
    x: f64,
    y: f64,
) -> Option<(usize, usize, Vec<f64>, usize)> {
    let reach = 6.0 * sigma + pixel;
    let col_lo = (((x - reach - image_origin[0]) / pixel).floor().max(0.0)) as usize;
    let row_lo = (((y - reach - image_origin[1]) / pixel).floor().max(0.0)) as usize;
    let col_hi = (((x + reach - image_origin[0]) / pixel).ceil() as isize).min(width as isize - 1);
    let row_hi = (((y + reach - image_origin[1]) / pixel).ceil() as isize).min(height as isize - 1);
    if col_hi < col_lo as isize || row_hi < row_lo as isize {
        return None;
    }
    let (col_hi, row_hi) = (col_hi as usize, row_hi as usize);
    let centred = interval_mass(-pixel / 2.0, pixel / 2.0, 0.0, sigma);
    let norm = 1.0 / (centred * centred);
    let xs: Vec<f64> = (col_lo..=col_hi)
        .map(|c| {
            let cx = image_origin[0] + c as f64 * pixel;
            interval_mass(cx - pixel / 2.0, cx + pixel / 2.0, x, sigma)
        })
        .collect();
    let ys: Vec<f64> = (row_lo..=row_hi)
        .map(|r| {
            let cy = image_origin[1] + r as f64 * pixel;
            interval_mass(cy - pixel / 2.0, cy + pixel / 2.0, y, sigma)
        })
        .collect();
    let mut w = Vec::with_capacity(xs.len() * ys.len());
    for wy in &ys {
        for wx in &xs {
            w.push(wx * wy * norm);
        }
    }
    Some((col_lo, row_lo, w, xs.len()))
}

/// Expected rate (kcps) per pixel of a scan; see [`render_scan`].
pub fn expected_rates(
    array: &DefectArray,
    optics: &Optics,
    power_mw: f64,
    emitter: &EmitterModel,
    image: &ScanImage,
) -> Result<Vec<f64>> {
    optics.validate()?;
    let unit = emitter.intensity(power_mw)?;
    let sigma = optics.psf_sigma_um();
    let mut rates = vec![optics.background_kcps; image.width * image.height];
    for spot in &array.spots {
        for d in &spot.defects {
            let x = spot.x_um + d.dx_nm * 1e-3;
            let y = spot.y_um + d.dy_nm * 1e-3;
            if let Some((c0, r0, w, span)) =
                psf_stamp(image.origin_um, image.pixel_um, image.width, image.height, sigma, x, y)
            {
                for (k, wk) in w.iter().enumerate() {
                    let (r, c) = (r0 + k / span, c0 + k % span);
                    rates[r * image.width + c] += d.brightness * unit * wk;
                }
            }
        }
    }
    Ok(rates)
}

/// Renders a shot-noise-limited confocal scan of `array`.
///
/// Each pixel's expected rate is the background plus, for every defect,
/// brightness · I(power) times the pixel-averaged Gaussian PSF, normalised so a
/// pixel centred on the defect reads exactly I(power). A vanishing PSF therefore
/// puts all of a defect's signal in one pixel. Counts are Poisson with mean
/// rate · dwell, drawn row by row from the streams `scan/row/<r>`.
pub fn render_scan(
    array: &DefectArray,
    optics: &Optics,
    power_mw: f64,
    emitter: &EmitterModel,
    scan: &ScanSpec,
    seed: u64,
) -> Result<ScanImage> {
    if !(scan.pixel_um > 0.0) || !(scan.dwell_ms > 0.0) || !(scan.margin_um >= 0.0) {
        return Err(invalid("scan needs positive pixel size and dwell, and a non-negative margin"));
    }
    if array.spots.is_empty() {
        return Err(invalid("defect array has no spots"));
    }
    let (xmin, xmax, ymin, ymax) = array.spots.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), s| (a.min(s.x_um), b.max(s.x_um), c.min(s.y_um), d.max(s.y_um)),
    );
    let origin = [xmin - scan.margin_um, ymin - scan.margin_um];
    let width = ((xmax - xmin + 2.0 * scan.margin_um) / scan.pixel_um).round() as usize + 1;
    let height = ((ymax - ymin + 2.0 * scan.margin_um) / scan.pixel_um).round() as usize + 1;
    let mut image = ScanImage {
        width,
        height,
        pixel_um: scan.pixel_um,
        origin_um: origin,
        dwell_s: scan.dwell_ms * 1e-3,
        power_mw,
        psf_fwhm_um: optics.psf_fwhm_um,
        background_kcps: optics.background_kcps,
        seed,
        counts: Vec::new(),
    };
    let rates = expected_rates(array, optics, power_mw, emitter, &image)?;
    let root = SeedPath::root(seed).child("scan").child("row");
    let counts_per_kcps = image.dwell_s * 1e3;
    image.counts = rates
        .par_chunks(width)
        .enumerate()
        .flat_map_iter(|(r, row)| {
            let mut rng = root.child(r).rng();
            row.iter()
                .map(|&rate| {
                    let mean = rate * counts_per_kcps;
                    if mean > 0.0 {
                        Poisson::new(mean).map(|p| p.sample(&mut rng) as u32).unwrap_or(0)
                    } else {
                        0
                    }
                })
                .collect::<Vec<u32>>()
        })
        .collect();
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterning::{ArrayMetadata, Defect, SpotRecord};

    fn array_with(defects: Vec<Defect>) -> DefectArray {
        DefectArray {
            spots: vec![SpotRecord {
                row: 0,
                col: 0,
                x_um: 0.0,
                y_um: 0.0,
                k: defects.len(),
                defects,
            }],
            metadata: ArrayMetadata {
                dose: 20.0,
                conversion_yield: 0.07,
                seed: 0,
                rows: 1,
                cols: 1,
                pitch_um: 3.0,
                lateral_sigma_nm: 0.0,
                brightness_dispersion: 0.0,
            },
        }
    }

    fn centred() -> Defect {
        Defect {
            dx_nm: 0.0,
            dy_nm: 0.0,
            depth_nm: 150.0,
            brightness: 1.0,
        }
    }

    #[test]
    fn background_only_mean() {
        let img = render_scan(&array_with(vec![]), &Optics::default(), 0.5, &EmitterModel::default(), &ScanSpec::default(), 1)
            .unwrap();
        let n = img.counts.len() as f64;
        let mean_rate = img.counts.iter().map(|&c| c as f64).sum::<f64>() / n / (img.dwell_s * 1e3);
        // each pixel: 40 counts expected; mean over n pixels has σ = √(40/n)/20 kcps
        assert!((mean_rate - 2.0).abs() < 4.0 * (40.0 / n).sqrt() / 20.0, "{mean_rate}");
    }

    #[test]
    fn single_defect_peak_equals_unit_intensity() {
        let emitter = EmitterModel::default();
        let optics = Optics::default();
        let arr = array_with(vec![centred()]);
        let img = render_scan(&arr, &optics, 0.5, &emitter, &ScanSpec::default(), 2).unwrap();
        let rates = expected_rates(&arr, &optics, 0.5, &emitter, &img).unwrap();
        let (c, r) = img.pixel_at(0.0, 0.0).unwrap();
        let peak = rates[r * img.width + c] - optics.background_kcps;
        assert!((peak - emitter.intensity(0.5).unwrap()).abs() < 1e-9, "{peak}");
    }

    #[test]
    fn point_psf_concentrates_signal() {
        let emitter = EmitterModel::default();
        let optics = Optics {
            psf_fwhm_um: 0.0,
            background_kcps: 0.0,
        };
        let arr = array_with(vec![centred()]);
        let img = render_scan(&arr, &optics, 0.5, &emitter, &ScanSpec::default(), 3).unwrap();
        let rates = expected_rates(&arr, &optics, 0.5, &emitter, &img).unwrap();
        let nonzero: Vec<_> = rates.iter().filter(|&&r| r > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0] - emitter.intensity(0.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn total_signal_matches_integrated_psf() {
        let emitter = EmitterModel::default();
        let optics = Optics::default();
        let arr = array_with(vec![centred(), centred()]);
        let img = render_scan(&arr, &optics, 0.5, &emitter, &ScanSpec::default(), 4).unwrap();
        let rates = expected_rates(&arr, &optics, 0.5, &emitter, &img).unwrap();
        let signal: f64 = rates.iter().map(|r| r - optics.background_kcps).sum();
        let p = img.pixel_um;
        let centred_mass = interval_mass(-p / 2.0, p / 2.0, 0.0, optics.psf_sigma_um()).powi(2);
        let want = 2.0 * emitter.intensity(0.5).unwrap() / centred_mass;
        assert!((signal / want - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pgm_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let emitter = EmitterModel::default();
        let arr = array_with(vec![centred()]);
        let a = render_scan(&arr, &Optics::default(), 0.5, &emitter, &ScanSpec::default(), 5).unwrap();
        let b = render_scan(&arr, &Optics::default(), 0.5, &emitter, &ScanSpec::default(), 5).unwrap();
        assert_eq!(a, b);
        let (pgm, _) = a.write_files(dir.path(), "img").unwrap();
        let text = std::fs::read_to_string(&pgm).unwrap();
        assert!(text.starts_with("P2\n# seed=5\n"));
        let back = ScanImage::read_files(&pgm).unwrap();
        assert_eq!(back, a);
    }
}
