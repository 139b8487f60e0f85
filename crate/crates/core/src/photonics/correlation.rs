use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::rng::SeedPath;

use super::trace::{simulate_photon_trace, PhotonTrace};
use super::EmitterModel;

/// Binned detector-1 → detector-2 delay histogram.
///
/// Bins have width `bin_width_ns` and span [−n·w, n·w) with n = `n_side`, so zero
/// delay sits on the edge between the two central bins. `expected` holds the
/// coincidences per bin that uncorrelated streams with the same rates would produce;
/// C_N = counts / expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ns: f64,
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
}

impl CorrelationHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    fn n_side(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn edges_ns(&self) -> Vec<f64> {
        let n = self.n_side() as f64;
        (0..=self.counts.len()).map(|i| (i as f64 - n) * self.bin_width_ns).collect()
    }

    pub fn centers_ns(&self) -> Vec<f64> {
        let n = self.n_side() as f64;
        (0..self.counts.len()).map(|i| (i as f64 - n + 0.5) * self.bin_width_ns).collect()
    }

    /// Normalised correlation C_N per bin.
    pub fn c_n(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.expected)
            .map(|(&c, &e)| if e > 0.0 { c as f64 / e } else { 0.0 })
            .collect()
    }

    /// Poisson standard error of C_N per bin (at least one count's worth).
    pub fn c_n_sigma(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.expected)
            .map(|(&c, &e)| if e > 0.0 { (c.max(1) as f64).sqrt() / e } else { f64::INFINITY })
            .collect()
    }

    /// Adds another acquisition with identical binning.
    pub fn merge(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if other.counts.len() != self.counts.len() || (other.bin_width_ns - self.bin_width_ns).abs() > 1e-9 * self.bin_width_ns {
            return Err(invalid("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.expected.iter_mut().zip(&other.expected) {
            *a += b;
        }
        Ok(())
    }

    /// Writes `tau_ns,counts,c_n` rows at the bin centres.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau_ns,counts,c_n")?;
        for ((t, c), n) in self.centers_ns().iter().zip(&self.counts).zip(self.c_n()) {
            writeln!(w, "{t},{c},{n}")?;
        }
        Ok(())
    }

    /// Reads `tau_ns,counts,c_n` rows written by [`CorrelationHistogram::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut taus = Vec::new();
        let mut counts = Vec::new();
        let mut cn = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("tau")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 3 {
                return Err(Error::Parse(format!("line {}: expected tau_ns,counts,c_n", n + 1)));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)));
            taus.push(parse(cols[0])?);
            let c = parse(cols[1])?;
            if !(c >= 0.0) || c.fract() != 0.0 {
                return Err(Error::Parse(format!("line {}: counts must be a non-negative integer", n + 1)));
            }
            counts.push(c as u64);
            cn.push(parse(cols[2])?);
        }
        if taus.len() < 2 || taus.len() % 2 != 0 {
            return Err(Error::Parse("histogram needs an even number (≥ 2) of bins".into()));
        }
        let width = (taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64;
        if !(width > 0.0) {
            return Err(Error::Parse("bin centres must increase".into()));
        }
        let known: Vec<f64> = counts
            .iter()
            .zip(&cn)
            .filter(|(&c, &n)| c > 0 && n > 0.0)
            .map(|(&c, &n)| c as f64 / n)
            .collect();
        let fallback = if known.is_empty() { 1.0 } else { known.iter().sum::<f64>() / known.len() as f64 };
        let expected = counts
            .iter()
            .zip(&cn)
            .map(|(&c, &n)| if c > 0 && n > 0.0 { c as f64 / n } else { fallback })
            .collect();
        Ok(Self {
            bin_width_ns: width,
            counts,
            expected,
        })
    }
}

/// Start-stop-free cross-correlation of detector 1 against detector 2.
///
/// Every pair with delay τ = t₂ − t₁ in [−L, L) is counted, L = round(max_lag/w)·w.
/// Normalisation uses n₁n₂w(T − |τ|)/T², the expectation for uncorrelated streams
/// including the finite-window overlap, so C_N → 1 away from zero delay.
pub fn correlate(trace: &PhotonTrace, bin_width_ns: f64, max_lag_ns: f64) -> Result<CorrelationHistogram> {
    if !(bin_width_ns > 0.0) {
        return Err(domain(format!("bin width must be positive, got {bin_width_ns} ns")));
    }
    if !(max_lag_ns >= bin_width_ns) {
        return Err(domain(format!("max lag {max_lag_ns} ns is shorter than one bin")));
    }
    if trace.detector1.is_empty() || trace.detector2.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n_side = (max_lag_ns / bin_width_ns).round().max(1.0) as usize;
    let lag = n_side as f64 * bin_width_ns;
    let mut counts = vec![0u64; 2 * n_side];
    let d2 = &trace.detector2;
    let mut lo = 0;
    for &t1 in &trace.detector1 {
        while lo < d2.len() && d2[lo] < t1 - lag {
            lo += 1;
        }
        let mut j = lo;
        while j < d2.len() && d2[j] < t1 + lag {
            let bin = ((d2[j] - t1 + lag) / bin_width_ns).floor() as usize;
            if bin < counts.len() {
                counts[bin] += 1;
            }
            j += 1;
        }
    }
    let total = trace.duration_ns();
    let rate = trace.detector1.len() as f64 * trace.detector2.len() as f64 * bin_width_ns / (total * total);
    let expected = (0..2 * n_side)
        .map(|i| {
            let centre = (i as f64 - n_side as f64 + 0.5) * bin_width_ns;
            rate * (total - centre.abs()).max(0.0)
        })
        .collect();
    Ok(CorrelationHistogram {
        bin_width_ns,
        counts,
        expected,
    })
}

/// Settings for a segmented HBT acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtAcquisition {
    pub n_emitters: usize,
    pub signal_kcps: f64,
    pub background_kcps: f64,
    pub segment_s: f64,
    pub n_segments: usize,
    pub bin_width_ns: f64,
    pub max_lag_ns: f64,
}

/// Simulates `n_segments` traces (seed paths `segment/<i>`) and sums their histograms.
///
/// Long acquisitions are built from segments to bound memory, like a real
/// experiment that accumulates repeated runs.
pub fn acquire_histogram(acq: &HbtAcquisition, emitter: &EmitterModel, seed: u64) -> Result<CorrelationHistogram> {
    if acq.n_segments == 0 {
        return Err(invalid("acquisition needs at least one segment"));
    }
    let root = SeedPath::root(seed).child("segment");
    let mut total: Option<CorrelationHistogram> = None;
    for i in 0..acq.n_segments {
        let trace = simulate_photon_trace(
            acq.n_emitters,
            acq.signal_kcps,
            acq.background_kcps,
            emitter,
            acq.segment_s,
            root.child(i).seed(),
        )?;
        let h = correlate(&trace, acq.bin_width_ns, acq.max_lag_ns)?;
        match total.as_mut() {
            Some(t) => t.merge(&h)?,
            None => total = Some(h),
        }
    }
    Ok(total.expect("at least one segment"))
}
