use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::SeedPath;

use super::emitter::{EmitterRates, InterArrivalSampler};
use super::EmitterModel;

/// Timestamps (ns, ascending) recorded on the two detectors of an HBT setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonTrace {
    pub detector1: Vec<f64>,
    pub detector2: Vec<f64>,
    pub duration_s: f64,
    pub signal_kcps: f64,
    pub background_kcps: f64,
}

impl PhotonTrace {
    pub fn duration_ns(&self) -> f64 {
        self.duration_s * 1e9
    }

    /// Total detected rate over both detectors, kcps.
    pub fn measured_rate_kcps(&self) -> f64 {
        (self.detector1.len() + self.detector2.len()) as f64 / self.duration_s / 1e3
    }

    /// Writes `detector,timestamp_ns` rows in time order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "detector,timestamp_ns")?;
        let (mut i, mut j) = (0, 0);
        while i < self.detector1.len() || j < self.detector2.len() {
            let take1 = j >= self.detector2.len() || (i < self.detector1.len() && self.detector1[i] <= self.detector2[j]);
            if take1 {
                writeln!(w, "1,{}", self.detector1[i])?;
                i += 1;
            } else {
                writeln!(w, "2,{}", self.detector2[j])?;
                j += 1;
            }
        }
        Ok(())
    }

    /// Reads `detector,timestamp_ns` rows; rates are left at zero.
    pub fn read_csv<R: BufRead>(r: R, duration_s: f64) -> Result<Self> {
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("detector")) {
                continue;
            }
            let mut parts = line.split(',');
            let det = parts.next().unwrap_or("").trim();
            let t: f64 = parts
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: missing timestamp", n + 1)))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            match det {
                "1" => d1.push(t),
                "2" => d2.push(t),
                other => return Err(Error::Parse(format!("line {}: unknown detector {other:?}", n + 1))),
            }
        }
        d1.sort_by(f64::total_cmp);
        d2.sort_by(f64::total_cmp);
        Ok(Self {
            detector1: d1,
            detector2: d2,
            duration_s,
            signal_kcps: 0.0,
            background_kcps: 0.0,
        })
    }
}

fn poisson_stream<R: Rng>(rng: &mut R, rate_per_ns: f64, duration_ns: f64, out: &mut Vec<f64>) {
    if !(rate_per_ns > 0.0) {
        return;
    }
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.random::<f64>()).ln() / rate_per_ns;
        if t >= duration_ns {
            break;
        }
        out.push(t);
    }
}

fn renewal_stream<R: Rng>(rng: &mut R, sampler: &InterArrivalSampler, duration_ns: f64, out: &mut Vec<f64>) {
    // start well before t = 0 so the recorded stream is stationary
    let mut t = -50.0 * sampler.mean_ns();
    loop {
        t += sampler.sample(rng);
        if t >= duration_ns {
            break;
        }
        if t >= 0.0 {
            out.push(t);
        }
    }
}

/// Splits a time-ordered stream onto two detectors with a fair coin per photon.
fn route<R: Rng>(rng: &mut R, times: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(times.len() / 2 + 1);
    let mut b = Vec::with_capacity(times.len() / 2 + 1);
    for t in times {
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    (a, b)
}

fn merge_sorted(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut all: Vec<f64> = parts.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    all
}

/// Simulates `n_emitters` independent emitters, each detected at `signal_kcps`, plus
/// Poissonian background at `background_kcps`, behind a 50:50 beam splitter.
///
/// Emitter `j` uses the streams below `photon/emitter/<j>` and background uses
/// `photon/background`, so the trace is independent of scheduling.
pub fn simulate_photon_trace(
    n_emitters: usize,
    signal_kcps: f64,
    background_kcps: f64,
    emitter: &EmitterModel,
    duration_s: f64,
    seed: u64,
) -> Result<PhotonTrace> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(domain(format!("duration must be positive, got {duration_s} s")));
    }
    if !(signal_kcps >= 0.0) || !(background_kcps >= 0.0) {
        return Err(domain("signal and background rates must be ≥ 0"));
    }
    let duration_ns = duration_s * 1e9;
    let root = SeedPath::root(seed).child("photon");

    // share of each emitter's counts carried by the three-level process
    let rho_sq = 1.0 + emitter.a() - emitter.b();
    if !(rho_sq > 0.0 && rho_sq <= 1.0) {
        return Err(domain(format!(
            "g² shape with b − a = {} cannot be produced by a single emitter",
            emitter.b() - emitter.a()
        )));
    }
    let rho = rho_sq.sqrt();
    let correlated_rate = rho * signal_kcps * 1e-6;
    let uncorrelated_rate = (1.0 - rho) * signal_kcps * 1e-6;
    let sampler = if n_emitters > 0 && correlated_rate > 0.0 {
        let rates = EmitterRates::from_correlation(emitter.b() / rho_sq, emitter.tau1_ns(), emitter.tau2_ns())?;
        Some(InterArrivalSampler::new(rates, correlated_rate)?)
    } else {
        None
    };

    let mut streams: Vec<(Vec<f64>, Vec<f64>)> = (0..n_emitters)
        .into_par_iter()
        .map(|j| {
            let node = root.child("emitter").child(j);
            let mut times = Vec::new();
            if let Some(s) = &sampler {
                renewal_stream(&mut node.child("correlated").rng(), s, duration_ns, &mut times);
            }
            let mut extra = Vec::new();
            poisson_stream(&mut node.child("uncorrelated").rng(), uncorrelated_rate, duration_ns, &mut extra);
            let times = merge_sorted(vec![times, extra]);
            route(&mut node.child("route").rng(), times)
        })
        .collect();
    let bg = root.child("background");
    let mut bg_times = Vec::new();
    poisson_stream(&mut bg.child("arrivals").rng(), background_kcps * 1e-6, duration_ns, &mut bg_times);
    streams.push(route(&mut bg.child("route").rng(), bg_times));

    let (d1, d2): (Vec<_>, Vec<_>) = streams.into_iter().unzip();
    Ok(PhotonTrace {
        detector1: merge_sorted(d1),
        detector2: merge_sorted(d2),
        duration_s,
        signal_kcps: signal_kcps * n_emitters as f64,
        background_kcps,
    })
}
