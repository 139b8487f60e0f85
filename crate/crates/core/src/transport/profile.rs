use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::bca::IonOutcome;
use super::TargetMaterial;

/// Vacancies per depth bin produced on one sublattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublatticeHistogram {
    pub z: u32,
    pub counts: Vec<f64>,
}

/// Binned stop and damage distributions of an ion ensemble, with summary moments.
///
/// All histograms share `bin_width_nm` and start at depth 0. Ions that leave through
/// the surface count in the first depth bin but are excluded from the depth and
/// lateral moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantProfile {
    pub bin_width_nm: f64,
    /// Stopped ions per depth bin; sums to `n_ions`.
    pub depth_counts: Vec<u64>,
    /// Ions per bin of radial distance from the entry axis.
    pub lateral_counts: Vec<u64>,
    /// Vacancies per depth bin, summed over sublattices.
    pub vacancy_counts: Vec<f64>,
    pub sublattice_vacancies: Vec<SublatticeHistogram>,
    pub mean_depth_nm: f64,
    /// Standard deviation of the stop depth.
    pub longitudinal_straggle_nm: f64,
    /// Radial lateral straggle, √(var x + var y).
    pub lateral_straggle_nm: f64,
    /// Standard deviation of a single lateral coordinate, averaged over x and y.
    pub lateral_straggle_per_axis_nm: f64,
    pub mean_lateral_nm: [f64; 2],
    pub vacancies_per_ion: f64,
    pub n_ions: usize,
    pub n_backscattered: usize,
    pub seed: u64,
}

/// Compact summary written next to the profile CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub mean_depth_nm: f64,
    pub long_straggle_nm: f64,
    pub lat_straggle_nm: f64,
    pub lat_straggle_per_axis_nm: f64,
    pub vacancies_per_ion: f64,
    pub n_ions: usize,
    pub n_backscattered: usize,
    pub seed: u64,
}

impl ImplantProfile {
    /// Left edges of the depth bins, in nm.
    pub fn bin_edges_nm(&self) -> Vec<f64> {
        (0..=self.depth_counts.len()).map(|i| i as f64 * self.bin_width_nm).collect()
    }

    pub fn bin_centers_nm(&self) -> Vec<f64> {
        (0..self.depth_counts.len()).map(|i| (i as f64 + 0.5) * self.bin_width_nm).collect()
    }

    /// Vacancy histogram of the sublattice with atomic number `z`.
    pub fn sublattice(&self, z: u32) -> Option<&SublatticeHistogram> {
        self.sublattice_vacancies.iter().find(|h| h.z == z)
    }

    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            mean_depth_nm: self.mean_depth_nm,
            long_straggle_nm: self.longitudinal_straggle_nm,
            lat_straggle_nm: self.lateral_straggle_nm,
            lat_straggle_per_axis_nm: self.lateral_straggle_per_axis_nm,
            vacancies_per_ion: self.vacancies_per_ion,
            n_ions: self.n_ions,
            n_backscattered: self.n_backscattered,
            seed: self.seed,
        }
    }

    /// Writes `depth_nm,ion_count,vacancy_count` rows, one per depth bin, with the
    /// vacancy column taken from the sublattice `vacancy_z` (all sublattices if `None`).
    pub fn write_csv<W: Write>(&self, mut w: W, vacancy_z: Option<u32>) -> Result<()> {
        let vac: &[f64] = match vacancy_z {
            Some(z) => &self
                .sublattice(z)
                .ok_or_else(|| invalid(format!("profile has no sublattice with Z={z}")))?
                .counts,
            None => &self.vacancy_counts,
        };
        writeln!(w, "depth_nm,ion_count,vacancy_count")?;
        for (i, centre) in self.bin_centers_nm().iter().enumerate() {
            writeln!(w, "{},{},{}", centre, self.depth_counts[i], vac[i])?;
        }
        Ok(())
    }
}

/// Streaming sums for one chunk of ions; merged in a fixed order.
#[derive(Debug, Clone)]
pub(crate) struct ProfileAccumulator {
    bin_width: f64,
    depth: Vec<u64>,
    lateral: Vec<u64>,
    vacancies: Vec<Vec<f64>>,
    n: usize,
    n_back: usize,
    n_moment: usize,
    sum: [f64; 3],
    sum_sq: [f64; 3],
    total_vac: f64,
}

fn bump<T: Default + Clone + std::ops::AddAssign>(v: &mut Vec<T>, bin: usize, amount: T) {
    if v.len() <= bin {
        v.resize(bin + 1, T::default());
    }
    v[bin] += amount;
}

fn add_into<T: Default + Clone + Copy + std::ops::AddAssign>(dst: &mut Vec<T>, src: &[T]) {
    if dst.len() < src.len() {
        dst.resize(src.len(), T::default());
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl ProfileAccumulator {
    pub(crate) fn new(n_components: usize, bin_width: f64) -> Self {
        Self {
            bin_width,
            depth: Vec::new(),
            lateral: Vec::new(),
            vacancies: vec![Vec::new(); n_components],
            n: 0,
            n_back: 0,
            n_moment: 0,
            sum: [0.0; 3],
            sum_sq: [0.0; 3],
            total_vac: 0.0,
        }
    }

    fn bin(&self, x: f64) -> usize {
        (x.max(0.0) / self.bin_width) as usize
    }

    pub(crate) fn add_vacancy(&mut self, depth: f64, component: usize, amount: f64) {
        let b = self.bin(depth);
        bump(&mut self.vacancies[component], b, amount);
        self.total_vac += amount;
    }

    pub(crate) fn add_ion(&mut self, out: &IonOutcome) {
        self.n += 1;
        let [x, y, z] = out.stop;
        let b = self.bin(z);
        bump(&mut self.depth, b, 1);
        let r = (x * x + y * y).sqrt();
        let lb = self.bin(r);
        bump(&mut self.lateral, lb, 1);
        if out.backscattered {
            self.n_back += 1;
            return;
        }
        self.n_moment += 1;
        for (k, v) in out.stop.iter().enumerate() {
            self.sum[k] += v;
            self.sum_sq[k] += v * v;
        }
    }

    pub(crate) fn merge(&mut self, other: ProfileAccumulator) {
        add_into(&mut self.depth, &other.depth);
        add_into(&mut self.lateral, &other.lateral);
        for (d, s) in self.vacancies.iter_mut().zip(&other.vacancies) {
            add_into(d, s);
        }
        self.n += other.n;
        self.n_back += other.n_back;
        self.n_moment += other.n_moment;
        for k in 0..3 {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
        self.total_vac += other.total_vac;
    }

    pub(crate) fn finish(self, target: &TargetMaterial, seed: u64) -> ImplantProfile {
        let nbins = self
            .depth
            .len()
            .max(self.vacancies.iter().map(Vec::len).max().unwrap_or(0))
            .max(1);
        let mut depth = self.depth;
        depth.resize(nbins, 0);
        let mut lateral = self.lateral;
        if lateral.is_empty() {
            lateral.push(0);
        }
        let sublattice_vacancies: Vec<SublatticeHistogram> = self
            .vacancies
            .into_iter()
            .zip(target.components())
            .map(|(mut counts, c)| {
                counts.resize(nbins, 0.0);
                SublatticeHistogram { z: c.z, counts }
            })
            .collect();
        let mut vacancy_counts = vec![0.0; nbins];
        for h in &sublattice_vacancies {
            for (t, v) in vacancy_counts.iter_mut().zip(&h.counts) {
                *t += v;
            }
        }

        let m = self.n_moment as f64;
        let (mean, var) = if self.n_moment == 0 {
            ([0.0; 3], [0.0; 3])
        } else {
            let mut mean = [0.0; 3];
            let mut var = [0.0; 3];
            for k in 0..3 {
                mean[k] = self.sum[k] / m;
                var[k] = (self.sum_sq[k] / m - mean[k] * mean[k]).max(0.0);
            }
            (mean, var)
        };

        ImplantProfile {
            bin_width_nm: self.bin_width,
            depth_counts: depth,
            lateral_counts: lateral,
            vacancy_counts,
            sublattice_vacancies,
            mean_depth_nm: mean[2],
            longitudinal_straggle_nm: var[2].sqrt(),
            lateral_straggle_nm: (var[0] + var[1]).sqrt(),
            lateral_straggle_per_axis_nm: (0.5 * (var[0] + var[1])).sqrt(),
            mean_lateral_nm: [mean[0], mean[1]],
            vacancies_per_ion: if self.n == 0 { 0.0 } else { self.total_vac / self.n as f64 },
            n_ions: self.n,
            n_backscattered: self.n_back,
            seed,
        }
    }
}
