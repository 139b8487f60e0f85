use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SeedPath;

use super::kinematics::vacancies_from_recoil;
use super::potential::{CollisionPair, Projectile};
use super::profile::{ImplantProfile, ProfileAccumulator};
use super::stopping::StoppingCoefficient;
use super::{IonBeamSpec, TargetMaterial};

/// Histories end once the ion's kinetic energy drops below this value.
pub const ION_CUTOFF_EV: f64 = 5.0;

/// Ions per reduction chunk. Fixed so the summation order never depends on the thread pool.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub position_nm: [f64; 3],
    /// Ion energy just before the collision.
    pub energy_ev: f64,
    pub transfer_ev: f64,
    /// Index into the target's component list.
    pub partner: usize,
    pub vacancies: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonHistory {
    pub collisions: Vec<Collision>,
    /// (x, y, depth); depth is clamped to 0 for ions leaving through the surface.
    pub stop_position_nm: [f64; 3],
    pub initial_energy_ev: f64,
    pub final_energy_ev: f64,
    pub electronic_loss_ev: f64,
    pub nuclear_loss_ev: f64,
    /// Kinchin–Pease vacancies per target component (sublattice).
    pub vacancies: Vec<f64>,
    pub backscattered: bool,
}

impl IonHistory {
    pub fn stop_depth_nm(&self) -> f64 {
        self.stop_position_nm[2]
    }

    /// Relative mismatch between the initial energy and nuclear + electronic + residual.
    pub fn energy_balance_error(&self) -> f64 {
        let spent = self.nuclear_loss_ev + self.electronic_loss_ev + self.final_energy_ev;
        (spent - self.initial_energy_ev).abs() / self.initial_energy_ev
    }
}

/// Receives every collision of a history as it happens.
pub(crate) trait CollisionSink {
    fn collision(&mut self, c: &Collision);
}

impl CollisionSink for Vec<Collision> {
    fn collision(&mut self, c: &Collision) {
        self.push(c.clone());
    }
}

/// Minimal per-ion outcome, without the collision list.
#[derive(Debug, Clone)]
pub(crate) struct IonOutcome {
    pub stop: [f64; 3],
    pub final_energy_ev: f64,
    pub electronic_loss_ev: f64,
    pub nuclear_loss_ev: f64,
    pub vacancies: Vec<f64>,
    pub backscattered: bool,
}

/// Static per-run quantities shared by all histories.
pub(crate) struct Transport<'a> {
    target: &'a TargetMaterial,
    energy_ev: f64,
    direction: [f64; 3],
    pairs: Vec<CollisionPair>,
    cumulative_fraction: Vec<f64>,
    stopping: StoppingCoefficient,
    flight_path: f64,
    max_impact: f64,
}

impl<'a> Transport<'a> {
    pub(crate) fn new(beam: &IonBeamSpec, target: &'a TargetMaterial) -> Self {
        let projectile = Projectile {
            z: beam.ion_z(),
            mass_amu: beam.ion_mass_amu(),
        };
        let mut acc = 0.0;
        let cumulative_fraction = target
            .components()
            .iter()
            .map(|c| {
                acc += c.fraction;
                acc
            })
            .collect();
        let theta = beam.incidence_deg().to_radians();
        Self {
            target,
            energy_ev: beam.energy_kev() * 1e3,
            direction: [theta.sin(), 0.0, theta.cos()],
            pairs: target.components().iter().map(|c| CollisionPair::new(projectile, c)).collect(),
            cumulative_fraction,
            stopping: StoppingCoefficient::new(beam.ion_z(), beam.ion_mass_amu(), target),
            flight_path: target.mean_free_path(),
            max_impact: target.max_impact_parameter(),
        }
    }

    fn pick_partner<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative_fraction[self.cumulative_fraction.len() - 1];
        self.cumulative_fraction
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative_fraction.len() - 1)
    }

    fn electronic_loss<R: Rng>(&self, energy: f64, rng: &mut R) -> f64 {
        let mean = self.stopping.stopping(energy) * self.flight_path;
        let var = self.stopping.straggling_variance(energy, self.flight_path);
        if !(mean > 0.0) || !(var > 0.0) {
            return mean.max(0.0);
        }
        match Gamma::new(mean * mean / var, var / mean) {
            Ok(g) => g.sample(rng),
            Err(_) => mean,
        }
    }

    pub(crate) fn run<R: Rng, S: CollisionSink>(&self, rng: &mut R, sink: &mut S) -> IonOutcome {
        let n_comp = self.target.components().len();
        let mut out = IonOutcome {
            stop: [0.0; 3],
            final_energy_ev: self.energy_ev,
            electronic_loss_ev: 0.0,
            nuclear_loss_ev: 0.0,
            vacancies: vec![0.0; n_comp],
            backscattered: false,
        };
        let mut energy = self.energy_ev;
        if energy < ION_CUTOFF_EV {
            return out;
        }
        let mut pos = [0.0f64; 3];
        let mut dir = self.direction;

        loop {
            // free flight; electronic loss drawn from a gamma law whose mean and variance
            // are the stopping and straggling at the segment start
            let de = self.electronic_loss(energy, rng).min(energy);
            energy -= de;
            out.electronic_loss_ev += de;
            for k in 0..3 {
                pos[k] += dir[k] * self.flight_path;
            }
            if pos[2] < 0.0 {
                // left through the surface: stop at the exit point
                let back = pos[2] / dir[2];
                pos[0] -= dir[0] * back;
                pos[1] -= dir[1] * back;
                pos[2] = 0.0;
                out.backscattered = true;
                break;
            }
            if energy < ION_CUTOFF_EV {
                break;
            }

            let partner = self.pick_partner(rng);
            let impact = self.max_impact * rng.random::<f64>().sqrt();
            let azimuth = std::f64::consts::TAU * rng.random::<f64>();
            let scatter = self.pairs[partner].scatter(energy, impact);
            let transfer = scatter.transfer_ev.min(energy);
            let vac = vacancies_from_recoil(transfer, self.target.components()[partner].displacement_energy_ev);
            sink.collision(&Collision {
                position_nm: pos,
                energy_ev: energy,
                transfer_ev: transfer,
                partner,
                vacancies: vac,
            });
            energy -= transfer;
            out.nuclear_loss_ev += transfer;
            out.vacancies[partner] += vac;
            dir = rotate(dir, scatter.lab_angle, azimuth);
            if energy < ION_CUTOFF_EV {
                break;
            }
        }
        out.stop = pos;
        out.final_energy_ev = energy;
        out
    }
}

/// Rotates unit vector `d` by polar angle `psi` about itself, at azimuth `phi`.
fn rotate(d: [f64; 3], psi: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = psi.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let [u, v, w] = d;
    let new = if 1.0 - w.abs() < 1e-10 {
        [st * cp, st * sp, ct * w.signum()]
    } else {
        let s = (1.0 - w * w).sqrt();
        [
            st * (u * w * cp - v * sp) / s + u * ct,
            st * (v * w * cp + u * sp) / s + v * ct,
            -st * cp * s + w * ct,
        ]
    };
    let norm = (new[0] * new[0] + new[1] * new[1] + new[2] * new[2]).sqrt();
    [new[0] / norm, new[1] / norm, new[2] / norm]
}

/// One ion history, with its full collision list. Deterministic in `seed`.
pub fn simulate_ion(beam: &IonBeamSpec, target: &TargetMaterial, seed: u64) -> IonHistory {
    let transport = Transport::new(beam, target);
    let mut rng = SeedPath::root(seed).rng();
    let mut collisions = Vec::new();
    let out = transport.run(&mut rng, &mut collisions);
    IonHistory {
        collisions,
        stop_position_nm: out.stop,
        initial_energy_ev: transport.energy_ev,
        final_energy_ev: out.final_energy_ev,
        electronic_loss_ev: out.electronic_loss_ev,
        nuclear_loss_ev: out.nuclear_loss_ev,
        vacancies: out.vacancies,
        backscattered: out.backscattered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub bin_width_nm: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { bin_width_nm: 5.0 }
    }
}

/// Records only the depth of vacancy-producing collisions.
struct VacancySink<'a> {
    acc: &'a mut ProfileAccumulator,
}

impl CollisionSink for VacancySink<'_> {
    fn collision(&mut self, c: &Collision) {
        if c.vacancies > 0.0 {
            self.acc.add_vacancy(c.position_nm[2], c.partner, c.vacancies);
        }
    }
}

/// Aggregates `n_ions` independent histories.
///
/// Ion `i` draws from the stream `transport/ion/<i>` under `seed`, and histories are
/// reduced in fixed-size chunks in index order, so the profile is bit-identical for
/// any thread count.
pub fn simulate_profile(
    beam: &IonBeamSpec,
    target: &TargetMaterial,
    n_ions: usize,
    seed: u64,
    options: ProfileOptions,
) -> Result<ImplantProfile> {
    if n_ions == 0 {
        return Err(invalid("simulate_profile needs at least one ion"));
    }
    if !(options.bin_width_nm > 0.0) {
        return Err(invalid("histogram bin width must be positive"));
    }
    let transport = Transport::new(beam, target);
    let root = SeedPath::root(seed).child("transport").child("ion");
    let n_comp = target.components().len();

    let chunks: Vec<ProfileAccumulator> = (0..n_ions.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = ProfileAccumulator::new(n_comp, options.bin_width_nm);
            let start = chunk * CHUNK;
            for i in start..(start + CHUNK).min(n_ions) {
                let mut rng = root.child(i).rng();
                let out = transport.run(&mut rng, &mut VacancySink { acc: &mut acc });
                acc.add_ion(&out);
            }
            acc
        })
        .collect();

    let mut total = ProfileAccumulator::new(n_comp, options.bin_width_nm);
    for c in chunks {
        total.merge(c);
    }
    Ok(total.finish(target, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn he30() -> IonBeamSpec {
        IonBeamSpec::helium(30.0).unwrap()
    }

    #[test]
    fn below_cutoff_does_nothing() {
        let beam = IonBeamSpec::helium(ION_CUTOFF_EV * 0.5e-3).unwrap();
        let h = simulate_ion(&beam, &TargetMaterial::silicon_carbide(), 1);
        assert!(h.collisions.is_empty());
        assert_eq!(h.stop_depth_nm(), 0.0);
    }

    #[test]
    fn same_seed_same_history() {
        let sic = TargetMaterial::silicon_carbide();
        let a = simulate_ion(&he30(), &sic, 42);
        let b = simulate_ion(&he30(), &sic, 42);
        assert_eq!(a, b);
        let c = simulate_ion(&he30(), &sic, 43);
        assert_ne!(a.stop_position_nm, c.stop_position_nm);
    }

    #[test]
    fn history_invariants() {
        let sic = TargetMaterial::silicon_carbide();
        for seed in 0..20 {
            let h = simulate_ion(&he30(), &sic, seed);
            assert!(h.stop_depth_nm() >= 0.0 && h.stop_depth_nm() <= 600.0, "{}", h.stop_depth_nm());
            assert!(h.energy_balance_error() < 1e-3);
            for w in h.collisions.windows(2) {
                assert!(w[1].energy_ev < w[0].energy_ev);
            }
            assert!(h.final_energy_ev < ION_CUTOFF_EV || h.backscattered);
        }
    }

    #[test]
    fn rotation_preserves_norm_and_angle() {
        let d = [0.3f64, -0.4, (1.0f64 - 0.25).sqrt()];
        let r = rotate(d, 0.7, 1.9);
        let dot: f64 = d.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        assert!((dot - 0.7f64.cos()).abs() < 1e-12);
        let norm: f64 = r.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_ion_profile_has_zero_straggle() {
        let sic = TargetMaterial::silicon_carbide();
        let p = simulate_profile(&he30(), &sic, 1, 5, ProfileOptions::default()).unwrap();
        assert_eq!(p.n_ions, 1);
        assert_eq!(p.longitudinal_straggle_nm, 0.0);
        assert_eq!(p.lateral_straggle_nm, 0.0);
        assert_eq!(p.depth_counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn rejects_zero_ions() {
        let sic = TargetMaterial::silicon_carbide();
        assert!(simulate_profile(&he30(), &sic, 0, 5, ProfileOptions::default()).is_err());
    }
}
