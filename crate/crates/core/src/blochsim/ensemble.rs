//! Monte Carlo propagation of a detuning ensemble through a timeline.
//!
//! Each trajectory carries a static offset drawn from the species'
//! inhomogeneous line plus a frequency random walk δω(t) with diffusion
//! constant D = 24/T_S³. Over a free-evolution interval of length `d` the
//! walk increment and its time integral are jointly Gaussian,
//!
//! ```text
//! ΔW ~ N(0, D·d),  ∫δω ~ N(0, D·d³/3),  cov = D·d²/2,
//! ```
//!
//! and both are drawn exactly, so the accumulated phase has no step-size
//! error. With this D the Hahn echo picks up a phase variance (2/3)·D·τ³ and
//! its amplitude decays as exp(-8τ³/T_S³).

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{apply_pulse, relax_only, BlochState, RelaxationParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqlang::{Channel, EventKind, Phase, Timeline};
use crate::spincore::{detuning, thermal_polarization, Environment, SpinSpecies};
use crate::trace::{AxisKind, SignalTrace};
use crate::trapdyn::{self, TrapParams};

/// Trajectory stream tag for the static-offset draw.
const STATIC_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub n_static: usize,
    pub n_noise: usize,
    /// Relative population of each line of the species, in the order of
    /// [`SpinSpecies::manifolds`]. Empty means "from the nuclear
    /// polarization".
    #[serde(default)]
    pub manifold_weights: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec { n_static: 256, n_noise: 16, manifold_weights: Vec::new(), rng_seed: 1 }
    }
}

impl EnsembleSpec {
    pub fn new(n_static: usize, n_noise: usize, rng_seed: u64) -> Self {
        EnsembleSpec { n_static, n_noise, manifold_weights: Vec::new(), rng_seed }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.manifold_weights = weights;
        self
    }

    pub fn validate(&self, species: &SpinSpecies) -> Result<()> {
        if self.n_static == 0 || self.n_noise == 0 {
            return Err(Error::invalid("ensemble", "n_static and n_noise must be >= 1"));
        }
        self.weights(species).map(|_| ())
    }

    /// Normalized manifold weights.
    pub fn weights(&self, species: &SpinSpecies) -> Result<Vec<f64>> {
        let n = species.manifolds().len();
        if self.manifold_weights.is_empty() {
            if n == 1 {
                return Ok(vec![1.0]);
            }
            // low-field line first; negative nuclear polarization favours
            // the high-field line
            let p = -species.nuclear_polarization;
            return Ok(vec![(1.0 - p) / 2.0, (1.0 + p) / 2.0]);
        }
        if self.manifold_weights.len() != n {
            return Err(Error::invalid("manifold_weights", format!("expected {n} weights for species '{}'", species.label)));
        }
        if self.manifold_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("manifold_weights", "weights must be non-negative"));
        }
        let sum: f64 = self.manifold_weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::invalid("manifold_weights", "weights must not all be zero"));
        }
        Ok(self.manifold_weights.iter().map(|w| w / sum).collect())
    }
}

/// One acquisition of one timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquired {
    pub time: f64,
    pub channel: Channel,
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineResult {
    pub acquisitions: Vec<Acquired>,
    pub equilibrium_mz: f64,
}

impl TimelineResult {
    /// Acquisitions against sequence time.
    pub fn trace(&self) -> Result<SignalTrace> {
        let x = self.acquisitions.iter().map(|a| a.time).collect();
        let y = self.acquisitions.iter().map(|a| a.value).collect();
        SignalTrace::new(AxisKind::Time, x, y, "mixed")
    }
}

/// First and second moments of (mx, my, mz) at one acquisition.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    s: [f64; 3],
    // xx, yy, zz, xy
    q: [f64; 4],
}

impl Moments {
    fn add(&mut self, m: &BlochState) {
        self.s[0] += m.mx;
        self.s[1] += m.my;
        self.s[2] += m.mz;
        self.q[0] += m.mx * m.mx;
        self.q[1] += m.my * m.my;
        self.q[2] += m.mz * m.mz;
        self.q[3] += m.mx * m.my;
    }

    fn merge(&mut self, o: &Moments) {
        for i in 0..3 {
            self.s[i] += o.s[i];
        }
        for i in 0..4 {
            self.q[i] += o.q[i];
        }
    }
}

struct Propagation<'a> {
    timeline: &'a Timeline,
    relax: &'a RelaxationParams,
    m_eq: f64,
    diffusion: f64,
}

impl Propagation<'_> {
    fn run(&self, static_offset: f64, rng: &mut rng::TrajectoryRng, out: &mut [Moments]) {
        let mut m = BlochState::new(0.0, 0.0, self.m_eq);
        let mut walk = 0.0_f64;
        let mut k = 0;
        for event in &self.timeline.events {
            match event.kind {
                EventKind::Pulse { angle, phase, duration } => {
                    let rate = if duration > 0.0 { angle / duration } else { 0.0 };
                    m = if duration > 0.0 {
                        apply_pulse(m, rate, phase.angle(), duration, static_offset + walk)
                    } else {
                        // zero-length limit: an instantaneous rotation
                        m.rotated([phase.angle().cos(), phase.angle().sin(), 0.0], angle)
                    };
                }
                EventKind::FreeEvolution { duration } => {
                    self.free(&mut m, &mut walk, static_offset, duration, rng);
                }
                EventKind::Acquisition { window, .. } => {
                    out[k].add(&m);
                    k += 1;
                    if window > 0.0 {
                        self.free(&mut m, &mut walk, static_offset, window, rng);
                    }
                }
            }
        }
    }

    fn free(&self, m: &mut BlochState, walk: &mut f64, offset: f64, d: f64, rng: &mut rng::TrajectoryRng) {
        let mut phase = (offset + *walk) * d;
        if self.diffusion > 0.0 {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let sd = self.diffusion.sqrt();
            let d32 = d * d.sqrt();
            phase += sd * d32 * (0.5 * z1 + z2 / (2.0 * 3f64.sqrt()));
            *walk += sd * d.sqrt() * z1;
        }
        *m = relax_only(m.precessed(phase), d, self.relax, self.m_eq);
    }
}

/// Noise-free, relaxation-free, exactly resonant spin starting along +z.
/// Its transverse direction at each acquisition is the detection phase
/// for the signed echo channel.
fn reference_axes(timeline: &Timeline) -> Vec<Option<[f64; 2]>> {
    let free = RelaxationParams { t1: f64::INFINITY, t2: f64::INFINITY, t_s: f64::INFINITY };
    let prop = Propagation { timeline, relax: &free, m_eq: 1.0, diffusion: 0.0 };
    let n_acq = timeline.acquisitions().count();
    let mut acc = vec![Moments::default(); n_acq];
    let mut dummy = rng::stream(0, &[]);
    prop.run(0.0, &mut dummy, &mut acc);
    acc.iter()
        .map(|mo| {
            let r = mo.s[0].hypot(mo.s[1]);
            (r > 1e-6).then(|| [mo.s[0] / r, mo.s[1] / r])
        })
        .collect()
}

/// Propagates the ensemble through `timeline` and reports every acquisition.
///
/// * `mz`: ensemble-averaged longitudinal magnetization.
/// * `echo`: ensemble-averaged transverse magnetization projected on the
///   detection phase of an ideal resonant spin, relative to the
///   equilibrium polarization (signed, so inversion recovery changes sign).
/// * `charge`: boxcar charge of the capture/reemission transient driven by
///   the flip fraction at the acquisition; needs `trap`.
///
/// Trajectories run in parallel on the current rayon pool; each static
/// sample reduces its noise trajectories in index order and the samples are
/// then summed in index order, so results do not depend on the pool size.
pub fn run_timeline(
    timeline: &Timeline,
    env: &Environment,
    species: &SpinSpecies,
    relax: &RelaxationParams,
    ensemble: &EnsembleSpec,
    trap: Option<&TrapParams>,
) -> Result<TimelineResult> {
    env.validate()?;
    species.validate()?;
    relax.validate()?;
    ensemble.validate(species)?;
    let weights = ensemble.weights(species)?;

    let acq: Vec<(f64, Channel, f64)> = timeline
        .acquisitions()
        .map(|(_, e)| match e.kind {
            EventKind::Acquisition { channel, window } => (e.start, channel, window),
            _ => unreachable!(),
        })
        .collect();
    let unit_charge = if acq.iter().any(|a| a.1 == Channel::Charge) {
        let trap = trap.ok_or_else(|| Error::Usage("charge acquisition requires trap parameters".into()))?;
        trap.validate()?;
        Some(trapdyn::unit_charge(trap))
    } else {
        None
    };

    let m_eq = thermal_polarization(species.g_factor, env.static_field_b0, env.temperature)?;
    let prop = Propagation { timeline, relax, m_eq, diffusion: relax.diffusion_constant() };
    let sigma = species.linewidth_rad_per_s();
    let manifolds = species.manifolds();
    let n_acq = acq.len();
    let n_traj = (ensemble.n_static * ensemble.n_noise) as f64;

    // weighted mixture of per-manifold means; covariance of the mean
    let mut var_of_mean = vec![[0.0_f64; 4]; n_acq];
    let mut means = vec![[0.0_f64; 3]; n_acq];

    for (mi, (&m_i, &w)) in manifolds.iter().zip(&weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let center = detuning(species, env, m_i)?;
        let partials: Vec<Vec<Moments>> = (0..ensemble.n_static)
            .into_par_iter()
            .map(|si| {
                let mut acc = vec![Moments::default(); n_acq];
                let z: f64 = StandardNormal.sample(&mut rng::stream(ensemble.rng_seed, &[mi as u64, si as u64, STATIC_STREAM]));
                let offset = center + sigma * z;
                for ni in 0..ensemble.n_noise {
                    let mut r = rng::stream(ensemble.rng_seed, &[mi as u64, si as u64, ni as u64]);
                    prop.run(offset, &mut r, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = vec![Moments::default(); n_acq];
        for p in &partials {
            for (t, m) in total.iter_mut().zip(p) {
                t.merge(m);
            }
        }
        for (k, t) in total.iter().enumerate() {
            let mu = [t.s[0] / n_traj, t.s[1] / n_traj, t.s[2] / n_traj];
            let cov = [
                t.q[0] / n_traj - mu[0] * mu[0],
                t.q[1] / n_traj - mu[1] * mu[1],
                t.q[2] / n_traj - mu[2] * mu[2],
                t.q[3] / n_traj - mu[0] * mu[1],
            ];
            for i in 0..3 {
                means[k][i] += w * mu[i];
            }
            for i in 0..4 {
                var_of_mean[k][i] += w * w * cov[i] / n_traj;
            }
        }
    }

    let refs = reference_axes(timeline);
    let norm = if m_eq != 0.0 { m_eq.abs() } else { 1.0 };
    let acquisitions = acq
        .iter()
        .enumerate()
        .map(|(k, &(time, channel, _))| {
            let mu = means[k];
            let v = var_of_mean[k];
            let (value, std_err) = match channel {
                Channel::Mz => (mu[2], v[2].max(0.0).sqrt()),
                Channel::Echo => {
                    let axis = refs[k].or_else(|| {
                        let r = mu[0].hypot(mu[1]);
                        (r > 0.0).then(|| [mu[0] / r, mu[1] / r])
                    });
                    match axis {
                        Some([ux, uy]) => {
                            let proj = mu[0] * ux + mu[1] * uy;
                            let var = ux * ux * v[0] + uy * uy * v[1] + 2.0 * ux * uy * v[3];
                            (proj / norm, var.max(0.0).sqrt() / norm)
                        }
                        None => (0.0, v[0].max(v[1]).max(0.0).sqrt() / norm),
                    }
                }
                Channel::Charge => {
                    let q = unit_charge.expect("checked above");
                    let flip = trapdyn::flip_fraction_from_state(mu[2], m_eq);
                    (q * flip, q.abs() * v[2].max(0.0).sqrt() / 2.0)
                }
            };
            Acquired { time, channel, value, std_err }
        })
        .collect();

    Ok(TimelineResult { acquisitions, equilibrium_mz: m_eq })
}

/// Transient nutation: ensemble mz after a single `+x` pulse at the
/// environment's Rabi frequency, for each pulse length.
pub fn nutation_curve(
    pulse_durations: &[f64],
    env: &Environment,
    species: &SpinSpecies,
    relax: &RelaxationParams,
    ensemble: &EnsembleSpec,
) -> Result<SignalTrace> {
    if pulse_durations.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::Domain("pulse durations must be >= 0".into()));
    }
    let rate = env.rabi_rate();
    let y = pulse_durations
        .iter()
        .map(|&d| {
            let tl = single_pulse_timeline(rate * d, Phase::PlusX, d, Channel::Mz);
            run_timeline(&tl, env, species, relax, ensemble, None).map(|r| r.acquisitions[0].value)
        })
        .collect::<Result<Vec<_>>>()?;
    SignalTrace::new(AxisKind::PulseDuration, pulse_durations.to_vec(), y, "dimensionless")
}

/// `pulse; acquire` with no free evolution.
pub fn single_pulse_timeline(angle: f64, phase: Phase, duration: f64, channel: Channel) -> Timeline {
    use crate::seqlang::Event;
    Timeline {
        events: vec![
            Event { start: 0.0, kind: EventKind::Pulse { angle, phase, duration } },
            Event { start: duration, kind: EventKind::Acquisition { channel, window: 0.0 } },
        ],
        total_duration: duration,
        sweep_index: None,
    }
}
