//! Classical Bloch-vector dynamics in the rotating frame.
//!
//! Rotations are right handed: a `+x` π/2 pulse takes `+z` to `-y`, and
//! free precession with positive detuning takes `+x` towards `+y`.
//! Relaxation is suspended while a pulse is on.

mod ensemble;

pub use ensemble::{nutation_curve, run_timeline, single_pulse_timeline, Acquired, EnsembleSpec, TimelineResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AxisKind, SignalTrace};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BlochState {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl BlochState {
    pub const fn new(mx: f64, my: f64, mz: f64) -> Self {
        BlochState { mx, my, mz }
    }

    pub fn norm(&self) -> f64 {
        (self.mx * self.mx + self.my * self.my + self.mz * self.mz).sqrt()
    }

    pub fn transverse(&self) -> f64 {
        self.mx.hypot(self.my)
    }

    /// Rodrigues rotation by `angle` about the unit vector `axis`.
    pub fn rotated(&self, axis: [f64; 3], angle: f64) -> Self {
        let [nx, ny, nz] = axis;
        let (s, c) = angle.sin_cos();
        let dot = nx * self.mx + ny * self.my + nz * self.mz;
        let cross = [ny * self.mz - nz * self.my, nz * self.mx - nx * self.mz, nx * self.my - ny * self.mx];
        BlochState {
            mx: self.mx * c + cross[0] * s + nx * dot * (1.0 - c),
            my: self.my * c + cross[1] * s + ny * dot * (1.0 - c),
            mz: self.mz * c + cross[2] * s + nz * dot * (1.0 - c),
        }
    }

    /// Precession about +z.
    pub fn precessed(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        BlochState { mx: self.mx * c - self.my * s, my: self.mx * s + self.my * c, mz: self.mz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationParams {
    pub t1: f64,
    pub t2: f64,
    /// Spectral-diffusion time; `f64::INFINITY` switches diffusion off.
    pub t_s: f64,
}

impl Default for RelaxationParams {
    fn default() -> Self {
        RelaxationParams { t1: 2.5e-3, t2: 160e-6, t_s: 200e-6 }
    }
}

impl RelaxationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) {
            return Err(Error::invalid("t1", "must be > 0"));
        }
        if !(self.t2 > 0.0 && self.t2 <= 2.0 * self.t1) {
            return Err(Error::invalid("t2", "must satisfy 0 < t2 <= 2*t1"));
        }
        if !(self.t_s > 0.0) {
            return Err(Error::invalid("t_s", "must be > 0 or infinite"));
        }
        Ok(())
    }

    /// Diffusion constant (rad²/s³) of the frequency random walk whose Hahn
    /// echo decays as exp(-8τ³/T_S³).
    pub fn diffusion_constant(&self) -> f64 {
        if self.t_s.is_infinite() {
            0.0
        } else {
            24.0 / self.t_s.powi(3)
        }
    }
}

/// Rotating-frame pulse with drive rate `angle_rate` (ω₁), drive azimuth
/// `phase_axis` and offset `detuning`: a rotation about
/// (ω₁cosφ, ω₁sinφ, Δ) by |ω_eff|·duration.
pub fn apply_pulse(state: BlochState, angle_rate: f64, phase_axis: f64, duration: f64, detuning: f64) -> BlochState {
    let (s, c) = phase_axis.sin_cos();
    let field = [angle_rate * c, angle_rate * s, detuning];
    let w_eff = (field[0] * field[0] + field[1] * field[1] + field[2] * field[2]).sqrt();
    if w_eff == 0.0 || duration == 0.0 {
        return state;
    }
    let axis = [field[0] / w_eff, field[1] / w_eff, field[2] / w_eff];
    state.rotated(axis, w_eff * duration)
}

/// Free precession by `detuning·duration`, transverse decay with `t2` and
/// longitudinal recovery towards `m_eq` with `t1`.
pub fn evolve_free(state: BlochState, duration: f64, relax: &RelaxationParams, detuning: f64, m_eq: f64) -> BlochState {
    relax_only(state.precessed(detuning * duration), duration, relax, m_eq)
}

pub(crate) fn relax_only(state: BlochState, duration: f64, relax: &RelaxationParams, m_eq: f64) -> BlochState {
    let e2 = (-duration / relax.t2).exp();
    let e1 = (-duration / relax.t1).exp();
    BlochState { mx: state.mx * e2, my: state.my * e2, mz: m_eq + (state.mz - m_eq) * e1 }
}

/// Hahn-echo envelope exp(-2τ/T₂ - 8τ³/T_S³).
pub fn echo_envelope_analytic(tau: f64, relax: &RelaxationParams) -> f64 {
    let cubic = if relax.t_s.is_infinite() { 0.0 } else { 8.0 * (tau / relax.t_s).powi(3) };
    (-2.0 * tau / relax.t2 - cubic).exp()
}

/// Ideal inversion recovery m_eq·(1 - 2·exp(-τ/T₁)).
pub fn inversion_recovery_curve(tau_grid: &[f64], t1: f64, m_eq: f64) -> Result<SignalTrace> {
    if tau_grid.is_empty() {
        return Err(Error::Domain("tau grid is empty".into()));
    }
    if tau_grid.iter().any(|&t| t < 0.0) {
        return Err(Error::Domain("tau grid must be non-negative".into()));
    }
    let y = tau_grid.iter().map(|&t| m_eq * (1.0 - 2.0 * (-t / t1).exp())).collect();
    SignalTrace::new(AxisKind::Tau, tau_grid.to_vec(), y, "dimensionless")
}
