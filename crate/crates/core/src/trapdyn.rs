//! Spin-dependent capture and reemission of conduction electrons by
//! neutral donors, and the photocurrent change it produces.
//!
//! A conduction electron can only bind to a donor whose electron is
//! anti-parallel to it (the two form a singlet in the D⁻ state). With a
//! strongly polarized conduction band, donors in the field-aligned ground
//! state are Pauli blocked; flipping a donor opens the capture channel at
//! rate `k_c`, and each D⁻ later reemits at rate `k_e`, leaving the donor
//! electron in a random spin state.
//!
//! Spin labels follow the electron spin: for g > 0 the field-aligned
//! ground state is spin down, so donor magnetization is
//! `mz = frac_d0_down - frac_d0_up` and the preset conduction polarization
//! is negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{AxisKind, SignalTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapParams {
    /// Capture rate for a fully anti-parallel pair, 1/s.
    pub capture_rate_k0: f64,
    /// D⁻ → D⁰ reemission rate, 1/s.
    pub emission_rate: f64,
    pub conduction_polarization: f64,
    /// Photocurrent without resonance, A.
    pub baseline_current: f64,
    /// Current reduction per unit trapped-donor fraction, A.
    pub coupling_amplitude: f64,
    /// Donor concentration in cm⁻³ (not used by the dynamics).
    pub donor_density: f64,
}

impl Default for TrapParams {
    fn default() -> Self {
        TrapParams::preset()
    }
}

impl TrapParams {
    /// ~100 µs capture, 2.5 ms reemission, 60 nA photocurrent. The coupling
    /// is chosen so a full flip reduces the current by at most 1 %.
    pub fn preset() -> Self {
        let mut p = TrapParams {
            capture_rate_k0: 1e4,
            emission_rate: 400.0,
            conduction_polarization: -0.968,
            baseline_current: 60e-9,
            coupling_amplitude: 1.0,
            donor_density: 1e15,
        };
        p.coupling_amplitude = 0.01 * p.baseline_current / peak_trapped_fraction(p.flipped_capture_rate(), p.emission_rate);
        p
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capture_rate_k0 > 0.0 && self.capture_rate_k0.is_finite()) {
            return Err(Error::invalid("capture_rate_k0", "must be finite and > 0"));
        }
        if !(self.emission_rate > 0.0 && self.emission_rate.is_finite()) {
            return Err(Error::invalid("emission_rate", "must be finite and > 0"));
        }
        if !(-1.0..=1.0).contains(&self.conduction_polarization) {
            return Err(Error::invalid("conduction_polarization", "must lie in [-1, 1]"));
        }
        if !(self.baseline_current > 0.0) {
            return Err(Error::invalid("baseline_current", "must be > 0"));
        }
        if !(self.coupling_amplitude >= 0.0 && self.coupling_amplitude.is_finite()) {
            return Err(Error::invalid("coupling_amplitude", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Capture rate of a donor flipped out of the ground state, i.e. fully
    /// anti-parallel to the conduction-band majority spin.
    pub fn flipped_capture_rate(&self) -> f64 {
        let p_flipped = if self.conduction_polarization < 0.0 {
            1.0
        } else if self.conduction_polarization > 0.0 {
            -1.0
        } else {
            0.0
        };
        capture_rate(p_flipped, self.conduction_polarization, self.capture_rate_k0)
    }
}

/// Pauli-weighted capture rate: the anti-parallel pair fraction
/// (1 - p_d·p_c)/2 times the allowed rate.
pub fn capture_rate(p_donor: f64, p_conduction: f64, k0: f64) -> f64 {
    k0 * (1.0 - p_donor * p_conduction) / 2.0
}

/// Trapped fraction of a two-compartment chain flipped → D⁻ (k_c) → D⁰ (k_e)
/// started with `flip` in the flipped state:
/// flip·k_c/(k_c - k_e)·(e^{-k_e t} - e^{-k_c t}). Written with `expm1` so
/// the k_c = k_e limit flip·k·t·e^{-kt} falls out continuously.
pub fn trapped_fraction(flip: f64, k_c: f64, k_e: f64, t: f64) -> f64 {
    let delta = k_c - k_e;
    let shape = if delta == 0.0 { t } else { -(-delta * t).exp_m1() / delta };
    flip * k_c * (-k_e * t).exp() * shape
}

/// Time of the trapped-fraction maximum, ln(k_c/k_e)/(k_c - k_e).
pub fn peak_time(k_c: f64, k_e: f64) -> f64 {
    if k_c == k_e {
        1.0 / k_c
    } else {
        (k_c / k_e).ln() / (k_c - k_e)
    }
}

pub fn peak_trapped_fraction(k_c: f64, k_e: f64) -> f64 {
    trapped_fraction(1.0, k_c, k_e, peak_time(k_c, k_e))
}

/// Current change ΔI(t) = -coupling·n⁻(t) after a fraction `flip_fraction`
/// of donors is flipped at t = 0.
pub fn transient_response(flip_fraction: f64, params: &TrapParams, t_grid: &[f64]) -> Result<SignalTrace> {
    params.validate()?;
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::Domain(format!("flip fraction {flip_fraction} outside [0, 1]")));
    }
    if t_grid.iter().any(|&t| t < 0.0) {
        return Err(Error::Domain("time grid must be non-negative".into()));
    }
    let k_c = params.flipped_capture_rate();
    let k_e = params.emission_rate;
    let y = t_grid.iter().map(|&t| -params.coupling_amplitude * trapped_fraction(flip_fraction, k_c, k_e, t)).collect();
    SignalTrace::new(AxisKind::Time, t_grid.to_vec(), y, "A")
}

/// Excess population moved into the capture-allowed state relative to
/// equilibrium, (m_eq - mz)/2 clipped to [0, 1].
pub fn flip_fraction_from_state(final_mz: f64, equilibrium_mz: f64) -> f64 {
    ((equilibrium_mz - final_mz) / 2.0).clamp(0.0, 1.0)
}

/// Trapezoidal integral of the trace over `[window_start, window_stop]`,
/// interpolating linearly at the window edges.
pub fn charge_signal(trace: &SignalTrace, window_start: f64, window_stop: f64) -> Result<f64> {
    if !(window_stop > window_start) {
        return Err(Error::Domain(format!("empty integration window [{window_start}, {window_stop}]")));
    }
    let (Some(&first), Some(&last)) = (trace.x.first(), trace.x.last()) else {
        return Err(Error::Domain("trace is empty".into()));
    };
    if window_start < first || window_stop > last {
        return Err(Error::Domain(format!("window [{window_start}, {window_stop}] outside trace span [{first}, {last}]")));
    }
    let interp = |x: f64| -> f64 {
        let i = trace.x.partition_point(|&v| v <= x).clamp(1, trace.x.len() - 1);
        let (x0, x1) = (trace.x[i - 1], trace.x[i]);
        let (y0, y1) = (trace.y[i - 1], trace.y[i]);
        if x1 == x0 {
            y0
        } else {
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    };
    let mut pts: Vec<(f64, f64)> = vec![(window_start, interp(window_start))];
    pts.extend(trace.x.iter().zip(&trace.y).filter(|(&x, _)| x > window_start && x < window_stop).map(|(&x, &y)| (x, y)));
    pts.push((window_stop, interp(window_stop)));
    Ok(pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum())
}

/// Default boxcar for charge readout: ten reemission times.
pub fn default_boxcar(params: &TrapParams) -> f64 {
    10.0 / params.emission_rate
}

/// Boxcar charge per unit flip fraction over the default boxcar.
pub fn unit_charge(params: &TrapParams) -> f64 {
    let stop = default_boxcar(params);
    let n = 4001;
    let grid: Vec<f64> = (0..n).map(|i| stop * i as f64 / (n - 1) as f64).collect();
    let trace = transient_response(1.0, params, &grid).expect("validated params");
    charge_signal(&trace, 0.0, stop).expect("window inside grid")
}

/// Donor populations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapState {
    pub frac_d0_up: f64,
    pub frac_d0_down: f64,
    pub frac_dminus: f64,
}

impl TrapState {
    pub fn total(&self) -> f64 {
        self.frac_d0_up + self.frac_d0_down + self.frac_dminus
    }

    /// Donor-electron magnetization (D⁻ singlets carry none).
    pub fn mz(&self) -> f64 {
        self.frac_d0_down - self.frac_d0_up
    }
}

/// Every D⁻ releases one electron; the electron left on the donor ends up
/// in either spin state with equal weight.
pub fn randomize_after_reemission(state: TrapState) -> TrapState {
    let half = state.frac_dminus / 2.0;
    TrapState { frac_d0_up: state.frac_d0_up + half, frac_d0_down: state.frac_d0_down + half, frac_dminus: 0.0 }
}

/// Capture/reemission cycle as continuous rate equations: each D⁰ spin
/// state is captured at its Pauli-weighted rate, and D⁻ reemits at `k_e`
/// into a randomized donor spin.
pub fn cycle_derivative(s: &TrapState, params: &TrapParams) -> TrapState {
    let k_up = capture_rate(1.0, params.conduction_polarization, params.capture_rate_k0);
    let k_down = capture_rate(-1.0, params.conduction_polarization, params.capture_rate_k0);
    let capture_up = k_up * s.frac_d0_up;
    let capture_down = k_down * s.frac_d0_down;
    let emission = params.emission_rate * s.frac_dminus;
    TrapState {
        frac_d0_up: -capture_up + emission / 2.0,
        frac_d0_down: -capture_down + emission / 2.0,
        frac_dminus: capture_up + capture_down - emission,
    }
}

/// Integrates the capture/reemission cycle with classical RK4 and returns
/// the populations on `t_grid` (which must start at 0 and increase).
pub fn simulate_cycles(initial: TrapState, params: &TrapParams, t_grid: &[f64], max_step: f64) -> Result<Vec<TrapState>> {
    params.validate()?;
    if !(max_step > 0.0) {
        return Err(Error::Domain("max_step must be > 0".into()));
    }
    let add = |a: &TrapState, b: &TrapState, h: f64| TrapState {
        frac_d0_up: a.frac_d0_up + h * b.frac_d0_up,
        frac_d0_down: a.frac_d0_down + h * b.frac_d0_down,
        frac_dminus: a.frac_dminus + h * b.frac_dminus,
    };
    let mut out = Vec::with_capacity(t_grid.len());
    let mut s = initial;
    let mut t = 0.0;
    for &target in t_grid {
        if target < t {
            return Err(Error::Domain("time grid must be non-decreasing from 0".into()));
        }
        while t < target {
            let h = (target - t).min(max_step);
            let k1 = cycle_derivative(&s, params);
            let k2 = cycle_derivative(&add(&s, &k1, h / 2.0), params);
            let k3 = cycle_derivative(&add(&s, &k2, h / 2.0), params);
            let k4 = cycle_derivative(&add(&s, &k3, h), params);
            s = TrapState {
                frac_d0_up: s.frac_d0_up + h / 6.0 * (k1.frac_d0_up + 2.0 * k2.frac_d0_up + 2.0 * k3.frac_d0_up + k4.frac_d0_up),
                frac_d0_down: s.frac_d0_down
                    + h / 6.0 * (k1.frac_d0_down + 2.0 * k2.frac_d0_down + 2.0 * k3.frac_d0_down + k4.frac_d0_down),
                frac_dminus: s.frac_dminus
                    + h / 6.0 * (k1.frac_dminus + 2.0 * k2.frac_dminus + 2.0 * k3.frac_dminus + k4.frac_dminus),
            };
            t += h;
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal() -> TrapParams {
        // fully polarized conduction band: k_c equals k0 exactly
        TrapParams { conduction_polarization: -1.0, ..TrapParams::preset() }
    }

    #[test]
    fn capture_rate_examples() {
        assert_eq!(capture_rate(1.0, 1.0, 1e4), 0.0);
        assert_eq!(capture_rate(-1.0, 1.0, 1e4), 1e4);
        assert_eq!(capture_rate(0.0, 0.37, 1e4), 5e3);
        assert_eq!(capture_rate(0.3, -0.7, 2.0), capture_rate(-0.7, 0.3, 2.0));
    }

    #[test]
    fn transient_extremum() {
        let p = ideal();
        assert_eq!(p.flipped_capture_rate(), 1e4);
        let t_star = peak_time(1e4, 400.0);
        assert!((t_star - 335e-6).abs() < 1e-6, "{t_star}");
        assert!((peak_trapped_fraction(1e4, 400.0) - 0.874).abs() < 1e-3);
        let tr = transient_response(0.5, &p, &[0.0, t_star, 1.0]).unwrap();
        assert_eq!(tr.y[0], 0.0);
        assert!(tr.y.iter().all(|&v| v <= 0.0));
        assert!(tr.y[2].abs() < 1e-100);
    }

    #[test]
    fn tail_decays_at_emission_rate() {
        let p = ideal();
        let tr = transient_response(1.0, &p, &[10e-3, 12e-3]).unwrap();
        let slope = (tr.y[1].abs().ln() - tr.y[0].abs().ln()) / 2e-3;
        assert!((slope + 400.0).abs() < 1e-6, "{slope}");
    }

    #[test]
    fn degenerate_rates_use_the_limit() {
        let k: f64 = 500.0;
        let t = 1.3e-3;
        let want = 0.7 * k * t * (-k * t).exp();
        assert!((trapped_fraction(0.7, k, k, t) - want).abs() < 1e-15);
        // continuity approaching the limit
        assert!((trapped_fraction(0.7, k * (1.0 + 1e-9), k, t) - want).abs() < 1e-9);
    }

    #[test]
    fn flip_fraction_examples() {
        assert_eq!(flip_fraction_from_state(0.5, 0.5), 0.0);
        assert_eq!(flip_fraction_from_state(-1.0, 1.0), 1.0);
        assert!((flip_fraction_from_state(0.0, 0.968) - 0.484).abs() < 1e-15);
        assert_eq!(flip_fraction_from_state(1.0, 0.5), 0.0);
    }

    #[test]
    fn charge_signal_examples() {
        let grid: Vec<f64> = (0..101).map(|i| i as f64 * 1e-4).collect();
        let zero = SignalTrace::new(AxisKind::Time, grid.clone(), vec![0.0; 101], "A").unwrap();
        assert_eq!(charge_signal(&zero, 0.0, 1e-2).unwrap(), 0.0);
        assert!(charge_signal(&zero, 1e-3, 1e-3).is_err());
        assert!(charge_signal(&zero, 0.0, 1.0).is_err());

        let p = TrapParams::preset();
        let a = charge_signal(&transient_response(0.2, &p, &grid).unwrap(), 0.0, 1e-2).unwrap();
        let b = charge_signal(&transient_response(0.4, &p, &grid).unwrap(), 0.0, 1e-2).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn full_span_charge_matches_closed_form() {
        let p = TrapParams::preset();
        let (k_c, k_e) = (p.flipped_capture_rate(), p.emission_rate);
        let stop = 40.0 / k_e;
        let n = 200_001;
        let grid: Vec<f64> = (0..n).map(|i| stop * i as f64 / (n - 1) as f64).collect();
        let q = charge_signal(&transient_response(0.3, &p, &grid).unwrap(), 0.0, stop).unwrap();
        let want = -p.coupling_amplitude * 0.3 * k_c / (k_c - k_e) * (1.0 / k_e - 1.0 / k_c);
        assert!((q / want - 1.0).abs() < 1e-3, "{q} {want}");
    }

    #[test]
    fn preset_normalizes_peak_to_one_percent() {
        let p = TrapParams::preset();
        let peak = p.coupling_amplitude * peak_trapped_fraction(p.flipped_capture_rate(), p.emission_rate);
        assert!((peak / p.baseline_current - 0.01).abs() < 1e-12);
    }

    #[test]
    fn reemission_randomizes() {
        let s = randomize_after_reemission(TrapState { frac_d0_up: 0.0, frac_d0_down: 0.0, frac_dminus: 1.0 });
        assert_eq!(s, TrapState { frac_d0_up: 0.5, frac_d0_down: 0.5, frac_dminus: 0.0 });
        let idle = TrapState { frac_d0_up: 0.5, frac_d0_down: 0.5, frac_dminus: 0.0 };
        assert_eq!(randomize_after_reemission(idle), idle);
        let s = randomize_after_reemission(TrapState { frac_d0_up: 0.1, frac_d0_down: 0.6, frac_dminus: 0.3 });
        assert!((s.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_conserves_population() {
        let p = TrapParams::preset();
        let init = TrapState { frac_d0_up: 1.0, frac_d0_down: 0.0, frac_dminus: 0.0 };
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 2e-4).collect();
        for s in simulate_cycles(init, &p, &grid, 1e-6).unwrap() {
            assert!((s.total() - 1.0).abs() < 1e-12);
            assert!(s.frac_dminus >= 0.0 && s.frac_d0_up >= 0.0 && s.frac_d0_down >= 0.0);
        }
    }
}
