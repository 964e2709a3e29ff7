//! Field-swept EDMR spectra: each resonant line lowers the photocurrent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spincore::{resonance_field, Environment, NuclearProjection, SpinSpecies};
use crate::trace::{AxisKind, SignalTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Lineshape {
    #[default]
    Gaussian,
    /// Same full width at half maximum as the Gaussian of the species.
    Lorentzian,
}

impl Lineshape {
    /// Unit-peak profile at offset `x` for Gaussian standard deviation `sigma`.
    pub fn eval(self, x: f64, sigma: f64) -> f64 {
        match self {
            Lineshape::Gaussian => (-0.5 * (x / sigma).powi(2)).exp(),
            Lineshape::Lorentzian => {
                let hwhm = sigma * (2.0 * std::f64::consts::LN_2).sqrt();
                1.0 / (1.0 + (x / hwhm).powi(2))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub b_start: f64,
    pub b_stop: f64,
    pub n_points: usize,
    #[serde(default)]
    pub lineshape: Lineshape,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_start.is_finite() && self.b_stop.is_finite()) {
            return Err(Error::invalid("b_start/b_stop", "must be finite"));
        }
        if !(self.b_start < self.b_stop) {
            return Err(Error::invalid("b_start", "must be below b_stop"));
        }
        if self.n_points < 2 {
            return Err(Error::invalid("n_points", "must be >= 2"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.b_stop - self.b_start) / (self.n_points - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| {
                let f = i as f64 / n;
                self.b_start * (1.0 - f) + self.b_stop * f
            })
            .collect()
    }
}

/// One species with the total current reduction it produces on resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralLine {
    pub species: SpinSpecies,
    pub amplitude: f64,
}

/// The phosphorus doublet plus a dangling-bond line at 5 % of its amplitude
/// and four times its width. Amplitudes in A.
pub fn preset_lines() -> Vec<SpectralLine> {
    let p = SpinSpecies::phosphorus();
    let mut db = SpinSpecies::dangling_bond();
    db.linewidth_field = 4.0 * p.linewidth_field;
    vec![SpectralLine { species: p, amplitude: 0.6e-9 }, SpectralLine { species: db, amplitude: 0.05 * 0.6e-9 }]
}

/// (resonance field, amplitude) of every line the species contributes.
/// A doublet gives (1 - p_n)/2 to the low-field and (1 + p_n)/2 to the
/// high-field line, with p_n = -nuclear_polarization.
pub fn line_positions(line: &SpectralLine, f_mw: f64) -> Result<Vec<(f64, f64)>> {
    let s = &line.species;
    if !s.has_hyperfine() {
        return Ok(vec![(resonance_field(s, f_mw, NuclearProjection::None)?, line.amplitude)]);
    }
    let p_n = -s.nuclear_polarization;
    Ok(vec![
        (resonance_field(s, f_mw, NuclearProjection::Up)?, line.amplitude * (1.0 - p_n) / 2.0),
        (resonance_field(s, f_mw, NuclearProjection::Down)?, line.amplitude * (1.0 + p_n) / 2.0),
    ])
}

/// ΔI(B) = -Σ a·L(B - B_res) over all lines; the static field of `env` is
/// swept, the microwave frequency is held.
pub fn simulate_field_sweep(lines: &[SpectralLine], env: &Environment, sweep: &SweepSpec) -> Result<SignalTrace> {
    sweep.validate()?;
    if !(env.mw_frequency > 0.0) {
        return Err(Error::invalid("mw_frequency", "must be > 0"));
    }
    let mut parts = Vec::new();
    for line in lines {
        line.species.validate()?;
        if !(line.amplitude >= 0.0) {
            return Err(Error::invalid("amplitude", format!("line '{}' amplitude must be >= 0", line.species.label)));
        }
        for (b_res, a) in line_positions(line, env.mw_frequency)? {
            parts.push((b_res, a, line.species.linewidth_field));
        }
    }
    let x = sweep.grid();
    let y = x.iter().map(|&b| -parts.iter().map(|&(b_res, a, w)| a * sweep.lineshape.eval(b - b_res, w)).sum::<f64>()).collect();
    SignalTrace::new(AxisKind::Field, x, y, "A")
}

/// Local minima of the trace whose topographic prominence is at least
/// `min_prominence` times the trace's full range. Returns (field, depth)
/// with depth = -ΔI, sorted by field.
pub fn find_peaks(trace: &SignalTrace, min_prominence: f64) -> Vec<(f64, f64)> {
    let y = &trace.y;
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Vec::new();
    }
    let threshold = min_prominence * range;
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if y[i] < y[i - 1] {
            // extend over a flat bottom
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] > y[i] {
                let center = (i + j) / 2;
                let left_max = walk_out(y, i, -1);
                let right_max = walk_out(y, j, 1);
                let prominence = left_max.min(right_max) - y[i];
                if prominence >= threshold {
                    peaks.push((trace.x[center], -y[center]));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Highest value reached moving from `start` in direction `dir` before the
/// trace drops below `y[start]` (or the edge is reached).
fn walk_out(y: &[f64], start: usize, dir: isize) -> f64 {
    let base = y[start];
    let mut best = base;
    let mut k = start as isize + dir;
    while k >= 0 && (k as usize) < y.len() {
        let v = y[k as usize];
        if v < base {
            break;
        }
        best = best.max(v);
        k += dir;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep() -> SweepSpec {
        SweepSpec { b_start: 8.560, b_stop: 8.590, n_points: 1501, lineshape: Lineshape::Gaussian }
    }

    #[test]
    fn symmetric_doublet_without_nuclear_polarization() {
        let mut p = SpinSpecies::phosphorus();
        p.nuclear_polarization = 0.0;
        let line = SpectralLine { species: p, amplitude: 1.0 };
        let pos = line_positions(&line, 240e9).unwrap();
        assert!((pos[0].1 - pos[1].1).abs() < 1e-12);
        let tr = simulate_field_sweep(&[line], &Environment::default(), &sweep()).unwrap();
        let peaks = find_peaks(&tr, 0.1);
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0].1 - peaks[1].1).abs() < 1e-3);
    }

    #[test]
    fn doublet_split_and_asymmetry() {
        let lines = vec![SpectralLine { species: SpinSpecies::phosphorus(), amplitude: 1.0 }];
        let sw = sweep();
        let tr = simulate_field_sweep(&lines, &Environment::default(), &sw).unwrap();
        let peaks = find_peaks(&tr, 0.1);
        assert_eq!(peaks.len(), 2);
        assert!(((peaks[1].0 - peaks[0].0) - 4.2e-3).abs() <= sw.step() + 1e-12);
        assert!(peaks[1].1 > peaks[0].1);
        assert!(tr.y.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn intensity_is_conserved_across_nuclear_polarization() {
        for pn in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            let mut s = SpinSpecies::phosphorus();
            s.nuclear_polarization = pn;
            let pos = line_positions(&SpectralLine { species: s, amplitude: 2.5 }, 240e9).unwrap();
            assert_eq!(pos[0].1 + pos[1].1, 2.5);
        }
    }

    #[test]
    fn preset_has_three_peaks() {
        let tr = simulate_field_sweep(&preset_lines(), &Environment::default(), &sweep()).unwrap();
        let peaks = find_peaks(&tr, 0.01);
        assert_eq!(peaks.len(), 3, "{peaks:?}");
        assert!((peaks[0].0 - 8.570).abs() < 1e-3);
        assert!((peaks[1].0 - 8.578).abs() < 1e-3);
        assert!((peaks[2].0 - 8.582).abs() < 1e-3);
    }

    #[test]
    fn flat_trace_has_no_peaks() {
        let tr = SignalTrace::new(AxisKind::Field, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4], "A").unwrap();
        assert!(find_peaks(&tr, 0.0).is_empty());
    }

    #[test]
    fn broad_lines_merge() {
        let mut s = SpinSpecies::phosphorus();
        s.linewidth_field = 10e-3;
        let tr = simulate_field_sweep(&[SpectralLine { species: s, amplitude: 1.0 }], &Environment::default(), &sweep()).unwrap();
        assert_eq!(find_peaks(&tr, 0.01).len(), 1);
    }

    #[test]
    fn lorentzian_shares_fwhm() {
        let sigma = 1e-4;
        let half = sigma * (2.0 * std::f64::consts::LN_2).sqrt();
        assert!((Lineshape::Gaussian.eval(half, sigma) - 0.5).abs() < 1e-12);
        assert!((Lineshape::Lorentzian.eval(half, sigma) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reversed_sweep_is_rejected() {
        let sw = SweepSpec { b_start: 8.6, b_stop: 8.5, ..sweep() };
        assert!(simulate_field_sweep(&preset_lines(), &Environment::default(), &sw).is_err());
    }
}
