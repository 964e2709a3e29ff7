//! Physical constants, spin species, thermal polarization and resonance
//! positions shared by the simulators.
//!
//! All quantities are SI: Tesla, seconds, Hz for frequencies and rad/s for
//! angular rates.

use serde::{Deserialize, Serialize};

use crate::blochsim::BlochState;
use crate::error::{Error, Result};

/// CODATA 2018 exact/recommended values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub planck_h: f64,
    pub bohr_magneton: f64,
    pub boltzmann_k: f64,
}

pub const CONSTANTS: PhysicalConstants =
    PhysicalConstants { planck_h: 6.626_070_15e-34, bohr_magneton: 9.274_010_078_3e-24, boltzmann_k: 1.380_649e-23 };

impl PhysicalConstants {
    pub fn hbar(&self) -> f64 {
        self.planck_h / (2.0 * std::f64::consts::PI)
    }

    /// Electron gyromagnetic ratio g·μ_B/ħ in rad/(s·T).
    pub fn gamma(&self, g: f64) -> f64 {
        g * self.bohr_magneton / self.hbar()
    }
}

/// Nuclear spin projection selecting one line of a hyperfine doublet.
///
/// `Up` (m_I = +1/2) is the low-field line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuclearProjection {
    Up,
    Down,
    None,
}

impl NuclearProjection {
    fn sign(self) -> f64 {
        match self {
            NuclearProjection::Up => 1.0,
            NuclearProjection::Down => -1.0,
            NuclearProjection::None => 0.0,
        }
    }
}

/// A resonant line family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSpecies {
    pub label: String,
    pub g_factor: f64,
    /// Field separation of the hyperfine doublet; zero when there is none.
    pub hyperfine_splitting_field: f64,
    /// Nuclear polarization in [-1, 1]. Negative values favour the
    /// high-field line.
    pub nuclear_polarization: f64,
    /// Gaussian standard deviation of the inhomogeneous line, in Tesla.
    pub linewidth_field: f64,
}

impl SpinSpecies {
    /// ³¹P donor electron. The g-factor places the doublet centre at
    /// 8.58 T for 240 GHz; the doublet is 4.2 mT wide.
    pub fn phosphorus() -> Self {
        SpinSpecies {
            label: "P".into(),
            g_factor: 1.9985,
            hyperfine_splitting_field: 4.2e-3,
            nuclear_polarization: -0.3,
            linewidth_field: 2.0e-5,
        }
    }

    /// Silicon dangling bond: single broad line near 8.57 T at 240 GHz.
    pub fn dangling_bond() -> Self {
        SpinSpecies {
            label: "db".into(),
            g_factor: 2.0009,
            hyperfine_splitting_field: 0.0,
            nuclear_polarization: 0.0,
            linewidth_field: 1.2e-4,
        }
    }

    pub fn has_hyperfine(&self) -> bool {
        self.hyperfine_splitting_field > 0.0
    }

    /// The line selectors this species produces: both doublet members, or a
    /// single `None` line.
    pub fn manifolds(&self) -> Vec<NuclearProjection> {
        if self.has_hyperfine() {
            vec![NuclearProjection::Up, NuclearProjection::Down]
        } else {
            vec![NuclearProjection::None]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_factor > 0.0) {
            return Err(Error::invalid("g_factor", "must be > 0"));
        }
        if !(self.hyperfine_splitting_field >= 0.0) {
            return Err(Error::invalid("hyperfine_splitting_field", "must be >= 0"));
        }
        if !(-1.0..=1.0).contains(&self.nuclear_polarization) {
            return Err(Error::invalid("nuclear_polarization", "must lie in [-1, 1]"));
        }
        if !(self.linewidth_field > 0.0) {
            return Err(Error::invalid("linewidth_field", "must be > 0"));
        }
        Ok(())
    }

    /// Inhomogeneous linewidth converted to an angular-frequency spread.
    pub fn linewidth_rad_per_s(&self) -> f64 {
        CONSTANTS.gamma(self.g_factor) * self.linewidth_field
    }
}

/// Static field, temperature and drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub static_field_b0: f64,
    pub temperature: f64,
    pub mw_frequency: f64,
    pub rabi_frequency: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Environment {
            static_field_b0: 8.58,
            temperature: 2.8,
            mw_frequency: 240e9,
            // 180 degree rotation in 480 ns
            rabi_frequency: 1.0 / (2.0 * 480e-9),
        }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("static_field_b0", self.static_field_b0),
            ("temperature", self.temperature),
            ("mw_frequency", self.mw_frequency),
            ("rabi_frequency", self.rabi_frequency),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }

    /// Drive strength ω₁ = 2π·f₁.
    pub fn rabi_rate(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.rabi_frequency
    }

    /// Copy of `self` with the static field set onto one line of `species`.
    pub fn tuned_to(&self, species: &SpinSpecies, m_i: NuclearProjection) -> Result<Self> {
        let b = resonance_field(species, self.mw_frequency, m_i)?;
        Ok(Environment { static_field_b0: b, ..*self })
    }
}

/// Two-level Boltzmann polarization tanh(g·μ_B·B / 2k_BT).
pub fn thermal_polarization(g: f64, b: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    let c = &CONSTANTS;
    Ok((g * c.bohr_magneton * b / (2.0 * c.boltzmann_k * t)).tanh())
}

/// Field at which `species` resonates at `f_mw` for nuclear projection `m_i`
/// (first-order hyperfine).
pub fn resonance_field(species: &SpinSpecies, f_mw: f64, m_i: NuclearProjection) -> Result<f64> {
    if !(f_mw > 0.0) {
        return Err(Error::Domain(format!("microwave frequency must be > 0, got {f_mw}")));
    }
    match (species.has_hyperfine(), m_i) {
        (false, NuclearProjection::Up | NuclearProjection::Down) => {
            return Err(Error::Usage(format!(
                "species '{}' has no hyperfine splitting; use NuclearProjection::None",
                species.label
            )))
        }
        (true, NuclearProjection::None) => {
            return Err(Error::Usage(format!("species '{}' is hyperfine split; select Up or Down", species.label)))
        }
        _ => {}
    }
    let c = &CONSTANTS;
    let center = c.planck_h * f_mw / (species.g_factor * c.bohr_magneton);
    Ok(center - m_i.sign() * species.hyperfine_splitting_field / 2.0)
}

/// Centre of the line family (midpoint of a doublet).
pub fn center_field(species: &SpinSpecies, f_mw: f64) -> f64 {
    let c = &CONSTANTS;
    c.planck_h * f_mw / (species.g_factor * c.bohr_magneton)
}

/// Rotating-frame offset of one line, in rad/s.
pub fn detuning(species: &SpinSpecies, env: &Environment, m_i: NuclearProjection) -> Result<f64> {
    let b_res = resonance_field(species, env.mw_frequency, m_i)?;
    Ok(CONSTANTS.gamma(species.g_factor) * (env.static_field_b0 - b_res))
}

pub fn equilibrium_state(env: &Environment, species: &SpinSpecies) -> Result<BlochState> {
    let mz = thermal_polarization(species.g_factor, env.static_field_b0, env.temperature)?;
    Ok(BlochState::new(0.0, 0.0, mz))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polarization_examples() {
        assert_eq!(thermal_polarization(1.9985, 0.0, 2.8).unwrap(), 0.0);
        let p = thermal_polarization(1.9985, 8.6, 2.8).unwrap();
        assert!((p - 0.968).abs() < 1e-3, "{p}");
        assert!(p > 0.95);
        assert!(thermal_polarization(1.9985, 8.6, 1e6).unwrap() < 1e-5);
        assert!(thermal_polarization(1.9985, 8.6, 0.0).is_err());
        assert!(thermal_polarization(1.9985, 8.6, -1.0).is_err());
    }

    #[test]
    fn polarization_is_odd_in_field() {
        let a = thermal_polarization(2.0, 3.0, 4.0).unwrap();
        let b = thermal_polarization(2.0, -3.0, 4.0).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn phosphorus_doublet() {
        let p = SpinSpecies::phosphorus();
        let lo = resonance_field(&p, 240e9, NuclearProjection::Up).unwrap();
        let hi = resonance_field(&p, 240e9, NuclearProjection::Down).unwrap();
        assert!(lo < hi);
        assert!(((hi - lo) - 4.2e-3).abs() < 1e-15);
        assert!(((hi + lo) / 2.0 - 8.580).abs() < 1e-3);
    }

    #[test]
    fn dangling_bond_line() {
        let db = SpinSpecies::dangling_bond();
        let b = resonance_field(&db, 240e9, NuclearProjection::None).unwrap();
        assert!((b - 8.570).abs() < 1e-3, "{b}");
        assert!(matches!(resonance_field(&db, 240e9, NuclearProjection::Up), Err(Error::Usage(_))));
        assert!(resonance_field(&SpinSpecies::phosphorus(), 240e9, NuclearProjection::None).is_err());
    }

    #[test]
    fn detuning_examples() {
        let p = SpinSpecies::phosphorus();
        let env = Environment::default().tuned_to(&p, NuclearProjection::Down).unwrap();
        let d0 = detuning(&p, &env, NuclearProjection::Down).unwrap();
        assert!(d0.abs() <= 1e-12 * CONSTANTS.gamma(p.g_factor) * env.static_field_b0);

        let plus = Environment { static_field_b0: env.static_field_b0 + 1e-4, ..env };
        let minus = Environment { static_field_b0: env.static_field_b0 - 1e-4, ..env };
        let dp = detuning(&p, &plus, NuclearProjection::Down).unwrap();
        let dm = detuning(&p, &minus, NuclearProjection::Down).unwrap();
        // g·μ_B·ΔB/ħ = 1.7575e7 rad/s
        assert!((dp / 1.760e7 - 1.0).abs() < 5e-3, "{dp}");
        assert!((dp + dm).abs() < 1e-6 * dp.abs());
    }

    #[test]
    fn equilibrium_state_examples() {
        let env = Environment { static_field_b0: 8.6, ..Environment::default() };
        let s = equilibrium_state(&env, &SpinSpecies::phosphorus()).unwrap();
        assert_eq!((s.mx, s.my), (0.0, 0.0));
        assert!((s.mz - 0.968).abs() < 1e-3);
        assert!(s.norm() <= 1.0);

        let hot = Environment { temperature: 1e12, ..env };
        let s = equilibrium_state(&hot, &SpinSpecies::phosphorus()).unwrap();
        assert!(s.mz.abs() < 1e-10);
    }

    #[test]
    fn default_rabi_gives_480ns_pi_pulse() {
        let env = Environment::default();
        assert!((env.rabi_frequency - 1.0417e6).abs() < 1e2);
        assert!((std::f64::consts::PI / env.rabi_rate() - 480e-9).abs() < 1e-15);
    }

    #[test]
    fn species_validation() {
        let mut s = SpinSpecies::phosphorus();
        s.linewidth_field = 0.0;
        assert!(s.validate().is_err());
        s = SpinSpecies::phosphorus();
        s.nuclear_polarization = 1.5;
        assert!(s.validate().is_err());
        assert!(SpinSpecies::dangling_bond().validate().is_ok());
    }
}
