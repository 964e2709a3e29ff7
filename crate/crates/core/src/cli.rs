//! Command-line front end.
//!
//! Every command resolves a [`RunConfig`] (JSON, unit-suffixed keys, unknown
//! keys rejected), applies command-line overrides, validates the result and
//! writes CSV traces whose metadata carries the config hash, RNG seed, tool
//! version and a creation timestamp. Exit codes: 0 ok, 2 config, 3
//! sequence, 4 data.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blochsim::{self, single_pulse_timeline, EnsembleSpec, RelaxationParams};
use crate::error::Error;
use crate::fitkit::{self, FitOptions, ModelComparison, ModelId};
use crate::seqlang::{self, Channel, Phase};
use crate::spectrum::{self, Lineshape, SpectralLine, SweepSpec};
use crate::spincore::{Environment, NuclearProjection, SpinSpecies};
use crate::trace::{AxisKind, SignalTrace, TIMESTAMP_KEY};
use crate::trapdyn::{self, TrapParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SEQUENCE: i32 = 3;
pub const EXIT_DATA: i32 = 4;
const EXIT_IO: i32 = 1;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Classifies a library error by the stage it came from.
fn classify(e: Error) -> CliError {
    let code = match &e {
        Error::InvalidParameter { .. } | Error::Usage(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Sequence(_) => EXIT_SEQUENCE,
        Error::Fit(_) | Error::Data(_) => EXIT_DATA,
        Error::Io(_) => EXIT_IO,
    };
    CliError { code, message: e.to_string() }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineChoice {
    HighField,
    LowField,
    /// Single-line species only.
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// Explicit static field; excludes `tune_to`.
    pub b0_tesla: Option<f64>,
    /// Put the static field on one line of the species. Used when
    /// `b0_tesla` is absent; defaults to the high-field line.
    pub tune_to: Option<LineChoice>,
    pub temperature_kelvin: f64,
    pub mw_frequency_hz: f64,
    pub rabi_frequency_hz: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let e = Environment::default();
        EnvironmentConfig {
            b0_tesla: None,
            tune_to: None,
            temperature_kelvin: e.temperature,
            mw_frequency_hz: e.mw_frequency,
            rabi_frequency_hz: e.rabi_frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeciesConfig {
    pub label: String,
    pub g_factor: f64,
    pub hyperfine_splitting_tesla: f64,
    pub nuclear_polarization: f64,
    pub linewidth_tesla: f64,
}

impl Default for SpeciesConfig {
    fn default() -> Self {
        let p = SpinSpecies::phosphorus();
        SpeciesConfig {
            label: p.label,
            g_factor: p.g_factor,
            hyperfine_splitting_tesla: p.hyperfine_splitting_field,
            nuclear_polarization: p.nuclear_polarization,
            linewidth_tesla: p.linewidth_field,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationConfig {
    pub t1_seconds: f64,
    pub t2_seconds: f64,
    /// Spectral-diffusion time; null disables spectral diffusion.
    pub ts_seconds: Option<f64>,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        let r = RelaxationParams::default();
        RelaxationConfig { t1_seconds: r.t1, t2_seconds: r.t2, ts_seconds: Some(r.t_s) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapConfig {
    pub capture_rate_k0_per_second: f64,
    pub emission_rate_per_second: f64,
    pub conduction_polarization: f64,
    pub baseline_current_amperes: f64,
    /// Null: chosen so a full flip lowers the current by 1 % at the peak.
    pub coupling_amplitude_amperes: Option<f64>,
    pub donor_density_per_cm3: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        let t = TrapParams::preset();
        TrapConfig {
            capture_rate_k0_per_second: t.capture_rate_k0,
            emission_rate_per_second: t.emission_rate,
            conduction_polarization: t.conduction_polarization,
            baseline_current_amperes: t.baseline_current,
            coupling_amplitude_amperes: None,
            donor_density_per_cm3: t.donor_density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_static: usize,
    pub n_noise: usize,
    pub manifold_weights: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let e = EnsembleSpec::default();
        EnsembleConfig { n_static: e.n_static, n_noise: e.n_noise, manifold_weights: e.manifold_weights, rng_seed: e.rng_seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DanglingBondConfig {
    pub g_factor: f64,
    /// Null: four times the species linewidth.
    pub linewidth_tesla: Option<f64>,
    /// Amplitude relative to the species line.
    pub amplitude_ratio: f64,
}

impl Default for DanglingBondConfig {
    fn default() -> Self {
        DanglingBondConfig { g_factor: SpinSpecies::dangling_bond().g_factor, linewidth_tesla: None, amplitude_ratio: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub b_start_tesla: f64,
    pub b_stop_tesla: f64,
    pub n_points: usize,
    pub lineshape: Lineshape,
    /// Total current reduction of the species line on resonance.
    pub amplitude_amperes: f64,
    /// Null removes the dangling-bond line.
    pub dangling_bond: Option<DanglingBondConfig>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            b_start_tesla: 8.560,
            b_stop_tesla: 8.590,
            n_points: 1501,
            lineshape: Lineshape::Gaussian,
            amplitude_amperes: 0.6e-9,
            dangling_bond: Some(DanglingBondConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientConfig {
    pub t_stop_seconds: f64,
    pub n_points: usize,
    /// Null: computed from a single +x pulse of `pulse_angle_degrees`.
    pub flip_fraction: Option<f64>,
    pub pulse_angle_degrees: f64,
}

impl Default for TransientConfig {
    fn default() -> Self {
        TransientConfig { t_stop_seconds: 10e-3, n_points: 10001, flip_fraction: None, pulse_angle_degrees: 180.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NutationConfig {
    pub max_duration_seconds: f64,
    pub n_points: usize,
}

impl Default for NutationConfig {
    fn default() -> Self {
        NutationConfig { max_duration_seconds: 4e-6, n_points: 161 }
    }
}

/// Complete input of one command. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub species: SpeciesConfig,
    pub relaxation: RelaxationConfig,
    pub trap: TrapConfig,
    pub ensemble: EnsembleConfig,
    pub spectrum: SpectrumConfig,
    pub transient: TransientConfig,
    pub nutation: NutationConfig,
    /// Default output path when --out is not given.
    pub output_path: Option<PathBuf>,
}

/// Validated physical inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub env: Environment,
    pub species: SpinSpecies,
    pub relax: RelaxationParams,
    pub trap: TrapParams,
    pub ensemble: EnsembleSpec,
}

/// Prefixes the field named by a validation error with its config section
/// and renames it to the JSON key.
fn in_section(section: &str, renames: &[(&str, &str)], r: crate::Result<()>) -> CliResult<()> {
    r.map_err(|e| match e {
        Error::InvalidParameter { field, reason } => {
            let key = renames.iter().find(|(f, _)| *f == field).map_or(field.as_str(), |(_, k)| k);
            CliError::config(format!("invalid {section}.{key}: {reason}"))
        }
        other => classify(other),
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    /// Hex SHA-256 prefix of the canonical JSON of everything except the
    /// output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_path = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn species(&self) -> CliResult<SpinSpecies> {
        let s = SpinSpecies {
            label: self.species.label.clone(),
            g_factor: self.species.g_factor,
            hyperfine_splitting_field: self.species.hyperfine_splitting_tesla,
            nuclear_polarization: self.species.nuclear_polarization,
            linewidth_field: self.species.linewidth_tesla,
        };
        in_section(
            "species",
            &[("hyperfine_splitting_field", "hyperfine_splitting_tesla"), ("linewidth_field", "linewidth_tesla")],
            s.validate(),
        )?;
        Ok(s)
    }

    pub fn resolve(&self) -> CliResult<Resolved> {
        let species = self.species()?;
        let ec = &self.environment;
        let mut env = Environment {
            static_field_b0: ec.b0_tesla.unwrap_or(8.58),
            temperature: ec.temperature_kelvin,
            mw_frequency: ec.mw_frequency_hz,
            rabi_frequency: ec.rabi_frequency_hz,
        };
        in_section(
            "environment",
            &[
                ("static_field_b0", "b0_tesla"),
                ("temperature", "temperature_kelvin"),
                ("mw_frequency", "mw_frequency_hz"),
                ("rabi_frequency", "rabi_frequency_hz"),
            ],
            env.validate(),
        )?;
        match (ec.b0_tesla, ec.tune_to) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("invalid environment.tune_to: cannot be combined with environment.b0_tesla"))
            }
            (Some(_), None) => {}
            (None, choice) => {
                let m_i = match (choice, species.has_hyperfine()) {
                    (None | Some(LineChoice::HighField), true) => NuclearProjection::Down,
                    (Some(LineChoice::LowField), true) => NuclearProjection::Up,
                    (None | Some(LineChoice::Center), false) => NuclearProjection::None,
                    (Some(LineChoice::Center), true) => {
                        return Err(CliError::config(
                            "invalid environment.tune_to: 'center' needs a species without hyperfine splitting",
                        ))
                    }
                    (Some(_), false) => {
                        return Err(CliError::config("invalid environment.tune_to: species has a single line; use 'center'"))
                    }
                };
                env = env.tuned_to(&species, m_i).map_err(classify)?;
            }
        }

        let rc = &self.relaxation;
        let relax = RelaxationParams { t1: rc.t1_seconds, t2: rc.t2_seconds, t_s: rc.ts_seconds.unwrap_or(f64::INFINITY) };
        in_section("relaxation", &[("t1", "t1_seconds"), ("t2", "t2_seconds"), ("t_s", "ts_seconds")], relax.validate())?;

        let tc = &self.trap;
        let mut trap = TrapParams {
            capture_rate_k0: tc.capture_rate_k0_per_second,
            emission_rate: tc.emission_rate_per_second,
            conduction_polarization: tc.conduction_polarization,
            baseline_current: tc.baseline_current_amperes,
            coupling_amplitude: 0.0,
            donor_density: tc.donor_density_per_cm3,
        };
        let trap_renames = [
            ("capture_rate_k0", "capture_rate_k0_per_second"),
            ("emission_rate", "emission_rate_per_second"),
            ("baseline_current", "baseline_current_amperes"),
            ("coupling_amplitude", "coupling_amplitude_amperes"),
        ];
        in_section("trap", &trap_renames, trap.validate())?;
        trap.coupling_amplitude = match tc.coupling_amplitude_amperes {
            Some(a) => a,
            None => {
                0.01 * trap.baseline_current / trapdyn::peak_trapped_fraction(trap.flipped_capture_rate(), trap.emission_rate)
            }
        };
        in_section("trap", &trap_renames, trap.validate())?;

        let en = &self.ensemble;
        let ensemble = EnsembleSpec {
            n_static: en.n_static,
            n_noise: en.n_noise,
            manifold_weights: en.manifold_weights.clone(),
            rng_seed: en.rng_seed,
        };
        in_section("ensemble", &[], ensemble.validate(&species))?;
        Ok(Resolved { env, species, relax, trap, ensemble })
    }

    pub fn spectral_lines(&self) -> CliResult<Vec<SpectralLine>> {
        let species = self.species()?;
        let sc = &self.spectrum;
        if !(sc.amplitude_amperes >= 0.0) {
            return Err(CliError::config("invalid spectrum.amplitude_amperes: must be >= 0"));
        }
        let mut lines = vec![SpectralLine { species: species.clone(), amplitude: sc.amplitude_amperes }];
        if let Some(db) = &sc.dangling_bond {
            let mut s = SpinSpecies::dangling_bond();
            s.g_factor = db.g_factor;
            s.linewidth_field = db.linewidth_tesla.unwrap_or(4.0 * species.linewidth_field);
            in_section("spectrum.dangling_bond", &[("linewidth_field", "linewidth_tesla")], s.validate())?;
            if !(db.amplitude_ratio >= 0.0) {
                return Err(CliError::config("invalid spectrum.dangling_bond.amplitude_ratio: must be >= 0"));
            }
            lines.push(SpectralLine { species: s, amplitude: db.amplitude_ratio * sc.amplitude_amperes });
        }
        Ok(lines)
    }

    pub fn sweep(&self) -> CliResult<SweepSpec> {
        let sc = &self.spectrum;
        let sweep =
            SweepSpec { b_start: sc.b_start_tesla, b_stop: sc.b_stop_tesla, n_points: sc.n_points, lineshape: sc.lineshape };
        in_section(
            "spectrum",
            &[("b_start", "b_start_tesla"), ("b_start/b_stop", "b_start_tesla/b_stop_tesla")],
            sweep.validate(),
        )?;
        Ok(sweep)
    }
}

// ------------------------------------------------------------------ args

#[derive(Debug, Parser)]
#[command(name = "spintrap", version, about = "Spin-trap EDMR simulator for donor spins in silicon")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides ensemble.rng_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; commands with several traces derive one name per trace.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for ensemble runs (results do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct PhysicsOverrides {
    /// Static field in T (disables line tuning).
    #[arg(long)]
    pub b0: Option<f64>,
    /// Spin-lattice time in s.
    #[arg(long)]
    pub t1: Option<f64>,
    /// Phase-memory time in s.
    #[arg(long)]
    pub t2: Option<f64>,
    /// Spectral-diffusion time in s.
    #[arg(long)]
    pub ts: Option<f64>,
    /// In [-1, 1]; negative makes the high-field line the larger one.
    #[arg(long)]
    pub nuclear_polarization: Option<f64>,
    /// Inhomogeneous linewidth in T.
    #[arg(long)]
    pub linewidth: Option<f64>,
    /// Static-offset samples in the ensemble.
    #[arg(long)]
    pub n_static: Option<usize>,
    /// Noise trajectories per static sample.
    #[arg(long)]
    pub n_noise: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Field-swept spectrum.
    Spectrum {
        /// Sweep start in T.
        #[arg(long)]
        b_start: Option<f64>,
        /// Sweep end in T.
        #[arg(long)]
        b_stop: Option<f64>,
        #[arg(long)]
        n_points: Option<usize>,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Current transient after one pulse.
    Transient {
        /// Flipped donor fraction, bypassing the pulse simulation.
        #[arg(long)]
        flip_fraction: Option<f64>,
        #[arg(long)]
        pulse_angle_deg: Option<f64>,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Runs a pulse-sequence file.
    Run {
        /// Sequence file (.seq).
        sequence: PathBuf,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Transient nutation (mz against pulse length).
    Nutation {
        /// Longest pulse in s.
        #[arg(long)]
        max_duration: Option<f64>,
        #[arg(long)]
        n_points: Option<usize>,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Fits one or more CSV traces (concatenated) and prints a JSON report.
    Fit {
        /// CSV traces written by the other commands.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// exp_decay, inversion_recovery, echo_cubic or trap_biexp.
        #[arg(long)]
        model: ModelId,
        /// Second model for an information-criterion comparison.
        #[arg(long)]
        compare: Option<ModelId>,
        /// Fit a constant baseline (echo_cubic).
        #[arg(long)]
        free_baseline: bool,
        /// Accept traces produced by different configurations.
        #[arg(long)]
        force: bool,
    },
}

impl PhysicsOverrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(b) = self.b0 {
            c.environment.b0_tesla = Some(b);
            c.environment.tune_to = None;
        }
        if let Some(v) = self.t1 {
            c.relaxation.t1_seconds = v;
        }
        if let Some(v) = self.t2 {
            c.relaxation.t2_seconds = v;
        }
        if let Some(v) = self.ts {
            c.relaxation.ts_seconds = Some(v);
        }
        if let Some(v) = self.nuclear_polarization {
            c.species.nuclear_polarization = v;
        }
        if let Some(v) = self.linewidth {
            c.species.linewidth_tesla = v;
        }
        if let Some(v) = self.n_static {
            c.ensemble.n_static = v;
        }
        if let Some(v) = self.n_noise {
            c.ensemble.n_noise = v;
        }
    }
}

// -------------------------------------------------------------- commands

/// What a command produced; written by [`execute`].
#[derive(Debug)]
pub enum Output {
    Traces(Vec<(String, SignalTrace)>),
    Json(String),
}

/// Loads the config and applies overrides common to all commands.
fn base_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut c = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        c.ensemble.rng_seed = seed;
    }
    Ok(c)
}

fn stamp(trace: SignalTrace, command: &str, config: &RunConfig) -> SignalTrace {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    trace
        .with_meta("command", command)
        .with_meta("config_hash", config.hash())
        .with_meta("rng_seed", config.ensemble.rng_seed)
        .with_meta("version", env!("CARGO_PKG_VERSION"))
        .with_meta(TIMESTAMP_KEY, now)
}

pub fn cmd_spectrum(config: &RunConfig) -> CliResult<SignalTrace> {
    let sweep = config.sweep()?;
    let lines = config.spectral_lines()?;
    let env = Environment {
        static_field_b0: sweep.b_start,
        temperature: config.environment.temperature_kelvin,
        mw_frequency: config.environment.mw_frequency_hz,
        rabi_frequency: config.environment.rabi_frequency_hz,
    };
    let trace = spectrum::simulate_field_sweep(&lines, &env, &sweep).map_err(classify)?;
    Ok(stamp(trace, "spectrum", config))
}

/// Flip fraction left by one +x pulse of `angle` on the configured ensemble.
pub fn pulse_flip_fraction(r: &Resolved, angle: f64) -> CliResult<f64> {
    let duration = angle.abs() / r.env.rabi_rate();
    let tl = single_pulse_timeline(angle, Phase::PlusX, duration, Channel::Mz);
    let out = blochsim::run_timeline(&tl, &r.env, &r.species, &r.relax, &r.ensemble, None).map_err(classify)?;
    Ok(trapdyn::flip_fraction_from_state(out.acquisitions[0].value, out.equilibrium_mz))
}

pub fn cmd_transient(config: &RunConfig) -> CliResult<SignalTrace> {
    let r = config.resolve()?;
    let tc = &config.transient;
    if !(tc.t_stop_seconds > 0.0 && tc.t_stop_seconds.is_finite()) {
        return Err(CliError::config("invalid transient.t_stop_seconds: must be finite and > 0"));
    }
    if tc.n_points < 2 {
        return Err(CliError::config("invalid transient.n_points: must be >= 2"));
    }
    let flip = match tc.flip_fraction {
        Some(f) if (0.0..=1.0).contains(&f) => f,
        Some(_) => return Err(CliError::config("invalid transient.flip_fraction: must lie in [0, 1]")),
        None => pulse_flip_fraction(&r, tc.pulse_angle_degrees.to_radians())?,
    };
    let n = tc.n_points - 1;
    let grid: Vec<f64> = (0..=n).map(|i| tc.t_stop_seconds * i as f64 / n as f64).collect();
    let trace = trapdyn::transient_response(flip, &r.trap, &grid).map_err(classify)?;
    Ok(stamp(trace, "transient", config).with_meta("flip_fraction", flip))
}

pub fn cmd_nutation(config: &RunConfig) -> CliResult<SignalTrace> {
    let r = config.resolve()?;
    let nc = &config.nutation;
    if !(nc.max_duration_seconds > 0.0 && nc.max_duration_seconds.is_finite()) {
        return Err(CliError::config("invalid nutation.max_duration_seconds: must be finite and > 0"));
    }
    if nc.n_points < 2 {
        return Err(CliError::config("invalid nutation.n_points: must be >= 2"));
    }
    let n = nc.n_points - 1;
    let grid: Vec<f64> = (0..=n).map(|i| nc.max_duration_seconds * i as f64 / n as f64).collect();
    let trace = blochsim::nutation_curve(&grid, &r.env, &r.species, &r.relax, &r.ensemble).map_err(classify)?;
    Ok(stamp(trace, "nutation", config))
}

fn channel_units(c: Channel) -> &'static str {
    match c {
        Channel::Echo | Channel::Mz => "dimensionless",
        Channel::Charge => "C",
    }
}

/// Runs a sequence source. With a sweep there is one trace per acquire
/// statement against the sweep value; without, one trace per channel
/// against acquisition time. Names are suffixes for the output file.
pub fn cmd_run(source: &str, config: &RunConfig) -> CliResult<Vec<(String, SignalTrace)>> {
    let r = config.resolve()?;
    let ast = seqlang::parse(source).map_err(|e| classify(e.into()))?;
    let timelines = seqlang::compile_sweep(&ast, &r.env).map_err(|e| classify(e.into()))?;
    let seq_hash = Sha256::digest(source.as_bytes()).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });

    let mut results = Vec::with_capacity(timelines.len());
    for (value, tl) in &timelines {
        let res = blochsim::run_timeline(tl, &r.env, &r.species, &r.relax, &r.ensemble, Some(&r.trap)).map_err(classify)?;
        results.push((*value, res));
    }

    let finish = |trace: SignalTrace, channel: Channel, max_err: f64| {
        stamp(trace, "run", config)
            .with_meta("sequence_hash", &seq_hash)
            .with_meta("channel", channel.as_str())
            .with_meta("max_std_err", format!("{max_err:.3e}"))
    };

    let mut out = Vec::new();
    if let Some(sweep) = ast.sweep() {
        let n_acq = results[0].1.acquisitions.len();
        for k in 0..n_acq {
            let channel = results[0].1.acquisitions[k].channel;
            let x: Vec<f64> = results.iter().map(|(v, _)| v.expect("swept")).collect();
            let y: Vec<f64> = results.iter().map(|(_, res)| res.acquisitions[k].value).collect();
            let max_err = results.iter().map(|(_, res)| res.acquisitions[k].std_err).fold(0.0, f64::max);
            let trace = SignalTrace::new(AxisKind::Tau, x, y, channel_units(channel)).map_err(classify)?;
            let trace = finish(trace, channel, max_err).with_meta("sweep", &sweep.name);
            let name = if n_acq == 1 { String::new() } else { format!("acq{}_{}", k + 1, channel.as_str()) };
            out.push((name, trace));
        }
    } else {
        let acq = &results[0].1.acquisitions;
        let mut channels: Vec<Channel> = Vec::new();
        for a in acq {
            if !channels.contains(&a.channel) {
                channels.push(a.channel);
            }
        }
        for &channel in &channels {
            let picked: Vec<_> = acq.iter().filter(|a| a.channel == channel).collect();
            let x = picked.iter().map(|a| a.time).collect();
            let y = picked.iter().map(|a| a.value).collect();
            let max_err = picked.iter().map(|a| a.std_err).fold(0.0, f64::max);
            let trace = SignalTrace::new(AxisKind::Time, x, y, channel_units(channel)).map_err(|e| CliError {
                code: EXIT_SEQUENCE,
                message: format!("{channel:?} acquisitions must have distinct times: {e}"),
            })?;
            let name = if channels.len() == 1 { String::new() } else { channel.as_str().to_string() };
            out.push((name, finish(trace, channel, max_err)));
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub fit: fitkit::FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
    pub config_hash: Option<String>,
    pub inputs: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct ComparisonReport {
    pub preferred: ModelId,
    pub delta_criterion: f64,
    pub criteria: Vec<(ModelId, f64)>,
    pub other_fit: fitkit::FitResult,
}

/// Concatenates traces, refusing mixed configuration hashes unless `force`.
pub fn merge_traces(traces: &[(String, SignalTrace)], force: bool) -> CliResult<(SignalTrace, Option<String>)> {
    let hashes: Vec<Option<&str>> = traces.iter().map(|(_, t)| t.meta("config_hash")).collect();
    let first = hashes[0];
    if !force && hashes.iter().any(|h| *h != first) {
        let listing: Vec<String> = traces.iter().zip(&hashes).map(|((n, _), h)| format!("{n}={}", h.unwrap_or("none"))).collect();
        return Err(CliError::data(format!("inputs have different config hashes ({}); use --force", listing.join(", "))));
    }
    let mut pts: Vec<(f64, f64)> = traces.iter().flat_map(|(_, t)| t.x.iter().copied().zip(t.y.iter().copied())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (axis, units) = (traces[0].1.axis_kind, traces[0].1.units.clone());
    let merged = SignalTrace::new(axis, pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect(), units)
        .map_err(|e| CliError::data(format!("cannot concatenate inputs: {e}")))?;
    let hash = if hashes.iter().all(|h| *h == first) { first.map(str::to_string) } else { None };
    Ok((merged, hash))
}

pub fn cmd_fit(
    traces: &[(String, SignalTrace)],
    model: ModelId,
    compare: Option<ModelId>,
    free_baseline: bool,
    force: bool,
) -> CliResult<FitReport> {
    let (trace, config_hash) = merge_traces(traces, force)?;
    let opts = FitOptions { initial_guess: None, free_baseline };
    let fit = fitkit::fit(model, &trace, &opts).map_err(classify)?;
    let comparison = match compare {
        Some(other) => {
            let other_fit = fitkit::fit(other, &trace, &opts).map_err(classify)?;
            let ModelComparison { preferred, delta_criterion, criterion_a, criterion_b, .. } =
                fitkit::compare_fits(fit.clone(), other_fit.clone()).map_err(classify)?;
            Some(ComparisonReport {
                preferred,
                delta_criterion,
                criteria: vec![(model, criterion_a), (other, criterion_b)],
                other_fit,
            })
        }
        None => None,
    };
    Ok(FitReport { fit, comparison, config_hash, inputs: traces.iter().map(|(n, _)| n.clone()).collect() })
}

fn read_csv(path: &Path) -> CliResult<SignalTrace> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    SignalTrace::from_csv(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// `out.csv` + `acq1_echo` → `out_acq1_echo.csv`.
pub fn derived_path(base: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    base.with_file_name(name)
}

/// Runs a parsed command and returns what it produced.
pub fn execute(cli: &Cli) -> CliResult<Output> {
    let mut config = base_config(&cli.global)?;
    let run = |config: &RunConfig| -> CliResult<Output> {
        match &cli.command {
            Command::Spectrum { .. } => Ok(Output::Traces(vec![(String::new(), cmd_spectrum(config)?)])),
            Command::Transient { .. } => Ok(Output::Traces(vec![(String::new(), cmd_transient(config)?)])),
            Command::Nutation { .. } => Ok(Output::Traces(vec![(String::new(), cmd_nutation(config)?)])),
            Command::Run { sequence, .. } => {
                let source = fs::read_to_string(sequence)
                    .map_err(|e| CliError { code: EXIT_SEQUENCE, message: format!("{}: {e}", sequence.display()) })?;
                cmd_run(&source, config)
                    .map(Output::Traces)
                    .map_err(|e| CliError { message: format!("{}: {}", sequence.display(), e.message), ..e })
            }
            Command::Fit { inputs, model, compare, free_baseline, force } => {
                let traces =
                    inputs.iter().map(|p| read_csv(p).map(|t| (p.display().to_string(), t))).collect::<CliResult<Vec<_>>>()?;
                let report = cmd_fit(&traces, *model, *compare, *free_baseline, *force)?;
                Ok(Output::Json(serde_json::to_string_pretty(&report).expect("report serializes")))
            }
        }
    };
    match &cli.command {
        Command::Spectrum { b_start, b_stop, n_points, physics } => {
            physics.apply(&mut config);
            if let Some(v) = b_start {
                config.spectrum.b_start_tesla = *v;
            }
            if let Some(v) = b_stop {
                config.spectrum.b_stop_tesla = *v;
            }
            if let Some(v) = n_points {
                config.spectrum.n_points = *v;
            }
        }
        Command::Transient { flip_fraction, pulse_angle_deg, physics } => {
            physics.apply(&mut config);
            if flip_fraction.is_some() {
                config.transient.flip_fraction = *flip_fraction;
            }
            if let Some(v) = pulse_angle_deg {
                config.transient.pulse_angle_degrees = *v;
            }
        }
        Command::Nutation { max_duration, n_points, physics } => {
            physics.apply(&mut config);
            if let Some(v) = max_duration {
                config.nutation.max_duration_seconds = *v;
            }
            if let Some(v) = n_points {
                config.nutation.n_points = *v;
            }
        }
        Command::Run { physics, .. } => physics.apply(&mut config),
        Command::Fit { .. } => {}
    }
    match cli.global.workers {
        Some(0) => Err(CliError::config("invalid --workers: must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config(format!("invalid --workers: {e}")))?;
            pool.install(|| run(&config))
        }
        None => run(&config),
    }
    .and_then(|out| write_output(out, cli.global.out.as_deref().or(config.output_path.as_deref())))
}

fn write_output(out: Output, path: Option<&Path>) -> CliResult<Output> {
    match (&out, path) {
        (Output::Traces(traces), Some(p)) => {
            for (suffix, t) in traces {
                let target = derived_path(p, suffix);
                fs::write(&target, t.to_csv()).map_err(|e| CliError::io(&target, e))?;
            }
        }
        (Output::Traces(traces), None) => {
            if traces.len() > 1 {
                return Err(CliError::config(format!("command produced {} traces; give --out", traces.len())));
            }
            to_stdout(&traces[0].1.to_csv())?;
        }
        (Output::Json(json), Some(p)) => fs::write(p, format!("{json}\n")).map_err(|e| CliError::io(p, e))?,
        (Output::Json(json), None) => to_stdout(&format!("{json}\n"))?,
    }
    Ok(out)
}

/// A closed pipe (e.g. `| head`) is not an error.
fn to_stdout(text: &str) -> CliResult<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

/// Entry point: parses `args`, runs, reports errors on stderr and returns
/// the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
