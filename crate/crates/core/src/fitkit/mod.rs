//! Least-squares relaxometry fits.
//!
//! Time constants and rates are optimized as logarithms so they stay
//! positive; amplitudes are optimized after dividing the data by its
//! largest magnitude. Each fit runs a Nelder–Mead simplex from eight
//! decade-spaced starting points, keeps the lowest residual (ties go to the
//! earlier start) and re-polishes it from a fresh simplex.

mod simplex;

pub use simplex::{minimize, SimplexOptions, SimplexResult};

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::SignalTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    /// a·exp(-2x/T₂): the T_S → ∞ limit of `echo_cubic`.
    ExpDecay,
    /// a·(1 - 2·exp(-x/T₁)).
    InversionRecovery,
    /// a·exp(-2x/T₂ - 8x³/T_S³) + b, with b held at 0 unless freed.
    EchoCubic,
    /// -a·(exp(-k_e·x) - exp(-k_c·x)).
    TrapBiexp,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::ExpDecay, ModelId::InversionRecovery, ModelId::EchoCubic, ModelId::TrapBiexp];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::ExpDecay => "exp_decay",
            ModelId::InversionRecovery => "inversion_recovery",
            ModelId::EchoCubic => "echo_cubic",
            ModelId::TrapBiexp => "trap_biexp",
        }
    }

    fn nonlinear_names(self) -> &'static [&'static str] {
        match self {
            ModelId::ExpDecay => &["t2"],
            ModelId::InversionRecovery => &["t1"],
            ModelId::EchoCubic => &["t2", "t_s"],
            ModelId::TrapBiexp => &["k_e", "k_c"],
        }
    }

    fn is_rate(self) -> bool {
        self == ModelId::TrapBiexp
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::Usage(format!("unknown model '{s}' (expected exp_decay, inversion_recovery, echo_cubic or trap_biexp)"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitOptions {
    /// Natural-unit starting values for the model's nonlinear parameters
    /// (time constants in s, rates in 1/s); replaces the eight default
    /// starts with one.
    pub initial_guess: Option<[f64; 2]>,
    /// Fit a constant baseline (echo_cubic only).
    pub free_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub uncertainty: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_id: ModelId,
    pub params: Vec<FitParam>,
    pub rss: f64,
    pub n_points: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.uncertainty)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Evaluates the fitted model at `x`.
    pub fn predict(&self, x: f64) -> f64 {
        let v: Vec<f64> = self.params.iter().map(|p| p.value).collect();
        eval_natural(self.model_id, &v, x)
    }
}

/// Model value from natural parameters `[a, c1, (c2), (b)]`.
fn eval_natural(model: ModelId, p: &[f64], x: f64) -> f64 {
    match model {
        ModelId::ExpDecay => p[0] * (-2.0 * x / p[1]).exp(),
        ModelId::InversionRecovery => p[0] * (1.0 - 2.0 * (-x / p[1]).exp()),
        ModelId::EchoCubic => {
            let b = p.get(3).copied().unwrap_or(0.0);
            p[0] * (-2.0 * x / p[1] - 8.0 * (x / p[2]).powi(3)).exp() + b
        }
        ModelId::TrapBiexp => -p[0] * ((-p[1] * x).exp() - (-p[2] * x).exp()),
    }
}

/// Evaluates a model at natural parameters (public for data generation).
pub fn model_value(model: ModelId, params: &[f64], x: f64) -> f64 {
    eval_natural(model, params, x)
}

struct Problem<'a> {
    model: ModelId,
    x: &'a [f64],
    /// data divided by `scale`
    y: Vec<f64>,
    scale: f64,
    free_baseline: bool,
    /// Σy² of the scaled data; the objective is rss/ss so it is O(1)
    ss: f64,
}

impl Problem<'_> {
    fn n_nonlinear(&self) -> usize {
        self.model.nonlinear_names().len()
    }

    /// θ = [a_scaled, ln c1, (ln c2), (b_scaled)] → natural parameters.
    fn natural(&self, theta: &[f64]) -> Vec<f64> {
        let mut p = vec![theta[0] * self.scale];
        p.extend(theta[1..=self.n_nonlinear()].iter().map(|v| v.exp()));
        if self.free_baseline {
            p.push(theta[self.n_nonlinear() + 1] * self.scale);
        }
        p
    }

    fn scaled_rss(&self, theta: &[f64]) -> f64 {
        let mut p = vec![theta[0]];
        p.extend(theta[1..=self.n_nonlinear()].iter().map(|v| v.exp()));
        if self.free_baseline {
            p.push(theta[self.n_nonlinear() + 1]);
        }
        self.x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| {
                let r = y - eval_natural(self.model, &p, x);
                r * r
            })
            .sum()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        self.scaled_rss(theta) / self.ss
    }

    /// Linear least-squares amplitude for fixed nonlinear parameters.
    fn start_from(&self, consts: &[f64]) -> Vec<f64> {
        let mut p = vec![1.0];
        p.extend_from_slice(consts);
        if self.free_baseline {
            p.push(0.0);
        }
        let (mut sfy, mut sff) = (0.0, 0.0);
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let f = eval_natural(self.model, &p, x);
            sfy += f * y;
            sff += f * f;
        }
        let a = if sff > 0.0 { sfy / sff } else { 1.0 };
        let mut theta = vec![a];
        theta.extend(consts.iter().map(|c| c.ln()));
        if self.free_baseline {
            theta.push(0.0);
        }
        theta
    }

    fn starts(&self, guess: Option<[f64; 2]>) -> Vec<Vec<f64>> {
        let k = self.n_nonlinear();
        if let Some(g) = guess {
            return vec![self.start_from(&g[..k])];
        }
        let x_char = self.x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (0..8)
            .map(|i| {
                let t = x_char * 10f64.powf(-2.0 + 0.5 * i as f64);
                let consts: Vec<f64> = match self.model {
                    ModelId::TrapBiexp => vec![1.0 / (10.0 * t), 1.0 / t],
                    _ => vec![t; k],
                };
                self.start_from(&consts)
            })
            .collect()
    }
}

/// Fits `model` to `trace` by minimizing Σ(y - model)².
pub fn fit(model: ModelId, trace: &SignalTrace, opts: &FitOptions) -> Result<FitResult> {
    let free_baseline = opts.free_baseline && model == ModelId::EchoCubic;
    let n_params = 1 + model.nonlinear_names().len() + usize::from(free_baseline);
    let n = trace.len();
    if n < 2 + n_params {
        return Err(Error::Fit(format!("{model} needs at least {} points, trace has {n}", 2 + n_params)));
    }
    let first = trace.y[0];
    if trace.y.iter().all(|&v| v == first) {
        return Err(Error::Fit("degenerate data: y is constant".into()));
    }
    let scale = trace.y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let y: Vec<f64> = trace.y.iter().map(|v| v / scale).collect();
    let ss = y.iter().map(|v| v * v).sum::<f64>();
    let problem = Problem { model, x: &trace.x, y, scale, free_baseline, ss };

    let mut steps = vec![0.1];
    steps.extend(std::iter::repeat_n(0.5, problem.n_nonlinear()));
    if free_baseline {
        steps.push(0.05);
    }
    let simplex_opts = SimplexOptions { steps, ..Default::default() };
    let objective = |t: &[f64]| problem.objective(t);

    let mut best: Option<SimplexResult> = None;
    let mut iterations = 0;
    for start in problem.starts(opts.initial_guess) {
        let r = minimize(objective, &start, &simplex_opts);
        iterations += r.iterations;
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    // polish from a fresh simplex until the optimum stops moving
    for _ in 0..4 {
        let polish_opts = SimplexOptions { steps: simplex_opts.steps.iter().map(|s| s * 0.01).collect(), ..simplex_opts.clone() };
        let r = minimize(objective, &best.x, &polish_opts);
        iterations += r.iterations;
        let improved = r.f < best.f;
        let done = r.converged && !(r.f < best.f * (1.0 - 1e-10));
        if improved {
            best = SimplexResult { converged: r.converged, ..r };
        } else {
            best.converged = best.converged && r.converged;
        }
        if done {
            best.converged = true;
            break;
        }
    }

    let mut natural = problem.natural(&best.x);
    if model == ModelId::TrapBiexp && natural[1] > natural[2] {
        // keep k_c as the faster rate
        natural.swap(1, 2);
        natural[0] = -natural[0];
    }
    let rss: f64 = trace.x.iter().zip(&trace.y).map(|(&x, &y)| (y - eval_natural(model, &natural, x)).powi(2)).sum();
    let sigmas = uncertainties(model, &trace.x, &natural, rss);

    let const_unit = if model.is_rate() { "1/s" } else { "s" };
    let mut names: Vec<(&str, &str)> = vec![("a", trace.units.as_str())];
    names.extend(model.nonlinear_names().iter().map(|n| (*n, const_unit)));
    if free_baseline {
        names.push(("b", trace.units.as_str()));
    }
    let params = names
        .into_iter()
        .zip(natural.iter().zip(&sigmas))
        .map(|((name, unit), (&value, &uncertainty))| FitParam {
            name: name.to_string(),
            value,
            uncertainty,
            unit: unit.to_string(),
        })
        .collect();

    Ok(FitResult { model_id: model, params, rss, n_points: n, converged: best.converged, iterations })
}

/// 1σ from the Gauss–Newton curvature JᵀJ of the residuals (finite
/// differences in natural parameters), scaled by rss/(n - k).
fn uncertainties(model: ModelId, x: &[f64], p: &[f64], rss: f64) -> Vec<f64> {
    let n = x.len();
    let k = p.len();
    let mut jac = DMatrix::<f64>::zeros(n, k);
    for j in 0..k {
        let h = 1e-6 * p[j].abs().max(1e-300);
        let mut up = p.to_vec();
        let mut dn = p.to_vec();
        up[j] += h;
        dn[j] -= h;
        for (i, &xi) in x.iter().enumerate() {
            jac[(i, j)] = (eval_natural(model, &up, xi) - eval_natural(model, &dn, xi)) / (2.0 * h);
        }
    }
    let s2 = rss / (n - k) as f64;
    let jtj = jac.transpose() * &jac;
    match jtj.try_inverse() {
        Some(cov) => (0..k).map(|j| (s2 * cov[(j, j)]).max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub preferred: ModelId,
    /// Criterion of the other model minus that of the preferred one (≥ 0).
    pub delta_criterion: f64,
    pub criterion_a: f64,
    pub criterion_b: f64,
    pub fit_a: FitResult,
    pub fit_b: FitResult,
}

/// Small-sample Akaike criterion n·ln(rss/n) + 2k·n/(n - k - 1).
pub fn information_criterion(rss: f64, n: usize, k: usize) -> f64 {
    let n_f = n as f64;
    let k_f = k as f64;
    n_f * (rss.max(f64::MIN_POSITIVE) / n_f).ln() + 2.0 * k_f * n_f / (n_f - k_f - 1.0)
}

pub fn compare_fits(fit_a: FitResult, fit_b: FitResult) -> Result<ModelComparison> {
    if !fit_a.converged || !fit_b.converged {
        let which = if !fit_a.converged { fit_a.model_id } else { fit_b.model_id };
        return Err(Error::Fit(format!("{which} fit did not converge; cannot compare")));
    }
    let ca = information_criterion(fit_a.rss, fit_a.n_points, fit_a.n_params());
    let cb = information_criterion(fit_b.rss, fit_b.n_points, fit_b.n_params());
    let (preferred, delta) = if cb < ca { (fit_b.model_id, ca - cb) } else { (fit_a.model_id, cb - ca) };
    Ok(ModelComparison { preferred, delta_criterion: delta, criterion_a: ca, criterion_b: cb, fit_a, fit_b })
}

pub fn compare_models(trace: &SignalTrace, model_a: ModelId, model_b: ModelId) -> Result<ModelComparison> {
    let fa = fit(model_a, trace, &FitOptions::default())?;
    let fb = fit(model_b, trace, &FitOptions::default())?;
    compare_fits(fa, fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::AxisKind;

    fn trace_of(model: ModelId, p: &[f64], x: Vec<f64>) -> SignalTrace {
        let y = x.iter().map(|&v| eval_natural(model, p, v)).collect();
        SignalTrace::new(AxisKind::Tau, x, y, "arb").unwrap()
    }

    fn tau_grid() -> Vec<f64> {
        (0..25).map(|i| 10e-6 + 10e-6 * i as f64).collect()
    }

    #[test]
    fn echo_cubic_recovers_generating_parameters() {
        let tr = trace_of(ModelId::EchoCubic, &[1.0, 160e-6, 200e-6], tau_grid());
        let f = fit(ModelId::EchoCubic, &tr, &FitOptions::default()).unwrap();
        assert!(f.converged);
        assert!((f.get("t2").unwrap() / 160e-6 - 1.0).abs() < 1e-3, "{f:?}");
        assert!((f.get("t_s").unwrap() / 200e-6 - 1.0).abs() < 1e-3, "{f:?}");
        assert!((f.get("a").unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exp_only_fit_of_cubic_echo_is_shorter() {
        let tr = trace_of(ModelId::EchoCubic, &[1.0, 160e-6, 200e-6], tau_grid());
        let f = fit(ModelId::ExpDecay, &tr, &FitOptions::default()).unwrap();
        let t = f.get("t2").unwrap();
        assert!((88e-6..=128e-6).contains(&t), "{t}");
    }

    #[test]
    fn degenerate_and_short_data() {
        let flat = SignalTrace::new(AxisKind::Tau, tau_grid(), vec![0.5; 25], "arb").unwrap();
        assert!(fit(ModelId::ExpDecay, &flat, &FitOptions::default()).is_err());
        let short = trace_of(ModelId::EchoCubic, &[1.0, 1e-4, 1e-4], vec![1e-5, 2e-5, 3e-5, 4e-5]);
        assert!(fit(ModelId::EchoCubic, &short, &FitOptions::default()).is_err());
    }

    #[test]
    fn trap_biexp_orders_rates() {
        let x: Vec<f64> = (1..=60).map(|i| i as f64 * 2e-4).collect();
        let tr = trace_of(ModelId::TrapBiexp, &[2e-10, 400.0, 1e4], x);
        let f = fit(ModelId::TrapBiexp, &tr, &FitOptions::default()).unwrap();
        assert!((f.get("k_e").unwrap() / 400.0 - 1.0).abs() < 1e-3, "{f:?}");
        assert!((f.get("k_c").unwrap() / 1e4 - 1.0).abs() < 1e-3, "{f:?}");
        assert!(f.get("a").unwrap() > 0.0);
    }

    #[test]
    fn equal_fits_compare_to_zero_delta() {
        let tr = trace_of(ModelId::ExpDecay, &[1.0, 1e-4], tau_grid());
        let f = fit(ModelId::ExpDecay, &tr, &FitOptions::default()).unwrap();
        let c = compare_fits(f.clone(), f).unwrap();
        assert_eq!(c.delta_criterion, 0.0);
    }

    #[test]
    fn comparison_refuses_unconverged_fits() {
        let tr = trace_of(ModelId::ExpDecay, &[1.0, 1e-4], tau_grid());
        let f = fit(ModelId::ExpDecay, &tr, &FitOptions::default()).unwrap();
        let bad = FitResult { converged: false, ..f.clone() };
        assert!(compare_fits(bad, f).is_err());
    }

    #[test]
    fn model_ids_parse() {
        for m in ModelId::ALL {
            assert_eq!(m.as_str().parse::<ModelId>().unwrap(), m);
        }
        assert!("gauss".parse::<ModelId>().is_err());
    }
}
