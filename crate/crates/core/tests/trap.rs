use spintrap::fitkit::{fit, FitOptions, ModelId};
use spintrap::trace::{AxisKind, SignalTrace};
use spintrap::trapdyn::{peak_time, simulate_cycles, transient_response, trapped_fraction, TrapParams, TrapState};

/// Forward-Euler integration of flipped → D⁻ → D⁰, step h.
fn brute_force_chain(k_c: f64, k_e: f64, h: f64, t_stop: f64, every: usize) -> Vec<(f64, f64)> {
    let (mut flipped, mut trapped) = (1.0_f64, 0.0_f64);
    let steps = (t_stop / h).round() as usize;
    let mut out = vec![(0.0, 0.0)];
    for i in 1..=steps {
        let capture = k_c * flipped;
        let emission = k_e * trapped;
        flipped -= h * capture;
        trapped += h * (capture - emission);
        if i % every == 0 {
            out.push((i as f64 * h, trapped));
        }
    }
    out
}

#[test]
fn closed_form_matches_brute_force_integration() {
    let (k_c, k_e) = (1e4, 400.0);
    let h = 1.0 / (1000.0 * k_c);
    let samples = brute_force_chain(k_c, k_e, h, 10e-3, 500);
    let peak = trapped_fraction(1.0, k_c, k_e, peak_time(k_c, k_e));
    let worst = samples.iter().map(|&(t, n)| (n - trapped_fraction(1.0, k_c, k_e, t)).abs() / peak).fold(0.0, f64::max);
    assert!(worst < 1e-3, "max deviation {worst:.2e} of peak");
}

#[test]
fn transient_is_never_positive_and_tail_fits_emission() {
    let params = TrapParams::preset();
    let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * 5e-6).collect();
    let tr = transient_response(1.0, &params, &grid).unwrap();
    assert!(tr.y.iter().all(|&v| v <= 0.0));
    let f = fit(ModelId::TrapBiexp, &tr, &FitOptions::default()).unwrap();
    let k_e = f.get("k_e").unwrap();
    assert!((1.0 / k_e - 2.5e-3).abs() < 0.02 * 2.5e-3, "tail {}", 1.0 / k_e);
    assert!((f.get("k_c").unwrap() / params.flipped_capture_rate() - 1.0).abs() < 1e-3);
}

#[test]
fn cycle_model_conserves_donors() {
    let params = TrapParams::preset();
    let start = TrapState { frac_d0_up: 0.7, frac_d0_down: 0.2, frac_dminus: 0.1 };
    let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 50e-6).collect();
    for s in simulate_cycles(start, &params, &grid, 1e-6).unwrap() {
        assert!((s.total() - 1.0).abs() < 1e-12);
        assert!(s.frac_d0_up >= 0.0 && s.frac_d0_down >= 0.0 && s.frac_dminus >= 0.0);
    }
}

/// Late-time log-slope of |mz(t) - mz(∞)| after inverting the steady state.
fn mz_recovery_time(params: &TrapParams) -> f64 {
    let settle =
        simulate_cycles(TrapState { frac_d0_up: 0.0, frac_d0_down: 1.0, frac_dminus: 0.0 }, params, &[0.2], 1e-6).unwrap()[0];
    let inverted = TrapState { frac_d0_up: settle.frac_d0_down, frac_d0_down: settle.frac_d0_up, ..settle };
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 50e-6).collect();
    let states = simulate_cycles(inverted, params, &grid, 1e-6).unwrap();
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&states)
        .filter(|(&t, _)| (2e-3..=15e-3).contains(&t))
        .map(|(&t, s)| (t, (settle.mz() - s.mz()).abs().ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    -sxx / sxy
}

#[test]
fn recovery_follows_slow_eigenvalue_of_cycle() {
    // half of all reemissions land back in the capturable state, so the
    // donor magnetization recovers at the slow eigenvalue of the cycle
    for p_c in [-1.0, -0.968] {
        let params = TrapParams { conduction_polarization: p_c, ..TrapParams::preset() };
        let (k0, k_e) = (params.capture_rate_k0, params.emission_rate);
        let k_u = k0 * (1.0 - p_c) / 2.0;
        let k_d = k0 * (1.0 + p_c) / 2.0;
        // characteristic polynomial of the 3x3 rate matrix, divided by λ
        let b = k_u + k_d + k_e;
        let c = k_u * k_d + k_e * (k_u + k_d) / 2.0;
        let slow = (b - (b * b - 4.0 * c).sqrt()) / 2.0;
        let tau = mz_recovery_time(&params);
        assert!((tau * slow - 1.0).abs() < 1e-3, "p_c {p_c}: {tau} vs {}", 1.0 / slow);
    }
}

#[test]
fn current_and_magnetization_share_the_slow_mode() {
    let params = TrapParams { conduction_polarization: -1.0, ..TrapParams::preset() };
    let start = TrapState { frac_d0_up: 1.0, frac_d0_down: 0.0, frac_dminus: 0.0 };
    let grid: Vec<f64> = (0..=300).map(|i| i as f64 * 50e-6).collect();
    let states = simulate_cycles(start, &params, &grid, 1e-6).unwrap();
    let (x, y): (Vec<f64>, Vec<f64>) =
        grid.iter().zip(&states).filter(|(&t, _)| t >= 2e-3).map(|(&t, s)| (t, -s.frac_dminus)).unzip();
    let tr = SignalTrace::new(AxisKind::Time, x, y, "1").unwrap();
    let f = fit(ModelId::ExpDecay, &tr, &FitOptions::default()).unwrap();
    // exp_decay is exp(-2x/T): T/2 is the e-folding time
    let tau_current = f.get("t2").unwrap() / 2.0;
    let tau_mz = mz_recovery_time(&params);
    assert!((tau_current / tau_mz - 1.0).abs() < 1e-3, "{tau_current} vs {tau_mz}");
}
