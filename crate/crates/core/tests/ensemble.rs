use spintrap::blochsim::{echo_envelope_analytic, nutation_curve, run_timeline, EnsembleSpec, RelaxationParams};
use spintrap::seqlang::{compile, parse, Timeline};
use spintrap::spincore::{Environment, NuclearProjection, SpinSpecies};

/// Phosphorus with the line narrowed far below the drive strength and the
/// field on the high-field line, so pulses act as ideal rotations.
fn narrow_setup() -> (SpinSpecies, Environment, EnsembleSpec) {
    let mut s = SpinSpecies::phosphorus();
    s.linewidth_field = 1.2e-6;
    let env = Environment::default().tuned_to(&s, NuclearProjection::Down).unwrap();
    (s, env, EnsembleSpec::new(1000, 100, 7).with_weights(vec![0.0, 1.0]))
}

fn hahn(tau_us: u32, env: &Environment) -> Timeline {
    let src = format!("pulse pi/2 +x\ndelay {tau_us}us\npulse pi +x\ndelay {tau_us}us\nacquire echo\n");
    compile(&parse(&src).unwrap(), env, None).unwrap()
}

#[test]
fn echo_matches_cubic_envelope() {
    let (s, env, ens) = narrow_setup();
    let relax = RelaxationParams::default();
    for tau in [40, 80, 120] {
        let r = run_timeline(&hahn(tau, &env), &env, &s, &relax, &ens, None).unwrap();
        let a = r.acquisitions[0];
        let want = echo_envelope_analytic(tau as f64 * 1e-6, &relax);
        assert!((a.value - want).abs() < 3.0 * a.std_err + 1e-3, "tau {tau}us: {} ± {} vs {want}", a.value, a.std_err);
    }
    assert!((echo_envelope_analytic(80e-6, &relax) - 0.2205).abs() < 5e-5);
}

#[test]
fn free_induction_decays_as_quartic_cube() {
    let (mut s, env, ens) = narrow_setup();
    s.linewidth_field = 1e-12;
    let relax = RelaxationParams { t1: f64::INFINITY, t2: f64::INFINITY, t_s: 200e-6 };
    for t in [60, 100, 140] {
        let src = format!("pulse pi/2 +x\ndelay {t}us\nacquire echo\n");
        let tl = compile(&parse(&src).unwrap(), &env, None).unwrap();
        let a = run_timeline(&tl, &env, &s, &relax, &ens, None).unwrap().acquisitions[0];
        let x = t as f64 * 1e-6 / 200e-6;
        let want = (-4.0 * x.powi(3)).exp();
        assert!((a.value - want).abs() < 3.0 * a.std_err + 1e-3, "t {t}us: {} ± {} vs {want}", a.value, a.std_err);
    }
}

#[test]
fn echo_refocuses_static_spread() {
    let relax = RelaxationParams { t1: 1.0, t2: 1e-3, t_s: f64::INFINITY };
    let mut values = Vec::new();
    for width in [1e-7, 5e-7, 2e-6] {
        let (mut s, env, _) = narrow_setup();
        s.linewidth_field = width;
        let ens = EnsembleSpec::new(400, 1, 3).with_weights(vec![0.0, 1.0]);
        let a = run_timeline(&hahn(50, &env), &env, &s, &relax, &ens, None).unwrap().acquisitions[0];
        values.push(a.value);
    }
    let want = (-100e-6_f64 / 1e-3).exp();
    for v in &values {
        assert!((v - want).abs() < 0.02, "{values:?} vs {want}");
    }
}

#[test]
fn nutation_first_minimum_at_pi_pulse() {
    let (s, env, _) = narrow_setup();
    let ens = EnsembleSpec::new(64, 1, 1).with_weights(vec![0.0, 1.0]);
    let relax = RelaxationParams::default();
    let durations: Vec<f64> = (0..=100).map(|i| i as f64 * 10e-9).collect();
    let tr = nutation_curve(&durations, &env, &s, &relax, &ens).unwrap();
    let (imin, _) = tr.y.iter().enumerate().take(70).fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    assert_eq!(imin, 48);
    let crossing = tr.y.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0).unwrap();
    assert!((crossing as i64 - 24).abs() <= 1, "{crossing}");
}

#[test]
fn rabi_oscillations_decay_with_inhomogeneity() {
    let s = SpinSpecies::phosphorus();
    let env = Environment::default().tuned_to(&s, NuclearProjection::Down).unwrap();
    let ens = EnsembleSpec::new(512, 1, 1).with_weights(vec![0.0, 1.0]);
    let relax = RelaxationParams::default();
    let durations: Vec<f64> = (0..=400).map(|i| i as f64 * 25e-9).collect();
    let tr = nutation_curve(&durations, &env, &s, &relax, &ens).unwrap();
    let swing = |a: usize, b: usize| {
        let (lo, hi) = tr.y[a..b].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        (hi - lo) / 2.0
    };
    let (imin, _) = tr.y.iter().enumerate().take(30).fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    assert!((16..=20).contains(&imin), "{imin}");
    let first = swing(0, 40);
    let later = swing(160, 200);
    assert!(later < 0.5 * first, "amplitude {first} -> {later}");
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let (s, env, _) = narrow_setup();
    let ens = EnsembleSpec::new(37, 5, 99);
    let relax = RelaxationParams::default();
    let tl = hahn(30, &env);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_timeline(&tl, &env, &s, &relax, &ens, None).unwrap())
    };
    let a = run(1);
    for threads in [2, 3, 8] {
        let b = run(threads);
        assert_eq!(a.acquisitions[0].value.to_bits(), b.acquisitions[0].value.to_bits());
        assert_eq!(a.acquisitions[0].std_err.to_bits(), b.acquisitions[0].std_err.to_bits());
    }
}
