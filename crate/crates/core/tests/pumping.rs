use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use spinlab_core::pumping::*;
use spinlab_core::Error;

type C = Complex<f64>;

const GAMMA: f64 = 230.0;
const RF1: f64 = 22.74;

fn gamma() -> AngularRate {
    AngularRate::from_mrad_per_s(GAMMA)
}

fn a1_drive(delta: f64, cyclicity: f64) -> ThreeLevelParams {
    ThreeLevelParams {
        omega_opt: power_to_rabi(7.0, 29.0, gamma()).unwrap(),
        delta: AngularRate::from_mrad_per_s(delta),
        gamma: gamma(),
        cyclicity_e: cyclicity,
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Lindblad generator of the Λ system (↓, ↑, A) acting on column-stacked ρ,
/// embedded as a real 18×18 matrix over (Re ρ, Im ρ).
fn lindblad_real(omega: f64, delta: f64, g_conserve: f64, g_flip: f64) -> DMatrix<f64> {
    let n = 3;
    let mut h = DMatrix::<C>::zeros(n, n);
    h[(2, 2)] = C::new(delta, 0.0);
    h[(2, 0)] = C::new(omega / 2.0, 0.0);
    h[(0, 2)] = C::new(omega / 2.0, 0.0);
    let jump = |to: usize, rate: f64| {
        let mut l = DMatrix::<C>::zeros(n, n);
        l[(to, 2)] = C::new(rate.sqrt(), 0.0);
        l
    };
    let eye = DMatrix::<C>::identity(n, n);
    let i = C::new(0.0, 1.0);
    // vec(A X B) = (Bᵀ ⊗ A) vec(X)
    let mut sup = (eye.kronecker(&h) - h.transpose().kronecker(&eye)) * (-i);
    for l in [jump(0, g_conserve), jump(1, g_flip)] {
        let ld = l.adjoint();
        let ldl = &ld * &l;
        sup += l.conjugate().kronecker(&l)
            - eye.kronecker(&ldl) * C::new(0.5, 0.0)
            - ldl.transpose().kronecker(&eye) * C::new(0.5, 0.0);
    }
    let m = n * n;
    let mut real = DMatrix::zeros(2 * m, 2 * m);
    for r in 0..m {
        for c in 0..m {
            let z = sup[(r, c)];
            real[(r, c)] = z.re;
            real[(r, c + m)] = -z.im;
            real[(r + m, c)] = z.im;
            real[(r + m, c + m)] = z.re;
        }
    }
    real
}

/// Steady-state (ρ_↓↓, ρ_AA) of the closed two-level transition.
fn obe_steady_state(omega: f64, delta: f64) -> (f64, f64) {
    let l = lindblad_real(omega, delta, GAMMA, 0.0);
    // Null space plus the trace condition, solved in the least-squares sense.
    let m = 9;
    let mut a = DMatrix::zeros(2 * m + 1, 2 * m);
    a.view_mut((0, 0), (2 * m, 2 * m)).copy_from(&l);
    for k in [0, 4, 8] {
        a[(2 * m, k)] = 1.0;
    }
    let mut b = DVector::zeros(2 * m + 1);
    b[2 * m] = 1.0;
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    (x[0], x[8])
}

/// Slow decay rate of the bright population (ρ_↓↓ + ρ_AA) under the full
/// master equation, read off the late-time log-slope.
fn obe_slow_rate(omega: f64, delta: f64, lambda: f64, hint: f64) -> f64 {
    let gc = GAMMA * lambda / (1.0 + lambda);
    let l = lindblad_real(omega, delta, gc, GAMMA - gc);
    let w = omega * omega * GAMMA / (4.0 * delta * delta + GAMMA * GAMMA);
    let mut rho0 = DVector::zeros(18);
    rho0[0] = 1.0;
    let bright = |t: f64| {
        let r = (&l * t).exp() * &rho0;
        r[0] + r[8]
    };
    // Well past the coherent transient, which relaxes at ≳ W/2.
    let t1 = 60.0 / w;
    let t2 = t1 + 1.0 / hint;
    (bright(t1) / bright(t2)).ln() / (t2 - t1)
}

#[test]
fn pump_rate_agrees_with_master_equation_steady_state() {
    let omega = power_to_rabi(7.0, 29.0, gamma()).unwrap();
    // Both readings of the detuning, since the check is convention-independent.
    for delta in [0.0, RF1, 2.0 * std::f64::consts::PI * RF1] {
        let w = pump_rate(omega, AngularRate::from_mrad_per_s(delta), gamma())
            .unwrap()
            .mrad_per_s();
        let (down, exc) = obe_steady_state(omega.mrad_per_s(), delta);
        let w_obe = GAMMA * exc / (down - exc);
        assert!(
            (w - w_obe).abs() < 0.05 * w_obe,
            "Δ={delta}: rate model {w}, OBE {w_obe}"
        );
    }
}

#[test]
fn slow_rate_matches_master_equation_in_weak_drive() {
    for omega in [GAMMA / 10.0, GAMMA / 30.0, GAMMA / 100.0] {
        for delta in [0.0, RF1, 100.0] {
            for lambda in [10.0, 100.0, 5988.0] {
                let p = ThreeLevelParams {
                    omega_opt: AngularRate::from_mrad_per_s(omega),
                    delta: AngularRate::from_mrad_per_s(delta),
                    gamma: gamma(),
                    cyclicity_e: lambda,
                };
                let rate = p.slow_rate().unwrap();
                let obe = obe_slow_rate(omega, delta, lambda, rate);
                assert!(
                    (rate - obe).abs() < 0.05 * obe,
                    "Ω={omega} Δ={delta} Λ={lambda}: {rate} vs {obe}"
                );
            }
        }
    }
}

#[test]
fn trace_decays_at_the_slow_eigenvalue() {
    let p = a1_drive(RF1, 5988.0);
    let [[a, b], [c, d]] = p.rate_matrix().unwrap();
    // Quadratic-formula roots of the 2×2 rate matrix.
    let tr = a + d;
    let det = a * d - b * c;
    let slow = -(tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
    let t = [0.5, 1.0];
    let trace = three_level_trace(&p, &t).unwrap();
    let k = (trace.rho_excited[0] / trace.rho_excited[1]).ln() / ((t[1] - t[0]) * 1e3);
    assert!((k - slow).abs() < 1e-9 * slow, "{k} vs {slow}");
    assert!((p.slow_rate().unwrap() - slow).abs() < 1e-9 * slow);
}

#[test]
fn three_level_populations_are_conserved() {
    for (delta, lambda) in [(0.0, 5988.0), (RF1, 10.0), (500.0, 1.0)] {
        let p = a1_drive(delta, lambda);
        let tr = three_level_trace(&p, &linspace(0.0, 3.0, 301)).unwrap();
        for k in 0..tr.t_ms.len() {
            let pops = [tr.rho_down[k], tr.rho_excited[k], tr.rho_up[k]];
            assert!((pops.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(pops.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)), "{pops:?}");
        }
    }
}

fn synthetic_cyclicity_trace(lambda: f64, t: &[f64]) -> Vec<f64> {
    let tr = three_level_trace(&a1_drive(RF1, lambda), t).unwrap();
    tr.rho_excited.iter().map(|e| 2e4 * e).collect()
}

#[test]
fn cyclicity_round_trip_and_detuning_sensitivity() {
    let t = linspace(0.0, 2.0, 201);
    let counts = synthetic_cyclicity_trace(5988.0, &t);
    let fit = fit_cyclicity(&t, &counts, &a1_drive(RF1, 1.0)).unwrap();
    assert!((fit.cyclicity_e - 5988.0).abs() < 0.01 * 5988.0, "{}", fit.cyclicity_e);
    let at_zero = fit_cyclicity(&t, &counts, &a1_drive(0.0, 1.0)).unwrap().cyclicity_e;
    let at_double = fit_cyclicity(&t, &counts, &a1_drive(2.0 * RF1, 1.0))
        .unwrap()
        .cyclicity_e;
    assert!((at_zero - 6177.0).abs() < 0.05 * 6177.0, "Δ=0: {at_zero}");
    assert!((at_double - 5485.0).abs() < 0.05 * 5485.0, "Δ=2ω: {at_double}");
}

#[test]
fn cyclicity_fit_inverts_the_trace_across_decades() {
    for lambda in [1e2, 1e3, 5988.0, 1e5] {
        let k = a1_drive(RF1, lambda).slow_rate().unwrap() * 1e3;
        let t = linspace(0.0, 5.0 / k, 151);
        let counts = synthetic_cyclicity_trace(lambda, &t);
        let fit = fit_cyclicity(&t, &counts, &a1_drive(RF1, 1.0)).unwrap();
        assert!(
            (fit.cyclicity_e - lambda).abs() < 0.01 * lambda,
            "Λ={lambda}: {}",
            fit.cyclicity_e
        );
    }
}

#[test]
fn flat_trace_does_not_give_a_cyclicity() {
    let t = linspace(0.0, 2.0, 101);
    let err = fit_cyclicity(&t, &vec![500.0; 101], &a1_drive(RF1, 1.0)).unwrap_err();
    assert!(matches!(err, Error::NotConverged { .. }), "{err}");
}

#[test]
fn saturation_round_trip() {
    let truth = SaturationParams {
        i_sat: 52_000.0,
        p_sat: 29.0,
        n_bgr: 35.0,
        c_offset: 400.0,
    };
    let p = linspace(1.0, 200.0, 30);
    let r: Vec<f64> = p.iter().map(|&p| truth.rate(p)).collect();
    let fit = fit_saturation(&p, &r).unwrap();
    for (got, want) in [
        (fit.params.i_sat, truth.i_sat),
        (fit.params.p_sat, truth.p_sat),
        (fit.params.n_bgr, truth.n_bgr),
        (fit.params.c_offset, truth.c_offset),
    ] {
        assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
    }
}

#[test]
fn linear_regime_saturation_is_unidentifiable() {
    let truth = SaturationParams {
        i_sat: 52_000.0,
        p_sat: 29.0,
        n_bgr: 35.0,
        c_offset: 400.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = linspace(0.01, 0.5, 12);
    let r: Vec<f64> = p
        .iter()
        .map(|&p| Poisson::new(truth.rate(p)).unwrap().sample(&mut rng))
        .collect();
    let err = fit_saturation(&p, &r).unwrap_err();
    assert!(matches!(err, Error::Unidentifiable(_)), "{err}");
}

#[test]
fn branching_matrix_rows_and_limits() {
    let grid: Vec<f64> = (-2..=6).map(|e| 10f64.powi(e)).collect();
    for &le in &grid {
        for &ln in &grid {
            for row in branching_matrix(le, ln).unwrap() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
    let b = branching_matrix(1e15, 1e15).unwrap();
    assert!((b[0][0] - 1.0).abs() < 1e-12 && (b[1][1] - 1.0).abs() < 1e-12);
    assert!(b[0][1..]
        .iter()
        .chain([b[1][0], b[1][2], b[1][3]].iter())
        .all(|v| *v < 1e-12));

    let b = branching_matrix(5988.0, 10.0).unwrap();
    let (pec, pef, pnc, pnf) = (5988.0 / 5989.0, 1.0 / 5989.0, 10.0 / 11.0, 1.0 / 11.0);
    let expect = [
        [pec * pnc, pec * pnf, pef * pnf, pef * pnc],
        [pec * pnf, pec * pnc, pef * pnc, pef * pnf],
    ];
    for j in 0..2 {
        for i in 0..4 {
            assert!((b[j][i] - expect[j][i]).abs() < 1e-12);
        }
    }
}

#[test]
fn microwave_pump_rate_inputs() {
    let omega_att = 1.60 * attenuated_amplitude(-35.0);
    assert!((omega_att * 1e3 - 28.5).abs() < 0.1, "{omega_att}");
    // Linewidth 1/T2* for T2* = 0.7 μs.
    assert!((1.0f64 / 0.7 - 1.4).abs() < 0.05);
    let g = AngularRate::from_mrad_per_s(1.0 / 0.7);
    let w = mw_pump_rate(1.60, 0.0, AngularRate::ZERO, g).unwrap().mrad_per_s();
    assert!((w - 1.6 * 1.6 * 0.7).abs() < 1e-12);
}

fn calibrated_six_level() -> SixLevelParams {
    SixLevelParams::with_mw_drive(
        a1_drive(RF1, 5988.0),
        10.0,
        1.60,
        -35.0,
        AngularRate::from_mrad_per_s(0.49),
        AngularRate::ZERO,
    )
    .unwrap()
}

#[test]
fn six_level_conserves_population() {
    let p = calibrated_six_level();
    for init in 0..4 {
        let tr = six_level_trace(&p, init, &linspace(0.0, 20.0, 201)).unwrap();
        for (g, e) in tr.ground.iter().zip(&tr.excited) {
            let s: f64 = g.iter().chain(e).sum();
            assert!((s - 1.0).abs() < 1e-10);
            assert!(g.iter().chain(e).all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }
    assert!(six_level_trace(&p, 4, &[0.0]).is_err());
}

#[test]
fn dark_state_is_static_without_microwaves() {
    let mut p = calibrated_six_level();
    p.w_mw = AngularRate::ZERO;
    let tr = six_level_trace(&p, DARK_STATE, &linspace(0.0, 50.0, 11)).unwrap();
    for g in &tr.ground {
        assert_eq!(g[DARK_STATE], 1.0);
    }
    assert!(tr.fluorescence.iter().all(|f| *f == 0.0));
}

#[test]
fn pumping_fills_the_dark_state_within_milliseconds() {
    let p = calibrated_six_level();
    // Null space of the generator.
    let m = p.rate_matrix().unwrap();
    let svd = m.clone().svd(true, true);
    let k = svd.singular_values.imin();
    let v = svd.v_t.unwrap().row(k).transpose();
    let v = &v / v.sum();
    assert!(v[DARK_STATE] > 0.99, "{v}");
    for init in [0, 1, 3] {
        let tr = six_level_trace(&p, init, &[200.0]).unwrap();
        assert!(tr.ground[0][DARK_STATE] > 0.99);
    }
    let t = dark_state_time(&p, 0.99).unwrap();
    assert!((5.0..=10.0).contains(&t), "{t} ms");
}

fn table_ii() -> InitFitInput {
    InitFitInput {
        amplitude_a: 176.0,
        decay_gamma: 1.75,
        offset_c: 8.40,
        dark_b: 8.08,
        sigma_a: 3.0,
        sigma_gamma: 0.1,
        sigma_c: 0.4,
        sigma_b: 0.01,
        rho_ac: 0.2235,
        rho_ab: 1.0,
        rho_cb: 1.0,
    }
}

#[test]
fn reference_fit_values_give_the_target_fidelities() {
    let f = init_fidelity(&table_ii()).unwrap();
    let expect = 1.0 - 0.32 / 167.92;
    assert!((f.fidelity - expect).abs() < 1e-14);
    assert!((f.fidelity * 100.0 - 99.74).abs() < 0.15);
    assert!((f.sigma * 100.0 - 0.03).abs() < 0.02, "σ_F = {}", f.sigma * 100.0);
    let raw = init_fidelity(&InitFitInput {
        dark_b: 0.0,
        sigma_b: 0.0,
        ..table_ii()
    })
    .unwrap();
    assert!((raw.fidelity - (1.0 - 8.4 / 176.0)).abs() < 1e-14);
    assert!((raw.fidelity * 100.0 - 95.16).abs() < 0.15);
}

/// Signal, laser-only and dark traces. With a seed, counts are Poisson
/// draws accumulated over 500 repetitions of the sequence.
fn init_traces(seed: Option<u64>) -> (Trace, Trace, Trace) {
    let t = linspace(0.0, 6.0, 120);
    let (a, g, c, b, laser) = (176.0, 1.75, 8.40, 8.08, 8.2);
    let mean_sig: Vec<f64> = t.iter().map(|t| a * (-g * t).exp() + c).collect();
    match seed {
        None => (
            Trace::new(t.clone(), mean_sig).unwrap(),
            Trace::new(t.clone(), vec![laser; t.len()]).unwrap(),
            Trace::new(t.clone(), vec![b; t.len()]).unwrap(),
        ),
        Some(seed) => {
            let reps = 500.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |m: f64| Poisson::new(reps * m).unwrap().sample(&mut rng);
            let s = mean_sig.iter().map(|m| draw(*m)).collect();
            let l = t.iter().map(|_| draw(laser)).collect();
            let d = t.iter().map(|_| draw(b)).collect();
            (
                Trace::new(t.clone(), s).unwrap(),
                Trace::new(t.clone(), l).unwrap(),
                Trace::new(t, d).unwrap(),
            )
        }
    }
}

#[test]
fn initialization_fit_recovers_noiseless_parameters() {
    let (s, l, d) = init_traces(None);
    let r = fit_initialization(&s, &l, &d).unwrap();
    assert!((r.input.amplitude_a - 176.0).abs() < 1e-6 * 176.0);
    assert!((r.input.decay_gamma - 1.75).abs() < 1e-6 * 1.75);
    assert!((r.input.offset_c - 8.40).abs() < 1e-6 * 8.4);
    assert!((r.fidelity.fidelity - (1.0 - 0.32 / 167.92)).abs() < 1e-8);
}

#[test]
fn initialization_uncertainty_covers_the_truth() {
    let truth = 1.0 - 0.32 / 167.92;
    let reps = 200;
    let covered = (0..reps)
        .filter(|&k| {
            let (s, l, d) = init_traces(Some(1000 + k));
            let r = fit_initialization(&s, &l, &d).unwrap();
            (r.fidelity.fidelity - truth).abs() <= 3.0 * r.fidelity.sigma_direct
        })
        .count();
    assert!(covered as f64 >= 0.99 * reps as f64, "{covered}/{reps}");
}

#[test]
fn constant_trace_is_a_fit_failure() {
    let (_, l, d) = init_traces(None);
    let s = Trace::new(l.t_ms.clone(), vec![10.0; l.t_ms.len()]).unwrap();
    let err = fit_initialization(&s, &l, &d).unwrap_err();
    assert!(err.is_fit_failure(), "{err}");
}

#[test]
fn traces_must_share_a_grid() {
    let (s, l, _) = init_traces(None);
    let d = Trace::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
    assert!(matches!(fit_initialization(&s, &l, &d), Err(Error::InvalidInput(_))));
}
