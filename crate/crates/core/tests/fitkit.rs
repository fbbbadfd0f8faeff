use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use spinlab_core::fitkit::{fit, model_by_name, model_registry, CurveData, FitModel, FitOptions, FitStatus};
use spinlab_core::Error;

/// x grid, a sampler of in-bounds parameters, and a per-parameter scale for
/// absolute comparisons near zero.
struct Domain {
    x: Vec<f64>,
    sample: fn(&mut ChaCha8Rng) -> Vec<f64>,
    scale: Vec<f64>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn domain(name: &str) -> Domain {
    match name {
        "exp_decay" => Domain {
            x: linspace(0.0, 10.0, 60),
            sample: |r| {
                vec![
                    r.random_range(0.5..200.0),
                    r.random_range(0.2..2.0),
                    r.random_range(-5.0..20.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0],
        },
        "saturation" => Domain {
            x: linspace(1.0, 300.0, 40),
            sample: |r| {
                vec![
                    r.random_range(1e3..1e5),
                    r.random_range(10.0..60.0),
                    r.random_range(0.0..50.0),
                    r.random_range(0.0..500.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0, 1.0],
        },
        "sine_gaussian" => Domain {
            x: linspace(0.0, 1.0, 200),
            sample: |r| {
                vec![
                    r.random_range(0.3..1.0),
                    r.random_range(3.0..20.0),
                    r.random_range(-3.0..3.0),
                    r.random_range(0.3..1.5),
                    r.random_range(-0.2..0.2),
                ]
            },
            scale: vec![1.0, 1.0, 1.0, 1.0, 1.0],
        },
        "stretched_exp" => Domain {
            x: linspace(0.0, 3.0, 50),
            sample: |r| {
                vec![
                    r.random_range(0.5..1.0),
                    r.random_range(0.5..1.5),
                    r.random_range(0.8..3.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0],
        },
        "power_law" => Domain {
            x: (0..8).map(|k| 2f64.powi(k)).collect(),
            sample: |r| vec![r.random_range(0.01..10.0), r.random_range(-1.0..1.5)],
            scale: vec![1.0, 1.0],
        },
        "lorentzian" => Domain {
            x: linspace(-50.0, 50.0, 201),
            sample: |r| {
                let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
                vec![
                    sign * r.random_range(1.0..10.0),
                    r.random_range(-10.0..10.0),
                    r.random_range(3.0..20.0),
                    r.random_range(0.0..5.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0, 1.0],
        },
        "double_lorentzian" => Domain {
            x: linspace(-10.0, 10.0, 301),
            sample: |r| {
                vec![
                    r.random_range(0.5..2.0),
                    r.random_range(0.5..2.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(2.5..6.0),
                    r.random_range(0.5..1.5),
                    r.random_range(0.0..1.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        },
        "arcsine_lorentzian" => Domain {
            x: linspace(-60.0, 60.0, 241),
            sample: |r| {
                vec![
                    r.random_range(10.0..100.0),
                    r.random_range(-3.0..3.0),
                    r.random_range(10.0..30.0),
                    r.random_range(1.0..5.0),
                    r.random_range(0.0..1.0),
                ]
            },
            scale: vec![1.0, 1.0, 1.0, 1.0, 1.0],
        },
        "rb_decay" => Domain {
            x: vec![1.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
            sample: |r| vec![r.random_range(0.5..1.0), r.random_range(0.95..0.9999)],
            scale: vec![1.0, 1e-3],
        },
        other => panic!("no test domain for {other}"),
    }
}

fn wrapped_diff(name: &str, i: usize, a: f64, b: f64) -> f64 {
    if name == "sine_gaussian" && i == 2 {
        let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
        d.min(2.0 * std::f64::consts::PI - d)
    } else {
        (a - b).abs()
    }
}

#[test]
fn every_model_round_trips_noiseless_data_from_its_own_guess() {
    for model in model_registry() {
        let name = model.name();
        let dom = domain(name);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ name.len() as u64);
        let trials = 100;
        for trial in 0..trials {
            let truth = (dom.sample)(&mut rng);
            let y: Vec<f64> = dom.x.iter().map(|&x| model.eval(x, &truth)).collect();
            let data = CurveData::new(dom.x.clone(), y);
            let res = fit(model.as_ref(), &data, None, &FitOptions::default())
                .unwrap_or_else(|e| panic!("{name} trial {trial} truth {truth:?}: {e}"));
            for (i, (&got, &want)) in res.params.iter().zip(&truth).enumerate() {
                let tol = 1e-6 * want.abs().max(dom.scale[i]);
                assert!(
                    wrapped_diff(name, i, got, want) <= tol,
                    "{name} trial {trial} param {i}: got {got}, want {want} (truth {truth:?})"
                );
            }
        }
    }
}

#[test]
fn analytic_jacobians_match_central_differences() {
    for model in model_registry().into_iter().filter(|m| m.has_analytic_jacobian()) {
        let name = model.name();
        let dom = domain(name);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = model.params().len();
        for _ in 0..100 {
            let p = (dom.sample)(&mut rng);
            let x = dom.x[rng.random_range(0..dom.x.len())];
            let mut g = vec![0.0; n];
            model.gradient(x, &p, &mut g);
            for j in 0..n {
                // Five-point stencil; the floor is the roundoff of f itself.
                let h = 1e-4 * p[j].abs().max(1e-3);
                let at = |k: f64| {
                    let mut q = p.clone();
                    q[j] += k * h;
                    model.eval(x, &q)
                };
                let fd = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
                let floor = 1e-12 * model.eval(x, &p).abs() / h;
                let scale = g[j].abs().max(fd.abs());
                assert!(
                    (g[j] - fd).abs() <= 1e-5 * scale + floor,
                    "{name} x={x} param {j}: analytic {} fd {fd}",
                    g[j]
                );
            }
        }
    }
}

#[test]
fn lorentzian_at_fourier_limited_width() {
    let model = model_by_name("lorentzian").unwrap();
    let truth = [1200.0, 3.0, 36.6, 40.0];
    let x = linspace(-200.0, 200.0, 161);
    let y: Vec<f64> = x.iter().map(|&x| model.eval(x, &truth)).collect();
    let res = fit(model.as_ref(), &CurveData::new(x, y), None, &FitOptions::default()).unwrap();
    for (g, t) in res.params.iter().zip(truth) {
        assert!((g - t).abs() < 1e-8 * t.abs());
    }
}

#[test]
fn double_lorentzian_recovers_odnr_width_and_splitting() {
    let model = model_by_name("double_lorentzian").unwrap();
    // kHz detuning; dip-free peaks of unequal height.
    let truth = [0.8, 1.0, 0.2, 3.81, 1.10, 0.05];
    let x = linspace(-8.0, 8.0, 161);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = rand_distr::Normal::new(0.0, 0.005).unwrap();
    let y: Vec<f64> = x
        .iter()
        .map(|&x| model.eval(x, &truth) + noise.sample(&mut rng))
        .collect();
    let res = fit(model.as_ref(), &CurveData::new(x, y), None, &FitOptions::default()).unwrap();
    assert!((res.params[4] - 1.10).abs() < 0.011, "fwhm {}", res.params[4]);
    assert!((res.params[3] - 3.81).abs() < 0.0381, "splitting {}", res.params[3]);
}

#[test]
fn double_lorentzian_finds_a_pair_of_dips() {
    let model = model_by_name("double_lorentzian").unwrap();
    // Fluorescence dips below a bright background, with counting noise.
    let truth = [-150.0, -130.0, 0.0, 3.81, 1.10, 500.0];
    let x = linspace(-6.0, 6.0, 121);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let y: Vec<f64> = x
        .iter()
        .map(|&x| Poisson::new(model.eval(x, &truth)).unwrap().sample(&mut rng))
        .collect();
    let res = fit(model.as_ref(), &CurveData::counts(x, y), None, &FitOptions::default()).unwrap();
    assert!(res.params[0] < 0.0 && res.params[1] < 0.0);
    assert!(
        (res.params[3] - 3.81).abs() < 4.0 * res.sigma(3),
        "splitting {} ± {}",
        res.params[3],
        res.sigma(3)
    );
    assert!(
        (res.params[4] - 1.10).abs() < 4.0 * res.sigma(4),
        "fwhm {} ± {}",
        res.params[4],
        res.sigma(4)
    );
}

#[test]
fn single_lorentzian_rf_line_width() {
    let model = model_by_name("lorentzian").unwrap();
    let truth = [-0.3, 20.998e3, 0.944, 1.0];
    let x = linspace(20.998e3 - 5.0, 20.998e3 + 5.0, 101);
    let y: Vec<f64> = x.iter().map(|&x| model.eval(x, &truth)).collect();
    let res = fit(model.as_ref(), &CurveData::new(x, y), None, &FitOptions::default()).unwrap();
    assert!((res.params[2] - 0.944).abs() < 1e-6);
}

#[test]
fn exact_data_has_zero_chi_square_and_finite_covariance() {
    let model = model_by_name("exp_decay").unwrap();
    let x = linspace(0.0, 5.0, 30);
    let y: Vec<f64> = x.iter().map(|&x| model.eval(x, &[176.0, 1.75, 8.4])).collect();
    let res = fit(model.as_ref(), &CurveData::counts(x, y), None, &FitOptions::default()).unwrap();
    assert!(res.reduced_chi_square < 1e-18);
    assert!(res.covariance.iter().all(|v| v.is_finite()));
    assert_eq!(res.status, FitStatus::Converged);
    let eig = res.covariance.clone().symmetric_eigen();
    assert!(eig.eigenvalues.min() >= -1e-12 * res.covariance.trace());
}

#[test]
fn flat_trace_does_not_fit_an_exponential() {
    let model = model_by_name("exp_decay").unwrap();
    let x = linspace(0.0, 5.0, 30);
    let y = vec![10.0; 30];
    let err = fit(model.as_ref(), &CurveData::counts(x, y), None, &FitOptions::default()).unwrap_err();
    assert!(err.is_fit_failure(), "{err}");
}

#[test]
fn doubling_counts_rescales_chi_square_by_the_weight_rule() {
    // On fixed residuals r_i the objective is Σ r_i²/(N_i + 1).
    let counts = [0.0, 3.0, 10.0, 50.0];
    let resid = [0.5, -1.0, 2.0, 4.0];
    let chi = |scale: f64| -> f64 {
        let data = CurveData::counts(vec![0.0; 4], counts.iter().map(|c| c * scale).collect());
        let w = data.weight_vector().unwrap();
        resid.iter().zip(&w).map(|(r, w)| (r * w).powi(2)).sum()
    };
    let expect: f64 = resid.iter().zip(&counts).map(|(r, c)| r * r / (2.0 * c + 1.0)).sum();
    assert!((chi(2.0) - expect).abs() < 1e-14);
    assert!((chi(1.0) - resid.iter().zip(&counts).map(|(r, c)| r * r / (c + 1.0)).sum::<f64>()).abs() < 1e-14);
}

#[test]
fn uncertainties_shrink_as_inverse_root_of_replications() {
    let model = model_by_name("exp_decay").unwrap();
    let x = linspace(0.0, 4.0, 40);
    let truth = [176.0, 1.75, 8.4];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reps = [1.0f64, 4.0, 16.0, 64.0, 256.0];
    let mut pts = Vec::new();
    for &r in &reps {
        // Counts summed over r repetitions.
        let y: Vec<f64> = x
            .iter()
            .map(|&x| Poisson::new(r * model.eval(x, &truth)).unwrap().sample(&mut rng))
            .collect();
        let res = fit(
            model.as_ref(),
            &CurveData::counts(x.clone(), y),
            None,
            &FitOptions::default(),
        )
        .unwrap();
        pts.push((r.ln(), (res.sigma(1) / res.params[1]).ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
}

#[test]
fn fits_are_deterministic() {
    let model = model_by_name("arcsine_lorentzian").unwrap();
    let x = linspace(-60.0, 60.0, 121);
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &x)| model.eval(x, &[50.0, 1.0, 20.0, 3.0, 0.1]) + 0.001 * ((i * 37 % 11) as f64 - 5.0))
        .collect();
    let data = CurveData::new(x, y);
    let a = fit(model.as_ref(), &data, None, &FitOptions::default()).unwrap();
    let b = fit(model.as_ref(), &data, None, &FitOptions::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.covariance, b.covariance);
}

#[test]
fn fit_rejects_bad_weights_and_lengths() {
    let model = model_by_name("lorentzian").unwrap();
    let data = CurveData::new(vec![1.0, 2.0], vec![1.0]);
    assert!(matches!(
        fit(model.as_ref(), &data, None, &FitOptions::default()),
        Err(Error::InvalidInput(_))
    ));
    let data = CurveData::new(vec![1.0; 5], vec![1.0; 5]).with_sigma(vec![0.0; 5]);
    assert!(matches!(
        fit(model.as_ref(), &data, None, &FitOptions::default()),
        Err(Error::InvalidInput(_))
    ));
}

fn _assert_object_safe(_: &dyn FitModel) {}
