use nalgebra::DMatrix;
use num_complex::Complex64;
use spinlab_core::levels::*;
use spinlab_core::Error;

fn table() -> FineStructureParams {
    FineStructureParams::tin_vacancy()
}

/// Cyclic Jacobi eigenvalues of a real symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a Hermitian matrix via its real 2n×2n embedding, each
/// appearing twice there.
fn oracle_eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
    let n = h.nrows();
    let mut a = vec![vec![0.0; 2 * n]; 2 * n];
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            a[i][j] = z.re;
            a[i + n][j + n] = z.re;
            a[i][j + n] = -z.im;
            a[i + n][j] = z.im;
        }
    }
    jacobi_eigenvalues(a).chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

/// The 4×4 manifold matrix written out element by element, basis
/// (e₊↑, e₊↓, e₋↑, e₋↓), GHz.
fn explicit_manifold(
    lambda: f64,
    upsilon: f64,
    quench: f64,
    p: &FineStructureParams,
    b: [f64; 3],
) -> DMatrix<Complex64> {
    let gs = p.gamma_spin * 1e-3 / 2.0;
    let go = quench * p.gamma_orb * 1e-3 * b[2];
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let (bx, by, bz) = (b[0], b[1], b[2]);
    let rows = [
        [
            c(-lambda / 2.0 + go + gs * bz, 0.0),
            c(gs * bx, -gs * by),
            c(upsilon, 0.0),
            c(0.0, 0.0),
        ],
        [
            c(gs * bx, gs * by),
            c(lambda / 2.0 + go - gs * bz, 0.0),
            c(0.0, 0.0),
            c(upsilon, 0.0),
        ],
        [
            c(upsilon, 0.0),
            c(0.0, 0.0),
            c(lambda / 2.0 - go + gs * bz, 0.0),
            c(gs * bx, -gs * by),
        ],
        [
            c(0.0, 0.0),
            c(upsilon, 0.0),
            c(gs * bx, gs * by),
            c(-lambda / 2.0 - go - gs * bz, 0.0),
        ],
    ];
    DMatrix::from_fn(4, 4, |i, j| rows[i][j])
}

#[test]
fn electron_levels_match_dense_oracle_on_a_field_sweep() {
    let p = table();
    let mut last_split = f64::NEG_INFINITY;
    for k in 0..=40 {
        let bmag = 5.0 * k as f64;
        let field = FieldVector::new(bmag * 0.8, bmag * 0.6, 0.4);
        let d = electron_levels(&p, &field).unwrap();
        let b = field.cartesian();
        let gs = oracle_eigenvalues(&explicit_manifold(p.lambda_gs, p.upsilon_gs, p.f12_gs, &p, b));
        let es = oracle_eigenvalues(&explicit_manifold(p.lambda_es, p.upsilon_es, p.f12_es, &p, b));
        for (a, o) in d.gs_energies.iter().zip(&gs).chain(d.es_energies.iter().zip(&es)) {
            assert!((a - o).abs() <= 1e-9 * o.abs().max(1.0), "B={bmag}: {a} vs {o}");
        }
        let split = d.frequency(Transition::A1) - d.frequency(Transition::B2);
        let oracle_split = (es[0] - gs[0]) - (es[1] - gs[1]);
        assert!((split - oracle_split).abs() <= 1e-9 * oracle_split.abs().max(1e-3));
        assert!(
            split.abs() >= last_split - 1e-12,
            "A1−B2 splitting not monotone at {bmag} mT"
        );
        last_split = split.abs();
    }
}

#[test]
fn eigenvectors_are_unitary() {
    let p = table();
    let h = manifold_hamiltonian(&p, Manifold::Ground, &FieldVector::new(100.0, 50.0, 1.0));
    let eig = h.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let ident = v.adjoint() * v;
    assert!((ident - DMatrix::<Complex64>::identity(4, 4)).norm() < 1e-10);
    let hh = hyperfine_hamiltonian(
        &p,
        &HyperfineParams {
            a_par: 240.0,
            a_perp: -17.0,
            a_contact: -200.0,
            gamma_c13: 10.7,
        },
        &FieldVector::axial(106.0),
    );
    let eig = hh.symmetric_eigen();
    let v = &eig.eigenvectors;
    assert!((v.adjoint() * v - DMatrix::<Complex64>::identity(8, 8)).norm() < 1e-10);
}

#[test]
fn qubit_splitting_is_even_under_axial_field_reversal() {
    let p = table();
    for k in 0..21 {
        let b = -300.0 + 30.0 * k as f64;
        let plus = electron_levels(&p, &FieldVector::axial(b))
            .unwrap()
            .frequency(Transition::Qubit);
        let minus = electron_levels(&p, &FieldVector::axial(-b))
            .unwrap()
            .frequency(Transition::Qubit);
        assert!((plus - minus).abs() < 1e-12, "B={b}");
    }
}

#[test]
fn qubit_splitting_at_the_odmr_field() {
    let d = electron_levels(&table(), &FieldVector::axial(106.0)).unwrap();
    let q = d.frequency(Transition::Qubit);
    assert!((q - 3.7).abs() < 0.05 * 3.7, "{q} GHz");
}

fn synthetic_strain_observations(p: &FineStructureParams) -> Vec<StrainObservation> {
    let mut obs = Vec::new();
    for &(bpar, bperp) in &[
        (0.0, 0.0),
        (100.0, 0.0),
        (200.0, 0.0),
        (0.0, 100.0),
        (0.0, 200.0),
        (150.0, 150.0),
    ] {
        let field = FieldVector::new(bpar, bperp, 0.0);
        let d = electron_levels(p, &field).unwrap();
        for t in [Transition::A1, Transition::B2, Transition::Qubit] {
            obs.push(StrainObservation {
                field,
                transition: t,
                frequency: d.frequency(t),
                sigma: 0.01,
            });
        }
    }
    obs
}

#[test]
fn strain_fit_round_trips() {
    let truth = table();
    let obs = synthetic_strain_observations(&truth);
    let p0 = FineStructureParams {
        upsilon_gs: 30.0,
        upsilon_es: 50.0,
        ..truth
    };
    let fit = fit_strain(&obs, &p0).unwrap();
    assert!(
        (fit.params.upsilon_gs - 41.3).abs() < 1e-6 * 41.3,
        "{}",
        fit.params.upsilon_gs
    );
    assert!(
        (fit.params.upsilon_es - 65.5).abs() < 1e-6 * 65.5,
        "{}",
        fit.params.upsilon_es
    );
    assert!(fit.sigma_upsilon_gs.is_finite() && fit.sigma_upsilon_es.is_finite());
}

#[test]
fn strain_fit_at_zero_field_is_rank_deficient() {
    let truth = table();
    let d = electron_levels(&truth, &FieldVector::zero()).unwrap();
    let obs: Vec<StrainObservation> = [Transition::A1, Transition::B2]
        .iter()
        .map(|&t| StrainObservation {
            field: FieldVector::zero(),
            transition: t,
            frequency: d.frequency(t),
            sigma: 0.01,
        })
        .collect();
    let p0 = FineStructureParams {
        upsilon_gs: 30.0,
        upsilon_es: 50.0,
        ..truth
    };
    let err = fit_strain(&obs, &p0).unwrap_err();
    assert!(matches!(err, Error::RankDeficient(_)), "{err}");
}

#[test]
fn strain_fit_needs_two_observations() {
    let obs = &synthetic_strain_observations(&table())[..1];
    assert!(matches!(fit_strain(obs, &table()), Err(Error::RankDeficient(_))));
}

#[test]
fn uncoupled_nucleus_precesses_at_the_bare_larmor_frequency() {
    let p = table();
    for field in [FieldVector::axial(106.0), FieldVector::new(30.0, 70.0, 1.2)] {
        let d = hyperfine_levels(&p, &HyperfineParams::uncoupled(), &field).unwrap();
        let larmor = 10.7e-3 * field.magnitude();
        assert!((d.frequency(Transition::Rf1) - larmor).abs() < 1e-9);
        assert!((d.frequency(Transition::Rf2) - larmor).abs() < 1e-9);
        assert!((d.frequency(Transition::Mw1) - d.frequency(Transition::Mw2)).abs() < 1e-9);
        assert_eq!(d.gs_energies.len(), 8);
        assert!(d.gs_energies.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn mw_splitting_equals_sum_of_rf_lines() {
    // (E3 − E0) − (E2 − E1) = (E1 − E0) + (E3 − E2) for any coupling.
    let p = table();
    let h = HyperfineParams {
        a_par: 60.0,
        a_perp: 12.0,
        a_contact: -10.0,
        gamma_c13: 10.7,
    };
    for b in [20.0, 60.0, 106.0, 400.0] {
        let d = hyperfine_levels(&p, &h, &FieldVector::axial(b)).unwrap();
        let lhs = mw_splitting(&d);
        let rhs = d.frequency(Transition::Rf1) + d.frequency(Transition::Rf2);
        assert!((lhs - rhs).abs() < 1e-6, "B={b}: {lhs} vs {rhs}");
    }
}

#[test]
fn hyperfine_fit_round_trips() {
    let p = table();
    let truth = HyperfineParams {
        a_par: 45.0,
        a_perp: -12.0,
        a_contact: -8.0,
        gamma_c13: 10.7,
    };
    let mut targets = Vec::new();
    for field in [
        FieldVector::axial(60.0),
        FieldVector::axial(106.0),
        FieldVector::new(80.0, 60.0, 0.0),
    ] {
        for q in [
            HyperfineQuantity::Line(Transition::Rf1),
            HyperfineQuantity::Line(Transition::Rf2),
            HyperfineQuantity::Enhancement(direction_deg(54.7, 0.0)),
        ] {
            targets.push(HyperfineTarget {
                field,
                quantity: q,
                value: hyperfine_quantity(&p, &truth, &field, q).unwrap(),
                sigma: 0.01,
            });
        }
    }
    let h0 = HyperfineParams {
        a_par: 30.0,
        a_perp: -5.0,
        a_contact: 0.0,
        gamma_c13: 10.7,
    };
    let fit = fit_hyperfine(&p, &targets, &h0).unwrap();
    for (got, want) in [
        (fit.params.a_par, truth.a_par),
        (fit.params.a_perp, truth.a_perp),
        (fit.params.a_contact, truth.a_contact),
    ] {
        assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
    }
}

#[test]
fn hyperfine_fit_rejects_underdetermined_targets() {
    let p = table();
    let one = [HyperfineTarget {
        field: FieldVector::axial(106.0),
        quantity: HyperfineQuantity::Line(Transition::Rf1),
        value: 22.74,
        sigma: 0.05,
    }];
    assert!(matches!(
        fit_hyperfine(&p, &one, &HyperfineParams::uncoupled()),
        Err(Error::RankDeficient(_))
    ));
    let same_field = [one[0], one[0], one[0]];
    assert!(matches!(
        fit_hyperfine(&p, &same_field, &HyperfineParams::uncoupled()),
        Err(Error::RankDeficient(_))
    ));
}

#[test]
fn gyromagnetic_ratio_at_the_magic_angle() {
    let g = gyromagnetic_ratio(&table(), direction_deg(54.7, 0.0), &FieldVector::axial(106.0)).unwrap();
    assert!((g - 20.27).abs() < 0.1 * 20.27, "{g}");
}

#[test]
fn transverse_slope_matches_closed_form_toy_model() {
    // Spin Zeeman only, field ⟂ axis: the lower-doublet splitting is
    // √(λ²/4 + (Υ + c)²) − √(λ²/4 + (Υ − c)²) with c = γB/2.
    let p = FineStructureParams {
        gamma_orb: 0.0,
        ..table()
    };
    let (a, u) = (p.lambda_gs / 2.0, p.upsilon_gs);
    let g = p.gamma_spin;
    for b0 in [50.0, 150.0, 400.0] {
        let c = g * 1e-3 * b0 / 2.0;
        let closed =
            (g / 2.0) * ((u + c) / (a * a + (u + c).powi(2)).sqrt() + (u - c) / (a * a + (u - c).powi(2)).sqrt());
        let num = gyromagnetic_ratio(&p, [1.0, 0.0, 0.0], &FieldVector::new(0.0, b0, 0.0)).unwrap();
        assert!((num - closed).abs() < 1e-7 * closed.abs(), "B={b0}: {num} vs {closed}");
    }
}

#[test]
fn gyromagnetic_ratio_is_step_converged() {
    let p = table();
    let u = direction_deg(54.7, 30.0);
    let b = FieldVector::axial(106.0);
    let full = gyromagnetic_ratio_with_step(&p, u, &b, 0.1).unwrap();
    let half = gyromagnetic_ratio_with_step(&p, u, &b, 0.05).unwrap();
    assert!((full - half).abs() < 1e-6 * full.abs());
}

#[test]
fn enhancement_is_unity_for_a_bare_nucleus() {
    let p = table();
    for b in [10.0, 60.0, 106.0] {
        let xi = rabi_enhancement(
            &p,
            &HyperfineParams::uncoupled(),
            &FieldVector::axial(b),
            [1.0, 0.0, 0.0],
        )
        .unwrap();
        assert!((xi - 1.0).abs() < 1e-9, "B={b}: {xi}");
    }
}

#[test]
fn enhancement_converges_to_one_as_couplings_vanish() {
    let p = table();
    let base = HyperfineParams {
        a_par: 240.0,
        a_perp: -17.0,
        a_contact: -200.0,
        gamma_c13: 10.7,
    };
    for b in [30.0, 60.0, 106.0] {
        let mut last = f64::INFINITY;
        // Largest coupling 1 kHz, then smaller.
        for k in 0..6 {
            let s = 1e-3 / 240.0 * 0.3f64.powi(k);
            let h = HyperfineParams {
                a_par: base.a_par * s,
                a_perp: base.a_perp * s,
                a_contact: base.a_contact * s,
                ..base
            };
            let dev = (rabi_enhancement(&p, &h, &FieldVector::axial(b), direction_deg(54.7, 0.0)).unwrap() - 1.0).abs();
            assert!(dev <= last, "B={b}: deviation grew at step {k}");
            last = dev;
        }
        assert!(last < 1e-3);
    }
}

#[test]
fn enhancement_degenerate_inputs() {
    let p = table();
    let err = rabi_enhancement(&p, &HyperfineParams::uncoupled(), &FieldVector::zero(), [1.0, 0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
    let err = rabi_enhancement(
        &p,
        &HyperfineParams::uncoupled(),
        &FieldVector::axial(50.0),
        [0.0, 0.0, 1.0],
    )
    .unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)));
}

#[test]
fn stored_hyperfine_calibration_is_the_fit_optimum() {
    let cal = spinlab_core::calibration::Calibration::default();
    let h0 = HyperfineParams {
        a_par: 40.0,
        ..HyperfineParams::uncoupled()
    };
    let fit = fit_hyperfine(&cal.fine_structure, &cal.hyperfine_targets, &h0).unwrap();
    for (got, stored) in [
        (fit.params.a_par, cal.hyperfine.a_par),
        (fit.params.a_perp, cal.hyperfine.a_perp),
        (fit.params.a_contact, cal.hyperfine.a_contact),
    ] {
        assert!((got - stored).abs() < 0.01, "{got} vs {stored}");
    }
    for r in &fit.residuals {
        if matches!(r.target.quantity, HyperfineQuantity::Line(_)) {
            assert!(r.residual.abs() < 0.1, "{r:?}");
        }
    }
}
