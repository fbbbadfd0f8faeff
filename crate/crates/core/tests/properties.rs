//! Randomized invariants across the modules.

use std::f64::consts::PI;

use proptest::prelude::*;
use spinlab_core::benchmarking::{compose, inverse_gate, GateSymbol};
use spinlab_core::levels::*;
use spinlab_core::pulse::*;
use spinlab_core::pumping::*;

fn gate() -> impl Strategy<Value = GateSymbol> {
    (0..9usize).prop_map(|i| GateSymbol::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn appended_inverse_lands_on_a_pole(seq in prop::collection::vec(gate(), 0..=200)) {
        let inv = inverse_gate(&seq).unwrap();
        let mut full = seq;
        full.push(inv);
        let u = compose(&full);
        let z = u[(0, 0)].norm_sqr() - u[(1, 0)].norm_sqr();
        prop_assert!((z.abs() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn branching_rows_are_distributions(le in 1e-3f64..1e7, ln in 1e-3f64..1e7) {
        for row in branching_matrix(le, ln).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn dark_count_shift_cancels_in_fidelity(k in -50.0f64..50.0, a in 50.0f64..500.0, c in 0.0f64..20.0) {
        let base = InitFitInput {
            amplitude_a: a,
            decay_gamma: 1.75,
            offset_c: c + 8.0,
            dark_b: 8.0,
            sigma_a: 3.0,
            sigma_gamma: 0.1,
            sigma_c: 0.4,
            sigma_b: 0.01,
            rho_ac: 0.2,
            rho_ab: 0.1,
            rho_cb: 0.1,
        };
        let shifted = InitFitInput {
            amplitude_a: a + k,
            offset_c: c + 8.0 + k,
            dark_b: 8.0 + k,
            ..base
        };
        let (f0, f1) = (init_fidelity(&base).unwrap(), init_fidelity(&shifted).unwrap());
        prop_assert!((f0.fidelity - f1.fidelity).abs() < 1e-12);
        prop_assert!((f0.sigma_direct - f1.sigma_direct).abs() < 1e-12);
    }

    #[test]
    fn sequences_undo_themselves(
        parts in prop::collection::vec((1e3f64..1e7, 0.0f64..2.0 * PI, 1e-9f64..1e-6, -1e6f64..1e6), 1..8),
        offset in -1e6f64..1e6,
    ) {
        let elements: Vec<Element> = parts
            .iter()
            .map(|&(rabi_hz, phase, duration_s, detuning_hz)| Element::Pulse { rabi_hz, phase, duration_s, detuning_hz })
            .collect();
        let seq = PulseSequence::new(elements).unwrap();
        let forward = propagate(&seq, offset).unwrap().unitary;
        let unitarity = (forward.adjoint() * forward - nalgebra::Matrix2::identity()).norm();
        prop_assert!(unitarity < 1e-10);
        // The inverse negates detunings, so the offset flips with them.
        let back = propagate(&seq.inverse(), -offset).unwrap().unitary;
        let round = back * forward;
        let phase = round[(0, 0)] / round[(0, 0)].norm();
        prop_assert!((round - nalgebra::Matrix2::identity() * phase).norm() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hamiltonians_are_hermitian(bx in -300.0f64..300.0, by in -300.0f64..300.0, bz in -300.0f64..300.0) {
        let p = FineStructureParams::tin_vacancy();
        let h = HyperfineParams { a_par: 243.61, a_perp: -13.959, a_contact: -202.67, gamma_c13: 10.7 };
        let b = FieldVector::from_cartesian([bx, by, bz]);
        let m = hyperfine_hamiltonian(&p, &h, &b);
        prop_assert!((&m - m.adjoint()).norm() < 1e-12);
        for manifold in [Manifold::Ground, Manifold::Excited] {
            let m = manifold_hamiltonian(&p, manifold, &b);
            prop_assert!((&m - m.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn axial_qubit_splitting_is_even(b in 0.0f64..300.0) {
        let p = FineStructureParams::tin_vacancy();
        let up = electron_levels(&p, &FieldVector::axial(b)).unwrap().frequency(Transition::Qubit);
        let down = electron_levels(&p, &FieldVector::axial(-b)).unwrap().frequency(Transition::Qubit);
        prop_assert!((up - down).abs() < 1e-9);
    }

    #[test]
    fn centred_two_tone_line_is_even(omega in 0.0f64..5e6, fwhm in 1e4f64..5e6) {
        let cfg = TwoToneConfig { omega_rf_mod: omega, lorentzian_fwhm: fwhm, ..TwoToneConfig::default() };
        let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 5e4).collect();
        let line = two_tone_lineshape(&cfg, &grid).unwrap();
        for i in 0..line.len() / 2 {
            prop_assert!((line[i] - line[line.len() - 1 - i]).abs() < 1e-9 * line[i].abs().max(1e-30));
        }
    }

    #[test]
    fn analytic_envelopes_are_bounded_and_monotone(b in 10.0f64..1e4, tau_c in 1.0f64..1e3, n in 1usize..64) {
        let noise = OUProcess { coupling_b: b, tau_c, seed: 0 };
        let taus: Vec<f64> = (0..60).map(|i| i as f64 * 5.0 / b).collect();
        for trace in [ramsey_analytic(0.0, &taus, b).unwrap(), dynamical_decoupling_analytic(n, &taus, &noise).unwrap()] {
            prop_assert!(trace.visibility.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(trace.visibility.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }
}
