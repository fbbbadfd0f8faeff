use serde_json::json;
use spinlab_core::calibration::Calibration;
use spinlab_core::levels::*;
use spinlab_core::pulse::{calibrate_bac, nuclear_rabi, two_tone_density, PowerSpectrum, TwoToneConfig};

use super::linspace;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Outcome, Table};

pub fn levels(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let (fs, hf) = (&cfg.calibration.fine_structure, &cfg.calibration.hyperfine);
    let field_dir = direction_deg(p.f64("field_polar_deg")?, 0.0);
    let ac_dir = direction_deg(p.f64("ac_polar_deg")?, 0.0);
    let mut table = Table::new(
        "levels",
        vec![
            "b_mt",
            "qubit_ghz",
            "a1_ghz",
            "b2_ghz",
            "mw1_ghz",
            "mw2_ghz",
            "rf1_mhz",
            "rf2_mhz",
            "mw_splitting_mhz",
            "enhancement",
        ],
    );
    for b in p.f64_list("fields_mt")? {
        let field = FieldVector::along(field_dir, b);
        let el = electron_levels(fs, &field)?;
        let hyp = hyperfine_levels(fs, hf, &field)?;
        table.push(vec![
            b,
            el.frequency(Transition::Qubit),
            el.frequency(Transition::A1),
            el.frequency(Transition::B2),
            hyp.frequency(Transition::Mw1),
            hyp.frequency(Transition::Mw2),
            hyp.frequency(Transition::Rf1),
            hyp.frequency(Transition::Rf2),
            mw_splitting(&hyp),
            rabi_enhancement(fs, hf, &field, ac_dir)?,
        ]);
    }
    let operating = FieldVector::axial(p.f64("gamma_field_mt")?);
    let gamma = gyromagnetic_ratio(fs, direction_deg(p.f64("gamma_polar_deg")?, 0.0), &operating)?;
    let summary = json!({
        "gyromagnetic_ratio_mhz_per_mt": gamma,
        "qubit_ghz_at_operating_field": electron_levels(fs, &operating)?.frequency(Transition::Qubit),
        "hyperfine": hf,
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}

fn quantity_label(q: &HyperfineQuantity) -> String {
    match q {
        HyperfineQuantity::Line(t) => format!("{t:?}"),
        HyperfineQuantity::MwSplitting => "MwSplitting".into(),
        HyperfineQuantity::Enhancement(_) => "Enhancement".into(),
    }
}

pub fn calibrate(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let cal = &cfg.calibration;
    let h0 = HyperfineParams {
        a_par: p.f64("a_par_start_mhz")?,
        a_perp: p.f64("a_perp_start_mhz")?,
        a_contact: p.f64("a_contact_start_mhz")?,
        gamma_c13: cal.hyperfine.gamma_c13,
    };
    let fit = fit_hyperfine(&cal.fine_structure, &cal.hyperfine_targets, &h0)?;
    let mut table = Table::new("residuals", vec!["field_mt", "target", "sigma", "model", "residual"]);
    let mut labelled = Vec::new();
    for r in &fit.residuals {
        table.push(vec![
            r.target.field.magnitude(),
            r.target.value,
            r.target.sigma,
            r.model,
            r.residual,
        ]);
        labelled.push(json!({
            "quantity": quantity_label(&r.target.quantity),
            "field_mt": r.target.field.magnitude(),
            "target": r.target.value,
            "model": r.model,
            "residual": r.residual,
        }));
    }
    let max_rf_khz = fit
        .residuals
        .iter()
        .filter(|r| {
            matches!(
                r.target.quantity,
                HyperfineQuantity::Line(Transition::Rf1 | Transition::Rf2)
            )
        })
        .map(|r| 1e3 * r.residual.abs())
        .fold(0.0, f64::max);
    let updated = Calibration {
        hyperfine: fit.params,
        ..cal.clone()
    };
    let summary = json!({
        "hyperfine": fit.params,
        "sigmas_mhz": { "a_par": fit.sigmas[0], "a_perp": fit.sigmas[1], "a_contact": fit.sigmas[2] },
        "max_rf_residual_khz": max_rf_khz,
        "reduced_chi_square": fit.fit.reduced_chi_square,
        "residuals": labelled,
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![("calibration.json".into(), updated.to_json()?)],
    })
}

pub fn two_tone(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let (b_ac, reference) = (p.f64("b_ac_mt")?, p.f64("reference_dbm")?);
    let conversion = p.f64("conversion_mhz_per_mt")?;
    let fwhm = 1e6 * p.f64("fwhm_mhz")?;
    let background = p.f64("background")?;
    let n = p.usize("points")?;
    let mut table = Table::new("spectra", vec!["power_dbm", "detuning_mhz", "signal"]);
    let mut spectra = Vec::new();
    for power in p.f64_list("powers_dbm")? {
        // Amplitude law: the modulation depth scales with the field amplitude.
        let omega = b_ac * conversion * 1e6 * 10f64.powf((power - reference) / 20.0);
        let line = TwoToneConfig {
            omega_rf_mod: omega,
            lorentzian_fwhm: fwhm,
            conversion,
            ..TwoToneConfig::default()
        };
        let span = omega + 20.0 * fwhm;
        let grid = linspace(-span, span, n)?;
        let signal: Vec<f64> = grid
            .iter()
            .map(|&d| two_tone_density(&line, d).map(|v| 1e6 * v + background))
            .collect::<Result<_, _>>()?;
        for (d, s) in grid.iter().zip(&signal) {
            table.push(vec![power, d / 1e6, *s]);
        }
        spectra.push(PowerSpectrum {
            power_dbm: power,
            detuning_hz: grid,
            signal,
        });
    }
    if spectra.is_empty() {
        return Err(CliError::validation("powers_dbm is empty"));
    }
    let bac = calibrate_bac(&spectra, p.f64("angle_deg")?, conversion, reference)?;
    let mut amplitudes = Table::new("modulation", vec!["power_dbm", "omega_rf_mhz", "omega_rf_sigma_mhz"]);
    for ((s, w), sw) in spectra.iter().zip(&bac.omega_rf_hz).zip(&bac.omega_rf_sigma_hz) {
        amplitudes.push(vec![s.power_dbm, w / 1e6, sw / 1e6]);
    }
    let cal = &cfg.calibration;
    let static_field = FieldVector::axial(p.f64("enhancement_field_mt")?);
    let xi = rabi_enhancement(
        &cal.fine_structure,
        &cal.hyperfine,
        &static_field,
        direction_deg(p.f64("angle_deg")?, 0.0),
    )?;
    let summary = json!({
        "b_ac_mt": bac.b_ac_mt,
        "b_perp_mt": bac.b_perp_mt,
        "slope_per_dbm": bac.slope_per_dbm,
        "reference_dbm": bac.reference_dbm,
        "amplitude_at_0dbm_mhz": bac.amplitude_hz / 1e6,
        "enhancement": xi,
        "nuclear_rabi_khz": nuclear_rabi(bac.b_ac_mt, xi, cal.hyperfine.gamma_c13)?,
    });
    Ok(Outcome {
        tables: vec![table, amplitudes],
        summary,
        documents: vec![],
    })
}
