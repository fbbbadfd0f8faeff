use serde_json::{json, Value};
use spinlab_core::pulse::*;

use super::{bath, linspace};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Outcome, Table};

pub fn rabi(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let (omega, detuning) = (1e3 * p.f64("rabi_khz")?, 1e3 * p.f64("detuning_khz")?);
    let mut table = Table::new("rabi", vec!["t_us", "excited_population"]);
    for t in linspace(0.0, p.f64("t_max_us")?, p.usize("points")?)? {
        let seq = PulseSequence::new(vec![Element::Pulse {
            rabi_hz: omega,
            phase: 0.0,
            duration_s: t * 1e-6,
            detuning_hz: detuning,
        }])?;
        table.push(vec![t, propagate(&seq, 0.0)?.excited_population()]);
    }
    let generalized = omega.hypot(detuning);
    let summary = json!({
        "generalized_rabi_khz": generalized / 1e3,
        "contrast": (omega / generalized).powi(2),
        "pi_time_us": 1e6 / (2.0 * generalized),
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}

pub fn chevron(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let half = 0.5 * p.f64("detuning_span_khz")?;
    let detunings = linspace(-half, half, p.usize("detuning_points")?)?;
    let times = linspace(0.0, p.f64("t_max_us")?, p.usize("time_points")?)?;
    let hz: Vec<f64> = detunings.iter().map(|d| d * 1e3).collect();
    let secs: Vec<f64> = times.iter().map(|t| t * 1e-6).collect();
    let grid = rabi_chevron(1e3 * p.f64("rabi_khz")?, &hz, &secs)?;
    let mut table = Table::new("chevron", vec!["detuning_khz", "t_us", "excited_population"]);
    for (d, row) in detunings.iter().zip(&grid) {
        for (t, pop) in times.iter().zip(row) {
            table.push(vec![*d, *t, *pop]);
        }
    }
    let peak = grid.iter().flatten().copied().fold(0.0, f64::max);
    Ok(Outcome {
        tables: vec![table],
        summary: json!({ "max_excited_population": peak }),
        documents: vec![],
    })
}

fn coherence_table(
    name: &str,
    time_header: &'static str,
    scale: f64,
    mc: &CoherenceTrace,
    an: &CoherenceTrace,
) -> Table {
    let mut t = Table::new(name, vec![time_header, "visibility", "stderr", "analytic"]);
    for k in 0..mc.tau_s.len() {
        t.push(vec![
            mc.tau_s[k] * scale,
            mc.visibility[k],
            mc.stderr[k],
            an.visibility[k],
        ]);
    }
    t
}

fn fit_json(r: &CoherenceResult) -> Value {
    json!({
        "t2_s": r.t2,
        "t2_sigma_s": r.t2_sigma,
        "stretch_xi": r.stretch_xi,
        "stretch_sigma": r.stretch_sigma,
        "amplitude": r.amplitude,
    })
}

pub fn ramsey(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let noise = bath(p, cfg.seed())?;
    let detuning = 1e3 * p.f64("detuning_khz")?;
    let taus: Vec<f64> = linspace(0.0, p.f64("tau_max_ms")?, p.usize("points")?)?
        .iter()
        .map(|t| t * 1e-3)
        .collect();
    let mc = spinlab_core::pulse::ramsey(detuning, &taus, &noise, p.usize("shots")?)?;
    let an = ramsey_analytic(detuning, &taus, noise.coupling_b)?;
    let model = if detuning == 0.0 {
        CoherenceModel::GaussianRamsey
    } else {
        CoherenceModel::SineGaussian
    };
    let fit = fit_coherence(&mc, model)?;
    let summary = json!({
        "t2_star_s": fit.t2,
        "t2_star_sigma_s": fit.t2_sigma,
        "model_t2_star_s": noise.t2_star(),
    });
    Ok(Outcome {
        tables: vec![coherence_table("ramsey", "tau_ms", 1e3, &mc, &an)],
        summary,
        documents: vec![],
    })
}

pub fn echo(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let noise = bath(p, cfg.seed())?;
    let times = linspace(0.0, p.f64("t_max_s")?, p.usize("points")?)?;
    let mc = dynamical_decoupling(1, &times, &noise, p.usize("shots")?, PhaseConvention::Cpmg)?;
    let an = dynamical_decoupling_analytic(1, &times, &noise)?;
    let fit = fit_coherence(&mc, CoherenceModel::StretchedExp)?;
    let mut summary = fit_json(&fit);
    summary["model_t2_s"] = noise.t2_cpmg(1).into();
    Ok(Outcome {
        tables: vec![coherence_table("echo", "total_time_s", 1.0, &mc, &an)],
        summary,
        documents: vec![],
    })
}

pub fn cpmg(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let noise = bath(p, cfg.seed())?;
    let counts = p.usize_list("pulse_counts")?;
    if counts.is_empty() || counts.contains(&0) {
        return Err(CliError::validation(
            "pulse_counts must be a non-empty list of positive integers",
        ));
    }
    let (start, span, n, shots) = (
        p.f64("start_factor")?,
        p.f64("span_factor")?,
        p.usize("points")?,
        p.usize("shots")?,
    );
    let mut table = Table::new(
        "cpmg",
        vec!["n_pulses", "total_time_s", "visibility", "stderr", "analytic"],
    );
    let mut fits = Vec::new();
    for &np in &counts {
        let model_t2 = noise.t2_cpmg(np);
        let times = linspace(start * model_t2, span * model_t2, n)?;
        let mc = dynamical_decoupling(np, &times, &noise, shots, PhaseConvention::Cpmg)?;
        let an = dynamical_decoupling_analytic(np, &times, &noise)?;
        for (k, &t) in times.iter().enumerate() {
            table.push(vec![np as f64, t, mc.visibility[k], mc.stderr[k], an.visibility[k]]);
        }
        let fit = fit_coherence(&mc, CoherenceModel::StretchedExp)?;
        fits.push((np, model_t2, fit));
    }
    let per_n: Vec<Value> = fits
        .iter()
        .map(|(np, model_t2, r)| {
            let mut v = fit_json(r);
            v["n_pulses"] = (*np).into();
            v["model_t2_s"] = (*model_t2).into();
            v
        })
        .collect();
    let results: Vec<CoherenceResult> = fits.iter().map(|f| f.2.clone()).collect();
    let (xi, xi_sigma) = mean_stretch(&results)?;
    let mut summary = json!({ "fits": per_n, "mean_stretch_xi": xi, "mean_stretch_sigma": xi_sigma });
    let points: Vec<(f64, f64)> = fits.iter().map(|(np, _, r)| (*np as f64, r.t2)).collect();
    if let Ok(s) = fit_scaling(&points) {
        summary["scaling"] = json!({ "beta": s.beta, "beta_sigma": s.beta_sigma, "t2_single_s": s.t2_single });
    }
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}
