use serde_json::json;
use spinlab_core::pumping::{dark_state_time, init_fidelity, six_level_trace_from, InitFitInput, DARK_STATE};

use super::linspace;
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::output::{Outcome, Table};

pub fn init(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let six = cfg.calibration.pumping.six_level()?;
    let t = linspace(0.0, p.f64("t_max_ms")?, p.usize("points")?)?;
    // Unpolarized start: equal weight on the four ground sublevels.
    let trace = six_level_trace_from(&six, [0.25, 0.25, 0.25, 0.25, 0.0, 0.0], &t)?;
    let mut table = Table::new(
        "init_trace",
        vec![
            "t_ms",
            "fluorescence_per_us",
            "ground_0",
            "ground_1",
            "ground_2",
            "ground_3",
            "excited_0",
            "excited_1",
        ],
    );
    for (k, &tk) in trace.t_ms.iter().enumerate() {
        let (g, e) = (trace.ground[k], trace.excited[k]);
        table.push(vec![tk, trace.fluorescence[k], g[0], g[1], g[2], g[3], e[0], e[1]]);
    }

    let input = InitFitInput {
        amplitude_a: p.f64("amplitude_a_counts")?,
        decay_gamma: p.f64("decay_rate_per_ms")?,
        offset_c: p.f64("offset_c_counts")?,
        dark_b: p.f64("dark_b_counts")?,
        sigma_a: p.f64("sigma_a_counts")?,
        sigma_gamma: p.f64("sigma_decay_per_ms")?,
        sigma_c: p.f64("sigma_c_counts")?,
        sigma_b: p.f64("sigma_b_counts")?,
        rho_ac: p.f64("rho_ac")?,
        rho_ab: p.f64("rho_ab")?,
        rho_cb: p.f64("rho_cb")?,
    };
    let f = init_fidelity(&input)?;
    let raw = init_fidelity(&InitFitInput {
        dark_b: 0.0,
        sigma_b: 0.0,
        ..input
    })?;
    let fraction = p.f64("dark_fraction")?;
    let summary = json!({
        "dark_state": DARK_STATE,
        "dark_state_time_ms": dark_state_time(&six, fraction)?,
        "dark_fraction": fraction,
        "final_dark_population": trace.ground.last().map(|g| g[DARK_STATE]),
        "w_mw_rad_per_s": six.w_mw.rad_per_s(),
        "fidelity_percent": 100.0 * f.fidelity,
        "fidelity_sigma_pp": 100.0 * f.sigma,
        "fidelity_sigma_direct_pp": 100.0 * f.sigma_direct,
        "uncorrected_fidelity_percent": 100.0 * raw.fidelity,
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}
