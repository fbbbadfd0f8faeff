use serde_json::json;
use spinlab_core::benchmarking::{run_rb, ErrorModel, RBConfig, PRIMITIVES_PER_CLIFFORD};
use spinlab_core::pulse::OUProcess;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Outcome, Table};

pub fn rb(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let p = &cfg.params;
    let error_model = match p.string("error_model")?.as_str() {
        "none" => ErrorModel::None,
        "depolarizing" => ErrorModel::Depolarizing {
            p: p.f64("depolarizing_p")?,
        },
        "ou-dephasing" => ErrorModel::OuDephasing {
            noise: OUProcess {
                coupling_b: p.f64("ou_b_rad_per_s")?,
                tau_c: p.f64("ou_tau_c_s")?,
                seed: cfg.seed(),
            },
            pi_half_s: 1e-9 * p.f64("pi_half_ns")?,
        },
        other => {
            return Err(CliError::validation(format!(
                "error_model {other:?} is not one of none, depolarizing, ou-dephasing"
            )))
        }
    };
    let res = run_rb(&RBConfig {
        sequence_lengths: p.usize_list("sequence_lengths")?,
        realizations: p.usize("realizations")?,
        shots: p.usize("shots")?,
        error_model,
        seed: cfg.seed(),
    })?;
    let mut table = Table::new("rb", vec!["n", "mean_visibility", "stderr"]);
    for k in 0..res.sequence_lengths.len() {
        table.push(vec![
            res.sequence_lengths[k] as f64,
            res.mean_visibility[k],
            res.stderr[k],
        ]);
    }
    let summary = json!({
        "amplitude": res.amplitude,
        "amplitude_sigma": res.amplitude_sigma,
        "p": res.p,
        "p_sigma": res.p_sigma,
        "f_primitive": res.f_primitive,
        "f_primitive_sigma": res.f_primitive_sigma,
        "f_clifford": res.f_clifford,
        "f_clifford_sigma": res.f_clifford_sigma,
        "primitives_per_clifford": PRIMITIVES_PER_CLIFFORD,
    });
    Ok(Outcome {
        tables: vec![table],
        summary,
        documents: vec![],
    })
}
