//! One runner per experiment; each turns a resolved config into tables and a
//! JSON summary.

mod benchmark;
mod coherence;
mod fit;
mod pumping;
mod spectroscopy;

use spinlab_core::pulse::OUProcess;

use crate::config::{ExperimentConfig, Params};
use crate::error::{CliError, CliResult};
use crate::output::Outcome;
use crate::schema::Experiment;

pub use fit::fit_file;

pub fn run(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    match cfg.experiment {
        Experiment::Levels => spectroscopy::levels(cfg),
        Experiment::Calibrate => spectroscopy::calibrate(cfg),
        Experiment::TwoTone => spectroscopy::two_tone(cfg),
        Experiment::Init => pumping::init(cfg),
        Experiment::Rabi => coherence::rabi(cfg),
        Experiment::Chevron => coherence::chevron(cfg),
        Experiment::Ramsey => coherence::ramsey(cfg),
        Experiment::Echo => coherence::echo(cfg),
        Experiment::Cpmg => coherence::cpmg(cfg),
        Experiment::Rb => benchmark::rb(cfg),
        Experiment::Fit => fit::fit_experiment(cfg),
    }
}

fn linspace(a: f64, b: f64, n: usize) -> CliResult<Vec<f64>> {
    match n {
        0 => Err(CliError::validation("a grid needs at least one point")),
        1 => Ok(vec![a]),
        _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
    }
}

fn bath(params: &Params, seed: u64) -> CliResult<OUProcess> {
    let noise = OUProcess {
        coupling_b: params.f64("b_rad_per_s")?,
        tau_c: params.f64("tau_c_s")?,
        seed,
    };
    noise.validate()?;
    Ok(noise)
}
