//! Experiment names and their parameter blocks: keys carry their unit as a
//! suffix, and every optional key has a documented default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Levels,
    Init,
    Rabi,
    Chevron,
    Ramsey,
    Echo,
    Cpmg,
    Rb,
    TwoTone,
    Fit,
    Calibrate,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::Levels,
        Experiment::Init,
        Experiment::Rabi,
        Experiment::Chevron,
        Experiment::Ramsey,
        Experiment::Echo,
        Experiment::Cpmg,
        Experiment::Rb,
        Experiment::TwoTone,
        Experiment::Fit,
        Experiment::Calibrate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Levels => "levels",
            Experiment::Init => "init",
            Experiment::Rabi => "rabi",
            Experiment::Chevron => "chevron",
            Experiment::Ramsey => "ramsey",
            Experiment::Echo => "echo",
            Experiment::Cpmg => "cpmg",
            Experiment::Rb => "rb",
            Experiment::TwoTone => "two-tone",
            Experiment::Fit => "fit",
            Experiment::Calibrate => "calibrate",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Experiment::Levels => "electron and hyperfine transition frequencies versus field",
            Experiment::Init => "six-level optical pumping into the dark state and initialization fidelity",
            Experiment::Rabi => "driven population oscillation of a detuned line",
            Experiment::Chevron => "excited population over drive detuning and pulse length",
            Experiment::Ramsey => "free-induction decay under Ornstein-Uhlenbeck dephasing",
            Experiment::Echo => "Hahn-echo decay under Ornstein-Uhlenbeck dephasing",
            Experiment::Cpmg => "CPMG decay for several pulse counts and the T2 scaling law",
            Experiment::Rb => "single-qubit randomized benchmarking",
            Experiment::TwoTone => "two-tone spectra versus RF power and the AC field calibration",
            Experiment::Fit => "fit a registered model to a CSV data file",
            Experiment::Calibrate => "refit the hyperfine tensor to the calibration targets",
        }
    }

    /// Experiments that draw random numbers and so need a seed.
    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Experiment::Ramsey | Experiment::Echo | Experiment::Cpmg | Experiment::Rb
        )
    }

    pub fn params(self) -> &'static [ParamDoc] {
        match self {
            Experiment::Levels => LEVELS,
            Experiment::Init => INIT,
            Experiment::Rabi => RABI,
            Experiment::Chevron => CHEVRON,
            Experiment::Ramsey => RAMSEY,
            Experiment::Echo => ECHO,
            Experiment::Cpmg => CPMG,
            Experiment::Rb => RB,
            Experiment::TwoTone => TWO_TONE,
            Experiment::Fit => FIT,
            Experiment::Calibrate => CALIBRATE,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::validation(format!("unknown experiment {s:?}; run `spinlab list`")))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DefaultValue {
    /// JSON literal.
    Value(&'static str),
    Required,
    /// Taken from the calibration file.
    Calibration,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamDoc {
    pub name: &'static str,
    pub unit: &'static str,
    pub default: DefaultValue,
    pub help: &'static str,
}

const fn p(name: &'static str, unit: &'static str, default: &'static str, help: &'static str) -> ParamDoc {
    ParamDoc {
        name,
        unit,
        default: DefaultValue::Value(default),
        help,
    }
}

const fn cal(name: &'static str, unit: &'static str, help: &'static str) -> ParamDoc {
    ParamDoc {
        name,
        unit,
        default: DefaultValue::Calibration,
        help,
    }
}

const fn required(name: &'static str, unit: &'static str, help: &'static str) -> ParamDoc {
    ParamDoc {
        name,
        unit,
        default: DefaultValue::Required,
        help,
    }
}

const LEVELS: &[ParamDoc] = &[
    p("fields_mt", "mT", "[20, 60, 106, 150, 200]", "static field magnitudes"),
    p("field_polar_deg", "deg", "0", "static field angle from the defect axis"),
    p(
        "ac_polar_deg",
        "deg",
        "54.7",
        "AC field angle from the defect axis, for the Rabi enhancement",
    ),
    p(
        "gamma_field_mt",
        "mT",
        "106",
        "axial operating field for the effective gyromagnetic ratio",
    ),
    p(
        "gamma_polar_deg",
        "deg",
        "54.7",
        "direction along which the gyromagnetic ratio is taken",
    ),
];

const INIT: &[ParamDoc] = &[
    p("t_max_ms", "ms", "20", "length of the pumping trace"),
    p("points", "", "201", "samples in the trace"),
    p(
        "dark_fraction",
        "",
        "0.99",
        "dark-state population defining the initialization time",
    ),
    p("amplitude_a_counts", "counts", "176.0", "fitted decay amplitude A"),
    p("decay_rate_per_ms", "1/ms", "1.75", "fitted decay rate"),
    p("offset_c_counts", "counts", "8.40", "fitted offset C"),
    p("dark_b_counts", "counts", "8.08", "dark-count level B"),
    p("sigma_a_counts", "counts", "3.0", "uncertainty of A"),
    p("sigma_decay_per_ms", "1/ms", "0.1", "uncertainty of the decay rate"),
    p("sigma_c_counts", "counts", "0.4", "uncertainty of C"),
    p("sigma_b_counts", "counts", "0.01", "uncertainty of B"),
    p("rho_ac", "", "0.2235", "correlation of A and C"),
    p("rho_ab", "", "1.0", "correlation of A and B"),
    p("rho_cb", "", "1.0", "correlation of C and B"),
];

const RABI: &[ParamDoc] = &[
    p("rabi_khz", "kHz", "7.263", "resonant Rabi frequency"),
    p("detuning_khz", "kHz", "0.826", "drive detuning"),
    p("t_max_us", "us", "400", "longest pulse"),
    p("points", "", "401", "pulse lengths sampled"),
];

const CHEVRON: &[ParamDoc] = &[
    p("rabi_khz", "kHz", "7.263", "resonant Rabi frequency"),
    p("detuning_span_khz", "kHz", "20", "detunings run over ± half this span"),
    p("detuning_points", "", "41", "detunings sampled"),
    p("t_max_us", "us", "300", "longest pulse"),
    p("time_points", "", "151", "pulse lengths sampled"),
];

const RAMSEY: &[ParamDoc] = &[
    p(
        "detuning_khz",
        "kHz",
        "0.5",
        "frame detuning; zero gives a pure Gaussian decay",
    ),
    p("tau_max_ms", "ms", "4", "longest free-evolution time"),
    p("points", "", "60", "delays sampled"),
    p("shots", "", "10000", "noise realizations per delay"),
    cal("b_rad_per_s", "rad/s", "bath coupling b"),
    cal("tau_c_s", "s", "bath correlation time"),
];

const ECHO: &[ParamDoc] = &[
    p("t_max_s", "s", "0.4", "longest total evolution time 2τ"),
    p("points", "", "30", "times sampled"),
    p("shots", "", "10000", "noise realizations per time"),
    cal("b_rad_per_s", "rad/s", "bath coupling b"),
    cal("tau_c_s", "s", "bath correlation time"),
];

const CPMG: &[ParamDoc] = &[
    p(
        "pulse_counts",
        "",
        "[1, 2, 4, 8, 16, 32, 64, 128]",
        "numbers of refocusing pulses",
    ),
    p("points", "", "20", "total evolution times per pulse count"),
    p("start_factor", "", "0.05", "first time, in units of the model T2(N)"),
    p("span_factor", "", "2.0", "last time, in units of the model T2(N)"),
    p("shots", "", "10000", "noise realizations per time"),
    cal("b_rad_per_s", "rad/s", "bath coupling b"),
    cal("tau_c_s", "s", "bath correlation time"),
];

const RB: &[ParamDoc] = &[
    p(
        "sequence_lengths",
        "",
        "[1, 5, 10, 20, 50, 100, 200]",
        "numbers of random gates",
    ),
    p("realizations", "", "20", "random sequences per length"),
    p("shots", "", "500", "repetitions per sequence and readout variant"),
    p(
        "error_model",
        "",
        "\"depolarizing\"",
        "one of none, depolarizing, ou-dephasing",
    ),
    p("depolarizing_p", "", "0.0016", "depolarizing probability per gate"),
    p("pi_half_ns", "ns", "50", "π/2-pulse duration for the dephasing model"),
    p(
        "ou_b_rad_per_s",
        "rad/s",
        "2.0e6",
        "electron bath coupling for the dephasing model",
    ),
    p(
        "ou_tau_c_s",
        "s",
        "1.0e-3",
        "electron bath correlation time for the dephasing model",
    ),
];

const TWO_TONE: &[ParamDoc] = &[
    p("b_ac_mt", "mT", "1.26", "AC field amplitude at the reference power"),
    p("reference_dbm", "dBm", "10", "reference RF power"),
    p("powers_dbm", "dBm", "[-2, 1, 4, 7, 10]", "RF powers simulated"),
    p("fwhm_mhz", "MHz", "2.0", "probe line width"),
    p("points", "", "401", "detunings per spectrum"),
    p("background", "", "0.1", "constant signal floor"),
    p("angle_deg", "deg", "54.7", "angle of the AC field to the defect axis"),
    p(
        "conversion_mhz_per_mt",
        "MHz/mT",
        "20.27",
        "modulation amplitude per unit AC field",
    ),
    p(
        "enhancement_field_mt",
        "mT",
        "60",
        "axial static field at which the nuclear Rabi frequency is predicted",
    ),
];

const FIT: &[ParamDoc] = &[
    required("model", "", "registered model name; see `spinlab describe fit`"),
    required(
        "data_file",
        "path",
        "CSV with x, y and optional sigma columns, relative to the config",
    ),
    p(
        "weights",
        "",
        "\"auto\"",
        "uniform, counts, sigma, or auto (sigma when a third column exists)",
    ),
];

const CALIBRATE: &[ParamDoc] = &[
    p("a_par_start_mhz", "MHz", "40", "starting axial coupling"),
    p("a_perp_start_mhz", "MHz", "0", "starting off-diagonal coupling"),
    p("a_contact_start_mhz", "MHz", "0", "starting contact coupling"),
];

/// Human-readable parameter table for `spinlab describe`.
pub fn describe(e: Experiment) -> String {
    let mut out = format!("{}: {}\n", e.name(), e.summary());
    if e.is_stochastic() {
        out.push_str("requires a seed (config `seed` or --seed)\n");
    }
    out.push_str("\nparameters:\n");
    let width = e.params().iter().map(|d| d.name.len()).max().unwrap_or(0);
    for d in e.params() {
        let default = match d.default {
            DefaultValue::Value(v) => format!("default {v}"),
            DefaultValue::Required => "required".into(),
            DefaultValue::Calibration => "default from calibration".into(),
        };
        let unit = if d.unit.is_empty() {
            String::new()
        } else {
            format!(" [{}]", d.unit)
        };
        out.push_str(&format!("  {:width$}  {}{unit}; {default}\n", d.name, d.help));
    }
    if e == Experiment::Fit {
        out.push_str("\nmodels:\n");
        for m in spinlab_core::fitkit::model_registry() {
            out.push_str(&format!("  {} ({})\n", m.name(), m.param_names().join(", ")));
        }
    }
    out
}
