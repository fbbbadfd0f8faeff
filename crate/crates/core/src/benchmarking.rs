//! Single-qubit randomized benchmarking over the nine primitive gates
//! {I, ±X, ±Y, ±X², ±Y²}.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fitkit::{self, model_by_name, CurveData, FitOptions, FitResult};
use crate::pulse::OUProcess;
use crate::rng::{mean_and_stderr, stream_rng};

type C64 = Complex<f64>;

/// Primitive gates per Clifford, the ratio tying primitive and Clifford
/// infidelities.
pub const PRIMITIVES_PER_CLIFFORD: f64 = 1.875;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateSymbol {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "+X")]
    PlusX,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "+Y")]
    PlusY,
    #[serde(rename = "-Y")]
    MinusY,
    #[serde(rename = "+X2")]
    PlusX2,
    #[serde(rename = "-X2")]
    MinusX2,
    #[serde(rename = "+Y2")]
    PlusY2,
    #[serde(rename = "-Y2")]
    MinusY2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    None,
}

impl GateSymbol {
    /// The gate set in its fixed order, which also breaks ties.
    pub const ALL: [GateSymbol; 9] = [
        GateSymbol::I,
        GateSymbol::PlusX,
        GateSymbol::MinusX,
        GateSymbol::PlusY,
        GateSymbol::MinusY,
        GateSymbol::PlusX2,
        GateSymbol::MinusX2,
        GateSymbol::PlusY2,
        GateSymbol::MinusY2,
    ];

    pub fn axis(self) -> Axis {
        use GateSymbol::*;
        match self {
            I => Axis::None,
            PlusX | MinusX | PlusX2 | MinusX2 => Axis::X,
            PlusY | MinusY | PlusY2 | MinusY2 => Axis::Y,
        }
    }

    pub fn angle(self) -> f64 {
        use GateSymbol::*;
        match self {
            I => 0.0,
            PlusX | PlusY => PI / 2.0,
            MinusX | MinusY => -PI / 2.0,
            PlusX2 | PlusY2 => PI,
            MinusX2 | MinusY2 => -PI,
        }
    }

    /// Duration in units of the π/2 pulse. The identity waits as long as X².
    pub fn duration_units(self) -> f64 {
        match self {
            GateSymbol::I => 2.0,
            g if g.angle().abs() > PI / 2.0 + 1e-12 => 2.0,
            _ => 1.0,
        }
    }

    /// SU(2) matrix exp(−iθσ/2).
    pub fn unitary(self) -> Matrix2<C64> {
        let (s, c) = (self.angle() / 2.0).sin_cos();
        let (c, z) = (C64::new(c, 0.0), C64::new(0.0, 0.0));
        match self.axis() {
            Axis::None => Matrix2::identity(),
            Axis::X => {
                let m = C64::new(0.0, -s);
                Matrix2::new(c, m, m, c)
            }
            Axis::Y => {
                let m = C64::new(-s, 0.0);
                Matrix2::new(c, m, -m, c)
            }
        }
        .map(|v| v + z)
    }

    /// SO(3) rotation acting on the Bloch vector.
    pub fn rotation(self) -> Matrix3<f64> {
        let (s, c) = self.angle().sin_cos();
        match self.axis() {
            Axis::None => Matrix3::identity(),
            Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        }
    }

    /// Final gate of the phase-shifted readout variant, aiming at the other
    /// pole. Quarter turns flip sign; I and X² trade places.
    pub fn pi_shifted(self) -> GateSymbol {
        use GateSymbol::*;
        match self {
            I => PlusX2,
            PlusX2 | MinusX2 | PlusY2 | MinusY2 => I,
            PlusX => MinusX,
            MinusX => PlusX,
            PlusY => MinusY,
            MinusY => PlusY,
        }
    }

    pub fn label(self) -> &'static str {
        use GateSymbol::*;
        match self {
            I => "I",
            PlusX => "+X",
            MinusX => "-X",
            PlusY => "+Y",
            MinusY => "-Y",
            PlusX2 => "+X2",
            MinusX2 => "-X2",
            PlusY2 => "+Y2",
            MinusY2 => "-Y2",
        }
    }
}

impl fmt::Display for GateSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GateSymbol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GateSymbol::ALL
            .into_iter()
            .find(|g| g.label() == s)
            .ok_or_else(|| invalid(format!("unknown gate {s:?}")))
    }
}

/// Net SU(2) rotation; the first gate acts first.
pub fn compose(seq: &[GateSymbol]) -> Matrix2<C64> {
    seq.iter().fold(Matrix2::identity(), |acc, g| g.unitary() * acc)
}

fn compose_bloch(seq: &[GateSymbol]) -> Matrix3<f64> {
    seq.iter().fold(Matrix3::identity(), |acc, g| g.rotation() * acc)
}

const SEQUENCE_STREAM: u64 = 0x5e9;

/// Uniform i.i.d. draws from the gate set.
pub fn random_sequence(n: usize, seed: u64) -> Vec<GateSymbol> {
    draw_sequence(n, &mut stream_rng(seed, &[SEQUENCE_STREAM]))
}

fn draw_sequence<R: Rng>(n: usize, rng: &mut R) -> Vec<GateSymbol> {
    (0..n)
        .map(|_| GateSymbol::ALL[rng.random_range(0..GateSymbol::ALL.len())])
        .collect()
}

/// Single gate returning the ideal final state of `seq` to |0⟩, the first
/// such gate in [`GateSymbol::ALL`] order.
pub fn inverse_gate(seq: &[GateSymbol]) -> Result<GateSymbol> {
    let r = compose_bloch(seq) * Vector3::z();
    let cardinal = r.iter().filter(|c| (c.abs() - 1.0).abs() < 1e-6).count() == 1
        && r.iter().filter(|c| c.abs() < 1e-6).count() == 2;
    if !cardinal {
        return Err(Error::Consistency(format!(
            "sequence leaves a non-cardinal state {r:?}"
        )));
    }
    GateSymbol::ALL
        .into_iter()
        .find(|g| (g.rotation() * r)[2] > 1.0 - 1e-6)
        .ok_or_else(|| Error::Consistency("no single gate returns the state to |0⟩".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ErrorModel {
    None,
    /// Bloch vector contracts by (1 − p) after every gate, the final one included.
    Depolarizing {
        p: f64,
    },
    /// Quasi-static frequency noise accumulated during each gate; `pi_half_s`
    /// is the π/2-pulse duration.
    OuDephasing {
        noise: OUProcess,
        pi_half_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RBConfig {
    pub sequence_lengths: Vec<usize>,
    pub realizations: usize,
    pub shots: usize,
    pub error_model: ErrorModel,
    pub seed: u64,
}

impl Default for RBConfig {
    fn default() -> Self {
        Self {
            sequence_lengths: vec![1, 5, 10, 20, 50, 100, 200],
            realizations: 20,
            shots: 500,
            error_model: ErrorModel::None,
            seed: 0,
        }
    }
}

impl RBConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_lengths.is_empty() {
            return Err(invalid("no sequence lengths given"));
        }
        if self.realizations == 0 || self.shots == 0 {
            return Err(invalid("realizations and shots must be at least one"));
        }
        match self.error_model {
            ErrorModel::None => {}
            ErrorModel::Depolarizing { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("depolarizing probability {p} outside [0, 1]")));
                }
            }
            ErrorModel::OuDephasing { noise, pi_half_s } => {
                noise.validate()?;
                if !(pi_half_s >= 0.0 && pi_half_s.is_finite()) {
                    return Err(invalid("gate duration must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RBResult {
    pub sequence_lengths: Vec<usize>,
    pub mean_visibility: Vec<f64>,
    pub stderr: Vec<f64>,
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub p: f64,
    pub p_sigma: f64,
    pub f_primitive: f64,
    pub f_primitive_sigma: f64,
    pub f_clifford: f64,
    pub f_clifford_sigma: f64,
}

/// F = 1 − (1 − P)/2.
pub fn primitive_fidelity(p: f64) -> f64 {
    1.0 - (1.0 - p) / 2.0
}

/// Clifford fidelity from the primitive one.
pub fn clifford_fidelity(f_primitive: f64) -> f64 {
    1.0 - PRIMITIVES_PER_CLIFFORD * (1.0 - f_primitive)
}

fn apply(seq: &[GateSymbol], last: GateSymbol, mut after_gate: impl FnMut(GateSymbol, &mut Vector3<f64>)) -> f64 {
    let mut r = Vector3::z();
    for g in seq.iter().copied().chain(std::iter::once(last)) {
        r = g.rotation() * r;
        after_gate(g, &mut r);
    }
    r[2]
}

fn rotate_z(r: &mut Vector3<f64>, phi: f64) {
    let (s, c) = phi.sin_cos();
    *r = Vector3::new(c * r[0] - s * r[1], s * r[0] + c * r[1], r[2]);
}

/// Counts of |0⟩ out of `shots` for one readout variant.
fn readout<R: Rng>(seq: &[GateSymbol], last: GateSymbol, cfg: &RBConfig, rng: &mut R) -> u64 {
    let p0 = |z: f64| (0.5 * (1.0 + z)).clamp(0.0, 1.0);
    let binomial = |z: f64, rng: &mut R| {
        Binomial::new(cfg.shots as u64, p0(z))
            .expect("probability in [0, 1]")
            .sample(rng)
    };
    match cfg.error_model {
        ErrorModel::None => binomial(apply(seq, last, |_, _| {}), rng),
        ErrorModel::Depolarizing { p } => binomial(apply(seq, last, |_, r| *r *= 1.0 - p), rng),
        ErrorModel::OuDephasing { noise, pi_half_s } => {
            // Each gate is followed by the phase the bath accumulates over
            // its duration; every shot sees its own bath path.
            let short = noise.segment(pi_half_s);
            let long = noise.segment(2.0 * pi_half_s);
            (0..cfg.shots)
                .filter(|_| {
                    let mut x = noise.coupling_b * rng.sample::<f64, _>(StandardNormal);
                    let z = apply(seq, last, |g, r| {
                        let seg = if g.duration_units() > 1.0 { &long } else { &short };
                        rotate_z(r, seg.step(&mut x, rng));
                    });
                    rng.random_bool(p0(z))
                })
                .count() as u64
        }
    }
}

fn realization_visibility(n: usize, cfg: &RBConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let seq = draw_sequence(n, rng);
    let inv = inverse_gate(&seq)?;
    let k0 = readout(&seq, inv, cfg, rng) as f64;
    let k1 = readout(&seq, inv.pi_shifted(), cfg, rng) as f64;
    Ok(if k0 + k1 > 0.0 { (k0 - k1) / (k0 + k1) } else { 0.0 })
}

/// Simulates every (length, realization) pair and fits A·P^N to the means.
pub fn run_rb(cfg: &RBConfig) -> Result<RBResult> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> = cfg
        .sequence_lengths
        .iter()
        .flat_map(|&n| (0..cfg.realizations).map(move |r| (n, r)))
        .collect();
    let vis: Vec<f64> = tasks
        .par_iter()
        .map(|&(n, r)| realization_visibility(n, cfg, &mut stream_rng(cfg.seed, &[n as u64, r as u64])))
        .collect::<Result<_>>()?;
    let (mean_visibility, stderr): (Vec<f64>, Vec<f64>) = vis.chunks(cfg.realizations).map(mean_and_stderr).unzip();
    let points: Vec<(f64, f64)> = cfg
        .sequence_lengths
        .iter()
        .map(|&n| n as f64)
        .zip(mean_visibility.iter().copied())
        .collect();
    let sigmas = stderr.iter().all(|s| *s > 0.0).then_some(stderr.as_slice());
    let fit = fit_rb_decay(&points, sigmas)?;
    let f_primitive = primitive_fidelity(fit.p);
    Ok(RBResult {
        sequence_lengths: cfg.sequence_lengths.clone(),
        mean_visibility,
        stderr,
        amplitude: fit.amplitude,
        amplitude_sigma: fit.amplitude_sigma,
        p: fit.p,
        p_sigma: fit.p_sigma,
        f_primitive,
        f_primitive_sigma: fit.p_sigma / 2.0,
        f_clifford: clifford_fidelity(f_primitive),
        f_clifford_sigma: PRIMITIVES_PER_CLIFFORD * fit.p_sigma / 2.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RbFit {
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub p: f64,
    pub p_sigma: f64,
    pub fit: Option<FitResult>,
}

/// Fits A·P^N with P in (0, 1]. Supplied sigmas weight the points; the
/// covariance is inflated by the reduced chi-square when that exceeds one.
/// A trace that does not decay at all gives
/// P = 1 exactly, which the open-interval fit cannot reach.
pub fn fit_rb_decay(points: &[(f64, f64)], sigmas: Option<&[f64]>) -> Result<RbFit> {
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "{} distinct sequence lengths cannot fix amplitude, decay and their uncertainties",
            ns.len()
        )));
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (lo, hi) = ys.iter().fold((f64::MAX, f64::MIN), |(l, h), &y| (l.min(y), h.max(y)));
    if hi - lo <= 1e-12 * hi.abs() {
        return Ok(RbFit {
            amplitude: hi,
            amplitude_sigma: 0.0,
            p: 1.0,
            p_sigma: 0.0,
            fit: None,
        });
    }
    let mut data = CurveData::new(points.iter().map(|p| p.0).collect(), ys);
    if let Some(s) = sigmas {
        data = data.with_sigma(s.to_vec());
    }
    let model = model_by_name("rb_decay").expect("registered");
    let mut fit = fitkit::fit(model.as_ref(), &data, None, &FitOptions::default())?;
    // Standard errors from a handful of realizations understate the scatter
    // now and then, so the covariance is never allowed to undercut it. Unit
    // weights carry no scale of their own and take the scatter as is.
    let scale = match sigmas {
        Some(_) => fit.reduced_chi_square.max(1.0),
        None => fit.reduced_chi_square,
    };
    fit.covariance *= scale;
    Ok(RbFit {
        amplitude: fit.params[0],
        amplitude_sigma: fit.sigma(0),
        p: fit.params[1],
        p_sigma: fit.sigma(1),
        fit: Some(fit),
    })
}
