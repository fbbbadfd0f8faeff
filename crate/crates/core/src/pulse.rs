//! Two-level dynamics in the rotating frame, Ornstein–Uhlenbeck dephasing and
//! the two-tone field calibration.
//!
//! Pulse amplitudes and detunings are linear frequencies in Hz, so a
//! resonant pulse rotates by 2π·Ω·t. Noise is an angular frequency shift in
//! rad/s.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::fitkit::{self, arcsine_lorentzian_density, model_by_name, CurveData, FitOptions, FitResult};
use crate::rng::{pairwise_sum, stream_rng};

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Element {
    Pulse {
        rabi_hz: f64,
        /// Drive phase; 0 rotates about x, π/2 about y.
        phase: f64,
        duration_s: f64,
        detuning_hz: f64,
    },
    Delay {
        duration_s: f64,
    },
}

impl Element {
    pub fn duration(&self) -> f64 {
        match *self {
            Element::Pulse { duration_s, .. } | Element::Delay { duration_s } => duration_s,
        }
    }

    /// Resonant rotation by `angle` about the equatorial axis at `phase`.
    pub fn rotation(rabi_hz: f64, angle: f64, phase: f64) -> Self {
        Element::Pulse {
            rabi_hz,
            phase,
            duration_s: angle / (2.0 * PI * rabi_hz),
            detuning_hz: 0.0,
        }
    }

    fn unitary(&self, offset_hz: f64) -> Matrix2<C64> {
        let (omega, phase, t, delta) = match *self {
            Element::Pulse {
                rabi_hz,
                phase,
                duration_s,
                detuning_hz,
            } => (rabi_hz, phase, duration_s, detuning_hz + offset_hz),
            Element::Delay { duration_s } => (0.0, 0.0, duration_s, offset_hz),
        };
        // H = π(Ω cos φ σx + Ω sin φ σy + Δ σz); U = exp(−iHt).
        let v = [omega * phase.cos(), omega * phase.sin(), delta];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let angle = PI * norm * t;
        let (s, c) = angle.sin_cos();
        let n = if norm > 0.0 {
            v.map(|x| x / norm)
        } else {
            [0.0, 0.0, 1.0]
        };
        let i = C64::i();
        Matrix2::new(
            C64::new(c, 0.0) - i * s * n[2],
            -i * s * C64::new(n[0], -n[1]),
            -i * s * C64::new(n[0], n[1]),
            C64::new(c, 0.0) + i * s * n[2],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    elements: Vec<Element>,
}

impl PulseSequence {
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(invalid("pulse sequence is empty"));
        }
        for e in &elements {
            let fields: &[f64] = match e {
                Element::Pulse {
                    rabi_hz,
                    phase,
                    duration_s,
                    detuning_hz,
                } => &[*rabi_hz, *phase, *duration_s, *detuning_hz],
                Element::Delay { duration_s } => &[*duration_s],
            };
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(invalid("sequence elements must be finite"));
            }
            if e.duration() < 0.0 {
                return Err(invalid("element durations must be non-negative"));
            }
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn duration(&self) -> f64 {
        self.elements.iter().map(Element::duration).sum()
    }

    /// Sequence undoing this one at zero frequency offset: reversed order,
    /// drive phases shifted by π and detunings negated.
    pub fn inverse(&self) -> Self {
        let elements = self
            .elements
            .iter()
            .rev()
            .map(|e| match *e {
                Element::Pulse {
                    rabi_hz,
                    phase,
                    duration_s,
                    detuning_hz,
                } => Element::Pulse {
                    rabi_hz,
                    phase: phase + PI,
                    duration_s,
                    detuning_hz: -detuning_hz,
                },
                Element::Delay { duration_s } => Element::Pulse {
                    rabi_hz: 0.0,
                    phase: 0.0,
                    duration_s,
                    detuning_hz: 0.0,
                },
            })
            .collect();
        Self { elements }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagation {
    pub unitary: Matrix2<C64>,
    /// Final Bloch vector from |0⟩, with ⟨z⟩ = +1 for |0⟩.
    pub bloch: [f64; 3],
}

impl Propagation {
    /// Population of |1⟩.
    pub fn excited_population(&self) -> f64 {
        0.5 * (1.0 - self.bloch[2])
    }
}

/// Composes the exact piecewise-constant propagators of `seq`.
pub fn propagate(seq: &PulseSequence, frequency_offset_hz: f64) -> Result<Propagation> {
    ensure_finite("frequency offset", frequency_offset_hz)?;
    let unitary = seq
        .elements
        .iter()
        .fold(Matrix2::identity(), |acc, e| e.unitary(frequency_offset_hz) * acc);
    let psi: Vector2<C64> = unitary.column(0).into();
    let (a, b) = (psi[0], psi[1]);
    let coh = a.conj() * b;
    Ok(Propagation {
        unitary,
        bloch: [2.0 * coh.re, 2.0 * coh.im, a.norm_sqr() - b.norm_sqr()],
    })
}

/// V = (S₀ − S₁₈₀)/(S₀ + S₁₈₀).
pub fn visibility(s0: f64, s180: f64) -> Result<f64> {
    ensure_finite("s0", s0)?;
    ensure_finite("s180", s180)?;
    let total = s0 + s180;
    if total == 0.0 {
        return Err(Error::Degenerate("both readouts are zero".into()));
    }
    Ok((s0 - s180) / total)
}

/// Excited population after a square pulse; rows follow `detunings_hz`,
/// columns follow `durations_s`.
pub fn rabi_chevron(rabi_hz: f64, detunings_hz: &[f64], durations_s: &[f64]) -> Result<Vec<Vec<f64>>> {
    if detunings_hz.is_empty() || durations_s.is_empty() {
        return Err(invalid("chevron grids must be non-empty"));
    }
    detunings_hz
        .iter()
        .map(|&d| {
            durations_s
                .iter()
                .map(|&t| {
                    let seq = PulseSequence::new(vec![Element::Pulse {
                        rabi_hz,
                        phase: 0.0,
                        duration_s: t,
                        detuning_hz: d,
                    }])?;
                    Ok(propagate(&seq, 0.0)?.excited_population())
                })
                .collect()
        })
        .collect()
}

/// Stationary Ornstein–Uhlenbeck frequency noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OUProcess {
    /// Stationary standard deviation, rad/s.
    pub coupling_b: f64,
    /// Correlation time, s.
    pub tau_c: f64,
    pub seed: u64,
}

impl OUProcess {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("coupling_b", self.coupling_b)?;
        ensure_finite("tau_c", self.tau_c)?;
        if self.coupling_b < 0.0 {
            return Err(invalid("bath coupling must be non-negative"));
        }
        if !(self.tau_c > 0.0) {
            return Err(invalid("correlation time must be positive"));
        }
        Ok(())
    }

    /// b = √2/T₂*.
    pub fn coupling_from_t2_star(t2_star_s: f64) -> f64 {
        2f64.sqrt() / t2_star_s
    }

    /// τ_c = b²T₂³/12 from the Hahn-echo time.
    pub fn tau_c_from_echo(coupling_b: f64, t2_s: f64) -> f64 {
        coupling_b * coupling_b * t2_s.powi(3) / 12.0
    }

    pub fn t2_star(&self) -> f64 {
        2f64.sqrt() / self.coupling_b
    }

    /// χ = 1 crossing of the slow-bath CPMG envelope, (12N²τ_c/b²)^{1/3}.
    pub fn t2_cpmg(&self, n_pulses: usize) -> f64 {
        (12.0 * (n_pulses as f64).powi(2) * self.tau_c / (self.coupling_b * self.coupling_b)).cbrt()
    }

    pub(crate) fn segment(&self, h: f64) -> Segment {
        let b2 = self.coupling_b * self.coupling_b;
        let tau = self.tau_c;
        let u = h / tau;
        let one_minus_a = -(-u).exp_m1();
        let var_x = b2 * -(-2.0 * u).exp_m1();
        let cov = b2 * tau * one_minus_a * one_minus_a;
        // 2u − 3 + 4e^{−u} − e^{−2u}, by series where it cancels.
        let g = if u < 1e-2 {
            u.powi(3) * (2.0 / 3.0 - u * (0.5 - u * (7.0 / 30.0 - u * (1.0 / 12.0 - u * 31.0 / 1260.0))))
        } else {
            2.0 * u - 3.0 + 4.0 * (-u).exp() - (-2.0 * u).exp()
        };
        let var_i = b2 * tau * tau * g;
        let slope = if var_x > 0.0 { cov / var_x } else { 0.0 };
        Segment {
            decay: 1.0 - one_minus_a,
            mean_integral: tau * one_minus_a,
            sd_x: var_x.sqrt(),
            slope,
            sd_rest: (var_i - slope * cov).max(0.0).sqrt(),
        }
    }
}

/// Exact joint transition of (x, ∫x dt) over one step.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    decay: f64,
    mean_integral: f64,
    sd_x: f64,
    slope: f64,
    sd_rest: f64,
}

impl Segment {
    /// Advances x and returns the integral of x over the step.
    pub(crate) fn step<R: Rng>(&self, x: &mut f64, rng: &mut R) -> f64 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let dx = self.sd_x * z1;
        let integral = *x * self.mean_integral + self.slope * dx + self.sd_rest * z2;
        *x = *x * self.decay + dx;
        integral
    }
}

/// Stream tags separating the experiments' random draws.
const PATH_STREAM: u64 = 1;
const RAMSEY_STREAM: u64 = 2;
const DD_STREAM: u64 = 3;

/// Exact-discretization OU samples, x₀ drawn from the stationary law.
pub fn ou_path(p: &OUProcess, dt: f64, n_steps: usize) -> Result<Vec<f64>> {
    p.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("time step must be positive"));
    }
    let mut rng = stream_rng(p.seed, &[PATH_STREAM]);
    let a = (-dt / p.tau_c).exp();
    let kick = p.coupling_b * (-(-2.0 * dt / p.tau_c).exp_m1()).sqrt();
    let mut x = p.coupling_b * rng.sample::<f64, _>(StandardNormal);
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        out.push(x);
        x = x * a + kick * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceTrace {
    /// Free-evolution time, s. Total time for decoupling sequences.
    pub tau_s: Vec<f64>,
    pub visibility: Vec<f64>,
    /// Standard error of the shot mean; zero for analytic traces.
    pub stderr: Vec<f64>,
}

fn check_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("times must be finite and non-negative"));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time grid must be strictly ascending"));
    }
    Ok(())
}

/// Averages per-shot rows in fixed order, so results do not depend on how
/// rayon scheduled the shots.
fn reduce_shots(taus: &[f64], rows: Vec<Vec<f64>>) -> CoherenceTrace {
    let shots = rows.len() as f64;
    let mut col = vec![0.0; rows.len()];
    let mut visibility = Vec::with_capacity(taus.len());
    let mut stderr = Vec::with_capacity(taus.len());
    for k in 0..taus.len() {
        for (c, r) in col.iter_mut().zip(&rows) {
            *c = r[k];
        }
        let mean = pairwise_sum(&col) / shots;
        for c in col.iter_mut() {
            *c = (*c - mean).powi(2);
        }
        let var = if shots > 1.0 {
            pairwise_sum(&col) / (shots - 1.0)
        } else {
            0.0
        };
        visibility.push(mean);
        stderr.push((var / shots).sqrt());
    }
    CoherenceTrace {
        tau_s: taus.to_vec(),
        visibility,
        stderr,
    }
}

/// Monte Carlo Ramsey fringe: mean of cos(2πΔτ + φ(τ)) over OU realizations.
pub fn ramsey(detuning_hz: f64, taus: &[f64], noise: &OUProcess, shots: usize) -> Result<CoherenceTrace> {
    check_taus(taus)?;
    noise.validate()?;
    ensure_finite("detuning", detuning_hz)?;
    if shots == 0 {
        return Err(invalid("at least one shot is required"));
    }
    let segments: Vec<Segment> = taus
        .iter()
        .scan(0.0, |prev, &t| {
            let h = t - *prev;
            *prev = t;
            Some(noise.segment(h))
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..shots as u64)
        .into_par_iter()
        .map(|shot| {
            let mut rng = stream_rng(noise.seed, &[RAMSEY_STREAM, shot]);
            let mut x = noise.coupling_b * rng.sample::<f64, _>(StandardNormal);
            let mut phase = 0.0;
            taus.iter()
                .zip(&segments)
                .map(|(&t, seg)| {
                    phase += seg.step(&mut x, &mut rng);
                    (2.0 * PI * detuning_hz * t + phase).cos()
                })
                .collect()
        })
        .collect();
    Ok(reduce_shots(taus, rows))
}

/// Static-limit Ramsey fringe, cos(2πΔτ)·exp(−b²τ²/2).
pub fn ramsey_analytic(detuning_hz: f64, taus: &[f64], coupling_b: f64) -> Result<CoherenceTrace> {
    check_taus(taus)?;
    let visibility = taus
        .iter()
        .map(|&t| (2.0 * PI * detuning_hz * t).cos() * (-0.5 * (coupling_b * t).powi(2)).exp())
        .collect();
    Ok(CoherenceTrace {
        tau_s: taus.to_vec(),
        visibility,
        stderr: vec![0.0; taus.len()],
    })
}

/// Phase convention of the refocusing pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConvention {
    /// π pulses 90° out of phase with the first π/2 pulse.
    #[default]
    Cpmg,
}

/// Times of N ideal π pulses within total time T: (2k − 1)T/(2N).
pub fn pulse_times(n_pulses: usize, total_s: f64) -> Vec<f64> {
    (1..=n_pulses)
        .map(|k| (2 * k - 1) as f64 * total_s / (2 * n_pulses) as f64)
        .collect()
}

/// Monte Carlo decoupling decay over total free-evolution times `taus`.
///
/// With ideal π pulses about the refocusing axis the readout is cos φ, where
/// φ accumulates with a sign toggled at each pulse.
pub fn dynamical_decoupling(
    n_pulses: usize,
    taus: &[f64],
    noise: &OUProcess,
    shots: usize,
    _convention: PhaseConvention,
) -> Result<CoherenceTrace> {
    check_taus(taus)?;
    noise.validate()?;
    if n_pulses == 0 {
        return Err(invalid("decoupling needs at least one π pulse"));
    }
    if shots == 0 {
        return Err(invalid("at least one shot is required"));
    }
    // Segment transitions per grid point: the first and last are T/(2N),
    // interior ones T/N.
    let segs: Vec<(Segment, Segment)> = taus
        .iter()
        .map(|&t| {
            (
                noise.segment(t / (2 * n_pulses) as f64),
                noise.segment(t / n_pulses as f64),
            )
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..shots as u64)
        .into_par_iter()
        .map(|shot| {
            let mut rng = stream_rng(noise.seed, &[DD_STREAM, n_pulses as u64, shot]);
            segs.iter()
                .map(|(half, full)| {
                    let mut x = noise.coupling_b * rng.sample::<f64, _>(StandardNormal);
                    let mut phase = half.step(&mut x, &mut rng);
                    let mut sign = -1.0;
                    for _ in 1..n_pulses {
                        phase += sign * full.step(&mut x, &mut rng);
                        sign = -sign;
                    }
                    phase += sign * half.step(&mut x, &mut rng);
                    phase.cos()
                })
                .collect()
        })
        .collect();
    Ok(reduce_shots(taus, rows))
}

/// Slow-bath decoupling envelope exp(−b²T³/(12N²τ_c)).
pub fn dynamical_decoupling_analytic(n_pulses: usize, taus: &[f64], noise: &OUProcess) -> Result<CoherenceTrace> {
    check_taus(taus)?;
    noise.validate()?;
    if n_pulses == 0 {
        return Err(invalid("decoupling needs at least one π pulse"));
    }
    let n2 = (n_pulses as f64).powi(2);
    let b2 = noise.coupling_b * noise.coupling_b;
    let visibility = taus
        .iter()
        .map(|&t| (-b2 * t.powi(3) / (12.0 * n2 * noise.tau_c)).exp())
        .collect();
    Ok(CoherenceTrace {
        tau_s: taus.to_vec(),
        visibility,
        stderr: vec![0.0; taus.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoherenceModel {
    /// A·exp(−(t/T₂*)²).
    GaussianRamsey,
    /// A·exp(−(t/T₂)^ξ).
    StretchedExp,
    /// Fringe A·cos(2πft + φ)·exp(−(t/T₂*)²) + C.
    SineGaussian,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoherenceResult {
    pub t2: f64,
    pub t2_sigma: f64,
    pub stretch_xi: f64,
    pub stretch_sigma: f64,
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub trace: CoherenceTrace,
    pub fit: FitResult,
}

/// Fits a decay law to a coherence trace, weighting by its standard errors
/// when they are all positive.
pub fn fit_coherence(trace: &CoherenceTrace, model: CoherenceModel) -> Result<CoherenceResult> {
    let n = trace.tau_s.len();
    if n < 6 || trace.visibility.len() != n || trace.stderr.len() != n {
        return Err(invalid("coherence fits need at least six consistent points"));
    }
    let mut data = CurveData::new(trace.tau_s.clone(), trace.visibility.clone());
    if trace.stderr.iter().all(|s| *s > 0.0) {
        data = data.with_sigma(trace.stderr.clone());
    }
    let t_max = trace.tau_s.iter().copied().fold(0.0, f64::max);
    let (name, opts, init) = match model {
        CoherenceModel::GaussianRamsey | CoherenceModel::StretchedExp => {
            let m = model_by_name("stretched_exp").expect("registered");
            let mut g = m.guess(&data.x, &data.y);
            let mut opts = FitOptions::default();
            if model == CoherenceModel::GaussianRamsey {
                g[2] = 2.0;
                opts.fixed = vec![false, false, true];
            }
            ("stretched_exp", opts, Some(g))
        }
        CoherenceModel::SineGaussian => ("sine_gaussian", FitOptions::default(), None),
    };
    let m = model_by_name(name).expect("registered");
    let opts = FitOptions {
        allow_partial: true,
        ..opts
    };
    let fit = fitkit::fit(m.as_ref(), &data, init.as_deref(), &opts)?;
    let (ia, it, stretch) = match model {
        CoherenceModel::SineGaussian => (0, 3, None),
        _ => (0, 1, Some(2)),
    };
    let t2 = fit.params[it];
    // An unresolved decay sends T₂ far past the sampled window.
    if fit.status != fitkit::FitStatus::Converged || !(t2 < 10.0 * t_max) {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            chi_square: fit.chi_square,
            residuals: fit.residuals,
        });
    }
    Ok(CoherenceResult {
        t2,
        t2_sigma: fit.sigma(it),
        stretch_xi: stretch.map_or(2.0, |i| fit.params[i]),
        stretch_sigma: stretch.map_or(0.0, |i| fit.sigma(i)),
        amplitude: fit.params[ia],
        amplitude_sigma: fit.sigma(ia),
        trace: trace.clone(),
        fit,
    })
}

/// Mean stretch exponent across fits and its standard error.
pub fn mean_stretch(results: &[CoherenceResult]) -> Result<(f64, f64)> {
    if results.is_empty() {
        return Err(invalid("no coherence fits given"));
    }
    let xs: Vec<f64> = results.iter().map(|r| r.stretch_xi).collect();
    Ok(crate::rng::mean_and_stderr(&xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Exponent β in T₂ = T₂(1)·N^β.
    pub beta: f64,
    /// T₂ at N = 1, same unit as the input.
    pub t2_single: f64,
    /// Standard error of β; zero for two points.
    pub beta_sigma: f64,
}

/// Log-log least-squares fit of T₂ ∝ N^β.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points
        .iter()
        .any(|(n, t)| !(*n > 0.0 && *t > 0.0 && n.is_finite() && t.is_finite()))
    {
        return Err(invalid("pulse counts and coherence times must be positive"));
    }
    let mut ns: Vec<f64> = points.iter().map(|p| p.0).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 2 {
        return Err(Error::RankDeficient(
            "scaling needs at least two distinct pulse counts".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let beta_sigma = if points.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - beta * x).powi(2))
            .sum();
        (rss / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(ScalingFit {
        beta,
        t2_single: intercept.exp(),
        beta_sigma,
    })
}

/// Default conversion from field to qubit frequency at the magic angle, MHz/mT.
pub const MAGIC_ANGLE_CONVERSION: f64 = 20.27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoToneConfig {
    /// Probe Rabi frequency, Hz; weak-drive limit, kept for the record.
    pub omega_mw: f64,
    /// Modulation amplitude Ω_RF, Hz.
    pub omega_rf_mod: f64,
    pub f_mod: f64,
    pub lorentzian_fwhm: f64,
    /// MHz/mT.
    pub conversion: f64,
}

impl Default for TwoToneConfig {
    fn default() -> Self {
        Self {
            omega_mw: 0.0,
            omega_rf_mod: 0.0,
            f_mod: 1e4,
            lorentzian_fwhm: 1e6,
            conversion: MAGIC_ANGLE_CONVERSION,
        }
    }
}

impl TwoToneConfig {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("omega_mw", self.omega_mw),
            ("omega_rf_mod", self.omega_rf_mod),
            ("f_mod", self.f_mod),
            ("lorentzian_fwhm", self.lorentzian_fwhm),
            ("conversion", self.conversion),
        ] {
            ensure_finite(n, v)?;
            if v < 0.0 {
                return Err(invalid(format!("{n} must be non-negative")));
            }
        }
        if !(self.lorentzian_fwhm > 0.0) {
            return Err(invalid("Lorentzian width must be positive"));
        }
        Ok(())
    }
}

/// Continuous line density: a unit-area Lorentzian convolved with the
/// arcsine law of a sinusoidally swept resonance, per Hz.
pub fn two_tone_density(cfg: &TwoToneConfig, detuning_hz: f64) -> Result<f64> {
    cfg.validate()?;
    Ok(arcsine_lorentzian_density(
        detuning_hz,
        cfg.omega_rf_mod,
        cfg.lorentzian_fwhm,
    ))
}

/// Line shape sampled on `grid` and normalized to unit trapezoid area there.
pub fn two_tone_lineshape(cfg: &TwoToneConfig, grid_hz: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if grid_hz.len() < 2 || grid_hz.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("detuning grid must be ascending with at least two points"));
    }
    let raw: Vec<f64> = grid_hz
        .iter()
        .map(|&d| arcsine_lorentzian_density(d, cfg.omega_rf_mod, cfg.lorentzian_fwhm))
        .collect();
    let area = trapezoid(grid_hz, &raw);
    Ok(raw.into_iter().map(|v| v / area).collect())
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub power_dbm: f64,
    pub detuning_hz: Vec<f64>,
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacCalibration {
    /// Fitted Ω_RF per spectrum, Hz, in input order.
    pub omega_rf_hz: Vec<f64>,
    pub omega_rf_sigma_hz: Vec<f64>,
    /// Fitted log10-amplitude slope per dBm; the amplitude law gives 1/20.
    pub slope_per_dbm: f64,
    /// Ω_RF at 0 dBm under the amplitude law, Hz.
    pub amplitude_hz: f64,
    pub reference_dbm: f64,
    /// AC field amplitude at the reference power, mT.
    pub b_ac_mt: f64,
    /// Component perpendicular to the static field, mT.
    pub b_perp_mt: f64,
}

/// Relative deviation from the amplitude law beyond which the power sweep is
/// flagged as inconsistent.
pub const SLOPE_TOLERANCE: f64 = 0.2;

/// Recovers the AC field amplitude from two-tone spectra at several powers.
///
/// Each spectrum is fitted with the arcsine⊗Lorentzian model; the Ω_RF values
/// are then fitted to A·10^{P/20}. `angle_deg` is the angle between the AC
/// field and the static field.
pub fn calibrate_bac(
    spectra: &[PowerSpectrum],
    angle_deg: f64,
    conversion: f64,
    reference_dbm: f64,
) -> Result<BacCalibration> {
    if spectra.len() < 3 {
        return Err(invalid("calibration needs at least three power points"));
    }
    if !(conversion > 0.0) {
        return Err(invalid("conversion factor must be positive"));
    }
    ensure_finite("angle", angle_deg)?;
    ensure_finite("reference power", reference_dbm)?;
    let model = model_by_name("arcsine_lorentzian").expect("registered");
    let mut omega = Vec::with_capacity(spectra.len());
    let mut sigma = Vec::with_capacity(spectra.len());
    for s in spectra {
        let data = CurveData::new(s.detuning_hz.clone(), s.signal.clone());
        let fit = fitkit::fit(model.as_ref(), &data, None, &FitOptions::default())?;
        omega.push(fit.params[2]);
        sigma.push(fit.sigma(2));
    }
    let xs: Vec<f64> = spectra.iter().map(|s| s.power_dbm).collect();
    let ys: Vec<f64> = omega.iter().map(|o| o.log10()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RankDeficient("all spectra taken at the same power".into()));
    }
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    if ((slope - 0.05) / 0.05).abs() > SLOPE_TOLERANCE {
        return Err(Error::Consistency(format!(
            "Ω_RF grows by {slope:.4} decades per dBm, not 1/20 as an amplitude law requires"
        )));
    }
    // With the slope fixed at 1/20 the amplitude is the mean log offset.
    let log_a = xs.iter().zip(&ys).map(|(x, y)| y - x / 20.0).sum::<f64>() / m;
    let amplitude_hz = 10f64.powf(log_a);
    let b_ac_mt = amplitude_hz * 10f64.powf(reference_dbm / 20.0) * 1e-6 / conversion;
    Ok(BacCalibration {
        omega_rf_hz: omega,
        omega_rf_sigma_hz: sigma,
        slope_per_dbm: slope,
        amplitude_hz,
        reference_dbm,
        b_ac_mt,
        b_perp_mt: b_ac_mt * angle_deg.to_radians().sin(),
    })
}

/// Ω_nuc = (γ/2)·ξ·B_ac in kHz; only one circular component of a linear
/// drive is co-rotating.
pub fn nuclear_rabi(b_ac_mt: f64, xi: f64, gamma_c13_khz_per_mt: f64) -> Result<f64> {
    for (n, v) in [("b_ac", b_ac_mt), ("xi", xi), ("gamma_c13", gamma_c13_khz_per_mt)] {
        ensure_finite(n, v)?;
        if v < 0.0 {
            return Err(invalid(format!("{n} must be non-negative")));
        }
    }
    Ok(0.5 * gamma_c13_khz_per_mt * xi * b_ac_mt)
}
