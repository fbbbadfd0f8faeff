//! Optical-pumping rate models.
//!
//! Rates are angular and carried as [`AngularRate`] (Mrad/s, i.e. rad/μs).
//! Time grids are in milliseconds. Solutions of the linear rate systems are
//! exact matrix exponentials evaluated at each requested time.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::fitkit::{self, model_by_name, Bound, CurveData, FitOptions, FitResult, Problem};
use crate::rng::mean_and_stderr;

/// Angular rate stored in Mrad/s.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AngularRate(f64);

impl AngularRate {
    pub const ZERO: AngularRate = AngularRate(0.0);

    pub const fn from_mrad_per_s(v: f64) -> Self {
        Self(v)
    }

    pub fn from_rad_per_s(v: f64) -> Self {
        Self(v * 1e-6)
    }

    /// 2π·f for a linear frequency in MHz.
    pub fn from_linear_mhz(f: f64) -> Self {
        Self(2.0 * std::f64::consts::PI * f)
    }

    pub fn mrad_per_s(self) -> f64 {
        self.0
    }

    pub fn rad_per_s(self) -> f64 {
        self.0 * 1e6
    }

    /// Rate per millisecond.
    pub fn per_ms(self) -> f64 {
        self.0 * 1e3
    }

    /// Equivalent linear frequency, MHz.
    pub fn linear_mhz(self) -> f64 {
        self.0 / (2.0 * std::f64::consts::PI)
    }
}

fn check_rate(name: &str, r: AngularRate, strictly_positive: bool) -> Result<()> {
    ensure_finite(name, r.0)?;
    let ok = if strictly_positive { r.0 > 0.0 } else { r.0 >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be {}, got {}",
            if strictly_positive { "positive" } else { "non-negative" },
            r.0
        )))
    }
}

/// W = Ω²γ/(4Δ² + γ²).
pub fn pump_rate(omega: AngularRate, delta: AngularRate, gamma: AngularRate) -> Result<AngularRate> {
    check_rate("gamma", gamma, true)?;
    ensure_finite("omega", omega.0)?;
    ensure_finite("delta", delta.0)?;
    let (o, d, g) = (omega.0, delta.0, gamma.0);
    Ok(AngularRate(o * o * g / (4.0 * d * d + g * g)))
}

/// Ω = γ·√(p/(2 p_sat)), from p/p_sat = 2Ω²/γ².
pub fn power_to_rabi(power_nw: f64, p_sat_nw: f64, gamma: AngularRate) -> Result<AngularRate> {
    if !(power_nw >= 0.0) || !power_nw.is_finite() {
        return Err(invalid(format!("optical power must be non-negative, got {power_nw}")));
    }
    if !(p_sat_nw > 0.0) || !p_sat_nw.is_finite() {
        return Err(invalid(format!("saturation power must be positive, got {p_sat_nw}")));
    }
    check_rate("gamma", gamma, true)?;
    Ok(AngularRate(gamma.0 * (power_nw / (2.0 * p_sat_nw)).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    pub omega_opt: AngularRate,
    pub delta: AngularRate,
    /// Total excited-state decay rate.
    pub gamma: AngularRate,
    /// Λ_e, ratio of spin-conserving to spin-flipping decay.
    pub cyclicity_e: f64,
}

impl ThreeLevelParams {
    pub fn validate(&self) -> Result<()> {
        check_rate("gamma", self.gamma, true)?;
        ensure_finite("omega_opt", self.omega_opt.0)?;
        ensure_finite("delta", self.delta.0)?;
        if !(self.cyclicity_e > 0.0) || !self.cyclicity_e.is_finite() {
            return Err(invalid(format!(
                "electron cyclicity must be positive, got {}",
                self.cyclicity_e
            )));
        }
        Ok(())
    }

    /// Spin-conserving decay γΛ/(1+Λ).
    pub fn gamma_conserving(&self) -> AngularRate {
        AngularRate(self.gamma.0 * self.cyclicity_e / (1.0 + self.cyclicity_e))
    }

    /// Spin-flipping decay γ/(1+Λ).
    pub fn gamma_flipping(&self) -> AngularRate {
        AngularRate(self.gamma.0 - self.gamma_conserving().0)
    }

    pub fn pump_rate(&self) -> Result<AngularRate> {
        pump_rate(self.omega_opt, self.delta, self.gamma)
    }

    /// Rate matrix of (ρ_↓↓, ρ_AA) in 1/μs.
    pub fn rate_matrix(&self) -> Result<[[f64; 2]; 2]> {
        self.validate()?;
        let w = self.pump_rate()?.0;
        let g = self.gamma.0;
        Ok([[-w, w + self.gamma_conserving().0], [w, -(w + g)]])
    }

    /// Slow eigenvalue magnitude of the rate matrix, 1/μs.
    pub fn slow_rate(&self) -> Result<f64> {
        let m = self.rate_matrix()?;
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        // Both eigenvalues are real and non-positive; the smaller magnitude
        // is det/λ_fast, which avoids cancellation.
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        let fast = 0.5 * (tr - disc);
        Ok(if fast == 0.0 { 0.0 } else { -det / fast })
    }
}

fn check_grid(t_ms: &[f64]) -> Result<()> {
    if t_ms.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    if t_ms.iter().any(|t| !t.is_finite()) || t_ms[0] < 0.0 {
        return Err(invalid("time grid must be finite and start at t ≥ 0"));
    }
    if t_ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("time grid must be strictly ascending"));
    }
    Ok(())
}

/// exp(M·t) applied to `y0` at each grid time. `m` is in 1/μs.
fn evolve(m: &DMatrix<f64>, y0: &DVector<f64>, t_ms: &[f64]) -> Vec<DVector<f64>> {
    t_ms.iter()
        .map(|&t| {
            let e = (m * (t * 1e3)).exp();
            e * y0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreeLevelTrace {
    pub t_ms: Vec<f64>,
    /// γ·ρ_AA, photons per μs.
    pub fluorescence: Vec<f64>,
    pub rho_down: Vec<f64>,
    pub rho_excited: Vec<f64>,
    pub rho_up: Vec<f64>,
}

/// Populations of the Λ system starting in |↓⟩.
pub fn three_level_trace(p: &ThreeLevelParams, t_ms: &[f64]) -> Result<ThreeLevelTrace> {
    check_grid(t_ms)?;
    let r = p.rate_matrix()?;
    let m = DMatrix::from_row_slice(2, 2, &[r[0][0], r[0][1], r[1][0], r[1][1]]);
    let states = evolve(&m, &DVector::from_column_slice(&[1.0, 0.0]), t_ms);
    let rho_down: Vec<f64> = states.iter().map(|s| s[0]).collect();
    let rho_excited: Vec<f64> = states.iter().map(|s| s[1]).collect();
    let rho_up = rho_down.iter().zip(&rho_excited).map(|(d, e)| 1.0 - d - e).collect();
    let fluorescence = rho_excited.iter().map(|e| p.gamma.0 * e).collect();
    Ok(ThreeLevelTrace {
        t_ms: t_ms.to_vec(),
        fluorescence,
        rho_down,
        rho_excited,
        rho_up,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// Saturated count rate, counts/s.
    pub i_sat: f64,
    /// nW.
    pub p_sat: f64,
    /// Background slope, counts/s/nW.
    pub n_bgr: f64,
    /// counts/s.
    pub c_offset: f64,
}

impl SaturationParams {
    pub fn rate(&self, power_nw: f64) -> f64 {
        let s = power_nw / self.p_sat;
        self.i_sat * s / (1.0 + s) + self.n_bgr * power_nw + self.c_offset
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SaturationFit {
    pub params: SaturationParams,
    pub sigmas: SaturationParams,
    pub fit: FitResult,
}

/// Poisson-weighted fit of I(p) = I_sat·s/(1+s) + n·p + C with s = p/p_sat.
///
/// The knee must be inside the sampled power range; otherwise `p_sat` is
/// reported as unidentifiable.
pub fn fit_saturation(power_nw: &[f64], rate: &[f64]) -> Result<SaturationFit> {
    if power_nw.len() != rate.len() {
        return Err(invalid("power and rate differ in length"));
    }
    if power_nw.len() < 5 {
        return Err(Error::Unidentifiable(format!(
            "{} points for four saturation parameters",
            power_nw.len()
        )));
    }
    if power_nw.iter().any(|p| !(*p >= 0.0)) {
        return Err(invalid("powers must be non-negative"));
    }
    let model = model_by_name("saturation").expect("saturation model is registered");
    let data = CurveData::counts(power_nw.to_vec(), rate.to_vec());
    let p_max = power_nw.iter().copied().fold(0.0, f64::max);
    let unidentifiable = || {
        Error::Unidentifiable(format!(
            "saturation power not resolved by data up to {p_max} nW; sample above the knee"
        ))
    };
    let opts = FitOptions {
        allow_partial: true,
        ..FitOptions::default()
    };
    let fit = fitkit::fit(model.as_ref(), &data, None, &opts)?;
    if fit.params[1] > p_max || fit.status == fitkit::FitStatus::Singular {
        return Err(unidentifiable());
    }
    if fit.status != fitkit::FitStatus::Converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            chi_square: fit.chi_square,
            residuals: fit.residuals,
        });
    }
    let pick = |v: &[f64]| SaturationParams {
        i_sat: v[0],
        p_sat: v[1],
        n_bgr: v[2],
        c_offset: v[3],
    };
    Ok(SaturationFit {
        params: pick(&fit.params),
        sigmas: pick(&fit.sigmas()),
        fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CyclicityFit {
    pub cyclicity_e: f64,
    pub sigma: f64,
    /// Counts per unit excited-state population.
    pub scale: f64,
    pub fit: FitResult,
}

struct CyclicityProblem<'a> {
    known: ThreeLevelParams,
    t_ms: &'a [f64],
    counts: &'a [f64],
    w: Vec<f64>,
}

impl CyclicityProblem<'_> {
    fn model(&self, params: &[f64]) -> Option<Vec<f64>> {
        let p = ThreeLevelParams {
            cyclicity_e: params[1],
            ..self.known
        };
        let trace = three_level_trace(&p, self.t_ms).ok()?;
        Some(trace.rho_excited.iter().map(|e| params[0] * e).collect())
    }
}

impl Problem for CyclicityProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.t_ms.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        match self.model(params) {
            Some(m) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.w[k] * (m[k] - self.counts[k]);
                }
            }
            None => out.fill(f64::NAN),
        }
    }

    fn param_name(&self, index: usize) -> String {
        ["scale", "cyclicity_e"][index].into()
    }
}

/// Fits Λ_e to a fluorescence decay with Ω, Δ and γ taken from `known`.
///
/// The fluorescence collection efficiency is a free scale.
pub fn fit_cyclicity(t_ms: &[f64], counts: &[f64], known: &ThreeLevelParams) -> Result<CyclicityFit> {
    check_grid(t_ms)?;
    if counts.len() != t_ms.len() {
        return Err(invalid("time grid and counts differ in length"));
    }
    if t_ms.len() < 3 {
        return Err(invalid("cyclicity fit needs at least three points"));
    }
    let probe = ThreeLevelParams {
        cyclicity_e: 1.0,
        ..*known
    };
    probe.validate()?;
    let w_pump = probe.pump_rate()?.0;
    if w_pump <= 0.0 {
        return Err(Error::Unidentifiable(
            "no optical pumping; cyclicity has no effect".into(),
        ));
    }
    let g = known.gamma.0;
    let rho_qs = w_pump / (2.0 * w_pump + g);

    // Initial guess from the log-slope between the peak and the end of the trace.
    let peak = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let last = counts.len() - 1;
    let (c0, c1) = (counts[peak].max(1e-12), counts[last].max(1e-12));
    let span_us = (t_ms[last] - t_ms[peak]) * 1e3;
    let k_guess = if span_us > 0.0 && c1 < c0 {
        (c0 / c1).ln() / span_us
    } else {
        0.0
    };
    let lambda0 = if k_guess > 0.0 {
        (g * rho_qs / k_guess - 1.0).max(1.0)
    } else {
        1e3
    };
    let scale0 = counts[peak] / rho_qs;

    let problem = CyclicityProblem {
        known: *known,
        t_ms,
        counts,
        w: CurveData::counts(t_ms.to_vec(), counts.to_vec()).weight_vector()?,
    };
    let opts = FitOptions {
        allow_partial: true,
        ..FitOptions::default()
    };
    let fit = fitkit::minimize(&problem, &[scale0, lambda0], &[Bound::Free, Bound::Positive], &opts)?;
    // A trace without resolved decay drives Λ_e upward without bound.
    let fitted = ThreeLevelParams {
        cyclicity_e: fit.params[1],
        ..*known
    };
    let decays = fitted.slow_rate()? * (t_ms[last] - t_ms[0]) * 1e3;
    if fit.status != fitkit::FitStatus::Converged || decays < 1e-3 || !(fit.params[0] > 0.0) {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            chi_square: fit.chi_square,
            residuals: fit.residuals,
        });
    }
    Ok(CyclicityFit {
        cyclicity_e: fit.params[1],
        sigma: fit.sigma(1),
        scale: fit.params[0],
        fit,
    })
}

/// Decay branching b[j][i] from excited e_j to ground g_i.
///
/// Ground order: |↓e↑n⟩, |↓e↓n⟩, |↑e↓n⟩, |↑e↑n⟩; excited order |↓e↑n⟩, |↓e↓n⟩.
pub fn branching_matrix(lambda_e: f64, lambda_n: f64) -> Result<[[f64; 4]; 2]> {
    for (name, v) in [("electron", lambda_e), ("nuclear", lambda_n)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(format!(
                "{name} cyclicity must be positive and finite, got {v}"
            )));
        }
    }
    let (pec, pef) = (lambda_e / (1.0 + lambda_e), 1.0 / (1.0 + lambda_e));
    let (pnc, pnf) = (lambda_n / (1.0 + lambda_n), 1.0 / (1.0 + lambda_n));
    Ok([
        [pec * pnc, pec * pnf, pef * pnf, pef * pnc],
        [pec * pnf, pec * pnc, pef * pnc, pef * pnf],
    ])
}

/// Incoherent MW pump rate W_MW = Ω_att²γ/(4Δ² + γ²) with
/// Ω_att = Ω_ref·10^(att/20). Ω_ref is read as an angular rate in Mrad/s, the
/// same convention as the optical linewidth.
pub fn mw_pump_rate(
    omega_ref_mhz: f64,
    attenuation_db: f64,
    delta_mw: AngularRate,
    gamma_esp: AngularRate,
) -> Result<AngularRate> {
    check_rate("gamma_e_spin", gamma_esp, true)?;
    ensure_finite("omega_mw_ref", omega_ref_mhz)?;
    ensure_finite("mw_attenuation_db", attenuation_db)?;
    let omega_att = AngularRate(omega_ref_mhz * attenuated_amplitude(attenuation_db));
    pump_rate(omega_att, delta_mw, gamma_esp)
}

/// Amplitude factor 10^(att/20).
pub fn attenuated_amplitude(attenuation_db: f64) -> f64 {
    10f64.powf(attenuation_db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixLevelParams {
    pub three_level: ThreeLevelParams,
    /// Λ_n; an input, not a fit output.
    pub cyclicity_n: f64,
    pub w_mw: AngularRate,
    pub mw_attenuation_db: f64,
    /// Reference electron Rabi frequency, MHz.
    pub omega_mw_ref: f64,
    pub gamma_e_spin: AngularRate,
    pub delta_mw: AngularRate,
}

impl SixLevelParams {
    /// Builds the parameter set with W_MW derived from the drive settings.
    pub fn with_mw_drive(
        three_level: ThreeLevelParams,
        cyclicity_n: f64,
        omega_mw_ref: f64,
        mw_attenuation_db: f64,
        gamma_e_spin: AngularRate,
        delta_mw: AngularRate,
    ) -> Result<Self> {
        let w_mw = mw_pump_rate(omega_mw_ref, mw_attenuation_db, delta_mw, gamma_e_spin)?;
        let p = Self {
            three_level,
            cyclicity_n,
            w_mw,
            mw_attenuation_db,
            omega_mw_ref,
            gamma_e_spin,
            delta_mw,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.three_level.validate()?;
        branching_matrix(self.three_level.cyclicity_e, self.cyclicity_n)?;
        check_rate("w_mw", self.w_mw, false)?;
        check_rate("gamma_e_spin", self.gamma_e_spin, false)?;
        ensure_finite("delta_mw", self.delta_mw.0)?;
        ensure_finite("omega_mw_ref", self.omega_mw_ref)?;
        if self.omega_mw_ref < 0.0 {
            return Err(invalid("reference MW Rabi frequency must be non-negative"));
        }
        Ok(())
    }

    /// 6×6 rate matrix over (g0, g1, g2, g3, e0, e1), 1/μs.
    pub fn rate_matrix(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        let tl = &self.three_level;
        let w = tl.pump_rate()?.0;
        let g = tl.gamma.0;
        let b = branching_matrix(tl.cyclicity_e, self.cyclicity_n)?;
        let mut r = [[0.0; 4]; 2];
        r[0][0] = w;
        r[1][1] = w;
        let mut m = DMatrix::zeros(6, 6);
        for i in 0..4 {
            for j in 0..2 {
                m[(i, 4 + j)] += g * b[j][i] + r[j][i];
                m[(i, i)] -= r[j][i];
                m[(4 + j, i)] += r[j][i];
            }
        }
        for j in 0..2 {
            m[(4 + j, 4 + j)] -= w + g;
        }
        let wm = self.w_mw.0;
        m[(0, 3)] += wm;
        m[(0, 0)] -= wm;
        m[(3, 0)] += wm;
        m[(3, 3)] -= wm;
        Ok(m)
    }
}

/// Index of |↑e↓n⟩, the state dark to both the laser and the MW drive.
pub const DARK_STATE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SixLevelTrace {
    pub t_ms: Vec<f64>,
    pub ground: Vec<[f64; 4]>,
    pub excited: Vec<[f64; 2]>,
    /// γ·(e0 + e1), photons per μs.
    pub fluorescence: Vec<f64>,
}

/// Six-level populations starting fully in ground sublevel `init_state`.
pub fn six_level_trace(p: &SixLevelParams, init_state: usize, t_ms: &[f64]) -> Result<SixLevelTrace> {
    if init_state > 3 {
        return Err(invalid(format!(
            "initial ground state index {init_state} out of range 0..=3"
        )));
    }
    let mut y0 = [0.0; 6];
    y0[init_state] = 1.0;
    six_level_trace_from(p, y0, t_ms)
}

/// Six-level populations from an arbitrary initial distribution over
/// (g0, g1, g2, g3, e0, e1).
pub fn six_level_trace_from(p: &SixLevelParams, initial: [f64; 6], t_ms: &[f64]) -> Result<SixLevelTrace> {
    check_grid(t_ms)?;
    if initial.iter().any(|v| !(*v >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(invalid("initial populations must be non-negative and sum to 1"));
    }
    let m = p.rate_matrix()?;
    let states = evolve(&m, &DVector::from_column_slice(&initial), t_ms);
    let g = p.three_level.gamma.0;
    Ok(SixLevelTrace {
        t_ms: t_ms.to_vec(),
        ground: states.iter().map(|s| [s[0], s[1], s[2], s[3]]).collect(),
        excited: states.iter().map(|s| [s[4], s[5]]).collect(),
        fluorescence: states.iter().map(|s| g * (s[4] + s[5])).collect(),
    })
}

/// Time (ms) for the dark-state population to reach `fraction`, starting from
/// a uniform mixture of the four ground sublevels.
pub fn dark_state_time(p: &SixLevelParams, fraction: f64) -> Result<f64> {
    if !(fraction > 0.25 && fraction < 1.0) {
        return Err(invalid("target dark fraction must lie in (0.25, 1)"));
    }
    let m = p.rate_matrix()?;
    if p.w_mw.0 <= 0.0 {
        return Err(Error::Degenerate(
            "without MW pumping the dark state is never filled".into(),
        ));
    }
    let y0 = DVector::from_column_slice(&[0.25, 0.25, 0.25, 0.25, 0.0, 0.0]);
    let dark = |t: f64| evolve(&m, &y0, &[t])[0][DARK_STATE];
    let mut hi = 1.0;
    while dark(hi) < fraction {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Degenerate("dark state not reached within 10⁹ ms".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if dark(mid) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fit output feeding the initialization fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitFitInput {
    /// Decay amplitude A, counts.
    pub amplitude_a: f64,
    /// Decay rate, 1/ms.
    pub decay_gamma: f64,
    /// Offset C, counts.
    pub offset_c: f64,
    /// Dark counts B.
    pub dark_b: f64,
    pub sigma_a: f64,
    pub sigma_gamma: f64,
    pub sigma_c: f64,
    pub sigma_b: f64,
    pub rho_ac: f64,
    pub rho_ab: f64,
    pub rho_cb: f64,
}

impl InitFitInput {
    fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("amplitude_a", self.amplitude_a),
            ("offset_c", self.offset_c),
            ("dark_b", self.dark_b),
            ("decay_gamma", self.decay_gamma),
        ] {
            ensure_finite(n, v)?;
        }
        if [self.sigma_a, self.sigma_gamma, self.sigma_c, self.sigma_b]
            .iter()
            .any(|s| !(*s >= 0.0))
        {
            return Err(invalid("uncertainties must be non-negative"));
        }
        if [self.rho_ac, self.rho_ab, self.rho_cb]
            .iter()
            .any(|r| !(r.abs() <= 1.0))
        {
            return Err(invalid("correlation coefficients must satisfy |ρ| ≤ 1"));
        }
        if !(self.amplitude_a > self.dark_b) {
            return Err(invalid("amplitude does not exceed the dark counts; no signal"));
        }
        Ok(())
    }

    /// Covariance of (A, C, B).
    fn covariance(&self) -> [[f64; 3]; 3] {
        let s = [self.sigma_a, self.sigma_c, self.sigma_b];
        let r = [
            [1.0, self.rho_ac, self.rho_ab],
            [self.rho_ac, 1.0, self.rho_cb],
            [self.rho_ab, self.rho_cb, 1.0],
        ];
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = r[i][j] * s[i] * s[j];
            }
        }
        c
    }
}

fn quad_form(g: [f64; 3], c: &[[f64; 3]; 3]) -> f64 {
    (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| g[i] * g[j] * c[i][j])
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitFidelity {
    /// F = 1 − C′/A′ as a fraction.
    pub fidelity: f64,
    /// Uncertainty via g = A′² − C′A′ and h = A′² taken fully correlated.
    pub sigma: f64,
    /// Plain first-order uncertainty of F in (A, C, B).
    pub sigma_direct: f64,
}

/// Background-corrected initialization fidelity and its uncertainty.
pub fn init_fidelity(input: &InitFitInput) -> Result<InitFidelity> {
    input.validate()?;
    let a = input.amplitude_a - input.dark_b;
    let c = input.offset_c - input.dark_b;
    let fidelity = 1.0 - c / a;
    let cov = input.covariance();

    // Gradients in (A, C, B).
    let dg = [2.0 * a - c, -a, c - a];
    let dh = [2.0 * a, 0.0, -2.0 * a];
    let g = a * a - c * a;
    let h = a * a;
    let var_g = quad_form(dg, &cov).max(0.0);
    let var_h = quad_form(dh, &cov).max(0.0);
    let sigma = if g == 0.0 {
        (var_g.sqrt() / h).abs()
    } else {
        (fidelity * (var_g.sqrt() / g - var_h.sqrt() / h)).abs()
    };

    let df = [c / (a * a), -1.0 / a, 1.0 / a - c / (a * a)];
    let var_f = quad_form(df, &cov);
    if var_f < 0.0 {
        return Err(invalid("stated correlations give a negative variance for F"));
    }
    Ok(InitFidelity {
        fidelity,
        sigma,
        sigma_direct: var_f.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub t_ms: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Trace {
    pub fn new(t_ms: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        if t_ms.len() != counts.len() {
            return Err(invalid("trace time and count columns differ in length"));
        }
        Ok(Self { t_ms, counts })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InitializationFit {
    pub input: InitFitInput,
    pub fidelity: InitFidelity,
    /// Mean of the laser-only trace, reported for reference.
    pub laser_only_mean: f64,
    pub fit: FitResult,
}

/// Fits A·e^{−γt} + C to the initialization trace and derives the fidelity
/// with dark counts from the mean of the dark trace.
pub fn fit_initialization(signal: &Trace, laser_only: &Trace, dark: &Trace) -> Result<InitializationFit> {
    for (name, tr) in [("signal", signal), ("laser-only", laser_only), ("dark", dark)] {
        if tr.t_ms.len() != tr.counts.len() || tr.t_ms.is_empty() {
            return Err(invalid(format!("{name} trace is empty or ragged")));
        }
    }
    if laser_only.t_ms != signal.t_ms || dark.t_ms != signal.t_ms {
        return Err(invalid("traces must share one time grid"));
    }
    let model = model_by_name("exp_decay").expect("exp_decay model is registered");
    let data = CurveData::counts(signal.t_ms.clone(), signal.counts.clone());
    let fit = fitkit::fit(model.as_ref(), &data, None, &FitOptions::default())?;
    if !(fit.params[0] > 0.0) {
        return Err(invalid(format!("fitted amplitude {} is not positive", fit.params[0])));
    }
    let (dark_b, sigma_b) = mean_and_stderr(&dark.counts);
    let (laser_only_mean, _) = mean_and_stderr(&laser_only.counts);
    let input = InitFitInput {
        amplitude_a: fit.params[0],
        decay_gamma: fit.params[1],
        offset_c: fit.params[2],
        dark_b,
        sigma_a: fit.sigma(0),
        sigma_gamma: fit.sigma(1),
        sigma_c: fit.sigma(2),
        sigma_b,
        rho_ac: fit.correlation(0, 2),
        // The dark trace is an independent measurement.
        rho_ab: 0.0,
        rho_cb: 0.0,
    };
    let fidelity = init_fidelity(&input)?;
    Ok(InitializationFit {
        input,
        fidelity,
        laser_only_mean,
        fit,
    })
}
