//! Closed-form curve models and their initial-guess heuristics.

use std::f64::consts::PI;

use super::quad;
use super::Bound;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub bound: Bound,
}

const fn free(name: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        bound: Bound::Free,
    }
}

const fn positive(name: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        bound: Bound::Positive,
    }
}

/// A scalar model y = f(x; θ) with bounds and a starting-point heuristic.
pub trait FitModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> &[ParamSpec];

    fn eval(&self, x: f64, p: &[f64]) -> f64;

    fn has_analytic_jacobian(&self) -> bool {
        false
    }

    /// Analytic df/dθ; only called when [`FitModel::has_analytic_jacobian`].
    fn gradient(&self, _x: f64, _p: &[f64], _grad: &mut [f64]) {}

    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64>;

    /// Maps equivalent parameter sets onto one representative.
    fn canonicalize(&self, _p: &mut [f64]) {}

    fn param_names(&self) -> Vec<&'static str> {
        self.params().iter().map(|p| p.name).collect()
    }
}

/// All registered models.
pub fn model_registry() -> Vec<Box<dyn FitModel>> {
    vec![
        Box::new(ExpDecay),
        Box::new(Saturation),
        Box::new(SineGaussian),
        Box::new(StretchedExp),
        Box::new(PowerLaw),
        Box::new(Lorentzian),
        Box::new(DoubleLorentzian),
        Box::new(ArcsineLorentzian),
        Box::new(RbDecay),
    ]
}

pub fn model_by_name(name: &str) -> Option<Box<dyn FitModel>> {
    model_registry().into_iter().find(|m| m.name() == name)
}

// ---------------------------------------------------------------------------
// helpers for the heuristics

fn sorted_pairs(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope and intercept.
fn linear_regression(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn span(pts: &[(f64, f64)]) -> f64 {
    match (pts.first(), pts.last()) {
        (Some(a), Some(b)) if b.0 > a.0 => b.0 - a.0,
        _ => 1.0,
    }
}

/// Full width at half maximum of the peak at `peak` in baseline-subtracted data.
fn half_max_width(pts: &[(f64, f64)], peak: usize, base: f64) -> f64 {
    let h = pts[peak].1 - base;
    let half = 0.5 * h;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for i in range {
            if (pts[i].1 - base) * h.signum() < half.abs() {
                let (x0, y0) = (pts[prev].0, pts[prev].1 - base);
                let (x1, y1) = (pts[i].0, pts[i].1 - base);
                let t = if y1 != y0 { (half - y0) / (y1 - y0) } else { 0.5 };
                return Some(x0 + t * (x1 - x0));
            }
            prev = i;
        }
        None
    };
    let right = crossing(&mut ((peak + 1)..pts.len()));
    let left = crossing(&mut (0..peak).rev());
    let x = pts[peak].0;
    let w = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x - l),
        (None, Some(r)) => 2.0 * (r - x),
        (None, None) => span(pts) / 2.0,
    };
    if w > 0.0 {
        w
    } else {
        span(pts) / 10.0
    }
}

/// Indices of local maxima of `v`, largest first.
fn local_maxima(v: &[f64]) -> Vec<usize> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let l = if i == 0 { f64::NEG_INFINITY } else { v[i - 1] };
            let r = if i + 1 == n { f64::NEG_INFINITY } else { v[i + 1] };
            v[i] > l && v[i] >= r
        })
        .collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx
}

fn trapezoid(pts: &[(f64, f64)], base: f64) -> f64 {
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1 - 2.0 * base))
        .sum()
}

// ---------------------------------------------------------------------------

/// A·exp(−γx) + C.
pub struct ExpDecay;

const EXP_DECAY: [ParamSpec; 3] = [free("amplitude"), positive("rate"), free("offset")];

impl FitModel for ExpDecay {
    fn name(&self) -> &'static str {
        "exp_decay"
    }
    fn params(&self) -> &[ParamSpec] {
        &EXP_DECAY
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-p[1] * x).exp() + p[2]
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let e = (-p[1] * x).exp();
        g[0] = e;
        g[1] = -p[0] * x * e;
        g[2] = 1.0;
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let n = pts.len();
        let tail = (n / 8).max(1);
        let offset = mean(pts[n - tail..].iter().map(|p| p.1));
        let amp = pts[0].1 - offset;
        // Log-linear regression on the head, where the signal is well above baseline.
        let head: Vec<(f64, f64)> = pts
            .iter()
            .filter_map(|&(x, y)| {
                let r = (y - offset) / amp;
                (r > 0.05 && r <= 1.5).then(|| (x, r.ln()))
            })
            .collect();
        let rate = match linear_regression(&head) {
            Some((s, _)) if s < 0.0 => -s,
            _ => 3.0 / span(&pts),
        };
        vec![amp, rate, offset]
    }
}

/// I_sat·(x/p_sat)/(1 + x/p_sat) + n·x + C.
pub struct Saturation;

const SATURATION: [ParamSpec; 4] = [
    free("i_sat"),
    positive("p_sat"),
    free("background_slope"),
    free("offset"),
];

impl FitModel for Saturation {
    fn name(&self) -> &'static str {
        "saturation"
    }
    fn params(&self) -> &[ParamSpec] {
        &SATURATION
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let s = x / p[1];
        p[0] * s / (1.0 + s) + p[2] * x + p[3]
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let s = x / p[1];
        g[0] = s / (1.0 + s);
        g[1] = -p[0] * x / (p[1] + x).powi(2);
        g[2] = x;
        g[3] = 1.0;
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let n = pts.len();
        let (x0, y0) = pts[0];
        let (x1, y1) = pts[n - 1];
        // Initial slope from the first points sets I_sat/p_sat; the top point sets I_sat.
        let k = n.min(3);
        let slope0 = linear_regression(&pts[..k])
            .map(|s| s.0)
            .unwrap_or((y1 - y0) / (x1 - x0));
        let offset = y0 - slope0 * x0;
        let top = y1 - offset;
        let p_sat = if slope0 > 0.0 && top > 0.0 {
            // Solve top = I·x1/(p + x1) with I = slope0·p.
            let p = top / (slope0 - top / x1).max(slope0 * 1e-3);
            p.clamp(x1 * 1e-3, x1 * 1e3)
        } else {
            0.5 * x1
        };
        vec![slope0.max(1e-12) * p_sat, p_sat, 0.0, offset]
    }
}

/// A·cos(2πfx + φ)·exp(−(x/T)²) + C.
pub struct SineGaussian;

const SINE_GAUSSIAN: [ParamSpec; 5] = [
    positive("amplitude"),
    positive("frequency"),
    free("phase"),
    positive("decay_time"),
    free("offset"),
];

impl FitModel for SineGaussian {
    fn name(&self) -> &'static str {
        "sine_gaussian"
    }
    fn params(&self) -> &[ParamSpec] {
        &SINE_GAUSSIAN
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (2.0 * PI * p[1] * x + p[2]).cos() * (-(x / p[3]).powi(2)).exp() + p[4]
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let arg = 2.0 * PI * p[1] * x + p[2];
        let env = (-(x / p[3]).powi(2)).exp();
        let (s, c) = arg.sin_cos();
        g[0] = c * env;
        g[1] = -p[0] * s * env * 2.0 * PI * x;
        g[2] = -p[0] * s * env;
        g[3] = p[0] * c * env * 2.0 * x * x / p[3].powi(3);
        g[4] = 1.0;
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let n = pts.len();
        let offset = mean(pts.iter().map(|p| p.1));
        let width = span(&pts);
        let dx = width / (n.max(2) - 1) as f64;
        // Weighted periodogram scan, then golden-section refinement.
        let power = |f: f64| -> (f64, f64) {
            let (mut re, mut im) = (0.0, 0.0);
            for w in pts.windows(2) {
                let (x, y) = w[0];
                let a = -2.0 * PI * f * x;
                re += (y - offset) * a.cos() * (w[1].0 - x);
                im += (y - offset) * a.sin() * (w[1].0 - x);
            }
            (re * re + im * im, im.atan2(re))
        };
        let f_max = 0.5 / dx;
        let f_min = 0.25 / width;
        let steps = 8 * n;
        let mut best = (f_min, f64::NEG_INFINITY);
        for k in 0..=steps {
            let f = f_min + (f_max - f_min) * k as f64 / steps as f64;
            let pw = power(f).0;
            if pw > best.1 {
                best = (f, pw);
            }
        }
        let h = (f_max - f_min) / steps as f64;
        let (mut a, mut b) = ((best.0 - h).max(f_min * 0.5), best.0 + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if power(c).0 > power(d).0 {
                b = d;
            } else {
                a = c;
            }
        }
        let freq = 0.5 * (a + b);
        let phase = power(freq).1;
        let amp = pts.iter().map(|p| (p.1 - offset).abs()).fold(0.0, f64::max);
        // Envelope width from the decay of |y − C| between the two halves.
        let half = n / 2;
        let e1 = mean(pts[..half].iter().map(|p| (p.1 - offset).powi(2))).sqrt();
        let e2 = mean(pts[half..].iter().map(|p| (p.1 - offset).powi(2))).sqrt();
        let decay = if e2 > 0.0 && e1 > e2 * 1.05 {
            let xm1 = mean(pts[..half].iter().map(|p| p.0));
            let xm2 = mean(pts[half..].iter().map(|p| p.0));
            ((xm2 * xm2 - xm1 * xm1) / (e1 / e2).ln()).sqrt()
        } else {
            2.0 * width
        };
        vec![
            amp.max(1e-12),
            freq,
            phase,
            decay.clamp(0.1 * width, 20.0 * width),
            offset,
        ]
    }
    fn canonicalize(&self, p: &mut [f64]) {
        p[2] = (p[2] + PI).rem_euclid(2.0 * PI) - PI;
    }
}

/// A·exp(−(x/T)^ξ). The Gaussian Ramsey envelope is this model with ξ fixed to 2.
pub struct StretchedExp;

const STRETCHED: [ParamSpec; 3] = [free("amplitude"), positive("decay_time"), positive("stretch")];

impl FitModel for StretchedExp {
    fn name(&self) -> &'static str {
        "stretched_exp"
    }
    fn params(&self) -> &[ParamSpec] {
        &STRETCHED
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        if x <= 0.0 {
            return p[0];
        }
        p[0] * (-(x / p[1]).powf(p[2])).exp()
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        if x <= 0.0 {
            g[0] = 1.0;
            g[1] = 0.0;
            g[2] = 0.0;
            return;
        }
        let r = x / p[1];
        let q = r.powf(p[2]);
        let e = (-q).exp();
        g[0] = e;
        g[1] = p[0] * e * q * p[2] / p[1];
        g[2] = -p[0] * e * q * r.ln();
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let amp = pts[0].1;
        let lin: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.0 > 0.0)
            .filter_map(|&(x, y)| {
                let r = y / amp;
                (r > 0.02 && r < 0.98).then(|| (x.ln(), (-r.ln()).ln()))
            })
            .collect();
        match linear_regression(&lin) {
            Some((slope, icpt)) if slope > 0.0 => vec![amp, (-icpt / slope).exp(), slope],
            _ => vec![amp, 0.5 * span(&pts), 1.0],
        }
    }
}

/// A·x^β.
pub struct PowerLaw;

const POWER_LAW: [ParamSpec; 2] = [positive("amplitude"), free("exponent")];

impl FitModel for PowerLaw {
    fn name(&self) -> &'static str {
        "power_law"
    }
    fn params(&self) -> &[ParamSpec] {
        &POWER_LAW
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x.powf(p[1])
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let v = x.powf(p[1]);
        g[0] = v;
        g[1] = p[0] * v * x.ln();
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let lin: Vec<(f64, f64)> = x
            .iter()
            .zip(y)
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .map(|(x, y)| (x.ln(), y.ln()))
            .collect();
        match linear_regression(&lin) {
            Some((b, a)) => vec![a.exp(), b],
            None => vec![1.0, 1.0],
        }
    }
}

fn lorentz(dx: f64, fwhm: f64) -> f64 {
    let h = 0.5 * fwhm;
    h * h / (dx * dx + h * h)
}

/// A·(Γ/2)²/((x − x₀)² + (Γ/2)²) + C, peak height A.
pub struct Lorentzian;

const LORENTZIAN: [ParamSpec; 4] = [free("amplitude"), free("center"), positive("fwhm"), free("offset")];

impl FitModel for Lorentzian {
    fn name(&self) -> &'static str {
        "lorentzian"
    }
    fn params(&self) -> &[ParamSpec] {
        &LORENTZIAN
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * lorentz(x - p[1], p[2]) + p[3]
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let d = x - p[1];
        let h2 = 0.25 * p[2] * p[2];
        let den = d * d + h2;
        let l = h2 / den;
        g[0] = l;
        g[1] = p[0] * 2.0 * d * h2 / (den * den);
        g[2] = p[0] * (0.5 * p[2] / den) * (1.0 - l);
        g[3] = 1.0;
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let base = median(pts.iter().map(|p| p.1).collect());
        // Peak or dip, whichever departs further from the median.
        let imax = (0..pts.len())
            .max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1))
            .unwrap_or(0);
        let imin = (0..pts.len())
            .min_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1))
            .unwrap_or(0);
        let peak = if pts[imax].1 - base >= base - pts[imin].1 {
            imax
        } else {
            imin
        };
        let fwhm = half_max_width(&pts, peak, base);
        vec![pts[peak].1 - base, pts[peak].0, fwhm, base]
    }
}

/// Two Lorentzians of common width, centred at x₀ ∓ Δ/2.
pub struct DoubleLorentzian;

const DOUBLE_LORENTZIAN: [ParamSpec; 6] = [
    free("amplitude_low"),
    free("amplitude_high"),
    free("center"),
    positive("splitting"),
    positive("fwhm"),
    free("offset"),
];

impl FitModel for DoubleLorentzian {
    fn name(&self) -> &'static str {
        "double_lorentzian"
    }
    fn params(&self) -> &[ParamSpec] {
        &DOUBLE_LORENTZIAN
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * lorentz(x - p[2] + 0.5 * p[3], p[4]) + p[1] * lorentz(x - p[2] - 0.5 * p[3], p[4]) + p[5]
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let h2 = 0.25 * p[4] * p[4];
        let d1 = x - p[2] + 0.5 * p[3];
        let d2 = x - p[2] - 0.5 * p[3];
        let den1 = d1 * d1 + h2;
        let den2 = d2 * d2 + h2;
        let l1 = h2 / den1;
        let l2 = h2 / den2;
        // dL/dd = −2d·h2/den²
        let dl1 = -2.0 * d1 * h2 / (den1 * den1);
        let dl2 = -2.0 * d2 * h2 / (den2 * den2);
        g[0] = l1;
        g[1] = l2;
        g[2] = -(p[0] * dl1 + p[1] * dl2);
        g[3] = 0.5 * (p[0] * dl1 - p[1] * dl2);
        g[4] = p[0] * (0.5 * p[4] / den1) * (1.0 - l1) + p[1] * (0.5 * p[4] / den2) * (1.0 - l2);
        g[5] = 1.0;
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let raw = sorted_pairs(x, y);
        let base = median(raw.iter().map(|p| p.1).collect());
        // Dips are fitted as negative peaks: search on the reflected trace.
        let (lo_y, hi_y) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
        let sign = if hi_y - base >= base - lo_y { 1.0 } else { -1.0 };
        let pts: Vec<(f64, f64)> = raw.iter().map(|&(x, y)| (x, sign * (y - base))).collect();
        // A short moving average keeps counting noise from posing as peaks.
        let half = (pts.len() / 60).max(1);
        let ys: Vec<f64> = (0..pts.len())
            .map(|i| {
                let w = &pts[i.saturating_sub(half)..(i + half + 1).min(pts.len())];
                w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64
            })
            .collect();
        let smooth: Vec<(f64, f64)> = pts.iter().zip(&ys).map(|(p, &y)| (p.0, y)).collect();
        let peaks = local_maxima(&ys);
        let first = peaks.first().copied().unwrap_or(0);
        let fwhm1 = half_max_width(&smooth, first, 0.0);
        // Second peak: the tallest local maximum separated from the first by
        // a real valley.
        let second = peaks.iter().copied().skip(1).find(|&i| {
            let (a, b) = if i < first { (i, first) } else { (first, i) };
            let valley = ys[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
            (pts[i].0 - pts[first].0).abs() > 0.5 * fwhm1 && ys[i] > 0.1 * ys[first] && valley < 0.8 * ys[i]
        });
        match second {
            Some(s) => {
                let (lo, hi) = if pts[first].0 < pts[s].0 {
                    (first, s)
                } else {
                    (s, first)
                };
                let split = pts[hi].0 - pts[lo].0;
                let fwhm = fwhm1.min(split);
                vec![
                    sign * ys[lo],
                    sign * ys[hi],
                    0.5 * (pts[lo].0 + pts[hi].0),
                    split,
                    fwhm,
                    base,
                ]
            }
            None => {
                let a = 0.5 * sign * ys[first];
                vec![a, a, pts[first].0, 0.5 * fwhm1, 0.7 * fwhm1, base]
            }
        }
    }
}

/// Unit-area density of an arcsine distribution on [−Ω, Ω] convolved with a
/// Lorentzian of full width `fwhm`, at detuning `d`.
///
/// Integrates over θ ∈ [−π/2, π/2] with u = Ω sin θ, which removes the
/// inverse-square-root endpoint singularities of the arcsine density.
pub fn arcsine_lorentzian_density(d: f64, omega: f64, fwhm: f64) -> f64 {
    let h = 0.5 * fwhm;
    let cauchy = |u: f64| h / (PI * ((d - u).powi(2) + h * h));
    if omega <= 0.0 {
        return cauchy(0.0);
    }
    let f = |theta: f64| cauchy(omega * theta.sin()) / PI;
    // Split at the stationary points of the Lorentzian argument so the
    // quadrature sees each sharp feature at a panel edge.
    let mut cuts = vec![-PI / 2.0, PI / 2.0];
    if d.abs() < omega {
        cuts.push((d / omega).asin());
    }
    cuts.sort_by(f64::total_cmp);
    let peak = cauchy(d.clamp(-omega, omega)) / PI;
    let abs_tol = 1e-13 * peak.max(1e-300);
    cuts.windows(2)
        .map(|w| quad::integrate(&f, w[0], w[1], abs_tol, 1e-12))
        .sum()
}

/// A·S(x − x₀; Ω, Γ) + C with S the unit-area arcsine⊗Lorentzian density.
pub struct ArcsineLorentzian;

const ARCSINE_LORENTZIAN: [ParamSpec; 5] = [
    free("area"),
    free("center"),
    positive("modulation"),
    positive("fwhm"),
    free("offset"),
];

impl FitModel for ArcsineLorentzian {
    fn name(&self) -> &'static str {
        "arcsine_lorentzian"
    }
    fn params(&self) -> &[ParamSpec] {
        &ARCSINE_LORENTZIAN
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * arcsine_lorentzian_density(x - p[1], p[2], p[3]) + p[4]
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let pts = sorted_pairs(x, y);
        let n = pts.len();
        let edge = (n / 10).max(1);
        let base = mean(pts[..edge].iter().chain(&pts[n - edge..]).map(|p| p.1));
        let area = trapezoid(&pts, base);
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // The arcsine horns sit at the outermost prominent maxima.
        let horns: Vec<usize> = local_maxima(&ys)
            .into_iter()
            .filter(|&i| ys[i] - base > 0.5 * (top - base))
            .collect();
        let lo = horns.iter().copied().min().unwrap_or(0);
        let hi = horns.iter().copied().max().unwrap_or(n - 1);
        let (center, omega, fwhm) = if hi > lo {
            let omega = 0.5 * (pts[hi].0 - pts[lo].0);
            let fwhm = half_max_width(&pts, hi, base).min(omega);
            (0.5 * (pts[lo].0 + pts[hi].0), omega, fwhm)
        } else {
            let w = half_max_width(&pts, lo, base);
            (pts[lo].0, 0.3 * w, 0.7 * w)
        };
        vec![area, center, omega.max(1e-12), fwhm.max(1e-12), base]
    }
}

/// A·P^N for randomized-benchmarking decays.
pub struct RbDecay;

const RB_DECAY: [ParamSpec; 2] = [
    free("amplitude"),
    ParamSpec {
        name: "p",
        bound: Bound::Interval { lower: 0.0, upper: 1.0 },
    },
];

impl FitModel for RbDecay {
    fn name(&self) -> &'static str {
        "rb_decay"
    }
    fn params(&self) -> &[ParamSpec] {
        &RB_DECAY
    }
    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * p[1].powf(x)
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn gradient(&self, x: f64, p: &[f64], g: &mut [f64]) {
        let v = p[1].powf(x);
        g[0] = v;
        g[1] = if x == 0.0 { 0.0 } else { p[0] * x * p[1].powf(x - 1.0) };
    }
    fn guess(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let lin: Vec<(f64, f64)> = x
            .iter()
            .zip(y)
            .filter(|(_, y)| **y > 0.0)
            .map(|(x, y)| (*x, y.ln()))
            .collect();
        match linear_regression(&lin) {
            Some((s, i)) => vec![i.exp(), s.exp().clamp(1e-3, 1.0 - 1e-9)],
            None => vec![y.first().copied().unwrap_or(1.0), 0.99],
        }
    }
}
