//! Electron fine structure and electron–nuclear hyperfine levels.
//!
//! Each optical manifold is a 4×4 problem in the orbital (e₊, e₋) ⊗ spin
//! basis: spin–orbit coupling, transverse strain, a quenched orbital Zeeman
//! term and the spin Zeeman term. The ground manifold is extended by a
//! spin-½ nucleus for the hyperfine levels. Fields are given in the defect
//! frame, whose z axis is the symmetry axis.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::fitkit::{self, Bound, FitOptions, FitResult, Problem};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const CI: Complex64 = Complex64::new(0.0, 1.0);

/// Which quenching factor scales the orbital Zeeman term of a manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuenchingBranch {
    #[default]
    F12,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineStructureParams {
    /// Ground-state spin–orbit splitting, GHz.
    pub lambda_gs: f64,
    /// Ground-state transverse strain, GHz.
    pub upsilon_gs: f64,
    /// Excited-state spin–orbit splitting, GHz.
    pub lambda_es: f64,
    /// Excited-state transverse strain, GHz.
    pub upsilon_es: f64,
    pub f12_gs: f64,
    pub f32_gs: f64,
    pub f12_es: f64,
    pub f32_es: f64,
    /// Electron spin gyromagnetic ratio, MHz/mT.
    pub gamma_spin: f64,
    /// Orbital gyromagnetic ratio, MHz/mT.
    pub gamma_orb: f64,
    #[serde(default)]
    pub quenching_gs: QuenchingBranch,
    #[serde(default)]
    pub quenching_es: QuenchingBranch,
}

impl FineStructureParams {
    /// Fitted parameter set of the tin-vacancy centre used throughout.
    pub fn tin_vacancy() -> Self {
        Self {
            lambda_gs: 822.0,
            upsilon_gs: 41.3,
            lambda_es: 3000.0,
            upsilon_es: 65.5,
            f12_gs: 0.251,
            f32_gs: 0.268,
            f12_es: 0.5,
            f32_es: 0.486,
            gamma_spin: 28.0,
            gamma_orb: 14.0,
            quenching_gs: QuenchingBranch::F12,
            quenching_es: QuenchingBranch::F12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_gs", self.lambda_gs),
            ("upsilon_gs", self.upsilon_gs),
            ("lambda_es", self.lambda_es),
            ("upsilon_es", self.upsilon_es),
            ("f12_gs", self.f12_gs),
            ("f32_gs", self.f32_gs),
            ("f12_es", self.f12_es),
            ("f32_es", self.f32_es),
            ("gamma_spin", self.gamma_spin),
            ("gamma_orb", self.gamma_orb),
        ];
        for (name, v) in all {
            ensure_finite(name, v)?;
        }
        if self.lambda_gs <= 0.0 || self.lambda_es <= 0.0 {
            return Err(invalid("spin-orbit splittings must be positive"));
        }
        if self.upsilon_gs < 0.0 || self.upsilon_es < 0.0 {
            return Err(invalid("strain must be non-negative"));
        }
        for (name, f) in &all[4..8] {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(invalid(format!("quenching factor {name} = {f} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn quench(&self, manifold: Manifold) -> f64 {
        match (manifold, manifold.branch(self)) {
            (Manifold::Ground, QuenchingBranch::F12) => self.f12_gs,
            (Manifold::Ground, QuenchingBranch::F32) => self.f32_gs,
            (Manifold::Excited, QuenchingBranch::F12) => self.f12_es,
            (Manifold::Excited, QuenchingBranch::F32) => self.f32_es,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    Ground,
    Excited,
}

impl Manifold {
    fn branch(self, p: &FineStructureParams) -> QuenchingBranch {
        match self {
            Manifold::Ground => p.quenching_gs,
            Manifold::Excited => p.quenching_es,
        }
    }
}

/// Static field in the defect frame, mT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldVector {
    /// Component along the symmetry axis.
    pub b_parallel: f64,
    /// Magnitude of the transverse component.
    pub b_perp: f64,
    /// Azimuth of the transverse component, rad.
    #[serde(default)]
    pub azimuth: f64,
}

impl FieldVector {
    pub fn new(b_parallel: f64, b_perp: f64, azimuth: f64) -> Self {
        Self {
            b_parallel,
            b_perp,
            azimuth,
        }
    }

    pub fn axial(b: f64) -> Self {
        Self::new(b, 0.0, 0.0)
    }

    pub fn zero() -> Self {
        Self::axial(0.0)
    }

    /// Field of magnitude `b` along the unit vector `u` (defect frame).
    pub fn along(u: [f64; 3], b: f64) -> Self {
        Self::from_cartesian([b * u[0], b * u[1], b * u[2]])
    }

    pub fn from_cartesian(b: [f64; 3]) -> Self {
        let perp = b[0].hypot(b[1]);
        Self::new(b[2], perp, if perp > 0.0 { b[1].atan2(b[0]) } else { 0.0 })
    }

    pub fn cartesian(&self) -> [f64; 3] {
        [
            self.b_perp * self.azimuth.cos(),
            self.b_perp * self.azimuth.sin(),
            self.b_parallel,
        ]
    }

    pub fn magnitude(&self) -> f64 {
        self.b_parallel.hypot(self.b_perp)
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("b_parallel", self.b_parallel)?;
        ensure_finite("b_perp", self.b_perp)?;
        ensure_finite("azimuth", self.azimuth)?;
        if self.b_perp < 0.0 {
            return Err(invalid("b_perp is a magnitude and must be non-negative"));
        }
        if self.magnitude() >= 1000.0 {
            return Err(invalid(format!(
                "|B| = {} mT outside the supported range",
                self.magnitude()
            )));
        }
        Ok(())
    }
}

/// Unit vector in the defect frame at `polar` from the axis and `azimuth`, both in degrees.
pub fn direction_deg(polar: f64, azimuth: f64) -> [f64; 3] {
    let (t, p) = (polar.to_radians(), azimuth.to_radians());
    [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineParams {
    /// Extra coupling along the symmetry axis, MHz (A_zz = contact + par).
    pub a_par: f64,
    /// Off-diagonal axis–transverse coupling, MHz (A_xz = A_zx).
    pub a_perp: f64,
    /// Isotropic contact coupling, MHz.
    pub a_contact: f64,
    /// Nuclear gyromagnetic ratio, kHz/mT.
    #[serde(default = "default_gamma_c13")]
    pub gamma_c13: f64,
}

fn default_gamma_c13() -> f64 {
    10.7
}

impl HyperfineParams {
    pub fn uncoupled() -> Self {
        Self {
            a_par: 0.0,
            a_perp: 0.0,
            a_contact: 0.0,
            gamma_c13: default_gamma_c13(),
        }
    }

    /// Coupling tensor in the defect frame, MHz.
    pub fn tensor(&self) -> [[f64; 3]; 3] {
        let c = self.a_contact;
        [[c, 0.0, self.a_perp], [0.0, c, 0.0], [self.a_perp, 0.0, c + self.a_par]]
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("a_par", self.a_par)?;
        ensure_finite("a_perp", self.a_perp)?;
        ensure_finite("a_contact", self.a_contact)?;
        if !(self.gamma_c13 > 0.0 && self.gamma_c13.is_finite()) {
            return Err(invalid("gamma_c13 must be positive"));
        }
        Ok(())
    }
}

/// Named transitions. Optical lines are relative to the zero-phonon centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transition {
    A1,
    B2,
    /// Electron spin splitting of the lower ground doublet.
    Qubit,
    /// |↓e↑n⟩ → |↑e↑n⟩.
    Mw1,
    /// |↓e↓n⟩ → |↑e↓n⟩.
    Mw2,
    /// |↓e↑n⟩ → |↓e↓n⟩.
    Rf1,
    /// |↑e↓n⟩ → |↑e↑n⟩.
    Rf2,
}

impl Transition {
    /// Unit of the frequencies reported for this transition.
    pub fn unit(self) -> &'static str {
        match self {
            Transition::Rf1 | Transition::Rf2 => "MHz",
            _ => "GHz",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "A1" => Transition::A1,
            "B2" => Transition::B2,
            "QUBIT" | "MW" => Transition::Qubit,
            "MW1" => Transition::Mw1,
            "MW2" => Transition::Mw2,
            "RF1" => Transition::Rf1,
            "RF2" => Transition::Rf2,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDiagram {
    /// Ground levels, GHz, ascending.
    pub gs_energies: Vec<f64>,
    /// Excited levels, GHz, ascending.
    pub es_energies: Vec<f64>,
    /// GHz for optical and microwave lines, MHz for RF lines.
    pub transitions: BTreeMap<Transition, f64>,
}

impl LevelDiagram {
    pub fn get(&self, t: Transition) -> Option<f64> {
        self.transitions.get(&t).copied()
    }

    /// Frequency of `t`; panics if the diagram does not carry it.
    pub fn frequency(&self, t: Transition) -> f64 {
        self.transitions[&t]
    }
}

// ---------------------------------------------------------------------------
// operators

fn pauli(k: usize) -> DMatrix<Complex64> {
    match k {
        0 => DMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0]),
        1 => DMatrix::from_row_slice(2, 2, &[C0, -CI, CI, C0]),
        2 => DMatrix::from_row_slice(2, 2, &[C1, C0, C0, -C1]),
        _ => DMatrix::identity(2, 2),
    }
}

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

fn id(n: usize) -> DMatrix<Complex64> {
    DMatrix::identity(n, n)
}

/// Spin operator S_k (k = 0, 1, 2 for x, y, z) on the orbital ⊗ spin space.
fn spin_op(k: usize) -> DMatrix<Complex64> {
    kron(&id(2), &pauli(k)) * Complex64::from(0.5)
}

fn orbital_lz() -> DMatrix<Complex64> {
    kron(&pauli(2), &id(2))
}

/// Manifold Hamiltonian in GHz, basis (e₊↑, e₊↓, e₋↑, e₋↓).
pub fn manifold_hamiltonian(p: &FineStructureParams, manifold: Manifold, b: &FieldVector) -> DMatrix<Complex64> {
    let (lambda, upsilon) = match manifold {
        Manifold::Ground => (p.lambda_gs, p.upsilon_gs),
        Manifold::Excited => (p.lambda_es, p.upsilon_es),
    };
    let [bx, by, bz] = b.cartesian();
    let lz = orbital_lz();
    let so = &lz * &spin_op(2) * Complex64::from(-lambda);
    let strain = kron(&pauli(0), &id(2)) * Complex64::from(upsilon);
    let orb = lz * Complex64::from(p.quench(manifold) * p.gamma_orb * bz * 1e-3);
    let zeeman =
        (spin_op(0) * Complex64::from(bx) + spin_op(1) * Complex64::from(by) + spin_op(2) * Complex64::from(bz))
            * Complex64::from(p.gamma_spin * 1e-3);
    so + strain + orb + zeeman
}

/// Hyperfine-extended ground Hamiltonian in GHz; basis (orbital ⊗ spin) ⊗ nucleus.
pub fn hyperfine_hamiltonian(p: &FineStructureParams, h: &HyperfineParams, b: &FieldVector) -> DMatrix<Complex64> {
    let electron = kron(&manifold_hamiltonian(p, Manifold::Ground, b), &id(2));
    let a = h.tensor();
    let mut hf = DMatrix::zeros(8, 8);
    for (i, row) in a.iter().enumerate() {
        for (j, &aij) in row.iter().enumerate() {
            if aij != 0.0 {
                hf += kron(&spin_op(i), &pauli(j)) * Complex64::from(0.5 * aij * 1e-3);
            }
        }
    }
    let bn = b.cartesian();
    let mut nz = DMatrix::zeros(8, 8);
    for (k, bk) in bn.iter().enumerate() {
        nz -= kron(&id(4), &pauli(k)) * Complex64::from(0.5 * h.gamma_c13 * 1e-6 * bk);
    }
    electron + hf + nz
}

/// Eigenpairs sorted by energy, ties broken by ⟨S_z⟩.
struct Spectrum {
    energies: Vec<f64>,
    vectors: Vec<DVector<Complex64>>,
}

fn expectation(v: &DVector<Complex64>, op: &DMatrix<Complex64>) -> f64 {
    (v.adjoint() * op * v)[(0, 0)].re
}

fn diagonalize(h: DMatrix<Complex64>, sz: &DMatrix<Complex64>) -> Result<Spectrum> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("Hamiltonian has non-finite entries"));
    }
    let eig = h.symmetric_eigen();
    let mut pairs: Vec<(f64, f64, DVector<Complex64>)> = (0..eig.eigenvalues.len())
        .map(|k| {
            let v: DVector<Complex64> = eig.eigenvectors.column(k).into_owned();
            (eig.eigenvalues[k], expectation(&v, sz), v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(b.0.abs()).max(1.0) {
            a.1.total_cmp(&b.1)
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    Ok(Spectrum {
        energies: pairs.iter().map(|p| p.0).collect(),
        vectors: pairs.into_iter().map(|p| p.2).collect(),
    })
}

fn manifold_energies(p: &FineStructureParams, m: Manifold, b: &FieldVector) -> Result<Vec<f64>> {
    Ok(diagonalize(manifold_hamiltonian(p, m, b), &spin_op(2))?.energies)
}

/// Electron-only levels of both manifolds with A1, B2 and the qubit splitting.
pub fn electron_levels(p: &FineStructureParams, b: &FieldVector) -> Result<LevelDiagram> {
    p.validate()?;
    b.validate()?;
    let gs = manifold_energies(p, Manifold::Ground, b)?;
    let es = manifold_energies(p, Manifold::Excited, b)?;
    let mut transitions = BTreeMap::new();
    transitions.insert(Transition::A1, es[0] - gs[0]);
    transitions.insert(Transition::B2, es[1] - gs[1]);
    transitions.insert(Transition::Qubit, gs[1] - gs[0]);
    Ok(LevelDiagram {
        gs_energies: gs,
        es_energies: es,
        transitions,
    })
}

/// The four lowest hyperfine states, labelled by character.
struct Sublevels {
    /// Energies (GHz) of |↓e↑n⟩, |↓e↓n⟩, |↑e↓n⟩, |↑e↑n⟩.
    energies: [f64; 4],
    states: [DVector<Complex64>; 4],
    all: Vec<f64>,
}

fn sublevels(p: &FineStructureParams, h: &HyperfineParams, b: &FieldVector) -> Result<Sublevels> {
    let sz = kron(&spin_op(2), &id(2));
    let iz = kron(&id(4), &pauli(2)) * Complex64::from(0.5);
    let spec = diagonalize(hyperfine_hamiltonian(p, h, b), &sz)?;
    let mut low: Vec<(f64, f64, f64, DVector<Complex64>)> = (0..4)
        .map(|k| {
            let v = spec.vectors[k].clone();
            (spec.energies[k], expectation(&v, &sz), expectation(&v, &iz), v)
        })
        .collect();
    // Electron branch first, then nuclear projection within each branch.
    low.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (down, up) = low.split_at_mut(2);
    down.sort_by(|a, b| b.2.total_cmp(&a.2));
    up.sort_by(|a, b| a.2.total_cmp(&b.2));
    Ok(Sublevels {
        energies: [low[0].0, low[1].0, low[2].0, low[3].0],
        states: [low[0].3.clone(), low[1].3.clone(), low[2].3.clone(), low[3].3.clone()],
        all: spec.energies,
    })
}

/// Ground hyperfine levels with the four spin transitions.
pub fn hyperfine_levels(p: &FineStructureParams, h: &HyperfineParams, b: &FieldVector) -> Result<LevelDiagram> {
    p.validate()?;
    h.validate()?;
    b.validate()?;
    let s = sublevels(p, h, b)?;
    let e = s.energies;
    let mut transitions = BTreeMap::new();
    transitions.insert(Transition::Rf1, (e[1] - e[0]).abs() * 1e3);
    transitions.insert(Transition::Rf2, (e[3] - e[2]).abs() * 1e3);
    transitions.insert(Transition::Mw1, (e[3] - e[0]).abs());
    transitions.insert(Transition::Mw2, (e[2] - e[1]).abs());
    let electron = electron_levels(p, b)?;
    transitions.insert(Transition::Qubit, electron.frequency(Transition::Qubit));
    transitions.insert(Transition::A1, electron.frequency(Transition::A1));
    transitions.insert(Transition::B2, electron.frequency(Transition::B2));
    Ok(LevelDiagram {
        gs_energies: s.all,
        es_energies: electron.es_energies,
        transitions,
    })
}

/// Splitting of the two electron-spin lines, MW1 − MW2, MHz.
pub fn mw_splitting(diagram: &LevelDiagram) -> f64 {
    (diagram.frequency(Transition::Mw1) - diagram.frequency(Transition::Mw2)) * 1e3
}

fn check_unit(u: [f64; 3]) -> Result<()> {
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(invalid("direction vector must be non-zero"));
    }
    if (n - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("direction vector has norm {n}, expected 1")));
    }
    Ok(())
}

/// Slope of the qubit splitting, MHz/mT, for a small field change along `direction`
/// on top of the operating field.
///
/// Central difference with a 0.1 mT step and one Richardson extrapolation.
pub fn gyromagnetic_ratio(p: &FineStructureParams, direction: [f64; 3], operating: &FieldVector) -> Result<f64> {
    check_unit(direction)?;
    gyromagnetic_ratio_with_step(p, direction, operating, 0.1)
}

/// As [`gyromagnetic_ratio`] with an explicit step, mT.
pub fn gyromagnetic_ratio_with_step(
    p: &FineStructureParams,
    direction: [f64; 3],
    operating: &FieldVector,
    step: f64,
) -> Result<f64> {
    check_unit(direction)?;
    if !(step > 0.0) {
        return Err(invalid("step must be positive"));
    }
    let b0 = operating.cartesian();
    let splitting = |s: f64| -> Result<f64> {
        let b = FieldVector::from_cartesian([
            b0[0] + s * direction[0],
            b0[1] + s * direction[1],
            b0[2] + s * direction[2],
        ]);
        Ok(electron_levels(p, &b)?.frequency(Transition::Qubit) * 1e3)
    };
    let d = |h: f64| -> Result<f64> { Ok((splitting(h)? - splitting(-h)?) / (2.0 * h)) };
    let coarse = d(step)?;
    let fine = d(0.5 * step)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Nuclear Rabi enhancement ξ of the |↑e↓n⟩ ↔ |↑e↑n⟩ transition for an AC
/// field along `ac_direction`, relative to a bare ¹³C spin driven by the
/// transverse part of the same field.
pub fn rabi_enhancement(
    p: &FineStructureParams,
    h: &HyperfineParams,
    b_dc: &FieldVector,
    ac_direction: [f64; 3],
) -> Result<f64> {
    p.validate()?;
    h.validate()?;
    b_dc.validate()?;
    check_unit(ac_direction)?;
    let uncoupled = h.a_par == 0.0 && h.a_perp == 0.0 && h.a_contact == 0.0;
    if b_dc.magnitude() == 0.0 && uncoupled {
        return Err(Error::Degenerate(
            "zero field and zero hyperfine leave the nuclear levels degenerate".into(),
        ));
    }
    let sin_perp = ac_direction[0].hypot(ac_direction[1]);
    if sin_perp < 1e-12 {
        return Err(Error::Degenerate(
            "AC field has no component transverse to the axis".into(),
        ));
    }
    let s = sublevels(p, h, b_dc)?;
    if (s.energies[3] - s.energies[2]).abs() < 1e-15 {
        return Err(Error::Degenerate(
            "nuclear sublevels of the upper electron branch are degenerate".into(),
        ));
    }
    // Coupling to a unit AC field, MHz/mT.
    let u = ac_direction;
    let electron = orbital_lz() * Complex64::from(p.quench(Manifold::Ground) * p.gamma_orb * u[2])
        + (spin_op(0) * Complex64::from(u[0])
            + spin_op(1) * Complex64::from(u[1])
            + spin_op(2) * Complex64::from(u[2]))
            * Complex64::from(p.gamma_spin);
    let mut v = kron(&electron, &id(2));
    for (k, uk) in u.iter().enumerate() {
        v -= kron(&id(4), &pauli(k)) * Complex64::from(0.5 * h.gamma_c13 * 1e-3 * uk);
    }
    let elem = (s.states[2].adjoint() * v * &s.states[3])[(0, 0)].norm();
    Ok(elem / (0.5 * h.gamma_c13 * 1e-3 * sin_perp))
}

// ---------------------------------------------------------------------------
// fits

/// One measured line for the strain fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrainObservation {
    pub field: FieldVector,
    pub transition: Transition,
    /// GHz.
    pub frequency: f64,
    /// GHz.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrainFit {
    pub params: FineStructureParams,
    pub sigma_upsilon_gs: f64,
    pub sigma_upsilon_es: f64,
    /// Observed minus model, GHz.
    pub residuals: Vec<f64>,
    pub fit: FitResult,
}

struct StrainProblem<'a> {
    base: FineStructureParams,
    obs: &'a [StrainObservation],
}

impl StrainProblem<'_> {
    fn with(&self, q: &[f64]) -> FineStructureParams {
        FineStructureParams {
            upsilon_gs: q[0],
            upsilon_es: q[1],
            ..self.base
        }
    }

    fn model(&self, q: &[f64], o: &StrainObservation) -> f64 {
        electron_levels(&self.with(q), &o.field)
            .map(|d| d.frequency(o.transition))
            .unwrap_or(f64::NAN)
    }
}

impl Problem for StrainProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.obs.len()
    }
    fn residuals(&self, q: &[f64], out: &mut [f64]) {
        for (o, r) in self.obs.iter().zip(out) {
            *r = (self.model(q, o) - o.frequency) / o.sigma;
        }
    }
    fn param_name(&self, i: usize) -> String {
        ["upsilon_gs", "upsilon_es"][i].into()
    }
}

/// Fits both strain parameters to optical and microwave lines; the other
/// parameters are taken from `p0`.
pub fn fit_strain(observed: &[StrainObservation], p0: &FineStructureParams) -> Result<StrainFit> {
    p0.validate()?;
    if observed.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "{} observations for two strain parameters",
            observed.len()
        )));
    }
    for o in observed {
        o.field.validate()?;
        if matches!(
            o.transition,
            Transition::Mw1 | Transition::Mw2 | Transition::Rf1 | Transition::Rf2
        ) {
            return Err(invalid("strain fits use A1, B2 and qubit lines only"));
        }
        if !(o.sigma > 0.0) {
            return Err(invalid("observation sigma must be positive"));
        }
    }
    if !(p0.upsilon_gs > 0.0 && p0.upsilon_es > 0.0) {
        return Err(invalid("initial strain guesses must be positive"));
    }
    let problem = StrainProblem {
        base: *p0,
        obs: observed,
    };
    let fit = fitkit::minimize(
        &problem,
        &[p0.upsilon_gs, p0.upsilon_es],
        &[Bound::Positive; 2],
        &FitOptions::default(),
    )
    .map_err(|e| match e {
        Error::Singular { parameter } => {
            Error::RankDeficient(format!("observations do not separate the two strains ({parameter})"))
        }
        other => other,
    })?;
    let params = problem.with(&fit.params);
    let residuals = observed
        .iter()
        .map(|o| o.frequency - problem.model(&fit.params, o))
        .collect();
    Ok(StrainFit {
        params,
        sigma_upsilon_gs: fit.sigma(0),
        sigma_upsilon_es: fit.sigma(1),
        residuals,
        fit,
    })
}

/// Quantity matched by a hyperfine calibration target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperfineQuantity {
    /// A named line, in its own unit.
    Line(Transition),
    /// MW1 − MW2, MHz.
    MwSplitting,
    /// Rabi enhancement for an AC field along the given unit vector.
    Enhancement([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineTarget {
    pub field: FieldVector,
    pub quantity: HyperfineQuantity,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetResidual {
    pub target: HyperfineTarget,
    pub model: f64,
    /// Target minus model, in the target's unit.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperfineFit {
    pub params: HyperfineParams,
    /// σ of (a_par, a_perp, a_contact), MHz.
    pub sigmas: [f64; 3],
    pub residuals: Vec<TargetResidual>,
    pub fit: FitResult,
}

/// Model value of a calibration quantity.
pub fn hyperfine_quantity(
    p: &FineStructureParams,
    h: &HyperfineParams,
    field: &FieldVector,
    q: HyperfineQuantity,
) -> Result<f64> {
    match q {
        HyperfineQuantity::Line(t) => Ok(hyperfine_levels(p, h, field)?.frequency(t)),
        HyperfineQuantity::MwSplitting => Ok(mw_splitting(&hyperfine_levels(p, h, field)?)),
        HyperfineQuantity::Enhancement(u) => rabi_enhancement(p, h, field, u),
    }
}

struct HyperfineProblem<'a> {
    p: &'a FineStructureParams,
    gamma_c13: f64,
    targets: &'a [HyperfineTarget],
}

impl HyperfineProblem<'_> {
    fn params(&self, q: &[f64]) -> HyperfineParams {
        HyperfineParams {
            a_par: q[0],
            a_perp: q[1],
            a_contact: q[2],
            gamma_c13: self.gamma_c13,
        }
    }
}

impl Problem for HyperfineProblem<'_> {
    fn n_residuals(&self) -> usize {
        self.targets.len()
    }
    fn residuals(&self, q: &[f64], out: &mut [f64]) {
        let h = self.params(q);
        for (t, r) in self.targets.iter().zip(out) {
            let m = hyperfine_quantity(self.p, &h, &t.field, t.quantity).unwrap_or(f64::NAN);
            *r = (m - t.value) / t.sigma;
        }
    }
    fn param_name(&self, i: usize) -> String {
        ["a_par", "a_perp", "a_contact"][i].into()
    }
}

/// Fits the three hyperfine couplings to calibration targets.
pub fn fit_hyperfine(
    p: &FineStructureParams,
    targets: &[HyperfineTarget],
    h0: &HyperfineParams,
) -> Result<HyperfineFit> {
    p.validate()?;
    h0.validate()?;
    if targets.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "{} targets for three couplings",
            targets.len()
        )));
    }
    let mut mags: Vec<f64> = targets.iter().map(|t| t.field.magnitude()).collect();
    mags.sort_by(f64::total_cmp);
    mags.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if mags.len() < 2 {
        return Err(Error::RankDeficient(
            "targets must span at least two field magnitudes".into(),
        ));
    }
    for t in targets {
        t.field.validate()?;
        if !(t.sigma > 0.0) || !t.value.is_finite() {
            return Err(invalid("targets need a finite value and a positive sigma"));
        }
    }
    let problem = HyperfineProblem {
        p,
        gamma_c13: h0.gamma_c13,
        targets,
    };
    let fit = fitkit::minimize(
        &problem,
        &[h0.a_par, h0.a_perp, h0.a_contact],
        &[Bound::Free; 3],
        &FitOptions::default(),
    )
    .map_err(|e| match e {
        Error::Singular { parameter } => Error::RankDeficient(format!("targets do not constrain {parameter}")),
        other => other,
    })?;
    let params = problem.params(&fit.params);
    let residuals = targets
        .iter()
        .map(|t| {
            let model = hyperfine_quantity(p, &params, &t.field, t.quantity)?;
            Ok(TargetResidual {
                target: *t,
                model,
                residual: t.value - model,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HyperfineFit {
        params,
        sigmas: [fit.sigma(0), fit.sigma(1), fit.sigma(2)],
        residuals,
        fit,
    })
}
