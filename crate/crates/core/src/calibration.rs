//! Repository calibration: the parameter sets every experiment starts from,
//! serialisable so a run can pin or override them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::levels::{
    direction_deg, FieldVector, FineStructureParams, HyperfineParams, HyperfineQuantity, HyperfineTarget, Transition,
};
use crate::pulse::OUProcess;
use crate::pumping::{power_to_rabi, AngularRate, SixLevelParams, ThreeLevelParams};

/// Bumped whenever a field changes meaning.
pub const CALIBRATION_VERSION: u32 = 1;

/// Optical-pumping inputs; rates in Mrad/s, powers in nW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpingCalibration {
    pub power_nw: f64,
    pub p_sat_nw: f64,
    /// Detuning of the pumped line, the RF1 nuclear splitting.
    pub delta: AngularRate,
    pub gamma: AngularRate,
    pub cyclicity_e: f64,
    pub cyclicity_n: f64,
    /// Electron Rabi frequency at 0 dB.
    pub omega_mw_ref: f64,
    pub mw_attenuation_db: f64,
    pub gamma_e_spin: AngularRate,
    pub delta_mw: AngularRate,
}

impl PumpingCalibration {
    pub fn three_level(&self) -> Result<ThreeLevelParams> {
        let p = ThreeLevelParams {
            omega_opt: power_to_rabi(self.power_nw, self.p_sat_nw, self.gamma)?,
            delta: self.delta,
            gamma: self.gamma,
            cyclicity_e: self.cyclicity_e,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn six_level(&self) -> Result<SixLevelParams> {
        SixLevelParams::with_mw_drive(
            self.three_level()?,
            self.cyclicity_n,
            self.omega_mw_ref,
            self.mw_attenuation_db,
            self.gamma_e_spin,
            self.delta_mw,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub fine_structure: FineStructureParams,
    pub hyperfine: HyperfineParams,
    /// Observables the hyperfine tensor was fitted to.
    pub hyperfine_targets: Vec<HyperfineTarget>,
    pub pumping: PumpingCalibration,
    /// Slow nuclear-spin bath.
    pub nuclear_bath: OUProcess,
}

/// RF and enhancement anchors the hyperfine tensor is fitted to.
pub fn hyperfine_targets() -> Vec<HyperfineTarget> {
    let enhancement = HyperfineQuantity::Enhancement(direction_deg(54.7, 0.0));
    let rows = [
        (106.0, HyperfineQuantity::Line(Transition::Rf1), 22.74, 0.05),
        (60.0, HyperfineQuantity::Line(Transition::Rf2), 20.998, 0.05),
        (106.0, HyperfineQuantity::Line(Transition::Rf2), 20.53, 0.05),
        (106.0, HyperfineQuantity::MwSplitting, 44.5, 1.4),
        (60.0, enhancement, 2.07, 0.1035),
        (106.0, enhancement, 1.57, 0.0785),
    ];
    rows.into_iter()
        .map(|(b, quantity, value, sigma)| HyperfineTarget {
            field: FieldVector::axial(b),
            quantity,
            value,
            sigma,
        })
        .collect()
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            version: CALIBRATION_VERSION,
            fine_structure: FineStructureParams::tin_vacancy(),
            hyperfine: HyperfineParams {
                a_par: 243.61,
                a_perp: -13.959,
                a_contact: -202.67,
                gamma_c13: 10.7,
            },
            hyperfine_targets: hyperfine_targets(),
            pumping: PumpingCalibration {
                power_nw: 7.0,
                p_sat_nw: 29.0,
                delta: AngularRate::from_mrad_per_s(22.74),
                gamma: AngularRate::from_mrad_per_s(230.0),
                cyclicity_e: 5988.0,
                cyclicity_n: 10.0,
                omega_mw_ref: 1.60,
                mw_attenuation_db: -35.0,
                gamma_e_spin: AngularRate::from_mrad_per_s(0.49),
                delta_mw: AngularRate::ZERO,
            },
            nuclear_bath: OUProcess {
                coupling_b: 943.0,
                tau_c: 345.0,
                seed: 0,
            },
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if self.version != CALIBRATION_VERSION {
            return Err(invalid(format!(
                "calibration version {} is not supported (expected {CALIBRATION_VERSION})",
                self.version
            )));
        }
        self.fine_structure.validate()?;
        self.hyperfine.validate()?;
        self.pumping.six_level()?;
        self.nuclear_bath.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| invalid(format!("calibration file: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Consistency(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let c = Calibration::default();
        let back = Calibration::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn foreign_version_is_rejected() {
        let mut c = Calibration::default();
        c.version += 1;
        assert!(Calibration::from_json(&c.to_json().unwrap()).is_err());
    }

    #[test]
    fn pumping_block_builds_rate_models() {
        let p = Calibration::default().pumping.six_level().unwrap();
        assert!((p.w_mw.rad_per_s() - 1652.0).abs() < 1.0, "{}", p.w_mw.rad_per_s());
    }
}
