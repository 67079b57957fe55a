//! Electrical description of the series-series compensated link and the
//! closed-form quantities derived from it.
//!
//! All values are SI: hertz, henries, farads, ohms, volts, seconds.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

/// Ratio between the rms fundamental of a ±V square wave and V.
pub const SQUARE_WAVE_FUNDAMENTAL: f64 = 2.0 * SQRT_2 / PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("{name} must be strictly positive (got {value})")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("coupling coefficient k must satisfy 0 <= k < 1 (got {0})")]
    CouplingOutOfRange(f64),
    #[error("{name} is not finite")]
    NotFinite { name: &'static str },
}

/// Full electrical description of the link: source, tanks, parasitics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitParams {
    /// DC bus voltage feeding the full bridge.
    pub vdc: f64,
    /// Battery voltage behind the diode bridge.
    pub vb: f64,
    /// Switching frequency.
    pub fs: f64,
    pub l1: f64,
    pub l2: f64,
    pub c1: f64,
    pub c2: f64,
    pub k: f64,
    /// Primary loop series resistance.
    pub r1: f64,
    /// Secondary loop series resistance.
    pub r2: f64,
    /// Forward drop of a single rectifier diode.
    pub vd: f64,
    /// Inverter dead time (time-domain simulation only).
    pub dead_time: f64,
}

/// Calibrated primary-loop resistance: reproduces the 4.2 W zero-coupling
/// loss of the reference prototype at its first-harmonic current.
pub const DEFAULT_R1: f64 = 0.16;
pub const DEFAULT_R2: f64 = 0.1;
pub const DEFAULT_VD: f64 = 0.4;

impl CircuitParams {
    /// The reference prototype (29 V, 245 kHz, 19.5 µH / 26 nF
    /// primary, 5.5 µH / 80 nF secondary, 11.1 V battery, k = 0.38) with the
    /// calibrated parasitics.
    pub fn reference() -> Self {
        Self {
            vdc: 29.0,
            vb: 11.1,
            fs: 245e3,
            l1: 19.5e-6,
            l2: 5.5e-6,
            c1: 26e-9,
            c2: 80e-9,
            k: 0.38,
            r1: DEFAULT_R1,
            r2: DEFAULT_R2,
            vd: DEFAULT_VD,
            dead_time: 0.0,
        }
    }

    /// Same circuit with every parasitic removed.
    pub fn lossless(self) -> Self {
        Self {
            r1: 0.0,
            r2: 0.0,
            vd: 0.0,
            ..self
        }
    }

    pub fn with_k(self, k: f64) -> Self {
        Self { k, ..self }
    }

    pub fn with_c1(self, c1: f64) -> Self {
        Self { c1, ..self }
    }

    pub fn with_vdc(self, vdc: f64) -> Self {
        Self { vdc, ..self }
    }

    /// Retune C1 so the primary resonates exactly at the switching frequency.
    pub fn with_resonant_primary(self) -> Self {
        let w = self.omega();
        Self {
            c1: 1.0 / (w * w * self.l1),
            ..self
        }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.fs
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let positive = [
            ("vdc", self.vdc),
            ("vb", self.vb),
            ("fs", self.fs),
            ("l1", self.l1),
            ("l2", self.l2),
            ("c1", self.c1),
            ("c2", self.c2),
        ];
        let non_negative = [
            ("r1", self.r1),
            ("r2", self.r2),
            ("vd", self.vd),
            ("dead_time", self.dead_time),
        ];
        for (name, value) in positive.iter().chain(non_negative.iter()) {
            if !value.is_finite() {
                return Err(CircuitError::NotFinite { name });
            }
        }
        // Vdc = 0 is allowed as a "no excitation" state.
        if self.vdc < 0.0 {
            return Err(CircuitError::Negative {
                name: "vdc",
                value: self.vdc,
            });
        }
        for (name, value) in positive.iter().skip(1) {
            if *value <= 0.0 {
                return Err(CircuitError::NotPositive {
                    name,
                    value: *value,
                });
            }
        }
        for (name, value) in non_negative {
            if value < 0.0 {
                return Err(CircuitError::Negative { name, value });
            }
        }
        if !(0.0..1.0).contains(&self.k) {
            return Err(CircuitError::CouplingOutOfRange(self.k));
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedParams, CircuitError> {
        self.validate()?;
        let omega_s = self.omega();
        Ok(DerivedParams {
            omega_s,
            f1: resonant_frequency(self.l1, self.c1)?,
            f2: resonant_frequency(self.l2, self.c2)?,
            m: mutual_inductance(self.k, self.l1, self.l2)?,
            x1: series_reactance(self.l1, self.c1, self.fs)?,
            x2: series_reactance(self.l2, self.c2, self.fs)?,
            v1_rms: fundamental_rms(self.vdc),
            v2_rms: fundamental_rms(self.vb + 2.0 * self.vd),
        })
    }
}

/// Quantities that follow from [`CircuitParams`] in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub omega_s: f64,
    /// Primary tank resonance.
    pub f1: f64,
    /// Secondary tank resonance.
    pub f2: f64,
    pub m: f64,
    /// Primary residual reactance at fs; positive means inductive (f1 < fs).
    pub x1: f64,
    pub x2: f64,
    /// Inverter output fundamental.
    pub v1_rms: f64,
    /// Rectifier input fundamental, including the two diode drops.
    pub v2_rms: f64,
}

impl DerivedParams {
    /// ωM, the transfer reactance.
    pub fn xm(&self) -> f64 {
        self.omega_s * self.m
    }
}

fn require_positive(name: &'static str, value: f64) -> Result<(), CircuitError> {
    if !value.is_finite() {
        Err(CircuitError::NotFinite { name })
    } else if value <= 0.0 {
        Err(CircuitError::NotPositive { name, value })
    } else {
        Ok(())
    }
}

/// Series LC resonance 1/(2π√(LC)).
pub fn resonant_frequency(l: f64, c: f64) -> Result<f64, CircuitError> {
    require_positive("inductance", l)?;
    require_positive("capacitance", c)?;
    Ok(1.0 / (2.0 * PI * (l * c).sqrt()))
}

/// M = k·√(L1·L2).
pub fn mutual_inductance(k: f64, l1: f64, l2: f64) -> Result<f64, CircuitError> {
    if !(0.0..1.0).contains(&k) {
        return Err(CircuitError::CouplingOutOfRange(k));
    }
    require_positive("l1", l1)?;
    require_positive("l2", l2)?;
    Ok(k * (l1 * l2).sqrt())
}

/// Signed reactance ωL − 1/(ωC) of a series tank at `f`.
pub fn series_reactance(l: f64, c: f64, f: f64) -> Result<f64, CircuitError> {
    require_positive("inductance", l)?;
    require_positive("capacitance", c)?;
    require_positive("frequency", f)?;
    let w = 2.0 * PI * f;
    Ok(w * l - 1.0 / (w * c))
}

/// Rms value of the fundamental of a ±`v_square` square wave.
pub fn fundamental_rms(v_square: f64) -> f64 {
    SQUARE_WAVE_FUNDAMENTAL * v_square
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_primary_resonance() {
        let f1 = resonant_frequency(19.5e-6, 26e-9).unwrap();
        assert_relative_eq!(f1, 223.5e3, max_relative = 1e-3);
    }

    #[test]
    fn reference_secondary_resonance_is_not_at_fs() {
        let f2 = resonant_frequency(5.5e-6, 80e-9).unwrap();
        assert_relative_eq!(f2, 239.9e3, max_relative = 2e-4);
    }

    #[test]
    fn quadrupled_inductance_halves_resonance() {
        let a = resonant_frequency(1e-6, 1e-9).unwrap();
        let b = resonant_frequency(4e-6, 1e-9).unwrap();
        assert_relative_eq!(b, a / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn resonance_rejects_non_positive() {
        assert!(resonant_frequency(0.0, 1e-9).is_err());
        assert!(resonant_frequency(1e-6, -1e-9).is_err());
    }

    #[test]
    fn mutual_examples() {
        let m = mutual_inductance(0.38, 19.5e-6, 5.5e-6).unwrap();
        assert_relative_eq!(m, 3.935e-6, max_relative = 1e-3);
        assert_eq!(mutual_inductance(0.0, 1e-6, 2e-6).unwrap(), 0.0);
        let eps = 1e-9;
        assert_relative_eq!(
            mutual_inductance(1.0 - eps, 3e-6, 3e-6).unwrap(),
            (1.0 - eps) * 3e-6,
            max_relative = 1e-14
        );
        assert!(mutual_inductance(1.0, 1e-6, 1e-6).is_err());
        assert!(mutual_inductance(-0.1, 1e-6, 1e-6).is_err());
    }

    #[test]
    fn reactance_examples() {
        let x1 = series_reactance(19.5e-6, 26e-9, 245e3).unwrap();
        assert_relative_eq!(x1, 5.03, max_relative = 2e-3);
        let f1 = resonant_frequency(19.5e-6, 26e-9).unwrap();
        let x_res = series_reactance(19.5e-6, 26e-9, f1).unwrap();
        assert!(x_res.abs() < 1e-9, "{x_res}");
        let x2 = series_reactance(5.5e-6, 80e-9, 245e3).unwrap();
        assert_relative_eq!(x2, 0.346, max_relative = 2e-3);
    }

    #[test]
    fn fundamental_examples() {
        assert_relative_eq!(fundamental_rms(29.0), 26.11, max_relative = 2e-4);
        assert_relative_eq!(fundamental_rms(11.1), 9.99, max_relative = 1e-3);
        assert_eq!(fundamental_rms(0.0), 0.0);
    }

    #[test]
    fn reference_detuning_is_inductive() {
        let d = CircuitParams::reference().derived().unwrap();
        assert!(d.f1 < 245e3);
        assert!(d.x1 > 0.0);
        assert!(d.x2 > 0.0, "secondary is left slightly inductive");
    }

    #[test]
    fn validation_rejects_bad_values() {
        let p = CircuitParams::reference();
        assert!(p.with_k(1.0).validate().is_err());
        assert!(CircuitParams { l1: 0.0, ..p }.validate().is_err());
        assert!(CircuitParams { r1: -0.1, ..p }.validate().is_err());
        assert!(p.with_vdc(0.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn mutual_monotone_and_symmetric(k in 0.0f64..0.99, l1 in 1e-7f64..1e-3, l2 in 1e-7f64..1e-3, dk in 1e-4f64..0.009) {
            let m = mutual_inductance(k, l1, l2).unwrap();
            prop_assert_eq!(m, mutual_inductance(k, l2, l1).unwrap());
            prop_assert!(mutual_inductance(k + dk, l1, l2).unwrap() >= m);
            prop_assert!(mutual_inductance(k, l1 * 1.1, l2).unwrap() >= m);
        }

        #[test]
        fn reactance_increasing_and_zero_at_resonance(l in 1e-7f64..1e-3, c in 1e-10f64..1e-6, f in 1e3f64..1e7, df in 1.0f64..1e4) {
            prop_assert!(series_reactance(l, c, f + df).unwrap() > series_reactance(l, c, f).unwrap());
            let f0 = resonant_frequency(l, c).unwrap();
            let x0 = series_reactance(l, c, f0).unwrap();
            let scale = 2.0 * PI * f0 * l;
            prop_assert!(x0.abs() < 1e-9 * scale);
        }
    }
}
