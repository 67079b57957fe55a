//! Least-squares fit of the two permeability factors to target couplings.

use rayon::prelude::*;

use super::{apparent_permeability, AirCore, CouplerGeometry, MagneticsError};
use crate::numeric::golden_section_min;

pub const MAX_OUTER_ITERATIONS: usize = 500;
const OBJECTIVE_TOLERANCE: f64 = 1e-20;
const STEP_TOLERANCE: f64 = 1e-12;
const STALL_TOLERANCE: f64 = 1e-12;
/// Upper bound on ln μ.
const LN_MU_MAX: f64 = 13.815_510_557_964_274; // ln 1e6

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub geometry: CouplerGeometry,
    pub k_target: f64,
}

impl Anchor {
    pub fn new(geometry: CouplerGeometry, k_target: f64) -> Self {
        Self { geometry, k_target }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub mu_eff_tx: f64,
    pub mu_eff_rx: f64,
    /// Sum of squared coupling errors.
    pub residual: f64,
    pub iterations: usize,
    /// Model coupling at each anchor with the fitted factors.
    pub k_model: Vec<f64>,
}

struct Prepared {
    air: AirCore,
    aspect: f64,
    k_target: f64,
}

impl Prepared {
    fn k(&self, ln_tx: f64, ln_rx: f64) -> f64 {
        let mu_rx = apparent_permeability(ln_rx.exp(), self.aspect);
        self.air.k_with(ln_tx.exp(), mu_rx)
    }
}

fn objective(anchors: &[Prepared], u: f64, v: f64) -> f64 {
    anchors
        .iter()
        .map(|a| (a.k(u, v) - a.k_target).powi(2))
        .sum()
}

/// Coordinate descent in (ln μtx, ln μrx) from (1, 1): each sweep runs a
/// golden-section search on one factor within a factor-of-two window,
/// transmitter first.
pub fn calibrate(anchors: &[Anchor]) -> Result<CalibrationReport, MagneticsError> {
    if anchors.is_empty() {
        return Err(MagneticsError::Geometry(
            "calibration needs at least one anchor".into(),
        ));
    }
    for a in anchors {
        if !(0.0..1.0).contains(&a.k_target) {
            return Err(MagneticsError::Geometry(format!(
                "anchor target k = {} outside [0, 1)",
                a.k_target
            )));
        }
    }
    let prepared = anchors
        .par_iter()
        .map(|a| {
            Ok(Prepared {
                air: AirCore::compute(&a.geometry)?,
                aspect: a.geometry.rx_ferrite_length / a.geometry.rx_ferrite_diameter,
                k_target: a.k_target,
            })
        })
        .collect::<Result<Vec<_>, MagneticsError>>()?;

    let window = std::f64::consts::LN_2;
    let (mut u, mut v) = (0.0_f64, 0.0_f64);
    let mut obj = objective(&prepared, u, v);
    let mut iterations = 0;
    while obj >= OBJECTIVE_TOLERANCE {
        if iterations == MAX_OUTER_ITERATIONS {
            return Err(MagneticsError::Calibration {
                iterations,
                residual: obj,
            });
        }
        iterations += 1;
        let u_new = golden_section_min(
            |x| objective(&prepared, x, v),
            (u - window).max(0.0),
            (u + window).min(LN_MU_MAX),
            STEP_TOLERANCE,
        );
        let v_new = golden_section_min(
            |y| objective(&prepared, u_new, y),
            (v - window).max(0.0),
            (v + window).min(LN_MU_MAX),
            STEP_TOLERANCE,
        );
        let step = (u_new - u).abs().max((v_new - v).abs());
        u = u_new;
        v = v_new;
        let previous = obj;
        obj = objective(&prepared, u, v);
        // Anchors that only constrain the product of the factors leave a flat
        // valley; stop once the objective no longer improves.
        if step < STEP_TOLERANCE || previous - obj <= STALL_TOLERANCE * previous {
            break;
        }
    }
    Ok(CalibrationReport {
        mu_eff_tx: u.exp(),
        mu_eff_rx: v.exp(),
        residual: obj,
        iterations,
        k_model: prepared.iter().map(|a| a.k(u, v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::coupling_coefficient;

    #[test]
    fn single_anchor_hits_target() {
        let g = CouplerGeometry::default();
        let fit = calibrate(&[Anchor::new(g.clone(), 0.38)]).unwrap();
        assert!(fit.residual < 1e-6);
        assert!(fit.mu_eff_tx >= 1.0 && fit.mu_eff_rx >= 1.0);
        let k = coupling_coefficient(&g.with_permeability(fit.mu_eff_tx, fit.mu_eff_rx)).unwrap();
        assert!((k - 0.38).abs() < 1e-6);
    }

    #[test]
    fn already_satisfied_anchor_is_a_fixed_point() {
        let g = CouplerGeometry::default();
        let k_air = coupling_coefficient(&g).unwrap();
        let fit = calibrate(&[Anchor::new(g, k_air)]).unwrap();
        assert_eq!((fit.mu_eff_tx, fit.mu_eff_rx), (1.0, 1.0));
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn two_anchor_fit_reports_residual() {
        let g = CouplerGeometry::default();
        let fit = calibrate(&[
            Anchor::new(g.clone(), 0.38),
            Anchor::new(g.with_offset(0.010, 0.050), 0.26),
        ])
        .unwrap();
        assert!(fit.residual.is_finite());
        assert!((fit.k_model[0] - 0.38).abs() < 0.05);
        assert!((fit.k_model[1] - 0.26).abs() < 0.05);
    }

    #[test]
    fn unreachable_target_stalls_at_the_bound() {
        // Target below the air-core value would need mu < 1.
        let g = CouplerGeometry::default();
        let fit = calibrate(&[Anchor::new(g, 0.01)]).unwrap();
        assert!(fit.residual > 1e-5);
        assert!((fit.mu_eff_tx - 1.0).abs() < 1e-9 && (fit.mu_eff_rx - 1.0).abs() < 1e-9);
        assert!(calibrate(&[]).is_err());
    }
}
