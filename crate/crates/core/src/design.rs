//! Primary detuning as a design search: cap the zero-coupling current,
//! check delivered power and ZVS over a coupling range, and map the
//! misalignment envelope.

use rayon::prelude::*;
use thiserror::Error;

use crate::circuit::{fundamental_rms, resonant_frequency, CircuitError, CircuitParams};
use crate::fha::{solve_operating_point, FhaError};
use crate::magnetics::{coupling_coefficient, CouplerGeometry, MagneticsError};
use crate::table::{Cell, SweepTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Fha(#[from] FhaError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error("invalid design spec: {0}")]
    InvalidSpec(String),
    #[error(
        "current cap {i1_max} A needs {x1_required:.4} ohm of detuning, \
         which is not below wL1 = {x_l1:.4} ohm"
    )]
    Infeasible {
        i1_max: f64,
        x1_required: f64,
        x_l1: f64,
    },
}

/// Relative slack on the zero-coupling current cap.
const CAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    /// Largest acceptable rms primary current with no receiver present.
    pub i1_max_zero_k: f64,
    pub target_pout: f64,
    pub k_nominal: f64,
    pub k_min: f64,
    pub k_max: f64,
    pub zvs_required: bool,
    /// Acceptable output as fractions of the target: nominal must reach the
    /// lower bound, no point of the range may exceed the upper one.
    pub power_band: (f64, f64),
    /// Number of evaluation points across [k_min, k_max].
    pub k_points: usize,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            i1_max_zero_k: 4.5,
            target_pout: 50.0,
            k_nominal: 0.38,
            k_min: 0.26,
            k_max: 0.38,
            zvs_required: true,
            power_band: (0.9, 1.5),
            k_points: 13,
        }
    }
}

impl DesignSpec {
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: String| Err(DesignError::InvalidSpec(m));
        if !(self.i1_max_zero_k > 0.0) {
            return bad(format!(
                "current cap must be positive (got {})",
                self.i1_max_zero_k
            ));
        }
        if !(self.target_pout > 0.0) {
            return bad(format!(
                "target power must be positive (got {})",
                self.target_pout
            ));
        }
        if !(0.0 <= self.k_min
            && self.k_min <= self.k_nominal
            && self.k_nominal <= self.k_max
            && self.k_max < 1.0)
        {
            return bad(format!(
                "need 0 <= k_min <= k_nominal <= k_max < 1 (got {}, {}, {})",
                self.k_min, self.k_nominal, self.k_max
            ));
        }
        let (lo, hi) = self.power_band;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("power band ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if self.k_points == 0 {
            return bad("k grid needs at least one point".into());
        }
        Ok(())
    }

    /// Evaluation grid over the coupling range; one point when collapsed.
    pub fn k_grid(&self) -> Vec<f64> {
        if self.k_max == self.k_min || self.k_points == 1 {
            return vec![self.k_min];
        }
        let n = self.k_points - 1;
        (0..=n)
            .map(|i| self.k_min + (self.k_max - self.k_min) * i as f64 / n as f64)
            .collect()
    }

    /// The same spec restricted to a single coupling value.
    pub fn at_point(&self, k: f64) -> Self {
        Self {
            k_nominal: k,
            k_min: k,
            k_max: k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detuning {
    pub c1: f64,
    pub f1: f64,
    /// Net primary reactance at the switching frequency.
    pub x1: f64,
}

/// Smallest inductive detuning that holds the zero-coupling primary current
/// at or below `i1_max`.
pub fn min_detuning_for_current_cap(
    params: &CircuitParams,
    i1_max: f64,
) -> Result<Detuning, DesignError> {
    params.validate()?;
    if !(i1_max > 0.0) {
        return Err(DesignError::InvalidSpec(format!(
            "current cap must be positive (got {i1_max})"
        )));
    }
    let w = params.omega();
    let v1 = fundamental_rms(params.vdc);
    let z_required = v1 / i1_max;
    let x1 = (z_required * z_required - params.r1 * params.r1)
        .max(0.0)
        .sqrt();
    let x_l1 = w * params.l1;
    if x1 >= x_l1 {
        return Err(DesignError::Infeasible {
            i1_max,
            x1_required: x1,
            x_l1,
        });
    }
    let c1 = 1.0 / (w * (x_l1 - x1));
    Ok(Detuning {
        c1,
        f1: resonant_frequency(params.l1, c1)?,
        x1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub k: f64,
    pub pout: f64,
    pub zvs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub c1: f64,
    pub f1: f64,
    pub i1_zero_k: f64,
    pub pout_nominal: f64,
    pub zvs_all: bool,
    pub feasible: bool,
    /// Violated constraints, empty when feasible.
    pub reasons: Vec<String>,
    pub grid: Vec<GridPoint>,
}

/// Evaluate a circuit against a spec with the first-harmonic model at
/// k = 0, the nominal coupling and across the coupling range.
pub fn evaluate_design(
    params: &CircuitParams,
    spec: &DesignSpec,
) -> Result<DesignResult, DesignError> {
    spec.validate()?;
    params.validate()?;
    let d = params.derived()?;
    let mut reasons = Vec::new();
    if d.x1 < 0.0 {
        reasons.push(format!(
            "capacitive primary detuning (X1 = {:.4} ohm); inductive detuning is required",
            d.x1
        ));
    }

    let nan = f64::NAN;
    let i1_zero_k = match solve_operating_point(&params.with_k(0.0)) {
        Ok(op) => op.i1.norm(),
        Err(e) => {
            reasons.push(format!("k = 0: {e}"));
            nan
        }
    };
    // A detuning computed for exactly the cap lands on it up to rounding.
    if i1_zero_k > spec.i1_max_zero_k * (1.0 + CAP_TOLERANCE) {
        reasons.push(format!(
            "zero-coupling current {i1_zero_k:.4} A exceeds cap {} A",
            spec.i1_max_zero_k
        ));
    }

    let (lo, hi) = spec.power_band;
    let pout_nominal = match solve_operating_point(&params.with_k(spec.k_nominal)) {
        Ok(op) => op.pout,
        Err(e) => {
            reasons.push(format!("k = {}: {e}", spec.k_nominal));
            nan
        }
    };
    if pout_nominal < lo * spec.target_pout {
        reasons.push(format!(
            "nominal output {pout_nominal:.3} W below {:.3} W",
            lo * spec.target_pout
        ));
    }

    let evaluated: Vec<Result<GridPoint, String>> = spec
        .k_grid()
        .par_iter()
        .map(|&k| {
            solve_operating_point(&params.with_k(k))
                .map(|op| GridPoint {
                    k,
                    pout: op.pout,
                    zvs: op.zvs,
                })
                .map_err(|e| format!("k = {k}: {e}"))
        })
        .collect();
    let mut grid = Vec::with_capacity(evaluated.len());
    for point in evaluated {
        match point {
            Ok(g) => grid.push(g),
            Err(reason) => reasons.push(reason),
        }
    }
    let zvs_all = grid.iter().all(|g| g.zvs);
    if spec.zvs_required && !zvs_all {
        let lost: Vec<String> = grid
            .iter()
            .filter(|g| !g.zvs)
            .map(|g| format!("{:.4}", g.k))
            .collect();
        reasons.push(format!("ZVS lost at k = {}", lost.join(", ")));
    }
    if let Some(g) = grid.iter().find(|g| g.pout > hi * spec.target_pout) {
        reasons.push(format!(
            "output {:.3} W at k = {:.4} exceeds {:.3} W",
            g.pout,
            g.k,
            hi * spec.target_pout
        ));
    }

    Ok(DesignResult {
        c1: params.c1,
        f1: d.f1,
        i1_zero_k,
        pout_nominal,
        zvs_all,
        feasible: reasons.is_empty(),
        reasons,
        grid,
    })
}

pub const ENVELOPE_COLUMNS: [&str; 8] = [
    "dx_m", "dy_m", "k", "pout_W", "i1_Arms", "zvs", "feasible", "status",
];

/// Coupling from the calibrated coupler and the operating point for every
/// (dx, dy) pair; dx varies slowest.
pub fn misalignment_envelope(
    params: &CircuitParams,
    geometry: &CouplerGeometry,
    dx_grid: &[f64],
    dy_grid: &[f64],
    spec: &DesignSpec,
) -> Result<SweepTable, DesignError> {
    spec.validate()?;
    let points: Vec<(f64, f64)> = dx_grid
        .iter()
        .flat_map(|&dx| dy_grid.iter().map(move |&dy| (dx, dy)))
        .collect();
    let rows: Vec<Vec<Cell>> = points
        .par_iter()
        .map(|&(dx, dy)| {
            let row = coupling_coefficient(&geometry.with_offset(dx, dy))
                .map_err(DesignError::from)
                .and_then(|k| {
                    let p = params.with_k(k);
                    let op = solve_operating_point(&p)?;
                    let eval = evaluate_design(&p, &spec.at_point(k))?;
                    Ok((k, op, eval.feasible))
                });
            match row {
                Ok((k, op, feasible)) => vec![
                    dx.into(),
                    dy.into(),
                    k.into(),
                    op.pout.into(),
                    op.i1.norm().into(),
                    op.zvs.into(),
                    feasible.into(),
                    "ok".into(),
                ],
                Err(e) => {
                    let nan = Cell::Num(f64::NAN);
                    vec![
                        dx.into(),
                        dy.into(),
                        nan.clone(),
                        nan.clone(),
                        nan.clone(),
                        nan.clone(),
                        false.into(),
                        e.to_string().into(),
                    ]
                }
            }
        })
        .collect();
    let mut table = SweepTable::new(ENVELOPE_COLUMNS);
    for row in rows {
        table.push(row).expect("row width matches header");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::{calibrate, Anchor};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_lossless() -> CircuitParams {
        CircuitParams::reference().lossless()
    }

    #[test]
    fn detuning_at_the_cap_passes_the_cap_check() {
        let p = CircuitParams::reference();
        for cap in [4.5, 5.0, 5.5] {
            let d = min_detuning_for_current_cap(&p, cap).unwrap();
            let spec = DesignSpec {
                i1_max_zero_k: cap,
                ..DesignSpec::default()
            };
            let res = evaluate_design(&p.with_c1(d.c1), &spec).unwrap();
            assert!(
                res.reasons.iter().all(|r| !r.contains("exceeds cap")),
                "{cap}: {:?}",
                res.reasons
            );
        }
    }

    #[test]
    fn cap_of_four_and_a_half_amps() {
        let d = min_detuning_for_current_cap(&reference_lossless(), 4.5).unwrap();
        assert_relative_eq!(d.x1, 5.80, max_relative = 1e-3);
        assert_relative_eq!(d.c1, 26.8e-9, max_relative = 2e-3);
        assert_relative_eq!(d.f1, 220.1e3, max_relative = 1e-3);
    }

    #[test]
    fn inverts_the_reference_detuning() {
        let d = min_detuning_for_current_cap(&reference_lossless(), 5.19).unwrap();
        assert_relative_eq!(d.c1, 26e-9, max_relative = 2e-3);
        assert_relative_eq!(d.f1, 223.5e3, max_relative = 1e-3);
    }

    #[test]
    fn unbounded_cap_recovers_resonance() {
        let p = reference_lossless();
        let d = min_detuning_for_current_cap(&p, 1e12).unwrap();
        assert!(d.x1 < 1e-9);
        assert_relative_eq!(d.f1, p.fs, max_relative = 1e-9);
        // a lossy primary already meets a loose cap at resonance
        let lossy = CircuitParams::reference();
        let d = min_detuning_for_current_cap(&lossy, 1e3).unwrap();
        assert_eq!(d.x1, 0.0);
    }

    #[test]
    fn tiny_cap_is_infeasible() {
        let err = min_detuning_for_current_cap(&reference_lossless(), 0.5).unwrap_err();
        assert!(matches!(err, DesignError::Infeasible { .. }));
        assert!(min_detuning_for_current_cap(&reference_lossless(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_through_fha(cap in 1.5f64..50.0) {
            let p = reference_lossless();
            let d = min_detuning_for_current_cap(&p, cap).unwrap();
            let op = solve_operating_point(&p.with_c1(d.c1).with_k(0.0)).unwrap();
            prop_assert!((op.i1.norm() / cap - 1.0).abs() < 1e-3);
        }

        #[test]
        fn tighter_cap_detunes_further(a in 1.5f64..50.0, b in 1.5f64..50.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let p = reference_lossless();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let f_lo = min_detuning_for_current_cap(&p, lo).unwrap().f1;
            let f_hi = min_detuning_for_current_cap(&p, hi).unwrap().f1;
            prop_assert!(f_lo < f_hi);
        }
    }

    #[test]
    fn reference_circuit_against_the_reference_spec() {
        // The first-harmonic model puts the zero-coupling current at 5.19 A
        // (cap 4.5 A) and the nominal output at 41.8 W (floor 45 W).
        let r = evaluate_design(&CircuitParams::reference(), &DesignSpec::default()).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.reasons.len(), 2, "{:?}", r.reasons);
        assert!(r.reasons[0].contains("zero-coupling current"));
        assert!(r.reasons[1].contains("nominal output"));
        assert!(r.zvs_all);
        assert_relative_eq!(r.pout_nominal, 41.75, max_relative = 1e-3);
        assert_relative_eq!(r.c1, 26e-9);

        let relaxed = DesignSpec {
            i1_max_zero_k: 5.5,
            power_band: (0.8, 1.5),
            ..DesignSpec::default()
        };
        let r = evaluate_design(&CircuitParams::reference(), &relaxed).unwrap();
        assert!(r.feasible, "{:?}", r.reasons);
    }

    #[test]
    fn one_amp_cap_is_infeasible() {
        let spec = DesignSpec {
            i1_max_zero_k: 1.0,
            ..DesignSpec::default()
        };
        let r = evaluate_design(&reference_lossless(), &spec).unwrap();
        assert!(!r.feasible);
        assert_relative_eq!(r.i1_zero_k, 5.19, max_relative = 1e-3);
    }

    #[test]
    fn collapsed_range_is_the_nominal_point() {
        let spec = DesignSpec::default().at_point(0.38);
        assert_eq!(spec.k_grid(), vec![0.38]);
        let r = evaluate_design(&reference_lossless(), &spec).unwrap();
        assert_eq!(r.grid.len(), 1);
        assert_eq!(r.grid[0].pout, r.pout_nominal);
    }

    #[test]
    fn retuned_primary_is_rejected() {
        let p = CircuitParams::reference().with_resonant_primary();
        let spec = DesignSpec {
            i1_max_zero_k: 1e3,
            ..DesignSpec::default()
        };
        let r = evaluate_design(&p, &spec).unwrap();
        assert!(!r.feasible);
        assert!(
            r.reasons.iter().any(|s| s.contains("ZVS")),
            "{:?}",
            r.reasons
        );

        let capacitive = CircuitParams::reference().with_c1(20e-9);
        let r = evaluate_design(&capacitive, &spec).unwrap();
        assert!(r.reasons.iter().any(|s| s.contains("capacitive")));
    }

    #[test]
    fn invalid_specs_rejected() {
        let p = CircuitParams::reference();
        for spec in [
            DesignSpec {
                k_min: 0.5,
                ..DesignSpec::default()
            },
            DesignSpec {
                target_pout: 0.0,
                ..DesignSpec::default()
            },
            DesignSpec {
                power_band: (1.2, 1.1),
                ..DesignSpec::default()
            },
        ] {
            assert!(matches!(
                evaluate_design(&p, &spec),
                Err(DesignError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn envelope_rows_and_consistency() {
        let g = CouplerGeometry::default();
        let fit = calibrate(&[Anchor::new(g.clone(), 0.38)]).unwrap();
        let g = g.with_permeability(fit.mu_eff_tx, fit.mu_eff_rx);
        let p = CircuitParams::reference().lossless();
        let spec = DesignSpec {
            i1_max_zero_k: 5.5,
            power_band: (0.8, 1.5),
            ..DesignSpec::default()
        };
        let t =
            misalignment_envelope(&p, &g, &[0.0, 0.010, 1.0], &[0.0, 0.050, 1.0], &spec).unwrap();
        assert_eq!(t.len(), 9);
        let k = t.column("k").unwrap();
        let pout = t.column("pout_W").unwrap();
        let i1 = t.column("i1_Arms").unwrap();
        let feasible = t.column("feasible").unwrap();
        assert_relative_eq!(k[0], 0.38, epsilon = 1e-6);
        assert_eq!(feasible[0], 1.0);
        // (10 mm, 50 mm)
        assert!((k[4] - 0.26).abs() < 0.05);
        assert!(pout[4] > 55.0 && pout[4] < 75.0, "{}", pout[4]);
        // (1 m, 1 m)
        assert_eq!(k[8], 0.0);
        assert_eq!(pout[8], 0.0);
        assert!(i1[8] <= spec.i1_max_zero_k);

        for (row, &f) in t.rows().iter().zip(&feasible) {
            if f == 1.0 {
                let kk = row[2].as_f64().unwrap();
                let r = evaluate_design(&p.with_k(kk), &spec.at_point(kk)).unwrap();
                assert!(r.feasible);
            }
        }
    }
}
