//! Coupler geometry to inductances and coupling coefficient.
//!
//! Windings are replaced by circular filaments, air-core inductances come
//! from Neumann integration, and ferrite is folded in as scalar
//! effective-permeability factors.

mod calibrate;
pub mod filament;

use rayon::prelude::*;
use thiserror::Error;

use crate::table::{Cell, SweepTable};

pub use calibrate::{calibrate, Anchor, CalibrationReport, MAX_OUTER_ITERATIONS};
pub use filament::{
    mutual_filament, mutual_filament_with_segments, self_inductance, FilamentCoil, FilamentLoop,
    Vec3,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagneticsError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("filaments closer than 1e-6 m")]
    Singular,
    #[error("{0}")]
    Domain(String),
    #[error(
        "calibration did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    Calibration { iterations: usize, residual: f64 },
    #[error("sweep grid: {0}")]
    InvalidGrid(String),
}

/// Physical description of the two-piece transmitter and two-leg receiver.
///
/// All lengths in meters. Every winding axis is vertical: the transmitter
/// pieces sit on the ground with their top face at z = 0, the receiver legs
/// stand above them starting at `air_gap`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplerGeometry {
    pub tx_rod_diameter: f64,
    pub tx_rod_length: f64,
    pub tx_turns_per_rod: u32,
    /// Center-to-center distance of the two transmitter pieces (along x).
    pub tx_rod_spacing: f64,
    pub rx_ferrite_diameter: f64,
    pub rx_ferrite_length: f64,
    pub rx_turns_per_leg: u32,
    /// Height of the receiver winding, measured from the bottom of each leg.
    pub rx_winding_length: f64,
    pub rx_leg_spacing: f64,
    pub air_gap: f64,
    /// Horizontal receiver offset along the rod-spacing axis.
    pub dx: f64,
    /// Horizontal receiver offset across the rod-spacing axis.
    pub dy: f64,
    pub wire_radius: f64,
    pub mu_eff_tx: f64,
    /// Material permeability of the receiver rods; the shape-dependent
    /// apparent value is derived from it.
    pub mu_eff_rx: f64,
}

impl Default for CouplerGeometry {
    fn default() -> Self {
        Self {
            tx_rod_diameter: 0.120,
            tx_rod_length: 0.030,
            tx_turns_per_rod: 1,
            tx_rod_spacing: 0.300,
            rx_ferrite_diameter: 8.5e-3,
            rx_ferrite_length: 0.328,
            rx_turns_per_leg: 7,
            rx_winding_length: 0.025,
            rx_leg_spacing: 0.300,
            air_gap: 0.010,
            dx: 0.0,
            dy: 0.0,
            wire_radius: 1.25e-3,
            mu_eff_tx: 1.0,
            mu_eff_rx: 1.0,
        }
    }
}

impl CouplerGeometry {
    pub fn with_offset(&self, dx: f64, dy: f64) -> Self {
        Self {
            dx,
            dy,
            ..self.clone()
        }
    }

    pub fn with_permeability(&self, mu_tx: f64, mu_rx: f64) -> Self {
        Self {
            mu_eff_tx: mu_tx,
            mu_eff_rx: mu_rx,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), MagneticsError> {
        let positive = [
            ("tx rod diameter", self.tx_rod_diameter),
            ("tx rod length", self.tx_rod_length),
            ("tx rod spacing", self.tx_rod_spacing),
            ("rx ferrite diameter", self.rx_ferrite_diameter),
            ("rx ferrite length", self.rx_ferrite_length),
            ("rx winding length", self.rx_winding_length),
            ("rx leg spacing", self.rx_leg_spacing),
            ("air gap", self.air_gap),
            ("wire radius", self.wire_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MagneticsError::Geometry(format!(
                    "{name} must be positive (got {v})"
                )));
            }
        }
        if !(self.dx.is_finite() && self.dy.is_finite()) {
            return Err(MagneticsError::Geometry("offsets must be finite".into()));
        }
        if self.tx_turns_per_rod == 0 || self.rx_turns_per_leg == 0 {
            return Err(MagneticsError::Geometry(
                "turn counts must be at least 1".into(),
            ));
        }
        for (name, mu) in [("tx", self.mu_eff_tx), ("rx", self.mu_eff_rx)] {
            if !(mu >= 1.0 && mu.is_finite()) {
                return Err(MagneticsError::Geometry(format!(
                    "{name} effective permeability must be >= 1 (got {mu})"
                )));
            }
        }
        if self.rx_winding_length > self.rx_ferrite_length {
            return Err(MagneticsError::Geometry(
                "rx winding is longer than its ferrite leg".into(),
            ));
        }
        if self.tx_rod_spacing <= self.tx_rod_diameter + 4.0 * self.wire_radius {
            return Err(MagneticsError::Geometry("tx pieces overlap".into()));
        }
        if self.rx_leg_spacing <= self.rx_ferrite_diameter + 4.0 * self.wire_radius {
            return Err(MagneticsError::Geometry("rx legs overlap".into()));
        }
        Ok(())
    }

    /// Shape-corrected permeability of the receiver rods.
    pub fn rx_apparent_permeability(&self) -> f64 {
        apparent_permeability(
            self.mu_eff_rx,
            self.rx_ferrite_length / self.rx_ferrite_diameter,
        )
    }
}

/// Axial demagnetizing factor of a spheroid with length/diameter ratio `m`.
pub fn demagnetizing_factor(m: f64) -> f64 {
    if (m - 1.0).abs() < 1e-9 {
        1.0 / 3.0
    } else if m > 1.0 {
        let e = (m * m - 1.0).sqrt();
        (m / e * (m + e).ln() - 1.0) / (m * m - 1.0)
    } else {
        let e = (1.0 - m * m).sqrt();
        (1.0 - m / e * m.acos()) / (1.0 - m * m)
    }
}

/// Rod permeability seen by a winding, for material permeability `mu` and
/// aspect ratio `m`.
pub fn apparent_permeability(mu: f64, m: f64) -> f64 {
    mu / (1.0 + demagnetizing_factor(m) * (mu - 1.0))
}

fn stacked_turns(
    cx: f64,
    cy: f64,
    z0: f64,
    height: f64,
    turns: u32,
    radius: f64,
) -> Vec<FilamentLoop> {
    let pitch = height / turns as f64;
    (0..turns)
        .map(|j| FilamentLoop {
            center: Vec3::new(cx, cy, z0 + (j as f64 + 0.5) * pitch),
            axis: Vec3::Z,
            radius,
            sense: 1.0,
        })
        .collect()
}

/// One filament loop per physical turn, both pieces of each side in series
/// aiding.
pub fn discretize(g: &CouplerGeometry) -> Result<(FilamentCoil, FilamentCoil), MagneticsError> {
    g.validate()?;
    let tx_radius = 0.5 * g.tx_rod_diameter + g.wire_radius;
    let rx_radius = 0.5 * g.rx_ferrite_diameter + g.wire_radius;
    let half_t = 0.5 * g.tx_rod_spacing;
    let half_r = 0.5 * g.rx_leg_spacing;

    let mut tx = Vec::with_capacity(2 * g.tx_turns_per_rod as usize);
    for cx in [-half_t, half_t] {
        tx.extend(stacked_turns(
            cx,
            0.0,
            -g.tx_rod_length,
            g.tx_rod_length,
            g.tx_turns_per_rod,
            tx_radius,
        ));
    }
    let mut rx = Vec::with_capacity(2 * g.rx_turns_per_leg as usize);
    for cx in [-half_r, half_r] {
        rx.extend(stacked_turns(
            cx + g.dx,
            g.dy,
            g.air_gap,
            g.rx_winding_length,
            g.rx_turns_per_leg,
            rx_radius,
        ));
    }
    Ok((FilamentCoil::new(tx)?, FilamentCoil::new(rx)?))
}

/// Air-core quantities, independent of the permeability factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirCore {
    pub m: f64,
    pub l1: f64,
    pub l2: f64,
}

impl AirCore {
    pub fn compute(g: &CouplerGeometry) -> Result<Self, MagneticsError> {
        let (tx, rx) = discretize(g)?;
        Ok(Self {
            m: mutual_filament(&tx, &rx)?,
            l1: self_inductance(&tx, g.wire_radius, 1.0)?,
            l2: self_inductance(&rx, g.wire_radius, 1.0)?,
        })
    }

    pub fn k(&self) -> f64 {
        self.m / (self.l1 * self.l2).sqrt()
    }

    /// Coupling with permeability factors: mutual flux passes through both
    /// cores, each self flux through one.
    pub fn k_with(&self, mu_tx: f64, mu_rx_apparent: f64) -> f64 {
        (mu_tx * mu_rx_apparent).sqrt() * self.k()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerReport {
    pub air: AirCore,
    pub l1: f64,
    pub l2: f64,
    pub m: f64,
    /// Coupling before clamping to [0, 1).
    pub k_raw: f64,
    pub k: f64,
}

pub fn analyze_coupler(g: &CouplerGeometry) -> Result<CouplerReport, MagneticsError> {
    let air = AirCore::compute(g)?;
    let mu_rx = g.rx_apparent_permeability();
    let l1 = g.mu_eff_tx * air.l1;
    let l2 = mu_rx * air.l2;
    // Flux linking both sides passes through both cores.
    let m = g.mu_eff_tx * mu_rx * air.m;
    let k_raw = m / (l1 * l2).sqrt();
    Ok(CouplerReport {
        air,
        l1,
        l2,
        m,
        k_raw,
        k: k_raw.clamp(0.0, 1.0 - f64::EPSILON),
    })
}

pub fn coupling_coefficient(g: &CouplerGeometry) -> Result<f64, MagneticsError> {
    analyze_coupler(g).map(|r| r.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Dx,
    Dy,
    RxFerriteDiameter,
    RxFerriteLength,
}

impl SweepVariable {
    pub fn column(self) -> &'static str {
        match self {
            Self::Dx => "dx_m",
            Self::Dy => "dy_m",
            Self::RxFerriteDiameter => "rx_ferrite_diameter_m",
            Self::RxFerriteLength => "rx_ferrite_length_m",
        }
    }

    pub fn apply(self, g: &CouplerGeometry, v: f64) -> CouplerGeometry {
        let mut g = g.clone();
        match self {
            Self::Dx => g.dx = v,
            Self::Dy => g.dy = v,
            Self::RxFerriteDiameter => g.rx_ferrite_diameter = v,
            Self::RxFerriteLength => g.rx_ferrite_length = v,
        }
        g
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = MagneticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dx" => Ok(Self::Dx),
            "dy" => Ok(Self::Dy),
            "rx_ferrite_diameter" | "diameter" => Ok(Self::RxFerriteDiameter),
            "rx_ferrite_length" | "length" => Ok(Self::RxFerriteLength),
            other => Err(MagneticsError::InvalidGrid(format!(
                "unknown sweep variable '{other}'"
            ))),
        }
    }
}

/// k over a grid of one geometric variable. Rows that fail carry the error
/// text in `status`.
pub fn geometry_sweep(
    g: &CouplerGeometry,
    variable: SweepVariable,
    grid: &[f64],
) -> Result<SweepTable, MagneticsError> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MagneticsError::InvalidGrid("grid is not ascending".into()));
    }
    let rows: Vec<Vec<Cell>> = grid
        .par_iter()
        .map(|&v| match analyze_coupler(&variable.apply(g, v)) {
            Ok(r) => vec![
                v.into(),
                r.k.into(),
                (r.l1 * 1e6).into(),
                (r.l2 * 1e6).into(),
                "ok".into(),
            ],
            Err(e) => {
                let nan = Cell::Num(f64::NAN);
                vec![
                    v.into(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    e.to_string().into(),
                ]
            }
        })
        .collect();
    let mut table = SweepTable::new([variable.column(), "k", "l1_uH", "l2_uH", "status"]);
    for row in rows {
        table.push(row).expect("row width matches header");
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn calibrated() -> CouplerGeometry {
        let g = CouplerGeometry::default();
        let fit = calibrate(&[Anchor::new(g.clone(), 0.38)]).unwrap();
        g.with_permeability(fit.mu_eff_tx, fit.mu_eff_rx)
    }

    #[test]
    fn discretize_counts_and_symmetry() {
        let g = CouplerGeometry {
            rx_turns_per_leg: 10,
            ..CouplerGeometry::default()
        };
        let (tx, rx) = discretize(&g).unwrap();
        assert_eq!(rx.len(), 20);
        assert_eq!(tx.len(), 2);
        for coil in [&tx, &rx] {
            let loops = coil.loops();
            let half = loops.len() / 2;
            for (a, b) in loops[..half].iter().zip(&loops[half..]) {
                assert_relative_eq!(a.center.x, -b.center.x, epsilon = 1e-15);
                assert_eq!(a.center.z, b.center.z);
            }
        }
    }

    #[test]
    fn receiver_sits_on_top_of_the_gap() {
        let g = CouplerGeometry::default();
        let (tx, rx) = discretize(&g).unwrap();
        let lowest_rx = rx
            .loops()
            .iter()
            .map(|l| l.center.z)
            .fold(f64::INFINITY, f64::min);
        let highest_tx = tx
            .loops()
            .iter()
            .map(|l| l.center.z)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(lowest_rx > g.air_gap && lowest_rx < g.air_gap + g.rx_winding_length);
        assert!(highest_tx < 0.0);
        // the ferrite leg spans its full length above the gap
        let top = g.air_gap + g.rx_ferrite_length;
        assert_relative_eq!(top, 0.338, epsilon = 1e-12);
        assert!(rx.loops().iter().all(|l| l.center.z < top));
    }

    #[test]
    fn invalid_geometry_rejected() {
        let base = CouplerGeometry::default();
        for g in [
            CouplerGeometry {
                air_gap: 0.0,
                ..base.clone()
            },
            CouplerGeometry {
                rx_turns_per_leg: 0,
                ..base.clone()
            },
            CouplerGeometry {
                mu_eff_tx: 0.5,
                ..base.clone()
            },
            CouplerGeometry {
                tx_rod_spacing: 0.1,
                ..base.clone()
            },
            CouplerGeometry {
                rx_winding_length: 0.5,
                ..base.clone()
            },
        ] {
            assert!(matches!(discretize(&g), Err(MagneticsError::Geometry(_))));
        }
    }

    #[test]
    fn demagnetizing_factor_limits() {
        assert_relative_eq!(demagnetizing_factor(1.0), 1.0 / 3.0);
        assert_relative_eq!(demagnetizing_factor(1.0 + 1e-6), 1.0 / 3.0, epsilon = 1e-5);
        assert_relative_eq!(demagnetizing_factor(1.0 - 1e-6), 1.0 / 3.0, epsilon = 1e-5);
        assert!(demagnetizing_factor(100.0) < 1e-3);
        assert!(demagnetizing_factor(0.01) > 0.95);
        assert_relative_eq!(apparent_permeability(1.0, 38.6), 1.0);
    }

    #[test]
    fn mutual_scales_with_turns() {
        let base = CouplerGeometry::default();
        let m = |g: &CouplerGeometry| {
            let (tx, rx) = discretize(g).unwrap();
            mutual_filament(&tx, &rx).unwrap()
        };
        let m1 = m(&base);
        let m2 = m(&CouplerGeometry {
            tx_turns_per_rod: 2,
            ..base.clone()
        });
        assert_relative_eq!(m2 / m1, 2.0, max_relative = 0.05);
        let m14 = m(&CouplerGeometry {
            rx_turns_per_leg: 14,
            ..base.clone()
        });
        assert_relative_eq!(m14 / m1, 2.0, max_relative = 0.02);
    }

    #[test]
    fn segment_doubling_converges() {
        let (tx, rx) = discretize(&CouplerGeometry::default().with_offset(0.01, 0.05)).unwrap();
        let a = mutual_filament_with_segments(&tx, &rx, 128).unwrap();
        let b = mutual_filament_with_segments(&tx, &rx, 256).unwrap();
        assert!(((a - b) / b).abs() < 2e-3);
    }

    #[test]
    fn calibrated_anchors_and_inductances() {
        let g = calibrated();
        let r = analyze_coupler(&g).unwrap();
        assert_relative_eq!(r.k, 0.38, epsilon = 1e-6);
        assert!(r.k_raw < 1.0);
        assert_relative_eq!(r.l1, 19.5e-6, max_relative = 0.15);
        assert_relative_eq!(r.l2, 5.5e-6, max_relative = 0.15);
        let k_mis = coupling_coefficient(&g.with_offset(0.010, 0.050)).unwrap();
        assert!((k_mis - 0.26).abs() < 0.05, "k = {k_mis}");
    }

    #[test]
    fn far_receiver_decouples() {
        let g = calibrated();
        assert!(coupling_coefficient(&g.with_offset(1.0, 0.0)).unwrap() < 0.01);
        assert!(coupling_coefficient(&g.with_offset(1.0, 1.0)).unwrap() < 0.01);
    }

    #[test]
    fn sweeps_follow_expected_trends() {
        let g = calibrated();
        let mm: Vec<f64> = (0..=10).map(|i| i as f64 * 5e-3).collect();
        let checks = [
            (SweepVariable::Dx, mm.clone(), -1.0),
            (SweepVariable::Dy, mm, -1.0),
            (
                SweepVariable::RxFerriteDiameter,
                vec![6e-3, 7e-3, 8.5e-3, 10e-3, 12e-3],
                1.0,
            ),
            (
                SweepVariable::RxFerriteLength,
                vec![0.2, 0.25, 0.3, 0.328, 0.4],
                1.0,
            ),
        ];
        for (var, grid, sign) in checks {
            let t = geometry_sweep(&g, var, &grid).unwrap();
            let k = t.column("k").unwrap();
            for w in k.windows(2) {
                assert!(sign * (w[1] - w[0]) >= -1e-12, "{var:?}: {k:?}");
            }
        }
    }

    #[test]
    fn single_point_sweep_matches_direct_call() {
        let g = calibrated();
        let t = geometry_sweep(&g, SweepVariable::Dx, &[0.02]).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(
            t.column("k").unwrap()[0],
            coupling_coefficient(&g.with_offset(0.02, 0.0)).unwrap()
        );
    }

    #[test]
    fn sweep_records_row_errors() {
        let g = CouplerGeometry::default();
        let t = geometry_sweep(&g, SweepVariable::RxFerriteDiameter, &[-1e-3, 8.5e-3]).unwrap();
        let status = &t.rows()[0][4];
        assert!(matches!(status, Cell::Text(s) if s != "ok"));
        assert!(geometry_sweep(&g, SweepVariable::Dx, &[0.02, 0.01]).is_err());
    }
}
