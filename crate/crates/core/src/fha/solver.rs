//! Interchangeable phasor solvers for the two-mesh network with a
//! unity-displacement rectifier load, selectable by name.

use num_complex::Complex64;

use super::FhaError;
use crate::circuit::DerivedParams;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Inputs shared by every solver: mesh impedances and source magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct MeshProblem {
    pub z1: Complex64,
    pub z2: Complex64,
    /// ωM
    pub xm: f64,
    /// Inverter fundamental, reference phase 0.
    pub v1: f64,
    /// Rectifier-input fundamental magnitude.
    pub v2: f64,
}

impl MeshProblem {
    pub fn new(d: &DerivedParams, r1: f64, r2: f64) -> Self {
        Self {
            z1: Complex64::new(r1, d.x1),
            z2: Complex64::new(r2, d.x2),
            xm: d.xm(),
            v1: d.v1_rms,
            v2: d.v2_rms,
        }
    }

    /// The rectifier turns on only if the open-circuit secondary voltage
    /// ωM·|I1,noload| exceeds the clamp fundamental.
    pub fn rectifier_conducts(&self) -> bool {
        self.xm * self.v1 > self.z1.norm() * self.v2
    }
}

/// Coil current phasors of a conducting solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshCurrents {
    pub i1: Complex64,
    pub i2: Complex64,
}

pub trait PhasorSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// Solve with the rectifier conducting. Callers guarantee
    /// `problem.rectifier_conducts()` and `xm > 0`.
    fn solve_conducting(&self, problem: &MeshProblem) -> Result<MeshCurrents, FhaError>;
}

/// Eliminates I1 and solves the resulting quadratic for |I2|, then recovers
/// the phase from the source equation. Exact for any R1, R2.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClosedForm;

impl PhasorSolver for ClosedForm {
    fn name(&self) -> &'static str {
        "closed-form"
    }

    fn solve_conducting(&self, p: &MeshProblem) -> Result<MeshCurrents, FhaError> {
        // With I2 = a·u, Vac2 = V2·u (|u| = 1):
        //   V1 = u · j[(Z1·Z2 + ωM²)·a + Z1·V2] / ωM
        let a_coef = p.z1 * p.z2 + p.xm * p.xm;
        let b_coef = p.z1 * p.v2;
        let c = p.v1 * p.xm;
        let qa = a_coef.norm_sqr();
        if qa == 0.0 {
            return Err(FhaError::Degenerate);
        }
        let qb = (a_coef * b_coef.conj()).re;
        let qc = b_coef.norm_sqr() - c * c;
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return Err(FhaError::Degenerate);
        }
        // qc < 0 when conducting, so exactly one root is positive.
        let a = (-qb + disc.sqrt()) / qa;
        if a < 0.0 {
            return Err(FhaError::Degenerate);
        }
        let w = J * (a_coef * a + b_coef) / p.xm;
        let u = w.conj() / w.norm();
        let i2 = u * a;
        let i1 = J * (p.z2 * a + p.v2) * u / p.xm;
        Ok(MeshCurrents { i1, i2 })
    }
}

/// Damped fixed-point iteration on the phase of I2: solve the linear mesh
/// equations for a trial rectifier phase, then move the phase halfway
/// toward the resulting current angle.
#[derive(Debug, Clone, Copy)]
pub struct PhaseIteration {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PhaseIteration {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl PhasorSolver for PhaseIteration {
    fn name(&self) -> &'static str {
        "fixed-point"
    }

    fn solve_conducting(&self, p: &MeshProblem) -> Result<MeshCurrents, FhaError> {
        let zm = J * p.xm;
        let det = p.z1 * p.z2 - zm * zm;
        if det.norm() == 0.0 {
            return Err(FhaError::Degenerate);
        }
        let solve = |theta: f64| {
            let vac2 = Complex64::from_polar(p.v2, theta);
            let rhs1 = Complex64::new(p.v1, 0.0);
            let rhs2 = -vac2;
            let i1 = (rhs1 * p.z2 - zm * rhs2) / det;
            let i2 = (p.z1 * rhs2 - zm * rhs1) / det;
            MeshCurrents { i1, i2 }
        };

        // Start from the short-circuited secondary.
        let i2_sc = (-zm * p.v1) / det;
        let mut theta = if i2_sc.norm() > 0.0 { i2_sc.arg() } else { 0.0 };
        for _ in 0..self.max_iterations {
            let currents = solve(theta);
            let step = wrap_angle(currents.i2.arg() - theta);
            if step.abs() < self.tolerance {
                let settled = solve(theta + step);
                return Ok(settled);
            }
            theta = wrap_angle(theta + self.damping * step);
        }
        Err(FhaError::NoConvergence {
            iterations: self.max_iterations,
        })
    }
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut x = (a + PI).rem_euclid(TAU) - PI;
    if x <= -PI {
        x += TAU;
    }
    x
}

/// Name → solver lookup.
pub struct SolverRegistry {
    entries: Vec<Box<dyn PhasorSolver>>,
}

impl SolverRegistry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ClosedForm));
        r.register(Box::new(PhaseIteration::default()));
        r
    }

    /// Later registrations shadow earlier ones with the same name.
    pub fn register(&mut self, solver: Box<dyn PhasorSolver>) {
        self.entries.retain(|s| s.name() != solver.name());
        self.entries.push(solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PhasorSolver, FhaError> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| FhaError::UnknownSolver(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

pub const DEFAULT_SOLVER: &str = "closed-form";
