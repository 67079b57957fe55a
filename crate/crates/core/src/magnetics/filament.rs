//! Circular current filaments: vector potential, loop-to-loop mutual
//! inductance and coil self-inductance.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};

use super::MagneticsError;
use crate::numeric::CompensatedSum;

pub const MU0: f64 = 4.0e-7 * PI;

/// Separations below this are treated as touching conductors.
pub const MIN_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// One circular turn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilamentLoop {
    pub center: Vec3,
    /// Unit normal; current circulates right-handed about it when `sense` is +1.
    pub axis: Vec3,
    pub radius: f64,
    pub sense: f64,
}

impl FilamentLoop {
    pub fn new(center: Vec3, axis: Vec3, radius: f64, sense: f64) -> Result<Self, MagneticsError> {
        let axis = axis
            .normalized()
            .ok_or_else(|| MagneticsError::Geometry("loop axis must be non-zero".into()))?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(MagneticsError::Geometry(format!(
                "loop radius must be positive (got {radius})"
            )));
        }
        if sense != 1.0 && sense != -1.0 {
            return Err(MagneticsError::Geometry(
                "loop sense must be +1 or -1".into(),
            ));
        }
        Ok(Self {
            center,
            axis,
            radius,
            sense,
        })
    }

    /// Orthonormal in-plane basis (u, v) with u × v = axis.
    fn basis(&self) -> (Vec3, Vec3) {
        let n = self.axis;
        let helper = if n.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = helper
            .sub(n * helper.dot(n))
            .normalized()
            .expect("helper is not parallel to axis");
        let v = n.cross(u);
        (u, v)
    }

    /// Distance from `p` to the loop's wire.
    pub fn distance_to_wire(&self, p: Vec3) -> f64 {
        let d = p - self.center;
        let z = d.dot(self.axis);
        let rho = (d - self.axis * z).norm();
        ((rho - self.radius).powi(2) + z * z).sqrt()
    }
}

/// Ordered set of series-connected turns.
#[derive(Debug, Clone, PartialEq)]
pub struct FilamentCoil {
    loops: Vec<FilamentLoop>,
}

impl FilamentCoil {
    pub fn new(loops: Vec<FilamentLoop>) -> Result<Self, MagneticsError> {
        if loops.is_empty() {
            return Err(MagneticsError::Geometry(
                "a coil needs at least one loop".into(),
            ));
        }
        Ok(Self { loops })
    }

    pub fn loops(&self) -> &[FilamentLoop] {
        &self.loops
    }

    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }
}

/// Complete elliptic integrals K(m) and E(m), parameter m = k², by the
/// arithmetic-geometric mean.
pub fn elliptic_ke(m: f64) -> (f64, f64) {
    debug_assert!((0.0..1.0).contains(&m));
    let mut a = 1.0;
    let mut b = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    let mut pow2 = 0.5;
    let mut sum = pow2 * c * c;
    for _ in 0..64 {
        if c.abs() <= f64::EPSILON * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow2 *= 2.0;
        sum += pow2 * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// (1 − m/2)·K(m) − E(m), with a series branch where the difference
/// cancels catastrophically.
fn loop_kernel(m: f64) -> f64 {
    if m < 1e-3 {
        0.5 * PI * m * m * (1.0 / 16.0 + m * (3.0 / 64.0 + m * 75.0 / 2048.0))
    } else {
        let (k, e) = elliptic_ke(m);
        (1.0 - 0.5 * m) * k - e
    }
}

/// Azimuthal vector potential per ampere of a loop of radius `a`, at
/// cylindrical coordinates (ρ, z) in the loop's own frame.
pub fn loop_vector_potential(a: f64, rho: f64, z: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let s2 = (a + rho).powi(2) + z * z;
    let m = 4.0 * a * rho / s2;
    // μ0/(π√m)·√(a/ρ) = μ0·√s2/(2πρ)
    MU0 * s2.sqrt() / (2.0 * PI * rho) * loop_kernel(m)
}

/// Closed-form mutual inductance of two coaxial loops (radii `a`, `b`,
/// axial distance `d`), both circulating in the same sense.
pub fn coaxial_mutual(a: f64, b: f64, d: f64) -> f64 {
    let s2 = (a + b).powi(2) + d * d;
    let m = 4.0 * a * b / s2;
    // μ0√(ab)·(2/k)·[(1 − m/2)K − E], √(ab)/k = √s2/2
    MU0 * s2.sqrt() * loop_kernel(m)
}

fn coaxial_pair(a: &FilamentLoop, b: &FilamentLoop) -> Option<f64> {
    let alignment = a.axis.dot(b.axis);
    if alignment.abs() < 1.0 - 1e-12 {
        return None;
    }
    let d = b.center - a.center;
    let axial = d.dot(a.axis);
    let lateral = (d - a.axis * axial).norm();
    (lateral <= 1e-12 * a.radius.max(b.radius)).then_some(axial)
}

/// Closest approach of two loops with parallel axes; `None` otherwise.
fn parallel_wire_gap(a: &FilamentLoop, b: &FilamentLoop) -> Option<f64> {
    if a.axis.dot(b.axis).abs() < 1.0 - 1e-12 {
        return None;
    }
    let d = b.center - a.center;
    let z = d.dot(a.axis);
    let rho = (d - a.axis * z).norm();
    let in_plane = (rho - (a.radius + b.radius))
        .max((a.radius - b.radius).abs() - rho)
        .max(0.0);
    Some(in_plane.hypot(z))
}

/// Neumann mutual inductance by integrating loop `a`'s vector potential
/// around loop `b` with `segments` midpoint samples.
pub fn mutual_contour(
    a: &FilamentLoop,
    b: &FilamentLoop,
    segments: usize,
) -> Result<f64, MagneticsError> {
    let (u, v) = b.basis();
    let dtheta = TAU / segments as f64;
    let mut acc = CompensatedSum::new();
    for i in 0..segments {
        let theta = (i as f64 + 0.5) * dtheta;
        let (s, c) = theta.sin_cos();
        let p = b.center + (u * c + v * s) * b.radius;
        if a.distance_to_wire(p) < MIN_SEPARATION {
            return Err(MagneticsError::Singular);
        }
        let tangent = v * c - u * s;
        let d = p - a.center;
        let z = d.dot(a.axis);
        let radial = d - a.axis * z;
        let rho = radial.norm();
        if rho == 0.0 {
            continue;
        }
        let phi_hat = a.axis.cross(radial) * (1.0 / rho);
        acc.add(loop_vector_potential(a.radius, rho, z) * phi_hat.dot(tangent));
    }
    Ok(acc.value() * b.radius * dtheta * a.sense * b.sense)
}

/// Contour-integration accuracy switch.
const SEGMENTS: [usize; 3] = [64, 128, 256];
const ADAPTIVE_TOLERANCE: f64 = 5e-3;

/// Mutual inductance of two loops: closed form when coaxial, otherwise
/// contour integration at 128 segments, refined to 256 when 64 and 128
/// disagree by more than 0.5 %.
pub fn mutual_loops(a: &FilamentLoop, b: &FilamentLoop) -> Result<f64, MagneticsError> {
    if parallel_wire_gap(a, b).is_some_and(|g| g < MIN_SEPARATION) {
        return Err(MagneticsError::Singular);
    }
    if let Some(axial) = coaxial_pair(a, b) {
        let orientation = a.axis.dot(b.axis).signum();
        return Ok(coaxial_mutual(a.radius, b.radius, axial) * orientation * a.sense * b.sense);
    }
    let coarse = mutual_contour(a, b, SEGMENTS[0])?;
    let fine = mutual_contour(a, b, SEGMENTS[1])?;
    let scale = fine.abs().max(coarse.abs());
    if scale > 0.0 && (fine - coarse).abs() > ADAPTIVE_TOLERANCE * scale {
        mutual_contour(a, b, SEGMENTS[2])
    } else {
        Ok(fine)
    }
}

/// Total air-core mutual inductance between two coils (sum over all loop pairs).
pub fn mutual_filament(a: &FilamentCoil, b: &FilamentCoil) -> Result<f64, MagneticsError> {
    let mut acc = CompensatedSum::new();
    for la in a.loops() {
        for lb in b.loops() {
            acc.add(mutual_loops(la, lb)?);
        }
    }
    Ok(acc.value())
}

/// Same as [`mutual_filament`] but forcing contour integration with a fixed
/// segment count for every pair.
pub fn mutual_filament_with_segments(
    a: &FilamentCoil,
    b: &FilamentCoil,
    segments: usize,
) -> Result<f64, MagneticsError> {
    let mut acc = CompensatedSum::new();
    for la in a.loops() {
        for lb in b.loops() {
            acc.add(mutual_contour(la, lb, segments)?);
        }
    }
    Ok(acc.value())
}

/// Low-frequency self-inductance of a single round-wire loop.
pub fn single_loop_inductance(radius: f64, wire_radius: f64) -> f64 {
    MU0 * radius * ((8.0 * radius / wire_radius).ln() - 1.75)
}

/// Air-core self-inductance of a coil scaled by `mu_eff`: per-turn self
/// terms plus every turn-to-turn mutual.
pub fn self_inductance(
    coil: &FilamentCoil,
    wire_radius: f64,
    mu_eff: f64,
) -> Result<f64, MagneticsError> {
    if !(wire_radius > 0.0) {
        return Err(MagneticsError::Domain(format!(
            "wire radius must be positive (got {wire_radius})"
        )));
    }
    if !(mu_eff >= 1.0) {
        return Err(MagneticsError::Domain(format!(
            "effective permeability must be >= 1 (got {mu_eff})"
        )));
    }
    let loops = coil.loops();
    let mut acc = CompensatedSum::new();
    for (i, li) in loops.iter().enumerate() {
        if wire_radius >= li.radius {
            return Err(MagneticsError::Domain(format!(
                "wire radius {wire_radius} m is not smaller than loop radius {} m",
                li.radius
            )));
        }
        acc.add(single_loop_inductance(li.radius, wire_radius));
        for lj in &loops[i + 1..] {
            acc.add(2.0 * mutual_loops(li, lj)?);
        }
    }
    Ok(mu_eff * acc.value())
}
