//! Atom positions and detector directions.

use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    /// Positions in nm.
    pub positions: Vec<Vec3>,
    /// Lattice constant in nm (0 for arbitrary point sets).
    pub lattice_constant: f64,
    pub shape: (usize, usize),
}

impl ArrayGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest pairwise distance in nm.
    pub fn max_distance(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.max(norm(sub(*b, *a)));
            }
        }
        best
    }

    /// Smallest pairwise distance in nm (infinite for a single atom).
    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(norm(sub(*b, *a)));
            }
        }
        best
    }
}

/// `n_x × n_y` square grid in the z = 0 plane, centered at the origin,
/// row-major with x running fastest.
pub fn square_lattice(n_x: usize, n_y: usize, d_nm: f64) -> Result<ArrayGeometry> {
    if n_x == 0 || n_y == 0 {
        return invalid(format!("lattice dimensions must be positive, got {n_x}x{n_y}"));
    }
    if !(d_nm > 0.0) || !d_nm.is_finite() {
        return invalid(format!("lattice constant must be positive, got {d_nm}"));
    }
    let cx = (n_x as f64 - 1.0) / 2.0;
    let cy = (n_y as f64 - 1.0) / 2.0;
    let mut positions = Vec::with_capacity(n_x * n_y);
    for iy in 0..n_y {
        for ix in 0..n_x {
            positions.push([(ix as f64 - cx) * d_nm, (iy as f64 - cy) * d_nm, 0.0]);
        }
    }
    Ok(ArrayGeometry {
        positions,
        lattice_constant: d_nm,
        shape: (n_x, n_y),
    })
}

/// Arbitrary positions (nm). Shape is recorded as `(N, 1)`.
pub fn from_positions(positions: Vec<Vec3>) -> Result<ArrayGeometry> {
    if positions.is_empty() {
        return invalid("geometry needs at least one atom");
    }
    if positions.iter().flatten().any(|x| !x.is_finite()) {
        return invalid("positions must be finite");
    }
    let n = positions.len();
    Ok(ArrayGeometry {
        positions,
        lattice_constant: 0.0,
        shape: (n, 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub theta: f64,
    pub phi: f64,
    pub direction: Vec3,
}

/// Unit vector (sinθ cosφ, sinθ sinφ, cosθ).
pub fn detector_direction(theta: f64, phi: f64) -> Detector {
    Detector {
        theta,
        phi,
        direction: [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()],
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}
