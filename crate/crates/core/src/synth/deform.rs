use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SurfaceMesh;
use crate::error::{Error, Result};
use crate::rng;

/// Max edge-wise displacement change, in mm per mm of edge length.
pub const SMOOTHNESS_LIMIT: f64 = 0.5;
const MAX_ATTEMPTS: u64 = 64;

/// Wendland bumps have peak slope ≈ 2.11 · height / radius; 5 keeps that at
/// or below 0.42 mm/mm, leaving headroom for the boundary ramps.
pub const MIN_RADIUS_PER_MM: f64 = 5.0;

/// Parameters of one simulated deformation. The material constants are
/// carried as metadata only; the procedural field does not read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationParams {
    /// Number of force sites, 1..=3.
    pub n_force_sites: usize,
    /// Support radius of each force bump (mm).
    pub force_region_radius_mm: f64,
    /// Number of zero-displacement regions.
    pub n_boundary_regions: usize,
    /// Radius of each zero-displacement region (mm), in [15, 20].
    pub boundary_radius_mm: f64,
    /// Width of the ramp from zero displacement to full displacement (mm).
    pub boundary_falloff_mm: f64,
    /// The field is rescaled so its largest vertex displacement equals this.
    pub max_displacement_target_mm: f64,
    pub max_force_n: f64,
    pub youngs_modulus_kpa: f64,
    pub poisson_ratio: f64,
}

impl Default for DeformationParams {
    fn default() -> Self {
        Self {
            n_force_sites: 2,
            force_region_radius_mm: 75.0,
            n_boundary_regions: 2,
            boundary_radius_mm: 17.5,
            boundary_falloff_mm: 40.0,
            max_displacement_target_mm: 10.0,
            max_force_n: 3.0,
            youngs_modulus_kpa: 3.5,
            poisson_ratio: 0.35,
        }
    }
}

impl DeformationParams {
    /// Random draw within the simulated ranges: 1–3 forces up to 3 N,
    /// boundary radius 15–20 mm, max displacement 7–15 mm, E in 2–5 kPa.
    ///
    /// The bump radius is at least [`MIN_RADIUS_PER_MM`] times the max
    /// displacement, which keeps a single bump's slope under the smoothness
    /// limit; narrower bumps at 15 mm cannot satisfy it for any placement.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let max_displacement = rng.random_range(7.0..=15.0);
        let lo = (MIN_RADIUS_PER_MM * max_displacement).max(60.0);
        Self {
            n_force_sites: rng.random_range(1..=3),
            force_region_radius_mm: rng.random_range(lo..lo + 30.0),
            n_boundary_regions: rng.random_range(1..=2),
            boundary_radius_mm: rng.random_range(15.0..=20.0),
            boundary_falloff_mm: 40.0,
            max_displacement_target_mm: max_displacement,
            max_force_n: rng.random_range(0.5..=3.0),
            youngs_modulus_kpa: rng.random_range(2.0..=5.0),
            poisson_ratio: 0.35,
        }
    }

    /// Same parameters with deformation switched off.
    pub fn rigid_only() -> Self {
        Self { max_displacement_target_mm: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_force_sites) {
            return Err(Error::InvalidInput(format!("n_force_sites must be 1..=3, got {}", self.n_force_sites)));
        }
        let positive = [
            ("force_region_radius_mm", self.force_region_radius_mm),
            ("boundary_falloff_mm", self.boundary_falloff_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.boundary_radius_mm >= 0.0 && self.boundary_radius_mm.is_finite()) {
            return Err(Error::InvalidInput("boundary_radius_mm must be non-negative".into()));
        }
        if !(self.max_displacement_target_mm >= 0.0 && self.max_displacement_target_mm.is_finite()) {
            return Err(Error::InvalidInput("max_displacement_target_mm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-vertex displacement in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub displacement: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn zeros(n: usize) -> Self {
        Self { displacement: vec![Vector3::zeros(); n] }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.displacement.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, vertices: &[Point3<f64>]) -> Vec<Point3<f64>> {
        vertices.iter().zip(&self.displacement).map(|(v, d)| v + d).collect()
    }

    /// Largest `‖Δdisplacement‖ / ‖Δposition‖` over mesh edges.
    pub fn max_edge_ratio(&self, mesh: &SurfaceMesh) -> f64 {
        mesh.edges()
            .iter()
            .map(|&(a, b)| {
                let len = (mesh.vertices[a] - mesh.vertices[b]).norm();
                let diff = (self.displacement[a] - self.displacement[b]).norm();
                if len > 0.0 { diff / len } else if diff > 0.0 { f64::INFINITY } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }
}

/// Wendland C2 kernel, compactly supported on `r < 1`.
fn wendland(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - r).powi(4) * (4.0 * r + 1.0)
    }
}

/// 0 inside `radius`, smoothstep up to 1 at `radius + falloff`.
fn attenuation(dist: f64, radius: f64, falloff: f64) -> f64 {
    if dist <= radius {
        return 0.0;
    }
    let s = ((dist - radius) / falloff).min(1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Smooth displacement field from 1–3 compactly supported bumps, zeroed
/// inside the boundary regions and rescaled so the largest displacement equals
/// `params.max_displacement_target_mm`.
///
/// Draws are repeated (deterministically) until the edge-wise smoothness
/// bound holds.
pub fn simulate_deformation(mesh: &SurfaceMesh, params: &DeformationParams, rng_seed: u64) -> Result<DeformationField> {
    params.validate()?;
    let n = mesh.len();
    if params.max_displacement_target_mm == 0.0 {
        return Ok(DeformationField::zeros(n));
    }
    let normals = mesh.vertex_normals();
    let mut r = rng::seeded(rng_seed);

    for _attempt in 0..MAX_ATTEMPTS {
        let boundary: Vec<Point3<f64>> =
            (0..params.n_boundary_regions).map(|_| mesh.vertices[r.random_range(0..n)]).collect();
        let eligible: Vec<usize> = (0..n)
            .filter(|&v| boundary.iter().all(|b| (mesh.vertices[v] - b).norm() > params.boundary_radius_mm))
            .collect();
        if eligible.is_empty() {
            return Err(Error::NoForceSites);
        }
        let sites: Vec<(Point3<f64>, Vector3<f64>)> = (0..params.n_force_sites)
            .map(|_| {
                let v = eligible[r.random_range(0..eligible.len())];
                let push = -normals[v] + rng::unit_vector(&mut r) * 0.5;
                let dir = if push.norm() > 1e-9 { push.normalize() } else { -normals[v] };
                let magnitude = r.random_range(0.5..=1.0);
                (mesh.vertices[v], dir * magnitude)
            })
            .collect();

        let mut disp: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|x| {
                let bump = sites
                    .iter()
                    .fold(Vector3::zeros(), |acc, (c, f)| acc + f * wendland((x - c).norm() / params.force_region_radius_mm));
                let damp: f64 = boundary
                    .iter()
                    .map(|b| attenuation((x - b).norm(), params.boundary_radius_mm, params.boundary_falloff_mm))
                    .product();
                bump * damp
            })
            .collect();

        let max = disp.iter().map(|d| d.norm()).fold(0.0, f64::max);
        if max <= 1e-12 {
            continue;
        }
        let scale = params.max_displacement_target_mm / max;
        for d in &mut disp {
            *d *= scale;
        }
        let field = DeformationField { displacement: disp };
        if field.max_edge_ratio(mesh) <= SMOOTHNESS_LIMIT {
            return Ok(field);
        }
    }
    Err(Error::Degenerate(format!(
        "no deformation within the smoothness bound after {MAX_ATTEMPTS} draws"
    )))
}
