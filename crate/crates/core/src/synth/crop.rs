use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::{DeformationField, SurfaceMesh};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::rng;

/// Deformed vertices facing a camera looking along `view_dir`, with the
/// source vertex index of each kept point.
pub fn crop_front_surface(
    mesh: &SurfaceMesh,
    field: &DeformationField,
    view_dir: &Vector3<f64>,
) -> Result<(PointCloud, Vec<usize>)> {
    if field.displacement.len() != mesh.len() {
        return Err(Error::Shape(format!(
            "deformation has {} vectors for {} vertices",
            field.displacement.len(),
            mesh.len()
        )));
    }
    if ((view_dir.norm() - 1.0).abs()) > 1e-6 {
        return Err(Error::InvalidInput("view direction must be a unit vector".into()));
    }
    let deformed = field.apply(&mesh.vertices);
    let normals = mesh.vertex_normals_for(&deformed);
    let toward_camera = -view_dir;
    let (points, index): (Vec<Point3<f64>>, Vec<usize>) = deformed
        .iter()
        .zip(&normals)
        .enumerate()
        .filter(|(_, (_, n))| n.dot(&toward_camera) > 0.0)
        .map(|(i, (p, _))| (*p, i))
        .unzip();
    if points.is_empty() {
        return Err(Error::EmptyCrop);
    }
    Ok((PointCloud::new(points)?, index))
}

/// Keeps the points ranked highest along a random direction so the kept count
/// `m` satisfies `m / n_source ∈ ratio_range`. Returns the kept points (in
/// rank order) and their entries of `index_map`.
pub fn visibility_crop(
    raw: &PointCloud,
    index_map: &[usize],
    rng_seed: u64,
    ratio_range: (f64, f64),
    n_source: usize,
) -> Result<(PointCloud, Vec<usize>)> {
    let mut r = rng::seeded(rng_seed);
    let dir = rng::unit_vector(&mut r);
    let ratio = r.random_range(ratio_range.0..=ratio_range.1);
    visibility_crop_along(raw, index_map, &dir, ratio, ratio_range, n_source)
}

/// Deterministic core of [`visibility_crop`] with the direction and ratio fixed.
pub fn visibility_crop_along(
    raw: &PointCloud,
    index_map: &[usize],
    direction: &Vector3<f64>,
    ratio: f64,
    ratio_range: (f64, f64),
    n_source: usize,
) -> Result<(PointCloud, Vec<usize>)> {
    let (lo, hi) = ratio_range;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidInput(format!("bad ratio range [{lo}, {hi}]")));
    }
    if index_map.len() != raw.len() {
        return Err(Error::Shape("index map length differs from cloud size".into()));
    }
    let min_m = (lo * n_source as f64 - 1e-9).ceil() as usize;
    let max_m = (hi * n_source as f64 + 1e-9).floor() as usize;
    if min_m == 0 || min_m > max_m {
        return Err(Error::InvalidInput(format!("no integer count satisfies the ratio range for n = {n_source}")));
    }
    if raw.len() < min_m {
        return Err(Error::InsufficientFrontSurface { available: raw.len(), required: min_m });
    }
    let m = ((ratio * n_source as f64).round() as usize).clamp(min_m, max_m).min(raw.len());

    let mut ranked: Vec<(f64, usize)> = raw.iter().enumerate().map(|(i, p)| (p.coords.dot(direction), i)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let keep: Vec<usize> = ranked[..m].iter().map(|&(_, i)| i).collect();
    let cloud = raw.select(&keep)?;
    let map = keep.iter().map(|&i| index_map[i]).collect();
    Ok((cloud, map))
}

/// Independent uniform-in-ball perturbation of each point.
pub fn add_noise(cloud: &PointCloud, max_mm: f64, rng_seed: u64) -> Result<PointCloud> {
    if !(max_mm >= 0.0) {
        return Err(Error::InvalidInput(format!("noise bound must be non-negative, got {max_mm}")));
    }
    if max_mm == 0.0 {
        return Ok(cloud.clone());
    }
    let mut r = rng::seeded(rng_seed);
    PointCloud::new(cloud.iter().map(|p| p + rng::in_ball(&mut r, max_mm)).collect())
}
