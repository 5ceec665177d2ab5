use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use super::{NeighborIndex, PointCloud};
use crate::error::{Error, Result};

/// How to resolve the sign ambiguity of a PCA normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Normals point toward this location.
    TowardViewpoint(Point3<f64>),
    /// Normals point toward (`outward == false`) or away from the cloud centroid.
    Centroid { outward: bool },
}

impl Default for NormalOrientation {
    fn default() -> Self {
        NormalOrientation::Centroid { outward: true }
    }
}

/// Per-point unit normals. Points whose neighborhood covariance has rank < 2
/// are flagged in `degenerate` and carry a zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    pub normals: Vec<Vector3<f64>>,
    pub degenerate: Vec<bool>,
}

impl Normals {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        !self.degenerate[i]
    }
}

/// Normals from the covariance of each point's `k` nearest neighbors
/// (the point itself included).
pub fn estimate_normals(cloud: &PointCloud, k: usize, orientation: NormalOrientation) -> Result<Normals> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("normal estimation needs k >= 3, got {k}")));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let mut neighborhoods = Vec::with_capacity(cloud.len());
    for p in cloud.iter() {
        neighborhoods.push(index.knn(p, k)?.into_iter().map(|n| n.index).collect::<Vec<_>>());
    }
    Ok(normals_from_neighborhoods(cloud, &neighborhoods, orientation))
}

/// Normals from all neighbors within `radius`.
pub fn estimate_normals_radius(cloud: &PointCloud, radius: f64, orientation: NormalOrientation) -> Normals {
    let index = NeighborIndex::from_cloud(cloud);
    let neighborhoods: Vec<Vec<usize>> = cloud
        .iter()
        .map(|p| index.within_radius(p, radius).into_iter().map(|n| n.index).collect())
        .collect();
    normals_from_neighborhoods(cloud, &neighborhoods, orientation)
}

fn normals_from_neighborhoods(
    cloud: &PointCloud,
    neighborhoods: &[Vec<usize>],
    orientation: NormalOrientation,
) -> Normals {
    let centroid = cloud.centroid();
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::with_capacity(cloud.len());
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        match plane_normal(cloud.points(), nbrs) {
            Some(mut n) => {
                let p = cloud[i];
                let toward = match orientation {
                    NormalOrientation::TowardViewpoint(v) => v - p,
                    NormalOrientation::Centroid { outward: false } => centroid - p,
                    NormalOrientation::Centroid { outward: true } => p - centroid,
                };
                if n.dot(&toward) < 0.0 {
                    n = -n;
                }
                normals.push(n);
                degenerate.push(false);
            }
            None => {
                normals.push(Vector3::zeros());
                degenerate.push(true);
            }
        }
    }
    Normals { normals, degenerate }
}

/// Least-eigenvalue eigenvector of the neighborhood covariance, or `None`
/// when the covariance has rank below two.
pub(crate) fn plane_normal(points: &[Point3<f64>], nbrs: &[usize]) -> Option<Vector3<f64>> {
    let (eig, _) = neighborhood_eigen(points, nbrs)?;
    let (vals, vecs) = (eig.eigenvalues, eig.eigenvectors);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let (mid, top) = (vals[order[1]], vals[order[2]]);
    if top <= 0.0 || mid <= 1e-10 * top {
        return None;
    }
    let n = vecs.column(order[0]).into_owned();
    let norm = n.norm();
    (norm > 0.0).then(|| n / norm)
}

pub(crate) fn neighborhood_eigen(
    points: &[Point3<f64>],
    nbrs: &[usize],
) -> Option<(SymmetricEigen<f64, nalgebra::U3>, Point3<f64>)> {
    if nbrs.len() < 3 {
        return None;
    }
    let mean = nbrs.iter().fold(Vector3::zeros(), |acc, &j| acc + points[j].coords) / nbrs.len() as f64;
    let mut cov = Matrix3::zeros();
    for &j in nbrs {
        let d = points[j].coords - mean;
        cov += d * d.transpose();
    }
    cov /= nbrs.len() as f64;
    Some((SymmetricEigen::new(cov), Point3::from(mean)))
}
