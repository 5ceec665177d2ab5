//! Fixed (non-learned) per-point geometry and the super-point hierarchy.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geom::normals::neighborhood_eigen;
use crate::geom::{NeighborIndex, PointCloud};

/// Values per neighborhood scale.
pub const FEATURES_PER_SCALE: usize = 7;

/// Rotation- and translation-invariant statistics of the k-NN neighborhoods
/// at every scale in `scales`: the three principal extents, surface
/// variation, signed height over the fitted plane, and mean and max
/// neighbor distance. Lengths are divided by `length_scale_mm`.
///
/// The plane normal's sign is fixed by pointing away from the cloud centroid.
pub fn geometric_features(cloud: &PointCloud, scales: &[usize], length_scale_mm: f64) -> Result<Array2<f64>> {
    let kmax = scales.iter().copied().max().ok_or_else(|| Error::InvalidInput("no neighborhood scales".into()))?;
    if scales.iter().any(|&k| k < 4) {
        return Err(Error::InvalidInput(format!("neighborhood sizes must be >= 4, got {scales:?}")));
    }
    if cloud.len() < kmax {
        return Err(Error::InsufficientPoints { requested: kmax, available: cloud.len() });
    }
    let index = NeighborIndex::from_cloud(cloud);
    let centroid = cloud.centroid();
    let pts = cloud.points();
    let mut out = Array2::zeros((cloud.len(), FEATURES_PER_SCALE * scales.len()));
    for (i, p) in pts.iter().enumerate() {
        let nbrs = index.knn(p, kmax)?;
        for (s, &k) in scales.iter().enumerate() {
            let local = &nbrs[..k];
            let ids: Vec<usize> = local.iter().map(|n| n.index).collect();
            let (eig, mean) = neighborhood_eigen(pts, &ids).expect("k >= 4");
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let lam = order.map(|o| eig.eigenvalues[o].max(0.0));
            let mut normal = eig.eigenvectors.column(order[2]).into_owned();
            if normal.dot(&(p - centroid)) < 0.0 {
                normal = -normal;
            }
            let total = lam[0] + lam[1] + lam[2];
            let dists: Vec<f64> = local.iter().skip(1).map(|n| n.distance).collect();
            let row = [
                lam[0].sqrt() / length_scale_mm,
                lam[1].sqrt() / length_scale_mm,
                lam[2].sqrt() / length_scale_mm,
                if total > 0.0 { 3.0 * lam[2] / total } else { 0.0 },
                (p - mean).dot(&normal) / length_scale_mm,
                dists.iter().sum::<f64>() / dists.len() as f64 / length_scale_mm,
                dists.iter().copied().fold(0.0, f64::max) / length_scale_mm,
            ];
            for (c, v) in row.into_iter().enumerate() {
                out[[i, s * FEATURES_PER_SCALE + c]] = v;
            }
        }
    }
    Ok(out)
}

/// Farthest-point sampling of up to `count` points, seeded at the point
/// farthest from the centroid. Ties go to the lower index, so the selected
/// geometry does not depend on input order.
pub fn farthest_point_sampling(cloud: &PointCloud, count: usize) -> Vec<usize> {
    let n = cloud.len();
    let count = count.min(n);
    if count == 0 {
        return Vec::new();
    }
    let c = cloud.centroid();
    let pts = cloud.points();
    let argmax = |vals: &[f64]| {
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if *v > vals[best] {
                best = i;
            }
        }
        best
    };
    let from_centroid: Vec<f64> = pts.iter().map(|p| (p - c).norm_squared()).collect();
    let mut chosen = vec![argmax(&from_centroid)];
    let mut min_d: Vec<f64> = pts.iter().map(|p| (p - pts[chosen[0]]).norm_squared()).collect();
    while chosen.len() < count {
        let next = argmax(&min_d);
        chosen.push(next);
        for (d, p) in min_d.iter_mut().zip(pts) {
            *d = d.min((p - pts[next]).norm_squared());
        }
    }
    chosen
}

/// Everything about a cloud the network needs that does not depend on the
/// parameters; computed once per cloud and reused across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud {
    pub features: Array2<f64>,
    /// Indices of the super-points, in sampling order.
    pub super_points: Vec<usize>,
    /// For every point, the position in `super_points` of its nearest super-point.
    pub attach: Vec<usize>,
}

impl PreparedCloud {
    pub fn new(cloud: &PointCloud, scales: &[usize], length_scale_mm: f64, n_super: usize) -> Result<Self> {
        let features = geometric_features(cloud, scales, length_scale_mm)?;
        let super_points = farthest_point_sampling(cloud, n_super);
        let sub = cloud.select(&super_points)?;
        let index = NeighborIndex::from_cloud(&sub);
        let attach = cloud.iter().map(|p| index.nearest(p).index).collect();
        Ok(Self { features, super_points, attach })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
