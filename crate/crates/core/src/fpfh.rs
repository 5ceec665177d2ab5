//! Fast Point Feature Histograms.
//!
//! Pair features use the Darboux frame anchored at the point whose normal
//! makes the smaller angle with the connecting line. Each of the three angle
//! features is binned into 11 bins; every block of a finished descriptor sums
//! to 100.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{estimate_normals_radius, CorrespondenceSet, NeighborIndex, NormalOrientation, Normals, PointCloud};

pub const BINS: usize = 11;
pub const DIM: usize = 3 * BINS;

pub type FpfhDescriptor = [f64; DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpfhConfig {
    pub voxel_mm: f64,
    /// Normal-estimation radius as a multiple of the voxel size.
    pub normal_radius_factor: f64,
    /// Feature radius as a multiple of the voxel size.
    pub feature_radius_factor: f64,
}

impl Default for FpfhConfig {
    fn default() -> Self {
        Self { voxel_mm: 5.0, normal_radius_factor: 2.5, feature_radius_factor: 5.0 }
    }
}

impl FpfhConfig {
    pub fn normal_radius(&self) -> f64 {
        self.voxel_mm * self.normal_radius_factor
    }

    pub fn feature_radius(&self) -> f64 {
        self.voxel_mm * self.feature_radius_factor
    }
}

/// Darboux-frame features of an oriented point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures {
    /// `v · n_t`, in [-1, 1].
    pub alpha: f64,
    /// `u · (p_t − p_s) / d`, in [-1, 1].
    pub phi: f64,
    /// `atan2(w · n_t, u · n_t)`, in [-π, π].
    pub theta: f64,
    pub distance: f64,
}

/// Voxel-grid downsampling result: one centroid per occupied voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Downsampled {
    pub cloud: PointCloud,
    /// Input indices falling into each output voxel, ascending.
    pub members: Vec<Vec<usize>>,
}

impl Downsampled {
    /// For every output point, the member closest to the centroid (lowest index on ties).
    pub fn representatives(&self, input: &PointCloud) -> Vec<usize> {
        self.members
            .iter()
            .zip(self.cloud.iter())
            .map(|(m, c)| {
                *m.iter()
                    .min_by(|&&a, &&b| (input[a] - c).norm_squared().total_cmp(&(input[b] - c).norm_squared()))
                    .expect("voxels are non-empty")
            })
            .collect()
    }
}

/// One centroid per occupied voxel of the grid anchored at the origin. Output
/// is ordered by voxel coordinate, so it does not depend on input order.
pub fn voxel_downsample(cloud: &PointCloud, voxel_mm: f64) -> Result<Downsampled> {
    if !(voxel_mm > 0.0 && voxel_mm.is_finite()) {
        return Err(Error::InvalidInput(format!("voxel size must be positive, got {voxel_mm}")));
    }
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.iter().enumerate() {
        let key = [0, 1, 2].map(|a| (p[a] / voxel_mm).floor() as i64);
        cells.entry(key).or_default().push(i);
    }
    let members: Vec<Vec<usize>> = cells.into_values().collect();
    let points = members
        .iter()
        .map(|m| {
            let sum = m.iter().fold(Vector3::zeros(), |acc, &i| acc + cloud[i].coords);
            Point3::from(sum / m.len() as f64)
        })
        .collect();
    Ok(Downsampled { cloud: PointCloud::new(points)?, members })
}

pub fn pair_features(p1: &Point3<f64>, n1: &Vector3<f64>, p2: &Point3<f64>, n2: &Vector3<f64>) -> Result<PairFeatures> {
    let mut dp = p2 - p1;
    let distance = dp.norm();
    if distance == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let angle1 = n1.dot(&dp) / distance;
    let angle2 = n2.dot(&dp) / distance;
    let (u, nt, phi) = if angle1.abs().acos() > angle2.abs().acos() {
        dp = -dp;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = dp.cross(u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Ok(PairFeatures { alpha: 0.0, phi, theta: 0.0, distance });
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    Ok(PairFeatures { alpha: v.dot(nt), phi, theta: w.dot(nt).atan2(u.dot(nt)), distance })
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = (BINS as f64 * (value - lo) / (hi - lo)).floor();
    (b.max(0.0) as usize).min(BINS - 1)
}

fn add_pair(hist: &mut FpfhDescriptor, f: &PairFeatures, weight: f64) {
    use std::f64::consts::PI;
    hist[bin(f.theta, -PI, PI)] += weight;
    hist[BINS + bin(f.alpha, -1.0, 1.0)] += weight;
    hist[2 * BINS + bin(f.phi, -1.0, 1.0)] += weight;
}

/// Per-point descriptors plus the points that had no usable neighbor or a
/// degenerate normal (their descriptor is all zero).
#[derive(Debug, Clone, PartialEq)]
pub struct FpfhFeatures {
    pub descriptors: Vec<FpfhDescriptor>,
    pub flagged: Vec<bool>,
}

pub fn compute_fpfh(cloud: &PointCloud, normals: &Normals, radius_mm: f64) -> Result<FpfhFeatures> {
    if normals.len() != cloud.len() {
        return Err(Error::Shape(format!("{} normals for {} points", normals.len(), cloud.len())));
    }
    if !(radius_mm > 0.0) {
        return Err(Error::InvalidInput(format!("feature radius must be positive, got {radius_mm}")));
    }
    let index = NeighborIndex::from_cloud(cloud);
    let pts = cloud.points();
    let neighborhoods: Vec<Vec<(usize, f64)>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if !normals.is_valid(i) {
                return Vec::new();
            }
            index
                .within_radius(p, radius_mm)
                .into_iter()
                .filter(|n| n.index != i && n.distance > 0.0 && normals.is_valid(n.index))
                .map(|n| (n.index, n.distance))
                .collect()
        })
        .collect();

    let spfh: Vec<FpfhDescriptor> = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let mut h = [0.0; DIM];
            if nbrs.is_empty() {
                return h;
            }
            let inc = 100.0 / nbrs.len() as f64;
            for &(j, _) in nbrs {
                let f = pair_features(&pts[i], &normals.normals[i], &pts[j], &normals.normals[j])
                    .expect("neighbors at positive distance");
                add_pair(&mut h, &f, inc);
            }
            h
        })
        .collect();

    let descriptors: Vec<FpfhDescriptor> = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            if nbrs.is_empty() {
                return [0.0; DIM];
            }
            let mut h = spfh[i];
            let k = nbrs.len() as f64;
            for &(j, d) in nbrs {
                for (b, s) in h.iter_mut().zip(&spfh[j]) {
                    *b += s / (d * k);
                }
            }
            for block in h.chunks_mut(BINS) {
                let sum: f64 = block.iter().sum();
                if sum > 0.0 {
                    block.iter_mut().for_each(|b| *b *= 100.0 / sum);
                }
            }
            h
        })
        .collect();
    let flagged = neighborhoods.iter().map(|n| n.is_empty()).collect();
    Ok(FpfhFeatures { descriptors, flagged })
}

/// Downsample, estimate outward normals and describe.
pub fn describe(cloud: &PointCloud, cfg: &FpfhConfig) -> Result<(Downsampled, FpfhFeatures)> {
    let down = voxel_downsample(cloud, cfg.voxel_mm)?;
    let normals = estimate_normals_radius(&down.cloud, cfg.normal_radius(), NormalOrientation::Centroid { outward: true });
    let features = compute_fpfh(&down.cloud, &normals, cfg.feature_radius())?;
    Ok((down, features))
}

/// Mutual nearest neighbors in descriptor space, skipping flagged points.
/// Ties resolve to the lower index.
pub fn match_descriptors(src: &FpfhFeatures, tgt: &FpfhFeatures) -> CorrespondenceSet {
    let dist = |a: &FpfhDescriptor, b: &FpfhDescriptor| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let nearest = |q: &FpfhDescriptor, pool: &FpfhFeatures| -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (j, d) in pool.descriptors.iter().enumerate() {
            if pool.flagged[j] {
                continue;
            }
            let e = dist(q, d);
            if best.is_none_or(|(b, _)| e < b) {
                best = Some((e, j));
            }
        }
        best.map(|(_, j)| j)
    };
    let fwd: Vec<Option<usize>> = src
        .descriptors
        .par_iter()
        .zip(&src.flagged)
        .map(|(d, &f)| if f { None } else { nearest(d, tgt) })
        .collect();
    let back: Vec<Option<usize>> = tgt
        .descriptors
        .par_iter()
        .zip(&tgt.flagged)
        .map(|(d, &f)| if f { None } else { nearest(d, src) })
        .collect();
    let pairs = fwd
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.filter(|&j| back[j] == Some(i)).map(|j| (i, j)))
        .collect();
    CorrespondenceSet::new(pairs).expect("mutual matches are one-to-one")
}

/// FPFH matching between full-resolution clouds; indices refer to the inputs
/// via each voxel's representative point.
pub fn fpfh_match(source: &PointCloud, target: &PointCloud, cfg: &FpfhConfig) -> Result<CorrespondenceSet> {
    let (ds, fs) = describe(source, cfg)?;
    let (dt, ft) = describe(target, cfg)?;
    let rs = ds.representatives(source);
    let rt = dt.representatives(target);
    let pairs = match_descriptors(&fs, &ft).iter().map(|&(i, j)| (rs[i], rt[j])).collect();
    CorrespondenceSet::new(pairs)
}

/// One row per point, 33 columns, no header.
pub fn write_descriptors_csv<W: Write>(w: W, features: &FpfhFeatures) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for d in &features.descriptors {
        out.serialize(d.as_slice()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_rigid, RigidTransform};
    use crate::rng;
    use rand::Rng;

    #[test]
    fn one_voxel_collapses_to_centroid() {
        let cloud = PointCloud::from_xyz(&[[0.1, 0.1, 0.1], [0.3, 0.2, 0.4], [0.2, 0.9, 0.1]]).unwrap();
        let d = voxel_downsample(&cloud, 1.0).unwrap();
        assert_eq!(d.cloud.len(), 1);
        assert!((d.cloud[0] - Point3::new(0.2, 0.4, 0.2)).norm() < 1e-12);
    }

    #[test]
    fn sparse_grid_is_preserved() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..3 {
                    pts.push([x as f64 * 10.0 + 1.0, y as f64 * 10.0 + 1.0, z as f64 * 10.0 + 1.0]);
                }
            }
        }
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        assert_eq!(voxel_downsample(&cloud, 5.0).unwrap().cloud.len(), pts.len());
    }

    #[test]
    fn downsample_count_matches_occupancy_and_is_idempotent() {
        let mut r = rng::seeded(8);
        for _ in 0..20 {
            let pts: Vec<[f64; 3]> =
                (0..300).map(|_| [r.random_range(0.0..40.0), r.random_range(0.0..40.0), r.random_range(0.0..40.0)]).collect();
            let cloud = PointCloud::from_xyz(&pts).unwrap();
            let mut occupied: Vec<[i64; 3]> =
                pts.iter().map(|p| [(p[0] / 5.0).floor() as i64, (p[1] / 5.0).floor() as i64, (p[2] / 5.0).floor() as i64]).collect();
            occupied.sort();
            occupied.dedup();
            let once = voxel_downsample(&cloud, 5.0).unwrap();
            assert_eq!(once.cloud.len(), occupied.len());
            assert_eq!(voxel_downsample(&once.cloud, 5.0).unwrap().cloud.len(), once.cloud.len());
        }
    }

    #[test]
    fn perpendicular_parallel_normals_give_zero_phi() {
        let n = Vector3::z();
        let f = pair_features(&Point3::origin(), &n, &Point3::new(3.0, 1.0, 0.0), &n).unwrap();
        assert_eq!(f.phi, 0.0);
        assert!((f.distance - 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pair_features_are_symmetric_and_rigid_invariant() {
        let mut r = rng::seeded(2);
        for s in 0..100 {
            let p1 = Point3::from(rng::in_ball(&mut r, 10.0));
            let p2 = Point3::from(rng::in_ball(&mut r, 10.0));
            let n1 = rng::unit_vector(&mut r);
            let n2 = rng::unit_vector(&mut r);
            let a = pair_features(&p1, &n1, &p2, &n2).unwrap();
            let b = pair_features(&p2, &n2, &p1, &n1).unwrap();
            for (x, y) in [(a.alpha, b.alpha), (a.phi, b.phi), (a.theta, b.theta)] {
                assert!((x - y).abs() < 1e-12, "swap {x} {y}");
            }
            let t = random_rigid(s, 20.0);
            let c = pair_features(&t.apply(&p1), &t.apply_vector(&n1), &t.apply(&p2), &t.apply_vector(&n2)).unwrap();
            for (x, y) in [(a.alpha, c.alpha), (a.phi, c.phi), (a.theta, c.theta)] {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(matches!(pair_features(&p, &Vector3::x(), &p, &Vector3::y()), Err(Error::CoincidentPoints)));
    }

    fn plane(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for x in 0..n {
            for y in 0..n {
                pts.push([x as f64 * spacing, y as f64 * spacing, 0.0]);
            }
        }
        PointCloud::from_xyz(&pts).unwrap()
    }

    #[test]
    fn interior_plane_descriptors_agree_and_blocks_sum_to_100() {
        let cloud = plane(25, 2.0);
        let normals = estimate_normals_radius(&cloud, 5.0, NormalOrientation::TowardViewpoint(Point3::new(0.0, 0.0, 100.0)));
        let f = compute_fpfh(&cloud, &normals, 6.0).unwrap();
        let interior: Vec<usize> = (0..cloud.len())
            .filter(|&i| {
                let p = cloud[i];
                (p.x >= 14.0 && p.x <= 34.0) && (p.y >= 14.0 && p.y <= 34.0)
            })
            .collect();
        let first = f.descriptors[interior[0]];
        for &i in &interior {
            for (a, b) in f.descriptors[i].iter().zip(&first) {
                assert!((a - b).abs() < 1e-3);
            }
        }
        for (d, flagged) in f.descriptors.iter().zip(&f.flagged) {
            assert!(!flagged);
            for block in d.chunks(BINS) {
                assert!((block.iter().sum::<f64>() - 100.0).abs() < 1e-6);
                assert!(block.iter().all(|&b| b >= 0.0));
            }
        }
    }

    #[test]
    fn isolated_point_is_flagged() {
        let mut pts: Vec<[f64; 3]> = plane(6, 2.0).iter().map(|p| [p.x, p.y, (p.x * 0.3).sin()]).collect();
        pts.push([500.0, 500.0, 500.0]);
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        let mut normals = estimate_normals_radius(&cloud, 5.0, NormalOrientation::default());
        let last = cloud.len() - 1;
        normals.normals[last] = Vector3::z();
        normals.degenerate[last] = false;
        let f = compute_fpfh(&cloud, &normals, 6.0).unwrap();
        assert!(f.flagged[last]);
        assert!(f.descriptors[last].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn descriptors_survive_rigid_motion() {
        let mut r = rng::seeded(4);
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                let (x, y): (f64, f64) = (r.random_range(-30.0..30.0), r.random_range(-30.0..30.0));
                [x, y, 0.02 * x * y + 5.0 * (0.1 * x).sin()]
            })
            .collect();
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        let describe_at = |t: &RigidTransform| {
            let c = cloud.transformed(t);
            let n = estimate_normals_radius(&c, 8.0, NormalOrientation::Centroid { outward: true });
            compute_fpfh(&c, &n, 12.0).unwrap()
        };
        let base = describe_at(&RigidTransform::identity());
        for s in 0..5 {
            let moved = describe_at(&random_rigid(s, 20.0));
            assert_eq!(base.flagged, moved.flagged);
            for (a, b) in base.descriptors.iter().zip(&moved.descriptors) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn identical_clouds_match_themselves() {
        let mut r = rng::seeded(6);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                let (x, y): (f64, f64) = (r.random_range(-40.0..40.0), r.random_range(-40.0..40.0));
                [x, y, 8.0 * (0.08 * x).sin() * (0.11 * y).cos()]
            })
            .collect();
        let cloud = PointCloud::from_xyz(&pts).unwrap();
        let cfg = FpfhConfig { voxel_mm: 2.0, ..Default::default() };
        let m = fpfh_match(&cloud, &cloud, &cfg).unwrap();
        assert!(!m.is_empty());
        let correct = m.iter().filter(|(i, j)| i == j).count();
        assert_eq!(correct, m.len());
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let f = FpfhFeatures { descriptors: vec![[1.0; DIM], [0.0; DIM]], flagged: vec![false, true] };
        let mut buf = Vec::new();
        write_descriptors_csv(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].split(',').count(), DIM);
    }
}
