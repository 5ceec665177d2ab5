//! Point clouds, rigid transforms, correspondences and spatial queries.

mod kdtree;
pub mod normals;

pub use kdtree::{Neighbor, NeighborIndex};
pub use normals::{estimate_normals, estimate_normals_radius, NormalOrientation, Normals};

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Ordered set of 3D points in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud must contain at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<f64>> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Point3<f64> {
        centroid(&self.points)
    }

    /// Sub-cloud at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pts = indices
            .iter()
            .map(|&i| {
                self.points.get(i).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("index {i} out of range for {} points", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pts)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        apply_rigid(self, t)
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point3<f64>;

    fn index(&self, i: usize) -> &Point3<f64> {
        &self.points[i]
    }
}

pub fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / points.len().max(1) as f64)
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformJson", try_from = "TransformJson")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self { rotation: *rot.matrix(), translation }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Max deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ortho.max((self.rotation.determinant() - 1.0).abs())
    }

    /// `[R | t]` as 12 numbers, row-major.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn from_row_major_3x4(v: &[f64; 12]) -> Self {
        Self {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformJson {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformJson {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformJson {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation[0], t.translation[1], t.translation[2]],
        }
    }
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = String;

    fn try_from(j: TransformJson) -> std::result::Result<Self, String> {
        let r = j.rotation;
        let t = RigidTransform {
            rotation: Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            translation: Vector3::from(j.translation),
        };
        if t.orthonormality_error() > 1e-6 {
            return Err("rotation is not orthonormal with det +1".into());
        }
        Ok(t)
    }
}

pub fn apply_rigid(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|p| t.apply(p)).collect() }
}

/// Uniformly random rotation with translation uniform in the ball of radius
/// `max_translation_mm`. Deterministic in `seed`.
pub fn random_rigid(seed: u64, max_translation_mm: f64) -> RigidTransform {
    random_rigid_with(&mut rng::seeded(seed), max_translation_mm)
}

pub fn random_rigid_with<R: Rng + ?Sized>(rng: &mut R, max_translation_mm: f64) -> RigidTransform {
    RigidTransform {
        rotation: random_rotation(rng),
        translation: rng::in_ball(rng, max_translation_mm.max(0.0)),
    }
}

/// Normalized quaternion of four standard normals: uniform on SO(3).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q = Vector4::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = q.norm();
        if n > 1e-12 {
            let q = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
            return *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
        }
    }
}

/// One-to-one set of `(source index, target index)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    /// Rejects duplicate source or target indices.
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut tgt: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        src.sort_unstable();
        tgt.sort_unstable();
        if src.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate source index in correspondence set".into()));
        }
        if tgt.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate target index in correspondence set".into()));
        }
        Ok(Self { pairs })
    }

    pub fn empty() -> Self {
        Self { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, (usize, usize)> {
        self.pairs.iter()
    }

    /// Checks every index against the cloud sizes.
    pub fn check_bounds(&self, n_source: usize, n_target: usize) -> Result<()> {
        for &(i, j) in &self.pairs {
            if i >= n_source || j >= n_target {
                return Err(Error::InvalidInput(format!(
                    "pair ({i}, {j}) out of range for clouds of {n_source} and {n_target} points"
                )));
            }
        }
        Ok(())
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&(usize, usize)) -> bool) {
        self.pairs.retain(|p| keep(p));
    }

    /// Target partner of every source point, `None` where unmatched.
    pub fn source_to_target(&self, n_source: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_source];
        for &(i, j) in &self.pairs {
            if i < n_source {
                out[i] = Some(j);
            }
        }
        out
    }
}

impl<'a> IntoIterator for &'a CorrespondenceSet {
    type Item = &'a (usize, usize);
    type IntoIter = std::slice::Iter<'a, (usize, usize)>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut r = rng::seeded(seed);
        PointCloud::new((0..n).map(|_| Point3::from(rng::in_ball(&mut r, 100.0))).collect()).unwrap()
    }

    #[test]
    fn identity_leaves_cloud_unchanged() {
        let c = random_cloud(1, 50);
        assert_eq!(apply_rigid(&c, &RigidTransform::identity()), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap();
        let t = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = apply_rigid(&c, &t)[0];
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let c = random_cloud(2, 100);
        for seed in 0..20 {
            let t = random_rigid(seed, 20.0);
            let back = apply_rigid(&apply_rigid(&c, &t), &t.inverse());
            for (a, b) in back.iter().zip(c.iter()) {
                assert!((a - b).norm() < 1e-9);
            }
            let id = t.compose(&t.inverse());
            assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-9);
            assert!(id.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn rigid_motion_is_isometric() {
        let c = random_cloud(3, 40);
        let t = random_rigid(9, 20.0);
        let d = apply_rigid(&c, &t);
        for i in 0..c.len() {
            for j in 0..c.len() {
                let a = (c[i] - c[j]).norm();
                let b = (d[i] - d[j]).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_rigid_zero_translation_bound() {
        assert_eq!(random_rigid(5, 0.0).translation, Vector3::zeros());
    }

    #[test]
    fn random_rigid_is_deterministic() {
        assert_eq!(random_rigid(77, 20.0), random_rigid(77, 20.0));
        assert_ne!(random_rigid(77, 20.0), random_rigid(78, 20.0));
    }

    #[test]
    fn random_rigid_statistics() {
        let mut max_t = 0.0f64;
        for seed in 0..10_000 {
            let t = random_rigid(seed, 20.0);
            max_t = max_t.max(t.translation.norm());
            for c in 0..3 {
                assert!((t.rotation.column(c).norm() - 1.0).abs() < 1e-9);
            }
            assert!(t.orthonormality_error() < 1e-9);
        }
        assert!(max_t <= 20.0);
        // the ball should be well covered
        assert!(max_t > 19.0);
    }

    #[test]
    fn random_rotation_is_not_biased_toward_identity() {
        // For Haar measure the mean of trace(R) is 0.
        let mut r = rng::seeded(11);
        let mean: f64 = (0..20_000).map(|_| random_rotation(&mut r).trace()).sum::<f64>() / 20_000.0;
        assert!(mean.abs() < 0.05, "mean trace {mean}");
    }

    #[test]
    fn row_major_round_trip() {
        let t = random_rigid(4, 20.0);
        assert_eq!(RigidTransform::from_row_major_3x4(&t.to_row_major_3x4()), t);
        let json = serde_json::to_string(&t).unwrap();
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn correspondence_set_rejects_duplicates() {
        assert!(CorrespondenceSet::new(vec![(0, 1), (0, 2)]).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 1), (2, 1)]).is_err());
        assert!(CorrespondenceSet::new(vec![(0, 1), (2, 0)]).is_ok());
    }

    #[test]
    fn cloud_rejects_empty_and_nan() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::from_xyz(&[[0.0, f64::NAN, 0.0]]).is_err());
    }
}
