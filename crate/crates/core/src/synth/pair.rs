use nalgebra::Vector3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{add_noise, crop_front_surface, simulate_deformation, visibility_crop, DeformationParams, SurfaceMesh};
use crate::error::{Error, Result};
use crate::geom::{random_rigid, CorrespondenceSet, PointCloud, RigidTransform};
use crate::rng;

/// Knobs of the target-generation stages that follow the deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub noise_max_mm: f64,
    pub max_translation_mm: f64,
    /// When false the target stays in the source frame (identity transform).
    pub apply_rigid: bool,
    pub ratio_range: (f64, f64),
}

impl Default for PairConfig {
    fn default() -> Self {
        Self { noise_max_mm: 2.0, max_translation_mm: 20.0, apply_rigid: true, ratio_range: (0.20, 0.24) }
    }
}

/// One source/target instance with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// `(source index, target index)`, one entry per target point, sorted by target index.
    pub gt_matches: CorrespondenceSet,
    /// Deformation plus rigid motion of every source point.
    pub gt_displacement: Vec<Vector3<f64>>,
    pub visibility_labels: Vec<bool>,
    pub rigid: RigidTransform,
    pub visibility_ratio: f64,
}

impl SamplePair {
    /// Assembles a pair from stored parts, deriving the labels and checking
    /// the bijection and shape invariants.
    pub fn from_parts(
        source: PointCloud,
        target: PointCloud,
        gt_matches: CorrespondenceSet,
        gt_displacement: Vec<Vector3<f64>>,
        rigid: RigidTransform,
    ) -> Result<Self> {
        let (n, m) = (source.len(), target.len());
        gt_matches.check_bounds(n, m)?;
        if gt_matches.len() != m {
            return Err(Error::Shape(format!("{} ground-truth matches for {m} target points", gt_matches.len())));
        }
        if gt_displacement.len() != n {
            return Err(Error::Shape(format!("{} displacement vectors for {n} source points", gt_displacement.len())));
        }
        let mut visibility_labels = vec![false; n];
        for &(i, _) in gt_matches.iter() {
            visibility_labels[i] = true;
        }
        Ok(Self { visibility_ratio: m as f64 / n as f64, source, target, gt_matches, gt_displacement, visibility_labels, rigid })
    }

    pub fn n_source(&self) -> usize {
        self.source.len()
    }

    pub fn n_target(&self) -> usize {
        self.target.len()
    }

    /// Ground-truth source partner of every target point.
    pub fn target_to_source(&self) -> Vec<usize> {
        let mut out = vec![0; self.target.len()];
        for &(i, j) in self.gt_matches.iter() {
            out[j] = i;
        }
        out
    }

    /// Non-rigid part of the ground truth: `R⁻¹(S + V_gt − t) − S`.
    pub fn deformation(&self) -> Vec<Vector3<f64>> {
        let inv = self.rigid.inverse();
        self.source
            .iter()
            .zip(&self.gt_displacement)
            .map(|(s, v)| inv.apply(&(s + v)) - s)
            .collect()
    }

    pub fn mean_gt_displacement(&self) -> f64 {
        self.gt_displacement.iter().map(|v| v.norm()).sum::<f64>() / self.gt_displacement.len() as f64
    }
}

/// [`make_sample_pair_with`] under the default noise, translation and ratio settings.
pub fn make_sample_pair(mesh: &SurfaceMesh, params: &DeformationParams, rng_seed: u64) -> Result<SamplePair> {
    make_sample_pair_with(mesh, params, &PairConfig::default(), rng_seed)
}

/// deform → front crop → visibility crop → noise → rigid motion → shuffle.
/// Every stage draws from its own stream derived from `rng_seed`.
pub fn make_sample_pair_with(
    mesh: &SurfaceMesh,
    params: &DeformationParams,
    cfg: &PairConfig,
    rng_seed: u64,
) -> Result<SamplePair> {
    let stream = |k| rng::derive_seed(rng_seed, k);
    let field = simulate_deformation(mesh, params, stream(1))?;
    let view = rng::unit_vector(&mut rng::seeded(stream(2)));
    let (front, front_idx) = crop_front_surface(mesh, &field, &view)?;
    let (visible, src_idx) = visibility_crop(&front, &front_idx, stream(3), cfg.ratio_range, mesh.len())?;
    let noisy = add_noise(&visible, cfg.noise_max_mm, stream(4))?;
    let rigid = if cfg.apply_rigid { random_rigid(stream(5), cfg.max_translation_mm) } else { RigidTransform::identity() };
    let moved = noisy.transformed(&rigid);

    let mut order: Vec<usize> = (0..moved.len()).collect();
    order.shuffle(&mut rng::seeded(stream(6)));
    let target = moved.select(&order)?;
    let pairs = order.iter().enumerate().map(|(j, &k)| (src_idx[k], j)).collect();

    let source = mesh.to_cloud();
    let gt_displacement = source
        .iter()
        .zip(&field.displacement)
        .map(|(s, d)| rigid.apply(&(s + d)) - s)
        .collect();
    SamplePair::from_parts(source, target, CorrespondenceSet::new(pairs)?, gt_displacement, rigid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_liver_mesh;

    #[test]
    fn identity_pipeline_reproduces_source_points() {
        let mesh = generate_liver_mesh(0, 1500).unwrap();
        let cfg = PairConfig { noise_max_mm: 0.0, apply_rigid: false, ..Default::default() };
        let pair = make_sample_pair_with(&mesh, &DeformationParams::rigid_only(), &cfg, 7).unwrap();
        for &(i, j) in pair.gt_matches.iter() {
            assert_eq!(pair.target[j], pair.source[i]);
        }
        assert!(pair.gt_displacement.iter().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn targets_sit_within_noise_of_displaced_sources() {
        let mesh = generate_liver_mesh(1, 1500).unwrap();
        let params = DeformationParams::default();
        for seed in 0..5 {
            let pair = make_sample_pair(&mesh, &params, seed).unwrap();
            for &(i, j) in pair.gt_matches.iter() {
                assert!((pair.target[j] - (pair.source[i] + pair.gt_displacement[i])).norm() <= 2.0 + 1e-9);
            }
            let d = pair.deformation();
            let max = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!((max - params.max_displacement_target_mm).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_free_targets_are_exact() {
        let mesh = generate_liver_mesh(2, 1500).unwrap();
        let cfg = PairConfig { noise_max_mm: 0.0, ..Default::default() };
        let pair = make_sample_pair_with(&mesh, &DeformationParams::default(), &cfg, 3).unwrap();
        for &(i, j) in pair.gt_matches.iter() {
            assert!((pair.target[j] - (pair.source[i] + pair.gt_displacement[i])).norm() < 1e-9);
        }
    }

    #[test]
    fn labels_follow_matches() {
        let mesh = generate_liver_mesh(3, 1500).unwrap();
        let pair = make_sample_pair(&mesh, &DeformationParams::default(), 11).unwrap();
        assert_eq!(pair.visibility_labels.iter().filter(|&&b| b).count(), pair.n_target());
        assert!((0.2..=0.24).contains(&pair.visibility_ratio));
        assert_eq!(pair, make_sample_pair(&mesh, &DeformationParams::default(), 11).unwrap());
    }
}
