//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<sample id>/source.ply        binary, doubles, mesh faces
//! <root>/<sample id>/target.ply
//! <root>/<sample id>/meta.json
//! <root>/<sample id>/matches.json      [[source, target], ...]
//! <root>/<sample id>/displacement.json n × 3
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_liver_mesh, make_sample_pair_with, DeformationParams, PairConfig, SamplePair, SurfaceMesh};
use crate::error::{Error, Result};
use crate::geom::{CorrespondenceSet, PointCloud, RigidTransform};
use crate::ply::{read_ply_file, write_ply_file, PlyData, PlyFormat};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_meshes: usize,
    pub samples_per_mesh: usize,
    pub n_vertices: usize,
    /// Meshes held out for testing; `None` holds out the last ⌈n/8⌉ when n ≥ 2.
    pub test_meshes: Option<usize>,
    pub pair: PairConfig,
    /// Fixed deformation for every sample instead of a per-sample random draw.
    pub deformation: Option<DeformationParams>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_meshes: 4,
            samples_per_mesh: 25,
            n_vertices: 1500,
            test_meshes: None,
            pair: PairConfig::default(),
            deformation: None,
        }
    }
}

impl DatasetConfig {
    pub fn n_test_meshes(&self) -> usize {
        match self.test_meshes {
            Some(t) => t.min(self.n_meshes),
            None if self.n_meshes >= 2 => self.n_meshes.div_ceil(8),
            None => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_meshes == 0 || self.samples_per_mesh == 0 {
            return Err(Error::InvalidInput("mesh and sample counts must be positive".into()));
        }
        if let Some(p) = &self.deformation {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub mesh_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Dataset { path: path.clone(), message: format!("cannot read manifest: {e}") })?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Dataset { path, message: format!("manifest version {} unsupported", m.version) });
        }
        Ok(m)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    /// Fails when a mesh identity appears in both splits.
    pub fn check_split(&self) -> Result<()> {
        let train: std::collections::BTreeSet<usize> = self.entries(Split::Train).map(|e| e.mesh_id).collect();
        let leaked: Vec<usize> = self.entries(Split::Test).map(|e| e.mesh_id).filter(|m| train.contains(m)).collect();
        if let Some(m) = leaked.first() {
            return Err(Error::SplitLeakage(m.to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub seed: u64,
    pub mesh_id: usize,
    pub params: DeformationParams,
    pub pair: PairConfig,
    /// Row-major `[R | t]`.
    pub rigid: [f64; 12],
    pub visibility_ratio: f64,
    pub n_source: usize,
    pub n_target: usize,
}

pub fn sample_id(mesh_id: usize, sample: usize) -> String {
    format!("mesh{mesh_id:03}_s{sample:04}")
}

/// Closed mesh from a PLY file with faces (for externally supplied organs).
pub fn load_mesh_ply(path: &Path) -> Result<SurfaceMesh> {
    let data = read_ply_file(path)?;
    if data.faces.is_empty() {
        return Err(Error::Ply(format!("{} has no faces", path.display())));
    }
    SurfaceMesh::new(data.points, data.faces)
}

fn mesh_for(cfg: &DatasetConfig, seed: u64, mesh_id: usize, imported: &[SurfaceMesh]) -> Result<SurfaceMesh> {
    match imported.get(mesh_id) {
        Some(m) => Ok(m.clone()),
        None => generate_liver_mesh(rng::derive_seed(seed, mesh_id as u64), cfg.n_vertices),
    }
}

/// Generates `(meta, pair)` for one slot of the dataset grid.
pub fn generate_sample(
    cfg: &DatasetConfig,
    seed: u64,
    mesh: &SurfaceMesh,
    mesh_id: usize,
    sample: usize,
) -> Result<(SampleMeta, SamplePair)> {
    let sample_seed = rng::derive_seed(rng::derive_seed(seed, mesh_id as u64), 1000 + sample as u64);
    let params = match &cfg.deformation {
        Some(p) => p.clone(),
        None => DeformationParams::random(&mut rng::SeededRng::seed_from_u64(rng::derive_seed(sample_seed, 0))),
    };
    let pair = make_sample_pair_with(mesh, &params, &cfg.pair, sample_seed)?;
    let meta = SampleMeta {
        seed: sample_seed,
        mesh_id,
        params,
        pair: cfg.pair.clone(),
        rigid: pair.rigid.to_row_major_3x4(),
        visibility_ratio: pair.visibility_ratio,
        n_source: pair.n_source(),
        n_target: pair.n_target(),
    };
    Ok((meta, pair))
}

/// Writes a full dataset under `root`, which must be empty or absent unless
/// `force` is set. `imported` meshes replace the first synthetic meshes.
pub fn generate_dataset(
    root: &Path,
    cfg: &DatasetConfig,
    seed: u64,
    imported: &[SurfaceMesh],
    force: bool,
) -> Result<Manifest> {
    cfg.validate()?;
    prepare_output_dir(root, force)?;
    let n_test = cfg.n_test_meshes();
    let meshes: Vec<SurfaceMesh> =
        (0..cfg.n_meshes).into_par_iter().map(|m| mesh_for(cfg, seed, m, imported)).collect::<Result<_>>()?;

    let slots: Vec<(usize, usize)> =
        (0..cfg.n_meshes).flat_map(|m| (0..cfg.samples_per_mesh).map(move |s| (m, s))).collect();
    let samples = slots
        .par_iter()
        .map(|&(mesh_id, s)| {
            let (meta, pair) = generate_sample(cfg, seed, &meshes[mesh_id], mesh_id, s)?;
            let id = sample_id(mesh_id, s);
            write_sample(&root.join(&id), &meta, &pair, Some(&meshes[mesh_id]))?;
            let split = if mesh_id >= cfg.n_meshes - n_test { Split::Test } else { Split::Train };
            Ok(ManifestEntry { id, mesh_id, split })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest { version: MANIFEST_VERSION, seed, config: cfg.clone(), samples };
    manifest.check_split()?;
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Creates `dir`, refusing to touch a non-empty directory unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Dataset {
                path: dir.to_path_buf(),
                message: "output directory is not empty (pass --force to overwrite)".into(),
            });
        }
        if non_empty {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_sample(dir: &Path, meta: &SampleMeta, pair: &SamplePair, mesh: Option<&SurfaceMesh>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut src = PlyData::from_points(pair.source.points().to_vec());
    if let Some(m) = mesh {
        src.faces = m.faces.clone();
    }
    write_ply_file(&dir.join("source.ply"), &src, PlyFormat::BinaryLittleEndian)?;
    write_ply_file(
        &dir.join("target.ply"),
        &PlyData::from_points(pair.target.points().to_vec()),
        PlyFormat::BinaryLittleEndian,
    )?;
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    fs::write(dir.join("matches.json"), serde_json::to_string(&pair.gt_matches)?)?;
    let disp: Vec<[f64; 3]> = pair.gt_displacement.iter().map(|v| [v.x, v.y, v.z]).collect();
    fs::write(dir.join("displacement.json"), serde_json::to_string(&disp)?)?;
    Ok(())
}

pub fn read_sample(dir: &Path) -> Result<(SampleMeta, SamplePair)> {
    let wrap = |message: String| Error::Dataset { path: dir.to_path_buf(), message };
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| wrap(format!("{name}: {e}")));
    let meta: SampleMeta = serde_json::from_str(&read("meta.json")?)?;
    let matches: CorrespondenceSet = serde_json::from_str(&read("matches.json")?)?;
    let disp: Vec<[f64; 3]> = serde_json::from_str(&read("displacement.json")?)?;
    let source = read_cloud(&dir.join("source.ply"))?;
    let target = read_cloud(&dir.join("target.ply"))?;
    let pair = SamplePair::from_parts(
        source,
        target,
        matches,
        disp.into_iter().map(Vector3::from).collect(),
        RigidTransform::from_row_major_3x4(&meta.rigid),
    )
    .map_err(|e| wrap(e.to_string()))?;
    Ok((meta, pair))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_ply_file(path)?;
    PointCloud::new(data.points)
}

/// Loads every sample of one split, in manifest order.
pub fn load_split(root: &Path, manifest: &Manifest, split: Split) -> Result<Vec<(ManifestEntry, SamplePair)>> {
    manifest
        .entries(split)
        .map(|e| read_sample(&root.join(&e.id)).map(|(_, p)| (e.clone(), p)))
        .collect()
}

pub fn sample_dir(root: &Path, entry: &ManifestEntry) -> PathBuf {
    root.join(&entry.id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatasetConfig {
        DatasetConfig { n_meshes: 2, samples_per_mesh: 3, n_vertices: 600, ..Default::default() }
    }

    #[test]
    fn round_trip_and_split() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ds");
        let manifest = generate_dataset(&root, &small_cfg(), 5, &[], false).unwrap();
        assert_eq!(manifest.samples.len(), 6);
        assert_eq!(manifest.entries(Split::Test).count(), 3);
        assert!(manifest.entries(Split::Test).all(|e| e.mesh_id == 1));
        assert_eq!(Manifest::load(&root).unwrap(), manifest);

        let entry = &manifest.samples[4];
        let (meta, pair) = read_sample(&sample_dir(&root, entry)).unwrap();
        let mesh = generate_liver_mesh(rng::derive_seed(5, 1), 600).unwrap();
        let (meta2, pair2) = generate_sample(&small_cfg(), 5, &mesh, 1, 1).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(pair.source, pair2.source);
        assert_eq!(pair.target, pair2.target);
        assert_eq!(pair.gt_matches, pair2.gt_matches);
        assert_eq!(pair.gt_displacement, pair2.gt_displacement);
    }

    #[test]
    fn refuses_non_empty_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("junk"), "x").unwrap();
        let cfg = DatasetConfig { n_meshes: 1, samples_per_mesh: 1, n_vertices: 600, ..Default::default() };
        assert!(matches!(generate_dataset(dir.path(), &cfg, 0, &[], false), Err(Error::Dataset { .. })));
        generate_dataset(dir.path(), &cfg, 0, &[], true).unwrap();
        assert!(!dir.path().join("junk").exists());
    }

    #[test]
    fn leakage_is_detected() {
        let mut m = Manifest { version: 1, seed: 0, config: small_cfg(), samples: vec![] };
        m.samples.push(ManifestEntry { id: "a".into(), mesh_id: 0, split: Split::Train });
        m.samples.push(ManifestEntry { id: "b".into(), mesh_id: 0, split: Split::Test });
        assert!(matches!(m.check_split(), Err(Error::SplitLeakage(_))));
    }

    #[test]
    fn zero_samples_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { samples_per_mesh: 0, ..small_cfg() };
        assert!(generate_dataset(&dir.path().join("x"), &cfg, 0, &[], false).is_err());
    }
}
