use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::rng;

/// Closed triangle mesh with outward (counter-clockwise) faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if n == 0 {
            return Err(Error::InvalidInput("mesh has no vertices".into()));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&v| v >= n)) {
            return Err(Error::InvalidInput(format!("face {f:?} references a missing vertex")));
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("mesh has non-finite vertices".into()));
        }
        Ok(Self { vertices, faces })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn to_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone()).expect("mesh vertices are finite and non-empty")
    }

    /// Undirected edges, each listed once with the lower index first, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Every undirected edge is shared by exactly two faces traversing it in
    /// opposite directions.
    pub fn is_edge_manifold(&self) -> bool {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Area-weighted vertex normals for the given vertex positions (which
    /// share this mesh's connectivity).
    pub fn vertex_normals_for(&self, positions: &[Point3<f64>]) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); positions.len()];
        for f in &self.faces {
            let (a, b, c) = (positions[f[0]], positions[f[1]], positions[f[2]]);
            let n = (b - a).cross(&(c - a));
            for &v in f {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 { n / len } else { n }
            })
            .collect()
    }

    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        self.vertex_normals_for(&self.vertices)
    }

    pub fn bounding_diagonal(&self) -> f64 {
        bounding_diagonal(&self.vertices)
    }
}

pub(crate) fn bounding_diagonal(points: &[Point3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm()
}

const ICO_FACES: [[usize; 3]; 20] = [
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
];

fn icosahedron_vertices() -> [Vector3<f64>; 12] {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
}

/// Geodesic unit sphere of the given subdivision frequency (`10 f² + 2`
/// vertices). Vertices shared between icosahedron faces are computed from a
/// canonical key so they are bit-identical.
pub fn geodesic_sphere(frequency: usize) -> SurfaceMesh {
    let f = frequency.max(1);
    let corners = icosahedron_vertices();
    let mut ids: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces = Vec::new();

    let mut vertex_id = |weights: [(usize, usize); 3]| -> usize {
        let mut key: Vec<(usize, usize)> = weights.into_iter().filter(|w| w.1 > 0).collect();
        key.sort_unstable();
        *ids.entry(key.clone()).or_insert_with(|| {
            let mut p = Vector3::zeros();
            for &(c, w) in &key {
                p += corners[c] * (w as f64 / f as f64);
            }
            vertices.push(Point3::from(p.normalize()));
            vertices.len() - 1
        })
    };

    for tri in ICO_FACES {
        let [a, b, c] = tri;
        let mut grid = vec![vec![0usize; f + 1]; f + 1];
        for i in 0..=f {
            for j in 0..=(f - i) {
                grid[i][j] = vertex_id([(a, f - i - j), (b, i), (c, j)]);
            }
        }
        for i in 0..f {
            for j in 0..(f - i) {
                faces.push([grid[i][j], grid[i + 1][j], grid[i][j + 1]]);
                if i + j + 2 <= f {
                    faces.push([grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
                }
            }
        }
    }
    SurfaceMesh { vertices, faces }
}

/// Frequency whose vertex count `10 f² + 2` is nearest to the request.
pub fn frequency_for(n_vertices: usize) -> usize {
    let f = (((n_vertices.saturating_sub(2)) as f64) / 10.0).sqrt();
    let lo = f.floor().max(1.0) as usize;
    let count = |k: usize| 10 * k * k + 2;
    if count(lo + 1).abs_diff(n_vertices) < count(lo).abs_diff(n_vertices) {
        lo + 1
    } else {
        lo
    }
}

const MIN_DIAGONAL_MM: f64 = 150.0;
const MAX_DIAGONAL_MM: f64 = 250.0;
const DEFAULT_PERTURBATION: f64 = 0.12;

/// Liver-scale blob: an ellipsoid whose radius is modulated by a taper and a
/// few low-frequency cosine waves.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobShape {
    /// Ellipsoid semi-axes in mm.
    pub semi_axes: Vector3<f64>,
    /// Relative radial modulation amplitude; zero gives the bare ellipsoid.
    pub amplitude: f64,
    taper_dir: Vector3<f64>,
    waves: Vec<(Vector3<f64>, f64, f64, f64)>,
}

impl BlobShape {
    pub fn sample(seed: u64, amplitude: f64) -> Self {
        let mut r = rng::seeded(seed);
        let semi_axes = Vector3::new(
            r.random_range(72.0..88.0),
            r.random_range(50.0..62.0),
            r.random_range(34.0..44.0),
        );
        let taper_dir = rng::unit_vector(&mut r);
        let waves = (0..3)
            .map(|_| {
                let dir = rng::unit_vector(&mut r);
                let freq = r.random_range(1.0..2.5);
                let phase = r.random_range(0.0..std::f64::consts::TAU);
                let weight = r.random_range(0.5..1.0);
                (dir, freq, phase, weight)
            })
            .collect();
        Self { semi_axes, amplitude, taper_dir, waves }
    }

    /// Radial scale factor at unit direction `u`; stays in `1 ± amplitude`.
    pub fn modulation(&self, u: &Vector3<f64>) -> f64 {
        if self.amplitude == 0.0 {
            return 1.0;
        }
        let total: f64 = 1.0 + self.waves.iter().map(|w| w.3).sum::<f64>();
        let mut s = 0.5 * self.taper_dir.dot(u) + 0.5 * self.taper_dir.dot(u).powi(2);
        for (dir, freq, phase, weight) in &self.waves {
            s += weight * (freq * std::f64::consts::PI * dir.dot(u) + phase).cos();
        }
        1.0 + self.amplitude * s / total
    }

    pub fn mesh(&self, n_vertices: usize) -> SurfaceMesh {
        let mut mesh = geodesic_sphere(frequency_for(n_vertices));
        for v in &mut mesh.vertices {
            let u = v.coords;
            let scaled = u.component_mul(&self.semi_axes) * self.modulation(&u);
            *v = Point3::from(scaled);
        }
        let diag = mesh.bounding_diagonal();
        let target = diag.clamp(MIN_DIAGONAL_MM + 5.0, MAX_DIAGONAL_MM - 5.0);
        if diag < MIN_DIAGONAL_MM || diag > MAX_DIAGONAL_MM {
            let s = target / diag;
            for v in &mut mesh.vertices {
                v.coords *= s;
            }
        }
        mesh
    }
}

/// Liver-like closed blob with about `n_vertices` vertices (the nearest
/// geodesic count). Deterministic in `rng_seed`.
pub fn generate_liver_mesh(rng_seed: u64, n_vertices: usize) -> Result<SurfaceMesh> {
    if n_vertices < 500 {
        return Err(Error::InvalidInput(format!("need at least 500 vertices, got {n_vertices}")));
    }
    Ok(BlobShape::sample(rng_seed, DEFAULT_PERTURBATION).mesh(n_vertices))
}
