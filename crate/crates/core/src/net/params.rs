use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FEATURES_PER_SCALE;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Descriptor width.
    pub d: usize,
    /// Hidden width of the point-wise encoder.
    pub hidden: usize,
    /// k-NN sizes of the input-geometry scales.
    pub scales: Vec<usize>,
    pub length_scale_mm: f64,
    /// Super-points per cloud fed to the attention blocks.
    pub n_super: usize,
    /// Self + cross attention pairs.
    pub n_blocks: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { d: 64, hidden: 64, scales: vec![16, 32, 64], length_scale_mm: 10.0, n_super: 256, n_blocks: 1 }
    }
}

impl NetConfig {
    pub fn input_width(&self) -> usize {
        FEATURES_PER_SCALE * self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 || self.n_super == 0 || self.scales.is_empty() {
            return Err(Error::InvalidInput("network widths, scales and super-point count must be positive".into()));
        }
        if !(self.length_scale_mm > 0.0) {
            return Err(Error::InvalidInput("length scale must be positive".into()));
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every parameter array, in visit order.
    /// Weights are stored output × input.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let (d, h, f) = (self.d, self.hidden, self.input_width());
        let mut out = vec![
            ("encoder.w1".to_string(), h, f),
            ("encoder.b1".to_string(), 1, h),
            ("encoder.w2".to_string(), d, h),
            ("encoder.b2".to_string(), 1, d),
        ];
        for b in 0..self.n_blocks {
            for kind in ["self", "cross"] {
                for w in ["wq", "wk", "wv"] {
                    out.push((format!("block{b}.{kind}.{w}"), d, d));
                }
                out.push((format!("block{b}.{kind}.fc_w"), d, 2 * d));
                out.push((format!("block{b}.{kind}.fc_b"), 1, d));
            }
        }
        out.extend([
            ("refine.w".to_string(), d, 2 * d),
            ("refine.b".to_string(), 1, d),
            ("descriptor.w".to_string(), d, d),
            ("descriptor.b".to_string(), 1, d),
            ("visibility.w".to_string(), 1, d),
            ("visibility.b".to_string(), 1, 1),
        ]);
        out
    }
}

/// Weights of one attention layer: `W_q, W_k, W_v` (d×d) and the 2d → d
/// fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub fc_w: Array2<f64>,
    pub fc_b: Array2<f64>,
}

impl AttentionParams {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        Self {
            wq: uniform(&mut r, d, d, d),
            wk: uniform(&mut r, d, d, d),
            wv: uniform(&mut r, d, d, d),
            fc_w: uniform(&mut r, d, 2 * d, 2 * d),
            fc_b: uniform(&mut r, 1, d, 2 * d),
        }
    }
}

fn uniform(r: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-bound..=bound))
}

/// Named parameter arrays in the fixed order of [`NetConfig::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub seed: u64,
    arrays: Vec<(String, Array2<f64>)>,
}

/// One gradient array per parameter array, same names and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    arrays: Vec<(String, Array2<f64>)>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self { arrays: params.iter().map(|(n, a)| (n.to_string(), Array2::zeros(a.raw_dim()))).collect() }
    }

    pub(crate) fn from_arrays(arrays: Vec<(String, Array2<f64>)>) -> Self {
        Self { arrays }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.arrays.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(Error::Shape("gradient sets differ in array count".into()));
        }
        for ((n, a), (m, b)) in self.arrays.iter_mut().zip(&other.arrays) {
            if n != m || a.shape() != b.shape() {
                return Err(Error::Shape(format!("gradient array {n} does not match {m}")));
            }
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (_, a) in &mut self.arrays {
            *a *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }
}

impl NetworkParams {
    /// Uniform in `±1/√fan_in` for every weight and bias array, seeded,
    /// except the visibility bias, which starts at 0.5 so the clamped head
    /// begins inside (0, 1) where it has a gradient.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        // every bias directly follows its weight, whose column count is the fan-in
        let mut fan_in = 1;
        let arrays = config
            .layout()
            .into_iter()
            .map(|(name, rows, cols)| {
                let last = name.rsplit('.').next().unwrap_or_default();
                if !(last.starts_with('b') || last == "fc_b") {
                    fan_in = cols;
                }
                let a = uniform(&mut r, rows, cols, fan_in);
                (name, a)
            })
            .collect();
        let mut params = Self { config, seed, arrays };
        params.get_mut("visibility.b")?.fill(VISIBILITY_BIAS_INIT);
        Ok(params)
    }

    /// Builds a parameter set from explicit arrays, checking names and shapes.
    pub fn from_arrays(config: NetConfig, seed: u64, arrays: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let layout = config.layout();
        if layout.len() != arrays.len() {
            return Err(Error::Shape(format!("expected {} arrays, got {}", layout.len(), arrays.len())));
        }
        for ((name, rows, cols), (n, a)) in layout.iter().zip(&arrays) {
            if name != n || a.dim() != (*rows, *cols) {
                return Err(Error::Shape(format!("array {n} {:?} where {name} ({rows}, {cols}) expected", a.dim())));
            }
        }
        Ok(Self { config, seed, arrays })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.arrays.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter array named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.arrays
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::InvalidInput(format!("no parameter array named {name}")))
    }

    pub fn attention(&self, block: usize, kind: &str) -> Result<AttentionParams> {
        let get = |w: &str| self.get(&format!("block{block}.{kind}.{w}")).cloned();
        Ok(AttentionParams { wq: get("wq")?, wk: get("wk")?, wv: get("wv")?, fc_w: get("fc_w")?, fc_b: get("fc_b")? })
    }

    pub fn n_scalars(&self) -> usize {
        self.arrays.iter().map(|(_, a)| a.len()).sum()
    }

    /// `p ← p − lr·g` for every array.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if grads.arrays.len() != self.arrays.len() {
            return Err(Error::Shape("gradient set does not match parameters".into()));
        }
        for ((n, p), (m, g)) in self.arrays.iter_mut().zip(&grads.arrays) {
            if n != m || p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {m} does not match parameter {n}")));
            }
            p.scaled_add(-lr, g);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        read_checkpoint(&mut f)
    }
}

/// Initial visibility bias: the midpoint of the clamp range.
pub const VISIBILITY_BIAS_INIT: f64 = 0.5;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRFNET\x00\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: NetConfig,
    seed: u64,
    arrays: Vec<(String, usize, usize)>,
}

/// `magic | u32 version | u32 header length | JSON header | f64 LE data`.
pub fn write_checkpoint<W: Write>(w: &mut W, params: &NetworkParams) -> Result<()> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        seed: params.seed,
        arrays: params.arrays.iter().map(|(n, a)| (n.clone(), a.nrows(), a.ncols())).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, a) in &params.arrays {
        for v in a.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<NetworkParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    let mut buf = [0u8; 8];
    for (name, rows, cols) in header.arrays {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(|_| Error::Checkpoint(format!("truncated data in {name}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        let a = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        arrays.push((name, a));
    }
    NetworkParams::from_arrays(header.config, header.seed, arrays)
}
