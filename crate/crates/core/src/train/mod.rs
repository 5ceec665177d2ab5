//! Losses, exact gradients through the matcher, SGD and the training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, focal_value, Graph};
use crate::error::{Error, Result};
use crate::geom::{CorrespondenceSet, PointCloud};
use crate::net::{build_forward, GradientSet, NetConfig, NetworkParams, PreparedCloud};
use crate::rng;
use crate::synth::{load_split, Manifest, SamplePair, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples whose gradients are averaged into one step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub rng_seed: u64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 35,
            batch_size: 1,
            learning_rate: 0.05,
            lr_decay: 0.95,
            rng_seed: 0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidInput(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if self.focal_alpha < 0.0 || self.focal_gamma < 0.0 {
            return Err(Error::InvalidInput("focal parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate used during the zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }
}

/// Which loss terms enter the differentiated objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossTerms {
    #[default]
    Both,
    FocalOnly,
    VisibilityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal: f64,
    pub visibility: f64,
    pub total: f64,
}

/// `−(1/m) Σ_gt α (1−M)^γ ln M`, with `M` floored at 1e-12.
pub fn focal_loss(m: &ndarray::Array2<f64>, gt: &CorrespondenceSet, alpha: f64, gamma: f64) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("focal loss needs at least one ground-truth pair".into()));
    }
    gt.check_bounds(m.nrows(), m.ncols())?;
    Ok(focal_value(m, gt.pairs(), alpha, gamma))
}

/// Mean binary cross-entropy with predictions clipped to `[1e-12, 1−1e-12]`.
pub fn visibility_loss(o: &[f64], labels: &[bool]) -> Result<f64> {
    if o.len() != labels.len() {
        return Err(Error::Shape(format!("{} visibility scores for {} labels", o.len(), labels.len())));
    }
    if o.is_empty() {
        return Ok(0.0);
    }
    let o = ndarray::Array2::from_shape_vec((o.len(), 1), o.to_vec()).expect("column shape");
    Ok(bce_value(&o, labels))
}

pub fn total_loss(focal: f64, visibility: f64) -> f64 {
    focal + visibility
}

/// A pair reduced to what training reads: prepared clouds and supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub source: PreparedCloud,
    pub target: PreparedCloud,
    pub gt: CorrespondenceSet,
    pub labels: Vec<bool>,
}

impl TrainingSample {
    pub fn new(config: &NetConfig, source: &PointCloud, target: &PointCloud, gt: CorrespondenceSet) -> Result<Self> {
        gt.check_bounds(source.len(), target.len())?;
        if gt.is_empty() {
            return Err(Error::InvalidInput("training sample without ground-truth matches".into()));
        }
        let mut labels = vec![false; source.len()];
        for &(i, _) in gt.iter() {
            labels[i] = true;
        }
        let prep = |c: &PointCloud| PreparedCloud::new(c, &config.scales, config.length_scale_mm, config.n_super);
        Ok(Self { source: prep(source)?, target: prep(target)?, gt, labels })
    }

    pub fn from_pair(config: &NetConfig, pair: &SamplePair) -> Result<Self> {
        let mut s = Self::new(config, &pair.source, &pair.target, pair.gt_matches.clone())?;
        s.labels.clone_from(&pair.visibility_labels);
        Ok(s)
    }
}

fn record(
    g: &mut Graph,
    params: &NetworkParams,
    sample: &TrainingSample,
    cfg: &TrainConfig,
    terms: LossTerms,
) -> Result<(crate::net::ForwardVars, crate::autodiff::Var, LossBreakdown)> {
    let f = build_forward(g, params, &sample.source, &sample.target)?;
    let lm = g.focal_loss(f.confidence, sample.gt.pairs(), cfg.focal_alpha, cfg.focal_gamma)?;
    let lv = g.bce_loss(f.visibility, &sample.labels)?;
    let root = match terms {
        LossTerms::Both => g.add(lm, lv)?,
        LossTerms::FocalOnly => lm,
        LossTerms::VisibilityOnly => lv,
    };
    let (focal, visibility) = (g.scalar(lm), g.scalar(lv));
    let breakdown = LossBreakdown { focal, visibility, total: total_loss(focal, visibility) };
    Ok((f, root, breakdown))
}

/// Forward-only loss evaluation.
pub fn evaluate_loss(params: &NetworkParams, sample: &TrainingSample, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let (_, _, loss) = record(&mut g, params, sample, cfg, LossTerms::Both)?;
    if let Some((node, op)) = g.first_non_finite() {
        return Err(Error::NonFinite { node, op });
    }
    Ok(loss)
}

/// Loss breakdown and the exact gradient of the selected terms.
pub fn loss_and_gradients(
    params: &NetworkParams,
    sample: &TrainingSample,
    cfg: &TrainConfig,
    terms: LossTerms,
) -> Result<(LossBreakdown, GradientSet)> {
    let mut g = Graph::new();
    let (f, root, loss) = record(&mut g, params, sample, cfg, terms)?;
    let grads = g.backward(root)?;
    let arrays = params
        .iter()
        .zip(&f.params)
        .map(|((name, a), &v)| (name.to_string(), grads.get_or_zeros(v, a.dim())))
        .collect();
    Ok((loss, GradientSet::from_arrays(arrays)))
}

/// Gradient of the total loss `L_M + L_v`.
pub fn backward(params: &NetworkParams, sample: &TrainingSample, cfg: &TrainConfig) -> Result<(LossBreakdown, GradientSet)> {
    loss_and_gradients(params, sample, cfg, LossTerms::Both)
}

pub fn sgd_step(params: &mut NetworkParams, grads: &GradientSet, lr: f64) -> Result<()> {
    params.sgd_step(grads, lr)
}

/// Per-epoch means over the samples visited, each measured before its step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub focal: f64,
    pub visibility: f64,
    pub total: f64,
}

/// Runs `epochs × ⌈samples / batch⌉` SGD steps, shuffling the visiting
/// order every epoch from `rng_seed`. `on_epoch` sees each log line as it
/// is produced.
pub fn train(
    mut params: NetworkParams,
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &NetworkParams),
) -> Result<(NetworkParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::seeded(rng::derive_seed(cfg.rng_seed, epoch as u64)));
        let lr = cfg.learning_rate_at(epoch);
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = GradientSet::zeros_like(&params);
            for &s in batch {
                let (loss, grads) = backward(&params, &samples[s], cfg)?;
                acc.add_assign(&grads)?;
                sum.focal += loss.focal;
                sum.visibility += loss.visibility;
                sum.total += loss.total;
            }
            acc.scale(1.0 / batch.len() as f64);
            sgd_step(&mut params, &acc, lr)?;
        }
        let k = samples.len() as f64;
        let entry = EpochLog { epoch: epoch + 1, focal: sum.focal / k, visibility: sum.visibility / k, total: sum.total / k };
        on_epoch(&entry, &params);
        log.push(entry);
    }
    Ok((params, log))
}

/// Prepares every pair of one split in parallel, keeping manifest order.
pub fn prepare_split(root: &Path, manifest: &Manifest, split: Split, config: &NetConfig) -> Result<Vec<TrainingSample>> {
    let pairs = load_split(root, manifest, split)?;
    pairs.par_iter().map(|(_, p)| TrainingSample::from_pair(config, p)).collect()
}

/// Trains a freshly initialized network on the train split of the dataset
/// at `root`. Fails before any work if a mesh appears in both splits.
pub fn train_dataset(
    root: &Path,
    net: NetConfig,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog, &NetworkParams),
) -> Result<(NetworkParams, Vec<EpochLog>)> {
    let manifest = Manifest::load(root)?;
    manifest.check_split()?;
    cfg.validate()?;
    let samples = prepare_split(root, &manifest, Split::Train, &net)?;
    if samples.is_empty() {
        return Err(Error::Dataset { path: root.to_path_buf(), message: "train split is empty".into() });
    }
    let params = NetworkParams::init(net, cfg.rng_seed)?;
    train(params, &samples, cfg, on_epoch)
}

/// `epoch,focal,visibility,total`, one row per epoch.
pub fn write_loss_csv<W: Write>(w: W, log: &[EpochLog]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for e in log {
        out.serialize(e).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_loss_csv<R: std::io::Read>(r: R) -> Result<Vec<EpochLog>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("loss log: {e}"))
}

/// Mean loss of `params` over `samples`, without updating anything.
pub fn mean_loss(params: &NetworkParams, samples: &[TrainingSample], cfg: &TrainConfig) -> Result<LossBreakdown> {
    let losses: Vec<LossBreakdown> =
        samples.par_iter().map(|s| evaluate_loss(params, s, cfg)).collect::<Result<_>>()?;
    let k = losses.len().max(1) as f64;
    Ok(losses.iter().fold(LossBreakdown::default(), |a, l| LossBreakdown {
        focal: a.focal + l.focal / k,
        visibility: a.visibility + l.visibility / k,
        total: a.total + l.total / k,
    }))
}
