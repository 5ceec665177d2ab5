//! Correspondence and registration metrics, and the benchmark runner.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpfh::{fpfh_match, FpfhConfig};
use crate::geom::{CorrespondenceSet, PointCloud};
use crate::net::{match_pair, NetworkParams};
use crate::registration::{predicted_displacements, register, IcpConfig, RansacConfig, RegistrationReport};
use crate::synth::SamplePair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub sigma_mm: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { sigma_mm: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0] }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_mm.is_empty() || self.sigma_mm.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("sigma list must be non-empty, finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `‖T(gt_j) − T(pred_j)‖ < σ`; at `σ = 0` only the exact index counts.
pub fn is_inlier(pred_j: usize, gt_j: usize, target: &PointCloud, sigma: f64) -> bool {
    if sigma == 0.0 {
        return pred_j == gt_j;
    }
    (target[gt_j] - target[pred_j]).norm() < sigma
}

/// Matches whose source point has a ground-truth target inside the σ ball.
/// `gt` maps each source index to its true target, if visible.
pub fn count_inliers(matches: &CorrespondenceSet, gt: &[Option<usize>], target: &PointCloud, sigma: f64) -> usize {
    matches
        .iter()
        .filter(|&&(i, j)| gt.get(i).copied().flatten().is_some_and(|g| is_inlier(j, g, target, sigma)))
        .count()
}

/// Inliers over predictions; `None` when nothing was predicted.
pub fn inlier_ratio(matches: &CorrespondenceSet, gt: &[Option<usize>], target: &PointCloud, sigma: f64) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    Some(count_inliers(matches, gt, target, sigma) as f64 / matches.len() as f64)
}

/// Inliers over the number of target points.
pub fn match_score(matches: &CorrespondenceSet, gt: &[Option<usize>], target: &PointCloud, sigma: f64) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::InvalidInput("match score needs a non-empty target".into()));
    }
    Ok(count_inliers(matches, gt, target, sigma) as f64 / target.len() as f64)
}

/// `sqrt((1/n) Σ ‖V_gt(i) − V_pred(i)‖²)`.
pub fn registration_error(v_gt: &[Vector3<f64>], v_pred: &[Vector3<f64>]) -> Result<f64> {
    if v_gt.len() != v_pred.len() {
        return Err(Error::Shape(format!("{} ground-truth and {} predicted displacements", v_gt.len(), v_pred.len())));
    }
    if v_gt.is_empty() {
        return Err(Error::InvalidInput("registration error of an empty field".into()));
    }
    let sq: f64 = v_gt.iter().zip(v_pred).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sq / v_gt.len() as f64).sqrt())
}

/// Expected inlier ratio when every visible source point is matched to a
/// uniformly random target point.
pub fn random_baseline_ir(pair: &SamplePair, sigma: f64) -> f64 {
    let t = &pair.target;
    let m = t.len() as f64;
    let hits: f64 = pair
        .gt_matches
        .iter()
        .map(|&(_, g)| (0..t.len()).filter(|&j| is_inlier(j, g, t, sigma)).count() as f64 / m)
        .sum();
    hits / pair.gt_matches.len().max(1) as f64
}

/// A correspondence source evaluated by the benchmark.
#[derive(Debug, Clone)]
pub enum Method {
    Learned(Box<NetworkParams>),
    Fpfh(FpfhConfig),
    GroundTruth,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Learned(_) => "learned",
            Method::Fpfh(_) => "fpfh",
            Method::GroundTruth => "ground_truth",
        }
    }

    /// Matches for `pair` and the seconds spent on feature extraction and
    /// matching (zero for ground truth).
    pub fn run(&self, pair: &SamplePair) -> Result<(CorrespondenceSet, f64)> {
        let start = Instant::now();
        let matches = match self {
            Method::Learned(p) => match_pair(p, &pair.source, &pair.target)?.matches,
            Method::Fpfh(cfg) => fpfh_match(&pair.source, &pair.target, cfg)?,
            Method::GroundTruth => return Ok((pair.gt_matches.clone(), 0.0)),
        };
        Ok((matches, start.elapsed().as_secs_f64()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub metrics: MetricConfig,
    pub ransac: RansacConfig,
    pub icp: IcpConfig,
    /// Skip RANSAC + ICP; RE is then absent.
    pub skip_registration: bool,
}

/// One method on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: String,
    pub method: String,
    pub n_matches: usize,
    pub feature_time_s: f64,
    /// Per σ, aligned with the report's σ list; `None` when undefined.
    pub inlier_ratio: Vec<Option<f64>>,
    pub match_score: Vec<f64>,
    pub registration_error_mm: Option<f64>,
    pub registration: Option<RegistrationReport>,
    pub failure: Option<String>,
}

/// Mean and population standard deviation over the defined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: None, std: None, count: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean: Some(mean), std: Some(var.sqrt()), count: v.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// One entry per σ.
    pub inlier_ratio: Vec<Stat>,
    pub match_score: Vec<Stat>,
    pub registration_error_mm: Stat,
    pub feature_time_s: Stat,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub sigma_mm: Vec<f64>,
    pub n_samples: usize,
    pub methods: Vec<MethodSummary>,
}

/// Evaluates one method on one pair; errors become a failure record.
pub fn evaluate_sample(id: &str, pair: &SamplePair, method: &Method, cfg: &BenchmarkConfig) -> SampleRecord {
    let k = cfg.metrics.sigma_mm.len();
    let mut rec = SampleRecord {
        sample: id.to_string(),
        method: method.name().to_string(),
        n_matches: 0,
        feature_time_s: 0.0,
        inlier_ratio: vec![None; k],
        match_score: vec![0.0; k],
        registration_error_mm: None,
        registration: None,
        failure: None,
    };
    let (matches, secs) = match method.run(pair) {
        Ok(r) => r,
        Err(e) => {
            rec.failure = Some(e.to_string());
            return rec;
        }
    };
    rec.n_matches = matches.len();
    rec.feature_time_s = secs;
    let gt = pair.gt_matches.source_to_target(pair.n_source());
    for (s, &sigma) in cfg.metrics.sigma_mm.iter().enumerate() {
        rec.inlier_ratio[s] = inlier_ratio(&matches, &gt, &pair.target, sigma);
        rec.match_score[s] = match_score(&matches, &gt, &pair.target, sigma).unwrap_or(0.0);
    }
    if cfg.skip_registration {
        return rec;
    }
    match register(&matches, &pair.source, &pair.target, &cfg.ransac, &cfg.icp) {
        Ok(r) => {
            if let Some(f) = &r.ransac_failure {
                rec.failure = Some(f.clone());
            } else {
                let v_pred = predicted_displacements(&pair.source, &r.transform);
                rec.registration_error_mm = registration_error(&pair.gt_displacement, &v_pred).ok();
            }
            rec.registration = Some(r);
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

/// Runs every method on every sample, sequentially so feature timings are
/// not skewed by contention.
pub fn run_benchmark(
    samples: &[(String, SamplePair)],
    methods: &[Method],
    cfg: &BenchmarkConfig,
) -> Result<(BenchmarkReport, Vec<SampleRecord>)> {
    cfg.metrics.validate()?;
    cfg.ransac.validate()?;
    cfg.icp.validate()?;
    let mut records = Vec::with_capacity(samples.len() * methods.len());
    for (id, pair) in samples {
        for m in methods {
            records.push(evaluate_sample(id, pair, m, cfg));
        }
    }
    let names: Vec<&str> = methods.iter().map(Method::name).collect();
    Ok((aggregate(&cfg.metrics.sigma_mm, samples.len(), &names, &records), records))
}

/// Per-method statistics from per-sample records.
pub fn aggregate(sigma_mm: &[f64], n_samples: usize, methods: &[&str], records: &[SampleRecord]) -> BenchmarkReport {
    let summaries = methods
        .iter()
        .map(|&name| {
            let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.method == name).collect();
            MethodSummary {
                method: name.to_string(),
                inlier_ratio: (0..sigma_mm.len()).map(|s| Stat::of(mine.iter().filter_map(|r| r.inlier_ratio[s]))).collect(),
                match_score: (0..sigma_mm.len()).map(|s| Stat::of(mine.iter().map(|r| r.match_score[s]))).collect(),
                registration_error_mm: Stat::of(mine.iter().filter_map(|r| r.registration_error_mm)),
                feature_time_s: Stat::of(mine.iter().filter(|r| r.failure.is_none()).map(|r| r.feature_time_s)),
                failures: mine.iter().filter(|r| r.failure.is_some()).count(),
            }
        })
        .collect();
    BenchmarkReport { sigma_mm: sigma_mm.to_vec(), n_samples, methods: summaries }
}

fn pct(s: &Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{:.2}±{:.2}", 100.0 * m, 100.0 * d),
        _ => "n/a".into(),
    }
}

impl BenchmarkReport {
    /// Two blocks: IR and MS (percent) per σ, then RE and feature time.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header: String = self.sigma_mm.iter().map(|s| format!("{:>14}", format!("σ={s}"))).collect();
        for (title, pick) in [("IR (%)", 0), ("MS (%)", 1)] {
            let _ = writeln!(out, "{title:<14}{header}");
            for m in &self.methods {
                let row = if pick == 0 { &m.inlier_ratio } else { &m.match_score };
                let cells: String = row.iter().map(|s| format!("{:>14}", pct(s))).collect();
                let _ = writeln!(out, "{:<14}{cells}", m.method);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{:<14}{:>16}{:>16}{:>10}", "method", "RE (mm)", "time (s)", "failures");
        for m in &self.methods {
            let re = match (m.registration_error_mm.mean, m.registration_error_mm.std) {
                (Some(a), Some(b)) => format!("{a:.2}±{b:.2}"),
                _ => "n/a".into(),
            };
            let t = m.feature_time_s.mean.map_or("n/a".into(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{:<14}{re:>16}{t:>16}{:>10}", m.method, m.failures);
        }
        let _ = writeln!(out, "samples: {}", self.n_samples);
        out
    }
}

/// One row per record: identifiers, counts, RE, then IR and MS per σ.
pub fn write_records_csv<W: Write>(w: W, sigma_mm: &[f64], records: &[SampleRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> =
        ["sample", "method", "n_matches", "feature_time_s", "re_mm", "failure"].map(String::from).to_vec();
    header.extend(sigma_mm.iter().map(|s| format!("ir_{s}")));
    header.extend(sigma_mm.iter().map(|s| format!("ms_{s}")));
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("record csv: {e}"));
    out.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        let mut row = vec![
            r.sample.clone(),
            r.method.clone(),
            r.n_matches.to_string(),
            r.feature_time_s.to_string(),
            opt(r.registration_error_mm),
            r.failure.clone().unwrap_or_default(),
        ];
        row.extend(r.inlier_ratio.iter().map(|v| opt(*v)));
        row.extend(r.match_score.iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
