//! Rigid registration from correspondences: Kabsch fit, RANSAC over
//! matches, then point-to-point ICP on the raw clouds.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, CorrespondenceSet, NeighborIndex, PointCloud, RigidTransform};
use crate::rng;

/// Relative size of the second principal extent below which a point set
/// counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

fn spread(points: &[Point3<f64>], c: &Point3<f64>) -> (f64, f64) {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    (ev[0], ev[1])
}

/// Least-squares `R, t` minimizing `Σ‖R s_i + t − d_i‖²`, with the
/// reflection case folded back to `det R = +1`.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::Shape(format!("{} source points for {} targets", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::TooFewMatches { required: 3, got: src.len() });
    }
    let (cs, cd) = (centroid(src), centroid(dst));
    for (pts, c, which) in [(src, &cs, "source"), (dst, &cd, "target")] {
        let (l1, l2) = spread(pts, c);
        if !(l1 > 0.0) || l2 <= COLLINEAR_TOL * l1 {
            return Err(Error::Degenerate(format!("{which} points are collinear or coincident")));
        }
    }
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = v * fix * u.transpose();
    let translation = cd.coords - rotation * cs.coords;
    Ok(RigidTransform::new(rotation, translation))
}

/// Root mean square of `‖T(s_i) − d_i‖`.
pub fn rms_residual(t: &RigidTransform, src: &[Point3<f64>], dst: &[Point3<f64>]) -> f64 {
    let sum: f64 = src.iter().zip(dst).map(|(s, d)| (t.apply(s) - d).norm_squared()).sum();
    (sum / src.len().max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub n_iterations: usize,
    pub sample_size: usize,
    pub inlier_threshold_mm: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { n_iterations: 50_000, sample_size: 3, inlier_threshold_mm: 5.0, rng_seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 3 || self.n_iterations == 0 || !(self.inlier_threshold_mm > 0.0) {
            return Err(Error::InvalidInput(
                "RANSAC needs sample_size >= 3, at least one iteration and a positive threshold".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub transform: RigidTransform,
    /// Matches supporting the best hypothesis; the final fit uses exactly these.
    pub inliers: CorrespondenceSet,
    /// RMS residual of the final fit over `inliers`.
    pub inlier_rms: f64,
    /// Index of the winning hypothesis.
    pub hypothesis: usize,
}

#[derive(Debug, Clone, Copy)]
struct Score {
    count: usize,
    rms: f64,
    index: usize,
}

impl Score {
    /// More inliers, then lower RMS, then lower index. A total order, so the
    /// parallel reduction is independent of scheduling.
    fn better(self, other: Self) -> Self {
        let key = |s: &Self| (std::cmp::Reverse(s.count), s.rms, s.index);
        let (a, b) = (key(&self), key(&other));
        match a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)) {
            std::cmp::Ordering::Greater => other,
            _ => self,
        }
    }
}

fn inliers_of(t: &RigidTransform, src: &[Point3<f64>], dst: &[Point3<f64>], threshold: f64) -> (Vec<usize>, f64) {
    let mut ids = Vec::new();
    let mut sq = 0.0;
    for (k, (s, d)) in src.iter().zip(dst).enumerate() {
        let r = (t.apply(s) - d).norm_squared();
        if r < threshold * threshold {
            ids.push(k);
            sq += r;
        }
    }
    let rms = if ids.is_empty() { f64::INFINITY } else { (sq / ids.len() as f64).sqrt() };
    (ids, rms)
}

/// Distinct match indices for hypothesis `h`.
fn draw(cfg: &RansacConfig, h: usize, k: usize) -> Vec<usize> {
    let mut r = rng::seeded(rng::derive_seed(cfg.rng_seed, h as u64));
    let mut pick: Vec<usize> = Vec::with_capacity(cfg.sample_size);
    while pick.len() < cfg.sample_size {
        let c = r.random_range(0..k);
        if !pick.contains(&c) {
            pick.push(c);
        }
    }
    pick
}

/// Hypothesis `h` draws its minimal sample from its own stream
/// `derive_seed(rng_seed, h)`, so results do not depend on thread count.
pub fn ransac_rigid(
    matches: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    cfg.validate()?;
    matches.check_bounds(source.len(), target.len())?;
    let k = matches.len();
    if k < cfg.sample_size {
        return Err(Error::TooFewMatches { required: cfg.sample_size, got: k });
    }
    let src: Vec<Point3<f64>> = matches.iter().map(|&(i, _)| source[i]).collect();
    let dst: Vec<Point3<f64>> = matches.iter().map(|&(_, j)| target[j]).collect();
    let none = Score { count: 0, rms: f64::INFINITY, index: usize::MAX };
    let best = (0..cfg.n_iterations)
        .into_par_iter()
        .map(|h| {
            let pick = draw(cfg, h, k);
            let s: Vec<_> = pick.iter().map(|&c| src[c]).collect();
            let d: Vec<_> = pick.iter().map(|&c| dst[c]).collect();
            match kabsch(&s, &d) {
                Ok(t) => {
                    let (ids, rms) = inliers_of(&t, &src, &dst, cfg.inlier_threshold_mm);
                    Score { count: ids.len(), rms, index: h }
                }
                Err(_) => none,
            }
        })
        .reduce(|| none, Score::better);
    if best.count < 3 {
        return Err(Error::RansacFailed { inliers: best.count });
    }
    // replay the winner's draw
    let pick = draw(cfg, best.index, k);
    let s: Vec<_> = pick.iter().map(|&c| src[c]).collect();
    let d: Vec<_> = pick.iter().map(|&c| dst[c]).collect();
    let hyp = kabsch(&s, &d)?;
    let (ids, _) = inliers_of(&hyp, &src, &dst, cfg.inlier_threshold_mm);
    let s_in: Vec<_> = ids.iter().map(|&c| src[c]).collect();
    let d_in: Vec<_> = ids.iter().map(|&c| dst[c]).collect();
    let transform = kabsch(&s_in, &d_in).unwrap_or(hyp);
    let inliers = CorrespondenceSet::new(ids.iter().map(|&c| matches.pairs()[c]).collect())?;
    Ok(RansacResult { inlier_rms: rms_residual(&transform, &s_in, &d_in), transform, inliers, hypothesis: best.index })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once no source point moves more than this between iterations.
    pub convergence_mm: f64,
    pub max_corr_dist_mm: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iterations: 50, convergence_mm: 1e-4, max_corr_dist_mm: 10.0 }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.convergence_mm > 0.0) || !(self.max_corr_dist_mm > 0.0) {
            return Err(Error::InvalidInput("ICP settings must all be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Truncated RMS before each iteration and after the last one:
    /// `sqrt(mean_j min(d_j, gate)²)` over target points.
    pub rms_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// No target point had a source point within the gate; `transform` is the input.
    pub failed: bool,
}

/// Largest displacement of any source point between two poses.
fn pose_change(a: &RigidTransform, b: &RigidTransform, pts: &[Point3<f64>]) -> f64 {
    pts.iter().map(|p| (a.apply(p) - b.apply(p)).norm()).fold(0.0, f64::max)
}

/// Point-to-point ICP. Every target point is paired with its nearest
/// transformed source point; pairs beyond `max_corr_dist_mm` are dropped.
/// The target is the partial cloud, so pairing from its side keeps hidden
/// source regions out of the fit. The truncated objective cannot increase.
pub fn icp_refine(source: &PointCloud, target: &PointCloud, init: &RigidTransform, cfg: &IcpConfig) -> Result<IcpResult> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("ICP needs two non-empty clouds".into()));
    }
    let index = NeighborIndex::from_cloud(source);
    let gate = cfg.max_corr_dist_mm;
    // correspondences and truncated RMS under pose `t`
    let pair_up = |t: &RigidTransform| {
        let inv = t.inverse();
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut sq = 0.0;
        for q in target.iter() {
            let nb = index.nearest(&inv.apply(q));
            if nb.distance < gate {
                src.push(source[nb.index]);
                dst.push(*q);
                sq += nb.distance * nb.distance;
            } else {
                sq += gate * gate;
            }
        }
        (src, dst, (sq / target.len() as f64).sqrt())
    };
    let mut current = *init;
    let (mut src, mut dst, rms) = pair_up(&current);
    let mut trace = vec![rms];
    if src.is_empty() {
        return Ok(IcpResult { transform: current, rms_trace: trace, iterations: 0, converged: false, failed: true });
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let next = match kabsch(&src, &dst) {
            Ok(t) => t,
            Err(_) => break,
        };
        iterations += 1;
        let change = pose_change(&current, &next, source.points());
        let (s, d, rms) = pair_up(&next);
        // a refit never raises the truncated objective in exact arithmetic;
        // a round-off increase keeps the previous pose
        if rms > *trace.last().expect("non-empty") {
            converged = change < cfg.convergence_mm;
            break;
        }
        current = next;
        trace.push(rms);
        (src, dst) = (s, d);
        if change < cfg.convergence_mm {
            converged = true;
            break;
        }
        if src.len() < 3 {
            break;
        }
    }
    Ok(IcpResult { transform: current, rms_trace: trace, iterations, converged, failed: false })
}

/// `V_pred(i) = T(S(i)) − S(i)`.
pub fn predicted_displacements(source: &PointCloud, t: &RigidTransform) -> Vec<Vector3<f64>> {
    source.iter().map(|p| t.apply(p) - p).collect()
}

/// Outcome of RANSAC followed by ICP; failures are recorded, not raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// Final source → target transform (identity when RANSAC failed).
    pub transform: RigidTransform,
    pub n_matches: usize,
    pub ransac_inliers: usize,
    pub ransac_inlier_rms: Option<f64>,
    /// Set when RANSAC could not produce a hypothesis.
    pub ransac_failure: Option<String>,
    pub icp_rms_trace: Vec<f64>,
    pub icp_iterations: usize,
    pub icp_converged: bool,
    pub icp_failed: bool,
}

/// RANSAC over `matches`, then ICP on the raw clouds from the RANSAC pose.
pub fn register(
    matches: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    ransac: &RansacConfig,
    icp: &IcpConfig,
) -> Result<RegistrationReport> {
    let (init, inliers, inlier_rms, failure) = match ransac_rigid(matches, source, target, ransac) {
        Ok(r) => (r.transform, r.inliers.len(), Some(r.inlier_rms), None),
        Err(e @ (Error::TooFewMatches { .. } | Error::RansacFailed { .. })) => {
            (RigidTransform::identity(), 0, None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let (icp_res, icp_failed) = if failure.is_some() {
        (None, true)
    } else {
        let r = icp_refine(source, target, &init, icp)?;
        let failed = r.failed;
        (Some(r), failed)
    };
    Ok(RegistrationReport {
        transform: icp_res.as_ref().map_or(init, |r| r.transform),
        n_matches: matches.len(),
        ransac_inliers: inliers,
        ransac_inlier_rms: inlier_rms,
        ransac_failure: failure,
        icp_iterations: icp_res.as_ref().map_or(0, |r| r.iterations),
        icp_converged: icp_res.as_ref().is_some_and(|r| r.converged),
        icp_rms_trace: icp_res.map(|r| r.rms_trace).unwrap_or_default(),
        icp_failed,
    })
}
