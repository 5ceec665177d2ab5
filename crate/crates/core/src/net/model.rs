use std::collections::HashMap;

use ndarray::Array2;

use super::features::PreparedCloud;
use super::params::{AttentionParams, NetworkParams};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geom::{CorrespondenceSet, PointCloud};

/// Visibility scores at or below this value are masked out.
pub const VISIBILITY_THRESHOLD: f64 = 0.9;

struct Linear {
    w: Var,
    b: Var,
}

fn linear(g: &mut Graph, x: Var, l: &Linear) -> Result<Var> {
    let y = g.matmul_t(x, l.w)?;
    g.add_row(y, l.b)
}

struct Attention {
    wq: Var,
    wk: Var,
    wv: Var,
    fc: Linear,
}

/// `x + FC([q, softmax(q kᵀ/√d) v])` with queries from `xq` and keys/values from `xkv`.
fn attend(g: &mut Graph, xq: Var, xkv: Var, p: &Attention) -> Result<Var> {
    let d = g.value(xq).ncols() as f64;
    let q = g.matmul_t(xq, p.wq)?;
    let k = g.matmul_t(xkv, p.wk)?;
    let v = g.matmul_t(xkv, p.wv)?;
    let logits = g.matmul_t(q, k)?;
    let logits = g.scale(logits, 1.0 / d.sqrt());
    let a = g.softmax_rows(logits);
    let av = g.matmul(a, v)?;
    let h = g.concat_cols(q, av)?;
    let f = linear(g, h, &p.fc)?;
    g.add(xq, f)
}

fn attention_leaves(g: &mut Graph, p: &AttentionParams) -> Attention {
    Attention {
        wq: g.leaf(p.wq.clone()),
        wk: g.leaf(p.wk.clone()),
        wv: g.leaf(p.wv.clone()),
        fc: Linear { w: g.leaf(p.fc_w.clone()), b: g.leaf(p.fc_b.clone()) },
    }
}

/// Node handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// One leaf per parameter array, in parameter order.
    pub params: Vec<Var>,
    /// Source features entering the descriptor and visibility heads.
    pub refined_s: Var,
    pub desc_s: Var,
    pub desc_t: Var,
    /// Head output before clamping (n×1).
    pub visibility_raw: Var,
    pub visibility: Var,
    pub scores: Var,
    pub confidence: Var,
}

/// Records encoder → attention → propagation → heads → dual-softmax on `g`.
pub fn build_forward(g: &mut Graph, params: &NetworkParams, src: &PreparedCloud, tgt: &PreparedCloud) -> Result<ForwardVars> {
    let cfg = &params.config;
    for c in [src, tgt] {
        if c.features.ncols() != cfg.input_width() {
            return Err(Error::Shape(format!(
                "prepared cloud has {} input features, network expects {}",
                c.features.ncols(),
                cfg.input_width()
            )));
        }
    }
    let leaves: Vec<Var> = params.iter().map(|(_, a)| g.leaf(a.clone())).collect();
    let by_name: HashMap<&str, Var> = params.iter().map(|(n, _)| n).zip(leaves.iter().copied()).collect();
    let p = |n: &str| by_name[n];
    let lin = |w: &str, b: &str| Linear { w: p(w), b: p(b) };
    let attn = |prefix: String| Attention {
        wq: p(&format!("{prefix}.wq")),
        wk: p(&format!("{prefix}.wk")),
        wv: p(&format!("{prefix}.wv")),
        fc: Linear { w: p(&format!("{prefix}.fc_w")), b: p(&format!("{prefix}.fc_b")) },
    };

    let (enc1, enc2) = (lin("encoder.w1", "encoder.b1"), lin("encoder.w2", "encoder.b2"));
    let encode = |g: &mut Graph, c: &PreparedCloud| -> Result<Var> {
        let x = g.leaf(c.features.clone());
        let h = linear(g, x, &enc1)?;
        let h = g.tanh(h);
        linear(g, h, &enc2)
    };
    let hs = encode(g, src)?;
    let ht = encode(g, tgt)?;

    let mut xs = g.gather_rows(hs, &src.super_points)?;
    let mut xt = g.gather_rows(ht, &tgt.super_points)?;
    for b in 0..cfg.n_blocks {
        let sa = attn(format!("block{b}.self"));
        xs = attend(g, xs, xs, &sa)?;
        xt = attend(g, xt, xt, &sa)?;
        let ca = attn(format!("block{b}.cross"));
        let ns = attend(g, xs, xt, &ca)?;
        let nt = attend(g, xt, xs, &ca)?;
        (xs, xt) = (ns, nt);
    }

    let refine = lin("refine.w", "refine.b");
    let descriptor = lin("descriptor.w", "descriptor.b");
    let decode = |g: &mut Graph, h: Var, x: Var, c: &PreparedCloud| -> Result<(Var, Var)> {
        let cond = g.gather_rows(x, &c.attach)?;
        let cat = g.concat_cols(h, cond)?;
        let r = linear(g, cat, &refine)?;
        let r = g.tanh(r);
        Ok((r, linear(g, r, &descriptor)?))
    };
    let (rs, desc_s) = decode(g, hs, xs, src)?;
    let (_, desc_t) = decode(g, ht, xt, tgt)?;

    let vis_logit = g.matmul_t(rs, p("visibility.w"))?;
    let vis_logit = g.scale(vis_logit, 1.0 / (cfg.d as f64).sqrt());
    let visibility_raw = g.add_row(vis_logit, p("visibility.b"))?;
    let visibility = g.clamp01(visibility_raw);

    let scores = g.matmul_t(desc_s, desc_t)?;
    let rows = g.softmax_rows(scores);
    let cols = g.softmax_cols(scores);
    let confidence = g.mul(rows, cols)?;
    Ok(ForwardVars { params: leaves, refined_s: rs, desc_s, desc_t, visibility_raw, visibility, scores, confidence })
}

/// Per-source-point visibility after clamping, with the strict 0.9 mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityScores {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

impl VisibilityScores {
    pub fn from_raw(raw: &[f64]) -> Self {
        let scores: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mask = scores.iter().map(|&o| o > VISIBILITY_THRESHOLD).collect();
        Self { scores, mask }
    }
}

/// The visibility head on features `x_s`: a width-1 point-wise convolution
/// whose input is scaled by `1/√d`, then clamped.
pub fn decode_visibility(x_s: &Array2<f64>, w: &Array2<f64>, b: f64) -> Result<VisibilityScores> {
    if w.dim() != (1, x_s.ncols()) {
        return Err(Error::Shape(format!("visibility weights {:?} for width {}", w.dim(), x_s.ncols())));
    }
    let scale = 1.0 / (x_s.ncols() as f64).sqrt();
    let raw: Vec<f64> = x_s.dot(&w.t()).iter().map(|v| v * scale + b).collect();
    Ok(VisibilityScores::from_raw(&raw))
}

pub fn self_attention(x: &Array2<f64>, p: &AttentionParams) -> Result<Array2<f64>> {
    let mut g = Graph::new();
    let a = attention_leaves(&mut g, p);
    let xv = g.leaf(x.clone());
    let out = attend(&mut g, xv, xv, &a)?;
    Ok(g.value(out).clone())
}

/// Both clouds updated from the pre-update features of the other.
pub fn cross_attention(xs: &Array2<f64>, xt: &Array2<f64>, p: &AttentionParams) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut g = Graph::new();
    let a = attention_leaves(&mut g, p);
    let (s, t) = (g.leaf(xs.clone()), g.leaf(xt.clone()));
    let os = attend(&mut g, s, t, &a)?;
    let ot = attend(&mut g, t, s, &a)?;
    Ok((g.value(os).clone(), g.value(ot).clone()))
}

pub fn score_matrix(xs: &Array2<f64>, xt: &Array2<f64>) -> Result<Array2<f64>> {
    if xs.ncols() != xt.ncols() {
        return Err(Error::Shape(format!("descriptor widths {} and {} differ", xs.ncols(), xt.ncols())));
    }
    Ok(xs.dot(&xt.t()))
}

/// Row softmax times column softmax, elementwise.
pub fn dual_softmax(s: &Array2<f64>) -> Array2<f64> {
    crate::autodiff::softmax_rows(s) * crate::autodiff::softmax_cols(s)
}

fn first_argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, &v) in values.enumerate() {
        if v > best.0 || i == 0 {
            best = (v, i);
        }
    }
    best.1
}

/// Pairs that are the maximum of both their row and their column; the
/// lowest index wins ties.
pub fn mutual_nn_select(m: &Array2<f64>) -> CorrespondenceSet {
    if m.is_empty() {
        return CorrespondenceSet::empty();
    }
    let row_best: Vec<usize> = m.rows().into_iter().map(|r| first_argmax(r.iter())).collect();
    let col_best: Vec<usize> = m.columns().into_iter().map(|c| first_argmax(c.iter())).collect();
    let pairs = row_best.iter().enumerate().filter(|&(i, &j)| col_best[j] == i).map(|(i, &j)| (i, j)).collect();
    CorrespondenceSet::new(pairs).expect("mutual maxima are one-to-one")
}

/// Keeps pairs whose source point is marked visible.
pub fn apply_visibility_mask(matches: &CorrespondenceSet, mask: &[bool]) -> CorrespondenceSet {
    let mut out = matches.clone();
    out.retain(|&(i, _)| mask.get(i).copied().unwrap_or(false));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutput {
    /// Mutual nearest neighbors surviving the visibility mask.
    pub matches: CorrespondenceSet,
    /// `M(i, j)` of every kept pair, aligned with `matches`.
    pub match_confidence: Vec<f64>,
    pub confidence: Array2<f64>,
    pub visibility: VisibilityScores,
    pub desc_s: Array2<f64>,
    pub desc_t: Array2<f64>,
}

pub fn prepare(params: &NetworkParams, cloud: &PointCloud) -> Result<PreparedCloud> {
    let c = &params.config;
    PreparedCloud::new(cloud, &c.scales, c.length_scale_mm, c.n_super)
}

pub fn match_prepared(params: &NetworkParams, src: &PreparedCloud, tgt: &PreparedCloud) -> Result<MatchOutput> {
    let mut g = Graph::new();
    let f = build_forward(&mut g, params, src, tgt)?;
    if let Some((node, op)) = g.first_non_finite() {
        return Err(Error::NonFinite { node, op });
    }
    let confidence = g.value(f.confidence).clone();
    let raw: Vec<f64> = g.value(f.visibility_raw).iter().copied().collect();
    let visibility = VisibilityScores::from_raw(&raw);
    let matches = apply_visibility_mask(&mutual_nn_select(&confidence), &visibility.mask);
    let match_confidence = matches.iter().map(|&(i, j)| confidence[[i, j]]).collect();
    Ok(MatchOutput {
        matches,
        match_confidence,
        confidence,
        visibility,
        desc_s: g.value(f.desc_s).clone(),
        desc_t: g.value(f.desc_t).clone(),
    })
}

/// Full forward pipeline on raw clouds.
pub fn match_pair(params: &NetworkParams, source: &PointCloud, target: &PointCloud) -> Result<MatchOutput> {
    match_prepared(params, &prepare(params, source)?, &prepare(params, target)?)
}

/// Point-wise encoder output (before attention) for one cloud.
pub fn encode_local_features(params: &NetworkParams, cloud: &PointCloud) -> Result<Array2<f64>> {
    let prep = prepare(params, cloud)?;
    let mut g = Graph::new();
    let l = |g: &mut Graph, n: &str| -> Result<Var> { Ok(g.leaf(params.get(n)?.clone())) };
    let enc1 = Linear { w: l(&mut g, "encoder.w1")?, b: l(&mut g, "encoder.b1")? };
    let enc2 = Linear { w: l(&mut g, "encoder.w2")?, b: l(&mut g, "encoder.b2")? };
    let x = g.leaf(prep.features);
    let h = linear(&mut g, x, &enc1)?;
    let h = g.tanh(h);
    let out = linear(&mut g, h, &enc2)?;
    Ok(g.value(out).clone())
}
