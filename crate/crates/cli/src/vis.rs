use surfreg::ply::PlyData;
use surfreg::{CorrespondenceSet, PointCloud};

pub const GRAY: [u8; 3] = [128, 128, 128];

/// Fully saturated hue for match `k` of `n`; never gray.
fn hue_color(k: usize, n: usize) -> [u8; 3] {
    let h = 6.0 * k as f64 / n.max(1) as f64;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|c: f64| (40.0 + 215.0 * c).round() as u8)
}

/// Source and target clouds with matched points sharing a color and
/// unmatched points gray, plus an edge PLY with one segment per match.
pub fn colored_pair(source: &PointCloud, target: &PointCloud, matches: &CorrespondenceSet) -> (PlyData, PlyData, PlyData) {
    let mut sc = vec![GRAY; source.len()];
    let mut tc = vec![GRAY; target.len()];
    let mut seg = PlyData::default();
    let mut seg_colors = Vec::with_capacity(2 * matches.len());
    for (k, &(i, j)) in matches.iter().enumerate() {
        let c = hue_color(k, matches.len());
        sc[i] = c;
        tc[j] = c;
        seg.points.push(source[i]);
        seg.points.push(target[j]);
        seg_colors.extend([c, c]);
        seg.edges.push([2 * k, 2 * k + 1]);
    }
    seg.colors = Some(seg_colors);
    let src = PlyData { colors: Some(sc), ..PlyData::from_points(source.points().to_vec()) };
    let tgt = PlyData { colors: Some(tc), ..PlyData::from_points(target.points().to_vec()) };
    (src, tgt, seg)
}
