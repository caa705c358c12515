//! Centerline evaluation: the weighted symmetric mean distance and the overlap
//! measures OV, OF, OT and AI.
//!
//! OF and OT follow this crate's operationalization: OF counts the reference
//! prefix before the first missed point together with the output points
//! matched to it, over the same denominator as OV; OT restricts both sets to
//! reference points of radius at least [`OT_MIN_RADIUS`], assigning each output
//! point to its nearest reference point.

use serde::{Deserialize, Serialize};

use crate::centerline::CenterlineTree;
use crate::error::{Error, Result};
use crate::geom::Point3;

/// Default resampling spacing in mm.
pub const DEFAULT_SPACING: f64 = 0.5;

/// Reference radius from which a point counts toward OT.
pub const OT_MIN_RADIUS: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCenterline {
    pub points: Vec<Point3>,
    pub radii: Option<Vec<f64>>,
}

impl SampledCenterline {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self { points, radii: None }
    }

    pub fn with_radii(points: Vec<Point3>, radii: Vec<f64>) -> Result<Self> {
        if points.len() != radii.len() {
            return Err(Error::Centerline("points and radii differ in length".into()));
        }
        Ok(Self { points, radii: Some(radii) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every branch resampled at `spacing` and concatenated in branch order.
    /// Branches shorter than one spacing keep their two end points.
    pub fn from_tree(tree: &CenterlineTree, spacing: f64) -> Result<Self> {
        let mut points = Vec::new();
        let mut radii = Vec::new();
        for b in &tree.branches {
            if b.points.is_empty() {
                continue;
            }
            let len: f64 = b.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
            if len >= spacing {
                let s = resample_with_radii(&b.points, Some(&b.radii), spacing)?;
                points.extend(s.points);
                radii.extend(s.radii.unwrap_or_default());
            } else {
                points.push(b.points[0]);
                radii.push(b.radii[0]);
                if b.points.len() > 1 {
                    points.push(*b.points.last().unwrap());
                    radii.push(*b.radii.last().unwrap());
                }
            }
        }
        Ok(Self { points, radii: Some(radii) })
    }
}

/// Resamples a polyline at uniform arc-length spacing as close to `spacing`
/// as divides the total length, end points included.
pub fn resample(polyline: &[Point3], spacing: f64) -> Result<SampledCenterline> {
    resample_with_radii(polyline, None, spacing)
}

pub fn resample_with_radii(polyline: &[Point3], radii: Option<&[f64]>, spacing: f64) -> Result<SampledCenterline> {
    if !(spacing > 0.0) {
        return Err(Error::param("resampling spacing must be positive"));
    }
    if polyline.len() < 2 {
        return Err(Error::Centerline("polyline needs at least 2 points".into()));
    }
    if let Some(r) = radii {
        if r.len() != polyline.len() {
            return Err(Error::Centerline("points and radii differ in length".into()));
        }
    }
    let mut cum = Vec::with_capacity(polyline.len());
    cum.push(0.0);
    for w in polyline.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    if !(total >= spacing) || !total.is_finite() {
        return Err(Error::Centerline(format!("polyline length {total} is shorter than spacing {spacing}")));
    }
    let n = (total / spacing).round().max(1.0) as usize;
    let mut points = Vec::with_capacity(n + 1);
    let mut out_r = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for i in 0..=n {
        let s = if i == n { total } else { total * i as f64 / n as f64 };
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        points.push(polyline[seg] + (polyline[seg + 1] - polyline[seg]) * t);
        if let Some(r) = radii {
            out_r.push(r[seg] + (r[seg + 1] - r[seg]) * t);
        }
    }
    Ok(SampledCenterline { points, radii: radii.map(|_| out_r) })
}

/// Uniform-grid index over a point set for nearest-neighbour and radius queries.
pub struct PointIndex<'a> {
    points: &'a [Point3],
    lo: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Point3], cell: f64) -> Self {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Point3::zeros();
            hi = Point3::zeros();
        }
        let extent = hi - lo;
        // keep the grid modest for very spread-out sets
        let mut cell = cell.max(1e-6);
        while (0..3).map(|a| (extent[a] / cell) as usize + 1).product::<usize>() > 4 * points.len().max(1) + 64 {
            cell *= 2.0;
        }
        let dims = [0, 1, 2].map(|a| (extent[a] / cell) as usize + 1);
        let mut counts = vec![0usize; dims[0] * dims[1] * dims[2] + 1];
        let cell_of = |p: &Point3| {
            let c = [0, 1, 2].map(|a| (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1));
            c[0] + dims[0] * (c[1] + dims[1] * c[2])
        };
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self { points, lo, cell, dims, starts: counts, order }
    }

    fn cell_coord(&self, p: &Point3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.lo[a]) / self.cell).floor() as i64)
    }

    fn visit_cell(&self, c: [i64; 3], mut f: impl FnMut(usize)) {
        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as i64) {
            return;
        }
        let id = c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize);
        for &i in &self.order[self.starts[id]..self.starts[id + 1]] {
            f(i);
        }
    }

    /// Index and distance of the nearest point; lowest index on ties.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = self.cell_coord(q);
        let max_ring = (0..3)
            .map(|a| (c[a].abs() + self.dims[a] as i64).max(1))
            .max()
            .unwrap();
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        self.visit_cell([c[0] + dx, c[1] + dy, c[2] + dz], |i| {
                            let d = (self.points[i] - q).norm();
                            if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                                best = Some((i, d));
                            }
                        });
                    }
                }
            }
            // every unvisited cell is at least `ring * cell` away
            if let Some((_, d)) = best {
                if d <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }

    /// Calls `f` for every point within distance `radius` of `q` (inclusive).
    pub fn within(&self, q: &Point3, radius: f64, mut f: impl FnMut(usize, f64)) {
        let lo = self.cell_coord(&(q - Point3::repeat(radius)));
        let hi = self.cell_coord(&(q + Point3::repeat(radius)));
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                    self.visit_cell([x, y, z], |i| {
                        let d = (self.points[i] - q).norm();
                        if d <= radius {
                            f(i, d);
                        }
                    });
                }
            }
        }
    }
}

fn mean_nearest(from: &[Point3], to: &PointIndex) -> f64 {
    if from.is_empty() {
        return 0.0;
    }
    from.iter().map(|p| to.nearest(p).map_or(0.0, |(_, d)| d)).sum::<f64>() / from.len() as f64
}

/// `w * mean_op(min d to ref) + (1 - w) * mean_ref(min d to op)`.
pub fn centerline_distance(op: &SampledCenterline, reference: &SampledCenterline, w: f64) -> Result<f64> {
    if op.is_empty() || reference.is_empty() {
        return Err(Error::Centerline("centerline distance needs two non-empty point sets".into()));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::param(format!("distance weight {w} outside [0, 1]")));
    }
    let ref_index = PointIndex::new(&reference.points, 1.0);
    let op_index = PointIndex::new(&op.points, 1.0);
    Ok(w * mean_nearest(&op.points, &ref_index) + (1.0 - w) * mean_nearest(&reference.points, &op_index))
}

/// Per-point labels behind the overlap measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapLabels {
    /// Reference point is within its radius of some output point.
    pub ref_hit: Vec<bool>,
    /// Output point is within the radius of some reference point.
    pub op_hit: Vec<bool>,
    /// Output point is within the radius of a reference point before the first miss.
    pub op_in_prefix: Vec<bool>,
    /// Nearest reference point of every output point.
    pub op_nearest_ref: Vec<usize>,
    /// Index of the first missed reference point, or the reference length.
    pub first_miss: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapMeasures {
    pub ov: f64,
    pub of: f64,
    pub ot: f64,
    pub ai: Option<f64>,
    pub tpr: usize,
    pub false_negatives: usize,
    pub tpm: usize,
    pub false_positives: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Labels every point using strict `distance < radius` matching against the
/// reference radii.
pub fn overlap_labels(op: &SampledCenterline, reference: &SampledCenterline) -> Result<OverlapLabels> {
    let radii = reference
        .radii
        .as_ref()
        .ok_or_else(|| Error::Centerline("reference centerline needs radii".into()))?;
    let max_r = radii.iter().copied().fold(0.0, f64::max);
    let ref_index = PointIndex::new(&reference.points, max_r.max(0.5));
    let op_index = PointIndex::new(&op.points, max_r.max(0.5));

    let ref_hit: Vec<bool> = reference
        .points
        .iter()
        .zip(radii)
        .map(|(p, &r)| op_index.nearest(p).is_some_and(|(_, d)| d < r))
        .collect();
    let first_miss = ref_hit.iter().position(|h| !h).unwrap_or(ref_hit.len());

    let mut op_hit = vec![false; op.len()];
    let mut op_in_prefix = vec![false; op.len()];
    let mut op_nearest_ref = vec![0; op.len()];
    for (i, p) in op.points.iter().enumerate() {
        ref_index.within(p, max_r, |j, d| {
            if d < radii[j] {
                op_hit[i] = true;
                if j < first_miss {
                    op_in_prefix[i] = true;
                }
            }
        });
        op_nearest_ref[i] = ref_index.nearest(p).map_or(0, |(j, _)| j);
    }
    Ok(OverlapLabels { ref_hit, op_hit, op_in_prefix, op_nearest_ref, first_miss })
}

/// Overlap measures from point labels; `min_dist` supplies the nearest
/// distances used by AI.
pub fn measures_from_labels(
    labels: &OverlapLabels,
    reference_radii: &[f64],
    ref_min_dist: &[f64],
    op_min_dist: &[f64],
) -> OverlapMeasures {
    let tpr = labels.ref_hit.iter().filter(|h| **h).count();
    let fneg = labels.ref_hit.len() - tpr;
    let tpm = labels.op_hit.iter().filter(|h| **h).count();
    let fpos = labels.op_hit.len() - tpm;
    let total = tpr + fneg + tpm + fpos;

    let ov = ratio(tpm + tpr, total);
    let of = ratio(labels.first_miss + labels.op_in_prefix.iter().filter(|h| **h).count(), total);

    let relevant = |j: usize| reference_radii[j] >= OT_MIN_RADIUS;
    let mut ot_hit = 0;
    let mut ot_total = 0;
    for (j, hit) in labels.ref_hit.iter().enumerate() {
        if relevant(j) {
            ot_total += 1;
            ot_hit += *hit as usize;
        }
    }
    for (i, hit) in labels.op_hit.iter().enumerate() {
        if relevant(labels.op_nearest_ref[i]) {
            ot_total += 1;
            ot_hit += *hit as usize;
        }
    }
    let ot = ratio(ot_hit, ot_total);

    let matched: Vec<f64> = labels
        .ref_hit
        .iter()
        .zip(ref_min_dist)
        .chain(labels.op_hit.iter().zip(op_min_dist))
        .filter(|(h, _)| **h)
        .map(|(_, d)| *d)
        .collect();
    let ai = (!matched.is_empty()).then(|| matched.iter().sum::<f64>() / matched.len() as f64);

    OverlapMeasures { ov, of, ot, ai, tpr, false_negatives: fneg, tpm, false_positives: fpos }
}

pub fn overlap_measures(op: &SampledCenterline, reference: &SampledCenterline) -> Result<OverlapMeasures> {
    let labels = overlap_labels(op, reference)?;
    let radii = reference.radii.as_ref().expect("checked by overlap_labels");
    let ref_index = PointIndex::new(&reference.points, 1.0);
    let op_index = PointIndex::new(&op.points, 1.0);
    let ref_min: Vec<f64> = reference.points.iter().map(|p| op_index.nearest(p).map_or(f64::INFINITY, |x| x.1)).collect();
    let op_min: Vec<f64> = op.points.iter().map(|p| ref_index.nearest(p).map_or(f64::INFINITY, |x| x.1)).collect();
    Ok(measures_from_labels(&labels, radii, &ref_min, &op_min))
}

/// Distance and overlap scores of an output tree against a reference tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub d_err: f64,
    pub w: f64,
    pub overlap: OverlapMeasures,
}

pub fn evaluate(op: &CenterlineTree, reference: &CenterlineTree, w: f64, spacing: f64) -> Result<Evaluation> {
    let r = SampledCenterline::from_tree(reference, spacing)?;
    let o = SampledCenterline::from_tree(op, spacing)?;
    if o.is_empty() {
        // nothing tracked: every reference point is missed
        let n = r.len();
        return Ok(Evaluation {
            d_err: f64::INFINITY,
            w,
            overlap: OverlapMeasures {
                ov: 0.0,
                of: 0.0,
                ot: 0.0,
                ai: None,
                tpr: 0,
                false_negatives: n,
                tpm: 0,
                false_positives: 0,
            },
        });
    }
    Ok(Evaluation { d_err: centerline_distance(&o, &r, w)?, w, overlap: overlap_measures(&o, &r)? })
}

/// Fraction of reference points (resampled at `spacing`) lying within their
/// radius of some output point.
pub fn coverage(op: &CenterlineTree, reference: &CenterlineTree, spacing: f64) -> Result<f64> {
    let r = SampledCenterline::from_tree(reference, spacing)?;
    let o = SampledCenterline::from_tree(op, spacing)?;
    if o.is_empty() || r.is_empty() {
        return Ok(0.0);
    }
    let labels = overlap_labels(&o, &r)?;
    Ok(ratio(labels.ref_hit.iter().filter(|h| **h).count(), r.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, h: f64, offset: Point3) -> Vec<Point3> {
        (0..n).map(|i| Point3::new(0.0, 0.0, i as f64 * h) + offset).collect()
    }

    #[test]
    fn resample_straight_segment() {
        let s = resample(&[Point3::zeros(), Point3::new(0.0, 0.0, 10.0)], 1.0).unwrap();
        assert_eq!(s.len(), 11);
        assert!((s.points[10].z - 10.0).abs() < 1e-12);
        assert!(resample(&[Point3::zeros(), Point3::new(0.0, 0.0, 0.4)], 1.0).is_err());
        assert!(resample(&[Point3::zeros()], 1.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = SampledCenterline::from_points(line(20, 0.5, Point3::zeros()));
        let b = SampledCenterline::from_points(line(20, 0.5, Point3::new(1.0, 0.0, 0.0)));
        assert_eq!(centerline_distance(&a, &a, 0.3).unwrap(), 0.0);
        assert!((centerline_distance(&b, &a, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_overlap() {
        let pts = line(20, 0.5, Point3::zeros());
        let r = SampledCenterline::with_radii(pts.clone(), vec![1.0; 20]).unwrap();
        let m = overlap_measures(&SampledCenterline::from_points(pts), &r).unwrap();
        assert_eq!((m.ov, m.of, m.ot, m.ai), (1.0, 1.0, 1.0, Some(0.0)));
    }

    #[test]
    fn half_coverage_gives_two_thirds() {
        let pts = line(20, 1.0, Point3::zeros());
        let r = SampledCenterline::with_radii(pts.clone(), vec![0.8; 20]).unwrap();
        let op = SampledCenterline::from_points(pts[..10].to_vec());
        let m = overlap_measures(&op, &r).unwrap();
        assert!((m.ov - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.of - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_miss() {
        let r = SampledCenterline::with_radii(line(10, 1.0, Point3::zeros()), vec![1.0; 10]).unwrap();
        let op = SampledCenterline::from_points(vec![Point3::new(50.0, 0.0, 0.0)]);
        let m = overlap_measures(&op, &r).unwrap();
        assert_eq!(m.ov, 0.0);
        assert_eq!(m.ai, None);
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts: Vec<Point3> = (0..300)
            .map(|i| {
                let t = i as f64;
                Point3::new((t * 0.37).sin() * 9.0, (t * 0.11).cos() * 4.0, (t * 0.73).sin() * 13.0)
            })
            .collect();
        let index = PointIndex::new(&pts, 0.7);
        for i in 0..100 {
            let q = Point3::new(i as f64 * 0.3 - 15.0, (i as f64).sqrt(), 20.0 - i as f64 * 0.45);
            let brute = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert_eq!(index.nearest(&q).unwrap().1, brute);
        }
    }
}
