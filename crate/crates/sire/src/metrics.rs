//! Centerline agreement metrics (precision, recall, overlap, average inside
//! distance) and the best-assignment cosine similarity for direction pairs.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::centerline::Centerline;
use crate::error::{Error, Result};
use crate::geometry::check_unit;

/// Reference lines are densified to at most this arc step before
/// point-to-point matching.
pub const REFERENCE_RESAMPLE_MM: f64 = 0.25;

/// Point labels from matching a tracked polyline against a reference line
/// with per-point radii.
#[derive(Debug, Clone)]
pub struct PointLabels {
    /// Per tracked point: distance to the nearest reference point, and
    /// whether that distance is within the local reference radius (TP_T vs
    /// FP).
    pub tracked: Vec<(f64, bool)>,
    /// Per reference point: whether any tracked point lies within its radius
    /// (TP_R vs FN).
    pub reference: Vec<bool>,
}

/// Summary metrics; `average_inside_mm` is absent when no tracked point
/// matched.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub overlap: f64,
    pub average_inside_mm: Option<f64>,
    pub tp_tracked: usize,
    pub tp_reference: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Label every point of both lines by nearest-point proximity against the
/// local reference radius. Matching is point-to-point and exact (brute
/// force).
pub fn classify_points(tracked: &[Point3<f64>], reference: &Centerline) -> Result<PointLabels> {
    if tracked.is_empty() {
        return Err(Error::invalid("tracked line has no points"));
    }
    let ref_points = reference.points();
    let ref_radii = reference.radii();

    let tracked_labels: Vec<(f64, bool)> = tracked
        .iter()
        .map(|p| {
            let (idx, dist) = reference.nearest_point(p);
            (dist, dist <= ref_radii[idx])
        })
        .collect();

    let reference_labels: Vec<bool> = ref_points
        .iter()
        .zip(ref_radii)
        .map(|(q, &r)| tracked.iter().any(|p| (p - q).norm() <= r))
        .collect();

    Ok(PointLabels {
        tracked: tracked_labels,
        reference: reference_labels,
    })
}

/// Fold labels into the summary counts and ratios.
pub fn report(labels: &PointLabels) -> MetricsReport {
    let tp_t = labels.tracked.iter().filter(|(_, tp)| *tp).count();
    let fp = labels.tracked.len() - tp_t;
    let tp_r = labels.reference.iter().filter(|&&tp| tp).count();
    let fn_ = labels.reference.len() - tp_r;

    let precision = if tp_t + fp > 0 {
        tp_t as f64 / (tp_t + fp) as f64
    } else {
        0.0
    };
    let recall = if tp_r + fn_ > 0 {
        tp_r as f64 / (tp_r + fn_) as f64
    } else {
        0.0
    };
    let total = tp_t + tp_r + fp + fn_;
    let overlap = if total > 0 {
        (tp_t + tp_r) as f64 / total as f64
    } else {
        0.0
    };
    let average_inside_mm = if tp_t > 0 {
        Some(
            labels
                .tracked
                .iter()
                .filter(|(_, tp)| *tp)
                .map(|(d, _)| d)
                .sum::<f64>()
                / tp_t as f64,
        )
    } else {
        None
    };
    MetricsReport {
        precision,
        recall,
        overlap,
        average_inside_mm,
        tp_tracked: tp_t,
        tp_reference: tp_r,
        fp,
        fn_,
    }
}

/// Evaluate tracked branches against reference branches: every tracked point
/// is pooled into one set, each reference branch is densified to
/// `REFERENCE_RESAMPLE_MM`, and the labels are merged into one report.
pub fn evaluate(tracked: &[Vec<Point3<f64>>], reference: &[Centerline]) -> Result<MetricsReport> {
    let pool: Vec<Point3<f64>> = tracked.iter().flatten().cloned().collect();
    if pool.is_empty() {
        return Err(Error::invalid("no tracked points to evaluate"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("no reference branches"));
    }
    let mut tracked_labels: Vec<(f64, bool)> = pool.iter().map(|_| (f64::INFINITY, false)).collect();
    let mut reference_labels = Vec::new();
    for branch in reference {
        let dense = branch.resampled(REFERENCE_RESAMPLE_MM)?;
        let labels = classify_points(&pool, &dense)?;
        // A tracked point is TP_T if it matches ANY branch; keep its best
        // distance-with-match, otherwise its overall nearest distance.
        for (agg, new) in tracked_labels.iter_mut().zip(&labels.tracked) {
            if new.1 && (!agg.1 || new.0 < agg.0) {
                *agg = *new;
            } else if !agg.1 && new.0 < agg.0 {
                agg.0 = new.0;
            }
        }
        reference_labels.extend(labels.reference);
    }
    Ok(report(&PointLabels {
        tracked: tracked_labels,
        reference: reference_labels,
    }))
}

/// Best-assignment cosine similarity between a predicted direction pair and
/// the ground-truth pair: the larger of the two pairings' mean cosines.
pub fn cosine_eval(
    pred: (&Vector3<f64>, &Vector3<f64>),
    gt: (&Vector3<f64>, &Vector3<f64>),
) -> Result<f64> {
    for (v, name) in [
        (pred.0, "pred d1"),
        (pred.1, "pred d2"),
        (gt.0, "gt d1"),
        (gt.1, "gt d2"),
    ] {
        check_unit(v, name)?;
    }
    let direct = (pred.0.dot(gt.0) + pred.1.dot(gt.1)) / 2.0;
    let swapped = (pred.0.dot(gt.1) + pred.1.dot(gt.0)) / 2.0;
    Ok(direct.max(swapped))
}

pub fn save_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Per-branch CSV rows (`branch,precision,recall,overlap,ai_mm`), one row per
/// tracked branch against the full reference, plus a `merged` row.
pub fn save_branch_csv(
    tracked: &[Vec<Point3<f64>>],
    reference: &[Centerline],
    path: &Path,
) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let fmt_ai =
        |ai: Option<f64>| ai.map(|v| v.to_string()).unwrap_or_else(|| "".to_string());
    let mut write = || -> Result<()> {
        writeln!(w, "branch,precision,recall,overlap,ai_mm").map_err(|e| Error::io(path, e))?;
        for (i, branch) in tracked.iter().enumerate() {
            let r = evaluate(std::slice::from_ref(branch), reference)?;
            writeln!(
                w,
                "{},{},{},{},{}",
                i,
                r.precision,
                r.recall,
                r.overlap,
                fmt_ai(r.average_inside_mm)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        let merged = evaluate(tracked, reference)?;
        writeln!(
            w,
            "merged,{},{},{},{}",
            merged.precision,
            merged.recall,
            merged.overlap,
            fmt_ai(merged.average_inside_mm)
        )
        .map_err(|e| Error::io(path, e))?;
        Ok(())
    };
    write()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn straight_reference(radius: f64) -> Centerline {
        let points = (0..=400)
            .map(|i| Point3::new(i as f64 * 0.25, 0.0, 0.0))
            .collect();
        Centerline::new(points, vec![radius; 401]).unwrap()
    }

    #[test]
    fn identical_lines_score_perfectly() {
        let reference = straight_reference(2.0);
        let tracked = reference.points().to_vec();
        let labels = classify_points(&tracked, &reference).unwrap();
        let r = report(&labels);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.overlap, 1.0);
        assert_eq!(r.average_inside_mm, Some(0.0));
        assert_eq!(r.fp + r.fn_, 0);
    }

    #[test]
    fn distant_lines_score_zero() {
        let reference = straight_reference(2.0);
        let tracked: Vec<Point3<f64>> = reference
            .points()
            .iter()
            .map(|p| p + Vector3::new(0.0, 50.0, 0.0))
            .collect();
        let labels = classify_points(&tracked, &reference).unwrap();
        let r = report(&labels);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.overlap, 0.0);
        assert_eq!(r.average_inside_mm, None);
        assert_eq!(r.tp_tracked + r.tp_reference, 0);
    }

    #[test]
    fn half_coverage_hand_count() {
        // Tracked covers exactly the first half of the arc: recall 0.5 up to
        // one-point quantisation, precision 1.
        let reference = straight_reference(2.0);
        let tracked: Vec<Point3<f64>> = reference.points()[..=200].to_vec();
        let labels = classify_points(&tracked, &reference).unwrap();
        let r = report(&labels);
        assert_eq!(r.precision, 1.0);
        // Reference points within radius 2.0 of the half line: indices
        // 0..=200 plus the 8 points within 2 mm past the cut at 0.25 mm spacing.
        let expected_tp_r = 201 + 8;
        assert_eq!(r.tp_reference, expected_tp_r);
        assert!((r.recall - 0.5).abs() < 0.03);
        let expected_overlap =
            (201 + expected_tp_r) as f64 / (201 + expected_tp_r + 0 + (401 - expected_tp_r)) as f64;
        assert!((r.overlap - expected_overlap).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_exact_average_inside() {
        let reference = straight_reference(2.0);
        let offset = 1.0; // half the radius
        let tracked: Vec<Point3<f64>> = reference
            .points()
            .iter()
            .map(|p| p + Vector3::new(0.0, offset, 0.0))
            .collect();
        let labels = classify_points(&tracked, &reference).unwrap();
        let r = report(&labels);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.average_inside_mm, Some(offset));
    }

    #[test]
    fn swapping_lines_swaps_precision_and_recall() {
        let reference = straight_reference(1.5);
        // Tracked: half the reference, plus a far-away spur (false positives).
        let mut tracked: Vec<Point3<f64>> = reference.points()[..=200].to_vec();
        for i in 0..50 {
            tracked.push(Point3::new(i as f64, 40.0, 0.0));
        }
        let tracked_line = Centerline::new(tracked.clone(), vec![1.5; tracked.len()]).unwrap();

        let fwd = report(&classify_points(&tracked, &reference).unwrap());
        let rev = report(&classify_points(reference.points(), &tracked_line).unwrap());
        assert!((fwd.precision - rev.recall).abs() < 1e-12);
        assert!((fwd.recall - rev.precision).abs() < 1e-12);
        assert!((fwd.overlap - rev.overlap).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_rigid_invariant_and_ai_scales_linearly() {
        let reference = straight_reference(2.0);
        let tracked: Vec<Point3<f64>> = reference
            .points()
            .iter()
            .map(|p| p + Vector3::new(0.0, 0.8, 0.3))
            .collect();
        let base = report(&classify_points(&tracked, &reference).unwrap());

        let rot = Rotation3::from_euler_angles(0.3, -0.8, 1.2);
        let shift = Vector3::new(5.0, -3.0, 11.0);
        let move_p = |p: &Point3<f64>| rot * p + shift;
        let tracked_m: Vec<Point3<f64>> = tracked.iter().map(&move_p).collect();
        let reference_m = Centerline::new(
            reference.points().iter().map(&move_p).collect(),
            reference.radii().to_vec(),
        )
        .unwrap();
        let moved = report(&classify_points(&tracked_m, &reference_m).unwrap());
        assert_eq!(base.tp_tracked, moved.tp_tracked);
        assert_eq!(base.fn_, moved.fn_);
        assert!(
            (base.average_inside_mm.unwrap() - moved.average_inside_mm.unwrap()).abs() < 1e-9
        );

        // Global scaling: ratios unchanged, AI scales.
        let s = 3.0;
        let tracked_s: Vec<Point3<f64>> = tracked.iter().map(|p| Point3::from(p.coords * s)).collect();
        let reference_s = Centerline::new(
            reference.points().iter().map(|p| Point3::from(p.coords * s)).collect(),
            reference.radii().iter().map(|r| r * s).collect(),
        )
        .unwrap();
        let scaled = report(&classify_points(&tracked_s, &reference_s).unwrap());
        assert_eq!(base.precision, scaled.precision);
        assert_eq!(base.recall, scaled.recall);
        assert!(
            (scaled.average_inside_mm.unwrap() - s * base.average_inside_mm.unwrap()).abs() < 1e-9
        );
    }

    #[test]
    fn cosine_eval_pairings() {
        let g1: Vector3<f64> = Vector3::x();
        let g2 = -g1;
        assert_eq!(cosine_eval((&g1, &g2), (&g1, &g2)).unwrap(), 1.0);
        // Swapped prediction on a straight vessel still scores 1.
        assert_eq!(cosine_eval((&g2, &g1), (&g1, &g2)).unwrap(), 1.0);
        let oz: Vector3<f64> = Vector3::z();
        let oy: Vector3<f64> = Vector3::y();
        assert_eq!(cosine_eval((&oz, &oy), (&g1, &g2)).unwrap(), 0.0);
        assert!(cosine_eval((&(g1 * 2.0), &g2), (&g1, &g2)).is_err());
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let reference = straight_reference(1.0);
        assert!(classify_points(&[], &reference).is_err());
        assert!(evaluate(&[], &[reference]).is_err());
    }

    #[test]
    fn report_json_and_branch_csv() {
        let reference = straight_reference(2.0);
        let tracked = vec![reference.points()[..=200].to_vec()];
        let dir = tempfile::tempdir().unwrap();
        let jpath = dir.path().join("report.json");
        let merged = evaluate(&tracked, std::slice::from_ref(&reference)).unwrap();
        save_report(&merged, &jpath).unwrap();
        let text = std::fs::read_to_string(&jpath).unwrap();
        assert!(text.contains("\"precision\""));

        let cpath = dir.path().join("branches.csv");
        save_branch_csv(&tracked, std::slice::from_ref(&reference), &cpath).unwrap();
        let csv = std::fs::read_to_string(&cpath).unwrap();
        assert!(csv.starts_with("branch,precision,recall,overlap,ai_mm\n"));
        assert!(csv.lines().count() == 3); // header + branch 0 + merged
    }
}
