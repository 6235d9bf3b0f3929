//! Detection evaluation: intersection-over-union, greedy matching, average
//! precision with all-points interpolation, distance-binned AP, and
//! cross-dataset generalization matrices.
//!
//! Everything here is deterministic by contract: score ties break by input
//! order, ground-truth ties by lowest index, and curve sums run in sweep
//! order, so two runs over the same inputs produce bit-identical reports.

use crate::error::{Error, Result};
use crate::scene_io::{BoundingBox, DetectionSet, LabelSet};

/// Intersection-over-union of two axis-aligned boxes; 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// One detection's fate after matching, in score-sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMatch {
    /// The detection's confidence score.
    pub score: f64,
    /// True when the detection claimed a ground-truth box.
    pub is_tp: bool,
    /// Index of the claimed ground-truth box in its label set. `None` for
    /// false positives and for results merged across images (where
    /// per-image indices stop meaning anything).
    pub matched_gt: Option<usize>,
}

/// Outcome of matching one detection set against one label set.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per-detection outcomes sorted by descending score (ties keep input
    /// order).
    pub detections: Vec<DetectionMatch>,
    /// True positives.
    pub tp: usize,
    /// False positives.
    pub fp: usize,
    /// Ground-truth boxes no detection claimed (false negatives).
    pub fn_count: usize,
    /// The IoU threshold the matching ran under.
    pub iou_threshold: f64,
}

impl MatchResult {
    /// Ground-truth box count (`tp + fn`).
    pub fn num_gts(&self) -> usize {
        self.tp + self.fn_count
    }
}

/// Greedily matches detections to ground truth.
///
/// Detections are visited in descending score order (ties by input order).
/// Each takes the not-yet-claimed ground-truth box of its own class with the
/// highest IoU, provided that IoU is at least `threshold` (inclusive — "at
/// least half" for the default 0.5); IoU ties go to the lowest ground-truth
/// index. Detections that claim nothing are false positives; unclaimed
/// ground truth counts as false negatives.
pub fn match_detections(
    dets: &DetectionSet,
    gts: &LabelSet,
    threshold: f64,
) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "IoU threshold {threshold} outside (0, 1]"
        )));
    }
    for (i, d) in dets.boxes.iter().enumerate() {
        if d.score.is_none() {
            return Err(Error::invalid(format!(
                "detection {i} in {:?} has no score",
                dets.scene_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..dets.boxes.len()).collect();
    order.sort_by(|&i, &j| {
        let si = dets.boxes[i].score.expect("checked above");
        let sj = dets.boxes[j].score.expect("checked above");
        sj.total_cmp(&si)
    });

    let mut gt_taken = vec![false; gts.boxes.len()];
    let mut detections = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for &di in &order {
        let det = &dets.boxes[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.boxes.iter().enumerate() {
            if gt_taken[gi] || gt.class != det.class {
                continue;
            }
            let overlap = iou(det, gt);
            if overlap < threshold {
                continue;
            }
            // Strict improvement keeps the lowest index on ties.
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        let matched_gt = best.map(|(gi, _)| gi);
        if let Some(gi) = matched_gt {
            gt_taken[gi] = true;
            tp += 1;
        }
        detections.push(DetectionMatch {
            score: det.score.expect("checked above"),
            is_tp: matched_gt.is_some(),
            matched_gt,
        });
    }

    Ok(MatchResult {
        detections,
        tp,
        fp: order.len() - tp,
        fn_count: gts.boxes.len() - tp,
        iou_threshold: threshold,
    })
}

/// Pools per-image match results into one dataset-level result. Detections
/// are re-sorted by descending score; ties keep the order the results were
/// given in. Ground-truth indices are dropped (they are per-image).
pub fn merge_matches(results: &[MatchResult]) -> Result<MatchResult> {
    let Some(first) = results.first() else {
        return Err(Error::invalid("no match results to merge"));
    };
    if results
        .iter()
        .any(|r| r.iou_threshold != first.iou_threshold)
    {
        return Err(Error::invalid(
            "cannot merge matches computed at different IoU thresholds",
        ));
    }
    let mut detections: Vec<DetectionMatch> = results
        .iter()
        .flat_map(|r| r.detections.iter())
        .map(|d| DetectionMatch {
            score: d.score,
            is_tp: d.is_tp,
            matched_gt: None,
        })
        .collect();
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(MatchResult {
        detections,
        tp: results.iter().map(|r| r.tp).sum(),
        fp: results.iter().map(|r| r.fp).sum(),
        fn_count: results.iter().map(|r| r.fn_count).sum(),
        iou_threshold: first.iou_threshold,
    })
}

/// A precision/recall sweep and its area.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` at every sweep step, score-descending.
    pub points: Vec<(f64, f64)>,
    /// Average precision under all-points interpolation.
    pub ap: f64,
}

/// Computes average precision from a match result.
///
/// The detections are swept in score order, accumulating precision and
/// recall; AP is the all-points interpolated area
/// `sum_i (r_i - r_{i-1}) * max_{j >= i} p_j`. With no ground truth the
/// value is degenerate: 1.0 when there are also no detections (nothing to
/// find, nothing claimed), 0.0 otherwise.
pub fn average_precision(m: &MatchResult) -> PrCurve {
    let n_gts = m.num_gts();
    if n_gts == 0 {
        let ap = if m.detections.is_empty() { 1.0 } else { 0.0 };
        return PrCurve { points: Vec::new(), ap };
    }

    let mut points = Vec::with_capacity(m.detections.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for d in &m.detections {
        if d.is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gts as f64, tp as f64 / (tp + fp) as f64));
    }

    // Right-to-left running max gives the interpolated precision envelope.
    let mut envelope = vec![0.0f64; points.len()];
    let mut pmax = 0.0f64;
    for i in (0..points.len()).rev() {
        pmax = pmax.max(points[i].1);
        envelope[i] = pmax;
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (i, &(r, _)) in points.iter().enumerate() {
        ap += (r - prev_r) * envelope[i];
        prev_r = r;
    }
    PrCurve { points, ap }
}

/// AP restricted to ground truth inside one distance interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBin {
    /// Inclusive lower edge in meters.
    pub lo_m: f64,
    /// Exclusive upper edge in meters.
    pub hi_m: f64,
    /// Ground-truth boxes in the bin.
    pub gts: usize,
    /// Detections attributed to the bin.
    pub dets: usize,
    /// Average precision over the bin's boxes and detections.
    pub ap: f64,
}

/// Distance-resolved AP report.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBinnedAp {
    /// One entry per bin that contains at least one ground-truth box,
    /// ascending by distance.
    pub bins: Vec<DistanceBin>,
    /// Detections that overlap no ground truth at all (IoU 0 everywhere);
    /// they belong to no distance and are excluded from every bin.
    pub unassignable_fp: usize,
}

/// Splits the evaluation by ground-truth distance.
///
/// `bin_edges_m` defines half-open bins `[e0, e1), [e1, e2), ...`. Every
/// ground-truth box needs distance metadata and falls into the bin holding
/// its distance (boxes outside all bins are ignored). A detection follows
/// its matched box's bin; an unmatched detection follows its highest-IoU box
/// (any class), or is set aside as unassignable when it overlaps nothing.
/// Each populated bin then gets its own match-and-AP run over exactly its
/// boxes and detections; empty bins are omitted.
pub fn ap_by_distance(
    dets: &DetectionSet,
    gts: &LabelSet,
    bin_edges_m: &[f64],
    threshold: f64,
) -> Result<DistanceBinnedAp> {
    if bin_edges_m.len() < 2 {
        return Err(Error::invalid("need at least two distance bin edges"));
    }
    for w in bin_edges_m.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::invalid(
                "distance bin edges must be strictly ascending",
            ));
        }
    }
    let bin_of = |d: f64| -> Option<usize> {
        bin_edges_m
            .windows(2)
            .position(|w| d >= w[0] && d < w[1])
    };
    let mut gt_bin = Vec::with_capacity(gts.boxes.len());
    for (i, gt) in gts.boxes.iter().enumerate() {
        let Some(d) = gt.distance_m else {
            return Err(Error::invalid(format!(
                "box {i} in {:?} has no distance metadata",
                gts.scene_id
            )));
        };
        gt_bin.push(bin_of(d));
    }

    // One global match decides which box each detection follows.
    let global = match_detections(dets, gts, threshold)?;
    let order = {
        // Reconstruct the sweep order to map MatchResult entries back to
        // detection indices.
        let mut order: Vec<usize> = (0..dets.boxes.len()).collect();
        order.sort_by(|&i, &j| {
            let si = dets.boxes[i].score.expect("validated by match");
            let sj = dets.boxes[j].score.expect("validated by match");
            sj.total_cmp(&si)
        });
        order
    };

    let n_bins = bin_edges_m.len() - 1;
    let mut det_bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    let mut unassignable_fp = 0usize;
    for (sweep_i, &det_i) in order.iter().enumerate() {
        let outcome = &global.detections[sweep_i];
        let followed_gt = outcome.matched_gt.or_else(|| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.boxes.iter().enumerate() {
                let overlap = iou(&dets.boxes[det_i], gt);
                if overlap > 0.0 && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((gi, overlap));
                }
            }
            best.map(|(gi, _)| gi)
        });
        match followed_gt {
            Some(gi) => {
                if let Some(bin) = gt_bin[gi] {
                    det_bins[bin].push(det_i);
                }
            }
            None => unassignable_fp += 1,
        }
    }

    let mut bins = Vec::new();
    for b in 0..n_bins {
        let gt_subset: Vec<BoundingBox> = gts
            .boxes
            .iter()
            .zip(&gt_bin)
            .filter(|(_, &bin)| bin == Some(b))
            .map(|(g, _)| g.clone())
            .collect();
        if gt_subset.is_empty() {
            continue;
        }
        let mut det_indices = det_bins[b].clone();
        det_indices.sort_unstable(); // restore input order within the bin
        let det_subset: Vec<BoundingBox> = det_indices
            .iter()
            .map(|&i| dets.boxes[i].clone())
            .collect();
        let gts_bin = LabelSet {
            scene_id: gts.scene_id.clone(),
            boxes: gt_subset,
        };
        let dets_bin = LabelSet {
            scene_id: dets.scene_id.clone(),
            boxes: det_subset,
        };
        let m = match_detections(&dets_bin, &gts_bin, threshold)?;
        bins.push(DistanceBin {
            lo_m: bin_edges_m[b],
            hi_m: bin_edges_m[b + 1],
            gts: gts_bin.boxes.len(),
            dets: dets_bin.boxes.len(),
            ap: average_precision(&m).ap,
        });
    }

    Ok(DistanceBinnedAp {
        bins,
        unassignable_fp,
    })
}

// ---------------------------------------------------------------------------
// Generalization matrices
// ---------------------------------------------------------------------------

/// One measured train/eval combination.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    /// Dataset the detector was trained on.
    pub train: String,
    /// Dataset it was evaluated on.
    pub eval: String,
    /// AP for the combination, in `[0, 1]`.
    pub ap: f64,
    /// Object count of the training set.
    pub count: u64,
}

/// A train/eval pair whose AP gap exceeds the reporting threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Asymmetry {
    /// First dataset of the pair.
    pub set_a: String,
    /// Second dataset of the pair.
    pub set_b: String,
    /// AP when training on `set_a` and evaluating on `set_b`.
    pub ap_ab: f64,
    /// AP when training on `set_b` and evaluating on `set_a`.
    pub ap_ba: f64,
    /// `|ap_ab - ap_ba|`.
    pub gap: f64,
}

/// Cross-dataset AP table with its asymmetry report.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationMatrix {
    /// Training sets, in first-appearance order (columns).
    pub train_sets: Vec<String>,
    /// Evaluation sets, in first-appearance order (rows).
    pub eval_sets: Vec<String>,
    /// Row-major `ap[eval][train]`.
    pub ap: Vec<f64>,
    /// Object count per training set, aligned with `train_sets`.
    pub object_counts: Vec<u64>,
    /// Pairs with a directionally uneven AP above the report threshold.
    pub asymmetries: Vec<Asymmetry>,
}

impl GeneralizationMatrix {
    /// AP for evaluating set `eval` with a detector trained on `train`.
    pub fn ap_for(&self, train: &str, eval: &str) -> Option<f64> {
        let t = self.train_sets.iter().position(|s| s == train)?;
        let e = self.eval_sets.iter().position(|s| s == eval)?;
        Some(self.ap[e * self.train_sets.len() + t])
    }
}

/// Assembles a generalization matrix from per-combination cells.
///
/// The grid must be complete (every eval set measured against every train
/// set, no duplicates), AP values in `[0, 1]`, and each train set's object
/// count consistent across its cells. Pairs of sets appearing on both axes
/// whose two directions differ by more than `report_threshold` land in the
/// asymmetry list.
pub fn build_matrix(
    cells: &[MatrixCell],
    report_threshold: f64,
) -> Result<GeneralizationMatrix> {
    if cells.is_empty() {
        return Err(Error::invalid("no matrix cells"));
    }
    let mut train_sets: Vec<String> = Vec::new();
    let mut eval_sets: Vec<String> = Vec::new();
    for cell in cells {
        if !(0.0..=1.0).contains(&cell.ap) {
            return Err(Error::invalid(format!(
                "AP {} for train {:?} eval {:?} outside [0, 1]",
                cell.ap, cell.train, cell.eval
            )));
        }
        if !train_sets.contains(&cell.train) {
            train_sets.push(cell.train.clone());
        }
        if !eval_sets.contains(&cell.eval) {
            eval_sets.push(cell.eval.clone());
        }
    }

    let mut ap = vec![f64::NAN; eval_sets.len() * train_sets.len()];
    let mut object_counts = vec![None::<u64>; train_sets.len()];
    for cell in cells {
        let t = train_sets.iter().position(|s| *s == cell.train).unwrap();
        let e = eval_sets.iter().position(|s| *s == cell.eval).unwrap();
        let slot = &mut ap[e * train_sets.len() + t];
        if !slot.is_nan() {
            return Err(Error::invalid(format!(
                "duplicate cell for train {:?} eval {:?}",
                cell.train, cell.eval
            )));
        }
        *slot = cell.ap;
        match object_counts[t] {
            None => object_counts[t] = Some(cell.count),
            Some(c) if c != cell.count => {
                return Err(Error::invalid(format!(
                    "training set {:?} has conflicting object counts {c} and {}",
                    cell.train, cell.count
                )))
            }
            Some(_) => {}
        }
    }
    for (e, eval) in eval_sets.iter().enumerate() {
        for (t, train) in train_sets.iter().enumerate() {
            if ap[e * train_sets.len() + t].is_nan() {
                return Err(Error::invalid(format!(
                    "missing cell for train {train:?} eval {eval:?}"
                )));
            }
        }
    }
    let object_counts: Vec<u64> = object_counts.into_iter().map(|c| c.unwrap()).collect();

    let mut matrix = GeneralizationMatrix {
        train_sets,
        eval_sets,
        ap,
        object_counts,
        asymmetries: Vec::new(),
    };
    // Asymmetries need both directions, so both sets must sit on both axes.
    let both: Vec<String> = matrix
        .train_sets
        .iter()
        .filter(|s| matrix.eval_sets.contains(s))
        .cloned()
        .collect();
    for i in 0..both.len() {
        for j in i + 1..both.len() {
            let (a, b) = (&both[i], &both[j]);
            let ap_ab = matrix.ap_for(a, b).unwrap();
            let ap_ba = matrix.ap_for(b, a).unwrap();
            let gap = (ap_ab - ap_ba).abs();
            if gap > report_threshold {
                matrix.asymmetries.push(Asymmetry {
                    set_a: a.clone(),
                    set_b: b.clone(),
                    ap_ab,
                    ap_ba,
                    gap,
                });
            }
        }
    }
    Ok(matrix)
}

/// Renders a matrix as a plain-text table: training sets across the top
/// (with object counts), evaluation sets down the side, and the asymmetry
/// report underneath.
pub fn render_matrix_text(m: &GeneralizationMatrix) -> String {
    let mut label_w = "eval \\ train".len();
    for e in &m.eval_sets {
        label_w = label_w.max(e.len());
    }
    let headers: Vec<String> = m
        .train_sets
        .iter()
        .zip(&m.object_counts)
        .map(|(t, c)| format!("{t}({c})"))
        .collect();
    let col_w = headers.iter().map(|h| h.len()).max().unwrap_or(0).max(6);

    let mut out = String::new();
    out.push_str(&format!("{:<label_w$}", "eval \\ train"));
    for h in &headers {
        out.push_str(&format!("  {h:>col_w$}"));
    }
    out.push('\n');
    for (e, eval) in m.eval_sets.iter().enumerate() {
        out.push_str(&format!("{eval:<label_w$}"));
        for t in 0..m.train_sets.len() {
            out.push_str(&format!(
                "  {:>col_w$.4}",
                m.ap[e * m.train_sets.len() + t]
            ));
        }
        out.push('\n');
    }
    if m.asymmetries.is_empty() {
        out.push_str("asymmetries: none\n");
    } else {
        out.push_str("asymmetries:\n");
        for a in &m.asymmetries {
            out.push_str(&format!(
                "  {} -> {}: {:.4}, {} -> {}: {:.4}, gap {:.4}\n",
                a.set_a, a.set_b, a.ap_ab, a.set_b, a.set_a, a.ap_ba, a.gap
            ));
        }
    }
    out
}

/// Serializes a matrix as CSV: header `eval\train,<train sets...>`, one row
/// per evaluation set.
pub fn matrix_to_csv(m: &GeneralizationMatrix) -> String {
    let mut out = String::from("eval\\train");
    for (t, c) in m.train_sets.iter().zip(&m.object_counts) {
        out.push_str(&format!(",{t}({c})"));
    }
    out.push('\n');
    for (e, eval) in m.eval_sets.iter().enumerate() {
        out.push_str(eval);
        for t in 0..m.train_sets.len() {
            out.push_str(&format!(",{}", m.ap[e * m.train_sets.len() + t]));
        }
        out.push('\n');
    }
    out
}
