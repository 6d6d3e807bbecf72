//! Detection metrics: oriented-box IoU, pose errors and mean average precision.

mod iou;

use std::fmt::Write as _;

use crate::geometry::{align_symmetric_rotation, rotation_error, Pose, SymmetrySpec};
use crate::synthdata::{Category, Prediction, Sample};

pub use iou::{intersection_volume, iou3d, OrientedBox};

/// `‖t − t*‖ / ‖s*‖`.
pub fn relative_translation_error(pred: &Pose, gt: &Pose) -> f64 {
    (pred.translation - gt.translation).norm() / gt.size.norm()
}

/// IoU of predicted and true boxes. For symmetric objects the predicted
/// rotation is first turned about the axis to best match the truth.
pub fn pose_iou(pred: &Pose, gt: &Pose, sym: &SymmetrySpec) -> f64 {
    let aligned = Pose {
        rotation: align_symmetric_rotation(&pred.rotation, &gt.rotation, sym),
        ..*pred
    };
    iou3d(&OrientedBox::from_pose(&aligned), &OrientedBox::from_pose(gt))
}

/// Everything a threshold test needs about one prediction/truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors {
    pub iou: f64,
    pub rot_deg: f64,
    pub rel_trans: f64,
    pub abs_trans: f64,
}

impl PairErrors {
    pub fn new(pred: &Pose, gt: &Pose, sym: &SymmetrySpec) -> Self {
        PairErrors {
            iou: pose_iou(pred, gt, sym),
            rot_deg: rotation_error(&pred.rotation, &gt.rotation, sym),
            rel_trans: relative_translation_error(pred, gt),
            abs_trans: (pred.translation - gt.translation).norm(),
        }
    }
}

/// One cell of the metric grid. Unset bounds are not checked; all checks
/// are inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub name: &'static str,
    pub min_iou: Option<f64>,
    pub max_rot_deg: Option<f64>,
    pub max_rel_trans: Option<f64>,
    pub max_abs_trans: Option<f64>,
}

impl Threshold {
    const fn new(
        name: &'static str,
        min_iou: Option<f64>,
        max_rot_deg: Option<f64>,
        max_rel_trans: Option<f64>,
        max_abs_trans: Option<f64>,
    ) -> Self {
        Threshold { name, min_iou, max_rot_deg, max_rel_trans, max_abs_trans }
    }

    pub fn accepts(&self, e: &PairErrors) -> bool {
        self.min_iou.is_none_or(|v| e.iou >= v)
            && self.max_rot_deg.is_none_or(|v| e.rot_deg <= v)
            && self.max_rel_trans.is_none_or(|v| e.rel_trans <= v)
            && self.max_abs_trans.is_none_or(|v| e.abs_trans <= v)
    }
}

/// Translations are in scene units (meters): 2cm is 0.02.
pub const METRIC_GRID: [Threshold; 12] = [
    Threshold::new("iou75_5deg_5pct", Some(0.75), Some(5.0), Some(0.05), None),
    Threshold::new("iou75_10deg_5pct", Some(0.75), Some(10.0), Some(0.05), None),
    Threshold::new("iou75_5deg_10pct", Some(0.75), Some(5.0), Some(0.10), None),
    Threshold::new("iou50_5deg_20pct", Some(0.50), Some(5.0), Some(0.20), None),
    Threshold::new("iou50_10deg_10pct", Some(0.50), Some(10.0), Some(0.10), None),
    Threshold::new("iou50_10deg_20pct", Some(0.50), Some(10.0), Some(0.20), None),
    Threshold::new("iou50", Some(0.50), None, None, None),
    Threshold::new("iou75", Some(0.75), None, None, None),
    Threshold::new("5deg_2cm", None, Some(5.0), None, Some(0.02)),
    Threshold::new("5deg_5cm", None, Some(5.0), None, Some(0.05)),
    Threshold::new("10deg_2cm", None, Some(10.0), None, Some(0.02)),
    Threshold::new("10deg_5cm", None, Some(10.0), None, Some(0.05)),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub scene: String,
    pub pose: Pose,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scene: String,
    pub pose: Pose,
    pub symmetry: SymmetrySpec,
}

/// Greedy matching in decreasing confidence (ties keep input order). Each
/// detection takes the unmatched truth of its scene with the largest IoU
/// (ties: lowest index); the pair is a true positive iff `accept` holds.
/// Returns the TP flag per detection in ranked order.
pub fn match_detections<F>(dets: &[Detection], gts: &[GroundTruth], accept: F) -> Vec<bool>
where
    F: Fn(&PairErrors) -> bool,
{
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, PairErrors)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.scene != d.scene {
                    continue;
                }
                let e = PairErrors::new(&d.pose, &g.pose, &g.symmetry);
                if best.is_none_or(|(_, b)| e.iou > b.iou) {
                    best = Some((gi, e));
                }
            }
            match best {
                Some((gi, e)) => {
                    taken[gi] = true;
                    accept(&e)
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated average precision of ranked TP flags.
pub fn average_precision(ranked_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(ranked_tp.len());
    let mut rec = Vec::with_capacity(ranked_tp.len());
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        prec.push(tp as f64 / (k + 1) as f64);
        rec.push(tp as f64 / num_gt as f64);
    }
    for k in (0..prec.len().saturating_sub(1)).rev() {
        prec[k] = prec[k].max(prec[k + 1]);
    }
    let mut ap = 0.0;
    let mut last = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        ap += (r - last) * p;
        last = *r;
    }
    ap
}

pub fn match_and_ap(dets: &[Detection], gts: &[GroundTruth], threshold: &Threshold) -> f64 {
    average_precision(&match_detections(dets, gts, |e| threshold.accepts(e)), gts.len())
}

/// mAP per grid cell, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTable {
    pub columns: Vec<(&'static str, f64)>,
    pub per_category: Vec<(Category, Vec<f64>)>,
}

impl MapTable {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.columns.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn csv_header() -> String {
        let names: Vec<&str> = METRIC_GRID.iter().map(|t| t.name).collect();
        format!("run,{}", names.join(","))
    }

    pub fn csv_row(&self, run: &str) -> String {
        let vals: Vec<String> = self.columns.iter().map(|(_, v)| format!("{v:.2}")).collect();
        format!("{run},{}", vals.join(","))
    }

    /// Aligned text table: one row per category plus the mean.
    pub fn to_text(&self) -> String {
        let width = METRIC_GRID.iter().map(|t| t.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "category");
        for t in &METRIC_GRID {
            let _ = write!(out, " {:>width$}", t.name);
        }
        out.push('\n');
        let mut row = |label: &str, vals: &[f64]| {
            let _ = write!(out, "{label:<10}");
            for v in vals {
                let _ = write!(out, " {v:>width$.2}");
            }
            out.push('\n');
        };
        for (c, vals) in &self.per_category {
            row(c.name(), vals);
        }
        let mean: Vec<f64> = self.columns.iter().map(|(_, v)| *v).collect();
        row("mean", &mean);
        out
    }
}

/// Per-category AP for every grid cell, averaged over the categories that
/// have ground truth. Predictions and truths pair up by crop id.
pub fn map_table(preds: &[Prediction], gts: &[Sample]) -> MapTable {
    let mut per_category = Vec::new();
    for cat in Category::ALL {
        let g: Vec<GroundTruth> = gts
            .iter()
            .filter(|s| s.crop.category == cat)
            .map(|s| GroundTruth {
                scene: s.crop.id.clone(),
                pose: s.annotation.pose,
                symmetry: s.annotation.symmetry,
            })
            .collect();
        if g.is_empty() {
            continue;
        }
        let d: Vec<Detection> = preds
            .iter()
            .filter(|p| p.category == cat)
            .map(|p| Detection { scene: p.id.clone(), pose: p.pose, confidence: p.confidence })
            .collect();
        let vals: Vec<f64> = METRIC_GRID.iter().map(|t| 100.0 * match_and_ap(&d, &g, t)).collect();
        per_category.push((cat, vals));
    }
    let columns = METRIC_GRID
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let n = per_category.len().max(1) as f64;
            (t.name, per_category.iter().map(|(_, v)| v[i]).sum::<f64>() / n)
        })
        .collect();
    MapTable { columns, per_category }
}
