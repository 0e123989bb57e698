//! Instance AP on point sets, box detection AP, and semantic mIoU/accuracy.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grouping::{set_iou, Aabb, InstanceResult};
use crate::pointset::LabelSet;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    pub iou_thresholds: Vec<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_thresholds: vec![0.25, 0.5, 0.75],
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("IoU thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Precision/recall after each ranked prediction, and the area under the
/// right-max envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(precision, recall)` per rank.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// A ranked detection belonging to one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ranked {
    pub sample: usize,
    pub confidence: f64,
}

/// Greedy confidence-ordered matching: each prediction takes the unmatched
/// ground truth of its sample with the highest IoU (lowest index on ties)
/// and counts as a true positive when that IoU exceeds `iou_t`.
/// Confidence ties keep input order.
pub fn match_ranked(
    preds: &[Ranked],
    gt_samples: &[usize],
    iou: impl Fn(usize, usize) -> f64,
    iou_t: f64,
) -> PrCurve {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut matched = vec![false; gt_samples.len()];
    let mut tp_flags = Vec::with_capacity(preds.len());
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, &s) in gt_samples.iter().enumerate() {
            if matched[g] || s != preds[p].sample {
                continue;
            }
            let v = iou(p, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        let tp = match best {
            Some((g, v)) if v > iou_t => {
                matched[g] = true;
                true
            }
            _ => false,
        };
        tp_flags.push(tp);
    }
    curve_from_flags(&tp_flags, gt_samples.len())
}

fn curve_from_flags(tp_flags: &[bool], n_gt: usize) -> PrCurve {
    let mut points = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &t) in tp_flags.iter().enumerate() {
        tp += t as usize;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push((tp as f64 / (k + 1) as f64, recall));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut prev_recall = vec![0.0; points.len()];
    for k in 1..points.len() {
        prev_recall[k] = points[k - 1].1;
    }
    for k in (0..points.len()).rev() {
        envelope = envelope.max(points[k].0);
        ap += (points[k].1 - prev_recall[k]) * envelope;
    }
    PrCurve { points, ap }
}

fn check_aligned(preds: usize, gts: usize) -> Result<()> {
    if preds != gts {
        return Err(Error::InvalidArgument(format!(
            "{preds} prediction samples but {gts} ground-truth samples"
        )));
    }
    Ok(())
}

fn gt_instances(labels: &LabelSet) -> Vec<(i64, Vec<usize>)> {
    let classes = labels.instance_classes();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (p, &id) in labels.instance.iter().enumerate() {
        if let Ok(k) = classes.binary_search_by_key(&id, |&(i, _)| i) {
            members[k].push(p);
        }
    }
    classes.iter().map(|&(_, c)| c).zip(members).collect()
}

/// Instance AP of one class, pooling predictions across samples. `None`
/// when the class has no ground-truth instance.
pub fn instance_ap(preds: &[InstanceResult], gts: &[LabelSet], class: i64, iou_t: f64) -> Result<Option<PrCurve>> {
    check_aligned(preds.len(), gts.len())?;
    let mut ranked = Vec::new();
    let mut pred_sets = Vec::new();
    let mut gt_samples = Vec::new();
    let mut gt_sets = Vec::new();
    for (s, (pred, gt)) in preds.iter().zip(gts).enumerate() {
        if pred.n_points() != gt.len() {
            return Err(Error::InvalidArgument(format!(
                "sample {s}: {} predicted points vs {} labeled",
                pred.n_points(),
                gt.len()
            )));
        }
        for (info, members) in pred.instances.iter().zip(pred.members()) {
            if info.class == class {
                ranked.push(Ranked {
                    sample: s,
                    confidence: info.confidence,
                });
                pred_sets.push(members);
            }
        }
        for (c, members) in gt_instances(gt) {
            if c == class {
                gt_samples.push(s);
                gt_sets.push(members);
            }
        }
    }
    if gt_sets.is_empty() {
        return Ok(None);
    }
    Ok(Some(match_ranked(&ranked, &gt_samples, |p, g| set_iou(&pred_sets[p], &gt_sets[g]), iou_t)))
}

/// Mean of per-class instance AP over classes that have ground truth.
pub fn mean_instance_ap(preds: &[InstanceResult], gts: &[LabelSet], n_classes: usize, iou_t: f64) -> Result<Option<f64>> {
    let mut aps = Vec::new();
    for c in 0..n_classes {
        if let Some(curve) = instance_ap(preds, gts, c as i64, iou_t)? {
            aps.push(curve.ap);
        }
    }
    Ok((!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub sample: usize,
    pub class: i64,
    pub confidence: f64,
    pub bbox: Aabb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub sample: usize,
    pub class: i64,
    pub bbox: Aabb,
}

/// Box AP of one class; `None` without ground truth of that class.
pub fn detection_ap(preds: &[Detection], gts: &[GroundTruthBox], class: i64, iou_t: f64) -> Option<PrCurve> {
    let preds: Vec<&Detection> = preds.iter().filter(|d| d.class == class).collect();
    let gts: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class == class).collect();
    if gts.is_empty() {
        return None;
    }
    let ranked: Vec<Ranked> = preds
        .iter()
        .map(|d| Ranked {
            sample: d.sample,
            confidence: d.confidence,
        })
        .collect();
    let samples: Vec<usize> = gts.iter().map(|g| g.sample).collect();
    Some(match_ranked(&ranked, &samples, |p, g| preds[p].bbox.iou(&gts[g].bbox), iou_t))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticScores {
    /// IoU per class; `None` for classes absent from both predictions and
    /// ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub accuracy: f64,
}

/// Pooled point IoU and accuracy over labeled points.
pub fn semantic_miou(preds: &[Vec<i64>], gts: &[LabelSet]) -> Result<SemanticScores> {
    check_aligned(preds.len(), gts.len())?;
    let n_classes = gts.iter().map(|g| g.n_classes).max().unwrap_or(0);
    let (mut tp, mut fp, mut fneg) = (vec![0usize; n_classes], vec![0usize; n_classes], vec![0usize; n_classes]);
    let (mut correct, mut total) = (0usize, 0usize);
    for (s, (pred, gt)) in preds.iter().zip(gts).enumerate() {
        if pred.len() != gt.len() {
            return Err(Error::InvalidArgument(format!(
                "sample {s}: {} predictions vs {} labels",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &t) in pred.iter().zip(&gt.semantic) {
            if t < 0 {
                continue;
            }
            total += 1;
            if p == t {
                correct += 1;
                tp[t as usize] += 1;
            } else {
                fneg[t as usize] += 1;
                if p >= 0 && (p as usize) < n_classes {
                    fp[p as usize] += 1;
                }
            }
        }
    }
    let per_class: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let denom = tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(SemanticScores {
        miou: if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 },
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class,
    })
}

/// Every metric of an evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// `ap[t][c]`, `None` for classes without ground truth.
    pub ap: Vec<Vec<Option<f64>>>,
    pub box_ap: Vec<Vec<Option<f64>>>,
    pub semantic: SemanticScores,
}

fn mean_present(v: &[Option<f64>]) -> Option<f64> {
    let p: Vec<f64> = v.iter().flatten().copied().collect();
    (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64)
}

impl EvalReport {
    pub fn mean_ap(&self, t: usize) -> Option<f64> {
        mean_present(&self.ap[t])
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or(String::from("nan"), |x| format!("{x:.6}"));
        let mut s = String::from("# box AP compares tight boxes around labeled points\nmetric,class,iou_threshold,value\n");
        for (table, name) in [(&self.ap, "ap"), (&self.box_ap, "box_ap")] {
            for (t, row) in self.thresholds.iter().zip(table) {
                for (c, v) in row.iter().enumerate() {
                    let _ = writeln!(s, "{name},{c},{t},{}", fmt(*v));
                }
                let _ = writeln!(s, "{name},mean,{t},{}", fmt(mean_present(row)));
            }
        }
        for (c, v) in self.semantic.per_class.iter().enumerate() {
            let _ = writeln!(s, "iou,{c},,{}", fmt(*v));
        }
        let _ = writeln!(s, "miou,mean,,{:.6}", self.semantic.miou);
        let _ = writeln!(s, "accuracy,all,,{:.6}", self.semantic.accuracy);
        s
    }
}

fn gt_boxes(points: &dyn Fn(usize) -> [f64; 3], members: &[usize]) -> Aabb {
    let mut b = Aabb {
        min: [f64::INFINITY; 3],
        max: [f64::NEG_INFINITY; 3],
    };
    for &m in members {
        let p = points(m);
        for a in 0..3 {
            b.min[a] = b.min[a].min(p[a]);
            b.max[a] = b.max[a].max(p[a]);
        }
    }
    b
}

/// Full report for aligned samples. `semantic` holds per-point class
/// predictions; `xyz` gives point coordinates for box metrics.
pub fn evaluate(
    preds: &[InstanceResult],
    semantic: &[Vec<i64>],
    gts: &[LabelSet],
    xyz: &[Vec<[f64; 3]>],
    cfg: &MatchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_aligned(preds.len(), gts.len())?;
    check_aligned(xyz.len(), gts.len())?;
    let n_classes = gts.iter().map(|g| g.n_classes).max().unwrap_or(0);
    let mut dets = Vec::new();
    let mut gt_box = Vec::new();
    for (s, (pred, gt)) in preds.iter().zip(gts).enumerate() {
        let at = |i: usize| xyz[s][i];
        for (info, members) in pred.instances.iter().zip(pred.members()) {
            dets.push(Detection {
                sample: s,
                class: info.class,
                confidence: info.confidence,
                bbox: gt_boxes(&at, &members),
            });
        }
        for (class, members) in gt_instances(gt) {
            gt_box.push(GroundTruthBox {
                sample: s,
                class,
                bbox: gt_boxes(&at, &members),
            });
        }
    }
    let mut ap = Vec::new();
    let mut box_ap = Vec::new();
    for &t in &cfg.iou_thresholds {
        let mut row = Vec::new();
        let mut brow = Vec::new();
        for c in 0..n_classes as i64 {
            row.push(instance_ap(preds, gts, c, t)?.map(|p| p.ap));
            brow.push(detection_ap(&dets, &gt_box, c, t).map(|p| p.ap));
        }
        ap.push(row);
        box_ap.push(brow);
    }
    Ok(EvalReport {
        thresholds: cfg.iou_thresholds.clone(),
        ap,
        box_ap,
        semantic: semantic_miou(semantic, gts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(sem: &[i64], inst: &[i64]) -> LabelSet {
        LabelSet::new(sem.to_vec(), inst.to_vec(), 2).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gt = labels(&[0, 0, 1, 1, 0], &[0, 0, 1, 1, -1]);
        let pred = InstanceResult::from_labels(&[0, 0, 1, 1, -1], &gt.semantic, 0.9);
        for c in 0..2 {
            assert_eq!(instance_ap(&[pred.clone()], &[gt.clone()], c, 0.5).unwrap().unwrap().ap, 1.0);
        }
    }

    #[test]
    fn no_predictions_score_zero() {
        let gt = labels(&[0, 0], &[0, 0]);
        let pred = InstanceResult::from_labels(&[-1, -1], &[0, 0], 0.5);
        assert_eq!(instance_ap(&[pred], &[gt], 0, 0.5).unwrap().unwrap().ap, 0.0);
    }

    #[test]
    fn class_without_ground_truth_is_none() {
        let gt = labels(&[0, 0], &[0, 0]);
        let pred = InstanceResult::from_labels(&[0, 0], &[1, 1], 0.5);
        assert!(instance_ap(&[pred], &[gt], 1, 0.5).unwrap().is_none());
    }

    #[test]
    fn misaligned_lists_error() {
        assert!(instance_ap(&[], &[labels(&[0], &[0])], 0, 0.5).is_err());
    }

    #[test]
    fn interpolated_area_by_hand() {
        // ranks: TP, FP, TP with 2 GTs -> precision 1, 1/2, 2/3; recall 1/2, 1/2, 1
        // envelope: 1, 2/3, 2/3 -> AP = 0.5 * 1 + 0.5 * 2/3
        let c = curve_from_flags(&[true, false, true], 2);
        assert!((c.ap - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn semantic_examples() {
        let gt = labels(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        let s = semantic_miou(&[gt.semantic.clone()], &[gt.clone()]).unwrap();
        assert_eq!((s.miou, s.accuracy), (1.0, 1.0));

        // four class-0 points, two predicted as class 1
        let gt = labels(&[0, 0, 0, 0], &[0, 0, 0, 0]);
        let s = semantic_miou(&[vec![0, 0, 1, 1]], &[gt]).unwrap();
        assert_eq!(s.per_class[0], Some(0.5));
        assert_eq!(s.accuracy, 0.5);

        let gt = LabelSet::new(vec![0, 0], vec![0, 0], 3).unwrap();
        let s = semantic_miou(&[vec![0, 0]], &[gt]).unwrap();
        assert_eq!(s.per_class, vec![Some(1.0), None, None]);
        assert_eq!(s.miou, 1.0);
    }

    #[test]
    fn box_iou_cases() {
        let unit = Aabb {
            min: [0.0; 3],
            max: [1.0; 3],
        };
        assert_eq!(unit.iou(&unit), 1.0);
        let far = Aabb {
            min: [2.0; 3],
            max: [3.0; 3],
        };
        assert_eq!(unit.iou(&far), 0.0);
    }

    #[test]
    fn report_lists_every_threshold() {
        let gt = labels(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        let pred = InstanceResult::from_labels(&[0, 0, 1, 1], &gt.semantic, 1.0);
        let xyz = vec![(0..4).map(|i| [i as f64, 0.0, 0.0]).collect()];
        let r = evaluate(&[pred], &[gt.semantic.clone()], &[gt], &xyz, &MatchConfig::default()).unwrap();
        let csv = r.to_csv();
        assert!(csv.contains("ap,mean,0.5,1.000000"));
        assert!(csv.contains("accuracy,all,,1.000000"));
        assert_eq!(r.mean_ap(2), Some(1.0));
    }
}
