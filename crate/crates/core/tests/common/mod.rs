//! Brute-force reference implementations shared by the integration tests.
//! Each one is written independently of the library code it checks.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

/// Relabels by order of first appearance; `-1` stays `-1`.
pub fn canonical(labels: &[i64]) -> Vec<i64> {
    let mut seen: Vec<i64> = Vec::new();
    labels
        .iter()
        .map(|&v| {
            if v < 0 {
                return -1;
            }
            match seen.iter().position(|&s| s == v) {
                Some(k) => k as i64,
                None => {
                    seen.push(v);
                    seen.len() as i64 - 1
                }
            }
        })
        .collect()
}

pub fn hash_iou(a: &[usize], b: &[usize]) -> f64 {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// NMS by rounds: every round scans all live proposals for the largest
/// (lowest seed on ties), keeps it, and kills every live proposal whose IoU
/// with it exceeds `th`. Returns the kept member sets in keeping order.
pub fn nms_reference(members: &[Vec<usize>], seeds: &[usize], th: f64) -> Vec<Vec<usize>> {
    let mut live: Vec<usize> = (0..members.len()).collect();
    let mut kept = Vec::new();
    while !live.is_empty() {
        let mut best = live[0];
        for &p in &live {
            let better = members[p].len() > members[best].len()
                || (members[p].len() == members[best].len() && seeds[p] < seeds[best]);
            if better {
                best = p;
            }
        }
        kept.push(members[best].clone());
        live.retain(|&p| p != best && hash_iou(&members[p], &members[best]) <= th);
    }
    kept
}

/// One prediction for the AP oracle: sample, confidence, and a score per
/// ground truth (`None` when it lives in another sample).
pub struct OraclePred {
    pub sample: usize,
    pub confidence: f64,
}

/// Precision/recall at every rank, and AP as the sum over ranks of the
/// recall gained times the best precision at that rank or later.
pub fn ap_reference(
    preds: &[OraclePred],
    gt_samples: &[usize],
    iou: &dyn Fn(usize, usize) -> f64,
    t: f64,
) -> (Vec<bool>, Vec<(f64, f64)>, f64) {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // insertion sort: stable and obviously so
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && preds[order[j - 1]].confidence < preds[order[j]].confidence {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut taken = vec![false; gt_samples.len()];
    let mut flags = Vec::new();
    for &p in &order {
        let candidates: Vec<usize> = (0..gt_samples.len())
            .filter(|&g| !taken[g] && gt_samples[g] == preds[p].sample)
            .collect();
        let best = candidates.iter().copied().fold(None, |acc: Option<usize>, g| match acc {
            Some(b) if iou(p, b) >= iou(p, g) => Some(b),
            _ => Some(g),
        });
        let tp = best.is_some_and(|g| iou(p, g) > t);
        if tp {
            taken[best.unwrap()] = true;
        }
        flags.push(tp);
    }
    let n_gt = gt_samples.len();
    let points: Vec<(f64, f64)> = (0..flags.len())
        .map(|k| {
            let tp = flags[..=k].iter().filter(|&&f| f).count();
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (tp as f64 / (k + 1) as f64, recall)
        })
        .collect();
    let mut ap = 0.0;
    for k in 0..points.len() {
        let prev = if k == 0 { 0.0 } else { points[k - 1].1 };
        let best = points[k..].iter().map(|p| p.0).fold(0.0, f64::max);
        ap += (points[k].1 - prev) * best;
    }
    (flags, points, ap)
}

/// Box IoU from the sorted endpoints of each axis.
pub fn box_iou_reference(a: ([f64; 3], [f64; 3]), b: ([f64; 3], [f64; 3])) -> f64 {
    let mut inter = 1.0;
    for axis in 0..3 {
        let mut e = [a.0[axis], a.1[axis], b.0[axis], b.1[axis]];
        e.sort_by(f64::total_cmp);
        let overlapping = a.0[axis] < b.1[axis] && b.0[axis] < a.1[axis];
        inter *= if overlapping { e[2] - e[1] } else { 0.0 };
    }
    let vol = |x: ([f64; 3], [f64; 3])| (0..3).map(|k| x.1[k] - x.0[k]).product::<f64>();
    let union = vol(a) + vol(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// DBSCAN as a transitive closure: core points are those with at least
/// `min_pts` same-class points within `eps` (self included); clusters are
/// the closure of "both core and within eps"; a non-core point joins the
/// cluster, among those of its core neighbors, whose lowest core index is
/// smallest. Labels are cluster indices in order of lowest core index.
pub fn dbscan_reference(xyz: &[[f64; 3]], semantic: &[i64], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = xyz.len();
    let near = |i: usize, j: usize| {
        let d2: f64 = (0..3).map(|k| (xyz[i][k] - xyz[j][k]).powi(2)).sum();
        semantic[i] >= 0 && semantic[i] == semantic[j] && d2.sqrt() <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && near(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    // cluster key of a core point = lowest core index reachable from it
    let key = |i: usize| (0..n).find(|&j| reach[i][j]).unwrap_or(i);
    let keys: BTreeSet<usize> = (0..n).filter(|&i| core[i]).map(key).collect();
    let keys: Vec<usize> = keys.into_iter().collect();
    let id_of = |k: usize| keys.iter().position(|&x| x == k).unwrap() as i64;
    (0..n)
        .map(|i| {
            if core[i] {
                id_of(key(i))
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(key)
                    .min()
                    .map_or(-1, id_of)
            }
        })
        .collect()
}
