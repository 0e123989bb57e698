//! Training objectives: the double-hinge similarity loss, the confidence
//! regression, and class-balanced semantic cross-entropy.

use std::sync::Arc;

use crate::diffmath::{EntryTerm, EntryTerms, Graph, Matrix, NodeId};
use crate::error::{Error, Result};
use crate::grouping::{estimate_th_s, GroupingConfig};
use crate::model::{ModelNodes, SimilarityMatrix};
use crate::pointset::{build_groups, build_pair_classes, GroundTruthGroups, LabelSet, PairClass, PairClassMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Margin for same-class pairs of different instances.
    pub k1: f64,
    /// Margin for pairs of different classes.
    pub k2: f64,
    pub alpha_initial: f64,
    pub alpha_step: f64,
    pub alpha_every_epochs: usize,
    /// Per-class weights for the semantic loss. Empty means all ones for a
    /// single loss; `trainer::fit` fills it with median-frequency weights.
    pub class_weights: Vec<f64>,
    /// Divisor of the summed similarity loss; `None` uses the point count.
    pub sim_norm: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            k1: 1.0,
            k2: 2.0,
            alpha_initial: 2.0,
            alpha_step: 2.0,
            alpha_every_epochs: 5,
            class_weights: Vec::new(),
            sim_norm: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > self.k1) {
            return Err(Error::Config(format!(
                "need K2 > K1 > 0, got K1={} K2={}",
                self.k1, self.k2
            )));
        }
        if self.alpha_initial < 1.0 || self.alpha_step < 0.0 {
            return Err(Error::Config("alpha must start >= 1 and not decrease".into()));
        }
        if self.alpha_every_epochs == 0 {
            return Err(Error::Config("alpha_every_epochs must be >= 1".into()));
        }
        if self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        if matches!(self.sim_norm, Some(v) if !(v > 0.0)) {
            return Err(Error::Config("sim_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l_sim: f64,
    pub l_cf: f64,
    pub l_sem: f64,
    pub total: f64,
}

impl LossValues {
    pub fn new(l_sim: f64, l_cf: f64, l_sem: f64) -> Self {
        LossValues {
            l_sim,
            l_cf,
            l_sem,
            total: l_sim + l_cf + l_sem,
        }
    }
}

pub fn alpha_at_epoch(epoch: usize, cfg: &LossConfig) -> f64 {
    cfg.alpha_initial + cfg.alpha_step * (epoch / cfg.alpha_every_epochs) as f64
}

/// Double-hinge loss over all ordered pairs `(i, j)` of embedding rows,
/// divided by `norm`:
/// same instance pulls the distance to zero, same class pushes it past `k1`
/// (weighted by `alpha`), different class pushes it past `k2`.
pub fn loss_sim(
    g: &mut Graph,
    f_sim: NodeId,
    pairs: &PairClassMatrix,
    alpha: f64,
    k1: f64,
    k2: f64,
    norm: f64,
) -> NodeId {
    let d = g.pairwise_distance(f_sim);
    hinge_terms(g, d, pairs, alpha, k1, k2, norm)
}

fn hinge_terms(
    g: &mut Graph,
    d: NodeId,
    pairs: &PairClassMatrix,
    alpha: f64,
    k1: f64,
    k2: f64,
    norm: f64,
) -> NodeId {
    let n = pairs.n();
    let code = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| match pairs.get(i, j) {
            PairClass::SameInstance => 0,
            PairClass::SameClass => 1,
            PairClass::DifferentClass => 2,
        })
        .collect();
    let terms = vec![
        EntryTerm::Linear(1.0 / norm),
        EntryTerm::Hinge {
            weight: alpha / norm,
            margin: k1,
        },
        EntryTerm::Hinge {
            weight: 1.0 / norm,
            margin: k2,
        },
    ];
    g.entry_terms(
        d,
        Arc::new(EntryTerms {
            rows: n,
            cols: n,
            code,
            terms,
        }),
    )
}

/// IoU between each row's predicted group `{j : S_ij < th_s[i]}` and its
/// ground-truth group. Empty unions (background row with nothing predicted)
/// score zero.
pub fn confidence_targets(s: &SimilarityMatrix, groups: &GroundTruthGroups, th_s: &[f64]) -> Vec<f64> {
    let n = s.n();
    (0..n)
        .map(|i| {
            let (mut inter, mut union) = (0usize, 0usize);
            let gt = groups.row(i);
            for (j, &d) in s.row(i).iter().enumerate() {
                let pred = d < th_s[i];
                inter += (pred && gt[j]) as usize;
                union += (pred || gt[j]) as usize;
            }
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

/// Mean squared error between the confidence column and constant targets.
pub fn loss_cf(g: &mut Graph, confidence: NodeId, targets: &[f64]) -> NodeId {
    let n = targets.len();
    let t = g.input(Matrix::from_vec(n, 1, targets.to_vec()).expect("column"));
    let diff = g.sub(confidence, t);
    let sq = g.square(diff);
    let s = g.sum(sq);
    g.scale(s, 1.0 / n as f64)
}

/// Mean over points of `w[label] * -log softmax(logits)[label]`.
pub fn loss_sem(g: &mut Graph, logits: NodeId, semantic: &[i64], weights: &[f64]) -> Result<NodeId> {
    let n = semantic.len();
    let n_classes = weights.len();
    let mut pick = Matrix::zeros(n, n_classes);
    for (i, &c) in semantic.iter().enumerate() {
        if c < 0 || c as usize >= n_classes {
            return Err(Error::Unlabeled { point: i });
        }
        pick.set(i, c as usize, weights[c as usize]);
    }
    let logp = g.log_softmax(logits);
    let pick = g.input(pick);
    let picked = g.mul(pick, logp);
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / n as f64))
}

/// Class weights `median_freq / freq(c)`, where `freq(c)` is the number of
/// points of class `c` over the number of points in samples containing `c`.
/// The lower median is used for an even number of classes.
pub fn median_frequency_weights(samples: &[LabelSet], n_classes: usize) -> Result<Vec<f64>> {
    let mut count = vec![0usize; n_classes];
    let mut exposure = vec![0usize; n_classes];
    for s in samples {
        let mut here = vec![0usize; n_classes];
        for &c in &s.semantic {
            if c >= 0 && (c as usize) < n_classes {
                here[c as usize] += 1;
            }
        }
        for c in 0..n_classes {
            if here[c] > 0 {
                count[c] += here[c];
                exposure[c] += s.len();
            }
        }
    }
    if let Some(class) = (0..n_classes).find(|&c| count[c] == 0) {
        return Err(Error::AbsentClass { class });
    }
    let freq: Vec<f64> = (0..n_classes)
        .map(|c| count[c] as f64 / exposure[c] as f64)
        .collect();
    let mut sorted = freq.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(n_classes - 1) / 2];
    Ok(freq.iter().map(|f| median / f).collect())
}

/// How the confidence targets threshold each row of the similarity matrix.
#[derive(Clone, Debug)]
pub enum TargetThreshold {
    Fixed(f64),
    /// Per-class histogram estimate over the ground-truth semantic classes.
    PerClass(GroupingConfig),
}

#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub l_sim: NodeId,
    pub l_cf: NodeId,
    pub l_sem: NodeId,
    pub total: NodeId,
}

impl LossNodes {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |id| g.value(id).map_or(f64::NAN, |m: &Matrix| m.get(0, 0));
        LossValues {
            l_sim: v(self.l_sim),
            l_cf: v(self.l_cf),
            l_sem: v(self.l_sem),
            total: v(self.total),
        }
    }
}

/// Appends the three losses and their sum for one labeled sample.
///
/// Evaluates the graph built so far, since the confidence targets depend on
/// the current similarity matrix; they enter the graph as constants.
pub fn build_sample_loss(
    g: &mut Graph,
    nodes: &ModelNodes,
    labels: &LabelSet,
    cfg: &LossConfig,
    alpha: f64,
    threshold: &TargetThreshold,
) -> Result<LossNodes> {
    let n = labels.len();
    let n_classes = labels.n_classes;
    let weights = if cfg.class_weights.is_empty() {
        vec![1.0; n_classes]
    } else if cfg.class_weights.len() == n_classes {
        cfg.class_weights.clone()
    } else {
        return Err(Error::Config(format!(
            "{} class weights for {n_classes} classes",
            cfg.class_weights.len()
        )));
    };
    let pairs = build_pair_classes(labels);
    let norm = cfg.sim_norm.unwrap_or(n as f64);
    let d = g.pairwise_distance(nodes.f_sim);
    let l_sim = hinge_terms(g, d, &pairs, alpha, cfg.k1, cfg.k2, norm);

    g.set_root(l_sim);
    g.forward()?;
    let s = SimilarityMatrix::from_matrix(g.value(d).expect("evaluated").clone())?;
    let th_point: Vec<f64> = match threshold {
        TargetThreshold::Fixed(t) => vec![*t; n],
        TargetThreshold::PerClass(gc) => {
            let th = estimate_th_s(&s, &labels.semantic, n_classes, gc);
            labels
                .semantic
                .iter()
                .map(|&c| usize::try_from(c).ok().and_then(|c| th.get(c).copied()).unwrap_or(gc.th_s_fixed))
                .collect()
        }
    };
    let targets = confidence_targets(&s, &build_groups(labels), &th_point);
    let l_cf = loss_cf(g, nodes.confidence, &targets);
    let l_sem = loss_sem(g, nodes.logits, &labels.semantic, &weights)?;
    let total = g.add(l_sim, l_cf);
    let total = g.add(total, l_sem);
    g.set_root(total);
    Ok(LossNodes {
        l_sim,
        l_cf,
        l_sem,
        total,
    })
}
