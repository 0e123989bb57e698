//! ADAM training loop with step-decayed learning rate and a similarity-only
//! warmup.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{checkpoint, GradCheck, GradReport, Graph, Matrix};
use crate::error::{Error, Result};
use crate::grouping::GroupingConfig;
use crate::losses::{alpha_at_epoch, build_sample_loss, median_frequency_weights, LossConfig, LossValues, TargetThreshold};
use crate::model::{Model, ModelConfig};
use crate::pointset::{LabelSet, PointCloud};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub lr_halve_every_epochs: usize,
    /// Epochs trained on the similarity loss alone.
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    /// Write `epoch_<k>.sgw` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 0.0005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            lr_halve_every_epochs: 20,
            warmup_epochs: 5,
            max_epochs: 60,
            max_steps: 0,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0) {
            return Err(Error::Config("lr_initial must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr_halve_every_epochs == 0 {
            return Err(Error::Config("lr_halve_every_epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("ADAM betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_initial * 0.5f64.powi((epoch / cfg.lr_halve_every_epochs) as i32)
}

/// ADAM moments plus loop bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &Model, seed: u64) -> Self {
        let zeros: Vec<Matrix> = model
            .params()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        TrainState {
            epoch: 0,
            step: 0,
            first: zeros.clone(),
            second: zeros,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// One bias-corrected ADAM update; increments `state.step`.
pub fn adam_update<'a>(
    params: impl Iterator<Item = &'a mut Matrix>,
    grads: &[Matrix],
    state: &mut TrainState,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Everything a step needs besides the model and data.
#[derive(Clone, Debug, Default)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Thresholds used for confidence targets once warmup is over.
    pub grouping: GroupingConfig,
}

/// Loss and parameter gradients for one labeled sample.
pub fn sample_gradients(
    model: &Model,
    cloud: &PointCloud,
    labels: &LabelSet,
    loss: &LossConfig,
    alpha: f64,
    threshold: &TargetThreshold,
    similarity_only: bool,
) -> Result<(LossValues, Vec<Matrix>)> {
    let mut g = Graph::new();
    let nodes = model.build(&mut g, cloud)?;
    let losses = build_sample_loss(&mut g, &nodes, labels, loss, alpha, threshold)?;
    g.set_root(if similarity_only { losses.l_sim } else { losses.total });
    g.forward()?;
    if let Some((node, op)) = g.first_non_finite() {
        return Err(Error::NonFinite { node, op });
    }
    g.backward()?;
    let grads = nodes
        .params
        .iter()
        .map(|&p| {
            g.grad(p).cloned().unwrap_or_else(|| {
                let (r, c) = g.value(p).expect("leaf").shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();
    Ok((losses.values(&g), grads))
}

/// One optimizer step on the batch mean. During warmup only the similarity
/// loss drives the update; the other losses are still reported.
pub fn train_step(
    model: &mut Model,
    batch: &[(&PointCloud, &LabelSet)],
    state: &mut TrainState,
    setup: &TrainSetup,
) -> Result<LossValues> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let warm = state.epoch < setup.train.warmup_epochs;
    let alpha = alpha_at_epoch(state.epoch, &setup.loss);
    let threshold = if warm {
        TargetThreshold::Fixed(setup.loss.k1)
    } else {
        TargetThreshold::PerClass(setup.grouping.clone())
    };
    let scale = 1.0 / batch.len() as f64;
    let mut grads: Vec<Matrix> = Vec::new();
    let mut acc = LossValues::default();
    for (cloud, labels) in batch {
        let (vals, g) = sample_gradients(model, cloud, labels, &setup.loss, alpha, &threshold, warm)?;
        if grads.is_empty() {
            grads = g.into_iter().map(|mut m| {
                m.scale_in_place(scale);
                m
            }).collect();
        } else {
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_scaled(b, scale);
            }
        }
        acc.l_sim += vals.l_sim * scale;
        acc.l_cf += vals.l_cf * scale;
        acc.l_sem += vals.l_sem * scale;
    }
    let lr = lr_at_epoch(state.epoch, &setup.train);
    adam_update(model.params_mut(), &grads, state, lr, &setup.train);
    Ok(LossValues::new(acc.l_sim, acc.l_cf, acc.l_sem))
}

/// Finite-difference check of one sample's total loss with respect to every
/// model parameter. Confidence targets are held at their values for the
/// unperturbed parameters.
pub fn check_loss_gradients(
    model: &Model,
    cloud: &PointCloud,
    labels: &LabelSet,
    loss: &LossConfig,
    alpha: f64,
    step: f64,
) -> Result<GradReport> {
    let mut g = Graph::new();
    let nodes = model.build(&mut g, cloud)?;
    build_sample_loss(&mut g, &nodes, labels, loss, alpha, &TargetThreshold::Fixed(loss.k1))?;
    GradCheck::new(step).run(&mut g)
}

/// A small random model and labeled cloud for gradient checks: `n_points`
/// points with `head_dim`-wide embeddings, labels drawn over `n_classes`.
pub fn gradcheck_case(seed: u64, n_points: usize, head_dim: usize, n_classes: usize) -> Result<(Model, PointCloud, LabelSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(ModelConfig {
        input_dims: 6,
        backbone_widths: vec![8, 8],
        shared_dim: 8,
        head_dim,
        n_classes,
        seed: rng.random(),
    })?;
    let attrs = Matrix::from_fn(n_points, 6, |_, _| rng.random_range(-1.0..1.0));
    let n_instances = n_points.div_ceil(4).max(1);
    let class_of: Vec<i64> = (0..n_instances).map(|_| rng.random_range(0..n_classes) as i64).collect();
    let instance: Vec<i64> = (0..n_points).map(|_| rng.random_range(0..n_instances) as i64).collect();
    let semantic = instance.iter().map(|&i| class_of[i as usize]).collect();
    Ok((model, PointCloud::new(attrs)?, LabelSet::new(semantic, instance, n_classes)?))
}

/// Per-epoch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    pub losses: LossValues,
    pub lr: f64,
    pub alpha: f64,
}

pub const LOG_HEADER: &str = "epoch,step,l_sim,l_cf,l_sem,total,lr,alpha";

pub fn format_log(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            e.epoch, e.step, e.losses.l_sim, e.losses.l_cf, e.losses.l_sem, e.losses.total, e.lr, e.alpha
        );
    }
    s
}

/// Trains for `max_epochs` (or until `max_steps`), reshuffling the data each
/// epoch from the seeded state. Checkpoints go to `checkpoint_dir` when set.
pub fn fit(
    model: &mut Model,
    dataset: &[(PointCloud, LabelSet)],
    setup: &TrainSetup,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    setup.train.validate()?;
    setup.loss.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut setup = setup.clone();
    if setup.loss.class_weights.is_empty() {
        let labels: Vec<LabelSet> = dataset.iter().map(|(_, l)| l.clone()).collect();
        setup.loss.class_weights = median_frequency_weights(&labels, model.config().n_classes)?;
    }
    let mut state = TrainState::new(model, setup.train.seed);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    'epochs: for epoch in 0..setup.train.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut state.rng);
        let mut sums = LossValues::default();
        let mut batches = 0usize;
        for chunk in order.chunks(setup.train.batch_size) {
            if setup.train.max_steps > 0 && state.step >= setup.train.max_steps {
                if batches == 0 {
                    break 'epochs;
                }
                break;
            }
            let batch: Vec<(&PointCloud, &LabelSet)> = chunk.iter().map(|&i| (&dataset[i].0, &dataset[i].1)).collect();
            let v = train_step(model, &batch, &mut state, &setup)?;
            sums.l_sim += v.l_sim;
            sums.l_cf += v.l_cf;
            sums.l_sem += v.l_sem;
            batches += 1;
        }
        let k = batches as f64;
        let entry = EpochLog {
            epoch,
            step: state.step,
            losses: LossValues::new(sums.l_sim / k, sums.l_cf / k, sums.l_sem / k),
            lr: lr_at_epoch(epoch, &setup.train),
            alpha: alpha_at_epoch(epoch, &setup.loss),
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(dir) = checkpoint_dir {
            if setup.train.checkpoint_every > 0 && (epoch + 1) % setup.train.checkpoint_every == 0 {
                checkpoint::save(&dir.join(format!("epoch_{}.sgw", epoch + 1)), &model.named_params())?;
            }
        }
    }
    Ok(log)
}
