//! Run configuration: every tunable of every stage as `section.key=value`.

use std::fmt::Write as _;
use std::path::Path;

use crate::blockmerge::BlockConfig;
use crate::datagen::SceneSpec;
use crate::error::{Error, Result};
use crate::evaluate::MatchConfig;
use crate::grouping::GroupingConfig;
use crate::losses::LossConfig;
use crate::model::{parse_list, parse_value, ModelConfig};
use crate::trainer::TrainConfig;
use crate::util::content_lines;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    /// Base seed of generated datasets; `seed=` also sets every stage seed.
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub grouping: GroupingConfig,
    pub block: BlockConfig,
    pub data: SceneSpec,
    pub eval: MatchConfig,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets every stage's seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.grouping.seed = seed;
    }

    /// Applies one `section.key=value` setting. `seed` sets all seeds.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if key == "seed" {
            self.set_seed(parse_value(key, value)?);
            return Ok(());
        }
        let (section, name) = key.split_once('.').ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let known = match section {
            "model" => self.model.set(name, value)?,
            "loss" => self.set_loss(key, name, value)?,
            "train" => self.set_train(key, name, value)?,
            "grouping" => self.set_grouping(key, name, value)?,
            "block" => self.set_block(key, name, value)?,
            "data" => self.set_data(key, name, value)?,
            "eval" if name == "iou_thresholds" => {
                self.eval.iou_thresholds = parse_list(key, value)?;
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key `{key}`")))
        }
    }

    fn set_loss(&mut self, key: &str, name: &str, v: &str) -> Result<bool> {
        let c = &mut self.loss;
        match name {
            "k1" => c.k1 = parse_value(key, v)?,
            "k2" => c.k2 = parse_value(key, v)?,
            "alpha_initial" => c.alpha_initial = parse_value(key, v)?,
            "alpha_step" => c.alpha_step = parse_value(key, v)?,
            "alpha_every_epochs" => c.alpha_every_epochs = parse_value(key, v)?,
            "class_weights" => c.class_weights = parse_list(key, v)?,
            "sim_norm" => c.sim_norm = if v == "points" { None } else { Some(parse_value(key, v)?) },
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_train(&mut self, key: &str, name: &str, v: &str) -> Result<bool> {
        let c = &mut self.train;
        match name {
            "lr_initial" => c.lr_initial = parse_value(key, v)?,
            "adam_beta1" => c.adam_beta1 = parse_value(key, v)?,
            "adam_beta2" => c.adam_beta2 = parse_value(key, v)?,
            "adam_eps" => c.adam_eps = parse_value(key, v)?,
            "batch_size" => c.batch_size = parse_value(key, v)?,
            "lr_halve_every_epochs" => c.lr_halve_every_epochs = parse_value(key, v)?,
            "warmup_epochs" => c.warmup_epochs = parse_value(key, v)?,
            "max_epochs" => c.max_epochs = parse_value(key, v)?,
            "max_steps" => c.max_steps = parse_value(key, v)?,
            "checkpoint_every" => c.checkpoint_every = parse_value(key, v)?,
            "seed" => c.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_grouping(&mut self, key: &str, name: &str, v: &str) -> Result<bool> {
        let c = &mut self.grouping;
        match name {
            "th_c" => c.th_c = parse_value(key, v)?,
            "th_m1" => c.th_m1 = parse_value(key, v)?,
            "th_m2" => c.th_m2 = parse_value(key, v)?,
            "th_s_mode" => c.th_s_mode = v.parse()?,
            "th_s_fixed" => c.th_s_fixed = parse_value(key, v)?,
            "th_s_min" => c.th_s_min = parse_value(key, v)?,
            "th_s_max" => c.th_s_max = parse_value(key, v)?,
            "hist_max" => c.hist_max = parse_value(key, v)?,
            "hist_bins" => c.hist_bins = parse_value(key, v)?,
            "seed" => c.seed = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_block(&mut self, key: &str, name: &str, v: &str) -> Result<bool> {
        let c = &mut self.block;
        match name {
            "block_size" => c.block_size = parse_value(key, v)?,
            "stride" => c.stride = parse_value(key, v)?,
            "mode_min" => c.mode_min = parse_value(key, v)?,
            "resolution" => c.resolution = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn set_data(&mut self, key: &str, name: &str, v: &str) -> Result<bool> {
        let c = &mut self.data;
        match name {
            "n_points" => c.n_points = parse_value(key, v)?,
            "n_classes" => c.n_classes = parse_value(key, v)?,
            "min_instances" => c.min_instances = parse_value(key, v)?,
            "max_instances" => c.max_instances = parse_value(key, v)?,
            "room" => {
                let r: Vec<f64> = parse_list(key, v)?;
                c.room = r
                    .try_into()
                    .map_err(|_| Error::Config(format!("`{key}` needs three extents")))?;
            }
            "min_separation" => c.min_separation = parse_value(key, v)?,
            "half_extent" => {
                c.half_extent = v
                    .split(',')
                    .map(|r| {
                        let (lo, hi) = r
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("`{key}` expects lo:hi ranges, got `{r}`")))?;
                        Ok((parse_value(key, lo)?, parse_value(key, hi)?))
                    })
                    .collect::<Result<_>>()?;
            }
            "noise_sigma" => c.noise_sigma = parse_value(key, v)?,
            "color_sigma" => c.color_sigma = parse_value(key, v)?,
            "background_points" => c.background_points = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.grouping.validate()?;
        self.block.validate()?;
        self.data.validate()?;
        self.eval.validate()?;
        if self.data.n_classes != self.model.n_classes {
            return Err(Error::Config(format!(
                "data.n_classes={} but model.n_classes={}",
                self.data.n_classes, self.model.n_classes
            )));
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(path: &Path, text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (ln, line) in content_lines(text) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, ln, "expected `key=value`"))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}:{ln}: {msg}", path.display())),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(path, &text)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        for line in self.model.to_kv().lines() {
            let _ = writeln!(s, "model.{line}");
        }
        let l = &self.loss;
        let _ = writeln!(s, "loss.k1={}", l.k1);
        let _ = writeln!(s, "loss.k2={}", l.k2);
        let _ = writeln!(s, "loss.alpha_initial={}", l.alpha_initial);
        let _ = writeln!(s, "loss.alpha_step={}", l.alpha_step);
        let _ = writeln!(s, "loss.alpha_every_epochs={}", l.alpha_every_epochs);
        let _ = writeln!(s, "loss.class_weights={}", join(&l.class_weights));
        let _ = writeln!(s, "loss.sim_norm={}", l.sim_norm.map_or("points".into(), |v| v.to_string()));
        let t = &self.train;
        let _ = writeln!(s, "train.lr_initial={}", t.lr_initial);
        let _ = writeln!(s, "train.adam_beta1={}", t.adam_beta1);
        let _ = writeln!(s, "train.adam_beta2={}", t.adam_beta2);
        let _ = writeln!(s, "train.adam_eps={}", t.adam_eps);
        let _ = writeln!(s, "train.batch_size={}", t.batch_size);
        let _ = writeln!(s, "train.lr_halve_every_epochs={}", t.lr_halve_every_epochs);
        let _ = writeln!(s, "train.warmup_epochs={}", t.warmup_epochs);
        let _ = writeln!(s, "train.max_epochs={}", t.max_epochs);
        let _ = writeln!(s, "train.max_steps={}", t.max_steps);
        let _ = writeln!(s, "train.checkpoint_every={}", t.checkpoint_every);
        let _ = writeln!(s, "train.seed={}", t.seed);
        let g = &self.grouping;
        let _ = writeln!(s, "grouping.th_c={}", g.th_c);
        let _ = writeln!(s, "grouping.th_m1={}", g.th_m1);
        let _ = writeln!(s, "grouping.th_m2={}", g.th_m2);
        let _ = writeln!(s, "grouping.th_s_mode={}", g.th_s_mode);
        let _ = writeln!(s, "grouping.th_s_fixed={}", g.th_s_fixed);
        let _ = writeln!(s, "grouping.th_s_min={}", g.th_s_min);
        let _ = writeln!(s, "grouping.th_s_max={}", g.th_s_max);
        let _ = writeln!(s, "grouping.hist_max={}", g.hist_max);
        let _ = writeln!(s, "grouping.hist_bins={}", g.hist_bins);
        let _ = writeln!(s, "grouping.seed={}", g.seed);
        let b = &self.block;
        let _ = writeln!(s, "block.block_size={}", b.block_size);
        let _ = writeln!(s, "block.stride={}", b.stride);
        let _ = writeln!(s, "block.mode_min={}", b.mode_min);
        let _ = writeln!(s, "block.resolution={}", b.resolution);
        let d = &self.data;
        let _ = writeln!(s, "data.n_points={}", d.n_points);
        let _ = writeln!(s, "data.n_classes={}", d.n_classes);
        let _ = writeln!(s, "data.min_instances={}", d.min_instances);
        let _ = writeln!(s, "data.max_instances={}", d.max_instances);
        let _ = writeln!(s, "data.room={}", join(&d.room));
        let _ = writeln!(s, "data.min_separation={}", d.min_separation);
        let ranges: Vec<String> = d.half_extent.iter().map(|(lo, hi)| format!("{lo}:{hi}")).collect();
        let _ = writeln!(s, "data.half_extent={}", ranges.join(","));
        let _ = writeln!(s, "data.noise_sigma={}", d.noise_sigma);
        let _ = writeln!(s, "data.color_sigma={}", d.color_sigma);
        let _ = writeln!(s, "data.background_points={}", d.background_points);
        let _ = writeln!(s, "eval.iou_thresholds={}", join(&self.eval.iou_thresholds));
        s
    }
}
