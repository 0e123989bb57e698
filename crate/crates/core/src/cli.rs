//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blockmerge::infer_scene;
use crate::config::RunConfig;
use crate::datagen::{generate_scene, scene_seed};
use crate::diffmath::checkpoint;
use crate::error::{Error, Result};
use crate::evaluate::evaluate;
use crate::grouping::{boxes_from_instances, InstanceResult};
use crate::io::{export_ply, read_sin1, write_sin1};
use crate::model::Model;
use crate::pipeline::infer;
use crate::pointset::{read_spc1, write_spc1, LabelSet, PointCloud};
use crate::trainer::{check_loss_gradients, fit, format_log, gradcheck_case, TrainSetup};

#[derive(Parser, Debug)]
#[command(name = "simgroup", version, about = "Point cloud instance segmentation via learned pairwise similarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Sets every seed of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic labeled scenes as SPC1 files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        count: u64,
        /// Index of the first scene within the seeded dataset.
        #[arg(long, default_value_t = 0)]
        first: u64,
    },
    /// Train a model on a directory of SPC1 files.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Segment one cloud into instances (SIN1 output).
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Segment a room-scale cloud block by block and stitch the results.
    Scene {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score SIN1 predictions against SPC1 ground truth (files or directories).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Write a PLY colored by instance.
    ExportPly {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// SIN1 labels; defaults to the ground truth stored in the input.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the total loss.
    CheckGrad {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        cases: u64,
        #[arg(long, default_value_t = 16)]
        points: usize,
        #[arg(long, default_value_t = 4)]
        features: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => 1,
                _ => 2,
            }
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_or(common: &Common, default: impl Into<PathBuf>) -> PathBuf {
    common.out.clone().unwrap_or_else(|| default.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Files with the given extension in `dir`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_model(path: &Path, seed: u64) -> Result<Model> {
    Model::from_named(checkpoint::load(path)?, seed).map_err(|e| match e {
        Error::Config(msg) => Error::parse(path, 0, msg),
        other => other,
    })
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen { common, count, first } => {
            let cfg = resolve(&common)?;
            cfg.data.validate()?;
            let dir = out_or(&common, "scenes");
            create_dir(&dir)?;
            let mut manifest = String::new();
            let _ = writeln!(manifest, "# scene file, scene seed; generated with the settings below");
            let _ = writeln!(manifest, "# seed={}", cfg.seed);
            for line in cfg.to_kv().lines().filter(|l| l.starts_with("data.")) {
                let _ = writeln!(manifest, "# {line}");
            }
            for i in first..first + count {
                let seed = scene_seed(cfg.seed, i);
                let scene = generate_scene(&cfg.data, seed)?;
                let name = format!("scene_{i:05}.spc1");
                write_spc1(&dir.join(&name), &scene.cloud, &scene.labels)?;
                let _ = writeln!(manifest, "{name} {seed}");
            }
            write(&dir.join("manifest.txt"), &manifest)
        }
        Command::Train { common, data } => {
            let mut cfg = resolve(&common)?;
            let files = files_with_ext(&data, "spc1")?;
            if files.is_empty() {
                return Err(Error::parse(&data, 0, "no .spc1 files"));
            }
            let dataset: Vec<(PointCloud, LabelSet)> = files.iter().map(|f| read_spc1(f)).collect::<Result<_>>()?;
            cfg.model.input_dims = dataset[0].0.dims();
            cfg.model.n_classes = dataset[0].1.n_classes;
            cfg.data.n_classes = cfg.model.n_classes;
            cfg.validate()?;
            let dir = out_or(&common, "run");
            create_dir(&dir)?;
            write(&dir.join("train.cfg"), &cfg.to_kv())?;
            let mut model = Model::init(cfg.model.clone())?;
            let setup = TrainSetup {
                train: cfg.train.clone(),
                loss: cfg.loss.clone(),
                grouping: cfg.grouping.clone(),
            };
            let log = fit(&mut model, &dataset, &setup, Some(&dir), |e| {
                eprintln!(
                    "epoch {} step {} l_sim {:.5} l_cf {:.5} l_sem {:.5}",
                    e.epoch, e.step, e.losses.l_sim, e.losses.l_cf, e.losses.l_sem
                );
            })?;
            write(&dir.join("train_log.csv"), &format_log(&log))?;
            checkpoint::save(&dir.join("model.sgw"), &model.named_params())
        }
        Command::Infer { common, model, input } => {
            let cfg = resolve(&common)?;
            cfg.grouping.validate()?;
            let model = load_model(&model, cfg.model.seed)?;
            let (cloud, _) = read_spc1(&input)?;
            let inf = infer(&model, &cloud, &cfg.grouping, 0)?;
            let out = out_or(&common, format!("{}.sin1", stem(&input)));
            write_sin1(&out, &inf.result, &inf.boxes)
        }
        Command::Scene { common, model, input } => {
            let cfg = resolve(&common)?;
            cfg.grouping.validate()?;
            let model = load_model(&model, cfg.model.seed)?;
            let (cloud, _) = read_spc1(&input)?;
            let scene = infer_scene(&model, &cloud, &cfg.grouping, &cfg.block)?;
            let dir = out_or(&common, "scene_out");
            create_dir(&dir)?;
            let boxes = boxes_from_instances(&cloud, &scene.result)?;
            write_sin1(&dir.join("scene.sin1"), &scene.result, &boxes)?;
            write(&dir.join("scene.meta"), &scene.meta(&cfg.block))
        }
        Command::Eval { common, pred, gt } => {
            let cfg = resolve(&common)?;
            let pairs: Vec<(PathBuf, PathBuf)> = if pred.is_dir() {
                files_with_ext(&pred, "sin1")?
                    .into_iter()
                    .map(|p| {
                        let g = gt.join(format!("{}.spc1", stem(&p)));
                        (p, g)
                    })
                    .collect()
            } else {
                vec![(pred, gt)]
            };
            let mut preds = Vec::new();
            let mut semantic = Vec::new();
            let mut gts = Vec::new();
            let mut xyz = Vec::new();
            for (p, g) in &pairs {
                let (result, _) = read_sin1(p)?;
                let (cloud, labels) = read_spc1(g)?;
                if result.n_points() != cloud.n_points() {
                    return Err(Error::parse(p, 0, format!("{} points but {} has {}", result.n_points(), g.display(), cloud.n_points())));
                }
                semantic.push(semantic_from_instances(&result));
                xyz.push((0..cloud.n_points()).map(|i| cloud.xyz(i)).collect());
                preds.push(result);
                gts.push(labels);
            }
            let report = evaluate(&preds, &semantic, &gts, &xyz, &cfg.eval)?;
            match &common.out {
                Some(out) => write(out, &report.to_csv()),
                None => {
                    print!("{}", report.to_csv());
                    Ok(())
                }
            }
        }
        Command::ExportPly { common, input, labels } => {
            let (cloud, gt) = read_spc1(&input)?;
            let ids = match labels {
                Some(p) => read_sin1(&p)?.0.point_instance,
                None => gt.instance,
            };
            export_ply(&out_or(&common, format!("{}.ply", stem(&input))), &cloud, &ids)
        }
        Command::CheckGrad {
            common,
            cases,
            points,
            features,
            step,
            tolerance,
        } => {
            let cfg = resolve(&common)?;
            let mut report = String::from("case,max_rel_error,checked,excluded\n");
            let mut worst = 0.0f64;
            for case in 0..cases {
                let (model, cloud, labels) = gradcheck_case(scene_seed(cfg.seed, case), points, features, cfg.model.n_classes)?;
                let r = check_loss_gradients(&model, &cloud, &labels, &cfg.loss, cfg.loss.alpha_initial, step)?;
                worst = worst.max(r.max_rel_error());
                let _ = writeln!(report, "{case},{:e},{},{}", r.max_rel_error(), r.checked(), r.excluded());
            }
            let _ = writeln!(report, "# worst {worst:e}, tolerance {tolerance:e}");
            match &common.out {
                Some(out) => write(out, &report)?,
                None => print!("{report}"),
            }
            if worst < tolerance {
                Ok(())
            } else {
                Err(Error::GradientMismatch { worst, tolerance })
            }
        }
    }
}

/// Per-point class taken from the instance each point belongs to.
fn semantic_from_instances(result: &InstanceResult) -> Vec<i64> {
    result
        .point_instance
        .iter()
        .map(|&id| if id >= 0 { result.instances[id as usize].class } else { -1 })
        .collect()
}
