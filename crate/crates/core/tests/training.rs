use simgroup::datagen::{generate_dataset, SceneSpec};
use simgroup::model::{Model, ModelConfig};
use simgroup::pointset::{LabelSet, PointCloud};
use simgroup::trainer::{fit, TrainSetup};

fn small_dataset(count: u64) -> Vec<(PointCloud, LabelSet)> {
    let spec = SceneSpec {
        n_points: 96,
        min_instances: 2,
        max_instances: 4,
        ..SceneSpec::default()
    };
    generate_dataset(&spec, 3, 0, count)
        .unwrap()
        .into_iter()
        .map(|s| (s.cloud, s.labels))
        .collect()
}

fn small_model() -> Model {
    Model::init(ModelConfig {
        backbone_widths: vec![16, 16],
        shared_dim: 16,
        head_dim: 8,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn setup(epochs: usize, warmup: usize) -> TrainSetup {
    let mut s = TrainSetup::default();
    s.train.max_epochs = epochs;
    s.train.warmup_epochs = warmup;
    s.train.batch_size = 2;
    s
}

#[test]
fn same_seed_gives_identical_parameters() {
    let data = small_dataset(6);
    let (mut a, mut b) = (small_model(), small_model());
    let la = fit(&mut a, &data, &setup(3, 1), None, |_| {}).unwrap();
    let lb = fit(&mut b, &data, &setup(3, 1), None, |_| {}).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(la, lb);

    let mut other = setup(3, 1);
    other.train.seed = 1;
    let mut c = small_model();
    fit(&mut c, &data, &other, None, |_| {}).unwrap();
    assert_ne!(a.params(), c.params());
}

#[test]
fn warmup_leaves_confidence_and_semantic_heads_untouched() {
    let data = small_dataset(4);
    let before = small_model();
    let mut model = before.clone();
    fit(&mut model, &data, &setup(2, 2), None, |_| {}).unwrap();
    for ((name, old), (_, new)) in before.params().iter().zip(model.params()) {
        let frozen = ["cf.", "sem.", "logits.", "confidence."].iter().any(|p| name.starts_with(p));
        if frozen {
            assert_eq!(old, new, "{name} moved during warmup");
        } else {
            assert_ne!(old, new, "{name} did not train");
        }
    }
    fit(&mut model, &data, &setup(1, 0), None, |_| {}).unwrap();
    let after = model.params();
    assert!(before.params().iter().zip(after).all(|((_, a), (_, b))| a != b));
}

#[test]
fn zero_epochs_is_a_no_op() {
    let data = small_dataset(2);
    let before = small_model();
    let mut model = before.clone();
    let log = fit(&mut model, &data, &setup(0, 0), None, |_| {}).unwrap();
    assert!(log.is_empty());
    assert_eq!(model.params(), before.params());
}

#[test]
fn similarity_loss_decreases() {
    let data = small_dataset(8);
    let mut model = small_model();
    let mut s = setup(12, 0);
    s.train.lr_initial = 0.002;
    let log = fit(&mut model, &data, &s, None, |_| {}).unwrap();
    let first = log.first().unwrap().losses.l_sim;
    let last = log.last().unwrap().losses.l_sim;
    assert!(last < 0.8 * first, "l_sim {first} -> {last}");
    assert!(log.iter().all(|e| e.losses.total.is_finite()));
}

#[test]
fn checkpoints_are_written_on_schedule() {
    let data = small_dataset(2);
    let dir = tempfile::tempdir().unwrap();
    let mut s = setup(4, 0);
    s.train.checkpoint_every = 2;
    let mut model = small_model();
    fit(&mut model, &data, &s, Some(dir.path()), |_| {}).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["epoch_2.sgw", "epoch_4.sgw"]);
    let restored = simgroup::diffmath::checkpoint::load(&dir.path().join("epoch_4.sgw")).unwrap();
    let restored = Model::from_named(restored, 0).unwrap();
    assert_eq!(restored.params(), model.params());
}
