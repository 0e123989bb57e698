//! The point network: a shared per-point MLP with a global max-pool, three
//! single-layer heads, and the similarity matrix over the similarity head.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{pairwise_distance, Graph, Matrix, NodeId};
use crate::error::{Error, Result};
use crate::pointset::PointCloud;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dims: usize,
    pub backbone_widths: Vec<usize>,
    /// Width of the shared feature matrix `F`.
    pub shared_dim: usize,
    /// Width of each head's embedding.
    pub head_dim: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dims: 6,
            backbone_widths: vec![64, 64, 128],
            shared_dim: 128,
            head_dim: 32,
            n_classes: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_dims < 3 {
            return bad(format!("input_dims must be >= 3, got {}", self.input_dims));
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return bad("backbone_widths must be a non-empty list of widths >= 1".into());
        }
        if self.shared_dim == 0 {
            return bad("shared_dim must be >= 1".into());
        }
        if self.head_dim < 2 {
            return bad(format!("head_dim must be >= 2, got {}", self.head_dim));
        }
        if self.n_classes == 0 {
            return bad("n_classes must be >= 1".into());
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every parameter in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dims;
        for (l, &w) in self.backbone_widths.iter().enumerate() {
            out.push((format!("backbone.{l}.weight"), fan_in, w));
            out.push((format!("backbone.{l}.bias"), 1, w));
            fan_in = w;
        }
        // local features concatenated with the pooled global feature
        out.push(("shared.weight".into(), 2 * fan_in, self.shared_dim));
        out.push(("shared.bias".into(), 1, self.shared_dim));
        for head in ["sim", "cf", "sem"] {
            out.push((format!("{head}.weight"), self.shared_dim, self.head_dim));
            out.push((format!("{head}.bias"), 1, self.head_dim));
        }
        out.push(("logits.weight".into(), self.head_dim, self.n_classes));
        out.push(("logits.bias".into(), 1, self.n_classes));
        out.push(("confidence.weight".into(), self.head_dim, 1));
        out.push(("confidence.bias".into(), 1, 1));
        out
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let widths: Vec<String> = self.backbone_widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "input_dims={}", self.input_dims);
        let _ = writeln!(s, "backbone_widths={}", widths.join(","));
        let _ = writeln!(s, "shared_dim={}", self.shared_dim);
        let _ = writeln!(s, "head_dim={}", self.head_dim);
        let _ = writeln!(s, "n_classes={}", self.n_classes);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Applies one `key=value` setting; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input_dims" => self.input_dims = parse_value(key, value)?,
            "backbone_widths" => self.backbone_widths = parse_list(key, value)?,
            "shared_dim" => self.shared_dim = parse_value(key, value)?,
            "head_dim" => self.head_dim = parse_value(key, value)?,
            "n_classes" => self.n_classes = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

pub(crate) fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Per-point outputs of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// Shared features, `n x shared_dim`.
    pub features: Matrix,
    pub f_sim: Matrix,
    pub f_cf: Matrix,
    pub f_sem: Matrix,
    /// Semantic logits, `n x n_classes`.
    pub logits: Matrix,
    /// Raw confidence, `n x 1`; clamp to `[0, 1]` before use.
    pub confidence: Matrix,
}

impl FeatureBundle {
    pub fn n_points(&self) -> usize {
        self.features.rows()
    }

    /// Argmax class per point, lowest class on ties.
    pub fn predicted_classes(&self) -> Vec<i64> {
        (0..self.logits.rows())
            .map(|i| {
                let row = self.logits.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as i64
            })
            .collect()
    }

    pub fn clamped_confidence(&self) -> Vec<f64> {
        self.confidence.data().iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }
}

/// Graph nodes produced by [`Model::build`].
#[derive(Clone, Debug)]
pub struct ModelNodes {
    /// One node per parameter, in declaration order.
    pub params: Vec<NodeId>,
    pub features: NodeId,
    pub f_sim: NodeId,
    pub f_cf: NodeId,
    pub f_sem: NodeId,
    pub logits: NodeId,
    pub confidence: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<(String, Matrix)>,
}

impl Model {
    /// Weights drawn from `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, rows, cols)| {
                let m = if rows == 1 && name.ends_with(".bias") {
                    Matrix::zeros(rows, cols)
                } else {
                    let s = (6.0 / (rows + cols) as f64).sqrt();
                    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-s..s))
                };
                (name, m)
            })
            .collect();
        Ok(Model { config, params })
    }

    /// Rebuilds a model from named parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<(String, Matrix)>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, rows, cols), (pname, m)) in shapes.iter().zip(&params) {
            if name != pname || m.shape() != (*rows, *cols) {
                return Err(Error::Config(format!(
                    "parameter `{pname}` {:?} does not match `{name}` ({rows}, {cols})",
                    m.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    /// Rebuilds a model from named parameters alone, reading the
    /// architecture off their shapes.
    pub fn from_named(params: Vec<(String, Matrix)>, seed: u64) -> Result<Self> {
        let shape = |name: &str| {
            params
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m.shape())
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
        };
        let mut backbone_widths = Vec::new();
        let input_dims = shape("backbone.0.weight")?.0;
        while let Ok((_, w)) = shape(&format!("backbone.{}.weight", backbone_widths.len())) {
            backbone_widths.push(w);
        }
        let shared_dim = shape("shared.weight")?.1;
        let head_dim = shape("sim.weight")?.1;
        let n_classes = shape("logits.weight")?.1;
        let config = ModelConfig {
            input_dims,
            backbone_widths,
            shared_dim,
            head_dim,
            n_classes,
            seed,
        };
        Model::from_params(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Matrix)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.params.iter_mut().map(|(_, m)| m)
    }

    pub fn named_params(&self) -> Vec<(&str, &Matrix)> {
        self.params.iter().map(|(n, m)| (n.as_str(), m)).collect()
    }

    /// Records the forward pass for `cloud` into `g`.
    pub fn build(&self, g: &mut Graph, cloud: &PointCloud) -> Result<ModelNodes> {
        if cloud.dims() != self.config.input_dims {
            return Err(Error::InvalidArgument(format!(
                "cloud has {} attribute columns, model expects {}",
                cloud.dims(),
                self.config.input_dims
            )));
        }
        let n = cloud.n_points();
        let ids: Vec<NodeId> = self
            .params
            .iter()
            .map(|(name, m)| g.param(name.clone(), m.clone()))
            .collect();
        let mut next = ids.iter().copied();
        let mut take = || next.next().expect("parameter layout");

        let mut h = g.input(cloud.attrs().clone());
        for _ in &self.config.backbone_widths {
            let (w, b) = (take(), take());
            let a = g.affine(h, w, b);
            h = g.relu(a);
        }
        let global = g.max_pool_rows(h);
        let tiled = g.repeat_rows(global, n);
        let cat = g.concat_cols(h, tiled);
        let (w, b) = (take(), take());
        let shared = g.affine(cat, w, b);
        let features = g.relu(shared);

        let mut head = || {
            let (w, b) = (take(), take());
            let a = g.affine(features, w, b);
            g.relu(a)
        };
        let f_sim = head();
        let f_cf = head();
        let f_sem = head();
        let (w, b) = (take(), take());
        let logits = g.affine(f_sem, w, b);
        let (w, b) = (take(), take());
        let confidence = g.affine(f_cf, w, b);

        Ok(ModelNodes {
            params: ids,
            features,
            f_sim,
            f_cf,
            f_sem,
            logits,
            confidence,
        })
    }

    pub fn forward(&self, cloud: &PointCloud) -> Result<FeatureBundle> {
        let mut g = Graph::new();
        let nodes = self.build(&mut g, cloud)?;
        g.set_root(nodes.confidence);
        g.forward()?;
        Ok(bundle_from(&g, &nodes))
    }
}

pub(crate) fn bundle_from(g: &Graph, nodes: &ModelNodes) -> FeatureBundle {
    let v = |id| g.value(id).expect("evaluated").clone();
    FeatureBundle {
        features: v(nodes.features),
        f_sim: v(nodes.f_sim),
        f_cf: v(nodes.f_cf),
        f_sem: v(nodes.f_sem),
        logits: v(nodes.logits),
        confidence: v(nodes.confidence),
    }
}

/// `n x n` Euclidean distances between similarity embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    dist: Matrix,
}

impl SimilarityMatrix {
    pub fn from_embeddings(f_sim: &Matrix) -> Self {
        SimilarityMatrix {
            dist: pairwise_distance(f_sim),
        }
    }

    /// Wraps an existing distance matrix; it must be square.
    pub fn from_matrix(dist: Matrix) -> Result<Self> {
        if dist.rows() != dist.cols() {
            return Err(Error::InvalidArgument("similarity matrix must be square".into()));
        }
        Ok(SimilarityMatrix { dist })
    }

    pub fn n(&self) -> usize {
        self.dist.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.dist.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.dist
    }
}

pub fn similarity(bundle: &FeatureBundle) -> SimilarityMatrix {
    SimilarityMatrix::from_embeddings(&bundle.f_sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(Matrix::from_rows(rows)).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dims: 3,
            backbone_widths: vec![8, 8],
            shared_dim: 8,
            head_dim: 4,
            n_classes: 3,
            seed: 1,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = Model::init(small_config()).unwrap();
        let b = Model::init(small_config()).unwrap();
        assert_eq!(a, b);
        let c = Model::init(ModelConfig {
            seed: 2,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn head_dim_zero_rejected() {
        let cfg = ModelConfig {
            head_dim: 0,
            ..small_config()
        };
        assert!(matches!(Model::init(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_collapse_similarity() {
        let mut m = Model::init(small_config()).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let b = m.forward(&cloud(&[[0.0, 1.0, 2.0], [5.0, -1.0, 0.5], [3.0, 3.0, 3.0]])).unwrap();
        let s = similarity(&b);
        assert!(s.as_matrix().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shapes() {
        let cfg = small_config();
        let m = Model::init(cfg.clone()).unwrap();
        let b = m
            .forward(&cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
            .unwrap();
        assert_eq!(b.features.shape(), (4, cfg.shared_dim));
        assert_eq!(b.f_sim.shape(), (4, cfg.head_dim));
        assert_eq!(b.f_cf.shape(), (4, cfg.head_dim));
        assert_eq!(b.f_sem.shape(), (4, cfg.head_dim));
        assert_eq!(b.logits.shape(), (4, cfg.n_classes));
        assert_eq!(b.confidence.shape(), (4, 1));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = Model::init(ModelConfig {
            input_dims: 6,
            ..small_config()
        })
        .unwrap();
        assert!(m.forward(&cloud(&[[0.0; 3]])).is_err());
    }

    #[test]
    fn similarity_examples() {
        let s = SimilarityMatrix::from_embeddings(&Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]));
        assert_eq!(s.as_matrix(), &Matrix::from_rows(&[[0.0, 5.0], [5.0, 0.0]]));
        let same = Matrix::from_rows(&[[0.3, -1.7, 2.2], [0.3, -1.7, 2.2], [0.3, -1.7, 2.2]]);
        let s = SimilarityMatrix::from_embeddings(&same);
        assert!(s.as_matrix().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            backbone_widths: vec![5, 7],
            seed: 99,
            ..ModelConfig::default()
        };
        let mut back = ModelConfig::default();
        for line in cfg.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(back.set(k, v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("nope", "1").unwrap());
    }

    #[test]
    fn from_params_checks_layout() {
        let m = Model::init(small_config()).unwrap();
        let mut params = m.params().to_vec();
        assert!(Model::from_params(small_config(), params.clone()).is_ok());
        params[0].1 = Matrix::zeros(1, 1);
        assert!(Model::from_params(small_config(), params).is_err());
    }
}
