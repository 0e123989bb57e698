//! Point clouds, per-point labels and the pairwise ground-truth structures
//! derived from them.
//!
//! The `SPC1` text format stores one cloud with its labels:
//!
//! ```text
//! SPC1 <n_points> <dims> <n_classes>
//! <dims floats> <semantic id> <instance id>     # one line per point
//! ```
//!
//! Missing semantic labels and background instances are both written `-1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

pub const UNLABELED: i64 = -1;
pub const BACKGROUND: i64 = -1;

/// `n_points x dims` attributes; columns 0..3 are XYZ in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    attrs: Matrix,
}

impl PointCloud {
    pub fn new(attrs: Matrix) -> Result<Self> {
        if attrs.rows() == 0 {
            return Err(Error::InvalidArgument("point cloud has no points".into()));
        }
        if attrs.cols() < 3 {
            return Err(Error::InvalidArgument(format!(
                "point cloud needs at least 3 attribute columns, got {}",
                attrs.cols()
            )));
        }
        if let Some(i) = (0..attrs.rows()).find(|&i| attrs.row(i)[..3].iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} has non-finite XYZ")));
        }
        Ok(PointCloud { attrs })
    }

    pub fn n_points(&self) -> usize {
        self.attrs.rows()
    }

    pub fn dims(&self) -> usize {
        self.attrs.cols()
    }

    pub fn attrs(&self) -> &Matrix {
        &self.attrs
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let r = self.attrs.row(i);
        [r[0], r[1], r[2]]
    }

    /// Axis-aligned bounds of the XYZ columns as `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in 0..self.n_points() {
            let p = self.xyz(i);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Sub-cloud of the given points, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<PointCloud> {
        PointCloud::new(self.attrs.select_rows(idx))
    }

    /// Copy with the XYZ columns shifted by `-offset`.
    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        let mut attrs = self.attrs.clone();
        for i in 0..attrs.rows() {
            let r = attrs.row_mut(i);
            for a in 0..3 {
                r[a] -= offset[a];
            }
        }
        PointCloud { attrs }
    }
}

/// Per-point semantic and instance labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    pub semantic: Vec<i64>,
    pub instance: Vec<i64>,
    pub n_classes: usize,
}

impl LabelSet {
    pub fn new(semantic: Vec<i64>, instance: Vec<i64>, n_classes: usize) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::InvalidArgument(format!(
                "{} semantic labels but {} instance labels",
                semantic.len(),
                instance.len()
            )));
        }
        if let Some(i) = semantic
            .iter()
            .position(|&s| s != UNLABELED && (s < 0 || s as usize >= n_classes))
        {
            return Err(Error::InvalidArgument(format!(
                "point {i} has semantic id {} outside [0, {n_classes})",
                semantic[i]
            )));
        }
        if let Some(i) = instance.iter().position(|&v| v < BACKGROUND) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has invalid instance id {}",
                instance[i]
            )));
        }
        Ok(LabelSet {
            semantic,
            instance,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabelSet {
        LabelSet {
            semantic: idx.iter().map(|&i| self.semantic[i]).collect(),
            instance: idx.iter().map(|&i| self.instance[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Distinct non-background instance ids, ascending.
    pub fn instance_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.instance.iter().copied().filter(|&v| v >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Semantic class of each ground-truth instance (majority of its points).
    pub fn instance_classes(&self) -> Vec<(i64, i64)> {
        self.instance_ids()
            .into_iter()
            .map(|id| {
                let labels = self
                    .instance
                    .iter()
                    .zip(&self.semantic)
                    .filter(|(&i, _)| i == id)
                    .map(|(_, &s)| s);
                (id, crate::util::mode(labels).unwrap_or(UNLABELED))
            })
            .collect()
    }
}

/// Symmetric `n x n` membership: `G_ij = 1` iff points `i` and `j` share an
/// instance. Background rows are all zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthGroups {
    n: usize,
    data: Vec<bool>,
}

impl GroundTruthGroups {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

pub fn build_groups(labels: &LabelSet) -> GroundTruthGroups {
    let n = labels.len();
    let mut data = vec![false; n * n];
    for i in 0..n {
        let a = labels.instance[i];
        if a == BACKGROUND {
            continue;
        }
        for j in 0..n {
            data[i * n + j] = labels.instance[j] == a;
        }
    }
    GroundTruthGroups { n, data }
}

/// Pair similarity class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PairClass {
    SameInstance = 1,
    SameClass = 2,
    DifferentClass = 3,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairClassMatrix {
    n: usize,
    data: Vec<PairClass>,
}

impl PairClassMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> PairClass {
        self.data[i * self.n + j]
    }

    /// 0/1 indicator matrix of one class.
    pub fn mask(&self, class: PairClass) -> Matrix {
        let data = self
            .data
            .iter()
            .map(|&c| if c == class { 1.0 } else { 0.0 })
            .collect();
        Matrix::from_vec(self.n, self.n, data).expect("square")
    }
}

/// Classifies every ordered pair. A background point pairs with anything as
/// "different class", except another background point with the same semantic
/// label, which pairs as "same class". The diagonal is always "same instance".
pub fn build_pair_classes(labels: &LabelSet) -> PairClassMatrix {
    let n = labels.len();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let (si, ii) = (labels.semantic[i], labels.instance[i]);
        for j in 0..n {
            let (sj, ij) = (labels.semantic[j], labels.instance[j]);
            let c = if i == j || (ii != BACKGROUND && ii == ij) {
                PairClass::SameInstance
            } else if (ii == BACKGROUND) != (ij == BACKGROUND) {
                PairClass::DifferentClass
            } else if si == sj {
                PairClass::SameClass
            } else {
                PairClass::DifferentClass
            };
            data.push(c);
        }
    }
    PairClassMatrix { n, data }
}

pub fn format_spc1(cloud: &PointCloud, labels: &LabelSet) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "SPC1 {} {} {}",
        cloud.n_points(),
        cloud.dims(),
        labels.n_classes
    );
    for i in 0..cloud.n_points() {
        for v in cloud.attrs().row(i) {
            let _ = write!(out, "{v} ");
        }
        let _ = writeln!(out, "{} {}", labels.semantic[i], labels.instance[i]);
    }
    out
}

pub fn write_spc1(path: &Path, cloud: &PointCloud, labels: &LabelSet) -> Result<()> {
    if cloud.n_points() != labels.len() {
        return Err(Error::InvalidArgument("labels do not match cloud".into()));
    }
    fs::write(path, format_spc1(cloud, labels)).map_err(|e| Error::io(path, e))
}

pub fn parse_spc1(path: &Path, text: &str) -> Result<(PointCloud, LabelSet)> {
    let mut lines = crate::util::content_lines(text);
    let (ln, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 || h[0] != "SPC1" {
        return Err(Error::parse(path, ln, "expected `SPC1 <n_points> <dims> <n_classes>`"));
    }
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::parse(path, ln, format!("bad header field `{s}`")))
    };
    let (n, dims, n_classes) = (num(h[1])?, num(h[2])?, num(h[3])?);
    let mut attrs = Vec::with_capacity(n * dims);
    let mut semantic = Vec::with_capacity(n);
    let mut instance = Vec::with_capacity(n);
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dims + 2 {
            return Err(Error::parse(
                path,
                ln,
                format!("expected {} fields, found {}", dims + 2, fields.len()),
            ));
        }
        for f in &fields[..dims] {
            attrs.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, ln, format!("bad float `{f}`")))?,
            );
        }
        let int = |s: &str| -> Result<i64> {
            s.parse()
                .map_err(|_| Error::parse(path, ln, format!("bad integer `{s}`")))
        };
        semantic.push(int(fields[dims])?);
        instance.push(int(fields[dims + 1])?);
    }
    if semantic.len() != n {
        return Err(Error::parse(
            path,
            0,
            format!("header declares {n} points, found {}", semantic.len()),
        ));
    }
    let cloud = PointCloud::new(Matrix::from_vec(n, dims, attrs)?)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let labels =
        LabelSet::new(semantic, instance, n_classes).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    Ok((cloud, labels))
}

pub fn read_spc1(path: &Path) -> Result<(PointCloud, LabelSet)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spc1(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(sem: &[i64], inst: &[i64]) -> LabelSet {
        LabelSet::new(sem.to_vec(), inst.to_vec(), 4).unwrap()
    }

    #[test]
    fn pair_classes_basic() {
        // two chairs (class 0, instances 0 and 1) and a table (class 1)
        let l = labels(&[0, 0, 0, 1], &[0, 0, 1, 2]);
        let c = build_pair_classes(&l);
        assert_eq!(c.get(0, 1), PairClass::SameInstance);
        assert_eq!(c.get(0, 2), PairClass::SameClass);
        assert_eq!(c.get(2, 1), PairClass::SameClass);
        assert_eq!(c.get(0, 3), PairClass::DifferentClass);
        assert_eq!(c.get(3, 3), PairClass::SameInstance);
    }

    #[test]
    fn pair_classes_background() {
        let l = labels(&[0, 0, 0, 1], &[-1, -1, 0, -1]);
        let c = build_pair_classes(&l);
        assert_eq!(c.get(0, 0), PairClass::SameInstance);
        assert_eq!(c.get(0, 1), PairClass::SameClass);
        assert_eq!(c.get(0, 2), PairClass::DifferentClass);
        assert_eq!(c.get(0, 3), PairClass::DifferentClass);
    }

    #[test]
    fn groups_examples() {
        let g = build_groups(&labels(&[0, 0, 0], &[0, 0, 1]));
        let rows: Vec<Vec<bool>> = (0..3).map(|i| g.row(i).to_vec()).collect();
        assert_eq!(
            rows,
            vec![
                vec![true, true, false],
                vec![true, true, false],
                vec![false, false, true]
            ]
        );
        let g = build_groups(&labels(&[0, 0], &[-1, 0]));
        assert_eq!(g.row(0), &[false, false]);
        assert_eq!(g.row(1), &[false, true]);
        let g = build_groups(&labels(&[2], &[0]));
        assert!(g.get(0, 0));
    }

    #[test]
    fn spc1_parses_comments_and_rejects_bad_counts() {
        let p = Path::new("t.spc");
        let text = "# scene\nSPC1 2 3 2\n0 0 0 0 0 # first\n1 2 3 1 -1\n";
        let (c, l) = parse_spc1(p, text).unwrap();
        assert_eq!(c.xyz(1), [1.0, 2.0, 3.0]);
        assert_eq!(l.instance, vec![0, -1]);
        assert!(parse_spc1(p, "SPC1 3 3 2\n0 0 0 0 0\n").is_err());
        assert!(parse_spc1(p, "SPC1 1 3 2\n0 0 0 5 0\n").is_err());
        assert!(parse_spc1(p, "PLY 1 3 2\n").is_err());
    }

    #[test]
    fn cloud_invariants() {
        assert!(PointCloud::new(Matrix::zeros(0, 3)).is_err());
        assert!(PointCloud::new(Matrix::zeros(2, 2)).is_err());
        assert!(PointCloud::new(Matrix::from_rows(&[[0.0, f64::NAN, 0.0]])).is_err());
    }

    fn arb_labels() -> impl Strategy<Value = LabelSet> {
        prop::collection::vec((0i64..3, -1i64..4), 1..12).prop_map(|v| {
            // instance ids determine semantics so that each id has one class
            let sem = v.iter().map(|&(s, i)| if i >= 0 { i % 3 } else { s }).collect();
            let inst = v.iter().map(|&(_, i)| i).collect();
            LabelSet::new(sem, inst, 3).unwrap()
        })
    }

    proptest! {
        #[test]
        fn groups_symmetric_and_relabel_invariant(l in arb_labels(), shift in 1i64..50) {
            let g = build_groups(&l);
            for i in 0..l.len() {
                for j in 0..l.len() {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
            let mut relabeled = l.clone();
            for v in &mut relabeled.instance {
                if *v >= 0 { *v = 100 - *v * shift; }
            }
            prop_assert_eq!(build_groups(&relabeled), g);
        }

        #[test]
        fn pair_classes_symmetric_and_permutation_equivariant(
            l in arb_labels(),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let c = build_pair_classes(&l);
            let n = l.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(c.get(i, j), c.get(j, i));
                }
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cp = build_pair_classes(&l.select(&perm));
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(cp.get(i, j), c.get(perm[i], perm[j]));
                }
            }
        }
    }
}
