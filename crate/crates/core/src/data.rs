//! Datasets, stratified splits, subgroup partitions and synthetic data.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::{ReferenceDistribution, RiskError};

const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot parse row {row}, column `{column}`: {detail}")]
    ParseError {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("label column `{0}` not present in header")]
    MissingLabelColumn(String),
    #[error("dataset has a single class")]
    SingleClassDataset,
    #[error("class {class} has {count} examples, need at least {needed}")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("split fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error(transparent)]
    Reference(#[from] RiskError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Labelled examples with dense class indices `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major features. Every class named in
    /// `class_names` must appear at least once.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if features.len() != dim * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        let mut seen = vec![false; class_names.len()];
        for &y in &labels {
            match seen.get_mut(y) {
                Some(s) => *s = true,
                None => {
                    return Err(DataError::Invalid(format!(
                        "label {y} outside 0..{}",
                        class_names.len()
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(DataError::Invalid(format!("class {missing} has no examples")));
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows `indices`, in that order, keeping the class numbering.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, self.dim, labels, self.class_names.clone())
    }

    /// Per-column z-scores with statistics of this dataset only; columns
    /// with variance below 1e-12 map to zero.
    pub fn standardized(&self) -> Self {
        let m = self.len() as f64;
        let mut out = self.features.clone();
        for j in 0..self.dim {
            let mean = (0..self.len()).map(|i| self.row(i)[j]).sum::<f64>() / m;
            let var = (0..self.len())
                .map(|i| (self.row(i)[j] - mean).powi(2))
                .sum::<f64>()
                / m;
            let scale = var.max(VARIANCE_FLOOR).sqrt();
            for i in 0..self.len() {
                out[i * self.dim + j] = (self.row(i)[j] - mean) / scale;
            }
        }
        Self {
            features: out,
            ..self.clone()
        }
    }

    /// Renumbers classes to follow `names` (used to align a freshly loaded
    /// file with the class order a model was trained on).
    pub fn with_class_order(&self, names: &[String]) -> Result<Self, DataError> {
        let lookup: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut remap = Vec::with_capacity(self.n_classes());
        for name in &self.class_names {
            match lookup.get(name.as_str()) {
                Some(&i) => remap.push(i),
                None => return Err(DataError::Invalid(format!("unknown class `{name}`"))),
            }
        }
        let labels: Vec<usize> = self.labels.iter().map(|&y| remap[y]).collect();
        Self::new(self.features.clone(), self.dim, labels, names.to_vec())
    }

    /// Writes the dataset as CSV with columns `x0..x{d-1}` and `label`.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.class_names[self.labels[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a headed CSV file. Labels are renumbered densely in order of first
/// appearance; every other column must be numeric. Features are standardized.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    if !path.exists() {
        return Err(DataError::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let dim = header.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    for (r, record) in reader.records().enumerate() {
        // header is line 1
        let row = r + 2;
        let record = record?;
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                let next = class_names.len();
                let y = *class_index.entry(cell.to_string()).or_insert_with(|| {
                    class_names.push(cell.to_string());
                    next
                });
                labels.push(y);
            } else {
                let v: f64 = cell.trim().parse().map_err(|e: std::num::ParseFloatError| {
                    DataError::ParseError {
                        row,
                        column: header[c].to_string(),
                        detail: e.to_string(),
                    }
                })?;
                features.push(v);
            }
        }
    }
    if class_names.len() < 2 {
        return Err(DataError::SingleClassDataset);
    }
    Ok(Dataset::new(features, dim, labels, class_names)?.standardized())
}

/// Index sets of a class-stratified split: each class contributes
/// `round(fraction · count)` examples to the first part, clamped so both
/// parts keep at least one example of every class.
pub fn stratified_split_indices(
    data: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        let count = members.len();
        if count < 2 {
            return Err(DataError::ClassTooSmall {
                class,
                count,
                needed: 2,
            });
        }
        members.shuffle(&mut rng);
        let k = ((fraction * count as f64).round() as usize).clamp(1, count - 1);
        first.extend_from_slice(&members[..k]);
        second.extend_from_slice(&members[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((first, second))
}

pub fn stratified_split(
    data: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let (a, b) = stratified_split_indices(data, fraction, seed)?;
    Ok((data.subset(&a)?, data.subset(&b)?))
}

/// How the reference distribution over class subgroups is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    ClassRatio,
    Uniform,
}

impl std::str::FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class-ratio" => Ok(Reference::ClassRatio),
            "uniform" => Ok(Reference::Uniform),
            other => Err(format!("unknown reference `{other}`")),
        }
    }
}

/// Assignment of examples to subgroups together with the reference `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupPartition {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    pi: ReferenceDistribution,
}

impl SubgroupPartition {
    /// `assignment[i]` is the subgroup of example `i`; every subgroup in
    /// `0..pi.len()` must be non-empty.
    pub fn new(assignment: Vec<usize>, pi: ReferenceDistribution) -> Result<Self, DataError> {
        let mut sizes = vec![0; pi.len()];
        for &a in &assignment {
            *sizes
                .get_mut(a)
                .ok_or_else(|| DataError::Invalid(format!("subgroup {a} outside partition")))? += 1;
        }
        if let Some(a) = sizes.iter().position(|&s| s == 0) {
            return Err(DataError::Invalid(format!("subgroup {a} is empty")));
        }
        Ok(Self {
            assignment,
            sizes,
            pi,
        })
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn m(&self) -> usize {
        self.assignment.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn pi(&self) -> &ReferenceDistribution {
        &self.pi
    }

    pub fn subgroup_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Example indices of every subgroup, in increasing order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &a) in self.assignment.iter().enumerate() {
            out[a].push(i);
        }
        out
    }

    /// Mean of `per_example` within each subgroup.
    pub fn subgroup_means(&self, per_example: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.n()];
        for (&a, &v) in self.assignment.iter().zip(per_example) {
            sums[a] += v;
        }
        sums.iter()
            .zip(&self.sizes)
            .map(|(s, &c)| s / c as f64)
            .collect()
    }
}

/// One subgroup per class.
pub fn partition_by_class(
    data: &Dataset,
    reference: Reference,
) -> Result<SubgroupPartition, DataError> {
    let counts = data.class_counts();
    let pi = match reference {
        Reference::ClassRatio => {
            let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            ReferenceDistribution::from_weights(&w)?
        }
        Reference::Uniform => ReferenceDistribution::uniform(counts.len())?,
    };
    SubgroupPartition::new(data.labels().to_vec(), pi)
}

/// One subgroup per example, uniform reference.
pub fn partition_per_example(data: &Dataset) -> Result<SubgroupPartition, DataError> {
    let m = data.len();
    SubgroupPartition::new((0..m).collect(), ReferenceDistribution::uniform(m)?)
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub counts: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

/// 960/40 blobs in 10 dimensions, the imbalance of oil-spill detection.
impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            counts: vec![960, 40],
            dim: 10,
            separation: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn generate(&self) -> Result<Dataset, DataError> {
        synth_imbalanced(&self.counts, self.dim, self.separation, self.seed)
    }
}

/// Unit-variance Gaussian blobs; class `k` is centred at `k · separation`
/// on the first coordinate. Rows are emitted class by class.
pub fn synth_imbalanced(
    n_per_class: &[usize],
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if n_per_class.len() < 2 {
        return Err(DataError::BadSpec("need at least two classes".into()));
    }
    if let Some(c) = n_per_class.iter().position(|&c| c < 2) {
        return Err(DataError::BadSpec(format!("class {c} has fewer than 2 examples")));
    }
    if dim == 0 {
        return Err(DataError::BadSpec("feature dimension must be positive".into()));
    }
    if !separation.is_finite() {
        return Err(DataError::BadSpec(format!("separation {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = n_per_class.iter().sum();
    let mut features = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (k, &count) in n_per_class.iter().enumerate() {
        for _ in 0..count {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let centre = if j == 0 { k as f64 * separation } else { 0.0 };
                features.push(centre + z);
            }
            labels.push(k);
        }
    }
    let names = (0..n_per_class.len()).map(|k| k.to_string()).collect();
    Dataset::new(features, dim, labels, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(labels: &[usize]) -> Dataset {
        let k = labels.iter().max().unwrap() + 1;
        Dataset::new(
            labels.iter().map(|&y| y as f64).collect(),
            1,
            labels.to_vec(),
            (0..k).map(|c| c.to_string()).collect(),
        )
        .unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_row_file() {
        let f = write_tmp("a,b,y\n1.0,2.0,cat\n3.0,5.0,dog\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.n_classes(), 2);
        assert_eq!(d.class_names(), &["cat".to_string(), "dog".to_string()]);
        assert_eq!(d.labels(), &[0, 1]);
        assert_eq!(d.row(0), &[-1.0, -1.0]);
    }

    #[test]
    fn labels_numbered_by_first_appearance() {
        let f = write_tmp("y,a\nb,1\na,2\nb,3\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.labels(), &[0, 1, 0]);
        assert_eq!(d.class_names()[0], "b");
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let f = write_tmp("a,b,y\n1.0,2.0,0\n3.0,oops,1\n");
        match load_csv(f.path(), "y").unwrap_err() {
            DataError::ParseError { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv"), "y"),
            Err(DataError::FileNotFound(_))
        ));
        let f = write_tmp("a,y\n1,0\n2,0\n");
        assert!(matches!(
            load_csv(f.path(), "y"),
            Err(DataError::SingleClassDataset)
        ));
        assert!(matches!(
            load_csv(f.path(), "label"),
            Err(DataError::MissingLabelColumn(_))
        ));
    }

    #[test]
    fn constant_column_standardizes_to_zero() {
        let f = write_tmp("a,b,y\n7,1,0\n7,2,1\n7,4,1\n");
        let d = load_csv(f.path(), "y").unwrap();
        for i in 0..3 {
            assert_eq!(d.row(i)[0], 0.0);
        }
    }

    #[test]
    fn standardization_idempotent() {
        let d = synth_imbalanced(&[30, 20], 3, 1.5, 4).unwrap().standardized();
        let again = d.standardized();
        for (a, b) in d.features().iter().zip(again.features()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn split_counts_follow_rounding() {
        let mut labels = vec![0; 90];
        labels.extend(vec![1; 10]);
        let d = toy(&labels);
        let (a, b) = stratified_split(&d, 0.8, 1).unwrap();
        assert_eq!(a.class_counts(), vec![72, 8]);
        assert_eq!(b.class_counts(), vec![18, 2]);

        let mut labels = vec![0; 100];
        labels.extend(vec![1; 100]);
        let (a, b) = stratified_split(&toy(&labels), 0.5, 1).unwrap();
        assert_eq!(a.class_counts(), vec![50, 50]);
        assert_eq!(b.class_counts(), vec![50, 50]);
    }

    #[test]
    fn split_keeps_one_per_class() {
        let d = toy(&[0, 0, 0, 0, 0, 0, 0, 0, 1, 1]);
        let (a, b) = stratified_split(&d, 0.95, 3).unwrap();
        assert_eq!(a.class_counts(), vec![7, 1]);
        assert_eq!(b.class_counts(), vec![1, 1]);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let d = synth_imbalanced(&[50, 13, 7], 2, 1.0, 0).unwrap();
        let (a1, b1) = stratified_split_indices(&d, 0.8, 42).unwrap();
        let (a2, b2) = stratified_split_indices(&d, 0.8, 42).unwrap();
        assert_eq!((a1.clone(), b1.clone()), (a2, b2));
        let mut all: Vec<usize> = a1.iter().chain(&b1).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_singleton_class() {
        let d = toy(&[0, 0, 0, 1]);
        assert!(matches!(
            stratified_split(&d, 0.5, 0),
            Err(DataError::ClassTooSmall { class: 1, count: 1, .. })
        ));
    }

    #[test]
    fn class_partitions() {
        let d = toy(&[0, 0, 0, 1]);
        let p = partition_by_class(&d, Reference::ClassRatio).unwrap();
        assert_eq!(p.pi().probs(), &[0.75, 0.25]);
        assert_eq!(p.sizes(), &[3, 1]);
        let u = partition_by_class(&d, Reference::Uniform).unwrap();
        assert_eq!(u.pi().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn balance_scale_ratios() {
        // 625 rows at .08/.46/.46
        let d = synth_imbalanced(&[49, 288, 288], 4, 1.0, 0).unwrap();
        let p = partition_by_class(&d, Reference::ClassRatio).unwrap();
        for (got, want) in p.pi().probs().iter().zip([0.08, 0.46, 0.46]) {
            assert!((got - want).abs() < 0.005);
        }
    }

    #[test]
    fn per_example_partitions() {
        let d = toy(&[0, 1, 0, 1, 1]);
        let p = partition_per_example(&d).unwrap();
        assert_eq!(p.n(), 5);
        assert!(p.pi().probs().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert!(p.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_imbalanced(&[960, 40], 5, 2.0, 11).unwrap();
        let b = synth_imbalanced(&[960, 40], 5, 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![960, 40]);
        assert!(synth_imbalanced(&[10], 2, 1.0, 0).is_err());
        assert!(synth_imbalanced(&[10, 1], 2, 1.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_class_order() {
        let d = synth_imbalanced(&[6, 4], 2, 3.0, 2).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(f.path()).unwrap();
        let back = load_csv(f.path(), "label").unwrap();
        assert_eq!(back.labels(), d.labels());
        let stdz = d.standardized();
        for (a, b) in back.features().iter().zip(stdz.features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reorder_classes() {
        let f = write_tmp("y,a\nb,1\na,2\nb,3\n");
        let d = load_csv(f.path(), "y").unwrap();
        let r = d.with_class_order(&["a".into(), "b".into()]).unwrap();
        assert_eq!(r.labels(), &[1, 0, 1]);
    }
}
