//! Labeled domain sequences: generators, splits and file formats.

mod io;
mod rmnist;
mod synthetic;

pub use io::{read_sequence, write_sequence, SequenceSidecar, SEQUENCE_FORMAT, SEQUENCE_VERSION};
pub use rmnist::{load_rmnist_lite, rotate_image, RmnistOptions};
pub use synthetic::{
    circle_hard_angle, circle_label, gen_circle, gen_circle_hard, gen_rotating_gaussian, CircleParams, GaussianClass,
    RotatingGaussianSpec,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Samples from one domain: an `n x feature_dim` matrix and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    /// 1-based position of the domain in its sequence.
    pub domain_index: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize, domain_index: usize) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(Error::param("features must be a matrix"));
        }
        if labels.is_empty() || labels.len() != features.rows() {
            return Err(Error::param(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if n_classes == 0 {
            return Err(Error::param("at least one class is required"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::param(format!("label {bad} outside 0..{n_classes}")));
        }
        if !features.is_finite() {
            return Err(Error::param("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            domain_index,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::param("empty subset"));
        }
        Ok(Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            domain_index: self.domain_index,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Rotation2d,
}

/// Known transition `m_t` from domain `t` to domain `t + 1`, acting on features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthMap {
    pub kind: MapKind,
    pub matrix: [[f64; 2]; 2],
}

impl GroundTruthMap {
    /// Counter-clockwise rotation by `angle` radians.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            kind: MapKind::Rotation2d,
            matrix: [[c, -s], [s, c]],
        }
    }

    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        let m = &self.matrix;
        [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Largest entry of `|M^T M - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let dot = m[0][i] * m[0][j] + m[1][i] * m[1][j];
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMetadata {
    pub generator: String,
    pub seed: u64,
    pub params: serde_json::Value,
}

/// Ordered domains `D_1..D_N`, the first `t_source` of which are sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSequence {
    domains: Vec<LabeledDataset>,
    t_source: usize,
    mappings: Option<Vec<GroundTruthMap>>,
    pub metadata: SequenceMetadata,
}

impl DomainSequence {
    pub fn new(
        domains: Vec<LabeledDataset>,
        t_source: usize,
        mappings: Option<Vec<GroundTruthMap>>,
        metadata: SequenceMetadata,
    ) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::param("a sequence needs at least one domain"));
        }
        for (i, d) in domains.iter().enumerate() {
            if d.domain_index != i + 1 {
                return Err(Error::param(format!(
                    "domain at position {} has index {}",
                    i + 1,
                    d.domain_index
                )));
            }
        }
        let (dim, classes) = (domains[0].feature_dim(), domains[0].n_classes());
        if domains.iter().any(|d| d.feature_dim() != dim || d.n_classes() != classes) {
            return Err(Error::param("domains disagree on feature width or class count"));
        }
        if domains.len() > 1 && !(1..domains.len()).contains(&t_source) {
            return Err(Error::param(format!(
                "t_source {t_source} must lie in 1..{}",
                domains.len()
            )));
        }
        if let Some(maps) = &mappings {
            if maps.len() != domains.len() - 1 {
                return Err(Error::param(format!(
                    "{} mappings for {} domains",
                    maps.len(),
                    domains.len()
                )));
            }
        }
        Ok(Self {
            domains,
            t_source,
            mappings,
            metadata,
        })
    }

    pub fn domains(&self) -> &[LabeledDataset] {
        &self.domains
    }

    /// Domain by 1-based index.
    pub fn domain(&self, t: usize) -> Option<&LabeledDataset> {
        t.checked_sub(1).and_then(|i| self.domains.get(i))
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn t_source(&self) -> usize {
        self.t_source
    }

    pub fn mappings(&self) -> Option<&[GroundTruthMap]> {
        self.mappings.as_deref()
    }

    pub fn feature_dim(&self) -> usize {
        self.domains[0].feature_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.domains[0].n_classes()
    }

    pub fn total_instances(&self) -> usize {
        self.domains.iter().map(LabeledDataset::len).sum()
    }

    /// The first `t` domains, with all of them marked as sources.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.domains.len() {
            return Err(Error::param(format!("prefix {t} of a {}-domain sequence", self.domains.len())));
        }
        Ok(Self {
            domains: self.domains[..t].to_vec(),
            t_source: t,
            mappings: self.mappings.as_ref().map(|m| m[..t - 1].to_vec()),
            metadata: self.metadata.clone(),
        })
    }

    pub fn with_t_source(mut self, t_source: usize) -> Result<Self> {
        if self.domains.len() > 1 && !(1..self.domains.len()).contains(&t_source) {
            return Err(Error::param(format!("t_source {t_source} out of range")));
        }
        self.t_source = t_source;
        Ok(self)
    }
}

/// Fractions for train / validation / in-distribution test parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub idtest_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.81,
            val_frac: 0.09,
            idtest_frac: 0.10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.val_frac, self.idtest_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("split fractions {fr:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }

    /// Part sizes for `n` items: validation and test get `floor(n * frac)`,
    /// train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon keeps e.g. 1000 * 0.09 from flooring to 89
        let part = |f: f64| (n as f64 * f + 1e-9).floor() as usize;
        let val = part(self.val_frac);
        let test = part(self.idtest_frac);
        (n.saturating_sub(val + test), val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub idtest: Vec<usize>,
}

pub fn split_indices(n: usize, spec: &SplitSpec, seed: u64) -> Result<SplitIndices> {
    spec.validate()?;
    let (tr, va, te) = spec.sizes(n);
    if tr == 0 || va == 0 || te == 0 {
        return Err(Error::param(format!("{n} items give an empty split part ({tr}/{va}/{te})")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let idtest = idx.split_off(tr + va);
    let val = idx.split_off(tr);
    Ok(SplitIndices { train: idx, val, idtest })
}

/// Deterministic shuffle-and-cut into (train, val, idtest).
pub fn split(ds: &LabeledDataset, spec: &SplitSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let parts = split_indices(ds.len(), spec, seed)?;
    Ok((ds.subset(&parts.train)?, ds.subset(&parts.val)?, ds.subset(&parts.idtest)?))
}

/// Pushes features through a 2-D map; labels are carried over unchanged.
pub fn apply_ground_truth_map(ds: &LabeledDataset, m: &GroundTruthMap) -> Result<LabeledDataset> {
    if ds.feature_dim() != 2 {
        return Err(Error::dim("apply_ground_truth_map", format!("map is 2-D, features are {}-D", ds.feature_dim())));
    }
    let mut data = Vec::with_capacity(ds.len() * 2);
    for r in 0..ds.len() {
        let row = ds.features.row_slice(r);
        data.extend_from_slice(&m.apply([row[0], row[1]]));
    }
    LabeledDataset::new(
        Tensor::new(vec![ds.len(), 2], data)?,
        ds.labels.clone(),
        ds.n_classes,
        ds.domain_index,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy(n: usize) -> LabeledDataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -(i as f64)]).collect();
        LabeledDataset::new(Tensor::from_rows(&rows).unwrap(), (0..n).map(|i| i % 2).collect(), 2, 1).unwrap()
    }

    #[test]
    fn default_split_sizes() {
        assert_eq!(SplitSpec::default().sizes(1000), (810, 90, 100));
        let (a, b, c) = split(&toy(1000), &SplitSpec::default(), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (810, 90, 100));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_exhaustive() {
        let s1 = split_indices(1000, &SplitSpec::default(), 11).unwrap();
        let s2 = split_indices(1000, &SplitSpec::default(), 11).unwrap();
        assert_eq!(s1, s2);
        let all: BTreeSet<usize> = s1.train.iter().chain(&s1.val).chain(&s1.idtest).copied().collect();
        assert_eq!(all.len(), 1000);
        assert_eq!(all, (0..1000).collect());
    }

    #[test]
    fn tiny_dataset_split_is_rejected() {
        assert!(matches!(split_indices(5, &SplitSpec::default(), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn rotation_quarter_turn() {
        let m = GroundTruthMap::rotation(std::f64::consts::FRAC_PI_2);
        let p = m.apply([1.0, 0.0]);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_map_leaves_dataset_unchanged() {
        let ds = toy(10);
        let out = apply_ground_truth_map(&ds, &GroundTruthMap::rotation(0.0)).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn map_rejects_wrong_dimension() {
        let ds = LabeledDataset::new(Tensor::zeros(&[3, 3]), vec![0, 1, 0], 2, 1).unwrap();
        assert!(apply_ground_truth_map(&ds, &GroundTruthMap::rotation(0.1)).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(Tensor::zeros(&[2, 2]), vec![0, 2], 2, 1).is_err());
        assert!(LabeledDataset::new(Tensor::zeros(&[2, 2]), vec![0], 2, 1).is_err());
    }
}
