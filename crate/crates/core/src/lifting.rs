//! Lifting labeled datasets to empirical measures on `Z`.
//!
//! Each label is replaced by the mean and covariance of its embedded
//! class-conditional features, so sample `(x_i, y_i)` becomes the particle
//! `(x_i, μ_{y_i}, Σ_{y_i})`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{spd_regularize, Particle, SpdMatrix, SymEigen, SymMatrix};
use crate::measure::EmpiricalMeasure;
use crate::scalar::Real;

pub const DEFAULT_REG_EPS: f64 = 1e-6;

/// Feature vectors in `R^m` with one categorical label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T: Real> {
    features: Vec<DVector<T>>,
    labels: Vec<String>,
}

impl<T: Real> LabeledDataset<T> {
    pub fn new(features: Vec<DVector<T>>, labels: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "labels per sample",
                expected: features.len(),
                found: labels.len(),
            });
        }
        let m = features[0].len();
        for f in &features {
            if f.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "feature dimension",
                    expected: m,
                    found: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset features"));
            }
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &[DVector<T>] {
        &self.features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn m(&self) -> usize {
        self.features[0].len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Identity,
    Pca,
}

/// Affine map `φ(x) = P(x − c)` from `R^m` to `R^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T: Real> {
    pub kind: EmbeddingKind,
    /// `n×m`, orthonormal rows.
    pub projection: DMatrix<T>,
    pub center: DVector<T>,
    /// Set when the feature covariance has rank below `n`; trailing rows are
    /// then an arbitrary orthonormal completion.
    pub rank_deficient: bool,
}

impl<T: Real> Embedding<T> {
    pub fn n(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.projection * (x - &self.center)
    }
}

fn mean<T: Real>(vectors: &[&DVector<T>]) -> DVector<T> {
    let mut total = DVector::zeros(vectors[0].len());
    for v in vectors {
        total += *v;
    }
    total / T::from_count(vectors.len())
}

/// Population covariance `(1/K) Σ (v−c)(v−c)ᵀ`.
fn covariance<T: Real>(vectors: &[&DVector<T>], center: &DVector<T>) -> DMatrix<T> {
    let d = center.len();
    let mut total = DMatrix::zeros(d, d);
    for v in vectors {
        let c = *v - center;
        total += &c * c.transpose();
    }
    total / T::from_count(vectors.len())
}

pub fn fit_embedding<T: Real>(data: &LabeledDataset<T>, kind: EmbeddingKind, n: usize) -> Result<Embedding<T>> {
    let m = data.m();
    if n > m {
        return Err(Error::EmbeddingTooLarge { n, m });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
    }
    match kind {
        EmbeddingKind::Identity => {
            if n != m {
                return Err(Error::InvalidConfig(format!(
                    "identity embedding keeps the feature dimension {m}, got n = {n}"
                )));
            }
            Ok(Embedding {
                kind,
                projection: DMatrix::identity(m, m),
                center: DVector::zeros(m),
                rank_deficient: false,
            })
        }
        EmbeddingKind::Pca => {
            let refs: Vec<&DVector<T>> = data.features().iter().collect();
            let center = mean(&refs);
            let cov = covariance(&refs, &center);
            let eig = SymEigen::new(&cov);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                eig.values[b]
                    .partial_cmp(&eig.values[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut projection = DMatrix::zeros(n, m);
            for (row, &col) in order.iter().take(n).enumerate() {
                let mut dir = eig.vectors.column(col).into_owned();
                // Sign convention: the largest-magnitude entry is positive.
                let mut pivot = 0;
                for k in 1..m {
                    if dir[k].abs() > dir[pivot].abs() {
                        pivot = k;
                    }
                }
                if dir[pivot] < T::zero() {
                    dir = -dir;
                }
                projection.row_mut(row).copy_from(&dir.transpose());
            }
            let top = eig.values[order[0]].max(T::zero());
            let nth = eig.values[order[n - 1]];
            let rank_deficient = top == T::zero() || nth <= top * T::lit(1e-12);
            Ok(Embedding {
                kind,
                projection,
                center,
                rank_deficient,
            })
        }
    }
}

/// Lifted representation of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMoment<T: Real> {
    pub label: String,
    pub mu: DVector<T>,
    pub sigma: SpdMatrix<T>,
    pub count: usize,
}

/// Per-label moments, sorted by label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMoments<T: Real> {
    classes: Vec<ClassMoment<T>>,
}

impl<T: Real> ClassMoments<T> {
    pub fn new(mut classes: Vec<ClassMoment<T>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Empty("class moments"));
        }
        classes.sort_by(|a, b| a.label.cmp(&b.label));
        for w in classes.windows(2) {
            if w[0].label == w[1].label {
                return Err(Error::InvalidConfig(format!("duplicate class label {:?}", w[0].label)));
            }
        }
        let n = classes[0].mu.len();
        for c in &classes {
            if c.count == 0 {
                return Err(Error::InvalidConfig(format!("class {:?} has zero count", c.label)));
            }
            if c.mu.len() != n || c.sigma.dim() != n {
                return Err(Error::DimensionMismatch {
                    context: "class moment dimension",
                    expected: n,
                    found: c.mu.len(),
                });
            }
        }
        Ok(Self { classes })
    }

    /// Reads class moments off a labeled measure whose same-label particles
    /// share their (μ, Σ) legs, as lifted datasets do. The first particle of
    /// each label supplies the legs; counts are label frequencies.
    pub fn from_labeled_measure(measure: &EmpiricalMeasure<T>) -> Result<Self> {
        let labels = measure
            .labels()
            .ok_or_else(|| Error::InvalidConfig("class moments need a labeled measure".into()))?;
        let mut classes: BTreeMap<&str, ClassMoment<T>> = BTreeMap::new();
        for (z, y) in measure.particles().iter().zip(labels) {
            classes
                .entry(y.as_str())
                .and_modify(|c| c.count += 1)
                .or_insert_with(|| ClassMoment {
                    label: y.clone(),
                    mu: z.mu.clone(),
                    sigma: z.sigma.clone(),
                    count: 1,
                });
        }
        Self::new(classes.into_values().collect())
    }

    pub fn classes(&self) -> &[ClassMoment<T>] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn n(&self) -> usize {
        self.classes[0].mu.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.label.as_str().cmp(label)).ok()
    }

    pub fn get(&self, label: &str) -> Option<&ClassMoment<T>> {
        self.index_of(label).map(|i| &self.classes[i])
    }
}

/// Class means and population covariances of the embedded features.
///
/// Covariances are eigenvalue-floored at `reg_eps`; single-sample classes get
/// the identity covariance.
pub fn class_moments<T: Real>(data: &LabeledDataset<T>, emb: &Embedding<T>, reg_eps: T) -> Result<ClassMoments<T>> {
    if !(reg_eps > T::zero()) {
        return Err(Error::InvalidConfig(format!("reg_eps must be positive, got {reg_eps}")));
    }
    if emb.projection.ncols() != data.m() {
        return Err(Error::DimensionMismatch {
            context: "embedding input dimension",
            expected: data.m(),
            found: emb.projection.ncols(),
        });
    }
    let mut groups: BTreeMap<&str, Vec<DVector<T>>> = BTreeMap::new();
    for (x, y) in data.features().iter().zip(data.labels()) {
        groups.entry(y.as_str()).or_default().push(emb.apply(x));
    }
    let n = emb.n();
    let classes = groups
        .into_iter()
        .map(|(label, embedded)| {
            let refs: Vec<&DVector<T>> = embedded.iter().collect();
            let mu = mean(&refs);
            let sigma = if embedded.len() == 1 {
                SpdMatrix::identity(n)
            } else {
                spd_regularize(&SymMatrix::symmetric_part(&covariance(&refs, &mu)), reg_eps)
            };
            ClassMoment {
                label: label.to_string(),
                mu,
                sigma,
                count: embedded.len(),
            }
        })
        .collect();
    ClassMoments::new(classes)
}

/// Builds the uniform measure with particle `i = (x_i, μ_{y_i}, Σ_{y_i})`,
/// keeping the dataset labels as particle tags.
pub fn lift_dataset<T: Real>(data: &LabeledDataset<T>, moments: &ClassMoments<T>) -> Result<EmpiricalMeasure<T>> {
    let particles = data
        .features()
        .iter()
        .zip(data.labels())
        .map(|(x, y)| {
            let class = moments.get(y).ok_or_else(|| Error::UnknownLabel(y.clone()))?;
            Particle::new(x.clone(), class.mu.clone(), class.sigma.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    EmpiricalMeasure::with_labels(particles, data.labels().to_vec())
}
