//! One-vs-one multiclass SVM with coding-matrix (Hamming) decoding.
//!
//! A `C`-class task trains `L = C(C-1)/2` binary components, one per
//! unordered class pair. The coding matrix `M` (shape `C x L`, entries in
//! `{-1, 0, +1}`) records which side of each component a class sits on; a
//! score vector `s` is decoded to the class minimizing the sign-based Hamming
//! distance
//!
//! ```text
//! d(s, m_c) = sum_l |m_cl| * (1 - sgn(m_cl * s_l)) / 2
//! ```
//!
//! with the three-valued sign (`sgn 0 = 0`), so a component score of exactly
//! zero contributes 1/2 to every class that participates in it. Ties resolve
//! to the lowest class index. Decoding only looks at score signs, so it is
//! invariant to positive rescaling of any component boundary.

use serde::{Deserialize, Serialize};

use super::svm::{solve, SvmFit, SvmTrainConfig};
use super::{validate_samples, Sample, TrainError};

/// One-vs-one coding matrix over `class_count` classes.
///
/// Component `l` corresponds to the `l`-th class pair `(a, b)` with `a < b`
/// in lexicographic order; class `a` is coded `+1` and class `b` is coded
/// `-1`, so its binary component is trained with `a` as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodingMatrix {
    class_count: usize,
    /// Row-major `class_count x component_count` entries in {-1, 0, +1}.
    entries: Vec<i8>,
    #[serde(skip)]
    pairs: Vec<(usize, usize)>,
}

impl CodingMatrix {
    /// Builds the one-vs-one matrix for `class_count >= 2` classes.
    pub fn one_vs_one(class_count: usize) -> Result<Self, TrainError> {
        if class_count < 2 {
            return Err(TrainError::TooFewClasses(class_count));
        }
        let pairs: Vec<(usize, usize)> = (0..class_count)
            .flat_map(|a| (a + 1..class_count).map(move |b| (a, b)))
            .collect();
        let component_count = pairs.len();
        let mut entries = vec![0i8; class_count * component_count];
        for (l, &(a, b)) in pairs.iter().enumerate() {
            entries[a * component_count + l] = 1;
            entries[b * component_count + l] = -1;
        }
        Ok(Self {
            class_count,
            entries,
            pairs,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of binary components, `C (C - 1) / 2`.
    pub fn component_count(&self) -> usize {
        self.pairs.len()
    }

    /// The class pair `(a, b)`, `a < b`, separated by component `l`.
    pub fn component_pair(&self, component: usize) -> (usize, usize) {
        self.pairs[component]
    }

    /// Coding entry for `class` in `component`.
    pub fn entry(&self, class: usize, component: usize) -> i8 {
        self.entries[class * self.component_count() + component]
    }

    /// The coding row of one class.
    pub fn row(&self, class: usize) -> &[i8] {
        let l = self.component_count();
        &self.entries[class * l..(class + 1) * l]
    }
}

impl<'de> Deserialize<'de> for CodingMatrix {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Shadow {
            class_count: usize,
            entries: Vec<i8>,
        }
        let shadow = Shadow::deserialize(deserializer)?;
        let rebuilt = CodingMatrix::one_vs_one(shadow.class_count)
            .map_err(|e| serde::de::Error::custom(e.to_string()))?;
        if rebuilt.entries != shadow.entries {
            return Err(serde::de::Error::custom(
                "coding matrix entries do not match the one-vs-one layout",
            ));
        }
        Ok(rebuilt)
    }
}

/// Three-valued sign used by the decoder.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-based Hamming distance between a component score vector and the
/// coding row of `class`.
pub fn hamming_distance(scores: &[f64], coding: &CodingMatrix, class: usize) -> f64 {
    debug_assert_eq!(scores.len(), coding.component_count());
    coding
        .row(class)
        .iter()
        .zip(scores)
        .map(|(&m, &s)| {
            let m = f64::from(m);
            m.abs() * (1.0 - sgn(m * s)) / 2.0
        })
        .sum()
}

/// Decodes a component score vector to the class with the smallest Hamming
/// distance; ties resolve to the lowest class index.
pub fn decode(scores: &[f64], coding: &CodingMatrix) -> Result<usize, TrainError> {
    if scores.len() != coding.component_count() {
        return Err(TrainError::DimensionMismatch {
            index: 0,
            expected: coding.component_count(),
            got: scores.len(),
        });
    }
    let mut best = 0usize;
    let mut best_distance = f64::INFINITY;
    for class in 0..coding.class_count() {
        let d = hamming_distance(scores, coding, class);
        if d < best_distance {
            best = class;
            best_distance = d;
        }
    }
    Ok(best)
}

/// One-vs-one multiclass SVM: a binary component per coding-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    coding: CodingMatrix,
    /// Component fits in coding-matrix column order. `None` means the pair
    /// never received training data.
    components: Vec<Option<SvmFit>>,
}

impl MulticlassSvm {
    pub fn class_count(&self) -> usize {
        self.coding.class_count()
    }

    pub fn coding(&self) -> &CodingMatrix {
        &self.coding
    }

    /// Component fit for one coding column, if that pair has been trained.
    pub fn component(&self, component: usize) -> Option<&SvmFit> {
        self.components[component].as_ref()
    }

    /// Whether every pairwise component has been trained.
    pub fn is_fully_trained(&self) -> bool {
        self.components.iter().all(Option::is_some)
    }

    /// Normalized score of every component boundary at `x`.
    pub fn score_vector(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.components
            .iter()
            .enumerate()
            .map(|(l, fit)| {
                let (a, b) = self.coding.component_pair(l);
                let fit = fit
                    .as_ref()
                    .ok_or(TrainError::UntrainedComponent(a, b))?;
                fit.boundary.score(x)
            })
            .collect()
    }

    /// Predicted class and the component score vector used to decode it.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>), TrainError> {
        let scores = self.score_vector(x)?;
        let class = decode(&scores, &self.coding)?;
        Ok((class, scores))
    }
}

/// Trains (or incrementally retrains) every one-vs-one component.
///
/// Components whose pair has samples of both classes are solved, warm-started
/// from `warm` when given; a pair with data on only one side (or none) keeps
/// its previous fit, or stays untrained. As with the binary trainer, `samples`
/// must extend the list the warm model was trained on.
pub fn train_multiclass_svm(
    samples: &[Sample],
    class_count: usize,
    cfg: &SvmTrainConfig,
    warm: Option<&MulticlassSvm>,
) -> Result<MulticlassSvm, TrainError> {
    let dim = validate_samples(samples, class_count)?;
    let coding = CodingMatrix::one_vs_one(class_count)?;
    if let Some(prev) = warm {
        if prev.class_count() != class_count {
            return Err(TrainError::InvalidWarmStart(format!(
                "previous model has {} classes, expected {class_count}",
                prev.class_count()
            )));
        }
    }

    // Index samples by class once; per-pair subsets preserve pool order, so
    // component warm starts stay prefix-consistent as the pool appends.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, sample) in samples.iter().enumerate() {
        by_class[sample.label].push(i);
    }

    let mut components = Vec::with_capacity(coding.component_count());
    for l in 0..coding.component_count() {
        let (a, b) = coding.component_pair(l);
        if by_class[a].is_empty() || by_class[b].is_empty() {
            components.push(warm.and_then(|m| m.components[l].clone()));
            continue;
        }
        let mut indices: Vec<usize> = by_class[a]
            .iter()
            .chain(&by_class[b])
            .copied()
            .collect();
        indices.sort_unstable();
        let xs: Vec<&[f64]> = indices.iter().map(|&i| samples[i].features.as_slice()).collect();
        let signs: Vec<f64> = indices
            .iter()
            .map(|&i| if samples[i].label == a { 1.0 } else { -1.0 })
            .collect();
        let component_cfg = SvmTrainConfig {
            shuffle_seed: cfg.shuffle_seed.wrapping_add(l as u64),
            ..cfg.clone()
        };
        let prev = warm.and_then(|m| m.components[l].as_ref());
        components.push(Some(solve(&xs, &signs, dim, &component_cfg, prev)?));
    }

    Ok(MulticlassSvm { coding, components })
}
