//! Auxiliary-sample scoring, ranking and top-ratio selection.
//!
//! Each auxiliary sample is pushed through both heads of a trained
//! network; the two pre-softmax logit vectors are clamped at zero,
//! concatenated, and L2-normalized, and the sample's score is the sum
//! of the normalized target segment. Samples that excite the target
//! head relative to the source head score high, so keeping the
//! top-ranked fraction filters the auxiliary set toward task-relevant
//! content.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{Dataset, Relatedness};
use crate::error::{Error, Result};
use crate::model::TwoHeadParams;
use crate::scalar::{pairwise_sum, Scalar};

/// An auxiliary sample's relatedness score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample<S = f64> {
    pub sample_index: usize,
    /// In `[0, sqrt(n_target_classes)]`; larger means more related.
    pub score: S,
    /// Ground truth, when the dataset carries flags (synthetic data).
    pub related: Option<bool>,
}

/// Ranking parameters. Ties always break by ascending sample index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    /// Fraction of samples kept, in `(0, 1]`; at least one sample is
    /// selected from a non-empty input.
    pub keep_ratio: f64,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "keep_ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        Ok(())
    }
}

/// The score of one sample given its two logit vectors: clamp negatives
/// of both to zero, L2-normalize the concatenation `[source; target]`,
/// and sum the normalized target entries. The all-non-positive case
/// normalizes a zero vector and is defined as score 0.
pub fn score_from_logits<S: Scalar>(z_source: &[S], z_target: &[S]) -> S {
    let clamped = |v: &S| if *v > S::zero() { *v } else { S::zero() };
    let mut norm_sq = S::zero();
    for v in z_source.iter().chain(z_target) {
        let c = clamped(v);
        norm_sq += c * c;
    }
    if norm_sq == S::zero() {
        return S::zero();
    }
    let norm = norm_sq.sqrt();
    let target_clamped: Vec<S> = z_target.iter().map(clamped).collect();
    pairwise_sum(&target_clamped) / norm
}

/// Scores a single feature vector through a trained network.
pub fn score_sample<S: Scalar>(
    model: &TwoHeadParams<S>,
    sample_index: usize,
    features: &[S],
    related: Option<bool>,
) -> Result<ScoredSample<S>> {
    let z_source = model.forward_source(features)?;
    let z_target = model.forward_target(features)?;
    Ok(ScoredSample {
        sample_index,
        score: score_from_logits(&z_source, &z_target),
        related,
    })
}

/// Scores every sample of an auxiliary dataset, carrying over
/// ground-truth flags when present.
pub fn score_dataset<S: Scalar>(
    model: &TwoHeadParams<S>,
    dataset: &Dataset<S>,
) -> Result<Vec<ScoredSample<S>>> {
    (0..dataset.len())
        .map(|i| {
            let related = dataset.flag(i).map(|f| f == Relatedness::Related);
            score_sample(model, i, dataset.feature(i), related)
        })
        .collect()
}

/// Returns the `ceil(keep_ratio * n)` highest-scoring sample indices in
/// ascending index order, breaking score ties by ascending index.
pub fn rank_and_select<S: Scalar>(
    scores: &[ScoredSample<S>],
    cfg: &SelectionConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let keep = ((cfg.keep_ratio * scores.len() as f64).ceil() as usize)
        .clamp(1, scores.len());
    let mut order: Vec<&ScoredSample<S>> = scores.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(a.sample_index.cmp(&b.sample_index))
    });
    let mut selected: Vec<usize> = order[..keep].iter().map(|s| s.sample_index).collect();
    selected.sort_unstable();
    Ok(selected)
}

/// Fraction of the selected samples whose ground-truth flag is related.
/// `related` is indexed by sample index.
pub fn selection_precision(selected: &[usize], related: &[bool]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for &i in selected {
        if i >= related.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: related.len(),
            });
        }
        if related[i] {
            hits += 1;
        }
    }
    Ok(hits as f64 / selected.len() as f64)
}

/// Writes one row per sample: index, score, a 0/1 selected column, and
/// a 0/1 related column when ground truth is available.
pub fn write_scores_csv<S: Scalar>(
    path: &Path,
    scores: &[ScoredSample<S>],
    selected: &[usize],
) -> Result<()> {
    let has_flags = scores.iter().any(|s| s.related.is_some());
    let mut is_selected = vec![false; scores.len()];
    for &i in selected {
        if let Some(slot) = is_selected.get_mut(i) {
            *slot = true;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    if has_flags {
        writeln!(w, "sample_index,score,selected,related")?;
    } else {
        writeln!(w, "sample_index,score,selected")?;
    }
    for (row, s) in scores.iter().enumerate() {
        let sel = if is_selected[row] { 1 } else { 0 };
        if has_flags {
            let related = match s.related {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            writeln!(w, "{},{},{},{}", s.sample_index, s.score, sel, related)?;
        } else {
            writeln!(w, "{},{},{}", s.sample_index, s.score, sel)?;
        }
    }
    w.flush()?;
    Ok(())
}
