//! Flat parameter vectors with named segment layouts.
//!
//! A [`Layout`] names contiguous segments of a flat vector and gives
//! each a tensor shape; a [`ParamVector`] is the vector itself. All
//! gradients, update directions and momentum buffers are parameter
//! vectors sharing the layout of the parameters they refer to.

use std::sync::Arc;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};

/// One named, shaped slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Disjoint named segments covering a flat vector exactly.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, shape)` pairs laid out contiguously
    /// in order. Panics on duplicate names or empty input.
    pub fn new(parts: impl IntoIterator<Item = (String, Vec<usize>)>) -> Arc<Layout> {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (name, shape) in parts {
            assert!(
                segments.iter().all(|s: &Segment| s.name != name),
                "duplicate segment name {name}"
            );
            let seg = Segment {
                name,
                shape,
                offset,
            };
            offset += seg.len();
            segments.push(seg);
        }
        assert!(!segments.is_empty(), "layout needs at least one segment");
        Arc::new(Layout {
            segments,
            total: offset,
        })
    }

    /// Shorthand accepting `&str` names.
    pub fn of(parts: &[(&str, &[usize])]) -> Arc<Layout> {
        Layout::new(
            parts
                .iter()
                .map(|(name, shape)| (name.to_string(), shape.to_vec())),
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Compact `name:len` listing used in error messages.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}:{}", s.name, s.len()))
            .collect();
        parts.join(",")
    }

    pub fn same_as(&self, other: &Layout) -> bool {
        self == other
    }
}

/// A flat real vector structured by a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<S = f64> {
    layout: Arc<Layout>,
    values: Vec<S>,
}

impl<S: Scalar> ParamVector<S> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![S::zero(); layout.total_len()];
        ParamVector { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<S>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: layout.total_len(),
                found: values.len(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> &[S] {
        let seg = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment `{name}` in layout {}", self.layout.describe()));
        &self.values[seg.offset..seg.offset + seg.len()]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [S] {
        let seg = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment `{name}` in layout {}", self.layout.describe()))
            .clone();
        &mut self.values[seg.offset..seg.offset + seg.len()]
    }

    /// The segment as a shaped tensor (copies).
    pub fn segment_tensor(&self, segment: &Segment) -> Tensor<S> {
        Tensor::from_vec(
            segment.shape.clone(),
            self.values[segment.offset..segment.offset + segment.len()].to_vec(),
        )
    }

    fn assert_same_layout(&self, other: &ParamVector<S>) {
        assert!(
            Arc::ptr_eq(&self.layout, &other.layout) || self.layout.same_as(&other.layout),
            "layout mismatch: {} vs {}",
            self.layout.describe(),
            other.layout.describe()
        );
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: S, other: &ParamVector<S>) {
        self.assert_same_layout(other);
        for (y, &x) in self.values.iter_mut().zip(&other.values) {
            *y += a * x;
        }
    }

    pub fn add(&self, other: &ParamVector<S>) -> ParamVector<S> {
        self.assert_same_layout(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + b)
            .collect();
        ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        }
    }

    pub fn sub(&self, other: &ParamVector<S>) -> ParamVector<S> {
        self.assert_same_layout(other);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        }
    }

    pub fn scale(&self, factor: S) -> ParamVector<S> {
        let values = self.values.iter().map(|&a| a * factor).collect();
        ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        }
    }

    pub fn dot(&self, other: &ParamVector<S>) -> S {
        self.assert_same_layout(other);
        let products: Vec<S> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .collect();
        pairwise_sum(&products)
    }

    pub fn inf_norm(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Copies the segments named by `view` (which must exist here with
    /// identical shapes) into a new vector with that layout.
    pub fn gather(&self, view: &Arc<Layout>) -> ParamVector<S> {
        let mut out = ParamVector::zeros(Arc::clone(view));
        for seg in view.segments() {
            let src = self
                .layout
                .segment(&seg.name)
                .unwrap_or_else(|| panic!("no segment `{}` to gather", seg.name));
            assert_eq!(src.shape, seg.shape, "segment `{}` shape differs", seg.name);
            out.segment_mut(&seg.name)
                .copy_from_slice(&self.values[src.offset..src.offset + src.len()]);
        }
        out
    }

    /// `self[name] += a * other[name]` for every segment of `other`,
    /// matching segments by name. `other` may cover a subset of this
    /// vector's segments.
    pub fn scatter_axpy(&mut self, a: S, other: &ParamVector<S>) {
        for seg in Arc::clone(&other.layout).segments() {
            let dst = self.segment_mut(&seg.name);
            let src = &other.values[seg.offset..seg.offset + seg.len()];
            assert_eq!(dst.len(), src.len(), "segment `{}` length differs", seg.name);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &ParamVector<S>) -> S {
        self.assert_same_layout(other);
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        Layout::of(&[("w", &[2, 2]), ("b", &[2])])
    }

    #[test]
    fn segments_are_disjoint_and_cover_exactly() {
        let l = layout();
        let mut covered = vec![false; l.total_len()];
        for seg in l.segments() {
            for i in seg.offset..seg.offset + seg.len() {
                assert!(!covered[i], "segment overlap at {i}");
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
        assert_eq!(l.total_len(), 6);
    }

    #[test]
    fn segment_access_and_axpy() {
        let l = layout();
        let mut p = ParamVector::from_values(l.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.segment("b"), [5.0, 6.0]);
        let q = ParamVector::from_values(l, vec![1.0; 6]).unwrap();
        p.axpy(-2.0, &q);
        assert_eq!(p.values(), [-1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn from_values_rejects_wrong_length() {
        assert!(ParamVector::<f64>::from_values(layout(), vec![0.0; 5]).is_err());
    }

    #[test]
    fn dot_and_norms() {
        let l = Layout::of(&[("p", &[3])]);
        let a = ParamVector::from_values(l.clone(), vec![3.0, 4.0, 0.0]).unwrap();
        let b = ParamVector::from_values(l, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.dot(&b), 7.0);
        assert_eq!(a.inf_norm(), 4.0);
        assert_eq!(a.max_abs_diff(&b), 3.0);
    }
}
