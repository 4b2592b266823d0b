//! Flat parameter vectors with a named segment table.
//!
//! Model, optimizer, and EMA teacher all agree on structure through a shared
//! [`Layout`]: an ordered list of named segments that are disjoint and cover
//! the vector. Keeping everything in one flat buffer makes element-wise
//! updates, distances, and serialization trivial.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::Scalar;

/// One named slice of the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment table; segments are disjoint and cover the vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs in order. Panics on a
    /// duplicate name; layouts are constructed by code, not by input data.
    pub fn new<I, S>(segments: I) -> Arc<Layout>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, len) in segments {
            let name = name.into();
            assert!(
                !out.iter().any(|s: &Segment| s.name == name),
                "duplicate segment name `{name}`"
            );
            out.push(Segment {
                name,
                offset,
                len,
            });
            offset += len;
        }
        Arc::new(Layout {
            segments: out,
            total: offset,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::UnknownSegment(name.to_string()))
    }

    /// Name of the segment containing flat index `index` (for diagnostics).
    pub fn segment_of(&self, index: usize) -> &str {
        self.segments
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| s.name.as_str())
            .unwrap_or("<out of range>")
    }
}

/// Flat, ordered collection of trainable weights over a shared [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T> {
    layout: Arc<Layout>,
    values: Vec<T>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParameterVector {
            layout,
            values: vec![T::zero(); n],
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::LayoutMismatch(format!(
                "expected {} values, got {}",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(ParameterVector { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> Result<&[T]> {
        let s = self.layout.segment(name)?;
        Ok(&self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [T]> {
        let s = self.layout.segment(name)?.clone();
        Ok(&mut self.values[s.offset..s.offset + s.len])
    }

    /// True when both vectors use the same layout (cheap pointer check first).
    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_same_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(what.to_string()))
        }
    }

    /// Errors with the segment name of the first NaN/Inf entry, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                segment: self.layout.segment_of(i).to_string(),
                index: i,
            }),
        }
    }

    /// Euclidean norm, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| {
                let x = v.as_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance to `other`, accumulated in f64.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_layout(other, "l2_distance operands")?;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        Ok(sum.sqrt())
    }

    /// Widens to an `f64` value buffer (exact for f32 and f64).
    pub fn to_f64_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        Layout::new([("w", 3usize), ("b", 2usize)])
    }

    #[test]
    fn segments_cover_vector() {
        let l = layout();
        assert_eq!(l.total_len(), 5);
        let covered: usize = l.segments().iter().map(|s| s.len).sum();
        assert_eq!(covered, l.total_len());
        assert_eq!(l.segment("b").unwrap().offset, 3);
        assert_eq!(l.segment_of(4), "b");
    }

    #[test]
    fn unknown_segment_errors() {
        let v: ParameterVector<f64> = ParameterVector::zeros(layout());
        assert!(matches!(v.segment("nope"), Err(Error::UnknownSegment(_))));
    }

    #[test]
    fn check_finite_names_segment() {
        let mut v: ParameterVector<f64> = ParameterVector::zeros(layout());
        v.values_mut()[4] = f64::NAN;
        match v.check_finite() {
            Err(Error::NonFinite { segment, index }) => {
                assert_eq!(segment, "b");
                assert_eq!(index, 4);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn distance_and_norm() {
        let l = layout();
        let a = ParameterVector::from_values(l.clone(), vec![3.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = ParameterVector::from_values(l, vec![0.0, 4.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.l2_norm(), 3.0);
        assert_eq!(a.l2_distance(&b).unwrap(), 5.0);
    }

    #[test]
    fn generic_over_f32() {
        let v: ParameterVector<f32> = ParameterVector::zeros(layout());
        assert_eq!(v.len(), 5);
        assert!(v.check_finite().is_ok());
    }
}
