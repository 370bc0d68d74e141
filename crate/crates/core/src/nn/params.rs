//! Canonical flat parameter ordering.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Names, shapes and offsets of every tensor in visiting order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: String, shape: &[usize]) {
        let offset = self.total_len();
        self.tensors.push(TensorSpec {
            name,
            shape: shape.to_vec(),
            offset,
        });
    }

    pub fn total_len(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Something that owns named `f64` tensors in a fixed order.
pub(crate) trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::default();
        self.visit("", &mut |name, shape, _| layout.push(name, shape));
        layout
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        debug_assert_eq!(at, flat.len());
    }
}

pub(crate) fn visit_array<D: ndarray::Dimension>(
    name: String,
    a: &ndarray::Array<f64, D>,
    f: &mut dyn FnMut(String, &[usize], &[f64]),
) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit_array_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>, f: &mut dyn FnMut(&mut [f64])) {
    f(a.as_slice_mut().expect("standard layout"));
}

/// Flat gradient aligned with a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl GradientVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != layout.total_len() {
            return Err(NnError::ShapeMismatch(format!(
                "layout holds {} parameters, got {} values",
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The slice belonging to tensor `name`.
    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets_are_contiguous() {
        let mut l = ParamLayout::default();
        l.push("a".into(), &[2, 3]);
        l.push("b".into(), &[4]);
        assert_eq!(l.total_len(), 10);
        assert_eq!(l.get("b").unwrap().range(), 6..10);
        let g = GradientVector::from_values(Arc::new(l.clone()), (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(g.slice("b").unwrap(), &[6.0, 7.0, 8.0, 9.0]);
        assert!(GradientVector::from_values(Arc::new(l), vec![0.0; 3]).is_err());
    }
}
