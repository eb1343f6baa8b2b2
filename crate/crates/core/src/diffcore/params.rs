use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a named block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with a parallel gradient vector and a named layout.
///
/// Slices are appended in order, so they are disjoint and tile the whole
/// array by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    grads: Vec<f64>,
    slices: Vec<ParamSlice>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zero-initialised `rows × cols` block.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> SliceId {
        let offset = self.values.len();
        self.values.resize(offset + rows * cols, 0.0);
        self.grads.resize(offset + rows * cols, 0.0);
        self.slices.push(ParamSlice {
            name: name.into(),
            offset,
            rows,
            cols,
        });
        SliceId(self.slices.len() - 1)
    }

    /// Rebuilds a store from a layout and a flat value vector.
    pub fn from_parts(slices: Vec<ParamSlice>, values: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for s in &slices {
            if s.offset != expected {
                return Err(Error::Format(format!(
                    "slice `{}` starts at {} but previous slices end at {expected}",
                    s.name, s.offset
                )));
            }
            expected += s.len();
        }
        if expected != values.len() {
            return Err(Error::Format(format!(
                "layout covers {expected} values, data has {}",
                values.len()
            )));
        }
        let grads = vec![0.0; values.len()];
        Ok(Self {
            values,
            grads,
            slices,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn slice(&self, id: SliceId) -> &ParamSlice {
        &self.slices[id.0]
    }

    pub fn find(&self, name: &str) -> Option<SliceId> {
        self.slices.iter().position(|s| s.name == name).map(SliceId)
    }

    pub fn slice_values(&self, id: SliceId) -> &[f64] {
        &self.values[self.slices[id.0].range()]
    }

    pub fn slice_values_mut(&mut self, id: SliceId) -> &mut [f64] {
        let r = self.slices[id.0].range();
        &mut self.values[r]
    }

    pub fn grad_slice(&self, id: SliceId) -> &[f64] {
        &self.grads[self.slices[id.0].range()]
    }

    pub fn grad_slice_mut(&mut self, id: SliceId) -> &mut [f64] {
        let r = self.slices[id.0].range();
        &mut self.grads[r]
    }

    /// Row-major copy of a block.
    pub fn slice_matrix(&self, id: SliceId) -> Array2<f64> {
        let s = &self.slices[id.0];
        Array2::from_shape_vec((s.rows, s.cols), self.slice_values(id).to_vec())
            .expect("slice layout matches its length")
    }

    /// Name of the slice containing flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.slices
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| s.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, id: SliceId, bound: f64, rng: &mut R) {
        for v in self.slice_values_mut(id) {
            *v = rng.gen_range(-bound..=bound);
        }
    }

    pub fn fill(&mut self, id: SliceId, value: f64) {
        self.slice_values_mut(id).iter_mut().for_each(|v| *v = value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_tile_the_store() {
        let mut p = ParamStore::new();
        let a = p.add("a", 2, 3);
        let b = p.add("b", 1, 3);
        assert_eq!(p.len(), 9);
        assert_eq!(p.grads().len(), p.values().len());
        assert_eq!(p.slice(a).range(), 0..6);
        assert_eq!(p.slice(b).range(), 6..9);
        assert_eq!(p.name_of(7), Some("b"));
        assert_eq!(p.find("a"), Some(a));
    }

    #[test]
    fn zero_grads_clears_everything() {
        let mut p = ParamStore::new();
        p.add("w", 4, 4);
        p.grads_mut().iter_mut().enumerate().for_each(|(i, g)| *g = i as f64);
        p.zero_grads();
        assert!(p.grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn from_parts_rejects_gaps() {
        let slices = vec![ParamSlice {
            name: "w".into(),
            offset: 1,
            rows: 1,
            cols: 1,
        }];
        assert!(ParamStore::from_parts(slices, vec![0.0, 0.0]).is_err());
    }
}
