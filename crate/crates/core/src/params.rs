//! Parameter bookkeeping: sparse gradients, the per-class model collection and
//! its flat weight vector.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::model::{EdgeClass, EdgeClassModel, ParamCoord};

/// Anything that can absorb `(parameter index, partial derivative)` contributions.
pub trait GradientSink {
    fn add(&mut self, index: usize, value: f64);
}

impl GradientSink for [f64] {
    fn add(&mut self, index: usize, value: f64) {
        self[index] += value;
    }
}

impl GradientSink for Vec<f64> {
    fn add(&mut self, index: usize, value: f64) {
        self[index] += value;
    }
}

/// Sparse map from parameter index to partial derivative.
///
/// Contributions are appended and merged lazily, so repeated additions to
/// the same index are cheap; every accessor sees the merged values.
#[derive(Clone, Debug, Default)]
pub struct SparseGradient {
    entries: Vec<(usize, f64)>,
    merged: bool,
}

impl SparseGradient {
    pub fn new() -> Self {
        SparseGradient {
            entries: Vec::new(),
            merged: true,
        }
    }

    fn merged_entries(&self) -> Vec<(usize, f64)> {
        let mut v = self.entries.clone();
        if !self.merged {
            merge(&mut v);
        }
        v
    }

    /// Sorts by index and sums duplicates in place.
    pub fn compact(&mut self) {
        if !self.merged {
            merge(&mut self.entries);
            self.merged = true;
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        if self.merged {
            return match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
                Ok(pos) => self.entries[pos].1,
                Err(_) => 0.0,
            };
        }
        self.entries
            .iter()
            .filter(|&&(i, _)| i == index)
            .map(|&(_, g)| g)
            .sum()
    }

    /// Number of distinct indices.
    pub fn len(&self) -> usize {
        if self.merged {
            self.entries.len()
        } else {
            self.merged_entries().len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> {
        self.merged_entries().into_iter()
    }

    pub fn add_scaled(&mut self, other: &SparseGradient, scale: f64) {
        self.entries
            .extend(other.entries.iter().map(|&(i, g)| (i, scale * g)));
        self.merged = false;
        self.compact();
    }

    /// Adds every entry into a dense vector.
    pub fn add_to_dense(&self, dense: &mut [f64]) {
        for &(i, g) in &self.entries {
            dense[i] += g;
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        self.add_to_dense(&mut v);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.is_finite())
    }
}

fn merge(v: &mut Vec<(usize, f64)>) {
    let Some(max) = v.iter().map(|&(i, _)| i).max() else {
        return;
    };
    if max < 4 * v.len() {
        let mut dense = vec![0.0; max + 1];
        let mut touched = vec![false; max + 1];
        for &(i, g) in v.iter() {
            dense[i] += g;
            touched[i] = true;
        }
        *v = (0..=max).filter(|&i| touched[i]).map(|i| (i, dense[i])).collect();
        return;
    }
    v.sort_by_key(|&(i, _)| i);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for &(i, g) in v.iter() {
        match out.last_mut() {
            Some((last, acc)) if *last == i => *acc += g,
            _ => out.push((i, g)),
        }
    }
    *v = out;
}

impl PartialEq for SparseGradient {
    fn eq(&self, other: &Self) -> bool {
        self.merged_entries() == other.merged_entries()
    }
}

impl GradientSink for SparseGradient {
    fn add(&mut self, index: usize, value: f64) {
        self.entries.push((index, value));
        self.merged = false;
    }
}

/// All edge class models of one MoP-MEMM, in canonical class order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    num_labels: usize,
    models: Vec<EdgeClassModel>,
    offsets: Vec<usize>,
}

impl ModelSet {
    /// Requires a `local` class (it supplies the START conditional) and
    /// consistent label counts.
    pub fn new(mut models: Vec<EdgeClassModel>) -> Result<Self> {
        models.sort_by_key(|m| m.class());
        if models.windows(2).any(|w| w[0].class() == w[1].class()) {
            return Err(Error::structural("duplicate edge class in model set"));
        }
        let num_labels = match models.first() {
            Some(m) => m.num_labels(),
            None => return Err(Error::structural("model set needs at least one class")),
        };
        if models[0].class() != EdgeClass::Local {
            return Err(Error::structural("model set needs a `local` class"));
        }
        if models.iter().any(|m| m.num_labels() != num_labels) {
            return Err(Error::structural("edge class models disagree on label count"));
        }
        let mut offsets = Vec::with_capacity(models.len());
        let mut total = 0;
        for m in &models {
            offsets.push(total);
            total += m.num_params();
        }
        Ok(ModelSet {
            num_labels,
            models,
            offsets,
        })
    }

    pub fn zeros(
        classes: &[EdgeClass],
        num_labels: usize,
        num_node_preds: usize,
        num_pair_preds: usize,
    ) -> Result<Self> {
        ModelSet::new(
            classes
                .iter()
                .map(|&c| EdgeClassModel::zeros(c, num_labels, num_node_preds, num_pair_preds))
                .collect(),
        )
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn classes(&self) -> impl Iterator<Item = EdgeClass> + '_ {
        self.models.iter().map(|m| m.class())
    }

    pub fn models(&self) -> &[EdgeClassModel] {
        &self.models
    }

    pub fn slot(&self, class: EdgeClass) -> Option<usize> {
        self.models.iter().position(|m| m.class() == class)
    }

    pub fn get(&self, class: EdgeClass) -> Option<&EdgeClassModel> {
        self.slot(class).map(|s| &self.models[s])
    }

    pub fn get_mut(&mut self, class: EdgeClass) -> Option<&mut EdgeClassModel> {
        self.slot(class).map(move |s| &mut self.models[s])
    }

    /// Model and its global parameter offset, or a structural error.
    pub(crate) fn lookup(&self, class: EdgeClass) -> Result<(&EdgeClassModel, usize)> {
        self.slot(class)
            .map(|s| (&self.models[s], self.offsets[s]))
            .ok_or_else(|| Error::structural(format!("no model for edge class `{class}`")))
    }

    pub fn offset(&self, class: EdgeClass) -> Option<usize> {
        self.slot(class).map(|s| self.offsets[s])
    }

    /// Global index range owned by `class`.
    pub fn range(&self, class: EdgeClass) -> Option<std::ops::Range<usize>> {
        self.slot(class)
            .map(|s| self.offsets[s]..self.offsets[s] + self.models[s].num_params())
    }

    pub fn num_params(&self) -> usize {
        self.models.iter().map(EdgeClassModel::num_params).sum()
    }

    /// Maps a global parameter index to its class and table coordinates.
    pub fn resolve(&self, index: usize) -> Option<(EdgeClass, ParamCoord)> {
        let slot = self.offsets.iter().rposition(|&o| o <= index)?;
        let m = &self.models[slot];
        m.resolve(index - self.offsets[slot]).map(|c| (m.class(), c))
    }

    pub fn weights(&self) -> WeightVector {
        let mut v = Vec::with_capacity(self.num_params());
        for m in &self.models {
            v.extend_from_slice(m.node_weights());
            v.extend_from_slice(m.pair_weights());
        }
        WeightVector(v)
    }

    pub fn set_weights(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::structural(format!(
                "weight vector has {} entries, model set has {}",
                theta.len(),
                self.num_params()
            )));
        }
        for (m, &off) in self.models.iter_mut().zip(&self.offsets) {
            let (node, pair) = m.weights_mut();
            let n = node.len();
            node.copy_from_slice(&theta[off..off + n]);
            pair.copy_from_slice(&theta[off + n..off + n + pair.len()]);
        }
        Ok(())
    }

    pub fn with_weights(&self, theta: &[f64]) -> Result<ModelSet> {
        let mut out = self.clone();
        out.set_weights(theta)?;
        Ok(out)
    }
}

/// All parameter tables of a [`ModelSet`] stacked into one vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_gradient_accumulates() {
        let mut g = SparseGradient::new();
        g.add(3, 1.0);
        g.add(1, 2.0);
        g.add(3, 0.5);
        assert_eq!(g.iter().collect::<Vec<_>>(), vec![(1, 2.0), (3, 1.5)]);
        let mut h = SparseGradient::new();
        h.add_scaled(&g, -2.0);
        assert_eq!(h.get(3), -3.0);
        assert_eq!(h.to_dense(4), vec![0.0, -4.0, 0.0, -3.0]);
    }

    #[test]
    fn weight_vector_round_trips() {
        let mut set = ModelSet::zeros(&[EdgeClass::Skip, EdgeClass::Local], 2, 3, 2).unwrap();
        assert_eq!(set.classes().collect::<Vec<_>>(), vec![EdgeClass::Local, EdgeClass::Skip]);
        let theta: Vec<f64> = (0..set.num_params()).map(|i| i as f64 * 0.1).collect();
        set.set_weights(&theta).unwrap();
        assert_eq!(set.weights().0, theta);
        for i in 0..set.num_params() {
            let (class, coord) = set.resolve(i).unwrap();
            let m = set.get(class).unwrap();
            let local = i - set.offset(class).unwrap();
            assert_eq!(m.resolve(local), Some(coord));
            assert_eq!(m.weight(local), theta[i]);
        }
        assert!(set.resolve(set.num_params()).is_none());
        assert!(set.set_weights(&theta[1..]).is_err());
    }

    #[test]
    fn requires_local_class() {
        assert!(ModelSet::zeros(&[EdgeClass::Skip], 2, 1, 1).is_err());
        assert!(ModelSet::zeros(&[EdgeClass::Local, EdgeClass::Local], 2, 1, 1).is_err());
        assert!(ModelSet::new(vec![]).is_err());
    }
}
