//! Maxent single-parent conditionals.
//!
//! Every feature is an input predicate crossed with a child label (node
//! features, weights `mu`) or with a (parent label, child label) pair (pair
//! features, weights `lambda`). The parent label may be [`ParentLabel::Start`],
//! which has its own row in the pair table and is used for parentless nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelId;
use crate::params::{GradientSink, SparseGradient};

pub type PredicateId = u32;

/// Id returned by a frozen vocabulary for strings it has never seen.
pub const UNKNOWN_PREDICATE: PredicateId = PredicateId::MAX;

/// Sparse, sorted map from predicate id to value with no explicit zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredicateVector {
    entries: Vec<(PredicateId, f64)>,
}

impl PredicateVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from arbitrary `(id, value)` pairs. Duplicate ids are summed;
    /// zeros and [`UNKNOWN_PREDICATE`] are dropped.
    pub fn from_entries<I: IntoIterator<Item = (PredicateId, f64)>>(entries: I) -> Self {
        let mut entries: Vec<_> = entries
            .into_iter()
            .filter(|&(id, _)| id != UNKNOWN_PREDICATE)
            .collect();
        entries.sort_by_key(|&(id, _)| id);
        let mut merged: Vec<(PredicateId, f64)> = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == id => *acc += v,
                _ => merged.push((id, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        PredicateVector { entries: merged }
    }

    /// Binary indicators; repeated ids are capped at 1.
    pub fn indicators<I: IntoIterator<Item = PredicateId>>(ids: I) -> Self {
        let mut ids: Vec<_> = ids.into_iter().filter(|&id| id != UNKNOWN_PREDICATE).collect();
        ids.sort_unstable();
        ids.dedup();
        PredicateVector {
            entries: ids.into_iter().map(|id| (id, 1.0)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PredicateId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: PredicateId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .ok()
            .map(|pos| self.entries[pos].1)
    }
}

/// Named group of edges sharing one parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeClass {
    /// Adjacent-position edges, and the START conditional of parentless nodes.
    Local,
    Skip,
    Incoming,
    Outgoing,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [
        EdgeClass::Local,
        EdgeClass::Skip,
        EdgeClass::Incoming,
        EdgeClass::Outgoing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeClass::Local => "local",
            EdgeClass::Skip => "skip",
            EdgeClass::Incoming => "incoming",
            EdgeClass::Outgoing => "outgoing",
        }
    }
}

impl fmt::Display for EdgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown edge class `{s}`")))
    }
}

/// The conditioning label of a single-parent conditional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParentLabel {
    Start,
    Label(LabelId),
}

/// A normalized distribution over child labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Coordinates of one weight inside an [`EdgeClassModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamCoord {
    Node {
        pred: PredicateId,
        label: LabelId,
    },
    Pair {
        pred: PredicateId,
        parent: ParentLabel,
        label: LabelId,
    },
}

/// Weight tables for one edge class.
///
/// `node_weights` is laid out `[pred][child]`, `pair_weights` is laid out
/// `[pred][parent row][child]` where parent row `num_labels` is START.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeClassModel {
    class: EdgeClass,
    num_labels: usize,
    num_node_preds: usize,
    num_pair_preds: usize,
    node_weights: Vec<f64>,
    pair_weights: Vec<f64>,
}

impl EdgeClassModel {
    pub fn zeros(
        class: EdgeClass,
        num_labels: usize,
        num_node_preds: usize,
        num_pair_preds: usize,
    ) -> Self {
        EdgeClassModel {
            class,
            num_labels,
            num_node_preds,
            num_pair_preds,
            node_weights: vec![0.0; num_node_preds * num_labels],
            pair_weights: vec![0.0; num_pair_preds * (num_labels + 1) * num_labels],
        }
    }

    pub fn from_weights(
        class: EdgeClass,
        num_labels: usize,
        num_node_preds: usize,
        num_pair_preds: usize,
        node_weights: Vec<f64>,
        pair_weights: Vec<f64>,
    ) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::structural("edge class model needs at least one label"));
        }
        if node_weights.len() != num_node_preds * num_labels
            || pair_weights.len() != num_pair_preds * (num_labels + 1) * num_labels
        {
            return Err(Error::structural(format!(
                "weight tables for class `{class}` do not match {num_node_preds} node / \
                 {num_pair_preds} pair predicates and {num_labels} labels"
            )));
        }
        Ok(EdgeClassModel {
            class,
            num_labels,
            num_node_preds,
            num_pair_preds,
            node_weights,
            pair_weights,
        })
    }

    pub fn class(&self) -> EdgeClass {
        self.class
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_node_preds(&self) -> usize {
        self.num_node_preds
    }

    pub fn num_pair_preds(&self) -> usize {
        self.num_pair_preds
    }

    pub fn num_params(&self) -> usize {
        self.node_weights.len() + self.pair_weights.len()
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn pair_weights(&self) -> &[f64] {
        &self.pair_weights
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.node_weights, &mut self.pair_weights)
    }

    pub(crate) fn parent_row(&self, parent: ParentLabel) -> Result<usize> {
        match parent {
            ParentLabel::Start => Ok(self.num_labels),
            ParentLabel::Label(l) if l < self.num_labels => Ok(l),
            ParentLabel::Label(l) => Err(Error::structural(format!(
                "parent label {l} out of range for {} labels",
                self.num_labels
            ))),
        }
    }

    /// Flat index of `mu[pred, label]` within this model's parameter block.
    pub fn node_index(&self, pred: PredicateId, label: LabelId) -> usize {
        pred as usize * self.num_labels + label
    }

    /// Flat index of `lambda[pred, parent, label]` within this model's parameter block.
    pub fn pair_index(&self, pred: PredicateId, parent_row: usize, label: LabelId) -> usize {
        self.node_weights.len()
            + (pred as usize * (self.num_labels + 1) + parent_row) * self.num_labels
            + label
    }

    pub fn resolve(&self, index: usize) -> Option<ParamCoord> {
        let l = self.num_labels;
        if index < self.node_weights.len() {
            return Some(ParamCoord::Node {
                pred: (index / l) as PredicateId,
                label: index % l,
            });
        }
        let rest = index - self.node_weights.len();
        if rest >= self.pair_weights.len() {
            return None;
        }
        let label = rest % l;
        let row = (rest / l) % (l + 1);
        let pred = (rest / l / (l + 1)) as PredicateId;
        let parent = if row == l {
            ParentLabel::Start
        } else {
            ParentLabel::Label(row)
        };
        Some(ParamCoord::Pair { pred, parent, label })
    }

    pub fn weight(&self, index: usize) -> f64 {
        let n = self.node_weights.len();
        if index < n {
            self.node_weights[index]
        } else {
            self.pair_weights[index - n]
        }
    }

    pub fn set_weight(&mut self, index: usize, value: f64) {
        let n = self.node_weights.len();
        if index < n {
            self.node_weights[index] = value;
        } else {
            self.pair_weights[index - n] = value;
        }
    }

    /// Node-feature scores for every child label. Predicates outside the
    /// vocabulary contribute nothing.
    pub(crate) fn node_scores(&self, node_preds: &PredicateVector, out: &mut [f64]) {
        let l = self.num_labels;
        out.fill(0.0);
        for (pred, v) in node_preds.iter() {
            let p = pred as usize;
            if p >= self.num_node_preds {
                continue;
            }
            let row = &self.node_weights[p * l..(p + 1) * l];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    /// Adds pair-feature scores for one parent row onto `out`.
    pub(crate) fn add_pair_scores(
        &self,
        pair_preds: &PredicateVector,
        parent_row: usize,
        out: &mut [f64],
    ) {
        let l = self.num_labels;
        for (pred, v) in pair_preds.iter() {
            let p = pred as usize;
            if p >= self.num_pair_preds {
                continue;
            }
            let start = (p * (l + 1) + parent_row) * l;
            let row = &self.pair_weights[start..start + l];
            for (o, w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    /// Unnormalized log scores of each child label.
    pub fn scores(
        &self,
        node_preds: &PredicateVector,
        pair_preds: &PredicateVector,
        parent: ParentLabel,
    ) -> Result<Vec<f64>> {
        let row = self.parent_row(parent)?;
        let mut out = vec![0.0; self.num_labels];
        self.node_scores(node_preds, &mut out);
        self.add_pair_scores(pair_preds, row, &mut out);
        Ok(out)
    }

    /// Conditional rows `p(. | y_parent)` for every real parent label, row-major
    /// `[parent][child]`. START is not included.
    pub(crate) fn conditional_table(
        &self,
        node_preds: &PredicateVector,
        pair_preds: &PredicateVector,
    ) -> Result<Vec<f64>> {
        let l = self.num_labels;
        let mut base = vec![0.0; l];
        self.node_scores(node_preds, &mut base);
        let mut table = vec![0.0; l * l];
        for (parent, row) in table.chunks_exact_mut(l).enumerate() {
            row.copy_from_slice(&base);
            self.add_pair_scores(pair_preds, parent, row);
            softmax_in_place(row).map_err(|e| self.numeric(e))?;
        }
        Ok(table)
    }

    pub(crate) fn start_conditional(
        &self,
        node_preds: &PredicateVector,
        pair_preds: &PredicateVector,
    ) -> Result<Vec<f64>> {
        let mut row = self.scores(node_preds, pair_preds, ParentLabel::Start)?;
        softmax_in_place(&mut row).map_err(|e| self.numeric(e))?;
        Ok(row)
    }

    fn numeric(&self, e: Error) -> Error {
        match e {
            Error::Numeric(msg) => Error::Numeric(format!("class `{}`: {msg}", self.class)),
            other => other,
        }
    }

    /// Adds `sum_y child_weights[y] * d p(y | parent) / d theta` for every
    /// parameter touched by an active predicate.
    ///
    /// With `probs = p(. | parent)` the contribution to the score of child
    /// label `c` is `p(c) * (child_weights[c] - sum_y child_weights[y] p(y))`,
    /// which is then spread over the active predicates.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_weighted_grad<S: GradientSink + ?Sized>(
        &self,
        offset: usize,
        node_preds: &PredicateVector,
        pair_preds: &PredicateVector,
        parent_row: usize,
        probs: &[f64],
        child_weights: &[f64],
        sink: &mut S,
    ) {
        let mean: f64 = probs.iter().zip(child_weights).map(|(p, w)| p * w).sum();
        let dscore: Vec<f64> = probs
            .iter()
            .zip(child_weights)
            .map(|(p, w)| p * (w - mean))
            .collect();
        if dscore.iter().all(|&d| d == 0.0) {
            return;
        }
        for (pred, v) in node_preds.iter() {
            if pred as usize >= self.num_node_preds {
                continue;
            }
            let base = offset + self.node_index(pred, 0);
            for (c, d) in dscore.iter().enumerate() {
                sink.add(base + c, v * d);
            }
        }
        for (pred, v) in pair_preds.iter() {
            if pred as usize >= self.num_pair_preds {
                continue;
            }
            let base = offset + self.pair_index(pred, parent_row, 0);
            for (c, d) in dscore.iter().enumerate() {
                sink.add(base + c, v * d);
            }
        }
    }
    /// Weighted gradient of one edge over all parent labels at once:
    /// `table` and `weights` are `[parent label][child label]` blocks. Node
    /// predicate contributions are summed over parent labels before they are
    /// emitted.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_edge_grad<S: GradientSink + ?Sized>(
        &self,
        offset: usize,
        node_preds: &PredicateVector,
        pair_preds: &PredicateVector,
        table: &[f64],
        weights: &[f64],
        sink: &mut S,
    ) {
        let l = self.num_labels;
        let mut node_total = vec![0.0; l];
        let mut dscore = vec![0.0; l];
        let mut any = false;
        for row in 0..l {
            let w = &weights[row * l..(row + 1) * l];
            if w.iter().all(|&x| x == 0.0) {
                continue;
            }
            let probs = &table[row * l..(row + 1) * l];
            let mean: f64 = probs.iter().zip(w).map(|(p, w)| p * w).sum();
            for ((d, p), w) in dscore.iter_mut().zip(probs).zip(w) {
                *d = p * (w - mean);
            }
            if dscore.iter().all(|&d| d == 0.0) {
                continue;
            }
            any = true;
            for (t, d) in node_total.iter_mut().zip(&dscore) {
                *t += d;
            }
            for (pred, v) in pair_preds.iter() {
                if pred as usize >= self.num_pair_preds {
                    continue;
                }
                let base = offset + self.pair_index(pred, row, 0);
                for (c, d) in dscore.iter().enumerate() {
                    sink.add(base + c, v * d);
                }
            }
        }
        if !any {
            return;
        }
        for (pred, v) in node_preds.iter() {
            if pred as usize >= self.num_node_preds {
                continue;
            }
            let base = offset + self.node_index(pred, 0);
            for (c, t) in node_total.iter().enumerate() {
                sink.add(base + c, v * t);
            }
        }
    }
}


/// Normalizes log scores into probabilities with max-subtraction.
pub(crate) fn softmax_in_place(scores: &mut [f64]) -> Result<()> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric(format!(
            "non-finite score encountered (max = {max})"
        )));
    }
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(())
}

/// `p(y_k | y_j, x)` for one edge class model.
pub fn edge_conditional(
    model: &EdgeClassModel,
    node_preds: &PredicateVector,
    pair_preds: &PredicateVector,
    parent: ParentLabel,
) -> Result<Distribution> {
    let mut scores = model.scores(node_preds, pair_preds, parent)?;
    softmax_in_place(&mut scores).map_err(|e| model.numeric(e))?;
    Ok(Distribution(scores))
}

/// The conditional together with `d p(y | parent) / d theta` for every child
/// label `y`. Gradient indices are local to the model's parameter block
/// (see [`EdgeClassModel::resolve`]).
pub fn edge_conditional_grad(
    model: &EdgeClassModel,
    node_preds: &PredicateVector,
    pair_preds: &PredicateVector,
    parent: ParentLabel,
) -> Result<(Distribution, Vec<SparseGradient>)> {
    let row = model.parent_row(parent)?;
    let dist = edge_conditional(model, node_preds, pair_preds, parent)?;
    let l = model.num_labels();
    let grads = (0..l)
        .map(|y| {
            let mut onehot = vec![0.0; l];
            onehot[y] = 1.0;
            let mut g = SparseGradient::new();
            model.accumulate_weighted_grad(
                0,
                node_preds,
                pair_preds,
                row,
                dist.probs(),
                &onehot,
                &mut g,
            );
            g.compact();
            g
        })
        .collect();
    Ok((dist, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, l: usize, pn: usize, pp: usize) -> EdgeClassModel {
        let mut m = EdgeClassModel::zeros(EdgeClass::Local, l, pn, pp);
        for i in 0..m.num_params() {
            m.set_weight(i, rng.gen_range(-2.0..2.0));
        }
        m
    }

    #[test]
    fn predicate_vector_normalizes() {
        let v = PredicateVector::from_entries([(3, 1.0), (1, 2.0), (3, 0.5), (2, 0.0)]);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(1, 2.0), (3, 1.5)]);
        let v = PredicateVector::from_entries([(1, 1.0), (1, -1.0), (UNKNOWN_PREDICATE, 1.0)]);
        assert!(v.is_empty());
        let v = PredicateVector::indicators([4, 2, 4, UNKNOWN_PREDICATE]);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(2, 1.0), (4, 1.0)]);
        assert_eq!(v.get(4), Some(1.0));
        assert_eq!(v.get(3), None);
    }

    #[test]
    fn uniform_at_zero_weights() {
        let m = EdgeClassModel::zeros(EdgeClass::Local, 3, 4, 4);
        let preds = PredicateVector::indicators([0, 2]);
        let d = edge_conditional(&m, &preds, &preds, ParentLabel::Label(1)).unwrap();
        for &p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_node_weight_ln2() {
        let mut m = EdgeClassModel::zeros(EdgeClass::Local, 2, 1, 0);
        let idx = m.node_index(0, 0);
        m.set_weight(idx, 2f64.ln());
        let preds = PredicateVector::indicators([0]);
        let d = edge_conditional(&m, &preds, &PredicateVector::new(), ParentLabel::Start).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matches_naive_normalizer_seed_7() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 4, 5, 5);
        let node = PredicateVector::from_entries([(0, 1.0), (3, 0.5)]);
        let pair = PredicateVector::from_entries([(1, 1.0), (4, 2.0)]);
        for parent in [
            ParentLabel::Start,
            ParentLabel::Label(0),
            ParentLabel::Label(3),
        ] {
            let row = m.parent_row(parent).unwrap();
            // plain summation, no max subtraction
            let mut raw = [0.0f64; 4];
            for (c, r) in raw.iter_mut().enumerate() {
                let mut s = 0.0;
                for (p, v) in node.iter() {
                    s += v * m.node_weights[p as usize * 4 + c];
                }
                for (p, v) in pair.iter() {
                    s += v * m.pair_weights[(p as usize * 5 + row) * 4 + c];
                }
                *r = s.exp();
            }
            let z: f64 = raw.iter().sum();
            let d = edge_conditional(&m, &node, &pair, parent).unwrap();
            for c in 0..4 {
                assert!((d.probs()[c] - raw[c] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_parent_is_structural() {
        let m = EdgeClassModel::zeros(EdgeClass::Skip, 2, 1, 1);
        let e = edge_conditional(
            &m,
            &PredicateVector::new(),
            &PredicateVector::new(),
            ParentLabel::Label(2),
        )
        .unwrap_err();
        assert!(matches!(e, Error::Structural(_)));
    }

    #[test]
    fn non_finite_weight_is_numeric() {
        let mut m = EdgeClassModel::zeros(EdgeClass::Local, 2, 1, 0);
        m.set_weight(0, f64::NAN);
        let e = edge_conditional(
            &m,
            &PredicateVector::indicators([0]),
            &PredicateVector::new(),
            ParentLabel::Start,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Numeric(_)));
    }

    #[test]
    fn no_overflow_for_huge_weights() {
        let mut m = EdgeClassModel::zeros(EdgeClass::Local, 3, 1, 0);
        m.set_weight(0, 1e300);
        m.set_weight(1, 9e299);
        let d = edge_conditional(
            &m,
            &PredicateVector::indicators([0]),
            &PredicateVector::new(),
            ParentLabel::Start,
        )
        .unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn quarter_gradient_at_uniform() {
        let m = EdgeClassModel::zeros(EdgeClass::Local, 2, 1, 0);
        let preds = PredicateVector::indicators([0]);
        let (_, grads) =
            edge_conditional_grad(&m, &preds, &PredicateVector::new(), ParentLabel::Start).unwrap();
        assert!((grads[0].get(m.node_index(0, 0)) - 0.25).abs() < 1e-15);
        assert!((grads[0].get(m.node_index(0, 1)) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_seed_11() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = random_model(&mut rng, 3, 4, 4);
        let node = PredicateVector::from_entries([(0, 1.0), (2, 0.7)]);
        let pair = PredicateVector::from_entries([(1, 1.0), (3, 1.3)]);
        let parent = ParentLabel::Label(2);
        let (_, grads) = edge_conditional_grad(&m, &node, &pair, parent).unwrap();
        let h = 1e-6;
        for i in 0..m.num_params() {
            let w = m.weight(i);
            m.set_weight(i, w + h);
            let up = edge_conditional(&m, &node, &pair, parent).unwrap();
            m.set_weight(i, w - h);
            let down = edge_conditional(&m, &node, &pair, parent).unwrap();
            m.set_weight(i, w);
            for (y, g) in grads.iter().enumerate() {
                let fd = (up.probs()[y] - down.probs()[y]) / (2.0 * h);
                let a = g.get(i);
                let scale = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (a - fd).abs() <= 1e-5 * scale,
                    "param {i} label {y}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn resolve_round_trips_indices() {
        let m = EdgeClassModel::zeros(EdgeClass::Incoming, 3, 2, 2);
        for i in 0..m.num_params() {
            let back = match m.resolve(i).unwrap() {
                ParamCoord::Node { pred, label } => m.node_index(pred, label),
                ParamCoord::Pair {
                    pred,
                    parent,
                    label,
                } => m.pair_index(pred, m.parent_row(parent).unwrap(), label),
            };
            assert_eq!(back, i);
        }
        assert!(m.resolve(m.num_params()).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize, f64)> {
            let l = 3usize;
            (
                prop::collection::vec(-20.0f64..20.0, 4 * l),
                prop::collection::vec(-20.0f64..20.0, 4 * (l + 1) * l),
                0..=l,
                -50.0f64..50.0,
            )
        }

        proptest! {
            #[test]
            fn normalized_shift_invariant_zero_sum((nw, pw, parent, c) in arb_case()) {
                let l = 3;
                let m = EdgeClassModel::from_weights(EdgeClass::Local, l, 4, 4, nw, pw).unwrap();
                let parent = if parent == l { ParentLabel::Start } else { ParentLabel::Label(parent) };
                let node = PredicateVector::indicators([0, 2]);
                let pair = PredicateVector::from_entries([(1, 1.0), (3, 0.5)]);
                let (d, grads) = edge_conditional_grad(&m, &node, &pair, parent).unwrap();
                let total: f64 = d.probs().iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);

                // uniform label shift of one predicate's node weights
                let mut shifted = m.clone();
                for y in 0..l {
                    let i = shifted.node_index(2, y);
                    let w = shifted.weight(i);
                    shifted.set_weight(i, w + c);
                }
                let d2 = edge_conditional(&shifted, &node, &pair, parent).unwrap();
                for (a, b) in d.probs().iter().zip(d2.probs()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }

                // per-coordinate sum over child labels vanishes
                let mut sum = SparseGradient::new();
                for g in &grads {
                    sum.add_scaled(g, 1.0);
                }
                for (_, v) in sum.iter() {
                    prop_assert!(v.abs() <= 1e-12);
                }

                // inactive predicates get nothing
                for g in &grads {
                    for (i, _) in g.iter() {
                        match m.resolve(i).unwrap() {
                            ParamCoord::Node { pred, .. } => prop_assert!(node.get(pred).is_some()),
                            ParamCoord::Pair { pred, .. } => prop_assert!(pair.get(pred).is_some()),
                        }
                    }
                }
            }
        }
    }
}
