//! Exact posterior node marginals by the mixture forward sweep, decoding and
//! ordering-averaged prediction for link graphs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeaturizedInstance, LinkInstance};
use crate::labels::LabelId;
use crate::model::EdgeClass;
use crate::params::ModelSet;

/// Row-stochastic `n x |Y|` table of posterior node marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalTable {
    num_labels: usize,
    data: Vec<f64>,
}

impl MarginalTable {
    pub fn zeros(n: usize, num_labels: usize) -> Self {
        MarginalTable {
            num_labels,
            data: vec![0.0; n * num_labels],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::structural("marginal rows differ in length"));
        }
        Ok(MarginalTable {
            num_labels: l,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.num_labels).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.num_labels..(k + 1) * self.num_labels]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.num_labels..(k + 1) * self.num_labels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.num_labels.max(1))
    }

    pub fn get(&self, k: usize, y: LabelId) -> f64 {
        self.data[k * self.num_labels + y]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute entrywise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &MarginalTable) -> f64 {
        if self.num_labels != other.num_labels || self.data.len() != other.data.len() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Errors unless every entry is in `[0, 1]` and every row sums to 1
    /// within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        for (k, row) in self.rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol || row.iter().any(|p| !(-tol..=1.0 + tol).contains(p)) {
                return Err(Error::Numeric(format!(
                    "marginal row {k} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(())
    }
}

/// Conditional tables produced by one forward sweep, kept so gradient code
/// can reuse them.
#[derive(Clone, Debug)]
pub(crate) struct Sweep {
    pub marginals: MarginalTable,
    /// `p(. | START)` for parentless nodes.
    pub start: Vec<Option<Vec<f64>>>,
    /// Per node and parent slot, the `L x L` table `[parent label][child label]`.
    pub tables: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn check_instance(models: &ModelSet, instance: &FeaturizedInstance) -> Result<()> {
    if instance.is_empty() {
        return Err(Error::EmptyInstance("instance has no nodes".into()));
    }
    for (_, _, class) in instance.graph.edges() {
        models.lookup(class)?;
    }
    instance.check_labels(models.num_labels())
}

pub(crate) fn forward_sweep(models: &ModelSet, instance: &FeaturizedInstance) -> Result<Sweep> {
    check_instance(models, instance)?;
    let l = models.num_labels();
    let n = instance.len();
    let graph = &instance.graph;
    let (local, _) = models.lookup(EdgeClass::Local)?;
    let mut marginals = MarginalTable::zeros(n, l);
    let mut start = Vec::with_capacity(n);
    let mut tables = Vec::with_capacity(n);
    let mut row = vec![0.0; l];
    for k in 0..n {
        let parents = graph.parents(k);
        if parents.is_empty() {
            let p = local.start_conditional(&instance.node_preds[k], &instance.start_preds[k])?;
            marginals.row_mut(k).copy_from_slice(&p);
            start.push(Some(p));
            tables.push(Vec::new());
            continue;
        }
        row.fill(0.0);
        let mut node_tables = Vec::with_capacity(parents.len());
        for ((p, &alpha), pair) in parents.iter().zip(graph.alphas(k)).zip(&instance.edge_preds[k]) {
            let (model, _) = models.lookup(p.class)?;
            let table = model.conditional_table(&instance.node_preds[k], pair)?;
            let parent_row = marginals.row(p.index);
            for (yp, &mp) in parent_row.iter().enumerate() {
                let weight = alpha * mp;
                if weight == 0.0 {
                    continue;
                }
                for (r, t) in row.iter_mut().zip(&table[yp * l..(yp + 1) * l]) {
                    *r += weight * t;
                }
            }
            node_tables.push(table);
        }
        marginals.row_mut(k).copy_from_slice(&row);
        start.push(None);
        tables.push(node_tables);
    }
    Ok(Sweep {
        marginals,
        start,
        tables,
    })
}

/// Exact posterior marginals `p(y_k | x)` for every node of the instance's graph.
///
/// Parentless nodes use the local model conditioned on START; every other
/// row is `sum_j alpha_kj sum_y' p(y_k | y', x) p(y_j = y' | x)`.
pub fn forward_marginals(models: &ModelSet, instance: &FeaturizedInstance) -> Result<MarginalTable> {
    forward_sweep(models, instance).map(|s| s.marginals)
}

fn argmax(row: &[f64]) -> LabelId {
    let mut best = 0;
    for (y, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = y;
        }
    }
    best
}

/// Per-node argmax; ties go to the lowest label index.
pub fn posterior_decode(marginals: &MarginalTable) -> Vec<LabelId> {
    marginals.rows().map(argmax).collect()
}

/// Joint MAP sequence of a pure chain MEMM by max-product in log space.
///
/// Parentless nodes after the first start a fresh segment conditioned on
/// START. Ties at every backpointer go to the lowest label index.
pub fn viterbi_chain(models: &ModelSet, instance: &FeaturizedInstance) -> Result<Vec<LabelId>> {
    if !instance.graph.is_chain() {
        return Err(Error::UnsupportedStructure(
            "joint MAP decoding needs a pure chain; this graph has skip or non-local edges".into(),
        ));
    }
    check_instance(models, instance)?;
    let l = models.num_labels();
    let n = instance.len();
    let (local, _) = models.lookup(EdgeClass::Local)?;
    let mut delta = vec![f64::NEG_INFINITY; l];
    let mut back: Vec<Vec<LabelId>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut next = vec![f64::NEG_INFINITY; l];
        let mut ptr = vec![0; l];
        if instance.graph.parents(k).is_empty() {
            let start = local.start_conditional(&instance.node_preds[k], &instance.start_preds[k])?;
            let (best, carried) = if k == 0 {
                (0, 0.0)
            } else {
                let b = argmax(&delta);
                (b, delta[b])
            };
            for (y, p) in start.iter().enumerate() {
                next[y] = carried + p.ln();
                ptr[y] = best;
            }
        } else {
            let table = local.conditional_table(&instance.node_preds[k], &instance.edge_preds[k][0])?;
            for (y, (nx, pt)) in next.iter_mut().zip(ptr.iter_mut()).enumerate() {
                for (yp, d) in delta.iter().enumerate() {
                    let score = d + table[yp * l + y].ln();
                    if score > *nx {
                        *nx = score;
                        *pt = yp;
                    }
                }
            }
        }
        delta = next;
        back.push(ptr);
    }
    let mut path = vec![0; n];
    path[n - 1] = argmax(&delta);
    for k in (1..n).rev() {
        path[k - 1] = back[k][path[k]];
    }
    Ok(path)
}

/// `count` uniformly random permutations of `0..n`, drawn in sequence from
/// one seeded generator.
pub fn sample_orderings(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect()
}

/// Marginals per page for one ordering (rows indexed by page, not position).
pub fn ordering_marginals(
    models: &ModelSet,
    instance: &LinkInstance,
    permutation: &[usize],
) -> Result<MarginalTable> {
    let featurized = instance.featurize_ordering(permutation)?;
    let by_position = forward_marginals(models, &featurized)?;
    let mut by_page = MarginalTable::zeros(by_position.len(), by_position.num_labels());
    for (i, &page) in permutation.iter().enumerate() {
        by_page.row_mut(page).copy_from_slice(by_position.row(i));
    }
    Ok(by_page)
}

/// Mean of the page marginals over explicit orderings, reduced in list order.
pub fn mean_over_orderings(
    models: &ModelSet,
    instance: &LinkInstance,
    orderings: &[Vec<usize>],
) -> Result<MarginalTable> {
    if orderings.is_empty() {
        return Err(Error::Config("at least one ordering is required".into()));
    }
    let tables = orderings
        .par_iter()
        .map(|perm| ordering_marginals(models, instance, perm))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = MarginalTable::zeros(instance.len(), models.num_labels());
    for t in &tables {
        for (m, v) in mean.data.iter_mut().zip(&t.data) {
            *m += v;
        }
    }
    let scale = 1.0 / tables.len() as f64;
    for m in &mut mean.data {
        *m *= scale;
    }
    mean.check_stochastic(1e-10)?;
    Ok(mean)
}

/// Averages the marginals of `num_orderings` random DAG orientations of the
/// link graph. Deterministic given `seed`, regardless of thread count.
pub fn averaged_marginals(
    models: &ModelSet,
    instance: &LinkInstance,
    num_orderings: usize,
    seed: u64,
) -> Result<MarginalTable> {
    if num_orderings == 0 {
        return Err(Error::Config("num_orderings must be at least 1".into()));
    }
    let orderings = sample_orderings(instance.len(), num_orderings, seed);
    mean_over_orderings(models, instance, &orderings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_chain, ParentGraph};
    use crate::model::PredicateVector;

    fn plain_instance(graph: ParentGraph) -> FeaturizedInstance {
        let n = graph.len();
        let bias = PredicateVector::indicators([0]);
        let edge_preds = (0..n).map(|k| vec![bias.clone(); graph.parents(k).len()]).collect();
        FeaturizedInstance::new(graph, vec![bias.clone(); n], vec![bias; n], edge_preds, None).unwrap()
    }

    #[test]
    fn single_node_uniform() {
        let models = ModelSet::zeros(&[EdgeClass::Local], 2, 1, 1).unwrap();
        let m = forward_marginals(&models, &plain_instance(build_chain(1).unwrap())).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn copy_kernel_propagates() {
        let mut models = ModelSet::zeros(&[EdgeClass::Local], 2, 1, 1).unwrap();
        let local = models.get_mut(EdgeClass::Local).unwrap();
        let i = local.pair_index(0, 2, 0);
        local.set_weight(i, 1.3);
        for y in 0..2 {
            let i = local.pair_index(0, y, y);
            local.set_weight(i, 60.0);
        }
        let m = forward_marginals(&models, &plain_instance(build_chain(2).unwrap())).unwrap();
        assert!((m.row(0)[0] - 1.0 / (1.0 + (-1.3f64).exp())).abs() < 1e-15);
        assert!(m.max_abs_diff(&MarginalTable::from_rows(&[m.row(0).to_vec(), m.row(0).to_vec()]).unwrap()) < 1e-20);
    }

    #[test]
    fn decode_ties_and_argmax() {
        let t = MarginalTable::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(posterior_decode(&t), vec![0, 0]);
        let t = MarginalTable::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap();
        assert_eq!(posterior_decode(&t), vec![1]);
    }

    #[test]
    fn viterbi_zero_weights_and_forced_path() {
        let mut models = ModelSet::zeros(&[EdgeClass::Local], 2, 1, 1).unwrap();
        let inst = plain_instance(build_chain(3).unwrap());
        assert_eq!(viterbi_chain(&models, &inst).unwrap(), vec![0, 0, 0]);
        let local = models.get_mut(EdgeClass::Local).unwrap();
        for (row, child) in [(2, 0), (0, 1), (1, 0)] {
            let i = local.pair_index(0, row, child);
            local.set_weight(i, 30.0);
        }
        assert_eq!(viterbi_chain(&models, &inst).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn viterbi_rejects_skip_graphs() {
        use crate::graph::Parent;
        let models = ModelSet::zeros(&[EdgeClass::Local, EdgeClass::Skip], 2, 1, 1).unwrap();
        let g = ParentGraph::from_parents(vec![
            vec![],
            vec![Parent::new(0, EdgeClass::Local)],
            vec![Parent::new(1, EdgeClass::Local), Parent::new(0, EdgeClass::Skip)],
        ])
        .unwrap();
        assert!(matches!(
            viterbi_chain(&models, &plain_instance(g)),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn missing_class_is_structural() {
        use crate::graph::Parent;
        let models = ModelSet::zeros(&[EdgeClass::Local], 2, 1, 1).unwrap();
        let g = ParentGraph::from_parents(vec![vec![], vec![Parent::new(0, EdgeClass::Skip)]]).unwrap();
        assert!(matches!(
            forward_marginals(&models, &plain_instance(g)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn orderings_are_seeded() {
        assert_eq!(sample_orderings(10, 3, 4), sample_orderings(10, 3, 4));
        assert_ne!(sample_orderings(10, 3, 4), sample_orderings(10, 3, 5));
        for p in sample_orderings(10, 3, 4) {
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
    }
}
