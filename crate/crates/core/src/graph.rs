//! Parent DAGs and the builders for chains, NER skip chains and hyperlink orderings.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::model::EdgeClass;

/// One incoming edge of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Parent {
    pub index: usize,
    pub class: EdgeClass,
}

impl Parent {
    pub fn new(index: usize, class: EdgeClass) -> Self {
        Parent { index, class }
    }
}

/// Per-node parent lists with mixing weights. Every parent precedes its
/// child, so index order is a topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentGraph {
    parents: Vec<Vec<Parent>>,
    alphas: Vec<Vec<f64>>,
}

impl ParentGraph {
    /// `n` nodes with uniform mixing weights over the given parents.
    pub fn from_parents(parents: Vec<Vec<Parent>>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::EmptyInstance("graph needs at least one node".into()));
        }
        for (k, ps) in parents.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for p in ps {
                if p.index >= k {
                    return Err(Error::structural(format!(
                        "parent {} of node {k} does not precede it",
                        p.index
                    )));
                }
                if !seen.insert(*p) {
                    return Err(Error::structural(format!(
                        "duplicate parent ({}, {}) at node {k}",
                        p.index, p.class
                    )));
                }
            }
        }
        let alphas = parents.iter().map(|ps| uniform(ps.len())).collect();
        Ok(ParentGraph { parents, alphas })
    }

    /// A graph of `n` parentless nodes.
    pub fn unconnected(n: usize) -> Result<Self> {
        Self::from_parents(vec![Vec::new(); n])
    }

    /// Replaces the mixing weights; each row must be a probability vector
    /// aligned with the parent list.
    pub fn with_alphas(mut self, alphas: Vec<Vec<f64>>) -> Result<Self> {
        if alphas.len() != self.parents.len() {
            return Err(Error::structural("alpha rows do not match node count"));
        }
        for (k, (a, ps)) in alphas.iter().zip(&self.parents).enumerate() {
            if a.len() != ps.len() {
                return Err(Error::structural(format!(
                    "node {k} has {} parents but {} mixing weights",
                    ps.len(),
                    a.len()
                )));
            }
            if a.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::structural(format!("negative mixing weight at node {k}")));
            }
            if !a.is_empty() && (a.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::structural(format!(
                    "mixing weights at node {k} do not sum to 1"
                )));
            }
        }
        self.alphas = alphas;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self, k: usize) -> &[Parent] {
        &self.parents[k]
    }

    pub fn alphas(&self, k: usize) -> &[f64] {
        &self.alphas[k]
    }

    pub fn num_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// `(parent, child, class)` for every edge, children in increasing order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeClass)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(k, ps)| ps.iter().map(move |p| (p.index, k, p.class)))
    }

    /// Every node has either no parent or exactly its predecessor through a
    /// local edge.
    pub fn is_chain(&self) -> bool {
        self.parents.iter().enumerate().all(|(k, ps)| match ps.as_slice() {
            [] => true,
            [p] => p.index + 1 == k && p.class == EdgeClass::Local,
            _ => false,
        })
    }

    /// Children lists, used by reverse sweeps: `(child, position in the
    /// child's parent list)`.
    pub(crate) fn children(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.len()];
        for (k, ps) in self.parents.iter().enumerate() {
            for (slot, p) in ps.iter().enumerate() {
                out[p.index].push((k, slot));
            }
        }
        out
    }
}

fn uniform(p: usize) -> Vec<f64> {
    vec![1.0 / p as f64; p]
}

/// Sets `alpha_kj = 1 / |parents(k)|` everywhere.
pub fn uniform_alphas(graph: ParentGraph) -> ParentGraph {
    let alphas = graph.parents.iter().map(|ps| uniform(ps.len())).collect();
    ParentGraph {
        parents: graph.parents,
        alphas,
    }
}

/// First-order chain: node `k > 0` has the single local parent `k - 1`.
pub fn build_chain(n: usize) -> Result<ParentGraph> {
    if n == 0 {
        return Err(Error::EmptyInstance("cannot build a chain of zero nodes".into()));
    }
    ParentGraph::from_parents(
        (0..n)
            .map(|k| {
                if k == 0 {
                    Vec::new()
                } else {
                    vec![Parent::new(k - 1, EdgeClass::Local)]
                }
            })
            .collect(),
    )
}

/// Skip-edge construction parameters for NER documents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkipParams {
    /// Words found in more than this many documents get no skip edges.
    pub max_df: usize,
    /// Only the `recency_cap` most recent earlier occurrences are connected.
    pub recency_cap: usize,
}

impl Default for SkipParams {
    fn default() -> Self {
        SkipParams {
            max_df: 100,
            recency_cap: 5,
        }
    }
}

/// First character is an uppercase letter.
pub fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Chain plus skip edges between identical capitalized words of one document.
pub fn build_ner_skip_graph<S: AsRef<str>>(
    words: &[S],
    doc_freq: &HashMap<String, usize>,
    params: SkipParams,
) -> Result<ParentGraph> {
    build_ner_skip_graph_with(words, doc_freq, params, is_capitalized)
}

/// As [`build_ner_skip_graph`] with a custom capitalization predicate.
///
/// Node `k` gets a skip parent `j` for each of the `recency_cap` latest
/// earlier occurrences of the same surface form with `j <= k - 2`; the
/// adjacent position is already covered by the local edge. Words missing
/// from `doc_freq` count as frequency zero.
pub fn build_ner_skip_graph_with<S, F>(
    words: &[S],
    doc_freq: &HashMap<String, usize>,
    params: SkipParams,
    capitalized: F,
) -> Result<ParentGraph>
where
    S: AsRef<str>,
    F: Fn(&str) -> bool,
{
    if params.recency_cap == 0 {
        return Err(Error::Config("skip recency cap must be at least 1".into()));
    }
    let n = words.len();
    if n == 0 {
        return Err(Error::EmptyInstance("document has no tokens".into()));
    }
    let mut occurrences: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut parents = Vec::with_capacity(n);
    for (k, w) in words.iter().enumerate() {
        let w = w.as_ref();
        let mut ps = Vec::new();
        if k > 0 {
            ps.push(Parent::new(k - 1, EdgeClass::Local));
        }
        let eligible =
            capitalized(w) && doc_freq.get(w).copied().unwrap_or(0) <= params.max_df;
        if eligible {
            let seen = occurrences.entry(w).or_default();
            let earlier: Vec<usize> = seen.iter().copied().filter(|&j| j + 2 <= k).collect();
            let from = earlier.len().saturating_sub(params.recency_cap);
            ps.extend(earlier[from..].iter().map(|&j| Parent::new(j, EdgeClass::Skip)));
            seen.push(k);
        }
        parents.push(ps);
    }
    ParentGraph::from_parents(parents)
}

/// Directed hyperlink graph over pages `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkGraph {
    num_pages: usize,
    arcs: BTreeSet<(usize, usize)>,
}

impl LinkGraph {
    pub fn new(num_pages: usize) -> Self {
        LinkGraph {
            num_pages,
            arcs: BTreeSet::new(),
        }
    }

    /// Adds `source -> target`. Returns `false` when the arc already existed.
    pub fn add_arc(&mut self, source: usize, target: usize) -> Result<bool> {
        if source >= self.num_pages || target >= self.num_pages {
            return Err(Error::structural(format!(
                "arc {source}->{target} outside {} pages",
                self.num_pages
            )));
        }
        if source == target {
            return Err(Error::structural(format!("self-loop on page {source}")));
        }
        Ok(self.arcs.insert((source, target)))
    }

    pub fn num_pages(&self) -> usize {
        self.num_pages
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.arcs.iter().copied()
    }
}

/// Orients every hyperlink from the earlier to the later page of
/// `permutation` (where `permutation[i]` is the page placed at position `i`).
/// A link that already points forward uses the incoming model, one pointing
/// backward the outgoing model. Node indices of the result are positions.
pub fn build_link_dag(links: &LinkGraph, permutation: &[usize]) -> Result<ParentGraph> {
    let n = links.num_pages();
    if permutation.len() != n {
        return Err(Error::structural(format!(
            "permutation has {} entries for {n} pages",
            permutation.len()
        )));
    }
    let mut position = vec![usize::MAX; n];
    for (i, &page) in permutation.iter().enumerate() {
        if page >= n || position[page] != usize::MAX {
            return Err(Error::structural("ordering is not a permutation of the pages"));
        }
        position[page] = i;
    }
    let mut parents = vec![Vec::new(); n];
    for (u, v) in links.arcs() {
        let (pu, pv) = (position[u], position[v]);
        if pu < pv {
            parents[pv].push(Parent::new(pu, EdgeClass::Incoming));
        } else {
            parents[pu].push(Parent::new(pv, EdgeClass::Outgoing));
        }
    }
    for ps in &mut parents {
        ps.sort();
    }
    ParentGraph::from_parents(parents)
}
