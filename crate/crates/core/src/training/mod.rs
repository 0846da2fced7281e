//! The conditional (L_C) and marginal (L_M) objectives with their gradients,
//! and the fitting loops built on them.

mod fit;
pub mod lbfgs;

pub use fit::{
    edge_examples, fit, fit_separate, link_edge_examples, EdgeExample, FitReport, ObjectiveConfig,
    ObjectiveKind, OptimizerConfig,
};

use crate::error::{Error, Result};
use crate::features::FeaturizedInstance;
use crate::inference::{check_instance, forward_sweep, MarginalTable, Sweep};
use crate::model::{softmax_in_place, EdgeClass, ParentLabel};
use crate::params::{GradientSink, ModelSet, SparseGradient};

/// `L_C = sum_k log sum_j alpha_kj p(y_k | y_j, x)` at the gold labels, with
/// its gradient. Parentless nodes score `p(y_k | START, x)` under the local
/// model.
///
/// A mixture probability of exactly zero yields `-inf` and a warning.
pub fn loglik_conditional(models: &ModelSet, instance: &FeaturizedInstance) -> Result<(f64, SparseGradient)> {
    let mut grad = SparseGradient::new();
    let value = conditional_into(models, instance, &mut grad)?;
    grad.compact();
    Ok((value, grad))
}

pub(crate) fn conditional_into<S: GradientSink + ?Sized>(
    models: &ModelSet,
    instance: &FeaturizedInstance,
    sink: &mut S,
) -> Result<f64> {
    check_instance(models, instance)?;
    let gold = instance.gold()?;
    let l = models.num_labels();
    let graph = &instance.graph;
    let mut value = 0.0;
    let mut weights = vec![0.0; l];
    for k in 0..instance.len() {
        let y = gold[k];
        let parents = graph.parents(k);
        if parents.is_empty() {
            let (local, offset) = models.lookup(EdgeClass::Local)?;
            let probs = local.start_conditional(&instance.node_preds[k], &instance.start_preds[k])?;
            value += probs[y].ln();
            weights.fill(0.0);
            weights[y] = 1.0 / probs[y];
            local.accumulate_weighted_grad(
                offset,
                &instance.node_preds[k],
                &instance.start_preds[k],
                l,
                &probs,
                &weights,
                sink,
            );
            continue;
        }
        let mut rows = Vec::with_capacity(parents.len());
        let mut mixture = 0.0;
        for ((p, &alpha), pair) in parents.iter().zip(graph.alphas(k)).zip(&instance.edge_preds[k]) {
            let (model, _) = models.lookup(p.class)?;
            let mut probs = model.scores(&instance.node_preds[k], pair, ParentLabel::Label(gold[p.index]))?;
            softmax_in_place(&mut probs)?;
            mixture += alpha * probs[y];
            rows.push(probs);
        }
        if mixture <= 0.0 {
            log::warn!("mixture probability of the gold label is zero at node {k}");
            value = f64::NEG_INFINITY;
            continue;
        }
        value += mixture.ln();
        for (((p, &alpha), pair), probs) in parents
            .iter()
            .zip(graph.alphas(k))
            .zip(&instance.edge_preds[k])
            .zip(&rows)
        {
            let (model, offset) = models.lookup(p.class)?;
            weights.fill(0.0);
            weights[y] = alpha / mixture;
            model.accumulate_weighted_grad(
                offset,
                &instance.node_preds[k],
                pair,
                gold[p.index],
                probs,
                &weights,
                sink,
            );
        }
    }
    Ok(value)
}

/// Weights `w_kj(y', y)` that turn the marginal-likelihood gradient into a
/// weighted sum of single-edge conditional gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientWeights {
    num_labels: usize,
    /// `rho_k(y)` for every node.
    pub rho: Vec<Vec<f64>>,
    /// Per parentless node, the START-edge weights `w(START, y) = rho_k(y)`.
    pub start: Vec<Option<Vec<f64>>>,
    /// Per node and parent slot, `[parent label][child label]` weights.
    pub edges: Vec<Vec<Vec<f64>>>,
}

impl GradientWeights {
    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// `w_kj(y', y)` for the edge at `slot` of node `k`.
    pub fn edge(&self, k: usize, slot: usize, parent_label: usize, child_label: usize) -> f64 {
        self.edges[k][slot][parent_label * self.num_labels + child_label]
    }
}

/// `gamma_k(y) = 1{y = gold_k} / p(gold_k | x)`.
pub fn marginal_gamma(marginals: &MarginalTable, gold: &[usize]) -> Result<Vec<Vec<f64>>> {
    gold.iter()
        .enumerate()
        .map(|(k, &g)| {
            let p = marginals.get(k, g);
            if p <= 0.0 || !p.is_finite() {
                return Err(Error::DegenerateGamma { node: k, prob: p });
            }
            let mut row = vec![0.0; marginals.num_labels()];
            row[g] = 1.0 / p;
            Ok(row)
        })
        .collect()
}

/// Gradient weights for the gold labels of `instance`, given marginals
/// from [`crate::inference::forward_marginals`].
pub fn compute_gradient_weights(
    models: &ModelSet,
    instance: &FeaturizedInstance,
    marginals: &MarginalTable,
) -> Result<GradientWeights> {
    let sweep = forward_sweep(models, instance)?;
    if sweep.marginals.len() != marginals.len() || sweep.marginals.num_labels() != marginals.num_labels() {
        return Err(Error::structural("marginal table does not match the instance"));
    }
    let gamma = marginal_gamma(marginals, instance.gold()?)?;
    Ok(weights_from_gamma(instance, &sweep.tables, marginals, &gamma))
}

/// Reverse sweep for `rho`, then `w_kj(y', y) = rho_k(y) alpha_kj p(y_j = y' | x)`.
pub(crate) fn weights_from_gamma(
    instance: &FeaturizedInstance,
    tables: &[Vec<Vec<f64>>],
    marginals: &MarginalTable,
    gamma: &[Vec<f64>],
) -> GradientWeights {
    let l = marginals.num_labels();
    let n = instance.len();
    let graph = &instance.graph;
    let children = graph.children();
    let mut rho = gamma.to_vec();
    for k in (0..n).rev() {
        for &(c, slot) in &children[k] {
            let alpha = graph.alphas(c)[slot];
            let table = &tables[c][slot];
            let (head, tail) = rho.split_at_mut(c);
            let rho_c = &tail[0];
            let rho_k = &mut head[k];
            for (y, r) in rho_k.iter_mut().enumerate() {
                let dot: f64 = table[y * l..(y + 1) * l].iter().zip(rho_c).map(|(t, rc)| t * rc).sum();
                *r += alpha * dot;
            }
        }
    }
    let mut start = Vec::with_capacity(n);
    let mut edges = Vec::with_capacity(n);
    for k in 0..n {
        let parents = graph.parents(k);
        start.push(parents.is_empty().then(|| rho[k].clone()));
        edges.push(
            parents
                .iter()
                .zip(graph.alphas(k))
                .map(|(p, &alpha)| {
                    let mut w = vec![0.0; l * l];
                    for (yp, &mp) in marginals.row(p.index).iter().enumerate() {
                        for (y, &r) in rho[k].iter().enumerate() {
                            w[yp * l + y] = r * alpha * mp;
                        }
                    }
                    w
                })
                .collect(),
        );
    }
    GradientWeights {
        num_labels: l,
        rho,
        start,
        edges,
    }
}

/// Second forward sweep: adds `sum w_kj(y', y) grad p(y | y', x)` over all
/// edges, touching only predicates active at each edge.
pub(crate) fn accumulate_weighted<S: GradientSink + ?Sized>(
    models: &ModelSet,
    instance: &FeaturizedInstance,
    sweep: &Sweep,
    weights: &GradientWeights,
    sink: &mut S,
) -> Result<()> {
    let l = models.num_labels();
    let graph = &instance.graph;
    for k in 0..instance.len() {
        if let (Some(probs), Some(w)) = (&sweep.start[k], &weights.start[k]) {
            let (local, offset) = models.lookup(EdgeClass::Local)?;
            local.accumulate_weighted_grad(
                offset,
                &instance.node_preds[k],
                &instance.start_preds[k],
                l,
                probs,
                w,
                sink,
            );
            continue;
        }
        for (slot, (p, pair)) in graph.parents(k).iter().zip(&instance.edge_preds[k]).enumerate() {
            let (model, offset) = models.lookup(p.class)?;
            model.accumulate_edge_grad(
                offset,
                &instance.node_preds[k],
                pair,
                &sweep.tables[k][slot],
                &weights.edges[k][slot],
                sink,
            );
        }
    }
    Ok(())
}

/// `L_M = sum_k log p(y_k = gold_k | x)` with its exact gradient.
pub fn loglik_marginal(models: &ModelSet, instance: &FeaturizedInstance) -> Result<(f64, SparseGradient)> {
    let mut grad = SparseGradient::new();
    let value = marginal_into(models, instance, &mut grad)?;
    grad.compact();
    Ok((value, grad))
}

pub(crate) fn marginal_into<S: GradientSink + ?Sized>(
    models: &ModelSet,
    instance: &FeaturizedInstance,
    sink: &mut S,
) -> Result<f64> {
    let sweep = forward_sweep(models, instance)?;
    let gold = instance.gold()?;
    let gamma = marginal_gamma(&sweep.marginals, gold)?;
    let value = gold
        .iter()
        .enumerate()
        .map(|(k, &g)| sweep.marginals.get(k, g).ln())
        .sum();
    let weights = weights_from_gamma(instance, &sweep.tables, &sweep.marginals, &gamma);
    accumulate_weighted(models, instance, &sweep, &weights, sink)?;
    Ok(value)
}

/// Gradient of `sum_k sum_y gamma_k(y) p(y_k = y | x)` for an arbitrary
/// `gamma`, through the same weight machinery as [`loglik_marginal`].
pub fn weighted_marginal_gradient(
    models: &ModelSet,
    instance: &FeaturizedInstance,
    gamma: &[Vec<f64>],
) -> Result<SparseGradient> {
    let sweep = forward_sweep(models, instance)?;
    if gamma.len() != instance.len() || gamma.iter().any(|g| g.len() != models.num_labels()) {
        return Err(Error::structural("gamma does not match the instance"));
    }
    let weights = weights_from_gamma(instance, &sweep.tables, &sweep.marginals, gamma);
    let mut grad = SparseGradient::new();
    accumulate_weighted(models, instance, &sweep, &weights, &mut grad)?;
    grad.compact();
    Ok(grad)
}
