//! Reference implementations used to check the fast code: enumeration over
//! all label sequences, an independently coded chain MEMM, forward-mode
//! (dense) marginal gradients, finite differences, and random test cases.

pub mod synthetic;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeaturizedInstance;
use crate::graph::{Parent, ParentGraph};
use crate::inference::MarginalTable;
use crate::labels::LabelId;
use crate::model::{EdgeClass, EdgeClassModel, ParentLabel, PredicateVector};
use crate::params::ModelSet;

/// Largest number of label sequences [`brute_force_marginals`] will enumerate.
pub const ENUMERATION_CAP: f64 = 1e7;

fn model_for(models: &ModelSet, class: EdgeClass) -> Result<&EdgeClassModel> {
    models
        .get(class)
        .ok_or_else(|| Error::Structural(format!("no model for edge class `{class}`")))
}

/// `p(. | parent, x)` computed straight from the weight tables with a
/// log-sum-exp normalizer.
pub fn naive_conditional(
    model: &EdgeClassModel,
    node_preds: &PredicateVector,
    pair_preds: &PredicateVector,
    parent: ParentLabel,
) -> Vec<f64> {
    let l = model.num_labels();
    let row = match parent {
        ParentLabel::Start => l,
        ParentLabel::Label(y) => y,
    };
    let scores: Vec<f64> = (0..l)
        .map(|y| {
            let mut s = 0.0;
            for (p, v) in node_preds.iter() {
                if (p as usize) < model.num_node_preds() {
                    s += v * model.weight(model.node_index(p, y));
                }
            }
            for (p, v) in pair_preds.iter() {
                if (p as usize) < model.num_pair_preds() {
                    s += v * model.weight(model.pair_index(p, row, y));
                }
            }
            s
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| (s - log_z).exp()).collect()
}

/// Dense `d p(y | parent, x) / d theta` (global indices) for one edge.
fn naive_conditional_grad(
    models: &ModelSet,
    class: EdgeClass,
    node_preds: &PredicateVector,
    pair_preds: &PredicateVector,
    parent: ParentLabel,
    y: LabelId,
    scale: f64,
    out: &mut [f64],
) -> Result<()> {
    let model = model_for(models, class)?;
    let offset = models.offset(class).expect("class present");
    let p = naive_conditional(model, node_preds, pair_preds, parent);
    let row = match parent {
        ParentLabel::Start => model.num_labels(),
        ParentLabel::Label(v) => v,
    };
    for c in 0..model.num_labels() {
        let d = scale * p[y] * (if c == y { 1.0 } else { 0.0 } - p[c]);
        for (pred, v) in node_preds.iter() {
            if (pred as usize) < model.num_node_preds() {
                out[offset + model.node_index(pred, c)] += v * d;
            }
        }
        for (pred, v) in pair_preds.iter() {
            if (pred as usize) < model.num_pair_preds() {
                out[offset + model.pair_index(pred, row, c)] += v * d;
            }
        }
    }
    Ok(())
}

/// Naive per-edge conditional tables: `tables[k][slot][y' * L + y]`, and the
/// START row for parentless nodes.
struct NaiveTables {
    start: Vec<Vec<f64>>,
    edges: Vec<Vec<Vec<f64>>>,
}

fn naive_tables(models: &ModelSet, instance: &FeaturizedInstance) -> Result<NaiveTables> {
    let l = models.num_labels();
    let graph = &instance.graph;
    let local = model_for(models, EdgeClass::Local)?;
    let mut start = Vec::new();
    let mut edges = Vec::new();
    for k in 0..instance.len() {
        start.push(naive_conditional(
            local,
            &instance.node_preds[k],
            &instance.start_preds[k],
            ParentLabel::Start,
        ));
        let mut per_slot = Vec::new();
        for (p, pair) in graph.parents(k).iter().zip(&instance.edge_preds[k]) {
            let model = model_for(models, p.class)?;
            let mut t = Vec::with_capacity(l * l);
            for yp in 0..l {
                t.extend(naive_conditional(model, &instance.node_preds[k], pair, ParentLabel::Label(yp)));
            }
            per_slot.push(t);
        }
        edges.push(per_slot);
    }
    Ok(NaiveTables { start, edges })
}

fn check_size(l: usize, n: usize) -> Result<()> {
    let count = (l as f64).powi(n as i32);
    if count > ENUMERATION_CAP {
        return Err(Error::TooLarge {
            sequences: count,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Calls `visit(labels, joint probability)` for every label sequence.
fn enumerate(models: &ModelSet, instance: &FeaturizedInstance, mut visit: impl FnMut(&[LabelId], f64)) -> Result<()> {
    let l = models.num_labels();
    let n = instance.len();
    check_size(l, n)?;
    let tables = naive_tables(models, instance)?;
    let graph = &instance.graph;
    let mut labels = vec![0; n];
    loop {
        let mut joint = 1.0;
        for k in 0..n {
            let parents = graph.parents(k);
            let y = labels[k];
            let factor = if parents.is_empty() {
                tables.start[k][y]
            } else {
                parents
                    .iter()
                    .zip(graph.alphas(k))
                    .zip(&tables.edges[k])
                    .map(|((p, a), t)| a * t[labels[p.index] * l + y])
                    .sum()
            };
            joint *= factor;
        }
        visit(&labels, joint);
        // Odometer increment, last position fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < l {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Node marginals by summing the factorized joint over all `|Y|^n` label
/// sequences. Refuses instances above [`ENUMERATION_CAP`] sequences.
pub fn brute_force_marginals(models: &ModelSet, instance: &FeaturizedInstance) -> Result<MarginalTable> {
    let mut table = MarginalTable::zeros(instance.len(), models.num_labels());
    enumerate(models, instance, |labels, p| {
        for (k, &y) in labels.iter().enumerate() {
            table.row_mut(k)[y] += p;
        }
    })?;
    Ok(table)
}

/// Sum of the joint over every sequence; 1 up to rounding.
pub fn brute_force_total(models: &ModelSet, instance: &FeaturizedInstance) -> Result<f64> {
    let mut total = 0.0;
    enumerate(models, instance, |_, p| total += p)?;
    Ok(total)
}

/// Most probable joint sequence; the first in enumeration order wins ties.
pub fn brute_force_map(models: &ModelSet, instance: &FeaturizedInstance) -> Result<Vec<LabelId>> {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    enumerate(models, instance, |labels, p| {
        if p > best.0 {
            best = (p, labels.to_vec());
        }
    })?;
    Ok(best.1)
}

/// The local parent of node `k`, if any.
fn local_parent(graph: &ParentGraph, k: usize) -> Option<(usize, &Parent)> {
    graph.parents(k).iter().enumerate().find(|(_, p)| p.class == EdgeClass::Local)
}

/// Classical first-order MEMM forward recursion using only local edges:
/// `a_k = a_{k-1} M_k`, with START rows where there is no local parent.
pub fn classical_chain_marginals(models: &ModelSet, instance: &FeaturizedInstance) -> Result<MarginalTable> {
    let l = models.num_labels();
    let local = model_for(models, EdgeClass::Local)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(instance.len());
    for k in 0..instance.len() {
        let row = match local_parent(&instance.graph, k) {
            None => naive_conditional(local, &instance.node_preds[k], &instance.start_preds[k], ParentLabel::Start),
            Some((slot, p)) => {
                let prev = &rows[p.index];
                let mut a = vec![0.0; l];
                for (yp, &mp) in prev.iter().enumerate() {
                    let t = naive_conditional(
                        local,
                        &instance.node_preds[k],
                        &instance.edge_preds[k][slot],
                        ParentLabel::Label(yp),
                    );
                    for y in 0..l {
                        a[y] += mp * t[y];
                    }
                }
                a
            }
        };
        rows.push(row);
    }
    MarginalTable::from_rows(&rows)
}

/// Standard MEMM conditional log-likelihood over local edges only, with a
/// dense gradient: `sum_k log p(y_k | y_{k-1}, x)`.
pub fn chain_memm_objective(models: &ModelSet, instance: &FeaturizedInstance) -> Result<(f64, Vec<f64>)> {
    let gold = instance.gold()?;
    let local = model_for(models, EdgeClass::Local)?;
    let mut grad = vec![0.0; models.num_params()];
    let mut value = 0.0;
    for k in 0..instance.len() {
        let (parent, pair) = match local_parent(&instance.graph, k) {
            None => (ParentLabel::Start, &instance.start_preds[k]),
            Some((slot, p)) => (ParentLabel::Label(gold[p.index]), &instance.edge_preds[k][slot]),
        };
        let p = naive_conditional(local, &instance.node_preds[k], pair, parent);
        value += p[gold[k]].ln();
        naive_conditional_grad(
            models,
            EdgeClass::Local,
            &instance.node_preds[k],
            pair,
            parent,
            gold[k],
            1.0 / p[gold[k]],
            &mut grad,
        )?;
    }
    Ok((value, grad))
}

/// Gradient of `sum_k log p(y_k = gold_k | x)` by forward-mode propagation
/// of dense marginal derivatives `v_k(y) = d p(y_k = y | x) / d theta`.
///
/// Cost and memory are proportional to `n * |Y| * num_params`.
pub fn naive_marginal_gradient(models: &ModelSet, instance: &FeaturizedInstance) -> Result<(f64, Vec<f64>)> {
    let gold = instance.gold()?;
    let l = models.num_labels();
    let n = instance.len();
    let dim = models.num_params();
    let graph = &instance.graph;
    let tables = naive_tables(models, instance)?;
    let mut marg: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deriv: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for k in 0..n {
        let parents = graph.parents(k);
        let mut m = vec![0.0; l];
        let mut v = vec![vec![0.0; dim]; l];
        if parents.is_empty() {
            m.copy_from_slice(&tables.start[k]);
            for (y, vy) in v.iter_mut().enumerate() {
                naive_conditional_grad(
                    models,
                    EdgeClass::Local,
                    &instance.node_preds[k],
                    &instance.start_preds[k],
                    ParentLabel::Start,
                    y,
                    1.0,
                    vy,
                )?;
            }
        }
        for (slot, ((p, &alpha), pair)) in parents
            .iter()
            .zip(graph.alphas(k))
            .zip(&instance.edge_preds[k])
            .enumerate()
        {
            let t = &tables.edges[k][slot];
            for yp in 0..l {
                let mp = marg[p.index][yp];
                for y in 0..l {
                    let tv = t[yp * l + y];
                    m[y] += alpha * tv * mp;
                    naive_conditional_grad(
                        models,
                        p.class,
                        &instance.node_preds[k],
                        pair,
                        ParentLabel::Label(yp),
                        y,
                        alpha * mp,
                        &mut v[y],
                    )?;
                    let coef = alpha * tv;
                    for (a, b) in v[y].iter_mut().zip(&deriv[p.index][yp]) {
                        *a += coef * b;
                    }
                }
            }
        }
        marg.push(m);
        deriv.push(v);
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for k in 0..n {
        let p = marg[k][gold[k]];
        value += p.ln();
        for (g, d) in grad.iter_mut().zip(&deriv[k][gold[k]]) {
            *g += d / p;
        }
    }
    Ok((value, grad))
}

/// Central differences `(f(theta + h e_i) - f(theta - h e_i)) / 2h` for each
/// coordinate in `coords`, in the same order.
pub fn finite_difference_gradient<F>(mut f: F, theta: &[f64], h: f64, coords: &[usize]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut x = theta.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(&x)?;
            x[i] = orig - h;
            let minus = f(&x)?;
            x[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("non-finite objective probing coordinate {i}")));
            }
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `|a - b| <= rel * max(|a|, |b|, floor)`.
pub fn relative_close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}

/// Shape of a random oracle-scale case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomCaseSpec {
    pub max_nodes: usize,
    pub max_labels: usize,
    pub max_skips: usize,
    pub num_node_preds: usize,
    pub num_pair_preds: usize,
    pub weight_scale: f64,
    /// Draw non-uniform mixing weights instead of uniform ones.
    pub random_alphas: bool,
    /// Probability that a node other than the first has no local parent.
    pub restart_rate: f64,
    /// Probability that each non-bias node predicate fires.
    pub node_density: f64,
}

impl Default for RandomCaseSpec {
    fn default() -> Self {
        RandomCaseSpec {
            max_nodes: 8,
            max_labels: 4,
            max_skips: 3,
            num_node_preds: 5,
            num_pair_preds: 3,
            weight_scale: 2.0,
            random_alphas: false,
            restart_rate: 0.1,
            node_density: 0.5,
        }
    }
}

fn random_preds<R: Rng>(rng: &mut R, count: usize, density: f64) -> PredicateVector {
    let mut entries = vec![(0, 1.0)];
    for p in 1..count as u32 {
        if rng.gen_bool(density) {
            let v = if rng.gen_bool(0.8) { 1.0 } else { rng.gen_range(0.25..2.0) };
            entries.push((p, v));
        }
    }
    PredicateVector::from_entries(entries)
}

/// Random graph of chain plus skip edges, random features, random weights
/// and random gold labels.
pub fn random_case<R: Rng>(rng: &mut R, spec: &RandomCaseSpec) -> Result<(ModelSet, FeaturizedInstance)> {
    let n = rng.gen_range(1..=spec.max_nodes);
    let l = rng.gen_range(2..=spec.max_labels.max(2));
    let skips = rng.gen_range(0..=spec.max_skips);
    random_case_with(rng, spec, n, l, skips)
}

/// As [`random_case`] with a fixed size, label count and number of skip
/// edges (fewer if the graph has no room for them).
pub fn random_case_with<R: Rng>(
    rng: &mut R,
    spec: &RandomCaseSpec,
    n: usize,
    l: usize,
    skips: usize,
) -> Result<(ModelSet, FeaturizedInstance)> {
    let mut parents: Vec<Vec<Parent>> = (0..n)
        .map(|k| {
            if k > 0 && !rng.gen_bool(spec.restart_rate) {
                vec![Parent::new(k - 1, EdgeClass::Local)]
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut placed = 0;
    let mut attempts = 0;
    while placed < skips && n >= 3 && attempts < 100 * skips.max(1) {
        attempts += 1;
        let k = rng.gen_range(2..n);
        let j = rng.gen_range(0..k - 1);
        if parents[k].iter().any(|p| p.index == j) {
            continue;
        }
        parents[k].push(Parent::new(j, EdgeClass::Skip));
        placed += 1;
    }
    let mut graph = ParentGraph::from_parents(parents)?;
    if spec.random_alphas {
        let alphas = (0..n)
            .map(|k| {
                let raw: Vec<f64> = (0..graph.parents(k).len()).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|a| a / total).collect()
            })
            .collect();
        graph = graph.with_alphas(alphas)?;
    }
    let mut models = ModelSet::zeros(&[EdgeClass::Local, EdgeClass::Skip], l, spec.num_node_preds, spec.num_pair_preds)?;
    let theta: Vec<f64> = (0..models.num_params())
        .map(|_| rng.gen_range(-spec.weight_scale..spec.weight_scale))
        .collect();
    models.set_weights(&theta)?;
    let node_preds = (0..n).map(|_| random_preds(rng, spec.num_node_preds, spec.node_density)).collect();
    let start_preds = (0..n).map(|_| random_preds(rng, spec.num_pair_preds, 0.5)).collect();
    let edge_preds = (0..n)
        .map(|k| (0..graph.parents(k).len()).map(|_| random_preds(rng, spec.num_pair_preds, 0.5)).collect())
        .collect();
    let gold = (0..n).map(|_| rng.gen_range(0..l)).collect();
    let instance = FeaturizedInstance::new(graph, node_preds, start_preds, edge_preds, Some(gold))?;
    Ok((models, instance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enumeration_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (models, inst) = random_case(&mut rng, &RandomCaseSpec::default()).unwrap();
            let total = brute_force_total(&models, &inst).unwrap();
            assert!((total - 1.0).abs() < 1e-10, "{total}");
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = RandomCaseSpec::default();
        let (models, inst) = random_case_with(&mut rng, &spec, 24, 2, 0).unwrap();
        assert!(matches!(brute_force_marginals(&models, &inst), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let c = [1.5, -2.0, 0.25];
        let g = finite_difference_gradient(|_| Ok(3.0), &[0.0; 3], 1e-6, &[0, 1, 2]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let lin = |x: &[f64]| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum());
        let g = finite_difference_gradient(lin, &[0.3, 0.1, -4.0], 1e-6, &[0, 1, 2]).unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(finite_difference_gradient(|_| Ok(f64::NAN), &[0.0], 1e-6, &[0]).is_err());
        assert!(finite_difference_gradient(|_| Ok(0.0), &[0.0], 0.0, &[0]).is_err());
    }

    #[test]
    fn naive_conditional_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (models, inst) = random_case(&mut rng, &RandomCaseSpec::default()).unwrap();
        let local = models.get(EdgeClass::Local).unwrap();
        let p = naive_conditional(local, &inst.node_preds[0], &inst.start_preds[0], ParentLabel::Start);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
