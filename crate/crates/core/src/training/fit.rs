use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{maximize, IterationLog, LbfgsSettings, Termination};
use super::{conditional_into, marginal_into};
use crate::error::{Error, Result};
use crate::features::{FeaturizedInstance, LinkInstance};
use crate::labels::LabelId;
use crate::model::{softmax_in_place, EdgeClass, EdgeClassModel, ParentLabel, PredicateVector};
use crate::params::{ModelSet, SparseGradient};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Sum of log mixture conditionals at gold labels and gold parents.
    #[default]
    Conditional,
    /// Sum of log posterior marginals at gold labels.
    Marginal,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(ObjectiveKind::Conditional),
            "marginal" => Ok(ObjectiveKind::Marginal),
            other => Err(Error::Config(format!(
                "unknown objective `{other}` (expected conditional or marginal)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 100,
            tolerance: 1e-4,
            history: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Gaussian prior variance; the penalty is `|theta|^2 / (2 sigma2)`.
    pub sigma2: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            kind: ObjectiveKind::Conditional,
            sigma2: 10.0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.optimizer.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.optimizer.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.optimizer.history == 0 {
            return Err(Error::Config("history must be at least 1".into()));
        }
        Ok(())
    }

    fn settings(&self) -> LbfgsSettings {
        LbfgsSettings {
            max_iterations: self.optimizer.max_iterations,
            tolerance: self.optimizer.tolerance,
            history: self.optimizer.history,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub termination: Termination,
    /// Penalized objective at the returned weights.
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: Vec<IterationLog>,
}

fn penalize(theta: &[f64], sigma2: f64, value: &mut f64, grad: &mut [f64]) {
    let mut sq = 0.0;
    for (g, t) in grad.iter_mut().zip(theta) {
        sq += t * t;
        *g -= t / sigma2;
    }
    *value -= sq / (2.0 * sigma2);
}

/// Errors that only mean the trial point is numerically unusable; the line
/// search treats them as a non-finite objective.
fn is_soft(e: &Error) -> bool {
    matches!(e, Error::Numeric(_) | Error::DegenerateGamma { .. })
}

fn run(
    template: &ModelSet,
    init: Vec<f64>,
    config: &ObjectiveConfig,
    objective: impl Fn(&ModelSet) -> Result<(f64, Vec<f64>)>,
) -> Result<(ModelSet, FitReport)> {
    config.validate()?;
    let mut scratch = template.clone();
    let eval = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        scratch.set_weights(theta)?;
        match objective(&scratch) {
            Ok((mut v, mut g)) => {
                penalize(theta, config.sigma2, &mut v, &mut g);
                Ok((v, g))
            }
            Err(e) if is_soft(&e) => Ok((f64::NEG_INFINITY, vec![0.0; theta.len()])),
            Err(e) => Err(e),
        }
    };
    let (theta, outcome) = maximize(eval, init, &config.settings())?;
    let models = template.with_weights(&theta)?;
    Ok((
        models,
        FitReport {
            termination: outcome.termination,
            objective: outcome.objective,
            grad_norm: outcome.grad_norm,
            iterations: outcome.history,
        },
    ))
}

/// Unpenalized objective summed over instances, with a dense gradient.
/// Instances are evaluated in parallel and reduced in index order.
pub(crate) fn dataset_objective(
    models: &ModelSet,
    data: &[FeaturizedInstance],
    kind: ObjectiveKind,
) -> Result<(f64, Vec<f64>)> {
    let parts = data
        .par_iter()
        .map(|inst| {
            let mut g = SparseGradient::new();
            let v = match kind {
                ObjectiveKind::Conditional => conditional_into(models, inst, &mut g)?,
                ObjectiveKind::Marginal => marginal_into(models, inst, &mut g)?,
            };
            Ok((v, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; models.num_params()];
    for (v, g) in parts {
        value += v;
        g.add_to_dense(&mut grad);
    }
    Ok((value, grad))
}

/// Maximizes the penalized objective over all classes at once, starting from
/// the weights of `init`.
pub fn fit(init: &ModelSet, data: &[FeaturizedInstance], config: &ObjectiveConfig) -> Result<(ModelSet, FitReport)> {
    if data.is_empty() {
        return Err(Error::EmptyInstance("training set is empty".into()));
    }
    run(init, init.weights().into_inner(), config, |m| {
        dataset_objective(m, data, config.kind)
    })
}

/// One single-parent training example for one edge class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeExample<'a> {
    pub class: EdgeClass,
    pub parent: ParentLabel,
    pub node_preds: &'a PredicateVector,
    pub pair_preds: &'a PredicateVector,
    pub label: LabelId,
}

/// Gold-parent examples of every edge of a labeled instance; parentless
/// nodes give START examples for the local class.
pub fn edge_examples(instance: &FeaturizedInstance) -> Result<Vec<EdgeExample<'_>>> {
    let gold = instance.gold()?;
    let mut out = Vec::with_capacity(instance.graph.num_edges() + 1);
    for k in 0..instance.len() {
        let parents = instance.graph.parents(k);
        if parents.is_empty() {
            out.push(EdgeExample {
                class: EdgeClass::Local,
                parent: ParentLabel::Start,
                node_preds: &instance.node_preds[k],
                pair_preds: &instance.start_preds[k],
                label: gold[k],
            });
        }
        for (p, pair) in parents.iter().zip(&instance.edge_preds[k]) {
            out.push(EdgeExample {
                class: p.class,
                parent: ParentLabel::Label(gold[p.index]),
                node_preds: &instance.node_preds[k],
                pair_preds: pair,
                label: gold[k],
            });
        }
    }
    Ok(out)
}

/// Examples for separately trained link models: every page gives a START
/// example for the local (node-only) class, and every arc `u -> v` gives an
/// incoming example (parent `u`, child `v`) and an outgoing example (parent
/// `v`, child `u`).
pub fn link_edge_examples(instance: &LinkInstance) -> Result<Vec<EdgeExample<'_>>> {
    let gold = instance
        .gold
        .as_deref()
        .ok_or_else(|| Error::structural("link instance has no gold labels"))?;
    let mut out = Vec::with_capacity(instance.len() + 2 * instance.links.num_arcs());
    for (p, node) in instance.node_preds.iter().enumerate() {
        out.push(EdgeExample {
            class: EdgeClass::Local,
            parent: ParentLabel::Start,
            node_preds: node,
            pair_preds: &instance.link_preds,
            label: gold[p],
        });
    }
    for (u, v) in instance.links.arcs() {
        out.push(EdgeExample {
            class: EdgeClass::Incoming,
            parent: ParentLabel::Label(gold[u]),
            node_preds: &instance.node_preds[v],
            pair_preds: &instance.link_preds,
            label: gold[v],
        });
        out.push(EdgeExample {
            class: EdgeClass::Outgoing,
            parent: ParentLabel::Label(gold[v]),
            node_preds: &instance.node_preds[u],
            pair_preds: &instance.link_preds,
            label: gold[u],
        });
    }
    Ok(out)
}

/// `sum log p(label | parent, x)` over examples, gradient in the model's
/// local index space.
pub(crate) fn examples_objective(model: &EdgeClassModel, examples: &[&EdgeExample<'_>]) -> Result<(f64, Vec<f64>)> {
    let l = model.num_labels();
    let parts = examples
        .par_chunks(256)
        .map(|chunk| {
            let mut g = SparseGradient::new();
            let mut value = 0.0;
            let mut weights = vec![0.0; l];
            for ex in chunk {
                let row = model.parent_row(ex.parent)?;
                let mut probs = model.scores(ex.node_preds, ex.pair_preds, ex.parent)?;
                softmax_in_place(&mut probs)?;
                value += probs[ex.label].ln();
                weights.fill(0.0);
                weights[ex.label] = 1.0 / probs[ex.label];
                model.accumulate_weighted_grad(0, ex.node_preds, ex.pair_preds, row, &probs, &weights, &mut g);
            }
            Ok((value, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; model.num_params()];
    for (v, g) in parts {
        value += v;
        g.add_to_dense(&mut grad);
    }
    Ok((value, grad))
}

/// Separate training: each edge class is fitted by the conditional objective
/// on its own pooled examples. Classes without examples keep their weights.
pub fn fit_separate(
    init: &ModelSet,
    examples: &[EdgeExample<'_>],
    config: &ObjectiveConfig,
) -> Result<(ModelSet, Vec<(EdgeClass, FitReport)>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyInstance("no training examples".into()));
    }
    if let Some(ex) = examples.iter().find(|e| init.get(e.class).is_none()) {
        return Err(Error::structural(format!("no model for edge class `{}`", ex.class)));
    }
    let mut theta = init.weights().into_inner();
    let mut reports = Vec::new();
    for class in init.classes().collect::<Vec<_>>() {
        let pooled: Vec<&EdgeExample<'_>> = examples.iter().filter(|e| e.class == class).collect();
        if pooled.is_empty() {
            continue;
        }
        let range = init.range(class).expect("class present");
        let single = ModelSet::new(vec![relabel(init.get(class).expect("class present"))])?;
        log::info!("fitting `{class}` on {} examples", pooled.len());
        let (fitted, report) = run(&single, theta[range.clone()].to_vec(), config, |m| {
            examples_objective(&m.models()[0], &pooled)
        })?;
        theta[range].copy_from_slice(&fitted.weights());
        reports.push((class, report));
    }
    Ok((init.with_weights(&theta)?, reports))
}

/// A copy of `model` filed under the local class, so it can stand alone in a
/// [`ModelSet`].
fn relabel(model: &EdgeClassModel) -> EdgeClassModel {
    EdgeClassModel::from_weights(
        EdgeClass::Local,
        model.num_labels(),
        model.num_node_preds(),
        model.num_pair_preds(),
        model.node_weights().to_vec(),
        model.pair_weights().to_vec(),
    )
    .expect("same shape")
}
