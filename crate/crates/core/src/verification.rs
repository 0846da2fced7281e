//! The self-check suite behind `mopmemm verify`: every fast inference and
//! gradient routine is compared against its brute-force or finite-difference
//! counterpart on seeded random cases. Reports contain no timings, so two runs
//! with the same seed print identical text.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artifact::{ModelArtifact, TrainingMetadata, FORMAT_VERSION};
use crate::config::{RunConfig, Structure, Task};
use crate::error::{Error, Result};
use crate::features::{LinkInstance, TemplateConfig};
use crate::graph::{build_link_dag, LinkGraph, ParentGraph};
use crate::inference::{averaged_marginals, forward_marginals, viterbi_chain};
use crate::labels::LabelSet;
use crate::model::{EdgeClass, PredicateVector};
use crate::oracle::synthetic::{generate_synthetic, SyntheticConfig};
use crate::oracle::{
    brute_force_map, brute_force_marginals, classical_chain_marginals, finite_difference_gradient,
    naive_marginal_gradient, random_case, RandomCaseSpec,
};
use crate::params::ModelSet;
use crate::training::{loglik_conditional, loglik_marginal, ObjectiveKind};

pub const MARGINAL_TOL: f64 = 1e-10;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
/// Magnitude below which gradient coordinates are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-6;
pub const SPARSE_TOL: f64 = 1e-10;
pub const CHAIN_TOL: f64 = 1e-12;
pub const CONCAVITY_TOL: f64 = 1e-9;
/// Largest |Y|^n for which Viterbi is compared against enumeration.
pub const VITERBI_ENUMERATION_LIMIT: usize = 729;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => CheckResult::new(name, passed, detail),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "verify seed={}", self.seed);
        for c in &self.checks {
            let _ = writeln!(out, "{}", c.line());
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(
            out,
            "summary: {} checks, {} failed, status={}",
            self.checks.len(),
            failed,
            if failed == 0 { "pass" } else { "fail" }
        );
        out
    }
}

/// Sizes of the suite; the defaults are the full suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteSizes {
    pub marginal_cases: usize,
    pub gradient_models: usize,
    pub sparse_cases: usize,
    pub chain_cases: usize,
    pub concavity_segments: usize,
    pub dag_permutations: usize,
    pub dag_pages: usize,
    pub averaging_orderings: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            marginal_cases: 200,
            gradient_models: 20,
            sparse_cases: 200,
            chain_cases: 200,
            concavity_segments: 20,
            dag_permutations: 1000,
            dag_pages: 300,
            averaging_orderings: 50,
        }
    }
}

fn sub_seed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run_suite(seed: u64, sizes: &SuiteSizes) -> VerifyReport {
    let checks = vec![
        check_forward_marginals(seed, sizes.marginal_cases),
        check_gradient(seed, sizes.gradient_models, ObjectiveKind::Conditional),
        check_gradient(seed, sizes.gradient_models, ObjectiveKind::Marginal),
        check_sparse_gradient(seed, sizes.sparse_cases),
        check_chain_marginals(seed, sizes.chain_cases),
        check_viterbi(seed, sizes.chain_cases),
        check_concavity(seed, sizes.concavity_segments),
        check_link_dags(seed, sizes.dag_pages, sizes.dag_permutations),
        check_ordering_average(seed, sizes.dag_pages, sizes.averaging_orderings),
        check_defaults(),
        check_synthetic(seed),
        check_artifact_round_trip(seed),
    ];
    VerifyReport { seed, checks }
}

/// Exact marginals on random skip graphs against enumeration.
pub fn check_forward_marginals(seed: u64, cases: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = sub_seed(seed, 1);
        let mut worst = 0.0f64;
        for case in 0..cases {
            let spec = RandomCaseSpec {
                random_alphas: case % 2 == 1,
                ..Default::default()
            };
            let (models, inst) = random_case(&mut rng, &spec)?;
            let fast = forward_marginals(&models, &inst)?;
            let slow = brute_force_marginals(&models, &inst)?;
            worst = worst.max(fast.max_abs_diff(&slow));
        }
        Ok((
            worst <= MARGINAL_TOL,
            format!("{cases} cases, max |diff| = {worst:.3e} (tolerance {MARGINAL_TOL:e})"),
        ))
    };
    CheckResult::from_result("forward marginals vs enumeration", run())
}

/// Worst relative error of the analytic gradient against central differences
/// on every coordinate, over `models` random cases.
pub fn gradient_fd_error(seed: u64, models: usize, kind: ObjectiveKind) -> Result<(f64, usize)> {
    let stream = match kind {
        ObjectiveKind::Conditional => 2,
        ObjectiveKind::Marginal => 3,
    };
    let mut rng = sub_seed(seed, stream);
    let mut worst = 0.0f64;
    let mut probed = 0;
    for case in 0..models {
        let spec = RandomCaseSpec {
            random_alphas: case % 2 == 1,
            ..Default::default()
        };
        let (set, inst) = random_case(&mut rng, &spec)?;
        let eval = |theta: &[f64]| {
            let m = set.with_weights(theta)?;
            match kind {
                ObjectiveKind::Conditional => loglik_conditional(&m, &inst),
                ObjectiveKind::Marginal => loglik_marginal(&m, &inst),
            }
        };
        let theta = set.weights().into_inner();
        let (_, grad) = eval(&theta)?;
        let coords: Vec<usize> = (0..theta.len()).collect();
        let fd = finite_difference_gradient(|t| eval(t).map(|r| r.0), &theta, FD_STEP, &coords)?;
        for (&i, &f) in coords.iter().zip(&fd) {
            let a = grad.get(i);
            let scale = a.abs().max(f.abs()).max(GRADIENT_FLOOR);
            worst = worst.max((a - f).abs() / scale);
        }
        probed += coords.len();
    }
    Ok((worst, probed))
}

pub fn check_gradient(seed: u64, models: usize, kind: ObjectiveKind) -> CheckResult {
    let name = match kind {
        ObjectiveKind::Conditional => "conditional objective gradient vs finite differences",
        ObjectiveKind::Marginal => "marginal objective gradient vs finite differences",
    };
    CheckResult::from_result(
        name,
        gradient_fd_error(seed, models, kind).map(|(worst, probed)| {
            (
                worst <= GRADIENT_REL_TOL,
                format!(
                    "{models} models, {probed} coordinates, max relative error = {worst:.3e} (tolerance {GRADIENT_REL_TOL:e}, h = {FD_STEP:e})"
                ),
            )
        }),
    )
}

/// Largest difference between the weight-based marginal gradient and the
/// dense forward-mode expansion, values included.
pub fn sparse_gradient_error(seed: u64, cases: usize) -> Result<f64> {
    let mut rng = sub_seed(seed, 4);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let spec = RandomCaseSpec {
            random_alphas: case % 3 == 0,
            ..Default::default()
        };
        let (models, inst) = random_case(&mut rng, &spec)?;
        let (v, sparse) = loglik_marginal(&models, &inst)?;
        let (nv, naive) = naive_marginal_gradient(&models, &inst)?;
        worst = worst.max((v - nv).abs());
        for (i, b) in naive.iter().enumerate() {
            worst = worst.max((sparse.get(i) - b).abs());
        }
    }
    Ok(worst)
}

pub fn check_sparse_gradient(seed: u64, cases: usize) -> CheckResult {
    CheckResult::from_result(
        "sparse marginal gradient vs naive expansion",
        sparse_gradient_error(seed, cases).map(|worst| {
            (
                worst <= SPARSE_TOL,
                format!("{cases} cases, max |diff| = {worst:.3e} (tolerance {SPARSE_TOL:e})"),
            )
        }),
    )
}

fn chain_spec() -> RandomCaseSpec {
    RandomCaseSpec {
        max_skips: 0,
        max_nodes: 7,
        max_labels: 4,
        weight_scale: 3.0,
        ..Default::default()
    }
}

pub fn check_chain_marginals(seed: u64, cases: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = sub_seed(seed, 5);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (models, inst) = random_case(&mut rng, &chain_spec())?;
            let fast = forward_marginals(&models, &inst)?;
            let classical = classical_chain_marginals(&models, &inst)?;
            worst = worst.max(fast.max_abs_diff(&classical));
        }
        Ok((
            worst <= CHAIN_TOL,
            format!("{cases} chains, max |diff| = {worst:.3e} (tolerance {CHAIN_TOL:e})"),
        ))
    };
    CheckResult::from_result("chain marginals vs classical recursion", run())
}

pub fn check_viterbi(seed: u64, cases: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = sub_seed(seed, 6);
        let mut compared = 0;
        let mut mismatches = 0;
        for _ in 0..cases {
            let (models, inst) = random_case(&mut rng, &chain_spec())?;
            let l = models.num_labels();
            if l.checked_pow(inst.len() as u32).is_none_or(|s| s > VITERBI_ENUMERATION_LIMIT) {
                continue;
            }
            compared += 1;
            if viterbi_chain(&models, &inst)? != brute_force_map(&models, &inst)? {
                mismatches += 1;
            }
        }
        Ok((
            mismatches == 0 && compared > 0,
            format!("{compared} chains with |Y|^n <= {VITERBI_ENUMERATION_LIMIT}, {mismatches} mismatches"),
        ))
    };
    CheckResult::from_result("viterbi vs enumerated argmax", run())
}

/// Largest chord-above-function gap along a segment, probed at nine
/// interior points.
pub fn chord_violation(f: &dyn Fn(&[f64]) -> Result<f64>, a: &[f64], b: &[f64]) -> Result<f64> {
    let (fa, fb) = (f(a)?, f(b)?);
    let mut worst = f64::NEG_INFINITY;
    for i in 1..10 {
        let t = i as f64 / 10.0;
        let x: Vec<f64> = a.iter().zip(b).map(|(u, v)| (1.0 - t) * u + t * v).collect();
        worst = worst.max((1.0 - t) * fa + t * fb - f(&x)?);
    }
    Ok(worst)
}

/// Concavity of the conditional objective on single-parent (chain) graphs,
/// where each term is a log-softmax of a linear function.
pub fn concavity_violation(seed: u64, segments: usize) -> Result<f64> {
    let mut rng = sub_seed(seed, 7);
    let spec = RandomCaseSpec {
        max_skips: 0,
        ..Default::default()
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..segments {
        let (models, inst) = random_case(&mut rng, &spec)?;
        let f = |t: &[f64]| Ok(loglik_conditional(&models.with_weights(t)?, &inst)?.0);
        let a: Vec<f64> = (0..models.num_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..models.num_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        worst = worst.max(chord_violation(&f, &a, &b)?);
    }
    Ok(worst)
}

pub fn check_concavity(seed: u64, segments: usize) -> CheckResult {
    CheckResult::from_result(
        "conditional objective concavity on chains",
        concavity_violation(seed, segments).map(|worst| {
            (
                worst <= CONCAVITY_TOL,
                format!("{segments} segments, max chord violation = {worst:.3e} (tolerance {CONCAVITY_TOL:e})"),
            )
        }),
    )
}

/// Random directed link graph with about `degree` outgoing arcs per page.
pub fn random_link_graph<R: Rng>(rng: &mut R, pages: usize, degree: usize) -> Result<LinkGraph> {
    let mut g = LinkGraph::new(pages);
    if pages < 2 {
        return Ok(g);
    }
    for u in 0..pages {
        for _ in 0..degree {
            let v = rng.gen_range(0..pages - 1);
            let v = if v >= u { v + 1 } else { v };
            g.add_arc(u, v)?;
        }
    }
    Ok(g)
}

/// Kahn's algorithm over the graph's edges, independent of the parent-index
/// ordering the graph is built with.
pub fn is_acyclic(graph: &ParentGraph) -> bool {
    let n = graph.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (j, k, _) in graph.edges() {
        indegree[k] += 1;
        children[j].push(k);
    }
    let mut ready: Vec<usize> = (0..n).filter(|&k| indegree[k] == 0).collect();
    let mut seen = 0;
    while let Some(j) = ready.pop() {
        seen += 1;
        for &k in &children[j] {
            indegree[k] -= 1;
            if indegree[k] == 0 {
                ready.push(k);
            }
        }
    }
    seen == n
}

pub fn check_link_dags(seed: u64, pages: usize, permutations: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = sub_seed(seed, 8);
        let links = random_link_graph(&mut rng, pages, 3)?;
        let mut cyclic = 0;
        let mut miscounted = 0;
        let expected_edges = links.num_arcs();
        for _ in 0..permutations {
            let mut perm: Vec<usize> = (0..pages).collect();
            perm.shuffle(&mut rng);
            let dag = build_link_dag(&links, &perm)?;
            if !is_acyclic(&dag) {
                cyclic += 1;
            }
            if dag.num_edges() != expected_edges {
                miscounted += 1;
            }
        }
        Ok((
            cyclic == 0 && miscounted == 0,
            format!(
                "{permutations} permutations of {pages} pages / {} arcs, {cyclic} cyclic, {miscounted} with wrong edge count",
                links.num_arcs()
            ),
        ))
    };
    CheckResult::from_result("link DAG orientations are acyclic", run())
}

/// Random link-classification model and instance for averaging checks.
pub fn random_link_problem(seed: u64, pages: usize) -> Result<(ModelSet, LinkInstance)> {
    let mut rng = sub_seed(seed, 9);
    let links = random_link_graph(&mut rng, pages, 3)?;
    let num_preds = 40;
    let node_preds = (0..pages)
        .map(|_| {
            let mut ids: Vec<u32> = vec![0];
            ids.extend((1..num_preds as u32).filter(|_| rng.gen_bool(0.1)));
            PredicateVector::indicators(ids)
        })
        .collect();
    let inst = LinkInstance {
        links,
        node_preds,
        link_preds: PredicateVector::indicators([0]),
        gold: None,
    };
    let mut models = ModelSet::zeros(&[EdgeClass::Local, EdgeClass::Incoming, EdgeClass::Outgoing], 4, num_preds, 1)?;
    let theta: Vec<f64> = (0..models.num_params()).map(|_| rng.gen_range(-1.5..1.5)).collect();
    models.set_weights(&theta)?;
    Ok((models, inst))
}

pub fn check_ordering_average(seed: u64, pages: usize, orderings: usize) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let (models, inst) = random_link_problem(seed, pages)?;
        let a = averaged_marginals(&models, &inst, orderings, seed)?;
        let b = averaged_marginals(&models, &inst, orderings, seed)?;
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| averaged_marginals(&models, &inst, orderings, seed))?;
        let bits = |t: &crate::inference::MarginalTable| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let same = bits(&a) == bits(&b) && bits(&a) == bits(&single);
        let checksum: f64 = a.as_slice().iter().enumerate().map(|(i, v)| v * (i % 7 + 1) as f64).sum();
        Ok((
            same,
            format!("{orderings} orderings over {pages} pages, bit-identical across runs and thread counts = {same}, checksum = {checksum:.15e}"),
        ))
    };
    CheckResult::from_result("ordering-averaged marginals are reproducible", run())
}

pub fn check_defaults() -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let c = RunConfig::from_toml("task = \"linked-docs\"")?;
        let s = RunConfig::from_toml("")?;
        let ok = c.prediction.orderings == 50
            && c.training.orderings == 10
            && c.structure() == Structure::Link
            && s.graph.max_df == 100
            && s.graph.skip_cap == 5
            && s.structure() == Structure::Skip;
        Ok((
            ok,
            format!(
                "prediction orderings = {}, training orderings = {}, max_df = {}, skip_cap = {}",
                c.prediction.orderings, c.training.orderings, s.graph.max_df, s.graph.skip_cap
            ),
        ))
    };
    CheckResult::from_result("configuration defaults", run())
}

pub fn check_synthetic(seed: u64) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let config = SyntheticConfig {
            num_sequences: 50,
            seed,
            ..Default::default()
        };
        let a = generate_synthetic(&config)?.to_conll()?;
        let b = generate_synthetic(&config)?.to_conll()?;
        Ok((a == b, format!("50 sequences, identical output = {}, {} bytes", a == b, a.len())))
    };
    CheckResult::from_result("synthetic generator is deterministic", run())
}

pub fn check_artifact_round_trip(seed: u64) -> CheckResult {
    let run = || -> Result<(bool, String)> {
        let mut rng = sub_seed(seed, 10);
        let (models, _) = random_case(&mut rng, &RandomCaseSpec::default())?;
        let first = models.models()[0].clone();
        let artifact = ModelArtifact {
            format_version: FORMAT_VERSION,
            task: Task::Sequence,
            structure: Structure::Skip,
            labels: LabelSet::new((0..models.num_labels()).map(|i| format!("L{i}")))?,
            templates: TemplateConfig::default(),
            max_df: 100,
            skip_cap: 5,
            node_vocabulary: (0..first.num_node_preds()).map(|i| format!("n{i}")).collect(),
            pair_vocabulary: (0..first.num_pair_preds()).map(|i| format!("p{i}")).collect(),
            classes: ModelArtifact::tables_of(&models),
            metadata: TrainingMetadata {
                objective: ObjectiveKind::Marginal,
                init_from_separate: true,
                sigma2: 10.0,
                seed,
                iterations: 0,
                terminations: Vec::new(),
                train_orderings: 1,
                train_instances: 1,
            },
        };
        let text = artifact.to_json()?;
        let again = ModelArtifact::from_json(&text)?.to_json()?;
        Ok((text == again, format!("{} bytes, identical after reload = {}", text.len(), text == again)))
    };
    CheckResult::from_result("model file round trip", run())
}
