//! End-to-end training and prediction for both tasks, shared by the command
//! line tool and the tests.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::artifact::{ModelArtifact, TrainingMetadata, FORMAT_VERSION};
use crate::config::{Decode, RunConfig, Structure, Task};
use crate::corpus::{document_frequencies, Document, LinkCorpus, SequenceCorpus};
use crate::error::{Error, Result};
use crate::evaluation::{classification_error, RepairMode, ScoreAccumulator, ScoreReport, TagScheme};
use crate::features::{page_predicates, DocumentPredicates, FeaturizedInstance, LinkInstance, TemplateConfig, Vocabulary, BIAS};
use crate::graph::{build_chain, build_ner_skip_graph, ParentGraph, SkipParams};
use crate::inference::{averaged_marginals, forward_marginals, posterior_decode, sample_orderings, viterbi_chain, MarginalTable};
use crate::labels::LabelSet;
use crate::model::{EdgeClass, PredicateVector};
use crate::params::ModelSet;
use crate::training::{edge_examples, fit, fit_separate, link_edge_examples, EdgeExample, FitReport, ObjectiveConfig, ObjectiveKind};

/// A trained model together with the per-fit optimizer reports.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub artifact: ModelArtifact,
    pub reports: Vec<(String, FitReport)>,
}

impl TrainOutcome {
    /// One line per optimizer iteration.
    pub fn log_lines(&self) -> String {
        let mut out = String::new();
        for (name, r) in &self.reports {
            for it in &r.iterations {
                let _ = writeln!(
                    out,
                    "fit={name} iter={} objective={:.12e} grad_norm={:.6e} step={:.6e}",
                    it.iteration, it.objective, it.grad_norm, it.step
                );
            }
            let _ = writeln!(
                out,
                "fit={name} termination={} objective={:.12e} grad_norm={:.6e}",
                r.termination.as_str(),
                r.objective,
                r.grad_norm
            );
        }
        out
    }
}

fn sequence_classes(structure: Structure) -> Result<Vec<EdgeClass>> {
    match structure {
        Structure::Chain => Ok(vec![EdgeClass::Local]),
        Structure::Skip => Ok(vec![EdgeClass::Local, EdgeClass::Skip]),
        other => Err(Error::Config(format!("structure `{}` is not a sequence structure", other.as_str()))),
    }
}

fn link_classes(structure: Structure) -> Result<Vec<EdgeClass>> {
    match structure {
        Structure::Node => Ok(vec![EdgeClass::Local]),
        Structure::Link => Ok(vec![EdgeClass::Local, EdgeClass::Incoming, EdgeClass::Outgoing]),
        other => Err(Error::Config(format!("structure `{}` is not a link structure", other.as_str()))),
    }
}

/// Label set over the observed tags, sorted, with `O` first when present.
pub fn label_set_from<'a, I: IntoIterator<Item = &'a str>>(tags: I) -> Result<LabelSet> {
    let set: BTreeSet<&str> = tags.into_iter().collect();
    let mut names: Vec<&str> = set.iter().copied().filter(|&t| t != "O").collect();
    if set.contains("O") {
        names.insert(0, "O");
    }
    if names.is_empty() {
        return Err(Error::EmptyInstance("training data has no labels".into()));
    }
    LabelSet::new(names)
}

pub fn build_sequence_graph(
    structure: Structure,
    words: &[String],
    doc_freq: &HashMap<String, usize>,
    skip: SkipParams,
) -> Result<ParentGraph> {
    match structure {
        Structure::Chain => build_chain(words.len()),
        Structure::Skip => build_ner_skip_graph(words, doc_freq, skip),
        other => Err(Error::Config(format!("structure `{}` is not a sequence structure", other.as_str()))),
    }
}

/// Non-empty documents with their predicates and graphs.
struct PreparedDocs {
    /// Index into the corpus of each prepared document.
    index: Vec<usize>,
    predicates: Vec<DocumentPredicates>,
    graphs: Vec<ParentGraph>,
}

fn prepare_documents(
    documents: &[Document],
    templates: &TemplateConfig,
    structure: Structure,
    skip: SkipParams,
) -> Result<PreparedDocs> {
    let doc_freq = document_frequencies(documents);
    let index: Vec<usize> = (0..documents.len()).filter(|&i| documents[i].num_tokens() > 0).collect();
    let prepared = index
        .par_iter()
        .map(|&i| {
            let p = DocumentPredicates::extract(&documents[i].sentence_tokens(), templates);
            let g = build_sequence_graph(structure, &p.words, &doc_freq, skip)?;
            Ok((p, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let (predicates, graphs) = prepared.into_iter().unzip();
    Ok(PreparedDocs {
        index,
        predicates,
        graphs,
    })
}

fn fit_models(
    init: &ModelSet,
    examples: &[EdgeExample<'_>],
    instances: &[FeaturizedInstance],
    config: &RunConfig,
) -> Result<(ModelSet, Vec<(String, FitReport)>)> {
    let objective = config.training.objective;
    let mut reports = Vec::new();
    let separate_config = ObjectiveConfig {
        kind: ObjectiveKind::Conditional,
        ..objective
    };
    let needs_separate = objective.kind == ObjectiveKind::Conditional || config.training.init_from_separate;
    let mut models = init.clone();
    if needs_separate {
        let (fitted, rs) = fit_separate(init, examples, &separate_config)?;
        models = fitted;
        reports.extend(rs.into_iter().map(|(c, r)| (format!("separate-{c}"), r)));
    }
    if objective.kind == ObjectiveKind::Marginal {
        let (fitted, r) = fit(&models, instances, &objective)?;
        models = fitted;
        reports.push(("joint".to_string(), r));
    }
    Ok((models, reports))
}

fn metadata(config: &RunConfig, reports: &[(String, FitReport)], instances: usize, orderings: usize) -> TrainingMetadata {
    TrainingMetadata {
        objective: config.training.objective.kind,
        init_from_separate: config.training.init_from_separate,
        sigma2: config.training.objective.sigma2,
        seed: config.seed,
        iterations: reports.iter().map(|(_, r)| r.iterations.len()).sum(),
        terminations: reports
            .iter()
            .map(|(n, r)| format!("{n}:{}", r.termination.as_str()))
            .collect(),
        train_orderings: orderings,
        train_instances: instances,
    }
}

pub fn train_sequence(corpus: &SequenceCorpus, config: &RunConfig, templates: &TemplateConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.task != Task::Sequence {
        return Err(Error::Config("config task is not `sequence`".into()));
    }
    if !corpus.labeled {
        return Err(Error::format(0, "training data has no tag column"));
    }
    let structure = config.structure();
    let classes = sequence_classes(structure)?;
    let docs = &corpus.documents;
    let labels = label_set_from(docs.iter().flat_map(|d| d.tags()))?;
    let prepared = prepare_documents(docs, templates, structure, config.graph.skip_params())?;
    if prepared.index.is_empty() {
        return Err(Error::EmptyInstance("training corpus has no tokens".into()));
    }
    let tag = templates.tag_skip_endpoints;
    let node_vocab = Vocabulary::build(prepared.predicates.iter().flat_map(|p| p.node.iter().flatten()));
    let edge_strings: Vec<Vec<Vec<Vec<String>>>> = prepared
        .predicates
        .par_iter()
        .zip(&prepared.graphs)
        .map(|(p, g)| p.edge_strings(g, tag))
        .collect();
    let pair_vocab = Vocabulary::build(
        prepared
            .predicates
            .iter()
            .zip(&edge_strings)
            .flat_map(|(p, e)| p.local.iter().flatten().chain(e.iter().flatten().flatten())),
    );
    drop(edge_strings);
    let instances = prepared
        .index
        .par_iter()
        .zip(&prepared.predicates)
        .zip(&prepared.graphs)
        .map(|((&i, p), g)| {
            let gold = labels.encode(&docs[i].tags().collect::<Vec<_>>())?;
            p.featurize(g.clone(), &node_vocab, &pair_vocab, tag, Some(gold))
        })
        .collect::<Result<Vec<_>>>()?;
    let init = ModelSet::zeros(&classes, labels.len(), node_vocab.len(), pair_vocab.len())?;
    let examples = instances
        .iter()
        .map(edge_examples)
        .collect::<Result<Vec<_>>>()?
        .concat();
    log::info!(
        "training {} documents, {} labels, {} node / {} pair predicates, {} parameters",
        instances.len(),
        labels.len(),
        node_vocab.len(),
        pair_vocab.len(),
        init.num_params()
    );
    let (models, reports) = fit_models(&init, &examples, &instances, config)?;
    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        task: Task::Sequence,
        structure,
        labels,
        templates: templates.clone(),
        max_df: config.graph.max_df,
        skip_cap: config.graph.skip_cap,
        node_vocabulary: node_vocab.names().to_vec(),
        pair_vocabulary: pair_vocab.names().to_vec(),
        classes: ModelArtifact::tables_of(&models),
        metadata: metadata(config, &reports, instances.len(), 1),
    };
    Ok(TrainOutcome { artifact, reports })
}

/// Per-document predicted tags and marginal tables (empty for empty documents).
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePrediction {
    pub tags: Vec<Vec<String>>,
    pub marginals: Vec<MarginalTable>,
}

pub fn predict_sequence(artifact: &ModelArtifact, corpus: &SequenceCorpus, decode: Decode) -> Result<SequencePrediction> {
    if artifact.task != Task::Sequence {
        return Err(Error::Config("model was not trained on sequences".into()));
    }
    let models = artifact.models()?;
    let (node_vocab, pair_vocab) = artifact.vocabularies()?;
    let skip = SkipParams {
        max_df: artifact.max_df,
        recency_cap: artifact.skip_cap,
    };
    if decode == Decode::Viterbi && artifact.structure != Structure::Chain {
        return Err(Error::UnsupportedStructure(format!(
            "viterbi decoding needs a chain model; this model uses `{}` graphs",
            artifact.structure.as_str()
        )));
    }
    let docs = &corpus.documents;
    let prepared = prepare_documents(docs, &artifact.templates, artifact.structure, skip)?;
    let tag = artifact.templates.tag_skip_endpoints;
    let decoded = prepared
        .predicates
        .par_iter()
        .zip(&prepared.graphs)
        .map(|(p, g)| {
            let inst = p.featurize(g.clone(), &node_vocab, &pair_vocab, tag, None)?;
            let m = forward_marginals(&models, &inst)?;
            let labels = match decode {
                Decode::Posterior => posterior_decode(&m),
                Decode::Viterbi => viterbi_chain(&models, &inst)?,
            };
            Ok((labels, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let l = models.num_labels();
    let mut tags = vec![Vec::new(); docs.len()];
    let mut marginals = vec![MarginalTable::zeros(0, l); docs.len()];
    for (&i, (labels, m)) in prepared.index.iter().zip(decoded) {
        tags[i] = labels
            .iter()
            .map(|&y| artifact.labels.name(y).expect("decoded label in range").to_string())
            .collect();
        marginals[i] = m;
    }
    Ok(SequencePrediction { tags, marginals })
}

/// Link instance over all pages of a corpus.
pub fn link_instance(
    corpus: &LinkCorpus,
    node_vocab: &Vocabulary,
    pair_vocab: &Vocabulary,
    labels: Option<&LabelSet>,
) -> Result<LinkInstance> {
    let gold = match labels {
        Some(l) => Some(l.encode(&corpus.labels)?),
        None => None,
    };
    Ok(LinkInstance {
        links: corpus.links.clone(),
        node_preds: corpus
            .tokens
            .iter()
            .map(|t| node_vocab.vectorize(&page_predicates(t)))
            .collect(),
        link_preds: PredicateVector::indicators([pair_vocab.lookup(BIAS)]),
        gold,
    })
}

pub fn train_links(corpus: &LinkCorpus, config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.task != Task::LinkedDocs {
        return Err(Error::Config("config task is not `linked-docs`".into()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInstance("link corpus has no pages".into()));
    }
    let structure = config.structure();
    let classes = link_classes(structure)?;
    let labels = label_set_from(corpus.labels.iter().map(String::as_str))?;
    let page_preds: Vec<Vec<String>> = corpus.tokens.iter().map(|t| page_predicates(t)).collect();
    let node_vocab = Vocabulary::build(page_preds.iter().flatten());
    let pair_vocab = Vocabulary::build([BIAS]);
    let inst = link_instance(corpus, &node_vocab, &pair_vocab, Some(&labels))?;
    let examples: Vec<EdgeExample<'_>> = link_edge_examples(&inst)?
        .into_iter()
        .filter(|e| classes.contains(&e.class))
        .collect();
    let (instances, orderings) = match structure {
        Structure::Link if config.training.objective.kind == ObjectiveKind::Marginal => {
            let perms = sample_orderings(inst.len(), config.training.orderings, config.seed);
            (
                perms
                    .iter()
                    .map(|p| inst.featurize_ordering(p))
                    .collect::<Result<Vec<_>>>()?,
                perms.len(),
            )
        }
        Structure::Link => (Vec::new(), 0),
        _ => (vec![inst.featurize_unlinked()?], 0),
    };
    let init = ModelSet::zeros(&classes, labels.len(), node_vocab.len(), pair_vocab.len())?;
    let (models, reports) = fit_models(&init, &examples, &instances, config)?;
    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        task: Task::LinkedDocs,
        structure,
        labels,
        templates: TemplateConfig::default(),
        max_df: config.graph.max_df,
        skip_cap: config.graph.skip_cap,
        node_vocabulary: node_vocab.names().to_vec(),
        pair_vocabulary: pair_vocab.names().to_vec(),
        classes: ModelArtifact::tables_of(&models),
        metadata: metadata(config, &reports, instances.len().max(1), orderings),
    };
    Ok(TrainOutcome { artifact, reports })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkPrediction {
    pub labels: Vec<String>,
    /// Rows indexed by page.
    pub marginals: MarginalTable,
}

/// Node models classify pages independently; link models average the
/// marginals of `orderings` random orientations drawn from `seed`.
pub fn predict_links(
    artifact: &ModelArtifact,
    corpus: &LinkCorpus,
    orderings: usize,
    seed: u64,
    decode: Decode,
) -> Result<LinkPrediction> {
    if artifact.task != Task::LinkedDocs {
        return Err(Error::Config("model was not trained on linked documents".into()));
    }
    if decode == Decode::Viterbi && artifact.structure == Structure::Link {
        return Err(Error::UnsupportedStructure(
            "viterbi decoding is not available for link graphs".into(),
        ));
    }
    let models = artifact.models()?;
    let (node_vocab, pair_vocab) = artifact.vocabularies()?;
    let inst = link_instance(corpus, &node_vocab, &pair_vocab, None)?;
    if inst.is_empty() {
        return Err(Error::EmptyInstance("link corpus has no pages".into()));
    }
    let marginals = match artifact.structure {
        Structure::Link => averaged_marginals(&models, &inst, orderings, seed)?,
        _ => forward_marginals(&models, &inst.featurize_unlinked()?)?,
    };
    let labels = posterior_decode(&marginals)
        .into_iter()
        .map(|y| artifact.labels.name(y).expect("decoded label in range").to_string())
        .collect();
    Ok(LinkPrediction { labels, marginals })
}

/// Entity scores of predicted tags against a gold corpus with the same
/// token layout; spans never cross document boundaries.
pub fn score_sequences(gold: &SequenceCorpus, predicted: &SequenceCorpus, scheme: TagScheme, mode: RepairMode) -> Result<ScoreReport> {
    if !gold.labeled || !predicted.labeled {
        return Err(Error::format(0, "both files need a tag column"));
    }
    if gold.documents.len() != predicted.documents.len() {
        return Err(Error::format(
            0,
            format!(
                "gold has {} documents, predictions have {}",
                gold.documents.len(),
                predicted.documents.len()
            ),
        ));
    }
    let mut acc = ScoreAccumulator::new();
    for (i, (g, p)) in gold.documents.iter().zip(&predicted.documents).enumerate() {
        if !g.words().eq(p.words()) {
            return Err(Error::format(0, format!("document {} differs in its tokens", i + 1)));
        }
        let gt: Vec<&str> = g.tags().collect();
        let pt: Vec<&str> = p.tags().collect();
        acc.add_tagged(&gt, &pt, scheme, mode)?;
    }
    Ok(acc.finish())
}

/// Page classification error with predictions matched by page id.
pub fn score_pages(gold: &[(String, String)], predicted: &[(String, String)]) -> Result<f64> {
    let pred: HashMap<&str, &str> = predicted.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    let mut gl = Vec::with_capacity(gold.len());
    let mut pl = Vec::with_capacity(gold.len());
    for (id, label) in gold {
        let p = pred
            .get(id.as_str())
            .ok_or_else(|| Error::format(0, format!("no prediction for page `{id}`")))?;
        gl.push(label.as_str());
        pl.push(*p);
    }
    classification_error(&gl, &pl)
}

/// Tab-separated marginal rows: header with label names, then
/// `doc TAB position TAB word TAB p_1 ... p_L`.
pub fn format_sequence_marginals(labels: &LabelSet, corpus: &SequenceCorpus, marginals: &[MarginalTable]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "doc\tpos\tword\t{}", labels.names().join("\t"));
    for (d, (doc, m)) in corpus.documents.iter().zip(marginals).enumerate() {
        for (k, (w, row)) in doc.words().zip(m.rows()).enumerate() {
            let vals: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "{d}\t{k}\t{w}\t{}", vals.join("\t"));
        }
    }
    out
}

pub fn format_page_marginals(labels: &LabelSet, page_ids: &[String], marginals: &MarginalTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "page\t{}", labels.names().join("\t"));
    for (id, row) in page_ids.iter().zip(marginals.rows()) {
        let vals: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "{id}\t{}", vals.join("\t"));
    }
    out
}
