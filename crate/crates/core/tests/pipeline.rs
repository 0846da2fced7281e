use mopmemm::config::{Decode, RunConfig, Structure, Task};
use mopmemm::corpus::{format_sequence_corpus, parse_link_corpus, parse_sequence_corpus, LinkCorpus, SequenceCorpus};
use mopmemm::evaluation::{RepairMode, TagScheme};
use mopmemm::features::TemplateConfig;
use mopmemm::oracle::synthetic::{generate_synthetic, SyntheticConfig};
use mopmemm::pipeline::{
    predict_links, predict_sequence, score_pages, score_sequences, train_links, train_sequence,
};
use mopmemm::training::ObjectiveKind;
use mopmemm::Error;

fn synthetic(n: usize, seed: u64) -> SequenceCorpus {
    let data = generate_synthetic(&SyntheticConfig {
        num_sequences: n,
        seed,
        ..Default::default()
    })
    .unwrap();
    parse_sequence_corpus(&data.to_conll().unwrap()).unwrap()
}

fn sequence_config(structure: Structure, kind: ObjectiveKind) -> RunConfig {
    let mut c = RunConfig::default();
    c.graph.structure = Some(structure);
    c.training.objective.kind = kind;
    c.training.objective.optimizer.max_iterations = 30;
    c
}

#[test]
fn sequence_training_is_deterministic() {
    let corpus = synthetic(30, 1);
    let config = sequence_config(Structure::Skip, ObjectiveKind::Marginal);
    let a = train_sequence(&corpus, &config, &TemplateConfig::default()).unwrap();
    let b = train_sequence(&corpus, &config, &TemplateConfig::default()).unwrap();
    assert_eq!(a.artifact.to_json().unwrap(), b.artifact.to_json().unwrap());
    assert_eq!(a.log_lines(), b.log_lines());
    let names: Vec<&str> = a.reports.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["separate-local", "separate-skip", "joint"]);
}

#[test]
fn trained_chain_model_fits_its_training_data() {
    let corpus = synthetic(40, 2);
    let config = sequence_config(Structure::Chain, ObjectiveKind::Conditional);
    let out = train_sequence(&corpus, &config, &TemplateConfig::default()).unwrap();
    let posterior = predict_sequence(&out.artifact, &corpus, Decode::Posterior).unwrap();
    let viterbi = predict_sequence(&out.artifact, &corpus, Decode::Viterbi).unwrap();
    for pred in [&posterior, &viterbi] {
        let text = format_sequence_corpus(&corpus.documents, &pred.tags).unwrap();
        let report = score_sequences(
            &corpus,
            &parse_sequence_corpus(&text).unwrap(),
            TagScheme::Bio2,
            RepairMode::Lenient,
        )
        .unwrap();
        assert!(report.token_accuracy.unwrap() > 0.8, "{report:?}");
    }
    for m in &posterior.marginals {
        m.check_stochastic(1e-9).unwrap();
    }
}

#[test]
fn viterbi_is_refused_for_skip_models() {
    let corpus = synthetic(10, 3);
    let config = sequence_config(Structure::Skip, ObjectiveKind::Conditional);
    let out = train_sequence(&corpus, &config, &TemplateConfig::default()).unwrap();
    assert!(matches!(
        predict_sequence(&out.artifact, &corpus, Decode::Viterbi),
        Err(Error::UnsupportedStructure(_))
    ));
}

#[test]
fn unlabeled_prediction_input_and_empty_documents() {
    let train = synthetic(10, 4);
    let config = sequence_config(Structure::Skip, ObjectiveKind::Conditional);
    let out = train_sequence(&train, &config, &TemplateConfig::default()).unwrap();
    let input = parse_sequence_corpus("-DOCSTART-\n\n-DOCSTART-\n\nAlpha\nw1\nAlpha\n").unwrap();
    assert!(!input.labeled);
    let pred = predict_sequence(&out.artifact, &input, Decode::Posterior).unwrap();
    assert_eq!(pred.tags.len(), input.documents.len());
    assert_eq!(pred.tags.last().unwrap().len(), 3);
}

#[test]
fn training_requires_tags() {
    let corpus = parse_sequence_corpus("Alpha\nw1\n").unwrap();
    let config = sequence_config(Structure::Chain, ObjectiveKind::Conditional);
    assert!(train_sequence(&corpus, &config, &TemplateConfig::default()).is_err());
}

#[test]
fn scoring_rejects_mismatched_files() {
    let a = parse_sequence_corpus("A B-PER\nb O\n").unwrap();
    let b = parse_sequence_corpus("A B-PER\nc O\n").unwrap();
    assert!(score_sequences(&a, &b, TagScheme::Bio2, RepairMode::Lenient).is_err());
    let report = score_sequences(&a, &a, TagScheme::Bio2, RepairMode::Lenient).unwrap();
    assert_eq!(report.f1, 1.0);
}

fn link_corpus() -> LinkCorpus {
    let mut pages = String::new();
    let mut edges = String::new();
    for i in 0..24 {
        let (label, words) = match i % 3 {
            0 => ("course", "syllabus exam lecture"),
            1 => ("faculty", "professor research office"),
            _ => ("student", "student hobbies resume"),
        };
        let extra = if i % 4 == 0 { " welcome" } else { "" };
        pages.push_str(&format!("p{i}\t{label}\t{words}{extra}\n"));
        edges.push_str(&format!("p{i}\tp{}\n", (i + 1) % 24));
        if i % 3 == 2 {
            edges.push_str(&format!("p{i}\tp{}\n", i - 1));
        }
    }
    parse_link_corpus(&pages, &edges).unwrap()
}

fn link_config(structure: Structure, kind: ObjectiveKind) -> RunConfig {
    let mut c = RunConfig {
        task: Task::LinkedDocs,
        ..Default::default()
    };
    c.graph.structure = Some(structure);
    c.training.objective.kind = kind;
    c.training.orderings = 3;
    c.training.objective.optimizer.max_iterations = 30;
    c
}

#[test]
fn link_models_train_and_predict_reproducibly() {
    let corpus = link_corpus();
    let gold: Vec<(String, String)> = corpus
        .page_ids
        .iter()
        .cloned()
        .zip(corpus.labels.iter().cloned())
        .collect();
    for (structure, kind) in [
        (Structure::Node, ObjectiveKind::Conditional),
        (Structure::Link, ObjectiveKind::Conditional),
        (Structure::Link, ObjectiveKind::Marginal),
    ] {
        let config = link_config(structure, kind);
        let a = train_links(&corpus, &config).unwrap();
        let b = train_links(&corpus, &config).unwrap();
        assert_eq!(a.artifact.to_json().unwrap(), b.artifact.to_json().unwrap());
        let p1 = predict_links(&a.artifact, &corpus, 7, 5, Decode::Posterior).unwrap();
        let p2 = predict_links(&a.artifact, &corpus, 7, 5, Decode::Posterior).unwrap();
        assert_eq!(p1, p2);
        p1.marginals.check_stochastic(1e-9).unwrap();
        let predicted: Vec<(String, String)> = corpus.page_ids.iter().cloned().zip(p1.labels).collect();
        assert!(score_pages(&gold, &predicted).unwrap() < 0.2, "{structure:?} {kind:?}");
    }
}

#[test]
fn link_training_metadata() {
    let corpus = link_corpus();
    let out = train_links(&corpus, &link_config(Structure::Link, ObjectiveKind::Marginal)).unwrap();
    assert_eq!(out.artifact.metadata.train_orderings, 3);
    assert_eq!(out.artifact.metadata.train_instances, 3);
    assert_eq!(out.artifact.classes.len(), 3);
    let node = train_links(&corpus, &link_config(Structure::Node, ObjectiveKind::Conditional)).unwrap();
    assert_eq!(node.artifact.classes.len(), 1);
}

#[test]
fn tasks_are_checked() {
    let corpus = link_corpus();
    let sequence_model = train_sequence(
        &synthetic(5, 6),
        &sequence_config(Structure::Chain, ObjectiveKind::Conditional),
        &TemplateConfig::default(),
    )
    .unwrap();
    assert!(predict_links(&sequence_model.artifact, &corpus, 3, 0, Decode::Posterior).is_err());
    assert!(train_links(&corpus, &sequence_config(Structure::Chain, ObjectiveKind::Conditional)).is_err());
}

#[test]
fn missing_prediction_is_reported() {
    let gold = vec![("a".to_string(), "x".to_string()), ("b".to_string(), "y".to_string())];
    let pred = vec![("a".to_string(), "x".to_string())];
    assert!(score_pages(&gold, &pred).is_err());
}
