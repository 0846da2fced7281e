//! Corpus formats.
//!
//! Sequence corpora use the CoNLL column layout: whitespace-separated
//! columns with the word first and the entity tag last, blank lines between
//! sentences, and `-DOCSTART-` lines between documents. Link corpora are two
//! TSV files: `page-id TAB label TAB space-joined tokens` and
//! `source-id TAB target-id`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::evaluation::Tag;
use crate::graph::LinkGraph;

pub const DOCSTART: &str = "-DOCSTART-";

/// A token with any extra columns between the word and the tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub word: String,
    pub columns: Vec<String>,
}

impl Token {
    pub fn new(word: impl Into<String>) -> Self {
        Token {
            word: word.into(),
            columns: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Empty for unlabeled input.
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.word.as_str()))
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tags.iter().map(String::as_str))
    }

    pub fn sentence_tokens(&self) -> Vec<Vec<Token>> {
        self.sentences.iter().map(|s| s.tokens.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SequenceCorpus {
    pub documents: Vec<Document>,
    pub labeled: bool,
    pub warnings: Vec<String>,
}

impl SequenceCorpus {
    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn num_tokens(&self) -> usize {
        self.documents.iter().map(Document::num_tokens).sum()
    }

    /// Number of documents each word occurs in.
    pub fn document_frequencies(&self) -> HashMap<String, usize> {
        document_frequencies(&self.documents)
    }
}

pub fn document_frequencies(documents: &[Document]) -> HashMap<String, usize> {
    let mut df: HashMap<String, usize> = HashMap::new();
    for d in documents {
        let mut words: Vec<&str> = d.words().collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            *df.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    df
}

pub fn read_sequence_corpus(path: impl AsRef<Path>) -> Result<SequenceCorpus> {
    let text = std::fs::read_to_string(path)?;
    parse_sequence_corpus(&text)
}

/// Parses CoNLL columns. A file with a single column is treated as unlabeled.
pub fn parse_sequence_corpus(text: &str) -> Result<SequenceCorpus> {
    let mut corpus = SequenceCorpus::default();
    let mut width: Option<usize> = None;
    let mut doc = Document::default();
    let mut sent = Sentence::default();

    fn close_sentence(doc: &mut Document, sent: &mut Sentence) {
        if !sent.tokens.is_empty() {
            doc.sentences.push(std::mem::take(sent));
        }
    }
    fn close_document(corpus: &mut SequenceCorpus, doc: &mut Document) {
        if !doc.sentences.is_empty() {
            corpus.documents.push(std::mem::take(doc));
        }
    }

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            close_sentence(&mut doc, &mut sent);
            continue;
        }
        if cols[0] == DOCSTART {
            close_sentence(&mut doc, &mut sent);
            close_document(&mut corpus, &mut doc);
            continue;
        }
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(Error::format(
                    lineno,
                    format!("expected {w} columns, found {}", cols.len()),
                ))
            }
            Some(_) => {}
        }
        let labeled = cols.len() > 1;
        let mut token = Token::new(cols[0]);
        if labeled {
            let tag = cols[cols.len() - 1];
            Tag::parse(tag).map_err(|_| Error::format(lineno, format!("unknown tag `{tag}`")))?;
            token.columns = cols[1..cols.len() - 1].iter().map(|c| c.to_string()).collect();
            sent.tags.push(tag.to_string());
        }
        sent.tokens.push(token);
    }
    close_sentence(&mut doc, &mut sent);
    close_document(&mut corpus, &mut doc);
    corpus.labeled = width.is_some_and(|w| w > 1);
    if corpus.documents.is_empty() {
        let msg = "corpus contains no tokens".to_string();
        warn!("{msg}");
        corpus.warnings.push(msg);
    }
    Ok(corpus)
}

/// Writes documents in CoNLL layout with `tags` as the last column.
pub fn format_sequence_corpus(documents: &[Document], tags: &[Vec<String>]) -> Result<String> {
    if tags.len() != documents.len() {
        return Err(Error::structural("one tag sequence per document is required"));
    }
    let mut out = String::new();
    for (doc, doc_tags) in documents.iter().zip(tags) {
        if doc_tags.len() != doc.num_tokens() {
            return Err(Error::structural("tag sequence does not match document length"));
        }
        let _ = writeln!(out, "{DOCSTART}\tO");
        out.push('\n');
        let mut it = doc_tags.iter();
        for s in &doc.sentences {
            for t in &s.tokens {
                let tag = it.next().expect("length checked above");
                out.push_str(&t.word);
                for c in &t.columns {
                    out.push('\t');
                    out.push_str(c);
                }
                let _ = writeln!(out, "\t{tag}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Pages with labels and tokens plus their hyperlink graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkCorpus {
    pub page_ids: Vec<String>,
    pub labels: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub links: LinkGraph,
    pub warnings: Vec<String>,
}

impl LinkCorpus {
    pub fn len(&self) -> usize {
        self.page_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.page_ids.is_empty()
    }
}

pub fn read_link_corpus(pages_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<LinkCorpus> {
    let pages = std::fs::read_to_string(pages_path)?;
    let edges = std::fs::read_to_string(edges_path)?;
    parse_link_corpus(&pages, &edges)
}

pub fn parse_link_corpus(pages: &str, edges: &str) -> Result<LinkCorpus> {
    let mut corpus = LinkCorpus::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, line) in pages.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() < 2 {
            return Err(Error::format(lineno, "page record needs id, label and tokens"));
        }
        let id = fields[0].trim();
        if index.insert(id.to_string(), corpus.page_ids.len()).is_some() {
            return Err(Error::format(lineno, format!("duplicate page id `{id}`")));
        }
        corpus.page_ids.push(id.to_string());
        corpus.labels.push(fields[1].trim().to_string());
        corpus.tokens.push(
            fields
                .get(2)
                .map(|t| t.split_whitespace().map(str::to_string).collect())
                .unwrap_or_default(),
        );
    }
    let mut links = LinkGraph::new(corpus.page_ids.len());
    for (i, line) in edges.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::format(lineno, "edge record needs source and target ids"));
        }
        let resolve = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::format(lineno, format!("unknown page id `{id}`")))
        };
        let (u, v) = (resolve(fields[0])?, resolve(fields[1])?);
        if u == v {
            let msg = format!("line {lineno}: self-link on `{}` dropped", fields[0]);
            warn!("{msg}");
            corpus.warnings.push(msg);
            continue;
        }
        if !links.add_arc(u, v)? {
            let msg = format!("line {lineno}: duplicate link {} -> {} collapsed", fields[0], fields[1]);
            warn!("{msg}");
            corpus.warnings.push(msg);
        }
    }
    corpus.links = links;
    Ok(corpus)
}

/// `page-id TAB label` per line.
pub fn format_page_labels(page_ids: &[String], labels: &[String]) -> String {
    let mut out = String::new();
    for (id, l) in page_ids.iter().zip(labels) {
        let _ = writeln!(out, "{id}\t{l}");
    }
    out
}

/// Parses `page-id TAB label` lines.
pub fn parse_page_labels(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() < 2 {
                return Err(Error::format(i + 1, "expected `page-id TAB label`"));
            }
            Ok((f[0].trim().to_string(), f[1].trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_and_documents() {
        let c = parse_sequence_corpus("EU B-ORG\nrejects O\n\nGerman B-MISC\n").unwrap();
        assert_eq!(c.documents.len(), 1);
        assert_eq!(c.num_sentences(), 2);
        assert_eq!(c.num_tokens(), 3);
        assert!(c.labeled);

        let c = parse_sequence_corpus(
            "-DOCSTART- -X- O O\n\nEU NNP I-NP B-ORG\n\n-DOCSTART- -X- O O\n\nPeter NNP I-NP B-PER\n",
        )
        .unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].sentences[0].tokens[0].columns, vec!["NNP", "I-NP"]);
        assert_eq!(c.documents[1].sentences[0].tags, vec!["B-PER"]);
        assert!(c.documents.iter().all(|d| d.words().all(|w| w != DOCSTART)));
    }

    #[test]
    fn empty_file_warns() {
        let c = parse_sequence_corpus("").unwrap();
        assert!(c.documents.is_empty());
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn ragged_and_bad_tags() {
        let e = parse_sequence_corpus("a O\nb X O\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }));
        let e = parse_sequence_corpus("a O\nb Q-PER\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }));
    }

    #[test]
    fn unlabeled_input() {
        let c = parse_sequence_corpus("a\nb\n\nc\n").unwrap();
        assert!(!c.labeled);
        assert_eq!(c.num_tokens(), 3);
        assert!(c.documents[0].sentences[0].tags.is_empty());
    }

    #[test]
    fn format_then_parse() {
        let c = parse_sequence_corpus("EU NNP B-ORG\nrejects VBZ O\n\nBonn NNP B-LOC\n").unwrap();
        let tags = vec![c.documents[0].tags().map(str::to_string).collect::<Vec<_>>()];
        let text = format_sequence_corpus(&c.documents, &tags).unwrap();
        let back = parse_sequence_corpus(&text).unwrap();
        assert_eq!(back.documents, c.documents);
    }

    #[test]
    fn link_corpus_parsing() {
        let pages = "a\tcourse\tintro to cs\nb\tfaculty\thome page\n";
        let c = parse_link_corpus(pages, "a\tb\n").unwrap();
        assert_eq!(c.links.num_arcs(), 1);
        assert_eq!(c.tokens[0], vec!["intro", "to", "cs"]);

        let e = parse_link_corpus(pages, "a\tzz\n").unwrap_err();
        assert!(e.to_string().contains("zz"), "{e}");

        let c = parse_link_corpus(pages, "a\tb\na\tb\n").unwrap();
        assert_eq!(c.links.num_arcs(), 1);
        assert_eq!(c.warnings.len(), 1);

        let e = parse_link_corpus("a\tx\t\na\ty\t\n", "").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }));
    }

    #[test]
    fn page_labels_round_trip() {
        let ids = vec!["p1".to_string(), "p2".to_string()];
        let labels = vec!["course".to_string(), "other".to_string()];
        let text = format_page_labels(&ids, &labels);
        let back = parse_page_labels(&text).unwrap();
        assert_eq!(back[1], ("p2".to_string(), "other".to_string()));
    }
}
