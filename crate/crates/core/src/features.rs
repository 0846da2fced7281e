//! Predicate extraction and vocabularies.
//!
//! Extraction produces predicate *strings*; a frozen [`Vocabulary`] turns them
//! into [`PredicateVector`]s. Two vocabularies are kept per model: one for
//! node predicates and one for pair (edge) predicates.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::graph::{LinkGraph, ParentGraph};
use crate::labels::LabelId;
use crate::model::{EdgeClass, PredicateId, PredicateVector, UNKNOWN_PREDICATE};

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const BIAS: &str = "bias";

/// One predicate template. Offsets are relative to the current position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Template {
    Bias,
    /// Surface form, `w0=London`.
    Word { offset: i32 },
    /// Lowercased surface form, `lw0=london`.
    Lower { offset: i32 },
    /// Character-class shape with runs capped at four, `shape0=Xxxxx`.
    Shape { offset: i32 },
    /// Orthographic flags (initcap, allcap, hasdigit, punct, hyphen).
    Flags { offset: i32 },
    /// Prefixes of the current word of length 1 up to `max_len`.
    Prefix { max_len: usize },
    /// Suffixes of the current word of length 1 up to `max_len`.
    Suffix { max_len: usize },
    /// Extra corpus column (POS, chunk...) at the given offset.
    Column { index: usize, offset: i32 },
}

/// Which templates feed node features and local-edge pair features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub node: Vec<Template>,
    pub pair: Vec<Template>,
    /// Tag skip-edge predicates with the endpoint that produced them
    /// (`j:` / `k:`). When false the plain set union is used.
    #[serde(default = "default_true")]
    pub tag_skip_endpoints: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TemplateConfig {
    fn default() -> Self {
        let mut node = vec![Template::Bias];
        node.extend((-2..=2).map(|offset| Template::Word { offset }));
        node.push(Template::Lower { offset: 0 });
        node.extend((-1..=1).map(|offset| Template::Shape { offset }));
        node.push(Template::Flags { offset: 0 });
        node.push(Template::Prefix { max_len: 4 });
        node.push(Template::Suffix { max_len: 4 });
        TemplateConfig {
            node,
            pair: vec![
                Template::Bias,
                Template::Shape { offset: 0 },
                Template::Shape { offset: -1 },
            ],
            tag_skip_endpoints: true,
        }
    }
}

impl TemplateConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn fmt_offset(offset: i32) -> String {
    if offset > 0 {
        format!("+{offset}")
    } else {
        offset.to_string()
    }
}

/// Word shape: `X` upper, `x` lower, `d` digit, anything else kept; runs of
/// the same class are capped at four characters.
pub fn word_shape(word: &str) -> String {
    let mut out = String::new();
    let mut last = None;
    let mut run = 0;
    for ch in word.chars() {
        let c = if ch.is_uppercase() {
            'X'
        } else if ch.is_lowercase() {
            'x'
        } else if ch.is_ascii_digit() {
            'd'
        } else {
            ch
        };
        if Some(c) == last {
            run += 1;
        } else {
            last = Some(c);
            run = 1;
        }
        if run <= 4 {
            out.push(c);
        }
    }
    out
}

fn word_flags(word: &str) -> Vec<&'static str> {
    let mut flags = Vec::new();
    let mut chars = word.chars();
    if chars.next().is_some_and(char::is_uppercase) {
        flags.push("initcap");
    }
    if word.chars().any(char::is_alphabetic) && word.chars().all(|c| !c.is_lowercase()) {
        flags.push("allcap");
    }
    if word.chars().any(|c| c.is_ascii_digit()) {
        flags.push("hasdigit");
    }
    if !word.is_empty() && word.chars().all(|c| c.is_ascii_punctuation()) {
        flags.push("punct");
    }
    if word.contains('-') {
        flags.push("hyphen");
    }
    flags
}

enum Slot<'a> {
    Token(&'a Token),
    Boundary(&'static str),
}

fn slot(tokens: &[Token], k: usize, offset: i32) -> Slot<'_> {
    let pos = k as i64 + offset as i64;
    if pos < 0 {
        Slot::Boundary(BOS)
    } else if pos as usize >= tokens.len() {
        Slot::Boundary(EOS)
    } else {
        Slot::Token(&tokens[pos as usize])
    }
}

fn apply_templates(tokens: &[Token], k: usize, templates: &[Template], out: &mut Vec<String>) {
    for t in templates {
        match *t {
            Template::Bias => out.push(BIAS.to_string()),
            Template::Word { offset } => {
                let v = match slot(tokens, k, offset) {
                    Slot::Token(tok) => tok.word.as_str(),
                    Slot::Boundary(b) => b,
                };
                out.push(format!("w{}={v}", fmt_offset(offset)));
            }
            Template::Lower { offset } => {
                let v = match slot(tokens, k, offset) {
                    Slot::Token(tok) => tok.word.to_lowercase(),
                    Slot::Boundary(b) => b.to_string(),
                };
                out.push(format!("lw{}={v}", fmt_offset(offset)));
            }
            Template::Shape { offset } => {
                let v = match slot(tokens, k, offset) {
                    Slot::Token(tok) => word_shape(&tok.word),
                    Slot::Boundary(b) => b.to_string(),
                };
                out.push(format!("shape{}={v}", fmt_offset(offset)));
            }
            Template::Flags { offset } => match slot(tokens, k, offset) {
                Slot::Token(tok) => {
                    for f in word_flags(&tok.word) {
                        out.push(format!("flag{}={f}", fmt_offset(offset)));
                    }
                }
                Slot::Boundary(b) => out.push(format!("flag{}={b}", fmt_offset(offset))),
            },
            Template::Prefix { max_len } => {
                let chars: Vec<char> = tokens[k].word.chars().collect();
                for n in 1..=max_len.min(chars.len()) {
                    let s: String = chars[..n].iter().collect();
                    out.push(format!("pre{n}={s}"));
                }
            }
            Template::Suffix { max_len } => {
                let chars: Vec<char> = tokens[k].word.chars().collect();
                for n in 1..=max_len.min(chars.len()) {
                    let s: String = chars[chars.len() - n..].iter().collect();
                    out.push(format!("suf{n}={s}"));
                }
            }
            Template::Column { index, offset } => {
                let v = match slot(tokens, k, offset) {
                    Slot::Token(tok) => tok.columns.get(index).map(String::as_str).unwrap_or(""),
                    Slot::Boundary(b) => b,
                };
                out.push(format!("col{index}{}={v}", fmt_offset(offset)));
            }
        }
    }
}

/// Node predicate strings at position `k` of a sentence. Positions outside
/// the sentence use the [`BOS`] / [`EOS`] placeholders.
pub fn extract_node_predicates(tokens: &[Token], k: usize, templates: &TemplateConfig) -> Vec<String> {
    let mut out = Vec::new();
    apply_templates(tokens, k, &templates.node, &mut out);
    out
}

/// Pair predicate strings of the local edge into position `k`.
pub fn extract_local_edge_predicates(
    tokens: &[Token],
    k: usize,
    templates: &TemplateConfig,
) -> Vec<String> {
    let mut out = Vec::new();
    apply_templates(tokens, k, &templates.pair, &mut out);
    out
}

/// Skip-edge predicates: the union of the local-edge predicates at both
/// endpoints, each tagged with its endpoint when `tag_endpoints` is set.
pub fn extract_skip_edge_predicates<S: AsRef<str>>(
    local_j: &[S],
    local_k: &[S],
    tag_endpoints: bool,
) -> Vec<String> {
    if tag_endpoints {
        local_j
            .iter()
            .map(|p| format!("j:{}", p.as_ref()))
            .chain(local_k.iter().map(|p| format!("k:{}", p.as_ref())))
            .collect()
    } else {
        let set: BTreeSet<&str> = local_j
            .iter()
            .chain(local_k)
            .map(AsRef::as_ref)
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Bag-of-words page predicates: lowercased tokens with counts capped at 1,
/// plus the bias predicate.
pub fn page_predicates<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let words: BTreeSet<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    std::iter::once(BIAS.to_string())
        .chain(words.into_iter().map(|w| format!("w={w}")))
        .collect()
}

/// Injective map from predicate strings to ids, assigned in first-encounter
/// order. Once frozen it no longer grows.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, PredicateId>,
    names: Vec<String>,
    frozen: bool,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds and freezes a vocabulary from a deterministic traversal.
    pub fn build<I, S>(predicates: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary::new();
        for p in predicates {
            v.intern(p.as_ref());
        }
        v.freeze();
        v
    }

    /// Rebuilds a frozen vocabulary from names listed in id order.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i as PredicateId).is_some() {
                return Err(Error::structural(format!("duplicate predicate `{n}`")));
            }
        }
        Ok(Vocabulary {
            ids,
            names,
            frozen: true,
        })
    }

    /// Returns the id of `s`, adding it unless the vocabulary is frozen.
    pub fn intern(&mut self, s: &str) -> PredicateId {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        if self.frozen {
            return UNKNOWN_PREDICATE;
        }
        let id = self.names.len() as PredicateId;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    /// Id of `s`, or [`UNKNOWN_PREDICATE`].
    pub fn lookup(&self, s: &str) -> PredicateId {
        self.ids.get(s).copied().unwrap_or(UNKNOWN_PREDICATE)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Binary indicator vector; unknown strings are dropped.
    pub fn vectorize<S: AsRef<str>>(&self, predicates: &[S]) -> PredicateVector {
        PredicateVector::indicators(predicates.iter().map(|p| self.lookup(p.as_ref())))
    }
}

/// Model input for one graph: node predicates, START predicates and pair
/// predicates aligned with every parent list.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedInstance {
    pub graph: ParentGraph,
    pub node_preds: Vec<PredicateVector>,
    /// Pair predicates of the START conditional, used by parentless nodes.
    pub start_preds: Vec<PredicateVector>,
    pub edge_preds: Vec<Vec<PredicateVector>>,
    pub gold: Option<Vec<LabelId>>,
}

impl FeaturizedInstance {
    pub fn new(
        graph: ParentGraph,
        node_preds: Vec<PredicateVector>,
        start_preds: Vec<PredicateVector>,
        edge_preds: Vec<Vec<PredicateVector>>,
        gold: Option<Vec<LabelId>>,
    ) -> Result<Self> {
        let n = graph.len();
        if node_preds.len() != n || start_preds.len() != n || edge_preds.len() != n {
            return Err(Error::structural(format!(
                "predicate vectors do not cover the {n} graph nodes"
            )));
        }
        for (k, e) in edge_preds.iter().enumerate() {
            if e.len() != graph.parents(k).len() {
                return Err(Error::structural(format!(
                    "node {k}: {} edge predicate vectors for {} parents",
                    e.len(),
                    graph.parents(k).len()
                )));
            }
        }
        if let Some(g) = &gold {
            if g.len() != n {
                return Err(Error::structural("gold labels do not cover every node"));
            }
        }
        Ok(FeaturizedInstance {
            graph,
            node_preds,
            start_preds,
            edge_preds,
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    pub fn gold(&self) -> Result<&[LabelId]> {
        self.gold
            .as_deref()
            .ok_or_else(|| Error::structural("instance has no gold labels"))
    }

    pub(crate) fn check_labels(&self, num_labels: usize) -> Result<()> {
        if let Some(g) = &self.gold {
            if let Some(&bad) = g.iter().find(|&&y| y >= num_labels) {
                return Err(Error::structural(format!(
                    "gold label {bad} out of range for {num_labels} labels"
                )));
            }
        }
        Ok(())
    }
}

/// Predicate strings of one document, computed once and reused for every
/// graph built over it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentPredicates {
    pub words: Vec<String>,
    pub node: Vec<Vec<String>>,
    pub local: Vec<Vec<String>>,
}

impl DocumentPredicates {
    /// Feature windows are bounded by sentences; positions are numbered
    /// across the whole document.
    pub fn extract(sentences: &[Vec<Token>], templates: &TemplateConfig) -> Self {
        let mut out = DocumentPredicates {
            words: Vec::new(),
            node: Vec::new(),
            local: Vec::new(),
        };
        for s in sentences {
            for k in 0..s.len() {
                out.words.push(s[k].word.clone());
                out.node.push(extract_node_predicates(s, k, templates));
                out.local.push(extract_local_edge_predicates(s, k, templates));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Pair predicate strings for every edge of `graph`, aligned with its
    /// parent lists.
    pub fn edge_strings(&self, graph: &ParentGraph, tag_endpoints: bool) -> Vec<Vec<Vec<String>>> {
        (0..graph.len())
            .map(|k| {
                graph
                    .parents(k)
                    .iter()
                    .map(|p| match p.class {
                        EdgeClass::Skip => extract_skip_edge_predicates(
                            &self.local[p.index],
                            &self.local[k],
                            tag_endpoints,
                        ),
                        _ => self.local[k].clone(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn featurize(
        &self,
        graph: ParentGraph,
        node_vocab: &Vocabulary,
        pair_vocab: &Vocabulary,
        tag_endpoints: bool,
        gold: Option<Vec<LabelId>>,
    ) -> Result<FeaturizedInstance> {
        if graph.len() != self.len() {
            return Err(Error::structural("graph size does not match document length"));
        }
        let edge_preds = self
            .edge_strings(&graph, tag_endpoints)
            .iter()
            .map(|edges| edges.iter().map(|e| pair_vocab.vectorize(e)).collect())
            .collect();
        FeaturizedInstance::new(
            graph,
            self.node.iter().map(|p| node_vocab.vectorize(p)).collect(),
            self.local.iter().map(|p| pair_vocab.vectorize(p)).collect(),
            edge_preds,
            gold,
        )
    }
}

/// A collection of hyperlinked pages, indexed by page number.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkInstance {
    pub links: LinkGraph,
    pub node_preds: Vec<PredicateVector>,
    /// Pair predicates used by every link edge and by START.
    pub link_preds: PredicateVector,
    pub gold: Option<Vec<LabelId>>,
}

impl LinkInstance {
    pub fn len(&self) -> usize {
        self.links.num_pages()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instance over positions of `permutation`: node `i` is page
    /// `permutation[i]`.
    pub fn featurize_ordering(&self, permutation: &[usize]) -> Result<FeaturizedInstance> {
        let graph = crate::graph::build_link_dag(&self.links, permutation)?;
        self.featurize_graph(graph, permutation)
    }

    /// Graph without any link edges: every page is classified on its own.
    pub fn featurize_unlinked(&self) -> Result<FeaturizedInstance> {
        let identity: Vec<usize> = (0..self.len()).collect();
        self.featurize_graph(ParentGraph::unconnected(self.len())?, &identity)
    }

    fn featurize_graph(&self, graph: ParentGraph, permutation: &[usize]) -> Result<FeaturizedInstance> {
        let edge_preds = (0..graph.len())
            .map(|k| vec![self.link_preds.clone(); graph.parents(k).len()])
            .collect();
        FeaturizedInstance::new(
            graph,
            permutation.iter().map(|&p| self.node_preds[p].clone()).collect(),
            vec![self.link_preds.clone(); permutation.len()],
            edge_preds,
            self.gold
                .as_ref()
                .map(|g| permutation.iter().map(|&p| g[p]).collect()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_ner_skip_graph, SkipParams};

    fn toks(words: &[&str]) -> Vec<Token> {
        words.iter().map(|w| Token::new(*w)).collect()
    }

    #[test]
    fn london_predicates() {
        let s = toks(&["in", "London", "today"]);
        let p = extract_node_predicates(&s, 1, &TemplateConfig::default());
        for want in ["w0=London", "shape0=Xxxxx", "bias", "w-1=in", "w+1=today", "w+2=<EOS>"] {
            assert!(p.iter().any(|x| x == want), "missing {want} in {p:?}");
        }
        assert!(p.contains(&"suf3=don".to_string()));
        assert!(p.contains(&"pre4=Lond".to_string()));
        assert!(p.contains(&"flag0=initcap".to_string()));
    }

    #[test]
    fn bos_placeholder_at_start() {
        let s = toks(&["Rain"]);
        let p = extract_node_predicates(&s, 0, &TemplateConfig::default());
        assert!(p.contains(&"w-1=<BOS>".to_string()));
        assert!(p.contains(&"w-2=<BOS>".to_string()));
        assert!(p.contains(&"shape-1=<BOS>".to_string()));
        assert_eq!(p, extract_node_predicates(&s, 0, &TemplateConfig::default()));
    }

    #[test]
    fn shapes() {
        assert_eq!(word_shape("London"), "Xxxxx");
        assert_eq!(word_shape("IBM"), "XXX");
        assert_eq!(word_shape("1996-08-22"), "dddd-dd-dd");
        assert_eq!(word_shape("McDonald's"), "XxXxxxx'x");
    }

    #[test]
    fn skip_union_examples() {
        let got = extract_skip_edge_predicates(&["a", "b"], &["b", "c"], true);
        assert_eq!(got, vec!["j:a", "j:b", "k:b", "k:c"]);
        let got = extract_skip_edge_predicates(&["a", "b"], &["a", "b"], true);
        assert_eq!(got, vec!["j:a", "j:b", "k:a", "k:b"]);
        let empty: [&str; 0] = [];
        assert!(extract_skip_edge_predicates(&empty, &empty, true).is_empty());
        let got = extract_skip_edge_predicates(&["a", "b"], &["b", "c"], false);
        assert_eq!(got, vec!["a", "b", "c"]);
    }

    #[test]
    fn vocabulary_freeze_semantics() {
        let corpus = ["x", "y", "x", "z"];
        let v1 = Vocabulary::build(corpus);
        let v2 = Vocabulary::build(corpus);
        assert_eq!(v1, v2);
        assert_eq!(v1.names(), &["x", "y", "z"]);
        let mut v = v1.clone();
        assert_eq!(v.intern("unseen"), UNKNOWN_PREDICATE);
        assert_eq!(v.len(), 3);
        assert_eq!(v.lookup("unseen"), UNKNOWN_PREDICATE);
        assert!(v.vectorize(&["unseen", "y"]).iter().eq([(1, 1.0)]));
        assert!(Vocabulary::build(Vec::<String>::new()).is_empty());
        assert_eq!(Vocabulary::from_names(v1.names().to_vec()).unwrap(), v1);
    }

    #[test]
    fn template_config_toml() {
        let cfg = TemplateConfig::from_toml(
            r#"
            node = [{ kind = "bias" }, { kind = "word", offset = -1 }, { kind = "suffix", max_len = 3 }]
            pair = [{ kind = "bias" }]
            tag_skip_endpoints = false
            "#,
        )
        .unwrap();
        assert_eq!(cfg.node[1], Template::Word { offset: -1 });
        assert!(!cfg.tag_skip_endpoints);
        assert!(TemplateConfig::from_toml("node = []\npair = []\nbogus = 1").is_err());
    }

    #[test]
    fn document_featurization_aligns_with_graph() {
        let sents = vec![toks(&["Kim", "met", "Lee"]), toks(&["Kim", "left", "."])];
        let templates = TemplateConfig::default();
        let doc = DocumentPredicates::extract(&sents, &templates);
        assert_eq!(doc.len(), 6);
        // sentence-bounded windows
        assert!(doc.node[3].contains(&"w-1=<BOS>".to_string()));
        let graph = build_ner_skip_graph(&doc.words, &HashMap::new(), SkipParams::default()).unwrap();
        assert_eq!(graph.parents(3).len(), 2);
        let strings = doc.edge_strings(&graph, true);
        let skip = &strings[3][1];
        assert_eq!(skip.len(), doc.local[0].len() + doc.local[3].len());
        let node_vocab = Vocabulary::build(doc.node.iter().flatten());
        let pair_vocab = Vocabulary::build(
            doc.local.iter().flatten().chain(strings.iter().flatten().flatten()),
        );
        let inst = doc
            .featurize(graph, &node_vocab, &pair_vocab, true, Some(vec![0; 6]))
            .unwrap();
        assert_eq!(inst.edge_preds[3].len(), 2);
        assert_eq!(inst.edge_preds[3][1].len(), skip.len());
    }

    #[test]
    fn page_bag_of_words() {
        assert_eq!(
            page_predicates(&["Course", "course", "Syllabus"]),
            vec!["bias", "w=course", "w=syllabus"]
        );
    }
}
