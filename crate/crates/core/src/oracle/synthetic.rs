//! Synthetic long-range labeling data.
//!
//! Each sequence holds a few groups of repeated rare capitalized names in
//! lowercase filler. A cue word (`cue_per`, `cue_loc`, ...) precedes only the
//! first mention of a group, so later mentions can be typed only by looking
//! back along skip edges. Labels are drawn ancestrally over the skip graph:
//! a node picks one of its parents, then copies a skip parent's label with
//! probability `copy_strength` or draws a type uniformly.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{document_frequencies, Document, Sentence, Token};
use crate::error::{Error, Result};
use crate::graph::{build_ner_skip_graph, ParentGraph, SkipParams};
use crate::labels::LabelSet;
use crate::model::EdgeClass;

/// Which parents the sampler chooses among.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GenerationMixing {
    /// Uniformly over all parents, local included; a local choice draws a
    /// fresh type.
    #[default]
    Uniform,
    /// Uniformly over skip parents only.
    SkipOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub entity_types: Vec<String>,
    pub filler_vocab: usize,
    pub min_groups: usize,
    pub max_groups: usize,
    pub min_mentions: usize,
    pub max_mentions: usize,
    pub copy_strength: f64,
    /// Probability that a group's first mention is preceded by its cue word.
    pub cue_rate: f64,
    pub mixing: GenerationMixing,
    pub skip: SkipParams,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_sequences: 100,
            min_len: 12,
            max_len: 30,
            entity_types: ["PER", "LOC", "ORG"].iter().map(|s| s.to_string()).collect(),
            filler_vocab: 50,
            min_groups: 1,
            max_groups: 3,
            min_mentions: 2,
            max_mentions: 4,
            copy_strength: 0.9,
            cue_rate: 1.0,
            mixing: GenerationMixing::Uniform,
            skip: SkipParams::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.copy_strength) || !(0.0..=1.0).contains(&self.cue_rate) {
            return bad("copy_strength and cue_rate must lie in [0, 1]");
        }
        if self.entity_types.is_empty() || self.filler_vocab == 0 || self.num_sequences == 0 {
            return bad("entity types, filler vocabulary and sequence count must be non-empty");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("sequence lengths must satisfy 1 <= min_len <= max_len");
        }
        if self.min_groups > self.max_groups || self.min_mentions == 0 || self.min_mentions > self.max_mentions {
            return bad("group and mention ranges must be non-empty with at least one mention");
        }
        Ok(())
    }

    /// Expected fraction of copied skip choices that agree with their parent.
    pub fn expected_agreement(&self) -> f64 {
        self.copy_strength + (1.0 - self.copy_strength) / self.entity_types.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub graph: ParentGraph,
    /// Group index of every name token; `None` for filler and cues.
    pub groups: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub labels: LabelSet,
    pub sequences: Vec<SyntheticSequence>,
    /// Label draws that chose a skip parent.
    pub skip_trials: usize,
    /// Of those, draws whose label equals the parent's.
    pub skip_agreements: usize,
}

impl SyntheticDataset {
    /// One single-sentence document per sequence.
    pub fn documents(&self) -> Vec<Document> {
        self.sequences
            .iter()
            .map(|s| Document {
                sentences: vec![Sentence {
                    tokens: s.words.iter().map(Token::new).collect(),
                    tags: s.tags.clone(),
                }],
            })
            .collect()
    }

    pub fn to_conll(&self) -> Result<String> {
        let tags: Vec<Vec<String>> = self.sequences.iter().map(|s| s.tags.clone()).collect();
        crate::corpus::format_sequence_corpus(&self.documents(), &tags)
    }

    pub fn agreement_rate(&self) -> f64 {
        if self.skip_trials == 0 {
            0.0
        } else {
            self.skip_agreements as f64 / self.skip_trials as f64
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn fresh_name<R: Rng>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=4);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
            s.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        let mut name: Vec<char> = s.chars().collect();
        name[0] = name[0].to_ascii_uppercase();
        let name: String = name.into_iter().collect();
        if used.insert(name.clone()) {
            return name;
        }
    }
}

enum Slot {
    Filler,
    Cue(usize),
    Mention(usize),
}

fn layout<R: Rng>(rng: &mut R, config: &SyntheticConfig) -> Vec<Slot> {
    let groups = rng.gen_range(config.min_groups..=config.max_groups);
    let mut remaining: Vec<usize> = (0..groups)
        .map(|_| rng.gen_range(config.min_mentions..=config.max_mentions))
        .collect();
    let mut seen = vec![false; groups];
    let mut events: Vec<(usize, bool)> = Vec::new();
    let total: usize = remaining.iter().sum();
    for _ in 0..total {
        let left: usize = remaining.iter().sum();
        let mut pick = rng.gen_range(0..left);
        let g = remaining
            .iter()
            .position(|&r| {
                if pick < r {
                    true
                } else {
                    pick -= r;
                    false
                }
            })
            .expect("pick within total");
        remaining[g] -= 1;
        let cue = !seen[g] && rng.gen_bool(config.cue_rate);
        seen[g] = true;
        events.push((g, cue));
    }
    let needed: usize = events.iter().map(|&(_, cue)| 1 + cue as usize).sum::<usize>()
        + events.len().saturating_sub(1);
    let n = rng.gen_range(config.min_len..=config.max_len).max(needed);
    let mut gaps = vec![0usize; events.len() + 1];
    for gap in gaps.iter_mut().take(events.len()).skip(1) {
        *gap = 1;
    }
    for _ in 0..n - needed {
        let i = rng.gen_range(0..gaps.len());
        gaps[i] += 1;
    }
    let mut slots = Vec::with_capacity(n);
    for (i, &(g, cue)) in events.iter().enumerate() {
        slots.extend((0..gaps[i]).map(|_| Slot::Filler));
        if cue {
            slots.push(Slot::Cue(g));
        }
        slots.push(Slot::Mention(g));
    }
    slots.extend((0..gaps[events.len()]).map(|_| Slot::Filler));
    slots
}

/// Deterministic per seed.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used = HashSet::new();
    let mut drafts = Vec::with_capacity(config.num_sequences);
    for _ in 0..config.num_sequences {
        let slots = layout(&mut rng, config);
        let num_groups = slots
            .iter()
            .filter_map(|s| match s {
                Slot::Mention(g) => Some(g + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let names: Vec<String> = (0..num_groups).map(|_| fresh_name(&mut rng, &mut used)).collect();
        let words: Vec<String> = slots
            .iter()
            .map(|s| match s {
                Slot::Filler => format!("w{}", rng.gen_range(0..config.filler_vocab)),
                Slot::Cue(_) => "cue".to_string(),
                Slot::Mention(g) => names[*g].clone(),
            })
            .collect();
        drafts.push((slots, words));
    }
    let docs: Vec<Document> = drafts
        .iter()
        .map(|(_, words)| Document {
            sentences: vec![Sentence {
                tokens: words.iter().map(Token::new).collect(),
                tags: Vec::new(),
            }],
        })
        .collect();
    let df: HashMap<String, usize> = document_frequencies(&docs);
    let types = &config.entity_types;
    let labels = LabelSet::new(std::iter::once("O".to_string()).chain(types.iter().map(|t| format!("B-{t}"))))?;
    let mut sequences = Vec::with_capacity(drafts.len());
    let (mut trials, mut agreements) = (0, 0);
    for (slots, mut words) in drafts {
        let graph = build_ner_skip_graph(&words, &df, config.skip)?;
        let mut types_at: Vec<Option<usize>> = vec![None; words.len()];
        for (k, slot) in slots.iter().enumerate() {
            let Slot::Mention(_) = slot else { continue };
            let parents = graph.parents(k);
            let skips: Vec<usize> = parents
                .iter()
                .filter(|p| p.class == EdgeClass::Skip)
                .map(|p| p.index)
                .collect();
            let chosen = match config.mixing {
                GenerationMixing::Uniform if !parents.is_empty() => {
                    let p = parents[rng.gen_range(0..parents.len())];
                    (p.class == EdgeClass::Skip).then_some(p.index)
                }
                GenerationMixing::Uniform => None,
                GenerationMixing::SkipOnly => skips.choose(&mut rng).copied(),
            };
            let ty = match chosen {
                Some(j) => {
                    let parent_ty = types_at[j].expect("skip parents are mentions");
                    let ty = if rng.gen_bool(config.copy_strength) {
                        parent_ty
                    } else {
                        rng.gen_range(0..types.len())
                    };
                    trials += 1;
                    agreements += (ty == parent_ty) as usize;
                    ty
                }
                None => rng.gen_range(0..types.len()),
            };
            types_at[k] = Some(ty);
        }
        let mut group_type: HashMap<usize, usize> = HashMap::new();
        for (k, slot) in slots.iter().enumerate() {
            if let (Slot::Mention(g), Some(ty)) = (slot, types_at[k]) {
                group_type.entry(*g).or_insert(ty);
            }
        }
        for (k, slot) in slots.iter().enumerate() {
            if let Slot::Cue(g) = slot {
                words[k] = format!("cue_{}", types[group_type[g]].to_lowercase());
            }
        }
        let tags = types_at
            .iter()
            .map(|t| t.map_or_else(|| "O".to_string(), |ty| format!("B-{}", types[ty])))
            .collect();
        let groups = slots
            .iter()
            .map(|s| match s {
                Slot::Mention(g) => Some(*g),
                _ => None,
            })
            .collect();
        sequences.push(SyntheticSequence {
            words,
            tags,
            graph,
            groups,
        });
    }
    Ok(SyntheticDataset {
        labels,
        sequences,
        skip_trials: trials,
        skip_agreements: agreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let c = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&c).unwrap(), generate_synthetic(&c).unwrap());
        let d = SyntheticConfig { seed: 1, ..c.clone() };
        assert_ne!(generate_synthetic(&c).unwrap(), generate_synthetic(&d).unwrap());
    }

    #[test]
    fn full_copy_makes_groups_uniform() {
        let c = SyntheticConfig {
            copy_strength: 1.0,
            mixing: GenerationMixing::SkipOnly,
            skip: SkipParams {
                recency_cap: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let data = generate_synthetic(&c).unwrap();
        assert!(data.skip_trials > 0);
        assert_eq!(data.skip_trials, data.skip_agreements);
        for s in &data.sequences {
            let mut first: HashMap<usize, &str> = HashMap::new();
            for (g, tag) in s.groups.iter().zip(&s.tags) {
                if let Some(g) = g {
                    assert_eq!(*first.entry(*g).or_insert(tag.as_str()), tag.as_str());
                }
            }
        }
    }

    #[test]
    fn cues_precede_first_mentions_only() {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
        for s in &data.sequences {
            let mut seen = HashSet::new();
            for k in 0..s.words.len() {
                if let Some(g) = s.groups[k] {
                    let cue = k > 0 && s.words[k - 1].starts_with("cue_");
                    assert_eq!(cue, seen.insert(g), "{:?}", s.words);
                    if cue {
                        let ty = s.tags[k].trim_start_matches("B-").to_lowercase();
                        assert_eq!(s.words[k - 1], format!("cue_{ty}"));
                    }
                } else {
                    assert_eq!(s.tags[k], "O");
                }
            }
            assert!(s.graph.edges().any(|(_, _, c)| c == EdgeClass::Skip));
        }
    }

    #[test]
    fn agreement_matches_copy_strength() {
        let c = SyntheticConfig {
            num_sequences: 500,
            seed: 7,
            ..Default::default()
        };
        let data = generate_synthetic(&c).unwrap();
        let p = c.expected_agreement();
        let sigma = (p * (1.0 - p) / data.skip_trials as f64).sqrt();
        assert!(data.skip_trials > 300);
        assert!((data.agreement_rate() - p).abs() <= 3.0 * sigma, "{} vs {p}", data.agreement_rate());
    }

    #[test]
    fn conll_output_parses() {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let text = data.to_conll().unwrap();
        let corpus = crate::corpus::parse_sequence_corpus(&text).unwrap();
        assert_eq!(corpus.documents, data.documents());
    }
}
