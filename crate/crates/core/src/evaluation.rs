//! Entity-level scoring, token accuracy and classification error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A parsed IOB/BIO tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Tag<'a> {
    pub fn parse(s: &'a str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || Error::Format {
            line: 0,
            message: format!("unknown tag `{s}`"),
        };
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        if ty.is_empty() {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::Begin(ty)),
            "I" => Ok(Tag::Inside(ty)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TagScheme {
    /// `B-` only separates adjacent entities of the same type.
    Iob1,
    /// Every entity starts with `B-`.
    #[default]
    Bio2,
}

/// How an `I-X` that does not continue an `X` entity is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RepairMode {
    /// Opens a new `X` entity.
    #[default]
    Lenient,
    /// Under BIO2 the tag is treated as `O`; under IOB1 it is a legal start.
    Strict,
}

/// Inclusive token span with an entity type.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }
}

pub fn decode_spans<S: AsRef<str>>(
    tags: &[S],
    scheme: TagScheme,
    mode: RepairMode,
) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((s, ty)) = open.take() {
            spans.push(EntitySpan::new(s, end, ty));
        }
    };
    for (k, raw) in tags.iter().enumerate() {
        match Tag::parse(raw.as_ref())? {
            Tag::Outside => close(&mut open, k.wrapping_sub(1), &mut spans),
            Tag::Begin(ty) => {
                close(&mut open, k.wrapping_sub(1), &mut spans);
                open = Some((k, ty));
            }
            Tag::Inside(ty) => match open {
                Some((_, cur)) if cur == ty => {}
                _ => {
                    close(&mut open, k.wrapping_sub(1), &mut spans);
                    let starts = mode == RepairMode::Lenient || scheme == TagScheme::Iob1;
                    if starts {
                        open = Some((k, ty));
                    }
                }
            },
        }
    }
    close(&mut open, tags.len().wrapping_sub(1), &mut spans);
    Ok(spans)
}

/// Inverse of [`decode_spans`] for non-overlapping spans within `len` tokens.
pub fn encode_spans(spans: &[EntitySpan], len: usize, scheme: TagScheme) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); len];
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort();
    let mut prev: Option<&EntitySpan> = None;
    for s in sorted {
        if s.start > s.end || s.end >= len {
            return Err(Error::structural(format!("span {s:?} outside {len} tokens")));
        }
        if prev.is_some_and(|p| p.end >= s.start) {
            return Err(Error::structural("overlapping spans"));
        }
        let adjacent_same = prev.is_some_and(|p| p.end + 1 == s.start && p.entity_type == s.entity_type);
        for (i, t) in tags.iter_mut().enumerate().take(s.end + 1).skip(s.start) {
            let begin = i == s.start && (scheme == TagScheme::Bio2 || adjacent_same);
            *t = format!("{}-{}", if begin { "B" } else { "I" }, s.entity_type);
        }
        prev = Some(s);
    }
    Ok(tags)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.correct += other.correct;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

/// Entity-level precision/recall/F1 with the false positive and false
/// negative rates. Zero denominators give 0 and raise the matching flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Spurious predicted entities over all predicted entities.
    pub fp_rate: f64,
    /// Missed gold entities over all gold entities.
    pub fn_rate: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeScore>,
    pub token_accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Corpus-level accumulation of span and token counts.
#[derive(Clone, Debug, Default)]
pub struct ScoreAccumulator {
    per_type: BTreeMap<String, Counts>,
    tokens_correct: usize,
    tokens_total: usize,
}

impl ScoreAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one sequence's spans; a prediction counts only on an exact
    /// `(start, end, type)` match.
    pub fn add_spans(&mut self, gold: &[EntitySpan], predicted: &[EntitySpan]) {
        let gold_set: BTreeSet<&EntitySpan> = gold.iter().collect();
        let pred_set: BTreeSet<&EntitySpan> = predicted.iter().collect();
        for s in &gold_set {
            self.per_type.entry(s.entity_type.clone()).or_default().gold += 1;
        }
        for s in &pred_set {
            let c = self.per_type.entry(s.entity_type.clone()).or_default();
            c.predicted += 1;
            if gold_set.contains(s) {
                c.correct += 1;
            }
        }
    }

    pub fn add_tokens<S: AsRef<str>>(&mut self, gold: &[S], predicted: &[S]) -> Result<()> {
        if gold.len() != predicted.len() {
            return Err(Error::structural("token sequences differ in length"));
        }
        self.tokens_total += gold.len();
        self.tokens_correct += gold
            .iter()
            .zip(predicted)
            .filter(|(g, p)| g.as_ref() == p.as_ref())
            .count();
        Ok(())
    }

    /// Decodes both tag sequences and adds spans and tokens.
    pub fn add_tagged<S: AsRef<str>>(
        &mut self,
        gold: &[S],
        predicted: &[S],
        scheme: TagScheme,
        mode: RepairMode,
    ) -> Result<()> {
        self.add_tokens(gold, predicted)?;
        let g = decode_spans(gold, scheme, mode)?;
        let p = decode_spans(predicted, scheme, mode)?;
        self.add_spans(&g, &p);
        Ok(())
    }

    pub fn finish(&self) -> ScoreReport {
        let mut total = Counts::default();
        let per_type = self
            .per_type
            .iter()
            .map(|(ty, &c)| {
                total.add(c);
                let (p, _) = ratio(c.correct, c.predicted);
                let (r, _) = ratio(c.correct, c.gold);
                (
                    ty.clone(),
                    TypeScore {
                        precision: p,
                        recall: r,
                        f1: harmonic(p, r),
                        counts: c,
                    },
                )
            })
            .collect();
        let (precision, precision_undefined) = ratio(total.correct, total.predicted);
        let (recall, recall_undefined) = ratio(total.correct, total.gold);
        let (fp_rate, _) = ratio(total.predicted - total.correct, total.predicted);
        let (fn_rate, _) = ratio(total.gold - total.correct, total.gold);
        ScoreReport {
            precision,
            recall,
            f1: harmonic(precision, recall),
            fp_rate,
            fn_rate,
            precision_undefined,
            recall_undefined,
            counts: total,
            per_type,
            token_accuracy: (self.tokens_total > 0)
                .then(|| self.tokens_correct as f64 / self.tokens_total as f64),
        }
    }
}

pub fn entity_prf(gold: &[EntitySpan], predicted: &[EntitySpan]) -> ScoreReport {
    let mut acc = ScoreAccumulator::new();
    acc.add_spans(gold, predicted);
    acc.finish()
}

/// Fraction of mismatched labels.
pub fn classification_error<T: PartialEq>(gold: &[T], predicted: &[T]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::structural(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let wrong = gold.iter().zip(predicted).filter(|(g, p)| g != p).count();
    Ok(wrong as f64 / gold.len() as f64)
}

impl ScoreReport {
    /// Machine-readable `key=value` lines.
    pub fn key_values(&self, prefix: &str) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{prefix}{k}={v}");
        };
        kv("precision", format!("{:.6}", self.precision));
        kv("recall", format!("{:.6}", self.recall));
        kv("f1", format!("{:.6}", self.f1));
        kv("fp_rate", format!("{:.6}", self.fp_rate));
        kv("fn_rate", format!("{:.6}", self.fn_rate));
        kv("gold_entities", self.counts.gold.to_string());
        kv("predicted_entities", self.counts.predicted.to_string());
        kv("correct_entities", self.counts.correct.to_string());
        kv("precision_undefined", self.precision_undefined.to_string());
        kv("recall_undefined", self.recall_undefined.to_string());
        if let Some(a) = self.token_accuracy {
            kv("token_accuracy", format!("{a:.6}"));
        }
        for (ty, s) in &self.per_type {
            kv(&format!("type.{ty}.precision"), format!("{:.6}", s.precision));
            kv(&format!("type.{ty}.recall"), format!("{:.6}", s.recall));
            kv(&format!("type.{ty}.f1"), format!("{:.6}", s.f1));
        }
        out
    }

    /// Human-readable per-type table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>7} {:>7}", "type", "P%", "R%", "F1%", "gold", "pred");
        for (ty, s) in &self.per_type {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>7} {:>7}",
                ty,
                100.0 * s.precision,
                100.0 * s.recall,
                100.0 * s.f1,
                s.counts.gold,
                s.counts.predicted
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>7} {:>7}",
            "overall",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            self.counts.gold,
            self.counts.predicted
        );
        out
    }
}

fn reduction(base: f64, value: f64) -> f64 {
    if base > 0.0 {
        100.0 * (base - value) / base
    } else {
        0.0
    }
}

/// Model comparison table: F1%, FP%/FN% and the percent reduction of the
/// FP and FN rates relative to the `baseline` row.
pub fn comparison_table(rows: &[(String, ScoreReport)], baseline: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>6} {:>13} {:>14}", "Model", "F1%", "FP%/FN%", "%Improvement");
    let base = rows.get(baseline).map(|(_, r)| r);
    for (name, r) in rows {
        let (ifp, ifn) = base
            .map(|b| (reduction(b.fp_rate, r.fp_rate), reduction(b.fn_rate, r.fn_rate)))
            .unwrap_or((0.0, 0.0));
        let _ = writeln!(
            out,
            "{:<24} {:>6.1} {:>13} {:>14}",
            name,
            100.0 * r.f1,
            format!("{:.1}/{:.1}", 100.0 * r.fp_rate, 100.0 * r.fn_rate),
            format!("{ifp:.1}/{ifn:.1}")
        );
    }
    out
}
