//! Evaluation metrics over predicted relation triplets: micro F1, the
//! train-overlap-excluding Ign F1, long-tail macro scores, multi-label
//! splits by label count, and a two-sided Welch t-test over repeated runs.
//!
//! Everything operates on sets of (document, head, tail, relation) triplets,
//! so metric values are invariant to prediction order and duplicates.

use crate::corpus::{Document, RelationSchema};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

/// One predicted or gold relational fact.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub doc: String,
    pub head: usize,
    pub tail: usize,
    pub relation: usize,
}

/// A set of triplets with optional per-triplet scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    triplets: BTreeSet<Triplet>,
    scores: BTreeMap<Triplet, f64>,
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, triplet: Triplet, score: Option<f64>) {
        if let Some(s) = score {
            self.scores.insert(triplet.clone(), s);
        }
        self.triplets.insert(triplet);
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.triplets.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }

    pub fn score(&self, t: &Triplet) -> Option<f64> {
        self.scores.get(t).copied()
    }

    /// Gold triplets of a dataset.
    pub fn from_gold(docs: &[Document]) -> Self {
        let mut set = PredictionSet::new();
        for doc in docs {
            for fact in &doc.facts {
                set.insert(
                    Triplet {
                        doc: doc.id.clone(),
                        head: fact.head,
                        tail: fact.tail,
                        relation: fact.relation,
                    },
                    None,
                );
            }
        }
        set
    }

    fn filtered(&self, keep: impl Fn(&Triplet) -> bool) -> Self {
        let mut out = PredictionSet::new();
        for t in &self.triplets {
            if keep(t) {
                out.insert(t.clone(), self.scores.get(t).copied());
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct WireTriplet {
    title: String,
    h_idx: usize,
    t_idx: usize,
    r: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Serialize to the leaderboard-style JSON array of
/// `{title, h_idx, t_idx, r, score}` records.
pub fn predictions_to_json(set: &PredictionSet, schema: &RelationSchema) -> String {
    let wire: Vec<WireTriplet> = set
        .iter()
        .map(|t| WireTriplet {
            title: t.doc.clone(),
            h_idx: t.head,
            t_idx: t.tail,
            r: schema.id(t.relation).to_string(),
            score: set.score(t),
        })
        .collect();
    serde_json::to_string_pretty(&wire).expect("predictions serialize")
}

pub fn predictions_from_json(text: &str, schema: &RelationSchema) -> Result<PredictionSet> {
    let wire: Vec<WireTriplet> = serde_json::from_str(text)
        .map_err(|e| Error::data(format!("bad prediction JSON: {e}")))?;
    let mut set = PredictionSet::new();
    for w in wire {
        let relation = schema
            .index_of(&w.r)
            .ok_or_else(|| Error::data(format!("prediction uses unknown relation id {:?}", w.r)))?;
        set.insert(
            Triplet {
                doc: w.title,
                head: w.h_idx,
                tail: w.t_idx,
                relation,
            },
            w.score,
        );
    }
    Ok(set)
}

/// A metric that either has a value or is undefined for a stated reason;
/// undefined is never silently reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value(f64),
    Absent { absent: String },
}

impl MetricValue {
    pub fn absent(reason: impl Into<String>) -> Self {
        MetricValue::Absent {
            absent: reason.into(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Absent { .. } => None,
        }
    }
}

/// Set-intersection precision, recall and F1 over triplets.
pub fn micro_f1(pred: &PredictionSet, gold: &PredictionSet) -> (f64, f64, f64) {
    let matched = pred.iter().filter(|t| gold.contains(t)).count() as f64;
    let p = if pred.is_empty() {
        0.0
    } else {
        matched / pred.len() as f64
    };
    let r = if gold.is_empty() {
        0.0
    } else {
        matched / gold.len() as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Surface-form fact set of a training corpus, used to exclude
/// train-overlapping facts from Ign F1. Entities match across splits when
/// their mention-name sets intersect, so every (head name, tail name,
/// relation) combination of a training fact is recorded.
#[derive(Debug, Clone, Default)]
pub struct TrainSurface {
    combos: HashSet<(String, String, usize)>,
}

impl TrainSurface {
    pub fn from_docs(train_docs: &[Document]) -> Self {
        let mut combos = HashSet::new();
        for doc in train_docs {
            for fact in &doc.facts {
                for hn in doc.entities[fact.head].names() {
                    for tn in doc.entities[fact.tail].names() {
                        combos.insert((hn.to_string(), tn.to_string(), fact.relation));
                    }
                }
            }
        }
        TrainSurface { combos }
    }

    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// Does any surface combination of this triplet's entities appear in
    /// the training set with the same relation?
    pub fn overlaps(&self, triplet: &Triplet, docs_by_id: &HashMap<&str, &Document>) -> bool {
        let Some(doc) = docs_by_id.get(triplet.doc.as_str()) else {
            return false;
        };
        if triplet.head >= doc.entities.len() || triplet.tail >= doc.entities.len() {
            return false;
        }
        for hn in doc.entities[triplet.head].names() {
            for tn in doc.entities[triplet.tail].names() {
                if self
                    .combos
                    .contains(&(hn.to_string(), tn.to_string(), triplet.relation))
                {
                    return true;
                }
            }
        }
        false
    }
}

fn index_docs(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

/// Micro F1 after removing, from both prediction and gold, triplets whose
/// surface form also occurs in the training set.
pub fn ign_f1(
    pred: &PredictionSet,
    gold: &PredictionSet,
    surface: &TrainSurface,
    eval_docs: &[Document],
) -> MetricValue {
    let by_id = index_docs(eval_docs);
    let keep = |t: &Triplet| !surface.overlaps(t, &by_id);
    let gold_kept = gold.filtered(keep);
    if gold_kept.is_empty() {
        return MetricValue::absent("every gold fact overlaps the training set");
    }
    let pred_kept = pred.filtered(keep);
    let (_, _, f1) = micro_f1(&pred_kept, &gold_kept);
    MetricValue::Value(f1)
}

/// Macro-averaged F1 over relations with training frequency below `k` that
/// appear in the gold set. Relations absent from gold are skipped, never
/// scored 1.0.
pub fn macro_at_k(
    pred: &PredictionSet,
    gold: &PredictionSet,
    train_freq: &[u64],
    k: u64,
) -> MetricValue {
    let gold_relations: BTreeSet<usize> = gold.iter().map(|t| t.relation).collect();
    let qualifying: Vec<usize> = gold_relations
        .into_iter()
        .filter(|&r| train_freq.get(r).copied().unwrap_or(0) < k)
        .collect();
    if qualifying.is_empty() {
        return MetricValue::absent(format!("no gold relation has training frequency below {k}"));
    }
    let mut sum = 0.0;
    for &r in &qualifying {
        let pred_r = pred.filtered(|t| t.relation == r);
        let gold_r = gold.filtered(|t| t.relation == r);
        let (_, _, f1) = micro_f1(&pred_r, &gold_r);
        sum += f1;
    }
    MetricValue::Value(sum / qualifying.len() as f64)
}

/// Plain macro F1 over all gold relations (no frequency filter).
pub fn macro_f1(pred: &PredictionSet, gold: &PredictionSet) -> MetricValue {
    macro_at_k(pred, gold, &[], u64::MAX)
}

/// Micro F1 restricted to entity pairs carrying exactly `count` gold labels.
/// Each label of a pair is judged individually.
pub fn multilabel_f1_by_count(
    pred: &PredictionSet,
    gold: &PredictionSet,
    count: usize,
) -> MetricValue {
    let mut label_counts: BTreeMap<(&str, usize, usize), usize> = BTreeMap::new();
    for t in gold.iter() {
        *label_counts.entry((t.doc.as_str(), t.head, t.tail)).or_default() += 1;
    }
    let qualifying: BTreeSet<(String, usize, usize)> = label_counts
        .iter()
        .filter(|&(_, &c)| c == count)
        .map(|(&(d, h, t), _)| (d.to_string(), h, t))
        .collect();
    if qualifying.is_empty() {
        return MetricValue::absent(format!("no gold entity pair has exactly {count} labels"));
    }
    let on_pairs =
        |t: &Triplet| qualifying.contains(&(t.doc.clone(), t.head, t.tail));
    let gold_slice = gold.filtered(on_pairs);
    let pred_slice = pred.filtered(on_pairs);
    let (_, _, f1) = micro_f1(&pred_slice, &gold_slice);
    MetricValue::Value(f1)
}

/// Welch's two-sample, two-sided t-test over repeated run scores. Both
/// samples degenerate (zero variance): p is 1 for equal means, 0 otherwise.
pub fn two_sided_t_test(runs_a: &[f64], runs_b: &[f64]) -> Result<f64> {
    if runs_a.len() < 2 || runs_b.len() < 2 {
        return Err(Error::data("t-test needs at least two runs per sample"));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(runs_a), mean(runs_b));
    let (va, vb) = (var(runs_a, ma), var(runs_b, mb));
    let (na, nb) = (runs_a.len() as f64, runs_b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::numeric(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Everything the evaluation reports, serialized with stable key order.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub ign_f1: MetricValue,
    pub macro_f1: MetricValue,
    pub macro_at_k: BTreeMap<u64, MetricValue>,
    pub f1_by_label_count: BTreeMap<usize, MetricValue>,
    pub support: Support,
}

#[derive(Debug, Clone, Serialize)]
pub struct Support {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

/// Compute the full report. Without a training set, train-dependent metrics
/// are reported absent rather than guessed.
pub fn build_report(
    pred: &PredictionSet,
    gold: &PredictionSet,
    eval_docs: &[Document],
    train_docs: Option<&[Document]>,
    n_relations: usize,
    k_list: &[u64],
) -> MetricReport {
    let (micro_precision, micro_recall, micro) = micro_f1(pred, gold);
    let matched = pred.iter().filter(|t| gold.contains(t)).count();
    let ign = match train_docs {
        Some(train) => ign_f1(pred, gold, &TrainSurface::from_docs(train), eval_docs),
        None => MetricValue::absent("no training set provided"),
    };
    let mut at_k = BTreeMap::new();
    for &k in k_list {
        let v = match train_docs {
            Some(train) => {
                let freq = crate::relstats::relation_frequency(train, n_relations);
                macro_at_k(pred, gold, &freq, k)
            }
            None => MetricValue::absent("no training set provided"),
        };
        at_k.insert(k, v);
    }
    let mut by_count = BTreeMap::new();
    let mut counts: BTreeMap<(String, usize, usize), usize> = BTreeMap::new();
    for t in gold.iter() {
        *counts.entry((t.doc.clone(), t.head, t.tail)).or_default() += 1;
    }
    let present: BTreeSet<usize> = counts.values().copied().filter(|&c| c >= 2).collect();
    for count in present {
        by_count.insert(count, multilabel_f1_by_count(pred, gold, count));
    }
    MetricReport {
        micro_precision,
        micro_recall,
        micro_f1: micro,
        ign_f1: ign,
        macro_f1: macro_f1(pred, gold),
        macro_at_k: at_k,
        f1_by_label_count: by_count,
        support: Support {
            gold: gold.len(),
            predicted: pred.len(),
            matched,
        },
    }
}
