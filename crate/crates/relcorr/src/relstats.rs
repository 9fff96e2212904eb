//! Corpus-level relation statistics: co-occurrence counts, PPMI correlation
//! matrices, triplet frequency tables, and multi-label histograms.
//!
//! Counting is document-level presence: a document with five facts of the
//! same relation still contributes exactly 1 to that relation's marginal,
//! and 1 to the joint cell of every relation pair it expresses.

use crate::corpus::{Document, RelationSchema};
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Document-presence counts for every relation and relation pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    pub doc_count: u64,
    /// Documents containing relation i at least once.
    pub per_relation: Vec<u64>,
    /// Documents containing both i and j; symmetric, diagonal equals
    /// `per_relation`.
    pub joint: Array2<u64>,
}

impl CooccurrenceCounts {
    pub fn zero(n_relations: usize) -> Self {
        CooccurrenceCounts {
            doc_count: 0,
            per_relation: vec![0; n_relations],
            joint: Array2::zeros((n_relations, n_relations)),
        }
    }

    /// Fold one document's relation presence into the counts.
    pub fn add_document(&mut self, doc: &Document) {
        self.doc_count += 1;
        let present: Vec<usize> = doc.relation_set().into_iter().collect();
        for &i in &present {
            self.per_relation[i] += 1;
            for &j in &present {
                self.joint[[i, j]] += 1;
            }
        }
    }

    /// Combine counts from disjoint document partitions. Merging partial
    /// counts must equal sequential counting over the concatenation, which
    /// holds because every cell is a plain sum over documents.
    pub fn merge(&mut self, other: &CooccurrenceCounts) {
        assert_eq!(self.per_relation.len(), other.per_relation.len());
        self.doc_count += other.doc_count;
        for (a, b) in self.per_relation.iter_mut().zip(&other.per_relation) {
            *a += b;
        }
        self.joint += &other.joint;
    }
}

/// Count document-level relation co-occurrence over a dataset.
pub fn count_cooccurrence(
    dataset: &[Document],
    n_relations: usize,
) -> Result<CooccurrenceCounts> {
    if dataset.is_empty() {
        return Err(Error::data("cannot count co-occurrence over an empty dataset"));
    }
    let mut counts = CooccurrenceCounts::zero(n_relations);
    for doc in dataset {
        counts.add_document(doc);
    }
    Ok(counts)
}

/// What a correlation matrix was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    Ppmi,
    LearnedDotProduct,
}

/// A square |R|×|R| correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Array2<f64>,
    pub kind: CorrelationKind,
}

/// Positive pointwise mutual information over document-presence
/// probabilities, natural log, clamped at zero. Cells with a zero joint
/// count or a zero marginal are 0 by definition. The diagonal is computed
/// like any other cell; heatmap rendering masks it.
pub fn ppmi(counts: &CooccurrenceCounts) -> CorrelationMatrix {
    let n = counts.per_relation.len();
    let total = counts.doc_count as f64;
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let joint = counts.joint[[i, j]] as f64;
            let pi = counts.per_relation[i] as f64;
            let pj = counts.per_relation[j] as f64;
            if joint > 0.0 && pi > 0.0 && pj > 0.0 {
                let pmi = ((joint / total) / ((pi / total) * (pj / total))).ln();
                if pmi > 0.0 {
                    values[[i, j]] = pmi;
                }
            }
        }
    }
    CorrelationMatrix {
        values,
        kind: CorrelationKind::Ppmi,
    }
}

/// Triplet counts per relation (facts, not documents).
pub fn relation_frequency(dataset: &[Document], n_relations: usize) -> Vec<u64> {
    let mut freq = vec![0u64; n_relations];
    for doc in dataset {
        for fact in &doc.facts {
            freq[fact.relation] += 1;
        }
    }
    freq
}

/// Histogram of gold label counts over labeled entity pairs: map from
/// number-of-labels to number of pairs carrying exactly that many.
pub fn multilabel_histogram(dataset: &[Document]) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    for doc in dataset {
        let mut per_pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for fact in &doc.facts {
            *per_pair.entry((fact.head, fact.tail)).or_default() += 1;
        }
        for count in per_pair.into_values() {
            *hist.entry(count).or_insert(0) += 1;
        }
    }
    hist
}

/// Dot-product similarity of learned relation embeddings: `M · Mᵀ`.
pub fn learned_similarity(relation_embeddings: &Array2<f64>) -> CorrelationMatrix {
    CorrelationMatrix {
        values: relation_embeddings.dot(&relation_embeddings.t()),
        kind: CorrelationKind::LearnedDotProduct,
    }
}

// --- exports ----------------------------------------------------------------

/// Matrix as CSV with relation names on both axes.
pub fn matrix_to_csv(matrix: &Array2<f64>, names: &[String]) -> Result<String> {
    let n = matrix.nrows();
    assert_eq!(matrix.ncols(), n);
    assert_eq!(names.len(), n);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["relation".to_string()];
    header.extend_from_slice(names);
    w.write_record(&header).map_err(csv_err)?;
    for (i, name) in names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(matrix.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(w)
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    relations: Vec<String>,
    values: Vec<Vec<f64>>,
}

/// Matrix as JSON: `{"relations": [...], "values": [[...]]}`.
pub fn matrix_to_json(matrix: &Array2<f64>, names: &[String]) -> String {
    let values = matrix
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect::<Vec<_>>();
    serde_json::to_string_pretty(&MatrixJson {
        relations: names.to_vec(),
        values,
    })
    .expect("matrix serializes")
}

/// Parse a matrix back from the JSON export.
pub fn matrix_from_json(text: &str) -> Result<(Array2<f64>, Vec<String>)> {
    let parsed: MatrixJson =
        serde_json::from_str(text).map_err(|e| Error::data(format!("bad matrix JSON: {e}")))?;
    let n = parsed.relations.len();
    if parsed.values.len() != n || parsed.values.iter().any(|r| r.len() != n) {
        return Err(Error::data(format!(
            "matrix JSON is not square over {n} relations"
        )));
    }
    let mut m = Array2::zeros((n, n));
    for (i, row) in parsed.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok((m, parsed.relations))
}

/// Frequency table as two-column CSV, descending by count; ties break by
/// relation id for stable output.
pub fn frequency_to_csv(freq: &[u64], schema: &RelationSchema) -> Result<String> {
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(schema.id(a).cmp(schema.id(b))));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["relation", "count"]).map_err(csv_err)?;
    for i in order {
        w.write_record([schema.id(i), &freq[i].to_string()])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Multi-label histogram as two-column CSV ordered by label count.
pub fn histogram_to_csv(hist: &BTreeMap<usize, u64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["labels", "pairs"]).map_err(csv_err)?;
    for (k, v) in hist {
        w.write_record([k.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Raw co-occurrence counts as CSV (same layout as the matrix export).
pub fn counts_to_csv(counts: &CooccurrenceCounts, schema: &RelationSchema) -> Result<String> {
    let as_f64 = counts.joint.mapv(|v| v as f64);
    let names: Vec<String> = (0..schema.len()).map(|i| schema.id(i).to_string()).collect();
    matrix_to_csv(&as_f64, &names)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::data(format!("CSV write failed: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::data(format!("CSV write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::data(format!("CSV not UTF-8: {e}")))
}
