//! DocRED-format corpus loading and joint-input construction.
//!
//! Documents arrive as tokenized sentences with entity mention spans and
//! labeled facts. For encoding, every mention is wrapped in `*` markers and
//! the document is concatenated with one reserved token per relation type:
//! `[CLS] doc [SEP] r_1 .. r_|R| [SEP]`. The leading marker position of each
//! mention is what downstream pooling reads.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

/// One mention of an entity: a token span inside a single sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub name: String,
    pub sent: usize,
    /// Token span `[start, end)` within the sentence.
    pub start: usize,
    pub end: usize,
    pub etype: String,
}

/// An entity is its list of mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub mentions: Vec<Mention>,
}

impl Entity {
    /// All distinct surface names of this entity.
    pub fn names(&self) -> BTreeSet<&str> {
        self.mentions.iter().map(|m| m.name.as_str()).collect()
    }
}

/// A gold relational fact between two entities of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub head: usize,
    pub tail: usize,
    /// Index into the relation schema.
    pub relation: usize,
    pub evidence: Vec<usize>,
}

/// A tokenized document with entities and gold facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<Entity>,
    pub facts: Vec<Fact>,
}

impl Document {
    /// Distinct relation indices expressed in this document.
    pub fn relation_set(&self) -> BTreeSet<usize> {
        self.facts.iter().map(|f| f.relation).collect()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Ordered set of relation types. Indices are contiguous from 0; NA is not a
/// member (an entity pair with no facts is the NA case).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    ids: Vec<String>,
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::data("relation schema must be non-empty"));
        }
        let mut schema = RelationSchema {
            ids: Vec::with_capacity(pairs.len()),
            names: Vec::with_capacity(pairs.len()),
            index: HashMap::new(),
        };
        for (id, name) in pairs {
            if schema.index.contains_key(&id) {
                return Err(Error::data(format!("duplicate relation id {id:?} in schema")));
            }
            schema.index.insert(id.clone(), schema.ids.len());
            schema.ids.push(id);
            schema.names.push(name);
        }
        Ok(schema)
    }

    /// Load from a JSON object mapping relation id to display name; object
    /// order defines relation indices.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        let mut pairs = Vec::with_capacity(map.len());
        for (id, name) in map {
            let name = name
                .as_str()
                .ok_or_else(|| {
                    Error::data(format!("schema entry {id:?} must map to a string name"))
                })?
                .to_string();
            pairs.push((id, name));
        }
        RelationSchema::new(pairs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut map = serde_json::Map::new();
        for (id, name) in self.ids.iter().zip(&self.names) {
            map.insert(id.clone(), serde_json::Value::String(name.clone()));
        }
        let text = serde_json::to_string_pretty(&map).expect("schema serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        if self.index.is_empty() && !self.ids.is_empty() {
            // deserialized without the skip field; fall back to a scan
            return self.ids.iter().position(|x| x == id);
        }
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Rebuild the id lookup after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
    }
}

/// Word-level vocabulary with reserved ids for specials and one id per
/// relation type. Layout: PAD, CLS, SEP, UNK, the mention marker, then |R|
/// relation tokens, then corpus words in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabData", into = "VocabData")]
pub struct Vocab {
    tokens: Vec<String>,
    n_relations: usize,
    lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabData {
    tokens: Vec<String>,
    n_relations: usize,
}

impl From<VocabData> for Vocab {
    fn from(d: VocabData) -> Self {
        let mut v = Vocab {
            tokens: d.tokens,
            n_relations: d.n_relations,
            lookup: HashMap::new(),
        };
        v.rebuild_lookup();
        v
    }
}

impl From<Vocab> for VocabData {
    fn from(v: Vocab) -> Self {
        VocabData {
            tokens: v.tokens,
            n_relations: v.n_relations,
        }
    }
}

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const MARKER: usize = 4;
const N_SPECIALS: usize = 5;

impl Vocab {
    /// Build from every word of the corpus plus one reserved id per relation.
    pub fn from_corpus(docs: &[Document], schema: &RelationSchema) -> Self {
        let mut words: BTreeSet<&str> = BTreeSet::new();
        for doc in docs {
            for sent in &doc.sentences {
                for w in sent {
                    words.insert(w);
                }
            }
        }
        let mut tokens: Vec<String> = vec![
            "<pad>".into(),
            "<cls>".into(),
            "<sep>".into(),
            "<unk>".into(),
            "*".into(),
        ];
        for idx in 0..schema.len() {
            tokens.push(format!("<rel:{}>", schema.id(idx)));
        }
        tokens.extend(words.into_iter().map(String::from));
        let mut v = Vocab {
            tokens,
            n_relations: schema.len(),
            lookup: HashMap::new(),
        };
        v.rebuild_lookup();
        v
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .tokens
            .iter()
            .enumerate()
            .skip(N_SPECIALS + self.n_relations)
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    /// Word id, falling back to the unknown token.
    pub fn word_id(&self, word: &str) -> usize {
        self.lookup.get(word).copied().unwrap_or(UNK)
    }

    /// Reserved id of relation token `idx`.
    pub fn relation_token_id(&self, idx: usize) -> usize {
        assert!(idx < self.n_relations);
        N_SPECIALS + idx
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

/// Document tokens with mention markers inserted, before specials and
/// relation tokens are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedDocument {
    pub token_ids: Vec<usize>,
    /// Leading-marker position per mention, grouped by entity, in document
    /// coordinates (no CLS offset yet).
    pub mention_positions: Vec<Vec<usize>>,
}

/// Encoder-ready token sequence: `[CLS] doc [SEP] r_1..r_|R| [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointInput {
    pub token_ids: Vec<usize>,
    /// Leading-marker position per mention, grouped by entity. Entities may
    /// end up with no positions if truncation dropped all their mentions.
    pub mention_positions: Vec<Vec<usize>>,
    /// Position of each relation token, in schema order.
    pub relation_positions: Vec<usize>,
    /// Document token positions (markers included, specials excluded):
    /// `[start, end)`.
    pub doc_span: (usize, usize),
    /// Positions beyond this are padding for the attention mask.
    pub valid_len: usize,
}

/// Insert `*` markers around every mention and record each leading marker.
///
/// Overlapping or nested mention spans are rejected: silent merging hides
/// data bugs and DocRED does not contain them.
pub fn insert_mention_markers(doc: &Document, vocab: &Vocab) -> Result<MarkedDocument> {
    let mut sent_offsets = Vec::with_capacity(doc.sentences.len());
    let mut total = 0;
    for sent in &doc.sentences {
        sent_offsets.push(total);
        total += sent.len();
    }

    // (flat start, flat end, entity, mention index)
    let mut spans: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (ei, entity) in doc.entities.iter().enumerate() {
        for (mi, m) in entity.mentions.iter().enumerate() {
            let base = sent_offsets[m.sent];
            spans.push((base + m.start, base + m.end, ei, mi));
        }
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        let (s1, e1, ..) = pair[0];
        let (s2, e2, ..) = pair[1];
        if s2 < e1 {
            return Err(Error::data(format!(
                "document {}: overlapping mention spans [{s1},{e1}) and [{s2},{e2})",
                doc.id
            )));
        }
    }

    let flat: Vec<usize> = doc
        .sentences
        .iter()
        .flatten()
        .map(|w| vocab.word_id(w))
        .collect();
    let mut out = Vec::with_capacity(flat.len() + 2 * spans.len());
    let mut positions = vec![Vec::new(); doc.entities.len()];
    let mut per_entity: Vec<Vec<(usize, usize)>> = vec![Vec::new(); doc.entities.len()];
    let mut cursor = 0;
    for &(start, end, ei, mi) in &spans {
        out.extend_from_slice(&flat[cursor..start]);
        per_entity[ei].push((mi, out.len()));
        out.push(MARKER);
        out.extend_from_slice(&flat[start..end]);
        out.push(MARKER);
        cursor = end;
    }
    out.extend_from_slice(&flat[cursor..]);
    for (ei, mut recorded) in per_entity.into_iter().enumerate() {
        recorded.sort_unstable();
        positions[ei] = recorded.into_iter().map(|(_, pos)| pos).collect();
    }
    Ok(MarkedDocument {
        token_ids: out,
        mention_positions: positions,
    })
}

/// How [`build_joint_input`] treats documents longer than the length budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverLength {
    /// Drop trailing document tokens (never relation tokens) and warn.
    #[default]
    Truncate,
    /// Refuse the document.
    Error,
}

/// Attach specials and relation tokens:
/// `[CLS] doc [SEP] r_1..r_|R| [SEP]`, capped at `max_len`.
pub fn build_joint_input(
    marked: &MarkedDocument,
    schema: &RelationSchema,
    vocab: &Vocab,
    max_len: usize,
    over_length: OverLength,
) -> Result<JointInput> {
    let n_rel = schema.len();
    if n_rel == 0 {
        return Err(Error::data("relation schema must be non-empty"));
    }
    let specials = n_rel + 3; // CLS + two SEPs + relation tokens
    if max_len <= specials {
        return Err(Error::data(format!(
            "max length {max_len} leaves no room for document tokens ({specials} reserved)"
        )));
    }
    let budget = max_len - specials;
    let doc_len = marked.token_ids.len();
    let kept = if doc_len > budget {
        match over_length {
            OverLength::Error => {
                return Err(Error::data(format!(
                    "document of {doc_len} tokens exceeds budget {budget} (max_len {max_len}, |R| {n_rel})"
                )));
            }
            OverLength::Truncate => {
                log::warn!("truncating document from {doc_len} to {budget} tokens");
                budget
            }
        }
    } else {
        doc_len
    };

    let mut token_ids = Vec::with_capacity(kept + specials);
    token_ids.push(CLS);
    token_ids.extend_from_slice(&marked.token_ids[..kept]);
    token_ids.push(SEP);
    let rel_start = token_ids.len();
    for idx in 0..n_rel {
        token_ids.push(vocab.relation_token_id(idx));
    }
    token_ids.push(SEP);

    let mention_positions: Vec<Vec<usize>> = marked
        .mention_positions
        .iter()
        .map(|ps| ps.iter().filter(|&&p| p < kept).map(|&p| p + 1).collect())
        .collect();
    let valid_len = token_ids.len();
    Ok(JointInput {
        token_ids,
        mention_positions,
        relation_positions: (rel_start..rel_start + n_rel).collect(),
        doc_span: (1, 1 + kept),
        valid_len,
    })
}

/// An ordered entity pair with its (possibly empty) gold label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPair {
    pub head: usize,
    pub tail: usize,
    pub labels: BTreeSet<usize>,
}

/// All ordered pairs (head ≠ tail) with their gold labels; an empty label
/// set is the NA case.
pub fn enumerate_entity_pairs(doc: &Document) -> Vec<EntityPair> {
    let p = doc.entities.len();
    let mut by_pair: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for f in &doc.facts {
        by_pair.entry((f.head, f.tail)).or_default().insert(f.relation);
    }
    let mut pairs = Vec::with_capacity(p.saturating_mul(p.saturating_sub(1)));
    for head in 0..p {
        for tail in 0..p {
            if head == tail {
                continue;
            }
            let labels = by_pair.get(&(head, tail)).cloned().unwrap_or_default();
            pairs.push(EntityPair { head, tail, labels });
        }
    }
    pairs
}

// --- DocRED JSON wire format -----------------------------------------------

#[derive(Serialize, Deserialize)]
struct RawRecord {
    title: String,
    sents: Vec<Vec<String>>,
    #[serde(rename = "vertexSet")]
    vertex_set: Vec<Vec<RawMention>>,
    #[serde(default)]
    labels: Vec<RawLabel>,
}

#[derive(Serialize, Deserialize)]
struct RawMention {
    name: String,
    sent_id: usize,
    pos: [usize; 2],
    #[serde(rename = "type", default)]
    etype: String,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    h: usize,
    t: usize,
    r: String,
    #[serde(default)]
    evidence: Vec<usize>,
}

fn convert_record(idx: usize, raw: RawRecord, schema: &RelationSchema) -> Result<Document> {
    let at = |field: &str, msg: String| Error::data(format!("record {idx} ({field}): {msg}"));
    if raw.vertex_set.is_empty() && !raw.labels.is_empty() {
        return Err(at("vertexSet", "labels present but no entities".into()));
    }
    let mut entities = Vec::with_capacity(raw.vertex_set.len());
    for (ei, raw_entity) in raw.vertex_set.into_iter().enumerate() {
        if raw_entity.is_empty() {
            return Err(at(
                &format!("vertexSet[{ei}]"),
                "entity has no mentions".into(),
            ));
        }
        let mut mentions = Vec::with_capacity(raw_entity.len());
        for (mi, m) in raw_entity.into_iter().enumerate() {
            let field = format!("vertexSet[{ei}][{mi}]");
            let sent = raw
                .sents
                .get(m.sent_id)
                .ok_or_else(|| at(&field, format!("sent_id {} out of range", m.sent_id)))?;
            let [start, end] = m.pos;
            if start >= end || end > sent.len() {
                return Err(at(
                    &field,
                    format!("span [{start},{end}) invalid for sentence of {} tokens", sent.len()),
                ));
            }
            mentions.push(Mention {
                name: m.name,
                sent: m.sent_id,
                start,
                end,
                etype: m.etype,
            });
        }
        entities.push(Entity { mentions });
    }

    // deduplicate on (h, t, r); union evidence
    let mut seen: BTreeMap<(usize, usize, usize), BTreeSet<usize>> = BTreeMap::new();
    let mut order: Vec<(usize, usize, usize)> = Vec::new();
    for (li, label) in raw.labels.into_iter().enumerate() {
        let field = format!("labels[{li}]");
        let relation = schema
            .index_of(&label.r)
            .ok_or_else(|| at(&field, format!("unknown relation id {:?}", label.r)))?;
        if label.h >= entities.len() || label.t >= entities.len() {
            return Err(at(
                &field,
                format!("entity index out of range (h={}, t={}, p={})", label.h, label.t, entities.len()),
            ));
        }
        if label.h == label.t {
            return Err(at(&field, "head and tail are the same entity".into()));
        }
        for &ev in &label.evidence {
            if ev >= raw.sents.len() {
                return Err(at(&field, format!("evidence sentence {ev} out of range")));
            }
        }
        let key = (label.h, label.t, relation);
        match seen.entry(key) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(label.evidence.into_iter().collect());
                order.push(key);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                log::warn!("record {idx}: duplicate fact (h={}, t={}, r={:?}) merged", label.h, label.t, label.r);
                slot.get_mut().extend(label.evidence);
            }
        }
    }
    let facts = order
        .into_iter()
        .map(|key| {
            let evidence = seen.remove(&key).expect("recorded fact");
            Fact {
                head: key.0,
                tail: key.1,
                relation: key.2,
                evidence: evidence.into_iter().collect(),
            }
        })
        .collect();

    Ok(Document {
        id: raw.title,
        sentences: raw.sents,
        entities,
        facts,
    })
}

/// Load a DocRED-format JSON file (an array of records).
pub fn load_dataset(path: impl AsRef<Path>, schema: &RelationSchema) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_dataset(&text, schema).map_err(|e| match e {
        Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse DocRED-format JSON from a string.
pub fn parse_dataset(text: &str, schema: &RelationSchema) -> Result<Vec<Document>> {
    let raw: Vec<RawRecord> = serde_json::from_str(text)
        .map_err(|e| Error::data(format!("not valid DocRED JSON: {e}")))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| convert_record(i, r, schema))
        .collect()
}

/// Serialize documents back to DocRED-format JSON.
pub fn dataset_to_json(docs: &[Document], schema: &RelationSchema) -> String {
    let raw: Vec<RawRecord> = docs
        .iter()
        .map(|d| RawRecord {
            title: d.id.clone(),
            sents: d.sentences.clone(),
            vertex_set: d
                .entities
                .iter()
                .map(|e| {
                    e.mentions
                        .iter()
                        .map(|m| RawMention {
                            name: m.name.clone(),
                            sent_id: m.sent,
                            pos: [m.start, m.end],
                            etype: m.etype.clone(),
                        })
                        .collect()
                })
                .collect(),
            labels: d
                .facts
                .iter()
                .map(|f| RawLabel {
                    h: f.head,
                    t: f.tail,
                    r: schema.id(f.relation).to_string(),
                    evidence: f.evidence.clone(),
                })
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&raw).expect("dataset serializes")
}

pub fn save_dataset(
    docs: &[Document],
    schema: &RelationSchema,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_json(docs, schema))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Render a joint input back to tokens, for debugging.
pub fn render_tokens(input: &JointInput, vocab: &Vocab) -> String {
    let mut s = String::new();
    for (i, &id) in input.token_ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{}", vocab.token(id));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_schema(n: usize) -> RelationSchema {
        RelationSchema::new(
            (0..n)
                .map(|i| (format!("R{i}"), format!("relation {i}")))
                .collect(),
        )
        .unwrap()
    }

    fn two_sentence_doc() -> Document {
        Document {
            id: "fixture".into(),
            sentences: vec![
                vec!["alice".into(), "visited".into(), "paris".into(), ".".into()],
                vec!["she".into(), "loved".into(), "paris".into(), ".".into()],
            ],
            entities: vec![
                Entity {
                    mentions: vec![Mention {
                        name: "alice".into(),
                        sent: 0,
                        start: 0,
                        end: 1,
                        etype: "PER".into(),
                    }],
                },
                Entity {
                    mentions: vec![
                        Mention {
                            name: "paris".into(),
                            sent: 0,
                            start: 2,
                            end: 3,
                            etype: "LOC".into(),
                        },
                        Mention {
                            name: "paris".into(),
                            sent: 1,
                            start: 2,
                            end: 3,
                            etype: "LOC".into(),
                        },
                    ],
                },
            ],
            facts: vec![Fact {
                head: 0,
                tail: 1,
                relation: 1,
                evidence: vec![0],
            }],
        }
    }

    fn docred_json() -> String {
        r#"[
          {
            "title": "fixture",
            "sents": [["alice","visited","paris","."],["she","loved","paris","."]],
            "vertexSet": [
              [{"name":"alice","sent_id":0,"pos":[0,1],"type":"PER"}],
              [{"name":"paris","sent_id":0,"pos":[2,3],"type":"LOC"},
               {"name":"paris","sent_id":1,"pos":[2,3],"type":"LOC"}]
            ],
            "labels": [{"h":0,"t":1,"r":"R1","evidence":[0]}]
          }
        ]"#
        .into()
    }

    #[test]
    fn parses_fixture_field_by_field() {
        let schema = tiny_schema(3);
        let docs = parse_dataset(&docred_json(), &schema).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0], two_sentence_doc());
        assert_eq!(docs[0].entities.len(), 2);
        assert_eq!(docs[0].facts.len(), 1);
    }

    #[test]
    fn empty_dataset_loads_empty() {
        let schema = tiny_schema(2);
        assert!(parse_dataset("[]", &schema).unwrap().is_empty());
    }

    #[test]
    fn unknown_relation_id_is_rejected() {
        let schema = tiny_schema(1); // only R0
        let err = parse_dataset(&docred_json(), &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("record 0"), "{msg}");
        assert!(msg.contains("unknown relation id"), "{msg}");
    }

    #[test]
    fn out_of_range_span_is_rejected() {
        let schema = tiny_schema(2);
        let bad = docred_json().replace("\"pos\":[0,1]", "\"pos\":[0,9]");
        let msg = parse_dataset(&bad, &schema).unwrap_err().to_string();
        assert!(msg.contains("vertexSet[0][0]"), "{msg}");
    }

    #[test]
    fn duplicate_facts_merge_evidence() {
        let schema = tiny_schema(3);
        let dup = docred_json().replace(
            r#"[{"h":0,"t":1,"r":"R1","evidence":[0]}]"#,
            r#"[{"h":0,"t":1,"r":"R1","evidence":[0]},{"h":0,"t":1,"r":"R1","evidence":[1]}]"#,
        );
        let docs = parse_dataset(&dup, &schema).unwrap();
        assert_eq!(docs[0].facts.len(), 1);
        assert_eq!(docs[0].facts[0].evidence, vec![0, 1]);
    }

    #[test]
    fn round_trips_through_docred_json() {
        let schema = tiny_schema(3);
        let docs = parse_dataset(&docred_json(), &schema).unwrap();
        let reparsed = parse_dataset(&dataset_to_json(&docs, &schema), &schema).unwrap();
        assert_eq!(docs, reparsed);
    }

    #[test]
    fn markers_wrap_each_mention() {
        let schema = tiny_schema(2);
        let doc = two_sentence_doc();
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let marked = insert_mention_markers(&doc, &vocab).unwrap();
        // 8 tokens + 2 markers per mention, 3 mentions
        assert_eq!(marked.token_ids.len(), 8 + 6);
        let marker_count = marked.token_ids.iter().filter(|&&t| t == MARKER).count();
        assert_eq!(marker_count, 6);
        // stripping markers recovers the original sequence
        let stripped: Vec<usize> = marked
            .token_ids
            .iter()
            .copied()
            .filter(|&t| t != MARKER)
            .collect();
        let flat: Vec<usize> = doc
            .sentences
            .iter()
            .flatten()
            .map(|w| vocab.word_id(w))
            .collect();
        assert_eq!(stripped, flat);
        // leading markers recorded per entity, in mention order
        assert_eq!(marked.mention_positions[0], vec![0]);
        assert_eq!(marked.mention_positions[1].len(), 2);
        for (ei, positions) in marked.mention_positions.iter().enumerate() {
            for &p in positions {
                assert_eq!(marked.token_ids[p], MARKER, "entity {ei} position {p}");
            }
        }
    }

    #[test]
    fn marker_positions_shift_later_mentions() {
        // one mention at [2,4) in a 6-token sentence: markers at 2 and 5
        let schema = tiny_schema(1);
        let doc = Document {
            id: "shift".into(),
            sentences: vec![(0..6).map(|i| format!("w{i}")).collect()],
            entities: vec![Entity {
                mentions: vec![Mention {
                    name: "w2 w3".into(),
                    sent: 0,
                    start: 2,
                    end: 4,
                    etype: String::new(),
                }],
            }],
            facts: vec![],
        };
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let marked = insert_mention_markers(&doc, &vocab).unwrap();
        assert_eq!(marked.mention_positions[0], vec![2]);
        assert_eq!(marked.token_ids[2], MARKER);
        assert_eq!(marked.token_ids[5], MARKER);
        assert_eq!(marked.token_ids.len(), 8);
    }

    #[test]
    fn no_entities_means_no_markers() {
        let schema = tiny_schema(1);
        let doc = Document {
            id: "plain".into(),
            sentences: vec![vec!["just".into(), "words".into()]],
            entities: vec![],
            facts: vec![],
        };
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let marked = insert_mention_markers(&doc, &vocab).unwrap();
        assert_eq!(marked.token_ids.len(), 2);
        assert!(marked.mention_positions.is_empty());
    }

    #[test]
    fn overlapping_spans_are_rejected() {
        let schema = tiny_schema(1);
        let mut doc = two_sentence_doc();
        doc.entities[0].mentions[0].end = 3; // now overlaps paris at [2,3)
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let msg = insert_mention_markers(&doc, &vocab).unwrap_err().to_string();
        assert!(msg.contains("overlapping mention spans"), "{msg}");
    }

    #[test]
    fn joint_layout_positions() {
        let schema = tiny_schema(4);
        let doc = two_sentence_doc();
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let marked = insert_mention_markers(&doc, &vocab).unwrap();
        let joint =
            build_joint_input(&marked, &schema, &vocab, 128, OverLength::Error).unwrap();
        let d = marked.token_ids.len();
        assert_eq!(joint.token_ids.len(), d + 4 + 3);
        assert_eq!(joint.token_ids[0], CLS);
        assert_eq!(joint.token_ids[1 + d], SEP);
        assert_eq!(*joint.token_ids.last().unwrap(), SEP);
        assert_eq!(joint.relation_positions, vec![d + 2, d + 3, d + 4, d + 5]);
        for (i, &p) in joint.relation_positions.iter().enumerate() {
            assert_eq!(joint.token_ids[p], vocab.relation_token_id(i));
        }
        assert_eq!(joint.doc_span, (1, 1 + d));
        assert_eq!(joint.valid_len, joint.token_ids.len());
        // mention positions all point at markers, shifted by the CLS
        for positions in &joint.mention_positions {
            for &p in positions {
                assert_eq!(joint.token_ids[p], MARKER);
            }
        }
    }

    #[test]
    fn empty_schema_is_rejected() {
        assert!(RelationSchema::new(vec![]).is_err());
    }

    #[test]
    fn truncation_drops_doc_tokens_only() {
        let schema = tiny_schema(2);
        let doc = two_sentence_doc();
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        let marked = insert_mention_markers(&doc, &vocab).unwrap();
        // budget = 10 - (2+3) = 5 document tokens
        let joint = build_joint_input(&marked, &schema, &vocab, 10, OverLength::Truncate).unwrap();
        assert_eq!(joint.token_ids.len(), 10);
        assert_eq!(joint.relation_positions.len(), 2);
        assert_eq!(joint.doc_span, (1, 6));
        // strict mode refuses instead
        let err = build_joint_input(&marked, &schema, &vocab, 10, OverLength::Error);
        assert!(err.is_err());
        // mention positions past the cut are dropped
        let kept: usize = joint.mention_positions.iter().map(Vec::len).sum();
        assert!(kept < 3);
        for positions in &joint.mention_positions {
            for &p in positions {
                assert!(p < 6);
            }
        }
    }

    #[test]
    fn pair_enumeration_counts() {
        let mut doc = two_sentence_doc();
        doc.entities.push(Entity {
            mentions: vec![Mention {
                name: "she".into(),
                sent: 1,
                start: 0,
                end: 1,
                etype: "PER".into(),
            }],
        });
        let pairs = enumerate_entity_pairs(&doc);
        assert_eq!(pairs.len(), 6); // p=3
        let labeled: Vec<_> = pairs.iter().filter(|p| !p.labels.is_empty()).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!((labeled[0].head, labeled[0].tail), (0, 1));
    }

    #[test]
    fn single_entity_has_no_pairs() {
        let mut doc = two_sentence_doc();
        doc.entities.truncate(1);
        doc.facts.clear();
        assert!(enumerate_entity_pairs(&doc).is_empty());
    }

    #[test]
    fn multi_label_pair_collects_all_relations() {
        let mut doc = two_sentence_doc();
        doc.facts.push(Fact {
            head: 0,
            tail: 1,
            relation: 2,
            evidence: vec![],
        });
        let pairs = enumerate_entity_pairs(&doc);
        let labeled: Vec<_> = pairs.iter().filter(|p| !p.labels.is_empty()).collect();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].labels.len(), 2);
    }

    #[test]
    fn every_fact_lands_in_exactly_one_pair() {
        let mut doc = two_sentence_doc();
        doc.facts.push(Fact {
            head: 1,
            tail: 0,
            relation: 0,
            evidence: vec![],
        });
        let pairs = enumerate_entity_pairs(&doc);
        let total: usize = pairs.iter().map(|p| p.labels.len()).sum();
        assert_eq!(total, doc.facts.len());
    }

    #[test]
    fn vocab_reserves_relation_ids() {
        let schema = tiny_schema(3);
        let doc = two_sentence_doc();
        let vocab = Vocab::from_corpus(std::slice::from_ref(&doc), &schema);
        assert_eq!(vocab.relation_token_id(0), 5);
        assert_eq!(vocab.relation_token_id(2), 7);
        assert_eq!(vocab.word_id("paris"), vocab.word_id("paris"));
        assert_eq!(vocab.word_id("never-seen"), UNK);
        // round-trip through serde keeps lookups working
        let json = serde_json::to_string(&vocab).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back.word_id("paris"), vocab.word_id("paris"));
        assert_eq!(back, vocab);
    }
}
