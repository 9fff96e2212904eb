//! Synthetic corpus generator with planted relation co-occurrence.
//!
//! Eight relations are wired into four fixed partnerships: relation r
//! always appears in the same document as `r ^ 1`. Even relations are
//! cued by a trigger word unique to them; odd relations share an
//! ambiguous trigger with another partnership, so resolving them
//! requires the document context or the co-occurrence structure. This
//! gives small, fast corpora where correlation-aware models have a
//! measurable edge over pair-only baselines.

use crate::corpus::{Document, Entity, Fact, Mention, RelationSchema};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_RELATIONS: usize = 8;

/// The relation each relation is planted to co-occur with.
pub fn planted_partner(relation: usize) -> usize {
    relation ^ 1
}

/// Schema for the eight synthetic relations.
pub fn schema() -> RelationSchema {
    let entries = (0..N_RELATIONS)
        .map(|i| (format!("R{i}"), format!("relation-{i}")))
        .collect();
    RelationSchema::new(entries).expect("static schema is valid")
}

const ENTITY_POOL: [&str; 16] = [
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor",
    "iris", "juniper", "krill", "lagoon", "maple", "nettle", "onyx", "pumice",
];

const FILLER_POOL: [&str; 56] = [
    "the", "a", "near", "old", "new", "quiet", "broad", "while", "then",
    "still", "under", "over", "beside", "during", "plain", "worn", "bright",
    "pale", "deep", "thin", "gray", "long", "short", "early", "late", "warm",
    "cold", "dry", "wet", "high", "low", "inner", "outer", "rough", "smooth",
    "dark", "light", "heavy", "soft", "loud", "faint", "wide", "narrow",
    "steep", "flat", "round", "sharp", "dull", "fresh", "stale", "calm",
    "wild", "bare", "dense", "sparse", "clear",
];

fn unique_trigger(relation: usize) -> String {
    format!("trig{relation}")
}

/// Partnerships 0 and 1 share `amb0`; partnerships 2 and 3 share `amb1`.
fn ambiguous_trigger(group: usize) -> String {
    format!("amb{}", group / 2)
}

fn filler_words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| FILLER_POOL[rng.random_range(0..FILLER_POOL.len())].to_string())
        .collect()
}

/// Build one document for partnership `group` (0..=3). Sentence one
/// expresses the even relation `2*group` with its unique trigger;
/// sentence two expresses `2*group + 1` with the shared ambiguous
/// trigger. Four distinct entities participate, two per sentence.
fn generate_document(id: String, group: usize, rng: &mut ChaCha8Rng) -> Document {
    let picks = rand::seq::index::sample(rng, ENTITY_POOL.len(), 4).into_vec();
    let names: Vec<&str> = picks.iter().map(|&i| ENTITY_POOL[i]).collect();

    let r_even = 2 * group;
    let r_odd = 2 * group + 1;

    let mut sentences = Vec::new();
    let mut mentions: Vec<Vec<Mention>> = vec![Vec::new(); 4];

    // sentence layout: [filler*] head trigger tail [filler*]
    let mut build_sentence =
        |sent: usize, head: usize, tail: usize, trigger: String, rng: &mut ChaCha8Rng| {
            let lead = rng.random_range(0..=2);
            let trail = rng.random_range(1..=2);
            let mut words = filler_words(rng, lead);
            let head_pos = words.len();
            words.push(names[head].to_string());
            words.push(trigger);
            let tail_pos = words.len();
            words.push(names[tail].to_string());
            words.extend(filler_words(rng, trail));
            mentions[head].push(Mention {
                name: names[head].to_string(),
                sent,
                start: head_pos,
                end: head_pos + 1,
                etype: "ENT".to_string(),
            });
            mentions[tail].push(Mention {
                name: names[tail].to_string(),
                sent,
                start: tail_pos,
                end: tail_pos + 1,
                etype: "ENT".to_string(),
            });
            words
        };

    sentences.push(build_sentence(0, 0, 1, unique_trigger(r_even), rng));
    sentences.push(build_sentence(1, 2, 3, ambiguous_trigger(group), rng));

    let entities = mentions.into_iter().map(|m| Entity { mentions: m }).collect();
    let facts = vec![
        Fact {
            head: 0,
            tail: 1,
            relation: r_even,
            evidence: vec![0],
        },
        Fact {
            head: 2,
            tail: 3,
            relation: r_odd,
            evidence: vec![1],
        },
    ];

    Document {
        id,
        sentences,
        entities,
        facts,
    }
}

/// Generate `n_docs` documents cycling through the four partnerships in a
/// shuffled order, deterministically from `seed`.
pub fn generate_corpus(n_docs: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<usize> = (0..n_docs).map(|i| i % 4).collect();
    groups.shuffle(&mut rng);
    groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| generate_document(format!("synth-{seed}-{i:03}"), g, &mut rng))
        .collect()
}
