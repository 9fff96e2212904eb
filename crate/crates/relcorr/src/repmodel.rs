//! Per-entity-pair features and the grouped bilinear relation scorer.
//!
//! Entities pool their mention embeddings with log-sum-exp. Each pair gets a
//! context vector (document tokens weighted by the product of the two
//! entities' attention) and a relation-aggregated embedding (relation tokens
//! weighted the same way). The scorer fuses pooled embeddings with those
//! signals through tanh projections and scores every relation with one small
//! bilinear form per feature group.

use crate::autograd::{BoundParams, ParamSet, Tape, Var};
use crate::corpus::JointInput;
use crate::encoder::EncoderForward;
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape and mode of the pair classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub d_h: usize,
    pub n_relations: usize,
    /// Number of bilinear groups; must divide `d_h`.
    pub k: usize,
    /// Feed the relation-aggregated embedding alongside the context vector.
    pub use_correlation: bool,
}

impl ClassifierConfig {
    pub fn new(d_h: usize, n_relations: usize, use_correlation: bool) -> Self {
        ClassifierConfig {
            d_h,
            n_relations,
            k: default_group_count(d_h),
            use_correlation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.n_relations == 0 || self.k == 0 {
            return Err(Error::data("classifier config: sizes must be positive"));
        }
        if !self.d_h.is_multiple_of(self.k) {
            return Err(Error::data(format!(
                "classifier config: d_h {} not divisible by group count {}",
                self.d_h, self.k
            )));
        }
        Ok(())
    }
}

/// Default group count keeps each bilinear group 8 features wide.
pub fn default_group_count(d_h: usize) -> usize {
    (d_h / 8).max(1)
}

/// Initialize classifier tensors. Names depend on the mode: the correlation
/// variant maps the concatenated `[c; r_so]` through wide projections, the
/// base variant maps `c` alone.
pub fn init_classifier(config: &ClassifierConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let d = config.d_h;
    let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
    };
    params.insert("clf.w_s", glorot(&mut rng, d, d));
    params.insert("clf.w_o", glorot(&mut rng, d, d));
    if config.use_correlation {
        params.insert("clf.w_pair_s", glorot(&mut rng, 2 * d, d));
        params.insert("clf.w_pair_o", glorot(&mut rng, 2 * d, d));
    } else {
        params.insert("clf.w_ctx_s", glorot(&mut rng, d, d));
        params.insert("clf.w_ctx_o", glorot(&mut rng, d, d));
    }
    let gs = d / config.k;
    params.insert(
        "clf.bilinear",
        glorot(&mut rng, config.k * gs * gs, config.n_relations),
    );
    params.insert("clf.bias", Array2::zeros((1, config.n_relations)));
    params
}

/// Log-sum-exp pooling of the hidden rows at the given positions: a smooth
/// maximum over an entity's mentions.
pub fn pool_entity(tape: &mut Tape, h: Var, positions: &[usize]) -> Result<Var> {
    if positions.is_empty() {
        return Err(Error::data("cannot pool an entity with no mention positions"));
    }
    let rows = tape.gather_rows(h, positions);
    Ok(tape.logsumexp_rows(rows))
}

/// Per-head attention of an entity: the mean of its mentions' attention
/// rows. Each result is a `1×L` simplex vector per head.
pub fn entity_attention(tape: &mut Tape, attn: &[Var], positions: &[usize]) -> Result<Vec<Var>> {
    if positions.is_empty() {
        return Err(Error::data("cannot average attention over zero mentions"));
    }
    Ok(attn
        .iter()
        .map(|&a| {
            let rows = tape.gather_rows(a, positions);
            tape.mean_rows(rows)
        })
        .collect())
}

/// Weight `keys` rows by the sum-normalized per-head product of two
/// attention slices. If the product mass is (numerically) zero, fall back to
/// uniform weights over the keys instead of dividing by zero.
fn aggregate_by_attention(tape: &mut Tape, keys: Var, a_s: &[Var], a_o: &[Var]) -> Var {
    assert_eq!(a_s.len(), a_o.len());
    assert!(!a_s.is_empty());
    let mut acc = tape.mul(a_s[0], a_o[0]);
    for h in 1..a_s.len() {
        let m = tape.mul(a_s[h], a_o[h]);
        acc = tape.add(acc, m);
    }
    let total = tape.sum_all(acc);
    let weights = if tape.scalar(total) < 1e-12 {
        let n = tape.value(acc).ncols();
        tape.constant(Array2::from_elem((1, n), 1.0 / n as f64))
    } else {
        tape.div_scalar_var(acc, total)
    };
    tape.matmul(weights, keys)
}

/// Context vector of a pair: document-token hidden states weighted by the
/// normalized product of the two entities' attention over document tokens.
/// `a_s`/`a_o` are full-length per-head attention rows (`1×L`); the document
/// span restricts both the keys and the weights, so CLS, SEP and relation
/// tokens never contribute.
pub fn context_vector(
    tape: &mut Tape,
    h: Var,
    doc_span: (usize, usize),
    a_s: &[Var],
    a_o: &[Var],
) -> Var {
    let (lo, hi) = doc_span;
    let idx: Vec<usize> = (lo..hi).collect();
    let keys = tape.gather_rows(h, &idx);
    let s: Vec<Var> = a_s.iter().map(|&a| tape.slice_cols(a, lo, hi)).collect();
    let o: Vec<Var> = a_o.iter().map(|&a| tape.slice_cols(a, lo, hi)).collect();
    aggregate_by_attention(tape, keys, &s, &o)
}

/// Relation-aggregated embedding of a pair: relation-token hidden states
/// weighted by the normalized product of the two entities' token-to-relation
/// attention.
pub fn relation_aggregated_embedding(
    tape: &mut Tape,
    h: Var,
    relation_positions: &[usize],
    a_s: &[Var],
    a_o: &[Var],
) -> Var {
    let lo = relation_positions[0];
    let hi = lo + relation_positions.len();
    debug_assert!(
        relation_positions.iter().enumerate().all(|(i, &p)| p == lo + i),
        "relation token positions must be contiguous"
    );
    let idx: Vec<usize> = (lo..hi).collect();
    let keys = tape.gather_rows(h, &idx);
    let s: Vec<Var> = a_s.iter().map(|&a| tape.slice_cols(a, lo, hi)).collect();
    let o: Vec<Var> = a_o.iter().map(|&a| tape.slice_cols(a, lo, hi)).collect();
    aggregate_by_attention(tape, keys, &s, &o)
}

/// Grouped bilinear scoring of fused pair features: split each feature
/// vector into `k` groups, score each group with its own bilinear form per
/// relation, and sum. Inputs are `P×d_h`, output `P×|R|` logits.
pub fn bilinear_score(
    tape: &mut Tape,
    f_s: Var,
    f_o: Var,
    bound: &BoundParams,
    k: usize,
) -> Var {
    let g = tape.grouped_outer(f_s, f_o, k);
    let m = tape.matmul(g, bound.var("clf.bilinear"));
    tape.add_row(m, bound.var("clf.bias"))
}

/// Score all relations for a batch of pairs. Rows of `h_s`/`h_o`/`c` (and
/// `r_so` when correlation features are on) correspond pairwise. Returns raw
/// logits; the sigmoid lives in the loss and at inference.
pub fn pair_logits(
    tape: &mut Tape,
    h_s: Var,
    h_o: Var,
    c: Var,
    r_so: Option<Var>,
    bound: &BoundParams,
    config: &ClassifierConfig,
) -> Var {
    let (extra_s, extra_o) = if config.use_correlation {
        let r = r_so.expect("correlation mode needs a relation-aggregated embedding");
        let z = tape.concat_cols(c, r);
        (
            tape.matmul(z, bound.var("clf.w_pair_s")),
            tape.matmul(z, bound.var("clf.w_pair_o")),
        )
    } else {
        (
            tape.matmul(c, bound.var("clf.w_ctx_s")),
            tape.matmul(c, bound.var("clf.w_ctx_o")),
        )
    };
    let f_s = {
        let m = tape.matmul(h_s, bound.var("clf.w_s"));
        let sum = tape.add(m, extra_s);
        tape.tanh(sum)
    };
    let f_o = {
        let m = tape.matmul(h_o, bound.var("clf.w_o"));
        let sum = tape.add(m, extra_o);
        tape.tanh(sum)
    };
    bilinear_score(tape, f_s, f_o, bound, config.k)
}

/// Per-pair feature rows for one document, stacked `P×d_h`.
pub struct PairBatch {
    pub h_s: Var,
    pub h_o: Var,
    pub c: Var,
    pub r_so: Var,
}

/// Build pooled embeddings, context vectors and relation-aggregated
/// embeddings for the given (head, tail) pairs of one encoded document.
/// Errors if any involved entity lost all its mentions (e.g. to truncation).
pub fn build_pair_batch(
    tape: &mut Tape,
    fwd: &EncoderForward,
    input: &JointInput,
    pairs: &[(usize, usize)],
) -> Result<PairBatch> {
    assert!(!pairs.is_empty());
    let n_entities = input.mention_positions.len();
    let mut pooled: Vec<Option<Var>> = vec![None; n_entities];
    let mut attn_rows: Vec<Option<Vec<Var>>> = vec![None; n_entities];
    let mut involved: Vec<usize> = pairs.iter().flat_map(|&(s, o)| [s, o]).collect();
    involved.sort_unstable();
    involved.dedup();
    for &e in &involved {
        let positions = &input.mention_positions[e];
        if positions.is_empty() {
            return Err(Error::data(format!(
                "entity {e} has no mention positions (all truncated?)"
            )));
        }
        pooled[e] = Some(pool_entity(tape, fwd.h, positions)?);
        attn_rows[e] = Some(entity_attention(tape, &fwd.attn, positions)?);
    }
    let mut hs_rows = Vec::with_capacity(pairs.len());
    let mut ho_rows = Vec::with_capacity(pairs.len());
    let mut c_rows = Vec::with_capacity(pairs.len());
    let mut r_rows = Vec::with_capacity(pairs.len());
    for &(s, o) in pairs {
        let a_s = attn_rows[s].as_ref().expect("precomputed").clone();
        let a_o = attn_rows[o].as_ref().expect("precomputed").clone();
        hs_rows.push(pooled[s].expect("precomputed"));
        ho_rows.push(pooled[o].expect("precomputed"));
        c_rows.push(context_vector(tape, fwd.h, input.doc_span, &a_s, &a_o));
        r_rows.push(relation_aggregated_embedding(
            tape,
            fwd.h,
            &input.relation_positions,
            &a_s,
            &a_o,
        ));
    }
    Ok(PairBatch {
        h_s: tape.concat_rows(&hs_rows),
        h_o: tape.concat_rows(&ho_rows),
        c: tape.concat_rows(&c_rows),
        r_so: tape.concat_rows(&r_rows),
    })
}

/// Detached feature bundle for one pair, for debugging and export.
#[derive(Debug, Clone, Serialize)]
pub struct PairFeatures {
    pub head: usize,
    pub tail: usize,
    pub h_s: Vec<f64>,
    pub h_o: Vec<f64>,
    pub c: Vec<f64>,
    pub r_so: Vec<f64>,
    pub logits: Vec<f64>,
}
