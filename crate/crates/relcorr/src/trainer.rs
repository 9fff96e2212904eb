//! Training loop: joint optimization of the relation classifier and the two
//! co-occurrence subtasks, with AdamW, linear warmup/decay, gradient
//! clipping, dev-based threshold selection and best-checkpoint retention.

use crate::autograd::{ParamSet, Tape, Var};
use crate::cooccur::{self, plan_crcp_examples, plan_frcp_examples, realize_examples};
use crate::corpus::{
    build_joint_input, enumerate_entity_pairs, insert_mention_markers, Document, JointInput,
    OverLength, RelationSchema, Vocab,
};
use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluator::{micro_f1, PredictionSet, Triplet};
use crate::repmodel::{build_pair_batch, pair_logits, ClassifierConfig};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Encoder shape settings as they appear in config files; vocabulary size
/// and seed are supplied by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub d_h: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub ffn_width: usize,
    pub dropout: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            d_h: 64,
            n_heads: 4,
            layers: 2,
            max_len: 256,
            ffn_width: 256,
            dropout: 0.1,
        }
    }
}

impl EncoderSettings {
    pub fn to_encoder_config(&self, vocab_size: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            d_h: self.d_h,
            n_heads: self.n_heads,
            layers: self.layers,
            max_len: self.max_len,
            vocab_size,
            ffn_width: self.ffn_width,
            dropout: self.dropout,
            seed,
        }
    }
}

/// Everything that controls a training run. Serializable as JSON or TOML;
/// omitted fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate for tensors named `encoder.*`.
    pub lr_encoder: f64,
    /// Learning rate for everything else (classifier, subtask heads).
    pub lr_other: f64,
    /// Fraction of total optimizer steps spent in linear warmup.
    pub warmup_ratio: f64,
    /// Weight of the coarse subtask inside the correlation loss.
    pub alpha: f64,
    /// Balance between main and correlation loss in the combined objective.
    pub beta: f64,
    pub neg_per_pos_coarse: usize,
    pub neg_per_pos_fine: usize,
    /// Candidate decision thresholds, each in (0, 1).
    pub threshold_grid: Vec<f64>,
    pub seed: u64,
    /// Off: plain pair classifier, no relation-aggregated features and no
    /// co-occurrence subtasks.
    pub use_correlation: bool,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    /// Refuse over-length documents instead of truncating them.
    pub strict_length: bool,
    /// Stop early once train micro F1 reaches this value (checked per epoch).
    pub stop_at_train_f1: Option<f64>,
    /// Override the bilinear group count; defaults to d_h / 8.
    pub group_count: Option<usize>,
    pub encoder: EncoderSettings,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 4,
            epochs: 30,
            lr_encoder: 5e-5,
            lr_other: 1e-4,
            warmup_ratio: 0.06,
            alpha: 0.7,
            beta: 0.5,
            neg_per_pos_coarse: 3,
            neg_per_pos_fine: 3,
            threshold_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            seed: 17,
            use_correlation: true,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            strict_length: false,
            stop_at_train_f1: None,
            group_count: None,
            encoder: EncoderSettings::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::data("batch_size must be at least 1"));
        }
        for (name, lr) in [("lr_encoder", self.lr_encoder), ("lr_other", self.lr_other)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::data(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::data("warmup_ratio must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::data("alpha must lie in [0, 1]"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::data("beta must be positive"));
        }
        if self.threshold_grid.is_empty() {
            return Err(Error::data("threshold_grid must be non-empty"));
        }
        if self.threshold_grid.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
            return Err(Error::data("thresholds must lie strictly between 0 and 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::data("weight_decay must be non-negative"));
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm > 0.0) {
            return Err(Error::data("max_grad_norm must be positive"));
        }
        Ok(())
    }

    /// Read a config from a `.json` or `.toml` file; other extensions are
    /// sniffed by content.
    pub fn load(path: impl AsRef<Path>) -> Result<TrainingConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let by_ext = path.extension().and_then(|e| e.to_str()).map(str::to_lowercase);
        let config: TrainingConfig = match by_ext.as_deref() {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::json(path.display().to_string(), e))?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?,
            _ => {
                if text.trim_start().starts_with('{') {
                    serde_json::from_str(&text)
                        .map_err(|e| Error::json(path.display().to_string(), e))?
                } else {
                    toml::from_str(&text)
                        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
                }
            }
        };
        config.validate()?;
        Ok(config)
    }
}

/// Mean-over-pairs binary cross-entropy of one document's logits against
/// its multi-hot labels (summed over relations per pair).
pub fn re_loss(tape: &mut Tape, logits: Var, labels: &Array2<f64>) -> Var {
    let n = labels.nrows().max(1);
    let sum = tape.bce_with_logits_sum(logits, labels);
    tape.scale(sum, 1.0 / n as f64)
}

/// Beta-weighted harmonic combination of the main and correlation losses:
/// `(1 + β²)·a·b / (β²·b + a)`, with 0 when both are 0.
pub fn harmonic_combine(l_re: f64, l_col: f64, beta: f64) -> f64 {
    if l_re == l_col {
        // the formula reduces to l_re algebraically; short-circuiting keeps
        // the identity exact in floating point (and covers the 0/0 case)
        return l_re;
    }
    let b2 = beta * beta;
    (1.0 + b2) * l_re * l_col / (b2 * l_col + l_re)
}

/// Full combined objective on plain scalars: the correlation loss is
/// `α·coarse + (1−α)·fine`, folded harmonically into the main loss.
pub fn combine_losses(l_re: f64, l_coarse: f64, l_fine: f64, alpha: f64, beta: f64) -> f64 {
    harmonic_combine(l_re, alpha * l_coarse + (1.0 - alpha) * l_fine, beta)
}

/// Tape version of [`harmonic_combine`] for 1×1 loss nodes. When both
/// current values are zero the result is pinned to zero (the formula is
/// 0/0 there); gradients then vanish by construction.
pub fn combine_on_tape(tape: &mut Tape, l_re: Var, l_col: Var, beta: f64) -> Var {
    if tape.scalar(l_re) == 0.0 && tape.scalar(l_col) == 0.0 {
        let sum = tape.add(l_re, l_col);
        return tape.scale(sum, 0.0);
    }
    let b2 = beta * beta;
    let prod = tape.mul(l_re, l_col);
    let num = tape.scale(prod, 1.0 + b2);
    let scaled_col = tape.scale(l_col, b2);
    let den = tape.add(scaled_col, l_re);
    tape.div(num, den)
}

/// Linear warmup to 1 over `warmup` steps, then linear decay to 0 at
/// `total`. `factor(0) = 0` when warmup is on, `factor(warmup) = 1`,
/// `factor(total) = 0`.
pub fn schedule_factor(step: usize, warmup: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let step = step.min(total);
    if warmup > 0 && step < warmup {
        return step as f64 / warmup as f64;
    }
    if total == warmup {
        return if step >= total { 0.0 } else { 1.0 };
    }
    (total - step) as f64 / (total - warmup) as f64
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Array2<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

/// AdamW with decoupled weight decay. Decay is skipped for single-row
/// tensors (biases, layer-norm scales), the usual no-decay set.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Array2<f64>>,
        lr_for: impl Fn(&str) -> f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            let lr = lr_for(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let p = params.get_mut(name);
            let decay = if p.nrows() > 1 { self.weight_decay } else { 0.0 };
            for ((pv, gv), (mv, vv)) in
                p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *pv);
            }
        }
    }
}

/// One document preprocessed for the model: joint input, scorable pairs
/// and their label matrix, plus the index sets the subtasks sample from.
struct Prepared {
    id: String,
    input: JointInput,
    pairs: Vec<(usize, usize)>,
    labels: Array2<f64>,
    /// Sorted unique relations expressed by the kept pairs.
    r_plus: Vec<usize>,
    /// Pair-row indices with at least one label / with none.
    non_na: Vec<usize>,
    na: Vec<usize>,
}

fn prepare_document(
    doc: &Document,
    schema: &RelationSchema,
    vocab: &Vocab,
    max_len: usize,
    over: OverLength,
) -> Result<Option<Prepared>> {
    let marked = insert_mention_markers(doc, vocab)?;
    let input = build_joint_input(&marked, schema, vocab, max_len, over)?;
    let mut pairs = Vec::new();
    let mut label_sets = Vec::new();
    for pair in enumerate_entity_pairs(doc) {
        if input.mention_positions[pair.head].is_empty()
            || input.mention_positions[pair.tail].is_empty()
        {
            log::warn!(
                "document {}: dropping pair ({}, {}), mentions lost to truncation",
                doc.id,
                pair.head,
                pair.tail
            );
            continue;
        }
        pairs.push((pair.head, pair.tail));
        label_sets.push(pair.labels);
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut labels = Array2::zeros((pairs.len(), schema.len()));
    let mut r_plus = std::collections::BTreeSet::new();
    let mut non_na = Vec::new();
    let mut na = Vec::new();
    for (row, set) in label_sets.iter().enumerate() {
        for &r in set {
            labels[[row, r]] = 1.0;
            r_plus.insert(r);
        }
        if set.is_empty() {
            na.push(row);
        } else {
            non_na.push(row);
        }
    }
    Ok(Some(Prepared {
        id: doc.id.clone(),
        input,
        pairs,
        labels,
        r_plus: r_plus.into_iter().collect(),
        non_na,
        na,
    }))
}

/// Per-document relation probabilities at inference time.
#[derive(Debug, Clone)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub pairs: Vec<(usize, usize)>,
    /// `pairs.len() × |R|` sigmoid probabilities.
    pub probs: Array2<f64>,
}

fn score_prepared(
    params: &ParamSet,
    enc_cfg: &EncoderConfig,
    clf_cfg: &ClassifierConfig,
    prep: &Prepared,
) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fwd = encoder::forward(&mut tape, &bound, enc_cfg, &prep.input, None);
    let pb = build_pair_batch(&mut tape, &fwd, &prep.input, &prep.pairs)?;
    let r_so = clf_cfg.use_correlation.then_some(pb.r_so);
    let logits = pair_logits(&mut tape, pb.h_s, pb.h_o, pb.c, r_so, &bound, clf_cfg);
    let probs = tape.value(logits).mapv(crate::autograd::sigmoid);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite probabilities while scoring document {}",
            prep.id
        )));
    }
    Ok(probs)
}

/// Triplets whose probability exceeds the threshold, with scores attached.
pub fn predictions_at(scored: &[ScoredDoc], threshold: f64) -> PredictionSet {
    let mut set = PredictionSet::new();
    for doc in scored {
        for (row, &(head, tail)) in doc.pairs.iter().enumerate() {
            for r in 0..doc.probs.ncols() {
                let p = doc.probs[[row, r]];
                if p > threshold {
                    set.insert(
                        Triplet {
                            doc: doc.doc_id.clone(),
                            head,
                            tail,
                            relation: r,
                        },
                        Some(p),
                    );
                }
            }
        }
    }
    set
}

/// Pick the grid threshold maximizing micro F1 against `gold`. Ties go to
/// the smallest threshold; the grid is scanned in ascending order.
pub fn select_threshold(
    scored: &[ScoredDoc],
    gold: &PredictionSet,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::data("threshold grid is empty"));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<(f64, f64)> = None;
    for &tau in &grid {
        let (_, _, f1) = micro_f1(&predictions_at(scored, tau), gold);
        match best {
            Some((_, best_f1)) if f1 <= best_f1 => {}
            _ => best = Some((tau, f1)),
        }
    }
    Ok(best.expect("non-empty grid"))
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(rename = "L_re")]
    pub l_re: f64,
    #[serde(rename = "L_coarse")]
    pub l_coarse: f64,
    #[serde(rename = "L_fine")]
    pub l_fine: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "dev_F1")]
    pub dev_f1: f64,
    pub lr: f64,
}

/// A trained (or freshly initialized) model with everything needed to
/// score documents: tensors, configs, vocabulary, schema and the selected
/// decision threshold.
pub struct TrainedModel {
    pub encoder_config: EncoderConfig,
    pub classifier_config: ClassifierConfig,
    pub train_config: TrainingConfig,
    pub params: ParamSet,
    pub vocab: Vocab,
    pub schema: RelationSchema,
    pub threshold: f64,
    pub best_dev_f1: f64,
    pub history: Vec<EpochLog>,
}

impl TrainedModel {
    pub fn score_documents(&self, docs: &[Document]) -> Result<Vec<ScoredDoc>> {
        let over = if self.train_config.strict_length {
            OverLength::Error
        } else {
            OverLength::Truncate
        };
        let mut out = Vec::with_capacity(docs.len());
        for doc in docs {
            let prep = prepare_document(
                doc,
                &self.schema,
                &self.vocab,
                self.encoder_config.max_len,
                over,
            )?;
            out.push(match prep {
                Some(p) => {
                    let probs = score_prepared(
                        &self.params,
                        &self.encoder_config,
                        &self.classifier_config,
                        &p,
                    )?;
                    ScoredDoc {
                        doc_id: p.id,
                        pairs: p.pairs,
                        probs,
                    }
                }
                None => ScoredDoc {
                    doc_id: doc.id.clone(),
                    pairs: Vec::new(),
                    probs: Array2::zeros((0, self.schema.len())),
                },
            });
        }
        Ok(out)
    }

    pub fn predict(&self, docs: &[Document]) -> Result<PredictionSet> {
        self.predict_with_threshold(docs, self.threshold)
    }

    pub fn predict_with_threshold(
        &self,
        docs: &[Document],
        threshold: f64,
    ) -> Result<PredictionSet> {
        Ok(predictions_at(&self.score_documents(docs)?, threshold))
    }

    /// One embedding row per relation: the relation token's contextual
    /// state averaged over the documents expressing that relation, so the
    /// embedding reflects the contexts the relation actually occurs in.
    /// Relations expressed nowhere fall back to the mean over all
    /// documents; with no documents at all, to the static relation token
    /// embeddings.
    pub fn relation_embeddings(&self, docs: &[Document]) -> Result<Array2<f64>> {
        let n_rel = self.schema.len();
        let d = self.encoder_config.d_h;
        if docs.is_empty() {
            let tok = self.params.get("encoder.tok_emb");
            let mut out = Array2::zeros((n_rel, d));
            for r in 0..n_rel {
                out.row_mut(r)
                    .assign(&tok.row(self.vocab.relation_token_id(r)));
            }
            return Ok(out);
        }
        let over = if self.train_config.strict_length {
            OverLength::Error
        } else {
            OverLength::Truncate
        };
        let mut expressed_sum = Array2::<f64>::zeros((n_rel, d));
        let mut expressed_docs = vec![0usize; n_rel];
        let mut all_sum = Array2::<f64>::zeros((n_rel, d));
        for doc in docs {
            let marked = insert_mention_markers(doc, &self.vocab)?;
            let input = build_joint_input(
                &marked,
                &self.schema,
                &self.vocab,
                self.encoder_config.max_len,
                over,
            )?;
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let fwd = encoder::forward(&mut tape, &bound, &self.encoder_config, &input, None);
            let h = tape.value(fwd.h);
            let expressed = doc.relation_set();
            for (r, &pos) in input.relation_positions.iter().enumerate() {
                let hit = expressed.contains(&r);
                for c in 0..d {
                    all_sum[[r, c]] += h[[pos, c]];
                    if hit {
                        expressed_sum[[r, c]] += h[[pos, c]];
                    }
                }
                if hit {
                    expressed_docs[r] += 1;
                }
            }
        }
        let mut out = Array2::zeros((n_rel, d));
        for r in 0..n_rel {
            for c in 0..d {
                out[[r, c]] = if expressed_docs[r] > 0 {
                    expressed_sum[[r, c]] / expressed_docs[r] as f64
                } else {
                    all_sum[[r, c]] / docs.len() as f64
                };
            }
        }
        Ok(out)
    }

    /// Write `<stem>.json` (manifest) and `<stem>.tensors` (raw
    /// little-endian f64 data). Loading restores tensors bit for bit.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let stem = stem.as_ref();
        let manifest_path = stem.with_extension("json");
        let tensor_path = stem.with_extension("tensors");
        let mut metas = Vec::new();
        let mut buf: Vec<u8> = Vec::new();
        for (name, arr) in self.params.iter() {
            metas.push(TensorMeta {
                name: name.clone(),
                rows: arr.nrows(),
                cols: arr.ncols(),
                offset: buf.len() / 8,
            });
            for v in arr.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: 1,
            encoder_config: self.encoder_config.clone(),
            classifier_config: self.classifier_config.clone(),
            train_config: self.train_config.clone(),
            threshold: self.threshold,
            best_dev_f1: self.best_dev_f1,
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            history: self.history.clone(),
            tensors: metas,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, json)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        std::fs::write(&tensor_path, buf)
            .map_err(|e| Error::io(tensor_path.display().to_string(), e))?;
        Ok((manifest_path, tensor_path))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<TrainedModel> {
        let stem = stem.as_ref();
        let manifest_path = stem.with_extension("json");
        let tensor_path = stem.with_extension("tensors");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
        let bytes = std::fs::read(&tensor_path)
            .map_err(|e| Error::io(tensor_path.display().to_string(), e))?;
        let total: usize = manifest.tensors.iter().map(|t| t.rows * t.cols).sum();
        if bytes.len() != total * 8 {
            return Err(Error::data(format!(
                "tensor file {} holds {} bytes, manifest expects {}",
                tensor_path.display(),
                bytes.len(),
                total * 8
            )));
        }
        let mut params = ParamSet::new();
        for meta in &manifest.tensors {
            let start = meta.offset * 8;
            let end = start + meta.rows * meta.cols * 8;
            if end > bytes.len() {
                return Err(Error::data(format!(
                    "tensor {} overruns the tensor file",
                    meta.name
                )));
            }
            let values: Vec<f64> = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let arr = Array2::from_shape_vec((meta.rows, meta.cols), values)
                .map_err(|e| Error::data(format!("tensor {}: {e}", meta.name)))?;
            params.insert(meta.name.clone(), arr);
        }
        let mut schema = manifest.schema;
        schema.rebuild_index();
        Ok(TrainedModel {
            encoder_config: manifest.encoder_config,
            classifier_config: manifest.classifier_config,
            train_config: manifest.train_config,
            params,
            vocab: manifest.vocab,
            schema,
            threshold: manifest.threshold,
            best_dev_f1: manifest.best_dev_f1,
            history: manifest.history,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset in f64 elements from the start of the tensor file.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    encoder_config: EncoderConfig,
    classifier_config: ClassifierConfig,
    train_config: TrainingConfig,
    threshold: f64,
    best_dev_f1: f64,
    schema: RelationSchema,
    vocab: Vocab,
    history: Vec<EpochLog>,
    tensors: Vec<TensorMeta>,
}

fn init_all_parameters(
    enc_cfg: &EncoderConfig,
    clf_cfg: &ClassifierConfig,
    seed: u64,
) -> ParamSet {
    let mut params = encoder::init_parameters(enc_cfg, seed);
    for (name, arr) in crate::repmodel::init_classifier(clf_cfg, seed.wrapping_add(1)).iter() {
        params.insert(name.clone(), arr.clone());
    }
    if clf_cfg.use_correlation {
        for head in [
            cooccur::init_head("crcp", enc_cfg.d_h, seed.wrapping_add(2)),
            cooccur::init_head("frcp", enc_cfg.d_h, seed.wrapping_add(3)),
        ] {
            for (name, arr) in head.iter() {
                params.insert(name.clone(), arr.clone());
            }
        }
    }
    params
}

/// Train on `train_docs`, selecting the decision threshold and the retained
/// checkpoint by micro F1 on `dev_docs`. With zero epochs this returns the
/// initialized model with a threshold picked from the grid.
pub fn train(
    train_docs: &[Document],
    dev_docs: &[Document],
    schema: &RelationSchema,
    config: &TrainingConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if dev_docs.is_empty() {
        return Err(Error::data("dev set is empty (needed for threshold selection)"));
    }
    let n_rel = schema.len();
    let vocab = Vocab::from_corpus(train_docs, schema);
    let enc_cfg = config.encoder.to_encoder_config(vocab.len(), config.seed);
    enc_cfg.validate()?;
    let mut clf_cfg = ClassifierConfig::new(enc_cfg.d_h, n_rel, config.use_correlation);
    if let Some(k) = config.group_count {
        clf_cfg.k = k;
    }
    clf_cfg.validate()?;

    let over = if config.strict_length {
        OverLength::Error
    } else {
        OverLength::Truncate
    };
    let mut prepared = Vec::new();
    for doc in train_docs {
        if let Some(p) = prepare_document(doc, schema, &vocab, enc_cfg.max_len, over)? {
            prepared.push(p);
        } else {
            log::warn!("document {} has no scorable pairs, skipped", doc.id);
        }
    }
    if prepared.is_empty() {
        return Err(Error::data("no training document has scorable entity pairs"));
    }
    let mut dev_prepared = Vec::new();
    for doc in dev_docs {
        dev_prepared.push((
            doc.id.clone(),
            prepare_document(doc, schema, &vocab, enc_cfg.max_len, over)?,
        ));
    }
    let dev_gold = PredictionSet::from_gold(dev_docs);
    let train_gold = PredictionSet::from_gold(train_docs);

    let mut params = init_all_parameters(&enc_cfg, &clf_cfg, config.seed);
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut sample_rng = ChaCha8Rng::seed_from_u64(master.random());

    let steps_per_epoch = prepared.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = (config.warmup_ratio * total_steps as f64).round() as usize;
    let mut optimizer = AdamW::new(config.weight_decay);
    let mut global_step = 0usize;

    let score_dev = |params: &ParamSet| -> Result<Vec<ScoredDoc>> {
        let mut out = Vec::with_capacity(dev_prepared.len());
        for (id, prep) in &dev_prepared {
            out.push(match prep {
                Some(p) => ScoredDoc {
                    doc_id: p.id.clone(),
                    pairs: p.pairs.clone(),
                    probs: score_prepared(params, &enc_cfg, &clf_cfg, p)?,
                },
                None => ScoredDoc {
                    doc_id: id.clone(),
                    pairs: Vec::new(),
                    probs: Array2::zeros((0, n_rel)),
                },
            });
        }
        Ok(out)
    };

    // baseline: the initialized model is the first checkpoint candidate,
    // which also covers the zero-epoch path
    let scored = score_dev(&params)?;
    let (mut best_threshold, mut best_f1) =
        select_threshold(&scored, &dev_gold, &config.threshold_grid)?;
    let mut best_params = params.clone();
    let mut history = Vec::new();

    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0); // re, coarse, fine, combined
        let mut batches = 0usize;
        let mut coarse_batches = 0usize;
        let mut fine_batches = 0usize;
        let mut last_factor = 0.0;

        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut re_sum: Option<Var> = None;
            let mut n_pairs = 0usize;
            let mut coarse_sum: Option<Var> = None;
            let mut coarse_docs = 0usize;
            let mut fine_sum: Option<Var> = None;
            let mut fine_docs = 0usize;

            for &i in batch {
                let prep = &prepared[i];
                let fwd = encoder::forward(
                    &mut tape,
                    &bound,
                    &enc_cfg,
                    &prep.input,
                    Some(&mut dropout_rng),
                );
                let pb = build_pair_batch(&mut tape, &fwd, &prep.input, &prep.pairs)?;
                let r_so = clf_cfg.use_correlation.then_some(pb.r_so);
                let logits =
                    pair_logits(&mut tape, pb.h_s, pb.h_o, pb.c, r_so, &bound, &clf_cfg);
                let doc_bce = tape.bce_with_logits_sum(logits, &prep.labels);
                re_sum = Some(match re_sum {
                    Some(acc) => tape.add(acc, doc_bce),
                    None => doc_bce,
                });
                n_pairs += prep.pairs.len();

                if clf_cfg.use_correlation {
                    let plans = plan_crcp_examples(
                        &prep.r_plus,
                        n_rel,
                        config.neg_per_pos_coarse,
                        &mut sample_rng,
                    );
                    if !plans.is_empty() {
                        let rel_rows =
                            tape.gather_rows(fwd.h, &prep.input.relation_positions);
                        let ex = realize_examples(&mut tape, rel_rows, &plans)?;
                        let l = cooccur::subtask_loss(&mut tape, &ex, &bound, "crcp");
                        coarse_sum = Some(match coarse_sum {
                            Some(acc) => tape.add(acc, l),
                            None => l,
                        });
                        coarse_docs += 1;
                    }
                    let plans = plan_frcp_examples(
                        &prep.non_na,
                        &prep.na,
                        config.neg_per_pos_fine,
                        &mut sample_rng,
                    );
                    if !plans.is_empty() {
                        let ex = realize_examples(&mut tape, pb.r_so, &plans)?;
                        let l = cooccur::subtask_loss(&mut tape, &ex, &bound, "frcp");
                        fine_sum = Some(match fine_sum {
                            Some(acc) => tape.add(acc, l),
                            None => l,
                        });
                        fine_docs += 1;
                    }
                }
            }

            let l_re = {
                let sum = re_sum.expect("batch is non-empty");
                tape.scale(sum, 1.0 / n_pairs.max(1) as f64)
            };
            let l_coarse = coarse_sum.map(|s| tape.scale(s, 1.0 / coarse_docs as f64));
            let l_fine = fine_sum.map(|s| tape.scale(s, 1.0 / fine_docs as f64));
            let l_col = match (l_coarse, l_fine) {
                (Some(c), Some(f)) => {
                    let wc = tape.scale(c, config.alpha);
                    let wf = tape.scale(f, 1.0 - config.alpha);
                    Some(tape.add(wc, wf))
                }
                (Some(c), None) => Some(tape.scale(c, config.alpha)),
                (None, Some(f)) => Some(tape.scale(f, 1.0 - config.alpha)),
                (None, None) => None,
            };
            let loss = match l_col {
                Some(col) if tape.scalar(col) > 0.0 => {
                    combine_on_tape(&mut tape, l_re, col, config.beta)
                }
                _ => l_re,
            };

            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::numeric(format!(
                    "training diverged at epoch {epoch}, step {global_step}: loss = {loss_value}"
                )));
            }
            sums.0 += tape.scalar(l_re);
            if let Some(c) = l_coarse {
                sums.1 += tape.scalar(c);
                coarse_batches += 1;
            }
            if let Some(f) = l_fine {
                sums.2 += tape.scalar(f);
                fine_batches += 1;
            }
            sums.3 += loss_value;
            batches += 1;

            tape.backward(loss);
            let mut grads = bound.gradients(&tape, &params);
            clip_global_norm(&mut grads, config.max_grad_norm);
            global_step += 1;
            let factor = schedule_factor(global_step, warmup_steps, total_steps);
            last_factor = factor;
            optimizer.step(&mut params, &grads, |name| {
                let base = if name.starts_with("encoder.") {
                    config.lr_encoder
                } else {
                    config.lr_other
                };
                base * factor
            });
        }

        let scored = score_dev(&params)?;
        let (tau, dev_f1) = select_threshold(&scored, &dev_gold, &config.threshold_grid)?;
        if dev_f1 > best_f1 {
            best_f1 = dev_f1;
            best_threshold = tau;
            best_params = params.clone();
        }
        history.push(EpochLog {
            epoch,
            l_re: sums.0 / batches as f64,
            l_coarse: if coarse_batches > 0 {
                sums.1 / coarse_batches as f64
            } else {
                0.0
            },
            l_fine: if fine_batches > 0 {
                sums.2 / fine_batches as f64
            } else {
                0.0
            },
            l: sums.3 / batches as f64,
            dev_f1,
            lr: config.lr_other * last_factor,
        });

        if let Some(goal) = config.stop_at_train_f1 {
            let mut train_scored = Vec::with_capacity(prepared.len());
            for p in &prepared {
                train_scored.push(ScoredDoc {
                    doc_id: p.id.clone(),
                    pairs: p.pairs.clone(),
                    probs: score_prepared(&params, &enc_cfg, &clf_cfg, p)?,
                });
            }
            let (_, _, train_f1) = micro_f1(&predictions_at(&train_scored, tau), &train_gold);
            if train_f1 >= goal {
                log::info!("train F1 {train_f1:.4} reached goal {goal} at epoch {epoch}");
                if dev_f1 >= best_f1 {
                    best_f1 = dev_f1;
                    best_threshold = tau;
                    best_params = params.clone();
                }
                break 'epochs;
            }
        }
    }

    Ok(TrainedModel {
        encoder_config: enc_cfg,
        classifier_config: clf_cfg,
        train_config: config.clone(),
        params: best_params,
        vocab,
        schema: schema.clone(),
        threshold: best_threshold,
        best_dev_f1: best_f1,
        history,
    })
}
