//! A small trainable transformer producing hidden states and last-layer
//! attention over the joint document + relation-token input.
//!
//! Pre-norm residual blocks, learned positional embeddings, GELU feed
//! forward. One deliberate twist: every relation-token slot shares a single
//! learned positional embedding, so the (arbitrary) order of the relation
//! list carries no information. The last layer's post-softmax attention is
//! exposed per head because downstream feature builders aggregate with it.

use crate::autograd::{BoundParams, ParamSet, Tape, Var};
use crate::corpus::JointInput;
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape of the toy encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_h: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub ffn_width: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: the smallest shape that still exercises
    /// multi-head attention.
    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            d_h: 64,
            n_heads: 4,
            layers: 2,
            max_len: 256,
            vocab_size,
            ffn_width: 256,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_h", self.d_h),
            ("n_heads", self.n_heads),
            ("layers", self.layers),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
            ("ffn_width", self.ffn_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::data(format!("encoder config: {name} must be positive")));
            }
        }
        if !self.d_h.is_multiple_of(self.n_heads) {
            return Err(Error::data(format!(
                "encoder config: d_h {} not divisible by n_heads {}",
                self.d_h, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::data("encoder config: dropout must lie in [0,1)"));
        }
        Ok(())
    }
}

/// Detached encoder output: hidden states and last-layer attention.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// One row per input position, `L_total × d_h`.
    pub h: Array2<f64>,
    /// Post-softmax attention of the final layer, one `L_total × L_total`
    /// matrix per head.
    pub attn: Vec<Array2<f64>>,
}

/// Encoder output still attached to a tape, for training.
pub struct EncoderForward {
    pub h: Var,
    pub attn: Vec<Var>,
}

/// Anything that can stand in for the encoder: token ids in, hidden states
/// and per-head last-layer attention out. The bundled toy transformer
/// implements it; a pretrained model can be adapted behind the same trait.
pub trait DocumentEncoder {
    fn encode(&self, input: &JointInput) -> Result<EncoderOutput>;
    fn width(&self) -> usize;
    fn n_heads(&self) -> usize;
}

const LN_EPS: f64 = 1e-5;

/// Deterministically initialize all encoder tensors for a config.
pub fn init_parameters(config: &EncoderConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
    };
    let d = config.d_h;
    params.insert(
        "encoder.tok_emb",
        Array2::from_shape_fn((config.vocab_size, d), |_| rng.random_range(-0.1..0.1)),
    );
    // one extra positional row: the shared slot for all relation tokens
    params.insert(
        "encoder.pos_emb",
        Array2::from_shape_fn((config.max_len + 1, d), |_| rng.random_range(-0.1..0.1)),
    );
    for l in 0..config.layers {
        let p = |suffix: &str| format!("encoder.layer{l}.{suffix}");
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            params.insert(p(w), glorot(&mut rng, d, d));
        }
        for b in ["attn.bq", "attn.bk", "attn.bv", "attn.bo"] {
            params.insert(p(b), Array2::zeros((1, d)));
        }
        params.insert(p("ffn.w1"), glorot(&mut rng, d, config.ffn_width));
        params.insert(p("ffn.b1"), Array2::zeros((1, config.ffn_width)));
        params.insert(p("ffn.w2"), glorot(&mut rng, config.ffn_width, d));
        params.insert(p("ffn.b2"), Array2::zeros((1, d)));
        params.insert(p("ln1.gamma"), Array2::ones((1, d)));
        params.insert(p("ln1.beta"), Array2::zeros((1, d)));
        params.insert(p("ln2.gamma"), Array2::ones((1, d)));
        params.insert(p("ln2.beta"), Array2::zeros((1, d)));
    }
    params.insert("encoder.final_ln.gamma", Array2::ones((1, d)));
    params.insert("encoder.final_ln.beta", Array2::zeros((1, d)));
    params
}

fn validate_input(config: &EncoderConfig, input: &JointInput) -> Result<()> {
    if input.token_ids.len() > config.max_len {
        return Err(Error::data(format!(
            "input of {} tokens exceeds encoder max length {}",
            input.token_ids.len(),
            config.max_len
        )));
    }
    if let Some(&bad) = input.token_ids.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::data(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    if input.valid_len == 0 || input.valid_len > input.token_ids.len() {
        return Err(Error::data("invalid attention-valid length"));
    }
    Ok(())
}

fn maybe_dropout(
    tape: &mut Tape,
    v: Var,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Var {
    let Some(rng) = rng.as_deref_mut() else {
        return v;
    };
    if rate <= 0.0 {
        return v;
    }
    let keep = 1.0 - rate;
    let dim = tape.value(v).dim();
    let mask = Array2::from_shape_fn(dim, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    tape.mul_mask(v, mask)
}

/// Run the encoder on a tape. Pass an rng to enable dropout (training);
/// `None` gives the deterministic inference path. The returned attention is
/// post-softmax, captured before dropout touches it.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundParams,
    config: &EncoderConfig,
    input: &JointInput,
    mut rng: Option<&mut ChaCha8Rng>,
) -> EncoderForward {
    let len = input.token_ids.len();
    let d = config.d_h;
    let heads = config.n_heads;
    let dk = d / heads;
    let valid = input.valid_len;

    // token + positional embeddings; relation slots share position max_len
    let tok = tape.gather_rows(bound.var("encoder.tok_emb"), &input.token_ids);
    let rel_range = input
        .relation_positions
        .first()
        .copied()
        .zip(input.relation_positions.last().copied());
    let pos_ids: Vec<usize> = (0..len)
        .map(|p| match rel_range {
            Some((lo, hi)) if p >= lo && p <= hi => config.max_len,
            _ => p,
        })
        .collect();
    let pos = tape.gather_rows(bound.var("encoder.pos_emb"), &pos_ids);
    let mut x = tape.add(tok, pos);
    x = maybe_dropout(tape, x, config.dropout, &mut rng);

    let mut last_attn = Vec::new();
    for l in 0..config.layers {
        let p = |suffix: &str| format!("encoder.layer{l}.{suffix}");
        // attention sublayer, pre-norm
        let normed = {
            let gamma = bound.var(&p("ln1.gamma"));
            let beta = bound.var(&p("ln1.beta"));
            tape.layer_norm(x, gamma, beta, LN_EPS)
        };
        let q_all = {
            let m = tape.matmul(normed, bound.var(&p("attn.wq")));
            tape.add_row(m, bound.var(&p("attn.bq")))
        };
        let k_all = {
            let m = tape.matmul(normed, bound.var(&p("attn.wk")));
            tape.add_row(m, bound.var(&p("attn.bk")))
        };
        let v_all = {
            let m = tape.matmul(normed, bound.var(&p("attn.wv")));
            tape.add_row(m, bound.var(&p("attn.bv")))
        };
        let mut head_outputs = Vec::with_capacity(heads);
        let mut head_attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q_all, lo, hi);
            let kh = tape.slice_cols(k_all, lo, hi);
            let vh = tape.slice_cols(v_all, lo, hi);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
            let attn = tape.masked_softmax_rows(scaled, valid);
            head_attn.push(attn);
            let attn_dropped = maybe_dropout(tape, attn, config.dropout, &mut rng);
            head_outputs.push(tape.matmul(attn_dropped, vh));
        }
        let mut ctx = head_outputs[0];
        for &h in &head_outputs[1..] {
            ctx = tape.concat_cols(ctx, h);
        }
        let proj = {
            let m = tape.matmul(ctx, bound.var(&p("attn.wo")));
            tape.add_row(m, bound.var(&p("attn.bo")))
        };
        let proj = maybe_dropout(tape, proj, config.dropout, &mut rng);
        x = tape.add(x, proj);

        // feed-forward sublayer, pre-norm
        let normed2 = {
            let gamma = bound.var(&p("ln2.gamma"));
            let beta = bound.var(&p("ln2.beta"));
            tape.layer_norm(x, gamma, beta, LN_EPS)
        };
        let ff = {
            let m = tape.matmul(normed2, bound.var(&p("ffn.w1")));
            let m = tape.add_row(m, bound.var(&p("ffn.b1")));
            let a = tape.gelu(m);
            let m = tape.matmul(a, bound.var(&p("ffn.w2")));
            tape.add_row(m, bound.var(&p("ffn.b2")))
        };
        let ff = maybe_dropout(tape, ff, config.dropout, &mut rng);
        x = tape.add(x, ff);

        if l == config.layers - 1 {
            last_attn = head_attn;
        }
    }
    let h = {
        let gamma = bound.var("encoder.final_ln.gamma");
        let beta = bound.var("encoder.final_ln.beta");
        tape.layer_norm(x, gamma, beta, LN_EPS)
    };
    EncoderForward { h, attn: last_attn }
}

/// The bundled trainable encoder: a config plus its parameter set.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_parameters(&config, seed);
        Ok(ToyEncoder { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(ToyEncoder { config, params })
    }
}

impl DocumentEncoder for ToyEncoder {
    fn encode(&self, input: &JointInput) -> Result<EncoderOutput> {
        validate_input(&self.config, input)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let fwd = forward(&mut tape, &bound, &self.config, input, None);
        let h = tape.value(fwd.h).clone();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("encoder produced non-finite hidden states"));
        }
        let attn = fwd.attn.iter().map(|&a| tape.value(a).clone()).collect();
        Ok(EncoderOutput { h, attn })
    }

    fn width(&self) -> usize {
        self.config.d_h
    }

    fn n_heads(&self) -> usize {
        self.config.n_heads
    }
}

/// Validate an input against a config before tape construction.
pub fn check_input(config: &EncoderConfig, input: &JointInput) -> Result<()> {
    validate_input(config, input)
}
