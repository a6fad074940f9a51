//! Encoder-decoder transformer with a duration predictor head.
//!
//! Pre-norm layers, sinusoidal positions, and a decoder input that adds the
//! absolute and relative duration embeddings from [`crate::embed`]. The
//! duration predictor is two causal convolutions (ReLU, layer norm, dropout)
//! and a scalar projection. It predicts `log(1 + frames)` of the token at
//! each decoder position from the final-normed states of the positions before
//! it plus that token's embedding, so it never reads the token's own duration.

use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Segment, Var};
use crate::embed::{add_positional_terms, add_sinusoid, DecoderStepState, EmbeddingConfig, PeFlags};
use crate::error::{Error, Result};
use crate::harness::VerbosityThresholds;
use crate::tokenizer::{TokenId, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DurationPredictorConfig {
    pub kernel_size: usize,
    pub dropout: f64,
}

impl Default for DurationPredictorConfig {
    fn default() -> Self {
        Self { kernel_size: 3, dropout: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub quantization_level: u32,
    pub max_position: usize,
    pub duration_loss_weight: f64,
    pub label_smoothing: f64,
    pub predictor: DurationPredictorConfig,
    pub pe: PeFlags,
    pub seed: u64,
    /// Verbosity-token baseline: bucket boundaries used to tag training
    /// sources. Inference always uses the normal token.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbosity: Option<VerbosityThresholds>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            src_vocab: 0,
            tgt_vocab: 0,
            layers_enc: 2,
            layers_dec: 2,
            heads: 4,
            model_dim: 64,
            ffn_dim: 256,
            dropout: 0.1,
            quantization_level: 5,
            max_position: 4096,
            duration_loss_weight: 1.0,
            label_smoothing: 0.1,
            predictor: DurationPredictorConfig::default(),
            pe: PeFlags::FULL,
            seed: 1,
            verbosity: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.src_vocab == 0 || self.tgt_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} is not divisible by heads {}", self.model_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.predictor.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)".into());
        }
        if self.duration_loss_weight < 0.0 || !self.duration_loss_weight.is_finite() {
            return bad("duration_loss_weight must be finite and non-negative".into());
        }
        if self.predictor.kernel_size == 0 || self.ffn_dim == 0 {
            return bad("kernel_size and ffn_dim must be positive".into());
        }
        self.embedding().validate()
    }

    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            model_dim: self.model_dim,
            quantization_level: self.quantization_level,
            max_position: self.max_position,
            flags: self.pe,
        }
    }
}

/// Named parameter arrays; biases and norm weights are `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub values: Vec<Array2<f64>>,
}

impl ParamStore {
    fn add(&mut self, name: String, value: Array2<f64>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln_attn: Norm,
    attn: Attn,
    ln_ffn: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln_self: Norm,
    self_attn: Attn,
    ln_cross: Norm,
    cross_attn: Attn,
    ln_ffn: Norm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, Copy)]
struct Predictor {
    conv1: Linear,
    ln1: Norm,
    conv2: Linear,
    ln2: Norm,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    enc: Vec<EncLayer>,
    enc_norm: Norm,
    dec: Vec<DecLayer>,
    dec_norm: Norm,
    out_proj: Linear,
    predictor: Predictor,
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, limit: f64) -> usize {
        let value = Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-limit..limit));
        self.store.add(name, value)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = self.uniform(format!("{name}.weight"), fan_in, fan_out, limit);
        let b = self.store.add(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Linear { w, b }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.store.add(format!("{name}.gamma"), Array2::ones((1, dim)));
        let b = self.store.add(format!("{name}.beta"), Array2::zeros((1, dim)));
        Norm { g, b }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }
}

/// Teacher-forced training data in padded form.
///
/// `tgt[i]` is `[y_1, ..., y_T, EOS, PAD, ...]` and `tgt_frames[i]` holds the
/// gold frames of each entry (0 for EOS and PAD). A row of only PAD
/// contributes nothing to the loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub src: Vec<Vec<TokenId>>,
    pub tgt: Vec<Vec<TokenId>>,
    pub tgt_frames: Vec<Vec<u32>>,
}

/// One unpadded training pair. `src` is the full encoder input (including
/// BOS/EOS as produced by [`wrap_source`]); `tgt` excludes BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
    pub tgt_frames: Vec<u32>,
}

/// `[BOS, ids..., EOS]`.
pub fn wrap_source(ids: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS_ID);
    out.extend_from_slice(ids);
    out.push(EOS_ID);
    out
}

impl TrainingBatch {
    pub fn from_examples(examples: &[Example]) -> Self {
        let src_len = examples.iter().map(|e| e.src.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.tgt.len() + 1).max().unwrap_or(0);
        let mut batch = Self::default();
        for e in examples {
            let mut s = e.src.clone();
            s.resize(src_len, PAD_ID);
            let mut t = e.tgt.clone();
            t.push(EOS_ID);
            t.resize(tgt_len, PAD_ID);
            let mut f = e.tgt_frames.clone();
            f.push(0);
            f.resize(tgt_len, 0);
            batch.src.push(s);
            batch.tgt.push(t);
            batch.tgt_frames.push(f);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_mask(&self) -> Vec<Vec<bool>> {
        self.src.iter().map(|r| r.iter().map(|&t| t != PAD_ID).collect()).collect()
    }

    pub fn tgt_mask(&self) -> Vec<Vec<bool>> {
        self.tgt.iter().map(|r| r.iter().map(|&t| t != PAD_ID).collect()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.tgt.len() != self.src.len() || self.tgt_frames.len() != self.src.len() {
            return Err(Error::Shape("batch rows disagree between source, target and frames".into()));
        }
        for (i, (t, f)) in self.tgt.iter().zip(&self.tgt_frames).enumerate() {
            if t.len() != f.len() {
                return Err(Error::Shape(format!("row {i}: {} target ids but {} frame entries", t.len(), f.len())));
            }
            let n = t.iter().take_while(|&&x| x != PAD_ID).count();
            if t[n..].iter().any(|&x| x != PAD_ID) || self.src[i].iter().skip_while(|&&x| x != PAD_ID).any(|&x| x != PAD_ID) {
                return Err(Error::Shape(format!("row {i}: padding must be trailing")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Decoder input for one sequence: tokens starting with BOS, the frames
/// emitted up to and including each position's token, and the frame budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderPrefix {
    pub tokens: Vec<TokenId>,
    pub cumulative: Vec<u32>,
    pub budget: u32,
}

impl DecoderPrefix {
    /// Builds the teacher-forced prefix `[BOS, y_1..y_T]` whose cumulative
    /// entry at position `j` sums the frames of `y_1..y_j`.
    pub fn teacher_forced(tokens: &[TokenId], frames: &[u32], budget: u32) -> Self {
        let mut t = Vec::with_capacity(tokens.len() + 1);
        let mut c = Vec::with_capacity(tokens.len() + 1);
        t.push(BOS_ID);
        c.push(0);
        let mut acc = 0u32;
        for (i, &tok) in tokens.iter().enumerate() {
            acc += frames[i];
            t.push(tok);
            c.push(acc);
        }
        Self { tokens: t, cumulative: c, budget }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-example forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `(target_len x vocab)` per example, position `j` scoring target `j`.
    pub logits: Vec<Array2<f64>>,
    /// Predicted `log(1 + frames)` of the decoder input token at each
    /// position (position 0 is BOS and unsupervised).
    pub log_durations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub duration: f64,
    pub total: f64,
}

/// Encoder output for one source sentence, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub memory: Array2<f64>,
}

/// Scores for the last position of a decoder prefix.
#[derive(Debug, Clone)]
pub struct StepScores {
    pub log_probs: Vec<f64>,
    /// Predicted `log(1 + frames)` for the prefix's last token.
    pub log_duration: f64,
}

#[derive(Debug, Clone)]
pub struct Seq2Seq {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
}

struct Ctx<'r> {
    dropout: Option<&'r mut ChaCha8Rng>,
}

impl Ctx<'_> {
    fn drop(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        match self.dropout.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let (n, d) = g.value(x).dim();
                let keep = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_fn((n, d), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
                g.dropout(x, mask)
            }
            _ => x,
        }
    }
}

fn ranges(lengths: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

impl Seq2Seq {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.model_dim;
        let mut b = Builder { store: ParamStore { names: vec![], values: vec![] }, rng: &mut rng };
        let emb_limit = (3.0 / d as f64).sqrt();
        let src_embed = b.uniform("encoder.embed".into(), config.src_vocab, d, emb_limit);
        let tgt_embed = b.uniform("decoder.embed".into(), config.tgt_vocab, d, emb_limit);
        let enc = (0..config.layers_enc)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncLayer {
                    ln_attn: b.norm(&format!("{p}.ln_attn"), d),
                    attn: b.attn(&format!("{p}.attn"), d),
                    ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, config.ffn_dim),
                    ff2: b.linear(&format!("{p}.ff2"), config.ffn_dim, d),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let dec = (0..config.layers_dec)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecLayer {
                    ln_self: b.norm(&format!("{p}.ln_self"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), d),
                    ln_cross: b.norm(&format!("{p}.ln_cross"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), d),
                    ln_ffn: b.norm(&format!("{p}.ln_ffn"), d),
                    ff1: b.linear(&format!("{p}.ff1"), d, config.ffn_dim),
                    ff2: b.linear(&format!("{p}.ff2"), config.ffn_dim, d),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let out_proj = b.linear("decoder.out_proj", d, config.tgt_vocab);
        let k = config.predictor.kernel_size;
        let predictor = Predictor {
            conv1: b.linear("predictor.conv1", k * d, d),
            ln1: b.norm("predictor.ln1", d),
            conv2: b.linear("predictor.conv2", k * d, d),
            ln2: b.norm("predictor.ln2", d),
            out: b.linear("predictor.out", d, 1),
        };
        let store = b.store;
        Ok(Self {
            config,
            store,
            layout: Layout { src_embed, tgt_embed, enc, enc_norm, dec, dec_norm, out_proj, predictor },
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(config)?;
        if model.store.names != store.names {
            return Err(Error::Checkpoint("parameter names do not match the configuration".into()));
        }
        for (i, (a, b)) in model.store.values.iter().zip(&store.values).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    store.names[i],
                    b.dim(),
                    a.dim()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Indices of the duration-predictor parameters.
    pub fn predictor_param_indices(&self) -> Vec<usize> {
        (0..self.store.len())
            .filter(|&i| self.store.names[i].starts_with("predictor."))
            .collect()
    }

    fn affine(&self, g: &mut Graph, x: Var, l: Linear) -> Var {
        let w = g.param(l.w);
        let b = g.param(l.b);
        g.affine(x, w, b)
    }

    fn norm(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let gamma = g.param(n.g);
        let beta = g.param(n.b);
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph, x: Var, kv: Var, a: Attn, segments: Vec<Segment>, causal: bool) -> Var {
        let q = self.affine(g, x, a.q);
        let k = self.affine(g, kv, a.k);
        let v = self.affine(g, kv, a.v);
        let o = g.attention(q, k, v, segments, self.config.heads, causal);
        self.affine(g, o, a.o)
    }

    fn ffn(&self, g: &mut Graph, x: Var, ff1: Linear, ff2: Linear) -> Var {
        let h = self.affine(g, x, ff1);
        let h = g.relu(h);
        self.affine(g, h, ff2)
    }

    fn sinusoid_rows(&self, positions: impl Iterator<Item = usize>, rows: usize) -> Result<Array2<f64>> {
        let d = self.config.model_dim;
        let mut m = Array2::zeros((rows, d));
        for (r, p) in positions.enumerate() {
            if p > self.config.max_position {
                return Err(Error::PositionOutOfRange { position: p, max_position: self.config.max_position });
            }
            add_sinusoid(p, m.row_mut(r).as_slice_mut().expect("row-major"));
        }
        Ok(m)
    }

    fn encode_graph(&self, g: &mut Graph, ctx: &mut Ctx, sources: &[&[TokenId]]) -> Result<(Var, Vec<Range<usize>>)> {
        let lens: Vec<usize> = sources.iter().map(|s| s.len()).collect();
        let segs = ranges(&lens);
        let n: usize = lens.iter().sum();
        let mut ids = Vec::with_capacity(n);
        for s in sources {
            for &t in *s {
                if t as usize >= self.config.src_vocab {
                    return Err(Error::UnknownTokenId(t));
                }
                ids.push(t as usize);
            }
        }
        let table = g.param(self.layout.src_embed);
        let emb = g.gather(table, ids);
        let emb = g.scale(emb, (self.config.model_dim as f64).sqrt());
        let pos = self.sinusoid_rows(lens.iter().flat_map(|&l| 0..l), n)?;
        let pos = g.constant(pos);
        let mut x = g.add(emb, pos);
        x = ctx.drop(g, x, self.config.dropout);
        let self_segs: Vec<Segment> = segs.iter().map(|r| Segment { queries: r.clone(), keys: r.clone() }).collect();
        for layer in &self.layout.enc {
            let h = self.norm(g, x, layer.ln_attn);
            let a = self.attention(g, h, h, layer.attn, self_segs.clone(), false);
            let a = ctx.drop(g, a, self.config.dropout);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln_ffn);
            let f = self.ffn(g, h, layer.ff1, layer.ff2);
            let f = ctx.drop(g, f, self.config.dropout);
            x = g.add(x, f);
        }
        let out = self.norm(g, x, self.layout.enc_norm);
        Ok((out, segs))
    }

    /// Decoder input rows: token embedding scaled by `sqrt(d)` plus the enabled positional terms.
    /// Also returns the scaled token embeddings alone.
    fn decoder_embed(&self, g: &mut Graph, prefixes: &[&DecoderPrefix], use_durations: bool) -> Result<(Var, Var)> {
        let n: usize = prefixes.iter().map(|p| p.len()).sum();
        let d = self.config.model_dim;
        let mut ids = Vec::with_capacity(n);
        let mut pos = Array2::zeros((n, d));
        let mut emb_cfg = self.config.embedding();
        if !use_durations {
            emb_cfg.flags = PeFlags { absolute: false, relative: false, ..emb_cfg.flags };
        }
        let mut r = 0;
        for p in prefixes {
            if p.cumulative.len() != p.tokens.len() {
                return Err(Error::Shape("prefix tokens and cumulative frames differ in length".into()));
            }
            for (i, (&tok, &cum)) in p.tokens.iter().zip(&p.cumulative).enumerate() {
                if tok as usize >= self.config.tgt_vocab {
                    return Err(Error::UnknownTokenId(tok));
                }
                ids.push(tok as usize);
                let state = DecoderStepState { step_index: i, cumulative_frames: cum, total_budget_frames: p.budget };
                add_positional_terms(&state, &emb_cfg, pos.row_mut(r).as_slice_mut().expect("row-major"))?;
                r += 1;
            }
        }
        let table = g.param(self.layout.tgt_embed);
        let emb = g.gather(table, ids);
        let emb = g.scale(emb, (d as f64).sqrt());
        let pos = g.constant(pos);
        Ok((g.add(emb, pos), emb))
    }

    /// Runs the decoder stack and both heads. Returns (logits, log-durations).
    fn decode_graph(
        &self,
        g: &mut Graph,
        ctx: &mut Ctx,
        memory: Var,
        memory_segs: &[Range<usize>],
        prefixes: &[&DecoderPrefix],
        use_durations: bool,
    ) -> Result<(Var, Var, Vec<Range<usize>>)> {
        let lens: Vec<usize> = prefixes.iter().map(|p| p.len()).collect();
        let segs = ranges(&lens);
        let (mut x, tok_emb) = self.decoder_embed(g, prefixes, use_durations)?;
        x = ctx.drop(g, x, self.config.dropout);
        let self_segs: Vec<Segment> = segs.iter().map(|r| Segment { queries: r.clone(), keys: r.clone() }).collect();
        let cross_segs: Vec<Segment> = segs
            .iter()
            .zip(memory_segs)
            .map(|(q, k)| Segment { queries: q.clone(), keys: k.clone() })
            .collect();
        for layer in &self.layout.dec {
            let h = self.norm(g, x, layer.ln_self);
            let a = self.attention(g, h, h, layer.self_attn, self_segs.clone(), true);
            let a = ctx.drop(g, a, self.config.dropout);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln_cross);
            let a = self.attention(g, h, memory, layer.cross_attn, cross_segs.clone(), false);
            let a = ctx.drop(g, a, self.config.dropout);
            x = g.add(x, a);
            let h = self.norm(g, x, layer.ln_ffn);
            let f = self.ffn(g, h, layer.ff1, layer.ff2);
            let f = ctx.drop(g, f, self.config.dropout);
            x = g.add(x, f);
        }
        let hidden = self.norm(g, x, self.layout.dec_norm);
        let logits = self.affine(g, hidden, self.layout.out_proj);

        let p = self.layout.predictor;
        let k = self.config.predictor.kernel_size;
        let pd = self.config.predictor.dropout;
        let prev = g.shift(hidden, segs.clone());
        let h = g.add(prev, tok_emb);
        let w = g.causal_window(h, segs.clone(), k);
        let h = self.affine(g, w, p.conv1);
        let h = g.relu(h);
        let h = self.norm(g, h, p.ln1);
        let h = ctx.drop(g, h, pd);
        let w = g.causal_window(h, segs.clone(), k);
        let h = self.affine(g, w, p.conv2);
        let h = g.relu(h);
        let h = self.norm(g, h, p.ln2);
        let h = ctx.drop(g, h, pd);
        let dur = self.affine(g, h, p.out);
        Ok((logits, dur, segs))
    }

    /// Unpacks a batch into (source slices, prefixes, target ids, duration targets).
    fn unpack(batch: &TrainingBatch) -> Result<Vec<(Vec<TokenId>, DecoderPrefix, Vec<TokenId>, Vec<u32>)>> {
        batch.validate()?;
        let mut out = Vec::new();
        for i in 0..batch.len() {
            let src: Vec<TokenId> = batch.src[i].iter().copied().take_while(|&t| t != PAD_ID).collect();
            let n = batch.tgt[i].iter().take_while(|&&t| t != PAD_ID).count();
            if n == 0 {
                continue;
            }
            if src.is_empty() {
                return Err(Error::Shape(format!("row {i}: empty source")));
            }
            let targets = batch.tgt[i][..n].to_vec();
            let frames = batch.tgt_frames[i][..n].to_vec();
            let budget: u32 = frames.iter().sum::<u32>().max(1);
            let prefix = DecoderPrefix::teacher_forced(&targets[..n - 1], &frames[..n - 1], budget);
            out.push((src, prefix, targets, frames));
        }
        Ok(out)
    }

    fn build_loss(
        &self,
        g: &mut Graph,
        batch: &TrainingBatch,
        ctx: &mut Ctx,
        use_durations: bool,
    ) -> Result<Option<(Var, Var, Option<Var>)>> {
        let rows = Self::unpack(batch)?;
        if rows.is_empty() {
            return Ok(None);
        }
        let sources: Vec<&[TokenId]> = rows.iter().map(|r| r.0.as_slice()).collect();
        let prefixes: Vec<&DecoderPrefix> = rows.iter().map(|r| &r.1).collect();
        let (memory, mem_segs) = self.encode_graph(g, ctx, &sources)?;
        let (logits, dur, _) = self.decode_graph(g, ctx, memory, &mem_segs, &prefixes, use_durations)?;

        let mut targets = Vec::new();
        let mut dur_targets = Vec::new();
        let mut dur_weights = Vec::new();
        for (_, _, tgt, frames) in &rows {
            targets.extend(tgt.iter().map(|&t| t as usize));
            // Position 0 holds BOS; position j >= 1 holds tgt[j-1].
            dur_targets.push(0.0);
            dur_weights.push(0.0);
            for &f in &frames[..frames.len() - 1] {
                dur_targets.push((f as f64).ln_1p());
                dur_weights.push(1.0);
            }
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= self.config.tgt_vocab) {
            return Err(Error::UnknownTokenId(t as TokenId));
        }
        let n_tok = targets.len() as f64;
        let ce = g.cross_entropy(logits, targets, vec![1.0; n_tok as usize], self.config.label_smoothing, n_tok);
        let n_dur: f64 = dur_weights.iter().sum();
        let lambda = self.config.duration_loss_weight;
        let (total, dur_loss) = if lambda > 0.0 {
            let dl = g.squared_error(dur, dur_targets, dur_weights, n_dur.max(1.0));
            (g.combine(vec![(ce, 1.0), (dl, lambda)]), Some(dl))
        } else {
            (g.combine(vec![(ce, 1.0)]), None)
        };
        Ok(Some((total, ce, dur_loss)))
    }

    fn breakdown(g: &Graph, vars: Option<(Var, Var, Option<Var>)>) -> Result<LossBreakdown> {
        let Some((total, ce, dl)) = vars else {
            return Ok(LossBreakdown { cross_entropy: 0.0, duration: 0.0, total: 0.0 });
        };
        let b = LossBreakdown {
            cross_entropy: g.scalar(ce),
            duration: dl.map_or(0.0, |v| g.scalar(v)),
            total: g.scalar(total),
        };
        if !b.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is {} (cross entropy {}, duration {})",
                b.total, b.cross_entropy, b.duration
            )));
        }
        Ok(b)
    }

    /// Total loss `CE + lambda * duration MSE` without gradients.
    pub fn loss(&self, batch: &TrainingBatch) -> Result<LossBreakdown> {
        let mut g = Graph::new(&self.store.values, false);
        let mut ctx = Ctx { dropout: None };
        let vars = self.build_loss(&mut g, batch, &mut ctx, self.config.pe.uses_durations())?;
        Self::breakdown(&g, vars)
    }

    /// Loss and its exact gradient for every parameter. `dropout_rng` enables
    /// dropout (train mode).
    pub fn loss_and_grads(
        &self,
        batch: &TrainingBatch,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(LossBreakdown, Vec<Array2<f64>>)> {
        let mut g = Graph::new(&self.store.values, true);
        let mut ctx = Ctx { dropout: dropout_rng };
        let vars = self.build_loss(&mut g, batch, &mut ctx, self.config.pe.uses_durations())?;
        let b = Self::breakdown(&g, vars)?;
        let grads = match vars {
            Some((total, _, _)) => g.backward(total),
            None => self.store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        };
        for (i, gr) in grads.iter().enumerate() {
            if gr.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`", self.store.names[i])));
            }
        }
        Ok((b, grads))
    }

    fn forward_impl(&self, batch: &TrainingBatch, mode: Mode, rng: Option<&mut ChaCha8Rng>, use_durations: bool) -> Result<ForwardOutput> {
        let rows = Self::unpack(batch)?;
        let mut g = Graph::new(&self.store.values, false);
        let mut ctx = Ctx { dropout: if mode == Mode::Train { rng } else { None } };
        if rows.is_empty() {
            return Ok(ForwardOutput { logits: vec![], log_durations: vec![] });
        }
        let sources: Vec<&[TokenId]> = rows.iter().map(|r| r.0.as_slice()).collect();
        let prefixes: Vec<&DecoderPrefix> = rows.iter().map(|r| &r.1).collect();
        let (memory, mem_segs) = self.encode_graph(&mut g, &mut ctx, &sources)?;
        let (logits, dur, segs) = self.decode_graph(&mut g, &mut ctx, memory, &mem_segs, &prefixes, use_durations)?;
        let lv = g.value(logits);
        let dv = g.value(dur);
        Ok(ForwardOutput {
            logits: segs.iter().map(|r| lv.slice(ndarray::s![r.clone(), ..]).to_owned()).collect(),
            log_durations: segs.iter().map(|r| dv.column(0).slice(ndarray::s![r.clone()]).to_vec()).collect(),
        })
    }

    /// Teacher-forced forward pass with gold durations. Rows whose target is
    /// all PAD are skipped in the output.
    pub fn forward(&self, batch: &TrainingBatch, mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<ForwardOutput> {
        self.forward_impl(batch, mode, rng, self.config.pe.uses_durations())
    }

    /// Plain transformer forward: decoder input is token embedding plus the
    /// ordinal position only; durations in the batch are ignored.
    pub fn forward_vanilla(&self, batch: &TrainingBatch) -> Result<ForwardOutput> {
        self.forward_impl(batch, Mode::Eval, None, false)
    }

    pub fn encode(&self, source: &[TokenId]) -> Result<EncodedSource> {
        if source.is_empty() {
            return Err(Error::invalid("empty source sequence"));
        }
        let mut g = Graph::new(&self.store.values, false);
        let mut ctx = Ctx { dropout: None };
        let (mem, _) = self.encode_graph(&mut g, &mut ctx, &[source])?;
        Ok(EncodedSource { memory: g.value(mem).clone() })
    }

    /// Runs the decoder over `prefixes` and returns the logits and
    /// log-durations of each prefix's last position.
    fn last_rows(&self, source: &EncodedSource, prefixes: &[&DecoderPrefix]) -> Result<Vec<(Array2<f64>, f64)>> {
        let mut g = Graph::new(&self.store.values, false);
        let mut ctx = Ctx { dropout: None };
        let memory = g.constant(source.memory.clone());
        let mem_segs = vec![0..source.memory.nrows(); prefixes.len()];
        let (logits, dur, segs) =
            self.decode_graph(&mut g, &mut ctx, memory, &mem_segs, prefixes, self.config.pe.uses_durations())?;
        let lv = g.value(logits);
        let dv = g.value(dur);
        Ok(segs
            .iter()
            .map(|r| {
                let last = r.end - 1;
                (lv.slice(ndarray::s![last..last + 1, ..]).to_owned(), dv[[last, 0]])
            })
            .collect())
    }

    /// Scores the next token after each prefix against one encoded source.
    ///
    /// The last token's frames are not known yet, so its `cumulative` entry
    /// is ignored: a first pass predicts them (the predictor only reads
    /// earlier positions), then the decoder runs again with the completed
    /// cumulative sum. `log_duration` is that prediction.
    pub fn step(&self, source: &EncodedSource, prefixes: &[DecoderPrefix]) -> Result<Vec<StepScores>> {
        for p in prefixes {
            if p.is_empty() || p.cumulative.len() != p.tokens.len() {
                return Err(Error::Shape("prefix tokens and cumulative frames differ in length".into()));
            }
        }
        // Predicted durations can run past the sinusoid table; the absolute
        // position saturates there, as the relative bucket does at N.
        let cap = (self.config.max_position - 1) as u32;
        let clamped: Vec<DecoderPrefix> = prefixes
            .iter()
            .map(|p| DecoderPrefix { cumulative: p.cumulative.iter().map(|&c| c.min(cap)).collect(), ..p.clone() })
            .collect();
        let refs: Vec<&DecoderPrefix> = clamped.iter().collect();
        let first = self.last_rows(source, &refs)?;
        let completed: Vec<DecoderPrefix> = clamped
            .into_iter()
            .zip(&first)
            .map(|(mut p, &(_, log_dur))| {
                let n = p.len();
                if n > 1 {
                    p.cumulative[n - 1] = p.cumulative[n - 2].saturating_add(frames_from_log_duration(log_dur)).min(cap);
                }
                p
            })
            .collect();
        let refs: Vec<&DecoderPrefix> = completed.iter().collect();
        let second = self.last_rows(source, &refs)?;
        Ok(second
            .into_iter()
            .zip(&first)
            .map(|((logits, _), &(_, log_duration))| {
                let lp = crate::autograd::log_softmax_rows(logits.view());
                StepScores { log_probs: lp.row(0).to_vec(), log_duration }
            })
            .collect())
    }
}

/// Frames from a predicted `log(1 + frames)`.
pub fn frames_from_log_duration(log_duration: f64) -> u32 {
    let f = (log_duration.exp() - 1.0).round();
    if f.is_finite() && f > 0.0 {
        f.min(u32::MAX as f64 / 2.0) as u32
    } else {
        0
    }
}

/// Independent scalar duration loss, mean of `(pred - log(1 + gold))^2` over masked positions.
pub fn duration_loss(predicted: &[f64], gold_frames: &[i64], mask: &[bool]) -> Result<f64> {
    if predicted.len() != gold_frames.len() || predicted.len() != mask.len() {
        return Err(Error::Shape("duration loss inputs differ in length".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &g), &m) in predicted.iter().zip(gold_frames).zip(mask) {
        if g < 0 {
            return Err(Error::invalid(format!("negative gold duration {g}")));
        }
        if m {
            let diff = p - (g as f64).ln_1p();
            sum += diff * diff;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            src_vocab: 12,
            tgt_vocab: 12,
            layers_enc: 1,
            layers_dec: 1,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            dropout: 0.0,
            predictor: DurationPredictorConfig { kernel_size: 3, dropout: 0.0 },
            max_position: 256,
            ..ModelConfig::default()
        }
    }

    fn batch() -> TrainingBatch {
        TrainingBatch::from_examples(&[
            Example { src: wrap_source(&[8, 9, 10]), tgt: vec![9, 4, 10], tgt_frames: vec![5, 2, 7] },
            Example { src: wrap_source(&[11]), tgt: vec![8], tgt_frames: vec![3] },
        ])
    }

    #[test]
    fn duration_loss_values() {
        let gold = [10i64, 0, 3];
        let pred: Vec<f64> = gold.iter().map(|&g| (g as f64).ln_1p()).collect();
        assert_eq!(duration_loss(&pred, &gold, &[true; 3]).unwrap(), 0.0);
        assert_eq!(duration_loss(&[0.0], &[0], &[true]).unwrap(), 0.0);
        let v = duration_loss(&[11f64.ln()], &[3], &[true]).unwrap();
        assert!((v - 1.0233).abs() < 1e-4, "{v}");
        assert!(duration_loss(&[0.0], &[-1], &[true]).is_err());
    }

    #[test]
    fn softmax_rows_normalise() {
        let m = Seq2Seq::new(tiny_config()).unwrap();
        let out = m.forward(&batch(), Mode::Eval, None).unwrap();
        for l in &out.logits {
            let lp = crate::autograd::log_softmax_rows(l.view());
            for row in lp.outer_iter() {
                let s: f64 = row.iter().map(|x| x.exp()).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(out.logits[0].dim(), (4, 12));
        assert_eq!(out.log_durations[1].len(), 2);
    }

    #[test]
    fn all_pad_rows_contribute_nothing() {
        let m = Seq2Seq::new(tiny_config()).unwrap();
        let mut b = batch();
        let base = m.loss(&b).unwrap();
        b.src.push(vec![BOS_ID, 8, EOS_ID, PAD_ID, PAD_ID]);
        b.tgt.push(vec![PAD_ID; 4]);
        b.tgt_frames.push(vec![0; 4]);
        assert_eq!(m.loss(&b).unwrap(), base);
        let empty = TrainingBatch { src: vec![vec![BOS_ID]], tgt: vec![vec![PAD_ID]], tgt_frames: vec![vec![0]] };
        assert_eq!(m.loss(&empty).unwrap().total, 0.0);
    }

    #[test]
    fn zero_lambda_leaves_predictor_untouched() {
        let mut cfg = tiny_config();
        cfg.duration_loss_weight = 0.0;
        let m = Seq2Seq::new(cfg).unwrap();
        let (loss, grads) = m.loss_and_grads(&batch(), None).unwrap();
        assert_eq!(loss.total, loss.cross_entropy);
        for i in m.predictor_param_indices() {
            assert!(grads[i].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let m = Seq2Seq::new(tiny_config()).unwrap();
        let mut b = batch();
        b.tgt_frames[0].pop();
        assert!(matches!(m.loss(&b), Err(Error::Shape(_))));
        let mut b = batch();
        b.tgt[0][0] = 99;
        assert!(m.loss(&b).is_err());
        let mut cfg = tiny_config();
        cfg.heads = 3;
        assert!(Seq2Seq::new(cfg).is_err());
    }

    #[test]
    fn frames_rounding_from_log_domain() {
        assert_eq!(frames_from_log_duration(11f64.ln()), 10);
        assert_eq!(frames_from_log_duration(-3.0), 0);
        assert_eq!(frames_from_log_duration(0.0), 0);
    }
}
