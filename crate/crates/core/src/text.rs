//! Small pre-norm transformer encoder whose self-attention can take one
//! structural key/value prefix per layer.
//!
//! Each sequence in a batch is encoded independently; token rows of all
//! sequences are stacked so the position-wise layers run as one matmul.
//! Output rows are mean-pooled over the sequence's tokens (the prefix slot is
//! not a token and is never pooled) and scaled to unit norm.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{xavier, Binder, ParamId, ParamStore};
use crate::tensor::{dot, Tensor};
use crate::NORM_EPS;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub ffn: usize,
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden dim {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.max_len < 3 || self.vocab_size < 4 || self.ffn == 0 {
            return Err(Error::Config(format!("degenerate text encoder config {self:?}")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone)]
struct Layer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: TextEncoderConfig,
    tokens: ParamId,
    positions: ParamId,
    layers: Vec<Layer>,
    final_g: ParamId,
    final_b: ParamId,
}

/// Per-sequence structural prefixes on the tape: an `n × 2ld` matrix laid out
/// like [`crate::structural::PrefixProjector`] output.
#[derive(Debug, Clone, Copy)]
pub struct PrefixRows(pub Var);

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        config: TextEncoderConfig,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        let add = |store: &mut ParamStore, suffix: &str, t: Tensor| store.add(format!("{name}.{suffix}"), t);
        let tokens = add(store, "tok_emb", xavier(rng, config.vocab_size, d));
        let positions = add(store, "pos_emb", xavier(rng, config.max_len, d));
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(Layer {
                ln1_g: add(store, &p("ln1.g"), Tensor::filled(1, d, 1.0)),
                ln1_b: add(store, &p("ln1.b"), Tensor::zeros(1, d)),
                wq: add(store, &p("wq"), xavier(rng, d, d)),
                bq: add(store, &p("bq"), Tensor::zeros(1, d)),
                wk: add(store, &p("wk"), xavier(rng, d, d)),
                bk: add(store, &p("bk"), Tensor::zeros(1, d)),
                wv: add(store, &p("wv"), xavier(rng, d, d)),
                bv: add(store, &p("bv"), Tensor::zeros(1, d)),
                wo: add(store, &p("wo"), xavier(rng, d, d)),
                bo: add(store, &p("bo"), Tensor::zeros(1, d)),
                ln2_g: add(store, &p("ln2.g"), Tensor::filled(1, d, 1.0)),
                ln2_b: add(store, &p("ln2.b"), Tensor::zeros(1, d)),
                w1: add(store, &p("w1"), xavier(rng, d, config.ffn)),
                b1: add(store, &p("b1"), Tensor::zeros(1, config.ffn)),
                w2: add(store, &p("w2"), xavier(rng, config.ffn, d)),
                b2: add(store, &p("b2"), Tensor::zeros(1, d)),
            });
        }
        let final_g = add(store, "final_ln.g", Tensor::filled(1, d, 1.0));
        let final_b = add(store, "final_ln.b", Tensor::zeros(1, d));
        Ok(Self {
            config,
            tokens,
            positions,
            layers,
            final_g,
            final_b,
        })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    /// Every parameter owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = alloc::vec![self.tokens, self.positions];
        for l in &self.layers {
            ids.extend([
                l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2,
                l.b2,
            ]);
        }
        ids.extend([self.final_g, self.final_b]);
        ids
    }

    fn layer_norm(&self, tape: &mut Tape, b: &mut Binder<'_>, x: Var, g: ParamId, beta: ParamId) -> Result<Var> {
        let n = tape.layer_norm_rows(x, LN_EPS);
        let g = b.var(tape, g);
        let beta = b.var(tape, beta);
        let s = tape.mul_row(n, g)?;
        tape.add_row(s, beta)
    }

    fn linear(&self, tape: &mut Tape, b: &mut Binder<'_>, x: Var, w: ParamId, bias: ParamId) -> Result<Var> {
        let w = b.var(tape, w);
        let bias = b.var(tape, bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, bias)
    }

    /// Encodes `seqs` into an `n × d` matrix of unit rows.
    ///
    /// When `prefix` is given, row `s` supplies the structural key/value of
    /// sequence `s` for every layer. A layer prefix whose value vector is
    /// exactly zero is masked out, so a zero prefix reproduces the plain
    /// encoder.
    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_>,
        seqs: &[&[u32]],
        prefix: Option<PrefixRows>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (d, dh) = (cfg.hidden, cfg.head_dim());
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut spans = Vec::with_capacity(seqs.len());
        for s in seqs {
            if s.len() > cfg.max_len {
                return Err(Error::SequenceTooLong {
                    len: s.len(),
                    max_len: cfg.max_len,
                });
            }
            if s.is_empty() {
                return Err(Error::Shape("cannot encode an empty sequence".into()));
            }
            spans.push((ids.len(), s.len()));
            ids.extend(s.iter().map(|&t| {
                debug_assert!((t as usize) < cfg.vocab_size);
                t as usize
            }));
            pos.extend(0..s.len());
        }
        if let Some(PrefixRows(p)) = prefix {
            let shape = tape.value(p).shape();
            if shape != [seqs.len(), 2 * cfg.layers * d] {
                return Err(Error::Shape(format!(
                    "prefix rows {shape:?} do not match {} sequences x {} layers",
                    seqs.len(),
                    cfg.layers
                )));
            }
        }

        let tok = b.var(tape, self.tokens);
        let pe = b.var(tape, self.positions);
        let te = tape.gather_rows(tok, &ids);
        let pv = tape.gather_rows(pe, &pos);
        let mut x = tape.add(te, pv)?;
        let scale = 1.0 / libm::sqrt(dh as f64);

        for (li, layer) in self.layers.iter().enumerate() {
            let h = self.layer_norm(tape, b, x, layer.ln1_g, layer.ln1_b)?;
            let q = self.linear(tape, b, h, layer.wq, layer.bq)?;
            let k = self.linear(tape, b, h, layer.wk, layer.bk)?;
            let v = self.linear(tape, b, h, layer.wv, layer.bv)?;

            // per-sequence prefix rows for this layer, if active
            let mut layer_prefix: Vec<Option<(Var, Var)>> = alloc::vec![None; seqs.len()];
            if let Some(PrefixRows(p)) = prefix {
                let kcols = tape.slice_cols(p, li * 2 * d, d);
                let vcols = tape.slice_cols(p, li * 2 * d + d, d);
                for (s, slot) in layer_prefix.iter_mut().enumerate() {
                    if tape.value(vcols).row(s).iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let ks = tape.slice_rows(kcols, s, 1);
                    let vs = tape.slice_rows(vcols, s, 1);
                    *slot = Some((ks, vs));
                }
            }

            let wo = b.var(tape, layer.wo);
            let mut attn: Option<Var> = None;
            for head in 0..cfg.heads {
                let qh = tape.slice_cols(q, head * dh, dh);
                let kh = tape.slice_cols(k, head * dh, dh);
                let vh = tape.slice_cols(v, head * dh, dh);
                let mut parts = Vec::with_capacity(seqs.len());
                for (s, &(start, len)) in spans.iter().enumerate() {
                    let qs = tape.slice_rows(qh, start, len);
                    let mut ks = tape.slice_rows(kh, start, len);
                    let mut vs = tape.slice_rows(vh, start, len);
                    if let Some((pk, pv)) = layer_prefix[s] {
                        let pk = tape.slice_cols(pk, head * dh, dh);
                        let pv = tape.slice_cols(pv, head * dh, dh);
                        ks = tape.concat_rows(&[pk, ks])?;
                        vs = tape.concat_rows(&[pv, vs])?;
                    }
                    let logits = tape.matmul_bt(qs, ks)?;
                    let logits = tape.scale(logits, scale);
                    let weights = tape.softmax_rows(logits);
                    parts.push(tape.matmul(weights, vs)?);
                }
                let head_out = tape.concat_rows(&parts)?;
                let wo_h = tape.slice_rows(wo, head * dh, dh);
                let proj = tape.matmul(head_out, wo_h)?;
                attn = Some(match attn {
                    None => proj,
                    Some(acc) => tape.add(acc, proj)?,
                });
            }
            let bo = b.var(tape, layer.bo);
            let attn = tape.add_row(attn.expect("at least one head"), bo)?;
            x = tape.add(x, attn)?;

            let h = self.layer_norm(tape, b, x, layer.ln2_g, layer.ln2_b)?;
            let f = self.linear(tape, b, h, layer.w1, layer.b1)?;
            let f = tape.gelu(f);
            let f = self.linear(tape, b, f, layer.w2, layer.b2)?;
            x = tape.add(x, f)?;
        }

        let x = self.layer_norm(tape, b, x, self.final_g, self.final_b)?;
        let groups: Vec<Vec<usize>> = spans.iter().map(|&(s, n)| (s..s + n).collect()).collect();
        let pooled = tape.pool_rows(x, &groups);
        Ok(tape.l2_normalize_rows(pooled, NORM_EPS))
    }
}

/// Dot product of two unit embeddings, i.e. their cosine similarity.
pub fn score(h_hr: &[f64], h_t: &[f64]) -> f64 {
    dot(h_hr, h_t)
}
