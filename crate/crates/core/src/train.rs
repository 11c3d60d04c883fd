//! Mini-batch training: negative assembly, joint loss, optimizer step,
//! momentum-encoder update and queue refresh.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::loss::{clamp_log_tau, contrastive_loss, inverse_temperature, structural_loss, total_loss, LossConfig};
use crate::model::{Model, TextInputs};
use crate::negatives::{in_batch_mask, mix_hard_negatives, sample_intra_relation, MomentumEncoder, MomentumQueue};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, LinearDecay};
use crate::params::Binder;
use crate::structural::struct_score_matrix;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Text contrastive loss plus the weighted structural loss.
    Joint,
    /// Structural loss alone; the text encoders are never run.
    StructOnly,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::StructOnly => "struct-only",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "struct-only" | "struct_only" => Ok(TrainMode::StructOnly),
            other => Err(Error::Config(alloc::format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip: f64,
    /// Mixed hard negatives from the momentum queue.
    pub use_mh: bool,
    /// Intra-relation negatives.
    pub use_ir: bool,
    pub queue_size: usize,
    pub hardest_k: usize,
    pub mix_count: usize,
    pub irns_per_query: usize,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Joint,
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            batch_size: 32,
            epochs: 10,
            grad_clip: 1.0,
            use_mh: true,
            use_ir: true,
            queue_size: 15360,
            hardest_k: 192,
            mix_count: 64,
            irns_per_query: 3,
            momentum: 0.999,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        let bad = |what: &str| Err(Error::Config(what.into()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1]");
        }
        if self.use_mh && (self.queue_size == 0 || self.hardest_k < 2 || self.mix_count == 0) {
            return bad("hard negatives need a queue, hardest_k >= 2 and mix_count >= 1");
        }
        Ok(())
    }
}

/// Per-step statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub ir_queries: usize,
    pub ir_fallbacks: usize,
    pub mh_queries: usize,
    pub mh_fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub tau: f64,
    /// Learning rate used by the epoch's last step.
    pub lr: f64,
    pub queue_fill: usize,
    pub irns_fallback_rate: f64,
    pub mh_fallback_rate: f64,
    pub steps: usize,
}

impl EpochMetrics {
    pub const TSV_HEADER: &'static str = "epoch\tmean_loss\ttau\tlr\tqueue_fill\tirns_fallback_rate";

    pub fn tsv_row(&self) -> alloc::string::String {
        alloc::format!(
            "{}\t{:.6}\t{:.6}\t{:.3e}\t{}\t{:.4}",
            self.epoch,
            self.mean_loss,
            self.tau,
            self.lr,
            self.queue_fill,
            self.irns_fallback_rate
        )
    }
}

pub struct Trainer<'g> {
    graph: &'g KnowledgeGraph,
    inputs: &'g TextInputs,
    model: Model,
    config: TrainConfig,
    optimizer: AdamW,
    schedule: LinearDecay,
    momentum: MomentumEncoder,
    queue: MomentumQueue,
    rng: ChaCha8Rng,
    examples: Vec<Triple>,
    step: u64,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(
        graph: &'g KnowledgeGraph,
        inputs: &'g TextInputs,
        model: Model,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let examples = graph.training_examples();
        if examples.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let steps_per_epoch = examples.len().div_ceil(config.batch_size) as u64;
        let schedule = LinearDecay {
            base_lr: config.optimizer.lr,
            total_steps: steps_per_epoch * config.epochs.max(1) as u64,
        };
        let mut optimizer = AdamW::new(model.store(), config.optimizer);
        optimizer.exempt_from_decay(model.log_tau_param());
        let momentum = MomentumEncoder::new(model.store(), model.momentum_params(), config.momentum);
        let queue = MomentumQueue::new(config.queue_size, model.config().text.hidden);
        Ok(Self {
            graph,
            inputs,
            model,
            config,
            optimizer,
            schedule,
            momentum,
            queue,
            rng: ChaCha8Rng::seed_from_u64(seed),
            examples,
            step: 0,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn queue(&self) -> &MomentumQueue {
        &self.queue
    }

    pub fn momentum_encoder(&self) -> &MomentumEncoder {
        &self.momentum
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One pass over the shuffled training examples (inverses included).
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut last_lr = 0.0;
        let (mut irq, mut irf, mut mhq, mut mhf) = (0usize, 0usize, 0usize, 0usize);
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let s = self.train_step(chunk)?;
            loss_sum += s.loss;
            last_lr = s.lr;
            irq += s.ir_queries;
            irf += s.ir_fallbacks;
            mhq += s.mh_queries;
            mhf += s.mh_fallbacks;
            steps += 1;
        }
        self.epoch += 1;
        let rate = |f: usize, q: usize| if q == 0 { 0.0 } else { f as f64 / q as f64 };
        Ok(EpochMetrics {
            epoch: self.epoch,
            mean_loss: loss_sum / steps as f64,
            tau: self.model.tau(),
            lr: last_lr,
            queue_fill: self.queue.len(),
            irns_fallback_rate: rate(irf, irq),
            mh_fallback_rate: rate(mhf, mhq),
            steps,
        })
    }

    /// One optimizer step on the examples at `indices`.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<StepStats> {
        let batch: Vec<Triple> = indices.iter().map(|&i| self.examples[i]).collect();
        let pairs: Vec<(EntityId, RelationId)> = batch.iter().map(|t| (t.head, t.relation)).collect();

        // Columns: unique positive tails first, then intra-relation samples.
        let mut columns: Vec<EntityId> = Vec::new();
        let mut column_of: BTreeMap<EntityId, usize> = BTreeMap::new();
        for t in &batch {
            column_of.entry(t.tail).or_insert_with(|| {
                columns.push(t.tail);
                columns.len() - 1
            });
        }
        let n_ib = columns.len();
        let positives: Vec<usize> = batch.iter().map(|t| column_of[&t.tail]).collect();
        let ib_mask = in_batch_mask(&batch, &columns[..n_ib], self.graph);

        let mut stats = StepStats {
            loss: 0.0,
            lr: self.schedule.lr_at(self.step),
            grad_norm: 0.0,
            ir_queries: 0,
            ir_fallbacks: 0,
            mh_queries: 0,
            mh_fallbacks: 0,
        };

        let store_snapshot = self.model.store().clone();
        let mut tape = Tape::new();
        let mut binder = Binder::trainable(&store_snapshot);
        let log_tau = binder.var(&mut tape, self.model.log_tau_param());
        let inv_tau = inverse_temperature(&mut tape, log_tau);
        let margin = self.config.loss.margin;
        let use_struct = self.model.config().use_ase || self.config.mode == TrainMode::StructOnly;
        let ase = if use_struct {
            Some(self.model.query_ase(&mut tape, &mut binder, &pairs)?)
        } else {
            None
        };

        let mut loss = None;
        let ib_tails;
        if self.config.mode == TrainMode::Joint {
            let mut own_ir: Vec<Vec<usize>> = vec![Vec::new(); batch.len()];
            if self.config.use_ir && self.config.irns_per_query > 0 {
                for (q, t) in batch.iter().enumerate() {
                    let s = sample_intra_relation(
                        self.graph,
                        t.head,
                        t.relation,
                        self.config.irns_per_query,
                        &mut self.rng,
                    );
                    stats.ir_queries += 1;
                    stats.ir_fallbacks += usize::from(s.fallback);
                    for e in s.tails {
                        let c = *column_of.entry(e).or_insert_with(|| {
                            columns.push(e);
                            columns.len() - 1
                        });
                        own_ir[q].push(c);
                    }
                }
            }
            let n_cols = columns.len();
            let mut allowed = vec![false; batch.len() * n_cols];
            for q in 0..batch.len() {
                for j in 0..n_ib {
                    allowed[q * n_cols + j] = !ib_mask[q][j];
                }
                for &c in &own_ir[q] {
                    let e = columns[c];
                    if e != batch[q].tail && !self.graph.is_train_true(batch[q].head, batch[q].relation, e) {
                        allowed[q * n_cols + c] = true;
                    }
                }
            }

            let seqs: Vec<Vec<u32>> = pairs
                .iter()
                .map(|(h, r)| self.inputs.hr_seq(self.graph, *h, *r))
                .collect();
            let seq_refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
            let h_hr = self.model.encode_queries(&mut tape, &mut binder, &seq_refs, ase)?;
            let h_t = self.model.encode_tails(&mut tape, &mut binder, self.inputs, &columns)?;
            let mut sims = tape.matmul_bt(h_hr, h_t)?;

            if self.config.use_mh && self.queue.len() >= 2 {
                let (extra, extra_mask) = self.hard_negatives(&tape, h_hr, &batch, &mut stats);
                if !extra.is_empty() {
                    let width = extra.len();
                    let mixed = tape.constant(Tensor::from_rows(&extra));
                    let s_mh = tape.matmul_bt(h_hr, mixed)?;
                    sims = tape.concat_cols(&[sims, s_mh])?;
                    let mut merged = Vec::with_capacity(batch.len() * (n_cols + width));
                    for q in 0..batch.len() {
                        merged.extend_from_slice(&allowed[q * n_cols..(q + 1) * n_cols]);
                        merged.extend_from_slice(&extra_mask[q * width..(q + 1) * width]);
                    }
                    allowed = merged;
                }
            }
            loss = Some(contrastive_loss(
                &mut tape, sims, &positives, &allowed, inv_tau, margin,
            )?);
            ib_tails = columns[..n_ib].to_vec();
        } else {
            ib_tails = columns.clone();
        }

        if let Some(ase) = ase {
            let tails = self.model.table().entity_rows(&mut tape, &mut binder, &ib_tails);
            let scores = struct_score_matrix(&mut tape, ase, tails)?;
            let allowed: Vec<bool> = ib_mask.iter().flat_map(|row| row.iter().map(|m| !m)).collect();
            let l_dis = structural_loss(&mut tape, scores, &positives, &allowed, inv_tau, margin)?;
            loss = Some(match loss {
                Some(l_cl) => total_loss(&mut tape, l_cl, l_dis, self.config.loss.beta)?,
                None => l_dis,
            });
        }
        let loss = loss.ok_or_else(|| Error::Config("no loss term enabled".into()))?;
        stats.loss = tape.value(loss).item();
        if !stats.loss.is_finite() {
            return Err(Error::NonFiniteLoss(indices.to_vec()));
        }
        tape.backward(loss)?;
        let mut grads = binder.grads(&tape);
        drop(binder);
        stats.grad_norm = clip_global_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step(self.model.store_mut(), &grads, stats.lr);
        let lt = self.model.log_tau_param();
        let clamped = clamp_log_tau(self.model.store().get(lt).item());
        *self.model.store_mut().get_mut(lt) = Tensor::scalar(clamped);
        self.step += 1;

        if self.config.mode == TrainMode::Joint {
            self.momentum.update(self.model.store());
            if self.config.use_mh {
                let feats = self
                    .model
                    .embed_entities_with(self.momentum.store(), self.inputs, &ib_tails)?;
                let rows: Vec<&[f64]> = (0..feats.rows()).map(|r| feats.row(r)).collect();
                self.queue.push_tagged(&rows, &ib_tails)?;
            }
        }
        Ok(stats)
    }

    /// Mixed hard negatives for every query, stacked into one matrix. The
    /// returned mask lets each query see only its own block. Queue members
    /// tagged with a known training tail of the query are never selected.
    fn hard_negatives(
        &mut self,
        tape: &Tape,
        h_hr: Var,
        batch: &[Triple],
        stats: &mut StepStats,
    ) -> (Vec<Vec<f64>>, Vec<bool>) {
        let tau = self.model.tau();
        let h = tape.value(h_hr);
        let mut blocks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.len());
        for (q, t) in batch.iter().enumerate() {
            let known = self.graph.tails_by_pair(t.head, t.relation);
            let hardest = self
                .queue
                .hardest_k_excluding(h.row(q), tau, self.config.hardest_k, |e| known.contains(&e));
            let mixed = mix_hard_negatives(&hardest, self.config.mix_count, &mut self.rng);
            stats.mh_queries += 1;
            stats.mh_fallbacks += usize::from(mixed.fallback);
            blocks.push(mixed.vectors);
        }
        let width: usize = blocks.iter().map(Vec::len).sum();
        let mut mask = vec![false; batch.len() * width];
        let mut rows = Vec::with_capacity(width);
        for (q, block) in blocks.into_iter().enumerate() {
            for v in block {
                mask[q * width + rows.len()] = true;
                rows.push(v);
            }
        }
        (rows, mask)
    }
}
