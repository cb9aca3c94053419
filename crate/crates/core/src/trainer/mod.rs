//! Multi-task training loop.
//!
//! Each step draws one caption batch and one click batch, mines negatives
//! inside each batch, encodes the texts, averages the two batch losses and
//! applies a single Adam update. With only one source the step is
//! single-task. All randomness (initialization, shuffling, dropout) comes
//! from one seeded ChaCha stream whose position is checkpointed, so a resumed
//! run continues exactly where an uninterrupted one would be.

mod config;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::TrainConfig;

use crate::dataio::{FeatureStore, PairDataset, PairSource};
use crate::diffcore::{adam_step, clip_global_norm, AdamConfig, Parameters, Real, Tensor};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, multitask_combine, LossConfig};
use crate::mining::{mine_negatives, BatchSample, FilterMode, MinedTriplets};
use crate::textenc::{
    encode_backward, encode_forward, tokenize, EncoderConfig, EncoderParams, StopWords, TextEncoder, TokenSequence,
    WordVectorTable,
};

/// Trained (or initialized) encoder plus everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder: TextEncoder,
    pub adam: AdamConfig,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    /// Position of the training random stream.
    pub rng_word_pos: u128,
}

/// A pair dataset tokenized and resolved against a feature store.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub source: PairSource,
    pub seqs: Vec<TokenSequence>,
    pub image_ids: Vec<String>,
    /// Row of each sample's image in the feature store.
    pub image_rows: Vec<usize>,
}

impl PreparedDataset {
    pub fn new(ds: &PairDataset, store: &FeatureStore, stopwords: &StopWords, max_seq_len: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::config(format!("{} dataset is empty", ds.source)));
        }
        let mut seqs = Vec::with_capacity(ds.len());
        let mut image_ids = Vec::with_capacity(ds.len());
        let mut image_rows = Vec::with_capacity(ds.len());
        for (i, (text, id)) in ds.samples.iter().enumerate() {
            let row = store.position(id).ok_or_else(|| {
                Error::Data(format!(
                    "{} sample {i}: image id {id:?} not in feature store",
                    ds.source
                ))
            })?;
            let seq = tokenize(text, max_seq_len, stopwords)
                .map_err(|e| Error::Data(format!("{} sample {i}: {e}", ds.source)))?;
            seqs.push(seq);
            image_ids.push(id.clone());
            image_rows.push(row);
        }
        Ok(PreparedDataset {
            source: ds.source,
            seqs,
            image_ids,
            image_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    /// Mining input for the given sample indices.
    pub fn batch_samples(&self, indices: &[usize], store: &FeatureStore) -> Vec<BatchSample> {
        indices
            .iter()
            .map(|&i| BatchSample {
                image_id: self.image_ids[i].clone(),
                image_vec: store.matrix().row(self.image_rows[i]).to_vec(),
                content_words: self.seqs[i].content_words.clone(),
            })
            .collect()
    }
}

/// One source's batch within a step.
#[derive(Clone, Copy, Debug)]
pub struct BatchRef<'a> {
    pub data: &'a PreparedDataset,
    pub indices: &'a [usize],
}

/// Shuffles `0..len` and cuts it into consecutive batches; a final batch
/// smaller than 2 is dropped.
pub fn make_epoch_batches<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::config("cannot batch an empty dataset"));
    }
    if batch_size < 2 {
        return Err(Error::config("batch size must be at least 2"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Loss of one step and its gradient, accumulated into `params`.
///
/// Each batch is mined on its image vectors, encoded and scored with
/// [`batch_loss`]; with two batches the result is their average, with one
/// it is that batch's loss. Generic over precision so the whole step can be
/// gradient-checked in `f64`.
#[allow(clippy::too_many_arguments)]
pub fn step_loss_and_grad<T: Real, R: Rng + ?Sized>(
    params: &mut EncoderParams<T>,
    enc_cfg: &EncoderConfig,
    table: &WordVectorTable,
    loss_cfg: &LossConfig,
    mode: FilterMode,
    batches: &[BatchRef<'_>],
    store: &FeatureStore,
    training: bool,
    rng: &mut R,
) -> Result<T> {
    if batches.is_empty() || batches.len() > 2 {
        return Err(Error::config(format!(
            "a step takes one or two batches, got {}",
            batches.len()
        )));
    }
    let weight = T::one() / T::lit(batches.len() as f64);
    let mut losses = Vec::with_capacity(batches.len());
    for b in batches {
        let samples = b.data.batch_samples(b.indices, store);
        let mined = mine_negatives(&samples, loss_cfg.n_negatives, mode)?;
        let negatives = mined.negative_indices();

        let mut traces = Vec::with_capacity(b.indices.len());
        let mut queries = Vec::with_capacity(b.indices.len());
        for &i in b.indices {
            let (q, trace) = encode_forward(&table.lookup(&b.data.seqs[i]), params, enc_cfg, training, rng)?;
            queries.push(q);
            traces.push(trace);
        }
        let queries = Tensor::from_rows(&queries)?;
        let positives = Tensor::from_rows(
            &samples
                .iter()
                .map(|s| s.image_vec.iter().map(|&v| T::lit(v as f64)).collect())
                .collect::<Vec<Vec<T>>>(),
        )?;
        let (loss, dq) = batch_loss(&queries, &positives, &negatives, loss_cfg)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {} batch loss {loss} (batch of {}, first sample {})",
                b.data.source,
                b.indices.len(),
                b.indices.first().copied().unwrap_or(0)
            )));
        }
        for (r, trace) in traces.iter().enumerate() {
            let d: Vec<T> = dq.row(r).iter().map(|&g| g * weight).collect();
            encode_backward(trace, &d, params)?;
        }
        losses.push(loss);
    }
    Ok(match losses[..] {
        [single] => single,
        [caption, click] => multitask_combine(caption, click),
        _ => unreachable!(),
    })
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

/// Stateful trainer: encoder, optimizer state and random stream.
pub struct Trainer {
    cfg: TrainConfig,
    encoder: TextEncoder,
    adam: AdamConfig,
    rng: ChaCha8Rng,
    epoch: u32,
}

impl Trainer {
    /// Fresh encoder initialized from `cfg.seed`. Unset encoder dimensions
    /// are taken from the word vectors and the feature store.
    pub fn new(mut cfg: TrainConfig, table: WordVectorTable, store: &FeatureStore) -> Result<Self> {
        cfg.validate()?;
        let enc = &mut cfg.encoder;
        if enc.word_dim == 0 {
            enc.word_dim = table.dim();
        }
        if enc.output_dim == 0 {
            enc.output_dim = store.dim();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = EncoderParams::init(&cfg.encoder, &mut rng)?;
        let encoder = TextEncoder::new(cfg.encoder.clone(), table, params)?;
        check_output_dim(&encoder.config, store)?;
        let mut adam = cfg.adam.clone();
        adam.learning_rate = cfg.learning_rate(0);
        adam.step_count = 0;
        Ok(Trainer {
            cfg,
            encoder,
            adam,
            rng,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint. The encoder configuration, optimizer
    /// moments, seed and stream position come from the checkpoint; `cfg`
    /// supplies the schedule, loss and batching.
    pub fn resume(mut cfg: TrainConfig, ckpt: Checkpoint, store: &FeatureStore) -> Result<Self> {
        cfg.validate()?;
        check_output_dim(&ckpt.encoder.config, store)?;
        cfg.encoder = ckpt.encoder.config.clone();
        cfg.seed = ckpt.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.seed);
        rng.set_word_pos(ckpt.rng_word_pos);
        let mut adam = ckpt.adam;
        adam.beta1 = cfg.adam.beta1;
        adam.beta2 = cfg.adam.beta2;
        adam.epsilon = cfg.adam.epsilon;
        Ok(Trainer {
            cfg,
            encoder: ckpt.encoder,
            adam,
            rng,
            epoch: ckpt.epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &TextEncoder {
        &self.encoder
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            seed: self.cfg.seed,
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn prepare(&self, ds: &PairDataset, store: &FeatureStore, stopwords: &StopWords) -> Result<PreparedDataset> {
        PreparedDataset::new(ds, store, stopwords, self.encoder.config.max_seq_len)
    }

    /// One optimizer step over one (single-task) or two (multi-task)
    /// batches. Returns the step loss.
    pub fn train_step(&mut self, batches: &[BatchRef<'_>], store: &FeatureStore) -> Result<f32> {
        let TextEncoder { config, table, params } = &mut self.encoder;
        params.zero_grad();
        let loss = step_loss_and_grad(
            params,
            config,
            table,
            &self.cfg.loss,
            self.cfg.mining_mode,
            batches,
            store,
            true,
            &mut self.rng,
        )?;
        let mut slots = params.slots_mut();
        if let Some(max) = self.cfg.grad_clip {
            clip_global_norm(&mut slots, max);
        }
        adam_step(&mut slots, &mut self.adam)?;
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters became non-finite at optimizer step {}",
                self.adam.step_count
            )));
        }
        Ok(loss)
    }

    /// Runs one epoch. The longer source defines the number of steps; the
    /// shorter one is reshuffled and cycled.
    pub fn run_epoch(
        &mut self,
        captions: &PreparedDataset,
        clicks: Option<&PreparedDataset>,
        store: &FeatureStore,
    ) -> Result<EpochStats> {
        let lr = self.cfg.learning_rate(self.epoch);
        self.adam.learning_rate = lr;
        let bs = self.cfg.batch_size;
        let mut cap_batches = make_epoch_batches(captions.len(), bs, &mut self.rng)?;
        let mut click_batches = match clicks {
            Some(c) => make_epoch_batches(c.len(), bs, &mut self.rng)?,
            None => Vec::new(),
        };
        if cap_batches.is_empty() || (clicks.is_some() && click_batches.is_empty()) {
            return Err(Error::config("each dataset needs at least 2 samples to form a batch"));
        }
        let steps = cap_batches.len().max(click_batches.len());
        let mut total = 0.0f64;
        for s in 0..steps {
            while s >= cap_batches.len() {
                let more = make_epoch_batches(captions.len(), bs, &mut self.rng)?;
                cap_batches.extend(more);
            }
            let loss = match clicks {
                Some(c) => {
                    while s >= click_batches.len() {
                        let more = make_epoch_batches(c.len(), bs, &mut self.rng)?;
                        click_batches.extend(more);
                    }
                    let batches = [
                        BatchRef {
                            data: captions,
                            indices: &cap_batches[s],
                        },
                        BatchRef {
                            data: c,
                            indices: &click_batches[s],
                        },
                    ];
                    self.train_step(&batches, store)?
                }
                None => {
                    let batches = [BatchRef {
                        data: captions,
                        indices: &cap_batches[s],
                    }];
                    self.train_step(&batches, store)?
                }
            };
            total += loss as f64;
        }
        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: total / steps as f64,
            learning_rate: lr,
            steps,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn run<F>(
        &mut self,
        captions: &PreparedDataset,
        clicks: Option<&PreparedDataset>,
        store: &FeatureStore,
        mut on_epoch: F,
    ) -> Result<()>
    where
        F: FnMut(&EpochStats, &Trainer) -> Result<()>,
    {
        while self.epoch < self.cfg.epochs {
            let stats = self.run_epoch(captions, clicks, store)?;
            on_epoch(&stats, self)?;
        }
        Ok(())
    }
}

fn check_output_dim(cfg: &EncoderConfig, store: &FeatureStore) -> Result<()> {
    if cfg.output_dim != store.dim() {
        return Err(Error::config(format!(
            "encoder output_dim {} does not match feature dimension {}",
            cfg.output_dim,
            store.dim()
        )));
    }
    Ok(())
}

/// Mines one shuffled epoch of `ds` the way training would, without
/// encoding anything. Returns each batch's dataset indices with its
/// mining result.
pub fn mine_epoch(
    ds: &PreparedDataset,
    store: &FeatureStore,
    batch_size: usize,
    n: usize,
    mode: FilterMode,
    seed: u64,
) -> Result<Vec<(Vec<usize>, MinedTriplets)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_epoch_batches(ds.len(), batch_size, &mut rng)?
        .into_iter()
        .map(|b| {
            let mined = mine_negatives(&ds.batch_samples(&b, store), n, mode)?;
            Ok((b, mined))
        })
        .collect()
}

/// Trains from scratch. `clicks = None` gives single-task (caption-only)
/// training.
pub fn train(
    captions: &PairDataset,
    clicks: Option<&PairDataset>,
    store: &FeatureStore,
    table: WordVectorTable,
    stopwords: &StopWords,
    cfg: TrainConfig,
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(cfg, table, store)?;
    let cap = trainer.prepare(captions, store, stopwords)?;
    let click = clicks.map(|c| trainer.prepare(c, store, stopwords)).transpose()?;
    trainer.run(&cap, click.as_ref(), store, |_, _| Ok(()))?;
    Ok(trainer.checkpoint())
}
