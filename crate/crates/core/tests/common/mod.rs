#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use patr_core::dataio::{FeatureStore, LabelMap, PairDataset, PairSource};
use patr_core::diffcore::Tensor;
use patr_core::loss::LossConfig;
use patr_core::mining::{AppliedFilter, BatchSample, FilterMode};
use patr_core::textenc::{EncoderConfig, EncoderParams, StopWords, WordVectorTable};
use patr_core::trainer::{step_loss_and_grad, BatchRef, PreparedDataset};
use rand::rngs::mock::StepRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A complete multi-task step at toy size, in f64 with dropout off.
pub struct TinyStep {
    pub enc: EncoderConfig,
    pub table: WordVectorTable,
    pub store: FeatureStore,
    pub captions: PreparedDataset,
    pub clicks: PreparedDataset,
    pub loss: LossConfig,
    pub params: EncoderParams<f64>,
}

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        word_dim: 5,
        hidden_size: 4,
        num_layers: 2,
        dropout_rate: 0.25,
        max_seq_len: 4,
        output_dim: 6,
    }
}

fn random_text(rng: &mut ChaCha8Rng, vocab: &[String], max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tiny_step(seed: u64) -> TinyStep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = tiny_encoder();
    let vocab: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let wv = (0..vocab.len() * enc.word_dim)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    let table = WordVectorTable::new(
        vocab.clone(),
        Tensor::from_vec(&[vocab.len(), enc.word_dim], wv).unwrap(),
    )
    .unwrap();
    let store = FeatureStore::from_records(
        enc.output_dim,
        (0..6).map(|k| (format!("img{k}"), (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect())),
    )
    .unwrap();
    let stop = StopWords::empty();
    let mut prepared = |source, first: usize| {
        let samples = (0..3)
            .map(|i| {
                (
                    random_text(&mut rng, &vocab, enc.max_seq_len),
                    format!("img{}", first + i),
                )
            })
            .collect();
        PreparedDataset::new(&PairDataset { source, samples }, &store, &stop, enc.max_seq_len).unwrap()
    };
    let captions = prepared(PairSource::Caption, 0);
    let clicks = prepared(PairSource::Click, 3);
    let params = EncoderParams::<f64>::init(&enc, &mut rng).unwrap();
    TinyStep {
        enc,
        table,
        store,
        captions,
        clicks,
        loss: LossConfig {
            n_negatives: 2,
            ..LossConfig::default()
        },
        params,
    }
}

impl TinyStep {
    /// Loss of the step; gradients accumulate into `params`. With
    /// `caption_only`/`click_only` the step is single-task.
    pub fn eval_sources(&self, params: &mut EncoderParams<f64>, caption: bool, click: bool) -> patr_core::Result<f64> {
        let idx = [0usize, 1, 2];
        let mut batches = Vec::new();
        if caption {
            batches.push(BatchRef {
                data: &self.captions,
                indices: &idx,
            });
        }
        if click {
            batches.push(BatchRef {
                data: &self.clicks,
                indices: &idx,
            });
        }
        step_loss_and_grad(
            params,
            &self.enc,
            &self.table,
            &self.loss,
            FilterMode::AnyOverlap,
            &batches,
            &self.store,
            false,
            &mut StepRng::new(0, 0),
        )
    }

    pub fn eval(&self, params: &mut EncoderParams<f64>) -> patr_core::Result<f64> {
        self.eval_sources(params, true, true)
    }
}

/// Mining result in plain form: `(positive, negatives, applied filter)`.
pub type OracleMined = Vec<(usize, Vec<(usize, f32)>, AppliedFilter)>;

/// Brute-force negative mining by repeated minimum selection.
pub fn oracle_mine(batch: &[BatchSample], n: usize, mode: FilterMode) -> OracleMined {
    let b = batch.len();
    let dist = |i: usize, j: usize| {
        let mut s = 0.0f32;
        for k in 0..batch[i].image_vec.len() {
            let d = batch[i].image_vec[k] - batch[j].image_vec[k];
            s += d * d;
        }
        s
    };
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let pw = &batch[i].content_words;
        let distinct: Vec<usize> = (0..b)
            .filter(|&j| j != i && batch[j].image_id != batch[i].image_id)
            .collect();
        let any_ok = |j: usize| pw.is_empty() || pw.iter().all(|w| !batch[j].content_words.contains(w));
        let all_ok = |j: usize| pw.is_empty() || pw.iter().any(|w| !batch[j].content_words.contains(w));

        let any: Vec<usize> = distinct.iter().copied().filter(|&j| any_ok(j)).collect();
        let all: Vec<usize> = distinct.iter().copied().filter(|&j| all_ok(j)).collect();
        let (pool, applied, take) = match mode {
            FilterMode::AnyOverlap if !any.is_empty() => (any, AppliedFilter::AnyOverlap, n),
            _ if !all.is_empty() => (all, AppliedFilter::AllOverlap, n),
            _ => (distinct, AppliedFilter::Unfiltered, 1),
        };

        let row: Vec<f32> = (0..b).map(|j| dist(i, j)).collect();
        let mut left = pool;
        let mut picked = Vec::new();
        while picked.len() < take && !left.is_empty() {
            let mut best = 0;
            for (pos, &j) in left.iter().enumerate() {
                let (dj, db) = (row[j], row[left[best]]);
                if dj < db || (dj == db && j < left[best]) {
                    best = pos;
                }
            }
            let j = left.remove(best);
            picked.push((j, row[j]));
        }
        out.push((i, picked, applied));
    }
    out
}

/// Random mining batch: texts of three words from a 50-word vocabulary
/// of which the first 10 are stop words.
pub fn random_mining_batch(rng: &mut ChaCha8Rng, b: usize, dim: usize, n_images: usize) -> Vec<BatchSample> {
    let vocab: Vec<String> = (0..50).map(|i| format!("v{i}")).collect();
    let stop: HashSet<&str> = vocab[..10].iter().map(String::as_str).collect();
    let images: Vec<Vec<f32>> = (0..n_images)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    (0..b)
        .map(|_| {
            let k = rng.gen_range(0..n_images);
            let words: BTreeSet<String> = (0..3)
                .map(|_| vocab.choose(rng).unwrap())
                .filter(|w| !stop.contains(w.as_str()))
                .cloned()
                .collect();
            BatchSample {
                image_id: format!("i{k}"),
                image_vec: images[k].clone(),
                content_words: words,
            }
        })
        .collect()
}

pub fn oracle_recall(rankings: &[(String, Vec<String>)], truth: &HashMap<String, HashSet<String>>, k: usize) -> f64 {
    let mut hit = 0.0;
    for (q, r) in rankings {
        let mut found = false;
        for id in r.iter().take(k) {
            if truth[q].contains(id) {
                found = true;
            }
        }
        if found {
            hit += 1.0;
        }
    }
    hit / rankings.len() as f64
}

/// Precision at every relevant position recounted from scratch.
pub fn oracle_ap(ranking: &[String], labels: &LabelMap, query_label: &str, r: usize) -> f64 {
    let top = &ranking[..r.min(ranking.len())];
    let rel = |id: &String| labels.get(id) == Some(query_label);
    let m = top.iter().filter(|id| rel(id)).count();
    if m == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..top.len() {
        if rel(&top[i]) {
            let hits = top[..=i].iter().filter(|id| rel(id)).count();
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / m as f64
}
pub mod fuzz;

/// Losses of `steps` repeated updates on one fixed caption batch.
pub fn overfit_one_batch(steps: usize, batch: usize, lr: f64, dropout: f64) -> Vec<f32> {
    use patr_core::synthetic::SyntheticConfig;
    use patr_core::trainer::{TrainConfig, Trainer};
    let data = SyntheticConfig::default().generate().unwrap();
    let mut cfg = TrainConfig {
        batch_size: batch,
        lr_schedule: vec![(0, lr)],
        ..TrainConfig::default()
    };
    cfg.encoder.hidden_size = 32;
    cfg.encoder.num_layers = 2;
    cfg.encoder.dropout_rate = dropout;
    let mut trainer = Trainer::new(cfg, data.words.clone(), &data.features).unwrap();
    let prepared = trainer
        .prepare(&data.caption_train, &data.features, &data.stopwords)
        .unwrap();
    let idx: Vec<usize> = (0..batch).collect();
    let batch = [BatchRef {
        data: &prepared,
        indices: &idx,
    }];
    (0..steps)
        .map(|_| trainer.train_step(&batch, &data.features).unwrap())
        .collect()
}
