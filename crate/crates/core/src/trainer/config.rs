use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::read_text;
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::mining::FilterMode;
use crate::textenc::EncoderConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    /// `(start_epoch, learning_rate)` pairs; the first starts at epoch 0.
    pub lr_schedule: Vec<(u32, f64)>,
    pub loss: LossConfig,
    pub mining_mode: FilterMode,
    pub seed: u64,
    /// `word_dim` and `output_dim` of 0 are filled from the word vectors and
    /// the feature store when training starts.
    pub encoder: EncoderConfig,
    /// Betas and epsilon; the learning rate comes from `lr_schedule`.
    pub adam: AdamConfig,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            epochs: 30,
            lr_schedule: vec![(0, 1e-4)],
            loss: LossConfig::default(),
            mining_mode: FilterMode::AnyOverlap,
            seed: 42,
            encoder: EncoderConfig {
                word_dim: 0,
                output_dim: 0,
                ..EncoderConfig::default()
            },
            adam: AdamConfig::default(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    /// Caption-only setup: 50 epochs, 0.0005 then 0.0001 from epoch 25,
    /// sequences up to 18 tokens.
    pub fn pascal() -> Self {
        TrainConfig {
            epochs: 50,
            lr_schedule: vec![(0, 5e-4), (25, 1e-4)],
            ..TrainConfig::default()
        }
    }

    /// Multi-task setup: 30 epochs at 0.0001, query-length sequences of 15.
    pub fn stock() -> Self {
        let mut cfg = TrainConfig::default();
        cfg.encoder.max_seq_len = 15;
        cfg
    }

    pub fn learning_rate(&self, epoch: u32) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map_or(self.lr_schedule[0].1, |(_, lr)| *lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        match self.lr_schedule.first() {
            Some((0, _)) => {}
            _ => return Err(Error::config("lr_schedule must start at epoch 0")),
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("lr_schedule epochs must be strictly increasing"));
        }
        if self.lr_schedule.iter().any(|(_, lr)| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::config("learning rates must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip must be positive"));
            }
        }
        self.loss.validate()?;
        let mut adam = self.adam.clone();
        adam.learning_rate = self.lr_schedule[0].1;
        adam.validate()
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not listed
    /// in the README are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line {n}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("config line {n}: {}", strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path.as_ref())?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "learning_rate" => self.lr_schedule = vec![(0, num(key, value)?)],
            "lr_schedule" => self.lr_schedule = parse_schedule(value)?,
            "mining_mode" => self.mining_mode = value.parse()?,
            "grad_clip" => {
                let c: f64 = num(key, value)?;
                self.grad_clip = (c != 0.0).then_some(c);
            }
            "loss.variant" => self.loss.variant = value.parse()?,
            "loss.eta" => self.loss.eta = num(key, value)?,
            "loss.rho" => self.loss.rho = num(key, value)?,
            "loss.n_negatives" => self.loss.n_negatives = num(key, value)?,
            "encoder.word_dim" => self.encoder.word_dim = num(key, value)?,
            "encoder.hidden_size" => self.encoder.hidden_size = num(key, value)?,
            "encoder.num_layers" => self.encoder.num_layers = num(key, value)?,
            "encoder.dropout_rate" => self.encoder.dropout_rate = num(key, value)?,
            "encoder.max_seq_len" => self.encoder.max_seq_len = num(key, value)?,
            "encoder.output_dim" => self.encoder.output_dim = num(key, value)?,
            "adam.beta1" => self.adam.beta1 = num(key, value)?,
            "adam.beta2" => self.adam.beta2 = num(key, value)?,
            "adam.epsilon" => self.adam.epsilon = num(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Renders the configuration in the same `key = value` format.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let sched: Vec<String> = self.lr_schedule.iter().map(|(e, lr)| format!("{e}:{lr}")).collect();
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lr_schedule = {}", sched.join(", "));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mining_mode = {}", self.mining_mode);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip.unwrap_or(0.0));
        let _ = writeln!(s, "loss.variant = {}", self.loss.variant);
        let _ = writeln!(s, "loss.eta = {}", self.loss.eta);
        let _ = writeln!(s, "loss.rho = {}", self.loss.rho);
        let _ = writeln!(s, "loss.n_negatives = {}", self.loss.n_negatives);
        let e = &self.encoder;
        let _ = writeln!(s, "encoder.word_dim = {}", e.word_dim);
        let _ = writeln!(s, "encoder.hidden_size = {}", e.hidden_size);
        let _ = writeln!(s, "encoder.num_layers = {}", e.num_layers);
        let _ = writeln!(s, "encoder.dropout_rate = {}", e.dropout_rate);
        let _ = writeln!(s, "encoder.max_seq_len = {}", e.max_seq_len);
        let _ = writeln!(s, "encoder.output_dim = {}", e.output_dim);
        let _ = writeln!(s, "adam.beta1 = {}", self.adam.beta1);
        let _ = writeln!(s, "adam.beta2 = {}", self.adam.beta2);
        let _ = writeln!(s, "adam.epsilon = {}", self.adam.epsilon);
        s
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// `0:0.0005, 25:0.0001`
fn parse_schedule(v: &str) -> Result<Vec<(u32, f64)>> {
    v.split(',')
        .map(|part| {
            let (e, lr) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::config(format!("bad lr_schedule entry {part:?}, expected epoch:rate")))?;
            let e = e
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad epoch in {part:?}")))?;
            let lr = lr
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad rate in {part:?}")))?;
            Ok((e, lr))
        })
        .collect()
}
