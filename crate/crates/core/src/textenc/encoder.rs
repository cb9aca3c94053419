use rand::Rng;
use rayon::prelude::*;

use crate::diffcore::{
    affine, affine_backward, dropout, lstm_cell, lstm_cell_backward, DropoutMask, Gate, LstmCache, LstmLayer,
    ParamSlot, Parameters, Real, Tensor,
};
use crate::error::{Error, Result};
use crate::textenc::{tokenize, StopWords, TokenSequence, WordVectorTable};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Dropout applied between stacked layers during training.
    pub dropout_rate: f64,
    /// Longest token sequence fed to the LSTM; longer texts are truncated.
    pub max_seq_len: usize,
    /// Must equal the image feature dimension.
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 300,
            hidden_size: 256,
            num_layers: 5,
            dropout_rate: 0.25,
            max_seq_len: 18,
            output_dim: 4096,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.hidden_size == 0 || self.output_dim == 0 {
            return Err(Error::config("encoder dimensions must be positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::config("encoder needs at least one LSTM layer"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} must be in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Number of trainable scalars implied by this configuration.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        let lstm: usize = (0..self.num_layers)
            .map(|l| {
                let i = if l == 0 { self.word_dim } else { h };
                4 * (i * h + h * h + h)
            })
            .sum();
        lstm + h * self.output_dim + self.output_dim
    }
}

/// Trainable tensors of the encoder. Word vectors live in
/// [`WordVectorTable`] and are not part of this set.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<LstmLayer<T>>,
    pub proj_w: ParamSlot<T>,
    pub proj_b: ParamSlot<T>,
}

impl<T: Real> EncoderParams<T> {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let input = if l == 0 { cfg.word_dim } else { cfg.hidden_size };
                LstmLayer::zeros(&format!("lstm.{l}"), input, cfg.hidden_size)
            })
            .collect();
        EncoderParams {
            layers,
            proj_w: ParamSlot::new("proj.w", Tensor::zeros(&[cfg.hidden_size, cfg.output_dim])),
            proj_b: ParamSlot::new("proj.b", Tensor::zeros(&[cfg.output_dim])),
        }
    }

    /// Uniform(−1/√H, 1/√H) weights, forget-gate bias 1, other biases 0.
    /// Draw order: layers bottom-up, per layer W then U by gate, then the
    /// projection weights.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let bound = 1.0 / (cfg.hidden_size as f64).sqrt();
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
        };
        for layer in &mut p.layers {
            for w in &mut layer.w {
                fill(&mut w.value);
            }
            for u in &mut layer.u {
                fill(&mut u.value);
            }
            layer.b[Gate::Forget as usize].value.data_mut().fill(T::one());
        }
        fill(&mut p.proj_w.value);
        Ok(p)
    }

    /// Verifies every tensor shape against `cfg`.
    pub fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        if expected.layers.len() != self.layers.len() {
            return Err(Error::config(format!(
                "encoder has {} layers, configuration says {}",
                self.layers.len(),
                cfg.num_layers
            )));
        }
        for (a, b) in self.slots().into_iter().zip(expected.slots()) {
            if a.value.shape() != b.value.shape() {
                return Err(Error::config(format!(
                    "parameter {} has shape {:?}, configuration implies {:?}",
                    a.name,
                    a.value.shape(),
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: std::array::from_fn(|k| l.w[k].cast()),
                    u: std::array::from_fn(|k| l.u[k].cast()),
                    b: std::array::from_fn(|k| l.b[k].cast()),
                })
                .collect(),
            proj_w: self.proj_w.cast(),
            proj_b: self.proj_b.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.value.is_finite())
    }
}

impl<T> Parameters<T> for EncoderParams<T> {
    fn slots(&self) -> Vec<&ParamSlot<T>> {
        let mut v: Vec<&ParamSlot<T>> = Vec::new();
        for l in &self.layers {
            v.extend(l.w.iter().chain(&l.u).chain(&l.b));
        }
        v.push(&self.proj_w);
        v.push(&self.proj_b);
        v
    }

    fn slots_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        let mut v: Vec<&mut ParamSlot<T>> = Vec::new();
        for l in &mut self.layers {
            v.extend(l.w.iter_mut().chain(l.u.iter_mut()).chain(l.b.iter_mut()));
        }
        v.push(&mut self.proj_w);
        v.push(&mut self.proj_b);
        v
    }
}

/// Everything [`encode_backward`] needs from one forward pass.
#[derive(Clone, Debug)]
pub struct EncodeTrace<T> {
    caches: Vec<Vec<LstmCache<T>>>,
    /// Mask on the output of layer `l`, for every layer below the top.
    masks: Vec<Option<DropoutMask<T>>>,
    h_last: Tensor<T>,
}

/// Runs the encoder on a `len×word_dim` input. Each layer is unrolled for
/// exactly `len` steps from a zero state; the top layer's last hidden state
/// goes through the linear projection.
pub fn encode_forward<T: Real, R: Rng + ?Sized>(
    inputs: &Tensor<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    training: bool,
    rng: &mut R,
) -> Result<(Vec<T>, EncodeTrace<T>)> {
    params.check(cfg)?;
    let steps = inputs.rows();
    if inputs.shape().len() != 2 || inputs.cols() != cfg.word_dim || steps == 0 {
        return Err(Error::config(format!(
            "encoder input shape {:?} does not match word_dim {}",
            inputs.shape(),
            cfg.word_dim
        )));
    }
    let hidden = cfg.hidden_size;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut masks = Vec::with_capacity(params.layers.len().saturating_sub(1));
    let mut x = inputs.clone();
    let mut h_last = Tensor::zeros(&[1, hidden]);

    for (l, layer) in params.layers.iter().enumerate() {
        let mut h = Tensor::zeros(&[1, hidden]);
        let mut c = Tensor::zeros(&[1, hidden]);
        let mut outs = Tensor::zeros(&[steps, hidden]);
        let mut layer_caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let (h_t, c_t, cache) = lstm_cell(&Tensor::row_vector(x.row(t)), &h, &c, layer)?;
            outs.row_mut(t).copy_from_slice(h_t.data());
            layer_caches.push(cache);
            h = h_t;
            c = c_t;
        }
        caches.push(layer_caches);
        if l + 1 < params.layers.len() {
            let (dropped, mask) = dropout(&outs, cfg.dropout_rate, rng, training)?;
            masks.push(mask);
            x = dropped;
        } else {
            h_last = h;
        }
    }

    let out = affine(&h_last, &params.proj_w.value, &params.proj_b.value)?;
    Ok((out.into_data(), EncodeTrace { caches, masks, h_last }))
}

/// Backpropagates `d_out` (gradient w.r.t. the encoder output) through the
/// trace, accumulating into `params` gradients.
pub fn encode_backward<T: Real>(trace: &EncodeTrace<T>, d_out: &[T], params: &mut EncoderParams<T>) -> Result<()> {
    if d_out.len() != params.proj_b.value.len() || trace.caches.len() != params.layers.len() {
        return Err(Error::config("encoder backward shape mismatch"));
    }
    let dh_last = {
        let EncoderParams { proj_w, proj_b, .. } = params;
        affine_backward(
            &trace.h_last,
            &proj_w.value,
            &Tensor::row_vector(d_out),
            &mut proj_w.grad,
            &mut proj_b.grad,
        )?
    };

    let steps = trace.caches[0].len();
    let hidden = trace.h_last.cols();
    let mut d_outs = Tensor::zeros(&[steps, hidden]);
    d_outs.row_mut(steps - 1).copy_from_slice(dh_last.data());

    for l in (0..params.layers.len()).rev() {
        let layer = &mut params.layers[l];
        let mut dh_next = Tensor::zeros(&[1, hidden]);
        let mut dc_next = Tensor::zeros(&[1, hidden]);
        let mut dx_all = Tensor::zeros(&[steps, layer.input_size()]);
        for t in (0..steps).rev() {
            let mut dh = Tensor::row_vector(d_outs.row(t));
            dh.add_scaled(&dh_next, T::one());
            let (dx, dh_prev, dc_prev) = lstm_cell_backward(&trace.caches[l][t], &dh, &dc_next, layer)?;
            dx_all.row_mut(t).copy_from_slice(dx.data());
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        if l > 0 {
            d_outs = match &trace.masks[l - 1] {
                Some(mask) => mask.backward(&dx_all),
                None => dx_all,
            };
        }
    }
    Ok(())
}

/// Encodes one token sequence into the image feature space.
pub fn encode<T: Real, R: Rng + ?Sized>(
    seq: &TokenSequence,
    table: &WordVectorTable,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    training: bool,
    rng: &mut R,
) -> Result<Vec<T>> {
    if table.dim() != cfg.word_dim {
        return Err(Error::config(format!(
            "word vectors have dimension {}, encoder expects {}",
            table.dim(),
            cfg.word_dim
        )));
    }
    encode_forward(&table.lookup(seq), params, cfg, training, rng).map(|(out, _)| out)
}

/// Encodes a batch into a `B×output_dim` matrix. Training mode runs samples
/// in order so the dropout stream is consumed deterministically; inference
/// runs samples in parallel.
pub fn encode_batch<T: Real, R: Rng + ?Sized>(
    seqs: &[TokenSequence],
    table: &WordVectorTable,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if seqs.is_empty() {
        return Err(Error::config("cannot encode an empty batch"));
    }
    let with_index = |i: usize, e: Error| match e {
        Error::Config(m) => Error::Config(format!("sample {i}: {m}")),
        other => other,
    };
    if training {
        let rows = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| encode(s, table, params, cfg, true, rng).map_err(|e| with_index(i, e)))
            .collect::<Result<Vec<_>>>()?;
        return Tensor::from_rows(&rows);
    }
    if table.dim() != cfg.word_dim {
        return Err(Error::config(format!(
            "word vectors have dimension {}, encoder expects {}",
            table.dim(),
            cfg.word_dim
        )));
    }
    params.check(cfg)?;
    if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
        return Err(with_index(i, Error::config("empty token sequence")));
    }

    // Sequences of equal length run together, in blocks of rows.
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| seqs[i].len());
    let blocks: Vec<&[usize]> = order
        .chunk_by(|&a, &b| seqs[a].len() == seqs[b].len())
        .flat_map(|group| group.chunks(INFERENCE_BLOCK))
        .collect();
    let encoded = blocks
        .par_iter()
        .map(|block| {
            let inputs: Vec<Tensor<T>> = block.iter().map(|&i| table.lookup(&seqs[i])).collect();
            encode_rows(&inputs, params)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Tensor::zeros(&[seqs.len(), cfg.output_dim]);
    for (block, rows) in blocks.iter().zip(&encoded) {
        for (r, &i) in block.iter().enumerate() {
            out.row_mut(i).copy_from_slice(rows.row(r));
        }
    }
    Ok(out)
}

const INFERENCE_BLOCK: usize = 64;

/// Inference forward for equal-length inputs, one row per sequence.
/// Every output element is computed with the same operation order as
/// [`encode_forward`], so results match it bitwise.
fn encode_rows<T: Real>(inputs: &[Tensor<T>], params: &EncoderParams<T>) -> Result<Tensor<T>> {
    let rows = inputs.len();
    let steps = inputs[0].rows();
    let mut xs: Vec<Tensor<T>> = (0..steps)
        .map(|t| Tensor::from_rows(&inputs.iter().map(|x| x.row(t).to_vec()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let mut h_last = Tensor::zeros(&[rows, 1]);
    for layer in &params.layers {
        let hidden = layer.hidden_size();
        let mut h = Tensor::zeros(&[rows, hidden]);
        let mut c = Tensor::zeros(&[rows, hidden]);
        for x in xs.iter_mut() {
            let (h_t, c_t, _) = lstm_cell(x, &h, &c, layer)?;
            *x = h_t.clone();
            h = h_t;
            c = c_t;
        }
        h_last = h;
    }
    affine(&h_last, &params.proj_w.value, &params.proj_b.value)
}

/// A trained encoder bundled with its vocabulary, ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub table: WordVectorTable,
    pub params: EncoderParams<f32>,
}

impl TextEncoder {
    pub fn new(config: EncoderConfig, table: WordVectorTable, params: EncoderParams<f32>) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        if table.dim() != config.word_dim {
            return Err(Error::config(format!(
                "word vectors have dimension {}, encoder expects {}",
                table.dim(),
                config.word_dim
            )));
        }
        Ok(TextEncoder { config, table, params })
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        tokenize(text, self.config.max_seq_len, &StopWords::empty())
    }

    /// Inference-mode embedding of one text.
    pub fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let seq = self.tokenize(text)?;
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        encode(&seq, &self.table, &self.params, &self.config, false, &mut no_rng)
    }

    /// Inference-mode embeddings, one row per text.
    pub fn embed_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Tensor<f32>> {
        let seqs = texts
            .iter()
            .map(|t| self.tokenize(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        encode_batch(&seqs, &self.table, &self.params, &self.config, false, &mut no_rng)
    }
}
