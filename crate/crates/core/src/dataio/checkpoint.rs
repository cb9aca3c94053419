//! Checkpoint layout (all little-endian):
//!
//! ```text
//! "PATR" u32 version
//! u32 word_dim, hidden_size, num_layers, max_seq_len, output_dim; f64 dropout_rate
//! f64 learning_rate, beta1, beta2, epsilon; u64 step_count
//! u32 epoch; u64 seed; u128 rng word position
//! u32 vocab size; per word: u16 length, UTF-8 bytes
//! u32 tensor count; per tensor:
//!     u16 name length, name, u8 trainable, u8 rank, u32 dims[rank],
//!     f32 values, then f32 adam_m and f32 adam_v if trainable
//! ```
//!
//! The first tensor is the frozen word-vector matrix; the encoder tensors
//! follow in their canonical slot order.

use std::path::Path;

use crate::dataio::{put_f32s, put_string, read_file, write_atomic, ByteReader};
use crate::diffcore::{AdamConfig, ParamSlot, Parameters, Tensor};
use crate::error::{Error, Result};
use crate::textenc::{EncoderConfig, EncoderParams, TextEncoder, WordVectorTable};
use crate::trainer::Checkpoint;

const MAGIC: &[u8; 4] = b"PATR";
pub const CHECKPOINT_VERSION: u32 = 1;
const WORD_VECTORS: &str = "embedding.word_vectors";

fn u32_of(v: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::config(format!("{what} does not fit in 32 bits")))
}

fn put_slot(out: &mut Vec<u8>, slot: &ParamSlot<f32>) -> Result<()> {
    put_string(out, &slot.name, "tensor name")?;
    out.push(slot.trainable as u8);
    let shape = slot.value.shape();
    out.push(u8::try_from(shape.len()).map_err(|_| Error::config("tensor rank above 255"))?);
    for &d in shape {
        out.extend_from_slice(&u32_of(d, "tensor dimension")?);
    }
    put_f32s(out, slot.value.data());
    if slot.trainable {
        put_f32s(out, slot.adam_m.data());
        put_f32s(out, slot.adam_v.data());
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let enc = &ckpt.encoder;
    let cfg = &enc.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.word_dim,
        cfg.hidden_size,
        cfg.num_layers,
        cfg.max_seq_len,
        cfg.output_dim,
    ] {
        out.extend_from_slice(&u32_of(v, "encoder setting")?);
    }
    out.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    let a = &ckpt.adam;
    for v in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&a.step_count.to_le_bytes());
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    out.extend_from_slice(&ckpt.rng_word_pos.to_le_bytes());

    out.extend_from_slice(&u32_of(enc.table.len(), "vocabulary size")?);
    for w in enc.table.words() {
        put_string(&mut out, w, "word")?;
    }
    let slots = enc.params.slots();
    out.extend_from_slice(&u32_of(slots.len() + 1, "tensor count")?);
    put_slot(&mut out, &ParamSlot::frozen(WORD_VECTORS, enc.table.matrix().clone()))?;
    for s in slots {
        put_slot(&mut out, s)?;
    }
    Ok(out)
}

fn read_slot(r: &mut ByteReader<'_>, expected: &ParamSlot<f32>) -> Result<ParamSlot<f32>> {
    let at = r.offset();
    let name = r.string("tensor name")?;
    if name != expected.name {
        return Err(Error::format(
            Some(at),
            format!("expected tensor {:?}, found {name:?}", expected.name),
        ));
    }
    let trainable = match r.u8("trainable flag")? {
        0 => false,
        1 => true,
        b => return Err(r.err(format!("bad trainable flag {b} for {name}"))),
    };
    if trainable != expected.trainable {
        return Err(r.err(format!("tensor {name} has wrong trainable flag")));
    }
    let rank = r.u8("tensor rank")? as usize;
    let shape_at = r.offset();
    let shape = (0..rank)
        .map(|_| r.u32("tensor dimension").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if shape != expected.value.shape() {
        return Err(Error::format(
            Some(shape_at),
            format!(
                "tensor {name} has shape {shape:?}, embedded encoder configuration implies {:?}",
                expected.value.shape()
            ),
        ));
    }
    let n = expected.value.len();
    let mut slot = ParamSlot::new(name.clone(), Tensor::from_vec(&shape, r.f32s(n, &name)?)?);
    slot.trainable = trainable;
    if trainable {
        slot.adam_m = Tensor::from_vec(&shape, r.f32s(n, &format!("{name} adam_m"))?)?;
        slot.adam_v = Tensor::from_vec(&shape, r.f32s(n, &format!("{name} adam_v"))?)?;
    }
    Ok(slot)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(4, "magic")? != MAGIC {
        return Err(Error::format(Some(0), "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            Some(4),
            format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let cfg_at = r.offset();
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32("encoder setting")? as usize;
    }
    let config = EncoderConfig {
        word_dim: dims[0],
        hidden_size: dims[1],
        num_layers: dims[2],
        max_seq_len: dims[3],
        output_dim: dims[4],
        dropout_rate: r.f64("dropout rate")?,
    };
    config
        .validate()
        .map_err(|e| Error::format(Some(cfg_at), format!("invalid encoder configuration: {e}")))?;
    // Reject absurd layouts before allocating for them.
    if config.param_count() as u128 * 12 > bytes.len() as u128 {
        return Err(Error::format(
            Some(cfg_at),
            "encoder configuration larger than the file",
        ));
    }
    let adam = AdamConfig {
        learning_rate: r.f64("learning rate")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        epsilon: r.f64("epsilon")?,
        step_count: r.u64("step count")?,
    };
    let epoch = r.u32("epoch")?;
    let seed = r.u64("seed")?;
    let rng_word_pos = r.u128("rng position")?;

    let vocab = r.u32("vocabulary size")? as usize;
    if vocab > r.remaining() / 2 {
        return Err(r.err(format!("vocabulary size {vocab} larger than the file")));
    }
    let words = (0..vocab).map(|_| r.string("word")).collect::<Result<Vec<_>>>()?;

    let template = EncoderParams::<f32>::zeros(&config);
    let expected_count = template.slots().len() + 1;
    let at = r.offset();
    let count = r.u32("tensor count")? as usize;
    if count != expected_count {
        return Err(Error::format(
            Some(at),
            format!("checkpoint holds {count} tensors, configuration implies {expected_count}"),
        ));
    }
    let table_slot = read_slot(
        &mut r,
        &ParamSlot::frozen(WORD_VECTORS, Tensor::zeros(&[vocab, config.word_dim])),
    )?;
    let mut params = template.clone();
    for (dst, tmpl) in params.slots_mut().into_iter().zip(template.slots()) {
        *dst = read_slot(&mut r, tmpl)?;
    }
    r.finish("last tensor")?;

    let table = WordVectorTable::new(words, table_slot.value)
        .map_err(|e| Error::format(None, format!("invalid vocabulary: {e}")))?;
    Ok(Checkpoint {
        encoder: TextEncoder::new(config, table, params)?,
        adam,
        epoch,
        seed,
        rng_word_pos,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&read_file(path)?).map_err(|e| e.with_path(path))
}
