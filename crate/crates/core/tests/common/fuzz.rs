//! Structural mutations of every on-disk format. Each mutation is malformed
//! by construction, so the loaders must reject it with a located error.

use std::panic::{catch_unwind, AssertUnwindSafe};

use patr_core::dataio::{
    decode_checkpoint, decode_features, encode_checkpoint, encode_features_binary, encode_features_tsv,
    format_word_vectors, parse_word_vectors,
};
use patr_core::synthetic::SyntheticConfig;
use patr_core::trainer::{train, Checkpoint, TrainConfig};
use patr_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixtures {
    pub features_bin: Vec<u8>,
    pub features_tsv: String,
    pub words: String,
    pub checkpoint: Vec<u8>,
}

pub fn small_checkpoint() -> Checkpoint {
    let data = SyntheticConfig {
        train_pairs: 64,
        test_pairs: 8,
        ..SyntheticConfig::default()
    }
    .generate()
    .unwrap();
    let mut cfg = TrainConfig {
        batch_size: 32,
        epochs: 1,
        ..TrainConfig::default()
    };
    cfg.encoder.hidden_size = 8;
    cfg.encoder.num_layers = 2;
    train(
        &data.caption_train,
        Some(&data.click_train),
        &data.features,
        data.words,
        &data.stopwords,
        cfg,
    )
    .unwrap()
}

pub fn fixtures() -> Fixtures {
    let data = SyntheticConfig {
        train_pairs: 8,
        test_pairs: 8,
        ..SyntheticConfig::default()
    }
    .generate()
    .unwrap();
    Fixtures {
        features_bin: encode_features_binary(&data.features).unwrap(),
        features_tsv: encode_features_tsv(&data.features),
        words: format_word_vectors(&data.words),
        checkpoint: encode_checkpoint(&small_checkpoint()).unwrap(),
    }
}

/// One mutated file that was not rejected properly.
#[derive(Debug)]
pub struct Escape {
    pub format: &'static str,
    pub mutation: String,
    pub outcome: String,
}

pub fn check<T>(format: &'static str, mutation: String, run: impl FnOnce() -> patr_core::Result<T>) -> Option<Escape> {
    let outcome = match catch_unwind(AssertUnwindSafe(run)) {
        Err(_) => "panicked".to_string(),
        Ok(Ok(_)) => "accepted".to_string(),
        Ok(Err(Error::Format { line: Some(_), .. })) => return None,
        Ok(Err(e)) => format!("unlocated error: {e}"),
    };
    Some(Escape {
        format,
        mutation,
        outcome,
    })
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

fn mutate_lines(rng: &mut ChaCha8Rng, text: &str, first: usize, sep: char) -> (String, String) {
    let mut ls = lines(text);
    let i = rng.gen_range(first..ls.len());
    let kind = rng.gen_range(0..4);
    let what = match kind {
        0 => {
            let mut fields: Vec<&str> = ls[i].split(sep).collect();
            let j = rng.gen_range(1..fields.len());
            fields[j] = "x1.5";
            ls[i] = fields.join(&sep.to_string());
            "bad number"
        }
        1 => {
            let mut fields: Vec<&str> = ls[i].split(sep).collect();
            fields.pop();
            ls[i] = fields.join(&sep.to_string());
            "missing component"
        }
        2 => {
            let mut fields: Vec<&str> = ls[i].split(sep).collect();
            let j = rng.gen_range(1..fields.len());
            fields[j] = "NaN";
            ls[i] = fields.join(&sep.to_string());
            "non-finite value"
        }
        _ => {
            let extra = format!("{}{sep}0.5", ls[i]);
            ls[i] = extra;
            "extra component"
        }
    };
    (ls.join("\n") + "\n", format!("{what} on line {}", i + 1))
}

/// Runs `per_format` mutations of each format and returns the ones that
/// were not rejected with a located error, plus the number tried.
pub fn run(seed: u64, per_format: usize) -> (Vec<Escape>, usize) {
    let fx = fixtures();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut escapes = Vec::new();
    let mut tried = 0;

    for _ in 0..per_format {
        // Binary features.
        let mut b = fx.features_bin.clone();
        let (count_at, first_id_at) = (4, 12);
        let m = match rng.gen_range(0..6) {
            0 => {
                let cut = rng.gen_range(0..b.len());
                b.truncate(cut);
                format!("truncated to {cut}")
            }
            1 => {
                let n = rng.gen_range(1..9);
                b.extend((0..n).map(|_| rng.gen::<u8>()));
                format!("{n} trailing bytes")
            }
            2 => {
                let c = u32::from_le_bytes(b[count_at..count_at + 4].try_into().unwrap()) + rng.gen_range(1..5);
                b[count_at..count_at + 4].copy_from_slice(&c.to_le_bytes());
                format!("count raised to {c}")
            }
            3 => {
                b[rng.gen_range(0..4)] = b'#';
                "corrupt magic".to_string()
            }
            4 => {
                // Second record gets the first record's id ("img0"/"img1" share a length).
                let second = first_id_at + 2 + 4 + 32 * 4;
                let id = b[first_id_at + 2..first_id_at + 6].to_vec();
                b[second + 2..second + 6].copy_from_slice(&id);
                "duplicate id".to_string()
            }
            _ => {
                let rec = rng.gen_range(0..10);
                let at = first_id_at + rec * (2 + 4 + 32 * 4) + 6 + 4 * rng.gen_range(0..32);
                b[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
                format!("infinite value at byte {at}")
            }
        };
        escapes.extend(check("features-binary", m, || decode_features(&b)));

        let (t, m) = mutate_lines(&mut rng, &fx.features_tsv, 0, ',');
        escapes.extend(check("features-tsv", m, || decode_features(t.as_bytes())));

        let (t, m) = if rng.gen_bool(0.2) {
            let mut ls = lines(&fx.words);
            let n: i64 = ls[0].split(' ').next().unwrap().parse().unwrap();
            let delta = if rng.gen_bool(0.5) { 1 } else { -1 };
            ls[0] = format!("{} {}", n + delta, ls[0].split(' ').nth(1).unwrap());
            (ls.join("\n"), format!("header count {}", n + delta))
        } else {
            mutate_lines(&mut rng, &fx.words, 1, ' ')
        };
        escapes.extend(check("word-vectors", m, || parse_word_vectors(&t)));

        let mut c = fx.checkpoint.clone();
        let m = match rng.gen_range(0..5) {
            0 => {
                let cut = rng.gen_range(0..c.len());
                c.truncate(cut);
                format!("truncated to {cut}")
            }
            1 => {
                c.push(rng.gen());
                "trailing byte".to_string()
            }
            2 => {
                c[4] = c[4].wrapping_add(rng.gen_range(1..=255));
                "version changed".to_string()
            }
            3 => {
                let n = c.len();
                c[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
                "NaN in last tensor".to_string()
            }
            _ => {
                let at = c.windows(6).position(|w| w == b"proj.w").unwrap();
                c[at + 5] = b'x';
                "renamed tensor".to_string()
            }
        };
        escapes.extend(check("checkpoint", m, || decode_checkpoint(&c)));
        tried += 4;
    }
    (escapes, tried)
}
