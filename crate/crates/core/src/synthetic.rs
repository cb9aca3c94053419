//! Deterministic clustered toy data for smoke tests and demos.
//!
//! Each of `clusters` concepts has one image (its cluster centre) and a
//! private set of content words. Texts mix content words of their concept
//! with generic words shared by every concept and stop words, so the lexical
//! filter has real overlaps to remove.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{FeatureStore, LabelMap, PairDataset, PairSource};
use crate::diffcore::Tensor;
use crate::error::Result;
use crate::textenc::{StopWords, WordVectorTable};

const GENERIC: [&str; 6] = ["photo", "image", "picture", "view", "scene", "shot"];
const FILLER: [&str; 5] = ["a", "the", "of", "with", "on"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub feature_dim: usize,
    pub word_dim: usize,
    pub words_per_cluster: usize,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// Tokens per caption-style text.
    pub caption_len: usize,
    /// Tokens per click-style text.
    pub click_len: usize,
    /// Standard deviation of the cluster centre coordinates.
    pub center_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            clusters: 10,
            feature_dim: 32,
            word_dim: 16,
            words_per_cluster: 6,
            train_pairs: 2000,
            test_pairs: 500,
            caption_len: 5,
            click_len: 2,
            center_scale: 0.25,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub features: FeatureStore,
    pub words: WordVectorTable,
    pub labels: LabelMap,
    pub stopwords: StopWords,
    pub caption_train: PairDataset,
    pub caption_test: PairDataset,
    pub click_train: PairDataset,
    pub click_test: PairDataset,
}

pub fn image_id(cluster: usize) -> String {
    format!("img{cluster}")
}

pub fn cluster_word(cluster: usize, j: usize) -> String {
    format!("c{cluster}w{j}")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticConfig {
    pub fn generate(&self) -> Result<SyntheticData> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let records: Vec<(String, Vec<f32>)> = (0..self.clusters)
            .map(|k| {
                let v = (0..self.feature_dim)
                    .map(|_| (normal(&mut rng) * self.center_scale) as f32)
                    .collect();
                (image_id(k), v)
            })
            .collect();
        let features = FeatureStore::from_records(self.feature_dim, records)?;

        let mut vocab: Vec<String> = (0..self.clusters)
            .flat_map(|k| (0..self.words_per_cluster).map(move |j| cluster_word(k, j)))
            .collect();
        vocab.extend(GENERIC.iter().chain(&FILLER).map(|s| s.to_string()));
        let scale = 1.0 / (self.word_dim as f64).sqrt();
        let data = (0..vocab.len() * self.word_dim)
            .map(|_| (normal(&mut rng) * scale) as f32)
            .collect();
        let words = WordVectorTable::new(vocab.clone(), Tensor::from_vec(&[vocab.len(), self.word_dim], data)?)?;

        let labels = (0..self.clusters)
            .map(|k| (image_id(k), format!("concept{k}")))
            .collect();

        let text = |rng: &mut ChaCha8Rng, k: usize, len: usize, caption: bool| -> String {
            let mut own: Vec<usize> = (0..self.words_per_cluster).collect();
            own.shuffle(rng);
            let mut toks: Vec<String> = Vec::with_capacity(len);
            if caption && len >= 3 {
                toks.push(GENERIC[rng.gen_range(0..GENERIC.len())].to_string());
                toks.push(FILLER[rng.gen_range(0..FILLER.len())].to_string());
            }
            let mut j = 0;
            while toks.len() < len {
                toks.push(cluster_word(k, own[j % own.len()]));
                j += 1;
            }
            toks.shuffle(rng);
            toks.join(" ")
        };
        let pairs = |rng: &mut ChaCha8Rng, n: usize, source: PairSource| -> PairDataset {
            let (len, caption) = match source {
                PairSource::Caption => (self.caption_len, true),
                PairSource::Click => (self.click_len, false),
            };
            let samples = (0..n)
                .map(|_| {
                    let k = rng.gen_range(0..self.clusters);
                    (text(rng, k, len, caption), image_id(k))
                })
                .collect();
            PairDataset { source, samples }
        };
        let caption_train = pairs(&mut rng, self.train_pairs, PairSource::Caption);
        let caption_test = pairs(&mut rng, self.test_pairs, PairSource::Caption);
        let click_train = pairs(&mut rng, self.train_pairs, PairSource::Click);
        let click_test = pairs(&mut rng, self.test_pairs, PairSource::Click);

        Ok(SyntheticData {
            features,
            words,
            labels,
            stopwords: StopWords::default_english(),
            caption_train,
            caption_test,
            click_train,
            click_test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let cfg = SyntheticConfig {
            train_pairs: 50,
            test_pairs: 10,
            ..SyntheticConfig::default()
        };
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.caption_train, b.caption_train);
        assert_eq!(a.features.len(), 10);
        assert_eq!(a.click_test.len(), 10);
        for (t, _) in &a.caption_train.samples {
            assert_eq!(t.split(' ').count(), 5);
        }
        for (t, id) in &a.click_train.samples {
            let k: usize = id[3..].parse().unwrap();
            assert!(t.split(' ').all(|w| w.starts_with(&format!("c{k}w"))));
        }
    }
}
