//! Synthetic corpus generation, dataset file I/O, and spectral masking.
//!
//! Each token has a fixed random prototype embedding; an utterance emits a
//! variable number of noisy copies of the prototype per token. The generator
//! keeps the frame-level alignment (token id per frame) in a sidecar field
//! for one-hot frame targets; CTC training never reads it.

mod io;
mod mask;

pub use io::{load_dataset, save_dataset};
pub use mask::{apply_masks, MaskConfig};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TokenSequence;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub supervised: usize,
    pub unsupervised: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub vocab: usize,
    pub feature_dim: usize,
    /// Inclusive range of frames emitted per token.
    pub frames_per_token: (usize, usize),
    pub noise_sigma: f64,
    /// Inclusive range of tokens per utterance.
    pub utterance_tokens: (usize, usize),
    pub counts: SplitCounts,
    pub seed: u64,
    /// Resample adjacent duplicate tokens. Keeps utterances decodable by a
    /// blank-free frame classifier; defaults to on.
    #[serde(default = "default_true")]
    pub avoid_repeats: bool,
    /// Inclusive range of trailing silence-gap frames emitted after each
    /// token's prototype frames (noise around the zero vector, aligned to
    /// blank). A token's frame count covers its prototype frames plus its
    /// gap. Default (0, 0): no silence.
    #[serde(default)]
    pub silence_frames: (usize, usize),
    /// When set, token embeddings are rescaled to this Euclidean norm, so
    /// every token sits at the same distance from silence.
    #[serde(default)]
    pub embedding_norm: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("vocab and feature_dim must be positive".into()));
        }
        let (f_min, f_max) = self.frames_per_token;
        if f_min < 1 || f_max < f_min {
            return Err(Error::InvalidConfig(format!(
                "frames_per_token range ({f_min}, {f_max}) invalid; min >= 1 required"
            )));
        }
        let (l_min, l_max) = self.utterance_tokens;
        if l_min < 1 || l_max < l_min {
            return Err(Error::InvalidConfig(format!(
                "utterance_tokens range ({l_min}, {l_max}) invalid"
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.avoid_repeats && self.vocab == 1 && l_max > 1 {
            return Err(Error::InvalidConfig(
                "avoid_repeats with vocab 1 cannot produce multi-token utterances".into(),
            ));
        }
        let (s_min, s_max) = self.silence_frames;
        if s_max < s_min {
            return Err(Error::InvalidConfig(format!(
                "silence_frames range ({s_min}, {s_max}) invalid"
            )));
        }
        Ok(())
    }
}

/// One item of a split: a frame matrix plus, for labeled splits, the token
/// reference and the generator's frame alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T> {
    pub id: String,
    pub features: Array2<T>,
    pub reference: Option<TokenSequence>,
    /// Token id per frame; present when the reference is (sidecar field).
    pub alignment: Option<Vec<usize>>,
}

impl<T: Scalar> Utterance<T> {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus<T> {
    pub supervised: Vec<Utterance<T>>,
    pub unsupervised: Vec<Utterance<T>>,
    pub dev: Vec<Utterance<T>>,
    pub test: Vec<Utterance<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Supervised,
    Unsupervised,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Supervised, Split::Unsupervised, Split::Dev, Split::Test];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Supervised => "sup",
            Split::Unsupervised => "unsup",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// ChaCha stream index; stream 0 is reserved for the embeddings so that
    /// per-split streams never overlap each other or the prototypes.
    fn stream(self) -> u64 {
        match self {
            Split::Supervised => 1,
            Split::Unsupervised => 2,
            Split::Dev => 3,
            Split::Test => 4,
        }
    }

    fn count(self, c: &SplitCounts) -> usize {
        match self {
            Split::Supervised => c.supervised,
            Split::Unsupervised => c.unsupervised,
            Split::Dev => c.dev,
            Split::Test => c.test,
        }
    }

    fn labeled(self) -> bool {
        !matches!(self, Split::Unsupervised)
    }
}

/// Prototype embeddings, one per token id in `[1, vocab]`, drawn once from
/// the corpus seed (stream 0).
pub fn token_embeddings(config: &CorpusConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    (0..config.vocab)
        .map(|_| {
            let mut e: Vec<f64> = (0..config.feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            if let Some(norm) = config.embedding_norm {
                let len = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 0.0 {
                    for v in &mut e {
                        *v *= norm / len;
                    }
                }
            }
            e
        })
        .collect()
}

/// Generates one split from its derived stream; regenerating any single
/// split reproduces exactly what full generation produces for it.
pub fn generate_split<T: Scalar>(config: &CorpusConfig, split: Split) -> Result<Vec<Utterance<T>>> {
    config.validate()?;
    let embeddings = token_embeddings(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(split.stream());
    let n = split.count(&config.counts);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{}-{:05}", split.tag(), i);
        out.push(generate_utterance(config, &embeddings, &mut rng, id, split.labeled())?);
    }
    Ok(out)
}

pub fn generate_corpus<T: Scalar>(config: &CorpusConfig) -> Result<Corpus<T>> {
    Ok(Corpus {
        supervised: generate_split(config, Split::Supervised)?,
        unsupervised: generate_split(config, Split::Unsupervised)?,
        dev: generate_split(config, Split::Dev)?,
        test: generate_split(config, Split::Test)?,
    })
}

fn generate_utterance<T: Scalar>(
    config: &CorpusConfig,
    embeddings: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
    id: String,
    labeled: bool,
) -> Result<Utterance<T>> {
    let (l_min, l_max) = config.utterance_tokens;
    let (f_min, f_max) = config.frames_per_token;
    let len = rng.random_range(l_min..=l_max);
    let mut tokens: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        let mut t = rng.random_range(1..=config.vocab);
        if config.avoid_repeats {
            while Some(&t) == tokens.last() {
                t = rng.random_range(1..=config.vocab);
            }
        }
        tokens.push(t);
    }

    let (s_min, s_max) = config.silence_frames;
    let mut rows: Vec<T> = Vec::new();
    let mut alignment = Vec::new();
    for &tok in &tokens {
        let frames = rng.random_range(f_min..=f_max);
        let proto = &embeddings[tok - 1];
        for _ in 0..frames {
            for &p in proto {
                let noise: f64 = StandardNormal.sample(rng);
                rows.push(T::from_config(p + config.noise_sigma * noise));
            }
            alignment.push(tok);
        }
        // Trailing silence gap: noise around the zero vector, blank-aligned.
        let gap = rng.random_range(s_min..=s_max);
        for _ in 0..gap {
            for _ in 0..config.feature_dim {
                let noise: f64 = StandardNormal.sample(rng);
                rows.push(T::from_config(config.noise_sigma * noise));
            }
            alignment.push(crate::BLANK);
        }
    }
    let frames = alignment.len();
    let features = Array2::from_shape_vec((frames, config.feature_dim), rows)
        .expect("row count matches alignment");

    let reference = TokenSequence::new(tokens)?;
    Ok(Utterance {
        id,
        features,
        reference: labeled.then_some(reference),
        alignment: labeled.then_some(alignment),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CorpusConfig {
        CorpusConfig {
            vocab: 4,
            feature_dim: 6,
            frames_per_token: (2, 3),
            noise_sigma: 0.1,
            utterance_tokens: (2, 4),
            counts: SplitCounts {
                supervised: 3,
                unsupervised: 5,
                dev: 2,
                test: 2,
            },
            seed: 42,
            avoid_repeats: true,
            silence_frames: (0, 0),
            embedding_norm: None,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a: Corpus<f64> = generate_corpus(&config()).unwrap();
        let b: Corpus<f64> = generate_corpus(&config()).unwrap();
        assert_eq!(a.supervised, b.supervised);
        assert_eq!(a.unsupervised, b.unsupervised);
        assert_eq!(a.dev, b.dev);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn split_ids_are_disjoint() {
        let c: Corpus<f64> = generate_corpus(&config()).unwrap();
        let sup: std::collections::HashSet<_> =
            c.supervised.iter().map(|u| u.id.clone()).collect();
        assert!(c.unsupervised.iter().all(|u| !sup.contains(&u.id)));
    }

    #[test]
    fn single_split_matches_full_generation() {
        let full: Corpus<f64> = generate_corpus(&config()).unwrap();
        let dev: Vec<Utterance<f64>> = generate_split(&config(), Split::Dev).unwrap();
        assert_eq!(full.dev, dev);
    }

    #[test]
    fn noiseless_frames_equal_prototypes() {
        let cfg = CorpusConfig {
            noise_sigma: 0.0,
            frames_per_token: (2, 2),
            ..config()
        };
        let embeddings = token_embeddings(&cfg);
        let split: Vec<Utterance<f64>> = generate_split(&cfg, Split::Supervised).unwrap();
        for utt in &split {
            let reference = utt.reference.as_ref().unwrap();
            assert_eq!(utt.frames(), 2 * reference.len());
            for (frame, &tok) in utt
                .features
                .axis_iter(ndarray::Axis(0))
                .zip(utt.alignment.as_ref().unwrap())
            {
                let proto = &embeddings[tok - 1];
                for (a, b) in frame.iter().zip(proto) {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn unsupervised_split_is_unlabeled() {
        let c: Corpus<f64> = generate_corpus(&config()).unwrap();
        assert!(c.unsupervised.iter().all(|u| u.reference.is_none()));
        assert!(c.unsupervised.iter().all(|u| u.alignment.is_none()));
        assert!(c.supervised.iter().all(|u| u.reference.is_some()));
    }

    #[test]
    fn avoid_repeats_holds() {
        let cfg = CorpusConfig {
            counts: SplitCounts {
                supervised: 50,
                unsupervised: 0,
                dev: 0,
                test: 0,
            },
            ..config()
        };
        let split: Vec<Utterance<f64>> = generate_split(&cfg, Split::Supervised).unwrap();
        for utt in &split {
            let toks = utt.reference.as_ref().unwrap().tokens();
            assert!(toks.windows(2).all(|w| w[0] != w[1]), "{toks:?}");
        }
    }

    #[test]
    fn silence_gaps_are_blank_aligned_near_zero_frames() {
        let cfg = CorpusConfig {
            noise_sigma: 0.0,
            frames_per_token: (2, 2),
            silence_frames: (1, 2),
            ..config()
        };
        let split: Vec<Utterance<f64>> = generate_split(&cfg, Split::Dev).unwrap();
        for utt in &split {
            let alignment = utt.alignment.as_ref().unwrap();
            let blanks = alignment.iter().filter(|&&a| a == crate::BLANK).count();
            let tokens = utt.reference.as_ref().unwrap().len();
            assert!(blanks >= tokens, "at least one gap frame per token");
            assert_eq!(utt.frames(), alignment.len());
            for (frame, &a) in utt.features.axis_iter(ndarray::Axis(0)).zip(alignment) {
                if a == crate::BLANK {
                    assert!(frame.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config();
        c.frames_per_token = (0, 2);
        assert!(c.validate().is_err());
        let mut c = config();
        c.noise_sigma = -1.0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.utterance_tokens = (3, 2);
        assert!(c.validate().is_err());
    }
}
