//! Line-delimited dataset files: one JSON object per line with fields `id`,
//! `features` (row-major T x D), and optional `tokens` / `alignment`.
//! Features are stored as f64 decimals, which round-trips exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::losses::TokenSequence;
use crate::Scalar;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    id: String,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alignment: Option<Vec<usize>>,
}

pub fn save_dataset<T: Scalar>(path: &Path, utterances: &[Utterance<T>]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for utt in utterances {
        let record = UtteranceRecord {
            id: utt.id.clone(),
            features: utt
                .features
                .axis_iter(ndarray::Axis(0))
                .map(|row| row.iter().map(|v| v.as_f64()).collect())
                .collect(),
            tokens: utt.reference.as_ref().map(|r| r.tokens().to_vec()),
            alignment: utt.alignment.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidConfig(format!("serialize {}: {e}", utt.id)))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Vec<Utterance<T>>> {
    let display = path.display().to_string();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let parse_err = |msg: String| Error::DatasetParse {
            path: display.clone(),
            line: line_no,
            msg,
        };
        let line = line?;
        let record: UtteranceRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let frames = record.features.len();
        let dim = record.features.first().map(|r| r.len()).unwrap_or(0);
        if frames == 0 || dim == 0 {
            return Err(parse_err(format!("utterance {} has no frames", record.id)));
        }
        if let Some(bad) = record.features.iter().position(|r| r.len() != dim) {
            return Err(parse_err(format!(
                "utterance {}: row {bad} has {} values, expected {dim}",
                record.id,
                record.features[bad].len()
            )));
        }
        if let Some(al) = &record.alignment {
            if al.len() != frames {
                return Err(parse_err(format!(
                    "utterance {}: alignment length {} != {frames} frames",
                    record.id,
                    al.len()
                )));
            }
        }
        let flat: Vec<T> = record
            .features
            .iter()
            .flatten()
            .map(|&v| T::from_config(v))
            .collect();
        let features = Array2::from_shape_vec((frames, dim), flat)
            .map_err(|e| parse_err(e.to_string()))?;
        let reference = match record.tokens {
            None => None,
            Some(t) => Some(TokenSequence::new(t).map_err(|e| parse_err(e.to_string()))?),
        };
        out.push(Utterance {
            id: record.id,
            features,
            reference,
            alignment: record.alignment,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, Corpus, CorpusConfig, SplitCounts};

    fn small_corpus() -> Corpus<f64> {
        generate_corpus(&CorpusConfig {
            vocab: 3,
            feature_dim: 4,
            frames_per_token: (2, 3),
            noise_sigma: 0.2,
            utterance_tokens: (1, 3),
            counts: SplitCounts {
                supervised: 3,
                unsupervised: 2,
                dev: 1,
                test: 1,
            },
            seed: 5,
            avoid_repeats: true,
            silence_frames: (0, 0),
            embedding_norm: None,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let corpus = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sup.jsonl");
        save_dataset(&path, &corpus.supervised).unwrap();
        let loaded: Vec<Utterance<f64>> = load_dataset(&path).unwrap();
        assert_eq!(loaded, corpus.supervised);

        let path = dir.path().join("unsup.jsonl");
        save_dataset(&path, &corpus.unsupervised).unwrap();
        let loaded: Vec<Utterance<f64>> = load_dataset(&path).unwrap();
        assert_eq!(loaded, corpus.unsupervised);
    }

    #[test]
    fn missing_tokens_loads_as_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "{\"id\":\"u0\",\"features\":[[1.0,2.0]]}\n").unwrap();
        let loaded: Vec<Utterance<f64>> = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(loaded[0].reference.is_none());
    }

    #[test]
    fn truncated_line_error_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"u0\",\"features\":[[1.0]]}\n{\"id\":\"u1\",\"features\":[[1.0",
        )
        .unwrap();
        match load_dataset::<f64>(&path) {
            Err(Error::DatasetParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"u0\",\"features\":[[1.0,2.0],[3.0]]}\n",
        )
        .unwrap();
        match load_dataset::<f64>(&path) {
            Err(Error::DatasetParse { line, msg, .. }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("row 1"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
