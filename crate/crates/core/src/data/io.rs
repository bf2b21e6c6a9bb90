//! Dataset file format: one-line JSON header followed by one JSON record
//! per episode. Floats go through serde_json's shortest-round-trip encoding,
//! so content hashes are stable across platforms and every value survives a
//! round trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Action, DatasetStore, Episode, Observation, Source, Transition};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreReadError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unsupported schema version {got}")]
    SchemaVersion { line: usize, got: u32 },
    #[error("line {line}: {source}")]
    Store {
        line: usize,
        source: super::DataError,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    env: String,
    frame_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct RawTransition {
    obs: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawEpisode {
    episode_id: u64,
    seed: u64,
    source: String,
    round: u32,
    initial_state: Vec<f64>,
    transitions: Vec<RawTransition>,
    oracle_success: bool,
    detector_label: bool,
    stage_flags: BTreeMap<String, bool>,
    env_params: BTreeMap<String, f64>,
}

fn to_raw(ep: &Episode) -> RawEpisode {
    RawEpisode {
        episode_id: ep.episode_id,
        seed: ep.seed,
        source: ep.source.as_str().to_string(),
        round: ep.round,
        initial_state: ep.initial_state.clone(),
        transitions: ep
            .transitions
            .iter()
            .map(|t| RawTransition {
                obs: t.obs.flat().to_vec(),
                act: t.act.values().to_vec(),
            })
            .collect(),
        oracle_success: ep.oracle_success,
        detector_label: ep.detector_label,
        stage_flags: ep.stage_flags.clone(),
        env_params: ep.env_params.clone(),
    }
}

fn from_raw(raw: RawEpisode, frame_dim: usize, line: usize) -> Result<Episode, StoreReadError> {
    let source = match raw.source.as_str() {
        "human" => Source::Human,
        "auto" => Source::Auto,
        other => {
            return Err(StoreReadError::Parse {
                line,
                msg: format!("unknown source {other:?}"),
            })
        }
    };
    let mut transitions = Vec::with_capacity(raw.transitions.len());
    for t in raw.transitions {
        if t.obs.is_empty() || t.obs.len() % frame_dim != 0 {
            return Err(StoreReadError::Parse {
                line,
                msg: format!(
                    "observation length {} not a multiple of frame dim {frame_dim}",
                    t.obs.len()
                ),
            });
        }
        transitions.push(Transition {
            obs: Observation::from_flat(frame_dim, t.obs),
            act: Action::new(t.act),
        });
    }
    Ok(Episode {
        episode_id: raw.episode_id,
        seed: raw.seed,
        source,
        round: raw.round,
        initial_state: raw.initial_state,
        transitions,
        oracle_success: raw.oracle_success,
        detector_label: raw.detector_label,
        stage_flags: raw.stage_flags,
        env_params: raw.env_params,
    })
}

/// Serializes the whole store (header + one record per line).
pub fn write_store<W: Write>(store: &DatasetStore, mut out: W) -> std::io::Result<()> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        env: store.env_name().to_string(),
        frame_dim: store.frame_dim(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for ep in store.iter() {
        serde_json::to_writer(&mut out, &to_raw(ep))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a store written by [`write_store`], reporting the offending line
/// on malformed input.
pub fn read_store<R: BufRead>(input: R) -> Result<DatasetStore, StoreReadError> {
    let mut lines = input.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(StoreReadError::Parse {
        line: 1,
        msg: "missing header line".to_string(),
    })?;
    let header_line = header_line?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| StoreReadError::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(StoreReadError::SchemaVersion {
            line: 1,
            got: header.schema_version,
        });
    }
    let mut store = DatasetStore::new(header.env, header.frame_dim);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEpisode =
            serde_json::from_str(&line).map_err(|e| StoreReadError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
        let ep = from_raw(raw, store.frame_dim(), line_no)?;
        store
            .append(ep)
            .map_err(|source| StoreReadError::Store { line: line_no, source })?;
    }
    Ok(store)
}

/// SHA-256 of the canonical serialization, hex-encoded.
pub fn content_hash(store: &DatasetStore) -> String {
    let mut bytes = Vec::new();
    write_store(store, &mut bytes).expect("in-memory serialization");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn store_to_string(store: &DatasetStore) -> String {
    let mut bytes = Vec::new();
    write_store(store, &mut bytes).expect("in-memory serialization");
    String::from_utf8(bytes).expect("json is utf-8")
}

#[cfg(test)]
mod tests {
    use super::super::{EnvParams, StageFlags, FRAME_DIM};
    use super::*;

    fn sample_episode(id: u64) -> Episode {
        let f0 = vec![0.1, 0.9, 1.0, 0.3, 0.2, 0.0, 0.6, -0.2];
        let f1 = vec![0.15, 0.85, 1.0, 0.3, 0.2, 0.0, 0.55, -0.15];
        let mut flags = StageFlags::new();
        flags.insert("grasped".into(), true);
        flags.insert("moved".into(), false);
        flags.insert("placed".into(), false);
        let mut params = EnvParams::new();
        params.insert("action_gain".into(), 1.0);
        params.insert("drift_accum".into(), 0.0);
        Episode {
            episode_id: id,
            seed: 7 + id,
            source: Source::Human,
            round: 0,
            initial_state: vec![0.1, 0.9, 1.0, 0.3, 0.2, 0.0],
            transitions: vec![
                Transition {
                    obs: Observation::from_frames(&[f0.clone(), f0.clone()]),
                    act: Action::new(vec![0.05, -0.02, 1.0]),
                },
                Transition {
                    obs: Observation::from_frames(&[f0, f1]),
                    act: Action::new(vec![0.04, -0.01, 1.0]),
                },
            ],
            oracle_success: false,
            detector_label: true,
            stage_flags: flags,
            env_params: params,
        }
    }

    #[test]
    fn empty_store_round_trips() {
        let store = DatasetStore::new("peg2d", FRAME_DIM);
        let text = store_to_string(&store);
        assert_eq!(text.lines().count(), 1);
        let back = read_store(text.as_bytes()).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn single_episode_round_trips() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        store.append(sample_episode(0)).unwrap();
        let text = store_to_string(&store);
        let back = read_store(text.as_bytes()).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn hundred_episode_store_preserves_content_hash() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        for id in 0..100 {
            store.append(sample_episode(id)).unwrap();
        }
        let h1 = content_hash(&store);
        let back = read_store(store_to_string(&store).as_bytes()).unwrap();
        assert_eq!(content_hash(&back), h1);
        assert_eq!(store, back);
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        store.append(sample_episode(0)).unwrap();
        let mut text = store_to_string(&store);
        text.push_str("{not json\n");
        let err = read_store(text.as_bytes()).unwrap_err();
        match err {
            StoreReadError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
