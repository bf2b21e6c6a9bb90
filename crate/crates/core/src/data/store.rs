use std::collections::BTreeMap;

use super::{DataError, Episode, Source};

/// Append-only episode collection, kept sorted by episode id so iteration
/// order (and therefore serialization) is canonical regardless of the order
/// in which concurrent writers with pre-assigned id ranges land.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStore {
    env_name: String,
    frame_dim: usize,
    episodes: Vec<Episode>,
    partition_counts: BTreeMap<(Source, u32), usize>,
}

impl DatasetStore {
    pub fn new(env_name: impl Into<String>, frame_dim: usize) -> Self {
        DatasetStore {
            env_name: env_name.into(),
            frame_dim,
            episodes: Vec::new(),
            partition_counts: BTreeMap::new(),
        }
    }

    pub fn env_name(&self) -> &str {
        &self.env_name
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Appends an episode. Rejects duplicate ids, empty transition lists,
    /// and frame dimensions that do not match the store's environment.
    pub fn append(&mut self, ep: Episode) -> Result<(), DataError> {
        if ep.is_empty() {
            return Err(DataError::EmptyEpisode(ep.episode_id));
        }
        for tr in &ep.transitions {
            if tr.obs.frame_dim() != self.frame_dim {
                return Err(DataError::FrameDimMismatch {
                    got: tr.obs.frame_dim(),
                    want: self.frame_dim,
                });
            }
        }
        match self
            .episodes
            .binary_search_by_key(&ep.episode_id, |e| e.episode_id)
        {
            Ok(_) => Err(DataError::DuplicateEpisodeId(ep.episode_id)),
            Err(pos) => {
                *self
                    .partition_counts
                    .entry((ep.source, ep.round))
                    .or_insert(0) += 1;
                self.episodes.insert(pos, ep);
                Ok(())
            }
        }
    }

    pub fn contains(&self, episode_id: u64) -> bool {
        self.get(episode_id).is_some()
    }

    pub fn get(&self, episode_id: u64) -> Option<&Episode> {
        self.episodes
            .binary_search_by_key(&episode_id, |e| e.episode_id)
            .ok()
            .map(|i| &self.episodes[i])
    }

    /// Episodes in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn partition(&self, source: Source, round: u32) -> impl Iterator<Item = &Episode> {
        self.episodes
            .iter()
            .filter(move |e| e.source == source && e.round == round)
    }

    pub fn by_source(&self, source: Source) -> impl Iterator<Item = &Episode> {
        self.episodes.iter().filter(move |e| e.source == source)
    }

    pub fn partition_count(&self, source: Source, round: u32) -> usize {
        self.partition_counts
            .get(&(source, round))
            .copied()
            .unwrap_or(0)
    }

    pub fn partition_counts(&self) -> &BTreeMap<(Source, u32), usize> {
        &self.partition_counts
    }

    /// Largest id present, if any. Writers use this to claim fresh ranges.
    pub fn max_id(&self) -> Option<u64> {
        self.episodes.last().map(|e| e.episode_id)
    }

    pub fn stats(&self) -> DatasetStats {
        let mut s = DatasetStats::default();
        let mut total_len = 0usize;
        for ep in &self.episodes {
            match ep.source {
                Source::Human => s.human += 1,
                Source::Auto => s.auto += 1,
            }
            *s.by_round.entry(ep.round).or_insert(0) += 1;
            if ep.oracle_success {
                s.oracle_successes += 1;
            }
            if ep.detector_label {
                s.detector_positives += 1;
            }
            total_len += ep.len();
        }
        s.episodes = self.episodes.len();
        s.transitions = total_len;
        s.mean_episode_len = if s.episodes == 0 {
            0.0
        } else {
            total_len as f64 / s.episodes as f64
        };
        s
    }
}

/// Counting summary of a store; all derived, nothing authoritative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStats {
    pub episodes: usize,
    pub transitions: usize,
    pub human: usize,
    pub auto: usize,
    pub by_round: BTreeMap<u32, usize>,
    pub oracle_successes: usize,
    pub detector_positives: usize,
    pub mean_episode_len: f64,
}

impl DatasetStats {
    pub fn oracle_success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.oracle_successes as f64 / self.episodes as f64
        }
    }

    pub fn detector_positive_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.detector_positives as f64 / self.episodes as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Action, EnvParams, Observation, StageFlags, Transition, FRAME_DIM};

    fn ep(id: u64, source: Source, oracle: bool, detector: bool) -> Episode {
        let frame = vec![0.5; FRAME_DIM];
        Episode {
            episode_id: id,
            seed: id,
            source,
            round: if source == Source::Human { 0 } else { 1 },
            initial_state: vec![0.0; 4],
            transitions: vec![Transition {
                obs: Observation::from_frames(&[frame.clone(), frame]),
                act: Action::new(vec![0.1, 0.0, 1.0]),
            }],
            oracle_success: oracle,
            detector_label: detector,
            stage_flags: StageFlags::new(),
            env_params: EnvParams::new(),
        }
    }

    #[test]
    fn append_base_case_and_duplicate_rejection() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        store.append(ep(0, Source::Human, true, true)).unwrap();
        assert_eq!(store.len(), 1);
        let err = store.append(ep(0, Source::Human, true, true)).unwrap_err();
        assert!(matches!(err, DataError::DuplicateEpisodeId(0)));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn thousand_alternating_appends_partition_evenly() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        for id in 0..1000u64 {
            let source = if id % 2 == 0 { Source::Human } else { Source::Auto };
            store.append(ep(id, source, true, true)).unwrap();
        }
        assert_eq!(store.partition_count(Source::Human, 0), 500);
        assert_eq!(store.partition_count(Source::Auto, 1), 500);
        let total: usize = store.partition_counts().values().sum();
        assert_eq!(total, store.len());
    }

    #[test]
    fn interleaved_id_ranges_stay_unique_and_sorted() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        // Two writers with pre-assigned ranges landing out of order.
        for id in [100u64, 0, 101, 1, 102, 2] {
            store.append(ep(id, Source::Auto, false, false)).unwrap();
        }
        let ids: Vec<u64> = store.iter().map(|e| e.episode_id).collect();
        assert_eq!(ids, vec![0, 1, 2, 100, 101, 102]);
    }

    #[test]
    fn stats_counts() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        assert_eq!(store.stats(), DatasetStats::default());

        for id in 0..10u64 {
            store.append(ep(id, Source::Human, true, true)).unwrap();
        }
        let s = store.stats();
        assert_eq!(s.human, 10);
        assert_eq!(s.auto, 0);
        assert!((s.oracle_success_rate() - 1.0).abs() < 1e-12);

        // 50 human + 100 auto, 80 of the auto detector-positive.
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        for id in 0..50u64 {
            store.append(ep(id, Source::Human, true, true)).unwrap();
        }
        for id in 50..150u64 {
            let det = id < 130;
            store.append(ep(id, Source::Auto, det, det)).unwrap();
        }
        let s = store.stats();
        assert_eq!(s.human, 50);
        assert_eq!(s.auto, 100);
        let auto_pos = store
            .by_source(Source::Auto)
            .filter(|e| e.detector_label)
            .count();
        assert!((auto_pos as f64 / 100.0 - 0.8).abs() < 1e-12);
    }
}
