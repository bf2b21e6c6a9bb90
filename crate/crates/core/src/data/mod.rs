//! Domain types shared by every other module: observations, actions,
//! episodes, the dataset store, and per-sample training weights.

mod io;
mod store;

pub use io::{content_hash, read_store, store_to_string, write_store, StoreReadError};
pub use store::{DatasetStats, DatasetStore};

use std::collections::BTreeMap;

use thiserror::Error;

/// Feature layout of a single observation frame on the 2D manipulation
/// tasks: `[ee_x, ee_y, gripper, obj_x, obj_y, carried, goal_dx, goal_dy]`.
pub const FRAME_DIM: usize = 8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("episode id {0} already present in store")]
    DuplicateEpisodeId(u64),
    #[error("episode {0} has no transitions")]
    EmptyEpisode(u64),
    #[error("observation frame dim {got} does not match store frame dim {want}")]
    FrameDimMismatch { got: usize, want: usize },
    #[error("weight table key ({0}, {1}) not present in store")]
    UnknownWeightKey(u64, u32),
    #[error("weight table has non-positive total mass")]
    DegenerateWeights,
    #[error("negative weight for key ({0}, {1})")]
    NegativeWeight(u64, u32),
    #[error("dataset store is empty")]
    EmptyStore,
}

/// A stacked observation: the last `history_len` feature frames, oldest
/// first, front-padded by repeating the first frame of the episode. The
/// final frame is the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    frame_dim: usize,
    data: Vec<f64>,
}

impl Observation {
    pub fn from_frames(frames: &[Vec<f64>]) -> Self {
        assert!(!frames.is_empty(), "observation needs at least one frame");
        let frame_dim = frames[0].len();
        let mut data = Vec::with_capacity(frame_dim * frames.len());
        for f in frames {
            assert_eq!(f.len(), frame_dim, "ragged observation frames");
            data.extend_from_slice(f);
        }
        Observation { frame_dim, data }
    }

    /// Rebuild from the flat on-disk representation.
    pub fn from_flat(frame_dim: usize, data: Vec<f64>) -> Self {
        assert!(frame_dim > 0 && !data.is_empty() && data.len() % frame_dim == 0);
        Observation { frame_dim, data }
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn history_len(&self) -> usize {
        self.data.len() / self.frame_dim
    }

    /// All frames concatenated oldest-first; the policy input.
    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// The current (most recent) frame.
    pub fn features(&self) -> &[f64] {
        &self.data[self.data.len() - self.frame_dim..]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.frame_dim)
    }
}

/// Commanded end-effector velocity plus gripper command, all in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    values: Vec<f64>,
}

impl Action {
    /// Clips every component into [-1, 1].
    pub fn new(values: Vec<f64>) -> Self {
        let values = values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Action { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Human,
    Auto,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::Auto => "auto",
        }
    }
}

/// One recorded state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub act: Action,
}

/// Environment parameters frozen at collection time (drift level, action
/// gain, OOD markers). Stored as a sorted map so serialization is canonical.
pub type EnvParams = BTreeMap<String, f64>;

/// Stage name → reached flag, e.g. grasped/moved/placed.
pub type StageFlags = BTreeMap<String, bool>;

/// One rollout: provenance, the transition sequence, and both the oracle
/// and the (possibly noisy) detector verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub seed: u64,
    pub source: Source,
    pub round: u32,
    pub initial_state: Vec<f64>,
    pub transitions: Vec<Transition>,
    pub oracle_success: bool,
    pub detector_label: bool,
    pub stage_flags: StageFlags,
    pub env_params: EnvParams,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Normalized per-transition training weights, keyed by
/// `(episode_id, transition_index)`. Keys absent from the table carry zero
/// weight; present keys always sum to 1 (within 1e-9, checked on build).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeightTable {
    weights: BTreeMap<(u64, u32), f64>,
}

impl SampleWeightTable {
    /// Builds a table from raw nonnegative masses, validating that every key
    /// exists in `store` and normalizing the total to 1.
    pub fn new(
        store: &DatasetStore,
        entries: Vec<((u64, u32), f64)>,
    ) -> Result<Self, DataError> {
        let mut weights = BTreeMap::new();
        let mut total = 0.0;
        for ((id, t), w) in entries {
            if w < 0.0 {
                return Err(DataError::NegativeWeight(id, t));
            }
            let ep = store
                .get(id)
                .ok_or(DataError::UnknownWeightKey(id, t))?;
            if t as usize >= ep.len() {
                return Err(DataError::UnknownWeightKey(id, t));
            }
            total += w;
            weights.insert((id, t), w);
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(DataError::DegenerateWeights);
        }
        for w in weights.values_mut() {
            *w /= total;
        }
        Ok(SampleWeightTable { weights })
    }

    /// Uniform table over every transition in the store.
    pub fn uniform(store: &DatasetStore) -> Result<Self, DataError> {
        Self::uniform_over(store, store.iter())
    }

    /// Uniform table over the transitions of the given episodes.
    pub fn uniform_over<'a>(
        store: &DatasetStore,
        episodes: impl Iterator<Item = &'a Episode>,
    ) -> Result<Self, DataError> {
        let entries: Vec<_> = episodes
            .flat_map(|ep| (0..ep.len() as u32).map(move |t| ((ep.episode_id, t), 1.0)))
            .collect();
        if entries.is_empty() {
            return Err(DataError::EmptyStore);
        }
        Self::new(store, entries)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, id: u64, t: u32) -> f64 {
        self.weights.get(&(id, t)).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.weights.values().sum()
    }

    /// Iterates in key order (deterministic).
    pub fn iter(&self) -> impl Iterator<Item = (&(u64, u32), &f64)> {
        self.weights.iter()
    }

    /// Total mass on keys whose episode satisfies the predicate.
    pub fn mass_where(&self, store: &DatasetStore, pred: impl Fn(&Episode) -> bool) -> f64 {
        self.weights
            .iter()
            .filter(|((id, _), _)| store.get(*id).map(&pred).unwrap_or(false))
            .map(|(_, w)| w)
            .sum()
    }
}

/// Draws keys from a [`SampleWeightTable`] proportionally to their weights.
/// Cumulative-sum inversion in key order, so identical seeds give identical
/// minibatches everywhere.
pub struct WeightedSampler {
    keys: Vec<(u64, u32)>,
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(table: &SampleWeightTable) -> Self {
        let mut keys = Vec::with_capacity(table.len());
        let mut cumulative = Vec::with_capacity(table.len());
        let mut acc = 0.0;
        for (k, w) in table.iter() {
            acc += w;
            keys.push(*k);
            cumulative.push(acc);
        }
        WeightedSampler { keys, cumulative }
    }

    pub fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> (u64, u32) {
        use rand::Rng;
        let total = *self.cumulative.last().expect("sampler over empty table");
        let u: f64 = rng.gen::<f64>() * total;
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).expect("finite cumulative weights"))
        {
            Ok(i) => (i + 1).min(self.keys.len() - 1),
            Err(i) => i.min(self.keys.len() - 1),
        };
        self.keys[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    fn tiny_episode(id: u64, source: Source, steps: usize) -> Episode {
        let frame = vec![0.0; FRAME_DIM];
        let obs = Observation::from_frames(&[frame.clone(), frame]);
        Episode {
            episode_id: id,
            seed: id,
            source,
            round: if source == Source::Human { 0 } else { 1 },
            initial_state: vec![0.0; 4],
            transitions: (0..steps)
                .map(|_| Transition {
                    obs: obs.clone(),
                    act: Action::new(vec![0.0, 0.0, 1.0]),
                })
                .collect(),
            oracle_success: true,
            detector_label: true,
            stage_flags: StageFlags::new(),
            env_params: EnvParams::new(),
        }
    }

    #[test]
    fn action_components_are_clipped() {
        let a = Action::new(vec![2.0, -3.5, 0.25]);
        assert_eq!(a.values(), &[1.0, -1.0, 0.25]);
    }

    #[test]
    fn observation_front_padding_layout() {
        let first = vec![1.0; FRAME_DIM];
        let obs = Observation::from_frames(&[first.clone(), first.clone()]);
        assert_eq!(obs.history_len(), 2);
        assert_eq!(obs.features(), &first[..]);
        assert_eq!(obs.flat().len(), 2 * FRAME_DIM);
    }

    #[test]
    fn weight_table_normalizes_and_validates_keys() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        store.append(tiny_episode(0, Source::Human, 2)).unwrap();
        let table =
            SampleWeightTable::new(&store, vec![((0, 0), 3.0), ((0, 1), 1.0)]).unwrap();
        assert!((table.total() - 1.0).abs() < 1e-12);
        assert!((table.get(0, 0) - 0.75).abs() < 1e-12);
        assert!(matches!(
            SampleWeightTable::new(&store, vec![((0, 5), 1.0)]),
            Err(DataError::UnknownWeightKey(0, 5))
        ));
        assert!(matches!(
            SampleWeightTable::new(&store, vec![((1, 0), 1.0)]),
            Err(DataError::UnknownWeightKey(1, 0))
        ));
    }

    #[test]
    fn weighted_sampler_matches_weights() {
        let mut store = DatasetStore::new("peg2d", FRAME_DIM);
        store.append(tiny_episode(0, Source::Human, 1)).unwrap();
        store.append(tiny_episode(1, Source::Auto, 1)).unwrap();
        let table =
            SampleWeightTable::new(&store, vec![((0, 0), 0.8), ((1, 0), 0.2)]).unwrap();
        let sampler = WeightedSampler::new(&table);
        let mut rng = rng_from_seed(11);
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| sampler.draw(&mut rng) == (0, 0))
            .count();
        let frac = hits as f64 / draws as f64;
        assert!((frac - 0.8).abs() < 0.01, "frac={frac}");
    }
}
