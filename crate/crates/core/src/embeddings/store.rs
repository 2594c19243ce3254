use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{read_swem, write_swem, EmbeddingError, Observation, SceneState, SwemReader, SyntheticEncoder};
use crate::geometry::Pose;
use crate::graph::FrameKey;

/// In-memory embedding store keyed by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameStore {
    frames: BTreeMap<FrameKey, Observation>,
}

impl FrameStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: FrameKey, obs: Observation) {
        self.frames.insert(key, obs.with_key(key));
    }

    pub fn get(&self, key: &FrameKey) -> Result<&Observation, EmbeddingError> {
        self.frames.get(key).ok_or(EmbeddingError::MissingFrame(*key))
    }

    pub fn contains(&self, key: &FrameKey) -> bool {
        self.frames.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FrameKey, &Observation)> {
        self.frames.iter()
    }

    pub fn extend(&mut self, other: FrameStore) {
        self.frames.extend(other.frames);
    }

    /// Frames whose key satisfies `keep`, in key order.
    pub fn select(&self, keep: impl Fn(&FrameKey) -> bool) -> Vec<&Observation> {
        self.frames.iter().filter(|(k, _)| keep(k)).map(|(_, o)| o).collect()
    }

    pub fn save(&self, path: &Path, keys: impl IntoIterator<Item = FrameKey>) -> Result<(), EmbeddingError> {
        let frames: Vec<Observation> = keys.into_iter().filter_map(|k| self.frames.get(&k).cloned()).collect();
        write_swem(path, &frames).map(|_| ())
    }

    pub fn save_all(&self, path: &Path) -> Result<(), EmbeddingError> {
        self.save(path, self.frames.keys().copied())
    }

    /// Loads every keyed frame of a `.swem` file.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let mut store = Self::new();
        for obs in read_swem(path)? {
            if let Some(key) = obs.meta.key {
                store.frames.insert(key, obs);
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Synthetic,
    File,
}

/// Source of camera observations during execution and demonstration.
pub trait ObservationProvider: Send + Sync {
    fn observe(&self, key: FrameKey, scene: &SceneState, camera: &Pose) -> Result<Observation, EmbeddingError>;
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    encoder: Arc<SyntheticEncoder>,
}

impl SyntheticProvider {
    pub fn new(encoder: SyntheticEncoder) -> Self {
        Self { encoder: Arc::new(encoder) }
    }

    pub fn encoder(&self) -> &SyntheticEncoder {
        &self.encoder
    }
}

impl ObservationProvider for SyntheticProvider {
    fn observe(&self, key: FrameKey, scene: &SceneState, camera: &Pose) -> Result<Observation, EmbeddingError> {
        Ok(self.encoder.encode_scene(scene, camera).with_key(key))
    }
}

/// Serves precomputed frames (e.g. exported from a real backbone) by key.
#[derive(Debug)]
pub struct FileProvider {
    readers: Vec<SwemReader>,
}

impl FileProvider {
    pub fn open(paths: &[impl AsRef<Path>]) -> Result<Self, EmbeddingError> {
        let readers = paths.iter().map(|p| SwemReader::open(p.as_ref())).collect::<Result<_, _>>()?;
        Ok(Self { readers })
    }
}

impl ObservationProvider for FileProvider {
    fn observe(&self, key: FrameKey, _scene: &SceneState, _camera: &Pose) -> Result<Observation, EmbeddingError> {
        self.readers.iter().find(|r| r.contains(&key)).ok_or(EmbeddingError::MissingFrame(key))?.get(&key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EncoderConfig;
    use crate::graph::PartId;

    #[test]
    fn file_provider_serves_stored_frames() {
        let enc = SyntheticEncoder::new(EncoderConfig { grid: 4, dim: 8, heads: 1, ..Default::default() });
        let provider = SyntheticProvider::new(enc);
        let scene = SceneState::taskboard(&[("peg", "A")], 1).unwrap();
        let mut store = FrameStore::new();
        for step in 0..3 {
            let key = FrameKey::new(PartId(0), 0, step);
            store.insert(key, provider.observe(key, &scene, &Pose::looking_down([0.0, 0.0, 0.4])).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.swem");
        store.save_all(&path).unwrap();
        assert_eq!(FrameStore::load(&path).unwrap(), store);
        let file = FileProvider::open(&[&path]).unwrap();
        let key = FrameKey::new(PartId(0), 0, 2);
        assert_eq!(&file.observe(key, &scene, &Pose::at([0.0; 3])).unwrap(), store.get(&key).unwrap());
        assert!(matches!(
            file.observe(FrameKey::new(PartId(1), 0, 0), &scene, &Pose::at([0.0; 3])),
            Err(EmbeddingError::MissingFrame(_))
        ));
    }
}
