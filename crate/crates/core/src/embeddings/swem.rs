//! `.swem` embedding files and their `.swem.idx` sidecar index.
//!
//! Layout: `SWEM`, version (u16 LE), header length (u32 LE), UTF-8 JSON
//! header `{d, patches, heads, count, dtype}`, then per frame
//! `patches × d` f32 LE embeddings followed by `heads × patches` f32 LE
//! attention. The index is `SWIX`, version (u16 LE), count (u32 LE) and one
//! `(part u32, trial u32, step u32, offset u64)` record per keyed frame.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, Observation, SourceMeta};
use crate::graph::{FrameKey, PartId};

pub const SWEM_MAGIC: &[u8; 4] = b"SWEM";
pub const SWEM_VERSION: u16 = 1;
const INDEX_MAGIC: &[u8; 4] = b"SWIX";
const INDEX_RECORD: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwemHeader {
    pub d: usize,
    pub patches: usize,
    pub heads: usize,
    pub count: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

impl SwemHeader {
    pub fn frame_bytes(&self) -> u64 {
        ((self.patches * self.d + self.heads * self.patches) * 4) as u64
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io { path: path.to_path_buf(), source }
}

/// Writes `frames` and the sidecar index. Every frame must share
/// `(patches, d, heads)`.
pub fn write_swem(path: &Path, frames: &[Observation]) -> Result<SwemHeader, EmbeddingError> {
    let first = frames.first();
    if let Some((i, _)) = frames.iter().enumerate().find(|(_, f)| !f.same_shape(first.unwrap())) {
        return Err(EmbeddingError::Shape(format!("frame {i} differs in shape from frame 0")));
    }
    let header = SwemHeader {
        d: first.map_or(0, |f| f.dim()),
        patches: first.map_or(0, |f| f.patches()),
        heads: first.map_or(0, |f| f.heads()),
        count: frames.len(),
        dtype: "f32le".into(),
        provider: first.map(|f| f.meta.provider.clone()).filter(|p| !p.is_empty()),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let err = io_err(path);
    let mut out = BufWriter::new(File::create(path).map_err(&err)?);
    out.write_all(SWEM_MAGIC).map_err(&err)?;
    out.write_all(&SWEM_VERSION.to_le_bytes()).map_err(&err)?;
    out.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(&err)?;
    out.write_all(&header_json).map_err(&err)?;
    let data_start = (4 + 2 + 4 + header_json.len()) as u64;

    let mut index = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let offset = data_start + i as u64 * header.frame_bytes();
        if let Some(key) = frame.meta.key {
            index.push((key, offset));
        }
        for v in frame.embeddings() {
            out.write_all(&v.to_le_bytes()).map_err(&err)?;
        }
        if let Some(att) = frame.attention() {
            for v in att {
                out.write_all(&v.to_le_bytes()).map_err(&err)?;
            }
        }
    }
    out.flush().map_err(&err)?;

    let idx_path = index_path(path);
    let err = io_err(&idx_path);
    let mut idx = BufWriter::new(File::create(&idx_path).map_err(&err)?);
    idx.write_all(INDEX_MAGIC).map_err(&err)?;
    idx.write_all(&SWEM_VERSION.to_le_bytes()).map_err(&err)?;
    idx.write_all(&(index.len() as u32).to_le_bytes()).map_err(&err)?;
    for (key, offset) in index {
        idx.write_all(&key.part.0.to_le_bytes()).map_err(&err)?;
        idx.write_all(&key.trial.to_le_bytes()).map_err(&err)?;
        idx.write_all(&key.step.to_le_bytes()).map_err(&err)?;
        idx.write_all(&offset.to_le_bytes()).map_err(&err)?;
    }
    idx.flush().map_err(&err)?;
    Ok(header)
}

/// Random-access reader: header and index are parsed on open, frames are
/// read with one seek each.
#[derive(Debug)]
pub struct SwemReader {
    path: PathBuf,
    header: SwemHeader,
    data_start: u64,
    index: HashMap<FrameKey, u64>,
    keys_by_offset: HashMap<u64, FrameKey>,
    file: Mutex<File>,
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Format { path: path.to_path_buf(), offset, message: message.into() }
}

fn read_exact_at(file: &mut impl Read, buf: &mut [u8], path: &Path, offset: u64) -> Result<(), EmbeddingError> {
    file.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(path, offset, "unexpected end of file"),
        _ => EmbeddingError::Io { path: path.to_path_buf(), source: e },
    })
}

impl SwemReader {
    pub fn open(path: &Path) -> Result<Self, EmbeddingError> {
        let mut file = File::open(path).map_err(io_err(path))?;
        let file_len = file.metadata().map_err(io_err(path))?.len();
        let mut fixed = [0u8; 10];
        read_exact_at(&mut file, &mut fixed, path, 0)?;
        if &fixed[0..4] != SWEM_MAGIC {
            return Err(format_err(path, 0, "bad magic"));
        }
        let version = u16::from_le_bytes([fixed[4], fixed[5]]);
        if version != SWEM_VERSION {
            return Err(EmbeddingError::UnsupportedVersion { path: path.to_path_buf(), version });
        }
        let header_len = u32::from_le_bytes(fixed[6..10].try_into().unwrap()) as usize;
        let mut header_bytes = vec![0u8; header_len];
        read_exact_at(&mut file, &mut header_bytes, path, 10)?;
        let header: SwemHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| format_err(path, 10, format!("header: {e}")))?;
        if header.dtype != "f32le" {
            return Err(format_err(path, 10, format!("unsupported dtype {}", header.dtype)));
        }
        let data_start = 10 + header_len as u64;
        let expected = data_start + header.count as u64 * header.frame_bytes();
        if file_len < expected {
            let complete = (file_len - data_start.min(file_len)) / header.frame_bytes().max(1);
            return Err(format_err(
                path,
                data_start + complete * header.frame_bytes(),
                format!("truncated: {file_len} bytes, expected {expected}"),
            ));
        }
        let (index, keys_by_offset) = Self::read_index(&index_path(path), data_start, &header)?;
        Ok(Self { path: path.to_path_buf(), header, data_start, index, keys_by_offset, file: Mutex::new(file) })
    }

    fn read_index(
        path: &Path,
        data_start: u64,
        header: &SwemHeader,
    ) -> Result<(HashMap<FrameKey, u64>, HashMap<u64, FrameKey>), EmbeddingError> {
        let mut index = HashMap::new();
        let mut by_offset = HashMap::new();
        let Ok(bytes) = std::fs::read(path) else {
            return Ok((index, by_offset));
        };
        if bytes.len() < 10 || &bytes[0..4] != INDEX_MAGIC {
            return Err(format_err(path, 0, "bad index magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SWEM_VERSION {
            return Err(EmbeddingError::UnsupportedVersion { path: path.to_path_buf(), version });
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if bytes.len() < 10 + count * INDEX_RECORD {
            return Err(format_err(path, bytes.len() as u64, "truncated index"));
        }
        let end = data_start + header.count as u64 * header.frame_bytes();
        for i in 0..count {
            let at = 10 + i * INDEX_RECORD;
            let r = &bytes[at..at + INDEX_RECORD];
            let key = FrameKey {
                part: PartId(u32::from_le_bytes(r[0..4].try_into().unwrap())),
                trial: u32::from_le_bytes(r[4..8].try_into().unwrap()),
                step: u32::from_le_bytes(r[8..12].try_into().unwrap()),
            };
            let offset = u64::from_le_bytes(r[12..20].try_into().unwrap());
            if offset < data_start || offset >= end || (offset - data_start) % header.frame_bytes() != 0 {
                return Err(format_err(path, at as u64, format!("offset {offset} is not a frame boundary")));
            }
            index.insert(key, offset);
            by_offset.insert(offset, key);
        }
        Ok((index, by_offset))
    }

    pub fn header(&self) -> &SwemHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn keys(&self) -> impl Iterator<Item = &FrameKey> {
        self.index.keys()
    }

    pub fn contains(&self, key: &FrameKey) -> bool {
        self.index.contains_key(key)
    }

    fn read_at(&self, offset: u64) -> Result<Observation, EmbeddingError> {
        let h = &self.header;
        let mut buf = vec![0u8; h.frame_bytes() as usize];
        {
            let mut file = self.file.lock().expect("reader lock");
            file.seek(SeekFrom::Start(offset)).map_err(io_err(&self.path))?;
            read_exact_at(&mut *file, &mut buf, &self.path, offset)?;
        }
        let floats: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let split = h.patches * h.d;
        let (emb, att) = floats.split_at(split);
        let attention = (h.heads > 0).then(|| (h.heads, att.to_vec()));
        let meta = SourceMeta {
            provider: h.provider.clone().unwrap_or_else(|| "file".into()),
            key: self.keys_by_offset.get(&offset).copied(),
        };
        Observation::new(h.patches, h.d, emb.to_vec(), attention, meta)
            .map_err(|e| format_err(&self.path, offset, e.to_string()))
    }

    pub fn frame(&self, i: usize) -> Result<Observation, EmbeddingError> {
        if i >= self.header.count {
            return Err(format_err(&self.path, self.data_start, format!("frame {i} out of range")));
        }
        self.read_at(self.data_start + i as u64 * self.header.frame_bytes())
    }

    pub fn get(&self, key: &FrameKey) -> Result<Observation, EmbeddingError> {
        let offset = *self.index.get(key).ok_or(EmbeddingError::MissingFrame(*key))?;
        self.read_at(offset)
    }
}

pub fn read_swem(path: &Path) -> Result<Vec<Observation>, EmbeddingError> {
    let reader = SwemReader::open(path)?;
    (0..reader.len()).map(|i| reader.frame(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EncoderConfig, SceneState, SyntheticEncoder};
    use crate::geometry::Pose;

    fn frames(n: usize, heads: usize) -> Vec<Observation> {
        let enc = SyntheticEncoder::new(EncoderConfig { grid: 4, dim: 8, heads, ..Default::default() });
        let scene = SceneState::taskboard(&[("peg", "A")], 5).unwrap();
        (0..n)
            .map(|i| {
                enc.encode_scene(&scene, &Pose::looking_down([0.01 * i as f64, 0.0, 0.4])).with_key(FrameKey::new(
                    PartId(2),
                    1,
                    i as u32,
                ))
            })
            .collect()
    }

    #[test]
    fn empty_file_has_count_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.swem");
        let h = write_swem(&p, &[]).unwrap();
        assert_eq!(h.count, 0);
        let r = SwemReader::open(&p).unwrap();
        assert!(r.is_empty());
        assert!(read_swem(&p).unwrap().is_empty());
    }

    #[test]
    fn payload_size_of_one_small_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.swem");
        let obs = Observation::new(4, 8, (0..32).map(|v| v as f32).collect(), None, Default::default()).unwrap();
        write_swem(&p, &[obs]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 10 - header_len, 4 * 8 * 4);
        assert_eq!(&bytes[0..4], b"SWEM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + header_len]).unwrap();
        assert_eq!(header["d"], 8);
        assert_eq!(header["patches"], 4);
        assert_eq!(header["heads"], 0);
        assert_eq!(header["count"], 1);
        assert_eq!(header["dtype"], "f32le");
    }

    #[test]
    fn round_trip_bitwise_with_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.swem");
        let fs = frames(5, 2);
        write_swem(&p, &fs).unwrap();
        let back = read_swem(&p).unwrap();
        assert_eq!(back.len(), fs.len());
        for (a, b) in fs.iter().zip(&back) {
            let bits = |o: &Observation| o.embeddings().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.attention(), b.attention());
            assert_eq!(a.meta, b.meta);
        }
        let reader = SwemReader::open(&p).unwrap();
        assert_eq!(reader.get(&FrameKey::new(PartId(2), 1, 3)).unwrap(), fs[3]);
        assert!(matches!(reader.get(&FrameKey::new(PartId(9), 0, 0)), Err(EmbeddingError::MissingFrame(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut fs = frames(2, 2);
        fs.extend(frames(1, 0));
        assert!(matches!(write_swem(&dir.path().join("x.swem"), &fs), Err(EmbeddingError::Shape(_))));
    }

    #[test]
    fn truncated_and_versioned_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.swem");
        write_swem(&p, &frames(3, 1)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
        match SwemReader::open(&p) {
            Err(EmbeddingError::Format { offset, .. }) => {
                let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
                let frame = (16 * 8 + 16) * 4;
                assert_eq!(offset, 10 + header_len + 2 * frame);
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let mut v2 = bytes.clone();
        v2[4] = 9;
        std::fs::write(&p, &v2).unwrap();
        assert!(matches!(SwemReader::open(&p), Err(EmbeddingError::UnsupportedVersion { version: 9, .. })));
    }
}
