use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("no checkpoint at {0}")]
    NoCheckpoint(PathBuf),
    #[error("checkpoint integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot serialize checkpoint: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    sha256: String,
    len: usize,
}

/// Atomic, checksummed persistence of one named document inside a run directory.
///
/// The file is a one-line JSON header (format, payload length, SHA-256)
/// followed by the JSON payload. Writes go to `<name>.tmp` and are renamed
/// into place, so a reader sees either the previous or the new document.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    dir: PathBuf,
    name: String,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>, name: impl Into<String>) -> Self {
        Self { dir: dir.into(), name: name.into() }
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(&self.name)
    }

    fn tmp_path(&self) -> PathBuf {
        self.dir.join(format!("{}.tmp", self.name))
    }

    pub fn exists(&self) -> bool {
        self.path().exists()
    }

    pub fn save<T: Serialize>(&self, value: &T) -> Result<(), CheckpointError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CheckpointError::Io { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))?;
        let payload = serde_json::to_string(value)?;
        let header = Header {
            format: FORMAT_VERSION,
            sha256: hex::encode(Sha256::digest(payload.as_bytes())),
            len: payload.len(),
        };
        let tmp = self.tmp_path();
        {
            let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(&tmp).map_err(io(&tmp))?;
            let mut buf = serde_json::to_string(&header)?;
            buf.push('\n');
            buf.push_str(&payload);
            buf.push('\n');
            f.write_all(buf.as_bytes()).map_err(io(&tmp))?;
            f.sync_all().map_err(io(&tmp))?;
        }
        let dst = self.path();
        fs::rename(&tmp, &dst).map_err(io(&dst))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }

    pub fn load<T: DeserializeOwned>(&self) -> Result<T, CheckpointError> {
        let path = self.path();
        let raw = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CheckpointError::NoCheckpoint(path)),
            Err(source) => return Err(CheckpointError::Io { path, source }),
        };
        let integrity = |reason: String| CheckpointError::Integrity { path: path.clone(), reason };
        let (head, rest) = raw.split_once('\n').ok_or_else(|| integrity("missing header line".into()))?;
        let header: Header = serde_json::from_str(head).map_err(|e| integrity(format!("bad header: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(integrity(format!("unsupported format {}", header.format)));
        }
        let payload = rest.strip_suffix('\n').ok_or_else(|| integrity("truncated payload".into()))?;
        if payload.len() != header.len {
            return Err(integrity(format!("payload length {} != recorded {}", payload.len(), header.len)));
        }
        let digest = hex::encode(Sha256::digest(payload.as_bytes()));
        if digest != header.sha256 {
            return Err(integrity("checksum mismatch".into()));
        }
        serde_json::from_str(payload).map_err(|e| integrity(format!("payload does not parse: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::PoolState;

    fn state(iteration: u32) -> PoolState {
        PoolState {
            labeled_ids: vec!["b".into()],
            unlabeled_ids: vec!["a".into(), "c".into()],
            test_ids: vec!["d".into()],
            iteration,
            model_ref: "ckpt-1".into(),
            rng_seed: 9,
        }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), "state.json");
        store.save(&state(3)).unwrap();
        let back: PoolState = store.load().unwrap();
        assert_eq!(back, state(3));
    }

    #[test]
    fn resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), "state.json");
        store.save(&state(1)).unwrap();
        let first = fs::read(store.path()).unwrap();
        let back: PoolState = store.load().unwrap();
        store.save(&back).unwrap();
        assert_eq!(first, fs::read(store.path()).unwrap());
    }

    #[test]
    fn interrupted_write_leaves_previous_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), "state.json");
        store.save(&state(1)).unwrap();
        // A crash after writing the temp file but before the rename.
        fs::write(store.tmp_path(), b"{\"format\":1,\"sha256\":\"00\",\"len\":3}\n{\"it").unwrap();
        let back: PoolState = store.load().unwrap();
        assert_eq!(back.iteration, 1);
        store.save(&state(2)).unwrap();
        assert_eq!(store.load::<PoolState>().unwrap().iteration, 2);
    }

    #[test]
    fn empty_dir_has_no_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), "state.json");
        assert!(matches!(store.load::<PoolState>(), Err(CheckpointError::NoCheckpoint(_))));
    }

    #[test]
    fn truncated_or_tampered_file_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), "state.json");
        store.save(&state(1)).unwrap();
        let full = fs::read_to_string(store.path()).unwrap();

        fs::write(store.path(), &full[..full.len() - 10]).unwrap();
        assert!(matches!(store.load::<PoolState>(), Err(CheckpointError::Integrity { .. })));

        fs::write(store.path(), full.replace("ckpt-1", "ckpt-2")).unwrap();
        assert!(matches!(store.load::<PoolState>(), Err(CheckpointError::Integrity { .. })));
    }
}
