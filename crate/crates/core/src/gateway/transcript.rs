use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{request_hash, ChatProvider, ModelRequest, ModelResponse, ProviderError};

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub request: ModelRequest,
    pub response: ModelResponse,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot open transcript {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Wraps a provider and appends every successful exchange to a JSONL file.
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    out: Mutex<File>,
}

impl RecordingProvider {
    pub fn create(inner: Arc<dyn ChatProvider>, path: &Path) -> Result<Self, TranscriptError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| TranscriptError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TranscriptError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(RecordingProvider {
            inner,
            out: Mutex::new(file),
        })
    }
}

impl ChatProvider for RecordingProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            request_hash: request_hash(request),
            request: request.clone(),
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("transcript entry serializes");
        line.push('\n');
        let mut out = self.out.lock().unwrap();
        if let Err(e) = out.write_all(line.as_bytes()).and_then(|_| out.flush()) {
            log::error!("failed to append to transcript: {e}");
        }
        Ok(response)
    }
}

/// Serves recorded responses by request hash. Never touches the network.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    entries: HashMap<String, ModelResponse>,
    calls: AtomicUsize,
}

impl ReplayProvider {
    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let mut replay = ReplayProvider::default();
        replay.add_file(path)?;
        Ok(replay)
    }

    /// Loads every `*.jsonl` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, TranscriptError> {
        let io_err = |source| TranscriptError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut replay = ReplayProvider::default();
        for f in files {
            replay.add_file(&f)?;
        }
        Ok(replay)
    }

    fn add_file(&mut self, path: &Path) -> Result<(), TranscriptError> {
        let file = File::open(path).map_err(|source| TranscriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| TranscriptError::Corrupt {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(&line).map_err(|e| TranscriptError::Corrupt {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: e.to_string(),
                })?;
            self.entries.entry(entry.request_hash).or_insert(entry.response);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = request_hash(request);
        match self.entries.get(&hash) {
            Some(resp) => Ok(ModelResponse {
                attempts: 1,
                ..resp.clone()
            }),
            None => {
                log::error!("replay miss for request hash {hash}");
                Err(ProviderError::ReplayMiss(hash))
            }
        }
    }
}
