//! Append-only log files on disk.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kinlink_core::log::{decode_all, encode_all, LogError, LogRecord};

#[derive(Debug, thiserror::Error)]
pub enum LogFileError {
    #[error("{}: not found", path.display())]
    NotFound { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Corrupt { path: PathBuf, source: LogError },
}

/// Reads and validates a whole log file.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => LogFileError::NotFound { path: path.to_path_buf() },
        _ => LogFileError::Io { path: path.to_path_buf(), source },
    })?;
    decode_all(&text).map_err(|source| LogFileError::Corrupt { path: path.to_path_buf(), source })
}

/// Writes a complete log, replacing any existing file.
pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), LogFileError> {
    let io = |source| LogFileError::Io { path: path.to_path_buf(), source };
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    f.write_all(encode_all(records).as_bytes()).map_err(io)?;
    f.into_inner().map_err(|e| io(e.into_error()))?.sync_all().map_err(io)
}

/// An open log that records are appended to and synced after every batch.
pub struct LogSink {
    path: PathBuf,
    file: File,
}

impl LogSink {
    pub fn append(path: &Path) -> Result<Self, LogFileError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| LogFileError::Io { path: path.to_path_buf(), source })?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn write(&mut self, records: &[LogRecord]) -> Result<(), LogFileError> {
        if records.is_empty() {
            return Ok(());
        }
        let io = |source| LogFileError::Io { path: self.path.clone(), source };
        self.file.write_all(encode_all(records).as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}
