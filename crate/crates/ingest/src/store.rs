//! Session persistence: one CSV per session plus a shared manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use gaitlab_core::data::{write_atomic, write_signal_csv, Manifest, RecordingEntry};

use crate::frame::SessionHeader;
use crate::IngestError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDINGS_DIR: &str = "recordings";

/// What a finished session wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSession {
    pub csv_path: PathBuf,
    pub entry: RecordingEntry,
    pub rows: usize,
}

/// Owns the storage root. The manifest is only rewritten while its lock is
/// held, so concurrent sessions append without losing entries.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: Mutex<Manifest>,
    next_id: AtomicU64,
}

impl Store {
    /// Opens `root`, creating it if needed and loading any manifest there.
    pub fn open(root: &Path) -> Result<Store, IngestError> {
        fs::create_dir_all(root.join(RECORDINGS_DIR)).map_err(|e| IngestError::io(root, e))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| IngestError::Storage(format!("{}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        let next_id = AtomicU64::new(manifest.recordings.len() as u64 + 1);
        Ok(Store {
            root: root.to_path_buf(),
            manifest: Mutex::new(manifest),
            next_id,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    /// Fails when the participant is unknown and the header carries no
    /// metadata to register it with.
    pub fn check_participant(&self, header: &SessionHeader) -> Result<(), IngestError> {
        let m = self.manifest.lock().expect("manifest lock");
        if header.participant.is_none() && !m.participants.iter().any(|p| p.id == header.participant_id) {
            return Err(IngestError::Protocol(format!(
                "unknown participant {:?}; the first session must include \"participant\" metadata",
                header.participant_id
            )));
        }
        if let Some(info) = &header.participant {
            info.record(&header.participant_id)
                .validate()
                .map_err(|e| IngestError::Protocol(e.to_string()))?;
        }
        Ok(())
    }

    /// Writes the CSV, then appends its manifest entry.
    pub fn persist(
        &self,
        header: &SessionHeader,
        times: &[f64],
        values: &[[f64; 3]],
        truncated: bool,
    ) -> Result<StoredSession, IngestError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let pid: String = header
            .participant_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        let rel = format!("{RECORDINGS_DIR}/s{id:06}_{pid}_{}.csv", header.activity);
        let csv_path = self.root.join(&rel);
        let mut buf = Vec::with_capacity(values.len() * 32);
        write_signal_csv(&mut buf, times, values).map_err(|e| IngestError::io(&csv_path, e))?;
        write_atomic(&csv_path, &buf).map_err(|e| IngestError::Storage(e.to_string()))?;

        let entry = RecordingEntry {
            participant_id: header.participant_id.clone(),
            activity: header.activity,
            csv_path: rel,
            rate_hz: header.rate_hz,
            observed_steps: header.observed_steps,
            measured_distance_m: header.measured_distance_m,
            truncated,
        };
        let mut m = self.manifest.lock().expect("manifest lock");
        if let Some(info) = &header.participant {
            match m.participants.iter().find(|p| p.id == header.participant_id) {
                None => m.participants.push(info.record(&header.participant_id)),
                Some(existing) if *existing != info.record(&header.participant_id) => log::warn!(
                    "participant {:?}: metadata differs from the registered record; keeping the registered one",
                    header.participant_id
                ),
                Some(_) => {}
            }
        }
        m.recordings.push(entry.clone());
        let mut json = serde_json::to_string_pretty(&*m).map_err(|e| IngestError::Storage(e.to_string()))?;
        json.push('\n');
        write_atomic(&self.manifest_path(), json.as_bytes()).map_err(|e| IngestError::Storage(e.to_string()))?;
        Ok(StoredSession {
            csv_path,
            entry,
            rows: values.len(),
        })
    }
}
