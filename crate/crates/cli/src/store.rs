//! Directory-backed store for models, reports, datasets, screened tenders and
//! escalation flags.
//!
//! Layout under the root:
//!
//! ```text
//! index.json            models, reports and datasets with their metadata
//! models/{id}.json      ModelArtifact, never rewritten once stored
//! reports/{id}.json     evaluation or screening reports
//! datasets/{id}.csv     ingested datasets in the tender CSV format
//! tenders/{key}.json    single tenders posted to the service
//! screenings.jsonl      append-only screening log
//! flags.jsonl           append-only escalation flag history
//! ```
//!
//! Artifact ids are the first 16 hex digits of the SHA-256 of the stored
//! bytes, so storing the same artifact twice yields the same id.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bidscreen::data::{self, Dataset, Tender, TenderId};
use bidscreen::models::{Family, ModelArtifact, ModelError};
use bidscreen::reporting::{Light, Thresholds};
use bidscreen::screens::{FeatureMode, ScreenVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("store json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("NotFound: no {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("Conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub family: Family,
    pub feature_mode: Option<FeatureMode>,
    pub n_features: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub id: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub n_tenders: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub models: Vec<ModelEntry>,
    pub reports: Vec<ReportEntry>,
    pub datasets: Vec<DatasetEntry>,
}

/// One screening of one tender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRecord {
    pub tender_id: TenderId,
    pub model_id: String,
    pub probability: f64,
    pub light: Light,
    pub thresholds: Thresholds,
    pub screens: ScreenVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Open,
    Reviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationFlag {
    pub flag_id: String,
    pub tender_id: TenderId,
    pub manager_id: String,
    pub note: String,
    pub created_at: String,
    pub status: FlagStatus,
}

pub struct RunStore {
    root: PathBuf,
    /// Serializes every write; reads go straight to the files.
    write_lock: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["models", "reports", "datasets", "tenders"] {
            fs::create_dir_all(root.join(dir))?;
        }
        let store = Self {
            root,
            write_lock: Mutex::new(()),
        };
        if !store.index_path().exists() {
            store.write_index(&Index::default())?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ()> {
        self.write_lock.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn index(&self) -> Result<Index, StoreError> {
        Ok(serde_json::from_slice(&fs::read(self.index_path())?)?)
    }

    fn write_index(&self, index: &Index) -> Result<(), StoreError> {
        write_atomic(&self.index_path(), &serde_json::to_vec_pretty(index)?)?;
        Ok(())
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_hexdigit())
    }

    pub fn model_path(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.json"))
    }

    /// Stores the artifact unless an identical one is already present.
    pub fn put_model(&self, model: &ModelArtifact) -> Result<String, StoreError> {
        let bytes = model.to_json()?.into_bytes();
        let id = content_id(&bytes);
        let _guard = self.lock();
        let path = self.model_path(&id);
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        let mut index = self.index()?;
        if !index.models.iter().any(|m| m.id == id) {
            index.models.push(ModelEntry {
                id: id.clone(),
                family: model.family,
                feature_mode: model.feature_mode,
                n_features: model.n_features(),
                n_train: model.n_train,
            });
            self.write_index(&index)?;
        }
        Ok(id)
    }

    pub fn get_model(&self, id: &str) -> Result<ModelArtifact, StoreError> {
        let not_found = || StoreError::NotFound {
            kind: "model",
            id: id.to_string(),
        };
        if !Self::valid_id(id) {
            return Err(not_found());
        }
        let text = fs::read_to_string(self.model_path(id)).map_err(|_| not_found())?;
        Ok(ModelArtifact::from_json(&text)?)
    }

    pub fn models(&self) -> Result<Vec<ModelEntry>, StoreError> {
        Ok(self.index()?.models)
    }

    pub fn put_report<T: Serialize>(&self, kind: &str, report: &T) -> Result<String, StoreError> {
        let bytes = serde_json::to_vec_pretty(report)?;
        let id = content_id(&bytes);
        let _guard = self.lock();
        let path = self.root.join("reports").join(format!("{id}.json"));
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        let mut index = self.index()?;
        if !index.reports.iter().any(|r| r.id == id) {
            index.reports.push(ReportEntry {
                id: id.clone(),
                kind: kind.to_string(),
            });
            self.write_index(&index)?;
        }
        Ok(id)
    }

    pub fn get_report(&self, id: &str) -> Result<serde_json::Value, StoreError> {
        let not_found = || StoreError::NotFound {
            kind: "report",
            id: id.to_string(),
        };
        if !Self::valid_id(id) {
            return Err(not_found());
        }
        let bytes = fs::read(self.root.join("reports").join(format!("{id}.json"))).map_err(|_| not_found())?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn put_dataset(&self, dataset: &Dataset) -> Result<String, StoreError> {
        let mut bytes = Vec::new();
        data::write_csv(dataset, &mut bytes)?;
        let id = content_id(&bytes);
        let _guard = self.lock();
        let path = self.root.join("datasets").join(format!("{id}.csv"));
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        let mut index = self.index()?;
        if !index.datasets.iter().any(|d| d.id == id) {
            index.datasets.push(DatasetEntry {
                id: id.clone(),
                n_tenders: dataset.len(),
                provenance: dataset.provenance.clone(),
            });
            self.write_index(&index)?;
        }
        Ok(id)
    }

    fn tender_path(&self, id: &TenderId) -> PathBuf {
        self.root
            .join("tenders")
            .join(format!("{}.json", content_id(id.as_str().as_bytes())))
    }

    /// Inserts or replaces a tender.
    pub fn put_tender(&self, tender: &Tender) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(tender)?;
        let _guard = self.lock();
        write_atomic(&self.tender_path(&tender.tender_id), &bytes)?;
        Ok(())
    }

    pub fn get_tender(&self, id: &TenderId) -> Result<Tender, StoreError> {
        let bytes = fs::read(self.tender_path(id)).map_err(|_| StoreError::NotFound {
            kind: "tender",
            id: id.0.clone(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// All stored tenders, ordered by id.
    pub fn tenders(&self) -> Result<Vec<Tender>, StoreError> {
        let mut out: Vec<Tender> = Vec::new();
        for entry in fs::read_dir(self.root.join("tenders"))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice(&fs::read(path)?)?);
            }
        }
        out.sort_by(|a, b| bidscreen::reporting::natural_cmp(a.tender_id.as_str(), b.tender_id.as_str()));
        Ok(out)
    }

    pub fn record_screening(&self, record: &ScreeningRecord) -> Result<(), StoreError> {
        let _guard = self.lock();
        append_jsonl(&self.root.join("screenings.jsonl"), record)
    }

    pub fn screenings(&self) -> Result<Vec<ScreeningRecord>, StoreError> {
        read_jsonl(&self.root.join("screenings.jsonl"))
    }

    /// Most recent screening per tender, in first-screened order.
    pub fn latest_screenings(&self) -> Result<Vec<ScreeningRecord>, StoreError> {
        let all = self.screenings()?;
        let mut pos: HashMap<TenderId, usize> = HashMap::new();
        let mut out: Vec<ScreeningRecord> = Vec::new();
        for r in all {
            match pos.get(&r.tender_id) {
                Some(&i) => out[i] = r,
                None => {
                    pos.insert(r.tender_id.clone(), out.len());
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    fn flags_path(&self) -> PathBuf {
        self.root.join("flags.jsonl")
    }

    /// Current state of every flag: the last logged version of each id.
    pub fn flags(&self) -> Result<Vec<EscalationFlag>, StoreError> {
        let history: Vec<EscalationFlag> = read_jsonl(&self.flags_path())?;
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut out: Vec<EscalationFlag> = Vec::new();
        for f in history {
            match pos.get(&f.flag_id) {
                Some(&i) => out[i] = f,
                None => {
                    pos.insert(f.flag_id.clone(), out.len());
                    out.push(f);
                }
            }
        }
        Ok(out)
    }

    /// Opens a flag; at most one open flag per (tender, manager).
    pub fn create_flag(&self, tender_id: TenderId, manager_id: String, note: String) -> Result<EscalationFlag, StoreError> {
        let _guard = self.lock();
        let existing = self.flags()?;
        if existing
            .iter()
            .any(|f| f.status == FlagStatus::Open && f.tender_id == tender_id && f.manager_id == manager_id)
        {
            return Err(StoreError::Conflict(format!(
                "an open flag for tender `{tender_id}` by `{manager_id}` already exists"
            )));
        }
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let seed = format!("{}|{}|{}|{}", tender_id, manager_id, created_at, existing.len());
        let flag = EscalationFlag {
            flag_id: content_id(seed.as_bytes()),
            tender_id,
            manager_id,
            note,
            created_at,
            status: FlagStatus::Open,
        };
        append_jsonl(&self.flags_path(), &flag)?;
        Ok(flag)
    }

    pub fn update_flag(&self, flag_id: &str, status: Option<FlagStatus>, note: Option<String>) -> Result<EscalationFlag, StoreError> {
        let _guard = self.lock();
        let flags = self.flags()?;
        let mut flag = flags
            .into_iter()
            .find(|f| f.flag_id == flag_id)
            .ok_or_else(|| StoreError::NotFound {
                kind: "flag",
                id: flag_id.to_string(),
            })?;
        if let Some(s) = status {
            if s == FlagStatus::Open && flag.status != FlagStatus::Open {
                let clash = self.flags()?.iter().any(|f| {
                    f.flag_id != flag.flag_id
                        && f.status == FlagStatus::Open
                        && f.tender_id == flag.tender_id
                        && f.manager_id == flag.manager_id
                });
                if clash {
                    return Err(StoreError::Conflict("another open flag exists".into()));
                }
            }
            flag.status = s;
        }
        if let Some(n) = note {
            flag.note = n;
        }
        append_jsonl(&self.flags_path(), &flag)?;
        Ok(flag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bidscreen::models::{train, ExampleSet, LogitConfig, TrainConfig};

    fn model() -> ModelArtifact {
        let set = ExampleSet::from_rows(
            (0..20).map(|i| vec![i as f64]).collect(),
            (0..20).map(|i| u8::from(i % 3 == 0)).collect(),
        )
        .unwrap();
        train(&set, &TrainConfig::Logit(LogitConfig::default())).unwrap()
    }

    #[test]
    fn model_ids_are_content_addressed_and_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let m = model();
        let id = store.put_model(&m).unwrap();
        assert_eq!(store.put_model(&m).unwrap(), id);
        assert_eq!(store.models().unwrap().len(), 1);
        drop(store);
        let store = RunStore::open(dir.path()).unwrap();
        assert_eq!(store.models().unwrap()[0].id, id);
        assert_eq!(store.get_model(&id).unwrap(), m);
        assert!(matches!(store.get_model("../etc"), Err(StoreError::NotFound { .. })));
    }

    #[test]
    fn flag_conflicts_and_history() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let t = TenderId::from("t1");
        let f = store.create_flag(t.clone(), "anna".into(), "odd covers".into()).unwrap();
        assert!(matches!(
            store.create_flag(t.clone(), "anna".into(), String::new()),
            Err(StoreError::Conflict(_))
        ));
        store.create_flag(t.clone(), "ben".into(), String::new()).unwrap();
        let r = store.update_flag(&f.flag_id, Some(FlagStatus::Reviewed), None).unwrap();
        assert_eq!(r.status, FlagStatus::Reviewed);
        assert_eq!(store.flags().unwrap().len(), 2);
        store.create_flag(t, "anna".into(), String::new()).unwrap();
        let lines = fs::read_to_string(dir.path().join("flags.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 4);
    }
}
