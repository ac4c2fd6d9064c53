//! The user's personal sound collection.
//!
//! On disk a knowledge base is a directory holding `kb.json` (the manifest)
//! and an `audio/` folder with one WAV per record that kept its recording.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{decode_wav, encode_wav, AudioError, SampleBuffer};
use crate::features::FeatureVector;

pub const MANIFEST_FILE: &str = "kb.json";
pub const AUDIO_DIR: &str = "audio";
pub const MANIFEST_VERSION: u32 = 1;
/// Group key for records without an environment label.
pub const NO_ENVIRONMENT: &str = "(none)";
/// Classes with fewer records are still trained on but flagged.
pub const MIN_RECORDS_PER_CLASS: usize = 2;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("audio payload {path}: {source}")]
    Audio {
        path: String,
        #[source]
        source: AudioError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Importance {
    Ignore,
    #[default]
    Usual,
    Important,
    Urgent,
}

impl std::str::FromStr for Importance {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ignore" => Ok(Self::Ignore),
            "usual" => Ok(Self::Usual),
            "important" => Ok(Self::Important),
            "urgent" => Ok(Self::Urgent),
            other => Err(KbError::Validation(format!("unknown importance '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundClass {
    pub name: String,
    pub importance: Importance,
    pub excluded: bool,
}

pub type RecordId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct SoundRecord {
    pub id: RecordId,
    pub class_name: String,
    pub environment: Option<String>,
    pub features: FeatureVector,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    /// Recording, kept on the 16-bit grid so it survives a save/load cycle.
    pub audio: Option<SampleBuffer>,
}

impl SoundRecord {
    pub fn audio_path(&self) -> Option<String> {
        self.audio.as_ref().map(|_| format!("{AUDIO_DIR}/{}.wav", self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    classes: BTreeMap<String, SoundClass>,
    records: Vec<SoundRecord>,
    environments: BTreeSet<String>,
    next_id: RecordId,
    revision: u64,
}

/// Optional edits applied by [`KnowledgeBase::update_class`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassUpdate {
    pub importance: Option<Importance>,
    pub excluded: Option<bool>,
    pub new_name: Option<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn clean_label(label: &str, what: &str) -> Result<String, KbError> {
    let trimmed = label.trim();
    if trimmed.is_empty() {
        return Err(KbError::Validation(format!("{what} must not be empty")));
    }
    Ok(trimmed.to_string())
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn classes(&self) -> impl Iterator<Item = &SoundClass> {
        self.classes.values()
    }

    pub fn class(&self, name: &str) -> Option<&SoundClass> {
        self.classes.get(name)
    }

    pub fn records(&self) -> &[SoundRecord] {
        &self.records
    }

    pub fn record(&self, id: RecordId) -> Option<&SoundRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn records_of<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a SoundRecord> + 'a {
        self.records.iter().filter(move |r| r.class_name == class)
    }

    pub fn environments(&self) -> impl Iterator<Item = &String> {
        self.environments.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn bump(&mut self) {
        self.revision += 1;
        debug_assert!(self.integrity_ok());
    }

    fn integrity_ok(&self) -> bool {
        self.records.iter().all(|r| {
            self.classes.contains_key(&r.class_name)
                && r.environment.as_ref().is_none_or(|e| self.environments.contains(e))
        })
    }

    pub fn create_class(&mut self, name: &str, importance: Importance) -> Result<(), KbError> {
        let name = clean_label(name, "class name")?;
        if self.classes.contains_key(&name) {
            return Err(KbError::Conflict(format!("class '{name}' already exists")));
        }
        self.classes.insert(
            name.clone(),
            SoundClass {
                name,
                importance,
                excluded: false,
            },
        );
        self.bump();
        Ok(())
    }

    /// Stores a labeled record, creating the class (importance `usual`) and
    /// environment on first use.
    pub fn add_record(
        &mut self,
        class_name: &str,
        environment: Option<&str>,
        features: FeatureVector,
        audio: Option<&SampleBuffer>,
    ) -> Result<RecordId, KbError> {
        self.add_record_at(class_name, environment, features, audio, now_ms())
    }

    pub fn add_record_at(
        &mut self,
        class_name: &str,
        environment: Option<&str>,
        features: FeatureVector,
        audio: Option<&SampleBuffer>,
        created_at: u64,
    ) -> Result<RecordId, KbError> {
        let class_name = clean_label(class_name, "class name")?;
        let environment = environment.map(|e| clean_label(e, "environment")).transpose()?;
        self.classes
            .entry(class_name.clone())
            .or_insert_with(|| SoundClass {
                name: class_name.clone(),
                importance: Importance::Usual,
                excluded: false,
            });
        if let Some(env) = &environment {
            self.environments.insert(env.clone());
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.push(SoundRecord {
            id,
            class_name,
            environment,
            features,
            created_at,
            audio: audio.map(SampleBuffer::quantized),
        });
        self.bump();
        Ok(id)
    }

    pub fn update_class(&mut self, name: &str, update: &ClassUpdate) -> Result<(), KbError> {
        if !self.classes.contains_key(name) {
            return Err(KbError::NotFound(format!("class '{name}'")));
        }
        let new_name = update
            .new_name
            .as_deref()
            .map(|n| clean_label(n, "class name"))
            .transpose()?
            .filter(|n| n != name);
        if let Some(n) = &new_name {
            if self.classes.contains_key(n) {
                return Err(KbError::Conflict(format!("class '{n}' already exists")));
            }
        }
        let mut class = self.classes.remove(name).expect("checked above");
        if let Some(importance) = update.importance {
            class.importance = importance;
        }
        if let Some(excluded) = update.excluded {
            class.excluded = excluded;
        }
        if let Some(n) = new_name {
            for r in self.records.iter_mut().filter(|r| r.class_name == name) {
                r.class_name = n.clone();
            }
            class.name = n;
        }
        self.classes.insert(class.name.clone(), class);
        self.bump();
        Ok(())
    }

    /// Removes a class and all of its records.
    pub fn delete_class(&mut self, name: &str) -> Result<usize, KbError> {
        if self.classes.remove(name).is_none() {
            return Err(KbError::NotFound(format!("class '{name}'")));
        }
        let before = self.records.len();
        self.records.retain(|r| r.class_name != name);
        self.bump();
        Ok(before - self.records.len())
    }

    /// Removes one record. Its class stays, even if now empty.
    pub fn delete_record(&mut self, id: RecordId) -> Result<SoundRecord, KbError> {
        let pos = self
            .records
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| KbError::NotFound(format!("record {id}")))?;
        let rec = self.records.remove(pos);
        self.bump();
        Ok(rec)
    }

    pub fn add_environment(&mut self, name: &str) -> Result<(), KbError> {
        let name = clean_label(name, "environment")?;
        if !self.environments.insert(name.clone()) {
            return Err(KbError::Conflict(format!("environment '{name}' already exists")));
        }
        self.bump();
        Ok(())
    }

    pub fn rename_environment(&mut self, name: &str, new_name: &str) -> Result<(), KbError> {
        let new_name = clean_label(new_name, "environment")?;
        if !self.environments.contains(name) {
            return Err(KbError::NotFound(format!("environment '{name}'")));
        }
        if new_name != name && self.environments.contains(&new_name) {
            return Err(KbError::Conflict(format!("environment '{new_name}' already exists")));
        }
        self.environments.remove(name);
        self.environments.insert(new_name.clone());
        for r in &mut self.records {
            if r.environment.as_deref() == Some(name) {
                r.environment = Some(new_name.clone());
            }
        }
        self.bump();
        Ok(())
    }

    /// Deletes an environment label; its records become unlabeled.
    pub fn delete_environment(&mut self, name: &str) -> Result<(), KbError> {
        if !self.environments.remove(name) {
            return Err(KbError::NotFound(format!("environment '{name}'")));
        }
        for r in &mut self.records {
            if r.environment.as_deref() == Some(name) {
                r.environment = None;
            }
        }
        self.bump();
        Ok(())
    }

    pub fn list_by_environment(&self) -> BTreeMap<String, Vec<&SoundRecord>> {
        let mut groups: BTreeMap<String, Vec<&SoundRecord>> = BTreeMap::new();
        for r in &self.records {
            let key = r.environment.clone().unwrap_or_else(|| NO_ENVIRONMENT.to_string());
            groups.entry(key).or_default().push(r);
        }
        groups
    }

    /// Labeled vectors used for training: records of non-excluded classes,
    /// optionally restricted to one environment (plus unlabeled records).
    pub fn training_set(&self, environment: Option<&str>) -> TrainingSet {
        let samples = self
            .records
            .iter()
            .filter(|r| self.classes.get(&r.class_name).is_some_and(|c| !c.excluded))
            .filter(|r| match (environment, &r.environment) {
                (None, _) | (_, None) => true,
                (Some(want), Some(have)) => want == have,
            })
            .map(|r| LabeledVector {
                label: r.class_name.clone(),
                features: r.features.clone(),
            })
            .collect();
        TrainingSet {
            samples,
            revision: self.revision,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), KbError> {
        let dir = dir.as_ref();
        let audio_dir = dir.join(AUDIO_DIR);
        std::fs::create_dir_all(&audio_dir)?;
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            revision: self.revision,
            next_id: self.next_id,
            classes: self.classes.values().cloned().collect(),
            environments: self.environments.iter().cloned().collect(),
            records: self
                .records
                .iter()
                .map(|r| ManifestRecord {
                    id: r.id,
                    class_name: r.class_name.clone(),
                    environment: r.environment.clone(),
                    created_at: r.created_at,
                    audio_path: r.audio_path(),
                    features: r.features.clone(),
                })
                .collect(),
        };
        let mut keep = BTreeSet::new();
        for r in &self.records {
            if let (Some(audio), Some(rel)) = (&r.audio, r.audio_path()) {
                let path = dir.join(&rel);
                // ids are never reused, so a complete file already holds this audio
                let expected = 44 + 2 * audio.len() as u64;
                if std::fs::metadata(&path).ok().map(|m| m.len()) != Some(expected) {
                    std::fs::write(&path, encode_wav(audio))?;
                }
                keep.insert(path);
            }
        }
        // drop payloads of deleted records
        for entry in std::fs::read_dir(&audio_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "wav") && !keep.contains(&path) {
                std::fs::remove_file(path)?;
            }
        }
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| KbError::Validation(e.to_string()))?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest = parse_manifest(&text)?;
        Self::from_manifest(manifest, dir)
    }

    /// Loads if a manifest exists, otherwise starts empty.
    pub fn open_or_create(dir: impl AsRef<Path>) -> Result<Self, KbError> {
        if dir.as_ref().join(MANIFEST_FILE).exists() {
            Self::load(dir)
        } else {
            Ok(Self::new())
        }
    }

    fn from_manifest(m: Manifest, dir: &Path) -> Result<Self, KbError> {
        let schema = |path: String, message: String| KbError::Schema { path, message };
        if m.version != MANIFEST_VERSION {
            return Err(schema("version".into(), format!("unsupported version {}", m.version)));
        }
        let mut classes = BTreeMap::new();
        for (i, c) in m.classes.into_iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(schema(format!("classes[{i}].name"), "empty class name".into()));
            }
            if classes.insert(c.name.clone(), c).is_some() {
                return Err(schema(format!("classes[{i}].name"), "duplicate class name".into()));
            }
        }
        let environments: BTreeSet<String> = m.environments.into_iter().collect();
        let mut records = Vec::with_capacity(m.records.len());
        let mut ids = BTreeSet::new();
        for (i, r) in m.records.into_iter().enumerate() {
            if !classes.contains_key(&r.class_name) {
                return Err(schema(
                    format!("records[{i}].class_name"),
                    format!("unknown class '{}'", r.class_name),
                ));
            }
            if let Some(env) = &r.environment {
                if !environments.contains(env) {
                    return Err(schema(
                        format!("records[{i}].environment"),
                        format!("unknown environment '{env}'"),
                    ));
                }
            }
            if !ids.insert(r.id) || r.id >= m.next_id {
                return Err(schema(format!("records[{i}].id"), "duplicate or out-of-range id".into()));
            }
            let audio = match &r.audio_path {
                None => None,
                Some(rel) => {
                    let bytes = std::fs::read(dir.join(rel))?;
                    Some(decode_wav(&bytes).map_err(|source| KbError::Audio {
                        path: rel.clone(),
                        source,
                    })?)
                }
            };
            records.push(SoundRecord {
                id: r.id,
                class_name: r.class_name,
                environment: r.environment,
                features: r.features,
                created_at: r.created_at,
                audio,
            });
        }
        Ok(Self {
            classes,
            records,
            environments,
            next_id: m.next_id,
            revision: m.revision,
        })
    }
}

fn parse_manifest(text: &str) -> Result<Manifest, KbError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| KbError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    revision: u64,
    next_id: RecordId,
    classes: Vec<SoundClass>,
    environments: Vec<String>,
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: RecordId,
    class_name: String,
    environment: Option<String>,
    created_at: u64,
    audio_path: Option<String>,
    features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub label: String,
    pub features: FeatureVector,
}

/// An immutable view of the trainable part of a knowledge base.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub samples: Vec<LabeledVector>,
    /// Revision of the knowledge base the set was taken from.
    pub revision: u64,
}

impl TrainingSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, FeatureVector)>) -> Self {
        Self {
            samples: pairs
                .into_iter()
                .map(|(label, features)| LabeledVector { label, features })
                .collect(),
            revision: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            revision: self.revision,
        }
    }
}

pub fn manifest_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(MANIFEST_FILE)
}
