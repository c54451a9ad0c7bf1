use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AgentError, AgentVerdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Confirmed,
    Corrected,
}

pub fn memory_key(source: &str, target: &str) -> String {
    format!("{source}::{target}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: String,
    pub source: String,
    pub target: String,
    pub verdict: AgentVerdict,
    pub user_feedback: Option<Feedback>,
    pub timestamp_ms: u64,
}

impl MemoryEntry {
    fn feedback_class(&self) -> u8 {
        match self.user_feedback {
            Some(Feedback::Confirmed) => 0,
            None => 1,
            Some(Feedback::Corrected) => 2,
        }
    }
}

/// One line of the append-only memory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum MemoryRecord {
    Put { entry: MemoryEntry },
    Feedback { key: String, feedback: Option<Feedback> },
}

#[derive(Debug, Clone, Default)]
pub struct AgentMemory {
    entries: BTreeMap<String, MemoryEntry>,
    log: Option<Arc<std::sync::Mutex<File>>>,
}

impl PartialEq for AgentMemory {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl AgentMemory {
    pub fn get(&self, key: &str) -> Option<&MemoryEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feedback of every entry that has some; used for state comparison.
    pub fn feedback_map(&self) -> BTreeMap<String, Feedback> {
        self.entries
            .iter()
            .filter_map(|(k, e)| e.user_feedback.map(|f| (k.clone(), f)))
            .collect()
    }

    /// Stores a verdict, keeping any feedback already attached to the key.
    pub fn put(&mut self, source: &str, target: &str, verdict: AgentVerdict, timestamp_ms: u64) -> Result<(), AgentError> {
        let key = memory_key(source, target);
        let user_feedback = self.entries.get(&key).and_then(|e| e.user_feedback);
        let entry = MemoryEntry {
            key: key.clone(),
            source: source.to_string(),
            target: target.to_string(),
            verdict,
            user_feedback,
            timestamp_ms,
        };
        self.append(&MemoryRecord::Put { entry: entry.clone() })?;
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn set_feedback(&mut self, key: &str, feedback: Option<Feedback>) -> Result<Option<Feedback>, AgentError> {
        if !self.entries.contains_key(key) {
            return Err(AgentError::UnknownKey(key.to_string()));
        }
        self.append(&MemoryRecord::Feedback {
            key: key.to_string(),
            feedback,
        })?;
        let entry = self.entries.get_mut(key).expect("checked above");
        Ok(std::mem::replace(&mut entry.user_feedback, feedback))
    }

    /// Exact key first, then entries sharing the source or target name,
    /// ranked confirmed > no feedback > corrected, then most recent first.
    pub fn retrieve(&self, source: &str, target: &str, limit: usize) -> Vec<MemoryEntry> {
        let key = memory_key(source, target);
        let mut out: Vec<MemoryEntry> = self.entries.get(&key).cloned().into_iter().collect();
        let mut related: Vec<&MemoryEntry> = self
            .entries
            .values()
            .filter(|e| e.key != key && (e.source == source || e.target == target))
            .collect();
        related.sort_by(|a, b| {
            a.feedback_class()
                .cmp(&b.feedback_class())
                .then(b.timestamp_ms.cmp(&a.timestamp_ms))
                .then(a.key.cmp(&b.key))
        });
        out.extend(related.into_iter().cloned());
        out.truncate(limit);
        out
    }

    fn apply(&mut self, record: MemoryRecord) {
        match record {
            MemoryRecord::Put { entry } => {
                self.entries.insert(entry.key.clone(), entry);
            }
            MemoryRecord::Feedback { key, feedback } => {
                if let Some(e) = self.entries.get_mut(&key) {
                    e.user_feedback = feedback;
                }
            }
        }
    }

    fn append(&self, record: &MemoryRecord) -> Result<(), AgentError> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_string(record).map_err(|e| AgentError::Io(e.to_string()))?;
            line.push('\n');
            let mut file = log.lock().expect("memory log lock");
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| AgentError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_entries<I: IntoIterator<Item = MemoryEntry>>(entries: I) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
            log: None,
        }
    }

    /// Clears feedback on every entry without writing to the log. Used before
    /// replaying a session history that re-applies feedback itself.
    pub fn reset_feedback(&mut self) {
        for e in self.entries.values_mut() {
            e.user_feedback = None;
        }
    }

    /// Replays a memory log, then keeps appending to it.
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let mut memory = Self::read(path)?;
        memory.attach_log(path)?;
        Ok(memory)
    }

    /// Replays a memory log without attaching it.
    pub fn read(path: &Path) -> Result<Self, AgentError> {
        let mut memory = Self::default();
        if path.exists() {
            let file = File::open(path).map_err(|e| AgentError::Io(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| AgentError::Io(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: MemoryRecord = serde_json::from_str(&line).map_err(|e| AgentError::Io(e.to_string()))?;
                memory.apply(record);
            }
        }
        Ok(memory)
    }

    pub fn attach_log(&mut self, path: &Path) -> Result<(), AgentError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AgentError::Io(e.to_string()))?;
        self.log = Some(Arc::new(std::sync::Mutex::new(file)));
        Ok(())
    }
}
