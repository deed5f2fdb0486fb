//! FIFO of events awaiting consolidation, optionally backed by an
//! append-only journal so pending work survives restarts.
//!
//! Delivery is at-least-once: an id leaves the journal only when it is
//! acknowledged, so an item popped by a worker that dies before `ack` is
//! delivered again after reopening.

use std::collections::{BTreeSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeId;

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("queue journal {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("queue journal {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Record {
    Enqueue { id: NodeId },
    Ack { id: NodeId },
    Failed { id: NodeId },
}

/// What happened to an item whose consolidation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureOutcome {
    Requeued,
    Abandoned,
}

#[derive(Debug, Default)]
pub struct ConsolidationQueue {
    pending: VecDeque<NodeId>,
    in_flight: BTreeSet<NodeId>,
    failed: BTreeSet<NodeId>,
    enqueued: u64,
    dequeued: u64,
    journal: Option<(PathBuf, File)>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> QueueError + '_ {
    move |source| QueueError::Io { path: path.display().to_string(), source }
}

impl ConsolidationQueue {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Replays the journal at `path` (creating it if absent) and keeps it open
    /// for appends.
    pub fn open(path: &Path) -> Result<Self, QueueError> {
        let mut queue = Self::default();
        if path.exists() {
            let file = File::open(path).map_err(io_err(path))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: Record = serde_json::from_str(&line).map_err(|e| QueueError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                queue.apply(record);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(path))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        queue.journal = Some((path.to_path_buf(), file));
        Ok(queue)
    }

    fn apply(&mut self, record: Record) {
        match record {
            Record::Enqueue { id } => {
                self.pending.push_back(id);
                self.enqueued += 1;
            }
            Record::Ack { id } => {
                if let Some(pos) = self.pending.iter().position(|&p| p == id) {
                    self.pending.remove(pos);
                    self.dequeued += 1;
                }
            }
            Record::Failed { id } => {
                self.failed.insert(id);
            }
        }
    }

    fn write(&mut self, record: Record) -> Result<(), QueueError> {
        if let Some((path, file)) = self.journal.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(path))?;
            file.flush().map_err(io_err(path))?;
        }
        Ok(())
    }

    pub fn enqueue(&mut self, id: NodeId) -> Result<(), QueueError> {
        self.write(Record::Enqueue { id })?;
        self.pending.push_back(id);
        self.enqueued += 1;
        Ok(())
    }

    /// Takes the next id. It stays in the journal until [`ack`](Self::ack).
    pub fn dequeue(&mut self) -> Option<NodeId> {
        let id = self.pending.pop_front()?;
        self.in_flight.insert(id);
        self.dequeued += 1;
        Some(id)
    }

    /// Marks a dequeued id as done.
    pub fn ack(&mut self, id: NodeId) -> Result<(), QueueError> {
        self.in_flight.remove(&id);
        self.write(Record::Ack { id })
    }

    /// Rewrites the journal as the minimal record sequence reproducing the
    /// current state. Items popped but not yet acknowledged are kept first so
    /// they are redelivered on replay.
    pub fn compact(&mut self) -> Result<(), QueueError> {
        let Some((path, _)) = self.journal.take() else { return Ok(()) };
        let tmp = path.with_extension("jsonl.tmp");
        let mut out = String::new();
        let records = self
            .failed
            .iter()
            .map(|&id| Record::Failed { id })
            .chain(self.in_flight.iter().chain(self.pending.iter()).map(|&id| Record::Enqueue { id }));
        for r in records {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(&tmp, out).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        self.journal = Some((path, file));
        Ok(())
    }

    /// Records a failed attempt. The first failure of an id puts it back at
    /// the end of the queue; a second one abandons it.
    pub fn fail(&mut self, id: NodeId) -> Result<FailureOutcome, QueueError> {
        let first = !self.failed.contains(&id);
        self.write(Record::Failed { id })?;
        self.failed.insert(id);
        self.ack(id)?;
        if first {
            self.enqueue(id)?;
            Ok(FailureOutcome::Requeued)
        } else {
            Ok(FailureOutcome::Abandoned)
        }
    }

    /// Drops ids for which `keep` is false, acknowledging them so they do not
    /// return on the next replay.
    pub fn retain(&mut self, keep: impl Fn(NodeId) -> bool) -> Result<usize, QueueError> {
        let dropped: Vec<NodeId> = self.pending.iter().copied().filter(|&id| !keep(id)).collect();
        for &id in &dropped {
            let pos = self.pending.iter().position(|&p| p == id).expect("present");
            self.pending.remove(pos);
            self.dequeued += 1;
            self.ack(id)?;
        }
        Ok(dropped.len())
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.pending.iter().copied()
    }

    pub fn enqueued_count(&self) -> u64 {
        self.enqueued
    }

    pub fn dequeued_count(&self) -> u64 {
        self.dequeued
    }

    /// Ids that have failed consolidation at least once.
    pub fn failed(&self) -> &BTreeSet<NodeId> {
        &self.failed
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|(p, _)| p.as_path())
    }
}
