//! Temporal event streams: events, vocabularies, chronological splits,
//! batching, and prefix snapshots.

use crate::error::{HierError, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

/// One timestamped quadruple. Self-loops are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvent {
    pub source: usize,
    pub relation: usize,
    pub destination: usize,
    pub timestamp: f64,
}

/// Bijective label ↔ contiguous-id map.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocab {
    forward: HashMap<String, usize>,
    reverse: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `label`, registering it if unseen.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.forward.get(label) {
            return id;
        }
        let id = self.reverse.len();
        self.forward.insert(label.to_string(), id);
        self.reverse.push(label.to_string());
        id
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.forward.get(label).copied()
    }

    pub fn label_of(&self, id: usize) -> Option<&str> {
        self.reverse.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.reverse.iter().map(|s| s.as_str())
    }
}

/// A chronologically sorted event stream with shared vocabularies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventDataset {
    pub events: Vec<TemporalEvent>,
    pub entity_vocab: Vocab,
    pub relation_vocab: Vocab,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct EventBatch<'a> {
    pub events: &'a [TemporalEvent],
    pub index: usize,
}

/// Undirected weighted adjacency accumulated from an event prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    /// Keyed by (min, max) node pair; weight = interaction count.
    pub edges: BTreeMap<(usize, usize), f64>,
    pub active_nodes: BTreeSet<usize>,
}

impl Snapshot {
    pub fn weight(&self, u: usize, v: usize) -> f64 {
        let key = (u.min(v), u.max(v));
        self.edges.get(&key).copied().unwrap_or(0.0)
    }
}

/// Build vocabularies from raw string records and assemble a sorted dataset.
/// Ids follow first appearance; the timestamp sort is stable.
pub fn build_vocabs(
    raw_events: &[(String, String, String, f64)],
    name: &str,
) -> Result<EventDataset> {
    if raw_events.is_empty() {
        return Err(HierError::EmptyDataset(name.to_string()));
    }
    let mut entity_vocab = Vocab::new();
    let mut relation_vocab = Vocab::new();
    let mut events = Vec::with_capacity(raw_events.len());
    for (idx, (s, r, o, t)) in raw_events.iter().enumerate() {
        if !t.is_finite() {
            return Err(HierError::parse(
                format!("record {idx}"),
                format!("non-finite timestamp {t}"),
            ));
        }
        events.push(TemporalEvent {
            source: entity_vocab.intern(s),
            relation: relation_vocab.intern(r),
            destination: entity_vocab.intern(o),
            timestamp: *t,
        });
    }
    events.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    Ok(EventDataset {
        events,
        entity_vocab,
        relation_vocab,
        name: name.to_string(),
    })
}

impl EventDataset {
    pub fn num_entities(&self) -> usize {
        self.entity_vocab.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_vocab.len()
    }

    /// Chronological split by event count; vocabularies are shared.
    pub fn chronological_split(
        &self,
        train_frac: f64,
        val_frac: f64,
    ) -> Result<(EventDataset, EventDataset, EventDataset)> {
        if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
            return Err(HierError::Config(format!(
                "invalid split fractions ({train_frac}, {val_frac})"
            )));
        }
        let n = self.events.len();
        let n_train = (train_frac * n as f64).floor() as usize;
        let n_val = (val_frac * n as f64).floor() as usize;
        let make = |events: Vec<TemporalEvent>, suffix: &str| EventDataset {
            events,
            entity_vocab: self.entity_vocab.clone(),
            relation_vocab: self.relation_vocab.clone(),
            name: format!("{}/{suffix}", self.name),
        };
        Ok((
            make(self.events[..n_train].to_vec(), "train"),
            make(self.events[n_train..n_train + n_val].to_vec(), "val"),
            make(self.events[n_train + n_val..].to_vec(), "test"),
        ))
    }

    /// Chronological batches; all but the last hold exactly `batch_size`.
    pub fn batch_stream(&self, batch_size: usize) -> impl Iterator<Item = EventBatch<'_>> {
        assert!(batch_size >= 1, "batch_size must be positive");
        self.events
            .chunks(batch_size)
            .enumerate()
            .map(|(index, events)| EventBatch { events, index })
    }

    /// Undirected adjacency from all events with timestamp ≤ t.
    /// Edge weight = interaction count.
    pub fn snapshot_at(&self, t: f64) -> Snapshot {
        let mut snap = Snapshot::default();
        for ev in &self.events {
            if ev.timestamp > t {
                break;
            }
            let key = (
                ev.source.min(ev.destination),
                ev.source.max(ev.destination),
            );
            *snap.edges.entry(key).or_insert(0.0) += 1.0;
            snap.active_nodes.insert(ev.source);
            snap.active_nodes.insert(ev.destination);
        }
        snap
    }

    /// Write the canonical TSV plus vocab JSON files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HierError::io(dir.display().to_string(), e))?;
        let tsv_path = dir.join("events.tsv");
        let mut out = Vec::new();
        for ev in &self.events {
            let s = self.entity_vocab.label_of(ev.source).unwrap();
            let r = self.relation_vocab.label_of(ev.relation).unwrap();
            let o = self.entity_vocab.label_of(ev.destination).unwrap();
            writeln!(out, "{s}\t{r}\t{o}\t{}", format_timestamp(ev.timestamp)).unwrap();
        }
        std::fs::write(&tsv_path, out)
            .map_err(|e| HierError::io(tsv_path.display().to_string(), e))?;
        for (fname, vocab) in [
            ("entities.json", &self.entity_vocab),
            ("relations.json", &self.relation_vocab),
        ] {
            let map: BTreeMap<&str, usize> = vocab
                .labels()
                .enumerate()
                .map(|(id, label)| (label, id))
                .collect();
            let path = dir.join(fname);
            let json = serde_json::to_string_pretty(&map).expect("vocab serialization");
            std::fs::write(&path, json)
                .map_err(|e| HierError::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Load a dataset previously written by [`EventDataset::save`].
    pub fn load(dir: &Path) -> Result<EventDataset> {
        let tsv_path = dir.join("events.tsv");
        let text = std::fs::read_to_string(&tsv_path)
            .map_err(|e| HierError::io(tsv_path.display().to_string(), e))?;
        let mut raw = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(HierError::parse(
                    format!("{}:{}", tsv_path.display(), lineno + 1),
                    format!("expected 4 columns, got {}", cols.len()),
                ));
            }
            let t: f64 = cols[3].parse().map_err(|_| {
                HierError::parse(
                    format!("{}:{}", tsv_path.display(), lineno + 1),
                    format!("bad timestamp {:?}", cols[3]),
                )
            })?;
            raw.push((
                cols[0].to_string(),
                cols[1].to_string(),
                cols[2].to_string(),
                t,
            ));
        }
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        build_vocabs(&raw, &name)
    }
}

/// Integers print without a trailing `.0` so golden files stay stable.
pub fn format_timestamp(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}
