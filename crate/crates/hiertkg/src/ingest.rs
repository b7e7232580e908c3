//! Dataset loaders: ICEWS quadruple files, JODIE-style interaction CSVs,
//! and PHEME thread directories turned into an Event/Tweet/User knowledge
//! graph.

use crate::data::{build_vocabs, EventDataset};
use crate::error::{HierError, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// ICEWS TSV: `subject<TAB>predicate<TAB>object<TAB>date[<TAB>extra]`.
/// Dates (YYYY-MM-DD) become day ordinals from the earliest date in the
/// file; already-numeric timestamps pass through unchanged.
pub fn load_icews(path: &Path) -> Result<EventDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HierError::io(path.display().to_string(), e))?;
    let mut rows: Vec<(String, String, String, TimeCell)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(HierError::parse(
                format!("{}:{}", path.display(), lineno + 1),
                format!("expected ≥ 4 columns, got {}", cols.len()),
            ));
        }
        let cell = parse_time_cell(cols[3]).ok_or_else(|| {
            HierError::parse(
                format!("{}:{}", path.display(), lineno + 1),
                format!("unparseable timestamp {:?}", cols[3]),
            )
        })?;
        rows.push((cols[0].into(), cols[1].into(), cols[2].into(), cell));
    }
    if rows.is_empty() {
        return Err(HierError::EmptyDataset(path.display().to_string()));
    }
    let min_date = rows
        .iter()
        .filter_map(|(_, _, _, c)| match c {
            TimeCell::Date(d) => Some(*d),
            TimeCell::Numeric(_) => None,
        })
        .min();
    let raw: Vec<(String, String, String, f64)> = rows
        .into_iter()
        .map(|(s, r, o, c)| {
            let t = match c {
                TimeCell::Numeric(x) => x,
                TimeCell::Date(d) => (d - min_date.unwrap()).num_days() as f64,
            };
            (s, r, o, t)
        })
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "icews".into());
    build_vocabs(&raw, &name)
}

enum TimeCell {
    Date(NaiveDate),
    Numeric(f64),
}

fn parse_time_cell(s: &str) -> Option<TimeCell> {
    if let Ok(x) = s.parse::<f64>() {
        if x.is_finite() {
            return Some(TimeCell::Numeric(x));
        }
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(TimeCell::Date)
}

/// JODIE-style interaction CSV with a header row. Required columns:
/// `user_id`, `item_id`, `timestamp`; everything else is ignored. Users
/// and items share one entity vocabulary under disjoint namespaces.
pub fn load_wikidata(path: &Path) -> Result<EventDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| HierError::parse(path.display().to_string(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| HierError::parse(path.display().to_string(), e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HierError::Schema(name.to_string()))
    };
    let (ui, ii, ti) = (col("user_id")?, col("item_id")?, col("timestamp")?);
    let mut raw = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| HierError::parse(path.display().to_string(), e.to_string()))?;
        let t: f64 = record[ti].parse().map_err(|_| {
            HierError::parse(
                format!("{}:{}", path.display(), lineno + 2),
                format!("bad timestamp {:?}", &record[ti]),
            )
        })?;
        raw.push((
            format!("user:{}", &record[ui]),
            "interacts".to_string(),
            format!("item:{}", &record[ii]),
            t,
        ));
    }
    if raw.is_empty() {
        return Err(HierError::EmptyDataset(path.display().to_string()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "wikidata".into());
    build_vocabs(&raw, &name)
}

/// One parsed tweet, carrying only what the knowledge graph needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhemeTweetRecord {
    pub tweet_id: String,
    pub user_id: String,
    pub text: String,
    pub created_at: f64,
    pub in_reply_to: Option<String>,
    pub mentioned_user_ids: Vec<String>,
    pub event_name: String,
    pub rumor_label: RumorLabel,
    pub is_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RumorLabel {
    Rumor,
    NonRumor,
    Unknown,
}

/// Ingest warnings: reply edges whose parent tweet is absent are dropped
/// and counted here rather than failing the run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestWarnings {
    pub dropped_reply_edges: usize,
    pub reply_before_parent: usize,
}

/// Walk a PHEME directory tree and emit the four-relation knowledge
/// graph: (Tweet, related_to, Event), (User, wrote, Tweet),
/// (Tweet, replied_to, Tweet), (Tweet, mentions, User), each stamped with
/// the emitting tweet's creation time.
pub fn build_pheme_kg(root: &Path) -> Result<(EventDataset, IngestWarnings)> {
    let tweets = collect_pheme_tweets(root)?;
    if tweets.is_empty() {
        return Err(HierError::EmptyDataset(root.display().to_string()));
    }
    let known: BTreeMap<&str, &PhemeTweetRecord> =
        tweets.iter().map(|t| (t.tweet_id.as_str(), t)).collect();
    let mut warnings = IngestWarnings::default();
    let mut raw: Vec<(String, String, String, f64)> = Vec::new();
    for tw in &tweets {
        let tweet_label = format!("tweet:{}", tw.tweet_id);
        raw.push((
            tweet_label.clone(),
            "related_to".into(),
            format!("event:{}", tw.event_name),
            tw.created_at,
        ));
        raw.push((
            format!("user:{}", tw.user_id),
            "wrote".into(),
            tweet_label.clone(),
            tw.created_at,
        ));
        if let Some(parent) = &tw.in_reply_to {
            match known.get(parent.as_str()) {
                Some(parent_rec) => {
                    if tw.created_at < parent_rec.created_at {
                        warnings.reply_before_parent += 1;
                    }
                    raw.push((
                        tweet_label.clone(),
                        "replied_to".into(),
                        format!("tweet:{parent}"),
                        tw.created_at,
                    ));
                }
                None => warnings.dropped_reply_edges += 1,
            }
        }
        for user in &tw.mentioned_user_ids {
            raw.push((
                tweet_label.clone(),
                "mentions".into(),
                format!("user:{user}"),
                tw.created_at,
            ));
        }
    }
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pheme".into());
    Ok((build_vocabs(&raw, &name)?, warnings))
}

/// Deterministic tweet collection: event folders, thread folders, and
/// tweets are all visited in sorted order. A thread folder is any
/// directory containing a `source-tweet`/`source-tweets` subdirectory.
fn collect_pheme_tweets(root: &Path) -> Result<Vec<PhemeTweetRecord>> {
    let mut tweets = Vec::new();
    for event_dir in sorted_dirs(root)? {
        let event_name = event_dir
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned();
        collect_event_threads(&event_dir, &event_name, RumorLabel::Unknown, &mut tweets)?;
    }
    // sort by (time, id) so ingestion order is reproducible
    tweets.sort_by(|a, b| {
        a.created_at
            .partial_cmp(&b.created_at)
            .unwrap()
            .then_with(|| a.tweet_id.cmp(&b.tweet_id))
    });
    Ok(tweets)
}

fn collect_event_threads(
    dir: &Path,
    event_name: &str,
    label: RumorLabel,
    out: &mut Vec<PhemeTweetRecord>,
) -> Result<()> {
    for sub in sorted_dirs(dir)? {
        let sub_name = sub.file_name().unwrap().to_string_lossy().into_owned();
        let sub_label = match sub_name.as_str() {
            "rumours" | "rumors" => RumorLabel::Rumor,
            "non-rumours" | "non-rumors" => RumorLabel::NonRumor,
            _ => label,
        };
        let src = ["source-tweet", "source-tweets"]
            .iter()
            .map(|n| sub.join(n))
            .find(|p| p.is_dir());
        if let Some(src_dir) = src {
            for json in sorted_files(&src_dir, "json")? {
                out.push(parse_tweet_json(&json, event_name, sub_label, true)?);
            }
            let reactions = sub.join("reactions");
            if reactions.is_dir() {
                for json in sorted_files(&reactions, "json")? {
                    out.push(parse_tweet_json(&json, event_name, sub_label, false)?);
                }
            }
        } else {
            collect_event_threads(&sub, event_name, sub_label, out)?;
        }
    }
    Ok(())
}

fn sorted_dirs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| HierError::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| HierError::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_dir() && !entry.file_name().to_string_lossy().starts_with('.') {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| HierError::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| HierError::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if path.is_file() && path.extension().map(|e| e == ext).unwrap_or(false) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn parse_tweet_json(
    path: &Path,
    event_name: &str,
    label: RumorLabel,
    is_source: bool,
) -> Result<PhemeTweetRecord> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HierError::io(path.display().to_string(), e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| HierError::parse(path.display().to_string(), e.to_string()))?;
    let id_field = |v: &serde_json::Value, key_str: &str, key_num: &str| -> Option<String> {
        v.get(key_str)
            .and_then(|x| x.as_str().map(|s| s.to_string()))
            .or_else(|| v.get(key_num).and_then(|x| x.as_i64().map(|n| n.to_string())))
    };
    let tweet_id = id_field(&value, "id_str", "id")
        .ok_or_else(|| HierError::parse(path.display().to_string(), "missing tweet id"))?;
    let user = value
        .get("user")
        .ok_or_else(|| HierError::parse(path.display().to_string(), "missing user object"))?;
    let user_id = id_field(user, "id_str", "id")
        .ok_or_else(|| HierError::parse(path.display().to_string(), "missing user id"))?;
    let created_raw = value
        .get("created_at")
        .and_then(|x| x.as_str())
        .ok_or_else(|| HierError::parse(path.display().to_string(), "missing created_at"))?;
    let created_at = parse_created_at(created_raw).ok_or_else(|| {
        HierError::parse(
            path.display().to_string(),
            format!("bad created_at {created_raw:?}"),
        )
    })?;
    let in_reply_to = id_field(&value, "in_reply_to_status_id_str", "in_reply_to_status_id");
    let mentioned_user_ids = value
        .get("entities")
        .and_then(|e| e.get("user_mentions"))
        .and_then(|m| m.as_array())
        .map(|arr| {
            arr.iter()
                .filter_map(|m| id_field(m, "id_str", "id"))
                .collect()
        })
        .unwrap_or_default();
    Ok(PhemeTweetRecord {
        tweet_id,
        user_id,
        text: value
            .get("text")
            .and_then(|x| x.as_str())
            .unwrap_or_default()
            .to_string(),
        created_at,
        in_reply_to,
        mentioned_user_ids,
        event_name: event_name.to_string(),
        rumor_label: label,
        is_source,
    })
}

fn parse_created_at(s: &str) -> Option<f64> {
    use chrono::DateTime;
    // Twitter's classic format, e.g. "Wed Jan 07 11:06:08 +0000 2015"
    if let Ok(dt) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Some(dt.timestamp() as f64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64);
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Counts derived by a full scan of a PHEME-built dataset: entities by
/// kind, events by relation, plus thread and tweet totals. A thread root
/// is a tweet entity with no outgoing `replied_to` edge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub entities_by_kind: BTreeMap<String, usize>,
    pub events_by_relation: BTreeMap<String, usize>,
    pub threads: usize,
    pub tweets: usize,
}

pub fn ingest_summary(ds: &EventDataset) -> IngestSummary {
    let mut summary = IngestSummary::default();
    for label in ds.entity_vocab.labels() {
        let kind = label.split(':').next().unwrap_or("other");
        let kind = match kind {
            "event" => "Event",
            "tweet" => "Tweet",
            "user" => "User",
            other => other,
        };
        *summary.entities_by_kind.entry(kind.to_string()).or_insert(0) += 1;
    }
    let mut has_reply = vec![false; ds.num_entities()];
    for ev in &ds.events {
        let rel = ds.relation_vocab.label_of(ev.relation).unwrap().to_string();
        if rel == "replied_to" {
            has_reply[ev.source] = true;
        }
        *summary.events_by_relation.entry(rel).or_insert(0) += 1;
    }
    for (id, label) in ds.entity_vocab.labels().enumerate() {
        if label.starts_with("tweet:") {
            summary.tweets += 1;
            if !has_reply[id] {
                summary.threads += 1;
            }
        }
    }
    summary
}
