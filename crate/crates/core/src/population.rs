//! Shared store of sketches, matches, visit counts and the global goal cache.
//!
//! Every operation takes one lock, so the store is linearizable. When opened
//! on a path, each mutation is appended to a JSONL journal:
//!
//! ```text
//! {"schema":"nexus-population","version":1}
//! {"event_kind":"insert","payload":{...},"wall_time":1760000000.123}
//! ```
//!
//! Event kinds: `insert`, `match`, `visit`, `rating`, `goal_store`, `goal_hit`.
//! Re-opening the file replays the events in order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{ProverOutcome, ProverVerdict};
use crate::digest::Digest;
use crate::rating::{self, GibbsConfig, PlackettLuceModel, RatingError, RatingView};
use crate::sketch::ProofSketch;

pub const SCHEMA: &str = "nexus-population";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SketchId(pub u64);

impl fmt::Display for SketchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("sketch id {0} already exists")]
    DuplicateId(SketchId),
    #[error("parent {0} does not exist")]
    MissingParent(SketchId),
    #[error("match refers to unknown player {0}")]
    UnknownPlayer(SketchId),
    #[error("invalid match: {0}")]
    InvalidMatch(String),
    #[error("goal {key} already has verdict {existing:?}; refusing {incoming:?}")]
    ConflictingOutcome {
        key: Digest,
        existing: ProverVerdict,
        incoming: ProverVerdict,
    },
    #[error("malformed prover outcome for goal {0}")]
    MalformedOutcome(Digest),
    #[error("rating refresh failed: {0}")]
    Rating(#[from] RatingError),
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },
}

/// Posterior summary of a sketch's strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingState {
    pub strength_samples: Vec<f64>,
    pub strength_mean: Option<f64>,
    pub strength_var: Option<f64>,
    /// 1200 for unrated sketches.
    pub elo: f64,
}

impl Default for RatingState {
    fn default() -> Self {
        RatingState::unrated()
    }
}

impl RatingState {
    pub fn unrated() -> Self {
        RatingState {
            strength_samples: Vec::new(),
            strength_mean: None,
            strength_var: None,
            elo: rating::ELO_BASE,
        }
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self, RatingError> {
        if samples.is_empty() {
            return Ok(RatingState::unrated());
        }
        let mean = rating::mean(&samples);
        let elo = rating::elo_from_mean(mean)?;
        Ok(RatingState {
            strength_mean: Some(mean),
            strength_var: Some(rating::variance(&samples)),
            strength_samples: samples,
            elo,
        })
    }

    pub fn is_rated(&self) -> bool {
        self.strength_mean.is_some()
    }
}

/// Prover feedback for one open goal of a sketch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalFeedback {
    pub goal_key: Digest,
    pub goal: String,
    pub outcome: ProverOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchRecord {
    pub id: SketchId,
    pub sketch: ProofSketch,
    pub parent_id: Option<SketchId>,
    pub plan_summary: String,
    pub goal_feedback: Vec<GoalFeedback>,
    pub visits: u64,
    pub rating: RatingState,
    /// Logical insertion time, stamped by the store.
    pub created_at: u64,
}

impl SketchRecord {
    pub fn new(id: SketchId, sketch: ProofSketch, parent_id: Option<SketchId>) -> Self {
        SketchRecord {
            id,
            sketch,
            parent_id,
            plan_summary: String::new(),
            goal_feedback: Vec::new(),
            visits: 0,
            rating: RatingState::unrated(),
            created_at: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Strict ranking, best first.
    pub players: Vec<SketchId>,
    /// The rater's ranking as tie groups, best group first.
    pub raw_ranking: Vec<Vec<SketchId>>,
    pub rater_id: String,
}

impl MatchResult {
    pub fn strict(players: Vec<SketchId>, rater_id: impl Into<String>) -> Self {
        MatchResult {
            raw_ranking: players.iter().map(|&p| vec![p]).collect(),
            players,
            rater_id: rater_id.into(),
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.players.len() < 2 {
            return Err(StoreError::InvalidMatch("fewer than two players".into()));
        }
        let distinct: HashSet<_> = self.players.iter().collect();
        if distinct.len() != self.players.len() {
            return Err(StoreError::InvalidMatch("players are not distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalCacheEntry {
    pub goal_key: Digest,
    pub outcome: ProverOutcome,
    pub hits: u64,
}

/// Cache key for a goal: SHA-256 of the whitespace-collapsed goal text.
pub fn goal_key(goal_text: &str) -> Digest {
    let normalized = goal_text.split_whitespace().collect::<Vec<_>>().join(" ");
    Digest::of(normalized.as_bytes())
}

#[derive(Default)]
struct Inner {
    records: HashMap<SketchId, SketchRecord>,
    order: Vec<SketchId>,
    matches: Vec<MatchResult>,
    cache: HashMap<Digest, GoalCacheEntry>,
    next_id: u64,
    clock: u64,
    refreshes: u64,
    published_matches: usize,
    journal: Option<BufWriter<File>>,
}

impl Inner {
    fn log(&mut self, kind: &str, payload: Value) -> Result<(), StoreError> {
        if let Some(w) = self.journal.as_mut() {
            let wall_time = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0);
            let line = json!({"event_kind": kind, "payload": payload, "wall_time": wall_time});
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }

    fn insert(&mut self, mut record: SketchRecord) -> Result<SketchId, StoreError> {
        if self.records.contains_key(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        if let Some(parent) = record.parent_id {
            if !self.records.contains_key(&parent) {
                return Err(StoreError::MissingParent(parent));
            }
        }
        self.clock += 1;
        record.created_at = self.clock;
        self.next_id = self.next_id.max(record.id.0 + 1);
        let id = record.id;
        self.order.push(id);
        self.records.insert(id, record);
        Ok(id)
    }

    fn push_match(&mut self, result: MatchResult) -> Result<(), StoreError> {
        result.validate()?;
        if let Some(missing) = result.players.iter().find(|p| !self.records.contains_key(p)) {
            return Err(StoreError::UnknownPlayer(*missing));
        }
        self.matches.push(result);
        Ok(())
    }

    fn store_goal(&mut self, key: Digest, outcome: ProverOutcome) -> Result<bool, StoreError> {
        if !outcome.is_well_formed() {
            return Err(StoreError::MalformedOutcome(key));
        }
        match self.cache.get_mut(&key) {
            None => {
                self.cache.insert(
                    key,
                    GoalCacheEntry {
                        goal_key: key,
                        outcome,
                        hits: 0,
                    },
                );
                Ok(true)
            }
            Some(entry) => {
                let existing = entry.outcome.verdict;
                let incoming = outcome.verdict;
                match (existing, incoming) {
                    (ProverVerdict::Failed, _) => {
                        entry.outcome = outcome;
                        Ok(true)
                    }
                    (_, ProverVerdict::Failed) => Ok(false),
                    (a, b) if a == b => Ok(false),
                    _ => Err(StoreError::ConflictingOutcome {
                        key,
                        existing,
                        incoming,
                    }),
                }
            }
        }
    }

    fn publish(&mut self, ratings: Vec<(SketchId, Vec<f64>)>) -> Result<(), StoreError> {
        for (id, samples) in ratings {
            if let Some(record) = self.records.get_mut(&id) {
                record.rating = RatingState::from_samples(samples)?;
            }
        }
        Ok(())
    }

    fn top_by_elo(&self, n: usize) -> Vec<SketchId> {
        let mut rated: Vec<&SketchRecord> = self
            .order
            .iter()
            .map(|id| &self.records[id])
            .filter(|r| r.rating.is_rated())
            .collect();
        rated.sort_by(|a, b| {
            b.rating
                .elo
                .total_cmp(&a.rating.elo)
                .then(a.created_at.cmp(&b.created_at))
        });
        rated.into_iter().take(n).map(|r| r.id).collect()
    }
}

/// One elite candidate handed to a selection rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EliteCandidate {
    pub id: SketchId,
    pub elo: f64,
    pub visits: u64,
}

pub struct PopulationStore {
    inner: Mutex<Inner>,
    gibbs: GibbsConfig,
}

impl fmt::Debug for PopulationStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PopulationStore").field("len", &self.len()).finish()
    }
}

impl PopulationStore {
    pub fn new(gibbs: GibbsConfig) -> Self {
        PopulationStore {
            inner: Mutex::new(Inner::default()),
            gibbs,
        }
    }

    /// Opens (or creates) a journal-backed store, replaying existing events.
    pub fn open(path: &Path, gibbs: GibbsConfig) -> Result<Self, StoreError> {
        let mut inner = Inner::default();
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        if exists {
            replay(&mut inner, path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut writer = BufWriter::new(file);
        if !exists {
            writeln!(writer, "{}", json!({"schema": SCHEMA, "version": SCHEMA_VERSION}))?;
            writer.flush()?;
        }
        inner.journal = Some(writer);
        Ok(PopulationStore {
            inner: Mutex::new(inner),
            gibbs,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("population lock poisoned")
    }

    pub fn gibbs_config(&self) -> &GibbsConfig {
        &self.gibbs
    }

    pub fn allocate_id(&self) -> SketchId {
        let mut inner = self.lock();
        let id = SketchId(inner.next_id);
        inner.next_id += 1;
        id
    }

    pub fn len(&self) -> usize {
        self.lock().order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> Vec<SketchId> {
        self.lock().order.clone()
    }

    pub fn get(&self, id: SketchId) -> Option<SketchRecord> {
        self.lock().records.get(&id).cloned()
    }

    pub fn insert_sketch(&self, record: SketchRecord) -> Result<SketchId, StoreError> {
        let mut inner = self.lock();
        let payload = json!({
            "id": record.id,
            "parent_id": record.parent_id,
            "plan_summary": record.plan_summary,
            "goal_feedback": record.goal_feedback,
            "sketch": record.sketch,
        });
        let id = inner.insert(record)?;
        inner.log("insert", payload)?;
        Ok(id)
    }

    pub fn matches(&self) -> Vec<MatchResult> {
        self.lock().matches.clone()
    }

    pub fn match_count(&self) -> usize {
        self.lock().matches.len()
    }

    /// Appends a match without refitting ratings.
    pub fn append_match(&self, result: MatchResult) -> Result<(), StoreError> {
        let mut inner = self.lock();
        let payload = serde_json::to_value(&result).expect("match serializes");
        inner.push_match(result)?;
        inner.log("match", payload)
    }

    /// Appends a match and refits every rating from the full match log.
    pub fn record_match(&self, result: MatchResult) -> Result<(), StoreError> {
        self.append_match(result)?;
        self.refresh_ratings()
    }

    /// Refits the Plackett–Luce posterior on a snapshot of the match log and
    /// publishes it, unless a newer snapshot was already published.
    pub fn refresh_ratings(&self) -> Result<(), StoreError> {
        let (model, snapshot_len, seed) = {
            let mut inner = self.lock();
            if inner.matches.is_empty() {
                return Ok(());
            }
            let in_matches: HashSet<SketchId> = inner.matches.iter().flat_map(|m| m.players.iter().copied()).collect();
            let players: Vec<SketchId> = inner
                .order
                .iter()
                .copied()
                .filter(|id| in_matches.contains(id))
                .collect();
            let matches = inner.matches.iter().map(|m| m.players.clone()).collect();
            inner.refreshes += 1;
            let seed = self
                .gibbs
                .seed
                .wrapping_add(inner.refreshes.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            (PlackettLuceModel::new(players, matches), inner.matches.len(), seed)
        };
        let cfg = GibbsConfig { seed, ..self.gibbs };
        let posterior = rating::gibbs_posterior(&model, &cfg)?;

        let mut inner = self.lock();
        if snapshot_len <= inner.published_matches {
            return Ok(());
        }
        let ratings: Vec<(SketchId, Vec<f64>)> = posterior.into_map().into_iter().collect();
        let payload = json!({
            "matches": snapshot_len,
            "ratings": ratings.iter().map(|(id, s)| json!({"id": id, "samples": s})).collect::<Vec<_>>(),
        });
        inner.publish(ratings)?;
        inner.published_matches = snapshot_len;
        inner.log("rating", payload)
    }

    /// Installs externally computed posterior samples (tests, imports).
    pub fn set_rating(&self, id: SketchId, samples: Vec<f64>) -> Result<(), StoreError> {
        let mut inner = self.lock();
        if !inner.records.contains_key(&id) {
            return Err(StoreError::UnknownPlayer(id));
        }
        let payload = json!({
            "matches": inner.published_matches,
            "ratings": [json!({"id": id, "samples": samples})],
        });
        inner.publish(vec![(id, samples)])?;
        inner.log("rating", payload)
    }

    pub fn rating_views(&self) -> Vec<RatingView> {
        let inner = self.lock();
        inner
            .order
            .iter()
            .map(|id| {
                let r = &inner.records[id];
                RatingView {
                    id: *id,
                    samples: r.rating.strength_samples.clone(),
                    strength_var: r.rating.strength_var.unwrap_or(f64::INFINITY),
                }
            })
            .collect()
    }

    /// Posterior mean strengths; unrated sketches get 1.0.
    pub fn strength_means(&self) -> BTreeMap<SketchId, f64> {
        let inner = self.lock();
        inner
            .records
            .values()
            .map(|r| (r.id, r.rating.strength_mean.unwrap_or(1.0)))
            .collect()
    }

    pub fn top_by_elo(&self, n: usize) -> Vec<SketchId> {
        self.lock().top_by_elo(n)
    }

    pub fn increment_visits(&self, id: SketchId) -> Result<u64, StoreError> {
        let mut inner = self.lock();
        let record = inner.records.get_mut(&id).ok_or(StoreError::UnknownPlayer(id))?;
        record.visits += 1;
        let visits = record.visits;
        inner.log("visit", json!({"id": id}))?;
        Ok(visits)
    }

    /// Atomically picks one of the top `elite_size` rated sketches with
    /// `choose` and records a visit to it. Returns `None` when nothing is
    /// rated.
    pub fn select_and_visit<F>(&self, elite_size: usize, choose: F) -> Result<Option<SketchId>, StoreError>
    where
        F: FnOnce(&[EliteCandidate]) -> usize,
    {
        let mut inner = self.lock();
        let elite: Vec<EliteCandidate> = inner
            .top_by_elo(elite_size)
            .into_iter()
            .map(|id| {
                let r = &inner.records[&id];
                EliteCandidate {
                    id,
                    elo: r.rating.elo,
                    visits: r.visits,
                }
            })
            .collect();
        if elite.is_empty() {
            return Ok(None);
        }
        let pick = elite[choose(&elite)].id;
        inner.records.get_mut(&pick).expect("elite id exists").visits += 1;
        inner.log("visit", json!({"id": pick}))?;
        Ok(Some(pick))
    }

    /// Cache lookup; a hit bumps the entry's hit counter.
    pub fn goal_lookup(&self, key: &Digest) -> Result<Option<GoalCacheEntry>, StoreError> {
        let mut inner = self.lock();
        let Some(entry) = inner.cache.get_mut(key) else {
            return Ok(None);
        };
        entry.hits += 1;
        let entry = entry.clone();
        inner.log("goal_hit", json!({"goal_key": key}))?;
        Ok(Some(entry))
    }

    /// Reads an entry without counting a hit.
    pub fn goal_peek(&self, key: &Digest) -> Option<GoalCacheEntry> {
        self.lock().cache.get(key).cloned()
    }

    /// Stores an outcome. Failures can be upgraded to verdicts; verdicts are
    /// final and a contradicting verdict is rejected.
    pub fn goal_store(&self, key: Digest, outcome: ProverOutcome) -> Result<(), StoreError> {
        let mut inner = self.lock();
        let payload = json!({"goal_key": key, "outcome": outcome});
        if inner.store_goal(key, outcome)? {
            inner.log("goal_store", payload)?;
        }
        Ok(())
    }

    pub fn goal_cache_len(&self) -> usize {
        self.lock().cache.len()
    }
}

fn replay(inner: &mut Inner, path: &Path) -> Result<(), StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let bad = |line: usize, message: String| StoreError::Journal { line, message };
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| bad(line_no, e.to_string()))?;
        if line_no == 1 {
            if value.get("schema").and_then(Value::as_str) != Some(SCHEMA) {
                return Err(bad(1, "missing population schema header".into()));
            }
            let version = value.get("version").and_then(Value::as_u64);
            if version != Some(SCHEMA_VERSION as u64) {
                return Err(bad(1, format!("unsupported schema version {version:?}")));
            }
            continue;
        }
        let kind = value
            .get("event_kind")
            .and_then(Value::as_str)
            .ok_or_else(|| bad(line_no, "missing event_kind".into()))?;
        let payload = value.get("payload").cloned().unwrap_or(Value::Null);
        let field = |name: &str| -> Result<Value, StoreError> {
            payload
                .get(name)
                .cloned()
                .ok_or_else(|| bad(line_no, format!("missing field `{name}`")))
        };
        match kind {
            "insert" => {
                let id: SketchId = from_value(field("id")?, line_no)?;
                let sketch: ProofSketch = from_value(field("sketch")?, line_no)?;
                let parent: Option<SketchId> = from_value(field("parent_id")?, line_no)?;
                let mut record = SketchRecord::new(id, sketch, parent);
                record.plan_summary = from_value(field("plan_summary")?, line_no)?;
                record.goal_feedback = from_value(field("goal_feedback")?, line_no)?;
                inner.insert(record).map_err(|e| bad(line_no, e.to_string()))?;
            }
            "match" => {
                let result: MatchResult = from_value(payload, line_no)?;
                inner.push_match(result).map_err(|e| bad(line_no, e.to_string()))?;
            }
            "visit" => {
                let id: SketchId = from_value(field("id")?, line_no)?;
                inner
                    .records
                    .get_mut(&id)
                    .ok_or_else(|| bad(line_no, format!("visit to unknown {id}")))?
                    .visits += 1;
            }
            "rating" => {
                #[derive(Deserialize)]
                struct Entry {
                    id: SketchId,
                    samples: Vec<f64>,
                }
                let entries: Vec<Entry> = from_value(field("ratings")?, line_no)?;
                let matches: usize = from_value(field("matches")?, line_no)?;
                inner
                    .publish(entries.into_iter().map(|e| (e.id, e.samples)).collect())
                    .map_err(|e| bad(line_no, e.to_string()))?;
                inner.published_matches = inner.published_matches.max(matches);
            }
            "goal_store" => {
                let key: Digest = from_value(field("goal_key")?, line_no)?;
                let outcome: ProverOutcome = from_value(field("outcome")?, line_no)?;
                inner
                    .store_goal(key, outcome)
                    .map_err(|e| bad(line_no, e.to_string()))?;
            }
            "goal_hit" => {
                let key: Digest = from_value(field("goal_key")?, line_no)?;
                if let Some(entry) = inner.cache.get_mut(&key) {
                    entry.hits += 1;
                }
            }
            other => return Err(bad(line_no, format!("unknown event_kind `{other}`"))),
        }
    }
    inner.refreshes = inner.matches.len() as u64;
    Ok(())
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, line: usize) -> Result<T, StoreError> {
    serde_json::from_value(v).map_err(|e| StoreError::Journal {
        line,
        message: e.to_string(),
    })
}
