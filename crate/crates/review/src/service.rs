//! Blinding, session flow and reporting, independent of the transport.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use polypaug_core::metrics::{average_rankings, RankAverage, RankingRecord};
use polypaug_core::seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ReviewError, Result};
use crate::sets::ReviewSet;
use crate::store::{Event, RankingStore, ReviewSession};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewConfig {
    /// Mixed into every opaque id and shuffle; keep it private to the server.
    pub salt: String,
    pub seed: u64,
    /// Methods ranked on similarity to the reference image.
    pub similarity_methods: Vec<String>,
    pub admin_token: String,
    pub snapshot_every: usize,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            salt: "change-me".into(),
            seed: 0,
            similarity_methods: vec!["sd-baseline".into(), "v1".into(), "v2".into()],
            admin_token: "change-me".into(),
            snapshot_every: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlindImage {
    /// "A", "B", ... in presentation order.
    pub label: String,
    pub image_id: String,
    /// Whether this image is also ranked for similarity.
    pub similarity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

/// What a rater sees of one set. Carries no method names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetView {
    pub session_id: String,
    pub set_id: String,
    pub images: Vec<BlindImage>,
    pub background_image_id: Option<String>,
    pub reference_image_id: Option<String>,
    pub progress: Progress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub progress: Progress,
}

/// Ranks keyed by presentation label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub session_id: String,
    pub set_id: String,
    pub naturalness: BTreeMap<String, u32>,
    #[serde(default)]
    pub similarity: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub naturalness: RankAverage,
    pub similarity: RankAverage,
    pub alignment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub rows: Vec<ReportRow>,
    pub records: usize,
    pub raters: usize,
}

impl RankingReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} | {:>23} | {:>22} | {:>15}\n",
            "Method", "Avg Naturalness Ranking", "Avg Similarity Ranking", "Alignment Score"
        );
        for r in &self.rows {
            let align = r.alignment.map_or("-".to_string(), |a| format!("{a:.3}"));
            let _ = writeln!(
                out,
                "{:<16} | {:>23} | {:>22} | {:>15}",
                r.method,
                r.naturalness.to_string(),
                r.similarity.to_string(),
                align
            );
        }
        out
    }
}

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn label(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("A{i}")
    }
}

pub struct ReviewService {
    config: ReviewConfig,
    sets: Vec<ReviewSet>,
    by_id: HashMap<String, usize>,
    methods: Vec<String>,
    images: HashMap<String, PathBuf>,
    alignment: BTreeMap<String, f64>,
    store: RankingStore,
    clock: Box<dyn Fn() -> u64 + Send + Sync>,
}

impl ReviewService {
    /// `sets` must all compare the same methods in the same order.
    pub fn new(config: ReviewConfig, sets: Vec<ReviewSet>, store: RankingStore) -> Result<Self> {
        let methods: Vec<String> = sets
            .first()
            .ok_or_else(|| ReviewError::InvalidConfig("no review sets".into()))?
            .images
            .iter()
            .map(|(m, _)| m.clone())
            .collect();
        let mut by_id = HashMap::new();
        let mut images = HashMap::new();
        for (i, s) in sets.iter().enumerate() {
            if s.images.iter().map(|(m, _)| m).ne(methods.iter()) {
                return Err(ReviewError::InvalidConfig(format!("{} compares different methods", s.set_id)));
            }
            if by_id.insert(s.set_id.clone(), i).is_some() {
                return Err(ReviewError::InvalidConfig(format!("duplicate set id {}", s.set_id)));
            }
            for (m, p) in &s.images {
                images.insert(Self::opaque(&config.salt, &s.set_id, m), p.clone());
            }
            for (role, p) in [("background", &s.background), ("reference", &s.reference)] {
                if let Some(p) = p {
                    images.insert(Self::opaque(&config.salt, &s.set_id, &format!("#{role}")), p.clone());
                }
            }
        }
        Ok(Self {
            config,
            sets,
            by_id,
            methods,
            images,
            alignment: BTreeMap::new(),
            store,
            clock: Box::new(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            }),
        })
    }

    /// Mean alignment score per method, shown as an extra report column.
    pub fn with_alignment(mut self, alignment: BTreeMap<String, f64>) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn sets(&self) -> &[ReviewSet] {
        &self.sets
    }

    pub fn store(&self) -> &RankingStore {
        &self.store
    }

    fn opaque(salt: &str, set_id: &str, method: &str) -> String {
        hex(&digest(&[salt, set_id, method])[..16])
    }

    fn total(&self) -> usize {
        self.sets.len()
    }

    fn progress(&self, s: &ReviewSession) -> Progress {
        Progress {
            completed: s.completed.len(),
            total: self.total(),
        }
    }

    /// Opens a session for `rater_id`, or returns the one already open.
    pub fn open_session(&self, rater_id: &str) -> Result<SessionInfo> {
        if rater_id.trim().is_empty() {
            return Err(ReviewError::InvalidConfig("empty rater id".into()));
        }
        let state = self.store.state();
        if let Some(s) = state.session_for_rater(rater_id) {
            return Ok(SessionInfo {
                session_id: s.session_id.clone(),
                progress: self.progress(s),
            });
        }
        let session_id = hex(&digest(&[&self.config.salt, "session", rater_id])[..12]);
        let mut set_order: Vec<String> = self.sets.iter().map(|s| s.set_id.clone()).collect();
        let h = digest(&[&session_id]);
        let order_seed = seed::derive(self.config.seed, u64::from_le_bytes(h[..8].try_into().unwrap()));
        set_order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        let session = ReviewSession {
            session_id: session_id.clone(),
            rater_id: rater_id.to_string(),
            set_order,
            completed: Default::default(),
        };
        let progress = self.progress(&session);
        self.store.append(Event::SessionOpened(session))?;
        Ok(SessionInfo { session_id, progress })
    }

    /// Method order as shown to this session for this set.
    fn presentation(&self, session_id: &str, set_id: &str) -> Vec<&str> {
        let mut order: Vec<&str> = self.methods.iter().map(String::as_str).collect();
        let h = digest(&[&self.config.salt, "blind", session_id, set_id]);
        order.shuffle(&mut ChaCha8Rng::from_seed(h));
        order
    }

    fn is_similarity(&self, method: &str) -> bool {
        self.config.similarity_methods.iter().any(|m| m == method)
    }

    /// The first unranked set of the session, or `None` when all are done.
    pub fn next_set(&self, session_id: &str) -> Result<Option<SetView>> {
        let state = self.store.state();
        let session = state
            .sessions
            .get(session_id)
            .ok_or_else(|| ReviewError::UnknownSession(session_id.to_string()))?;
        let Some(set_id) = session.next_set() else { return Ok(None) };
        let set = &self.sets[self.by_id[set_id]];
        let salt = &self.config.salt;
        let images = self
            .presentation(session_id, set_id)
            .into_iter()
            .enumerate()
            .map(|(i, m)| BlindImage {
                label: label(i),
                image_id: Self::opaque(salt, set_id, m),
                similarity: self.is_similarity(m),
            })
            .collect();
        Ok(Some(SetView {
            session_id: session_id.to_string(),
            set_id: set_id.to_string(),
            images,
            background_image_id: set.background.as_ref().map(|_| Self::opaque(salt, set_id, "#background")),
            reference_image_id: set.reference.as_ref().map(|_| Self::opaque(salt, set_id, "#reference")),
            progress: self.progress(session),
        }))
    }

    pub fn image_path(&self, image_id: &str) -> Result<&PathBuf> {
        self.images
            .get(image_id)
            .ok_or_else(|| ReviewError::UnknownImage(image_id.to_string()))
    }

    fn unblind(
        &self,
        labels: &BTreeMap<&str, &str>,
        ranks: &BTreeMap<String, u32>,
        expected: &[&str],
        criterion: &str,
    ) -> Result<BTreeMap<String, u32>> {
        let mut got: Vec<&str> = ranks.keys().map(String::as_str).collect();
        let mut want = expected.to_vec();
        got.sort_unstable();
        want.sort_unstable();
        if got != want {
            return Err(ReviewError::InvalidPermutation(format!(
                "{criterion} must rank exactly {want:?}, got {got:?}"
            )));
        }
        polypaug_core::metrics::check_permutation(ranks.values())
            .map_err(|e| ReviewError::InvalidPermutation(format!("{criterion}: {e}")))?;
        Ok(ranks.iter().map(|(l, &r)| (labels[l.as_str()].to_string(), r)).collect())
    }

    /// Validates label ranks, maps them back to methods and appends the record.
    pub fn submit(&self, sub: &Submission) -> Result<Progress> {
        let state = self.store.state();
        let session = state
            .sessions
            .get(&sub.session_id)
            .ok_or_else(|| ReviewError::UnknownSession(sub.session_id.clone()))?;
        if !self.by_id.contains_key(&sub.set_id) || !session.set_order.contains(&sub.set_id) {
            return Err(ReviewError::UnknownSet(sub.set_id.clone()));
        }
        if session.completed.contains(&sub.set_id) {
            return Err(ReviewError::DuplicateSubmission {
                session: sub.session_id.clone(),
                set: sub.set_id.clone(),
            });
        }
        let order = self.presentation(&sub.session_id, &sub.set_id);
        let labels: Vec<String> = (0..order.len()).map(label).collect();
        let by_label: BTreeMap<&str, &str> = labels.iter().map(String::as_str).zip(order.iter().copied()).collect();
        let all: Vec<&str> = labels.iter().map(String::as_str).collect();
        let sim: Vec<&str> = labels
            .iter()
            .zip(&order)
            .filter(|(_, m)| self.is_similarity(m))
            .map(|(l, _)| l.as_str())
            .collect();
        let record = RankingRecord {
            session_id: sub.session_id.clone(),
            set_id: sub.set_id.clone(),
            method_ranks_naturalness: self.unblind(&by_label, &sub.naturalness, &all, "naturalness")?,
            method_ranks_similarity: self.unblind(&by_label, &sub.similarity, &sim, "similarity")?,
            timestamp: (self.clock)(),
        };
        let state = self.store.append(Event::Ranked(record))?;
        Ok(self.progress(&state.sessions[&sub.session_id]))
    }

    /// Per-method average ranks over every stored record.
    pub fn report(&self) -> Result<RankingReport> {
        report(&self.store.state().records, &self.methods, &self.alignment)
    }
}

/// Table-shaped summary of `records`; rows follow `methods` order.
pub fn report(
    records: &[RankingRecord],
    methods: &[String],
    alignment: &BTreeMap<String, f64>,
) -> Result<RankingReport> {
    if records.is_empty() {
        return Err(ReviewError::EmptyStore);
    }
    let averages = average_rankings(records)?;
    let raters: std::collections::BTreeSet<&str> = records.iter().map(|r| r.session_id.as_str()).collect();
    Ok(RankingReport {
        rows: methods
            .iter()
            .filter_map(|m| {
                averages.get(m).map(|a| ReportRow {
                    method: m.clone(),
                    naturalness: a.naturalness,
                    similarity: a.similarity,
                    alignment: alignment.get(m).copied(),
                })
            })
            .collect(),
        records: records.len(),
        raters: raters.len(),
    })
}

/// Shared handle used by the HTTP layer.
pub type SharedService = Arc<ReviewService>;
