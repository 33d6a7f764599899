//! Comparison schedule generation, session assembly under vote quotas, and
//! the session lifecycle.
//!
//! Comparisons are handed out least-loaded first, where load counts both
//! recorded votes and open assignments, with ties broken by a seeded random
//! key that is redrawn whenever a comparison's load changes. A comparison is
//! assignable while its load is below quota, so the only way past quota is
//! two sessions holding it at once; the excess is bounded by the number of
//! open sessions holding it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    canonicalize_pair, sequential_id, AnnotatorId, AnnotatorProfile, BenchmarkId, Comparison, ComparisonId,
    ComparisonTask, CriterionKind, ImageAsset, ImageId, ModelId, ModelRef, Prompt, PromptId, Session, SessionId,
    SessionState, Side, Task, Timestamp, TrustState, TrustStatus, ValidationItem, ValidationTask, Vote, VoteId,
};
use crate::qa::{check_timing, update_trust, QaConfig, TimingVerdict, ValidationOutcome};
use crate::store::{DurableState, LogEntry, MissingCell, StoreError, ValidationRecord, VoteLog};

/// Session ids carry their benchmark so a submission can be routed by id
/// alone.
pub fn session_id(benchmark: &BenchmarkId, n: u64) -> SessionId {
    SessionId::from(format!("{benchmark}.{}", sequential_id("ses", n)))
}

/// The benchmark part of a session id built by [`session_id`].
pub fn benchmark_of(session: &SessionId) -> Option<BenchmarkId> {
    session.as_str().split_once('.').map(|(b, _)| BenchmarkId::from(b))
}

pub const DEFAULT_IMAGES_PER_MODEL: u32 = 4;
pub const DEFAULT_QUOTA: u32 = 26;
pub const SESSION_TASK_LIMIT: usize = 3;
pub const DEFAULT_SESSION_DEADLINE_MS: u64 = 5 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub benchmark_id: BenchmarkId,
    pub models: Vec<ModelRef>,
    pub prompts: Vec<Prompt>,
    pub images_per_model: u32,
    pub criteria: Vec<CriterionKind>,
    pub votes_per_comparison: u32,
    pub session_task_limit: usize,
}

impl BenchmarkPlan {
    /// A plan with the default K, Q, all three criteria and three-task sessions.
    pub fn new(benchmark_id: impl Into<BenchmarkId>, models: Vec<ModelRef>, prompts: Vec<Prompt>) -> Self {
        BenchmarkPlan {
            benchmark_id: benchmark_id.into(),
            models,
            prompts,
            images_per_model: DEFAULT_IMAGES_PER_MODEL,
            criteria: CriterionKind::ALL.to_vec(),
            votes_per_comparison: DEFAULT_QUOTA,
            session_task_limit: SESSION_TASK_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        self.validate_definition()?;
        if self.prompts.is_empty() {
            return Err(SchedulerError::InvalidPlan("need at least one prompt".into()));
        }
        let prompt_ids: HashSet<&PromptId> = self.prompts.iter().map(|p| &p.prompt_id).collect();
        if prompt_ids.len() != self.prompts.len() {
            return Err(SchedulerError::InvalidPlan("prompt ids must be distinct".into()));
        }
        Ok(())
    }

    /// Checks everything except the prompts, which arrive after creation.
    pub fn validate_definition(&self) -> Result<(), SchedulerError> {
        let invalid = |m: String| Err(SchedulerError::InvalidPlan(m));
        if self.models.len() < 2 {
            return invalid(format!("need at least two models, got {}", self.models.len()));
        }
        let ids: HashSet<&ModelId> = self.models.iter().map(|m| &m.model_id).collect();
        if ids.len() != self.models.len() {
            return invalid("model ids must be distinct".into());
        }
        if self.images_per_model == 0 {
            return invalid("images_per_model must be positive".into());
        }
        if self.votes_per_comparison == 0 {
            return invalid("votes_per_comparison must be positive".into());
        }
        let criteria: HashSet<&CriterionKind> = self.criteria.iter().collect();
        if self.criteria.is_empty() || criteria.len() != self.criteria.len() {
            return invalid("criteria must be a non-empty set".into());
        }
        if self.session_task_limit != SESSION_TASK_LIMIT {
            return invalid(format!("sessions hold {SESSION_TASK_LIMIT} tasks"));
        }
        Ok(())
    }

    /// C(M,2)·K² cross-model pairs per prompt and criterion.
    pub fn comparisons_per_prompt(&self) -> u64 {
        let m = self.models.len() as u64;
        let k = self.images_per_model as u64;
        m * m.saturating_sub(1) / 2 * k * k
    }

    pub fn comparisons_per_criterion(&self) -> u64 {
        self.prompts.len() as u64 * self.comparisons_per_prompt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTotals {
    pub votes_per_prompt_per_criterion: u64,
    pub votes_per_criterion: u64,
    pub total_votes: u64,
}

pub fn expected_vote_totals(plan: &BenchmarkPlan) -> VoteTotals {
    let per_prompt = plan.comparisons_per_prompt() * plan.votes_per_comparison as u64;
    let per_criterion = plan.prompts.len() as u64 * per_prompt;
    VoteTotals {
        votes_per_prompt_per_criterion: per_prompt,
        votes_per_criterion: per_criterion,
        total_votes: plan.criteria.len() as u64 * per_criterion,
    }
}

/// Every cross-model image pair of every prompt under every planned
/// criterion, ordered by prompt id, criterion, then pair.
pub fn generate_comparisons(plan: &BenchmarkPlan, assets: &[ImageAsset]) -> Result<Vec<Comparison>, SchedulerError> {
    plan.validate()?;
    let mut cells: HashMap<(&ModelId, &PromptId), Vec<&ImageAsset>> = HashMap::new();
    for a in assets {
        cells.entry((&a.model_id, &a.prompt_id)).or_default().push(a);
    }
    let mut prompts: Vec<&Prompt> = plan.prompts.iter().collect();
    prompts.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));

    let mut missing = Vec::new();
    for p in &prompts {
        for m in &plan.models {
            let found = cells.get(&(&m.model_id, &p.prompt_id)).map_or(0, |v| v.len()) as u32;
            if found != plan.images_per_model {
                missing.push(MissingCell {
                    model_id: m.model_id.clone(),
                    prompt_id: p.prompt_id.clone(),
                    found,
                    expected: plan.images_per_model,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(SchedulerError::IncompleteAssets(missing));
    }

    let mut criteria = plan.criteria.clone();
    criteria.sort();
    let mut out = Vec::with_capacity((plan.comparisons_per_criterion() as usize) * criteria.len());
    for p in &prompts {
        let mut pairs: Vec<(ImageId, ImageId)> = Vec::with_capacity(plan.comparisons_per_prompt() as usize);
        for (i, mi) in plan.models.iter().enumerate() {
            for mj in &plan.models[i + 1..] {
                for a in &cells[&(&mi.model_id, &p.prompt_id)] {
                    for b in &cells[&(&mj.model_id, &p.prompt_id)] {
                        pairs.push(canonicalize_pair(a.image_id.clone(), b.image_id.clone())?);
                    }
                }
            }
        }
        pairs.sort();
        for criterion in &criteria {
            for (a, b) in &pairs {
                out.push(Comparison {
                    comparison_id: ComparisonId::from(sequential_id("cmp", out.len() as u64 + 1)),
                    criterion: *criterion,
                    prompt_id: p.prompt_id.clone(),
                    image_a: a.clone(),
                    image_b: b.clone(),
                    quota: plan.votes_per_comparison,
                    votes_recorded: 0,
                    outstanding_assignments: 0,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub seed: u64,
    /// Share of Preference and Coherence sessions in which one slot holds a
    /// validation task.
    pub validation_rate: f64,
    pub session_deadline_ms: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            seed: 0,
            validation_rate: 1.0 / 3.0,
            session_deadline_ms: DEFAULT_SESSION_DEADLINE_MS,
        }
    }
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{} (model, prompt) cells lack images", .0.len())]
    IncompleteAssets(Vec<MissingCell>),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error("annotator {0} is disqualified")]
    AnnotatorDisqualified(AnnotatorId),
    #[error("no work available")]
    NoWorkAvailable,
    #[error("criterion {0} is not part of this benchmark")]
    CriterionNotInPlan(CriterionKind),
    #[error("alignment sessions need a validation pool")]
    ValidationPoolEmpty,
    #[error("session {0} not found")]
    SessionNotFound(SessionId),
    #[error("session {session_id} is {state:?}, not issued")]
    SessionNotIssued { session_id: SessionId, state: SessionState },
    #[error("expected {expected} responses, got {found}")]
    ResponseCountMismatch { expected: usize, found: usize },
    #[error("response {position} names task {task_index}; responses must follow task order")]
    ResponseOutOfOrder { position: usize, task_index: usize },
    #[error("session {0} has not expired")]
    NotExpired(SessionId),
    #[error("unknown comparison {0}")]
    UnknownComparison(ComparisonId),
    #[error("storage: {0}")]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub task_index: usize,
    pub chosen: Side,
    pub response_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum QaEvent {
    TimingPenalty {
        task_index: usize,
        response_time_ms: u64,
        penalty_ms: u64,
    },
    ValidationPassed {
        task_index: usize,
    },
    ValidationFailed {
        task_index: usize,
    },
    TrustChanged {
        from: TrustStatus,
        to: TrustStatus,
    },
    VotesVoided {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionOutcome {
    pub accepted_votes: usize,
    pub rejected_votes: usize,
    pub qa_events: Vec<QaEvent>,
    /// Wait to impose before the next session, 0 when no answer was too fast.
    pub penalty_ms: u64,
    pub trust: TrustState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionProgress {
    pub criterion: CriterionKind,
    pub comparisons_complete: u64,
    pub comparisons_total: u64,
    pub votes_recorded: u64,
    pub votes_expected: u64,
    pub outstanding_assignments: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counters {
    total: u64,
    complete: u64,
    recorded: u64,
    outstanding: u64,
}

type QueueKey = (u32, u64, u32);

pub struct Scheduler {
    benchmark_id: BenchmarkId,
    quota: u32,
    task_limit: usize,
    criteria: Vec<CriterionKind>,
    config: SchedulerConfig,
    qa: QaConfig,
    prompt_text: HashMap<PromptId, String>,
    comparisons: Vec<Comparison>,
    by_id: HashMap<ComparisonId, u32>,
    keys: Vec<u64>,
    queues: BTreeMap<CriterionKind, BTreeSet<QueueKey>>,
    counters: BTreeMap<CriterionKind, Counters>,
    annotators: HashMap<AnnotatorId, u32>,
    profiles: Vec<AnnotatorProfile>,
    seen: HashSet<(u32, u32)>,
    pool: Vec<ValidationItem>,
    open: HashMap<SessionId, Session>,
    closed: HashMap<SessionId, SessionState>,
    accepted: Vec<Vote>,
    rejected: u64,
    session_seq: u64,
    vote_seq: u64,
    rng: ChaCha8Rng,
    log: Arc<VoteLog>,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler")
            .field("comparisons", &self.comparisons.len())
            .field("annotators", &self.profiles.len())
            .field("open_sessions", &self.open.len())
            .field("accepted_votes", &self.accepted.len())
            .finish()
    }
}

impl Scheduler {
    /// A scheduler over freshly generated comparisons, writing to `log`.
    pub fn new(
        plan: &BenchmarkPlan,
        comparisons: Vec<Comparison>,
        pool: Vec<ValidationItem>,
        config: SchedulerConfig,
        qa: QaConfig,
        log: Arc<VoteLog>,
    ) -> Result<Self, SchedulerError> {
        plan.validate()?;
        if !(0.0..=1.0).contains(&config.validation_rate) {
            return Err(SchedulerError::InvalidPlan("validation_rate must lie in [0, 1]".into()));
        }
        if plan.criteria.contains(&CriterionKind::Alignment) && !pool.iter().any(|v| v.prompt_text.is_some()) {
            return Err(SchedulerError::ValidationPoolEmpty);
        }
        let mut criteria = plan.criteria.clone();
        criteria.sort();
        let mut s = Scheduler {
            benchmark_id: plan.benchmark_id.clone(),
            quota: plan.votes_per_comparison,
            task_limit: plan.session_task_limit,
            criteria,
            config,
            qa,
            prompt_text: plan.prompts.iter().map(|p| (p.prompt_id.clone(), p.text.clone())).collect(),
            by_id: HashMap::with_capacity(comparisons.len()),
            keys: Vec::with_capacity(comparisons.len()),
            queues: BTreeMap::new(),
            counters: BTreeMap::new(),
            comparisons: Vec::new(),
            annotators: HashMap::new(),
            profiles: Vec::new(),
            seen: HashSet::new(),
            pool,
            open: HashMap::new(),
            closed: HashMap::new(),
            accepted: Vec::new(),
            rejected: 0,
            session_seq: 0,
            vote_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            log,
        };
        for c in &s.criteria {
            s.queues.insert(*c, BTreeSet::new());
            s.counters.insert(*c, Counters::default());
        }
        for (idx, mut c) in comparisons.into_iter().enumerate() {
            if !s.queues.contains_key(&c.criterion) {
                return Err(SchedulerError::CriterionNotInPlan(c.criterion));
            }
            c.votes_recorded = 0;
            c.outstanding_assignments = 0;
            let key = s.rng.random();
            s.by_id.insert(c.comparison_id.clone(), idx as u32);
            s.keys.push(key);
            s.queues.get_mut(&c.criterion).unwrap().insert((0, key, idx as u32));
            s.counters.get_mut(&c.criterion).unwrap().total += 1;
            s.comparisons.push(c);
        }
        Ok(s)
    }

    /// Rebuilds a scheduler from replayed durable state. Sessions that were
    /// open when the state was captured are open again.
    pub fn restore(
        plan: &BenchmarkPlan,
        comparisons: Vec<Comparison>,
        pool: Vec<ValidationItem>,
        config: SchedulerConfig,
        qa: QaConfig,
        log: Arc<VoteLog>,
        state: DurableState,
    ) -> Result<Self, SchedulerError> {
        let mut s = Scheduler::new(plan, comparisons, pool, config, qa, log)?;
        let outstanding = state.outstanding();
        for profile in state.profiles.into_values() {
            s.annotator_index(&profile);
            let idx = s.annotators[&profile.annotator_id] as usize;
            s.profiles[idx].trust = profile.trust;
        }
        for (id, n) in &state.votes_recorded {
            let idx = s.index_of(id)?;
            s.change_load(idx, *n as i64, 0);
        }
        for (id, n) in outstanding {
            let idx = s.index_of(&id)?;
            s.change_load(idx, 0, n as i64);
        }
        for (annotator, comparison) in &state.seen {
            let a = s.annotators.get(annotator).copied().ok_or_else(|| {
                SchedulerError::Storage(StoreError::UnknownReference(format!("annotator {annotator}")))
            })?;
            let c = s.index_of(comparison)?;
            s.seen.insert((a, c));
        }
        s.open = state.open_sessions.into_iter().collect();
        s.closed = state.closed_sessions.into_iter().collect();
        s.accepted = state.accepted_votes;
        s.rejected = state.rejected_votes;
        s.session_seq = state.max_session_seq;
        s.vote_seq = state.max_vote_seq;
        Ok(s)
    }

    fn index_of(&self, id: &ComparisonId) -> Result<u32, SchedulerError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| SchedulerError::UnknownComparison(id.clone()))
    }

    /// Adjusts recorded votes and outstanding assignments of one comparison,
    /// keeping the queue and counters in step.
    fn change_load(&mut self, idx: u32, recorded: i64, outstanding: i64) {
        let i = idx as usize;
        let quota = self.quota;
        let c = &mut self.comparisons[i];
        let queue = self.queues.get_mut(&c.criterion).unwrap();
        let counters = self.counters.get_mut(&c.criterion).unwrap();
        let old_load = c.load();
        if old_load < quota {
            queue.remove(&(old_load, self.keys[i], idx));
        }
        let was_complete = c.votes_recorded >= quota;
        c.votes_recorded = (c.votes_recorded as i64 + recorded) as u32;
        c.outstanding_assignments = (c.outstanding_assignments as i64 + outstanding) as u32;
        counters.recorded = (counters.recorded as i64 + recorded) as u64;
        counters.outstanding = (counters.outstanding as i64 + outstanding) as u64;
        match (was_complete, c.votes_recorded >= quota) {
            (false, true) => counters.complete += 1,
            (true, false) => counters.complete -= 1,
            _ => {}
        }
        let new_load = c.load();
        if new_load != old_load {
            self.keys[i] = self.rng.random();
        }
        if new_load < quota {
            queue.insert((new_load, self.keys[i], idx));
        }
    }

    /// Index of an annotator, registering them if new. Returns whether the
    /// stored profile changed and needs logging.
    fn annotator_index(&mut self, profile: &AnnotatorProfile) -> (u32, bool) {
        match self.annotators.get(&profile.annotator_id) {
            Some(&idx) => {
                let stored = &self.profiles[idx as usize];
                let changed = stored.country_code != profile.country_code
                    || stored.locale != profile.locale
                    || stored.age_bucket != profile.age_bucket
                    || stored.gender != profile.gender;
                (idx, changed)
            }
            None => {
                let idx = self.profiles.len() as u32;
                let mut p = profile.clone();
                p.trust = TrustState::default();
                self.profiles.push(p);
                self.annotators.insert(profile.annotator_id.clone(), idx);
                (idx, true)
            }
        }
    }

    fn pick(&self, criterion: CriterionKind, annotator: Option<u32>, n: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(n);
        if n == 0 {
            return out;
        }
        for &(_, _, idx) in &self.queues[&criterion] {
            if annotator.is_some_and(|a| self.seen.contains(&(a, idx))) {
                continue;
            }
            out.push(idx);
            if out.len() == n {
                break;
            }
        }
        out
    }

    /// Criteria ordered from least to most progressed, counting open
    /// assignments as progress.
    fn criteria_by_progress(&self) -> Vec<CriterionKind> {
        let mut v: Vec<(f64, CriterionKind)> = self
            .criteria
            .iter()
            .map(|c| {
                let k = self.counters[c];
                let expected = (k.total * self.quota as u64).max(1) as f64;
                ((k.recorded + k.outstanding) as f64 / expected, *c)
            })
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.into_iter().map(|(_, c)| c).collect()
    }

    /// Assembles a session for `annotator`. With no requested criterion the
    /// least-progressed criterion with work for this annotator is used.
    pub fn next_session(
        &mut self,
        annotator: &AnnotatorProfile,
        requested: Option<CriterionKind>,
        now: Timestamp,
    ) -> Result<Session, SchedulerError> {
        let known = self.annotators.get(&annotator.annotator_id).copied();
        if let Some(idx) = known {
            if self.profiles[idx as usize].trust.status == TrustStatus::Disqualified {
                return Err(SchedulerError::AnnotatorDisqualified(annotator.annotator_id.clone()));
            }
        }
        let candidates = match requested {
            Some(c) if !self.criteria.contains(&c) => return Err(SchedulerError::CriterionNotInPlan(c)),
            Some(c) => vec![c],
            None => self.criteria_by_progress(),
        };

        for criterion in candidates {
            let with_validation = match criterion {
                CriterionKind::Alignment => {
                    if !self.pool.iter().any(|v| v.prompt_text.is_some()) {
                        return Err(SchedulerError::ValidationPoolEmpty);
                    }
                    true
                }
                _ => !self.pool.is_empty() && self.rng.random_bool(self.config.validation_rate),
            };
            let wanted = match criterion {
                CriterionKind::Alignment => 1,
                _ if with_validation => self.task_limit - 1,
                _ => self.task_limit,
            };
            let picked = self.pick(criterion, known, wanted);
            if picked.is_empty() {
                continue;
            }
            return self.issue(annotator, criterion, picked, with_validation, now);
        }
        Err(SchedulerError::NoWorkAvailable)
    }

    fn issue(
        &mut self,
        annotator: &AnnotatorProfile,
        criterion: CriterionKind,
        picked: Vec<u32>,
        with_validation: bool,
        now: Timestamp,
    ) -> Result<Session, SchedulerError> {
        let shows_prompt = criterion.shows_prompt();
        let mut tasks: Vec<Task> = picked
            .iter()
            .map(|&idx| {
                let c = &self.comparisons[idx as usize];
                let (left, right) = if self.rng.random_bool(0.5) {
                    (c.image_b.clone(), c.image_a.clone())
                } else {
                    (c.image_a.clone(), c.image_b.clone())
                };
                Task::Comparison(ComparisonTask {
                    comparison_id: c.comparison_id.clone(),
                    left_image: left,
                    right_image: right,
                    prompt_text: shows_prompt.then(|| self.prompt_text[&c.prompt_id].clone()),
                })
            })
            .collect();
        if with_validation {
            // a prompt-showing task without a prompt would give the check away
            let candidates: Vec<&ValidationItem> = self
                .pool
                .iter()
                .filter(|v| !shows_prompt || v.prompt_text.is_some())
                .collect();
            let item = candidates[self.rng.random_range(0..candidates.len())];
            let (l, r) = item.image_ids();
            let correct = match item.correct_side {
                Side::Left => l.clone(),
                Side::Right => r.clone(),
            };
            let (left_image, right_image) = if self.rng.random_bool(0.5) { (r, l) } else { (l, r) };
            let task = Task::Validation(ValidationTask {
                validation_id: item.validation_id.clone(),
                left_image,
                right_image,
                correct_image: correct,
                prompt_text: if shows_prompt { item.prompt_text.clone() } else { None },
            });
            let at = match criterion {
                CriterionKind::Alignment => 0,
                _ => self.rng.random_range(0..=tasks.len()),
            };
            tasks.insert(at, task);
        }

        let session = Session {
            session_id: session_id(&self.benchmark_id, self.session_seq + 1),
            annotator_id: annotator.annotator_id.clone(),
            criterion,
            tasks,
            state: SessionState::Issued,
            issued_at: now,
            deadline: now.saturating_add(self.config.session_deadline_ms),
        };

        let registered = self.annotators.contains_key(&annotator.annotator_id);
        let (a_idx, changed) = self.annotator_index(annotator);
        let profile = changed.then(|| AnnotatorProfile {
            trust: self.profiles[a_idx as usize].trust,
            ..annotator.clone()
        });
        let entry = LogEntry::SessionIssued {
            profile,
            session: session.clone(),
        };
        if let Err(e) = self.log.append(&entry) {
            if !registered {
                self.annotators.remove(&annotator.annotator_id);
                self.profiles.pop();
            }
            return Err(e.into());
        }
        if changed {
            let trust = self.profiles[a_idx as usize].trust;
            self.profiles[a_idx as usize] = AnnotatorProfile {
                trust,
                ..annotator.clone()
            };
        }

        self.session_seq += 1;
        for idx in picked {
            self.seen.insert((a_idx, idx));
            self.change_load(idx, 0, 1);
        }
        self.open.insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    fn closed_error(&self, session_id: &SessionId) -> SchedulerError {
        match self.closed.get(session_id) {
            Some(state) => SchedulerError::SessionNotIssued {
                session_id: session_id.clone(),
                state: *state,
            },
            None => SchedulerError::SessionNotFound(session_id.clone()),
        }
    }

    /// Grades and records a submitted session. Submissions after the
    /// deadline expire the session instead.
    pub fn record_responses(
        &mut self,
        session_id: &SessionId,
        responses: &[Response],
        now: Timestamp,
    ) -> Result<SubmissionOutcome, SchedulerError> {
        let Some(session) = self.open.get(session_id) else {
            return Err(self.closed_error(session_id));
        };
        if now > session.deadline {
            self.close(session_id, now)?;
            return Err(self.closed_error(session_id));
        }
        if responses.len() != session.tasks.len() {
            return Err(SchedulerError::ResponseCountMismatch {
                expected: session.tasks.len(),
                found: responses.len(),
            });
        }
        if let Some((position, r)) = responses.iter().enumerate().find(|(k, r)| r.task_index != *k) {
            return Err(SchedulerError::ResponseOutOfOrder {
                position,
                task_index: r.task_index,
            });
        }

        let a_idx = self.annotators[&session.annotator_id] as usize;
        let start_trust = self.profiles[a_idx].trust;
        let mut trust = start_trust;
        let mut events = Vec::new();
        let mut validations = Vec::new();
        let mut penalty_ms = 0;
        for (k, (task, r)) in session.tasks.iter().zip(responses).enumerate() {
            if let TimingVerdict::Penalized { penalty_ms: p } = check_timing(r.response_time_ms, &self.qa) {
                penalty_ms = penalty_ms.max(p);
                events.push(QaEvent::TimingPenalty {
                    task_index: k,
                    response_time_ms: r.response_time_ms,
                    penalty_ms: p,
                });
            }
            if let Task::Validation(v) = task {
                let outcome = if task.image_on(r.chosen) == &v.correct_image {
                    events.push(QaEvent::ValidationPassed { task_index: k });
                    ValidationOutcome::Pass
                } else {
                    events.push(QaEvent::ValidationFailed { task_index: k });
                    ValidationOutcome::Fail
                };
                trust = update_trust(trust, outcome, &self.qa);
                validations.push(ValidationRecord {
                    task_index: k,
                    validation_id: v.validation_id.clone(),
                    outcome,
                });
            }
        }
        if trust.status != start_trust.status {
            events.push(QaEvent::TrustChanged {
                from: start_trust.status,
                to: trust.status,
            });
        }
        let failed = trust.validation_failures > start_trust.validation_failures;
        let void = failed && self.qa.void_failed_sessions;

        let mut votes = Vec::new();
        for (task, r) in session.tasks.iter().zip(responses) {
            let Task::Comparison(t) = task else { continue };
            let idx = self.by_id[&t.comparison_id];
            let vote = Vote {
                vote_id: VoteId::from(sequential_id("vote", self.vote_seq + votes.len() as u64 + 1)),
                comparison_id: t.comparison_id.clone(),
                annotator_id: session.annotator_id.clone(),
                winner: task.image_on(r.chosen).clone(),
                response_time_ms: r.response_time_ms,
                session_id: session_id.clone(),
                recorded_at: now,
                timing_flagged: check_timing(r.response_time_ms, &self.qa).is_penalized(),
            };
            VoteLog::check_vote(&vote, &self.comparisons[idx as usize])?;
            votes.push((idx, vote));
        }
        if void && !votes.is_empty() {
            events.push(QaEvent::VotesVoided { count: votes.len() });
        }
        self.log.append(&LogEntry::SessionCompleted {
            session_id: session_id.clone(),
            validations,
            votes: votes.iter().map(|(_, v)| v.clone()).collect(),
            voided: void,
            recorded_at: now,
        })?;

        self.profiles[a_idx].trust = trust;
        self.vote_seq += votes.len() as u64;
        let count = votes.len();
        for (idx, vote) in votes {
            if void {
                self.change_load(idx, 0, -1);
            } else {
                self.change_load(idx, 1, -1);
                self.accepted.push(vote);
            }
        }
        if void {
            self.rejected += count as u64;
        }
        self.open.remove(session_id);
        self.closed.insert(session_id.clone(), SessionState::Completed);
        Ok(SubmissionOutcome {
            accepted_votes: if void { 0 } else { count },
            rejected_votes: if void { count } else { 0 },
            qa_events: events,
            penalty_ms,
            trust,
        })
    }

    fn close(&mut self, session_id: &SessionId, now: Timestamp) -> Result<(), SchedulerError> {
        self.log.append(&LogEntry::SessionExpired {
            session_id: session_id.clone(),
            at: now,
        })?;
        let session = self.open.remove(session_id).expect("caller checked the session is open");
        for c in session.comparison_ids() {
            let idx = self.by_id[c];
            self.change_load(idx, 0, -1);
        }
        self.closed.insert(session_id.clone(), SessionState::Expired);
        Ok(())
    }

    /// Expires an issued session past its deadline and frees its assignments.
    /// The annotator keeps the comparisons as seen.
    pub fn expire_session(&mut self, session_id: &SessionId, now: Timestamp) -> Result<(), SchedulerError> {
        match self.open.get(session_id) {
            Some(s) if now > s.deadline => self.close(session_id, now),
            Some(_) => Err(SchedulerError::NotExpired(session_id.clone())),
            None if self.closed.contains_key(session_id) => Err(SchedulerError::NotExpired(session_id.clone())),
            None => Err(SchedulerError::SessionNotFound(session_id.clone())),
        }
    }

    /// Expires every overdue session, returning how many were expired.
    pub fn expire_overdue(&mut self, now: Timestamp) -> Result<usize, SchedulerError> {
        let mut overdue: Vec<SessionId> = self
            .open
            .values()
            .filter(|s| now > s.deadline)
            .map(|s| s.session_id.clone())
            .collect();
        overdue.sort();
        for id in &overdue {
            self.close(id, now)?;
        }
        Ok(overdue.len())
    }

    pub fn progress(&self) -> Vec<CriterionProgress> {
        self.criteria
            .iter()
            .map(|c| {
                let k = self.counters[c];
                CriterionProgress {
                    criterion: *c,
                    comparisons_complete: k.complete,
                    comparisons_total: k.total,
                    votes_recorded: k.recorded,
                    votes_expected: k.total * self.quota as u64,
                    outstanding_assignments: k.outstanding,
                }
            })
            .collect()
    }

    /// Whether every comparison has reached quota.
    pub fn is_complete(&self) -> bool {
        self.counters.values().all(|k| k.complete == k.total)
    }

    /// Whether any comparison still has room for an assignment.
    pub fn has_capacity(&self) -> bool {
        self.queues.values().any(|q| !q.is_empty())
    }

    /// Whether `annotator` could be given at least one comparison now,
    /// ignoring trust.
    pub fn has_work_for(&self, annotator: &AnnotatorId) -> bool {
        let known = self.annotators.get(annotator).copied();
        self.criteria.iter().any(|c| !self.pick(*c, known, 1).is_empty())
    }

    pub fn quota(&self) -> u32 {
        self.quota
    }

    pub fn criteria(&self) -> &[CriterionKind] {
        &self.criteria
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn comparison(&self, id: &ComparisonId) -> Option<&Comparison> {
        self.by_id.get(id).map(|&i| &self.comparisons[i as usize])
    }

    pub fn profile(&self, id: &AnnotatorId) -> Option<&AnnotatorProfile> {
        self.annotators.get(id).map(|&i| &self.profiles[i as usize])
    }

    pub fn profiles(&self) -> &[AnnotatorProfile] {
        &self.profiles
    }

    pub fn accepted_votes(&self) -> &[Vote] {
        &self.accepted
    }

    pub fn rejected_votes(&self) -> u64 {
        self.rejected
    }

    pub fn session(&self, id: &SessionId) -> Option<&Session> {
        self.open.get(id)
    }

    pub fn session_state(&self, id: &SessionId) -> Option<SessionState> {
        if self.open.contains_key(id) {
            Some(SessionState::Issued)
        } else {
            self.closed.get(id).copied()
        }
    }

    pub fn open_session_count(&self) -> usize {
        self.open.len()
    }

    pub fn validation_pool(&self) -> &[ValidationItem] {
        &self.pool
    }

    pub fn qa_config(&self) -> &QaConfig {
        &self.qa
    }

    pub fn log(&self) -> &Arc<VoteLog> {
        &self.log
    }

    /// The durable projection of the live state, comparable with replay.
    pub fn durable_state(&self) -> DurableState {
        let id_of = |a: u32| self.profiles[a as usize].annotator_id.clone();
        DurableState {
            last_seq: self.log.last_seq(),
            profiles: self
                .profiles
                .iter()
                .map(|p| (p.annotator_id.clone(), p.clone()))
                .collect(),
            votes_recorded: self
                .comparisons
                .iter()
                .filter(|c| c.votes_recorded > 0)
                .map(|c| (c.comparison_id.clone(), c.votes_recorded))
                .collect(),
            seen: self
                .seen
                .iter()
                .map(|&(a, c)| (id_of(a), self.comparisons[c as usize].comparison_id.clone()))
                .collect(),
            open_sessions: self.open.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            closed_sessions: self.closed.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            accepted_votes: self.accepted.clone(),
            rejected_votes: self.rejected,
            max_session_seq: self.session_seq,
            max_vote_seq: self.vote_seq,
        }
    }
}
