//! Benchmarks as a running service sees them: creation, ingestion, launch,
//! the annotator session flow, rankings, progress and demographics, with
//! optional on-disk persistence.
//!
//! With a data directory every benchmark lives in
//! `benchmarks/<id>/benchmark.json` (definition and inputs, rewritten
//! atomically on change) and `benchmarks/<id>/votes.log` (the event log,
//! created at launch). Reopening a directory replays each log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analytics::{demographics_report, AnalyticsError, DemographicsReport, ReferenceDistribution};
use crate::domain::{
    sequence_of, sequential_id, AgeBucket, AnnotatorId, AnnotatorProfile, BenchmarkId, Comparison, ComparisonId,
    CriterionKind, Gender, ImageAsset, ImageId, ModelId, ModelRef, Session, SessionId, SessionState, Task, Timestamp,
    ValidationItem,
};
use crate::qa::{vote_eligibility, IdentityTranslator, QaConfig, Translator};
use crate::ranking::{
    bootstrap_ci, rank, tally_duels, BootstrapConfig, Duel, FitConfig, RankingError, RankingResult, WinMatrix,
};
use crate::scheduler::{
    benchmark_of, generate_comparisons, BenchmarkPlan, CriterionProgress, Response, Scheduler, SchedulerConfig,
    SchedulerError, SubmissionOutcome, DEFAULT_IMAGES_PER_MODEL, DEFAULT_QUOTA, SESSION_TASK_LIMIT,
};
use crate::store::{
    parse_manifest, parse_prompts, parse_validation_pool, replay, DurableState, ManifestReport, ReplayMode,
    ReplayOutcome, StoreError, VoteLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    /// Where benchmarks persist; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub qa: QaConfig,
    pub fit: FitConfig,
    pub scheduler: SchedulerConfig,
    pub bootstrap: BootstrapConfig,
    /// fsync the event log after every record.
    pub sync_writes: bool,
    /// Without a data directory, keep the encoded log in memory. Large
    /// simulations turn this off.
    pub retain_log: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            data_dir: None,
            qa: QaConfig::default(),
            fit: FitConfig::default(),
            scheduler: SchedulerConfig::default(),
            bootstrap: BootstrapConfig::default(),
            sync_writes: true,
            retain_log: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkStatus {
    Draft,
    Running,
}

fn default_k() -> u32 {
    DEFAULT_IMAGES_PER_MODEL
}

fn default_quota() -> u32 {
    DEFAULT_QUOTA
}

fn default_criteria() -> Vec<CriterionKind> {
    CriterionKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateBenchmark {
    pub name: String,
    pub models: Vec<ModelRef>,
    #[serde(default = "default_k")]
    pub images_per_model: u32,
    #[serde(default = "default_quota")]
    pub votes_per_comparison: u32,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<CriterionKind>,
}

impl CreateBenchmark {
    /// Published defaults: four images per model, 26 votes, every criterion.
    pub fn new(name: impl Into<String>, models: Vec<ModelRef>) -> Self {
        CreateBenchmark {
            name: name.into(),
            models,
            images_per_model: default_k(),
            votes_per_comparison: default_quota(),
            criteria: default_criteria(),
        }
    }
}

/// What an annotator's client sends when asking for work. Omitted
/// demographics keep the values already on file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub annotator_id: AnnotatorId,
    #[serde(default)]
    pub country_code: Option<String>,
    #[serde(default)]
    pub locale: Option<String>,
    #[serde(default)]
    pub age_bucket: Option<AgeBucket>,
    #[serde(default)]
    pub gender: Option<Gender>,
    #[serde(default)]
    pub criterion: Option<CriterionKind>,
}

impl SessionRequest {
    pub fn new(annotator_id: impl Into<AnnotatorId>) -> Self {
        SessionRequest {
            annotator_id: annotator_id.into(),
            ..SessionRequest::default()
        }
    }

    pub fn from_profile(profile: &AnnotatorProfile, criterion: Option<CriterionKind>) -> Self {
        SessionRequest {
            annotator_id: profile.annotator_id.clone(),
            country_code: Some(profile.country_code.clone()),
            locale: Some(profile.locale.clone()),
            age_bucket: Some(profile.age_bucket),
            gender: Some(profile.gender),
            criterion,
        }
    }
}

/// A task as the annotator's client sees it. Validation tasks look exactly
/// like comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub task_index: usize,
    pub left_image: String,
    pub right_image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    pub is_validation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub session_id: SessionId,
    pub benchmark_id: BenchmarkId,
    pub criterion: CriterionKind,
    pub question: String,
    pub min_time_ms: u64,
    pub deadline: Timestamp,
    pub tasks: Vec<TaskPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub benchmark_id: BenchmarkId,
    pub name: String,
    pub status: BenchmarkStatus,
    pub models: Vec<ModelRef>,
    pub images_per_model: u32,
    pub votes_per_comparison: u32,
    pub criteria: Vec<CriterionKind>,
    pub prompt_count: usize,
    pub asset_count: usize,
    pub validation_pool_size: usize,
    pub comparisons: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub added: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchReport {
    pub benchmark_id: BenchmarkId,
    pub comparisons_created: usize,
    pub per_criterion: BTreeMap<CriterionKind, usize>,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub benchmark_id: BenchmarkId,
    pub status: BenchmarkStatus,
    pub criteria: Vec<CriterionProgress>,
    pub open_sessions: usize,
}

impl ProgressReport {
    pub fn is_complete(&self) -> bool {
        self.status == BenchmarkStatus::Running
            && self.criteria.iter().all(|c| c.comparisons_complete == c.comparisons_total)
    }
}

/// Broad error classes, for mapping onto transport status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    BadRequest,
    Forbidden,
    NotFound,
    Conflict,
    Internal,
}

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("unknown benchmark {0}")]
    UnknownBenchmark(BenchmarkId),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("a benchmark named {0:?} already exists")]
    DuplicateName(String),
    #[error("benchmark is {found:?}; this needs {expected:?}")]
    WrongStatus {
        expected: BenchmarkStatus,
        found: BenchmarkStatus,
    },
    #[error("no prompts registered")]
    NoPrompts,
    #[error(transparent)]
    Ingest(#[from] StoreError),
    #[error(transparent)]
    Schedule(#[from] SchedulerError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl PlatformError {
    /// Machine-readable name of the underlying error.
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::UnknownBenchmark(_) => "UnknownBenchmark",
            PlatformError::Invalid(_) => "InvalidRequest",
            PlatformError::DuplicateName(_) => "DuplicateName",
            PlatformError::WrongStatus { .. } => "WrongStatus",
            PlatformError::NoPrompts => "NoPrompts",
            PlatformError::Ingest(e) => match e {
                StoreError::Io(_) => "StorageFailure",
                StoreError::Parse { .. } => "ParseError",
                StoreError::EmptyPrompt { .. } => "EmptyPrompt",
                StoreError::DuplicatePrompt { .. } => "DuplicatePrompt",
                StoreError::UnknownModel { .. } => "UnknownModel",
                StoreError::UnknownPrompt { .. } => "UnknownPrompt",
                StoreError::InvalidReplicate { .. } => "InvalidReplicate",
                StoreError::DuplicateAsset { .. } => "DuplicateAsset",
                StoreError::ExcessReplicates { .. } => "ExcessReplicates",
                StoreError::UnknownReference(_) => "UnknownReference",
                StoreError::ChecksumMismatch { .. } => "ChecksumMismatch",
                StoreError::Serialization(_) => "StorageFailure",
            },
            PlatformError::Schedule(e) => match e {
                SchedulerError::InvalidPlan(_) => "InvalidPlan",
                SchedulerError::IncompleteAssets(_) => "IncompleteAssets",
                SchedulerError::Domain(_) => "InvalidRequest",
                SchedulerError::AnnotatorDisqualified(_) => "AnnotatorDisqualified",
                SchedulerError::NoWorkAvailable => "NoWorkAvailable",
                SchedulerError::CriterionNotInPlan(_) => "CriterionNotInPlan",
                SchedulerError::ValidationPoolEmpty => "ValidationPoolEmpty",
                SchedulerError::SessionNotFound(_) => "SessionNotFound",
                SchedulerError::SessionNotIssued { .. } => "SessionNotIssued",
                SchedulerError::ResponseCountMismatch { .. } => "ResponseCountMismatch",
                SchedulerError::ResponseOutOfOrder { .. } => "ResponseOutOfOrder",
                SchedulerError::NotExpired(_) => "NotExpired",
                SchedulerError::UnknownComparison(_) => "UnknownComparison",
                SchedulerError::Storage(_) => "StorageFailure",
            },
            PlatformError::Ranking(e) => match e {
                RankingError::DegenerateWinGraph { .. } => "DegenerateWinGraph",
                RankingError::DegenerateRow(_) => "DegenerateRow",
                RankingError::NoConvergence { .. } => "NoConvergence",
                RankingError::AllResamplesFailed(_) => "AllResamplesFailed",
                _ => "RankingFailure",
            },
            PlatformError::Analytics(AnalyticsError::UnknownCountry(_)) => "UnknownCountry",
            PlatformError::Analytics(_) => "InvalidReference",
            PlatformError::Io(_) | PlatformError::Serialization(_) => "StorageFailure",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            PlatformError::UnknownBenchmark(_) => NotFound,
            PlatformError::Invalid(_) => BadRequest,
            PlatformError::DuplicateName(_) | PlatformError::WrongStatus { .. } | PlatformError::NoPrompts => Conflict,
            PlatformError::Ingest(StoreError::Io(_) | StoreError::Serialization(_)) => Internal,
            PlatformError::Ingest(_) => BadRequest,
            PlatformError::Schedule(e) => match e {
                SchedulerError::InvalidPlan(_)
                | SchedulerError::Domain(_)
                | SchedulerError::CriterionNotInPlan(_)
                | SchedulerError::ResponseCountMismatch { .. }
                | SchedulerError::ResponseOutOfOrder { .. } => BadRequest,
                SchedulerError::AnnotatorDisqualified(_) => Forbidden,
                SchedulerError::NoWorkAvailable | SchedulerError::SessionNotFound(_) => NotFound,
                SchedulerError::IncompleteAssets(_)
                | SchedulerError::ValidationPoolEmpty
                | SchedulerError::SessionNotIssued { .. }
                | SchedulerError::NotExpired(_) => Conflict,
                SchedulerError::UnknownComparison(_) | SchedulerError::Storage(_) => Internal,
            },
            PlatformError::Ranking(e) => match e {
                RankingError::DegenerateWinGraph { .. }
                | RankingError::DegenerateRow(_)
                | RankingError::NoConvergence { .. }
                | RankingError::AllResamplesFailed(_) => Conflict,
                _ => Internal,
            },
            PlatformError::Analytics(_) => BadRequest,
            PlatformError::Io(_) | PlatformError::Serialization(_) => Internal,
        }
    }

    /// Structured context for the error body, when there is any.
    pub fn details(&self) -> Option<serde_json::Value> {
        match self {
            PlatformError::Schedule(SchedulerError::IncompleteAssets(cells)) => Some(json!({ "missing_cells": cells })),
            PlatformError::Schedule(SchedulerError::SessionNotIssued { state, .. }) => Some(json!({ "state": state })),
            PlatformError::Schedule(SchedulerError::ResponseCountMismatch { expected, found }) => {
                Some(json!({ "expected": expected, "found": found }))
            }
            PlatformError::Ranking(RankingError::DegenerateWinGraph { votes }) => Some(json!({
                "votes": votes,
                "explanation": "the win graph is not strongly connected, so some scores are unbounded; \
                                collect more votes or enable regularization",
            })),
            PlatformError::Ranking(RankingError::NoConvergence { iterations, residual, .. }) => {
                Some(json!({ "iterations": iterations, "residual": residual }))
            }
            PlatformError::Ingest(
                StoreError::Parse { line, .. }
                | StoreError::EmptyPrompt { line }
                | StoreError::DuplicatePrompt { line, .. }
                | StoreError::UnknownModel { line, .. }
                | StoreError::UnknownPrompt { line, .. }
                | StoreError::InvalidReplicate { line, .. }
                | StoreError::DuplicateAsset { line }
                | StoreError::ExcessReplicates { line, .. },
            ) => Some(json!({ "line": line })),
            _ => None,
        }
    }
}

/// Persisted definition and inputs of one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BenchmarkRecord {
    name: String,
    status: BenchmarkStatus,
    plan: BenchmarkPlan,
    assets: Vec<ImageAsset>,
    validation_pool: Vec<ValidationItem>,
}

struct Running {
    scheduler: Scheduler,
    comparisons: HashMap<ComparisonId, Comparison>,
    image_models: HashMap<ImageId, ModelId>,
    image_refs: HashMap<ImageId, String>,
    cache: HashMap<(CriterionKind, bool), (u64, RankingResult)>,
}

struct BenchmarkState {
    record: BenchmarkRecord,
    running: Option<Running>,
    dir: Option<PathBuf>,
}

impl BenchmarkState {
    fn require_draft(&self) -> Result<(), PlatformError> {
        match self.record.status {
            BenchmarkStatus::Draft => Ok(()),
            found => Err(PlatformError::WrongStatus {
                expected: BenchmarkStatus::Draft,
                found,
            }),
        }
    }

    fn running(&mut self) -> Result<&mut Running, PlatformError> {
        let found = self.record.status;
        self.running.as_mut().ok_or(PlatformError::WrongStatus {
            expected: BenchmarkStatus::Running,
            found,
        })
    }

    fn save(&self) -> Result<(), PlatformError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let tmp = dir.join("benchmark.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.record)?)?;
        fs::rename(&tmp, dir.join("benchmark.json"))?;
        Ok(())
    }

    fn summary(&self) -> BenchmarkSummary {
        let plan = &self.record.plan;
        BenchmarkSummary {
            benchmark_id: plan.benchmark_id.clone(),
            name: self.record.name.clone(),
            status: self.record.status,
            models: plan.models.clone(),
            images_per_model: plan.images_per_model,
            votes_per_comparison: plan.votes_per_comparison,
            criteria: plan.criteria.clone(),
            prompt_count: plan.prompts.len(),
            asset_count: self.record.assets.len(),
            validation_pool_size: self.record.validation_pool.len(),
            comparisons: self.running.as_ref().map(|r| r.comparisons.len()),
        }
    }
}

pub struct Platform {
    config: PlatformConfig,
    reference: ReferenceDistribution,
    translator: Arc<dyn Translator>,
    benchmarks: RwLock<BTreeMap<BenchmarkId, Arc<Mutex<BenchmarkState>>>>,
    next_id: AtomicU64,
    create_lock: Mutex<()>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("data_dir", &self.config.data_dir)
            .field("benchmarks", &self.benchmarks.read().len())
            .finish()
    }
}

impl Platform {
    /// Opens a platform, loading and replaying any benchmarks already in the
    /// data directory.
    pub fn open(config: PlatformConfig) -> Result<Self, PlatformError> {
        config.qa.validate().map_err(|e| PlatformError::Invalid(e.to_string()))?;
        config.fit.validate()?;
        let platform = Platform {
            reference: ReferenceDistribution::world_population(),
            translator: Arc::new(IdentityTranslator),
            benchmarks: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            create_lock: Mutex::new(()),
            config,
        };
        if let Some(root) = platform.config.data_dir.clone() {
            let dir = root.join("benchmarks");
            fs::create_dir_all(&dir)?;
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("benchmark.json").is_file())
                .collect();
            entries.sort();
            for path in entries {
                platform.load(&path)?;
            }
        }
        Ok(platform)
    }

    pub fn in_memory(config: PlatformConfig) -> Result<Self, PlatformError> {
        Platform::open(PlatformConfig {
            data_dir: None,
            ..config
        })
    }

    pub fn with_translator(mut self, translator: Arc<dyn Translator>) -> Self {
        self.translator = translator;
        self
    }

    pub fn with_reference(mut self, reference: ReferenceDistribution) -> Self {
        self.reference = reference;
        self
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    fn load(&self, dir: &Path) -> Result<(), PlatformError> {
        let record: BenchmarkRecord = serde_json::from_slice(&fs::read(dir.join("benchmark.json"))?)?;
        let id = record.plan.benchmark_id.clone();
        if let Some(n) = sequence_of(id.as_str()) {
            self.next_id.fetch_max(n + 1, Ordering::SeqCst);
        }
        let mut state = BenchmarkState {
            running: None,
            dir: Some(dir.to_path_buf()),
            record,
        };
        if state.record.status == BenchmarkStatus::Running {
            let (running, outcome) = self.start(&state)?;
            if let Some(c) = &outcome.corruption {
                tracing::warn!(benchmark = %id, offset = c.offset, "recovered event log with damaged tail");
            }
            state.running = Some(running);
        }
        tracing::info!(benchmark = %id, status = ?state.record.status, "loaded benchmark");
        self.benchmarks.write().insert(id, Arc::new(Mutex::new(state)));
        Ok(())
    }

    /// Builds the runtime for a launched benchmark, replaying its log if any.
    fn start(&self, state: &BenchmarkState) -> Result<(Running, ReplayOutcome), PlatformError> {
        let record = &state.record;
        let comparisons = generate_comparisons(&record.plan, &record.assets)?;
        let (log, outcome) = match &state.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let (log, outcome) = VoteLog::open(dir.join("votes.log"), &self.config.qa)?;
                log.set_sync(self.config.sync_writes);
                (log, outcome)
            }
            None => (
                if self.config.retain_log {
                    VoteLog::in_memory()
                } else {
                    VoteLog::discard()
                },
                ReplayOutcome {
                    state: DurableState::default(),
                    records: 0,
                    valid_bytes: 0,
                    corruption: None,
                },
            ),
        };
        self.start_with_log(record, comparisons, Arc::new(log), outcome)
    }

    fn start_with_log(
        &self,
        record: &BenchmarkRecord,
        comparisons: Vec<Comparison>,
        log: Arc<VoteLog>,
        outcome: ReplayOutcome,
    ) -> Result<(Running, ReplayOutcome), PlatformError> {
        let by_id: HashMap<ComparisonId, Comparison> =
            comparisons.iter().map(|c| (c.comparison_id.clone(), c.clone())).collect();
        let scheduler_config = SchedulerConfig {
            seed: self.config.scheduler.seed ^ sequence_of(record.plan.benchmark_id.as_str()).unwrap_or(0),
            ..self.config.scheduler
        };
        let scheduler = Scheduler::restore(
            &record.plan,
            comparisons,
            record.validation_pool.clone(),
            scheduler_config,
            self.config.qa,
            log,
            outcome.state.clone(),
        )?;
        let mut image_refs: HashMap<ImageId, String> =
            record.assets.iter().map(|a| (a.image_id.clone(), a.content_ref.clone())).collect();
        for item in &record.validation_pool {
            let (l, r) = item.image_ids();
            image_refs.insert(l, item.left_ref.clone());
            image_refs.insert(r, item.right_ref.clone());
        }
        let running = Running {
            scheduler,
            comparisons: by_id,
            image_models: record.assets.iter().map(|a| (a.image_id.clone(), a.model_id.clone())).collect(),
            image_refs,
            cache: HashMap::new(),
        };
        Ok((running, outcome))
    }

    fn benchmark(&self, id: &BenchmarkId) -> Result<Arc<Mutex<BenchmarkState>>, PlatformError> {
        self.benchmarks
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| PlatformError::UnknownBenchmark(id.clone()))
    }

    pub fn create_benchmark(&self, request: CreateBenchmark) -> Result<BenchmarkId, PlatformError> {
        if request.name.trim().is_empty() {
            return Err(PlatformError::Invalid("name must not be empty".into()));
        }
        let _guard = self.create_lock.lock();
        if self.benchmarks.read().values().any(|b| b.lock().record.name == request.name) {
            return Err(PlatformError::DuplicateName(request.name));
        }
        let id = BenchmarkId::from(sequential_id("bm", self.next_id.load(Ordering::SeqCst)));
        let plan = BenchmarkPlan {
            benchmark_id: id.clone(),
            models: request.models,
            prompts: Vec::new(),
            images_per_model: request.images_per_model,
            criteria: request.criteria,
            votes_per_comparison: request.votes_per_comparison,
            session_task_limit: SESSION_TASK_LIMIT,
        };
        plan.validate_definition().map_err(|e| PlatformError::Invalid(e.to_string()))?;
        let state = BenchmarkState {
            record: BenchmarkRecord {
                name: request.name,
                status: BenchmarkStatus::Draft,
                plan,
                assets: Vec::new(),
                validation_pool: Vec::new(),
            },
            running: None,
            dir: self.config.data_dir.as_ref().map(|d| d.join("benchmarks").join(id.as_str())),
        };
        state.save()?;
        self.next_id.fetch_add(1, Ordering::SeqCst);
        self.benchmarks.write().insert(id.clone(), Arc::new(Mutex::new(state)));
        tracing::info!(benchmark = %id, "created benchmark");
        Ok(id)
    }

    pub fn list_benchmarks(&self) -> Vec<BenchmarkSummary> {
        let all: Vec<_> = self.benchmarks.read().values().cloned().collect();
        all.iter().map(|b| b.lock().summary()).collect()
    }

    pub fn benchmark_summary(&self, id: &BenchmarkId) -> Result<BenchmarkSummary, PlatformError> {
        Ok(self.benchmark(id)?.lock().summary())
    }

    /// Looks a benchmark up by id or, failing that, by name.
    pub fn resolve(&self, id_or_name: &str) -> Result<BenchmarkId, PlatformError> {
        let all = self.benchmarks.read();
        if all.contains_key(&BenchmarkId::from(id_or_name)) {
            return Ok(id_or_name.into());
        }
        all.iter()
            .find(|(_, b)| b.lock().record.name == id_or_name)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| PlatformError::UnknownBenchmark(id_or_name.into()))
    }

    pub fn add_prompts(&self, id: &BenchmarkId, body: &[u8]) -> Result<IngestReport, PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        state.require_draft()?;
        let prompts = parse_prompts(body, &state.record.plan.prompts)?;
        let added = prompts.len();
        state.record.plan.prompts.extend(prompts);
        state.save()?;
        Ok(IngestReport {
            added,
            total: state.record.plan.prompts.len(),
        })
    }

    pub fn add_manifest(&self, id: &BenchmarkId, body: &[u8]) -> Result<ManifestReport, PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        state.require_draft()?;
        let record = &state.record;
        let report = parse_manifest(
            body,
            &record.plan.models,
            &record.plan.prompts,
            record.plan.images_per_model,
            &record.assets,
        )?;
        state.record.assets.extend(report.assets.iter().cloned());
        state.save()?;
        Ok(report)
    }

    pub fn add_validation_pool(&self, id: &BenchmarkId, body: &[u8]) -> Result<IngestReport, PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        state.require_draft()?;
        let items = parse_validation_pool(body, &state.record.validation_pool)?;
        let added = items.len();
        state.record.validation_pool.extend(items);
        state.save()?;
        Ok(IngestReport {
            added,
            total: state.record.validation_pool.len(),
        })
    }

    /// Generates the schedule and opens the benchmark for annotation.
    /// Launching a running benchmark reports the existing schedule.
    pub fn launch(&self, id: &BenchmarkId) -> Result<LaunchReport, PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        if state.running.is_none() {
            if state.record.plan.prompts.is_empty() {
                return Err(PlatformError::NoPrompts);
            }
            let (running, _) = self.start(&state)?;
            state.running = Some(running);
            state.record.status = BenchmarkStatus::Running;
            if let Err(e) = state.save() {
                state.running = None;
                state.record.status = BenchmarkStatus::Draft;
                return Err(e);
            }
            tracing::info!(benchmark = %id, "launched benchmark");
        }
        let images = state.record.assets.len();
        let running = state.running()?;
        let mut per_criterion = BTreeMap::new();
        for c in running.scheduler.comparisons() {
            *per_criterion.entry(c.criterion).or_default() += 1;
        }
        Ok(LaunchReport {
            benchmark_id: id.clone(),
            comparisons_created: running.comparisons.len(),
            per_criterion,
            images,
        })
    }

    /// Assembles a session for an annotator, registering or updating their
    /// profile. Overdue sessions are expired first when nothing else is free.
    pub fn get_session(
        &self,
        id: &BenchmarkId,
        request: &SessionRequest,
        now: Timestamp,
    ) -> Result<SessionPayload, PlatformError> {
        self.issue_session(id, request, now).map(|(payload, _)| payload)
    }

    /// Like [`Platform::get_session`], but also returns the scheduler's copy
    /// of the session, which identifies comparisons and validation tasks.
    /// Never hand the second value to a client.
    pub fn issue_session(
        &self,
        id: &BenchmarkId,
        request: &SessionRequest,
        now: Timestamp,
    ) -> Result<(SessionPayload, Session), PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        let running = state.running()?;
        let scheduler = &mut running.scheduler;
        let mut profile = scheduler
            .profile(&request.annotator_id)
            .cloned()
            .unwrap_or_else(|| AnnotatorProfile::new(request.annotator_id.clone(), ""));
        if let Some(c) = &request.country_code {
            profile.country_code = c.trim().to_ascii_uppercase();
        }
        if let Some(l) = &request.locale {
            profile.locale = l.clone();
        }
        if let Some(a) = request.age_bucket {
            profile.age_bucket = a;
        }
        if let Some(g) = request.gender {
            profile.gender = g;
        }
        let session = match scheduler.next_session(&profile, request.criterion, now) {
            Err(SchedulerError::NoWorkAvailable) if scheduler.expire_overdue(now)? > 0 => {
                scheduler.next_session(&profile, request.criterion, now)?
            }
            other => other?,
        };
        let question = self.translator.translate(session.criterion.question(), &profile.locale);
        let tasks = session
            .tasks
            .iter()
            .enumerate()
            .map(|(k, t)| TaskPayload {
                task_index: k,
                left_image: running.image_refs[t.left_image()].clone(),
                right_image: running.image_refs[t.right_image()].clone(),
                prompt_text: t.prompt_text().map(|p| self.translator.translate(p, &profile.locale)),
                is_validation: false,
            })
            .collect();
        let payload = SessionPayload {
            session_id: session.session_id.clone(),
            benchmark_id: id.clone(),
            criterion: session.criterion,
            question,
            min_time_ms: self.config.qa.min_time_ms_per_task,
            deadline: session.deadline,
            tasks,
        };
        Ok((payload, session))
    }

    pub fn post_responses(
        &self,
        session_id: &SessionId,
        responses: &[Response],
        now: Timestamp,
    ) -> Result<SubmissionOutcome, PlatformError> {
        let id = benchmark_of(session_id).ok_or_else(|| SchedulerError::SessionNotFound(session_id.clone()))?;
        let b = self
            .benchmark(&id)
            .map_err(|_| SchedulerError::SessionNotFound(session_id.clone()))?;
        let mut state = b.lock();
        let running = state
            .running()
            .map_err(|_| SchedulerError::SessionNotFound(session_id.clone()))?;
        Ok(running.scheduler.record_responses(session_id, responses, now)?)
    }

    pub fn expire_session(&self, session_id: &SessionId, now: Timestamp) -> Result<(), PlatformError> {
        let id = benchmark_of(session_id).ok_or_else(|| SchedulerError::SessionNotFound(session_id.clone()))?;
        let b = self.benchmark(&id)?;
        let mut state = b.lock();
        Ok(state.running()?.scheduler.expire_session(session_id, now)?)
    }

    /// Expires overdue sessions in every running benchmark.
    pub fn expire_overdue(&self, now: Timestamp) -> Result<usize, PlatformError> {
        let all: Vec<_> = self.benchmarks.read().values().cloned().collect();
        let mut n = 0;
        for b in all {
            if let Some(r) = b.lock().running.as_mut() {
                n += r.scheduler.expire_overdue(now)?;
            }
        }
        Ok(n)
    }

    /// Fits one criterion over the currently eligible votes. Results are
    /// cached until the next log record.
    pub fn rankings(
        &self,
        id: &BenchmarkId,
        criterion: CriterionKind,
        with_intervals: bool,
    ) -> Result<RankingResult, PlatformError> {
        let b = self.benchmark(id)?;
        let (models, duels, seq) = {
            let mut state = b.lock();
            let models: Vec<ModelId> = state.record.plan.models.iter().map(|m| m.model_id.clone()).collect();
            let running = state.running()?;
            if !running.scheduler.criteria().contains(&criterion) {
                return Err(SchedulerError::CriterionNotInPlan(criterion).into());
            }
            let seq = running.scheduler.log().last_seq();
            if let Some((at, result)) = running.cache.get(&(criterion, with_intervals)) {
                if *at == seq {
                    return Ok(result.clone());
                }
            }
            let scheduler = &running.scheduler;
            let qa = scheduler.qa_config();
            let duels = tally_duels(
                &models,
                criterion,
                scheduler.accepted_votes(),
                &running.comparisons,
                &running.image_models,
                |a| scheduler.profile(a).is_none_or(|p| vote_eligibility(p, qa)),
            )?;
            (models, duels, seq)
        };

        let result = fit_duels(criterion, models, &duels, &self.config, with_intervals)?;
        if let Some(running) = b.lock().running.as_mut() {
            running.cache.insert((criterion, with_intervals), (seq, result.clone()));
        }
        Ok(result)
    }

    pub fn progress(&self, id: &BenchmarkId) -> Result<ProgressReport, PlatformError> {
        let b = self.benchmark(id)?;
        let state = b.lock();
        let (criteria, open_sessions) = match &state.running {
            Some(r) => (r.scheduler.progress(), r.scheduler.open_session_count()),
            None => {
                let plan = &state.record.plan;
                let total = plan.comparisons_per_criterion();
                let mut criteria_sorted = plan.criteria.clone();
                criteria_sorted.sort();
                let rows = criteria_sorted
                    .into_iter()
                    .map(|criterion| CriterionProgress {
                        criterion,
                        comparisons_complete: 0,
                        comparisons_total: total,
                        votes_recorded: 0,
                        votes_expected: total * plan.votes_per_comparison as u64,
                        outstanding_assignments: 0,
                    })
                    .collect();
                (rows, 0)
            }
        };
        Ok(ProgressReport {
            benchmark_id: id.clone(),
            status: state.record.status,
            criteria,
            open_sessions,
        })
    }

    pub fn demographics(&self, id: &BenchmarkId) -> Result<DemographicsReport, PlatformError> {
        let b = self.benchmark(id)?;
        let state = b.lock();
        let profiles: &[AnnotatorProfile] = match &state.running {
            Some(r) => r.scheduler.profiles(),
            None => &[],
        };
        Ok(demographics_report(profiles, &self.reference))
    }

    /// Runs `f` against the live scheduler of a running benchmark.
    pub fn with_scheduler<R>(&self, id: &BenchmarkId, f: impl FnOnce(&Scheduler) -> R) -> Result<R, PlatformError> {
        let b = self.benchmark(id)?;
        let mut state = b.lock();
        Ok(f(&state.running()?.scheduler))
    }

    pub fn durable_state(&self, id: &BenchmarkId) -> Result<DurableState, PlatformError> {
        self.with_scheduler(id, |s| s.durable_state())
    }

    /// The image assets and the validation pool of a benchmark.
    pub fn inputs(&self, id: &BenchmarkId) -> Result<(Vec<ImageAsset>, Vec<ValidationItem>), PlatformError> {
        let b = self.benchmark(id)?;
        let state = b.lock();
        Ok((state.record.assets.clone(), state.record.validation_pool.clone()))
    }

    pub fn plan(&self, id: &BenchmarkId) -> Result<BenchmarkPlan, PlatformError> {
        Ok(self.benchmark(id)?.lock().record.plan.clone())
    }

    /// Whether a session is open, closed, or unknown.
    pub fn session_state(&self, session_id: &SessionId) -> Option<SessionState> {
        let id = benchmark_of(session_id)?;
        let b = self.benchmark(&id).ok()?;
        let state = b.lock();
        state.running.as_ref()?.scheduler.session_state(session_id)
    }

    /// A copy of an open session.
    pub fn session(&self, session_id: &SessionId) -> Option<Session> {
        let id = benchmark_of(session_id)?;
        let b = self.benchmark(&id).ok()?;
        let state = b.lock();
        state.running.as_ref()?.scheduler.session(session_id).cloned()
    }

    /// Maps every image of a benchmark to its model.
    pub fn image_models(&self, id: &BenchmarkId) -> Result<HashMap<ImageId, ModelId>, PlatformError> {
        let b = self.benchmark(id)?;
        let state = b.lock();
        Ok(state.record.assets.iter().map(|a| (a.image_id.clone(), a.model_id.clone())).collect())
    }

    /// Whether the task at `index` of an open session is a validation task.
    /// For simulated annotators, which play annotators that can tell.
    pub fn is_validation_task(&self, session_id: &SessionId, index: usize) -> Option<bool> {
        let id = benchmark_of(session_id)?;
        let b = self.benchmark(&id).ok()?;
        let state = b.lock();
        let session = state.running.as_ref()?.scheduler.session(session_id)?;
        session.tasks.get(index).map(Task::is_validation)
    }
}

fn fit_duels(
    criterion: CriterionKind,
    models: Vec<ModelId>,
    duels: &[Duel],
    config: &PlatformConfig,
    with_intervals: bool,
) -> Result<RankingResult, PlatformError> {
    let matrix = WinMatrix::from_duels(models.clone(), duels)?;
    let mut result = rank(criterion, &matrix, &config.fit)?;
    if with_intervals {
        let ci = bootstrap_ci(&models, duels, &config.fit, &config.bootstrap)?;
        result.confidence_intervals = Some(ci.intervals);
    }
    Ok(result)
}

/// What [`rank_offline`] read and fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRanking {
    pub benchmark_id: BenchmarkId,
    pub models: Vec<ModelRef>,
    pub log_records: u64,
    /// Byte offset where a damaged tail was cut off, if any.
    pub truncated_at: Option<u64>,
    pub results: Vec<Result<RankingResult, String>>,
}

/// Fits rankings straight from a benchmark directory (its `benchmark.json`)
/// and an event log, without starting a platform. `log` defaults to the
/// directory's `votes.log`; a damaged tail is ignored.
pub fn rank_offline(
    benchmark_dir: &Path,
    log: Option<&Path>,
    config: &PlatformConfig,
    criteria: Option<&[CriterionKind]>,
    with_intervals: bool,
) -> Result<OfflineRanking, PlatformError> {
    let record: BenchmarkRecord = serde_json::from_slice(&fs::read(benchmark_dir.join("benchmark.json"))?)?;
    let comparisons: HashMap<ComparisonId, Comparison> = generate_comparisons(&record.plan, &record.assets)?
        .into_iter()
        .map(|c| (c.comparison_id.clone(), c))
        .collect();
    let image_models: HashMap<ImageId, ModelId> =
        record.assets.iter().map(|a| (a.image_id.clone(), a.model_id.clone())).collect();
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| benchmark_dir.join("votes.log"));
    let outcome = replay(&log_path, &config.qa, ReplayMode::Recover)?;
    let state = &outcome.state;
    let models: Vec<ModelId> = record.plan.models.iter().map(|m| m.model_id.clone()).collect();
    let wanted = criteria.unwrap_or(&record.plan.criteria);
    let mut results = Vec::new();
    for criterion in &record.plan.criteria {
        if !wanted.contains(criterion) {
            continue;
        }
        let duels = tally_duels(
            &models,
            *criterion,
            &state.accepted_votes,
            &comparisons,
            &image_models,
            |a| state.profiles.get(a).is_none_or(|p| vote_eligibility(p, &config.qa)),
        )?;
        results.push(
            fit_duels(*criterion, models.clone(), &duels, config, with_intervals).map_err(|e| e.to_string()),
        );
    }
    Ok(OfflineRanking {
        benchmark_id: record.plan.benchmark_id.clone(),
        models: record.plan.models.clone(),
        log_records: outcome.records,
        truncated_at: outcome.corruption.map(|c| c.offset),
        results,
    })
}

/// Distinct prompt-level categories, for summaries.
pub fn categories_of(plan: &BenchmarkPlan) -> HashSet<&str> {
    plan.prompts
        .iter()
        .flat_map(|p| p.categories.iter().map(String::as_str))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Side, TrustStatus};

    fn create(p: &Platform, name: &str, criteria: Vec<CriterionKind>) -> BenchmarkId {
        p.create_benchmark(CreateBenchmark {
            name: name.into(),
            models: vec![ModelRef::new("alpha", "Alpha"), ModelRef::new("beta", "Beta")],
            images_per_model: 1,
            votes_per_comparison: 2,
            criteria,
        })
        .unwrap()
    }

    fn prompts() -> &'static [u8] {
        b"{\"text\":\"a red cube\"}\n{\"text\":\"two cats\"}\n"
    }

    fn manifest(p: &Platform, id: &BenchmarkId) -> Vec<u8> {
        let plan = p.plan(id).unwrap();
        let mut out = String::new();
        for prompt in &plan.prompts {
            for m in &plan.models {
                out += &format!(
                    "{{\"model_id\":\"{}\",\"prompt_id\":\"{}\",\"replicate_index\":1,\"content_ref\":\"blob/{}-{}\"}}\n",
                    m.model_id,
                    prompt.prompt_id,
                    m.model_id.as_str().len(),
                    prompt.prompt_id
                );
            }
        }
        out.into_bytes()
    }

    const POOL: &[u8] = b"{\"left_ref\":\"check/ok.png\",\"right_ref\":\"check/broken.png\",\"correct_side\":\"left\",\"prompt_text\":\"a dog\"}\n";

    fn launched(p: &Platform, criteria: Vec<CriterionKind>) -> BenchmarkId {
        let id = create(p, "b", criteria);
        p.add_prompts(&id, prompts()).unwrap();
        p.add_manifest(&id, &manifest(p, &id)).unwrap();
        p.add_validation_pool(&id, POOL).unwrap();
        p.launch(&id).unwrap();
        id
    }

    fn platform() -> Platform {
        Platform::in_memory(PlatformConfig {
            scheduler: SchedulerConfig {
                validation_rate: 0.0,
                ..SchedulerConfig::default()
            },
            ..PlatformConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn create_validation() {
        let p = platform();
        let ok = create(&p, "one", CriterionKind::ALL.to_vec());
        assert_eq!(ok.as_str(), "bm-000000000001");
        let dup = p.create_benchmark(CreateBenchmark {
            name: "one".into(),
            models: vec![ModelRef::new("a", "A"), ModelRef::new("b", "B")],
            images_per_model: 4,
            votes_per_comparison: 26,
            criteria: CriterionKind::ALL.to_vec(),
        });
        assert!(matches!(&dup, Err(e) if e.class() == ErrorClass::Conflict && e.code() == "DuplicateName"));
        let single = p.create_benchmark(CreateBenchmark {
            name: "two".into(),
            models: vec![ModelRef::new("a", "A")],
            images_per_model: 4,
            votes_per_comparison: 26,
            criteria: CriterionKind::ALL.to_vec(),
        });
        assert!(matches!(&single, Err(e) if e.class() == ErrorClass::BadRequest));
        let zero_quota = p.create_benchmark(CreateBenchmark {
            name: "three".into(),
            models: vec![ModelRef::new("a", "A"), ModelRef::new("b", "B")],
            images_per_model: 4,
            votes_per_comparison: 0,
            criteria: CriterionKind::ALL.to_vec(),
        });
        assert!(matches!(&zero_quota, Err(e) if e.class() == ErrorClass::BadRequest));
    }

    #[test]
    fn launch_flow() {
        let p = platform();
        let id = create(&p, "b", vec![CriterionKind::Preference]);
        assert!(matches!(p.launch(&id), Err(PlatformError::NoPrompts)));
        p.add_prompts(&id, prompts()).unwrap();
        let err = p.launch(&id).unwrap_err();
        assert_eq!(err.code(), "IncompleteAssets");
        assert_eq!(err.class(), ErrorClass::Conflict);
        assert_eq!(err.details().unwrap()["missing_cells"].as_array().unwrap().len(), 4);
        let report = p.add_manifest(&id, &manifest(&p, &id)).unwrap();
        assert!(report.missing_cells.is_empty());
        let first = p.launch(&id).unwrap();
        assert_eq!(first.comparisons_created, 2);
        assert_eq!(p.launch(&id).unwrap(), first);
        assert!(matches!(
            p.add_prompts(&id, b"{\"text\":\"late\"}\n"),
            Err(PlatformError::WrongStatus { .. })
        ));
    }

    #[test]
    fn payload_is_blind() {
        let p = platform();
        let id = launched(&p, vec![CriterionKind::Alignment]);
        let mut request = SessionRequest::new("ann-1");
        request.country_code = Some("ch".into());
        let s = p.get_session(&id, &request, 0).unwrap();
        assert_eq!(s.tasks.len(), 2);
        assert!(s.tasks.iter().all(|t| !t.is_validation));
        assert!(s.tasks.iter().all(|t| t.prompt_text.is_some()));
        let text = serde_json::to_string(&s).unwrap();
        assert!(!text.contains("val-"));
        assert!(!text.contains("alpha") && !text.contains("Alpha"));
        assert_eq!(p.is_validation_task(&s.session_id, 0), Some(true));
        assert_eq!(p.with_scheduler(&id, |sch| sch.profiles()[0].country_code.clone()).unwrap(), "CH");
    }

    #[test]
    fn session_round_trip_and_rankings() {
        let p = platform();
        let id = launched(&p, vec![CriterionKind::Preference]);
        let degenerate = p.rankings(&id, CriterionKind::Preference, false).unwrap_err();
        assert_eq!(degenerate.code(), "DegenerateWinGraph");
        assert_eq!(degenerate.class(), ErrorClass::Conflict);

        let mut n = 0;
        loop {
            n += 1;
            let s = match p.get_session(&id, &SessionRequest::new(format!("ann-{n}")), n) {
                Ok(s) => s,
                Err(e) => {
                    assert_eq!(e.code(), "NoWorkAvailable");
                    break;
                }
            };
            assert_eq!(s.question, "Which image do you prefer?");
            // odd annotators back alpha, even ones beta
            let favourite = if n % 2 == 1 { "blob/5-" } else { "blob/4-" };
            let responses: Vec<Response> = s
                .tasks
                .iter()
                .enumerate()
                .map(|(k, t)| Response {
                    task_index: k,
                    chosen: if t.left_image.starts_with(favourite) { Side::Left } else { Side::Right },
                    response_time_ms: 2_500,
                })
                .collect();
            let out = p.post_responses(&s.session_id, &responses, n + 1).unwrap();
            assert_eq!(out.accepted_votes, s.tasks.len());
            let again = p.post_responses(&s.session_id, &responses, n + 2).unwrap_err();
            assert_eq!(again.code(), "SessionNotIssued");
        }
        assert!(p.progress(&id).unwrap().is_complete());
        let a = p.rankings(&id, CriterionKind::Preference, false).unwrap();
        assert_eq!(a.vote_count, 4);
        assert!((a.scores.sum() - 100.0).abs() < 1e-9);
        // cached copy is identical
        assert_eq!(p.rankings(&id, CriterionKind::Preference, false).unwrap(), a);
        let with_ci = p.rankings(&id, CriterionKind::Preference, true).unwrap();
        assert_eq!(with_ci.confidence_intervals.as_ref().unwrap().len(), 2);
        assert_eq!(
            p.rankings(&id, CriterionKind::Coherence, false).unwrap_err().code(),
            "CriterionNotInPlan"
        );
    }

    #[test]
    fn disqualified_annotator_is_forbidden_and_excluded() {
        let p = platform();
        let id = launched(&p, vec![CriterionKind::Alignment]);
        for _ in 0..2 {
            let s = p.get_session(&id, &SessionRequest::new("bad"), 0).unwrap();
            // pick the broken image of the validation pair
            let bad_side = if s.tasks[0].left_image == "check/broken.png" { Side::Left } else { Side::Right };
            let responses = vec![
                Response { task_index: 0, chosen: bad_side, response_time_ms: 3_000 },
                Response { task_index: 1, chosen: Side::Left, response_time_ms: 3_000 },
            ];
            let out = p.post_responses(&s.session_id, &responses, 1).unwrap();
            assert_eq!(out.accepted_votes, 0);
        }
        let err = p.get_session(&id, &SessionRequest::new("bad"), 2).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Forbidden);
        assert_eq!(
            p.with_scheduler(&id, |s| s.profile(&"bad".into()).unwrap().trust.status).unwrap(),
            TrustStatus::Disqualified
        );
    }

    #[test]
    fn unknown_ids() {
        let p = platform();
        assert_eq!(p.progress(&"bm-9".into()).unwrap_err().class(), ErrorClass::NotFound);
        let err = p.post_responses(&"bm-9.ses-000000000001".into(), &[], 0).unwrap_err();
        assert_eq!(err.code(), "SessionNotFound");
        assert_eq!(p.post_responses(&"garbage".into(), &[], 0).unwrap_err().class(), ErrorClass::NotFound);
    }

    #[test]
    fn draft_progress_and_empty_demographics() {
        let p = platform();
        let id = create(&p, "b", CriterionKind::ALL.to_vec());
        p.add_prompts(&id, prompts()).unwrap();
        let progress = p.progress(&id).unwrap();
        assert_eq!(progress.status, BenchmarkStatus::Draft);
        assert_eq!(progress.criteria.len(), 3);
        assert_eq!(progress.criteria[0].comparisons_total, 2);
        let d = p.demographics(&id).unwrap();
        assert_eq!(d.participants, 0);
    }

    #[test]
    fn reopen_replays_everything() {
        let dir = tempfile::tempdir().unwrap();
        let config = PlatformConfig {
            data_dir: Some(dir.path().to_path_buf()),
            sync_writes: false,
            ..PlatformConfig::default()
        };
        let (id, live, open_session) = {
            let p = Platform::open(config.clone()).unwrap();
            let id = launched(&p, vec![CriterionKind::Preference, CriterionKind::Alignment]);
            let s = p.get_session(&id, &SessionRequest::new("a1"), 0).unwrap();
            let responses: Vec<Response> = (0..s.tasks.len())
                .map(|k| Response { task_index: k, chosen: Side::Left, response_time_ms: 2_500 })
                .collect();
            p.post_responses(&s.session_id, &responses, 10).unwrap();
            let open = p.get_session(&id, &SessionRequest::new("a2"), 20).unwrap();
            let live = p.durable_state(&id).unwrap();
            (id, live, open)
        };
        let p = Platform::open(config).unwrap();
        assert_eq!(p.durable_state(&id).unwrap(), live);
        assert_eq!(p.session_state(&open_session.session_id), Some(SessionState::Issued));
        let responses: Vec<Response> = (0..open_session.tasks.len())
            .map(|k| Response { task_index: k, chosen: Side::Right, response_time_ms: 2_500 })
            .collect();
        p.post_responses(&open_session.session_id, &responses, 30).unwrap();
        // new benchmarks continue the id sequence
        let next = create(&p, "another", vec![CriterionKind::Preference]);
        assert_eq!(next.as_str(), "bm-000000000002");
        assert_eq!(p.resolve("another").unwrap(), next);
    }
}
