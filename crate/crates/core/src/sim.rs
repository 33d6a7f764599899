//! Synthetic annotators and end-to-end benchmark runs against known ground
//! truth.
//!
//! A run goes through [`Platform`] exactly as a deployment would: create,
//! ingest prompts, manifest and validation pool, launch, then repeatedly ask
//! for sessions and answer them until every quota is met. Simulated
//! annotators peek at the scheduled session to learn which image belongs to
//! which model (faithful ones need that to sample from the true scores)
//! and which slot is the validation task.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    AgeBucket, AnnotatorId, AnnotatorProfile, BenchmarkId, ComparisonId, CriterionKind, Gender, ImageId, ModelId,
    ModelRef, Side, Task, Timestamp, TrustStatus,
};
use crate::platform::{CreateBenchmark, Platform, PlatformConfig, PlatformError, SessionRequest};
use crate::qa::{vote_eligibility, QaConfig};
use crate::ranking::{FitConfig, RankingResult, SCORE_TOTAL};
use crate::scheduler::{Response, SchedulerConfig, SchedulerError, DEFAULT_IMAGES_PER_MODEL, DEFAULT_QUOTA};

/// Published leaderboard scores, in [`default_models`] order.
pub const PREFERENCE_TRUTH: [f64; 4] = [29.86, 24.17, 23.98, 21.99];
pub const COHERENCE_TRUTH: [f64; 4] = [29.61, 22.92, 23.37, 24.09];
pub const ALIGNMENT_TRUTH: [f64; 4] = [27.36, 26.76, 24.48, 21.40];

/// Mean and spread of a simulated per-task response time.
pub const RESPONSE_MEAN_MS: f64 = 4_200.0;
pub const RESPONSE_SD_MS: f64 = 1_500.0;
pub const RESPONSE_FLOOR_MS: f64 = 500.0;

/// Simulated clock origin.
pub const SIM_EPOCH: Timestamp = 1_700_000_000_000;

pub fn default_models() -> Vec<ModelRef> {
    vec![
        ModelRef::new("flux-1", "Flux.1"),
        ModelRef::new("dall-e-3", "DALL-E 3"),
        ModelRef::new("midjourney", "MidJourney"),
        ModelRef::new("stable-diffusion", "Stable Diffusion"),
    ]
}

pub fn published_truth(criterion: CriterionKind) -> Vec<f64> {
    match criterion {
        CriterionKind::Preference => PREFERENCE_TRUTH.to_vec(),
        CriterionKind::Coherence => COHERENCE_TRUTH.to_vec(),
        CriterionKind::Alignment => ALIGNMENT_TRUTH.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorModel {
    /// Samples from the true Bradley-Terry probabilities.
    Faithful,
    /// Answers uniformly at random with probability `epsilon`, else faithfully.
    Noisy { epsilon: f64 },
    /// Uniform on everything, validations included.
    AdversarialRandom,
    /// Always picks the left image.
    AlwaysLeft,
    /// Uniform on comparisons, answers in a fixed time.
    Speeder { response_ms: u64 },
}

impl BehaviorModel {
    pub fn label(&self) -> &'static str {
        match self {
            BehaviorModel::Faithful => "faithful",
            BehaviorModel::Noisy { .. } => "noisy",
            BehaviorModel::AdversarialRandom => "adversarial_random",
            BehaviorModel::AlwaysLeft => "always_left",
            BehaviorModel::Speeder { .. } => "speeder",
        }
    }

    /// Whether the votes are noise with respect to the truth.
    pub fn is_adversarial(&self) -> bool {
        matches!(
            self,
            BehaviorModel::AdversarialRandom | BehaviorModel::AlwaysLeft | BehaviorModel::Speeder { .. }
        )
    }

    fn validate(&self) -> Result<(), SimError> {
        match *self {
            BehaviorModel::Noisy { epsilon } if !(0.0..1.0).contains(&epsilon) => {
                Err(SimError::InvalidConfig(format!("lapse rate must be in [0, 1), got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationGroup {
    pub behavior: BehaviorModel,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub value: T,
    pub weight: f64,
}

fn weighted<T>(items: &[(T, f64)]) -> Vec<Weighted<T>>
where
    T: Clone,
{
    items
        .iter()
        .map(|(value, weight)| Weighted {
            value: value.clone(),
            weight: *weight,
        })
        .collect()
}

/// How simulated annotators' demographics are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemographicsSpec {
    pub countries: Vec<Weighted<String>>,
    pub age_buckets: Vec<Weighted<AgeBucket>>,
    pub genders: Vec<Weighted<Gender>>,
    pub locale: String,
}

impl Default for DemographicsSpec {
    fn default() -> Self {
        let countries: Vec<(String, f64)> = [
            ("US", 0.22),
            ("IN", 0.14),
            ("GB", 0.08),
            ("DE", 0.07),
            ("BR", 0.07),
            ("PH", 0.06),
            ("NG", 0.06),
            ("JP", 0.05),
            ("FR", 0.05),
            ("MX", 0.05),
            ("KE", 0.04),
            ("ID", 0.04),
            ("AU", 0.03),
            ("AR", 0.02),
            ("NZ", 0.02),
        ]
        .iter()
        .map(|(c, w)| (c.to_string(), *w))
        .collect();
        DemographicsSpec {
            countries: weighted(&countries),
            age_buckets: weighted(&[
                (AgeBucket::A18To24, 0.25),
                (AgeBucket::A25To34, 0.35),
                (AgeBucket::A35To44, 0.2),
                (AgeBucket::A45To54, 0.12),
                (AgeBucket::A55Plus, 0.06),
                (AgeBucket::Undisclosed, 0.02),
            ]),
            genders: weighted(&[
                (Gender::Male, 0.5),
                (Gender::Female, 0.46),
                (Gender::Other, 0.02),
                (Gender::Undisclosed, 0.02),
            ]),
            locale: "en".into(),
        }
    }
}

fn pick<'a, T, R: Rng>(items: &'a [Weighted<T>], rng: &mut R) -> Result<&'a T, SimError> {
    let index = WeightedIndex::new(items.iter().map(|w| w.weight))
        .map_err(|e| SimError::InvalidConfig(format!("demographic weights: {e}")))?;
    Ok(&items[index.sample(rng)].value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub models: Vec<ModelRef>,
    pub prompts: usize,
    pub images_per_model: u32,
    pub votes_per_comparison: u32,
    pub criteria: Vec<CriterionKind>,
    /// Ground-truth scores per criterion, in `models` order.
    pub true_scores: BTreeMap<CriterionKind, Vec<f64>>,
    pub population: Vec<PopulationGroup>,
    pub demographics: DemographicsSpec,
    /// Chance that an annotator walks away from a session without answering.
    pub abandonment_rate: f64,
    pub validation_pool_size: usize,
    pub qa: QaConfig,
    pub scheduler: SchedulerConfig,
    pub fit: FitConfig,
    /// Give up after this many session requests.
    pub max_requests: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            models: default_models(),
            prompts: 30,
            images_per_model: DEFAULT_IMAGES_PER_MODEL,
            votes_per_comparison: DEFAULT_QUOTA,
            criteria: CriterionKind::ALL.to_vec(),
            true_scores: CriterionKind::ALL.iter().map(|c| (*c, published_truth(*c))).collect(),
            population: vec![PopulationGroup {
                behavior: BehaviorModel::Faithful,
                count: 60,
            }],
            demographics: DemographicsSpec::default(),
            abandonment_rate: 0.0,
            validation_pool_size: 24,
            qa: QaConfig::default(),
            scheduler: SchedulerConfig::default(),
            fit: FitConfig::default(),
            max_requests: 50_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::InvalidConfig(m));
        if self.prompts == 0 {
            return invalid("need at least one prompt".into());
        }
        if self.population.iter().map(|g| g.count).sum::<usize>() == 0 {
            return invalid("population is empty".into());
        }
        for g in &self.population {
            g.behavior.validate()?;
        }
        for c in &self.criteria {
            let Some(truth) = self.true_scores.get(c) else {
                return invalid(format!("no true scores for {c}"));
            };
            if truth.len() != self.models.len() {
                return invalid(format!("{c}: {} true scores for {} models", truth.len(), self.models.len()));
            }
            if truth.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return invalid(format!("{c}: true scores must be strictly positive"));
            }
        }
        if !(0.0..1.0).contains(&self.abandonment_rate) {
            return invalid(format!("abandonment rate must be in [0, 1), got {}", self.abandonment_rate));
        }
        if self.validation_pool_size == 0 {
            return invalid("the validation pool must not be empty".into());
        }
        Ok(())
    }

    /// True scores normalized to the reporting scale.
    pub fn normalized_truth(&self, criterion: CriterionKind) -> Option<Vec<f64>> {
        let truth = self.true_scores.get(&criterion)?;
        let sum: f64 = truth.iter().sum();
        Some(truth.iter().map(|s| s / sum * SCORE_TOTAL).collect())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimChoice {
    pub side: Side,
    pub chosen: ImageId,
    pub response_time_ms: u64,
}

/// Draws a per-task response time for an ordinary annotator.
pub fn draw_response_time<R: Rng>(rng: &mut R) -> u64 {
    let normal = Normal::new(RESPONSE_MEAN_MS, RESPONSE_SD_MS).expect("constant parameters are valid");
    normal.sample(rng).max(RESPONSE_FLOOR_MS).round() as u64
}

/// Answers one task. `true_scores` and `model_of` give the model-level
/// truth; validation tasks are answered per behavior (attentive behaviors
/// always get them right).
pub fn simulate_choice<R: Rng>(
    behavior: &BehaviorModel,
    task: &Task,
    true_scores: &[f64],
    model_of: impl Fn(&ImageId) -> Option<usize>,
    rng: &mut R,
) -> SimChoice {
    let left = task.left_image();
    let right = task.right_image();
    let uniform = |rng: &mut R| if rng.random_bool(0.5) { Side::Left } else { Side::Right };
    let faithful = |rng: &mut R| -> Side {
        let (Some(i), Some(j)) = (model_of(left), model_of(right)) else {
            return uniform(rng);
        };
        let p_left = true_scores[i] / (true_scores[i] + true_scores[j]);
        if rng.random::<f64>() < p_left {
            Side::Left
        } else {
            Side::Right
        }
    };

    let side = match (task, behavior) {
        (_, BehaviorModel::AlwaysLeft) => Side::Left,
        (_, BehaviorModel::AdversarialRandom) => uniform(rng),
        (Task::Validation(v), _) => {
            if v.correct_image == *left {
                Side::Left
            } else {
                Side::Right
            }
        }
        (Task::Comparison(_), BehaviorModel::Faithful) => faithful(rng),
        (Task::Comparison(_), BehaviorModel::Noisy { epsilon }) => {
            if rng.random::<f64>() < *epsilon {
                uniform(rng)
            } else {
                faithful(rng)
            }
        }
        (Task::Comparison(_), BehaviorModel::Speeder { .. }) => uniform(rng),
    };
    let response_time_ms = match behavior {
        BehaviorModel::Speeder { response_ms } => *response_ms,
        _ => draw_response_time(rng),
    };
    SimChoice {
        side,
        chosen: task.image_on(side).clone(),
        response_time_ms,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAnnotator {
    pub profile: AnnotatorProfile,
    pub behavior: BehaviorModel,
    pub sessions_served: u64,
    pub sessions_abandoned: u64,
}

/// Per-behavior quality-control outcomes of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub behavior: String,
    pub annotators: usize,
    pub sessions_served: u64,
    pub validations_passed: u64,
    pub validations_failed: u64,
    pub active: usize,
    pub flagged: usize,
    pub disqualified: usize,
    /// Votes that enter the rankings.
    pub accepted_votes: u64,
    pub timing_flagged_votes: u64,
    pub accepted_vote_share: f64,
}

impl BehaviorStats {
    pub fn disqualified_fraction(&self) -> f64 {
        if self.annotators == 0 {
            0.0
        } else {
            self.disqualified as f64 / self.annotators as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEfficacyReport {
    pub rows: Vec<BehaviorStats>,
    pub total_accepted_votes: u64,
    /// Share of ranking votes cast by adversarial behaviors.
    pub contamination: f64,
    pub rejected_votes: u64,
}

impl QaEfficacyReport {
    pub fn row(&self, behavior: &str) -> Option<&BehaviorStats> {
        self.rows.iter().find(|r| r.behavior == behavior)
    }

    /// Fixed-width table, one line per behavior.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<20} {:>6} {:>9} {:>9} {:>7} {:>8} {:>9} {:>10} {:>8}\n",
            "behavior", "count", "sessions", "val_fail", "flagged", "disqual", "votes", "timed_out", "share"
        );
        for r in &self.rows {
            out += &format!(
                "{:<20} {:>6} {:>9} {:>9} {:>7} {:>8} {:>9} {:>10} {:>8.4}\n",
                r.behavior,
                r.annotators,
                r.sessions_served,
                r.validations_failed,
                r.flagged,
                r.disqualified,
                r.accepted_votes,
                r.timing_flagged_votes,
                r.accepted_vote_share
            );
        }
        out += &format!(
            "contamination {:.4} over {} accepted votes ({} rejected)\n",
            self.contamination, self.total_accepted_votes, self.rejected_votes
        );
        out
    }
}

/// Builds the per-behavior table from a finished run.
pub fn qa_efficacy_report(
    platform: &Platform,
    benchmark: &BenchmarkId,
    annotators: &[SimAnnotator],
) -> Result<QaEfficacyReport, SimError> {
    let behavior_of: HashMap<&AnnotatorId, &BehaviorModel> =
        annotators.iter().map(|a| (&a.profile.annotator_id, &a.behavior)).collect();
    let (rows, total, adversarial, rejected) = platform.with_scheduler(benchmark, |s| {
        let qa = s.qa_config();
        let mut rows: BTreeMap<&'static str, BehaviorStats> = BTreeMap::new();
        for a in annotators {
            let row = rows.entry(a.behavior.label()).or_insert_with(|| BehaviorStats {
                behavior: a.behavior.label().to_string(),
                annotators: 0,
                sessions_served: 0,
                validations_passed: 0,
                validations_failed: 0,
                active: 0,
                flagged: 0,
                disqualified: 0,
                accepted_votes: 0,
                timing_flagged_votes: 0,
                accepted_vote_share: 0.0,
            });
            row.annotators += 1;
            row.sessions_served += a.sessions_served;
            if let Some(p) = s.profile(&a.profile.annotator_id) {
                row.validations_passed += p.trust.validation_passes as u64;
                row.validations_failed += p.trust.validation_failures as u64;
                match p.trust.status {
                    TrustStatus::Active => row.active += 1,
                    TrustStatus::Flagged => row.flagged += 1,
                    TrustStatus::Disqualified => row.disqualified += 1,
                }
            } else {
                row.active += 1;
            }
        }
        let mut total = 0u64;
        let mut adversarial = 0u64;
        for vote in s.accepted_votes() {
            if !s.profile(&vote.annotator_id).is_none_or(|p| vote_eligibility(p, qa)) {
                continue;
            }
            total += 1;
            let Some(behavior) = behavior_of.get(&vote.annotator_id) else { continue };
            if behavior.is_adversarial() {
                adversarial += 1;
            }
            let row = rows.get_mut(behavior.label()).expect("every behavior has a row");
            row.accepted_votes += 1;
            row.timing_flagged_votes += vote.timing_flagged as u64;
        }
        (rows, total, adversarial, s.rejected_votes())
    })?;
    let rows = rows
        .into_values()
        .map(|mut r| {
            r.accepted_vote_share = if total == 0 { 0.0 } else { r.accepted_votes as f64 / total as f64 };
            r
        })
        .collect();
    Ok(QaEfficacyReport {
        rows,
        total_accepted_votes: total,
        contamination: if total == 0 { 0.0 } else { adversarial as f64 / total as f64 },
        rejected_votes: rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub benchmark_id: BenchmarkId,
    pub complete: bool,
    pub session_requests: u64,
    pub sessions_issued: u64,
    pub sessions_abandoned: u64,
    pub votes_submitted: u64,
    pub rankings: BTreeMap<CriterionKind, RankingResult>,
    /// Largest |fitted − true| per criterion, on the normalized scale.
    pub recovery_error: BTreeMap<CriterionKind, f64>,
    pub qa: QaEfficacyReport,
}

impl SimReport {
    pub fn max_recovery_error(&self) -> f64 {
        self.recovery_error.values().copied().fold(0.0, f64::max)
    }
}

/// A finished run: the report plus the platform it ran on, for inspection.
pub struct SimRun {
    pub report: SimReport,
    pub platform: Platform,
    pub annotators: Vec<SimAnnotator>,
}

impl std::fmt::Debug for SimRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimRun").field("report", &self.report).finish_non_exhaustive()
    }
}

/// What the concurrent driver observed, in the order operations finished.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TraceEvent {
    Issued {
        annotator: AnnotatorId,
        session: crate::domain::SessionId,
        comparisons: Vec<ComparisonId>,
    },
    Submitted {
        session: crate::domain::SessionId,
        accepted: usize,
    },
    Abandoned {
        session: crate::domain::SessionId,
    },
    Refused {
        session: crate::domain::SessionId,
        code: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCheck {
    /// (annotator, comparison) pairs assigned more than once.
    pub repeats: Vec<(AnnotatorId, ComparisonId)>,
    /// Comparisons left below quota.
    pub shortfall: usize,
    /// Largest number of votes above quota on any comparison.
    pub max_overshoot: u32,
    /// Most sessions open at once according to the trace.
    pub max_open_sessions: usize,
}

impl TraceCheck {
    pub fn is_safe(&self) -> bool {
        self.repeats.is_empty() && self.shortfall == 0 && self.max_overshoot as usize <= self.max_open_sessions
    }
}

struct Prepared {
    platform: Platform,
    benchmark: BenchmarkId,
    annotators: Vec<SimAnnotator>,
    truths: BTreeMap<CriterionKind, Vec<f64>>,
    model_index: HashMap<ImageId, usize>,
}

fn prepare(config: &SimConfig, data_dir: Option<PathBuf>) -> Result<Prepared, SimError> {
    config.validate()?;
    let platform = Platform::open(PlatformConfig {
        data_dir: data_dir.clone(),
        qa: config.qa,
        fit: config.fit,
        scheduler: SchedulerConfig {
            seed: config.seed,
            ..config.scheduler
        },
        sync_writes: false,
        retain_log: false,
        ..PlatformConfig::default()
    })?;
    let benchmark = platform.create_benchmark(CreateBenchmark {
        name: format!("simulation-{}", config.seed),
        models: config.models.clone(),
        images_per_model: config.images_per_model,
        votes_per_comparison: config.votes_per_comparison,
        criteria: config.criteria.clone(),
    })?;

    let mut prompts = Vec::new();
    for n in 1..=config.prompts {
        prompts.extend(serde_json::to_vec(&serde_json::json!({
            "text": format!("synthetic prompt number {n}"),
            "categories": ["synthetic"],
        }))?);
        prompts.push(b'\n');
    }
    platform.add_prompts(&benchmark, &prompts)?;

    let plan = platform.plan(&benchmark)?;
    let mut manifest = Vec::new();
    for p in &plan.prompts {
        for m in &plan.models {
            for r in 1..=plan.images_per_model {
                manifest.extend(serde_json::to_vec(&serde_json::json!({
                    "model_id": m.model_id,
                    "prompt_id": p.prompt_id,
                    "replicate_index": r,
                    "content_ref": format!("sim://{}/{}/{r}", m.model_id, p.prompt_id),
                }))?);
                manifest.push(b'\n');
            }
        }
    }
    platform.add_manifest(&benchmark, &manifest)?;

    let mut pool = Vec::new();
    for n in 1..=config.validation_pool_size {
        let correct = if n % 2 == 0 { "left" } else { "right" };
        pool.extend(serde_json::to_vec(&serde_json::json!({
            "left_ref": format!("sim://check/{n}/a"),
            "right_ref": format!("sim://check/{n}/b"),
            "correct_side": correct,
            "prompt_text": format!("check number {n}"),
        }))?);
        pool.push(b'\n');
    }
    platform.add_validation_pool(&benchmark, &pool)?;
    platform.launch(&benchmark)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD3E0_5EED);
    let mut annotators = Vec::new();
    for group in &config.population {
        for _ in 0..group.count {
            let n = annotators.len() + 1;
            let mut profile = AnnotatorProfile::new(
                format!("sim-{}-{n:05}", group.behavior.label()),
                pick(&config.demographics.countries, &mut rng)?.clone(),
            );
            profile.age_bucket = *pick(&config.demographics.age_buckets, &mut rng)?;
            profile.gender = *pick(&config.demographics.genders, &mut rng)?;
            profile.locale = config.demographics.locale.clone();
            annotators.push(SimAnnotator {
                profile,
                behavior: group.behavior,
                sessions_served: 0,
                sessions_abandoned: 0,
            });
        }
    }

    let models: HashMap<ModelId, usize> =
        plan.models.iter().enumerate().map(|(i, m)| (m.model_id.clone(), i)).collect();
    let model_index = platform
        .image_models(&benchmark)?
        .into_iter()
        .map(|(image, model)| (image, models[&model]))
        .collect();
    let truths = config
        .criteria
        .iter()
        .map(|c| (*c, config.true_scores[c].clone()))
        .collect();
    Ok(Prepared {
        platform,
        benchmark,
        annotators,
        truths,
        model_index,
    })
}

enum Attempt {
    Submitted { votes: u64 },
    Abandoned,
    Refused,
    NoWork,
    Disqualified,
}

/// One session request and, unless abandoned, its answers.
fn attempt<R: Rng>(
    prepared: &Prepared,
    config: &SimConfig,
    annotator: &mut SimAnnotator,
    now: Timestamp,
    rng: &mut R,
    trace: Option<&Mutex<Vec<TraceEvent>>>,
) -> Result<(Attempt, Timestamp), SimError> {
    let platform = &prepared.platform;
    let request = SessionRequest::from_profile(&annotator.profile, None);
    let (_, session) = match platform.issue_session(&prepared.benchmark, &request, now) {
        Ok(issued) => issued,
        Err(PlatformError::Schedule(SchedulerError::NoWorkAvailable)) => return Ok((Attempt::NoWork, now)),
        Err(PlatformError::Schedule(SchedulerError::AnnotatorDisqualified(_))) => {
            return Ok((Attempt::Disqualified, now))
        }
        Err(e) => return Err(e.into()),
    };
    annotator.sessions_served += 1;
    if let Some(trace) = trace {
        trace.lock().push(TraceEvent::Issued {
            annotator: annotator.profile.annotator_id.clone(),
            session: session.session_id.clone(),
            comparisons: session.comparison_ids().cloned().collect(),
        });
    }
    if rng.random::<f64>() < config.abandonment_rate {
        annotator.sessions_abandoned += 1;
        if let Some(trace) = trace {
            trace.lock().push(TraceEvent::Abandoned {
                session: session.session_id.clone(),
            });
        }
        return Ok((Attempt::Abandoned, now + 1_000));
    }

    let truth = &prepared.truths[&session.criterion];
    let mut elapsed = 0;
    let responses: Vec<Response> = session
        .tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            let choice = simulate_choice(
                &annotator.behavior,
                task,
                truth,
                |image| prepared.model_index.get(image).copied(),
                rng,
            );
            elapsed += choice.response_time_ms;
            if choice.response_time_ms < config.qa.min_time_ms_per_task {
                elapsed += config.qa.penalty_ms;
            }
            Response {
                task_index: k,
                chosen: choice.side,
                response_time_ms: choice.response_time_ms,
            }
        })
        .collect();
    let done = now + elapsed;
    match platform.post_responses(&session.session_id, &responses, done) {
        Ok(outcome) => {
            if let Some(trace) = trace {
                trace.lock().push(TraceEvent::Submitted {
                    session: session.session_id.clone(),
                    accepted: outcome.accepted_votes,
                });
            }
            Ok((
                Attempt::Submitted {
                    votes: outcome.accepted_votes as u64,
                },
                done,
            ))
        }
        // expired before the answers arrived
        Err(e @ PlatformError::Schedule(SchedulerError::SessionNotIssued { .. })) => {
            if let Some(trace) = trace {
                trace.lock().push(TraceEvent::Refused {
                    session: session.session_id.clone(),
                    code: e.code().to_string(),
                });
            }
            Ok((Attempt::Refused, done))
        }
        Err(e) => Err(e.into()),
    }
}

fn finish(
    prepared: Prepared,
    config: &SimConfig,
    counters: (u64, u64, u64, u64),
) -> Result<SimRun, SimError> {
    let (session_requests, sessions_issued, sessions_abandoned, votes_submitted) = counters;
    let Prepared {
        platform,
        benchmark,
        annotators,
        ..
    } = prepared;
    let complete = platform.progress(&benchmark)?.is_complete();
    let mut rankings = BTreeMap::new();
    let mut recovery_error = BTreeMap::new();
    for c in &config.criteria {
        let result = platform.rankings(&benchmark, *c, false)?;
        let truth = config.normalized_truth(*c).expect("validated");
        let err = truth
            .iter()
            .zip(result.scores.as_slice())
            .map(|(t, s)| (t - s).abs())
            .fold(0.0, f64::max);
        recovery_error.insert(*c, err);
        rankings.insert(*c, result);
    }
    let qa = qa_efficacy_report(&platform, &benchmark, &annotators)?;
    Ok(SimRun {
        report: SimReport {
            benchmark_id: benchmark,
            complete,
            session_requests,
            sessions_issued,
            sessions_abandoned,
            votes_submitted,
            rankings,
            recovery_error,
            qa,
        },
        platform,
        annotators,
    })
}

/// Single-threaded, fully deterministic run.
pub fn run_benchmark_sim(config: &SimConfig) -> Result<SimRun, SimError> {
    run_benchmark_sim_in(config, None)
}

/// Like [`run_benchmark_sim`], persisting the benchmark and its event log
/// under `data_dir` when given.
pub fn run_benchmark_sim_in(config: &SimConfig, data_dir: Option<PathBuf>) -> Result<SimRun, SimError> {
    let mut prepared = prepare(config, data_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut now = SIM_EPOCH;
    let deadline_ms = config.scheduler.session_deadline_ms;

    let mut annotators = std::mem::take(&mut prepared.annotators);
    let mut active: Vec<usize> = (0..annotators.len()).collect();
    let mut idle: BTreeSet<usize> = BTreeSet::new();
    let (mut requests, mut issued, mut abandoned, mut votes) = (0u64, 0u64, 0u64, 0u64);

    while requests < config.max_requests {
        if active.is_empty() {
            // everyone is out of work; let abandoned sessions lapse and retry
            let open = prepared.platform.progress(&prepared.benchmark)?.open_sessions;
            if open == 0 || idle.is_empty() {
                break;
            }
            now += deadline_ms + 1;
            prepared.platform.expire_overdue(now)?;
            active.extend(std::mem::take(&mut idle));
            continue;
        }
        let slot = rng.random_range(0..active.len());
        let who = active[slot];
        requests += 1;
        let (outcome, next) = attempt(&prepared, config, &mut annotators[who], now, &mut rng, None)?;
        now = next.max(now + 1);
        match outcome {
            Attempt::Submitted { votes: v } => {
                issued += 1;
                votes += v;
            }
            Attempt::Abandoned => {
                issued += 1;
                abandoned += 1;
            }
            Attempt::Refused => issued += 1,
            Attempt::NoWork => {
                active.swap_remove(slot);
                idle.insert(who);
            }
            Attempt::Disqualified => {
                active.swap_remove(slot);
            }
        }
        if matches!(outcome, Attempt::NoWork) && active.is_empty() && idle.len() == annotators.len() {
            // may simply be done
            if prepared.platform.progress(&prepared.benchmark)?.is_complete() {
                break;
            }
        }
    }
    prepared.annotators = annotators;
    finish(prepared, config, (requests, issued, abandoned, votes))
}

/// Runs every annotator on its own thread against one shared platform and
/// records a trace of what each operation returned.
pub fn run_concurrent_sim(config: &SimConfig) -> Result<(SimRun, Vec<TraceEvent>), SimError> {
    let mut prepared = prepare(config, None)?;
    let annotators = std::mem::take(&mut prepared.annotators);
    let clock = AtomicU64::new(SIM_EPOCH);
    let trace = Mutex::new(Vec::new());
    let counters = [AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0), AtomicU64::new(0)];
    let deadline_ms = config.scheduler.session_deadline_ms;
    let prepared_ref = &prepared;
    // attempts hold this shared; the clock only jumps when none is in flight,
    // so a session is never expired under an annotator who is answering it
    let in_flight = RwLock::new(());

    let finished: Vec<Result<SimAnnotator, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = annotators
            .into_iter()
            .enumerate()
            .map(|(n, mut annotator)| {
                let (clock, trace, counters, in_flight) = (&clock, &trace, &counters, &in_flight);
                scope.spawn(move || -> Result<SimAnnotator, SimError> {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(n as u64 + 1));
                    let mut idle_rounds = 0u32;
                    loop {
                        if counters[0].fetch_add(1, Ordering::Relaxed) >= config.max_requests {
                            break;
                        }
                        let (outcome, _) = {
                            let _flight = in_flight.read();
                            let now = clock.fetch_add(10, Ordering::SeqCst);
                            attempt(prepared_ref, config, &mut annotator, now, &mut rng, Some(trace))?
                        };
                        match outcome {
                            Attempt::Submitted { votes } => {
                                idle_rounds = 0;
                                counters[1].fetch_add(1, Ordering::Relaxed);
                                counters[3].fetch_add(votes, Ordering::Relaxed);
                            }
                            Attempt::Abandoned => {
                                counters[1].fetch_add(1, Ordering::Relaxed);
                                counters[2].fetch_add(1, Ordering::Relaxed);
                            }
                            Attempt::Refused => {
                                counters[1].fetch_add(1, Ordering::Relaxed);
                            }
                            Attempt::NoWork => {
                                if prepared_ref.platform.progress(&prepared_ref.benchmark)?.is_complete() {
                                    break;
                                }
                                idle_rounds += 1;
                                if idle_rounds > 100_000 {
                                    break;
                                }
                                // let time pass so abandoned sessions can lapse
                                if let Some(_quiet) = in_flight.try_write() {
                                    clock.fetch_add(deadline_ms / 50, Ordering::SeqCst);
                                }
                                std::thread::yield_now();
                            }
                            Attempt::Disqualified => break,
                        }
                    }
                    Ok(annotator)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    prepared.annotators = finished.into_iter().collect::<Result<_, _>>()?;
    let counts = (
        counters[0].load(Ordering::Relaxed).min(config.max_requests),
        counters[1].load(Ordering::Relaxed),
        counters[2].load(Ordering::Relaxed),
        counters[3].load(Ordering::Relaxed),
    );
    let run = finish(prepared, config, counts)?;
    Ok((run, trace.into_inner()))
}

/// Checks a concurrent trace against the final state of its benchmark.
pub fn check_trace(run: &SimRun, trace: &[TraceEvent]) -> Result<TraceCheck, SimError> {
    let mut seen = BTreeSet::new();
    let mut repeats = Vec::new();
    let mut open = 0usize;
    let mut max_open = 0usize;
    for event in trace {
        match event {
            TraceEvent::Issued {
                annotator, comparisons, ..
            } => {
                for c in comparisons {
                    if !seen.insert((annotator.clone(), c.clone())) {
                        repeats.push((annotator.clone(), c.clone()));
                    }
                }
                open += 1;
                max_open = max_open.max(open);
            }
            TraceEvent::Submitted { .. } | TraceEvent::Refused { .. } | TraceEvent::Abandoned { .. } => {
                open = open.saturating_sub(1);
            }
        }
    }
    let state = run.platform.durable_state(&run.report.benchmark_id)?;
    let (quota, ids): (u32, Vec<ComparisonId>) = run.platform.with_scheduler(&run.report.benchmark_id, |s| {
        (s.quota(), s.comparisons().iter().map(|c| c.comparison_id.clone()).collect())
    })?;
    let mut shortfall = 0;
    let mut max_overshoot = 0;
    for id in ids {
        let n = state.votes_recorded.get(&id).copied().unwrap_or(0);
        if n < quota {
            shortfall += 1;
        }
        max_overshoot = max_overshoot.max(n.saturating_sub(quota));
    }
    Ok(TraceCheck {
        repeats,
        shortfall,
        max_overshoot,
        max_open_sessions: max_open,
    })
}
