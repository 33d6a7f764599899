//! Shared domain types: identifiers, criteria, prompts, images, comparisons,
//! votes, annotators and sessions.
//!
//! Everything here is a plain value. Mutation happens through the
//! [`Scheduler`](crate::scheduler::Scheduler) and the
//! [`Platform`](crate::platform::Platform).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since the Unix epoch.
pub type Timestamp = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(value: impl Into<Arc<str>>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:?})", stringify!($name), &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.into())
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(value.into())
            }
        }
    };
}

string_id!(
    /// Identifies a generative model under evaluation.
    ModelId
);
string_id!(PromptId);
string_id!(ImageId);
string_id!(ComparisonId);
string_id!(VoteId);
string_id!(SessionId);
string_id!(
    /// Supplied by the delivery channel; never generated here.
    AnnotatorId
);
string_id!(BenchmarkId);
string_id!(ValidationId);

/// Formats a sortable, fixed-width identifier: `prefix-000000000042`.
///
/// Lexicographic order equals numeric order, so identifiers minted in
/// sequence sort in creation order and replays regenerate them exactly.
pub fn sequential_id(prefix: &str, n: u64) -> String {
    format!("{prefix}-{n:012}")
}

/// Parses the counter back out of an identifier built by [`sequential_id`].
pub fn sequence_of(id: &str) -> Option<u64> {
    id.rsplit_once('-').and_then(|(_, n)| n.parse().ok())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("a pair needs two distinct images, got {0} twice")]
    IdenticalImages(ImageId),
    #[error("unknown criterion {0:?}")]
    UnknownCriterion(String),
    #[error("unknown {kind} value {value:?}")]
    UnknownEnumValue { kind: &'static str, value: String },
}

/// The three judgment dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    Preference,
    Coherence,
    Alignment,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 3] = [
        CriterionKind::Preference,
        CriterionKind::Coherence,
        CriterionKind::Alignment,
    ];

    /// Canonical English wording shown above the two images.
    pub fn question(self) -> &'static str {
        match self {
            CriterionKind::Preference => "Which image do you prefer?",
            CriterionKind::Coherence => {
                "Which image is more plausible to exist and has fewer odd or impossible-looking things?"
            }
            CriterionKind::Alignment => "Which image better reflects the caption above them?",
        }
    }

    /// Only alignment tasks show the generating prompt.
    pub fn shows_prompt(self) -> bool {
        matches!(self, CriterionKind::Alignment)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionKind::Preference => "preference",
            CriterionKind::Coherence => "coherence",
            CriterionKind::Alignment => "alignment",
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "preference" | "style" => Ok(CriterionKind::Preference),
            "coherence" => Ok(CriterionKind::Coherence),
            "alignment" | "text-image-alignment" | "text_to_image_alignment" => {
                Ok(CriterionKind::Alignment)
            }
            _ => Err(DomainError::UnknownCriterion(s.to_string())),
        }
    }
}

/// A criterion together with its question wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub question_text: &'static str,
}

impl From<CriterionKind> for Criterion {
    fn from(kind: CriterionKind) -> Self {
        Criterion {
            kind,
            question_text: kind.question(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub model_id: ModelId,
    pub display_name: String,
}

impl ModelRef {
    pub fn new(model_id: impl Into<ModelId>, display_name: impl Into<String>) -> Self {
        ModelRef {
            model_id: model_id.into(),
            display_name: display_name.into(),
        }
    }
}

/// Benchmark collection a prompt was drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptSource {
    DrawBench,
    DiffusionDB,
    #[serde(rename = "ABC6K", alias = "ABC-6K")]
    Abc6k,
    #[serde(rename = "HRSBench", alias = "HRS-Bench")]
    HrsBench,
    #[serde(rename = "T2ICompBench", alias = "T2I-CompBench")]
    T2iCompBench,
    #[serde(rename = "DALLE3Eval", alias = "DALLE3-EVAL")]
    Dalle3Eval,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: PromptId,
    pub text: String,
    pub source: PromptSource,
    #[serde(default)]
    pub categories: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub image_id: ImageId,
    pub model_id: ModelId,
    pub prompt_id: PromptId,
    /// 1-based replicate number within the (model, prompt) cell.
    pub replicate_index: u32,
    /// URI or content hash; image bytes are never stored.
    pub content_ref: String,
}

/// One unordered cross-model image pair judged under one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub comparison_id: ComparisonId,
    pub criterion: CriterionKind,
    pub prompt_id: PromptId,
    pub image_a: ImageId,
    pub image_b: ImageId,
    pub quota: u32,
    pub votes_recorded: u32,
    pub outstanding_assignments: u32,
}

impl Comparison {
    pub fn contains(&self, image: &ImageId) -> bool {
        &self.image_a == image || &self.image_b == image
    }

    /// The image that did not win, or `None` if `winner` is foreign to the pair.
    pub fn loser(&self, winner: &ImageId) -> Option<&ImageId> {
        if winner == &self.image_a {
            Some(&self.image_b)
        } else if winner == &self.image_b {
            Some(&self.image_a)
        } else {
            None
        }
    }

    pub fn load(&self) -> u32 {
        self.votes_recorded + self.outstanding_assignments
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub vote_id: VoteId,
    pub comparison_id: ComparisonId,
    pub annotator_id: AnnotatorId,
    pub winner: ImageId,
    pub response_time_ms: u64,
    pub session_id: SessionId,
    pub recorded_at: Timestamp,
    pub timing_flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBucket {
    Under18,
    #[serde(rename = "18-24")]
    A18To24,
    #[serde(rename = "25-34")]
    A25To34,
    #[serde(rename = "35-44")]
    A35To44,
    #[serde(rename = "45-54")]
    A45To54,
    #[serde(rename = "55+")]
    A55Plus,
    Undisclosed,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 7] = [
        AgeBucket::Under18,
        AgeBucket::A18To24,
        AgeBucket::A25To34,
        AgeBucket::A35To44,
        AgeBucket::A45To54,
        AgeBucket::A55Plus,
        AgeBucket::Undisclosed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeBucket::Under18 => "Under18",
            AgeBucket::A18To24 => "18-24",
            AgeBucket::A25To34 => "25-34",
            AgeBucket::A35To44 => "35-44",
            AgeBucket::A45To54 => "45-54",
            AgeBucket::A55Plus => "55+",
            AgeBucket::Undisclosed => "Undisclosed",
        }
    }
}

impl FromStr for AgeBucket {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeBucket::ALL
            .into_iter()
            .find(|b| b.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownEnumValue {
                kind: "age bucket",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Other,
    Undisclosed,
}

impl Gender {
    pub const ALL: [Gender; 4] = [Gender::Male, Gender::Female, Gender::Other, Gender::Undisclosed];

    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
            Gender::Other => "Other",
            Gender::Undisclosed => "Undisclosed",
        }
    }
}

impl FromStr for Gender {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Gender::ALL
            .into_iter()
            .find(|g| g.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownEnumValue {
                kind: "gender",
                value: s.to_string(),
            })
    }
}

/// Standing of an annotator. The derived order is the only allowed
/// direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrustStatus {
    Active,
    Flagged,
    Disqualified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustState {
    pub validation_passes: u32,
    pub validation_failures: u32,
    pub status: TrustStatus,
}

impl Default for TrustState {
    fn default() -> Self {
        TrustState {
            validation_passes: 0,
            validation_failures: 0,
            status: TrustStatus::Active,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: AnnotatorId,
    /// ISO-3166 alpha-2, from the delivery channel.
    pub country_code: String,
    /// BCP-47 tag.
    pub locale: String,
    pub age_bucket: AgeBucket,
    pub gender: Gender,
    #[serde(default)]
    pub trust: TrustState,
}

impl AnnotatorProfile {
    pub fn new(annotator_id: impl Into<AnnotatorId>, country_code: impl Into<String>) -> Self {
        AnnotatorProfile {
            annotator_id: annotator_id.into(),
            country_code: country_code.into(),
            locale: "en".to_string(),
            age_bucket: AgeBucket::Undisclosed,
            gender: Gender::Undisclosed,
            trust: TrustState::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTask {
    pub comparison_id: ComparisonId,
    pub left_image: ImageId,
    pub right_image: ImageId,
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationTask {
    pub validation_id: ValidationId,
    pub left_image: ImageId,
    pub right_image: ImageId,
    pub correct_image: ImageId,
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Comparison(ComparisonTask),
    Validation(ValidationTask),
}

impl Task {
    pub fn left_image(&self) -> &ImageId {
        match self {
            Task::Comparison(t) => &t.left_image,
            Task::Validation(t) => &t.left_image,
        }
    }

    pub fn right_image(&self) -> &ImageId {
        match self {
            Task::Comparison(t) => &t.right_image,
            Task::Validation(t) => &t.right_image,
        }
    }

    pub fn image_on(&self, side: Side) -> &ImageId {
        match side {
            Side::Left => self.left_image(),
            Side::Right => self.right_image(),
        }
    }

    pub fn prompt_text(&self) -> Option<&str> {
        match self {
            Task::Comparison(t) => t.prompt_text.as_deref(),
            Task::Validation(t) => t.prompt_text.as_deref(),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Task::Validation(_))
    }
}

/// An attention-check pair with an obvious correct answer, drawn from a
/// curated pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationItem {
    pub validation_id: ValidationId,
    pub left_ref: String,
    pub right_ref: String,
    pub correct_side: Side,
    pub prompt_text: Option<String>,
}

impl ValidationItem {
    /// Image ids standing in for the two pool images inside a task.
    pub fn image_ids(&self) -> (ImageId, ImageId) {
        (
            ImageId::from(format!("{}/left", self.validation_id)),
            ImageId::from(format!("{}/right", self.validation_id)),
        )
    }

    pub fn content_ref(&self, side: Side) -> &str {
        match side {
            Side::Left => &self.left_ref,
            Side::Right => &self.right_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Issued,
    Completed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: SessionId,
    pub annotator_id: AnnotatorId,
    pub criterion: CriterionKind,
    pub tasks: Vec<Task>,
    pub state: SessionState,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
}

impl Session {
    pub fn comparison_ids(&self) -> impl Iterator<Item = &ComparisonId> {
        self.tasks.iter().filter_map(|t| match t {
            Task::Comparison(c) => Some(&c.comparison_id),
            Task::Validation(_) => None,
        })
    }
}

/// Orders an image pair by identifier.
pub fn canonicalize_pair(x: ImageId, y: ImageId) -> Result<(ImageId, ImageId), DomainError> {
    match x.cmp(&y) {
        std::cmp::Ordering::Less => Ok((x, y)),
        std::cmp::Ordering::Greater => Ok((y, x)),
        std::cmp::Ordering::Equal => Err(DomainError::IdenticalImages(x)),
    }
}
