//! Time-based controls, validation grading, trust transitions and the vote
//! eligibility filter.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AnnotatorProfile, ImageId, TrustState, TrustStatus, ValidationTask};

/// The wait imposed after a too-fast answer.
pub const PENALTY_MS: u64 = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    pub min_time_ms_per_task: u64,
    pub penalty_ms: u64,
    pub failures_to_flag: u32,
    pub failures_to_disqualify: u32,
    pub exclude_votes_of_disqualified: bool,
    /// Reject every comparison vote of a session whose validation task failed.
    pub void_failed_sessions: bool,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            min_time_ms_per_task: 2_000,
            penalty_ms: PENALTY_MS,
            failures_to_flag: 1,
            failures_to_disqualify: 2,
            exclude_votes_of_disqualified: true,
            void_failed_sessions: true,
        }
    }
}

impl QaConfig {
    /// No gating at all: validations are still graded and counted, but nobody
    /// is flagged or excluded and no vote is voided. Timing flags are still
    /// recorded. Used as the baseline when measuring what the controls buy.
    pub fn disabled() -> Self {
        QaConfig {
            failures_to_flag: u32::MAX,
            failures_to_disqualify: u32::MAX,
            exclude_votes_of_disqualified: false,
            void_failed_sessions: false,
            ..QaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), QaError> {
        if self.penalty_ms != PENALTY_MS {
            return Err(QaError::InvalidConfig(format!(
                "penalty_ms is fixed at {PENALTY_MS}, got {}",
                self.penalty_ms
            )));
        }
        if self.failures_to_flag == 0 || self.failures_to_disqualify == 0 {
            return Err(QaError::InvalidConfig("failure thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("chosen image {0} is not part of the validation pair")]
    ForeignImage(ImageId),
    #[error("invalid QA configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "timing", rename_all = "snake_case")]
pub enum TimingVerdict {
    Ok,
    Penalized { penalty_ms: u64 },
}

impl TimingVerdict {
    pub fn is_penalized(self) -> bool {
        matches!(self, TimingVerdict::Penalized { .. })
    }
}

/// Answers faster than the minimum are penalized; the minimum itself is fine.
pub fn check_timing(response_time_ms: u64, config: &QaConfig) -> TimingVerdict {
    if response_time_ms < config.min_time_ms_per_task {
        TimingVerdict::Penalized {
            penalty_ms: config.penalty_ms,
        }
    } else {
        TimingVerdict::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationOutcome {
    Pass,
    Fail,
}

impl fmt::Display for ValidationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValidationOutcome::Pass => "pass",
            ValidationOutcome::Fail => "fail",
        })
    }
}

pub fn evaluate_validation(task: &ValidationTask, chosen: &ImageId) -> Result<ValidationOutcome, QaError> {
    if chosen != &task.left_image && chosen != &task.right_image {
        return Err(QaError::ForeignImage(chosen.clone()));
    }
    Ok(if chosen == &task.correct_image {
        ValidationOutcome::Pass
    } else {
        ValidationOutcome::Fail
    })
}

/// Counts the outcome and escalates status; status never moves back.
pub fn update_trust(state: TrustState, outcome: ValidationOutcome, config: &QaConfig) -> TrustState {
    let mut next = state;
    match outcome {
        ValidationOutcome::Pass => next.validation_passes += 1,
        ValidationOutcome::Fail => next.validation_failures += 1,
    }
    let earned = if next.validation_failures >= config.failures_to_disqualify {
        TrustStatus::Disqualified
    } else if next.validation_failures >= config.failures_to_flag {
        TrustStatus::Flagged
    } else {
        TrustStatus::Active
    };
    next.status = next.status.max(earned);
    next
}

/// Whether this annotator's votes enter aggregation. Flagged annotators stay
/// in; only disqualification excludes, and only when configured.
pub fn vote_eligibility(annotator: &AnnotatorProfile, config: &QaConfig) -> bool {
    !(annotator.trust.status == TrustStatus::Disqualified && config.exclude_votes_of_disqualified)
}

/// Renders annotator-facing text in the annotator's locale.
pub trait Translator: Send + Sync {
    fn translate(&self, text: &str, locale: &str) -> String;
}

/// Returns text unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _locale: &str) -> String {
        text.to_string()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn validation() -> ValidationTask {
        ValidationTask {
            validation_id: "val-1".into(),
            left_image: "val-1/left".into(),
            right_image: "val-1/right".into(),
            correct_image: "val-1/right".into(),
            prompt_text: None,
        }
    }

    #[test]
    fn timing_examples() {
        let c = QaConfig::default();
        assert_eq!(check_timing(12_500, &c), TimingVerdict::Ok);
        assert_eq!(check_timing(300, &c), TimingVerdict::Penalized { penalty_ms: 5_000 });
        assert_eq!(check_timing(2_000, &c), TimingVerdict::Ok);
        assert_eq!(check_timing(1_999, &c), TimingVerdict::Penalized { penalty_ms: 5_000 });
    }

    #[test]
    fn validation_grading() {
        let t = validation();
        assert_eq!(evaluate_validation(&t, &"val-1/right".into()), Ok(ValidationOutcome::Pass));
        assert_eq!(evaluate_validation(&t, &"val-1/left".into()), Ok(ValidationOutcome::Fail));
        assert_eq!(
            evaluate_validation(&t, &"elsewhere".into()),
            Err(QaError::ForeignImage("elsewhere".into()))
        );
    }

    #[test]
    fn trust_transitions() {
        let c = QaConfig::default();
        let flagged = update_trust(TrustState::default(), ValidationOutcome::Fail, &c);
        assert_eq!(flagged.status, TrustStatus::Flagged);
        assert_eq!(flagged.validation_failures, 1);
        let out = update_trust(flagged, ValidationOutcome::Fail, &c);
        assert_eq!(out.status, TrustStatus::Disqualified);
        let ok = update_trust(TrustState::default(), ValidationOutcome::Pass, &c);
        assert_eq!(ok.status, TrustStatus::Active);
        assert_eq!(ok.validation_passes, 1);
    }

    #[test]
    fn eligibility() {
        let mut p = AnnotatorProfile::new("a", "CH");
        p.trust.status = TrustStatus::Disqualified;
        assert!(!vote_eligibility(&p, &QaConfig::default()));
        let lenient = QaConfig {
            exclude_votes_of_disqualified: false,
            ..QaConfig::default()
        };
        assert!(vote_eligibility(&p, &lenient));
        p.trust.status = TrustStatus::Flagged;
        assert!(vote_eligibility(&p, &QaConfig::default()));
    }

    #[test]
    fn config_validation() {
        assert!(QaConfig::default().validate().is_ok());
        assert!(QaConfig::disabled().validate().is_ok());
        let bad = QaConfig {
            penalty_ms: 3_000,
            ..QaConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn outcome() -> impl Strategy<Value = ValidationOutcome> {
        prop_oneof![Just(ValidationOutcome::Pass), Just(ValidationOutcome::Fail)]
    }

    proptest! {
        #[test]
        fn trust_is_monotone(events in proptest::collection::vec(outcome(), 0..40)) {
            let c = QaConfig::default();
            let mut state = TrustState::default();
            for e in &events {
                let next = update_trust(state, *e, &c);
                prop_assert!(next.status >= state.status);
                state = next;
            }
            let failures = events.iter().filter(|e| **e == ValidationOutcome::Fail).count();
            if failures >= 2 {
                prop_assert_eq!(state.status, TrustStatus::Disqualified);
            }
        }

        #[test]
        fn timing_is_a_threshold(t in 0u64..20_000, min in 1u64..10_000) {
            let c = QaConfig { min_time_ms_per_task: min, ..QaConfig::default() };
            prop_assert_eq!(check_timing(t, &c).is_penalized(), t < min);
        }
    }
}
