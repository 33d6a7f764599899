use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{sequence_of, AnnotatorId, AnnotatorProfile, ComparisonId, Session, SessionId, SessionState, Vote};
use crate::qa::{update_trust, QaConfig};

use super::{LogEntry, StoreError};

/// Everything the event log determines: annotators and their trust, every
/// assignment ever made, open sessions, and the votes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurableState {
    /// Sequence number of the last applied record, 0 when empty.
    pub last_seq: u64,
    pub profiles: BTreeMap<AnnotatorId, AnnotatorProfile>,
    /// Accepted votes per comparison; comparisons without votes are absent.
    pub votes_recorded: BTreeMap<ComparisonId, u32>,
    /// Every (annotator, comparison) assignment, answered or not.
    pub seen: BTreeSet<(AnnotatorId, ComparisonId)>,
    pub open_sessions: BTreeMap<SessionId, Session>,
    pub closed_sessions: BTreeMap<SessionId, SessionState>,
    pub accepted_votes: Vec<Vote>,
    pub rejected_votes: u64,
    /// Highest session and vote counters used so far.
    pub max_session_seq: u64,
    pub max_vote_seq: u64,
}

impl DurableState {
    fn require_annotator(&self, id: &AnnotatorId, what: &str) -> Result<(), StoreError> {
        if self.profiles.contains_key(id) {
            Ok(())
        } else {
            Err(StoreError::UnknownReference(format!("{what} by unregistered annotator {id}")))
        }
    }

    fn require_open(&self, id: &SessionId, what: &str) -> Result<&Session, StoreError> {
        self.open_sessions
            .get(id)
            .ok_or_else(|| StoreError::UnknownReference(format!("{what} for session {id}, which is not open")))
    }

    /// Folds one record into the state. Records must arrive in sequence.
    pub fn apply(&mut self, seq: u64, entry: &LogEntry, qa: &QaConfig) -> Result<(), StoreError> {
        if seq != self.last_seq + 1 {
            return Err(StoreError::UnknownReference(format!(
                "record {seq} applied after {}",
                self.last_seq
            )));
        }
        match entry {
            LogEntry::SessionIssued { profile, session } => {
                if let Some(profile) = profile {
                    if profile.annotator_id != session.annotator_id {
                        return Err(StoreError::UnknownReference(format!(
                            "session {} carries the profile of {}",
                            session.session_id, profile.annotator_id
                        )));
                    }
                    let trust = self
                        .profiles
                        .get(&profile.annotator_id)
                        .map(|p| p.trust)
                        .unwrap_or_default();
                    let mut profile = profile.clone();
                    profile.trust = trust;
                    self.profiles.insert(profile.annotator_id.clone(), profile);
                }
                self.require_annotator(&session.annotator_id, "session")?;
                if session.state != SessionState::Issued
                    || self.open_sessions.contains_key(&session.session_id)
                    || self.closed_sessions.contains_key(&session.session_id)
                {
                    return Err(StoreError::UnknownReference(format!(
                        "session {} issued twice",
                        session.session_id
                    )));
                }
                for c in session.comparison_ids() {
                    self.seen.insert((session.annotator_id.clone(), c.clone()));
                }
                if let Some(n) = sequence_of(session.session_id.as_str()) {
                    self.max_session_seq = self.max_session_seq.max(n);
                }
                self.open_sessions.insert(session.session_id.clone(), session.clone());
            }
            LogEntry::SessionCompleted {
                session_id,
                validations,
                votes,
                voided,
                ..
            } => {
                let session = self.require_open(session_id, "submission")?;
                let annotator = session.annotator_id.clone();
                let mut expected: Vec<&ComparisonId> = session.comparison_ids().collect();
                expected.sort();
                let mut got: Vec<&ComparisonId> = votes.iter().map(|v| &v.comparison_id).collect();
                got.sort();
                if expected != got || votes.iter().any(|v| v.annotator_id != annotator || &v.session_id != session_id) {
                    return Err(StoreError::UnknownReference(format!(
                        "votes of session {session_id} do not match its comparisons"
                    )));
                }
                let profile = self.profiles.get_mut(&annotator).expect("sessions are issued to registered annotators");
                for v in validations {
                    profile.trust = update_trust(profile.trust, v.outcome, qa);
                }
                for vote in votes {
                    if let Some(n) = sequence_of(vote.vote_id.as_str()) {
                        self.max_vote_seq = self.max_vote_seq.max(n);
                    }
                }
                if *voided {
                    self.rejected_votes += votes.len() as u64;
                } else {
                    for vote in votes {
                        *self.votes_recorded.entry(vote.comparison_id.clone()).or_default() += 1;
                        self.accepted_votes.push(vote.clone());
                    }
                }
                self.open_sessions.remove(session_id);
                self.closed_sessions.insert(session_id.clone(), SessionState::Completed);
            }
            LogEntry::SessionExpired { session_id, .. } => {
                self.require_open(session_id, "expiry")?;
                self.open_sessions.remove(session_id);
                self.closed_sessions.insert(session_id.clone(), SessionState::Expired);
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    /// Outstanding assignments per comparison, derived from open sessions.
    pub fn outstanding(&self) -> BTreeMap<ComparisonId, u32> {
        let mut out = BTreeMap::new();
        for session in self.open_sessions.values() {
            for c in session.comparison_ids() {
                *out.entry(c.clone()).or_default() += 1;
            }
        }
        out
    }
}
