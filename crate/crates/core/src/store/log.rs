//! The event log. One record per line:
//!
//! ```text
//! <seq>\t<crc32 as 8 hex digits>\t<json>\n
//! ```
//!
//! The checksum covers `<seq>\t<json>`. Sequence numbers start at 1 and have
//! no gaps, so a reordered or spliced file is detected as well as a damaged one.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotatorProfile, Comparison, Session, SessionId, Timestamp, ValidationId, Vote};
use crate::qa::{QaConfig, ValidationOutcome};

use super::{DurableState, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub task_index: usize,
    pub validation_id: ValidationId,
    pub outcome: ValidationOutcome,
}

/// One record per scheduler operation, so every record boundary is a state
/// the live system actually passed through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    /// A session as handed out, tasks and sides included. Carries the
    /// annotator's profile on first sight or when demographics changed;
    /// trust in it is ignored, being derived from validation outcomes.
    SessionIssued {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<AnnotatorProfile>,
        session: Session,
    },
    /// A graded submission. When `voided`, the votes were received but are
    /// rejected and never enter quota or aggregation.
    SessionCompleted {
        session_id: SessionId,
        validations: Vec<ValidationRecord>,
        votes: Vec<Vote>,
        voided: bool,
        recorded_at: Timestamp,
    },
    SessionExpired { session_id: SessionId, at: Timestamp },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub entry: LogEntry,
}

/// Where and why decoding stopped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    /// The sequence number the bad record should have carried.
    pub seq: u64,
    pub offset: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// Keep the valid prefix and report where it ends.
    Recover,
    /// Any damage is an error.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub state: DurableState,
    pub records: u64,
    /// Length of the valid prefix in bytes.
    pub valid_bytes: u64,
    pub corruption: Option<Corruption>,
}

pub fn encode_record(seq: u64, entry: &LogEntry) -> Result<Vec<u8>, StoreError> {
    let json = serde_json::to_string(entry)?;
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(seq.to_string().as_bytes());
    hasher.update(b"\t");
    hasher.update(json.as_bytes());
    Ok(format!("{seq}\t{:08x}\t{json}\n", hasher.finalize()).into_bytes())
}

fn decode_line(line: &[u8], expected_seq: u64) -> Result<LogEntry, String> {
    let text = std::str::from_utf8(line).map_err(|_| "record is not UTF-8".to_string())?;
    let mut parts = text.splitn(3, '\t');
    let (seq, crc, json) = match (parts.next(), parts.next(), parts.next()) {
        (Some(s), Some(c), Some(j)) => (s, c, j),
        _ => return Err("record has fewer than three fields".into()),
    };
    let seq: u64 = seq.parse().map_err(|_| format!("bad sequence field {seq:?}"))?;
    if seq != expected_seq {
        return Err(format!("sequence {seq} where {expected_seq} was expected"));
    }
    if crc.len() != 8 {
        return Err("bad checksum field".into());
    }
    let crc = u32::from_str_radix(crc, 16).map_err(|_| "bad checksum field".to_string())?;
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(seq.to_string().as_bytes());
    hasher.update(b"\t");
    hasher.update(json.as_bytes());
    if hasher.finalize() != crc {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| format!("undecodable payload: {e}"))
}

/// Decodes records up to the first damaged one. Returns the records with the
/// byte offset just past each, and the damage if any.
pub fn read_records(bytes: &[u8]) -> (Vec<(LogRecord, u64)>, Option<Corruption>) {
    let mut records = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let seq = records.len() as u64 + 1;
        let Some(len) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            let corruption = Corruption {
                seq,
                offset: offset as u64,
                reason: format!("torn record of {} bytes without terminator", bytes.len() - offset),
            };
            return (records, Some(corruption));
        };
        match decode_line(&bytes[offset..offset + len], seq) {
            Ok(entry) => {
                offset += len + 1;
                records.push((LogRecord { seq, entry }, offset as u64));
            }
            Err(reason) => {
                let corruption = Corruption {
                    seq,
                    offset: offset as u64,
                    reason,
                };
                return (records, Some(corruption));
            }
        }
    }
    (records, None)
}

pub fn replay_bytes(bytes: &[u8], qa: &QaConfig, mode: ReplayMode) -> Result<ReplayOutcome, StoreError> {
    let (records, corruption) = read_records(bytes);
    if let (Some(c), ReplayMode::Strict) = (&corruption, mode) {
        return Err(StoreError::ChecksumMismatch {
            seq: c.seq,
            offset: c.offset,
        });
    }
    let mut state = DurableState::default();
    let mut valid_bytes = 0;
    for (record, end) in &records {
        state.apply(record.seq, &record.entry, qa)?;
        valid_bytes = *end;
    }
    if let Some(c) = &corruption {
        tracing::warn!(seq = c.seq, offset = c.offset, reason = %c.reason, "event log truncated at damaged record");
    }
    Ok(ReplayOutcome {
        state,
        records: records.len() as u64,
        valid_bytes,
        corruption,
    })
}

pub fn replay(path: impl AsRef<Path>, qa: &QaConfig, mode: ReplayMode) -> Result<ReplayOutcome, StoreError> {
    let bytes = std::fs::read(path)?;
    replay_bytes(&bytes, qa, mode)
}

enum Target {
    File { file: File, path: PathBuf, len: u64, sync: bool },
    Memory(Vec<u8>),
    /// Assigns sequence numbers and drops the bytes.
    Discard,
}

struct Inner {
    target: Target,
    last_seq: u64,
}

/// Append-only writer. Appends are serialized; each record is written in one
/// call and a failed write is rolled back so the file never holds a torn
/// record followed by good ones.
pub struct VoteLog {
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for VoteLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock();
        let target = match &inner.target {
            Target::File { path, .. } => path.display().to_string(),
            Target::Memory(_) => "memory".to_string(),
            Target::Discard => "discard".to_string(),
        };
        f.debug_struct("VoteLog")
            .field("target", &target)
            .field("last_seq", &inner.last_seq)
            .finish()
    }
}

impl VoteLog {
    pub fn in_memory() -> Self {
        VoteLog {
            inner: Mutex::new(Inner {
                target: Target::Memory(Vec::new()),
                last_seq: 0,
            }),
        }
    }

    /// A log that keeps nothing, for throughput runs that never replay.
    pub fn discard() -> Self {
        VoteLog {
            inner: Mutex::new(Inner {
                target: Target::Discard,
                last_seq: 0,
            }),
        }
    }

    /// Opens or creates a log file, replays it and cuts off any damaged tail
    /// so that new records follow the last good one.
    pub fn open(path: impl AsRef<Path>, qa: &QaConfig) -> Result<(VoteLog, ReplayOutcome), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let outcome = replay_bytes(&bytes, qa, ReplayMode::Recover)?;
        if outcome.valid_bytes < bytes.len() as u64 {
            file.set_len(outcome.valid_bytes)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::Start(outcome.valid_bytes))?;
        let log = VoteLog {
            inner: Mutex::new(Inner {
                target: Target::File {
                    file,
                    path,
                    len: outcome.valid_bytes,
                    sync: false,
                },
                last_seq: outcome.records,
            }),
        };
        Ok((log, outcome))
    }

    /// Whether every append is followed by an fsync.
    pub fn set_sync(&self, on: bool) {
        if let Target::File { sync, .. } = &mut self.inner.lock().target {
            *sync = on;
        }
    }

    pub fn append(&self, entry: &LogEntry) -> Result<u64, StoreError> {
        self.append_batch(std::slice::from_ref(entry))
    }

    /// Writes several records in one call; either all of them land or none.
    /// Returns the sequence number of the last one.
    pub fn append_batch(&self, entries: &[LogEntry]) -> Result<u64, StoreError> {
        let mut inner = self.inner.lock();
        let first = inner.last_seq + 1;
        let mut bytes = Vec::new();
        for (k, entry) in entries.iter().enumerate() {
            bytes.extend(encode_record(first + k as u64, entry)?);
        }
        match &mut inner.target {
            Target::Memory(buf) => buf.extend_from_slice(&bytes),
            Target::Discard => {}
            Target::File { file, len, sync, .. } => {
                let result = file.write_all(&bytes).and_then(|_| if *sync { file.sync_data() } else { Ok(()) });
                if let Err(e) = result {
                    let _ = file.set_len(*len);
                    let _ = file.seek(SeekFrom::Start(*len));
                    return Err(e.into());
                }
                *len += bytes.len() as u64;
            }
        }
        inner.last_seq += entries.len() as u64;
        Ok(inner.last_seq)
    }

    /// Checks that a vote belongs to `comparison`.
    pub fn check_vote(vote: &Vote, comparison: &Comparison) -> Result<(), StoreError> {
        if vote.comparison_id != comparison.comparison_id {
            return Err(StoreError::UnknownReference(format!(
                "vote {} names comparison {} but was checked against {}",
                vote.vote_id, vote.comparison_id, comparison.comparison_id
            )));
        }
        if !comparison.contains(&vote.winner) {
            return Err(StoreError::UnknownReference(format!(
                "vote {} picks image {} outside comparison {}",
                vote.vote_id, vote.winner, comparison.comparison_id
            )));
        }
        Ok(())
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().last_seq
    }

    /// Bytes written so far.
    pub fn len_bytes(&self) -> u64 {
        match &self.inner.lock().target {
            Target::Memory(buf) => buf.len() as u64,
            Target::File { len, .. } => *len,
            Target::Discard => 0,
        }
    }

    /// A copy of an in-memory log, `None` for file logs.
    pub fn contents(&self) -> Option<Vec<u8>> {
        match &self.inner.lock().target {
            Target::Memory(buf) => Some(buf.clone()),
            Target::File { .. } | Target::Discard => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{sequential_id, AnnotatorId, ComparisonTask, CriterionKind, SessionState, Task, TrustStatus};

    fn profile(id: &str) -> AnnotatorProfile {
        AnnotatorProfile::new(id, "DE")
    }

    fn comparison() -> Comparison {
        Comparison {
            comparison_id: "cmp-000000000001".into(),
            criterion: CriterionKind::Preference,
            prompt_id: "prm-000000000001".into(),
            image_a: "img-000000000001".into(),
            image_b: "img-000000000002".into(),
            quota: 26,
            votes_recorded: 0,
            outstanding_assignments: 0,
        }
    }

    fn session(n: u64, annotator: &str) -> Session {
        Session {
            session_id: sequential_id("ses", n).into(),
            annotator_id: annotator.into(),
            criterion: CriterionKind::Preference,
            tasks: vec![Task::Comparison(ComparisonTask {
                comparison_id: "cmp-000000000001".into(),
                left_image: "img-000000000002".into(),
                right_image: "img-000000000001".into(),
                prompt_text: None,
            })],
            state: SessionState::Issued,
            issued_at: 900,
            deadline: 300_900,
        }
    }

    fn vote(n: u64, session: u64, annotator: &str, winner: &str) -> Vote {
        Vote {
            vote_id: sequential_id("vote", n).into(),
            comparison_id: "cmp-000000000001".into(),
            annotator_id: annotator.into(),
            winner: winner.into(),
            response_time_ms: 4_000,
            session_id: sequential_id("ses", session).into(),
            recorded_at: 1_000 + n,
            timing_flagged: false,
        }
    }

    fn issued(n: u64, annotator: &str, with_profile: bool) -> LogEntry {
        LogEntry::SessionIssued {
            profile: with_profile.then(|| profile(annotator)),
            session: session(n, annotator),
        }
    }

    fn completed(n: u64, vote_n: u64, annotator: &str, failed: bool) -> LogEntry {
        LogEntry::SessionCompleted {
            session_id: sequential_id("ses", n).into(),
            validations: if failed {
                vec![ValidationRecord {
                    task_index: 1,
                    validation_id: "val-000000000001".into(),
                    outcome: ValidationOutcome::Fail,
                }]
            } else {
                Vec::new()
            },
            votes: vec![vote(vote_n, n, annotator, "img-000000000001")],
            voided: failed,
            recorded_at: 1_000,
        }
    }

    fn sample_entries() -> Vec<LogEntry> {
        vec![
            issued(1, "a1", true),
            completed(1, 1, "a1", false),
            issued(2, "a2", true),
            completed(2, 2, "a2", true),
            issued(3, "a1", false),
            LogEntry::SessionExpired {
                session_id: "ses-000000000003".into(),
                at: 400_000,
            },
            issued(4, "a2", false),
        ]
    }

    fn sample_log() -> VoteLog {
        let log = VoteLog::in_memory();
        for e in sample_entries() {
            log.append(&e).unwrap();
        }
        log
    }

    #[test]
    fn record_layout() {
        let bytes = encode_record(7, &issued(1, "a1", true)).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let fields: Vec<&str> = text.trim_end().splitn(3, '\t').collect();
        assert_eq!(fields[0], "7");
        assert_eq!(fields[1].len(), 8);
        let expected = crc32fast::hash(format!("7\t{}", fields[2]).as_bytes());
        assert_eq!(u32::from_str_radix(fields[1], 16).unwrap(), expected);
        assert!(text.ends_with('\n'));
        assert!(!fields[2].contains('\n'));
    }

    #[test]
    fn empty_log_is_empty_state() {
        let out = replay_bytes(b"", &QaConfig::default(), ReplayMode::Strict).unwrap();
        assert_eq!(out.state, DurableState::default());
        assert_eq!(out.records, 0);
    }

    #[test]
    fn replay_rebuilds_state() {
        let bytes = sample_log().contents().unwrap();
        let out = replay_bytes(&bytes, &QaConfig::default(), ReplayMode::Strict).unwrap();
        assert_eq!(out.records, 7);
        assert_eq!(out.valid_bytes, bytes.len() as u64);
        let s = out.state;
        assert_eq!(s.last_seq, 7);
        assert_eq!(s.accepted_votes.len(), 1);
        assert_eq!(s.rejected_votes, 1);
        assert_eq!(s.votes_recorded.get(&"cmp-000000000001".into()), Some(&1));
        assert_eq!(s.seen.len(), 2);
        assert_eq!(s.open_sessions.len(), 1);
        assert_eq!(s.outstanding().get(&"cmp-000000000001".into()), Some(&1));
        assert_eq!(s.closed_sessions[&SessionId::from("ses-000000000003")], SessionState::Expired);
        assert_eq!(s.profiles[&AnnotatorId::from("a2")].trust.status, TrustStatus::Flagged);
        assert_eq!(s.profiles[&AnnotatorId::from("a1")].trust.status, TrustStatus::Active);
        assert_eq!(s.max_vote_seq, 2);
        assert_eq!(s.max_session_seq, 4);
    }

    #[test]
    fn records_reencode_identically() {
        let bytes = sample_log().contents().unwrap();
        let (records, corruption) = read_records(&bytes);
        assert!(corruption.is_none());
        let again: Vec<u8> = records
            .iter()
            .flat_map(|(r, _)| encode_record(r.seq, &r.entry).unwrap())
            .collect();
        assert_eq!(again, bytes);
    }

    #[test]
    fn flipped_byte_truncates_before_its_record() {
        let bytes = sample_log().contents().unwrap();
        let (records, _) = read_records(&bytes);
        for k in 0..bytes.len() {
            let mut damaged = bytes.clone();
            damaged[k] ^= 0x01;
            // the record holding byte k; a flipped terminator damages the
            // record it ends
            let holder = records.iter().position(|(_, end)| (k as u64) < *end).unwrap();
            let out = replay_bytes(&damaged, &QaConfig::default(), ReplayMode::Recover).unwrap();
            assert_eq!(out.records, holder as u64, "flip at byte {k}");
            assert!(out.corruption.is_some());
            assert!(matches!(
                replay_bytes(&damaged, &QaConfig::default(), ReplayMode::Strict),
                Err(StoreError::ChecksumMismatch { seq, .. }) if seq == holder as u64 + 1
            ));
        }
    }

    #[test]
    fn every_prefix_replays() {
        let bytes = sample_log().contents().unwrap();
        let (records, _) = read_records(&bytes);
        for cut in 0..=bytes.len() {
            let out = replay_bytes(&bytes[..cut], &QaConfig::default(), ReplayMode::Recover).unwrap();
            let complete = records.iter().filter(|(_, end)| *end as usize <= cut).count();
            assert_eq!(out.records, complete as u64);
            assert_eq!(out.corruption.is_some(), out.valid_bytes != cut as u64);
        }
    }

    #[test]
    fn gaps_and_reordering_are_damage() {
        let a = encode_record(1, &issued(1, "a1", true)).unwrap();
        let b = encode_record(3, &issued(2, "a1", false)).unwrap();
        let out = replay_bytes(&[a, b].concat(), &QaConfig::default(), ReplayMode::Recover).unwrap();
        assert_eq!(out.records, 1);
        assert!(out.corruption.unwrap().reason.contains("sequence"));
    }

    #[test]
    fn vote_reference_checks() {
        let mut v = vote(1, 1, "a1", "img-elsewhere");
        assert!(matches!(VoteLog::check_vote(&v, &comparison()), Err(StoreError::UnknownReference(_))));
        v.winner = "img-000000000001".into();
        assert!(VoteLog::check_vote(&v, &comparison()).is_ok());
        v.comparison_id = "cmp-000000000002".into();
        assert!(VoteLog::check_vote(&v, &comparison()).is_err());
    }

    #[test]
    fn inconsistent_records_fail_replay() {
        let qa = QaConfig::default();
        // a session for an annotator never registered
        let bytes = encode_record(1, &issued(1, "ghost", false)).unwrap();
        assert!(matches!(replay_bytes(&bytes, &qa, ReplayMode::Recover), Err(StoreError::UnknownReference(_))));
        // completing a session that is not open
        let bytes = [
            encode_record(1, &issued(1, "a1", true)).unwrap(),
            encode_record(2, &completed(2, 1, "a1", false)).unwrap(),
        ]
        .concat();
        assert!(replay_bytes(&bytes, &qa, ReplayMode::Recover).is_err());
        // votes that do not match the session
        let mut wrong = completed(1, 1, "a1", false);
        if let LogEntry::SessionCompleted { votes, .. } = &mut wrong {
            votes.clear();
        }
        let bytes = [encode_record(1, &issued(1, "a1", true)).unwrap(), encode_record(2, &wrong).unwrap()].concat();
        assert!(replay_bytes(&bytes, &qa, ReplayMode::Recover).is_err());
    }

    #[test]
    fn batches_and_discard() {
        let log = VoteLog::discard();
        assert_eq!(log.append_batch(&sample_entries()).unwrap(), 7);
        assert_eq!(log.len_bytes(), 0);
        assert_eq!(log.contents(), None);
        let mem = VoteLog::in_memory();
        assert_eq!(mem.append(&issued(1, "a1", true)).unwrap(), 1);
        assert_eq!(mem.append(&completed(1, 1, "a1", false)).unwrap(), 2);
    }

    #[test]
    fn concurrent_appends_get_distinct_sequence_numbers() {
        let log = std::sync::Arc::new(VoteLog::in_memory());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let log = log.clone();
                std::thread::spawn(move || {
                    (0..50)
                        .map(|k| log.append(&issued(t * 100 + k + 1, "a1", true)).unwrap())
                        .collect::<Vec<u64>>()
                })
            })
            .collect();
        let mut all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort();
        assert_eq!(all, (1..=400).collect::<Vec<u64>>());
        let (records, corruption) = read_records(&log.contents().unwrap());
        assert!(corruption.is_none());
        assert_eq!(records.len(), 400);
    }

    #[test]
    fn file_log_reopens_and_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.log");
        let entries = sample_entries();
        let expected = sample_log().contents().unwrap();
        {
            let (log, out) = VoteLog::open(&path, &QaConfig::default()).unwrap();
            assert_eq!(out.records, 0);
            log.set_sync(true);
            log.append_batch(&entries[..3]).unwrap();
        }
        // a crash in the middle of the fourth record
        let written = std::fs::metadata(&path).unwrap().len() as usize;
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&expected[written..written + 10]).unwrap();
        drop(f);

        let (log, out) = VoteLog::open(&path, &QaConfig::default()).unwrap();
        assert_eq!(out.records, 3);
        assert!(out.corruption.is_some());
        assert_eq!(log.len_bytes(), written as u64);
        for e in &entries[3..] {
            log.append(e).unwrap();
        }
        drop(log);
        assert_eq!(std::fs::read(&path).unwrap(), expected);
        let strict = replay(&path, &QaConfig::default(), ReplayMode::Strict).unwrap();
        assert_eq!(strict.records, 7);
    }
}
