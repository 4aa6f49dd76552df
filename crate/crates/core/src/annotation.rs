//! Verdict journal, annotation state, spreadsheet import, annotator
//! agreement and the filtering step driven by accepted patterns.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{DsLabel, RelationInstance, StageLabel};
use crate::confidence::{SampleSentence, SdpPattern, Verdict};

pub const JOURNAL_ENV: &str = "SLP_JOURNAL";
pub const SESSION_BUDGET_SECS: u64 = 300;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("pattern `{sdp}` is not in the queue of `{relation}`")]
    UnknownPattern { relation: String, sdp: String },
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("journal {path}: {source}")]
    Journal {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} line {line}: {message}")]
    CorruptJournal {
        path: String,
        line: usize,
        message: String,
    },
    #[error("agreement undefined: {0}")]
    Agreement(String),
}

impl AnnotationError {
    /// HTTP status class for the service.
    pub fn status(&self) -> u16 {
        match self {
            AnnotationError::UnknownRelation(_) => 404,
            AnnotationError::UnknownPattern { .. }
            | AnnotationError::InvalidVerdict(_)
            | AnnotationError::Agreement(_) => 400,
            AnnotationError::Journal { .. } | AnnotationError::CorruptJournal { .. } => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub relation: String,
    pub sdp: String,
    pub verdict: Verdict,
    pub annotator_id: String,
    pub timestamp: u64,
    pub session_id: String,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Journal location: `SLP_JOURNAL` when set, `default` otherwise.
pub fn journal_path(default: &Path) -> PathBuf {
    std::env::var_os(JOURNAL_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| default.to_path_buf())
}

/// Append-only JSON-lines file of annotation events.
#[derive(Debug, Clone)]
pub struct Journal {
    path: PathBuf,
}

impl Journal {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Journal { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io_err(&self, source: std::io::Error) -> AnnotationError {
        AnnotationError::Journal {
            path: self.path.display().to_string(),
            source,
        }
    }

    /// Appends one event as a single write of a complete line.
    pub fn append(&self, event: &AnnotationEvent) -> Result<(), AnnotationError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| self.io_err(e))?;
        }
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| self.io_err(e))?;
        file.write_all(line.as_bytes()).map_err(|e| self.io_err(e))?;
        file.sync_data().map_err(|e| self.io_err(e))
    }

    /// All events in append order. A missing file is an empty journal; a
    /// torn final line (no trailing newline) is ignored.
    pub fn replay(&self) -> Result<Vec<AnnotationEvent>, AnnotationError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io_err(e)),
        };
        let mut reader = BufReader::new(file);
        let mut events = Vec::new();
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf).map_err(|e| self.io_err(e))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !buf.ends_with('\n') {
                log::warn!("{}: ignoring torn final line {line_no}", self.path.display());
                break;
            }
            if buf.trim().is_empty() {
                continue;
            }
            let event: AnnotationEvent =
                serde_json::from_str(buf.trim()).map_err(|e| AnnotationError::CorruptJournal {
                    path: self.path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                })?;
            events.push(event);
        }
        Ok(events)
    }
}

/// Latest verdict per (relation, sdp, annotator).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerdictState {
    verdicts: BTreeMap<(String, String, String), Verdict>,
}

impl VerdictState {
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a AnnotationEvent>) -> Self {
        let mut state = VerdictState::default();
        for e in events {
            state.apply(e);
        }
        state
    }

    pub fn apply(&mut self, event: &AnnotationEvent) {
        self.verdicts.insert(
            (
                event.relation.clone(),
                event.sdp.clone(),
                event.annotator_id.clone(),
            ),
            event.verdict,
        );
    }

    pub fn get(&self, relation: &str, sdp: &str, annotator: &str) -> Verdict {
        self.verdicts
            .get(&(relation.to_string(), sdp.to_string(), annotator.to_string()))
            .copied()
            .unwrap_or_default()
    }

    /// sdp -> verdict for one annotator on one relation.
    pub fn verdicts(&self, relation: &str, annotator: &str) -> BTreeMap<String, Verdict> {
        self.verdicts
            .iter()
            .filter(|((r, _, a), _)| r == relation && a == annotator)
            .map(|((_, s, _), v)| (s.clone(), *v))
            .collect()
    }

    pub fn accepted(&self, relation: &str, annotator: &str) -> HashSet<String> {
        self.verdicts(relation, annotator)
            .into_iter()
            .filter(|(_, v)| *v == Verdict::Accepted)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn annotators(&self) -> BTreeSet<String> {
        self.verdicts.keys().map(|(_, _, a)| a.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueRow {
    pub rank: usize,
    pub confidence: f64,
    pub pos_count: usize,
    pub neg_count: usize,
    pub sdp: String,
    pub samples: Vec<SampleSentence>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub relation: String,
    pub queue_size: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unlabeled: usize,
    pub session_id: Option<String>,
    pub session_elapsed_secs: u64,
    pub budget_secs: u64,
}

/// Queues plus the journal-backed verdict state. Every mutation goes
/// through [`AnnotationStore::record`], which writes the journal before it
/// touches memory.
#[derive(Debug)]
pub struct AnnotationStore {
    queues: BTreeMap<String, Vec<SdpPattern>>,
    known: BTreeMap<String, HashSet<String>>,
    journal: Journal,
    events: Vec<AnnotationEvent>,
    state: VerdictState,
    primary: String,
}

impl AnnotationStore {
    pub fn open(
        queues: BTreeMap<String, Vec<SdpPattern>>,
        journal: Journal,
        primary_annotator: &str,
    ) -> Result<Self, AnnotationError> {
        let events = journal.replay()?;
        let state = VerdictState::from_events(&events);
        let known = queues
            .iter()
            .map(|(r, q)| (r.clone(), q.iter().map(|p| p.sdp.clone()).collect()))
            .collect();
        Ok(AnnotationStore {
            queues,
            known,
            journal,
            events,
            state,
            primary: primary_annotator.to_string(),
        })
    }

    pub fn primary_annotator(&self) -> &str {
        &self.primary
    }

    pub fn relations(&self) -> impl Iterator<Item = (&String, usize)> {
        self.queues.iter().map(|(r, q)| (r, q.len()))
    }

    pub fn state(&self) -> &VerdictState {
        &self.state
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn has_pattern(&self, relation: &str, sdp: &str) -> bool {
        self.known.get(relation).is_some_and(|s| s.contains(sdp))
    }

    fn queue(&self, relation: &str) -> Result<&Vec<SdpPattern>, AnnotationError> {
        self.queues
            .get(relation)
            .ok_or_else(|| AnnotationError::UnknownRelation(relation.to_string()))
    }

    /// Validates, journals, then applies one event.
    pub fn record(&mut self, event: AnnotationEvent) -> Result<Verdict, AnnotationError> {
        self.queue(&event.relation)?;
        if event.verdict == Verdict::Unlabeled {
            return Err(AnnotationError::InvalidVerdict(
                "verdict must be ACCEPTED or REJECTED".into(),
            ));
        }
        if event.annotator_id.trim().is_empty() {
            return Err(AnnotationError::InvalidVerdict("empty annotator_id".into()));
        }
        if !self.has_pattern(&event.relation, &event.sdp) {
            return Err(AnnotationError::UnknownPattern {
                relation: event.relation.clone(),
                sdp: event.sdp.clone(),
            });
        }
        self.journal.append(&event)?;
        self.state.apply(&event);
        let verdict = event.verdict;
        self.events.push(event);
        Ok(verdict)
    }

    pub fn queue_view(
        &self,
        relation: &str,
        top_k: Option<usize>,
        annotator: Option<&str>,
    ) -> Result<Vec<QueueRow>, AnnotationError> {
        let queue = self.queue(relation)?;
        let annotator = annotator.unwrap_or(&self.primary);
        Ok(queue
            .iter()
            .take(top_k.unwrap_or(usize::MAX))
            .enumerate()
            .map(|(i, p)| QueueRow {
                rank: i + 1,
                confidence: p.confidence,
                pos_count: p.pos_count,
                neg_count: p.neg_count,
                sdp: p.sdp.clone(),
                samples: p.sample_sentences.clone(),
                verdict: self.state.get(relation, &p.sdp, annotator),
            })
            .collect())
    }

    pub fn progress(&self, relation: &str, now: u64) -> Result<Progress, AnnotationError> {
        let queue = self.queue(relation)?;
        let mut progress = Progress {
            relation: relation.to_string(),
            queue_size: queue.len(),
            accepted: 0,
            rejected: 0,
            unlabeled: 0,
            session_id: None,
            session_elapsed_secs: 0,
            budget_secs: SESSION_BUDGET_SECS,
        };
        for p in queue {
            match self.state.get(relation, &p.sdp, &self.primary) {
                Verdict::Accepted => progress.accepted += 1,
                Verdict::Rejected => progress.rejected += 1,
                Verdict::Unlabeled => progress.unlabeled += 1,
            }
        }
        if let Some(last) = self.events.iter().rev().find(|e| e.relation == relation) {
            let started = self
                .events
                .iter()
                .filter(|e| e.relation == relation && e.session_id == last.session_id)
                .map(|e| e.timestamp)
                .min()
                .unwrap_or(last.timestamp);
            progress.session_id = Some(last.session_id.clone());
            progress.session_elapsed_secs = now.saturating_sub(started);
        }
        Ok(progress)
    }

    /// Kappa over the patterns both annotators judged.
    pub fn agreement(&self, relation: &str, a: &str, b: &str) -> Result<(f64, usize), AnnotationError> {
        self.queue(relation)?;
        let va = self.state.verdicts(relation, a);
        let vb = self.state.verdicts(relation, b);
        let shared: BTreeMap<String, Verdict> = va
            .iter()
            .filter(|(k, _)| vb.contains_key(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let other: BTreeMap<String, Verdict> = vb
            .into_iter()
            .filter(|(k, _)| shared.contains_key(k))
            .collect();
        let kappa = cohen_kappa(&shared, &other)?;
        Ok((kappa, shared.len()))
    }
}

/// Chance-corrected agreement of two verdict maps over the same keys.
/// Both annotators giving one identical constant label counts as 1.0.
pub fn cohen_kappa(
    a: &BTreeMap<String, Verdict>,
    b: &BTreeMap<String, Verdict>,
) -> Result<f64, AnnotationError> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(AnnotationError::Agreement(
            "verdict maps cover different patterns".into(),
        ));
    }
    if a.is_empty() {
        return Err(AnnotationError::Agreement("no shared patterns".into()));
    }
    let n = a.len() as f64;
    let mut agree = 0usize;
    let mut marg_a: BTreeMap<Verdict, usize> = BTreeMap::new();
    let mut marg_b: BTreeMap<Verdict, usize> = BTreeMap::new();
    for ((_, va), (_, vb)) in a.iter().zip(b.iter()) {
        if va == vb {
            agree += 1;
        }
        *marg_a.entry(*va).or_insert(0) += 1;
        *marg_b.entry(*vb).or_insert(0) += 1;
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg_a
        .iter()
        .map(|(v, ca)| (*ca as f64 / n) * (marg_b.get(v).copied().unwrap_or(0) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImportReport {
    pub events: usize,
    pub accepted: usize,
    pub warnings: usize,
}

/// Imports a filled-in queue spreadsheet: `x` in the verdict column accepts
/// a row, a blank rejects it. Rows naming patterns outside the queue are
/// skipped and counted as warnings.
pub fn import_tsv(
    store: &mut AnnotationStore,
    path: &Path,
    relation: &str,
    annotator_id: &str,
    session_id: &str,
) -> Result<ImportReport, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Journal {
        path: path.display().to_string(),
        source,
    })?;
    store.queue(relation)?;
    let mut report = ImportReport::default();
    let mut sdp_col = 4;
    let mut verdict_col: Option<usize> = None;
    let timestamp = now_secs();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if i == 0 && cols.first() == Some(&"rank") {
            sdp_col = cols.iter().position(|c| *c == "sdp").unwrap_or(4);
            verdict_col = cols.iter().position(|c| *c == "verdict");
            continue;
        }
        let Some(sdp) = cols.get(sdp_col) else {
            report.warnings += 1;
            continue;
        };
        if !store.has_pattern(relation, sdp) {
            log::warn!("{}:{}: pattern `{sdp}` is not in the `{relation}` queue", path.display(), i + 1);
            report.warnings += 1;
            continue;
        }
        let mark = verdict_col
            .and_then(|c| cols.get(c))
            .or(cols.last())
            .map(|s| s.trim())
            .unwrap_or("");
        let verdict = if mark.eq_ignore_ascii_case("x") {
            Verdict::Accepted
        } else {
            Verdict::Rejected
        };
        store.record(AnnotationEvent {
            relation: relation.to_string(),
            sdp: sdp.to_string(),
            verdict,
            annotator_id: annotator_id.to_string(),
            timestamp,
            session_id: session_id.to_string(),
        })?;
        report.events += 1;
        if verdict == Verdict::Accepted {
            report.accepted += 1;
        }
    }
    Ok(report)
}

/// Marks positives whose SDP or pattern key was accepted KEPT and every
/// other positive DISCARDED; negatives stay UNTOUCHED.
pub fn filter_instances(instances: &mut [RelationInstance], accepted: &HashSet<String>) {
    for inst in instances {
        inst.stage_label = match inst.ds_label {
            DsLabel::Negative => StageLabel::Untouched,
            DsLabel::Positive => {
                if accepted.contains(&inst.sdp) || accepted.contains(&inst.pattern) {
                    StageLabel::Kept
                } else {
                    StageLabel::Discarded
                }
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, EntityTag};
    use proptest::prelude::*;

    fn vmap(vs: &[Verdict]) -> BTreeMap<String, Verdict> {
        vs.iter().enumerate().map(|(i, v)| (format!("p{i}"), *v)).collect()
    }

    use Verdict::{Accepted as A, Rejected as R};

    #[test]
    fn kappa_cases() {
        let m = vmap(&[A, R, A, R, R]);
        assert_eq!(cohen_kappa(&m, &m).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&vmap(&[A, A, R, R]), &vmap(&[A, R, A, R])).unwrap(), 0.0);
        assert_eq!(cohen_kappa(&vmap(&[A, A]), &vmap(&[A, A])).unwrap(), 1.0);
        assert!(cohen_kappa(&vmap(&[A]), &vmap(&[A, R])).is_err());
        // complete disagreement on balanced labels
        assert_eq!(cohen_kappa(&vmap(&[A, R]), &vmap(&[R, A])).unwrap(), -1.0);
    }

    fn pattern(sdp: &str) -> SdpPattern {
        SdpPattern {
            relation: "r".into(),
            sdp: sdp.into(),
            pos_count: 1,
            neg_count: 0,
            confidence: 2.0,
            verdict: Verdict::Unlabeled,
            sample_sentences: vec![],
        }
    }

    fn store(dir: &Path, sdps: &[&str]) -> AnnotationStore {
        let queues = BTreeMap::from([("r".to_string(), sdps.iter().map(|s| pattern(s)).collect())]);
        AnnotationStore::open(queues, Journal::new(dir.join("journal.jsonl")), "expert").unwrap()
    }

    fn event(sdp: &str, verdict: Verdict, who: &str) -> AnnotationEvent {
        AnnotationEvent {
            relation: "r".into(),
            sdp: sdp.into(),
            verdict,
            annotator_id: who.into(),
            timestamp: 100,
            session_id: "s1".into(),
        }
    }

    #[test]
    fn read_your_write_and_idempotent_effect() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), &["a", "b"]);
        s.record(event("a", A, "expert")).unwrap();
        s.record(event("a", A, "expert")).unwrap();
        let view = s.queue_view("r", None, None).unwrap();
        assert_eq!(view[0].verdict, A);
        assert_eq!(view[1].verdict, Verdict::Unlabeled);
        let text = fs::read_to_string(dir.path().join("journal.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(matches!(
            s.record(event("zzz", A, "expert")),
            Err(AnnotationError::UnknownPattern { .. })
        ));
        let mut bad = event("a", A, "expert");
        bad.relation = "nope".into();
        assert_eq!(s.record(bad).unwrap_err().status(), 404);
        assert_eq!(s.record(event("a", Verdict::Unlabeled, "expert")).unwrap_err().status(), 400);
    }

    #[test]
    fn failed_journal_write_leaves_state_untouched() {
        let dir = tempfile::tempdir().unwrap();
        // the journal path is a directory, so appends fail
        let jpath = dir.path().join("j");
        fs::create_dir(&jpath).unwrap();
        let queues = BTreeMap::from([("r".to_string(), vec![pattern("a")])]);
        let journal = Journal::new(&jpath);
        let mut s = AnnotationStore {
            queues: queues.clone(),
            known: BTreeMap::from([("r".to_string(), HashSet::from(["a".to_string()]))]),
            journal,
            events: vec![],
            state: VerdictState::default(),
            primary: "expert".into(),
        };
        let err = s.record(event("a", A, "expert")).unwrap_err();
        assert_eq!(err.status(), 500);
        assert_eq!(s.state().get("r", "a", "expert"), Verdict::Unlabeled);
        assert!(s.events().is_empty());
    }

    #[test]
    fn torn_last_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let j = Journal::new(&path);
        j.append(&event("a", A, "x")).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"relation\":\"r\",\"sd").unwrap();
        assert_eq!(j.replay().unwrap().len(), 1);
    }

    #[test]
    fn progress_counts_and_session_time() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), &["a", "b", "c"]);
        let mut e = event("a", A, "expert");
        e.timestamp = 1000;
        s.record(e).unwrap();
        let mut e = event("b", R, "expert");
        e.timestamp = 1100;
        s.record(e).unwrap();
        let p = s.progress("r", 1200).unwrap();
        assert_eq!((p.accepted, p.rejected, p.unlabeled), (1, 1, 1));
        assert_eq!(p.session_elapsed_secs, 200);
        assert_eq!(p.budget_secs, 300);
    }

    #[test]
    fn import_counts_and_skips_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), &["a", "b", "c"]);
        let tsv = dir.path().join("q.tsv");
        fs::write(
            &tsv,
            "rank\tconfidence\tpos_count\tneg_count\tsdp\tsample_1\tverdict\n\
             1\t3\t2\t0\ta\tx y\tx\n2\t2\t1\t0\tb\t\t\n3\t1\t0\t0\tzzz\t\tx\n",
        )
        .unwrap();
        let rep = import_tsv(&mut s, &tsv, "r", "expert", "s").unwrap();
        assert_eq!(rep, ImportReport { events: 2, accepted: 1, warnings: 1 });
        let empty = dir.path().join("e.tsv");
        fs::write(&empty, "").unwrap();
        assert_eq!(import_tsv(&mut s, &empty, "r", "expert", "s").unwrap().events, 0);
    }

    fn inst(sdp: &str, label: DsLabel) -> RelationInstance {
        let m = |f: usize| EntityMention {
            doc_id: "d".into(),
            sentence_id: 0,
            first: f,
            last: f,
            head: f,
            entity_type: EntityTag::Person,
            kb_id: None,
        };
        let mut i = RelationInstance::new("org:top_members_employees", m(1), m(2), label);
        i.sdp = sdp.into();
        i.pattern = format!("{sdp} || x");
        i
    }

    #[test]
    fn filtering() {
        let chairman = "PER<-appos<-chairman->appos->ORG";
        let founder = "ORG<-nn<-founder->prep_of->PER";
        let mut insts = vec![
            inst(chairman, DsLabel::Positive),
            inst(founder, DsLabel::Positive),
            inst(founder, DsLabel::Negative),
        ];
        filter_instances(&mut insts, &HashSet::from([chairman.to_string()]));
        assert_eq!(insts[0].stage_label, StageLabel::Kept);
        assert_eq!(insts[1].stage_label, StageLabel::Discarded);
        assert_eq!(insts[2].stage_label, StageLabel::Untouched);
        filter_instances(&mut insts, &HashSet::new());
        assert_eq!(insts[0].stage_label, StageLabel::Discarded);
        // a verb-less pattern key also selects
        let key = insts[1].pattern.clone();
        filter_instances(&mut insts, &HashSet::from([key]));
        assert_eq!(insts[1].stage_label, StageLabel::Kept);
    }

    proptest! {
        #[test]
        fn replay_matches_live_state(ops in proptest::collection::vec((0usize..4, any::<bool>(), 0usize..3), 0..60)) {
            let dir = tempfile::tempdir().unwrap();
            let sdps = ["a", "b", "c", "d"];
            let mut live = store(dir.path(), &sdps);
            for (p, acc, who) in &ops {
                let v = if *acc { A } else { R };
                live.record(event(sdps[*p], v, ["x", "y", "z"][*who])).unwrap();
            }
            let replayed = store(dir.path(), &sdps);
            prop_assert_eq!(replayed.state(), live.state());
            prop_assert_eq!(replayed.events(), live.events());
        }
    }
}
