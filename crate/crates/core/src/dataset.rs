//! Analysis-ready response data built from exported telemetry.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::book::{BookManifest, QuizRegistry};
use crate::error::{Error, Result};
use crate::quiz::grade;
use crate::stats::lower_median;
use crate::telemetry::StoredEvent;

/// One graded answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResponseRecord {
    pub session_id: Uuid,
    pub question_id: Uuid,
    pub quiz_name: String,
    pub chapter: u32,
    pub attempt: u32,
    pub received_at_ms: i64,
    pub score: u8,
    pub duration_ms: u64,
    /// Normalized answer text, used for incorrect-answer distributions.
    #[serde(default)]
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReaderClass {
    Trier,
    Dabbler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReaderProfile {
    pub session_id: Uuid,
    /// Distinct questions answered.
    pub questions_answered: usize,
    pub mean_score: f64,
    pub last_chapter: u32,
    pub class: ReaderClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassFilter {
    #[default]
    All,
    Triers,
    Dabblers,
}

impl ClassFilter {
    fn admits(self, class: ReaderClass) -> bool {
        match self {
            ClassFilter::All => true,
            ClassFilter::Triers => class == ReaderClass::Trier,
            ClassFilter::Dabblers => class == ReaderClass::Dabbler,
        }
    }
}

/// Immutable collection of response records with reader and question indexes.
#[derive(Debug, Clone, Default)]
pub struct ResponseSet {
    records: Vec<ResponseRecord>,
    readers: BTreeMap<Uuid, ReaderProfile>,
    questions: BTreeMap<Uuid, u32>,
    chapters: Vec<u32>,
    threshold: usize,
}

impl ResponseSet {
    /// `chapters` lists every chapter of the book; chapters referenced by
    /// records are added if missing.
    pub fn new(records: Vec<ResponseRecord>, chapters: impl IntoIterator<Item = u32>) -> Self {
        let mut chapter_set: BTreeSet<u32> = chapters.into_iter().collect();
        let mut questions = BTreeMap::new();
        for r in &records {
            questions.insert(r.question_id, r.chapter);
            chapter_set.insert(r.chapter);
        }
        let (threshold, profiles) = compute_profiles(&records);
        ResponseSet {
            records,
            readers: profiles.into_iter().map(|p| (p.session_id, p)).collect(),
            questions,
            chapters: chapter_set.into_iter().collect(),
            threshold,
        }
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    pub fn readers(&self) -> &BTreeMap<Uuid, ReaderProfile> {
        &self.readers
    }

    /// Question id to chapter.
    pub fn questions(&self) -> &BTreeMap<Uuid, u32> {
        &self.questions
    }

    pub fn chapters(&self) -> &[u32] {
        &self.chapters
    }

    /// Trier threshold: lower median of distinct questions answered.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Restricts to the given readers.
    pub fn filter_readers(&self, keep: &BTreeSet<Uuid>) -> ResponseSet {
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(&r.session_id))
            .cloned()
            .collect();
        ResponseSet::new(records, self.chapters.iter().copied())
    }

    /// Restricts to readers classified as triers in this set.
    pub fn triers(&self) -> ResponseSet {
        let keep = self
            .readers
            .values()
            .filter(|p| p.class == ReaderClass::Trier)
            .map(|p| p.session_id)
            .collect();
        self.filter_readers(&keep)
    }

    /// Restricts to questions in the given chapters.
    pub fn filter_chapters(&self, chapters: &BTreeSet<u32>) -> ResponseSet {
        let records = self
            .records
            .iter()
            .filter(|r| chapters.contains(&r.chapter))
            .cloned()
            .collect();
        ResponseSet::new(records, chapters.iter().copied())
    }

    pub fn index(&self) -> ResponseIndex {
        ResponseIndex::build(self)
    }
}

fn compute_profiles(records: &[ResponseRecord]) -> (usize, Vec<ReaderProfile>) {
    struct Acc {
        questions: BTreeSet<Uuid>,
        score_sum: u64,
        n: u64,
        last: (i64, u32),
    }
    let mut accs: BTreeMap<Uuid, Acc> = BTreeMap::new();
    for r in records {
        let acc = accs.entry(r.session_id).or_insert_with(|| Acc {
            questions: BTreeSet::new(),
            score_sum: 0,
            n: 0,
            last: (i64::MIN, 0),
        });
        acc.questions.insert(r.question_id);
        acc.score_sum += u64::from(r.score);
        acc.n += 1;
        // Ties on timestamp go to the higher chapter.
        acc.last = acc.last.max((r.received_at_ms, r.chapter));
    }
    let counts: Vec<usize> = accs.values().map(|a| a.questions.len()).collect();
    let threshold = lower_median(&counts).unwrap_or(0);
    let profiles = accs
        .into_iter()
        .map(|(session_id, a)| {
            let answered = a.questions.len();
            ReaderProfile {
                session_id,
                questions_answered: answered,
                mean_score: a.score_sum as f64 / a.n as f64,
                last_chapter: a.last.1,
                class: if answered >= threshold {
                    ReaderClass::Trier
                } else {
                    ReaderClass::Dabbler
                },
            }
        })
        .collect();
    (threshold, profiles)
}

/// Counters describing how an export was turned into records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadReport {
    pub lines: usize,
    pub skipped_lines: usize,
    pub answer_events: usize,
    pub bug_reports: usize,
    pub answers: usize,
    pub unknown_quiz_answers: usize,
    pub regraded: usize,
    pub client_graded: usize,
}

/// Reads an NDJSON export into records. Answers are regraded against the
/// question version the reader saw when the registry knows it; otherwise
/// the client's flag is used.
pub fn load(
    export: impl BufRead,
    manifest: &BookManifest,
    registry: &QuizRegistry,
) -> Result<(ResponseSet, LoadReport)> {
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for line in export.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let Ok(event) = serde_json::from_str::<StoredEvent>(&line) else {
            report.skipped_lines += 1;
            continue;
        };
        let payload = match event.answers() {
            None => {
                report.bug_reports += 1;
                continue;
            }
            Some(Ok(p)) => p,
            Some(Err(_)) => {
                report.skipped_lines += 1;
                continue;
            }
        };
        report.answer_events += 1;
        let chapter = manifest.quiz_chapter(&payload.quiz_name);
        for entry in &payload.answers {
            report.answers += 1;
            let Some(chapter) = chapter else {
                report.unknown_quiz_answers += 1;
                continue;
            };
            let graded = registry
                .get(&payload.commit_hash, entry.question_id)
                .and_then(|q| grade(q, &entry.answer).ok());
            let (score, answer) = match graded {
                Some(g) => {
                    report.regraded += 1;
                    (g.score, g.normalized_submission)
                }
                None => {
                    report.client_graded += 1;
                    (u8::from(entry.correct), submission_text(&entry.answer))
                }
            };
            records.push(ResponseRecord {
                session_id: payload.session_id,
                question_id: entry.question_id,
                quiz_name: payload.quiz_name.clone(),
                chapter,
                attempt: payload.attempt,
                received_at_ms: event.received_at_ms,
                score,
                duration_ms: entry.duration_ms,
                answer,
            });
        }
    }
    if report.skipped_lines > 0 && report.skipped_lines * 100 > report.lines {
        return Err(Error::TooManySkippedLines {
            skipped: report.skipped_lines,
            total: report.lines,
        });
    }
    Ok((ResponseSet::new(records, manifest.chapter_numbers()), report))
}

fn submission_text(sub: &crate::quiz::Submission) -> String {
    use crate::quiz::{normalize, Submission};
    match sub {
        Submission::MultipleChoice { selected } => selected.clone(),
        Submission::MultipleSelect { selected } => {
            selected.iter().cloned().collect::<Vec<_>>().join(" | ")
        }
        Submission::ShortAnswer { text } => normalize(text, false),
        Submission::Tracing {
            does_compile: true,
            stdout,
        } => format!("compiles: {}", normalize(stdout.as_deref().unwrap_or(""), false)),
        Submission::Tracing { .. } => "does not compile".into(),
    }
}

/// Keeps first attempts only. A reader answering the same question on two
/// visits keeps the earliest answer.
pub fn first_attempts(rs: &ResponseSet) -> ResponseSet {
    let mut order: Vec<usize> = (0..rs.records.len())
        .filter(|&i| rs.records[i].attempt == 0)
        .collect();
    order.sort_by_key(|&i| (rs.records[i].received_at_ms, i));
    let mut seen = BTreeSet::new();
    let mut keep = vec![false; rs.records.len()];
    for i in order {
        let r = &rs.records[i];
        if seen.insert((r.session_id, r.question_id)) {
            keep[i] = true;
        }
    }
    let records = rs
        .records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k).map(|(r, _)| r.clone())
        .collect();
    ResponseSet::new(records, rs.chapters.iter().copied())
}

/// Median split of readers into triers and dabblers.
pub fn classify_readers(rs: &ResponseSet) -> (usize, Vec<ReaderProfile>) {
    (rs.threshold, rs.readers.values().cloned().collect())
}

/// Fraction of readers (of the selected class) whose last answer was in each
/// chapter. Chapters nobody stopped at are reported as 0.
pub fn last_chapter_histogram(rs: &ResponseSet, filter: ClassFilter) -> BTreeMap<u32, f64> {
    let selected: Vec<&ReaderProfile> = rs
        .readers
        .values()
        .filter(|p| filter.admits(p.class))
        .collect();
    let mut counts: BTreeMap<u32, usize> = rs.chapters.iter().map(|&c| (c, 0)).collect();
    for p in &selected {
        *counts.entry(p.last_chapter).or_default() += 1;
    }
    let n = selected.len().max(1) as f64;
    counts
        .into_iter()
        .map(|(c, k)| (c, k as f64 / n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetSummary {
    pub records: usize,
    pub questions: usize,
    pub readers: usize,
    pub triers: usize,
    pub dabblers: usize,
    pub threshold: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load: Option<LoadReport>,
}

pub fn summarize_dataset(rs: &ResponseSet, load: Option<LoadReport>) -> DatasetSummary {
    let triers = rs
        .readers
        .values()
        .filter(|p| p.class == ReaderClass::Trier)
        .count();
    DatasetSummary {
        records: rs.records.len(),
        questions: rs.questions.len(),
        readers: rs.readers.len(),
        triers,
        dabblers: rs.readers.len() - triers,
        threshold: rs.threshold,
        load,
    }
}

pub fn write_records(rs: &ResponseSet, mut out: impl Write) -> Result<()> {
    for r in &rs.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(input: impl BufRead) -> Result<Vec<ResponseRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Sparse reader × question score matrix with dense integer indexes.
/// Questions and readers are ordered by id. Each (reader, question) pair
/// appears at most once; duplicates keep the earliest record.
#[derive(Debug, Clone)]
pub struct ResponseIndex {
    pub question_ids: Vec<Uuid>,
    pub question_chapters: Vec<u32>,
    pub reader_ids: Vec<Uuid>,
    /// Per question: (reader index, score).
    pub by_question: Vec<Vec<(u32, u8)>>,
    /// Per reader: (question index, score).
    pub by_reader: Vec<Vec<(u32, u8)>>,
    /// Per reader: chapter of the last answered question.
    pub last_chapter: Vec<u32>,
}

impl ResponseIndex {
    pub fn build(rs: &ResponseSet) -> Self {
        let question_ids: Vec<Uuid> = rs.questions.keys().copied().collect();
        let question_chapters = rs.questions.values().copied().collect();
        let reader_ids: Vec<Uuid> = rs.readers.keys().copied().collect();
        let q_pos: HashMap<Uuid, u32> = question_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i as u32))
            .collect();
        let r_pos: HashMap<Uuid, u32> = reader_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i as u32))
            .collect();

        let mut order: Vec<usize> = (0..rs.records.len()).collect();
        order.sort_by_key(|&i| (rs.records[i].received_at_ms, i));
        let mut seen = std::collections::HashSet::new();
        let mut by_question = vec![Vec::new(); question_ids.len()];
        let mut by_reader = vec![Vec::new(); reader_ids.len()];
        for i in order {
            let r = &rs.records[i];
            let qi = q_pos[&r.question_id];
            let ri = r_pos[&r.session_id];
            if seen.insert((ri, qi)) {
                by_question[qi as usize].push((ri, r.score));
                by_reader[ri as usize].push((qi, r.score));
            }
        }
        for v in by_question.iter_mut().chain(by_reader.iter_mut()) {
            v.sort_unstable();
        }
        let last_chapter = reader_ids
            .iter()
            .map(|id| rs.readers[id].last_chapter)
            .collect();
        ResponseIndex {
            question_ids,
            question_chapters,
            reader_ids,
            by_question,
            by_reader,
            last_chapter,
        }
    }

    pub fn n_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn n_readers(&self) -> usize {
        self.reader_ids.len()
    }

    /// Mean score of each reader over the questions they answered.
    pub fn abilities(&self) -> Vec<f64> {
        self.by_reader
            .iter()
            .map(|answers| {
                let sum: u32 = answers.iter().map(|&(_, s)| u32::from(s)).sum();
                sum as f64 / answers.len().max(1) as f64
            })
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn uuid(n: u128) -> Uuid {
        Uuid::from_u128(n)
    }

    pub fn rec(reader: u128, question: u128, chapter: u32, t: i64, score: u8) -> ResponseRecord {
        ResponseRecord {
            session_id: uuid(reader),
            question_id: uuid(1000 + question),
            quiz_name: format!("ch{chapter}"),
            chapter,
            attempt: 0,
            received_at_ms: t,
            score,
            duration_ms: 1000,
            answer: String::new(),
        }
    }
}
