#![allow(dead_code)]

use learnprof_core::dataset::{ResponseRecord, ResponseSet};
use uuid::Uuid;

pub fn rec(reader: u128, question: u128, chapter: u32, t: i64, score: u8) -> ResponseRecord {
    ResponseRecord {
        session_id: Uuid::from_u128(reader),
        question_id: Uuid::from_u128(1000 + question),
        quiz_name: format!("ch{chapter}"),
        chapter,
        attempt: 0,
        received_at_ms: t,
        score,
        duration_ms: 1000,
        answer: String::new(),
    }
}

/// Dense reader × question set from a score matrix, one chapter per question.
pub fn dense(scores: &[Vec<u8>]) -> ResponseSet {
    let mut records = Vec::new();
    for (r, row) in scores.iter().enumerate() {
        for (q, &s) in row.iter().enumerate() {
            records.push(rec(r as u128, q as u128, q as u32 + 1, (r * 100 + q) as i64, s));
        }
    }
    let chapters = 1..=scores.first().map_or(0, |r| r.len()) as u32;
    ResponseSet::new(records, chapters)
}
