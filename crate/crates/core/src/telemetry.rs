//! Wire types for answer and bug-report telemetry, and the stored event
//! envelope used by the NDJSON export.

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use uuid::Uuid;

use crate::book::is_commit_hash;
use crate::quiz::Submission;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnswerEntry {
    pub question_id: Uuid,
    pub answer: Submission,
    /// Graded by the widget; advisory only.
    pub correct: bool,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnswersPayload {
    pub session_id: Uuid,
    pub quiz_name: String,
    pub commit_hash: String,
    /// 0 for the first attempt, 1 and up for retries.
    pub attempt: u32,
    pub client_timestamp_ms: i64,
    pub answers: Vec<AnswerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BugReport {
    pub session_id: Uuid,
    pub question_id: Uuid,
    pub text: String,
    pub client_timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, message: &str) -> Self {
        FieldError {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

impl AnswersPayload {
    /// Parses and checks a request body. Errors name the offending field.
    pub fn parse(body: &str) -> Result<Self, FieldError> {
        let payload: AnswersPayload =
            serde_json::from_str(body).map_err(|e| FieldError::new("body", &e.to_string()))?;
        payload.validate()?;
        Ok(payload)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.quiz_name.trim().is_empty() {
            return Err(FieldError::new("quizName", "must not be empty"));
        }
        if !is_commit_hash(&self.commit_hash) {
            return Err(FieldError::new("commitHash", "expected 40 hex characters"));
        }
        if self.answers.is_empty() {
            return Err(FieldError::new("answers", "answers empty"));
        }
        Ok(())
    }
}

impl BugReport {
    pub fn parse(body: &str) -> Result<Self, FieldError> {
        let report: BugReport =
            serde_json::from_str(body).map_err(|e| FieldError::new("body", &e.to_string()))?;
        if report.text.trim().is_empty() {
            return Err(FieldError::new("text", "text empty"));
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EventKind {
    Answers,
    BugReport,
}

impl EventKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "answers" => Some(EventKind::Answers),
            "bugReport" | "bug-report" | "bug-reports" => Some(EventKind::BugReport),
            _ => None,
        }
    }
}

/// One line of the export: the request body verbatim plus server metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredEvent {
    pub event_id: u64,
    pub received_at_ms: i64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub body: Box<RawValue>,
}

impl StoredEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("stored events always serialize")
    }

    pub fn answers(&self) -> Option<serde_json::Result<AnswersPayload>> {
        (self.kind == EventKind::Answers).then(|| serde_json::from_str(self.body.get()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HASH: &str = "0123456789abcdef0123456789abcdef01234567";

    fn body(answers: &str) -> String {
        format!(
            r#"{{"sessionId":"6b1a7e6c-3f0e-4a43-9c55-64f5b6f0d001","quizName":"ch01","commitHash":"{HASH}","attempt":0,"clientTimestampMs":1,"answers":{answers}}}"#
        )
    }

    #[test]
    fn accepts_valid_payload() {
        let b = body(
            r#"[{"questionId":"6b1a7e6c-3f0e-4a43-9c55-64f5b6f0d002","answer":{"type":"ShortAnswer","text":"rustup"},"correct":true,"durationMs":2900}]"#,
        );
        let p = AnswersPayload::parse(&b).unwrap();
        assert_eq!(p.answers.len(), 1);
    }

    #[test]
    fn empty_answers_rejected() {
        let err = AnswersPayload::parse(&body("[]")).unwrap_err();
        assert_eq!(err.field, "answers");
        assert_eq!(err.message, "answers empty");
    }

    #[test]
    fn negative_duration_rejected() {
        let b = body(
            r#"[{"questionId":"6b1a7e6c-3f0e-4a43-9c55-64f5b6f0d002","answer":{"type":"ShortAnswer","text":"x"},"correct":true,"durationMs":-1}]"#,
        );
        assert!(AnswersPayload::parse(&b).is_err());
    }

    #[test]
    fn stored_event_keeps_body_bytes() {
        let raw = r#"{"b": 1,  "a":[2]}"#;
        let ev = StoredEvent {
            event_id: 3,
            received_at_ms: 10,
            kind: EventKind::BugReport,
            flags: vec![],
            body: RawValue::from_string(raw.to_string()).unwrap(),
        };
        let line = ev.to_line();
        assert!(line.contains(raw));
        let back: StoredEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back.body.get(), raw);
    }
}
