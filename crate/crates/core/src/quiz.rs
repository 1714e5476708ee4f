//! Declarative quiz content: parsing, validation and grading.
//!
//! Quizzes are authored as TOML documents with one `[[questions]]` table per
//! question. The layout mirrors the mdBook quiz format:
//!
//! ```toml
//! [[questions]]
//! id = "1665d1ef-961f-4451-a988-ec46121531f9"
//! type = "MultipleChoice"
//! prompt.prompt = "Which call will panic?"
//! prompt.distractors = ["a", "b"]
//! answer.answer = "c"
//! context = "Explanation shown after answering."
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};

/// The four supported question formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionKind {
    MultipleChoice,
    MultipleSelect,
    ShortAnswer,
    Tracing,
}

impl QuestionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::MultipleChoice => "MultipleChoice",
            QuestionKind::MultipleSelect => "MultipleSelect",
            QuestionKind::ShortAnswer => "ShortAnswer",
            QuestionKind::Tracing => "Tracing",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "MultipleChoice" => QuestionKind::MultipleChoice,
            "MultipleSelect" => QuestionKind::MultipleSelect,
            "ShortAnswer" => QuestionKind::ShortAnswer,
            "Tracing" => QuestionKind::Tracing,
            _ => return None,
        })
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Answer key, one variant per question kind. Options are identified by their
/// canonical text because display order is shuffled per reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum AnswerKey {
    Choice {
        correct_text: String,
    },
    MultiSelect {
        correct_texts: BTreeSet<String>,
    },
    Short {
        accepted_text: String,
        #[serde(default)]
        case_sensitive: bool,
    },
    Tracing {
        does_compile: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_stdout: Option<String>,
    },
}

impl AnswerKey {
    pub fn kind(&self) -> QuestionKind {
        match self {
            AnswerKey::Choice { .. } => QuestionKind::MultipleChoice,
            AnswerKey::MultiSelect { .. } => QuestionKind::MultipleSelect,
            AnswerKey::Short { .. } => QuestionKind::ShortAnswer,
            AnswerKey::Tracing { .. } => QuestionKind::Tracing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Question {
    pub id: Uuid,
    pub prompt: String,
    /// Program text for tracing questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    pub answer_key: AnswerKey,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distractors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub justification: bool,
}

fn default_true() -> bool {
    true
}

impl Question {
    pub fn kind(&self) -> QuestionKind {
        self.answer_key.kind()
    }

    /// All option texts (correct and distractors) for choice kinds, in
    /// authoring order. Empty for other kinds.
    pub fn options(&self) -> Vec<&str> {
        let mut out: Vec<&str> = match &self.answer_key {
            AnswerKey::Choice { correct_text } => vec![correct_text.as_str()],
            AnswerKey::MultiSelect { correct_texts } => {
                correct_texts.iter().map(String::as_str).collect()
            }
            _ => return Vec::new(),
        };
        out.extend(self.distractors.iter().map(String::as_str));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quiz {
    pub name: String,
    pub questions: Vec<Question>,
}

impl Quiz {
    pub fn question(&self, id: Uuid) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// A reader's raw answer as sent by the quiz widget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all_fields = "camelCase")]
pub enum Submission {
    MultipleChoice {
        selected: String,
    },
    MultipleSelect {
        selected: BTreeSet<String>,
    },
    ShortAnswer {
        text: String,
    },
    Tracing {
        does_compile: bool,
        #[serde(default)]
        stdout: Option<String>,
    },
}

impl Submission {
    pub fn kind(&self) -> QuestionKind {
        match self {
            Submission::MultipleChoice { .. } => QuestionKind::MultipleChoice,
            Submission::MultipleSelect { .. } => QuestionKind::MultipleSelect,
            Submission::ShortAnswer { .. } => QuestionKind::ShortAnswer,
            Submission::Tracing { .. } => QuestionKind::Tracing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GradedAnswer {
    pub score: u8,
    pub normalized_submission: String,
}

/// Trim, collapse internal whitespace runs to a single space, and casefold
/// unless `case_sensitive`.
pub fn normalize(text: &str, case_sensitive: bool) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if case_sensitive {
        collapsed
    } else {
        collapsed.to_lowercase()
    }
}

/// Grades a submission against a question's key. Scores are binary; multiple
/// select requires exact set equality.
pub fn grade(question: &Question, submission: &Submission) -> Result<GradedAnswer> {
    let (score, normalized) = match (&question.answer_key, submission) {
        (AnswerKey::Choice { correct_text }, Submission::MultipleChoice { selected }) => {
            (selected == correct_text, selected.clone())
        }
        (AnswerKey::MultiSelect { correct_texts }, Submission::MultipleSelect { selected }) => {
            let joined = selected.iter().cloned().collect::<Vec<_>>().join(" | ");
            (selected == correct_texts, joined)
        }
        (
            AnswerKey::Short {
                accepted_text,
                case_sensitive,
            },
            Submission::ShortAnswer { text },
        ) => {
            let norm = normalize(text, *case_sensitive);
            (norm == normalize(accepted_text, *case_sensitive), norm)
        }
        (
            AnswerKey::Tracing {
                does_compile,
                expected_stdout,
            },
            Submission::Tracing {
                does_compile: submitted,
                stdout,
            },
        ) => {
            let out = normalize(stdout.as_deref().unwrap_or(""), false);
            let score = if *does_compile {
                *submitted && out == normalize(expected_stdout.as_deref().unwrap_or(""), false)
            } else {
                !*submitted
            };
            let normalized = if *submitted {
                format!("compiles: {out}")
            } else {
                "does not compile".to_string()
            };
            (score, normalized)
        }
        (key, sub) => {
            return Err(Error::KindMismatch {
                question: question.id,
                expected: key.kind(),
                found: sub.kind(),
            })
        }
    };
    Ok(GradedAnswer {
        score: u8::from(score),
        normalized_submission: normalized,
    })
}

// ---------------------------------------------------------------------------
// TOML layout

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawQuiz {
    #[serde(default)]
    questions: Vec<RawQuestion>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawQuestion {
    id: Option<String>,
    #[serde(rename = "type")]
    kind: Option<String>,
    prompt: Option<RawPrompt>,
    answer: Option<RawAnswer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shuffle: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    justification: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawPrompt {
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    program: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distractors: Option<Vec<String>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawAnswer {
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<RawAnswerValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    case_sensitive: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    does_compile: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stdout: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawAnswerValue {
    One(String),
    Many(Vec<String>),
}

/// Parses a quiz definition. `name` is usually the quiz file path relative
/// to the quiz root with the extension stripped.
///
/// Structural problems that prevent building a [`Question`] are errors here;
/// content problems (overlapping keys, missing distractors) are left to
/// [`validate_quiz`].
pub fn parse_quiz(name: &str, source: &str) -> Result<Quiz> {
    let raw: RawQuiz = toml::from_str(source).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_col(source, span.start))
            .unwrap_or((0, 0));
        Error::QuizSyntax {
            quiz: name.to_string(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if raw.questions.is_empty() {
        return Err(Error::EmptyQuiz(name.to_string()));
    }
    let mut seen = HashSet::new();
    let mut questions = Vec::with_capacity(raw.questions.len());
    for (index, rq) in raw.questions.into_iter().enumerate() {
        let q = question_from_raw(name, index, rq)?;
        if !seen.insert(q.id) {
            return Err(Error::DuplicateId {
                quiz: name.to_string(),
                id: q.id,
            });
        }
        questions.push(q);
    }
    Ok(Quiz {
        name: name.to_string(),
        questions,
    })
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn question_from_raw(quiz: &str, index: usize, rq: RawQuestion) -> Result<Question> {
    let missing = |field: &str| Error::MissingField {
        quiz: quiz.to_string(),
        index,
        field: field.to_string(),
    };
    let id_text = rq.id.ok_or_else(|| missing("id"))?;
    let id = Uuid::parse_str(&id_text).map_err(|e| Error::InvalidField {
        quiz: quiz.to_string(),
        index,
        field: "id".into(),
        message: e.to_string(),
    })?;
    let kind_text = rq.kind.ok_or_else(|| missing("type"))?;
    let kind = QuestionKind::parse(&kind_text).ok_or_else(|| Error::UnknownQuestionType {
        quiz: quiz.to_string(),
        index,
        kind: kind_text.clone(),
    })?;
    let prompt = rq.prompt.unwrap_or_default();
    let answer = rq.answer.ok_or_else(|| missing("answer"))?;

    let answer_key = match kind {
        QuestionKind::MultipleChoice => match answer.answer {
            Some(RawAnswerValue::One(text)) => AnswerKey::Choice { correct_text: text },
            Some(RawAnswerValue::Many(_)) => {
                return Err(Error::InvalidField {
                    quiz: quiz.to_string(),
                    index,
                    field: "answer.answer".into(),
                    message: "MultipleChoice expects a single answer string".into(),
                })
            }
            None => return Err(missing("answer.answer")),
        },
        QuestionKind::MultipleSelect => {
            let texts = match answer.answer {
                Some(RawAnswerValue::Many(v)) => v,
                Some(RawAnswerValue::One(s)) => vec![s],
                None => return Err(missing("answer.answer")),
            };
            AnswerKey::MultiSelect {
                correct_texts: texts.into_iter().collect(),
            }
        }
        QuestionKind::ShortAnswer => match answer.answer {
            Some(RawAnswerValue::One(text)) => AnswerKey::Short {
                accepted_text: text,
                case_sensitive: answer.case_sensitive.unwrap_or(false),
            },
            Some(RawAnswerValue::Many(_)) => {
                return Err(Error::InvalidField {
                    quiz: quiz.to_string(),
                    index,
                    field: "answer.answer".into(),
                    message: "ShortAnswer expects a single answer string".into(),
                })
            }
            None => return Err(missing("answer.answer")),
        },
        QuestionKind::Tracing => AnswerKey::Tracing {
            does_compile: answer
                .does_compile
                .ok_or_else(|| missing("answer.doesCompile"))?,
            expected_stdout: answer.stdout,
        },
    };

    let (prompt_text, program) = match kind {
        QuestionKind::Tracing => (
            prompt.prompt.unwrap_or_default(),
            Some(prompt.program.ok_or_else(|| missing("prompt.program"))?),
        ),
        _ => (prompt.prompt.ok_or_else(|| missing("prompt.prompt"))?, None),
    };

    Ok(Question {
        id,
        prompt: prompt_text,
        program,
        answer_key,
        distractors: prompt.distractors.unwrap_or_default(),
        context: rq.context,
        shuffle: rq.shuffle.unwrap_or(true),
        justification: rq.justification.unwrap_or(false),
    })
}

/// Serializes a quiz back into the authoring TOML layout.
pub fn serialize_quiz(quiz: &Quiz) -> Result<String> {
    let raw = RawQuiz {
        questions: quiz.questions.iter().map(question_to_raw).collect(),
    };
    Ok(toml::to_string(&raw)?)
}

fn question_to_raw(q: &Question) -> RawQuestion {
    let mut answer = RawAnswer::default();
    match &q.answer_key {
        AnswerKey::Choice { correct_text } => {
            answer.answer = Some(RawAnswerValue::One(correct_text.clone()))
        }
        AnswerKey::MultiSelect { correct_texts } => {
            answer.answer = Some(RawAnswerValue::Many(correct_texts.iter().cloned().collect()))
        }
        AnswerKey::Short {
            accepted_text,
            case_sensitive,
        } => {
            answer.answer = Some(RawAnswerValue::One(accepted_text.clone()));
            answer.case_sensitive = case_sensitive.then_some(true);
        }
        AnswerKey::Tracing {
            does_compile,
            expected_stdout,
        } => {
            answer.does_compile = Some(*does_compile);
            answer.stdout = expected_stdout.clone();
        }
    }
    let prompt = RawPrompt {
        prompt: (q.kind() != QuestionKind::Tracing || !q.prompt.is_empty())
            .then(|| q.prompt.clone()),
        program: q.program.clone(),
        distractors: (!q.distractors.is_empty()).then(|| q.distractors.clone()),
    };
    RawQuestion {
        id: Some(q.id.to_string()),
        kind: Some(q.kind().as_str().to_string()),
        prompt: Some(prompt),
        answer: Some(answer),
        context: q.context.clone(),
        shuffle: (!q.shuffle).then_some(false),
        justification: q.justification.then_some(true),
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub quiz: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_id: Option<Uuid>,
    pub severity: Severity,
    pub code: FindingCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingCode {
    /// Choice question without any distractor.
    MissingDistractors,
    /// MultipleSelect with no correct option or fewer than two options.
    TooFewOptions,
    /// An option text is both part of the key and a distractor, or listed twice.
    KeyOptionMismatch,
    /// Empty answer text.
    EmptyAnswer,
    /// Non-compiling tracing key that still carries expected output.
    StdoutOnFailingProgram,
    /// Compiling tracing key without expected output.
    MissingStdout,
    /// The compile oracle disagrees with the tracing key.
    OracleMismatch,
    /// The compile oracle could not be run.
    OracleUnavailable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.findings.extend(other.findings);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.findings {
            let sev = match f.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            let code = serde_json::to_value(f.code)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            match f.question_id {
                Some(id) => out.push_str(&format!(
                    "{sev}[{code}] {}:{id}: {}\n",
                    f.quiz, f.message
                )),
                None => out.push_str(&format!("{sev}[{code}] {}: {}\n", f.quiz, f.message)),
            }
        }
        out
    }
}

/// Result of compiling and running a program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub compiles: bool,
    #[serde(default)]
    pub stdout: String,
}

/// Something that can decide whether a program compiles and what it prints.
pub trait CompileOracle: Send + Sync {
    fn check(&self, program: &str) -> std::result::Result<OracleVerdict, String>;
}

/// An oracle backed by an external command. The program is written to the
/// command's stdin; the command must print `{"compiles": bool, "stdout": str}`.
#[derive(Debug, Clone)]
pub struct CommandOracle {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandOracle {
    /// Splits a command line on whitespace.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(CommandOracle {
            program,
            args: parts.collect(),
        })
    }
}

impl CompileOracle for CommandOracle {
    fn check(&self, program: &str) -> std::result::Result<OracleVerdict, String> {
        use std::io::Write;
        use std::process::{Command, Stdio};

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.program))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(program.as_bytes())
            .map_err(|e| format!("cannot write program to oracle: {e}"))?;
        let output = child
            .wait_with_output()
            .map_err(|e| format!("oracle failed: {e}"))?;
        if !output.status.success() {
            return Err(format!("oracle exited with {}", output.status));
        }
        serde_json::from_slice(&output.stdout).map_err(|e| format!("bad oracle output: {e}"))
    }
}

/// An in-memory oracle answering from a fixed table; unknown programs are an
/// oracle failure.
#[derive(Debug, Clone, Default)]
pub struct StubOracle {
    pub verdicts: BTreeMap<String, OracleVerdict>,
}

impl StubOracle {
    pub fn with(mut self, program: &str, compiles: bool, stdout: &str) -> Self {
        self.verdicts.insert(
            program.trim().to_string(),
            OracleVerdict {
                compiles,
                stdout: stdout.to_string(),
            },
        );
        self
    }
}

impl CompileOracle for StubOracle {
    fn check(&self, program: &str) -> std::result::Result<OracleVerdict, String> {
        self.verdicts
            .get(program.trim())
            .cloned()
            .ok_or_else(|| "program not known to stub oracle".to_string())
    }
}

/// Checks every question's schema and, for tracing questions, compares the
/// key with the oracle's verdict. Without an oracle, or when it cannot run,
/// semantic checks are skipped with a warning.
pub fn validate_quiz(quiz: &Quiz, oracle: Option<&dyn CompileOracle>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut push = |q: &Question, severity, code, message: String| {
        report.findings.push(Finding {
            quiz: quiz.name.clone(),
            question_id: Some(q.id),
            severity,
            code,
            message,
        })
    };
    let mut oracle_failed = false;

    for q in &quiz.questions {
        match &q.answer_key {
            AnswerKey::Choice { correct_text } => {
                if correct_text.trim().is_empty() {
                    push(q, Severity::Error, FindingCode::EmptyAnswer, "answer is empty".into());
                }
                if q.distractors.is_empty() {
                    push(
                        q,
                        Severity::Error,
                        FindingCode::MissingDistractors,
                        "multiple choice question needs at least one distractor".into(),
                    );
                }
                check_options(q, &mut push);
            }
            AnswerKey::MultiSelect { correct_texts } => {
                if correct_texts.is_empty() {
                    push(
                        q,
                        Severity::Error,
                        FindingCode::TooFewOptions,
                        "multiple select question needs at least one correct option".into(),
                    );
                } else if correct_texts.len() + q.distractors.len() < 2 {
                    push(
                        q,
                        Severity::Error,
                        FindingCode::TooFewOptions,
                        "multiple select question needs at least two options".into(),
                    );
                }
                check_options(q, &mut push);
            }
            AnswerKey::Short { accepted_text, .. } => {
                if accepted_text.trim().is_empty() {
                    push(q, Severity::Error, FindingCode::EmptyAnswer, "answer is empty".into());
                }
            }
            AnswerKey::Tracing {
                does_compile,
                expected_stdout,
            } => {
                if !does_compile && expected_stdout.is_some() {
                    push(
                        q,
                        Severity::Error,
                        FindingCode::StdoutOnFailingProgram,
                        "doesCompile = false but stdout is given".into(),
                    );
                }
                if *does_compile && expected_stdout.is_none() {
                    push(
                        q,
                        Severity::Error,
                        FindingCode::MissingStdout,
                        "doesCompile = true but stdout is missing".into(),
                    );
                }
                let Some(oracle) = oracle else { continue };
                if oracle_failed {
                    continue;
                }
                let program = q.program.as_deref().unwrap_or_default();
                match oracle.check(program) {
                    Ok(verdict) => {
                        if verdict.compiles != *does_compile {
                            push(
                                q,
                                Severity::Error,
                                FindingCode::OracleMismatch,
                                format!(
                                    "key says doesCompile = {does_compile} but the compiler says {}",
                                    verdict.compiles
                                ),
                            );
                        } else if *does_compile {
                            let expected = normalize(expected_stdout.as_deref().unwrap_or(""), false);
                            if normalize(&verdict.stdout, false) != expected {
                                push(
                                    q,
                                    Severity::Error,
                                    FindingCode::OracleMismatch,
                                    format!(
                                        "key stdout {:?} differs from actual stdout {:?}",
                                        expected_stdout.as_deref().unwrap_or(""),
                                        verdict.stdout
                                    ),
                                );
                            }
                        }
                    }
                    Err(message) => {
                        oracle_failed = true;
                        push(
                            q,
                            Severity::Warning,
                            FindingCode::OracleUnavailable,
                            format!("compile oracle unavailable, semantic checks skipped: {message}"),
                        );
                    }
                }
            }
        }
    }
    report
}

fn check_options(q: &Question, push: &mut impl FnMut(&Question, Severity, FindingCode, String)) {
    let mut seen = HashSet::new();
    for text in q.options() {
        if !seen.insert(text) {
            push(
                q,
                Severity::Error,
                FindingCode::KeyOptionMismatch,
                format!("option {text:?} appears more than once among answers and distractors"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG3A: &str = r#"
[[questions]]
id = "1665d1ef-961f-4451-a988-ec46121531f9"
type = "MultipleChoice"
prompt.prompt = """
Which call to `find_until` function will
cause a runtime panic?
```
fn find_until(
  v: &Vec<i32>, n: i32, til: usize
) -> Option<usize> {
  for i in 0 .. til {
    if v[i] == n {
      return Some(i);
    }
  }
  return None;
}
```
"""
answer.answer = "`find_until(&vec![1, 2, 3], 4, 4)`"
prompt.distractors = [
  "`find_until(&vec![1, 2, 3], 0, 0)`",
  "`find_until(&vec![1, 2, 3], 3, 3)`",
  "`find_until(&vec![1, 2, 3], 1, 4)`"
]
context = """
If `til = 4`, then for a vector of length 3,
the for-loop will attempt to index the vector
with `i = 3`, which is out of bounds.
"""
"#;

    fn short(accepted: &str) -> Question {
        Question {
            id: Uuid::from_u128(1),
            prompt: "What is the name of the command-line tool for managing Rust versions?"
                .into(),
            program: None,
            answer_key: AnswerKey::Short {
                accepted_text: accepted.into(),
                case_sensitive: false,
            },
            distractors: vec![],
            context: None,
            shuffle: true,
            justification: false,
        }
    }

    fn multi(correct: &[&str], distractors: &[&str]) -> Question {
        Question {
            id: Uuid::from_u128(2),
            prompt: "Pick".into(),
            program: None,
            answer_key: AnswerKey::MultiSelect {
                correct_texts: correct.iter().map(|s| s.to_string()).collect(),
            },
            distractors: distractors.iter().map(|s| s.to_string()).collect(),
            context: None,
            shuffle: true,
            justification: false,
        }
    }

    fn tracing(does_compile: bool, stdout: Option<&str>) -> Question {
        Question {
            id: Uuid::from_u128(3),
            prompt: String::new(),
            program: Some("fn main() { println!(\"hello\"); }".into()),
            answer_key: AnswerKey::Tracing {
                does_compile,
                expected_stdout: stdout.map(str::to_string),
            },
            distractors: vec![],
            context: None,
            shuffle: true,
            justification: false,
        }
    }

    #[test]
    fn parses_authoring_example() {
        let quiz = parse_quiz("ch08-01-vectors", FIG3A).unwrap();
        assert_eq!(quiz.questions.len(), 1);
        let q = &quiz.questions[0];
        assert_eq!(q.id.to_string(), "1665d1ef-961f-4451-a988-ec46121531f9");
        assert_eq!(q.kind(), QuestionKind::MultipleChoice);
        assert_eq!(q.distractors.len(), 3);
        assert_eq!(
            q.answer_key,
            AnswerKey::Choice {
                correct_text: "`find_until(&vec![1, 2, 3], 4, 4)`".into()
            }
        );
        assert!(q.context.as_deref().unwrap().starts_with("If `til = 4`"));
        assert!(q.shuffle);
    }

    #[test]
    fn empty_quiz_is_rejected() {
        let err = parse_quiz("empty", "").unwrap_err();
        assert!(err.to_string().contains("empty quiz"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let doc = format!("{FIG3A}\n{FIG3A}");
        let err = parse_quiz("dup", &doc).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_quiz("bad", "[[questions]]\nid = \n").unwrap_err();
        match err {
            Error::QuizSyntax { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_type_and_missing_fields() {
        let doc = "[[questions]]\nid = \"1665d1ef-961f-4451-a988-ec46121531f9\"\ntype = \"Essay\"\nprompt.prompt = \"x\"\nanswer.answer = \"y\"\n";
        assert!(matches!(
            parse_quiz("q", doc),
            Err(Error::UnknownQuestionType { .. })
        ));
        let doc = "[[questions]]\nid = \"1665d1ef-961f-4451-a988-ec46121531f9\"\ntype = \"ShortAnswer\"\nprompt.prompt = \"x\"\n";
        match parse_quiz("q", doc) {
            Err(Error::MissingField { field, .. }) => assert_eq!(field, "answer"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_answer_ignores_whitespace_and_case() {
        let q = short("rustup");
        let graded = grade(
            &q,
            &Submission::ShortAnswer {
                text: "  Rustup ".into(),
            },
        )
        .unwrap();
        assert_eq!(graded.score, 1);
        assert_eq!(graded.normalized_submission, "rustup");
    }

    #[test]
    fn case_sensitive_short_answer() {
        let mut q = short("Vec");
        q.answer_key = AnswerKey::Short {
            accepted_text: "Vec".into(),
            case_sensitive: true,
        };
        let sub = |t: &str| Submission::ShortAnswer { text: t.into() };
        assert_eq!(grade(&q, &sub(" Vec")).unwrap().score, 1);
        assert_eq!(grade(&q, &sub("vec")).unwrap().score, 0);
    }

    #[test]
    fn multiselect_requires_exact_set() {
        let q = multi(&["A", "B"], &["C"]);
        let sub = |s: &[&str]| Submission::MultipleSelect {
            selected: s.iter().map(|x| x.to_string()).collect(),
        };
        assert_eq!(grade(&q, &sub(&["A"])).unwrap().score, 0);
        assert_eq!(grade(&q, &sub(&["A", "B"])).unwrap().score, 1);
        assert_eq!(grade(&q, &sub(&["A", "B", "C"])).unwrap().score, 0);
    }

    #[test]
    fn tracing_grading() {
        let q = tracing(false, None);
        let sub = Submission::Tracing {
            does_compile: true,
            stdout: Some("hello".into()),
        };
        assert_eq!(grade(&q, &sub).unwrap().score, 0);
        let sub = Submission::Tracing {
            does_compile: false,
            stdout: None,
        };
        assert_eq!(grade(&q, &sub).unwrap().score, 1);

        let q = tracing(true, Some("Hello\n  world"));
        let sub = Submission::Tracing {
            does_compile: true,
            stdout: Some("hello world ".into()),
        };
        assert_eq!(grade(&q, &sub).unwrap().score, 1);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let q = short("rustup");
        let err = grade(
            &q,
            &Submission::MultipleChoice {
                selected: "rustup".into(),
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
    }

    #[test]
    fn validation_flags_key_overlapping_distractors() {
        let q = multi(&["A", "B"], &["B", "C"]);
        let quiz = Quiz {
            name: "q".into(),
            questions: vec![q],
        };
        let report = validate_quiz(&quiz, None);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].code, FindingCode::KeyOptionMismatch);
    }

    #[test]
    fn validation_flags_tracing_key_inconsistency() {
        let quiz = Quiz {
            name: "q".into(),
            questions: vec![tracing(false, Some("hello"))],
        };
        let report = validate_quiz(&quiz, None);
        assert_eq!(report.findings[0].code, FindingCode::StdoutOnFailingProgram);
    }

    #[test]
    fn oracle_disagreement_is_reported() {
        let q = tracing(false, None);
        let program = q.program.clone().unwrap();
        let quiz = Quiz {
            name: "q".into(),
            questions: vec![q],
        };
        let oracle = StubOracle::default().with(&program, true, "hello\n");
        let report = validate_quiz(&quiz, Some(&oracle));
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].code, FindingCode::OracleMismatch);
        assert!(report.has_errors());

        let quiz = Quiz {
            name: "q".into(),
            questions: vec![tracing(true, Some("hello"))],
        };
        assert!(validate_quiz(&quiz, Some(&oracle)).is_clean());
    }

    #[test]
    fn unavailable_oracle_is_a_warning() {
        let quiz = Quiz {
            name: "q".into(),
            questions: vec![tracing(true, Some("hello"))],
        };
        let oracle = CommandOracle::from_command_line("/nonexistent/oracle").unwrap();
        let report = validate_quiz(&quiz, Some(&oracle));
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].severity, Severity::Warning);
        assert!(!report.has_errors());
    }

    #[test]
    fn well_formed_quiz_has_empty_report() {
        let quiz = parse_quiz("v", FIG3A).unwrap();
        let report = validate_quiz(&quiz, Some(&StubOracle::default()));
        assert!(report.is_clean(), "{}", report.to_text());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut quiz = parse_quiz("v", FIG3A).unwrap();
        quiz.questions.push(short("rustup"));
        quiz.questions.push(multi(&["A", "B"], &["C"]));
        quiz.questions.push(tracing(true, Some("hello")));
        quiz.questions.push(tracing(false, None));
        quiz.questions[4].id = Uuid::from_u128(4);
        quiz.questions[1].justification = true;
        quiz.questions[2].shuffle = false;
        let text = serialize_quiz(&quiz).unwrap();
        let back = parse_quiz("v", &text).unwrap();
        assert_eq!(back, quiz);
    }
}
