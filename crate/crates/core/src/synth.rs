//! Synthetic books and telemetry drawn from a known 3PL ground truth.
//!
//! The generator builds a book with `chapters` chapters, quizzes of up to
//! three questions, readers who work through chapters in order (stopping
//! after each chapter with probability `dropout`), and the export stream a
//! telemetry server would have produced for them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::book::{BookManifest, ChapterEntry, ManifestQuiz};
use crate::error::Result;
use crate::irt::{icc, AbilityEstimate, ItemParams};
use crate::quiz::{serialize_quiz, AnswerKey, Question, Quiz, Submission};
use crate::telemetry::{AnswerEntry, AnswersPayload, EventKind, StoredEvent};

/// 2023-01-01T00:00:00Z
pub const EPOCH_MS: i64 = 1_672_531_200_000;
const QUESTIONS_PER_QUIZ: usize = 3;
const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthConfig {
    pub items: usize,
    pub readers: usize,
    pub seed: u64,
    pub chapters: usize,
    /// Probability of stopping after each chapter.
    pub dropout: f64,
    /// Probability of retrying a quiz with missed questions.
    pub retry_rate: f64,
    /// Readers start uniformly over this many days.
    pub span_days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            items: 60,
            readers: 3000,
            seed: 7,
            chapters: 6,
            dropout: 0.0,
            retry_rate: 0.0,
            span_days: 90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TruthItem {
    #[serde(flatten)]
    pub params: ItemParams,
    pub chapter: u32,
    pub quiz_name: String,
    /// Mean of the model probability over the readers who answered it on
    /// their first attempt.
    pub expected_accuracy: f64,
    pub respondents: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Truth {
    pub config: SynthConfig,
    pub commit_hash: String,
    pub items: Vec<TruthItem>,
    pub abilities: Vec<AbilityEstimate>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub truth: Truth,
    pub manifest: BookManifest,
    pub events: Vec<StoredEvent>,
}

fn uuid_from(rng: &mut ChaCha8Rng) -> Uuid {
    uuid::Builder::from_random_bytes(rng.random()).into_uuid()
}

pub fn commit_hash_for_seed(seed: u64) -> String {
    let digest = Sha256::digest(format!("learnprof-synth-{seed}").as_bytes());
    digest[..20].iter().map(|b| format!("{b:02x}")).collect()
}

fn make_question(id: Uuid, i: usize) -> Question {
    let (answer_key, distractors, program) = match i % 6 {
        3 => (
            AnswerKey::Short {
                accepted_text: format!("answer{i}"),
                case_sensitive: false,
            },
            vec![],
            None,
        ),
        4 => (
            AnswerKey::MultiSelect {
                correct_texts: [format!("right {i}a"), format!("right {i}b")].into(),
            },
            vec![format!("wrong {i}a"), format!("wrong {i}b")],
            None,
        ),
        5 => (
            AnswerKey::Tracing {
                does_compile: true,
                expected_stdout: Some(format!("{i}")),
            },
            vec![],
            Some(format!("fn main() {{\n    println!(\"{{}}\", {i});\n}}\n")),
        ),
        _ => (
            AnswerKey::Choice {
                correct_text: format!("option {i} (correct)"),
            },
            (1..=3).map(|k| format!("option {i}.{k}")).collect(),
            None,
        ),
    };
    Question {
        id,
        prompt: format!("Synthetic question {i}."),
        program,
        answer_key,
        distractors,
        context: Some(format!("Explanation for question {i}.")),
        shuffle: true,
        justification: false,
    }
}

fn submission_for(q: &Question, correct: bool, rng: &mut ChaCha8Rng) -> Submission {
    match &q.answer_key {
        AnswerKey::Choice { correct_text } => Submission::MultipleChoice {
            selected: if correct {
                correct_text.clone()
            } else {
                q.distractors.choose(rng).cloned().unwrap_or_default()
            },
        },
        AnswerKey::MultiSelect { correct_texts } => {
            let mut selected = correct_texts.clone();
            if !correct {
                selected.pop_first();
                if rng.random_bool(0.5) {
                    if let Some(d) = q.distractors.choose(rng) {
                        selected.insert(d.clone());
                    }
                }
            }
            Submission::MultipleSelect { selected }
        }
        AnswerKey::Short { accepted_text, .. } => Submission::ShortAnswer {
            text: if correct {
                format!("  {}", accepted_text.to_uppercase())
            } else {
                "something else".into()
            },
        },
        AnswerKey::Tracing {
            expected_stdout, ..
        } => {
            if correct {
                Submission::Tracing {
                    does_compile: true,
                    stdout: expected_stdout.clone(),
                }
            } else {
                Submission::Tracing {
                    does_compile: false,
                    stdout: None,
                }
            }
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    assert!(cfg.items > 0 && cfg.readers > 0 && cfg.chapters > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alpha_dist = LogNormal::new(0.0, 0.35).expect("valid lognormal");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let commit_hash = commit_hash_for_seed(cfg.seed);

    // Items, spread evenly over chapters, grouped into quizzes.
    let chapters = cfg.chapters.min(cfg.items);
    let mut quizzes: Vec<(u32, Quiz)> = Vec::new();
    let mut item_params = Vec::with_capacity(cfg.items);
    let mut item_quiz = Vec::with_capacity(cfg.items);
    for ch in 0..chapters {
        let lo = ch * cfg.items / chapters;
        let hi = (ch + 1) * cfg.items / chapters;
        let chapter = ch as u32 + 1;
        for (qn, start) in (lo..hi).step_by(QUESTIONS_PER_QUIZ).enumerate() {
            let end = (start + QUESTIONS_PER_QUIZ).min(hi);
            let name = format!("ch{chapter:02}/quiz{:02}", qn + 1);
            let mut questions = Vec::new();
            for i in start..end {
                let id = uuid_from(&mut rng);
                item_params.push(ItemParams {
                    question_id: id,
                    alpha: alpha_dist.sample(&mut rng),
                    beta: std_normal.sample(&mut rng),
                    lambda: rng.random_range(0.05..0.3),
                });
                item_quiz.push((quizzes.len(), chapter));
                questions.push(make_question(id, i));
            }
            quizzes.push((
                chapter,
                Quiz {
                    name,
                    questions,
                },
            ));
        }
    }

    let mut abilities = Vec::with_capacity(cfg.readers);
    let mut payloads: Vec<(i64, AnswersPayload)> = Vec::new();
    let mut expected_sum = vec![0.0; cfg.items];
    let mut respondents = vec![0usize; cfg.items];
    let item_offsets: Vec<usize> = quizzes
        .iter()
        .scan(0, |acc, (_, q)| {
            let start = *acc;
            *acc += q.questions.len();
            Some(start)
        })
        .collect();

    for _ in 0..cfg.readers {
        let session_id = uuid_from(&mut rng);
        let theta: f64 = std_normal.sample(&mut rng);
        abilities.push(AbilityEstimate { session_id, theta });
        let mut t = EPOCH_MS + rng.random_range(0..i64::from(cfg.span_days.max(1)) * DAY_MS);
        let mut current_chapter = 1;
        for (qi, (chapter, quiz)) in quizzes.iter().enumerate() {
            if *chapter != current_chapter {
                if rng.random_bool(cfg.dropout.clamp(0.0, 1.0)) {
                    break;
                }
                current_chapter = *chapter;
            }
            t += rng.random_range(60_000..1_800_000);
            let mut answers = Vec::with_capacity(quiz.questions.len());
            let mut missed = Vec::new();
            for (k, q) in quiz.questions.iter().enumerate() {
                let item = item_offsets[qi] + k;
                let p = icc(&item_params[item], theta);
                expected_sum[item] += p;
                respondents[item] += 1;
                let correct = rng.random_bool(p);
                if !correct {
                    missed.push(q);
                }
                answers.push(AnswerEntry {
                    question_id: q.id,
                    answer: submission_for(q, correct, &mut rng),
                    correct,
                    duration_ms: rng.random_range(5_000..90_000),
                    justification: None,
                });
            }
            payloads.push((
                t,
                AnswersPayload {
                    session_id,
                    quiz_name: quiz.name.clone(),
                    commit_hash: commit_hash.clone(),
                    attempt: 0,
                    client_timestamp_ms: t,
                    answers,
                },
            ));
            if !missed.is_empty() && rng.random_bool(cfg.retry_rate.clamp(0.0, 1.0)) {
                t += rng.random_range(10_000..120_000);
                let answers = missed
                    .iter()
                    .map(|q| {
                        let correct = rng.random_bool(0.7);
                        AnswerEntry {
                            question_id: q.id,
                            answer: submission_for(q, correct, &mut rng),
                            correct,
                            duration_ms: rng.random_range(3_000..30_000),
                            justification: None,
                        }
                    })
                    .collect();
                payloads.push((
                    t,
                    AnswersPayload {
                        session_id,
                        quiz_name: quiz.name.clone(),
                        commit_hash: commit_hash.clone(),
                        attempt: 1,
                        client_timestamp_ms: t,
                        answers,
                    },
                ));
            }
        }
    }

    // Server receive order.
    payloads.sort_by_key(|(t, _)| *t);
    let events = payloads
        .into_iter()
        .enumerate()
        .map(|(i, (t, p))| StoredEvent {
            event_id: i as u64 + 1,
            received_at_ms: t + 150,
            kind: EventKind::Answers,
            flags: vec![],
            body: RawValue::from_string(serde_json::to_string(&p).expect("payload serializes"))
                .expect("valid json"),
        })
        .collect();

    let items = item_params
        .into_iter()
        .enumerate()
        .map(|(i, params)| TruthItem {
            params,
            chapter: item_quiz[i].1,
            quiz_name: quizzes[item_quiz[i].0].1.name.clone(),
            expected_accuracy: expected_sum[i] / respondents[i].max(1) as f64,
            respondents: respondents[i],
        })
        .collect();

    let manifest = BookManifest {
        commit_hash: commit_hash.clone(),
        chapters: (1..=chapters as u32)
            .map(|c| ChapterEntry {
                number: c,
                title: format!("Chapter {c}"),
                path: format!("ch{c:02}.md").into(),
            })
            .collect(),
        quizzes: quizzes
            .into_iter()
            .map(|(chapter, quiz)| (quiz.name.clone(), ManifestQuiz { chapter, quiz }))
            .collect::<BTreeMap<_, _>>(),
    };

    SynthData {
        truth: Truth {
            config: *cfg,
            commit_hash,
            items,
            abilities,
        },
        manifest,
        events,
    }
}

impl SynthData {
    pub fn export_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// Writes `book/src/chNN.md`, `book/quizzes/**.toml`, `events.ndjson`,
    /// `truth.json` and a `learnprof.toml` pointing at them.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let src = dir.join("book").join("src");
        let quiz_root = dir.join("book").join("quizzes");
        fs::create_dir_all(&src)?;
        for ch in &self.manifest.chapters {
            let mut text = format!("# {}\n\nSynthetic chapter text.\n", ch.title);
            for (name, mq) in &self.manifest.quizzes {
                if mq.chapter == ch.number {
                    text.push_str(&format!("\n{{{{#quiz ../quizzes/{name}.toml}}}}\n"));
                    let path = quiz_root.join(format!("{name}.toml"));
                    fs::create_dir_all(path.parent().expect("quiz file has a parent"))?;
                    fs::write(&path, serialize_quiz(&mq.quiz)?)?;
                }
            }
            fs::write(src.join(&ch.path), text)?;
        }
        fs::write(dir.join("events.ndjson"), self.export_ndjson())?;
        let mut truth = serde_json::to_string_pretty(&self.truth)?;
        truth.push('\n');
        fs::write(dir.join("truth.json"), truth)?;
        fs::write(
            dir.join("learnprof.toml"),
            format!(
                "bookRoot = \"book/src\"\nquizDir = \"book/quizzes\"\noutputDir = \"out\"\ncommitHash = \"{}\"\nseed = {}\n",
                self.truth.commit_hash, self.truth.config.seed
            ),
        )?;
        Ok(())
    }
}

/// Shuffled-free helper for tests: first-attempt records straight from the
/// generator, bypassing serialization.
pub fn response_set(data: &SynthData) -> Result<crate::dataset::ResponseSet> {
    let registry = crate::book::QuizRegistry::from_manifests([&data.manifest]);
    let (rs, _) = crate::dataset::load(
        std::io::Cursor::new(data.export_ndjson()),
        &data.manifest,
        &registry,
    )?;
    Ok(crate::dataset::first_attempts(&rs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            items: 12,
            readers: 50,
            retry_rate: 0.5,
            dropout: 0.2,
            ..Default::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.export_ndjson(), b.export_ndjson());
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn regrading_matches_generated_correctness() {
        let cfg = SynthConfig {
            items: 12,
            readers: 40,
            ..Default::default()
        };
        let data = generate(&cfg);
        let registry = crate::book::QuizRegistry::from_manifests([&data.manifest]);
        let (rs, report) = crate::dataset::load(
            std::io::Cursor::new(data.export_ndjson()),
            &data.manifest,
            &registry,
        )
        .unwrap();
        assert_eq!(report.client_graded, 0);
        assert_eq!(rs.len(), 12 * 40);
        let client: Vec<bool> = data
            .events
            .iter()
            .flat_map(|e| e.answers().unwrap().unwrap().answers)
            .map(|a| a.correct)
            .collect();
        let regraded: Vec<bool> = rs.records().iter().map(|r| r.score == 1).collect();
        assert_eq!(client, regraded);
    }
}
