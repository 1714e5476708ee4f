use std::collections::BTreeSet;

use learnprof_core::quiz::{grade, parse_quiz, serialize_quiz, AnswerKey, Question, Quiz, Submission};
use proptest::prelude::*;
use uuid::Uuid;

fn text() -> impl Strategy<Value = String> {
    "[a-z][a-zA-Z0-9 _.`]{0,20}"
}

fn question() -> impl Strategy<Value = Question> {
    let key = prop_oneof![
        text().prop_map(|t| AnswerKey::Choice { correct_text: t }),
        prop::collection::btree_set(text(), 1..4)
            .prop_map(|s| AnswerKey::MultiSelect { correct_texts: s }),
        (text(), any::<bool>()).prop_map(|(t, c)| AnswerKey::Short {
            accepted_text: t,
            case_sensitive: c
        }),
        (any::<bool>(), text()).prop_map(|(c, out)| AnswerKey::Tracing {
            does_compile: c,
            expected_stdout: c.then_some(out),
        }),
    ];
    (
        any::<u128>(),
        text(),
        key,
        prop::collection::vec(text(), 1..4),
        prop::option::of(text()),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(id, prompt, key, distractors, context, shuffle, justification)| {
            let choice = matches!(key, AnswerKey::Choice { .. } | AnswerKey::MultiSelect { .. });
            let tracing = matches!(key, AnswerKey::Tracing { .. });
            Question {
                id: Uuid::from_u128(id),
                prompt,
                program: tracing.then(|| "fn main() {}".to_string()),
                answer_key: key,
                distractors: if choice { distractors } else { Vec::new() },
                context,
                shuffle,
                justification,
            }
        })
}

fn submission_for(q: &Question, pick: usize) -> Submission {
    match &q.answer_key {
        AnswerKey::Choice { .. } => {
            let opts = q.options();
            Submission::MultipleChoice {
                selected: opts[pick % opts.len()].to_string(),
            }
        }
        AnswerKey::MultiSelect { .. } => {
            let opts = q.options();
            let selected: BTreeSet<String> = opts
                .iter()
                .enumerate()
                .filter(|(i, _)| (pick >> i) & 1 == 1)
                .map(|(_, o)| o.to_string())
                .collect();
            Submission::MultipleSelect { selected }
        }
        AnswerKey::Short { accepted_text, .. } => Submission::ShortAnswer {
            text: if pick.is_multiple_of(2) {
                format!("  {accepted_text} ")
            } else {
                "other".into()
            },
        },
        AnswerKey::Tracing { .. } => Submission::Tracing {
            does_compile: pick.is_multiple_of(2),
            stdout: Some(format!("{pick}")),
        },
    }
}

proptest! {
    #[test]
    fn round_trip(questions in prop::collection::vec(question(), 1..5)) {
        let mut seen = BTreeSet::new();
        let questions: Vec<Question> = questions.into_iter().filter(|q| seen.insert(q.id)).collect();
        let quiz = Quiz { name: "ch01/quiz".into(), questions };
        let text = serialize_quiz(&quiz).unwrap();
        let back = parse_quiz("ch01/quiz", &text).unwrap();
        prop_assert_eq!(back, quiz);
    }

    #[test]
    fn grade_is_binary_and_deterministic(q in question(), pick in 0usize..64) {
        let sub = submission_for(&q, pick);
        let a = grade(&q, &sub).unwrap();
        let b = grade(&q, &sub).unwrap();
        prop_assert!(a.score <= 1);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn distractor_order_does_not_matter(q in question(), pick in 0usize..64, seed in any::<u64>()) {
        let sub = submission_for(&q, pick);
        let mut shuffled = q.clone();
        let n = shuffled.distractors.len();
        if n > 1 {
            shuffled.distractors.rotate_left((seed as usize) % n);
            if seed % 2 == 1 {
                shuffled.distractors.reverse();
            }
        }
        prop_assert_eq!(grade(&q, &sub).unwrap().score, grade(&shuffled, &sub).unwrap().score);
    }

    #[test]
    fn short_answers_ignore_case(accepted in text(), typed in "[a-zA-Z ]{0,12}", exact in any::<bool>()) {
        let q = Question {
            id: Uuid::nil(),
            prompt: "p".into(),
            program: None,
            answer_key: AnswerKey::Short { accepted_text: accepted.clone(), case_sensitive: false },
            distractors: Vec::new(),
            context: None,
            shuffle: true,
            justification: false,
        };
        let s = if exact { accepted } else { typed };
        let lower = grade(&q, &Submission::ShortAnswer { text: s.clone() }).unwrap();
        let upper = grade(&q, &Submission::ShortAnswer { text: s.to_uppercase() }).unwrap();
        prop_assert_eq!(lower.score, upper.score);
        if exact {
            prop_assert_eq!(lower.score, 1);
        }
    }
}

#[test]
fn mismatched_submission_kind_is_an_error() {
    let q = Question {
        id: Uuid::nil(),
        prompt: "p".into(),
        program: None,
        answer_key: AnswerKey::Short {
            accepted_text: "x".into(),
            case_sensitive: false,
        },
        distractors: Vec::new(),
        context: None,
        shuffle: true,
        justification: false,
    };
    let sub = Submission::MultipleChoice {
        selected: "x".into(),
    };
    assert!(grade(&q, &sub).is_err());
}
