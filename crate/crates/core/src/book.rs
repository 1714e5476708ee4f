//! Book preprocessing: expands `{{#quiz path}}` directives in markdown
//! chapters into placeholder elements carrying the quiz schema, and records
//! which chapter hosts each quiz in a [`BookManifest`].

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::quiz::{parse_quiz, validate_quiz, CompileOracle, Question, Quiz, ValidationReport};

const DIRECTIVE_OPEN: &str = "{{#quiz";
const DIRECTIVE_CLOSE: &str = "}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuizDirective {
    pub source_chapter: PathBuf,
    pub quiz_path: String,
    pub byte_span: Range<usize>,
    pub quiz_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChapterEntry {
    pub number: u32,
    pub title: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestQuiz {
    pub chapter: u32,
    pub quiz: Quiz,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BookManifest {
    pub commit_hash: String,
    pub chapters: Vec<ChapterEntry>,
    pub quizzes: BTreeMap<String, ManifestQuiz>,
}

impl BookManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn quiz_chapter(&self, quiz_name: &str) -> Option<u32> {
        self.quizzes.get(quiz_name).map(|q| q.chapter)
    }

    /// Chapter of every question, taken from the chapter hosting its quiz.
    pub fn question_chapters(&self) -> HashMap<Uuid, u32> {
        self.quizzes
            .values()
            .flat_map(|mq| mq.quiz.questions.iter().map(move |q| (q.id, mq.chapter)))
            .collect()
    }

    pub fn chapter_numbers(&self) -> Vec<u32> {
        self.chapters.iter().map(|c| c.number).collect()
    }
}

/// Grading keys indexed by (commit hash, question id), so answers are graded
/// against the question version the reader actually saw.
#[derive(Debug, Clone, Default)]
pub struct QuizRegistry {
    questions: HashMap<(String, Uuid), Question>,
}

impl QuizRegistry {
    pub fn from_manifests<'a>(manifests: impl IntoIterator<Item = &'a BookManifest>) -> Self {
        let mut registry = QuizRegistry::default();
        for m in manifests {
            for mq in m.quizzes.values() {
                registry.insert_quiz(&m.commit_hash, &mq.quiz);
            }
        }
        registry
    }

    pub fn insert_quiz(&mut self, commit_hash: &str, quiz: &Quiz) {
        for q in &quiz.questions {
            self.questions
                .insert((commit_hash.to_ascii_lowercase(), q.id), q.clone());
        }
    }

    pub fn get(&self, commit_hash: &str, question: Uuid) -> Option<&Question> {
        self.questions
            .get(&(commit_hash.to_ascii_lowercase(), question))
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

pub fn is_commit_hash(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

/// Maps a directive's path to a parsed quiz.
pub trait QuizResolver: Sync {
    fn resolve(&self, chapter: &Path, quiz_path: &str) -> std::result::Result<Quiz, String>;
}

/// Resolves directive paths relative to the chapter file and names quizzes by
/// their path under `quiz_root`, extension stripped.
#[derive(Debug, Clone)]
pub struct FsResolver {
    quiz_root: PathBuf,
}

impl FsResolver {
    pub fn new(quiz_root: &Path) -> Result<Self> {
        Ok(FsResolver {
            quiz_root: fs::canonicalize(quiz_root)?,
        })
    }
}

impl QuizResolver for FsResolver {
    fn resolve(&self, chapter: &Path, quiz_path: &str) -> std::result::Result<Quiz, String> {
        let base = chapter.parent().unwrap_or(Path::new("."));
        let full = fs::canonicalize(base.join(quiz_path)).map_err(|e| e.to_string())?;
        let rel = full
            .strip_prefix(&self.quiz_root)
            .map_err(|_| format!("not under quiz root {}", self.quiz_root.display()))?;
        let name = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let source = fs::read_to_string(&full).map_err(|e| e.to_string())?;
        parse_quiz(&name, &source).map_err(|e| e.to_string())
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

/// The HTML element that replaces a quiz directive. The widget reads the
/// schema from `data-quiz-questions`.
pub fn placeholder(quiz: &Quiz, commit_hash: &str) -> Result<String> {
    let questions = serde_json::to_string(&quiz.questions)?;
    Ok(format!(
        r#"<div class="quiz-placeholder" data-quiz-name="{}" data-commit-hash="{}" data-quiz-questions="{}"></div>"#,
        escape_attr(&quiz.name),
        escape_attr(commit_hash),
        escape_attr(&questions)
    ))
}

#[derive(Debug, Clone)]
pub struct ExpandedChapter {
    pub text: String,
    pub directives: Vec<QuizDirective>,
    pub quizzes: Vec<Quiz>,
}

/// Replaces every quiz directive in `chapter`; all other bytes are copied
/// through unchanged.
pub fn expand_chapter(
    chapter: &str,
    chapter_path: &Path,
    resolver: &dyn QuizResolver,
    commit_hash: &str,
) -> Result<ExpandedChapter> {
    let mut text = String::with_capacity(chapter.len());
    let mut directives = Vec::new();
    let mut quizzes = Vec::new();
    let mut cursor = 0;
    while let Some(rel_start) = chapter[cursor..].find(DIRECTIVE_OPEN) {
        let start = cursor + rel_start;
        let after_open = start + DIRECTIVE_OPEN.len();
        let Some(rel_end) = chapter[after_open..].find(DIRECTIVE_CLOSE) else {
            break;
        };
        let end = after_open + rel_end + DIRECTIVE_CLOSE.len();
        let arg = &chapter[after_open..after_open + rel_end];
        // `{{#quizzes}}` or similar is not ours.
        if !arg.starts_with(char::is_whitespace) || arg.trim().is_empty() {
            text.push_str(&chapter[cursor..after_open]);
            cursor = after_open;
            continue;
        }
        let quiz_path = arg.trim().to_string();
        let quiz = resolver
            .resolve(chapter_path, &quiz_path)
            .map_err(|reason| Error::UnresolvedQuiz {
                chapter: chapter_path.to_path_buf(),
                path: quiz_path.clone(),
                reason,
            })?;
        text.push_str(&chapter[cursor..start]);
        text.push_str(&placeholder(&quiz, commit_hash)?);
        directives.push(QuizDirective {
            source_chapter: chapter_path.to_path_buf(),
            quiz_path,
            byte_span: start..end,
            quiz_name: quiz.name.clone(),
        });
        quizzes.push(quiz);
        cursor = end;
    }
    text.push_str(&chapter[cursor..]);
    Ok(ExpandedChapter {
        text,
        directives,
        quizzes,
    })
}

#[derive(Debug, Clone)]
pub struct BookConfig {
    pub book_root: PathBuf,
    pub quiz_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Resolved from `git rev-parse HEAD` in the book root when absent.
    pub commit_hash: Option<String>,
}

#[derive(Debug)]
pub struct BuildOutput {
    pub manifest: BookManifest,
    /// Warnings only; any error-severity finding aborts the build.
    pub report: ValidationReport,
}

pub fn resolve_commit_hash(book_root: &Path, explicit: Option<&str>) -> Result<String> {
    let hash = match explicit {
        Some(h) => h.trim().to_string(),
        None => {
            let out = Command::new("git")
                .arg("rev-parse")
                .arg("HEAD")
                .current_dir(book_root)
                .output()?;
            String::from_utf8_lossy(&out.stdout).trim().to_string()
        }
    };
    if !is_commit_hash(&hash) {
        return Err(Error::InvalidCommitHash(hash));
    }
    Ok(hash.to_ascii_lowercase())
}

/// Chapter files in lexical path order. `SUMMARY.md` is a table of contents,
/// not a chapter.
fn collect_chapters(root: &Path, skip: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, skip: &[PathBuf], out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if skip.iter().any(|s| path.starts_with(s)) {
                continue;
            }
            if path.is_dir() {
                walk(&path, skip, out)?;
            } else if path.extension().is_some_and(|e| e == "md")
                && path.file_name().is_some_and(|n| n != "SUMMARY.md")
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, skip, &mut out)?;
    out.sort();
    Ok(out)
}

fn chapter_title(text: &str, path: &Path) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix("# "))
        .map(|t| t.trim().to_string())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
}

/// Expands every chapter of the book, validates all quizzes, and writes the
/// processed chapters plus `manifest.json` to the output directory.
pub fn build_book(config: &BookConfig, oracle: Option<&dyn CompileOracle>) -> Result<BuildOutput> {
    let commit_hash = resolve_commit_hash(&config.book_root, config.commit_hash.as_deref())?;
    let root = fs::canonicalize(&config.book_root)?;
    let resolver = FsResolver::new(&config.quiz_dir)?;
    let mut skip = vec![resolver.quiz_root.clone()];
    if let Ok(out) = fs::canonicalize(&config.out_dir) {
        skip.push(out);
    }
    let chapter_paths = collect_chapters(&root, &skip)?;

    let expanded: Vec<(PathBuf, String, ExpandedChapter)> = chapter_paths
        .par_iter()
        .map(|path| {
            let source = fs::read_to_string(path)?;
            let title = chapter_title(&source, path);
            let exp = expand_chapter(&source, path, &resolver, &commit_hash)?;
            Ok((path.clone(), title, exp))
        })
        .collect::<Result<_>>()?;

    let mut chapters = Vec::with_capacity(expanded.len());
    let mut quizzes: BTreeMap<String, ManifestQuiz> = BTreeMap::new();
    for (idx, (path, title, exp)) in expanded.iter().enumerate() {
        let number = idx as u32 + 1;
        let rel = path.strip_prefix(&root).unwrap_or(path).to_path_buf();
        chapters.push(ChapterEntry {
            number,
            title: title.clone(),
            path: rel,
        });
        for quiz in &exp.quizzes {
            if let Some(existing) = quizzes.get(&quiz.name) {
                return Err(Error::DuplicateQuizName {
                    name: quiz.name.clone(),
                    first: existing.chapter,
                    second: number,
                });
            }
            quizzes.insert(
                quiz.name.clone(),
                ManifestQuiz {
                    chapter: number,
                    quiz: quiz.clone(),
                },
            );
        }
    }

    let mut report = ValidationReport::default();
    for mq in quizzes.values() {
        report.merge(validate_quiz(&mq.quiz, oracle));
    }
    if report.has_errors() {
        return Err(Error::Validation(report.to_text()));
    }

    fs::create_dir_all(&config.out_dir)?;
    for (path, _, exp) in &expanded {
        let rel = path.strip_prefix(&root).unwrap_or(path);
        let dest = config.out_dir.join(rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(dest, &exp.text)?;
    }
    let manifest = BookManifest {
        commit_hash,
        chapters,
        quizzes,
    };
    manifest.save(&config.out_dir.join("manifest.json"))?;
    Ok(BuildOutput { manifest, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct MapResolver(BTreeMap<String, Quiz>);

    impl QuizResolver for MapResolver {
        fn resolve(&self, _: &Path, quiz_path: &str) -> std::result::Result<Quiz, String> {
            self.0
                .get(quiz_path)
                .cloned()
                .ok_or_else(|| "no such file".to_string())
        }
    }

    fn resolver() -> MapResolver {
        let quiz = parse_quiz(
            "my-quiz",
            r#"[[questions]]
id = "6b1a7e6c-3f0e-4a43-9c55-64f5b6f0d001"
type = "ShortAnswer"
prompt.prompt = "What is the name of the command-line tool for managing the version of Rust on your machine?"
answer.answer = "rustup"
"#,
        )
        .unwrap();
        MapResolver(BTreeMap::from([("../quizzes/my-quiz.toml".to_string(), quiz)]))
    }

    const HASH: &str = "0123456789abcdef0123456789abcdef01234567";

    #[test]
    fn directive_is_replaced_with_placeholder() {
        let chapter = "# Intro\n\nSome text.\n\n{{#quiz ../quizzes/my-quiz.toml}}\n\nMore text.\n";
        let exp = expand_chapter(chapter, Path::new("src/ch01.md"), &resolver(), HASH).unwrap();
        assert_eq!(exp.directives.len(), 1);
        assert_eq!(exp.directives[0].quiz_name, "my-quiz");
        let span = exp.directives[0].byte_span.clone();
        assert_eq!(&chapter[span], "{{#quiz ../quizzes/my-quiz.toml}}");
        assert!(exp.text.starts_with("# Intro\n\nSome text.\n\n<div class=\"quiz-placeholder\""));
        assert!(exp.text.ends_with("</div>\n\nMore text.\n"));
        assert!(exp.text.contains("data-quiz-name=\"my-quiz\""));
        assert!(exp.text.contains(&format!("data-commit-hash=\"{HASH}\"")));
        assert!(exp.text.contains("rustup"));
        assert!(!exp.text.contains("{{#quiz"));
    }

    #[test]
    fn chapter_without_directives_is_identity() {
        let chapter = "# Title\n\n{{#include foo.rs}}\n\n`{{#quizzes}}`\n";
        let exp = expand_chapter(chapter, Path::new("c.md"), &resolver(), HASH).unwrap();
        assert_eq!(exp.text, chapter);
        assert!(exp.directives.is_empty());
    }

    #[test]
    fn expansion_is_idempotent() {
        let chapter = "a {{#quiz ../quizzes/my-quiz.toml}} b";
        let once = expand_chapter(chapter, Path::new("c.md"), &resolver(), HASH).unwrap();
        let twice = expand_chapter(&once.text, Path::new("c.md"), &resolver(), HASH).unwrap();
        assert_eq!(once.text, twice.text);
        assert!(twice.directives.is_empty());
    }

    #[test]
    fn missing_quiz_names_chapter_and_path() {
        let err = expand_chapter(
            "{{#quiz ../quizzes/missing.toml}}",
            Path::new("src/ch02.md"),
            &resolver(),
            HASH,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("src/ch02.md") && msg.contains("../quizzes/missing.toml"), "{msg}");
    }

    #[test]
    fn placeholder_schema_round_trips() {
        let quiz = resolver().0.into_values().next().unwrap();
        let html = placeholder(&quiz, HASH).unwrap();
        let attr = html
            .split("data-quiz-questions=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"></div>");
        let json = attr
            .replace("&quot;", "\"")
            .replace("&#39;", "'")
            .replace("&lt;", "<")
            .replace("&gt;", ">")
            .replace("&amp;", "&");
        let questions: Vec<Question> = serde_json::from_str(&json).unwrap();
        assert_eq!(questions, quiz.questions);
    }

    #[test]
    fn commit_hash_validation() {
        assert!(is_commit_hash(HASH));
        assert!(!is_commit_hash("abc"));
        assert!(resolve_commit_hash(Path::new("."), Some("zz")).is_err());
        assert_eq!(
            resolve_commit_hash(Path::new("."), Some(&HASH.to_uppercase())).unwrap(),
            HASH
        );
    }
}
