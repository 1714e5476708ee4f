use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use learnprof_core::book::{build_book, BookConfig};
use learnprof_core::quiz::{
    parse_quiz, validate_quiz, CommandOracle, CompileOracle, OracleVerdict, Severity, StubOracle,
};
use learnprof_core::Error;
use serde::Serialize;
use uuid::Uuid;

use crate::output::{print_json, Failure, Usage};
use crate::Global;

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Command that reads a program on stdin and prints {"compiles", "stdout"}
    #[arg(long)]
    oracle: Option<String>,
    /// JSON file mapping program text to {"compiles", "stdout"}
    #[arg(long, conflicts_with = "oracle")]
    oracle_table: Option<PathBuf>,
}

impl OracleArgs {
    fn load(&self, g: &Global) -> Result<Option<Box<dyn CompileOracle>>> {
        if let Some(path) = &self.oracle_table {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let table: BTreeMap<String, OracleVerdict> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let stub = table
                .into_iter()
                .fold(StubOracle::default(), |s, (program, v)| {
                    s.with(&program, v.compiles, &v.stdout)
                });
            return Ok(Some(Box::new(stub)));
        }
        let line = self.oracle.as_ref().or(g.config.oracle.as_ref());
        match line {
            None => Ok(None),
            Some(l) => {
                let oracle = CommandOracle::from_command_line(l)
                    .ok_or_else(|| Usage("--oracle must not be empty".into()))?;
                Ok(Some(Box::new(oracle)))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Quiz files or directories [default: the configured quiz directory]
    paths: Vec<PathBuf>,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FileFinding {
    pub file: PathBuf,
    pub quiz: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question_id: Option<Uuid>,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

fn quiz_files(root: &Path) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "toml") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Quiz name as the preprocessor derives it: path under the root, no extension.
fn quiz_name(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).ok().filter(|r| !r.as_os_str().is_empty());
    let rel = rel.unwrap_or_else(|| Path::new(file.file_name().unwrap_or_default()));
    rel.with_extension("")
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn parse_error_code(e: &Error) -> &'static str {
    match e {
        Error::QuizSyntax { .. } => "syntax",
        Error::EmptyQuiz(_) => "empty-quiz",
        Error::DuplicateId { .. } => "duplicate-id",
        Error::UnknownQuestionType { .. } => "unknown-question-type",
        Error::MissingField { .. } => "missing-field",
        _ => "invalid-question",
    }
}

pub fn validate_files(
    paths: &[PathBuf],
    oracle: Option<&dyn CompileOracle>,
) -> Result<(usize, Vec<FileFinding>)> {
    let mut findings = Vec::new();
    let mut files = 0;
    for root in paths {
        for file in quiz_files(root)? {
            files += 1;
            let name = quiz_name(root, &file);
            let source =
                fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            match parse_quiz(&name, &source) {
                Err(e) => findings.push(FileFinding {
                    file: file.clone(),
                    quiz: name,
                    question_id: None,
                    severity: Severity::Error,
                    code: parse_error_code(&e).into(),
                    message: e.to_string(),
                }),
                Ok(quiz) => {
                    for f in validate_quiz(&quiz, oracle).findings {
                        let code = serde_json::to_value(f.code)?
                            .as_str()
                            .unwrap_or_default()
                            .to_string();
                        findings.push(FileFinding {
                            file: file.clone(),
                            quiz: f.quiz,
                            question_id: f.question_id,
                            severity: f.severity,
                            code,
                            message: f.message,
                        });
                    }
                }
            }
        }
    }
    Ok((files, findings))
}

pub fn validate(g: &Global, args: &ValidateArgs) -> Result<()> {
    let paths = if args.paths.is_empty() {
        vec![g.config.quiz_dir.clone()]
    } else {
        args.paths.clone()
    };
    let oracle = args.oracle.load(g)?;
    let (files, findings) = validate_files(&paths, oracle.as_deref())?;
    let errors = findings
        .iter()
        .filter(|f| f.severity == Severity::Error)
        .count();
    if g.json {
        print_json(&serde_json::json!({
            "files": files,
            "errors": errors,
            "warnings": findings.len() - errors,
            "findings": findings,
        }))?;
    } else {
        for f in &findings {
            let sev = match f.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            match f.question_id {
                Some(id) => println!("{sev}[{}] {}: {id}: {}", f.code, f.file.display(), f.message),
                None => println!("{sev}[{}] {}: {}", f.code, f.file.display(), f.message),
            }
        }
        println!(
            "{files} quiz files, {errors} errors, {} warnings",
            findings.len() - errors
        );
    }
    if errors > 0 {
        return Err(Failure.into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Book source directory [default: bookRoot from the config]
    #[arg(long)]
    book_root: Option<PathBuf>,
    /// Quiz directory [default: quizDir from the config]
    #[arg(long)]
    quiz_dir: Option<PathBuf>,
    /// Output directory [default: outputDir from the config]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Commit hash to stamp into placeholders [default: git HEAD of the book]
    #[arg(long)]
    commit_hash: Option<String>,
    #[command(flatten)]
    oracle: OracleArgs,
}

pub fn build(g: &Global, args: &BuildArgs) -> Result<()> {
    let cfg = BookConfig {
        book_root: args.book_root.clone().unwrap_or_else(|| g.config.book_root.clone()),
        quiz_dir: args.quiz_dir.clone().unwrap_or_else(|| g.config.quiz_dir.clone()),
        out_dir: args.out.clone().unwrap_or_else(|| g.config.output_dir.clone()),
        commit_hash: args.commit_hash.clone().or_else(|| g.config.commit_hash.clone()),
    };
    let oracle = args.oracle.load(g)?;
    let out = match build_book(&cfg, oracle.as_deref()) {
        Ok(out) => out,
        Err(Error::Validation(text)) => {
            eprint!("{text}");
            eprintln!("build aborted: quiz validation failed");
            return Err(Failure.into());
        }
        Err(e) => {
            eprintln!("error: {e}");
            return Err(Failure.into());
        }
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    if g.json {
        print_json(&serde_json::json!({
            "commitHash": out.manifest.commit_hash,
            "chapters": out.manifest.chapters.len(),
            "quizzes": out.manifest.quizzes.len(),
            "manifest": manifest_path,
            "warnings": out.report.findings,
        }))?;
    } else {
        eprint!("{}", out.report.to_text());
        println!(
            "built {} chapters with {} quizzes at {} -> {}",
            out.manifest.chapters.len(),
            out.manifest.quizzes.len(),
            out.manifest.commit_hash,
            manifest_path.display()
        );
    }
    Ok(())
}
