use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

pub const CONFIG_FILE: &str = "learnprof.toml";

/// Contents of `learnprof.toml`. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default = "default_book_root")]
    pub book_root: PathBuf,
    #[serde(default = "default_quiz_dir")]
    pub quiz_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// NDJSON export read by the analysis commands.
    #[serde(default = "default_export_file")]
    pub export_file: PathBuf,
    #[serde(default = "default_telemetry_url")]
    pub telemetry_url: String,
    /// Name of the environment variable holding the export token.
    #[serde(default = "default_export_token")]
    pub export_token: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub commit_hash: Option<String>,
    /// Compile oracle command line for tracing questions.
    #[serde(default)]
    pub oracle: Option<String>,
}

fn default_book_root() -> PathBuf {
    "src".into()
}

fn default_quiz_dir() -> PathBuf {
    "quizzes".into()
}

fn default_output_dir() -> PathBuf {
    "out".into()
}

fn default_export_file() -> PathBuf {
    "events.ndjson".into()
}

fn default_telemetry_url() -> String {
    "http://127.0.0.1:8080".into()
}

fn default_export_token() -> String {
    learnprof_telemetry::TOKEN_ENV.into()
}

impl Default for ProjectConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ProjectConfig {
    /// Loads `path`, or defaults rooted at the current directory when no
    /// path was given and `learnprof.toml` does not exist.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let (path, required) = match path {
            Some(p) => (p.to_path_buf(), true),
            None => (PathBuf::from(CONFIG_FILE), false),
        };
        if !required && !path.exists() {
            return Ok(ProjectConfig::default());
        }
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ProjectConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for p in [
            &mut cfg.book_root,
            &mut cfg.quiz_dir,
            &mut cfg.output_dir,
            &mut cfg.export_file,
        ] {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.json")
    }

    /// Ground truth written next to the export by `synth`, if present.
    pub fn truth_path(&self) -> PathBuf {
        self.export_file.with_file_name("truth.json")
    }

    pub fn token(&self) -> Option<String> {
        std::env::var(&self.export_token).ok().filter(|t| !t.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        fs::write(&path, "bookRoot = \"book/src\"\nseed = 3\n").unwrap();
        let cfg = ProjectConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.book_root, dir.path().join("book/src"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.export_token, "LEARNPROF_EXPORT_TOKEN");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CONFIG_FILE);
        fs::write(&path, "bookroot = \"x\"\n").unwrap();
        assert!(ProjectConfig::load(Some(&path)).is_err());
    }
}
