//! The `attestrep.manifest` file.
//!
//! Line-oriented `key = value` text:
//!
//! ```text
//! # comment
//! entrypoint = run.sh
//! output = results/
//! env = python@3.11
//! meta.title = Some paper
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "attestrep.manifest";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no {MANIFEST_FILE} in {0}")]
    ManifestMissing(PathBuf),
    #[error("manifest line {line}: {reason}")]
    ManifestParseError { line: usize, reason: String },
    #[error("{field}: path {path:?} violates path rules ({reason})")]
    PathRuleViolation {
        field: String,
        path: String,
        reason: PathRuleError,
    },
    #[error("reading manifest: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PathRuleError {
    #[error("empty path")]
    Empty,
    #[error("leading slash")]
    Absolute,
    #[error("backslash separator")]
    Backslash,
    #[error("`..` segment")]
    ParentSegment,
    #[error("`.` or empty segment")]
    EmptySegment,
    #[error("NUL byte")]
    Nul,
}

/// Checks a package-relative path: `/` separators, no leading slash, no `.`/`..`
/// or empty segments. A single trailing slash is tolerated when
/// `allow_trailing_slash` is set (directory outputs such as `results/`).
pub fn validate_rel_path(path: &str, allow_trailing_slash: bool) -> Result<(), PathRuleError> {
    if path.is_empty() {
        return Err(PathRuleError::Empty);
    }
    if path.starts_with('/') {
        return Err(PathRuleError::Absolute);
    }
    if path.contains('\\') {
        return Err(PathRuleError::Backslash);
    }
    if path.contains('\0') {
        return Err(PathRuleError::Nul);
    }
    let body = match path.strip_suffix('/') {
        Some(body) if allow_trailing_slash => body,
        _ => path,
    };
    for segment in body.split('/') {
        match segment {
            ".." => return Err(PathRuleError::ParentSegment),
            "" | "." => return Err(PathRuleError::EmptySegment),
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvRequirement {
    pub name: String,
    pub version: String,
}

impl fmt::Display for EnvRequirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageManifest {
    pub entrypoint: String,
    pub declared_outputs: Vec<String>,
    pub env_spec: Vec<EnvRequirement>,
    pub metadata: BTreeMap<String, String>,
}

impl PackageManifest {
    pub fn new(entrypoint: impl Into<String>) -> Self {
        Self {
            entrypoint: entrypoint.into(),
            declared_outputs: Vec::new(),
            env_spec: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut entrypoint: Option<(usize, String)> = None;
        let mut declared_outputs = Vec::new();
        let mut env_spec = Vec::new();
        let mut metadata = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: &str| ManifestError::ManifestParseError {
                line: line_no,
                reason: reason.to_string(),
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(parse_err("empty value"));
            }

            match key {
                "entrypoint" => {
                    if entrypoint.is_some() {
                        return Err(parse_err("duplicate entrypoint"));
                    }
                    entrypoint = Some((line_no, value.to_string()));
                }
                "output" => declared_outputs.push(value.to_string()),
                "env" => {
                    let (name, version) = value
                        .split_once('@')
                        .filter(|(n, v)| !n.is_empty() && !v.is_empty())
                        .ok_or_else(|| parse_err("env must be `name@version`"))?;
                    env_spec.push(EnvRequirement {
                        name: name.trim().to_string(),
                        version: version.trim().to_string(),
                    });
                }
                _ => match key.strip_prefix("meta.") {
                    Some(meta_key) if !meta_key.is_empty() => {
                        metadata.insert(meta_key.to_string(), value.to_string());
                    }
                    _ => return Err(parse_err(&format!("unknown key `{key}`"))),
                },
            }
        }

        let (_, entrypoint) = entrypoint.ok_or(ManifestError::ManifestParseError {
            line: 0,
            reason: "missing required key `entrypoint`".into(),
        })?;
        let manifest = Self {
            entrypoint,
            declared_outputs,
            env_spec,
            metadata,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        validate_rel_path(&self.entrypoint, false).map_err(|reason| {
            ManifestError::PathRuleViolation {
                field: "entrypoint".into(),
                path: self.entrypoint.clone(),
                reason,
            }
        })?;
        for output in &self.declared_outputs {
            validate_rel_path(output, true).map_err(|reason| ManifestError::PathRuleViolation {
                field: "output".into(),
                path: output.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("entrypoint = {}\n", self.entrypoint);
        for output in &self.declared_outputs {
            out.push_str(&format!("output = {output}\n"));
        }
        for env in &self.env_spec {
            out.push_str(&format!("env = {env}\n"));
        }
        for (k, v) in &self.metadata {
            out.push_str(&format!("meta.{k} = {v}\n"));
        }
        out
    }
}

pub fn load_manifest(root: &Path) -> Result<PackageManifest, ManifestError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ManifestError::ManifestMissing(root.to_path_buf()));
    }
    let bytes = std::fs::read(&path)?;
    let text = String::from_utf8(bytes).map_err(|e| ManifestError::ManifestParseError {
        line: 0,
        reason: format!("not UTF-8: {e}"),
    })?;
    PackageManifest::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_manifest() {
        let m = PackageManifest::parse("entrypoint = run.sh\noutput = results/\n").unwrap();
        assert_eq!(m.entrypoint, "run.sh");
        assert_eq!(m.declared_outputs, vec!["results/".to_string()]);
        assert!(m.env_spec.is_empty());
        assert!(m.metadata.is_empty());
    }

    #[test]
    fn parses_all_keys_and_comments() {
        let text = "# replication package\n\
                    entrypoint = code/main.sh\n\
                    output = results/\n\
                    output = tables/*.csv\n\
                    env = R@4.3.1\n\
                    env = stata@18\n\
                    meta.title = Cheap talk in markets\n\
                    meta.doi = 10.1287/mnsc.2022.4628\n";
        let m = PackageManifest::parse(text).unwrap();
        assert_eq!(m.declared_outputs.len(), 2);
        assert_eq!(
            m.env_spec[0],
            EnvRequirement {
                name: "R".into(),
                version: "4.3.1".into()
            }
        );
        assert_eq!(m.metadata["doi"], "10.1287/mnsc.2022.4628");
        assert_eq!(PackageManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn escaping_entrypoint_is_rejected() {
        match PackageManifest::parse("entrypoint = ../escape.sh\n") {
            Err(ManifestError::PathRuleViolation { field, path, reason }) => {
                assert_eq!(field, "entrypoint");
                assert_eq!(path, "../escape.sh");
                assert_eq!(reason, PathRuleError::ParentSegment);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn output_paths_obey_rules() {
        for bad in ["/abs", "a/../b", "a\\b", "a//b", "./x"] {
            let text = format!("entrypoint = run.sh\noutput = {bad}\n");
            assert!(
                matches!(
                    PackageManifest::parse(&text),
                    Err(ManifestError::PathRuleViolation { .. })
                ),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn trailing_slash_only_for_outputs() {
        assert!(validate_rel_path("results/", true).is_ok());
        assert_eq!(
            validate_rel_path("run/", false),
            Err(PathRuleError::EmptySegment)
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = PackageManifest::parse("entrypoint = run.sh\n\nbogus line\n").unwrap_err();
        assert!(matches!(err, ManifestError::ManifestParseError { line: 3, .. }));
        let err = PackageManifest::parse("output = x\n").unwrap_err();
        assert!(matches!(err, ManifestError::ManifestParseError { line: 0, .. }));
        let err = PackageManifest::parse("entrypoint = a\nentrypoint = b\n").unwrap_err();
        assert!(matches!(err, ManifestError::ManifestParseError { line: 2, .. }));
        let err = PackageManifest::parse("entrypoint = a\nenv = python\n").unwrap_err();
        assert!(matches!(err, ManifestError::ManifestParseError { line: 2, .. }));
        let err = PackageManifest::parse("entrypoint = a\ncolor = blue\n").unwrap_err();
        assert!(matches!(err, ManifestError::ManifestParseError { line: 2, .. }));
    }

    #[test]
    fn missing_manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(dir.path()),
            Err(ManifestError::ManifestMissing(_))
        ));
    }

    #[test]
    fn loads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            "entrypoint = run.sh\noutput = results/\n",
        )
        .unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.entrypoint, "run.sh");
    }
}
