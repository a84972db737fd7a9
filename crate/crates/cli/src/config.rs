//! TOML run configuration: parse, validate, dump.

use std::path::Path;

use scmcts_core::pipeline::RunConfig;

use crate::error::{io_error, ConfigError, Error, Result};

/// Parses and validates config text. Empty text gives the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|span| line_of(text, span.start));
        let key = e.span().and_then(|span| key_at(text, span.start));
        ConfigError {
            path: None,
            key,
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    config.validate().map_err(|e| {
        let message = match e {
            scmcts_core::Error::Config(m) => m,
            other => other.to_string(),
        };
        // Validation messages lead with the dotted key they are about.
        let key = message
            .split_whitespace()
            .next()
            .filter(|k| k.contains('.') && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_'))
            .map(str::to_string);
        let line = key.as_deref().and_then(|k| locate_key(text, k));
        ConfigError {
            path: None,
            key,
            line,
            message,
        }
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    parse_config(&text).map_err(|mut e| {
        e.path = Some(path.to_path_buf());
        Error::Config(e)
    })
}

/// Canonical text of the effective configuration. Equal configs give equal
/// text; the text parses back to the same config.
pub fn dump_config(config: &RunConfig) -> String {
    toml::to_string(config).expect("run config always serializes")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn table_header(line: &str) -> Option<&str> {
    let line = strip_comment(line);
    line.strip_prefix('[')
        .and_then(|rest| rest.strip_suffix(']'))
        .map(|name| name.trim_matches(|c| c == '[' || c == ']').trim())
}

fn assigned_key(line: &str) -> Option<&str> {
    let line = strip_comment(line);
    let (key, _) = line.split_once('=')?;
    Some(key.trim().trim_matches('"'))
}

/// Dotted key assigned on the line containing `offset`, qualified by the
/// table it sits in.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let target = line_of(text, offset);
    let mut table: Option<&str> = None;
    for (i, line) in text.lines().enumerate() {
        if let Some(name) = table_header(line) {
            table = Some(name);
            if i + 1 == target {
                return Some(name.to_string());
            }
            continue;
        }
        if i + 1 == target {
            let key = assigned_key(line)?;
            return Some(match table {
                Some(t) => format!("{t}.{key}"),
                None => key.to_string(),
            });
        }
    }
    None
}

/// Line on which dotted `key` is assigned, either inside its table or as a
/// dotted key at top level.
fn locate_key(text: &str, key: &str) -> Option<usize> {
    let mut table: Option<&str> = None;
    for (i, line) in text.lines().enumerate() {
        if let Some(name) = table_header(line) {
            table = Some(name);
            continue;
        }
        let Some(assigned) = assigned_key(line) else {
            continue;
        };
        let full = match table {
            Some(t) => format!("{t}.{assigned}"),
            None => assigned.to_string(),
        };
        if full.replace(' ', "") == key {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_all_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn negative_c_puct_names_key_and_line() {
        let err = parse_config("[env]\nbranching = 4\n\n[search]\nc_puct = -1\n").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("search.c_puct"));
        assert_eq!(err.line, Some(5));
        let err = parse_config("search.c_puct = -1\n").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("search.c_puct"));
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let err = parse_config("[search]\nbudget = 8\nc_putc = 2.0\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.key.as_deref(), Some("search.c_putc"));
        assert!(err.message.contains("c_putc"), "{}", err.message);
    }

    #[test]
    fn type_mismatch_is_located() {
        let err = parse_config("[prefopt]\nrounds = \"many\"\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert_eq!(err.key.as_deref(), Some("prefopt.rounds"));
    }

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.search.c_puct = 2.5;
        c.pipeline.seeds = vec![4, 5];
        c.selfcorrect.optimizer = scmcts_core::optim::OptimizerKind::Sgd;
        let text = dump_config(&c);
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(dump_config(&parse_config(&text).unwrap()), text);
    }

    #[test]
    fn l_alias_sets_retries() {
        let c = parse_config("[selfcorrect]\nl = 2\n").unwrap();
        assert_eq!(c.selfcorrect.retries, 2);
    }
}
