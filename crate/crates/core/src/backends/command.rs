//! Checker adapter that shells out to an external compiler.
//!
//! The command template is split on whitespace and `{file}` is replaced by
//! the path of a temporary file holding the sketch. The command must print
//! one event per line on stdout:
//!
//! ```text
//! ERROR <line>:<col> <message>
//! GOAL <id> <goal text>
//! OK
//! ```
//!
//! Other lines are ignored. A non-zero exit status without any `ERROR` line
//! is reported as an error at 0:0.

use std::io::Write;
use std::process::Command;

use super::{BackendError, Checker, DiagnosticError, Diagnostics};

#[derive(Debug, Clone)]
pub struct CommandChecker {
    template: Vec<String>,
    suffix: String,
}

impl CommandChecker {
    pub fn new(template: &str) -> Result<Self, BackendError> {
        let template: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        if template.is_empty() {
            return Err(BackendError::CheckerUnavailable("empty command template".into()));
        }
        Ok(CommandChecker {
            template,
            suffix: ".lean".into(),
        })
    }

    pub fn with_suffix(mut self, suffix: impl Into<String>) -> Self {
        self.suffix = suffix.into();
        self
    }
}

pub fn parse_diagnostic_lines(stdout: &str) -> Diagnostics {
    let mut errors = Vec::new();
    let mut open_goals = Vec::new();
    for line in stdout.lines() {
        if let Some(rest) = line.strip_prefix("ERROR ") {
            let (pos, message) = rest.split_once(' ').unwrap_or((rest, ""));
            let (l, c) = pos.split_once(':').unwrap_or((pos, "0"));
            errors.push(DiagnosticError {
                line: l.parse().unwrap_or(0),
                col: c.parse().unwrap_or(0),
                message: message.to_string(),
            });
        } else if let Some(rest) = line.strip_prefix("GOAL ") {
            let text = rest.split_once(' ').map_or("", |(_, t)| t);
            open_goals.push(text.to_string());
        }
    }
    Diagnostics {
        compiles: errors.is_empty(),
        errors,
        open_goals,
    }
}

impl Checker for CommandChecker {
    fn check(&self, sketch_text: &str) -> Result<Diagnostics, BackendError> {
        let mut file = tempfile::Builder::new()
            .prefix("sketch-")
            .suffix(&self.suffix)
            .tempfile()
            .map_err(|e| BackendError::CheckerUnavailable(e.to_string()))?;
        file.write_all(sketch_text.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| BackendError::CheckerUnavailable(e.to_string()))?;
        let path = file.path().to_string_lossy().into_owned();
        let args: Vec<String> = self.template.iter().map(|a| a.replace("{file}", &path)).collect();
        let output = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| BackendError::CheckerUnavailable(format!("{}: {e}", args[0])))?;
        let mut diags = parse_diagnostic_lines(&String::from_utf8_lossy(&output.stdout));
        if !output.status.success() && diags.errors.is_empty() {
            diags.errors.push(DiagnosticError {
                line: 0,
                col: 0,
                message: format!("checker exited with {}", output.status),
            });
            diags.compiles = false;
        }
        Ok(diags)
    }
}
