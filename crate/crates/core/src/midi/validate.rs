//! SMF validation: every condition that would make [`parse_smf`] fail is an
//! error issue; structural oddities that parse cleanly are warnings. This is
//! the quality gate the pipeline runs over every file it emits, so a transfer
//! result can never be written in a form a MIDI reader would refuse.

use super::parse::parse_internal;
use super::MidiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// Stable kebab-case code, e.g. `unmatched-note-on`.
    pub code: String,
    /// Byte offset the issue was detected at.
    pub offset: usize,
    pub message: String,
}

impl ValidationIssue {
    pub fn new(
        severity: Severity,
        code: impl Into<String>,
        offset: usize,
        message: impl Into<String>,
    ) -> Self {
        Self {
            severity,
            code: code.into(),
            offset,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    /// True iff the report carries no error-severity issues.
    pub fn is_valid(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings().any(|i| i.code == code)
    }
}

/// Validate raw SMF bytes without failing: all problems are reported.
///
/// `report.is_valid()` implies `parse_smf` succeeds on the same bytes.
pub fn validate_smf(bytes: &[u8]) -> ValidationReport {
    let mut issues = Vec::new();
    if let Err(err) = parse_internal(bytes, &mut issues) {
        issues.push(issue_from_error(&err));
    }
    ValidationReport { issues }
}

fn issue_from_error(err: &MidiError) -> ValidationIssue {
    ValidationIssue::new(
        Severity::Error,
        err.code(),
        err.offset().unwrap_or(0),
        err.to_string(),
    )
}
