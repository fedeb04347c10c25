//! Audit rows shared by every verification suite.

use std::fmt;

use serde::{Deserialize, Serialize};

/// How `lhs` is compared with `rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|lhs − rhs| ≤ tolerance · |rhs|`
    Relative,
    /// `|lhs − rhs| ≤ tolerance`
    Absolute,
    /// `lhs ≤ rhs + tolerance`
    AtMost,
    /// `lhs ≥ rhs − tolerance`
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub property: String,
    pub domain: String,
    pub lambda: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReportRow {
    pub fn new(property: &str, domain: &str, lambda: Option<f64>, lhs: f64, rhs: f64, tolerance: f64, comparison: Comparison) -> Self {
        let pass = match comparison {
            Comparison::Relative => (lhs - rhs).abs() <= tolerance * rhs.abs(),
            Comparison::Absolute => (lhs - rhs).abs() <= tolerance,
            Comparison::AtMost => lhs <= rhs + tolerance,
            Comparison::AtLeast => lhs >= rhs - tolerance,
        };
        Self {
            property: property.to_string(),
            domain: domain.to_string(),
            lambda,
            lhs,
            rhs,
            tolerance,
            comparison,
            pass: pass && lhs.is_finite() && rhs.is_finite(),
            note: None,
        }
    }

    pub fn relative(property: &str, domain: &str, lambda: Option<f64>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self::new(property, domain, lambda, lhs, rhs, tolerance, Comparison::Relative)
    }

    pub fn at_most(property: &str, domain: &str, lambda: Option<f64>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self::new(property, domain, lambda, lhs, rhs, tolerance, Comparison::AtMost)
    }

    pub fn at_least(property: &str, domain: &str, lambda: Option<f64>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self::new(property, domain, lambda, lhs, rhs, tolerance, Comparison::AtLeast)
    }

    /// A boolean verdict recorded as `lhs = 1` against `rhs = 1`.
    pub fn flag(property: &str, domain: &str, lambda: Option<f64>, ok: bool) -> Self {
        Self::new(property, domain, lambda, if ok { 1.0 } else { 0.0 }, 1.0, 0.0, Comparison::Absolute)
    }

    /// Fails the row unless `ok` also holds.
    pub fn require(mut self, ok: bool) -> Self {
        self.pass &= ok;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

impl fmt::Display for ReportRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lam = self.lambda.map_or("-".to_string(), |l| format!("{l}"));
        let op = match self.comparison {
            Comparison::Relative => "~rel",
            Comparison::Absolute => "~abs",
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        write!(
            f,
            "{} {:<40} {:<28} lambda={:<5} {:.6e} {} {:.6e} (tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.property,
            self.domain,
            lam,
            self.lhs,
            op,
            self.rhs,
            self.tolerance
        )?;
        if let Some(n) = &self.note {
            write!(f, " [{n}]")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(suite: &str) -> Self {
        Self { suite: suite.to_string(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }

    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(f, "[{}] {r}", self.suite)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons() {
        assert!(ReportRow::relative("a", "d", None, 1.01, 1.0, 0.02).pass);
        assert!(!ReportRow::relative("a", "d", None, 1.03, 1.0, 0.02).pass);
        assert!(ReportRow::at_most("a", "d", None, 1.0, 1.0, 0.0).pass);
        assert!(!ReportRow::at_least("a", "d", None, 0.5, 1.0, 0.1).pass);
        assert!(!ReportRow::relative("a", "d", None, f64::NAN, 1.0, 0.1).pass);
        assert!(!ReportRow::flag("a", "d", Some(2.0), false).pass);
    }

    #[test]
    fn serializes_the_schema() {
        let row = ReportRow::relative("kinetic identity", "radial", Some(4.0), 1.0, 1.0, 0.03);
        let v: serde_json::Value = serde_json::to_value(&row).unwrap();
        for key in ["property", "domain", "lambda", "lhs", "rhs", "tolerance", "pass"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
