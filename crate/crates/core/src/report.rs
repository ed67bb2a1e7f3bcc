//! Verification reports shared by all validators.

use std::fmt;

use serde::Serialize;

pub const REPORT_SCHEMA: &str = "hycomp.report/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    /// Where the check failed, e.g. `arrow f, branch 0` or `segment 3`.
    pub location: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

/// Outcome of a sampled check. Structural problems (wrong endpoints,
/// dimensions) are kept apart from semantic failures found by sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub check: String,
    pub structural: Vec<String>,
    pub failures: Vec<Failure>,
    pub samples: usize,
    pub worst_residual: f64,
}

impl Report {
    pub fn new(check: impl Into<String>) -> Report {
        Report {
            check: check.into(),
            structural: vec![],
            failures: vec![],
            samples: 0,
            worst_residual: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.structural.is_empty() && self.failures.is_empty()
    }

    pub fn is_structural_failure(&self) -> bool {
        !self.structural.is_empty()
    }

    pub fn structural(&mut self, msg: impl Into<String>) {
        self.structural.push(msg.into());
    }

    pub fn fail(&mut self, location: impl Into<String>, detail: impl Into<String>, residual: Option<f64>) {
        self.failures.push(Failure {
            location: location.into(),
            detail: detail.into(),
            residual,
        });
    }

    pub fn residual(&mut self, r: f64) {
        self.samples += 1;
        if r.is_nan() || r > self.worst_residual {
            self.worst_residual = r;
        }
    }

    /// Folds another report in, prefixing its locations.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        self.samples += other.samples;
        if other.worst_residual.is_nan() || other.worst_residual > self.worst_residual {
            self.worst_residual = other.worst_residual;
        }
        self.structural
            .extend(other.structural.into_iter().map(|s| format!("{prefix}: {s}")));
        self.failures.extend(other.failures.into_iter().map(|mut f| {
            f.location = format!("{prefix}: {}", f.location);
            f
        }));
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": REPORT_SCHEMA,
            "passed": self.passed(),
            "report": self,
        })
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            f,
            "{}: {verdict} ({} samples, worst residual {:.3e})",
            self.check, self.samples, self.worst_residual
        )?;
        for s in &self.structural {
            writeln!(f, "  structural: {s}")?;
        }
        for (i, fl) in self.failures.iter().enumerate() {
            if i == 20 {
                writeln!(f, "  ... {} more", self.failures.len() - 20)?;
                break;
            }
            match fl.residual {
                Some(r) => writeln!(f, "  {}: {} (residual {r:.3e})", fl.location, fl.detail)?,
                None => writeln!(f, "  {}: {}", fl.location, fl.detail)?,
            }
        }
        Ok(())
    }
}
