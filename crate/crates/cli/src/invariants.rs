use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

/// One checked property. Hard invariants decide the exit status; soft ones
/// are diagnostics whose failure is reported but tolerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    /// Family label, or `suite` / `global`.
    pub scope: String,
    pub stage: String,
    pub hard: bool,
    pub verdict: Verdict,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub note: String,
}

impl Invariant {
    pub fn failed_hard(&self) -> bool {
        self.hard && self.verdict == Verdict::Fail
    }
}

/// Collects invariants for one stage and scope.
pub struct Recorder<'a> {
    out: &'a mut Vec<Invariant>,
    stage: &'static str,
    scope: String,
}

impl<'a> Recorder<'a> {
    pub fn new(out: &'a mut Vec<Invariant>, stage: &'static str, scope: impl Into<String>) -> Self {
        Self {
            out,
            stage,
            scope: scope.into(),
        }
    }

    fn push(&mut self, name: &str, hard: bool, verdict: Verdict, value: Option<f64>, threshold: Option<f64>, note: String) {
        self.out.push(Invariant {
            name: name.to_string(),
            scope: self.scope.clone(),
            stage: self.stage.to_string(),
            hard,
            verdict,
            value,
            threshold,
            note,
        });
    }

    /// Passes when `value <= threshold`.
    pub fn at_most(&mut self, name: &str, hard: bool, value: f64, threshold: f64) {
        let verdict = if value <= threshold { Verdict::Pass } else { Verdict::Fail };
        self.push(name, hard, verdict, Some(value), Some(threshold), String::new());
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(&mut self, name: &str, hard: bool, value: f64, threshold: f64) {
        let verdict = if value >= threshold { Verdict::Pass } else { Verdict::Fail };
        self.push(name, hard, verdict, Some(value), Some(threshold), String::new());
    }

    pub fn holds(&mut self, name: &str, hard: bool, ok: bool, note: impl Into<String>) {
        let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
        self.push(name, hard, verdict, None, None, note.into());
    }

    pub fn not_applicable(&mut self, name: &str, hard: bool, note: impl Into<String>) {
        self.push(name, hard, Verdict::NotApplicable, None, None, note.into());
    }
}
