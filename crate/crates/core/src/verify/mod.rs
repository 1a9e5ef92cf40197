//! Acceptance suites: gradient checks, loop oracles, invariants and seeded
//! training experiments. Each suite reports observed against expected values.

pub mod experiments;
pub mod oracle;
mod suites;

use std::time::{Duration, Instant};

use crate::model::{NormScale, PscnetConfig};

/// Deliberate defects used to show that the suites isolate failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Channel normalization scaled by `C` instead of `sqrt(C)`.
    GcmNormScale,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Substring of a suite name, or a module name (`supervision`, `gcm`, ...).
    pub filter: Option<String>,
    pub fault: Option<Fault>,
}

impl VerifyOptions {
    pub fn model_config(&self) -> PscnetConfig {
        let mut c = PscnetConfig::toy();
        if self.fault == Some(Fault::GcmNormScale) {
            c.gcm.norm_scale = NormScale::Channels;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<22} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub(crate) struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub struct Suite {
    pub id: u8,
    pub name: &'static str,
    pub module: &'static str,
    run: fn(&VerifyOptions) -> crate::Result<Outcome>,
}

impl Suite {
    pub fn selected(&self, filter: Option<&str>) -> bool {
        filter.is_none_or(|f| self.name.contains(f) || self.module == f || f == self.id.to_string())
    }

    pub fn run(&self, opts: &VerifyOptions) -> SuiteResult {
        let start = Instant::now();
        let outcome = (self.run)(opts).unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        SuiteResult {
            id: self.id,
            name: self.name,
            passed: outcome.passed,
            detail: outcome.detail,
            elapsed: start.elapsed(),
        }
    }
}

pub fn suites() -> Vec<Suite> {
    let s = |id, name, module, run| Suite { id, name, module, run };
    vec![
        s(1, "gradient-check", "tensor", suites::gradients),
        s(2, "bayesian-loss-oracle", "supervision", suites::bayesian_oracle),
        s(3, "gcm-identities", "gcm", suites::gcm_identities),
        s(4, "conv-oracles", "nn", suites::conv_oracles),
        s(5, "shape-law", "model", suites::shape_law),
        s(6, "metrics", "eval", suites::metrics),
        s(7, "overfit", "train", suites::overfit),
        s(8, "generalization", "train", suites::generalization),
        s(9, "lambda-ablation", "train", suites::lambda_ablation),
        s(10, "determinism", "train", suites::determinism),
    ]
}

/// Runs the selected suites in order, calling `on_result` after each.
pub fn run(opts: &VerifyOptions, mut on_result: impl FnMut(&SuiteResult)) -> Vec<SuiteResult> {
    suites()
        .iter()
        .filter(|s| s.selected(opts.filter.as_deref()))
        .map(|s| {
            let r = s.run(opts);
            on_result(&r);
            r
        })
        .collect()
}

/// A single suite by id.
pub fn run_one(id: u8, opts: &VerifyOptions) -> Option<SuiteResult> {
    suites().into_iter().find(|s| s.id == id).map(|s| s.run(opts))
}
