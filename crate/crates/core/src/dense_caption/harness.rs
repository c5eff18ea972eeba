//! Replays recorded scorer replies and measures how often they parse and
//! agree with their labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::protocol::parse_scorer_response;
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../assets/scorer_fixtures.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerFixture {
    pub name: String,
    pub tagger: String,
    pub llm: String,
    pub prompt: String,
    pub tags: Vec<String>,
    pub raw: String,
    pub well_formed: bool,
    /// Expected score per tag, for well-formed fixtures.
    #[serde(default)]
    pub expected: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSet {
    pub fixtures: Vec<ScorerFixture>,
}

impl FixtureSet {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled fixtures are valid")
    }

    pub fn from_json(text: &str, locator: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            locator: locator.to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureOutcome {
    /// Parsed and every score matches the label.
    Consistent,
    /// Parsed but some score disagrees with the label.
    Inconsistent,
    /// Rejected as a protocol error.
    ProtocolError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureResult {
    pub name: String,
    pub well_formed: bool,
    pub outcome: FixtureOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FixtureResult {
    /// Well-formed fixtures must be consistent; malformed ones must be
    /// rejected.
    pub fn correctly_classified(&self) -> bool {
        match self.outcome {
            FixtureOutcome::ProtocolError => !self.well_formed,
            FixtureOutcome::Consistent => self.well_formed,
            FixtureOutcome::Inconsistent => false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairReport {
    pub total: usize,
    pub well_formed: usize,
    pub parsed_well_formed: usize,
    pub malformed: usize,
    pub malformed_rejected: usize,
    pub consistent: usize,
    /// Fraction of all replies that parsed and matched their labels.
    pub success_rate: f64,
    pub misclassified: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct HarnessReport {
    /// Keyed by `tagger+llm`.
    pub pairs: BTreeMap<String, PairReport>,
    pub results: Vec<FixtureResult>,
}

impl HarnessReport {
    pub fn parse_success_rate(&self) -> f64 {
        let (ok, n) = self.pairs.values().fold((0, 0), |(a, b), p| {
            (a + p.parsed_well_formed, b + p.well_formed)
        });
        if n == 0 {
            1.0
        } else {
            ok as f64 / n as f64
        }
    }

    pub fn all_malformed_rejected(&self) -> bool {
        self.pairs
            .values()
            .all(|p| p.malformed == p.malformed_rejected)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>5} {:>8} {:>9} {:>9}\n",
            "pair", "total", "success", "parsed", "rejected"
        );
        for (k, p) in &self.pairs {
            s.push_str(&format!(
                "{:<24} {:>5} {:>7.1}% {:>4}/{:<4} {:>4}/{:<4}\n",
                k,
                p.total,
                100.0 * p.success_rate,
                p.parsed_well_formed,
                p.well_formed,
                p.malformed_rejected,
                p.malformed
            ));
        }
        s
    }
}

pub fn classify(fixture: &ScorerFixture) -> FixtureResult {
    let (outcome, error) = match parse_scorer_response(&fixture.raw, &fixture.tags) {
        Err(e @ Error::Protocol { .. }) => (FixtureOutcome::ProtocolError, Some(e.to_string())),
        Err(e) => (FixtureOutcome::Inconsistent, Some(e.to_string())),
        Ok(parsed) => {
            let agrees = fixture.expected.as_ref().is_none_or(|exp| {
                exp.len() == parsed.len()
                    && exp
                        .iter()
                        .all(|(t, s)| parsed.get(t).is_some_and(|p| p.score().value() == *s))
            });
            if agrees {
                (FixtureOutcome::Consistent, None)
            } else {
                (FixtureOutcome::Inconsistent, None)
            }
        }
    };
    FixtureResult {
        name: fixture.name.clone(),
        well_formed: fixture.well_formed,
        outcome,
        error,
    }
}

pub fn run_harness(set: &FixtureSet) -> HarnessReport {
    let mut report = HarnessReport::default();
    for f in &set.fixtures {
        let r = classify(f);
        let p = report
            .pairs
            .entry(format!("{}+{}", f.tagger, f.llm))
            .or_default();
        p.total += 1;
        if f.well_formed {
            p.well_formed += 1;
            if r.outcome != FixtureOutcome::ProtocolError {
                p.parsed_well_formed += 1;
            }
        } else {
            p.malformed += 1;
            if r.outcome == FixtureOutcome::ProtocolError {
                p.malformed_rejected += 1;
            }
        }
        if r.outcome == FixtureOutcome::Consistent {
            p.consistent += 1;
        }
        if !r.correctly_classified() {
            p.misclassified.push(r.name.clone());
        }
        report.results.push(r);
    }
    for p in report.pairs.values_mut() {
        p.success_rate = p.consistent as f64 / p.total as f64;
    }
    report
}
