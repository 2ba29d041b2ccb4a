//! Policy decision point and precision/recall/F1 scoring.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Matcher;
use crate::model::{AccessRequest, Decision, DecisionExample, DomainContext, Rule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combining {
    #[default]
    #[serde(alias = "deny-overrides")]
    DenyOverrides,
    #[serde(alias = "permit-overrides")]
    PermitOverrides,
    #[serde(alias = "first-applicable")]
    FirstApplicable,
}

impl FromStr for Combining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "deny_overrides" => Ok(Combining::DenyOverrides),
            "permit_overrides" => Ok(Combining::PermitOverrides),
            "first_applicable" => Ok(Combining::FirstApplicable),
            other => Err(Error::InvalidConfig(format!("unknown combining algorithm `{other}`"))),
        }
    }
}

/// What to do with requests no rule applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaPolicy {
    #[default]
    #[serde(alias = "treat-as-deny")]
    TreatAsDeny,
    Exclude,
}

impl FromStr for NaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "treat_as_deny" | "deny" => Ok(NaPolicy::TreatAsDeny),
            "exclude" => Ok(NaPolicy::Exclude),
            other => Err(Error::InvalidConfig(format!("unknown not-applicable policy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Permit,
    Deny,
    NotApplicable,
}

impl From<Decision> for Outcome {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Permit => Outcome::Permit,
            Decision::Deny => Outcome::Deny,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Permit => "permit",
            Outcome::Deny => "deny",
            Outcome::NotApplicable => "not_applicable",
        })
    }
}

/// Folds the decisions of applicable rules, in rule order.
pub fn combine<I: IntoIterator<Item = Decision>>(decisions: I, combining: Combining) -> Outcome {
    let mut seen_permit = false;
    let mut seen_deny = false;
    for d in decisions {
        match (combining, d) {
            (Combining::FirstApplicable, d) => return d.into(),
            (Combining::DenyOverrides, Decision::Deny) => return Outcome::Deny,
            (Combining::PermitOverrides, Decision::Permit) => return Outcome::Permit,
            (_, Decision::Permit) => seen_permit = true,
            (_, Decision::Deny) => seen_deny = true,
        }
    }
    match (seen_permit, seen_deny) {
        (true, _) => Outcome::Permit,
        (_, true) => Outcome::Deny,
        _ => Outcome::NotApplicable,
    }
}

/// Decision for a request over entities known to `ctx`.
pub fn decide(rules: &[Rule], request: &AccessRequest, ctx: &DomainContext, combining: Combining) -> Result<Outcome> {
    ctx.check_request(request)?;
    let mut applicable = Vec::new();
    for rule in rules {
        if ctx.rule_applies(rule, request)? {
            applicable.push(rule.decision);
        }
    }
    Ok(combine(applicable, combining))
}

/// Decision for a logged example. Rules apply when the example is similar to
/// them, so examples whose entities are unknown to `ctx` are judged by
/// their attribute expressions.
pub fn decide_example(rules: &[Rule], example: &DecisionExample, matcher: &Matcher<'_>, combining: Combining) -> Outcome {
    combine(
        rules.iter().filter(|r| matcher.example_similar(example, r)).map(|r| r.decision),
        combining,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// Examples left out because no rule applied (`NaPolicy::Exclude` only).
    pub excluded: usize,
    /// Fraction of examples at least one rule applied to.
    pub coverage: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl MetricsReport {
    /// Scores a confusion matrix with permit as the positive class.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                degenerate = true;
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Self { tp, fp, fn_, tn, excluded: 0, coverage: 1.0, precision, recall, f1, degenerate }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn + self.excluded
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub combining: Combining,
    pub na_policy: NaPolicy,
}

/// One replayed example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestOutcome {
    pub user: String,
    pub resource: String,
    pub op: String,
    pub actual: Decision,
    pub predicted: Outcome,
}

pub fn replay(rules: &[Rule], test: &[DecisionExample], ctx: &DomainContext, opts: EvalOptions) -> Vec<RequestOutcome> {
    let matcher = Matcher::new(ctx);
    test.iter()
        .map(|ex| RequestOutcome {
            user: ex.user.clone(),
            resource: ex.resource.clone(),
            op: ex.op.clone(),
            actual: ex.decision,
            predicted: decide_example(rules, ex, &matcher, opts.combining),
        })
        .collect()
}

pub fn evaluate(rules: &[Rule], test: &[DecisionExample], ctx: &DomainContext, opts: EvalOptions) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyExamples);
    }
    Ok(score(&replay(rules, test, ctx, opts), opts.na_policy))
}

/// Confusion matrix and ratios for a set of replayed outcomes.
pub fn score(outcomes: &[RequestOutcome], na_policy: NaPolicy) -> MetricsReport {
    let (mut tp, mut fp, mut fn_, mut tn, mut excluded, mut covered) = (0, 0, 0, 0, 0, 0);
    for o in outcomes {
        let predicted = match (o.predicted, na_policy) {
            (Outcome::Permit, _) => Decision::Permit,
            (Outcome::Deny, _) => Decision::Deny,
            (Outcome::NotApplicable, NaPolicy::TreatAsDeny) => Decision::Deny,
            (Outcome::NotApplicable, NaPolicy::Exclude) => {
                excluded += 1;
                continue;
            }
        };
        if o.predicted != Outcome::NotApplicable {
            covered += 1;
        }
        match (predicted, o.actual) {
            (Decision::Permit, Decision::Permit) => tp += 1,
            (Decision::Permit, Decision::Deny) => fp += 1,
            (Decision::Deny, Decision::Permit) => fn_ += 1,
            (Decision::Deny, Decision::Deny) => tn += 1,
        }
    }
    let mut report = MetricsReport::from_counts(tp, fp, fn_, tn);
    report.excluded = excluded;
    report.coverage = if outcomes.is_empty() { 0.0 } else { covered as f64 / outcomes.len() as f64 };
    report
}

/// Aligned-column rendering of one or more labelled reports.
pub fn render_table<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a MetricsReport)>,
{
    let mut out = format!(
        "{:<10} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9}\n",
        "name", "tp", "fp", "fn", "tn", "coverage", "precision", "recall", "f1"
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<10} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            name, r.tp, r.fp, r.fn_, r.tn, r.coverage, r.precision, r.recall, r.f1
        ));
    }
    out
}
