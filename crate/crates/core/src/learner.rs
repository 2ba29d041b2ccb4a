//! A staged policy learner.
//!
//! Each stage maps `(log, rules so far)` to a new rule set. The default
//! pipeline mines one most-specific rule per distinct example signature,
//! generalizes rules by dropping attributes that do not change the decision
//! over the log, restricts permit rules back to the values their supporting
//! examples actually use, and finally covers leftover examples with
//! nearest-neighbour votes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::Matcher;
use crate::model::{
    dedup_rules, AttributeExpression, Decision, DecisionExample, DomainContext, Origin, Rule, Side, ValueSet,
};

pub trait Stage: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    fn apply(&self, examples: &[DecisionExample], rules: Vec<Rule>, ctx: &DomainContext) -> Result<Vec<Rule>>;
}

/// Emits one most-specific rule per distinct `(user, resource, op,
/// decision)` signature, keeping incoming rules in front.
#[derive(Clone, Copy, Debug, Default)]
pub struct Mine;

impl Stage for Mine {
    fn name(&self) -> &str {
        "mine"
    }

    fn apply(&self, examples: &[DecisionExample], rules: Vec<Rule>, _ctx: &DomainContext) -> Result<Vec<Rule>> {
        if examples.is_empty() {
            return Err(Error::EmptyExamples);
        }
        let mut support: BTreeMap<(&AttributeExpression, &AttributeExpression, &str, Decision), usize> =
            BTreeMap::new();
        for ex in examples {
            *support.entry((&ex.user_expr, &ex.resource_expr, ex.op.as_str(), ex.decision)).or_default() += 1;
        }
        let mined = support.into_iter().map(|((user, resource, op, decision), n)| {
            let mut rule = Rule::new(user.clone(), resource.clone(), [op], decision)
                .expect("a single operation is never empty");
            rule.support = Some(n);
            rule
        });
        Ok(dedup_rules(rules.into_iter().chain(mined)))
    }
}

/// Drops attribute constraints whose removal keeps the rule's decision
/// dominant over the examples it would cover.
///
/// A constraint is dropped when the share of newly covered examples that
/// agree with the rule stays strictly above `threshold`; a threshold of 1.0
/// therefore disables generalization. Deny rules are never widened over a
/// permitted example, since deny-overrides would flip it.
#[derive(Clone, Copy, Debug)]
pub struct Generalize {
    pub threshold: f64,
}

impl Default for Generalize {
    fn default() -> Self {
        Self { threshold: 0.95 }
    }
}

impl Generalize {
    fn accepts(&self, matcher: &Matcher<'_>, examples: &[DecisionExample], candidate: &Rule) -> bool {
        let (mut agree, mut wrong) = (0usize, 0usize);
        for ex in examples {
            if matcher.example_similar(ex, candidate) {
                if ex.decision == candidate.decision {
                    agree += 1;
                } else {
                    wrong += 1;
                }
            }
        }
        if candidate.decision == Decision::Deny && wrong > 0 {
            return false;
        }
        let covered = agree + wrong;
        covered > 0 && (agree as f64 / covered as f64) > self.threshold
    }
}

impl Stage for Generalize {
    fn name(&self) -> &str {
        "generalize"
    }

    fn apply(&self, examples: &[DecisionExample], rules: Vec<Rule>, ctx: &DomainContext) -> Result<Vec<Rule>> {
        let matcher = Matcher::new(ctx);
        let out = rules.into_iter().map(|rule| {
            let mut current = rule.clone();
            for side in [Side::User, Side::Resource] {
                let attrs: Vec<String> = current.expr(side).attributes().cloned().collect();
                for attr in attrs {
                    let mut candidate = current.clone();
                    match side {
                        Side::User => candidate.user = candidate.user.without(&attr),
                        Side::Resource => candidate.resource = candidate.resource.without(&attr),
                    }
                    if self.accepts(&matcher, examples, &candidate) {
                        current = candidate;
                    }
                }
            }
            if current.same_shape(&rule) {
                rule
            } else {
                current.rehashed()
            }
        });
        Ok(dedup_rules(out))
    }
}

/// Re-constrains unconstrained attributes of permit rules to the values seen
/// among their supporting examples, widened by any declared safe values.
///
/// With `learned_only`, rules that came from another party or from
/// adaptation are left as they are.
#[derive(Clone, Debug)]
pub struct Restrict {
    pub permits_only: bool,
    pub learned_only: bool,
    pub safe_values: SafeValues,
}

impl Default for Restrict {
    fn default() -> Self {
        Self { permits_only: true, learned_only: true, safe_values: SafeValues::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SafeValues {
    #[serde(default)]
    pub user: BTreeMap<String, ValueSet>,
    #[serde(default)]
    pub resource: BTreeMap<String, ValueSet>,
}

impl SafeValues {
    fn get(&self, side: Side, attr: &str) -> Option<&ValueSet> {
        match side {
            Side::User => self.user.get(attr),
            Side::Resource => self.resource.get(attr),
        }
    }
}

impl Restrict {
    fn restrict(&self, rule: Rule, supporters: &[&DecisionExample], ctx: &DomainContext) -> Rule {
        let mut out = rule.clone();
        for side in [Side::User, Side::Resource] {
            let universe = ctx.side(side);
            for attr in universe.attributes() {
                if rule.expr(side).get(attr).is_some() {
                    continue;
                }
                let mut values = ValueSet::new();
                let mut complete = true;
                for ex in supporters {
                    match ex.expr(side).get(attr) {
                        Some(vs) => values.extend(vs.iter().cloned()),
                        None => {
                            complete = false;
                            break;
                        }
                    }
                }
                if !complete {
                    continue;
                }
                if let Some(safe) = self.safe_values.get(side, attr) {
                    values.extend(safe.iter().cloned());
                }
                if universe.range(attr).is_subset(&values) {
                    continue;
                }
                let Some(narrowed) = out.expr(side).with(attr, values) else { continue };
                match side {
                    Side::User => out.user = narrowed,
                    Side::Resource => out.resource = narrowed,
                }
            }
        }
        if out.same_shape(&rule) {
            rule
        } else {
            out.rehashed()
        }
    }
}

impl Stage for Restrict {
    fn name(&self) -> &str {
        "restrict"
    }

    fn apply(&self, examples: &[DecisionExample], rules: Vec<Rule>, ctx: &DomainContext) -> Result<Vec<Rule>> {
        let matcher = Matcher::new(ctx);
        let out = rules.into_iter().map(|rule| {
            if self.permits_only && rule.decision != Decision::Permit {
                return rule;
            }
            if self.learned_only && rule.provenance.origin != Origin::Local {
                return rule;
            }
            let supporters: Vec<&DecisionExample> =
                examples.iter().filter(|ex| matcher.example_consistent(ex, &rule)).collect();
            if supporters.is_empty() {
                return rule;
            }
            self.restrict(rule, &supporters, ctx)
        });
        Ok(dedup_rules(out))
    }
}

/// Covers every example no rule applies to with a most-specific rule whose
/// decision is the majority among its `neighbors` most similar examples
/// (ties deny).
#[derive(Clone, Copy, Debug)]
pub struct Augment {
    pub neighbors: usize,
}

impl Default for Augment {
    fn default() -> Self {
        Self { neighbors: 3 }
    }
}

fn shared_values(a: &DecisionExample, b: &DecisionExample) -> usize {
    let side = |x: &AttributeExpression, y: &AttributeExpression| {
        x.constraints().iter().filter(|(attr, vs)| y.get(attr) == Some(vs)).count()
    };
    side(&a.user_expr, &b.user_expr) + side(&a.resource_expr, &b.resource_expr) + usize::from(a.op == b.op)
}

impl Stage for Augment {
    fn name(&self) -> &str {
        "augment"
    }

    fn apply(&self, examples: &[DecisionExample], rules: Vec<Rule>, ctx: &DomainContext) -> Result<Vec<Rule>> {
        let matcher = Matcher::new(ctx);
        let k = self.neighbors.max(1);
        let mut added = Vec::new();
        for ex in examples {
            if rules.iter().any(|r| matcher.example_similar(ex, r)) {
                continue;
            }
            let mut ranked: Vec<(usize, usize)> =
                examples.iter().enumerate().map(|(i, other)| (shared_values(ex, other), i)).collect();
            // highest similarity first, ties by log order
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let permits = ranked
                .iter()
                .take(k)
                .filter(|(_, i)| examples[*i].decision == Decision::Permit)
                .count();
            let decision = if permits * 2 > k.min(ranked.len()) { Decision::Permit } else { Decision::Deny };
            let mut rule = ex.to_rule();
            rule.decision = decision;
            added.push(rule.rehashed());
        }
        Ok(dedup_rules(rules.into_iter().chain(added)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Mine,
    Generalize,
    Restrict,
    Augment,
}

/// On-disk pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub stages: Vec<StageKind>,
    pub generalize_threshold: f64,
    pub neighbors: usize,
    pub restrict_permits_only: bool,
    pub restrict_learned_only: bool,
    pub safe_values: SafeValues,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            stages: vec![StageKind::Mine, StageKind::Generalize, StageKind::Restrict, StageKind::Augment],
            generalize_threshold: 0.95,
            neighbors: 3,
            restrict_permits_only: true,
            restrict_learned_only: true,
            safe_values: SafeValues::default(),
        }
    }
}

impl LearnerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// An ordered, non-empty sequence of stages.
#[derive(Clone, Debug)]
pub struct LearnerPipeline {
    stages: Vec<Arc<dyn Stage>>,
}

impl LearnerPipeline {
    pub fn new(stages: Vec<Arc<dyn Stage>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::EmptyPipeline);
        }
        Ok(Self { stages })
    }

    pub fn from_config(config: &LearnerConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.generalize_threshold) {
            return Err(Error::InvalidConfig("generalize_threshold must lie in [0, 1]".into()));
        }
        let stages = config
            .stages
            .iter()
            .map(|kind| -> Arc<dyn Stage> {
                match kind {
                    StageKind::Mine => Arc::new(Mine),
                    StageKind::Generalize => Arc::new(Generalize { threshold: config.generalize_threshold }),
                    StageKind::Restrict => Arc::new(Restrict {
                        permits_only: config.restrict_permits_only,
                        learned_only: config.restrict_learned_only,
                        safe_values: config.safe_values.clone(),
                    }),
                    StageKind::Augment => Arc::new(Augment { neighbors: config.neighbors }),
                }
            })
            .collect();
        Self::new(stages)
    }

    pub fn stages(&self) -> &[Arc<dyn Stage>] {
        &self.stages
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name()).collect()
    }

    /// Folds every stage over the log, starting from no rules.
    pub fn run(&self, examples: &[DecisionExample], ctx: &DomainContext) -> Result<Vec<Rule>> {
        self.stages.iter().try_fold(Vec::new(), |rules, stage| stage.apply(examples, rules, ctx))
    }
}

impl Default for LearnerPipeline {
    fn default() -> Self {
        Self::from_config(&LearnerConfig::default()).expect("default config is valid")
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{Assignment, Universe};

    /// Users carry `dept` and a constant `site`; resources carry `rid`.
    fn ctx() -> DomainContext {
        let users = [("a", "9"), ("b", "9"), ("c", "10"), ("d", "11")]
            .iter()
            .map(|(id, dept)| {
                (
                    id.to_string(),
                    Assignment::from([("dept".to_string(), dept.to_string()), ("site".to_string(), "hq".to_string())]),
                )
            })
            .collect();
        let resources = ["1", "2"]
            .iter()
            .map(|r| (r.to_string(), Assignment::from([("rid".to_string(), r.to_string())])))
            .collect();
        DomainContext::new(
            Universe::new(BTreeMap::new(), users).unwrap(),
            Universe::new(BTreeMap::new(), resources).unwrap(),
            ["read".to_string(), "write".to_string()].into(),
        )
        .unwrap()
    }

    fn ex(ctx: &DomainContext, u: &str, r: &str, o: &str, d: Decision) -> DecisionExample {
        DecisionExample::observed(ctx, u, r, o, d).unwrap()
    }

    #[test]
    fn mine_deduplicates_signatures() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit), ex(&ctx, "a", "1", "read", Decision::Permit)];
        let rules = Mine.apply(&log, vec![], &ctx).unwrap();
        assert_eq!(rules.len(), 1);
        assert_eq!(rules[0].support, Some(2));
        assert!(Mine.apply(&[], vec![], &ctx).is_err());
    }

    #[test]
    fn mine_decisions_replay_their_examples() {
        let ctx = ctx();
        let log = vec![
            ex(&ctx, "a", "1", "read", Decision::Permit),
            ex(&ctx, "c", "2", "write", Decision::Deny),
            ex(&ctx, "d", "1", "read", Decision::Deny),
        ];
        let rules = Mine.apply(&log, vec![], &ctx).unwrap();
        let m = Matcher::new(&ctx);
        for l in &log {
            let covering: Vec<&Rule> = rules.iter().filter(|r| m.example_similar(l, r)).collect();
            assert_eq!(covering.len(), 1);
            assert_eq!(covering[0].decision, l.decision);
        }
    }

    #[test]
    fn generalize_drops_constant_attribute() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit), ex(&ctx, "c", "1", "read", Decision::Deny)];
        let mined = Mine.apply(&log, vec![], &ctx).unwrap();
        let out = Generalize::default().apply(&log, mined, &ctx).unwrap();
        for r in &out {
            assert!(r.user.get("site").is_none(), "{r}");
        }
        let permit = out.iter().find(|r| r.decision == Decision::Permit).unwrap();
        // dept separates the two examples, so it stays
        assert!(permit.user.get("dept").is_some());
    }

    #[test]
    fn generalize_blocked_by_contrary_examples() {
        let ctx = ctx();
        let log = vec![
            ex(&ctx, "a", "1", "read", Decision::Permit),
            ex(&ctx, "c", "1", "read", Decision::Deny),
            ex(&ctx, "d", "1", "read", Decision::Deny),
        ];
        let mined = Mine.apply(&log, vec![], &ctx).unwrap();
        let out = Generalize::default().apply(&log, mined, &ctx).unwrap();
        let m = Matcher::new(&ctx);
        for r in out.iter().filter(|r| r.decision == Decision::Permit) {
            for l in log.iter().filter(|l| l.decision == Decision::Deny) {
                assert!(!m.example_similar(l, r), "{r} covers a deny example");
            }
        }
    }

    #[test]
    fn strictest_threshold_keeps_rules() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit), ex(&ctx, "c", "2", "read", Decision::Permit)];
        let mined = Mine.apply(&log, vec![], &ctx).unwrap();
        let out = Generalize { threshold: 1.0 }.apply(&log, mined.clone(), &ctx).unwrap();
        assert_eq!(out, mined);
    }

    #[test]
    fn restrict_narrows_universal_permit() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit), ex(&ctx, "b", "1", "read", Decision::Permit)];
        let any = Rule::new(AttributeExpression::universal(), AttributeExpression::universal(), ["read"], Decision::Permit)
            .unwrap();
        let out = Restrict::default().apply(&log, vec![any], &ctx).unwrap();
        assert_eq!(out[0].user.get("dept"), Some(&ValueSet::from(["9".to_string()])));
        // site only ever takes "hq": already the full range
        assert!(out[0].user.get("site").is_none());
        assert_eq!(out[0].resource.get("rid"), Some(&ValueSet::from(["1".to_string()])));
    }

    #[test]
    fn restrict_leaves_denies_and_constrained_rules() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Deny), ex(&ctx, "a", "1", "write", Decision::Permit)];
        let deny = Rule::new(AttributeExpression::universal(), AttributeExpression::universal(), ["read"], Decision::Deny)
            .unwrap();
        let full = log[1].to_rule();
        let out = Restrict::default().apply(&log, vec![deny.clone(), full.clone()], &ctx).unwrap();
        assert_eq!(out, vec![deny, full]);
    }

    #[test]
    fn augment_covers_leftovers() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit)];
        let out = Augment { neighbors: 1 }.apply(&log, vec![], &ctx).unwrap();
        assert_eq!(out, vec![log[0].to_rule()]);

        let covered = Augment::default().apply(&log, out.clone(), &ctx).unwrap();
        assert_eq!(covered, out);
    }

    #[test]
    fn pipeline_runs_in_order() {
        let ctx = ctx();
        let log = vec![ex(&ctx, "a", "1", "read", Decision::Permit), ex(&ctx, "c", "2", "write", Decision::Deny)];
        let only_mine = LearnerPipeline::new(vec![Arc::new(Mine)]).unwrap();
        assert_eq!(only_mine.run(&log, &ctx).unwrap(), Mine.apply(&log, vec![], &ctx).unwrap());
        assert!(LearnerPipeline::new(vec![]).is_err());
        let full = LearnerPipeline::default();
        assert_eq!(full.stage_names(), vec!["mine", "generalize", "restrict", "augment"]);
        assert_eq!(full.run(&log, &ctx).unwrap(), full.run(&log, &ctx).unwrap());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: LearnerConfig = serde_json::from_str(r#"{"stages": ["mine", "augment"], "neighbors": 5}"#).unwrap();
        assert_eq!(cfg.stages, vec![StageKind::Mine, StageKind::Augment]);
        assert_eq!(cfg.neighbors, 5);
        assert_eq!(cfg.generalize_threshold, 0.95);
        let bad = LearnerConfig { generalize_threshold: 1.5, ..LearnerConfig::default() };
        assert!(LearnerPipeline::from_config(&bad).is_err());
    }
}
