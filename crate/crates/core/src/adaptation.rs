//! Conflict resolution between inconsistent rules.
//!
//! Two overlapping rules with opposite decisions are split into a mutual
//! region, which gets a single decision chosen by counting the log examples
//! each decision would agree with, and non-mutual residuals that keep their
//! original decisions. Groups are handled by subtracting every mutual region
//! from the rules involved and then re-adapting until no conflicting pair
//! remains.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::matching::{conflicting_pairs, Matcher};
use crate::model::{dedup_rules, AttributeExpression, Decision, DecisionExample, Provenance, Rule};

/// Upper bound on re-adaptation passes before giving up.
pub const MAX_PASSES: usize = 100;

/// What one side of a pair has that the other does not.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NonMutual {
    pub user: Vec<AttributeExpression>,
    pub resource: Vec<AttributeExpression>,
    pub ops: BTreeSet<String>,
}

impl NonMutual {
    pub fn is_empty(&self) -> bool {
        self.user.is_empty() && self.resource.is_empty() && self.ops.is_empty()
    }
}

/// Mutual and non-mutual predicates of a pair of overlapping rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateSplit {
    pub mutual_user: AttributeExpression,
    pub mutual_resource: AttributeExpression,
    pub mutual_ops: BTreeSet<String>,
    /// Residuals of the first rule.
    pub first: NonMutual,
    /// Residuals of the second rule.
    pub second: NonMutual,
}

/// Rules produced by an adaptation together with the number of candidate
/// rules dropped because their region was empty.
#[derive(Clone, Debug, Default)]
pub struct Adapted {
    pub rules: Vec<Rule>,
    pub dropped_empty: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Adapter<'a> {
    matcher: Matcher<'a>,
    examples: &'a [DecisionExample],
    max_passes: usize,
}

impl<'a> Adapter<'a> {
    pub fn new(matcher: Matcher<'a>, examples: &'a [DecisionExample]) -> Self {
        Self { matcher, examples, max_passes: MAX_PASSES }
    }

    pub fn with_max_passes(mut self, max_passes: usize) -> Self {
        self.max_passes = max_passes;
        self
    }

    pub fn matcher(&self) -> &Matcher<'a> {
        &self.matcher
    }

    pub fn split_predicates(&self, a: &Rule, b: &Rule) -> Result<PredicateSplit> {
        let overlap = || Error::NotOverlapping(a.id.clone(), b.id.clone());
        let mutual_user = a.user.intersect(&b.user).ok_or_else(overlap)?;
        let mutual_resource = a.resource.intersect(&b.resource).ok_or_else(overlap)?;
        let mutual_ops: BTreeSet<String> = a.ops.intersection(&b.ops).cloned().collect();
        if mutual_ops.is_empty() {
            return Err(overlap());
        }
        let ctx = self.matcher.ctx();
        let residual = |x: &Rule, y: &Rule| NonMutual {
            user: x.user.difference(&y.user, ctx.users()),
            resource: x.resource.difference(&y.resource, ctx.resources()),
            ops: x.ops.difference(&y.ops).cloned().collect(),
        };
        Ok(PredicateSplit {
            mutual_user,
            mutual_resource,
            mutual_ops,
            first: residual(a, b),
            second: residual(b, a),
        })
    }

    /// Decision for a conflicted region: permit only if strictly more log
    /// examples agree with permitting it than with denying it.
    pub fn choose_paradigm(&self, region: &Rule) -> Decision {
        let (mut permits, mut denies) = (0usize, 0usize);
        for ex in self.examples {
            if self.matcher.example_similar(ex, region) {
                match ex.decision {
                    Decision::Permit => permits += 1,
                    Decision::Deny => denies += 1,
                }
            }
        }
        if permits > denies {
            Decision::Permit
        } else {
            Decision::Deny
        }
    }

    fn check_conflict(&self, a: &Rule, b: &Rule) -> Result<()> {
        if a.decision == b.decision || !self.matcher.rule_similar(a, b) {
            return Err(Error::NotInconsistent(a.id.clone(), b.id.clone()));
        }
        Ok(())
    }

    /// Resolves one inconsistent pair into a mutual-region rule plus the
    /// user-, resource- and operation-based residuals of both rules.
    pub fn adapt_two_rules(&self, a: &Rule, b: &Rule) -> Result<Vec<Rule>> {
        Ok(self.adapt_two_rules_counted(a, b)?.rules)
    }

    pub fn adapt_two_rules_counted(&self, a: &Rule, b: &Rule) -> Result<Adapted> {
        self.check_conflict(a, b)?;
        let split = self.split_predicates(a, b)?;
        let prov = Provenance::adapted([a, b]);
        let mut out = Adapted::default();

        let region = a
            .reshaped(
                split.mutual_user.clone(),
                split.mutual_resource.clone(),
                split.mutual_ops.clone(),
                a.decision,
                prov.clone(),
            )
            .expect("mutual operations are non-empty");
        let decision = self.choose_paradigm(&region);
        out.rules.push(Rule { decision, ..region }.rehashed());

        let sides = [(a, &split.first), (b, &split.second)];
        for (rule, residual) in sides {
            push_or_count(&mut out, residual.user.iter().map(|u| {
                rule.reshaped(u.clone(), rule.resource.clone(), rule.ops.clone(), rule.decision, prov.clone())
            }));
        }
        for (rule, residual) in sides {
            push_or_count(&mut out, residual.resource.iter().map(|r| {
                rule.reshaped(rule.user.clone(), r.clone(), rule.ops.clone(), rule.decision, prov.clone())
            }));
        }
        for (rule, residual) in sides {
            let piece = rule.reshaped(
                rule.user.clone(),
                rule.resource.clone(),
                residual.ops.clone(),
                rule.decision,
                prov.clone(),
            );
            push_or_count(&mut out, std::iter::once(piece));
        }
        out.rules = dedup_rules(out.rules);
        Ok(out)
    }

    /// `base` minus the request spaces of `cuts`, as disjoint rules carrying
    /// `base`'s decision. Returns `base` untouched when nothing overlaps it.
    pub fn subtract_rule(&self, base: &Rule, cuts: &[Rule]) -> Vec<Rule> {
        let touching: Vec<&Rule> = cuts.iter().filter(|c| boxes_overlap(base, c)).collect();
        if touching.is_empty() {
            return vec![base.clone()];
        }
        let ctx = self.matcher.ctx();
        let mut pieces: Vec<Box3> = vec![Box3::of(base)];
        for cut in &touching {
            pieces = pieces
                .into_iter()
                .flat_map(|p| p.minus(&Box3::of(cut), ctx))
                .collect();
        }
        let prov = Provenance::adapted(std::iter::once(base).chain(touching.iter().copied()));
        pieces
            .into_iter()
            .filter_map(|p| base.reshaped(p.user, p.resource, p.ops, base.decision, prov.clone()))
            .collect()
    }

    /// Adapts `pivot` against a group of rules that each conflict with it,
    /// then re-adapts the result until it is conflict free.
    pub fn adapt_group(&self, pivot: &Rule, group: &[Rule]) -> Result<Vec<Rule>> {
        Ok(self.adapt_group_counted(pivot, group)?.rules)
    }

    pub fn adapt_group_counted(&self, pivot: &Rule, group: &[Rule]) -> Result<Adapted> {
        for member in group {
            self.check_conflict(pivot, member)?;
        }
        let mut out = self.group_step(pivot, group);
        let resolved = self.resolve(out.rules)?;
        out.rules = resolved.rules;
        out.dropped_empty += resolved.dropped_empty;
        Ok(out)
    }

    /// One round of group adaptation without the fixed-point post-pass.
    fn group_step(&self, pivot: &Rule, group: &[Rule]) -> Adapted {
        let mut out = Adapted::default();
        // mutual regions, one per member, paired with the member they came from
        let mut regions: Vec<(Rule, &Rule)> = Vec::new();
        for member in group {
            let Some(region) = mutual_region(pivot, member) else { continue };
            if !regions.iter().any(|(r, _)| r.same_shape(&region)) {
                regions.push((region, member));
            }
        }
        let cuts: Vec<Rule> = regions.iter().map(|(r, _)| r.clone()).collect();

        let residual = self.subtract_rule(pivot, &cuts);
        if residual.is_empty() {
            out.dropped_empty += 1;
        }
        out.rules.extend(residual);
        for member in group {
            let own: Vec<Rule> = mutual_region(pivot, member).into_iter().collect();
            let residual = self.subtract_rule(member, &own);
            if residual.is_empty() {
                out.dropped_empty += 1;
            }
            out.rules.extend(residual);
        }
        for (region, member) in regions {
            let decision = self.choose_paradigm(&region);
            let prov = Provenance::adapted([pivot, member]);
            out.rules.push(Rule { decision, provenance: prov, ..region }.rehashed());
        }
        out.rules = dedup_rules(out.rules);
        out
    }

    /// Repeatedly adapts similar-inconsistent pairs until none remain. Each
    /// pass resolves a maximal set of disjoint conflicting pairs in input
    /// order.
    pub fn resolve(&self, rules: Vec<Rule>) -> Result<Adapted> {
        let mut rules = dedup_rules(rules);
        let mut dropped = 0;
        for _ in 0..self.max_passes {
            let pairs = conflicting_pairs(&self.matcher, &rules);
            if pairs.is_empty() {
                return Ok(Adapted { rules, dropped_empty: dropped });
            }
            let mut partner: Vec<Option<usize>> = vec![None; rules.len()];
            for (i, j) in pairs {
                if partner[i].is_none() && partner[j].is_none() {
                    partner[i] = Some(j);
                    partner[j] = Some(i);
                }
            }
            let mut next = Vec::with_capacity(rules.len());
            for (i, rule) in rules.iter().enumerate() {
                match partner[i] {
                    None => next.push(rule.clone()),
                    Some(j) if i < j => {
                        let step = self.group_step(rule, std::slice::from_ref(&rules[j]));
                        dropped += step.dropped_empty;
                        next.extend(step.rules);
                    }
                    Some(_) => {}
                }
            }
            rules = dedup_rules(next);
        }
        if conflicting_pairs(&self.matcher, &rules).is_empty() {
            return Ok(Adapted { rules, dropped_empty: dropped });
        }
        Err(Error::NonConvergence(self.max_passes))
    }
}

fn push_or_count(out: &mut Adapted, pieces: impl Iterator<Item = Option<Rule>>) {
    let before = out.rules.len();
    out.rules.extend(pieces.flatten());
    if out.rules.len() == before {
        out.dropped_empty += 1;
    }
}

/// The region where both rules apply, shaped as a rule with `a`'s decision.
fn mutual_region(a: &Rule, b: &Rule) -> Option<Rule> {
    let user = a.user.intersect(&b.user)?;
    let resource = a.resource.intersect(&b.resource)?;
    let ops: BTreeSet<String> = a.ops.intersection(&b.ops).cloned().collect();
    a.reshaped(user, resource, ops, a.decision, Provenance::adapted([a, b]))
}

fn boxes_overlap(a: &Rule, b: &Rule) -> bool {
    !a.ops.is_disjoint(&b.ops) && a.user.overlaps(&b.user) && a.resource.overlaps(&b.resource)
}

/// A rule's request space as a product of user, resource and operation sets.
#[derive(Clone, Debug)]
struct Box3 {
    user: AttributeExpression,
    resource: AttributeExpression,
    ops: BTreeSet<String>,
}

impl Box3 {
    fn of(rule: &Rule) -> Self {
        Self { user: rule.user.clone(), resource: rule.resource.clone(), ops: rule.ops.clone() }
    }

    /// Disjoint pieces of `self` outside `cut`: first everything with a user
    /// outside the cut, then (users inside) resources outside, then (both
    /// inside) operations outside.
    fn minus(self, cut: &Box3, ctx: &crate::model::DomainContext) -> Vec<Box3> {
        let (Some(user_in), Some(resource_in)) =
            (self.user.intersect(&cut.user), self.resource.intersect(&cut.resource))
        else {
            return vec![self];
        };
        if self.ops.is_disjoint(&cut.ops) {
            return vec![self];
        }
        let mut out = Vec::new();
        for user in self.user.difference(&cut.user, ctx.users()) {
            out.push(Box3 { user, resource: self.resource.clone(), ops: self.ops.clone() });
        }
        for resource in self.resource.difference(&cut.resource, ctx.resources()) {
            out.push(Box3 { user: user_in.clone(), resource, ops: self.ops.clone() });
        }
        let ops: BTreeSet<String> = self.ops.difference(&cut.ops).cloned().collect();
        if !ops.is_empty() {
            out.push(Box3 { user: user_in, resource: resource_in, ops });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{Assignment, DomainContext, Origin, Universe};

    fn ctx() -> DomainContext {
        let users = ["9", "10", "11", "12"]
            .iter()
            .map(|d| (format!("d{d}"), Assignment::from([("dept id".to_string(), d.to_string())])))
            .collect();
        let resources = (1..=3)
            .map(|i| (i.to_string(), Assignment::from([("resource id".to_string(), i.to_string())])))
            .collect();
        DomainContext::new(
            Universe::new(BTreeMap::new(), users).unwrap(),
            Universe::new(BTreeMap::new(), resources).unwrap(),
            ["read".to_string(), "write".to_string()].into(),
        )
        .unwrap()
    }

    fn rule(depts: &[&str], rids: &[&str], ops: &[&str], d: Decision) -> Rule {
        Rule::new(
            AttributeExpression::new([("dept id", depts.iter().copied())]).unwrap(),
            AttributeExpression::new([("resource id", rids.iter().copied())]).unwrap(),
            ops.iter().copied(),
            d,
        )
        .unwrap()
    }

    fn rho1() -> Rule {
        rule(&["9", "10", "11"], &["1", "2", "3"], &["read", "write"], Decision::Permit).with_id("rho1")
    }

    fn rho2() -> Rule {
        rule(&["9", "12"], &["1"], &["read"], Decision::Deny).with_id("rho2")
    }

    fn sorted_shapes(rules: &[Rule]) -> Vec<String> {
        let mut v: Vec<String> = rules.iter().map(Rule::to_string).collect();
        v.sort();
        v
    }

    #[test]
    fn split_of_worked_pair() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let split = ad.split_predicates(&rho1(), &rho2()).unwrap();
        assert_eq!(split.mutual_user, AttributeExpression::new([("dept id", ["9"])]).unwrap());
        assert_eq!(split.mutual_resource, AttributeExpression::new([("resource id", ["1"])]).unwrap());
        assert_eq!(split.mutual_ops, BTreeSet::from(["read".to_string()]));
        assert_eq!(split.first.user, vec![AttributeExpression::new([("dept id", ["10", "11"])]).unwrap()]);
        assert_eq!(split.second.user, vec![AttributeExpression::new([("dept id", ["12"])]).unwrap()]);
        assert!(split.second.resource.is_empty());
        assert!(split.second.ops.is_empty());
    }

    #[test]
    fn split_of_identical_rules_has_no_residuals() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let split = ad.split_predicates(&rho1(), &rho1()).unwrap();
        assert!(split.first.is_empty() && split.second.is_empty());
    }

    #[test]
    fn split_rejects_disjoint_pair() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let other = rule(&["12"], &["2"], &["write"], Decision::Deny);
        assert!(matches!(ad.split_predicates(&rho1(), &other), Err(Error::NotOverlapping(..))));
    }

    #[test]
    fn worked_pair_adaptation() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let out = ad.adapt_two_rules_counted(&rho1(), &rho2()).unwrap();
        let expected = vec![
            rule(&["10", "11"], &["1", "2", "3"], &["read", "write"], Decision::Permit),
            rule(&["12"], &["1"], &["read"], Decision::Deny),
            rule(&["9", "10", "11"], &["2", "3"], &["read", "write"], Decision::Permit),
            rule(&["9", "10", "11"], &["1", "2", "3"], &["write"], Decision::Permit),
            rule(&["9"], &["1"], &["read"], Decision::Deny),
        ];
        assert_eq!(sorted_shapes(&out.rules), sorted_shapes(&expected));
        assert_eq!(out.dropped_empty, 2);
        for r in &out.rules {
            assert_eq!(r.provenance.origin, Origin::Adapted);
            assert_eq!(r.provenance.lineage, ["rho1", "rho2"].iter().map(|s| s.to_string()).collect());
        }
    }

    #[test]
    fn adapt_rejects_consistent_pair() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        assert!(matches!(ad.adapt_two_rules(&rho1(), &rho1()), Err(Error::NotInconsistent(..))));
    }

    fn example(ctx: &DomainContext, u: &str, r: &str, o: &str, d: Decision) -> DecisionExample {
        DecisionExample::observed(ctx, u, r, o, d).unwrap()
    }

    #[test]
    fn paradigm_counts() {
        let ctx = ctx();
        let region = rule(&["9"], &["1"], &["read"], Decision::Deny);
        assert_eq!(Adapter::new(Matcher::new(&ctx), &[]).choose_paradigm(&region), Decision::Deny);

        let log = vec![
            example(&ctx, "d9", "1", "read", Decision::Permit),
            example(&ctx, "d9", "1", "read", Decision::Permit),
            example(&ctx, "d9", "1", "read", Decision::Permit),
            example(&ctx, "d9", "1", "read", Decision::Deny),
        ];
        assert_eq!(Adapter::new(Matcher::new(&ctx), &log).choose_paradigm(&region), Decision::Permit);

        let outside = vec![
            example(&ctx, "d10", "2", "read", Decision::Permit),
            example(&ctx, "d9", "1", "write", Decision::Permit),
        ];
        assert_eq!(Adapter::new(Matcher::new(&ctx), &outside).choose_paradigm(&region), Decision::Deny);

        let tie = vec![
            example(&ctx, "d9", "1", "read", Decision::Permit),
            example(&ctx, "d9", "1", "read", Decision::Deny),
        ];
        assert_eq!(Adapter::new(Matcher::new(&ctx), &tie).choose_paradigm(&region), Decision::Deny);
    }

    #[test]
    fn worked_pair_with_permissive_log() {
        let ctx = ctx();
        let log = vec![example(&ctx, "d9", "1", "read", Decision::Permit)];
        let ad = Adapter::new(Matcher::new(&ctx), &log);
        let out = ad.adapt_two_rules(&rho1(), &rho2()).unwrap();
        assert!(out.contains(&rule(&["9"], &["1"], &["read"], Decision::Permit)));
    }

    #[test]
    fn subtract_basics() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let r1 = rho1();
        assert_eq!(ad.subtract_rule(&r1, &[]), vec![r1.clone()]);
        assert_eq!(ad.subtract_rule(&r1, std::slice::from_ref(&r1)), Vec::<Rule>::new());
        let pieces = ad.subtract_rule(&r1, &[rule(&["9"], &["1"], &["read"], Decision::Deny)]);
        // users outside {9}, then dept 9 with resources outside {1}, then (9, 1) with write
        assert_eq!(
            sorted_shapes(&pieces),
            sorted_shapes(&[
                rule(&["10", "11"], &["1", "2", "3"], &["read", "write"], Decision::Permit),
                rule(&["9"], &["2", "3"], &["read", "write"], Decision::Permit),
                rule(&["9"], &["1"], &["write"], Decision::Permit),
            ])
        );
    }

    #[test]
    fn group_of_one_matches_pair_decisions() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        let out = ad.adapt_group(&rho1(), &[rho2()]).unwrap();
        assert!(conflicting_pairs(ad.matcher(), &out).is_empty());
        assert!(out.contains(&rule(&["9"], &["1"], &["read"], Decision::Deny)));
        assert!(out.contains(&rule(&["12"], &["1"], &["read"], Decision::Deny)));
    }

    #[test]
    fn group_rejects_consistent_member() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]);
        assert!(ad.adapt_group(&rho1(), &[rho1()]).is_err());
    }

    #[test]
    fn resolve_reports_non_convergence() {
        let ctx = ctx();
        let ad = Adapter::new(Matcher::new(&ctx), &[]).with_max_passes(0);
        assert!(matches!(ad.resolve(vec![rho1(), rho2()]), Err(Error::NonConvergence(0))));
        assert!(ad.resolve(vec![rho1()]).is_ok());
    }
}
