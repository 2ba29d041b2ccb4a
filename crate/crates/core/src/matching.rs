//! Similarity and consistency between rules and decision examples.

use serde::{Deserialize, Serialize};

use crate::model::{Decision, DecisionExample, DomainContext, Rule, Side};

/// How rule-to-rule similarity is decided per dimension.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// The two conditions share at least one point.
    #[default]
    Overlap,
    /// One condition contains the other.
    Subset,
}

#[derive(Clone, Copy, Debug)]
pub struct Matcher<'a> {
    ctx: &'a DomainContext,
    mode: SimilarityMode,
}

impl<'a> Matcher<'a> {
    pub fn new(ctx: &'a DomainContext) -> Self {
        Self { ctx, mode: SimilarityMode::Overlap }
    }

    pub fn with_mode(ctx: &'a DomainContext, mode: SimilarityMode) -> Self {
        Self { ctx, mode }
    }

    pub fn ctx(&self) -> &'a DomainContext {
        self.ctx
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    fn example_side(&self, ex: &DecisionExample, rule: &Rule, side: Side) -> bool {
        let target = rule.expr(side);
        self.ctx.satisfies(side, ex.entity(side), target).unwrap_or(false)
            || ex.expr(side).is_subset_of(target, self.ctx.side(side))
    }

    pub fn example_similar(&self, ex: &DecisionExample, rule: &Rule) -> bool {
        rule.ops.contains(&ex.op)
            && self.example_side(ex, rule, Side::User)
            && self.example_side(ex, rule, Side::Resource)
    }

    pub fn example_consistent(&self, ex: &DecisionExample, rule: &Rule) -> bool {
        self.example_similar(ex, rule) && ex.decision == rule.decision
    }

    pub fn rule_similar(&self, a: &Rule, b: &Rule) -> bool {
        match self.mode {
            SimilarityMode::Overlap => {
                !a.ops.is_disjoint(&b.ops)
                    && a.user.overlaps(&b.user)
                    && a.resource.overlaps(&b.resource)
            }
            SimilarityMode::Subset => {
                let users = self.ctx.users();
                let resources = self.ctx.resources();
                (a.ops.is_subset(&b.ops) || b.ops.is_subset(&a.ops))
                    && (a.user.is_subset_of(&b.user, users) || b.user.is_subset_of(&a.user, users))
                    && (a.resource.is_subset_of(&b.resource, resources)
                        || b.resource.is_subset_of(&a.resource, resources))
            }
        }
    }

    pub fn rule_consistent(&self, a: &Rule, b: &Rule) -> bool {
        self.rule_similar(a, b) && a.decision == b.decision
    }

    /// Similar but with opposite decisions: the condition adaptation resolves.
    pub fn rules_conflict(&self, a: &Rule, b: &Rule) -> bool {
        a.decision != b.decision && self.rule_similar(a, b)
    }

    /// Splits `candidates` into those similar and consistent with `pivot`
    /// and those similar but inconsistent. Non-similar candidates are left
    /// out. Input order is preserved.
    pub fn find_conflicts<C: Candidate + Clone>(&self, pivot: &Rule, candidates: &[C]) -> ConflictGroup<C> {
        let mut group = ConflictGroup {
            pivot: pivot.clone(),
            similar_consistent: Vec::new(),
            similar_inconsistent: Vec::new(),
        };
        for c in candidates {
            if !c.similar_to(self, pivot) {
                continue;
            }
            if c.decision() == pivot.decision {
                group.similar_consistent.push(c.clone());
            } else {
                group.similar_inconsistent.push(c.clone());
            }
        }
        group
    }
}

/// Anything that can be compared against a pivot rule.
pub trait Candidate {
    fn decision(&self) -> Decision;
    fn similar_to(&self, matcher: &Matcher<'_>, pivot: &Rule) -> bool;
}

impl Candidate for Rule {
    fn decision(&self) -> Decision {
        self.decision
    }

    fn similar_to(&self, matcher: &Matcher<'_>, pivot: &Rule) -> bool {
        matcher.rule_similar(self, pivot)
    }
}

impl Candidate for DecisionExample {
    fn decision(&self) -> Decision {
        self.decision
    }

    fn similar_to(&self, matcher: &Matcher<'_>, pivot: &Rule) -> bool {
        matcher.example_similar(self, pivot)
    }
}

#[derive(Clone, Debug)]
pub struct ConflictGroup<C> {
    pub pivot: Rule,
    pub similar_consistent: Vec<C>,
    pub similar_inconsistent: Vec<C>,
}

impl<C> ConflictGroup<C> {
    pub fn has_conflicts(&self) -> bool {
        !self.similar_inconsistent.is_empty()
    }

    pub fn is_unmatched(&self) -> bool {
        self.similar_consistent.is_empty() && self.similar_inconsistent.is_empty()
    }
}

/// Every pair `(i, j)`, `i < j`, of similar-inconsistent rules.
pub fn conflicting_pairs(matcher: &Matcher<'_>, rules: &[Rule]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..rules.len() {
        for j in i + 1..rules.len() {
            if matcher.rules_conflict(&rules[i], &rules[j]) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}
