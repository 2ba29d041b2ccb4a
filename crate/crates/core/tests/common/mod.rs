//! Toy universes and a brute-force request-space oracle shared by the
//! integration tests. Coverage is computed here from raw assignments, never
//! through the library's matching code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use abac_transfer::matching::Matcher;
use abac_transfer::model::{
    Assignment, AttributeExpression, Decision, DecisionExample, DomainContext, Rule, Universe, ValueSet,
};

pub type Ranges = Vec<(String, Vec<String>)>;

/// A universe in which every combination of attribute values is an entity,
/// so entity space and attribute space coincide.
#[derive(Clone, Debug)]
pub struct Toy {
    pub users: Ranges,
    pub resources: Ranges,
    pub ops: Vec<String>,
}

/// One `(user, resource, op)` request with the assignments behind it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Point {
    pub user: String,
    pub resource: String,
    pub op: String,
    pub user_asg: Assignment,
    pub resource_asg: Assignment,
}

pub fn combos(ranges: &Ranges) -> Vec<Assignment> {
    let mut out = vec![Assignment::new()];
    for (attr, values) in ranges {
        out = out
            .into_iter()
            .flat_map(|asg| {
                values.iter().map(move |v| {
                    let mut next = asg.clone();
                    next.insert(attr.clone(), v.clone());
                    next
                })
            })
            .collect();
    }
    out
}

fn entity_id(prefix: &str, asg: &Assignment) -> String {
    let parts: Vec<String> = asg.iter().map(|(a, v)| format!("{a}={v}")).collect();
    format!("{prefix}[{}]", parts.join(","))
}

impl Toy {
    /// At most four attributes in total (at least one per side), at most
    /// five values each, at most six operations.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n_user = rng.gen_range(1..=2);
        let n_res = rng.gen_range(1..=(4 - n_user).min(2));
        let side = |rng: &mut ChaCha8Rng, prefix: &str, n: usize| -> Ranges {
            (0..n)
                .map(|i| {
                    let k = rng.gen_range(1..=5);
                    (format!("{prefix}{i}"), (0..k).map(|v| v.to_string()).collect())
                })
                .collect()
        };
        let users = side(rng, "ua", n_user);
        let resources = side(rng, "ra", n_res);
        let ops = (0..rng.gen_range(1..=6)).map(|i| format!("op{i}")).collect();
        Self { users, resources, ops }
    }

    pub fn ctx(&self) -> DomainContext {
        let side = |prefix: &str, ranges: &Ranges| {
            let declared: BTreeMap<String, ValueSet> =
                ranges.iter().map(|(a, vs)| (a.clone(), vs.iter().cloned().collect())).collect();
            let entities = combos(ranges).into_iter().map(|asg| (entity_id(prefix, &asg), asg)).collect();
            Universe::new(declared, entities).unwrap()
        };
        DomainContext::new(side("u", &self.users), side("r", &self.resources), self.ops.iter().cloned().collect())
            .unwrap()
    }

    pub fn points(&self) -> Vec<Point> {
        let users = combos(&self.users);
        let resources = combos(&self.resources);
        let mut out = Vec::with_capacity(users.len() * resources.len() * self.ops.len());
        for u in &users {
            for r in &resources {
                for o in &self.ops {
                    out.push(Point {
                        user: entity_id("u", u),
                        resource: entity_id("r", r),
                        op: o.clone(),
                        user_asg: u.clone(),
                        resource_asg: r.clone(),
                    });
                }
            }
        }
        out
    }

    pub fn random_expr(rng: &mut ChaCha8Rng, ranges: &Ranges) -> AttributeExpression {
        let mut pairs: Vec<(String, Vec<String>)> = Vec::new();
        for (attr, values) in ranges {
            if rng.gen_bool(0.3) {
                continue;
            }
            let k = rng.gen_range(1..=values.len());
            let chosen: Vec<String> = values.choose_multiple(rng, k).cloned().collect();
            pairs.push((attr.clone(), chosen));
        }
        AttributeExpression::new(pairs).unwrap()
    }

    pub fn random_rule(&self, rng: &mut ChaCha8Rng, decision: Decision) -> Rule {
        let user = Self::random_expr(rng, &self.users);
        let resource = Self::random_expr(rng, &self.resources);
        let k = rng.gen_range(1..=self.ops.len());
        let ops: Vec<String> = self.ops.choose_multiple(rng, k).cloned().collect();
        Rule::new(user, resource, ops, decision).unwrap()
    }

    /// A rule with `decision` that overlaps `other` in every dimension.
    pub fn conflicting_rule(&self, rng: &mut ChaCha8Rng, other: &Rule, decision: Decision) -> Rule {
        loop {
            let r = self.random_rule(rng, decision);
            if self.points().iter().any(|p| covers(other, p) && covers(&r, p)) {
                return r;
            }
        }
    }

    pub fn random_examples(&self, rng: &mut ChaCha8Rng, ctx: &DomainContext, n: usize) -> Vec<DecisionExample> {
        let points = self.points();
        (0..n)
            .map(|_| {
                let p = points.choose(rng).unwrap();
                let d = if rng.gen_bool(0.5) { Decision::Permit } else { Decision::Deny };
                DecisionExample::observed(ctx, &p.user, &p.resource, &p.op, d).unwrap()
            })
            .collect()
    }
}

pub fn expr_covers(expr: &AttributeExpression, asg: &Assignment) -> bool {
    expr.constraints().iter().all(|(attr, values)| asg.get(attr).is_some_and(|v| values.contains(v)))
}

pub fn covers(rule: &Rule, p: &Point) -> bool {
    rule.ops.contains(&p.op) && expr_covers(&rule.user, &p.user_asg) && expr_covers(&rule.resource, &p.resource_asg)
}

/// Decisions of all rules covering `p`.
pub fn decisions_at(rules: &[Rule], p: &Point) -> BTreeSet<Decision> {
    rules.iter().filter(|r| covers(r, p)).map(|r| r.decision).collect()
}

/// Examples at `p` with each decision: `(permit, deny)`.
pub fn example_counts_at(examples: &[DecisionExample], p: &Point) -> (usize, usize) {
    let here = examples.iter().filter(|e| e.user == p.user && e.resource == p.resource && e.op == p.op);
    here.fold((0, 0), |(a, b), e| match e.decision {
        Decision::Permit => (a + 1, b),
        Decision::Deny => (a, b + 1),
    })
}

/// Paradigm decision for a region given by its covered points: permit iff
/// strictly more permit than deny examples fall inside.
pub fn paradigm(examples: &[DecisionExample], region: &[&Point]) -> Decision {
    let (p, d) = region.iter().fold((0, 0), |(a, b), pt| {
        let (x, y) = example_counts_at(examples, pt);
        (a + x, b + y)
    });
    if p > d {
        Decision::Permit
    } else {
        Decision::Deny
    }
}

/// Every similar-inconsistent pair, by direct scan.
pub fn conflicts(matcher: &Matcher<'_>, rules: &[Rule]) -> usize {
    let mut n = 0;
    for i in 0..rules.len() {
        for j in i + 1..rules.len() {
            if rules[i].decision != rules[j].decision && matcher.rule_similar(&rules[i], &rules[j]) {
                n += 1;
            }
        }
    }
    n
}

/// Checks that adapting `inputs` into `output` keeps coverage, keeps the
/// decision wherever exactly one input applied, and leaves every point with
/// a single decision. `mutual` gives the expected decision at points covered
/// by more than one input, when it is known.
pub fn check_space(
    toy: &Toy,
    inputs: &[&Rule],
    output: &[Rule],
    mutual: impl Fn(&Point) -> Option<Decision>,
) -> Result<(), String> {
    for p in toy.points() {
        let covering: Vec<&&Rule> = inputs.iter().filter(|r| covers(r, &p)).collect();
        let got = decisions_at(output, &p);
        match covering.len() {
            0 if !got.is_empty() => return Err(format!("{p:?} gained coverage: {got:?}")),
            0 => {}
            _ if got.is_empty() => return Err(format!("{p:?} lost coverage")),
            _ if got.len() > 1 => return Err(format!("{p:?} has both decisions")),
            1 if !got.contains(&covering[0].decision) => {
                return Err(format!("{p:?} changed from {:?} to {got:?}", covering[0].decision))
            }
            1 => {}
            _ => {
                if let Some(expected) = mutual(&p) {
                    if !got.contains(&expected) {
                        return Err(format!("{p:?} mutual decision {got:?}, expected {expected:?}"));
                    }
                }
            }
        }
    }
    Ok(())
}
