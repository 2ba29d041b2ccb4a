use std::collections::BTreeMap;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{decide, Combining, Outcome};
use crate::learner::LearnerPipeline;
use crate::matching::Matcher;
use crate::model::{
    Assignment, AttributeExpression, Decision, DecisionExample, DomainContext, Provenance, Rule, Side, Universe,
    ValueSet,
};

const OPERATION_NAMES: [&str; 6] = ["read", "write", "delete", "approve", "share", "create"];
const PERMIT_SHARE: f64 = 0.6;
const ATTEMPTS_PER_RULE: usize = 200;

/// How source policies are made to disagree with the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Fraction of rules whose decision is flipped.
    pub flip: f64,
    /// Fraction of rules with one constraint widened by one value.
    pub widen: f64,
}

impl Perturbation {
    pub fn uniform(rate: f64) -> Self {
        Self { flip: rate, widen: rate }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub users: usize,
    pub resources: usize,
    pub operations: usize,
    /// Attribute name to range size.
    pub user_attributes: BTreeMap<String, usize>,
    pub resource_attributes: BTreeMap<String, usize>,
    pub rules: usize,
    pub examples: usize,
    pub noise: f64,
    pub perturbation: Perturbation,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let attrs = |pairs: &[(&str, usize)]| pairs.iter().map(|(a, n)| (a.to_string(), *n)).collect();
        Self {
            seed: 42,
            users: 40,
            resources: 30,
            operations: 3,
            user_attributes: attrs(&[("dept", 5), ("role", 4), ("level", 3)]),
            resource_attributes: attrs(&[("kind", 5), ("project", 4), ("sensitivity", 3)]),
            rules: 8,
            examples: 600,
            noise: 0.0,
            perturbation: Perturbation::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.users == 0 || self.resources == 0 || self.operations == 0 || self.rules == 0 || self.examples == 0 {
            return bad("universe sizes, rule count and example count must be at least 1");
        }
        if self.user_attributes.is_empty() || self.resource_attributes.is_empty() {
            return bad("users and resources need at least one attribute each");
        }
        if self.user_attributes.values().chain(self.resource_attributes.values()).any(|&n| n == 0) {
            return bad("attribute ranges must hold at least one value");
        }
        if self.user_attributes.keys().any(|a| self.resource_attributes.contains_key(a)) {
            return bad("user and resource attribute names must differ");
        }
        for rate in [self.noise, self.perturbation.flip, self.perturbation.widen] {
            if !(0.0..=1.0).contains(&rate) {
                return bad("rates must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ctx: DomainContext,
    pub ground_truth: Vec<Rule>,
    pub examples: Vec<DecisionExample>,
}

fn operation_name(i: usize) -> String {
    OPERATION_NAMES.get(i).map_or_else(|| format!("op{i}"), |s| s.to_string())
}

fn universe(rng: &mut ChaCha8Rng, prefix: &str, count: usize, attrs: &BTreeMap<String, usize>) -> Result<Universe> {
    let ranges: BTreeMap<String, ValueSet> =
        attrs.iter().map(|(a, &n)| (a.clone(), (0..n).map(|i| i.to_string()).collect())).collect();
    let width = count.to_string().len();
    let entities = (0..count)
        .map(|i| {
            let asg: Assignment = attrs.iter().map(|(a, &n)| (a.clone(), rng.gen_range(0..n).to_string())).collect();
            (format!("{prefix}{i:0width$}"), asg)
        })
        .collect();
    Universe::new(ranges, entities)
}

fn random_expr(rng: &mut ChaCha8Rng, universe: &Universe, max_attrs: usize) -> AttributeExpression {
    let attrs: Vec<&String> = universe.attributes().collect();
    let k = rng.gen_range(1..=max_attrs.min(attrs.len()));
    let mut expr = AttributeExpression::universal();
    for attr in attrs.choose_multiple(rng, k) {
        let range = universe.range(attr);
        let n = rng.gen_range(1..=(range.len() / 2).max(1));
        let values: ValueSet = range.iter().cloned().choose_multiple(rng, n).into_iter().collect();
        expr = expr.with(attr, values).expect("sampled values are non-empty");
    }
    expr
}

fn random_rule(rng: &mut ChaCha8Rng, ctx: &DomainContext) -> Rule {
    let user = random_expr(rng, ctx.users(), 2);
    let resource = random_expr(rng, ctx.resources(), 2);
    let ops: Vec<&String> = ctx.operations().iter().collect();
    let k = rng.gen_range(1..=ops.len().min(2));
    let chosen: Vec<String> = ops.choose_multiple(rng, k).map(|s| s.to_string()).collect();
    let decision = if rng.gen_bool(PERMIT_SHARE) { Decision::Permit } else { Decision::Deny };
    Rule::new(user, resource, chosen, decision).expect("at least one operation is drawn")
}

/// Samples a context, a conflict-free ground-truth policy and a labelled log.
///
/// Half of the requests are drawn inside a random ground-truth rule so that
/// both decisions are well represented. Labels come from the ground truth
/// under deny-overrides with not-applicable read as deny, then exactly
/// `round(noise * examples)` of them are flipped.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users = universe(&mut rng, "u", cfg.users, &cfg.user_attributes)?;
    let resources = universe(&mut rng, "r", cfg.resources, &cfg.resource_attributes)?;
    let ops = (0..cfg.operations).map(operation_name).collect();
    let ctx = DomainContext::new(users, resources, ops)?;

    let matcher = Matcher::new(&ctx);
    let mut truth: Vec<Rule> = Vec::new();
    for _ in 0..cfg.rules * ATTEMPTS_PER_RULE {
        if truth.len() == cfg.rules {
            break;
        }
        let candidate = random_rule(&mut rng, &ctx);
        if truth.iter().any(|r| r == &candidate || matcher.rules_conflict(r, &candidate)) {
            continue;
        }
        truth.push(candidate.with_provenance(Provenance::source()));
    }
    if truth.len() < cfg.rules {
        return Err(Error::TooManyRules { requested: cfg.rules, generated: truth.len() });
    }

    let user_ids: Vec<&String> = ctx.users().entities().keys().collect();
    let resource_ids: Vec<&String> = ctx.resources().entities().keys().collect();
    let op_ids: Vec<&String> = ctx.operations().iter().collect();
    let mut examples = Vec::with_capacity(cfg.examples);
    for _ in 0..cfg.examples {
        let mut pick = None;
        if rng.gen_bool(0.5) {
            let rule = &truth[rng.gen_range(0..truth.len())];
            let us: Vec<&String> = ctx.users().matched(&rule.user).collect();
            let rs: Vec<&String> = ctx.resources().matched(&rule.resource).collect();
            if !us.is_empty() && !rs.is_empty() {
                let op = rule.ops.iter().choose(&mut rng).expect("rules have operations");
                pick = Some((*us.choose(&mut rng).unwrap(), *rs.choose(&mut rng).unwrap(), op));
            }
        }
        let (u, r, o) = pick.unwrap_or_else(|| {
            (
                *user_ids.choose(&mut rng).unwrap(),
                *resource_ids.choose(&mut rng).unwrap(),
                *op_ids.choose(&mut rng).unwrap(),
            )
        });
        let request = crate::model::AccessRequest::new(u, r, o);
        let decision = match decide(&truth, &request, &ctx, Combining::DenyOverrides)? {
            Outcome::Permit => Decision::Permit,
            Outcome::Deny | Outcome::NotApplicable => Decision::Deny,
        };
        examples.push(DecisionExample::observed(&ctx, u, r, o, decision)?);
    }

    let flips = (cfg.noise * cfg.examples as f64).round() as usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..flips] {
        examples[i].decision = examples[i].decision.flipped();
    }
    Ok(Scenario { ctx, ground_truth: truth, examples })
}

/// Seeded shuffle, then the first `round(ratio * n)` examples go to the
/// target and the rest to the source.
pub fn split_log(
    examples: &[DecisionExample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<DecisionExample>, Vec<DecisionExample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    let mut shuffled = examples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (ratio * examples.len() as f64).round() as usize;
    let source = shuffled.split_off(cut);
    Ok((shuffled, source))
}

/// Learns source policies from the source share of a log, then flips and
/// widens the requested fractions of them. Widening adds one in-range value
/// to one constraint.
pub fn derive_source_policies(
    examples: &[DecisionExample],
    pipeline: &LearnerPipeline,
    ctx: &DomainContext,
    perturbation: Perturbation,
    seed: u64,
) -> Result<Vec<Rule>> {
    if examples.is_empty() {
        return Err(Error::EmptyExamples);
    }
    let mut rules = pipeline.run(examples, ctx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rules.len();
    let count = |rate: f64| ((rate * n as f64).round() as usize).min(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..count(perturbation.flip)] {
        rules[i].decision = rules[i].decision.flipped();
    }

    order.shuffle(&mut rng);
    for &i in &order[..count(perturbation.widen)] {
        let rule = &mut rules[i];
        let mut options: Vec<(Side, &String, Vec<&String>)> = Vec::new();
        for side in [Side::User, Side::Resource] {
            for (attr, values) in rule.expr(side).constraints() {
                let missing: Vec<&String> = ctx.side(side).range(attr).difference(values).collect();
                if !missing.is_empty() {
                    options.push((side, attr, missing));
                }
            }
        }
        let Some((side, attr, missing)) = options.choose(&mut rng) else { continue };
        let value = (*missing.choose(&mut rng).expect("non-empty")).clone();
        let mut values = rule.expr(*side).get(attr).cloned().unwrap_or_default();
        values.insert(value);
        let (side, attr) = (*side, attr.to_string());
        let widened = rule.expr(side).without(&attr).with(&attr, values).expect("widened set is non-empty");
        match side {
            Side::User => rule.user = widened,
            Side::Resource => rule.resource = widened,
        }
    }

    Ok(rules.into_iter().map(|r| r.with_provenance(Provenance::source()).rehashed()).collect())
}
