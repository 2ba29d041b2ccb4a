//! ABAC data model: attribute expressions, rules, decision examples, and the
//! domain context they are interpreted in.

mod context;
mod expr;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use context::{Assignment, DomainContext, Universe};
pub use expr::{AttributeExpression, ValueSet};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Resource,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::User => "user",
            Side::Resource => "resource",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Permit,
    Deny,
}

impl Decision {
    pub fn flipped(self) -> Self {
        match self {
            Decision::Permit => Decision::Deny,
            Decision::Deny => Decision::Permit,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Permit => "permit",
            Decision::Deny => "deny",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Source,
    #[default]
    Local,
    Adapted,
}

/// Where a rule came from. `lineage` names the input rules an adapted rule
/// was derived from; it is empty for source and local rules.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub lineage: BTreeSet<String>,
}

impl Provenance {
    pub fn source() -> Self {
        Self { origin: Origin::Source, lineage: BTreeSet::new() }
    }

    pub fn local() -> Self {
        Self::default()
    }

    /// Provenance of a rule derived from `parents`. Adapted parents
    /// contribute their own lineage so that ancestry always names input
    /// rules.
    pub fn adapted<'a, I: IntoIterator<Item = &'a Rule>>(parents: I) -> Self {
        let mut lineage = BTreeSet::new();
        for p in parents {
            if p.provenance.origin == Origin::Adapted {
                lineage.extend(p.provenance.lineage.iter().cloned());
            } else {
                lineage.insert(p.id.clone());
            }
        }
        Self { origin: Origin::Adapted, lineage }
    }
}

/// `⟨user expression, resource expression, operations, decision⟩`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawRule")]
pub struct Rule {
    pub id: String,
    pub user: AttributeExpression,
    pub resource: AttributeExpression,
    pub ops: BTreeSet<String>,
    pub decision: Decision,
    /// Number of log examples the rule was mined from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<usize>,
    #[serde(skip)]
    pub provenance: Provenance,
}

#[derive(Deserialize)]
struct RawRule {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    user: AttributeExpression,
    #[serde(default)]
    resource: AttributeExpression,
    ops: BTreeSet<String>,
    decision: Decision,
    #[serde(default)]
    support: Option<usize>,
}

impl TryFrom<RawRule> for Rule {
    type Error = Error;

    fn try_from(raw: RawRule) -> Result<Self> {
        let mut rule = Rule::new(raw.user, raw.resource, raw.ops, raw.decision)?;
        if let Some(id) = raw.id {
            rule.id = id;
        }
        rule.support = raw.support;
        Ok(rule)
    }
}

/// Structural identity of a rule, ignoring id, support and provenance.
pub type RuleKey = (AttributeExpression, AttributeExpression, BTreeSet<String>, Decision);

impl Rule {
    /// A local rule with a content-derived id.
    pub fn new<I, S>(
        user: AttributeExpression,
        resource: AttributeExpression,
        ops: I,
        decision: Decision,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ops: BTreeSet<String> = ops.into_iter().map(Into::into).collect();
        let mut rule = Rule {
            id: String::new(),
            user,
            resource,
            ops,
            decision,
            support: None,
            provenance: Provenance::local(),
        };
        if rule.ops.is_empty() {
            return Err(Error::EmptyOperations(rule.content_id()));
        }
        rule.id = rule.content_id();
        Ok(rule)
    }

    /// Same shape as `self` with different parts; `None` if `ops` is empty.
    pub(crate) fn reshaped(
        &self,
        user: AttributeExpression,
        resource: AttributeExpression,
        ops: BTreeSet<String>,
        decision: Decision,
        provenance: Provenance,
    ) -> Option<Rule> {
        if ops.is_empty() {
            return None;
        }
        let mut rule = Rule { id: String::new(), user, resource, ops, decision, support: None, provenance };
        rule.id = rule.content_id();
        Some(rule)
    }

    /// Recomputes the content id after fields were replaced.
    pub(crate) fn rehashed(mut self) -> Self {
        self.id = self.content_id();
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn expr(&self, side: Side) -> &AttributeExpression {
        match side {
            Side::User => &self.user,
            Side::Resource => &self.resource,
        }
    }

    pub fn key(&self) -> RuleKey {
        (self.user.clone(), self.resource.clone(), self.ops.clone(), self.decision)
    }

    pub fn same_shape(&self, other: &Rule) -> bool {
        self.user == other.user
            && self.resource == other.resource
            && self.ops == other.ops
            && self.decision == other.decision
    }

    /// Short hash of the canonical rule body.
    pub fn content_id(&self) -> String {
        let body = serde_json::to_vec(&(&self.user, &self.resource, &self.ops, self.decision))
            .expect("rule bodies always serialize");
        let digest = Sha256::digest(&body);
        format!("r-{}", &hex::encode(digest)[..12])
    }
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.same_shape(other)
    }
}

impl Eq for Rule {}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<&str> = self.ops.iter().map(String::as_str).collect();
        write!(f, "⟨{}, {}, {{{}}}, {}⟩", self.user, self.resource, ops.join(","), self.decision)
    }
}

/// Drops structurally identical rules, keeping the first occurrence.
pub fn dedup_rules(rules: impl IntoIterator<Item = Rule>) -> Vec<Rule> {
    let mut seen = std::collections::HashSet::new();
    rules.into_iter().filter(|r| seen.insert(r.key())).collect()
}

/// A logged request with its decision and the attribute expressions of its
/// user and resource.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionExample {
    pub user: String,
    pub user_expr: AttributeExpression,
    pub resource: String,
    pub resource_expr: AttributeExpression,
    pub op: String,
    pub decision: Decision,
}

impl DecisionExample {
    /// Example whose expressions are the exact attribute points of `user`
    /// and `resource` in `ctx`.
    pub fn observed(
        ctx: &DomainContext,
        user: &str,
        resource: &str,
        op: &str,
        decision: Decision,
    ) -> Result<Self> {
        let u = ctx
            .users()
            .assignment(user)
            .ok_or_else(|| Error::UnknownEntity { side: Side::User, id: user.to_string() })?;
        let r = ctx.resources().assignment(resource).ok_or_else(|| Error::UnknownEntity {
            side: Side::Resource,
            id: resource.to_string(),
        })?;
        Ok(Self {
            user: user.to_string(),
            user_expr: AttributeExpression::point(u),
            resource: resource.to_string(),
            resource_expr: AttributeExpression::point(r),
            op: op.to_string(),
            decision,
        })
    }

    pub fn expr(&self, side: Side) -> &AttributeExpression {
        match side {
            Side::User => &self.user_expr,
            Side::Resource => &self.resource_expr,
        }
    }

    pub fn entity(&self, side: Side) -> &str {
        match side {
            Side::User => &self.user,
            Side::Resource => &self.resource,
        }
    }

    pub fn request(&self) -> AccessRequest {
        AccessRequest::new(&self.user, &self.resource, &self.op)
    }

    /// The most specific rule reproducing this example.
    pub fn to_rule(&self) -> Rule {
        Rule::new(self.user_expr.clone(), self.resource_expr.clone(), [self.op.clone()], self.decision)
            .expect("a single operation is never empty")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessRequest {
    pub user: String,
    pub resource: String,
    pub op: String,
}

impl AccessRequest {
    pub fn new(user: impl Into<String>, resource: impl Into<String>, op: impl Into<String>) -> Self {
        Self { user: user.into(), resource: resource.into(), op: op.into() }
    }
}
