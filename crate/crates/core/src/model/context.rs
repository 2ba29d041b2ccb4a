use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::expr::{AttributeExpression, ValueSet};
use super::{AccessRequest, DecisionExample, Rule, Side};
use crate::error::{Error, Result};

pub type Assignment = BTreeMap<String, String>;

static EMPTY: ValueSet = ValueSet::new();

/// One side (users or resources) of a domain: attribute ranges plus the
/// attribute assignment of every known entity.
///
/// Ranges are always explicit after construction: an attribute declared with
/// an empty range, or only seen in assignments, gets the set of assigned
/// values as its range.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawUniverse", into = "RawUniverse")]
pub struct Universe {
    ranges: BTreeMap<String, ValueSet>,
    entities: BTreeMap<String, Assignment>,
}

#[derive(Default, Serialize, Deserialize)]
struct RawUniverse {
    #[serde(default)]
    attributes: BTreeMap<String, ValueSet>,
    #[serde(default)]
    entities: BTreeMap<String, Assignment>,
}

impl TryFrom<RawUniverse> for Universe {
    type Error = Error;

    fn try_from(raw: RawUniverse) -> Result<Self> {
        Universe::new(raw.attributes, raw.entities)
    }
}

impl From<Universe> for RawUniverse {
    fn from(u: Universe) -> Self {
        RawUniverse { attributes: u.ranges, entities: u.entities }
    }
}

impl Universe {
    /// Validates that assigned values fall inside declared (non-empty)
    /// ranges and synthesizes the rest.
    pub fn new(
        declared: BTreeMap<String, ValueSet>,
        entities: BTreeMap<String, Assignment>,
    ) -> Result<Self> {
        let mut ranges = declared.clone();
        for (id, assignment) in &entities {
            for (attr, value) in assignment {
                match declared.get(attr) {
                    Some(range) if !range.is_empty() && !range.contains(value) => {
                        return Err(Error::InvalidContext(format!(
                            "entity `{id}` assigns `{value}` to `{attr}`, outside its declared range"
                        )));
                    }
                    _ => {
                        ranges.entry(attr.clone()).or_default().insert(value.clone());
                    }
                }
            }
        }
        Ok(Self { ranges, entities })
    }

    /// A universe with ranges only and no entities.
    pub fn from_ranges<'a, I>(ranges: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a [&'a str])>,
    {
        Self {
            ranges: ranges
                .into_iter()
                .map(|(a, vs)| (a.to_string(), vs.iter().map(|v| v.to_string()).collect()))
                .collect(),
            entities: BTreeMap::new(),
        }
    }

    pub fn range(&self, attr: &str) -> &ValueSet {
        self.ranges.get(attr).unwrap_or(&EMPTY)
    }

    pub fn ranges(&self) -> &BTreeMap<String, ValueSet> {
        &self.ranges
    }

    pub fn attributes(&self) -> impl Iterator<Item = &String> {
        self.ranges.keys()
    }

    pub fn entities(&self) -> &BTreeMap<String, Assignment> {
        &self.entities
    }

    pub fn assignment(&self, id: &str) -> Option<&Assignment> {
        self.entities.get(id)
    }

    /// Widens ranges so they contain every value `expr` mentions.
    pub fn absorb(&mut self, expr: &AttributeExpression) {
        for (attr, values) in expr.constraints() {
            self.ranges.entry(attr.clone()).or_default().extend(values.iter().cloned());
        }
    }

    /// Adds an entity, or merges attributes into an existing one. Values are
    /// absorbed into the ranges.
    pub fn insert_entity(&mut self, id: &str, assignment: &Assignment) {
        let slot = self.entities.entry(id.to_string()).or_default();
        for (attr, value) in assignment {
            slot.insert(attr.clone(), value.clone());
            self.ranges.entry(attr.clone()).or_default().insert(value.clone());
        }
    }

    pub fn matched<'a>(&'a self, expr: &'a AttributeExpression) -> impl Iterator<Item = &'a String> {
        self.entities
            .iter()
            .filter(move |(_, asg)| expr.matches(|a| asg.get(a).map(String::as_str)))
            .map(|(id, _)| id)
    }
}

/// The finite universes of a party: users, resources, and operations, with
/// attribute ranges and assignments for both entity kinds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawContext", into = "RawContext")]
pub struct DomainContext {
    users: Universe,
    resources: Universe,
    operations: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct RawContext {
    operations: BTreeSet<String>,
    users: Universe,
    resources: Universe,
}

impl TryFrom<RawContext> for DomainContext {
    type Error = Error;

    fn try_from(raw: RawContext) -> Result<Self> {
        DomainContext::new(raw.users, raw.resources, raw.operations)
    }
}

impl From<DomainContext> for RawContext {
    fn from(c: DomainContext) -> Self {
        RawContext { operations: c.operations, users: c.users, resources: c.resources }
    }
}

impl DomainContext {
    pub fn new(users: Universe, resources: Universe, operations: BTreeSet<String>) -> Result<Self> {
        if let Some(shared) = users.attributes().find(|a| resources.ranges.contains_key(*a)) {
            return Err(Error::InvalidContext(format!(
                "attribute `{shared}` is declared for both users and resources"
            )));
        }
        Ok(Self { users, resources, operations })
    }

    pub fn side(&self, side: Side) -> &Universe {
        match side {
            Side::User => &self.users,
            Side::Resource => &self.resources,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut Universe {
        match side {
            Side::User => &mut self.users,
            Side::Resource => &mut self.resources,
        }
    }

    pub fn users(&self) -> &Universe {
        &self.users
    }

    pub fn resources(&self) -> &Universe {
        &self.resources
    }

    pub fn operations(&self) -> &BTreeSet<String> {
        &self.operations
    }

    /// `id ⊨ expr`. Unknown ids are an error; an unassigned attribute under
    /// a constraint just fails the match.
    pub fn satisfies(&self, side: Side, id: &str, expr: &AttributeExpression) -> Result<bool> {
        let asg = self
            .side(side)
            .assignment(id)
            .ok_or_else(|| Error::UnknownEntity { side, id: id.to_string() })?;
        Ok(expr.matches(|a| asg.get(a).map(String::as_str)))
    }

    pub fn rule_applies(&self, rule: &Rule, request: &AccessRequest) -> Result<bool> {
        let user = self.satisfies(Side::User, &request.user, &rule.user)?;
        let resource = self.satisfies(Side::Resource, &request.resource, &rule.resource)?;
        Ok(user && resource && rule.ops.contains(&request.op))
    }

    pub fn check_request(&self, request: &AccessRequest) -> Result<()> {
        if self.users.assignment(&request.user).is_none() {
            return Err(Error::UnknownEntity { side: Side::User, id: request.user.clone() });
        }
        if self.resources.assignment(&request.resource).is_none() {
            return Err(Error::UnknownEntity {
                side: Side::Resource,
                id: request.resource.clone(),
            });
        }
        if !self.operations.contains(&request.op) {
            return Err(Error::UnknownOperation(request.op.clone()));
        }
        Ok(())
    }

    /// Widens ranges and the operation set to include every value the rules
    /// mention, so that set differences stay computable.
    pub fn absorb_rules<'a, I: IntoIterator<Item = &'a Rule>>(&mut self, rules: I) {
        for rule in rules {
            self.users.absorb(&rule.user);
            self.resources.absorb(&rule.resource);
            self.operations.extend(rule.ops.iter().cloned());
        }
    }

    /// Registers the entities, values and operations observed in a log.
    pub fn absorb_examples<'a, I: IntoIterator<Item = &'a DecisionExample>>(&mut self, examples: I) {
        for ex in examples {
            self.users.absorb(&ex.user_expr);
            self.resources.absorb(&ex.resource_expr);
            self.operations.insert(ex.op.clone());
            if let Some(point) = single_valued(&ex.user_expr) {
                if self.users.assignment(&ex.user).is_none() {
                    self.users.insert_entity(&ex.user, &point);
                }
            }
            if let Some(point) = single_valued(&ex.resource_expr) {
                if self.resources.assignment(&ex.resource).is_none() {
                    self.resources.insert_entity(&ex.resource, &point);
                }
            }
        }
    }

    /// Merges another context into this one (union of entities and ranges).
    pub fn merge(&mut self, other: &DomainContext) -> Result<()> {
        for side in [Side::User, Side::Resource] {
            let theirs = other.side(side);
            let mine = self.side_mut(side);
            for (attr, values) in theirs.ranges() {
                mine.ranges.entry(attr.clone()).or_default().extend(values.iter().cloned());
            }
            for (id, asg) in theirs.entities() {
                mine.insert_entity(id, asg);
            }
        }
        self.operations.extend(other.operations.iter().cloned());
        if let Some(shared) = self.users.attributes().find(|a| self.resources.ranges.contains_key(*a)) {
            return Err(Error::InvalidContext(format!(
                "attribute `{shared}` is declared for both users and resources"
            )));
        }
        Ok(())
    }
}

fn single_valued(expr: &AttributeExpression) -> Option<Assignment> {
    expr.constraints()
        .iter()
        .map(|(a, vs)| (vs.len() == 1).then(|| (a.clone(), vs.iter().next().cloned().unwrap())))
        .collect()
}
