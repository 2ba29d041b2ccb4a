use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::context::Universe;
use crate::error::{Error, Result};

pub type ValueSet = BTreeSet<String>;

/// A conjunction of `attribute ∈ value-set` constraints.
///
/// The empty map is the universal expression. An unsatisfiable conjunction is
/// never stored; operations that could produce one return `None` (or drop
/// the piece) instead.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, ValueSet>", into = "BTreeMap<String, ValueSet>")]
pub struct AttributeExpression {
    constraints: BTreeMap<String, ValueSet>,
}

impl AttributeExpression {
    pub fn universal() -> Self {
        Self::default()
    }

    /// Builds an expression from `(attribute, values)` pairs. Repeated
    /// attributes are intersected.
    pub fn new<I, A, V, S>(constraints: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, V)>,
        A: Into<String>,
        V: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: BTreeMap<String, ValueSet> = BTreeMap::new();
        for (attr, values) in constraints {
            let attr = attr.into();
            let values: ValueSet = values.into_iter().map(Into::into).collect();
            let merged = match out.remove(&attr) {
                Some(prev) => prev.intersection(&values).cloned().collect(),
                None => values,
            };
            if merged.is_empty() {
                return Err(Error::EmptyValueSet { attr });
            }
            out.insert(attr, merged);
        }
        Ok(Self { constraints: out })
    }

    /// The most specific expression matching exactly the given assignment.
    pub fn point<'a, I>(assignment: I) -> Self
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
    {
        Self {
            constraints: assignment
                .into_iter()
                .map(|(a, v)| (a.clone(), BTreeSet::from([v.clone()])))
                .collect(),
        }
    }

    pub fn constraints(&self) -> &BTreeMap<String, ValueSet> {
        &self.constraints
    }

    pub fn get(&self, attr: &str) -> Option<&ValueSet> {
        self.constraints.get(attr)
    }

    pub fn is_universal(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &String> {
        self.constraints.keys()
    }

    /// Copy with `attr` constrained to `values`; `None` if `values` is empty.
    pub fn with(&self, attr: &str, values: ValueSet) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut out = self.clone();
        out.constraints.insert(attr.to_string(), values);
        Some(out)
    }

    /// Copy with the constraint on `attr` removed.
    pub fn without(&self, attr: &str) -> Self {
        let mut out = self.clone();
        out.constraints.remove(attr);
        out
    }

    /// Satisfaction against an attribute assignment. An attribute the
    /// lookup cannot resolve (⊥) fails any constraint placed on it.
    pub fn matches<'a, F>(&self, lookup: F) -> bool
    where
        F: Fn(&str) -> Option<&'a str>,
    {
        self.constraints
            .iter()
            .all(|(attr, values)| lookup(attr).is_some_and(|v| values.contains(v)))
    }

    /// Attribute-wise conjunction. `None` is the empty expression.
    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let mut out = self.constraints.clone();
        for (attr, values) in &other.constraints {
            match out.get_mut(attr) {
                Some(mine) => {
                    mine.retain(|v| values.contains(v));
                    if mine.is_empty() {
                        return None;
                    }
                }
                None => {
                    out.insert(attr.clone(), values.clone());
                }
            }
        }
        Some(Self { constraints: out })
    }

    /// Whether the conjunction of both expressions is satisfiable; the
    /// allocation-free form of `intersect(..).is_some()`.
    pub fn overlaps(&self, other: &Self) -> bool {
        let (small, large) = if self.constraints.len() <= other.constraints.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.constraints.iter().all(|(attr, values)| match large.constraints.get(attr) {
            Some(theirs) => !values.is_disjoint(theirs),
            None => true,
        })
    }

    /// Syntactic subset test: every constraint of `other` is implied by a
    /// constraint of `self`. A constraint of `other` covering the attribute's
    /// whole range is implied by anything.
    pub fn is_subset_of(&self, other: &Self, universe: &Universe) -> bool {
        other.constraints.iter().all(|(attr, theirs)| match self.constraints.get(attr) {
            Some(mine) => mine.is_subset(theirs),
            None => universe.range(attr).is_subset(theirs),
        })
    }

    /// Subset test by enumerating every point of the attribute space spanned
    /// by the two expressions. Exponential in the number of attributes; meant
    /// for validation on small universes.
    pub fn is_subset_of_extensional(&self, other: &Self, universe: &Universe) -> bool {
        let attrs: Vec<&String> = self
            .constraints
            .keys()
            .chain(other.constraints.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let ranges: Vec<Vec<&String>> =
            attrs.iter().map(|a| universe.range(a).iter().collect()).collect();
        let mut point: BTreeMap<&str, &str> = BTreeMap::new();
        !any_point(&attrs, &ranges, 0, &mut point, &mut |p| {
            let lookup = |a: &str| p.get(a).copied();
            self.matches(lookup) && !other.matches(lookup)
        })
    }

    /// Box difference: disjoint expressions whose union matches exactly the
    /// entities matched by `self` and not by `other`.
    ///
    /// Attributes `self` already constrains are split first so that pieces
    /// stay as close to `self` as possible; attributes only `other`
    /// constrains are complemented against their range in `universe`.
    pub fn difference(&self, other: &Self, universe: &Universe) -> Vec<Self> {
        if self.intersect(other).is_none() {
            return vec![self.clone()];
        }
        let (shared, foreign): (Vec<_>, Vec<_>) = other
            .constraints
            .iter()
            .partition(|(attr, _)| self.constraints.contains_key(*attr));

        let mut pieces = Vec::new();
        let mut remainder = self.clone();
        for (attr, theirs) in shared.into_iter().chain(foreign) {
            let base = match remainder.constraints.get(attr) {
                Some(values) => values.clone(),
                None => {
                    let range = universe.range(attr);
                    if range.is_subset(theirs) {
                        continue;
                    }
                    range.clone()
                }
            };
            let (inside, outside): (ValueSet, ValueSet) =
                base.into_iter().partition(|v| theirs.contains(v));
            if let Some(piece) = remainder.with(attr, outside) {
                pieces.push(piece);
            }
            match remainder.with(attr, inside) {
                Some(next) => remainder = next,
                None => return pieces,
            }
        }
        pieces
    }
}

fn any_point<'a, F>(
    attrs: &[&'a String],
    ranges: &[Vec<&'a String>],
    depth: usize,
    point: &mut BTreeMap<&'a str, &'a str>,
    pred: &mut F,
) -> bool
where
    F: FnMut(&BTreeMap<&'a str, &'a str>) -> bool,
{
    if depth == attrs.len() {
        return pred(point);
    }
    for value in &ranges[depth] {
        point.insert(attrs[depth].as_str(), value.as_str());
        if any_point(attrs, ranges, depth + 1, point, pred) {
            return true;
        }
    }
    point.remove(attrs[depth].as_str());
    false
}

impl TryFrom<BTreeMap<String, ValueSet>> for AttributeExpression {
    type Error = Error;

    fn try_from(constraints: BTreeMap<String, ValueSet>) -> Result<Self> {
        if let Some((attr, _)) = constraints.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::EmptyValueSet { attr: attr.clone() });
        }
        Ok(Self { constraints })
    }
}

impl From<AttributeExpression> for BTreeMap<String, ValueSet> {
    fn from(expr: AttributeExpression) -> Self {
        expr.constraints
    }
}

impl fmt::Display for AttributeExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (attr, values)) in self.constraints.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            let joined: Vec<&str> = values.iter().map(String::as_str).collect();
            write!(f, "{attr}: {}", joined.join(","))?;
        }
        f.write_str("}")
    }
}
