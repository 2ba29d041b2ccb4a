//! Reading and writing logs, contexts and policies, plus the synthetic
//! scenario generator.

mod generator;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Assignment, Decision, DecisionExample, DomainContext, Provenance, Rule, Side, Universe,
};

pub use generator::{derive_source_policies, generate_scenario, split_log, Perturbation, Scenario, ScenarioConfig};

/// Maps CSV columns onto the parts of a decision example. Attribute columns
/// are named after the attribute they carry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMap {
    pub user: String,
    #[serde(default)]
    pub user_attributes: Vec<String>,
    pub resource: String,
    #[serde(default)]
    pub resource_attributes: Vec<String>,
    pub operation: String,
    pub decision: String,
}

impl SchemaMap {
    /// A schema covering every attribute of `ctx`.
    pub fn for_context(ctx: &DomainContext) -> Self {
        Self {
            user: "user".into(),
            user_attributes: ctx.users().attributes().cloned().collect(),
            resource: "resource".into(),
            resource_attributes: ctx.resources().attributes().cloned().collect(),
            operation: "operation".into(),
            decision: "decision".into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn parse_decision(cell: &str) -> Option<Decision> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "permit" | "allow" | "1" | "true" | "yes" => Some(Decision::Permit),
        "deny" | "0" | "false" | "no" => Some(Decision::Deny),
        _ => None,
    }
}

/// Parses a CSV log. Entities are built from their attribute columns, and
/// every value and operation seen is registered in the returned context.
/// Empty attribute cells leave the attribute unassigned.
pub fn read_log_csv<R: Read>(reader: R, schema: &SchemaMap) -> Result<(Vec<DecisionExample>, DomainContext)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let user_col = column(&schema.user)?;
    let resource_col = column(&schema.resource)?;
    let op_col = column(&schema.operation)?;
    let decision_col = column(&schema.decision)?;
    let user_attrs: Vec<(&str, usize)> =
        schema.user_attributes.iter().map(|a| Ok((a.as_str(), column(a)?))).collect::<Result<_>>()?;
    let resource_attrs: Vec<(&str, usize)> =
        schema.resource_attributes.iter().map(|a| Ok((a.as_str(), column(a)?))).collect::<Result<_>>()?;

    let mut users: BTreeMap<String, Assignment> = BTreeMap::new();
    let mut resources: BTreeMap<String, Assignment> = BTreeMap::new();
    let mut operations = BTreeSet::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let bad = |message: String| Error::BadRow { row, message };

        let decision = parse_decision(cell(decision_col))
            .ok_or_else(|| bad(format!("decision `{}` is neither permit nor deny", cell(decision_col))))?;
        let (user, resource, op) = (cell(user_col), cell(resource_col), cell(op_col));
        for (name, value) in [(&schema.user, user), (&schema.resource, resource), (&schema.operation, op)] {
            if value.is_empty() {
                return Err(bad(format!("column `{name}` is empty")));
            }
        }
        let entity = |store: &mut BTreeMap<String, Assignment>, id: &str, attrs: &[(&str, usize)]| {
            let slot = store.entry(id.to_string()).or_default();
            for &(attr, i) in attrs {
                let value = cell(i);
                if value.is_empty() {
                    continue;
                }
                match slot.get(attr) {
                    Some(prev) if prev != value => {
                        return Err(bad(format!("`{id}` has `{attr}` = `{prev}` earlier but `{value}` here")));
                    }
                    Some(_) => {}
                    None => {
                        slot.insert(attr.to_string(), value.to_string());
                    }
                }
            }
            Ok(())
        };
        entity(&mut users, user, &user_attrs)?;
        entity(&mut resources, resource, &resource_attrs)?;
        operations.insert(op.to_string());
        rows.push((user.to_string(), resource.to_string(), op.to_string(), decision));
    }

    let ctx = DomainContext::new(
        Universe::new(BTreeMap::new(), users)?,
        Universe::new(BTreeMap::new(), resources)?,
        operations,
    )?;
    let examples = rows
        .into_iter()
        .map(|(u, r, o, d)| DecisionExample::observed(&ctx, &u, &r, &o, d))
        .collect::<Result<_>>()?;
    Ok((examples, ctx))
}

pub fn load_log_csv(path: &Path, schema: &SchemaMap) -> Result<(Vec<DecisionExample>, DomainContext)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log_csv(file, schema)
}

/// Writes a log whose expressions are all single-valued.
pub fn write_log_csv<W: Write>(writer: W, examples: &[DecisionExample], schema: &SchemaMap) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.user.as_str(), schema.resource.as_str(), schema.operation.as_str(), schema.decision.as_str()];
    header.extend(schema.user_attributes.iter().map(String::as_str));
    header.extend(schema.resource_attributes.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for (i, ex) in examples.iter().enumerate() {
        let mut record = vec![ex.user.clone(), ex.resource.clone(), ex.op.clone(), ex.decision.to_string()];
        for (side, attrs) in [(Side::User, &schema.user_attributes), (Side::Resource, &schema.resource_attributes)] {
            for attr in attrs {
                let cell = match ex.expr(side).get(attr) {
                    None => String::new(),
                    Some(vs) if vs.len() == 1 => vs.iter().next().cloned().unwrap_or_default(),
                    Some(_) => {
                        return Err(Error::BadRow {
                            row: i + 2,
                            message: format!("`{attr}` is multi-valued and has no CSV form"),
                        })
                    }
                };
                record.push(cell);
            }
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_log_csv(path: &Path, examples: &[DecisionExample], schema: &SchemaMap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_log_csv(file, examples, schema)
}

/// Loads a log from `.csv` (requires a schema) or from a JSON list of
/// examples.
pub fn load_log(path: &Path, schema: Option<&SchemaMap>) -> Result<(Vec<DecisionExample>, DomainContext)> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let schema = schema.ok_or_else(|| Error::InvalidConfig(format!("{} needs a schema map", path.display())))?;
        return load_log_csv(path, schema);
    }
    let examples: Vec<DecisionExample> = read_json(path)?;
    let mut ctx = DomainContext::default();
    ctx.absorb_examples(&examples);
    Ok((examples, ctx))
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    rules: Vec<Rule>,
}

fn check_ids(rules: &[Rule]) -> Result<()> {
    let mut seen = HashSet::new();
    for rule in rules {
        if !seen.insert(rule.id.as_str()) {
            return Err(Error::DuplicatePolicyId(rule.id.clone()));
        }
    }
    Ok(())
}

/// Parses a policy document, rejecting repeated rule ids.
pub fn parse_policies(text: &str) -> Result<Vec<Rule>> {
    let file: PolicyFile = serde_json::from_str(text).map_err(|e| Error::json("<policies>", e))?;
    check_ids(&file.rules)?;
    Ok(file.rules)
}

pub fn load_policies(path: &Path) -> Result<Vec<Rule>> {
    let file: PolicyFile = read_json(path)?;
    check_ids(&file.rules)?;
    Ok(file.rules)
}

pub fn policies_to_json(rules: &[Rule]) -> String {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        rules: &'a [Rule],
    }
    let mut text = serde_json::to_string_pretty(&Borrowed { rules }).expect("rules always serialize");
    text.push('\n');
    text
}

pub fn save_policies(path: &Path, rules: &[Rule]) -> Result<()> {
    fs::write(path, policies_to_json(rules)).map_err(|e| Error::io(path, e))
}

/// Sidecar file holding the provenance of each rule id.
pub fn save_provenance(path: &Path, rules: &[Rule]) -> Result<()> {
    let map: BTreeMap<&str, &Provenance> = rules.iter().map(|r| (r.id.as_str(), &r.provenance)).collect();
    write_json(path, &map)
}

pub fn load_provenance(path: &Path) -> Result<BTreeMap<String, Provenance>> {
    read_json(path)
}

/// Sets each rule's provenance from a sidecar map; ids missing from the map
/// keep theirs.
pub fn apply_provenance(rules: &mut [Rule], map: &BTreeMap<String, Provenance>) {
    for rule in rules {
        if let Some(p) = map.get(&rule.id) {
            rule.provenance = p.clone();
        }
    }
}

pub fn load_context(path: &Path) -> Result<DomainContext> {
    read_json(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
