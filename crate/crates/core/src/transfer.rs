//! The four transfer strategies.
//!
//! * `tplg` adapts each source rule against the raw target log.
//! * `tplp` adapts against rules learned from the log.
//! * `tpll` adapts against the learner's intermediate rules after every stage.
//! * `tphl` does the same and also feeds the surviving source rules back into
//!   the learner.
//!
//! Every strategy ends with a global conflict-resolution pass, so its output
//! never holds two similar rules with opposite decisions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptation::Adapter;
use crate::error::{Error, Result};
use crate::learner::LearnerPipeline;
use crate::matching::{Matcher, SimilarityMode};
use crate::model::{dedup_rules, DecisionExample, DomainContext, Origin, Provenance, Rule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Tplg,
    Tplp,
    Tpll,
    Tphl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Tplg, Strategy::Tplp, Strategy::Tpll, Strategy::Tphl];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Tplg => "tplg",
            Strategy::Tplp => "tplp",
            Strategy::Tpll => "tpll",
            Strategy::Tphl => "tphl",
        }
    }

    pub fn needs_pipeline(self) -> bool {
        self != Strategy::Tplg
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// How the output rules break down by origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferCounters {
    /// Source rules present in the output exactly as given.
    pub transferred_unchanged: usize,
    /// Source rules reshaped by a learner stage (`tphl` only).
    pub source_modified: usize,
    pub adapted: usize,
    pub local: usize,
    /// Residual regions that came out empty during adaptation.
    pub dropped_empty: usize,
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub strategy: Strategy,
    pub rules: Vec<Rule>,
    pub counters: TransferCounters,
}

impl TransferOutcome {
    /// Provenance of every output rule, keyed by rule id.
    pub fn provenance(&self) -> BTreeMap<String, Provenance> {
        self.rules.iter().map(|r| (r.id.clone(), r.provenance.clone())).collect()
    }
}

/// The most-specific rule replaying a single example.
pub fn example_to_rule(example: &DecisionExample) -> Rule {
    example.to_rule()
}

#[derive(Clone, Debug)]
pub struct TransferTask {
    pub source_rules: Vec<Rule>,
    pub examples: Vec<DecisionExample>,
    pub ctx: DomainContext,
    pub strategy: Strategy,
    pub pipeline: Option<LearnerPipeline>,
    pub mode: SimilarityMode,
}

impl TransferTask {
    pub fn new(strategy: Strategy, source_rules: Vec<Rule>, examples: Vec<DecisionExample>, ctx: DomainContext) -> Self {
        Self { source_rules, examples, ctx, strategy, pipeline: None, mode: SimilarityMode::default() }
    }

    pub fn with_pipeline(mut self, pipeline: LearnerPipeline) -> Self {
        self.pipeline = Some(pipeline);
        self
    }

    pub fn with_mode(mut self, mode: SimilarityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn run(&self) -> Result<TransferOutcome> {
        let pipeline = || self.pipeline.as_ref().ok_or(Error::MissingPipeline(self.strategy.as_str()));
        let (examples, source, ctx) = (&self.examples, &self.source_rules, &self.ctx);
        match self.strategy {
            Strategy::Tplg => Run::new(examples, source, ctx, self.mode).tplg(),
            Strategy::Tplp => Run::new(examples, source, ctx, self.mode).tplp(pipeline()?),
            Strategy::Tpll => Run::new(examples, source, ctx, self.mode).staged(pipeline()?, false),
            Strategy::Tphl => Run::new(examples, source, ctx, self.mode).staged(pipeline()?, true),
        }
    }
}

pub fn tplg(examples: &[DecisionExample], source: &[Rule], ctx: &DomainContext) -> Result<TransferOutcome> {
    Run::new(examples, source, ctx, SimilarityMode::default()).tplg()
}

pub fn tplp(
    examples: &[DecisionExample],
    source: &[Rule],
    pipeline: &LearnerPipeline,
    ctx: &DomainContext,
) -> Result<TransferOutcome> {
    Run::new(examples, source, ctx, SimilarityMode::default()).tplp(pipeline)
}

pub fn tpll(
    examples: &[DecisionExample],
    source: &[Rule],
    pipeline: &LearnerPipeline,
    ctx: &DomainContext,
) -> Result<TransferOutcome> {
    Run::new(examples, source, ctx, SimilarityMode::default()).staged(pipeline, false)
}

pub fn tphl(
    examples: &[DecisionExample],
    source: &[Rule],
    pipeline: &LearnerPipeline,
    ctx: &DomainContext,
) -> Result<TransferOutcome> {
    Run::new(examples, source, ctx, SimilarityMode::default()).staged(pipeline, true)
}

struct Run<'a> {
    examples: &'a [DecisionExample],
    source: Vec<Rule>,
    ctx: DomainContext,
    mode: SimilarityMode,
    dropped_empty: usize,
}

impl<'a> Run<'a> {
    fn new(examples: &'a [DecisionExample], source: &[Rule], ctx: &DomainContext, mode: SimilarityMode) -> Self {
        let source: Vec<Rule> =
            dedup_rules(source.iter().map(|r| r.clone().with_provenance(Provenance::source())));
        let mut ctx = ctx.clone();
        ctx.absorb_rules(&source);
        ctx.absorb_examples(examples);
        Self { examples, source, ctx, mode, dropped_empty: 0 }
    }

    fn adapter(&self) -> Adapter<'_> {
        Adapter::new(Matcher::with_mode(&self.ctx, self.mode), self.examples)
    }

    fn require_examples(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::EmptyExamples);
        }
        Ok(())
    }

    /// Replaces the rules in `working` that conflict with `pivot` by the
    /// adapted group. Returns whether anything conflicted.
    fn adapt_into(&mut self, pivot: &Rule, working: &mut Vec<Rule>) -> Result<bool> {
        let (adapted, conflicting) = {
            let adapter = self.adapter();
            let group = adapter.matcher().find_conflicts(pivot, working);
            if !group.has_conflicts() {
                return Ok(false);
            }
            (adapter.adapt_group_counted(pivot, &group.similar_inconsistent)?, group.similar_inconsistent)
        };
        self.dropped_empty += adapted.dropped_empty;
        working.retain(|r| r != pivot && !conflicting.contains(r));
        working.extend(adapted.rules);
        *working = dedup_rules(std::mem::take(working));
        Ok(true)
    }

    fn tplg(mut self) -> Result<TransferOutcome> {
        self.require_examples()?;
        let mut out = Vec::new();
        for rho in self.source.clone() {
            let conflicting: Vec<Rule> = {
                let matcher = Matcher::with_mode(&self.ctx, self.mode);
                let group = matcher.find_conflicts(&rho, self.examples);
                dedup_rules(group.similar_inconsistent.iter().map(example_to_rule))
            };
            if conflicting.is_empty() {
                out.push(rho);
                continue;
            }
            let adapted = self.adapter().adapt_group_counted(&rho, &conflicting)?;
            self.dropped_empty += adapted.dropped_empty;
            out.extend(adapted.rules);
        }
        self.finish(Strategy::Tplg, out)
    }

    fn tplp(mut self, pipeline: &LearnerPipeline) -> Result<TransferOutcome> {
        let mut working = pipeline.run(self.examples, &self.ctx)?;
        let mut migrated = Vec::new();
        for rho in self.source.clone() {
            if !self.adapt_into(&rho, &mut working)? {
                migrated.push(rho);
            }
        }
        working.extend(migrated);
        self.finish(Strategy::Tplp, working)
    }

    /// Adapts after every learner stage. With `inline`, surviving source
    /// rules join the working set before the next stage runs.
    fn staged(mut self, pipeline: &LearnerPipeline, inline: bool) -> Result<TransferOutcome> {
        self.require_examples()?;
        let mut working: Vec<Rule> = Vec::new();
        let mut surviving = self.source.clone();
        for stage in pipeline.stages() {
            working = stage.apply(self.examples, working, &self.ctx)?;
            let mut kept = Vec::with_capacity(surviving.len());
            for rho in std::mem::take(&mut surviving) {
                if !self.adapt_into(&rho, &mut working)? {
                    kept.push(rho);
                }
            }
            surviving = kept;
            if inline {
                working = dedup_rules(working.into_iter().chain(surviving.iter().cloned()));
            }
        }
        working.extend(surviving);
        let strategy = if inline { Strategy::Tphl } else { Strategy::Tpll };
        self.finish(strategy, working)
    }

    fn finish(mut self, strategy: Strategy, rules: Vec<Rule>) -> Result<TransferOutcome> {
        let resolved = self.adapter().resolve(dedup_rules(rules))?;
        self.dropped_empty += resolved.dropped_empty;
        let mut counters = TransferCounters { dropped_empty: self.dropped_empty, ..Default::default() };
        for rule in &resolved.rules {
            match rule.provenance.origin {
                Origin::Source if self.source.contains(rule) => counters.transferred_unchanged += 1,
                Origin::Source => counters.source_modified += 1,
                Origin::Adapted => counters.adapted += 1,
                Origin::Local => counters.local += 1,
            }
        }
        Ok(TransferOutcome { strategy, rules: resolved.rules, counters })
    }
}
