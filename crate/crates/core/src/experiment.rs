//! Side-by-side comparison of the transfer strategies on one scenario.
//!
//! The generated log is split into a target share and a source share. Source
//! policies are learned from the source share and perturbed. Part of the
//! target share is held out. Every strategy then runs on the remaining
//! target examples and is scored on the held-out ones.

use serde::{Deserialize, Serialize};

use crate::dataio::{derive_source_policies, generate_scenario, split_log, ScenarioConfig};
use crate::error::Result;
use crate::evaluation::{evaluate, render_table, EvalOptions, MetricsReport};
use crate::learner::{LearnerConfig, LearnerPipeline};
use crate::matching::SimilarityMode;
use crate::transfer::{Strategy, TransferCounters, TransferTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Share of the log that becomes the target party's.
    pub split_ratio: f64,
    /// Share of the target log kept back for scoring. Zero scores on the
    /// whole target log, the same examples the strategies learn from.
    pub holdout: f64,
    pub learner: LearnerConfig,
    pub eval: EvalOptions,
    pub similarity: SimilarityMode,
    pub strategies: Vec<Strategy>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            split_ratio: 0.7,
            holdout: 0.3,
            learner: LearnerConfig::default(),
            eval: EvalOptions::default(),
            similarity: SimilarityMode::default(),
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub rules: usize,
    pub counters: TransferCounters,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub train_examples: usize,
    pub test_examples: usize,
    pub source_rules: usize,
    pub results: Vec<StrategyResult>,
}

impl ComparisonReport {
    pub fn result(&self, strategy: Strategy) -> Option<&StrategyResult> {
        self.results.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports always serialize");
        text.push('\n');
        text
    }

    pub fn to_table(&self) -> String {
        let names: Vec<&str> = self.results.iter().map(|r| r.strategy.as_str()).collect();
        render_table(names.iter().copied().zip(self.results.iter().map(|r| &r.metrics)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,rules,tp,fp,fn,tn,coverage,precision,recall,f1\n");
        for r in &self.results {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.strategy, r.rules, m.tp, m.fp, m.fn_, m.tn, m.coverage, m.precision, m.recall, m.f1
            ));
        }
        out
    }
}

pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    let seed = cfg.scenario.seed;
    let scenario = generate_scenario(&cfg.scenario)?;
    let pipeline = LearnerPipeline::from_config(&cfg.learner)?;
    let (target, source_share) = split_log(&scenario.examples, cfg.split_ratio, seed)?;
    let source = derive_source_policies(
        &source_share,
        &pipeline,
        &scenario.ctx,
        cfg.scenario.perturbation,
        seed.wrapping_add(2),
    )?;
    let (test, train) = if cfg.holdout == 0.0 {
        (target.clone(), target)
    } else {
        split_log(&target, cfg.holdout, seed.wrapping_add(1))?
    };

    let mut results = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let outcome = TransferTask::new(strategy, source.clone(), train.clone(), scenario.ctx.clone())
            .with_pipeline(pipeline.clone())
            .with_mode(cfg.similarity)
            .run()?;
        let metrics = evaluate(&outcome.rules, &test, &scenario.ctx, cfg.eval)?;
        results.push(StrategyResult { strategy, rules: outcome.rules.len(), counters: outcome.counters, metrics });
    }
    Ok(ComparisonReport {
        seed,
        train_examples: train.len(),
        test_examples: test.len(),
        source_rules: source.len(),
        results,
    })
}
