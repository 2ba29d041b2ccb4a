use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use abac_transfer::dataio::{
    self, generate_scenario, load_context, load_log, load_policies, read_json, save_log_csv, save_policies,
    save_provenance, write_json, SchemaMap, ScenarioConfig,
};
use abac_transfer::evaluation::{replay, score, render_table, Combining, EvalOptions, NaPolicy};
use abac_transfer::experiment::{run_comparison, ExperimentConfig};
use abac_transfer::learner::{LearnerConfig, LearnerPipeline};
use abac_transfer::model::{DecisionExample, DomainContext, Provenance};
use abac_transfer::transfer::{Strategy, TransferTask};
use abac_transfer::Error;

const EXIT_PARSE: u8 = 3;
const EXIT_PRECONDITION: u8 = 4;
const EXIT_NON_CONVERGENCE: u8 = 5;

#[derive(Parser)]
#[command(name = "abac-transfer", version, about = "Transfer ABAC rules between parties and score the result")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: context, ground-truth rules and a labelled log.
    Generate(GenerateArgs),
    /// Produce target rules from source policies and a local log.
    Transfer(TransferArgs),
    /// Score a policy against a labelled log.
    Evaluate(EvaluateArgs),
    /// Run every strategy on one generated scenario and report the metrics.
    Compare(CompareArgs),
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long, default_value = "deny-overrides")]
    combining: Combining,
    /// `treat-as-deny` or `exclude`.
    #[arg(long, default_value = "treat-as-deny")]
    na_policy: NaPolicy,
}

impl EvalFlags {
    fn options(&self) -> EvalOptions {
        EvalOptions { combining: self.combining, na_policy: self.na_policy }
    }
}

#[derive(Args)]
struct LogArgs {
    /// Log as `.csv` (needs `--schema`) or a JSON list of examples.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Context JSON merged with whatever the log reveals.
    #[arg(long)]
    context: Option<PathBuf>,
}

impl LogArgs {
    fn load(&self) -> Result<(Vec<DecisionExample>, DomainContext), Error> {
        let schema = self.schema.as_deref().map(SchemaMap::load).transpose()?;
        let (examples, log_ctx) = load_log(&self.log, schema.as_ref())?;
        let ctx = match &self.context {
            Some(path) => {
                let mut ctx = load_context(path)?;
                ctx.merge(&log_ctx)?;
                ctx
            }
            None => log_ctx,
        };
        Ok((examples, ctx))
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario config JSON; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    strategy: Strategy,
    /// Source policy JSON.
    #[arg(long)]
    source: PathBuf,
    #[command(flatten)]
    log: LogArgs,
    #[arg(long)]
    pipeline_config: Option<PathBuf>,
    /// Output policy JSON. Provenance goes next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    policies: PathBuf,
    #[command(flatten)]
    log: LogArgs,
    #[command(flatten)]
    eval: EvalFlags,
    /// Per-request outcomes as CSV.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment config JSON; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_ratio: Option<f64>,
    /// Share of the target log held out for scoring; 0 scores on the whole target log.
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    pipeline_config: Option<PathBuf>,
    #[arg(long)]
    combining: Option<Combining>,
    #[arg(long)]
    na_policy: Option<NaPolicy>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the metrics table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonConvergence(_) => EXIT_NON_CONVERGENCE,
        Error::Json { .. }
        | Error::Csv(_)
        | Error::BadRow { .. }
        | Error::MissingColumn(_)
        | Error::DuplicatePolicyId(_) => EXIT_PARSE,
        _ => EXIT_PRECONDITION,
    }
}

fn provenance_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("policies");
    out.with_file_name(format!("{stem}.provenance.json"))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn generate(args: &GenerateArgs) -> Result<(), Error> {
    let mut cfg: ScenarioConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scenario = generate_scenario(&cfg)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let schema = SchemaMap::for_context(&scenario.ctx);
    write_json(&dir.join("scenario.json"), &cfg)?;
    write_json(&dir.join("context.json"), &scenario.ctx)?;
    save_policies(&dir.join("ground_truth.json"), &scenario.ground_truth)?;
    write_json(&dir.join("log.json"), &scenario.examples)?;
    write_json(&dir.join("schema.json"), &schema)?;
    save_log_csv(&dir.join("log.csv"), &scenario.examples, &schema)?;
    let permits = scenario.examples.iter().filter(|e| e.decision == abac_transfer::model::Decision::Permit).count();
    if args.json {
        let summary = serde_json::json!({
            "seed": cfg.seed,
            "rules": scenario.ground_truth.len(),
            "examples": scenario.examples.len(),
            "permit": permits,
            "deny": scenario.examples.len() - permits,
        });
        println!("{summary}");
    } else {
        println!(
            "wrote {} rules and {} examples ({} permit, {} deny) to {}",
            scenario.ground_truth.len(),
            scenario.examples.len(),
            permits,
            scenario.examples.len() - permits,
            dir.display()
        );
    }
    Ok(())
}

fn pipeline(path: Option<&Path>) -> Result<LearnerPipeline, Error> {
    let cfg = match path {
        Some(p) => LearnerConfig::load(p)?,
        None => LearnerConfig::default(),
    };
    LearnerPipeline::from_config(&cfg)
}

fn transfer(args: &TransferArgs) -> Result<(), Error> {
    let source = load_policies(&args.source)?;
    let (examples, ctx) = args.log.load()?;
    let outcome = TransferTask::new(args.strategy, source, examples, ctx)
        .with_pipeline(pipeline(args.pipeline_config.as_deref())?)
        .run()?;
    save_policies(&args.out, &outcome.rules)?;
    let sidecar = provenance_path(&args.out);
    save_provenance(&sidecar, &outcome.rules)?;
    if args.json {
        let summary = serde_json::json!({
            "strategy": outcome.strategy,
            "rules": outcome.rules.len(),
            "counters": outcome.counters,
        });
        println!("{summary}");
    } else {
        let c = outcome.counters;
        println!(
            "{}: {} rules ({} unchanged source, {} reshaped source, {} adapted, {} local; {} empty residuals dropped)",
            outcome.strategy,
            outcome.rules.len(),
            c.transferred_unchanged,
            c.source_modified,
            c.adapted,
            c.local,
            c.dropped_empty
        );
        println!("policies: {}\nprovenance: {}", args.out.display(), sidecar.display());
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let mut rules = load_policies(&args.policies)?;
    let sidecar = provenance_path(&args.policies);
    if sidecar.exists() {
        let map: std::collections::BTreeMap<String, Provenance> = dataio::load_provenance(&sidecar)?;
        dataio::apply_provenance(&mut rules, &map);
    }
    let (examples, ctx) = args.log.load()?;
    if examples.is_empty() {
        return Err(Error::EmptyExamples);
    }
    let opts = args.eval.options();
    let outcomes = replay(&rules, &examples, &ctx, opts);
    let report = score(&outcomes, opts.na_policy);
    if let Some(path) = &args.outcomes {
        let mut wtr = csv::Writer::from_path(path)?;
        for o in &outcomes {
            wtr.serialize(o)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
    }
    if args.json {
        println!("{}", serde_json::to_string(&report).expect("reports serialize"));
    } else {
        print!("{}", render_table([("policy", &report)]));
        if report.degenerate {
            println!("note: a ratio had a zero denominator and is reported as 0");
        }
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<(), Error> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(ratio) = args.split_ratio {
        cfg.split_ratio = ratio;
    }
    if let Some(h) = args.holdout {
        cfg.holdout = h;
    }
    if let Some(path) = &args.pipeline_config {
        cfg.learner = LearnerConfig::load(path)?;
    }
    if let Some(c) = args.combining {
        cfg.eval.combining = c;
    }
    if let Some(n) = args.na_policy {
        cfg.eval.na_policy = n;
    }
    let report = run_comparison(&cfg)?;
    let json = report.to_json();
    if let Some(path) = &args.out {
        write_text(path, &json)?;
    }
    if let Some(path) = &args.csv {
        write_text(path, &report.to_csv())?;
    }
    if args.json {
        print!("{json}");
    } else {
        println!(
            "seed {}: {} training and {} held-out examples, {} source rules",
            report.seed, report.train_examples, report.test_examples, report.source_rules
        );
        print!("{}", report.to_table());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Transfer(a) => transfer(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
