use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use qwyc::cascade::CascadePolicy;
use qwyc::ensemble::{load_score_matrix, save_meta, save_score_matrix, CostVector, ScoreFile, StoppingMode};
use qwyc::error::Error;
use qwyc::fan::DEFAULT_LAMBDA;
use qwyc::gbt::{early_exit_all, score_matrix_from_trees, timed_cascade_inference, train_gbt, GbtParams, TreeEnsemble};
use qwyc::harness::{
    build_policy, evaluate_on, evaluate_with_policy_beta, histogram_csv, metrics_json, split_csv_text, sweep,
    sweep_csv, timing_table, Knob, Method, OrderSpec, PolicySpec, TimingRow,
};
use qwyc::oracle::{brute_force_optimal, DEFAULT_MAX_T};
use qwyc::orderings::MseTarget;
use qwyc::policy::Policy;
use qwyc::synth::adult_like;
use qwyc::tabular::{load_tabular, save_tabular};

#[derive(Parser)]
#[command(name = "qwyc", version, about = "Early-stopping cascades for additive ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded 80/20 shuffle split of a CSV file.
    Split(SplitArgs),
    /// Write a synthetic census-style table.
    Synth(SynthArgs),
    /// Train a gradient-boosted tree ensemble.
    TrainGbt(TrainArgs),
    /// Turn a tree model and a table into a score matrix.
    Score(ScoreArgs),
    /// Fit an early-stopping policy on a score matrix.
    Optimize(OptimizeArgs),
    /// Evaluate a policy on a score matrix.
    Evaluate(EvaluateArgs),
    /// Fit one policy per knob value and report train/test metrics.
    Sweep(SweepArgs),
    /// Time early-exit tree inference for one or more policies.
    Time(TimeArgs),
    /// Exhaustive search over orders for small ensembles.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sidecar with β and unit costs; defaults to `<out>.meta.json`.
    #[arg(long)]
    meta_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    QwycStar,
    FixedOrderQwyc,
    FixedOrderFan,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Training,
    Random,
    IndividualMse,
    GreedyMse,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoSided,
    Filter,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Labels,
    FullScore,
}

#[derive(Clone, Copy, ValueEnum)]
enum KnobArg {
    Alpha,
    Gamma,
    Lambda,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "qwyc-star")]
    method: MethodArg,
    /// Model order for the fixed-order methods.
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Target for the MSE orders; labels when present, else full scores.
    #[arg(long, value_enum)]
    mse_target: Option<TargetArg>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "two-sided")]
    mode: ModeArg,
}

impl PolicyArgs {
    fn spec(&self) -> Result<PolicySpec> {
        let method = match self.method {
            MethodArg::QwycStar => Method::QwycStar,
            MethodArg::FixedOrderQwyc => Method::FixedOrderQwyc,
            MethodArg::FixedOrderFan => Method::FixedOrderFan,
        };
        if method == Method::QwycStar && self.order.is_some() {
            bail!(Error::Validation("--order applies only to the fixed-order methods".into()));
        }
        let target = self.mse_target.map(|t| match t {
            TargetArg::Labels => MseTarget::Labels,
            TargetArg::FullScore => MseTarget::FullScore,
        });
        let order = match self.order.unwrap_or(OrderArg::Training) {
            OrderArg::Training => OrderSpec::Training,
            OrderArg::Random => OrderSpec::Random { seed: self.seed },
            OrderArg::IndividualMse => OrderSpec::IndividualMse(target),
            OrderArg::GreedyMse => OrderSpec::GreedyMse(target),
        };
        Ok(PolicySpec {
            method,
            order,
            alpha: self.alpha,
            gamma: self.gamma,
            lambda: self.lambda,
            mode: match self.mode {
                ModeArg::TwoSided => StoppingMode::TwoSided,
                ModeArg::Filter => StoppingMode::FilterNegative,
            },
        })
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Training score matrix.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Policy JSON destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Metrics JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop-stage histogram CSV destination.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Training score matrix.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Test score matrix.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    test_meta: Option<PathBuf>,
    #[arg(long, value_enum)]
    knob: KnobArg,
    /// Comma-separated knob values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Curve CSV destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TimeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test table.
    #[arg(long)]
    input: PathBuf,
    /// Policy files to time; repeat for several. The full ensemble is always
    /// timed first as the baseline.
    #[arg(long)]
    policy: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// Table destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_T)]
    max_t: usize,
    /// Report JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load(path: &Path, meta: Option<&Path>) -> Result<ScoreFile> {
    load_score_matrix(path, meta).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(a) => {
            let text = fs::read_to_string(&a.input).map_err(|e| Error::Io { path: a.input.clone(), source: e })?;
            let (train, test) = split_csv_text(&text, a.train_frac, a.seed)?;
            write(&a.train_out, &train)?;
            write(&a.test_out, &test)?;
        }
        Command::Synth(a) => {
            let data = adult_like(a.rows, a.seed)?;
            save_tabular(&data, &a.out)?;
        }
        Command::TrainGbt(a) => {
            let data = load_tabular(&a.input)?;
            let params = GbtParams {
                n_trees: a.trees,
                max_depth: a.depth,
                learning_rate: a.learning_rate,
                subsample: a.subsample,
                seed: a.seed,
            };
            let model = train_gbt(&data, &params)?;
            model.save(&a.out)?;
        }
        Command::Score(a) => {
            let model = TreeEnsemble::load(&a.model)?;
            let data = load_tabular(&a.input)?;
            let sm = score_matrix_from_trees(&model, &data)?;
            save_score_matrix(&sm, &a.out)?;
            let meta = a.meta_out.unwrap_or_else(|| a.out.with_extension("meta.json"));
            save_meta(&meta, model.matrix_beta(), &CostVector::uniform(sm.n_models()))?;
        }
        Command::Optimize(a) => {
            let train = load(&a.input, a.meta.as_deref())?;
            let policy = build_policy(&train, &a.policy.spec()?)?;
            policy.save(&a.out)?;
            print!("{}", metrics_json(&evaluate_on(&policy, &train)?));
        }
        Command::Evaluate(a) => {
            let policy = Policy::load(&a.policy)?;
            let data = load(&a.input, a.meta.as_deref())?;
            let metrics = match a.meta {
                Some(_) => evaluate_on(&policy, &data)?,
                None => evaluate_with_policy_beta(&policy, &data)?,
            };
            emit(a.out.as_deref(), &metrics_json(&metrics))?;
            if let Some(h) = &a.histogram {
                write(h, &histogram_csv(&metrics))?;
            }
        }
        Command::Sweep(a) => {
            let train = load(&a.input, a.meta.as_deref())?;
            let test = load(&a.test, a.test_meta.as_deref())?;
            let knob = match a.knob {
                KnobArg::Alpha => Knob::Alpha,
                KnobArg::Gamma => Knob::Gamma,
                KnobArg::Lambda => Knob::Lambda,
            };
            let rows = sweep(&train, &test, &a.policy.spec()?, knob, &a.values)?;
            write(&a.out, &sweep_csv(knob, &rows))?;
        }
        Command::Time(a) => {
            let model = TreeEnsemble::load(&a.model)?;
            let data = load_tabular(&a.input)?;
            let full = CascadePolicy::no_early_stop((0..model.n_trees()).collect(), model.matrix_beta())?;
            let reference = early_exit_all(&model, &full, &data)?;
            let mut rules: Vec<(String, Policy)> = vec![("Full ensemble".into(), full.into())];
            for p in &a.policy {
                let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
                rules.push((name, Policy::load(p)?));
            }
            let mut rows = Vec::new();
            for (name, rule) in &rules {
                let outcomes = early_exit_all(&model, rule, &data)?;
                let diffs = outcomes.iter().zip(&reference).filter(|(o, r)| o.decision != r.decision).count();
                let timing = timed_cascade_inference(&model, rule, &data, a.runs)?;
                rows.push(TimingRow {
                    name: name.clone(),
                    pct_diff: diffs as f64 / data.n_rows() as f64,
                    mean_models: timing.mean_models,
                    mean_us: timing.mean_us,
                    std_us: timing.std_us,
                });
            }
            emit(a.out.as_deref(), &timing_table(&rows))?;
        }
        Command::Oracle(a) => {
            let data = load(&a.input, a.meta.as_deref())?;
            let config = data.config(a.alpha, StoppingMode::TwoSided)?;
            let res = brute_force_optimal(&data.scores, &data.costs, &config, a.max_t)?;
            let report = json!({
                "best_order": res.best_order,
                "best_cost": res.best_cost,
                "search_space_size": res.search_space_size,
                "optimal_orders": res.optimal_orders,
                "policy": Policy::from(res.policy),
            });
            emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
