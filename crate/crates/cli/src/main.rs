//! `riskcast` command-line driver: scenario generation, training, prediction,
//! risk scoring and evaluation.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use riskcast::evaluation::{evaluate, evaluate_predictions, ConstantVelocity, MetricsReport};
use riskcast::intention::JointPrediction;
use riskcast::model::{Model, PredictionRecord, PREDICTION_CSV_HEADER};
use riskcast::risk::rank_trajectories;
use riskcast::scene::{dataset_seed, generate_with, Scenario};
use riskcast::training::{split_indices, train_split, TrainOutput};
use serde_json::Value;

use config::{parse_assignment, resolve, RunConfig, Split, UsageError, RUN_CONFIG_FILE, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "riskcast", version, about = "Risk-aware joint trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat JSON file of dotted configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set model.decoder.modes=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_assignment)]
    overrides: Vec<(String, Value)>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenarios.
    Gen {
        /// Template name or `all`.
        #[arg(long)]
        template: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        agents: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a directory of scenarios.
    Train {
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict joint futures for a scenario file or directory.
    Predict {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score and rank predicted modes by risk.
    Risk {
        #[arg(long)]
        scenario: Option<String>,
        /// Prediction file or directory written by `predict`.
        #[arg(long, conflicts_with = "model")]
        predictions: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute ADE/FDE reports, including the constant-velocity baseline.
    Eval {
        #[arg(long)]
        data: Option<String>,
        #[arg(long, conflicts_with = "model")]
        predictions: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Dataset slice to evaluate: all, train, val or test.
        #[arg(long)]
        split: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn push<T: Into<Value>>(out: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.into()));
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen { common, .. }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Risk { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    /// Dedicated flags as configuration overrides, applied after `--set`.
    fn flag_overrides(&self) -> Vec<(String, Value)> {
        let mut o = Vec::new();
        match self {
            Command::Gen { template, count, agents, .. } => {
                push(&mut o, "gen.template", template.clone());
                push(&mut o, "gen.count", *count);
                push(&mut o, "gen.agents", *agents);
            }
            Command::Train { data, epochs, lr, batch_size, .. } => {
                push(&mut o, "input.data", data.clone());
                push(&mut o, "train.epochs", *epochs);
                push(&mut o, "train.lr", *lr);
                push(&mut o, "train.batch_size", *batch_size);
            }
            Command::Predict { model, scenario, .. } => {
                push(&mut o, "input.model", model.clone());
                push(&mut o, "input.scenario", scenario.clone());
            }
            Command::Risk { scenario, predictions, model, .. } => {
                push(&mut o, "input.scenario", scenario.clone());
                push(&mut o, "input.predictions", predictions.clone());
                push(&mut o, "input.model", model.clone());
            }
            Command::Eval { data, predictions, model, split, .. } => {
                push(&mut o, "input.data", data.clone());
                push(&mut o, "input.predictions", predictions.clone());
                push(&mut o, "input.model", model.clone());
                push(&mut o, "input.split", split.clone());
            }
        }
        o
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let mut overrides = common.overrides.clone();
    push(&mut overrides, "seed", common.seed);
    overrides.extend(cli.command.flag_overrides());
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve(common.config.as_deref(), env_seed.as_deref(), &overrides)?;
    let out = common.out.clone();
    match cli.command {
        Command::Gen { .. } => gen(&cfg, &out),
        Command::Train { .. } => train(&cfg, &out),
        Command::Predict { .. } => predict(&cfg, &out),
        Command::Risk { .. } => risk(&cfg, &out),
        Command::Eval { .. } => eval(&cfg, &out),
    }
}

fn required<'a>(v: &'a Option<String>, flag: &str) -> Result<&'a Path> {
    v.as_deref().map(Path::new).ok_or_else(|| UsageError(format!("missing required input --{flag}")).into())
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_file(&out.join(RUN_CONFIG_FILE), cfg.to_json_pretty().as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let mut scn = Scenario::load(path).with_context(|| format!("cannot load scenario {}", path.display()))?;
    if scn.id.is_empty() {
        scn.id = stem(path);
    }
    Ok(scn)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// JSON files of a directory in name order, or the path itself if it is a file.
fn json_files(path: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).with_context(|| format!("cannot read {}", path.display()))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("cannot read directory {}", path.display()))? {
        let p = entry?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(suffix) && name != RUN_CONFIG_FILE && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        anyhow::bail!("no {suffix} files in {}", path.display());
    }
    Ok(files)
}

fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    json_files(path, ".json")?.iter().map(|p| load_scenario(p)).collect()
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn select(data: Vec<Scenario>, split: Split) -> Vec<Scenario> {
    let (tr, va, te) = split_indices(data.len());
    let range = match split {
        Split::All => 0..data.len(),
        Split::Train => tr,
        Split::Val => va,
        Split::Test => te,
    };
    data.into_iter().skip(range.start).take(range.len()).collect()
}

fn gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let templates = cfg.gen.templates()?;
    prepare_out(cfg, out)?;
    let generator = cfg.gen.generator();
    for i in 0..cfg.gen.count {
        let template = templates[i % templates.len()];
        let scn = generate_with(&generator, template, cfg.gen.agents, dataset_seed(cfg.seed, i));
        write_file(&out.join(format!("scenario_{i:05}.json")), scn.to_json_pretty()?.as_bytes())?;
    }
    println!("wrote {} scenarios to {}", cfg.gen.count, out.display());
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_scenarios(required(&cfg.input.data, "data")?)?;
    let (tr, va, _) = split_indices(data.len());
    prepare_out(cfg, out)?;
    let output = TrainOutput { dir: out.to_path_buf() };
    let (model, report) = train_split(&data[tr], &data[va], cfg.model, &cfg.train, &cfg.risk, Some(&output))?;
    println!(
        "trained {} parameters for {} epochs; checkpoint {}",
        model.num_parameters(),
        report.epochs.len(),
        output.final_checkpoint_path().display()
    );
    if let (Some(ade), Some(fde)) = (report.val_ade, report.val_fde) {
        println!("validation ade {ade:.3} m, fde {fde:.3} m");
    }
    Ok(())
}

fn predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(required(&cfg.input.model, "model")?)?;
    let scenarios = load_scenarios(required(&cfg.input.scenario, "scenario")?)?;
    prepare_out(cfg, out)?;
    let csv_path = out.join("predictions.csv");
    let mut csv = csv::Writer::from_path(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    csv.write_record(PREDICTION_CSV_HEADER)?;
    for scn in &scenarios {
        let rec = PredictionRecord::new(scn, &model.predict(scn).with_context(|| format!("scenario {}", scn.id))?)?;
        write_file(&out.join(format!("{}.prediction.json", scn.id)), rec.to_json_pretty()?.as_bytes())?;
        rec.write_csv(&mut csv)?;
    }
    csv.flush()?;
    println!("wrote predictions for {} scenarios to {}", scenarios.len(), out.display());
    Ok(())
}

/// Prediction records keyed by scenario id.
fn load_predictions(path: &Path) -> Result<BTreeMap<String, PredictionRecord>> {
    let mut map = BTreeMap::new();
    for p in json_files(path, ".prediction.json")? {
        let text = fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
        let rec =
            PredictionRecord::from_json(&text).with_context(|| format!("cannot load predictions {}", p.display()))?;
        map.insert(rec.scenario_id.clone(), rec);
    }
    Ok(map)
}

enum Source {
    Model(Box<Model>),
    Records(BTreeMap<String, PredictionRecord>),
}

impl Source {
    fn from_config(cfg: &RunConfig) -> Result<Self> {
        match (&cfg.input.predictions, &cfg.input.model) {
            (Some(p), None) => Ok(Source::Records(load_predictions(Path::new(p))?)),
            (None, Some(m)) => Ok(Source::Model(Box::new(load_model(Path::new(m))?))),
            _ => Err(UsageError("exactly one of --predictions or --model is required".into()).into()),
        }
    }

    fn joint(&self, scn: &Scenario) -> Result<JointPrediction> {
        match self {
            Source::Model(m) => Ok(m.predict(scn).with_context(|| format!("scenario {}", scn.id))?.prediction),
            Source::Records(r) => {
                let rec = r.get(&scn.id).ok_or_else(|| anyhow::anyhow!("no prediction for scenario {}", scn.id))?;
                rec.joint_prediction(scn)
                    .with_context(|| format!("prediction for scenario {} does not match it", scn.id))
            }
        }
    }
}

fn risk(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scenarios = load_scenarios(required(&cfg.input.scenario, "scenario")?)?;
    let source = Source::from_config(cfg)?;
    prepare_out(cfg, out)?;
    for scn in &scenarios {
        let reports = rank_trajectories(scn, &source.joint(scn)?, &cfg.risk)?;
        write_file(&out.join(format!("{}.risk.json", scn.id)), serde_json::to_string_pretty(&reports)?.as_bytes())?;
    }
    println!("wrote risk reports for {} scenarios to {}", scenarios.len(), out.display());
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = select(load_scenarios(required(&cfg.input.data, "data")?)?, cfg.input.split);
    if data.is_empty() {
        anyhow::bail!("the selected split of {} is empty", cfg.input.data.as_deref().unwrap_or_default());
    }
    let source = Source::from_config(cfg)?;
    let report = match &source {
        Source::Model(m) => evaluate(m.as_ref(), &data)?,
        Source::Records(_) => {
            let preds = data.iter().map(|s| source.joint(s)).collect::<Result<Vec<_>>>()?;
            let items: Vec<_> = data.iter().zip(&preds).collect();
            evaluate_predictions("model", &items)?
        }
    };
    let baseline = evaluate(&ConstantVelocity { horizon: cfg.model.horizon }, &data)?;
    let report: MetricsReport = report.merge(baseline);
    prepare_out(cfg, out)?;
    write_file(&out.join("metrics.json"), report.to_json_pretty()?.as_bytes())?;
    write_file(&out.join("metrics.csv"), report.to_csv()?.as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "evaluated {} scenarios; report in {}", data.len(), out.display())?;
    Ok(())
}
