use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moldiff_core::data::build_vocab;
use moldiff_core::eval::{ablate_steps, evaluate, predict_record, write_ablation_csv, write_metrics_csv};
use moldiff_core::train::run_stage_with;
use moldiff_core::{Config, Dataset, InstructionRecord, MolDiff, Split, Stage, Task};

#[derive(Parser)]
#[command(name = "moldiff", version, about = "Graph-conditioned masked diffusion language model for molecules")]
struct Cli {
    /// TOML configuration; unspecified keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when --config is absent.
    #[arg(long, global = true, value_enum, default_value = "toy")]
    preset: Preset,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also write per-step denoising traces.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Toy,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic instruction dataset.
    GenData,
    /// Stage 1a: encoder pretraining.
    PretrainEncoder(TrainArgs),
    /// Stage 1b: text-only supervised fine-tuning of the backbone.
    Sft(TrainArgs),
    /// Stage 2: projector alignment.
    Align(TrainArgs),
    /// Stage 3: joint fine-tuning with the preference term.
    Molpo(TrainArgs),
    /// Write model outputs for a slice of the dataset.
    Sample(EvalArgs),
    /// Metrics table per task.
    Eval(EvalArgs),
    /// Evaluate one molecule task under several step counts.
    AblateSteps(AblateArgs),
    /// Print the effective configuration.
    Config {
        #[arg(long)]
        dump: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint of the previous stage; a fresh model when absent.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, conflicts_with = "run")]
    checkpoint: Option<PathBuf>,
    /// Training output directory; picks `<run>/<stage>.ckpt`.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, default_value = "molpo_joint")]
    stage: String,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Tasks to run; all tasks present in the split when absent.
    #[arg(long, value_delimiter = ',')]
    task: Vec<String>,
    #[arg(long, default_value = "test")]
    split: String,
    /// At most this many records per task (0 = all).
    #[arg(long, default_value_t = 0)]
    limit: usize,
    /// Denoising steps; the configured value when absent.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "forward")]
    task: String,
    #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
    steps: Vec<usize>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 500)]
    limit: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_toml(&text)?
        }
        None => match cli.preset {
            Preset::Default => Config::default(),
            Preset::Toy => Config::toy(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL.into_iter().find(|x| x.name() == s).with_context(|| format!("unknown split `{s}`"))
}

fn parse_task(s: &str) -> Result<Task> {
    Task::from_id(s).with_context(|| format!("unknown task `{s}`"))
}

/// Model from a checkpoint. Training, preference and sampler settings of
/// an explicit --config replace the stored ones; the architecture stays.
fn load_model(path: &Path, cli: &Cli, cfg: &Config) -> Result<MolDiff> {
    let mut m = MolDiff::load(path).with_context(|| format!("loading {}", path.display()))?;
    if cli.config.is_some() {
        m.cfg.stages = cfg.stages.clone();
        m.cfg.molpo = cfg.molpo.clone();
        m.cfg.sampler = cfg.sampler.clone();
    }
    if let Some(s) = cli.seed {
        m.cfg.seed = s;
        m.cfg.sampler.seed = s;
    }
    Ok(m)
}

fn model_path(a: &ModelArgs) -> Result<PathBuf> {
    match (&a.checkpoint, &a.run) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => {
            let stage = Stage::from_id(&a.stage).with_context(|| format!("unknown stage `{}`", a.stage))?;
            Ok(dir.join(format!("{}.ckpt", stage.id())))
        }
        (None, None) => bail!("pass --checkpoint or --run"),
    }
}

fn train(cli: &Cli, cfg: Config, stage: Stage, args: &TrainArgs) -> Result<()> {
    let mut model = match &args.from {
        Some(p) => load_model(p, cli, &cfg)?,
        None => {
            let (vocab, n_text) = build_vocab()?;
            MolDiff::new(cfg, vocab, n_text)?
        }
    };
    let ds = Dataset::read_dir(&args.data)?;
    let train: Vec<InstructionRecord> = ds.split(Split::Train).cloned().collect();
    log::info!("{}: {} training records, {} parameters", stage.id(), train.len(), model.num_parameters());
    let seed = model.cfg.seed;
    let report = run_stage_with(&mut model, stage, &train, seed, |e| {
        log::info!("{} epoch {}: loss {:.5} ({} examples, {:.1}s)", e.stage, e.epoch, e.loss, e.examples, e.seconds)
    })?;
    std::fs::create_dir_all(&cli.out)?;
    let ckpt = cli.out.join(format!("{}.ckpt", stage.id()));
    model.save(&ckpt)?;
    report.write_jsonl(create(&cli.out.join(format!("{}.log.jsonl", stage.id())))?)?;
    println!("{}", ckpt.display());
    Ok(())
}

fn select(ds: &Dataset, split: Split, task: Task, limit: usize) -> Vec<&InstructionRecord> {
    let mut v = ds.task_split(task, split);
    if limit > 0 {
        v.truncate(limit);
    }
    v
}

fn tasks_of(args: &EvalArgs, ds: &Dataset, split: Split) -> Result<Vec<Task>> {
    if args.task.is_empty() {
        Ok(Task::ALL.into_iter().filter(|&t| !ds.task_split(t, split).is_empty()).collect())
    } else {
        args.task.iter().map(|t| parse_task(t)).collect()
    }
}

fn sample_cmd(cli: &Cli, cfg: &Config, args: &EvalArgs) -> Result<()> {
    let model = load_model(&model_path(&args.model)?, cli, cfg)?;
    let ds = Dataset::read_dir(&args.data)?;
    let split = parse_split(&args.split)?;
    let mut sampler = model.cfg.sampler.clone();
    if let Some(s) = args.steps {
        sampler.steps = s;
    }
    std::fs::create_dir_all(&cli.out)?;
    let mut preds = create(&cli.out.join("predictions.jsonl"))?;
    let mut trace = if cli.trace { Some(create(&cli.out.join("trace.jsonl"))?) } else { None };
    for task in tasks_of(args, &ds, split)? {
        for rec in select(&ds, split, task, args.limit) {
            let p = predict_record(&model, rec, &sampler)?;
            let line = serde_json::json!({ "id": rec.id, "task": task.id(), "prediction": p.text, "target": rec.target });
            writeln!(preds, "{line}")?;
            if let Some(w) = trace.as_mut() {
                for step in &p.trace.steps {
                    let mut v = serde_json::to_value(step)?;
                    v["record"] = rec.id.into();
                    writeln!(w, "{v}")?;
                }
            }
        }
    }
    preds.flush()?;
    if let Some(mut w) = trace {
        w.flush()?;
    }
    Ok(())
}

fn eval_cmd(cli: &Cli, cfg: &Config, args: &EvalArgs) -> Result<()> {
    let model = load_model(&model_path(&args.model)?, cli, cfg)?;
    let ds = Dataset::read_dir(&args.data)?;
    let split = parse_split(&args.split)?;
    let mut sampler = model.cfg.sampler.clone();
    if let Some(s) = args.steps {
        sampler.steps = s;
    }
    let mut rows = Vec::new();
    for task in tasks_of(args, &ds, split)? {
        let recs = select(&ds, split, task, args.limit);
        if recs.is_empty() {
            log::warn!("no `{task}` records in the {} split", split.name());
            continue;
        }
        rows.extend(evaluate(&model, &recs, task, &sampler)?);
    }
    std::fs::create_dir_all(&cli.out)?;
    write_metrics_csv(create(&cli.out.join("metrics.csv"))?, &rows)?;
    write_metrics_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn ablate_cmd(cli: &Cli, cfg: &Config, args: &AblateArgs) -> Result<()> {
    let model = load_model(&model_path(&args.model)?, cli, cfg)?;
    let ds = Dataset::read_dir(&args.data)?;
    let task = parse_task(&args.task)?;
    let recs = select(&ds, parse_split(&args.split)?, task, args.limit);
    let rows = ablate_steps(&model, &recs, task, &model.cfg.sampler, &args.steps)?;
    std::fs::create_dir_all(&cli.out)?;
    write_ablation_csv(create(&cli.out.join("ablation.csv"))?, &rows)?;
    write_ablation_csv(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::GenData => {
            let ds = moldiff_core::data::gen_dataset(cfg.seed, &cfg.data);
            ds.write_dir(&cli.out)?;
            for s in Split::ALL {
                println!("{}: {} records", s.name(), ds.split(s).count());
            }
            Ok(())
        }
        Cmd::PretrainEncoder(a) => train(&cli, cfg, Stage::PretrainEncoder, a),
        Cmd::Sft(a) => train(&cli, cfg, Stage::SftText, a),
        Cmd::Align(a) => train(&cli, cfg, Stage::Align, a),
        Cmd::Molpo(a) => train(&cli, cfg, Stage::MolpoJoint, a),
        Cmd::Sample(a) => sample_cmd(&cli, &cfg, a),
        Cmd::Eval(a) => eval_cmd(&cli, &cfg, a),
        Cmd::AblateSteps(a) => ablate_cmd(&cli, &cfg, a),
        Cmd::Config { dump } => {
            if *dump {
                print!("{}", cfg.to_toml());
            } else {
                cfg.validate()?;
                println!("configuration is valid");
            }
            Ok(())
        }
    }
}
