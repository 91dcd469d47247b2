use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use knoll::eval::{evaluate_detailed, make_test_sets, write_errors, TestSet, REPORT_COUNTS, TEST_SET_SIZE};
use knoll::geom::{validate_scenario, Layout, ObjectSpec, Placed, Pose2D, ScenarioRecord, Workspace};
use knoll::gmm::SamplerConfig;
use knoll::laygen::{
    apply_ordering, decode_record_at, encode_record, generate_dataset, legalize, read_dataset, write_dataset,
    AnnealConfig, GenConfig, Legalized, OrderingRule, PackConfig,
};
use knoll::net::{load_model, save_model, ModelConfig, ModelKind};
use knoll::plan::{plan_actions, plan_to_text, PlanConfig};
use knoll::train::{train_phase, CurriculumSpec, TrainConfig};
use knoll::{Error, Model32};

mod scene;
mod svg;

#[derive(Parser)]
#[command(name = "knoll", version, about = "Generate, learn and execute tidy tabletop layouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of optimized layouts
    Gen(GenArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Report per-count L1 error of a model
    Eval(EvalArgs),
    /// Predict a tidy layout for a scene and plan the moves
    Knoll(KnollArgs),
    /// Draw one dataset line as SVG
    Render(RenderArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    n_min: usize,
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = knoll::laygen::DEFAULT_GAP)]
    gap: f64,
    /// Annealing iterations per scenario
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Curriculum {
    Direct,
    Pretrain,
    Finetune,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// transformer, lstm or mlp
    #[arg(long, default_value = "transformer")]
    kind: String,
    /// Start from this model instead of a fresh one
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "direct")]
    curriculum: Curriculum,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without validation improvement before stopping, defaults to the whole run
    #[arg(long)]
    patience: Option<usize>,
    /// Per-epoch CSV log, defaults to the model path with a `.csv` extension
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test records; without it fresh test sets are generated per object count
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = TEST_SET_SIZE)]
    per_n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report as CSV here
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write per-scenario errors here
    #[arg(long)]
    errors: Option<PathBuf>,
}

#[derive(Args)]
struct KnollArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// as-given, area-desc, area-asc or aspect-desc
    #[arg(long, default_value = "as-given")]
    order: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Dataset file whose line is drawn
    #[arg(long)]
    layout: PathBuf,
    /// 1-based line number
    #[arg(long, default_value_t = 1)]
    line: usize,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; rendering is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Bad input from the user, reported with exit status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Library errors caused by the input rather than by the machine.
fn is_validation(e: &Error) -> bool {
    !matches!(e, Error::Io(_) | Error::NonFiniteGradient(_))
}

fn exit_status(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(k) = cause.downcast_ref::<Error>() {
            return if is_validation(k) { 2 } else { 1 };
        }
    }
    1
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("KNOLL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("KNOLL_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}

fn read_records(path: &Path) -> anyhow::Result<Vec<ScenarioRecord<f64>>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Model32> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_model(&mut BufReader::new(f)).with_context(|| format!("loading model {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let cfg = GenConfig {
        n_range: (a.n_min, a.n_max),
        anneal: AnnealConfig {
            iterations: a.iters,
            ..AnnealConfig::default()
        },
        pack: PackConfig {
            gap: a.gap,
            ..PackConfig::default()
        },
        seed: a.seed,
    };
    let data = generate_dataset(a.count, &cfg)?;
    let mut w = create(&a.out)?;
    write_dataset(&data, &mut w)?;
    w.flush()?;
    eprintln!("wrote {} scenarios to {}", data.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let data = read_records(&a.data)?;
    let mut model = match &a.init {
        Some(p) => load(p)?,
        None => {
            let kind: ModelKind = a.kind.parse().map_err(|e: Error| invalid(e.to_string()))?;
            Model32::new(ModelConfig::for_kind(kind), a.seed)?
        }
    };
    let cur = match a.curriculum {
        Curriculum::Direct => CurriculumSpec::direct(),
        Curriculum::Pretrain => CurriculumSpec::pretrain(),
        Curriculum::Finetune => CurriculumSpec::finetune(),
    };
    let base = TrainConfig::direct();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_epochs: a.epochs.unwrap_or(base.max_epochs),
        early_stop_patience: a.patience.or(a.epochs).unwrap_or(base.early_stop_patience),
        seed: a.seed,
        ..base
    };
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(invalid("batch size and epochs must be positive"));
    }
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let mut log = create(&log_path)?;
    eprintln!("training {} with {} parameters on {} records", model.kind(), model.count_params(), data.len());
    let outcome = train_phase(&mut model, &data, &cfg, &cur, Some(&mut log))?;
    log.flush()?;
    let mut w = create(&a.out)?;
    save_model(&model, &mut w)?;
    w.flush()?;
    eprintln!(
        "best epoch {} with validation NLL {:.4}; model in {}, log in {}",
        outcome.best_epoch,
        outcome.best_val_nll,
        a.out.display(),
        log_path.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load(&a.model)?;
    let tests = match &a.data {
        Some(p) => {
            let records = read_records(p)?;
            let mut by_n: Vec<TestSet> = Vec::new();
            for r in records {
                match by_n.iter_mut().find(|t| t.n == r.len()) {
                    Some(t) => t.records.push(r),
                    None => by_n.push(TestSet {
                        n: r.len(),
                        records: vec![r],
                    }),
                }
            }
            by_n.sort_by_key(|t| t.n);
            by_n
        }
        None => {
            if a.per_n == 0 {
                return Err(invalid("--per-n must be positive"));
            }
            make_test_sets(&REPORT_COUNTS, a.per_n, &GenConfig::default(), a.seed)?
        }
    };
    let (report, errors) = evaluate_detailed(&model, &tests)?;
    print!("{}", report.table());
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        w.write_all(report.csv().as_bytes())?;
        w.flush()?;
    }
    if let Some(p) = &a.errors {
        let mut w = create(p)?;
        write_errors(&errors, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn knoll_scene(a: KnollArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let scene = scene::parse_scene(&text).with_context(|| format!("parsing {}", a.scene.display()))?;
    let form = match scene.mode {
        scene::SceneMode::Pose => "pose",
        scene::SceneMode::Keypoints => "keypoint",
    };
    eprintln!("read {} objects from {form} lines", scene.layout.len());
    let rule: OrderingRule = a.order.parse().map_err(|e: Error| invalid(e.to_string()))?;
    if !(a.temperature >= 0.0 && a.temperature.is_finite()) {
        return Err(invalid("--temperature must be finite and >= 0"));
    }
    let model = load(&a.model)?;
    let ws = Workspace::default();
    let objects: Vec<ObjectSpec<f64>> = scene.layout.specs();
    let (ordered, perm) = apply_ordering(&objects, rule);
    let sampler = SamplerConfig {
        temperature: a.temperature,
        seed: a.seed,
    };
    let predicted = model.predict_layout(&ordered, &sampler)?;
    let (slots, how) = legalize(&ordered, &predicted, &PackConfig::default(), &ws)?;
    match how {
        Legalized::AsPredicted => {}
        Legalized::Shifted => eprintln!("prediction shifted back inside the workspace"),
        Legalized::Repacked => eprintln!("prediction overlapped or left the workspace; using the best row packing"),
    }
    let mut targets = vec![[0.0; 2]; objects.len()];
    for (slot, &i) in perm.iter().enumerate() {
        targets[i] = slots[slot];
    }
    let record = ScenarioRecord::new(objects.clone(), targets.clone());
    let report = validate_scenario(&record, &ws);
    if !report.is_ok() {
        anyhow::bail!("target layout failed validation: {report}");
    }
    let plan = plan_actions(&scene.layout, &targets, &PlanConfig::default())?;
    let after = Layout::new(
        objects
            .iter()
            .zip(&targets)
            .map(|(o, t)| Placed::new(*o, Pose2D::at(t[0], t[1])))
            .collect(),
    );
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let write = |name: &str, body: &str| -> anyhow::Result<()> {
        let p = a.out_dir.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("targets.jsonl", &format!("{}\n", encode_record(&record)))?;
    write("slots.txt", &format!("{}\n", perm.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")))?;
    write("plan.txt", &plan_to_text(&plan))?;
    write("after.scene", &scene::format_scene(&after))?;
    write("before.svg", &svg::render_layout(&scene.layout, &ws, "before"))?;
    write("after.svg", &svg::render_layout(&after, &ws, &format!("after ({rule})")))?;
    println!("{} actions for {} objects; outputs in {}", plan.len(), objects.len(), a.out_dir.display());
    Ok(())
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    if a.line == 0 {
        return Err(invalid("--line is 1-based"));
    }
    let f = File::open(&a.layout).with_context(|| format!("opening {}", a.layout.display()))?;
    let text = BufReader::new(f)
        .lines()
        .nth(a.line - 1)
        .transpose()?
        .ok_or_else(|| invalid(format!("{} has no line {}", a.layout.display(), a.line)))?;
    let record = decode_record_at(&text, a.line)?;
    let title = format!("{} line {}", a.layout.display(), a.line);
    let mut w = create(&a.out)?;
    w.write_all(svg::render_layout(&record.target_layout(), &Workspace::default(), &title).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Knoll(a) => knoll_scene(a),
        Command::Render(a) => render(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
