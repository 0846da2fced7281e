use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mopmemm::artifact::ModelArtifact;
use mopmemm::config::{Decode, RunConfig, Structure, Task};
use mopmemm::corpus::{
    format_page_labels, format_sequence_corpus, parse_page_labels, read_link_corpus, read_sequence_corpus,
    SequenceCorpus,
};
use mopmemm::evaluation::{comparison_table, RepairMode, ScoreReport, TagScheme};
use mopmemm::oracle::synthetic::{generate_synthetic, GenerationMixing, SyntheticConfig};
use mopmemm::pipeline;
use mopmemm::training::ObjectiveKind;
use mopmemm::verification::{run_suite, SuiteSizes};
use mopmemm::Error;

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mopmemm", version, about = "Mixture-of-parents MEMMs: train, predict, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it as JSON (plus `<out>.log` with the optimizer trace).
    Train(TrainArgs),
    /// Label a corpus with a trained model.
    Predict(PredictArgs),
    /// Score one or more prediction files against gold labels.
    Eval(EvalArgs),
    /// Run the oracle and property checks; exits 1 if any fails.
    Verify(VerifyArgs),
    /// Write a synthetic long-range NER corpus in CoNLL format.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// CoNLL file (sequence task).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Pages file: `id TAB label TAB tokens` (linked-docs task).
    #[arg(long, value_name = "PATH", requires = "links")]
    pages: Option<PathBuf>,
    /// Hyperlinks file: `source TAB target`.
    #[arg(long, value_name = "PATH", requires = "pages")]
    links: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<ObjectiveKind>,
    #[arg(long, value_parser = parse_structure)]
    structure: Option<Structure>,
    /// Orderings used as joint training instances on link graphs.
    #[arg(long)]
    orderings: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_df: Option<usize>,
    #[arg(long)]
    skip_cap: Option<usize>,
    /// Gaussian prior variance.
    #[arg(long, value_name = "SIGMA2")]
    ridge: Option<f64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Predictions; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also write per-token (or per-page) marginal tables here.
    #[arg(long, value_name = "PATH")]
    marginals: Option<PathBuf>,
    #[arg(long, value_parser = parse_decode)]
    decode: Option<Decode>,
    /// Orderings averaged on link graphs.
    #[arg(long)]
    orderings: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Bio2,
    Iob1,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Gold CoNLL file, or pages file for linked documents.
    #[arg(long, value_name = "PATH")]
    gold: PathBuf,
    /// `name=path` of a prediction file; repeat to compare models.
    #[arg(long = "pred", value_name = "NAME=PATH", required = true, value_parser = parse_named_path)]
    predictions: Vec<(String, PathBuf)>,
    #[arg(long, value_enum, default_value = "sequence")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "bio2")]
    scheme: SchemeArg,
    /// Treat stray inside tags as outside instead of opening a new entity.
    #[arg(long)]
    strict: bool,
    /// Row the improvement column is measured against (default: the first).
    #[arg(long, value_name = "NAME")]
    baseline: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Sequence,
    LinkedDocs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MixingArg {
    Uniform,
    SkipOnly,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    sequences: usize,
    #[arg(long, default_value_t = 0.9)]
    copy_strength: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    mixing: MixingArg,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn parse_objective(s: &str) -> Result<ObjectiveKind, String> {
    s.parse::<ObjectiveKind>().map_err(|e| e.to_string())
}

fn parse_structure(s: &str) -> Result<Structure, String> {
    Structure::parse(s).map_err(|e| e.to_string())
}

fn parse_decode(s: &str) -> Result<Decode, String> {
    Decode::parse(s).map_err(|e| e.to_string())
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn kind(&self) -> &'static str {
        match self.code {
            EXIT_VERIFY => "verify",
            EXIT_USAGE => "usage",
            _ => "data",
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UnsupportedStructure(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

fn context(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::data(format!("cannot write output: {e}")))
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn read_sequences(path: &Path) -> CliResult<SequenceCorpus> {
    let corpus = read_sequence_corpus(path).map_err(context(path))?;
    for w in &corpus.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(corpus)
}

fn read_links(pages: &Path, links: &Path) -> CliResult<mopmemm::corpus::LinkCorpus> {
    let corpus = read_link_corpus(pages, links).map_err(context(pages))?;
    for w in &corpus.warnings {
        log::warn!("{}: {w}", pages.display());
    }
    Ok(corpus)
}

fn input_task(input: &InputArgs) -> CliResult<Task> {
    match (&input.data, &input.pages) {
        (Some(_), None) => Ok(Task::Sequence),
        (None, Some(_)) => Ok(Task::LinkedDocs),
        (Some(_), Some(_)) => Err(Failure::usage("give either --data or --pages/--links, not both")),
        (None, None) => Err(Failure::usage("no input: give --data, or --pages and --links")),
    }
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut config = load_config(args.config.as_deref())?;
    let task = input_task(&args.input)?;
    if args.config.is_none() {
        config.task = task;
    }
    if let Some(s) = args.structure {
        config.graph.structure = Some(s);
    }
    if let Some(k) = args.objective {
        config.training.objective.kind = k;
    }
    if let Some(n) = args.orderings {
        config.training.orderings = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(d) = args.max_df {
        config.graph.max_df = d;
    }
    if let Some(c) = args.skip_cap {
        config.graph.skip_cap = c;
    }
    if let Some(r) = args.ridge {
        config.training.objective.sigma2 = r;
    }
    if config.task != task {
        return Err(Failure::usage("the input files do not match the configured task"));
    }
    config.validate()?;
    let outcome = match task {
        Task::Sequence => {
            let path = args.input.data.as_deref().expect("sequence input");
            let corpus = read_sequences(path)?;
            let templates = config.template_config()?;
            pipeline::train_sequence(&corpus, &config, &templates).map_err(context(path))?
        }
        Task::LinkedDocs => {
            let pages = args.input.pages.as_deref().expect("pages input");
            let corpus = read_links(pages, args.input.links.as_deref().expect("links input"))?;
            pipeline::train_links(&corpus, &config).map_err(context(pages))?
        }
    };
    write_output(Some(&args.out), &outcome.artifact.to_json()?)?;
    let mut log_path = args.out.into_os_string();
    log_path.push(".log");
    write_output(Some(Path::new(&log_path)), &outcome.log_lines())?;
    for (name, r) in &outcome.reports {
        log::info!("{name}: {} after {} iterations", r.termination.as_str(), r.iterations.len());
    }
    Ok(())
}

fn predict(args: PredictArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref())?;
    let artifact = ModelArtifact::load(&args.model).map_err(context(&args.model))?;
    let task = input_task(&args.input)?;
    if task != artifact.task {
        return Err(Failure::usage("the input files do not match the model's task"));
    }
    let decode = args.decode.unwrap_or(config.prediction.decode);
    let orderings = args.orderings.unwrap_or(config.prediction.orderings);
    if orderings == 0 {
        return Err(Failure::usage("--orderings must be at least 1"));
    }
    let seed = args.seed.unwrap_or(config.seed);
    let (labels, marginals) = match task {
        Task::Sequence => {
            let path = args.input.data.as_deref().expect("sequence input");
            let corpus = read_sequences(path)?;
            let pred = pipeline::predict_sequence(&artifact, &corpus, decode).map_err(context(path))?;
            (
                format_sequence_corpus(&corpus.documents, &pred.tags)?,
                pipeline::format_sequence_marginals(&artifact.labels, &corpus, &pred.marginals),
            )
        }
        Task::LinkedDocs => {
            let pages = args.input.pages.as_deref().expect("pages input");
            let corpus = read_links(pages, args.input.links.as_deref().expect("links input"))?;
            let pred = pipeline::predict_links(&artifact, &corpus, orderings, seed, decode).map_err(context(pages))?;
            (
                format_page_labels(&corpus.page_ids, &pred.labels),
                pipeline::format_page_marginals(&artifact.labels, &corpus.page_ids, &pred.marginals),
            )
        }
    };
    write_output(args.out.as_deref(), &labels)?;
    if let Some(p) = &args.marginals {
        write_output(Some(p), &marginals)?;
    }
    Ok(())
}

fn baseline_index(names: &[String], baseline: Option<&str>) -> CliResult<usize> {
    match baseline {
        None => Ok(0),
        Some(b) => names
            .iter()
            .position(|n| n == b)
            .ok_or_else(|| Failure::usage(format!("baseline `{b}` is not one of the --pred names"))),
    }
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let names: Vec<String> = args.predictions.iter().map(|(n, _)| n.clone()).collect();
    let baseline = baseline_index(&names, args.baseline.as_deref())?;
    let mut out = String::new();
    match args.task {
        TaskArg::Sequence => {
            let scheme = match args.scheme {
                SchemeArg::Bio2 => TagScheme::Bio2,
                SchemeArg::Iob1 => TagScheme::Iob1,
            };
            let mode = if args.strict { RepairMode::Strict } else { RepairMode::Lenient };
            let gold = read_sequences(&args.gold)?;
            let mut rows: Vec<(String, ScoreReport)> = Vec::new();
            for (name, path) in &args.predictions {
                let pred = read_sequences(path)?;
                let report = pipeline::score_sequences(&gold, &pred, scheme, mode).map_err(context(path))?;
                rows.push((name.clone(), report));
            }
            out.push_str(&comparison_table(&rows, baseline));
            for (name, r) in &rows {
                let _ = write!(out, "\n{name}\n{}", r.table());
            }
            out.push('\n');
            for (name, r) in &rows {
                out.push_str(&r.key_values(&format!("{name}.")));
            }
        }
        TaskArg::LinkedDocs => {
            let gold_text = std::fs::read_to_string(&args.gold)
                .map_err(|e| Failure::data(format!("{}: {e}", args.gold.display())))?;
            let gold = parse_page_labels(&gold_text).map_err(context(&args.gold))?;
            let mut errors = Vec::new();
            for (name, path) in &args.predictions {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
                let pred = parse_page_labels(&text).map_err(context(path))?;
                errors.push((name.clone(), pipeline::score_pages(&gold, &pred).map_err(context(path))?));
            }
            let base = errors[baseline].1;
            let _ = writeln!(out, "{:<24} {:>7} {:>13}", "Model", "Error%", "%Improvement");
            for (name, e) in &errors {
                let imp = if base > 0.0 { 100.0 * (base - e) / base } else { 0.0 };
                let _ = writeln!(out, "{:<24} {:>7.1} {:>13.1}", name, 100.0 * e, imp);
            }
            out.push('\n');
            for (name, e) in &errors {
                let _ = writeln!(out, "{name}.error={e:.6}");
                let _ = writeln!(out, "{name}.pages={}", gold.len());
            }
        }
    }
    write_output(args.out.as_deref(), &out)
}

fn verify(args: VerifyArgs) -> CliResult<()> {
    let report = run_suite(args.seed, &SuiteSizes::default());
    let text = report.to_text();
    write_output(args.out.as_deref(), &text)?;
    if args.out.is_some() {
        eprint!("{text}");
    }
    if report.passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!("{failed} verification check(s) failed"),
        })
    }
}

fn synth(args: SynthArgs) -> CliResult<()> {
    let config = SyntheticConfig {
        num_sequences: args.sequences,
        copy_strength: args.copy_strength,
        mixing: match args.mixing {
            MixingArg::Uniform => GenerationMixing::Uniform,
            MixingArg::SkipOnly => GenerationMixing::SkipOnly,
        },
        seed: args.seed,
        ..Default::default()
    };
    let data = generate_synthetic(&config)?;
    write_output(args.out.as_deref(), &data.to_conll()?)
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("MOPMEMM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("MOPMEMM_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
        Command::Synth(a) => synth(a),
    }
}

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error:")));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind(), one_line(&f.message));
            ExitCode::from(f.code)
        }
    }
}
