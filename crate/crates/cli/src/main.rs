use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use finegrain_cli::api::{self, ApiError, AttributeRequest, AttributeResponse, SpanSpec};
use finegrain_cli::config::{load_config, FileConfig, Overrides, Settings};
use finegrain_cli::server::{self, AppState};
use finegrain_core::attribution::Tau;
use finegrain_core::baselines::AttnVariant;
use finegrain_core::eval::{self, SweepGrid};
use finegrain_core::fixtures::{self, SpanRecord};
use finegrain_core::interchange::{load_drops, DropTable};
use finegrain_core::methods::{Dataset, Method};

#[derive(Parser)]
#[command(name = "finegrain", version, about = "Fine-grained evidence attribution for generated answers")]
struct Cli {
    /// Directory of instance directories.
    #[arg(long, global = true, env = "FINEGRAIN_DATA")]
    data: Option<PathBuf>,
    /// TOML file with default hyperparameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attribute one response span.
    Attribute(AttributeArgs),
    /// Accuracy and log-probability drop of one method over a span list.
    Eval(EvalArgs),
    /// Evaluate one method over a hyperparameter grid.
    Sweep(SweepArgs),
    /// Mean cold and warm time per span.
    Latency(LatencyArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Fixture utilities.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Write the hand-authored fixture and seeded synthetic instances.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct Tuning {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_tau)]
    tau: Option<Tau>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<AttnVariant>,
    #[arg(long)]
    layer: Option<usize>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            tau: self.tau,
            theta: self.theta,
            window: self.window,
            variant: self.variant,
            layer: self.layer,
        }
    }
}

#[derive(Args)]
struct AttributeArgs {
    /// JSON request file; `-` reads stdin.
    #[arg(long, conflicts_with_all = ["instance", "tokens", "chars", "method"])]
    request: Option<PathBuf>,
    #[arg(long)]
    instance: Option<String>,
    /// Response token range, half-open.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    tokens: Option<Vec<usize>>,
    /// Character range of the response text, half-open.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    chars: Option<Vec<usize>>,
    #[arg(long)]
    method: Option<String>,
    #[command(flatten)]
    tuning: Tuning,
    /// Print the JSON response.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SpanInputs {
    #[arg(long)]
    method: String,
    /// Span list; defaults to `spans.json` under the data directory.
    #[arg(long)]
    spans: Option<PathBuf>,
    /// Drop table; defaults to `drops.json` under the data directory when present.
    #[arg(long)]
    drops: Option<PathBuf>,
    /// Report CSV path. `sweep` prints to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: SpanInputs,
    #[command(flatten)]
    tuning: Tuning,
    /// Write sentence-level citations as JSON lines.
    #[arg(long)]
    citations: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: SpanInputs,
    #[arg(long = "k", value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long = "tau", value_delimiter = ',', value_parser = parse_tau)]
    taus: Vec<Tau>,
    #[arg(long = "layer", value_delimiter = ',')]
    layers: Vec<usize>,
    #[arg(long = "window", value_delimiter = ',')]
    windows: Vec<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<AttnVariant>,
}

#[derive(Args)]
struct LatencyArgs {
    #[arg(long, value_delimiter = ',', default_value = "attn-union,attn-union-dep")]
    methods: Vec<String>,
    #[arg(long)]
    spans: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address; the config file's `addr` or 127.0.0.1:8080 otherwise.
    #[arg(long)]
    addr: Option<SocketAddr>,
    #[command(flatten)]
    tuning: Tuning,
}

fn parse_tau(s: &str) -> Result<Tau, String> {
    s.parse().map_err(|e: finegrain_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<AttnVariant, String> {
    match s {
        "full" => Ok(AttnVariant::Full),
        "local-sentence" => Ok(AttnVariant::LocalSentence),
        other => Err(format!("unknown variant `{other}`; expected full or local-sentence")),
    }
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>()
        .map_err(|e| ApiError::invalid("method", e.to_string()).into())
}

struct Ctx {
    file: Option<FileConfig>,
    data: Option<PathBuf>,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let file = cli.config.as_deref().map(load_config).transpose()?;
        let data = cli.data.clone().or_else(|| file.as_ref().and_then(|f| f.data.clone()));
        Ok(Ctx { file, data })
    }

    fn settings(&self, tuning: &Overrides) -> Result<Settings> {
        let s = Settings::resolve(self.file.as_ref(), tuning);
        if let Some((field, message)) = s.check() {
            return Err(ApiError::invalid(field, message).into());
        }
        Ok(s)
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .context("no data directory; pass --data, set FINEGRAIN_DATA or set `data` in the config file")
    }

    fn dataset(&self) -> Result<Dataset> {
        let dir = self.data_dir()?;
        Dataset::load(dir).with_context(|| format!("loading instances from {}", dir.display()))
    }

    fn records(&self, path: Option<&Path>) -> Result<Vec<SpanRecord>> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => self.data_dir()?.join("spans.json"),
        };
        Ok(fixtures::load_records(&path)?)
    }

    fn drops(&self, path: Option<&Path>) -> Result<Option<DropTable>> {
        match path {
            Some(p) => Ok(Some(load_drops(p)?)),
            None => {
                let p = self.data_dir()?.join("drops.json");
                Ok(if p.is_file() { Some(load_drops(&p)?) } else { None })
            }
        }
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_request(path: &Path) -> Result<AttributeRequest> {
    let text = if path.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    };
    serde_json::from_str(&text).map_err(|e| ApiError::invalid("request", e.to_string()).into())
}

fn pair(v: Option<&Vec<usize>>) -> Option<[usize; 2]> {
    v.map(|v| [v[0], v[1]])
}

fn print_human(resp: &AttributeResponse) {
    println!(
        "{} {} span [{}, {})",
        resp.instance_id, resp.method, resp.span[0], resp.span[1]
    );
    if let Some(w) = &resp.window {
        println!("window start {} width {} score {:.6}", w.start, w.width, w.score);
    }
    for e in &resp.evidence {
        let p = e.passage.map_or_else(|| "-".to_string(), |p| p.to_string());
        println!("token {:>5}  passage {p:>3}  score {:.6}", e.token, e.score);
    }
    for (p, s) in resp.passage_scores.iter().enumerate() {
        println!("passage {p}: {s:.6}");
    }
    if let Some(aug) = &resp.augmentation_tokens {
        println!("augmented response tokens: {aug:?}");
    }
    match resp.predicted_passage {
        Some(p) => println!("predicted passage: {p}"),
        None => println!("predicted passage: none"),
    }
    println!("citations: {:?}", resp.citations);
}

fn cmd_attribute(ctx: &Ctx, args: &AttributeArgs) -> Result<()> {
    let req = match &args.request {
        Some(path) => read_request(path)?,
        None => AttributeRequest {
            instance_id: args.instance.clone(),
            span: SpanSpec {
                tokens: pair(args.tokens.as_ref()),
                chars: pair(args.chars.as_ref()),
            },
            method: args
                .method
                .clone()
                .ok_or_else(|| ApiError::invalid("method", "--method is required"))?,
            overrides: Overrides::default(),
        },
    };
    let id = req
        .instance_id
        .clone()
        .ok_or_else(|| ApiError::invalid("instance_id", "an instance is required"))?;
    parse_method(&req.method)?;
    // flags sit above the config file; the request's own overrides above both
    let base = ctx.settings(&args.tuning.overrides())?;
    let dataset = ctx.dataset()?;
    let resp = api::attribute(&dataset, &id, &req, &base)?;
    if args.json {
        println!("{}", api::render(&resp));
    } else {
        print_human(&resp);
    }
    Ok(())
}

fn cmd_eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let method = parse_method(&args.inputs.method)?;
    let settings = ctx.settings(&args.tuning.overrides())?;
    let params = settings.params();
    let dataset = ctx.dataset()?;
    let records = ctx.records(args.inputs.spans.as_deref())?;
    let drops = ctx.drops(args.inputs.drops.as_deref())?;
    let evaluated = eval::evaluate(&dataset, &records, method, &params, drops.as_ref())?;
    let mut rows = vec![eval::ReportRow::from_records(method, &params, &evaluated)];
    if let Some(d) = &drops {
        rows.extend(eval::baseline_rows(&records, d)?);
    }
    match rows[0].accuracy {
        Some(a) => println!("accuracy {a:.1}"),
        None => println!("accuracy n/a"),
    }
    if let Some(d) = rows[0].mean_drop {
        println!("mean_drop {d:.4}");
    }
    if let Some(path) = &args.citations {
        let lines = eval::citations(&dataset, method, &params)?;
        write_out(Some(path), &eval::citations_jsonl(&lines))?;
    }
    if let Some(p) = &args.inputs.out {
        write_out(Some(p), &eval::report_csv(&rows))?;
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let method = parse_method(&args.inputs.method)?;
    let settings = ctx.settings(&Overrides {
        theta: args.theta,
        variant: args.variant,
        ..Overrides::default()
    })?;
    let base = settings.params();
    let mut grid = SweepGrid::single(&base);
    if !args.ks.is_empty() {
        grid.k = args.ks.clone();
    }
    if !args.taus.is_empty() {
        grid.tau = args.taus.clone();
    }
    if !args.layers.is_empty() {
        grid.layer = args.layers.iter().map(|&l| Some(l)).collect();
    }
    if !args.windows.is_empty() {
        grid.window = args.windows.clone();
    }
    for cell in grid.cells(&base) {
        let s = Settings {
            k: cell.engine.k,
            tau: cell.engine.tau,
            window: cell.window,
            ..settings
        };
        if let Some((field, message)) = s.check() {
            return Err(ApiError::invalid(field, message).into());
        }
    }
    let dataset = ctx.dataset()?;
    let records = ctx.records(args.inputs.spans.as_deref())?;
    let drops = ctx.drops(args.inputs.drops.as_deref())?;
    let rows = eval::sweep(&dataset, &records, method, &base, &grid, drops.as_ref())?;
    write_out(args.inputs.out.as_deref(), &eval::report_csv(&rows))
}

fn cmd_latency(ctx: &Ctx, args: &LatencyArgs) -> Result<()> {
    let methods = args.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    let settings = ctx.settings(&args.tuning.overrides())?;
    let dataset = ctx.dataset()?;
    let records = ctx.records(args.spans.as_deref())?;
    let rows = eval::latency_report(&dataset, &records, &methods, &settings.params())?;
    write_out(args.out.as_deref(), &eval::latency_csv(&rows))
}

fn cmd_serve(ctx: &Ctx, args: &ServeArgs) -> Result<()> {
    let settings = ctx.settings(&args.tuning.overrides())?;
    let addr = match (args.addr, ctx.file.as_ref().and_then(|f| f.addr.as_deref())) {
        (Some(a), _) => a,
        (None, Some(a)) => a.parse().with_context(|| format!("config addr `{a}`"))?,
        (None, None) => SocketAddr::from(([127, 0, 0, 1], 8080)),
    };
    let dataset = Arc::new(ctx.dataset()?);
    if dataset.is_empty() {
        bail!("no instances under {}", ctx.data_dir()?.display());
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(addr, AppState { dataset, settings }))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(&cli)?;
    match &cli.command {
        Command::Attribute(a) => cmd_attribute(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::Latency(a) => cmd_latency(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Fixtures {
            command: FixturesCommand::Generate { out, count, seed },
        } => {
            fixtures::generate_suite(out, *count, *seed)?;
            eprintln!("wrote fig1 and {count} synthetic instances to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<ApiError>()
                .is_some_and(|a| matches!(a.status(), 404 | 422));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
