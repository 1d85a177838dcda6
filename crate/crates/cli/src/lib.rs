//! The `decide` command line: `extract`, `detect`, `query` and `probe`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use decide_core::detect::{detect, render_report, DetectOptions, EntryOrder, ReportFormat};
use decide_core::env::{load_snapshot, probe_local_stack, save_snapshot, ReplayRunner, SystemRunner};
use decide_core::ingest::{load_patterns, load_tags, open_posts, PostFormat};
use decide_core::kg::{candidate_versions, load_kg, relation_between, save_kg};
use decide_core::lexicon::Lexicon;
use decide_core::model::ConsolidationStrategy;
use decide_core::pipeline::{extract, ExtractConfig};
use decide_core::project::{build_required_stack, parse_requirements, scan_imports};
use decide_core::qa::{CompatibilityOracle, FixtureOracle, HttpOracle, TemplateStrategy};
use decide_core::VersionedComponent;

pub const ORACLE_URL_VAR: &str = "DECIDE_ORACLE_URL";
pub const CONFIG_VAR: &str = "DECIDE_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "decide", version, about = "Version compatibility knowledge from Q&A posts")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_VAR)]
    config: Option<PathBuf>,
    /// Component lexicon (JSON); the built-in one is used by default.
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a knowledge graph from a post dump.
    Extract(ExtractArgs),
    /// Check a project against a local stack and a knowledge graph.
    Detect(DetectArgs),
    /// Look up a knowledge graph.
    Query(QueryArgs),
    /// Record the local software and hardware stack.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    posts: PathBuf,
    #[arg(long, default_value = "xml")]
    format: String,
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Directory of `<post_id>.conllu` dependency parses.
    #[arg(long)]
    parses: Option<PathBuf>,
    /// `fixture:<path>` for a scripted oracle.
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long, env = ORACLE_URL_VAR)]
    oracle_url: Option<String>,
    /// Seconds to wait for each oracle request.
    #[arg(long)]
    oracle_timeout: Option<u64>,
    #[arg(long)]
    templates: Option<String>,
    #[arg(long)]
    max_loss: Option<f64>,
    #[arg(long)]
    consolidate: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    project_dir: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// Defaults to `<project_dir>/requirements.txt`.
    #[arg(long)]
    requirements: Option<PathBuf>,
    /// Snapshot file; the machine is probed when omitted.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value = "file")]
    order: String,
}

#[derive(Debug, Args)]
struct QueryArgs {
    kg: PathBuf,
    /// Two versioned components, e.g. "tensorflow 1.15" "cuda 10.2".
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "candidates")]
    pair: Option<Vec<String>>,
    /// List the versions of a component known to the graph.
    #[arg(long)]
    candidates: Option<String>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay recorded command output instead of running commands.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

/// Settings read from the configuration file. Relative paths are resolved
/// against the file's directory. Command-line flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub lexicon: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub templates: Option<String>,
    pub oracle: Option<String>,
    pub oracle_url: Option<String>,
    pub oracle_timeout: Option<u64>,
    pub consolidate: Option<String>,
    pub max_loss: Option<f64>,
    pub jobs: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.lexicon, &mut config.tags, &mut config.patterns].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(fixture) = config.oracle.as_mut().and_then(|o| o.strip_prefix("fixture:").map(str::to_string)) {
            let p = Path::new(&fixture);
            if p.is_relative() {
                config.oracle = Some(format!("fixture:{}", base.join(p).display()));
            }
        }
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        for p in [&self.lexicon, &self.tags, &self.patterns].into_iter().flatten() {
            if !p.is_file() {
                bail!("config: {} does not exist", p.display());
            }
        }
        if let Some(t) = &self.templates {
            t.parse::<TemplateStrategy>().map_err(anyhow::Error::msg).context("config: templates")?;
        }
        if let Some(c) = &self.consolidate {
            c.parse::<ConsolidationStrategy>().map_err(anyhow::Error::msg).context("config: consolidate")?;
        }
        Ok(())
    }
}

/// Parses `argv` and runs the command, writing data to `out` and
/// diagnostics to `err`. Returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{shown}");
                    0
                }
                _ => {
                    let _ = write!(err, "{shown}");
                    1
                }
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    config.validate()?;
    let lexicon = match cli.lexicon.as_ref().or(config.lexicon.as_ref()) {
        Some(p) => Lexicon::load(p).with_context(|| format!("lexicon {}", p.display()))?,
        None => Lexicon::builtin(),
    };
    match cli.command {
        Command::Extract(args) => run_extract(args, &config, &lexicon, err),
        Command::Detect(args) => run_detect(args, &lexicon, out),
        Command::Query(args) => run_query(args, &lexicon, out),
        Command::Probe(args) => run_probe(args, &lexicon, out, err),
    }
}

fn open_oracle(spec: Option<&str>, url: Option<&str>, timeout: Duration) -> Result<Box<dyn CompatibilityOracle>> {
    if let Some(spec) = spec {
        let Some(path) = spec.strip_prefix("fixture:") else {
            bail!("--oracle expects fixture:<path>, got `{spec}`");
        };
        let oracle = FixtureOracle::load(Path::new(path)).context("qa-extraction: loading fixture oracle")?;
        return Ok(Box::new(oracle));
    }
    match url {
        Some(url) => Ok(Box::new(HttpOracle::new(url, timeout))),
        None => bail!("no oracle: pass --oracle fixture:<path>, --oracle-url <url> or set {ORACLE_URL_VAR}"),
    }
}

fn run_extract(args: ExtractArgs, config: &Config, lexicon: &Lexicon, err: &mut dyn Write) -> Result<i32> {
    let format: PostFormat = args.format.parse().context("corpus-ingest")?;
    let mut ec = ExtractConfig::new(lexicon);
    if let Some(p) = args.tags.as_ref().or(config.tags.as_ref()) {
        ec.dl_tags = load_tags(p).context("corpus-ingest")?;
    }
    if let Some(p) = args.patterns.as_ref().or(config.patterns.as_ref()) {
        ec.patterns = load_patterns(p, lexicon).context("corpus-ingest")?;
    }
    if let Some(t) = args.templates.as_ref().or(config.templates.as_ref()) {
        ec.strategy = t.parse().map_err(anyhow::Error::msg).context("--templates")?;
    }
    if let Some(c) = args.consolidate.as_ref().or(config.consolidate.as_ref()) {
        ec.consolidation = c.parse().map_err(anyhow::Error::msg).context("--consolidate")?;
    }
    ec.max_loss = args.max_loss.or(config.max_loss);
    ec.jobs = args.jobs.or(config.jobs).unwrap_or(1);
    if ec.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    ec.parses_dir = args.parses.clone();

    let timeout = Duration::from_secs(args.oracle_timeout.or(config.oracle_timeout).unwrap_or(60));
    let oracle = open_oracle(
        args.oracle.as_deref().or(config.oracle.as_deref()),
        args.oracle_url.as_deref().or(config.oracle_url.as_deref()),
        timeout,
    )?;

    let posts = open_posts(&args.posts, format).context("corpus-ingest")?;
    let result = extract(posts, lexicon, oracle.as_ref(), &ec)?;
    save_kg(&result.kg, &args.out).context("kg-builder: writing graph")?;

    let s = &result.stats;
    write!(err, "{}", s.render())?;
    writeln!(
        err,
        "posts read {} / relevant {} / paragraphs qualified {} / pairs queried {} / edges written {}",
        s.answers, s.relevant, s.qualifying, s.pairs, s.consolidation.edges
    )?;
    Ok(0)
}

fn run_detect(args: DetectArgs, lexicon: &Lexicon, out: &mut dyn Write) -> Result<i32> {
    let format: ReportFormat = args.format.parse().map_err(anyhow::Error::msg)?;
    let order: EntryOrder = args.order.parse().map_err(anyhow::Error::msg)?;
    let kg = load_kg(&args.kg).context("kg-builder: loading graph")?;

    let req_path = args.requirements.clone().unwrap_or_else(|| args.project_dir.join("requirements.txt"));
    let reqs = if req_path.is_file() {
        let text = std::fs::read_to_string(&req_path).with_context(|| format!("reading {}", req_path.display()))?;
        let (entries, warnings) = parse_requirements(&text);
        for w in warnings {
            log::warn!("{}: {w}", req_path.display());
        }
        entries
    } else if args.requirements.is_some() {
        bail!("{} does not exist", req_path.display());
    } else {
        Vec::new()
    };
    if !args.project_dir.is_dir() {
        bail!("project-analyzer: {} is not a directory", args.project_dir.display());
    }
    let (imports, warnings) = scan_imports(&args.project_dir);
    for w in warnings {
        log::warn!("{w}");
    }
    let required = build_required_stack(&reqs, &imports, lexicon);

    let local = match &args.env {
        Some(p) => load_snapshot(p).context("env-prober: loading snapshot")?,
        None => probe_local_stack(&SystemRunner, lexicon),
    };
    let report = detect(&required, &local, &kg, DetectOptions { order });
    out.write_all(render_report(&report, format).as_bytes())?;
    Ok(report.exit_code())
}

fn parse_component(text: &str, lexicon: &Lexicon) -> Result<VersionedComponent> {
    let vc: VersionedComponent = text.parse().with_context(|| format!("bad component `{text}`"))?;
    Ok(VersionedComponent { component: lexicon.canonicalize(&vc.component), ..vc })
}

fn run_query(args: QueryArgs, lexicon: &Lexicon, out: &mut dyn Write) -> Result<i32> {
    let kg = load_kg(&args.kg).context("kg-builder: loading graph")?;
    if let Some(pair) = args.pair {
        let a = parse_component(&pair[0], lexicon)?;
        let b = parse_component(&pair[1], lexicon)?;
        match relation_between(&kg, &a, &b) {
            Some(info) => {
                writeln!(out, "{} conf={:.2} ({} posts)", info.relation, info.conf.abs(), info.evidence_count)?
            }
            None => writeln!(out, "Unknown")?,
        }
        return Ok(0);
    }
    if let Some(name) = args.candidates {
        let name = lexicon.canonicalize(&name);
        for v in candidate_versions(&kg, &name) {
            writeln!(out, "{v}")?;
        }
        return Ok(0);
    }
    bail!("query needs --pair A B or --candidates NAME");
}

fn run_probe(args: ProbeArgs, lexicon: &Lexicon, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let snapshot = match &args.transcript {
        Some(p) => probe_local_stack(&ReplayRunner::load(p).context("env-prober: loading transcript")?, lexicon),
        None => probe_local_stack(&SystemRunner, lexicon),
    };
    match &args.out {
        Some(p) => {
            save_snapshot(&snapshot, p).context("env-prober: writing snapshot")?;
            writeln!(err, "{} components written to {}", snapshot.components.len(), p.display())?;
        }
        None => out.write_all(decide_core::env::snapshot_to_json(&snapshot).as_bytes())?,
    }
    Ok(0)
}
