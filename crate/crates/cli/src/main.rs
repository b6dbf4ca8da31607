//! `conffuzz`: grammar-based gNB configuration fuzzer.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 target reject
//! (`validate`), 3 crash or timeout (`validate`), 4 internal error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use conffuzz::campaign::{Campaign, CampaignConfig, CampaignError, RunControl, DEFAULT_BASELINE, DEFAULT_MAX_DEPTH, DEFAULT_ENERGY};
use conffuzz::configfmt::{parse_config, ConfigDocument, ParamPath};
use conffuzz::explain::{self, ExplainError};
use conffuzz::gnb_validator::{self, watch_paths};
use conffuzz::grammar::{generate_tree, parse_grammar, tree_size, unparse, Grammar};
use conffuzz::mutate::MutationWeights;
use conffuzz::target::{self, make_target, OutcomeClass, TargetKind, TargetSpec, DEFAULT_TIMEOUT_MS};
use conffuzz::triage::{self, dedup_key, extract_param_table, minimize, render_report, CrashReport, CrashStore, ReportFormat};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_REJECT: u8 = 2;
const EXIT_CRASH: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "conffuzz", version, about = "Grammar-based fuzzing of 5G gNB configuration files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a grammar, printing token and rule counts.
    GrammarCheck {
        path: PathBuf,
        /// Reject undefined `<TOKEN>` references instead of treating them as literals.
        #[arg(long)]
        strict: bool,
    },
    /// Generate configs `gen-<k>.conf` from seeds seed..seed+count-1.
    Gen {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
        #[arg(long)]
        strict: bool,
    },
    /// Run a coverage-guided fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Execute one config and exit 0 (ok), 2 (reject) or 3 (crash/timeout).
    Validate {
        config: PathBuf,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Shrink a crashing config while keeping its dedup key.
    Minimize {
        config: PathBuf,
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Tabulate watched parameters across crash inputs.
    Triage(TriageArgs),
    /// Document test parameters from an autotest log and a source tree.
    Explain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// `glossary:<file>` or `http:<url>`.
        #[arg(long)]
        backend: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standalone validator: exits 0, exits 2 on reject, aborts on crash.
    GnbValidator { config: PathBuf },
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// `builtin:<name>`, `exec:<command>` or a command containing `{input}`.
    #[arg(long, default_value = "builtin:gnb-validator")]
    target: String,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    timeout_ms: u64,
}

impl TargetArgs {
    fn spec(&self) -> anyhow::Result<TargetSpec> {
        let kind: TargetKind = self.target.parse()?;
        let spec = TargetSpec {
            kind,
            timeout_ms: self.timeout_ms,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 100_000)]
    max_execs: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ENERGY)]
    energy: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    /// e.g. `regenerate=4,rule-swap=3,splice=2,scalar=1`.
    #[arg(long)]
    weights: Option<String>,
    /// Config the crash parameter diffs are taken against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    no_minimize: bool,
}

#[derive(Args)]
struct TriageArgs {
    /// Crash directory (`<out>/crashes` or a campaign `<out>`).
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    dir: Option<PathBuf>,
    /// Crash inputs to replay; columns are named by file stem.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Parameter paths to tabulate; the eight carrier and band parameters by default.
    #[arg(long, value_delimiter = ',')]
    watch: Vec<String>,
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    target: TargetArgs,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<u8, Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: error.into(),
    }
}

fn internal(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INTERNAL,
        error: error.into(),
    }
}

fn campaign_failure(e: CampaignError) -> Failure {
    match e {
        CampaignError::Write { .. } | CampaignError::Triage(_) | CampaignError::EmptyCorpus => internal(e),
        _ => usage(e),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)
}

fn load_grammar(path: &Path, strict: bool) -> Result<Grammar, Failure> {
    let text = read_text(path)?;
    parse_grammar(&text, strict)
        .with_context(|| format!("grammar {}", path.display()))
        .map_err(usage)
}

fn load_baseline(path: Option<&Path>) -> Result<ConfigDocument, Failure> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => DEFAULT_BASELINE.to_string(),
    };
    parse_config(&text).context("baseline config").map_err(usage)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(internal)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(internal)
}

fn cmd_grammar_check(path: &Path, strict: bool) -> CmdResult {
    let g = load_grammar(path, strict)?;
    println!("tokens: {}", g.token_count());
    println!("rules: {}", g.rule_count());
    println!("start: {} (min depth {})", g.start(), g.min_depth(g.start()).unwrap_or(0));
    Ok(EXIT_OK)
}

fn cmd_gen(grammar: &Path, seed: u64, count: u64, out: &Path, max_depth: usize, strict: bool) -> CmdResult {
    let g = load_grammar(grammar, strict)?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(internal)?;
    for k in 0..count {
        let tree = generate_tree(&g, seed.wrapping_add(k), max_depth).map_err(usage)?;
        let text = unparse(&tree, &g).map_err(internal)?;
        write_file(&out.join(format!("gen-{k}.conf")), &text)?;
    }
    eprintln!("wrote {count} config(s) to {}", out.display());
    Ok(EXIT_OK)
}

fn cmd_fuzz(args: &FuzzArgs) -> CmdResult {
    let spec = args.target.spec().map_err(usage)?;
    let mut cfg = CampaignConfig::new(&args.grammar, spec);
    cfg.strict_grammar = args.strict;
    cfg.seed = args.seed;
    cfg.workers = args.workers;
    cfg.max_execs = args.max_execs;
    cfg.energy_per_entry = args.energy;
    cfg.max_depth = args.max_depth;
    cfg.out_dir = args.out.clone();
    cfg.baseline = args.baseline.clone();
    cfg.minimize_crashes = !args.no_minimize;
    if let Some(w) = &args.weights {
        cfg.weights = w.parse::<MutationWeights>().map_err(usage)?;
    }

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        // A second handler cannot be installed in-process; ignore that case.
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }

    let mut campaign = Campaign::new(cfg).map_err(campaign_failure)?;
    let mut progress = |s: &conffuzz::campaign::CampaignStats| {
        eprintln!(
            "[fuzz] execs {} | corpus {} | uniques {} | crashes {} | timeouts {} | {:.0}/s",
            s.execs, s.corpus_size, s.crashes_unique, s.crashes_total, s.timeouts, s.execs_per_sec
        );
    };
    let control = RunControl {
        stop: Some(stop.clone()),
        progress: Some(&mut progress),
    };
    let stats = campaign.run_with(control).map_err(campaign_failure)?;
    if stop.load(Ordering::SeqCst) {
        eprintln!("[fuzz] interrupted; partial stats written");
    }
    let json = serde_json::to_string(&campaign.stats_file()).map_err(internal)?;
    println!("{json}");
    for report in campaign.crashes().reports() {
        eprintln!("[crash] {} {}", report.dedup_key, report.outcome.class);
    }
    eprintln!(
        "[fuzz] done: execs {} | corpus {} | uniques {}",
        stats.execs, stats.corpus_size, stats.crashes_unique
    );
    Ok(EXIT_OK)
}

fn cmd_validate(config: &Path, target_args: &TargetArgs) -> CmdResult {
    let spec = target_args.spec().map_err(usage)?;
    let text = read_text(config)?;
    let (outcome, feedback) = target::execute(&spec, &text).map_err(usage)?;
    println!("{}", outcome.class);
    if !outcome.stderr_excerpt.is_empty() {
        eprint!("{}", outcome.stderr_excerpt);
    }
    eprintln!("branches: {} digest: {:016x}", feedback.branches().len(), feedback.digest());
    Ok(match outcome.class {
        OutcomeClass::Ok => EXIT_OK,
        OutcomeClass::Reject(_) => EXIT_REJECT,
        OutcomeClass::Crash(_) | OutcomeClass::Timeout => EXIT_CRASH,
    })
}

fn cmd_minimize(config: &Path, grammar: &Path, out: &Path, strict: bool, target_args: &TargetArgs) -> CmdResult {
    let g = load_grammar(grammar, strict)?;
    let spec = target_args.spec().map_err(usage)?;
    let text = read_text(config)?;
    let tree = g
        .parse_text(&text)
        .with_context(|| format!("{} is not derivable from the grammar", config.display()))
        .map_err(usage)?;
    let campaign_id = format!("minimize-{}", std::process::id());
    let target = make_target(&spec, &campaign_id).map_err(usage)?;
    let (outcome, feedback) = target.execute(&text).map_err(usage)?;
    let key = dedup_key(&outcome, &feedback).map_err(usage)?;
    let min = minimize(&tree, &g, target.as_ref(), &key).map_err(usage)?;
    let min_text = unparse(&min, &g).map_err(internal)?;
    write_file(out, &min_text)?;
    println!("{key}");
    eprintln!("tree size {} -> {}", tree_size(&tree), tree_size(&min));
    Ok(EXIT_OK)
}

fn cmd_triage(args: &TriageArgs) -> CmdResult {
    let format: ReportFormat = args.format.parse().map_err(|e: String| usage(anyhow::anyhow!(e)))?;
    let baseline = load_baseline(args.baseline.as_deref())?;
    let watch: Vec<ParamPath> = if args.watch.is_empty() {
        watch_paths()
    } else {
        args.watch
            .iter()
            .map(|w| w.parse::<ParamPath>().with_context(|| format!("watch path {w:?}")))
            .collect::<anyhow::Result<_>>()
            .map_err(usage)?
    };

    let reports: Vec<CrashReport> = if let Some(dir) = &args.dir {
        let nested = dir.join("crashes");
        let root = if nested.is_dir() { nested } else { dir.clone() };
        CrashStore::load(&root).map_err(usage)?
    } else {
        let spec = args.target.spec().map_err(usage)?;
        let target = make_target(&spec, &format!("triage-{}", std::process::id())).map_err(usage)?;
        let mut reports = Vec::new();
        for path in &args.input {
            let text = read_text(path)?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let report = triage::report_from_input(&text, &label, &baseline, target.as_ref())
                .with_context(|| format!("replaying {}", path.display()))
                .map_err(usage)?;
            reports.push(report);
        }
        reports
    };

    let table = extract_param_table(&baseline, &reports, &watch);
    let rendered = render_report(&table, format);
    match &args.out {
        Some(out) => write_file(out, &rendered)?,
        None => print!("{rendered}"),
    }
    Ok(EXIT_OK)
}

fn cmd_explain(input: &Path, src: &Path, backend: &str, out: &Path) -> CmdResult {
    let log = read_text(input)?;
    let mut backend = explain::backend_from_spec(backend).map_err(usage)?;
    match explain::auto_explain(&log, src, backend.as_mut()) {
        Ok((report, infos)) => {
            write_file(out, &report)?;
            eprintln!("explained {} parameter(s) into {}", infos.len(), out.display());
            Ok(EXIT_OK)
        }
        Err((partial, e)) => {
            if let Some(text) = partial {
                write_file(out, &text)?;
            }
            Err(match e {
                ExplainError::Backend { .. } => internal(e),
                _ => usage(e),
            })
        }
    }
}

fn cmd_gnb_validator(config: &Path) -> u8 {
    let (outcome, feedback) = match fs::read_to_string(config) {
        Ok(text) => gnb_validator::validate_text(&text),
        Err(e) => {
            eprintln!("cannot read {}: {e}", config.display());
            return EXIT_REJECT;
        }
    };
    let mut err = std::io::stderr().lock();
    for b in feedback.branches() {
        let _ = writeln!(err, "{}{b}", target::BRANCH_PREFIX);
    }
    if !outcome.stderr_excerpt.is_empty() {
        let _ = write!(err, "{}", outcome.stderr_excerpt);
    }
    let _ = err.flush();
    match outcome.class {
        OutcomeClass::Ok => EXIT_OK,
        OutcomeClass::Reject(_) | OutcomeClass::Timeout => EXIT_REJECT,
        OutcomeClass::Crash(_) => std::process::abort(),
    }
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::GrammarCheck { path, strict } => cmd_grammar_check(path, *strict),
        Command::Gen {
            grammar,
            seed,
            count,
            out,
            max_depth,
            strict,
        } => cmd_gen(grammar, *seed, *count, out, *max_depth, *strict),
        Command::Fuzz(args) => cmd_fuzz(args),
        Command::Validate { config, target } => cmd_validate(config, target),
        Command::Minimize {
            config,
            grammar,
            out,
            strict,
            target,
        } => cmd_minimize(config, grammar, out, *strict, target),
        Command::Triage(args) => cmd_triage(args),
        Command::Explain {
            input,
            src,
            backend,
            out,
        } => cmd_explain(input, src, backend, out),
        Command::GnbValidator { config } => Ok(cmd_gnb_validator(config)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
