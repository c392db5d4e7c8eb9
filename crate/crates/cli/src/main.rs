use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use freestore::checker::parse_properties;
use freestore::trace::{parse, render};
use freestore::{
    check, run_scenario, GeneratorKind, Metrics, Note, Outcome, Property, Report, RunInfo, RunResult, Scenario,
    SimConfig, TraceEvent, TraceLine, Verdict,
};

const TRACE_DIR_VAR: &str = "FREESTORE_TRACE_DIR";

#[derive(Parser)]
#[command(name = "freestore", version, about = "Simulate and audit a reconfigurable atomic register")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one seed and check the resulting trace.
    Run(RunArgs),
    /// Run every scenario of a directory over a range of seeds.
    Sweep(SweepArgs),
    /// Re-check a trace written by an earlier run.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Live,
    Perfect,
}

impl From<Generator> for GeneratorKind {
    fn from(g: Generator) -> Self {
        match g {
            Generator::Live => GeneratorKind::Live,
            Generator::Perfect => GeneratorKind::Perfect,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Defaults to the scenario's `generator` line, then to live.
    #[arg(long, value_enum)]
    generator: Option<Generator>,
    #[arg(long)]
    seed: u64,
    /// Global stabilization time: delays are bounded from this tick on.
    #[arg(long)]
    gst: Option<u64>,
    #[arg(long, value_enum)]
    optimize_install: Option<Switch>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Where to write the trace. Relative paths are resolved against
    /// FREESTORE_TRACE_DIR when it is set.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Where to write step counts as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// `all` or a comma-separated subset of atomicity, views, liveness, bounds.
    #[arg(long, default_value = "all")]
    check: String,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    scenario_dir: PathBuf,
    /// Half-open seed range `A..B`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Range<u64>,
    #[arg(long, value_enum)]
    generator: Option<Generator>,
    #[arg(long, value_enum)]
    optimize_install: Option<Switch>,
    #[arg(long, default_value = "all")]
    check: String,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Needed by the bounds check. Read from the trace header, or guessed
    /// from the trace when there is none.
    #[arg(long, value_enum)]
    generator: Option<Generator>,
    #[arg(long, default_value = "all")]
    check: String,
}

/// Failure carrying the process exit code.
enum Fail {
    Violation,
    Config(String),
    Exhausted,
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Violation => 1,
            Fail::Config(_) => 2,
            Fail::Exhausted => 3,
        }
    }
}

fn config(e: impl std::fmt::Display) -> Fail {
    Fail::Config(e.to_string())
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.parse().map_err(|_| format!("bad seed `{a}`"))?;
    let b: u64 = b.parse().map_err(|_| format!("bad seed `{b}`"))?;
    if a >= b {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(a..b)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Fail::Config(msg) = &f {
                eprintln!("error: {msg}");
            }
            ExitCode::from(f.code())
        }
    }
}

fn artifact_dir() -> Option<PathBuf> {
    std::env::var_os(TRACE_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn artifact_path(p: &Path) -> PathBuf {
    match artifact_dir() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Fail> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| config(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Scenario, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    text.parse().map_err(|e| config(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn configure(sc: &mut Scenario, generator: Option<Generator>, optimize: Option<Switch>) {
    if let Some(g) = generator {
        sc.generator = Some(g.into());
    }
    if let Some(o) = optimize {
        sc.optimize_install = Some(matches!(o, Switch::On));
    }
}

fn header(scenario: &str, r: &RunResult, seed: u64) -> String {
    let outcome = match r.outcome {
        Outcome::Quiescent => "quiescent",
        Outcome::Exhausted => "exhausted",
    };
    format!(
        "# freestore trace scenario={scenario} generator={} seed={seed} outcome={outcome} expect-violation={}\n",
        r.generator, r.expect_violation
    )
}

/// Exit status of a checked run. Safety violations win over an exhausted
/// step budget, which in turn shows up as a liveness violation.
fn status(report: &Report, outcome: &Outcome) -> Result<(), Fail> {
    let exhausted = *outcome == Outcome::Exhausted;
    let violated = report
        .findings
        .iter()
        .any(|f| f.verdict.is_violation() && !(exhausted && f.property == Property::Liveness));
    if violated {
        Err(Fail::Violation)
    } else if exhausted {
        Err(Fail::Exhausted)
    } else {
        Ok(())
    }
}

fn run(a: RunArgs) -> Result<(), Fail> {
    let props = parse_properties(&a.check).map_err(config)?;
    let mut sc = load_scenario(&a.scenario)?;
    configure(&mut sc, a.generator, a.optimize_install);
    if a.gst.is_some() {
        sc.gst = a.gst;
    }
    if a.max_steps.is_some() {
        sc.max_steps = a.max_steps;
    }
    let r = run_scenario(&sc, SimConfig::for_scenario(&sc, a.seed)).map_err(config)?;
    let report = check(&r.trace, &RunInfo::of(&r), &props);
    let metrics = Metrics::from_trace(&r.trace);
    let name = file_name(&a.scenario);

    let default = |ext: &str| {
        artifact_dir().map(|d| d.join(format!("{}-{}-{}.{ext}", file_stem(&a.scenario), r.generator, a.seed)))
    };
    let trace_path = a.trace.as_deref().map(artifact_path).or_else(|| default("trace"));
    let metrics_path = a.metrics.as_deref().map(artifact_path).or_else(|| default("metrics.json"));
    if let Some(p) = &trace_path {
        write_file(p, &(header(&name, &r, a.seed) + &render(&r.trace)))?;
    }
    if let Some(p) = &metrics_path {
        let json = serde_json::to_string_pretty(&metrics).map_err(config)?;
        write_file(p, &(json + "\n"))?;
    }

    let mut out = String::new();
    let optimize = sc.optimize_install.unwrap_or(true);
    let _ = writeln!(out, "scenario   {name}");
    let _ = writeln!(out, "generator  {} (optimize-install {})", r.generator, if optimize { "on" } else { "off" });
    let _ = writeln!(out, "seed       {}", a.seed);
    let outcome = match r.outcome {
        Outcome::Quiescent => "quiescent",
        Outcome::Exhausted => "step budget exhausted",
    };
    let _ = writeln!(out, "outcome    {outcome} after {} events, t={}", r.steps, r.end_time);
    let installed = r.installed_views();
    let chain: Vec<String> = installed.iter().map(|v| v.members_string()).collect();
    let _ = writeln!(out, "installed  {}", chain.join(" -> "));
    if let Some(last) = installed.last() {
        let _ = writeln!(out, "final view {}", last.members_string());
    }
    out.push('\n');
    out.push_str(&report.to_string());
    out.push('\n');
    out.push_str(&metrics.table());
    if let Some(p) = &trace_path {
        let _ = writeln!(out, "\ntrace written to {}", p.display());
    }
    print!("{out}");
    status(&report, &r.outcome)
}

fn verdict_cell(v: Option<&Verdict>) -> &'static str {
    match v {
        None => "-",
        Some(Verdict::Ok) => "ok",
        Some(Verdict::Heuristic) => "ok~",
        Some(Verdict::Violation(_)) => "FAIL",
        Some(Verdict::Skipped(_)) => "skip",
    }
}

fn sweep(a: SweepArgs) -> Result<(), Fail> {
    let props = parse_properties(&a.check).map_err(config)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&a.scenario_dir)
        .map_err(|e| config(format!("{}: {e}", a.scenario_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "fs"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(config(format!("no .fs scenarios in {}", a.scenario_dir.display())));
    }
    // Every scenario must load before anything runs.
    let scenarios: Vec<(String, Scenario)> = files
        .iter()
        .map(|p| {
            let mut sc = load_scenario(p)?;
            configure(&mut sc, a.generator, a.optimize_install);
            Ok((file_name(p), sc))
        })
        .collect::<Result<_, Fail>>()?;

    let width = scenarios.iter().map(|(n, _)| n.len()).max().unwrap_or(8).max(8);
    let mut out = String::new();
    let _ = write!(out, "{:<width$} {:>6} {:<8} {:>8}", "scenario", "seed", "gen", "events");
    for p in &props {
        let _ = write!(out, " {:<10}", p.to_string());
    }
    out.push_str(" result\n");
    print!("{out}");

    let mut runs = 0usize;
    let mut failed = 0usize;
    let mut details = String::new();
    for (name, sc) in &scenarios {
        for seed in a.seeds.clone() {
            runs += 1;
            let r = run_scenario(sc, SimConfig::for_scenario(sc, seed)).map_err(|e| config(format!("{name}: {e}")))?;
            let report = check(&r.trace, &RunInfo::of(&r), &props);
            let ok = report.is_ok();
            let mut line = format!("{name:<width$} {seed:>6} {:<8} {:>8}", r.generator.to_string(), r.steps);
            for p in &props {
                let _ = write!(line, " {:<10}", verdict_cell(report.verdict(*p)));
            }
            line.push_str(if ok { " ok\n" } else { " VIOLATION\n" });
            print!("{line}");
            if !ok {
                failed += 1;
                let _ = writeln!(details, "\n{name} seed {seed}:");
                for f in report.findings.iter().filter(|f| f.verdict.is_violation()) {
                    let _ = writeln!(details, "  {:<10} {}", f.property, f.verdict);
                }
                if let Some(dir) = artifact_dir() {
                    let path = dir.join(format!("{}-{}-{seed}.trace", file_stem(Path::new(name)), r.generator));
                    write_file(&path, &(header(name, &r, seed) + &render(&r.trace)))?;
                    let _ = writeln!(details, "  trace written to {}", path.display());
                }
            }
        }
    }
    print!("{details}");
    println!("\n{runs} runs, {failed} with violations");
    if failed > 0 {
        Err(Fail::Violation)
    } else {
        Ok(())
    }
}

/// Run facts recorded in the `# freestore trace` header line.
fn header_field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    let line = text.lines().find(|l| l.starts_with("# freestore trace"))?;
    line.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

fn check_trace(a: CheckArgs) -> Result<(), Fail> {
    let props = parse_properties(&a.check).map_err(config)?;
    let text = std::fs::read_to_string(&a.trace).map_err(|e| config(format!("{}: {e}", a.trace.display())))?;
    let trace = parse(&text).map_err(|e| config(format!("{}: {e}", a.trace.display())))?;
    let generator = match (a.generator, header_field(&text, "generator")) {
        (Some(g), _) => g.into(),
        (None, Some(g)) => g.parse().map_err(config)?,
        (None, None) => guess_generator(&trace),
    };
    let outcome = match header_field(&text, "outcome") {
        Some("exhausted") => Outcome::Exhausted,
        _ => Outcome::Quiescent,
    };
    let info = RunInfo {
        initial_view: initial_view(&trace)
            .ok_or_else(|| config("the trace has no boot INSTALL lines, so the initial view is unknown"))?,
        generator,
        expect_violation: header_field(&text, "expect-violation") == Some("true"),
        exhausted: outcome == Outcome::Exhausted,
    };
    let report = check(&trace, &info, &props);
    print!("{report}");
    status(&report, &outcome)
}

fn guess_generator(trace: &[TraceLine]) -> GeneratorKind {
    let learns = trace.iter().any(|l| matches!(l.event, TraceEvent::Note(Note::Learn { .. })));
    if learns {
        GeneratorKind::Perfect
    } else {
        GeneratorKind::Live
    }
}

/// The view installed by the boot lines at sequence number 0.
fn initial_view(trace: &[TraceLine]) -> Option<freestore::View> {
    trace.iter().take_while(|l| l.seq == 0).find_map(|l| match &l.event {
        TraceEvent::Note(Note::Install { view, .. }) => Some(view.clone()),
        _ => None,
    })
}
