use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use storagelabel::log::LOG_SCHEMA;
use storagelabel::{
    blocklist_coverage, breakage_report, parse_event_log, replay_with, AccessEvent, Blocklist,
    Classifier, CookieJar, DomainResolver, ParsedLog, PartyGranularity, ReplayMode, SuffixList,
};

#[derive(Parser)]
#[command(
    name = "storagelabel",
    version,
    about = "Least-privilege storage labels: parse, replay, classify"
)]
struct Cli {
    /// Party granularity for every domain comparison.
    #[arg(long, value_enum, global = true, default_value_t = Party::Registrable)]
    party: Party,

    /// Public suffix list replacing the bundled snapshot.
    #[arg(long, global = true, env = "STORAGELABEL_SUFFIX_LIST")]
    suffix_list: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Party {
    Registrable,
    ExactHost,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Observe,
    Enforce,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Structured,
}

#[derive(Args)]
struct Report {
    /// Event log, one JSON object per line; `-` reads standard input.
    input: PathBuf,

    #[arg(long, short, value_enum, default_value_t = Format::Tsv)]
    format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,

    /// Fail when any log line is rejected.
    #[arg(long)]
    strict: bool,

    /// Include the generation time in the report.
    #[arg(long)]
    stamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse one Set-Cookie header value and print its canonical form.
    ParseSetCookie {
        header: String,
        /// Origin of the response that carried the header.
        #[arg(long)]
        origin: String,
        /// Current time in seconds, for Max-Age.
        #[arg(long, default_value_t = 0)]
        now: i64,
    },
    /// Replay a log and report denials and final store contents.
    Simulate {
        #[command(flatten)]
        report: Report,
        #[arg(long, value_enum, default_value_t = Mode::Enforce)]
        mode: Mode,
    },
    /// Classify logged accesses by creator and accessor party.
    Classify {
        #[command(flatten)]
        report: Report,
    },
    /// Replay with enforcement and summarize what breaks.
    Breakage {
        #[command(flatten)]
        report: Report,
        /// Domain list for coverage of third-party accesses.
        #[arg(long)]
        blocklist: Option<PathBuf>,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        top_n: u64,
    },
    /// Validate a log and list rejected lines.
    CheckLog {
        #[arg(required_unless_present = "schema")]
        input: Option<PathBuf>,
        /// Print the log field reference.
        #[arg(long)]
        schema: bool,
    },
}

fn resolver(cli: &Cli) -> Result<DomainResolver> {
    let granularity = match cli.party {
        Party::Registrable => PartyGranularity::Registrable,
        Party::ExactHost => PartyGranularity::ExactHost,
    };
    Ok(match &cli.suffix_list {
        Some(path) => DomainResolver::new(SuffixList::from_path(path)?, granularity),
        None => DomainResolver::default().with_granularity(granularity),
    })
}

fn read_log(path: &Path, resolver: &DomainResolver) -> Result<ParsedLog> {
    let reader: Box<dyn BufRead> = if path.as_os_str() == "-" {
        Box::new(io::stdin().lock())
    } else {
        let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        Box::new(BufReader::new(file))
    };
    Ok(parse_event_log(reader, resolver))
}

/// Loads the log, reporting rejected lines on stderr.
fn load(report: &Report, resolver: &DomainResolver) -> Result<Vec<AccessEvent>> {
    let log = read_log(&report.input, resolver)?;
    for error in &log.errors {
        eprintln!("{}: {error}", report.input.display());
    }
    if report.strict && !log.is_clean() {
        bail!("{} line(s) rejected", log.errors.len());
    }
    Ok(log.events)
}

fn emit(report: &Report, text: &str) -> Result<()> {
    match &report.output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn render(report: &Report, mut value: serde_json::Value, tsv: String) -> Result<String> {
    Ok(match report.format {
        Format::Structured => {
            if report.stamp {
                value["generated_at"] = json!(now_secs());
            }
            let mut text = serde_json::to_string_pretty(&value)?;
            text.push('\n');
            text
        }
        Format::Tsv if report.stamp => format!("# generated_at\t{}\n{tsv}", now_secs()),
        Format::Tsv => tsv,
    })
}

fn simulate(report: &Report, mode: Mode, resolver: &DomainResolver) -> Result<()> {
    let events = load(report, resolver)?;
    let mode = match mode {
        Mode::Observe => ReplayMode::Observe,
        Mode::Enforce => ReplayMode::Enforce,
    };
    let outcome = replay_with(&events, mode, resolver);
    for error in &outcome.errors {
        eprintln!("{}: {error}", report.input.display());
    }
    if report.strict && !outcome.errors.is_empty() {
        bail!("{} event(s) failed during replay", outcome.errors.len());
    }
    let state: serde_json::Map<_, _> = outcome
        .sites
        .iter()
        .map(|(site, s)| (site.clone(), json!(s.dump())))
        .collect();
    let value = json!({
        "mode": mode,
        "denials": outcome.denials,
        "errors": outcome.errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
        "state": state,
    });
    let mut tsv = format!("# mode\t{mode}\n{}\n# state\n", outcome.denials_tsv());
    for line in outcome.state_dump() {
        tsv.push_str(&line);
        tsv.push('\n');
    }
    emit(report, &render(report, value, tsv)?)
}

fn classify(report: &Report, resolver: &DomainResolver) -> Result<()> {
    let events = load(report, resolver)?;
    let mut classifier = Classifier::new();
    for event in &events {
        classifier.observe(event);
    }
    let result = classifier.finish();
    emit(report, &render(report, json!(result), result.to_tsv())?)
}

fn breakage(
    report: &Report,
    blocklist: Option<&Path>,
    top_n: usize,
    resolver: &DomainResolver,
) -> Result<()> {
    let list = blocklist.map(Blocklist::from_path).transpose()?;
    let events = load(report, resolver)?;
    let outcome = replay_with(&events, ReplayMode::Enforce, resolver);
    for error in &outcome.errors {
        eprintln!("{}: {error}", report.input.display());
    }
    let summary = breakage_report(&outcome.denials, top_n);
    let coverage = list
        .map(|list| blocklist_coverage(&events, &list))
        .transpose()
        .context("blocklist coverage")?;
    let mut tsv = summary.to_tsv();
    if let Some(pct) = coverage {
        tsv.push_str(&format!("\nblocklist_coverage\t{pct}\n"));
    }
    let value = json!({ "breakage": summary, "blocklist_coverage": coverage });
    emit(report, &render(report, value, tsv)?)
}

fn check_log(input: &Path, resolver: &DomainResolver) -> Result<bool> {
    let log = read_log(input, resolver)?;
    for error in &log.errors {
        eprintln!("{}: {error}", input.display());
    }
    println!(
        "{} events, {} rejected lines",
        log.events.len(),
        log.errors.len()
    );
    Ok(log.is_clean())
}

fn run(cli: Cli) -> Result<bool> {
    let resolver = resolver(&cli)?;
    match &cli.command {
        Command::ParseSetCookie {
            header,
            origin,
            now,
        } => {
            let origin = resolver.normalize(origin).context("invalid --origin")?;
            let jar = CookieJar::with_resolver(resolver);
            match jar.parse_set_cookie(header, &origin, *now) {
                Ok(record) => println!("{}", record.canonical()),
                Err(e) => {
                    let attribute = e.attribute().unwrap_or("-");
                    eprintln!("error: {e}\nattribute: {attribute}");
                    return Ok(false);
                }
            }
        }
        Command::Simulate { report, mode } => simulate(report, *mode, &resolver)?,
        Command::Classify { report } => classify(report, &resolver)?,
        Command::Breakage {
            report,
            blocklist,
            top_n,
        } => breakage(report, blocklist.as_deref(), *top_n as usize, &resolver)?,
        Command::CheckLog { input, schema } => {
            if *schema {
                print!("{LOG_SCHEMA}");
            }
            if let Some(input) = input {
                return check_log(input, &resolver);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
