use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use huddle_ona::export::{to_dot, to_svg};
use huddle_ona::ingest::read_labels;
use huddle_ona::report::{parse_groups, projection_csv, select, NetsFile};
use huddle_ona::{accumulate, compare, ingest, normalize, project, Accumulation, CodeRegistry, OnaError, OnaNetwork};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ona", about = "Directed co-occurrence networks over coded transcripts")]
struct Cli {
    /// Registry JSON; the built-in code list is used when omitted.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one network per conversation.
    Accumulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        window: usize,
        /// Count each code pair at most once per response turn.
        #[arg(long)]
        binary: bool,
        /// Keep raw counts instead of unit-norm vectors.
        #[arg(long)]
        raw: bool,
        /// Label table used to build per-group aggregates.
        #[arg(long, requires = "group_by")]
        labels: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        group_by: Option<String>,
    },
    /// Means-rotation projection of two groups, as CSV.
    Project {
        #[arg(long)]
        nets: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Two selectors, e.g. `mode=roundtable,mode=breakout`.
        #[arg(long)]
        groups: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Welch comparison of the two groups' x coordinates.
    Compare {
        #[arg(long)]
        nets: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        groups: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one network or group aggregate.
    Export {
        #[arg(long)]
        nets: PathBuf,
        /// Conversation id, or an aggregate key when `--aggregate` is set.
        #[arg(long)]
        unit: String,
        #[arg(long)]
        aggregate: bool,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Svg,
}

fn write_or_print(out: Option<PathBuf>, body: &str) -> Result<(), OnaError> {
    match out {
        Some(path) => std::fs::write(&path, body).map_err(|e| OnaError::Io(path.display().to_string(), e)),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn registry_for(path: Option<PathBuf>) -> Result<CodeRegistry, OnaError> {
    path.map(|p| CodeRegistry::load(&p)).unwrap_or_else(|| Ok(CodeRegistry::default()))
}

fn registry_from_nets(nets: &NetsFile) -> Result<CodeRegistry, OnaError> {
    CodeRegistry::from_names(&nets.codes)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), OnaError> {
    match cli.command {
        Command::Accumulate { input, out, window, binary, raw, labels, group_by } => {
            let registry = registry_for(cli.registry)?;
            let conversations = ingest(&input, &registry)?;
            let mode = if binary { Accumulation::Binary } else { Accumulation::Summed };
            let counts = accumulate(&conversations, registry.len(), window, mode)?;
            let mut aggregates: BTreeMap<String, OnaNetwork> = BTreeMap::new();
            if let (Some(labels), Some(key)) = (labels, group_by) {
                let table = read_labels(&labels)?;
                for net in &counts {
                    if let Some(value) = table.get(&net.unit_id).and_then(|a| a.get(&key)) {
                        let name = format!("{key}={value}");
                        aggregates
                            .entry(name.clone())
                            .or_insert_with(|| OnaNetwork::zero(name, registry.len()))
                            .add(net);
                    }
                }
            }
            let networks = if raw { counts } else { counts.iter().map(normalize).collect() };
            let file = NetsFile {
                codes: registry.codes().iter().map(|c| c.name.clone()).collect(),
                window,
                accumulation: mode,
                networks,
                aggregates,
            };
            let body = serde_json::to_string_pretty(&file).expect("networks serialize") + "\n";
            write_or_print(Some(out), &body)
        }
        Command::Project { nets, labels, groups, out } => {
            let file = NetsFile::read(&nets)?;
            let groups = parse_groups(&groups)?;
            let (picked, names) = select(&file.networks, &read_labels(&labels)?, &groups)?;
            let p = project(&picked, &names, [&groups[0].name(), &groups[1].name()])?;
            if p.degenerate {
                eprintln!("warning: group means coincide; x follows the leading singular direction instead");
            }
            write_or_print(out, &projection_csv(&p))
        }
        Command::Compare { nets, labels, groups, out } => {
            let file = NetsFile::read(&nets)?;
            let groups = parse_groups(&groups)?;
            let (picked, names) = select(&file.networks, &read_labels(&labels)?, &groups)?;
            let (a, b) = (groups[0].name(), groups[1].name());
            let p = project(&picked, &names, [&a, &b])?;
            let c = compare(&p.xs(&a), &p.xs(&b))?;
            let body = json!({
                "groups": [a, b],
                "comparison": c,
                "groupMeans": p.group_means,
                "degenerate": p.degenerate,
                "skipped": p.skipped,
                "report": format!("t({:.1})={:.4}, p={:.3}, Cohen's d={:.2}", c.df, c.t, c.p, c.cohen_d),
            });
            write_or_print(out, &(serde_json::to_string_pretty(&body).expect("stats serialize") + "\n"))
        }
        Command::Export { nets, unit, aggregate, format, out } => {
            let file = NetsFile::read(&nets)?;
            let registry = registry_from_nets(&file)?;
            let net = if aggregate {
                file.aggregates.get(&unit).cloned()
            } else {
                file.networks.iter().find(|n| n.unit_id == unit).cloned()
            }
            .ok_or_else(|| OnaError::Groups(format!("no network named {unit}")))?;
            let body = match format {
                Format::Dot => to_dot(&net, &registry),
                Format::Svg => to_svg(&net, &registry),
            };
            write_or_print(out, &body)
        }
    }
}
