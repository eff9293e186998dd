use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use ccprobe_core::classifier::{classify_trace, ClassificationReport, ClassifierConfig, Label};
use ccprobe_core::netsim::{simulate, Scenario, TerminationReason};
use ccprobe_core::prober::{CloseMode, ProbeScript, DEFAULT_EVENT_CAP};
use ccprobe_core::sender::Variant;
use ccprobe_core::trace_io::{
    emit_plot_points, read_trace, write_plot, write_trace, ObservedTrace,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CLASSIFY_ERROR: u8 = 3;

/// Simulate TCP congestion-control variants, probe them and classify the traces.
#[derive(Debug, Parser)]
#[command(name = "ccprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulated probe and write its trace.
    Sim(SimArgs),
    /// Classify a recorded trace.
    Classify(ClassifyArgs),
    /// Probe every variant and print the confusion matrix.
    Matrix(MatrixArgs),
    /// Turn a trace into time-sequence plot points.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CloseArg {
    Reset,
    Fin,
}

impl From<CloseArg> for CloseMode {
    fn from(c: CloseArg) -> Self {
        match c {
            CloseArg::Reset => CloseMode::Reset,
            CloseArg::Fin => CloseMode::Fin,
        }
    }
}

#[derive(Debug, Args)]
struct ScriptArgs {
    /// Segment size the prober advertises, bytes.
    #[arg(long, default_value_t = 100)]
    mss: u32,
    /// Packet indices whose first arrival is withheld.
    #[arg(long = "drop", value_delimiter = ',', default_values_t = [13u32, 16])]
    drops: Vec<u32>,
    /// Last packet index the prober acknowledges.
    #[arg(long, default_value_t = 25)]
    ack_limit: u32,
    #[arg(long, value_enum, default_value_t = CloseArg::Reset)]
    close_mode: CloseArg,
}

impl ScriptArgs {
    fn script(&self) -> ProbeScript {
        ProbeScript {
            mss: self.mss,
            drop_packets: self.drops.iter().copied().collect::<BTreeSet<_>>(),
            ack_limit_packet: self.ack_limit,
            close_mode: self.close_mode.into(),
            ..ProbeScript::default()
        }
    }
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// Round-trip time, milliseconds.
    #[arg(long, default_value_t = 100.0)]
    rtt_ms: f64,
    #[arg(long, default_value_t = 3000)]
    page_bytes: u64,
    #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
    event_cap: usize,
    #[command(flatten)]
    script: ScriptArgs,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    variant: Variant,
    #[command(flatten)]
    world: WorldArgs,
    /// Trace destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    timeout_factor: f64,
    #[arg(long, default_value_t = DEFAULT_EVENT_CAP)]
    event_cap: usize,
    #[command(flatten)]
    script: ScriptArgs,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value_t = 3.0)]
    timeout_factor: f64,
    /// Repeat the matrix at each of these round-trip times (ms) instead of --rtt-ms.
    #[arg(long, value_delimiter = ',')]
    rtt_sweep: Vec<f64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Plot destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn rtt_from_ms(ms: f64) -> Result<Duration> {
    if !ms.is_finite() || ms <= 0.0 {
        bail!("rtt must be a positive number of milliseconds, got {ms}");
    }
    Ok(Duration::from_micros((ms * 1_000.0).round() as u64))
}

fn scenario(variant: Variant, world: &WorldArgs, rtt_ms: f64) -> Result<Scenario> {
    let mut sc = Scenario::new(variant).with_rtt(rtt_from_ms(rtt_ms)?);
    sc.page_bytes = world.page_bytes;
    sc.event_cap = world.event_cap;
    sc.probe_script = world.script.script();
    sc.validate()?;
    Ok(sc)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> Result<ObservedTrace> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_trace(BufReader::new(file))
        .with_context(|| format!("cannot read trace {}", path.display()))
}

fn cmd_sim(args: &SimArgs) -> Result<u8> {
    let sc = scenario(args.variant, &args.world, args.world.rtt_ms)?;
    let run = simulate(&sc)?;
    let mut out = sink(args.out.as_deref())?;
    write_trace(&run.trace, &mut out)?;
    out.flush()?;
    let msg = format!(
        "{:?} after {} ({} events)",
        run.termination,
        run.final_clock,
        run.trace.len()
    );
    if args.out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
    Ok(if run.termination == TerminationReason::ProberClosed {
        0
    } else {
        EXIT_MISMATCH
    })
}

fn cmd_classify(args: &ClassifyArgs) -> Result<u8> {
    let trace = load(&args.input)?;
    let script = args.script.script();
    script.validate()?;
    let cfg = ClassifierConfig {
        timeout_factor: args.timeout_factor,
        event_cap: args.event_cap,
    };
    let report = classify_trace(&trace, &script, &cfg);
    println!("{}", report.to_json());
    Ok(if report.label().is_some() {
        0
    } else {
        EXIT_CLASSIFY_ERROR
    })
}

/// Column of the confusion matrix a report lands in; `None` is the catch-all.
fn column(report: &ClassificationReport) -> Option<Variant> {
    match report.label()? {
        Label::Tahoe => Some(Variant::Tahoe),
        Label::Reno => Some(Variant::Reno),
        Label::NewReno => Some(Variant::NewReno),
        Label::NoFastRetransmit => Some(Variant::NoFastRetransmit),
        Label::RenoPlus => Some(Variant::RenoPlus),
        Label::Unclassifiable => None,
    }
}

fn outcome_name(report: &ClassificationReport) -> String {
    match (report.label(), report.error_kind()) {
        (Some(l), _) => l.to_string(),
        (None, Some(e)) => format!("{e:?}"),
        (None, None) => unreachable!("report carries a label or an error"),
    }
}

fn matrix_at(args: &MatrixArgs, rtt_ms: f64) -> Result<bool> {
    let cfg = ClassifierConfig {
        timeout_factor: args.timeout_factor,
        event_cap: args.world.event_cap,
    };
    let scenarios = Variant::ALL
        .iter()
        .map(|v| scenario(*v, &args.world, rtt_ms))
        .collect::<Result<Vec<_>>>()?;
    let reports = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|sc| {
                scope.spawn(move || {
                    simulate(sc).map(|run| classify_trace(&run.trace, &sc.probe_script, &cfg))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    println!("rtt {rtt_ms} ms");
    print!("{:<18}", "actual \\ label");
    for v in Variant::ALL {
        print!("{:>18}", v.name());
    }
    println!("{:>18}", "other");
    let mut identity = true;
    for (v, report) in Variant::ALL.iter().zip(&reports) {
        let col = column(report);
        identity &= col == Some(*v);
        print!("{:<18}", v.name());
        for w in Variant::ALL {
            print!("{:>18}", u8::from(col == Some(w)));
        }
        let other = if col.is_none() {
            outcome_name(report)
        } else {
            "-".into()
        };
        println!("{other:>18}");
    }
    println!();
    Ok(identity)
}

fn cmd_matrix(args: &MatrixArgs) -> Result<u8> {
    let rtts = if args.rtt_sweep.is_empty() {
        vec![args.world.rtt_ms]
    } else {
        args.rtt_sweep.clone()
    };
    let mut identity = true;
    for rtt in rtts {
        identity &= matrix_at(args, rtt)?;
    }
    println!("{}", if identity { "identity" } else { "mismatch" });
    Ok(if identity { 0 } else { EXIT_MISMATCH })
}

fn cmd_plot(args: &PlotArgs) -> Result<u8> {
    let trace = load(&args.input)?;
    let mut out = sink(args.out.as_deref())?;
    write_plot(&emit_plot_points(&trace), &mut out)?;
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sim(a) => cmd_sim(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
