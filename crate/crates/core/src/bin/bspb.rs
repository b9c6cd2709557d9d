// SPDX-License-Identifier: Apache-2.0

//! `bspb`: benchmark, verify and tune the tricubic B-spline kernels.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use bspb::coeff::input_working_set_bytes;
use bspb::driver::{run_population, threads_from_env, Layout, RunConfig};
use bspb::kernels::vgh_output_bytes;
use bspb::metrics::{
    arithmetic_intensity, emit_report, machine_label, tune_tile_size, Report, ReportFormat,
    ThroughputRecord, TrafficModel, TuneBudget,
};
use bspb::verify::{run_all, VerifyOptions};
use bspb::{GridSpec, KernelKind};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bspb",
    version,
    about = "Tricubic B-spline orbital kernels: benchmark, verify, tune"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the walker benchmark and emit a throughput report.
    Bench(RunArgs),
    /// Run the correctness suites and print pass/fail per property.
    Verify(RunArgs),
    /// Scan tile sizes 16, 32, ... N and report the fastest.
    Tune(RunArgs),
    /// Print the resolved configuration, footprints and arithmetic intensity.
    Info(RunArgs),
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Number of splines N.
    #[arg(long)]
    n: Option<usize>,
    /// Grid counts as NX,NY,NZ.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
    /// Tile size N_b (implies --layout aosoa).
    #[arg(long)]
    nb: Option<usize>,
    /// Coefficient layout: aos, soa or aosoa.
    #[arg(long, value_parser = parse_layout)]
    layout: Option<Layout>,
    /// Kernels to run, comma separated: v,vgl,vgh.
    #[arg(long, value_delimiter = ',', value_parser = parse_kernel)]
    kernels: Option<Vec<KernelKind>>,
    /// Number of walkers N_w (default: threads / threads-per-walker).
    #[arg(long)]
    walkers: Option<usize>,
    /// Random samples per kernel per iteration.
    #[arg(long)]
    ns: Option<usize>,
    /// Timed iterations.
    #[arg(long)]
    niters: Option<usize>,
    /// Total threads (default: BSPB_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Threads per walker for nested tile threading.
    #[arg(long)]
    threads_per_walker: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report format: csv or json.
    #[arg(long, value_parser = parse_format)]
    format: Option<ReportFormat>,
    /// Output path; "-" for stdout.
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    /// Check retained outputs against the double-precision oracle.
    #[arg(long)]
    verify: bool,
    /// key = value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Machine label for reports.
    #[arg(long)]
    machine: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    n: Option<usize>,
    grid: Option<ListValue<usize>>,
    nb: Option<usize>,
    layout: Option<String>,
    kernels: Option<ListValue<String>>,
    walkers: Option<usize>,
    ns: Option<usize>,
    niters: Option<usize>,
    threads: Option<usize>,
    threads_per_walker: Option<usize>,
    seed: Option<u64>,
    format: Option<String>,
    output: Option<PathBuf>,
    verify: Option<bool>,
    machine: Option<String>,
}

/// Accepts `"a,b,c"` or `[a, b, c]`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ListValue<T> {
    List(Vec<T>),
    Text(String),
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected NX,NY,NZ, got '{s}'"));
    }
    let mut out = [0usize; 3];
    for (dst, p) in out.iter_mut().zip(parts) {
        *dst = p
            .parse()
            .map_err(|_| format!("'{p}' is not a grid count"))?;
    }
    Ok(out)
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    s.parse().map_err(|e: bspb::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: bspb::Error| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: bspb::Error| e.to_string())
}

/// Everything a subcommand needs after merging defaults, file and flags.
#[derive(Debug)]
struct Resolved {
    run: RunConfig,
    format: ReportFormat,
    output: Option<PathBuf>,
    machine: String,
}

fn read_file_config(path: &Path) -> Result<FileConfig, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn resolve(args: RunArgs) -> Result<Resolved, UsageError> {
    let file = match &args.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let file_grid = match file.grid {
        Some(ListValue::List(v)) => {
            Some(<[usize; 3]>::try_from(v).map_err(|_| usage("config grid needs three counts"))?)
        }
        Some(ListValue::Text(s)) => Some(parse_grid(&s).map_err(usage)?),
        None => None,
    };
    let file_kernels = match file.kernels {
        Some(ListValue::List(v)) => Some(v),
        Some(ListValue::Text(s)) => Some(s.split(',').map(str::to_string).collect()),
        None => None,
    }
    .map(|v| {
        v.iter()
            .map(|k| parse_kernel(k))
            .collect::<Result<Vec<_>, _>>()
    })
    .transpose()
    .map_err(usage)?;
    let file_layout = file
        .layout
        .as_deref()
        .map(parse_layout)
        .transpose()
        .map_err(usage)?;
    let file_format = file
        .format
        .as_deref()
        .map(parse_format)
        .transpose()
        .map_err(usage)?;

    let n = args.n.or(file.n).unwrap_or(128);
    let counts = args.grid.or(file_grid).unwrap_or([48, 48, 48]);
    let grid = GridSpec::with_spacing(counts, [1.0; 3]).map_err(|e| usage(e.to_string()))?;
    let nb = args.nb.or(file.nb);
    let layout = args.layout.or(file_layout);
    let layout = match (layout, nb) {
        (Some(l @ (Layout::AoS | Layout::SoA)), Some(nb)) => {
            return Err(usage(format!(
                "--nb {nb} tiles the spline dimension, which the {l} layout does not do; use --layout aosoa"
            )))
        }
        (Some(Layout::AoSoA), None) => {
            return Err(usage("--layout aosoa needs a tile size (--nb)"))
        }
        (Some(l), _) => l,
        (None, Some(_)) => Layout::AoSoA,
        (None, None) => Layout::SoA,
    };
    let threads = args
        .threads
        .or_else(threads_from_env)
        .or(file.threads)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let mut kernels = args
        .kernels
        .or(file_kernels)
        .unwrap_or_else(|| KernelKind::ALL.to_vec());
    kernels.sort();
    kernels.dedup();

    let run = RunConfig {
        n_splines: n,
        grid,
        tile_size: nb.unwrap_or(0),
        layout,
        n_walkers: args.walkers.or(file.walkers).unwrap_or(0),
        samples_per_kernel: args.ns.or(file.ns).unwrap_or(512),
        iterations: args.niters.or(file.niters).unwrap_or(10),
        threads_total: threads,
        threads_per_walker: args
            .threads_per_walker
            .or(file.threads_per_walker)
            .unwrap_or(1),
        seed: args.seed.or(file.seed).unwrap_or(42),
        kernels,
        warmup: true,
        verify: args.verify || file.verify.unwrap_or(false),
    };
    run.validate().map_err(|e| usage(e.to_string()))?;
    Ok(Resolved {
        run,
        format: args.format.or(file_format).unwrap_or(ReportFormat::Csv),
        output: args.output.or(file.output),
        machine: args.machine.or(file.machine).unwrap_or_else(machine_label),
    })
}

/// Writes `bytes` to the path (or stdout for "-" / none) in one go.
fn write_output(path: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, bytes),
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}

type Outcome = Result<ExitCode, Box<dyn std::error::Error>>;
type Handler = fn(Resolved) -> Outcome;

fn bench(r: Resolved) -> Outcome {
    let result = run_population(&r.run)?;
    let records = ThroughputRecord::from_bench(&result, &r.machine)?;
    for rec in &records {
        eprintln!(
            "{:<4} {:<6} N={:<5} Nb={:<5} Nw={:<4} nth={:<3} t={:.4}s T={:.4e}/s AI={:.3}",
            rec.kernel,
            rec.layout,
            rec.n,
            rec.nb,
            rec.nw,
            rec.nth,
            rec.seconds,
            rec.throughput,
            rec.ai
        );
    }
    let mut buf = Vec::new();
    emit_report(
        &Report::new(Some(result.config.clone()), records),
        r.format,
        &mut buf,
    )?;
    write_output(r.output.as_deref(), &buf)?;
    if let Some(v) = &result.verification {
        let verdict = if v.passed { "PASS" } else { "FAIL" };
        eprintln!(
            "{verdict} verify: {} retained outputs, max relative error {:.2e} (tolerance {:.0e})",
            v.checked, v.max_rel_error, v.tolerance
        );
        if !v.passed {
            return Ok(ExitCode::from(EXIT_VERIFY_FAILED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(r: Resolved) -> Outcome {
    let opts = VerifyOptions {
        grid: r.run.grid,
        n_splines: r.run.n_splines,
        seed: r.run.seed,
        positions: 1000,
    };
    let outcomes = run_all(&opts);
    let mut text = String::new();
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        text.push_str(&format!(
            "{verdict} {:<20} {:>8.3}s  {}\n",
            o.name, o.seconds, o.detail
        ));
    }
    write_output(r.output.as_deref(), text.as_bytes())?;
    Ok(if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY_FAILED)
    })
}

fn tune(r: Resolved) -> Outcome {
    let mut results = Vec::new();
    let mut text = String::new();
    for &kernel in &r.run.kernels {
        match tune_tile_size(&r.run, kernel, TuneBudget::default())? {
            None => text.push_str(&format!(
                "{kernel}: N = {} < 16, using the untiled layout\n",
                r.run.n_splines
            )),
            Some(t) => {
                text.push_str(&format!(
                    "{kernel}: N = {}\n{:>8} {:>14}\n",
                    r.run.n_splines, "Nb", "T (1/s)"
                ));
                for (nb, tp) in t.scanned.iter().zip(&t.throughputs) {
                    let mark = if *nb == t.best_nb { " *" } else { "" };
                    text.push_str(&format!("{nb:>8} {tp:>14.4e}{mark}\n"));
                }
                text.push_str(&format!(
                    "best Nb = {} (T = {:.4e}/s)\n",
                    t.best_nb, t.best_throughput
                ));
                results.push(t);
            }
        }
    }
    print!("{text}");
    if let Some(path) = r.output.as_deref().filter(|p| *p != Path::new("-")) {
        std::fs::write(path, serde_json::to_vec_pretty(&results)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn info(r: Resolved) -> Outcome {
    let c = &r.run;
    let mut text = String::new();
    text.push_str(&format!(
        "{} {}\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION")
    ));
    text.push_str(&format!("machine: {}\n", r.machine));
    text.push_str(&format!("config: {}\n", serde_json::to_string(c)?));
    let nw = c.effective_walkers();
    let n = c.n_splines;
    let padded = bspb::aligned::padded_len(n);
    text.push_str(&format!(
        "walkers: {nw} ({} concurrent)\n",
        c.concurrent_walkers()
    ));
    text.push_str(&format!(
        "table bytes aos: {}\n",
        input_working_set_bytes(&c.grid, n)
    ));
    text.push_str(&format!(
        "table bytes soa: {}\n",
        input_working_set_bytes(&c.grid, padded)
    ));
    if c.layout == Layout::AoSoA {
        text.push_str(&format!(
            "tiles: {} x {} splines, per-tile input working set {} bytes\n",
            c.num_tiles(),
            c.tile_size,
            input_working_set_bytes(&c.grid, bspb::aligned::padded_len(c.tile_size))
        ));
        text.push_str(&format!(
            "vgh output working set per tile: {} bytes (40 Nw Nb)\n",
            vgh_output_bytes(nw, c.tile_size)
        ));
    }
    text.push_str(&format!(
        "vgh output working set: {} bytes (40 Nw N)\n",
        vgh_output_bytes(nw, n)
    ));
    for kind in KernelKind::ALL {
        let m = TrafficModel::new(kind, c.layout, n);
        text.push_str(&format!(
            "{kind:<4} reads {:>9} B  writes {:>9} B  flops {:>10}  AI {:.3} (aos {:.3}, soa {:.3})\n",
            m.read_bytes(),
            m.write_bytes(),
            m.flops(),
            m.arithmetic_intensity(),
            arithmetic_intensity(kind, Layout::AoS),
            arithmetic_intensity(kind, Layout::SoA),
        ));
    }
    write_output(r.output.as_deref(), text.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (args, run): (RunArgs, Handler) = match cli.command {
        Command::Bench(a) => (a, bench),
        Command::Verify(a) => (a, verify),
        Command::Tune(a) => (a, tune),
        Command::Info(a) => (a, info),
    };
    let resolved = match resolve(args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("bspb: usage error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(resolved) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bspb: error: {e}");
            ExitCode::FAILURE
        }
    }
}
