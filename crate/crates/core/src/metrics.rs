// SPDX-License-Identifier: Apache-2.0

//! Throughput, traffic and roofline models, tile-size tuning and reports.
//!
//! Flop accounting counts every output accumulation as one FMA, i.e. two
//! flops; the `O(1)` prefactor computation is excluded.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::coeff::{tile_table, CoeffTableSoA, FillSpec};
use crate::driver::{run_with_table, BenchResult, Layout, PreparedTable, RunConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;

/// Grid points in the tricubic stencil.
pub const STENCIL_POINTS: u64 = 64;
/// Bytes per single-precision element.
pub const ELEMENT_BYTES: u64 = 4;
/// Relative throughput loss across an N-sweep that gets flagged.
pub const DROOP_THRESHOLD: f64 = 0.20;

/// `N_w * N * ns * niters / t_X`: orbital evaluations per second.
pub fn throughput(
    n_walkers: usize,
    n: usize,
    ns: usize,
    niters: usize,
    seconds: f64,
) -> Result<f64> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::InputDomain(format!(
            "elapsed time must be positive, got {seconds}"
        )));
    }
    Ok(n_walkers as f64 * n as f64 * ns as f64 * niters as f64 / seconds)
}

/// Output streams written by a kernel in a layout; only VGH differs.
pub fn output_streams(kind: KernelKind, layout: Layout) -> u64 {
    match layout {
        Layout::AoS => kind.aos_streams() as u64,
        Layout::SoA | Layout::AoSoA => kind.soa_streams() as u64,
    }
}

/// Analytic per-evaluation memory traffic, in elements, for `n` splines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub kind: KernelKind,
    pub layout: Layout,
    pub n: u64,
    /// Coefficient elements read, `64 N`.
    pub reads: u64,
    /// Output elements written.
    pub writes: u64,
    /// Accumulations, `64 * streams * N`.
    pub fmas: u64,
}

impl TrafficModel {
    pub fn new(kind: KernelKind, layout: Layout, n: usize) -> Self {
        let n = n as u64;
        let streams = output_streams(kind, layout);
        TrafficModel {
            kind,
            layout,
            n,
            reads: STENCIL_POINTS * n,
            writes: streams * n,
            fmas: STENCIL_POINTS * streams * n,
        }
    }

    pub fn read_bytes(&self) -> u64 {
        ELEMENT_BYTES * self.reads
    }

    pub fn write_bytes(&self) -> u64 {
        ELEMENT_BYTES * self.writes
    }

    pub fn flops(&self) -> u64 {
        2 * self.fmas
    }

    pub fn arithmetic_intensity(&self) -> f64 {
        self.flops() as f64 / (self.read_bytes() + self.write_bytes()) as f64
    }
}

/// Flops per byte of main-memory traffic; independent of `N`.
pub fn arithmetic_intensity(kind: KernelKind, layout: Layout) -> f64 {
    TrafficModel::new(kind, layout, 1).arithmetic_intensity()
}

/// One measured kernel configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRecord {
    pub kernel: KernelKind,
    pub layout: Layout,
    pub n: usize,
    pub nb: usize,
    pub nw: usize,
    pub nth: usize,
    pub ns: usize,
    pub niters: usize,
    /// `t_X` in seconds.
    pub seconds: f64,
    /// `N_w N ns niters / t_X`.
    pub throughput: f64,
    /// `N_w N / t_X` with `t_X` the whole timed run, no per-sample scaling.
    pub throughput_unnormalized: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub flops: u64,
    pub ai: f64,
    pub machine: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ThroughputRecord {
    /// One record per timed kernel of a run. Byte and flop totals cover the
    /// whole run: the per-evaluation model times the invocation count.
    pub fn from_bench(result: &BenchResult, machine: &str) -> Result<Vec<ThroughputRecord>> {
        let c = &result.config;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        result
            .timings
            .iter()
            .map(|t| {
                let model = TrafficModel::new(t.kind, c.layout, c.n_splines);
                let calls = t.invocations;
                Ok(ThroughputRecord {
                    kernel: t.kind,
                    layout: c.layout,
                    n: c.n_splines,
                    nb: c.tile_size,
                    nw: c.n_walkers,
                    nth: c.threads_per_walker,
                    ns: c.samples_per_kernel,
                    niters: c.iterations,
                    seconds: t.seconds,
                    throughput: throughput(
                        c.n_walkers,
                        c.n_splines,
                        c.samples_per_kernel,
                        c.iterations,
                        t.seconds,
                    )?,
                    throughput_unnormalized: throughput(c.n_walkers, c.n_splines, 1, 1, t.seconds)?,
                    read_bytes: model.read_bytes() * calls,
                    write_bytes: model.write_bytes() * calls,
                    flops: model.flops() * calls,
                    ai: model.arithmetic_intensity(),
                    machine: machine.to_string(),
                    timestamp,
                })
            })
            .collect()
    }
}

/// `T_opt / T_base` for records of the same kernel, `N` and machine.
pub fn speedup(baseline: &ThroughputRecord, optimized: &ThroughputRecord) -> Result<f64> {
    if baseline.kernel != optimized.kernel
        || baseline.n != optimized.n
        || baseline.machine != optimized.machine
    {
        return Err(Error::Config(format!(
            "cannot compare {} N={} on {} with {} N={} on {}",
            baseline.kernel,
            baseline.n,
            baseline.machine,
            optimized.kernel,
            optimized.n,
            optimized.machine
        )));
    }
    Ok(optimized.throughput / baseline.throughput)
}

/// Time-to-solution speedup per walker: [`speedup`] times the ratio of
/// threads per walker, which nested threading converts into strong scaling.
pub fn time_speedup(baseline: &ThroughputRecord, optimized: &ThroughputRecord) -> Result<f64> {
    Ok(speedup(baseline, optimized)? * optimized.nth as f64 / baseline.nth as f64)
}

/// Largest relative throughput loss versus the best record, over records of
/// one kernel sorted by `N`, and whether it exceeds [`DROOP_THRESHOLD`].
pub fn throughput_droop(records: &[ThroughputRecord]) -> Option<(f64, bool)> {
    let best = records
        .iter()
        .map(|r| r.throughput)
        .fold(f64::NAN, f64::max);
    let worst = records
        .iter()
        .map(|r| r.throughput)
        .fold(f64::NAN, f64::min);
    if records.is_empty() || !(best > 0.0) {
        return None;
    }
    let droop = 1.0 - worst / best;
    Some((droop, droop > DROOP_THRESHOLD))
}

/// Machine label: architecture and available parallelism.
pub fn machine_label() -> String {
    let cpus = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{}-{}cpu", std::env::consts::ARCH, cpus)
}

/// Per-candidate measurement budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneBudget {
    pub min_seconds: f64,
    pub min_samples: u64,
    pub repetitions: usize,
}

impl Default for TuneBudget {
    fn default() -> Self {
        TuneBudget {
            min_seconds: 0.5,
            min_samples: 20,
            repetitions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub kernel: KernelKind,
    pub scanned: Vec<usize>,
    /// Median throughput per scanned tile size.
    pub throughputs: Vec<f64>,
    pub best_nb: usize,
    pub best_throughput: f64,
    /// Iterations used per measurement of each candidate.
    pub iterations: Vec<usize>,
}

/// Tile sizes `16, 32, ...` up to `n`.
pub fn tile_candidates(n: usize) -> Vec<usize> {
    std::iter::successors(Some(16usize), |&nb| Some(nb * 2))
        .take_while(|&nb| nb <= n)
        .filter(|&nb| n.is_multiple_of(nb))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Scans tile sizes for `kernel` and picks the one with the highest median
/// throughput; ties go to the larger tile. Returns `None` when `N < 16`,
/// meaning the untiled layout should be used.
pub fn tune_tile_size(
    config: &RunConfig,
    kernel: KernelKind,
    budget: TuneBudget,
) -> Result<Option<TuneResult>> {
    let n = config.n_splines;
    if n < 16 {
        return Ok(None);
    }
    let candidates = tile_candidates(n);
    let soa = CoeffTableSoA::build(config.grid, n, FillSpec::Random(config.seed))?;
    let mut throughputs = Vec::with_capacity(candidates.len());
    let mut iterations = Vec::with_capacity(candidates.len());
    for &nb in &candidates {
        let table = PreparedTable::Tiled(tile_table(&soa, nb)?);
        let mut cfg = RunConfig {
            layout: Layout::AoSoA,
            tile_size: nb,
            kernels: vec![kernel],
            iterations: 1,
            verify: false,
            ..config.clone()
        };
        // grow the iteration count until one run meets the budget
        loop {
            let r = run_with_table(&cfg, &table)?;
            let t = r.timing(kernel).map_or(0.0, |t| t.seconds);
            let calls = r.timing(kernel).map_or(0, |t| t.invocations);
            if t >= budget.min_seconds && calls >= budget.min_samples {
                break;
            }
            let scale = if t > 0.0 {
                (budget.min_seconds / t * 1.2).ceil() as usize
            } else {
                2
            };
            cfg.iterations = (cfg.iterations * scale.clamp(2, 1024)).max(cfg.iterations + 1);
        }
        cfg.warmup = false;
        let reps = (0..budget.repetitions.max(1))
            .map(|_| {
                let r = run_with_table(&cfg, &table)?;
                let c = &r.config;
                let t = r.timing(kernel).map_or(0.0, |t| t.seconds);
                throughput(c.n_walkers, n, c.samples_per_kernel, c.iterations, t)
            })
            .collect::<Result<Vec<_>>>()?;
        throughputs.push(median(reps));
        iterations.push(cfg.iterations);
    }
    let mut best = 0;
    for (i, &t) in throughputs.iter().enumerate() {
        if t >= throughputs[best] {
            best = i;
        }
    }
    Ok(Some(TuneResult {
        kernel,
        best_nb: candidates[best],
        best_throughput: throughputs[best],
        scanned: candidates,
        throughputs,
        iterations,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 16] = [
    "kernel",
    "layout",
    "N",
    "Nb",
    "Nw",
    "nth",
    "ns",
    "niters",
    "seconds",
    "throughput",
    "read_bytes",
    "write_bytes",
    "flops",
    "ai",
    "machine",
    "timestamp",
];

/// JSON report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub library: String,
    pub version: String,
    pub flop_accounting: String,
    pub fma_contraction: bool,
    pub config: Option<RunConfig>,
    pub records: Vec<ThroughputRecord>,
}

impl Report {
    pub fn new(config: Option<RunConfig>, records: Vec<ThroughputRecord>) -> Self {
        Report {
            library: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            flop_accounting: "2 flops per output accumulation; prefactor flops excluded"
                .to_string(),
            fma_contraction: false,
            config,
            records,
        }
    }
}

/// Serializes a report into `sink`.
pub fn emit_report<W: Write>(report: &Report, format: ReportFormat, mut sink: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, report).map_err(|e| Error::Io(e.into()))?;
            sink.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(CSV_COLUMNS).map_err(csv_err)?;
            for r in &report.records {
                w.write_record([
                    r.kernel.name().to_string(),
                    r.layout.name().to_string(),
                    r.n.to_string(),
                    r.nb.to_string(),
                    r.nw.to_string(),
                    r.nth.to_string(),
                    r.ns.to_string(),
                    r.niters.to_string(),
                    r.seconds.to_string(),
                    r.throughput.to_string(),
                    r.read_bytes.to_string(),
                    r.write_bytes.to_string(),
                    r.flops.to_string(),
                    r.ai.to_string(),
                    r.machine.clone(),
                    r.timestamp.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    sink.flush()?;
    Ok(())
}

pub fn parse_json_report(text: &str) -> Result<Report> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn record(t: f64) -> ThroughputRecord {
        ThroughputRecord {
            kernel: KernelKind::Vgh,
            layout: Layout::SoA,
            n: 2048,
            nb: 0,
            nw: 256,
            nth: 1,
            ns: 1,
            niters: 1,
            seconds: 1.0,
            throughput: t,
            throughput_unnormalized: t,
            read_bytes: 1,
            write_bytes: 2,
            flops: 3,
            ai: 1.5,
            machine: "m".into(),
            timestamp: 7,
        }
    }

    #[test]
    fn throughput_formula() {
        assert_eq!(throughput(256, 2048, 1, 1, 4.0).unwrap(), 131_072.0);
        let a = throughput(4, 128, 512, 10, 2.0).unwrap();
        let b = throughput(4, 128, 512, 10, 1.0).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(throughput(1, 1, 1, 1, 0.0).is_err());
        assert!(throughput(1, 1, 1, 1, -1.0).is_err());
        assert!(throughput(1, 1, 1, 1, f64::NAN).is_err());
    }

    #[test]
    fn speedups() {
        assert_eq!(speedup(&record(100.0), &record(100.0)).unwrap(), 1.0);
        assert_eq!(speedup(&record(100.0), &record(250.0)).unwrap(), 2.5);
        let mut other = record(1.0);
        other.n = 1024;
        assert!(speedup(&record(1.0), &other).is_err());
        other = record(1.0);
        other.kernel = KernelKind::V;
        assert!(speedup(&record(1.0), &other).is_err());
        let mut nested = record(100.0);
        nested.nth = 4;
        assert_eq!(time_speedup(&record(100.0), &nested).unwrap(), 4.0);
    }

    #[test]
    fn arithmetic_intensity_values() {
        // 2*64*1 / (4*65), 2*64*10 / (4*74)
        assert!((arithmetic_intensity(KernelKind::V, Layout::SoA) - 128.0 / 260.0).abs() < 1e-12);
        assert!(
            (arithmetic_intensity(KernelKind::Vgh, Layout::SoA) - 1280.0 / 296.0).abs() < 1e-12
        );
        assert!(
            (arithmetic_intensity(KernelKind::Vgh, Layout::AoS) - 1664.0 / 308.0).abs() < 1e-12
        );
        for kind in KernelKind::ALL {
            let small = TrafficModel::new(kind, Layout::SoA, 128).arithmetic_intensity();
            let large = TrafficModel::new(kind, Layout::SoA, 4096).arithmetic_intensity();
            assert_eq!(small, large);
        }
    }

    #[test]
    fn traffic_model_counts() {
        let m = TrafficModel::new(KernelKind::Vgh, Layout::SoA, 100);
        assert_eq!((m.reads, m.writes), (6400, 1000));
        assert_eq!(
            TrafficModel::new(KernelKind::Vgh, Layout::AoS, 100).writes,
            1300
        );
        assert_eq!(
            TrafficModel::new(KernelKind::Vgl, Layout::AoSoA, 100).writes,
            500
        );
        assert_eq!(
            TrafficModel::new(KernelKind::V, Layout::AoS, 100).writes,
            100
        );
    }

    #[test]
    fn candidates() {
        assert_eq!(tile_candidates(16), vec![16]);
        assert_eq!(
            tile_candidates(2048),
            vec![16, 32, 64, 128, 256, 512, 1024, 2048]
        );
        assert!(tile_candidates(8).is_empty());
    }

    #[test]
    fn tuner_skips_small_problems() {
        let cfg = RunConfig {
            n_splines: 8,
            grid: GridSpec::cubic(4).unwrap(),
            ..RunConfig::default()
        };
        assert!(tune_tile_size(&cfg, KernelKind::Vgh, TuneBudget::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn tuner_single_candidate() {
        let cfg = RunConfig {
            n_splines: 16,
            grid: GridSpec::cubic(4).unwrap(),
            samples_per_kernel: 4,
            ..RunConfig::default()
        };
        let budget = TuneBudget {
            min_seconds: 0.001,
            min_samples: 20,
            repetitions: 1,
        };
        let r = tune_tile_size(&cfg, KernelKind::V, budget)
            .unwrap()
            .unwrap();
        assert_eq!(r.scanned, vec![16]);
        assert_eq!(r.best_nb, 16);
        assert_eq!(r.best_throughput, r.throughputs[0]);
    }

    #[test]
    fn droop_flag() {
        let rs = [record(100.0), record(90.0)];
        let (d, flagged) = throughput_droop(&rs).unwrap();
        assert!((d - 0.1).abs() < 1e-12 && !flagged);
        let rs = [record(100.0), record(70.0)];
        assert!(throughput_droop(&rs).unwrap().1);
        assert!(throughput_droop(&[]).is_none());
    }

    #[test]
    fn csv_has_exact_header_and_one_row() {
        let report = Report::new(None, vec![record(5.0)]);
        let mut out = Vec::new();
        emit_report(&report, ReportFormat::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "kernel,layout,N,Nb,Nw,nth,ns,niters,seconds,throughput,read_bytes,write_bytes,flops,ai,machine,timestamp"
        );
        assert!(lines[1].starts_with("VGH,soa,2048,0,256,1,1,1,"));
    }

    #[test]
    fn json_round_trip() {
        let report = Report::new(Some(RunConfig::default()), vec![record(123.25)]);
        let mut out = Vec::new();
        emit_report(&report, ReportFormat::Json, &mut out).unwrap();
        let back = parse_json_report(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
