// SPDX-License-Identifier: Apache-2.0

//! The walker loop.
//!
//! A run builds one read-only table, then `threads_total / n_th` worker slots
//! each process their walkers (round-robin by walker id). With `n_th == 1`
//! a slot is a single thread. With `n_th > 1` a slot is a team, and team
//! member `r` owns the tiles `m` with `m % n_th == r`. Teams synchronize only
//! at kernel-phase boundaries so the phase can be timed as a whole.
//!
//! Per-kernel time `t_X` is the maximum over slots of the slot's accumulated
//! kernel time.

use std::ops::Range;
use std::sync::{Barrier, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::coeff::{
    tile_table, CoeffTableAoS, CoeffTableSoA, Coefficients, FillSpec, TiledCoeffTable,
};
use crate::error::{Error, Result};
use crate::grid::{compute_prefactors, GridSpec};
use crate::kernels::{Evaluation, KernelKind, SplineKernels, WalkerOutputsAoS, WalkerOutputsSoA};
use crate::oracle::{max_stream_error, oracle_f64};
use crate::rng::{generate_positions, SampleSet};

/// Environment variable overriding `threads_total`.
pub const THREADS_ENV: &str = "BSPB_THREADS";

/// Relative tolerance of verify mode against the double-precision oracle.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    AoS,
    SoA,
    AoSoA,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::AoS => "aos",
            Layout::SoA => "soa",
            Layout::AoSoA => "aosoa",
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aos" => Ok(Layout::AoS),
            "soa" => Ok(Layout::SoA),
            "aosoa" | "tiled" => Ok(Layout::AoSoA),
            other => Err(Error::Config(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_splines: usize,
    pub grid: GridSpec,
    /// Spline tile size `N_b`; 0 means untiled.
    pub tile_size: usize,
    pub layout: Layout,
    /// Number of walkers `N_w`; 0 selects `threads_total / n_th`.
    pub n_walkers: usize,
    pub samples_per_kernel: usize,
    pub iterations: usize,
    pub threads_total: usize,
    pub threads_per_walker: usize,
    pub seed: u64,
    pub kernels: Vec<KernelKind>,
    /// Run one untimed iteration per walker first.
    pub warmup: bool,
    /// Check every retained output against the double-precision oracle.
    pub verify: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_splines: 128,
            grid: GridSpec::cubic(48).expect("48^3 is a valid grid"),
            tile_size: 0,
            layout: Layout::SoA,
            n_walkers: 0,
            samples_per_kernel: 512,
            iterations: 10,
            threads_total: 1,
            threads_per_walker: 1,
            seed: 42,
            kernels: KernelKind::ALL.to_vec(),
            warmup: true,
            verify: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.n_splines == 0 {
            return fail("the number of splines must be at least 1".into());
        }
        if self.samples_per_kernel == 0 {
            return fail("samples per kernel must be at least 1".into());
        }
        if self.threads_total == 0 || self.threads_per_walker == 0 {
            return fail("thread counts must be at least 1".into());
        }
        if self.threads_per_walker > self.threads_total {
            return fail(format!(
                "{} threads per walker exceed the {} available threads",
                self.threads_per_walker, self.threads_total
            ));
        }
        if !self.threads_total.is_multiple_of(self.threads_per_walker) {
            return fail(format!(
                "threads per walker ({}) must divide the thread count ({})",
                self.threads_per_walker, self.threads_total
            ));
        }
        match self.layout {
            Layout::AoSoA => {
                if self.tile_size == 0 || !self.n_splines.is_multiple_of(self.tile_size) {
                    return fail(format!(
                        "tile size {} must be positive and divide N = {}",
                        self.tile_size, self.n_splines
                    ));
                }
            }
            Layout::AoS | Layout::SoA => {
                if self.tile_size != 0 {
                    return fail(format!(
                        "a tile size only applies to the aosoa layout, not {}",
                        self.layout
                    ));
                }
                if self.threads_per_walker > 1 {
                    return fail("threads per walker > 1 requires the aosoa layout".into());
                }
            }
        }
        Ok(())
    }

    /// Walker count after resolving the automatic setting.
    pub fn effective_walkers(&self) -> usize {
        if self.n_walkers == 0 {
            (self.threads_total / self.threads_per_walker.max(1)).max(1)
        } else {
            self.n_walkers
        }
    }

    /// Number of walkers running at the same time.
    pub fn concurrent_walkers(&self) -> usize {
        (self.threads_total / self.threads_per_walker.max(1)).max(1)
    }

    pub fn num_tiles(&self) -> usize {
        if self.layout == Layout::AoSoA && self.tile_size > 0 {
            self.n_splines / self.tile_size
        } else {
            1
        }
    }

    /// Splines per output set owned by one walker buffer.
    pub fn splines_per_buffer(&self) -> usize {
        if self.layout == Layout::AoSoA {
            self.tile_size
        } else {
            self.n_splines
        }
    }
}

/// Thread count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// The shared, immutable coefficient table of a run.
#[derive(Debug)]
pub enum PreparedTable {
    AoS(CoeffTableAoS),
    SoA(CoeffTableSoA),
    Tiled(TiledCoeffTable),
}

impl PreparedTable {
    /// Builds the table a config asks for, filled from `Random(seed)`.
    pub fn for_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let fill = FillSpec::Random(config.seed);
        Ok(match config.layout {
            Layout::AoS => {
                PreparedTable::AoS(CoeffTableAoS::build(config.grid, config.n_splines, fill)?)
            }
            Layout::SoA => {
                PreparedTable::SoA(CoeffTableSoA::build(config.grid, config.n_splines, fill)?)
            }
            Layout::AoSoA => {
                let soa = CoeffTableSoA::build(config.grid, config.n_splines, fill)?;
                PreparedTable::Tiled(tile_table(&soa, config.tile_size)?)
            }
        })
    }

    pub fn layout(&self) -> Layout {
        match self {
            PreparedTable::AoS(_) => Layout::AoS,
            PreparedTable::SoA(_) => Layout::SoA,
            PreparedTable::Tiled(_) => Layout::AoSoA,
        }
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        match self {
            PreparedTable::AoS(t) => t,
            PreparedTable::SoA(t) => t,
            PreparedTable::Tiled(t) => t,
        }
    }

    /// Start addresses and lengths of the coefficient storage.
    pub fn address_set(&self) -> Vec<(usize, usize)> {
        let span = |d: &[f32]| (d.as_ptr() as usize, d.len());
        match self {
            PreparedTable::AoS(t) => vec![span(t.data())],
            PreparedTable::SoA(t) => vec![span(t.data())],
            PreparedTable::Tiled(t) => t.tiles().iter().map(|x| span(x.data())).collect(),
        }
    }

    /// FNV-1a hash over every coefficient bit pattern.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |d: &[f32]| {
            for v in d {
                h ^= v.to_bits() as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        match self {
            PreparedTable::AoS(t) => eat(t.data()),
            PreparedTable::SoA(t) => eat(t.data()),
            PreparedTable::Tiled(t) => t.tiles().iter().for_each(|x| eat(x.data())),
        }
        h
    }

    fn check_matches(&self, config: &RunConfig) -> Result<()> {
        let c = self.coefficients();
        let tiles_ok = match self {
            PreparedTable::Tiled(t) => t.tile_size() == config.tile_size,
            _ => true,
        };
        if self.layout() != config.layout
            || c.n_splines() != config.n_splines
            || *c.grid() != config.grid
            || !tiles_ok
        {
            return Err(Error::Config(
                "the prepared table does not match the run configuration".into(),
            ));
        }
        Ok(())
    }
}

/// Output buffers of one walker (or of one team member in nested mode).
#[derive(Debug)]
pub enum WalkerBuffers {
    AoS(WalkerOutputsAoS),
    SoA(WalkerOutputsSoA),
    /// `(tile index, outputs)` for the tiles this owner evaluates.
    Tiles(Vec<(usize, WalkerOutputsSoA)>),
}

impl WalkerBuffers {
    fn address_ranges(&self) -> Vec<Range<usize>> {
        let vec_range = |v: &[f32]| {
            let s = v.as_ptr() as usize;
            s..s + v.len() * 4
        };
        match self {
            WalkerBuffers::AoS(o) => vec![
                vec_range(&o.v),
                vec_range(&o.g),
                vec_range(&o.l),
                vec_range(&o.h),
            ],
            WalkerBuffers::SoA(o) => o.address_ranges(),
            WalkerBuffers::Tiles(t) => t.iter().flat_map(|(_, o)| o.address_ranges()).collect(),
        }
    }
}

/// Per-kernel elapsed time and invocation counters.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct KernelTimes {
    pub elapsed: [Duration; 3],
    pub invocations: [u64; 3],
}

impl KernelTimes {
    fn slot(kind: KernelKind) -> usize {
        kind as usize
    }

    pub fn elapsed(&self, kind: KernelKind) -> Duration {
        self.elapsed[Self::slot(kind)]
    }

    pub fn invocations(&self, kind: KernelKind) -> u64 {
        self.invocations[Self::slot(kind)]
    }

    fn add(&mut self, kind: KernelKind, dt: Duration, calls: u64) {
        self.elapsed[Self::slot(kind)] += dt;
        self.invocations[Self::slot(kind)] += calls;
    }

    fn merge(&mut self, other: &KernelTimes) {
        for k in 0..3 {
            self.elapsed[k] += other.elapsed[k];
            self.invocations[k] += other.invocations[k];
        }
    }
}

/// One walker's buffers and timers.
#[derive(Debug)]
pub struct WalkerState {
    pub walker: u64,
    pub buffers: WalkerBuffers,
    pub times: KernelTimes,
}

impl WalkerState {
    /// Buffers covering every tile (or the whole table).
    pub fn new(walker: u64, table: &PreparedTable) -> Self {
        let buffers = match table {
            PreparedTable::AoS(t) => WalkerBuffers::AoS(t.new_outputs()),
            PreparedTable::SoA(t) => WalkerBuffers::SoA(t.new_outputs()),
            PreparedTable::Tiled(t) => WalkerBuffers::Tiles(
                t.tiles()
                    .iter()
                    .map(|x| x.new_outputs())
                    .enumerate()
                    .collect(),
            ),
        };
        WalkerState {
            walker,
            buffers,
            times: KernelTimes::default(),
        }
    }

    /// Buffers for the tiles owned by team member `rank` of `team`.
    fn for_team_member(walker: u64, tiled: &TiledCoeffTable, rank: usize, team: usize) -> Self {
        let tiles = tiled
            .tiles()
            .iter()
            .enumerate()
            .filter(|(m, _)| m % team == rank)
            .map(|(m, t)| (m, t.new_outputs()))
            .collect();
        WalkerState {
            walker,
            buffers: WalkerBuffers::Tiles(tiles),
            times: KernelTimes::default(),
        }
    }
}

/// Outputs of the last sample of one kernel phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedOutput {
    pub walker: u64,
    pub position: [f64; 3],
    pub outputs: Evaluation<f32>,
}

/// Kernel calls of one iteration of one walker, timed per kernel.
///
/// For tiled buffers the tile loop is outermost and the sample loop inner, so
/// one tile's coefficients and outputs stay hot across all samples. When
/// `retain` is set, the outputs of the last sample of each phase are
/// returned; tiled outputs cover only the tiles `state` owns.
pub fn run_walker_iteration(
    state: &mut WalkerState,
    table: &PreparedTable,
    samples: &SampleSet,
    kernels: &[KernelKind],
    retain: bool,
) -> Result<Vec<(KernelKind, Evaluation<f32>)>> {
    let mut retained = Vec::new();
    for &kind in kernels {
        let positions = samples.for_kernel(kind);
        let start = Instant::now();
        run_phase(&mut state.buffers, table, kind, positions)?;
        state
            .times
            .add(kind, start.elapsed(), positions.len() as u64);
        if retain && !positions.is_empty() {
            retained.push((kind, snapshot(&state.buffers, table, kind)));
        }
    }
    Ok(retained)
}

fn run_phase(
    buffers: &mut WalkerBuffers,
    table: &PreparedTable,
    kind: KernelKind,
    positions: &[[f64; 3]],
) -> Result<()> {
    match (table, buffers) {
        (PreparedTable::AoS(t), WalkerBuffers::AoS(out)) => {
            for &pos in positions {
                t.eval(kind, pos, out)?;
            }
        }
        (PreparedTable::SoA(t), WalkerBuffers::SoA(out)) => {
            for &pos in positions {
                t.eval(kind, pos, out)?;
            }
        }
        (PreparedTable::Tiled(t), WalkerBuffers::Tiles(outs)) => {
            let grid = *t.grid();
            for (m, out) in outs.iter_mut() {
                let tile = &t.tiles()[*m];
                for &pos in positions {
                    let pre = compute_prefactors(pos, &grid)?;
                    tile.eval_with_prefactors(kind, &pre, out, &mut crate::kernels::NoProbe)?;
                }
            }
        }
        _ => {
            return Err(Error::Contract(
                "walker buffers do not match the table layout".into(),
            ))
        }
    }
    Ok(())
}

fn snapshot(buffers: &WalkerBuffers, table: &PreparedTable, kind: KernelKind) -> Evaluation<f32> {
    match (table, buffers) {
        (PreparedTable::AoS(t), WalkerBuffers::AoS(out)) => t.evaluation(kind, out),
        (_, WalkerBuffers::SoA(out)) => out.to_evaluation(kind),
        (_, WalkerBuffers::Tiles(outs)) => {
            let mut all = Evaluation {
                kind,
                streams: vec![Vec::new(); kind.soa_streams()],
            };
            for (_, out) in outs {
                all.extend(&out.to_evaluation(kind));
            }
            all
        }
        (_, WalkerBuffers::AoS(out)) => out.to_evaluation(kind, out.v.len()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub kind: KernelKind,
    /// `t_X`: the slowest slot's accumulated time, seconds.
    pub seconds: f64,
    /// Accumulated time of each slot, seconds.
    pub per_worker_seconds: Vec<f64>,
    /// Walker-level kernel calls, `N_w * ns * niters`.
    pub invocations: u64,
    /// Orbital evaluations, `N_w * N * ns * niters`.
    pub operations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    /// The configuration with the walker count resolved.
    pub config: RunConfig,
    pub timings: Vec<KernelTiming>,
    /// Time spent generating positions, summed over slots, seconds.
    pub generation_seconds: f64,
    /// Last-sample outputs per walker and kernel, sorted by walker then kernel.
    pub retained: Vec<RetainedOutput>,
    pub table_bytes: usize,
    /// Output buffers of concurrently live owners never overlapped.
    pub outputs_disjoint: bool,
    pub verification: Option<VerifySummary>,
}

impl BenchResult {
    pub fn timing(&self, kind: KernelKind) -> Option<&KernelTiming> {
        self.timings.iter().find(|t| t.kind == kind)
    }

    pub fn retained_for(&self, walker: u64, kind: KernelKind) -> Option<&RetainedOutput> {
        self.retained
            .iter()
            .find(|r| r.walker == walker && r.outputs.kind == kind)
    }
}

/// Holds spawned workers until every spawn succeeded.
struct StartGate {
    state: Mutex<Option<bool>>,
    cv: Condvar,
}

impl StartGate {
    fn new() -> Self {
        StartGate {
            state: Mutex::new(None),
            cv: Condvar::new(),
        }
    }

    fn open(&self, go: bool) {
        *self.state.lock().unwrap_or_else(|e| e.into_inner()) = Some(go);
        self.cv.notify_all();
    }

    fn wait(&self) -> bool {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.is_none() {
            s = self.cv.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.unwrap_or(false)
    }
}

/// What one worker thread hands back.
struct WorkerReport {
    slot: usize,
    times: KernelTimes,
    generation: Duration,
    /// `(walker, kind, tile-owner rank, position, outputs)`
    retained: Vec<(u64, KernelKind, usize, [f64; 3], Evaluation<f32>)>,
    ranges: Vec<Range<usize>>,
    error: Option<Error>,
}

/// Builds the table and runs the configured population.
pub fn run_population(config: &RunConfig) -> Result<BenchResult> {
    let table = PreparedTable::for_config(config)?;
    run_with_table(config, &table)
}

/// Runs a nested (`n_th > 1`) configuration; same as [`run_population`] but
/// insists on a team size above one.
pub fn run_nested(config: &RunConfig) -> Result<BenchResult> {
    if config.threads_per_walker > config.threads_total {
        return Err(Error::Config(format!(
            "{} threads per walker exceed the {} available threads",
            config.threads_per_walker, config.threads_total
        )));
    }
    if config.layout != Layout::AoSoA {
        return Err(Error::Config(
            "nested threading requires the aosoa layout".into(),
        ));
    }
    run_population(config)
}

/// Runs `config` against an already built table.
pub fn run_with_table(config: &RunConfig, table: &PreparedTable) -> Result<BenchResult> {
    config.validate()?;
    table.check_matches(config)?;
    let mut config = config.clone();
    config.n_walkers = config.effective_walkers();
    let team = config.threads_per_walker;
    let slots = config.concurrent_walkers();
    if team > 1 && config.num_tiles() < team {
        log::warn!(
            "{} tiles for {} threads per walker: {} threads will idle",
            config.num_tiles(),
            team,
            team - config.num_tiles()
        );
    }

    let gate = StartGate::new();
    let barriers: Vec<Barrier> = (0..slots).map(|_| Barrier::new(team)).collect();
    let config_ref = &config;
    let reports: Vec<WorkerReport> = thread::scope(|scope| -> Result<Vec<WorkerReport>> {
        let mut handles = Vec::with_capacity(slots * team);
        for slot in 0..slots {
            for rank in 0..team {
                let gate = &gate;
                let barrier = &barriers[slot];
                let spawned = thread::Builder::new()
                    .name(format!("walker-{slot}.{rank}"))
                    .spawn_scoped(scope, move || {
                        if !gate.wait() {
                            return None;
                        }
                        Some(worker(config_ref, table, slot, rank, barrier))
                    });
                match spawned {
                    Ok(h) => handles.push(h),
                    Err(e) => {
                        gate.open(false);
                        return Err(Error::Runtime {
                            message: format!("could not spawn worker thread: {e}"),
                            config: format!("{config_ref:?}"),
                        });
                    }
                }
            }
        }
        gate.open(true);
        let mut reports = Vec::with_capacity(handles.len());
        for h in handles {
            match h.join() {
                Ok(Some(r)) => reports.push(r),
                Ok(None) => {}
                Err(_) => {
                    return Err(Error::Runtime {
                        message: "a worker thread panicked".into(),
                        config: format!("{config_ref:?}"),
                    })
                }
            }
        }
        Ok(reports)
    })?;

    summarize(config, table, reports)
}

/// Body of one worker thread: team member `rank` of slot `slot`.
fn worker(
    config: &RunConfig,
    table: &PreparedTable,
    slot: usize,
    rank: usize,
    barrier: &Barrier,
) -> WorkerReport {
    let team = config.threads_per_walker;
    let slots = config.concurrent_walkers();
    let walkers: Vec<u64> = (slot..config.n_walkers)
        .step_by(slots)
        .map(|w| w as u64)
        .collect();
    let mut state = match table {
        PreparedTable::Tiled(t) if team > 1 => WalkerState::for_team_member(0, t, rank, team),
        _ => WalkerState::new(0, table),
    };
    let mut report = WorkerReport {
        slot,
        times: KernelTimes::default(),
        generation: Duration::ZERO,
        retained: Vec::new(),
        ranges: state.buffers.address_ranges(),
        error: None,
    };
    let mut phase_times = KernelTimes::default();
    for &walker in &walkers {
        state.walker = walker;
        let first_iter = if config.warmup { -1i64 } else { 0 };
        for iter in first_iter..config.iterations as i64 {
            let timed = iter >= 0;
            let sample_iter = iter.max(0) as u64;
            let g0 = Instant::now();
            let samples = generate_positions(
                config.seed,
                walker,
                sample_iter,
                config.samples_per_kernel,
                &config.grid,
            );
            if timed {
                report.generation += g0.elapsed();
            }
            let last = timed && iter as usize + 1 == config.iterations;
            for &kind in &config.kernels {
                let positions = samples.for_kernel(kind);
                if team > 1 {
                    barrier.wait();
                }
                let start = Instant::now();
                if report.error.is_none() {
                    if let Err(e) = run_phase(&mut state.buffers, table, kind, positions) {
                        report.error = Some(e);
                    }
                }
                if team > 1 {
                    barrier.wait();
                }
                if timed && rank == 0 {
                    phase_times.add(kind, start.elapsed(), positions.len() as u64);
                }
                if last && report.error.is_none() {
                    if let Some(&pos) = positions.last() {
                        report.retained.push((
                            walker,
                            kind,
                            rank,
                            pos,
                            snapshot(&state.buffers, table, kind),
                        ));
                    }
                }
            }
        }
    }
    report.times.merge(&phase_times);
    report
}

fn ranges_disjoint(mut ranges: Vec<Range<usize>>) -> bool {
    ranges.retain(|r| !r.is_empty());
    ranges.sort_by_key(|r| r.start);
    ranges.windows(2).all(|w| w[0].end <= w[1].start)
}

fn summarize(
    config: RunConfig,
    table: &PreparedTable,
    reports: Vec<WorkerReport>,
) -> Result<BenchResult> {
    let slots = config.concurrent_walkers();
    let mut errors = Vec::new();
    let mut slot_times = vec![KernelTimes::default(); slots];
    let mut generation = Duration::ZERO;
    let mut ranges = Vec::new();
    let mut pieces = Vec::new();
    for r in reports {
        if let Some(e) = r.error {
            errors.push(e);
        }
        slot_times[r.slot].merge(&r.times);
        generation += r.generation;
        ranges.extend(r.ranges);
        pieces.extend(r.retained);
    }
    if let Some(e) = errors.into_iter().next() {
        return Err(e);
    }

    let n = config.n_splines as u64;
    let timings = config
        .kernels
        .iter()
        .map(|&kind| {
            let per_worker: Vec<f64> = slot_times
                .iter()
                .map(|t| t.elapsed(kind).as_secs_f64())
                .collect();
            let invocations: u64 = slot_times.iter().map(|t| t.invocations(kind)).sum();
            KernelTiming {
                kind,
                seconds: per_worker.iter().cloned().fold(0.0, f64::max),
                per_worker_seconds: per_worker,
                invocations,
                operations: invocations * n,
            }
        })
        .collect();

    // team members hold interleaved tiles; restore global tile order
    pieces.sort_by_key(|p| (p.0, p.1, p.2));
    let mut retained: Vec<RetainedOutput> = Vec::new();
    let team = config.threads_per_walker;
    let mut i = 0;
    while i < pieces.len() {
        let (walker, kind, _, position, _) = pieces[i];
        let group: Vec<&Evaluation<f32>> = pieces[i..]
            .iter()
            .take_while(|p| p.0 == walker && p.1 == kind)
            .map(|p| &p.4)
            .collect();
        i += group.len();
        let outputs = if team > 1 {
            interleave_tiles(kind, &group, team, config.tile_size)
        } else {
            group[0].clone()
        };
        retained.push(RetainedOutput {
            walker,
            position,
            outputs,
        });
    }

    let verification = if config.verify {
        Some(verify_retained(table, &retained))
    } else {
        None
    };

    Ok(BenchResult {
        table_bytes: table.coefficients().memory_footprint(),
        outputs_disjoint: ranges_disjoint(ranges),
        config,
        timings,
        generation_seconds: generation.as_secs_f64(),
        retained,
        verification,
    })
}

/// Team member `r` holds tiles `r, r + team, ...` back to back; rebuild the
/// global spline order.
fn interleave_tiles(
    kind: KernelKind,
    parts: &[&Evaluation<f32>],
    team: usize,
    tile: usize,
) -> Evaluation<f32> {
    let total: usize = parts.iter().map(|p| p.n_splines()).sum();
    let n_tiles = total / tile;
    let mut streams = vec![Vec::with_capacity(total); kind.soa_streams()];
    for m in 0..n_tiles {
        let part = parts[m % team];
        let local = m / team;
        for (dst, src) in streams.iter_mut().zip(&part.streams) {
            dst.extend_from_slice(&src[local * tile..(local + 1) * tile]);
        }
    }
    Evaluation { kind, streams }
}

fn verify_retained(table: &PreparedTable, retained: &[RetainedOutput]) -> VerifySummary {
    let coeffs = table.coefficients();
    let max_rel_error = retained
        .iter()
        .map(|r| max_stream_error(&r.outputs, &oracle_f64(coeffs, r.outputs.kind, r.position)))
        .fold(0.0, f64::max);
    VerifySummary {
        checked: retained.len(),
        max_rel_error,
        tolerance: VERIFY_TOLERANCE,
        passed: max_rel_error <= VERIFY_TOLERANCE,
    }
}
