// SPDX-License-Identifier: Apache-2.0

//! C ABI over the `bspb` kernels.
//!
//! Tables are opaque `BspbTable` handles created by `bspb_table_new_*` or
//! `bspb_table_load` and released with `bspb_table_free`. Every fallible call
//! returns a `BspbStatus`; on failure `bspb_last_error_message` describes the
//! most recent error raised on the calling thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use bspb::coeff::input_working_set_bytes;
use bspb::kernels::vgh_output_bytes;
use bspb::metrics::arithmetic_intensity;
use bspb::{
    memory_footprint, oracle_f64, run_population, tile_table, CoeffTableAoS, CoeffTableSoA,
    Coefficients, Evaluation, FillSpec, GridSpec, KernelKind, Layout, RunConfig, SplineKernels,
    TiledCoeffTable,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspbStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    InputDomain = -3,
    Construction = -4,
    Config = -5,
    Contract = -6,
    Format = -7,
    Io = -8,
    Runtime = -9,
    Panic = -10,
}

/// Kernel selector, passed as `int32_t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspbKernel {
    V = 0,
    Vgl = 1,
    Vgh = 2,
}

/// Coefficient layout selector, passed as `int32_t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BspbLayout {
    Aos = 0,
    Soa = 1,
    Aosoa = 2,
}

/// Periodic grid: point counts and spacing per axis.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BspbGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

/// Benchmark parameters; fill with `bspb_bench_config_default` first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BspbBenchConfig {
    pub n_splines: usize,
    pub grid: BspbGrid,
    /// A `BspbLayout` value.
    pub layout: i32,
    /// Tile size for `BSPB_LAYOUT_AOSOA`, 0 otherwise.
    pub tile_size: usize,
    /// 0 selects `threads_total / threads_per_walker`.
    pub n_walkers: usize,
    pub samples_per_kernel: usize,
    pub iterations: usize,
    pub threads_total: usize,
    pub threads_per_walker: usize,
    pub seed: u64,
    /// Bit `k` enables the kernel with `BspbKernel` value `k`.
    pub kernel_mask: u32,
    /// Non-zero checks retained outputs against the double-precision oracle.
    pub verify: u32,
}

/// Timing of one kernel phase; all zero when the kernel did not run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BspbKernelTiming {
    pub seconds: f64,
    pub throughput: f64,
    pub invocations: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BspbBenchSummary {
    pub n_walkers: usize,
    /// Indexed by `BspbKernel`.
    pub timings: [BspbKernelTiming; 3],
    pub generation_seconds: f64,
    pub table_bytes: usize,
    pub outputs_disjoint: bool,
    pub verified: bool,
    pub verify_passed: bool,
    pub max_rel_error: f64,
}

enum Table {
    AoS(CoeffTableAoS),
    SoA(CoeffTableSoA),
    Tiled(TiledCoeffTable),
}

/// Opaque coefficient table handle.
pub struct BspbTable {
    table: Table,
}

struct FfiError {
    status: BspbStatus,
    message: String,
}

impl FfiError {
    fn new(status: BspbStatus, message: impl Into<String>) -> Self {
        FfiError {
            status,
            message: message.into(),
        }
    }
}

impl From<bspb::Error> for FfiError {
    fn from(e: bspb::Error) -> Self {
        use bspb::Error as E;
        let status = match &e {
            E::InputDomain(_) => BspbStatus::InputDomain,
            E::Construction(_) => BspbStatus::Construction,
            E::Config(_) => BspbStatus::Config,
            E::Contract(_) => BspbStatus::Contract,
            E::Format(_) => BspbStatus::Format,
            E::Runtime { .. } => BspbStatus::Runtime,
            E::Io(_) => BspbStatus::Io,
        };
        FfiError::new(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, FfiError>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> BspbStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BspbStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            BspbStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    // SAFETY: callers pass pointers that are null or valid for reads of T.
    unsafe { p.as_ref() }
        .ok_or_else(|| FfiError::new(BspbStatus::NullPointer, format!("{what} is null")))
}

fn kernel_from(k: i32) -> FfiResult<KernelKind> {
    match k {
        0 => Ok(KernelKind::V),
        1 => Ok(KernelKind::Vgl),
        2 => Ok(KernelKind::Vgh),
        _ => Err(FfiError::new(
            BspbStatus::InvalidArgument,
            format!("unknown kernel {k}"),
        )),
    }
}

fn layout_from(l: i32) -> FfiResult<Layout> {
    match l {
        0 => Ok(Layout::AoS),
        1 => Ok(Layout::SoA),
        2 => Ok(Layout::AoSoA),
        _ => Err(FfiError::new(
            BspbStatus::InvalidArgument,
            format!("unknown layout {l}"),
        )),
    }
}

fn layout_code(l: Layout) -> i32 {
    match l {
        Layout::AoS => BspbLayout::Aos as i32,
        Layout::SoA => BspbLayout::Soa as i32,
        Layout::AoSoA => BspbLayout::Aosoa as i32,
    }
}

fn grid_from(g: &BspbGrid) -> FfiResult<GridSpec> {
    Ok(GridSpec::with_spacing(
        [g.nx, g.ny, g.nz],
        [g.dx, g.dy, g.dz],
    )?)
}

fn arrange(soa: CoeffTableSoA, layout: Layout, tile_size: usize) -> FfiResult<Table> {
    match (layout, tile_size) {
        (Layout::AoSoA, 0) => Err(FfiError::new(
            BspbStatus::Config,
            "the aosoa layout needs a tile size",
        )),
        (Layout::AoSoA, nb) => Ok(Table::Tiled(tile_table(&soa, nb)?)),
        (_, nb) if nb != 0 => Err(FfiError::new(
            BspbStatus::Config,
            format!("tile size {nb} given for the untiled {layout} layout"),
        )),
        (Layout::SoA, _) => Ok(Table::SoA(soa)),
        (Layout::AoS, _) => Ok(Table::AoS(soa.to_aos())),
    }
}

fn store(out: *mut *mut BspbTable, table: Table) -> FfiResult<()> {
    if out.is_null() {
        return Err(FfiError::new(BspbStatus::NullPointer, "out is null"));
    }
    let handle = Box::into_raw(Box::new(BspbTable { table }));
    // SAFETY: out is non-null and valid for writes per the caller contract.
    unsafe { *out = handle };
    Ok(())
}

fn build(
    grid: *const BspbGrid,
    n_splines: usize,
    fill: FillSpec,
    layout: i32,
    tile_size: usize,
    out: *mut *mut BspbTable,
) -> FfiResult<()> {
    let grid = grid_from(non_null(grid, "grid")?)?;
    let layout = layout_from(layout)?;
    let soa = CoeffTableSoA::build(grid, n_splines, fill)?;
    store(out, arrange(soa, layout, tile_size)?)
}

impl BspbTable {
    fn coefficients(&self) -> &dyn Coefficients {
        match &self.table {
            Table::AoS(t) => t,
            Table::SoA(t) => t,
            Table::Tiled(t) => t,
        }
    }

    fn evaluate(&self, kind: KernelKind, pos: [f64; 3]) -> bspb::Result<Evaluation<f32>> {
        match &self.table {
            Table::AoS(t) => t.evaluate(kind, pos),
            Table::SoA(t) => t.evaluate(kind, pos),
            Table::Tiled(t) => t.evaluate(kind, pos),
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bspb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bspb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Output streams written per spline by `kernel` (1, 5 or 10), 0 if unknown.
#[no_mangle]
pub extern "C" fn bspb_stream_count(kernel: i32) -> usize {
    kernel_from(kernel).map_or(0, |k| k.soa_streams())
}

/// Table with uniform random coefficients in [-1, 1) drawn from `seed`.
///
/// # Safety
/// `grid` must be null or point to a valid `BspbGrid`; `out` must be null or
/// valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_new_random(
    grid: *const BspbGrid,
    n_splines: usize,
    seed: u64,
    layout: i32,
    tile_size: usize,
    out: *mut *mut BspbTable,
) -> BspbStatus {
    guard(|| {
        build(
            grid,
            n_splines,
            FillSpec::Random(seed),
            layout,
            tile_size,
            out,
        )
    })
}

/// Table with every coefficient equal to `value`.
///
/// # Safety
/// As for `bspb_table_new_random`.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_new_constant(
    grid: *const BspbGrid,
    n_splines: usize,
    value: f32,
    layout: i32,
    tile_size: usize,
    out: *mut *mut BspbTable,
) -> BspbStatus {
    guard(|| {
        build(
            grid,
            n_splines,
            FillSpec::Constant(value),
            layout,
            tile_size,
            out,
        )
    })
}

/// Table from caller coefficients stored spline-major, `[N][nx][ny][nz]`.
///
/// # Safety
/// `data` must be null or valid for reading `len` floats; other pointers as
/// for `bspb_table_new_random`.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_from_aos(
    grid: *const BspbGrid,
    n_splines: usize,
    data: *const f32,
    len: usize,
    layout: i32,
    tile_size: usize,
    out: *mut *mut BspbTable,
) -> BspbStatus {
    guard(|| {
        let grid = grid_from(non_null(grid, "grid")?)?;
        let layout = layout_from(layout)?;
        non_null(data, "data")?;
        // SAFETY: data is non-null and valid for `len` reads per the contract.
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let aos = CoeffTableAoS::from_raw(grid, n_splines, values)?;
        let table = match layout {
            Layout::AoS if tile_size == 0 => Table::AoS(aos),
            _ => arrange(aos.to_soa(), layout, tile_size)?,
        };
        store(out, table)
    })
}

/// Loads a table saved by `bspb_table_save`. The file stores counts only, so
/// the spacing is passed as three doubles.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `spacing` null or valid for
/// reading three doubles; `out` as for `bspb_table_new_random`.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_load(
    path: *const c_char,
    spacing: *const f64,
    layout: i32,
    tile_size: usize,
    out: *mut *mut BspbTable,
) -> BspbStatus {
    guard(|| {
        let path = path_from(path)?;
        non_null(spacing, "spacing")?;
        // SAFETY: spacing is non-null and valid for three reads.
        let s = unsafe { std::slice::from_raw_parts(spacing, 3) };
        let layout = layout_from(layout)?;
        let file = std::io::BufReader::new(std::fs::File::open(&path).map_err(bspb::Error::from)?);
        let soa = CoeffTableSoA::read_from(file, [s[0], s[1], s[2]])?;
        store(out, arrange(soa, layout, tile_size)?)
    })
}

fn path_from(path: *const c_char) -> FfiResult<PathBuf> {
    non_null(path, "path")?;
    // SAFETY: path is non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(path) };
    s.to_str()
        .map(PathBuf::from)
        .map_err(|_| FfiError::new(BspbStatus::InvalidArgument, "path is not UTF-8"))
}

/// Saves the table in the binary SoA format. Tiled tables cannot be saved.
///
/// # Safety
/// `table` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_save(
    table: *const BspbTable,
    path: *const c_char,
) -> BspbStatus {
    guard(|| {
        let t = non_null(table, "table")?;
        let path = path_from(path)?;
        let mut bytes = Vec::new();
        match &t.table {
            Table::SoA(s) => s.write_to(&mut bytes)?,
            Table::AoS(a) => a.to_soa().write_to(&mut bytes)?,
            Table::Tiled(_) => {
                return Err(FfiError::new(
                    BspbStatus::Config,
                    "tiled tables are saved from their untiled form",
                ))
            }
        }
        std::fs::write(&path, bytes).map_err(bspb::Error::from)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_free(table: *mut BspbTable) {
    if !table.is_null() {
        // SAFETY: the handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(table) });
    }
}

/// Number of splines, 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_n_splines(table: *const BspbTable) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| t.coefficients().n_splines())
}

/// Layout of the table as a `BspbLayout` value, -1 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_layout(table: *const BspbTable) -> i32 {
    unsafe { table.as_ref() }.map_or(-1, |t| {
        layout_code(match t.table {
            Table::AoS(_) => Layout::AoS,
            Table::SoA(_) => Layout::SoA,
            Table::Tiled(_) => Layout::AoSoA,
        })
    })
}

/// Coefficient bytes held by the table (padding included), 0 for null.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_footprint(table: *const BspbTable) -> usize {
    unsafe { table.as_ref() }.map_or(0, |t| memory_footprint(t.coefficients()))
}

fn check_out_len(have: usize, kind: KernelKind, n: usize) -> FfiResult<()> {
    let need = kind.soa_streams() * n;
    if have < need {
        return Err(FfiError::new(
            BspbStatus::Contract,
            format!("output holds {have} values, {kind} needs {need}"),
        ));
    }
    Ok(())
}

fn read_pos(pos: *const f64) -> FfiResult<[f64; 3]> {
    non_null(pos, "pos")?;
    // SAFETY: pos is non-null and valid for three reads.
    let p = unsafe { std::slice::from_raw_parts(pos, 3) };
    Ok([p[0], p[1], p[2]])
}

/// Evaluates `kernel` at `pos`. Streams are written back to back, each
/// `N` long: v; v gx gy gz lap; or v gx gy gz hxx hxy hxz hyy hyz hzz.
///
/// # Safety
/// `table` null or live; `pos` null or valid for three reads; `out` null or
/// valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_eval(
    table: *const BspbTable,
    kernel: i32,
    pos: *const f64,
    out: *mut f32,
    out_len: usize,
) -> BspbStatus {
    guard(|| {
        let t = non_null(table, "table")?;
        let kind = kernel_from(kernel)?;
        let p = read_pos(pos)?;
        non_null(out, "out")?;
        check_out_len(out_len, kind, t.coefficients().n_splines())?;
        let e = t.evaluate(kind, p)?;
        // SAFETY: out is non-null and holds at least streams * N floats.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        for (chunk, s) in dst.chunks_mut(e.n_splines()).zip(&e.streams) {
            chunk.copy_from_slice(s);
        }
        Ok(())
    })
}

/// Double-precision reference evaluation, same stream order as
/// `bspb_table_eval`.
///
/// # Safety
/// As for `bspb_table_eval`, with `out` valid for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bspb_table_eval_oracle(
    table: *const BspbTable,
    kernel: i32,
    pos: *const f64,
    out: *mut f64,
    out_len: usize,
) -> BspbStatus {
    guard(|| {
        let t = non_null(table, "table")?;
        let kind = kernel_from(kernel)?;
        let p = read_pos(pos)?;
        non_null(out, "out")?;
        let coeffs = t.coefficients();
        let n = coeffs.n_splines();
        check_out_len(out_len, kind, n)?;
        let e = oracle_f64(coeffs, kind, p);
        // SAFETY: out is non-null and holds at least streams * N doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
        for (chunk, s) in dst.chunks_mut(n).zip(&e.streams) {
            chunk.copy_from_slice(s);
        }
        Ok(())
    })
}

/// `4 N_g N`: coefficient bytes for `n_splines` on `grid`.
///
/// # Safety
/// `grid` null or valid; `out` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bspb_input_working_set_bytes(
    grid: *const BspbGrid,
    n_splines: usize,
    out: *mut usize,
) -> BspbStatus {
    guard(|| {
        let g = grid_from(non_null(grid, "grid")?)?;
        non_null(out, "out")?;
        // SAFETY: out is non-null.
        unsafe { *out = input_working_set_bytes(&g, n_splines) };
        Ok(())
    })
}

/// `40 N_w N_b`: VGH output bytes for `n_walkers` walkers of `n_splines`.
#[no_mangle]
pub extern "C" fn bspb_vgh_output_bytes(n_walkers: usize, n_splines: usize) -> usize {
    vgh_output_bytes(n_walkers, n_splines)
}

/// Flops per byte of the analytic traffic model, NaN for unknown values.
#[no_mangle]
pub extern "C" fn bspb_arithmetic_intensity(kernel: i32, layout: i32) -> f64 {
    match (kernel_from(kernel), layout_from(layout)) {
        (Ok(k), Ok(l)) => arithmetic_intensity(k, l),
        _ => f64::NAN,
    }
}

/// Fills `cfg` with the library defaults.
///
/// # Safety
/// `cfg` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bspb_bench_config_default(cfg: *mut BspbBenchConfig) -> BspbStatus {
    guard(|| {
        if cfg.is_null() {
            return Err(FfiError::new(BspbStatus::NullPointer, "cfg is null"));
        }
        let d = RunConfig::default();
        let value = BspbBenchConfig {
            n_splines: d.n_splines,
            grid: BspbGrid {
                nx: d.grid.nx,
                ny: d.grid.ny,
                nz: d.grid.nz,
                dx: d.grid.dx,
                dy: d.grid.dy,
                dz: d.grid.dz,
            },
            layout: layout_code(d.layout),
            tile_size: d.tile_size,
            n_walkers: d.n_walkers,
            samples_per_kernel: d.samples_per_kernel,
            iterations: d.iterations,
            threads_total: d.threads_total,
            threads_per_walker: d.threads_per_walker,
            seed: d.seed,
            kernel_mask: 0b111,
            verify: u32::from(d.verify),
        };
        // SAFETY: cfg is non-null.
        unsafe { *cfg = value };
        Ok(())
    })
}

/// Runs the walker benchmark described by `cfg`.
///
/// # Safety
/// `cfg` null or valid; `summary` null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bspb_bench_run(
    cfg: *const BspbBenchConfig,
    summary: *mut BspbBenchSummary,
) -> BspbStatus {
    guard(|| {
        let c = non_null(cfg, "cfg")?;
        if summary.is_null() {
            return Err(FfiError::new(BspbStatus::NullPointer, "summary is null"));
        }
        if c.kernel_mask & !0b111 != 0 {
            return Err(FfiError::new(
                BspbStatus::InvalidArgument,
                format!("kernel mask {:#x}", c.kernel_mask),
            ));
        }
        let kernels: Vec<KernelKind> = KernelKind::ALL
            .into_iter()
            .enumerate()
            .filter(|(i, _)| c.kernel_mask & (1 << i) != 0)
            .map(|(_, k)| k)
            .collect();
        let config = RunConfig {
            n_splines: c.n_splines,
            grid: grid_from(&c.grid)?,
            tile_size: c.tile_size,
            layout: layout_from(c.layout)?,
            n_walkers: c.n_walkers,
            samples_per_kernel: c.samples_per_kernel,
            iterations: c.iterations,
            threads_total: c.threads_total,
            threads_per_walker: c.threads_per_walker,
            seed: c.seed,
            kernels,
            warmup: true,
            verify: c.verify != 0,
        };
        let r = run_population(&config)?;
        let mut s = BspbBenchSummary {
            n_walkers: r.config.n_walkers,
            generation_seconds: r.generation_seconds,
            table_bytes: r.table_bytes,
            outputs_disjoint: r.outputs_disjoint,
            ..Default::default()
        };
        let rc = &r.config;
        for t in &r.timings {
            let slot = &mut s.timings[t.kind as usize];
            slot.seconds = t.seconds;
            slot.invocations = t.invocations;
            slot.throughput = bspb::metrics::throughput(
                rc.n_walkers,
                rc.n_splines,
                rc.samples_per_kernel,
                rc.iterations,
                t.seconds,
            )
            .unwrap_or(0.0);
        }
        if let Some(v) = &r.verification {
            s.verified = true;
            s.verify_passed = v.passed;
            s.max_rel_error = v.max_rel_error;
        }
        // SAFETY: summary is non-null.
        unsafe { *summary = s };
        Ok(())
    })
}
