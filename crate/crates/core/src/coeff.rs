// SPDX-License-Identifier: Apache-2.0

//! The read-only 4D coefficient table in its three layouts.
//!
//! * [`CoeffTableAoS`]: spline-major, logically `[N][nx][ny][nz]`.
//! * [`CoeffTableSoA`]: spline-minor, logically `[nx][ny][nz][n_padded]`, each
//!   grid-point row starting on a 64-byte boundary and zero-padded.
//! * [`TiledCoeffTable`]: `M` independent SoA tables of `N_b` splines each.
//!
//! Tables are immutable once built; all accessors hand out shared views.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::aligned::{padded_len, AlignedBuf, LANES};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// How a freshly built table is filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FillSpec {
    /// Every coefficient equals the constant.
    Constant(f32),
    /// `p[i][j][k][n]` is the grid index along the axis (0 = x, 1 = y, 2 = z).
    LinearIndex(usize),
    /// Uniform in `[-1, 1)` from a ChaCha8 stream seeded with the value.
    Random(u64),
}

/// Requested storage layout for [`build_table`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableLayout {
    AoS,
    SoA,
}

/// Uniform `f32` in `[-1, 1)` with 24 random mantissa bits.
#[inline]
fn symmetric_unit(bits: u32) -> f32 {
    const SCALE: f32 = 1.0 / (1u32 << 23) as f32;
    (bits >> 8) as f32 * SCALE - 1.0
}

/// Visits every `(i, j, k, n)` in SoA order with its fill value.
fn for_each_fill_value(
    grid: &GridSpec,
    n_splines: usize,
    fill: FillSpec,
    mut sink: impl FnMut(usize, usize, usize, usize, f32),
) -> Result<()> {
    if let FillSpec::LinearIndex(axis) = fill {
        if axis > 2 {
            return Err(Error::Construction(format!(
                "linear-index fill axis must be 0, 1 or 2, got {axis}"
            )));
        }
    }
    let mut rng = match fill {
        FillSpec::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            for k in 0..grid.nz {
                for n in 0..n_splines {
                    let value = match fill {
                        FillSpec::Constant(c) => c,
                        FillSpec::LinearIndex(axis) => [i, j, k][axis] as f32,
                        FillSpec::Random(_) => {
                            symmetric_unit(rng.as_mut().map_or(0, |r| r.next_u32()))
                        }
                    };
                    sink(i, j, k, n, value);
                }
            }
        }
    }
    Ok(())
}

fn check_dims(grid: &GridSpec, n_splines: usize) -> Result<()> {
    grid.validate()?;
    if n_splines == 0 {
        return Err(Error::Construction(
            "a table needs at least one spline".to_string(),
        ));
    }
    Ok(())
}

/// Read access shared by every layout; used by the reference evaluators.
pub trait Coefficients {
    fn grid(&self) -> &GridSpec;
    fn n_splines(&self) -> usize;
    /// Coefficient of spline `n` at grid point `(i, j, k)`.
    fn coeff(&self, i: usize, j: usize, k: usize, n: usize) -> f32;
    /// Allocated coefficient bytes including padding.
    fn memory_footprint(&self) -> usize;
}

/// Spline-major coefficient table, `[N][nx][ny][nz]`. Not padded.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTableAoS {
    grid: GridSpec,
    n_splines: usize,
    data: Vec<f32>,
}

impl CoeffTableAoS {
    pub fn build(grid: GridSpec, n_splines: usize, fill: FillSpec) -> Result<Self> {
        check_dims(&grid, n_splines)?;
        let ng = grid.num_points();
        let mut data = vec![0.0f32; ng * n_splines];
        for_each_fill_value(&grid, n_splines, fill, |i, j, k, n, v| {
            data[n * ng + grid.point_index(i, j, k)] = v;
        })?;
        Ok(CoeffTableAoS {
            grid,
            n_splines,
            data,
        })
    }

    /// Builds from raw spline-major data; `data.len()` must be `N * N_g`.
    pub fn from_raw(grid: GridSpec, n_splines: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(&grid, n_splines)?;
        if data.len() != n_splines * grid.num_points() {
            return Err(Error::Construction(format!(
                "expected {} coefficients, got {}",
                n_splines * grid.num_points(),
                data.len()
            )));
        }
        Ok(CoeffTableAoS {
            grid,
            n_splines,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// All grid values of spline `n`, `[nx][ny][nz]`.
    pub fn spline(&self, n: usize) -> &[f32] {
        let ng = self.grid.num_points();
        &self.data[n * ng..(n + 1) * ng]
    }

    pub fn to_soa(&self) -> CoeffTableSoA {
        convert_aos_to_soa(self)
    }
}

impl Coefficients for CoeffTableAoS {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn n_splines(&self) -> usize {
        self.n_splines
    }

    fn coeff(&self, i: usize, j: usize, k: usize, n: usize) -> f32 {
        self.data[n * self.grid.num_points() + self.grid.point_index(i, j, k)]
    }

    fn memory_footprint(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

/// Spline-minor coefficient table, `[nx][ny][nz][n_padded]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTableSoA {
    grid: GridSpec,
    n_splines: usize,
    n_padded: usize,
    data: AlignedBuf,
}

impl CoeffTableSoA {
    pub fn build(grid: GridSpec, n_splines: usize, fill: FillSpec) -> Result<Self> {
        let mut table = Self::zeroed(grid, n_splines)?;
        let np = table.n_padded;
        let data = &mut table.data;
        for_each_fill_value(&grid, n_splines, fill, |i, j, k, n, v| {
            data[grid.point_index(i, j, k) * np + n] = v;
        })?;
        Ok(table)
    }

    fn zeroed(grid: GridSpec, n_splines: usize) -> Result<Self> {
        check_dims(&grid, n_splines)?;
        let n_padded = padded_len(n_splines);
        Ok(CoeffTableSoA {
            grid,
            n_splines,
            n_padded,
            data: AlignedBuf::zeroed(grid.num_points() * n_padded),
        })
    }

    /// Spline count rounded up to a multiple of 16 lanes.
    pub fn n_padded(&self) -> usize {
        self.n_padded
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The `n_padded` coefficients at grid point `(i, j, k)`.
    #[inline]
    pub fn row(&self, i: usize, j: usize, k: usize) -> &[f32] {
        let start = self.grid.point_index(i, j, k) * self.n_padded;
        &self.data[start..start + self.n_padded]
    }

    pub fn to_aos(&self) -> CoeffTableAoS {
        let ng = self.grid.num_points();
        let mut data = vec![0.0f32; ng * self.n_splines];
        for (p, row) in self.data.chunks_exact(self.n_padded).enumerate() {
            for (n, &v) in row[..self.n_splines].iter().enumerate() {
                data[n * ng + p] = v;
            }
        }
        CoeffTableAoS {
            grid: self.grid,
            n_splines: self.n_splines,
            data,
        }
    }

    /// Copies splines `[first, first + count)` into a new table.
    fn slice_splines(&self, first: usize, count: usize) -> Result<Self> {
        let mut out = Self::zeroed(self.grid, count)?;
        let np = out.n_padded;
        for (dst, src) in out
            .data
            .chunks_exact_mut(np)
            .zip(self.data.chunks_exact(self.n_padded))
        {
            dst[..count].copy_from_slice(&src[first..first + count]);
        }
        Ok(out)
    }

    /// Writes the table in the little-endian `BSPC` fixture format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        let header = [
            TABLE_FORMAT_VERSION,
            to_u32(self.grid.nx)?,
            to_u32(self.grid.ny)?,
            to_u32(self.grid.nz)?,
            to_u32(self.n_splines)?,
            to_u32(self.n_padded)?,
        ];
        for field in header {
            w.write_all(&field.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(self.n_padded * 4);
        for row in self.data.chunks_exact(self.n_padded) {
            bytes.clear();
            bytes.extend(row.iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `BSPC` fixture. The format carries no spacing, so the caller
    /// supplies it.
    pub fn read_from<R: Read>(mut r: R, spacing: [f64; 3]) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut fields = [0u32; 6];
        for f in fields.iter_mut() {
            let mut word = [0u8; 4];
            r.read_exact(&mut word)?;
            *f = u32::from_le_bytes(word);
        }
        let [version, nx, ny, nz, n, n_padded] = fields.map(|f| f as usize);
        if version != TABLE_FORMAT_VERSION as usize {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if n_padded < n || n_padded % LANES != 0 {
            return Err(Error::Format(format!(
                "padded width {n_padded} is not a multiple of {LANES} covering {n} splines"
            )));
        }
        let grid = GridSpec::with_spacing([nx, ny, nz], spacing)?;
        check_dims(&grid, n)?;
        let mut table = CoeffTableSoA {
            grid,
            n_splines: n,
            n_padded,
            data: AlignedBuf::zeroed(grid.num_points() * n_padded),
        };
        let mut bytes = vec![0u8; n_padded * 4];
        for row in table.data.chunks_exact_mut(n_padded) {
            r.read_exact(&mut bytes)?;
            for (dst, src) in row.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
            }
            if row[n..].iter().any(|&v| v != 0.0) {
                return Err(Error::Format("non-zero padding lane".to_string()));
            }
        }
        Ok(table)
    }
}

impl Coefficients for CoeffTableSoA {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn n_splines(&self) -> usize {
        self.n_splines
    }

    fn coeff(&self, i: usize, j: usize, k: usize, n: usize) -> f32 {
        self.data[self.grid.point_index(i, j, k) * self.n_padded + n]
    }

    fn memory_footprint(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

pub const TABLE_MAGIC: &[u8; 4] = b"BSPC";
pub const TABLE_FORMAT_VERSION: u32 = 1;

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the u32 header field")))
}

/// `M` SoA tables of `N_b` splines each; tile `m` holds splines
/// `[m * N_b, (m + 1) * N_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledCoeffTable {
    tiles: Vec<CoeffTableSoA>,
    tile_size: usize,
    n_splines: usize,
}

impl TiledCoeffTable {
    pub fn tiles(&self) -> &[CoeffTableSoA] {
        &self.tiles
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }
}

impl Coefficients for TiledCoeffTable {
    fn grid(&self) -> &GridSpec {
        self.tiles[0].grid()
    }

    fn n_splines(&self) -> usize {
        self.n_splines
    }

    fn coeff(&self, i: usize, j: usize, k: usize, n: usize) -> f32 {
        self.tiles[n / self.tile_size].coeff(i, j, k, n % self.tile_size)
    }

    fn memory_footprint(&self) -> usize {
        self.tiles.iter().map(Coefficients::memory_footprint).sum()
    }
}

/// A table in either untiled layout.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffTable {
    AoS(CoeffTableAoS),
    SoA(CoeffTableSoA),
}

impl Coefficients for CoeffTable {
    fn grid(&self) -> &GridSpec {
        match self {
            CoeffTable::AoS(t) => t.grid(),
            CoeffTable::SoA(t) => t.grid(),
        }
    }

    fn n_splines(&self) -> usize {
        match self {
            CoeffTable::AoS(t) => t.n_splines(),
            CoeffTable::SoA(t) => t.n_splines(),
        }
    }

    fn coeff(&self, i: usize, j: usize, k: usize, n: usize) -> f32 {
        match self {
            CoeffTable::AoS(t) => t.coeff(i, j, k, n),
            CoeffTable::SoA(t) => t.coeff(i, j, k, n),
        }
    }

    fn memory_footprint(&self) -> usize {
        match self {
            CoeffTable::AoS(t) => t.memory_footprint(),
            CoeffTable::SoA(t) => t.memory_footprint(),
        }
    }
}

pub fn build_table(
    grid: GridSpec,
    n_splines: usize,
    fill: FillSpec,
    layout: TableLayout,
) -> Result<CoeffTable> {
    Ok(match layout {
        TableLayout::AoS => CoeffTable::AoS(CoeffTableAoS::build(grid, n_splines, fill)?),
        TableLayout::SoA => CoeffTable::SoA(CoeffTableSoA::build(grid, n_splines, fill)?),
    })
}

/// Transposes `[N][nx][ny][nz]` into `[nx][ny][nz][n_padded]`.
pub fn convert_aos_to_soa(table: &CoeffTableAoS) -> CoeffTableSoA {
    let grid = table.grid;
    let n_padded = padded_len(table.n_splines);
    let mut data = AlignedBuf::zeroed(grid.num_points() * n_padded);
    for n in 0..table.n_splines {
        for (p, &v) in table.spline(n).iter().enumerate() {
            data[p * n_padded + n] = v;
        }
    }
    CoeffTableSoA {
        grid,
        n_splines: table.n_splines,
        n_padded,
        data,
    }
}

/// Splits a table along the spline dimension into tiles of `tile_size`.
pub fn tile_table(table: &CoeffTableSoA, tile_size: usize) -> Result<TiledCoeffTable> {
    let n = table.n_splines;
    if tile_size == 0 || !n.is_multiple_of(tile_size) {
        return Err(Error::Config(format!(
            "tile size {tile_size} does not divide the spline count {n}"
        )));
    }
    let tiles = (0..n / tile_size)
        .map(|m| table.slice_splines(m * tile_size, tile_size))
        .collect::<Result<Vec<_>>>()?;
    Ok(TiledCoeffTable {
        tiles,
        tile_size,
        n_splines: n,
    })
}

/// Allocated coefficient bytes of any table, padding included.
pub fn memory_footprint<T: Coefficients + ?Sized>(table: &T) -> usize {
    table.memory_footprint()
}

/// Analytic coefficient working set `4 * N_g * N` in bytes.
pub fn input_working_set_bytes(grid: &GridSpec, n_splines: usize) -> usize {
    4 * grid.num_points() * n_splines
}
